//! CSV ingestion. Cells are trimmed; cells equal to one of the configured
//! missing tokens (just the empty string by default) become `None`.

use super::DataError;

#[derive(Debug)]
pub struct RawTable {
    pub headers: Vec<String>,
    /// `rows[i][j]` is column `j` of data row `i`; `None` marks a missing cell.
    pub rows: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

/// Read a headered CSV file. Ragged rows are an error reported with their
/// 1-based line number.
pub fn load_csv(path: &str, missing_tokens: &[String]) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path)
        .map_err(|e| DataError::Io { path: path.to_string(), err: e.to_string() })?;
    read_csv(file, missing_tokens).map_err(|e| match e {
        DataError::Io { err, .. } => DataError::Io { path: path.to_string(), err },
        other => other,
    })
}

/// Same as [`load_csv`] but from any reader; useful for tests.
pub fn read_csv(reader: impl std::io::Read, missing_tokens: &[String]) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(DataError::EmptyTable);
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let row: Vec<Option<String>> = record
            .iter()
            .map(|cell| {
                if missing_tokens.iter().any(|t| t == cell) {
                    None
                } else {
                    Some(cell.to_string())
                }
            })
            .collect();
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyTable);
    }
    Ok(RawTable { headers, rows })
}

fn csv_err(e: csv::Error) -> DataError {
    let line = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, .. } => {
            pos.as_ref().map(|p| p.line()).unwrap_or(0)
        }
        _ => e.position().map(|p| p.line()).unwrap_or(0),
    };
    DataError::Malformed { line, msg: e.to_string() }
}
