//! Tabular data handling: CSV ingestion, schema fitting on training rows
//! only, categorical/continuous encoding, and deterministic splits.
//!
//! Encoding rules the rest of the crate relies on:
//! - categorical code `0` is reserved for missing or unseen values; observed
//!   classes are coded `1..=d_i` in order of first occurrence in the fit rows
//! - continuous cells are rescaled with statistics fitted on training rows;
//!   missing cells are imputed with the training mean before rescaling

mod ingest;
mod schema;
mod split;

pub use ingest::{load_csv, RawTable};
pub use schema::{
    fit_schema, ColumnKind, ColumnSchema, ContinuousStats, Rescaling, Schema, SchemaOptions,
};
pub use split::{semisup_split, split_indices, stratified_split_indices, Split};

use std::fmt;
use std::sync::Arc;

#[derive(Debug)]
pub enum DataError {
    Io { path: String, err: String },
    /// CSV structure problem; `line` is 1-based and counts the header.
    Malformed { line: u64, msg: String },
    MissingColumn { name: String },
    /// Target column has the wrong number of distinct values.
    TargetCardinality { found: Vec<String> },
    UnknownLabel { row: usize, value: String },
    MissingLabel { row: usize },
    EmptyTable,
    /// Split sizes that leave no training rows, or indices out of range.
    BadSplit { msg: String },
    BadSchema { msg: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, err } => write!(f, "{path}: {err}"),
            DataError::Malformed { line, msg } => write!(f, "line {line}: {msg}"),
            DataError::MissingColumn { name } => write!(f, "column {name:?} not found"),
            DataError::TargetCardinality { found } => write!(
                f,
                "target must have exactly two distinct values, found {}: {found:?}",
                found.len()
            ),
            DataError::UnknownLabel { row, value } => {
                write!(f, "row {row}: unknown target value {value:?}")
            }
            DataError::MissingLabel { row } => write!(f, "row {row}: missing target value"),
            DataError::EmptyTable => write!(f, "table has no data rows"),
            DataError::BadSplit { msg } => write!(f, "bad split: {msg}"),
            DataError::BadSchema { msg } => write!(f, "bad schema: {msg}"),
        }
    }
}

impl std::error::Error for DataError {}

/// Fully encoded table: categorical codes, rescaled continuous features, and
/// 0/1 labels, all row-major.
#[derive(Clone)]
pub struct Dataset {
    pub schema: Arc<Schema>,
    pub n: usize,
    /// `[n, m]` categorical codes, `0..=d_i` per column.
    pub cat: Vec<u32>,
    /// `[n, c]` rescaled continuous features.
    pub cont: Vec<f64>,
    /// 0/1 class labels.
    pub labels: Vec<u8>,
}

impl Dataset {
    /// Number of categorical columns.
    pub fn m(&self) -> usize {
        self.schema.cat_columns().count()
    }

    /// Number of continuous columns.
    pub fn c(&self) -> usize {
        self.schema.cont_columns().count()
    }

    /// Class counts `d_i` per categorical column, in schema order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.schema.cat_columns().map(|c| c.classes.len()).collect()
    }

    pub fn cat_row(&self, row: usize) -> &[u32] {
        let m = self.m();
        &self.cat[row * m..(row + 1) * m]
    }

    pub fn cont_row(&self, row: usize) -> &[f64] {
        let c = self.c();
        &self.cont[row * c..(row + 1) * c]
    }

    /// New dataset holding the given rows in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let (m, c) = (self.m(), self.c());
        let mut cat = Vec::with_capacity(rows.len() * m);
        let mut cont = Vec::with_capacity(rows.len() * c);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            cat.extend_from_slice(self.cat_row(r));
            cont.extend_from_slice(self.cont_row(r));
            labels.push(self.labels[r]);
        }
        Dataset { schema: Arc::clone(&self.schema), n: rows.len(), cat, cont, labels }
    }
}

/// Encode every row of `table` under a fitted schema.
///
/// Unknown and missing categorical values map to code 0. A target value not
/// seen when the schema was fitted is an error rather than a silent negative.
pub fn encode(table: &RawTable, schema: &Schema) -> Result<Dataset, DataError> {
    let target_ix = table
        .column_index(&schema.target)
        .ok_or_else(|| DataError::MissingColumn { name: schema.target.clone() })?;
    let mut col_ix = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let ix = table
            .column_index(&col.name)
            .ok_or_else(|| DataError::MissingColumn { name: col.name.clone() })?;
        col_ix.push(ix);
    }

    let n = table.rows.len();
    let m = schema.cat_columns().count();
    let c = schema.cont_columns().count();
    let mut cat = Vec::with_capacity(n * m);
    let mut cont = Vec::with_capacity(n * c);
    let mut labels = Vec::with_capacity(n);

    for (row_ix, row) in table.rows.iter().enumerate() {
        for (col, &ix) in schema.columns.iter().zip(&col_ix) {
            match col.kind {
                ColumnKind::Categorical => {
                    let code = match &row[ix] {
                        None => 0u32,
                        Some(v) => col
                            .classes
                            .iter()
                            .position(|c| c == v)
                            .map_or(0, |p| p as u32 + 1),
                    };
                    cat.push(code);
                }
                ColumnKind::Continuous => {
                    let stats = col.stats.as_ref().ok_or_else(|| DataError::BadSchema {
                        msg: format!("continuous column {:?} has no stats", col.name),
                    })?;
                    let raw = match &row[ix] {
                        None => stats.mean,
                        Some(v) => v.parse::<f64>().map_err(|_| DataError::Malformed {
                            line: row_ix as u64 + 2,
                            msg: format!("column {:?}: not a number: {v:?}", col.name),
                        })?,
                    };
                    cont.push(schema::rescale(raw, col.rescaling.unwrap_or(Rescaling::None), stats));
                }
            }
        }
        let label = match &row[target_ix] {
            None => return Err(DataError::MissingLabel { row: row_ix }),
            Some(v) if *v == schema.positive_label => 1u8,
            Some(v) if schema.target_classes.iter().any(|t| t == v) => 0u8,
            Some(v) => {
                return Err(DataError::UnknownLabel { row: row_ix, value: v.clone() })
            }
        };
        labels.push(label);
    }

    debug_assert_eq!(cat.len(), n * m);
    debug_assert_eq!(cont.len(), n * c);
    Ok(Dataset { schema: Arc::new(schema.clone()), n, cat, cont, labels })
}
