//! Embedding export for external projection tools: one CSV with a detail
//! line per (row, column) and a per-class mean block per column.

use std::io::Write;

use super::{extract_embeddings, EvalError};
use crate::data::Dataset;
use crate::model::{ModelConfig, TableMeta};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Write contextual embeddings of `rows` at `layer` as CSV.
///
/// Layout: header `kind,row_id,column,class_label,count,e0..e{d-1}`, then
/// `n·m` lines of kind `row` (count 1), then `Σ d_i` lines of kind `class`
/// holding per-class arithmetic means over the exported rows — zero vectors
/// with count 0 for classes that never occur in `rows`.
#[allow(clippy::too_many_arguments)]
pub fn export_embeddings<E: Scalar, W: Write>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    ds: &Dataset,
    rows: &[usize],
    layer: usize,
    batch_size: usize,
    missing_avg: bool,
    out: W,
) -> Result<(), EvalError> {
    let emb = extract_embeddings(cfg, meta, params, ds, rows, layer, batch_size, missing_avg)?;
    let (m, d) = (meta.m(), cfg.dim);
    let columns: Vec<_> = ds.schema.cat_columns().collect();
    debug_assert_eq!(columns.len(), m);

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "kind".to_string(),
        "row_id".to_string(),
        "column".to_string(),
        "class_label".to_string(),
        "count".to_string(),
    ];
    header.extend((0..d).map(|x| format!("e{x}")));
    w.write_record(&header).map_err(io_err)?;

    // sums[i][class-1] accumulates column i's per-class embedding totals
    let mut sums: Vec<Vec<f64>> = meta.cards.iter().map(|&card| vec![0.0; card * d]).collect();
    let mut counts: Vec<Vec<usize>> = meta.cards.iter().map(|&card| vec![0; card]).collect();

    for (k, &row) in rows.iter().enumerate() {
        let codes = ds.cat_row(row);
        for (i, col) in columns.iter().enumerate() {
            let code = codes[i] as usize;
            let label = if code == 0 { "" } else { col.classes[code - 1].as_str() };
            let vec = &emb.data()[(k * m + i) * d..(k * m + i + 1) * d];
            let mut record = vec![
                "row".to_string(),
                row.to_string(),
                col.name.clone(),
                label.to_string(),
                "1".to_string(),
            ];
            record.extend(vec.iter().map(|v| v.to_f64().to_string()));
            w.write_record(&record).map_err(io_err)?;
            if code > 0 {
                counts[i][code - 1] += 1;
                for (s, v) in sums[i][(code - 1) * d..code * d].iter_mut().zip(vec) {
                    *s += v.to_f64();
                }
            }
        }
    }

    for (i, col) in columns.iter().enumerate() {
        for class in 0..meta.cards[i] {
            let count = counts[i][class];
            let mut record = vec![
                "class".to_string(),
                String::new(),
                col.name.clone(),
                col.classes[class].clone(),
                count.to_string(),
            ];
            record.extend(sums[i][class * d..(class + 1) * d].iter().map(|s| {
                if count == 0 { 0.0 } else { s / count as f64 }.to_string()
            }));
            w.write_record(&record).map_err(io_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> EvalError {
    EvalError::Io(std::io::Error::other(e))
}
