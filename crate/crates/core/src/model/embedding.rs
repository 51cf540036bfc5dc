//! Column embeddings. Every categorical column owns an embedding table with
//! a reserved row 0 for missing/unseen values, plus (depending on the mode)
//! a per-column identifier vector shared by all classes of that column.

use rand_distr::{Distribution, Normal};

use super::{ColEmbed, MissingPolicy, ModelConfig, TableMeta};
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

/// Widths of the identifier and class parts of one column embedding.
/// They always sum to the model dimension.
pub fn embed_widths(cfg: &ModelConfig) -> (usize, usize) {
    match cfg.col_embed {
        ColEmbed::Concat { denom } => {
            let ident = cfg.dim / denom;
            (ident, cfg.dim - ident)
        }
        ColEmbed::Add => (cfg.dim, cfg.dim),
        ColEmbed::None => (0, cfg.dim),
    }
}

pub fn init_embeddings<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    seed: u64,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    let (ident_w, class_w) = embed_widths(cfg);
    let std = 1.0 / (cfg.dim as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    for (i, &card) in meta.cards.iter().enumerate() {
        let table_name = format!("embed/col{i}/table");
        let mut r = rng::stream(seed, &format!("init/{table_name}"));
        let table = Tensor::from_fn(&[card + 1, class_w], |_| {
            E::from_f64(normal.sample(&mut r))
        });
        store.insert(&table_name, table)?;
        if ident_w > 0 {
            let ident_name = format!("embed/col{i}/ident");
            let mut r = rng::stream(seed, &format!("init/{ident_name}"));
            let ident = Tensor::from_fn(&[1, ident_w], |_| {
                E::from_f64(normal.sample(&mut r))
            });
            store.insert(&ident_name, ident)?;
        }
    }
    Ok(())
}

/// Embed a batch of categorical codes into `[b, m, dim]`.
///
/// `codes` is row-major `[b, m]` with values `0..=d_i` per column. Under
/// `MissingPolicy::AverageClass`, code 0 embeds as the mean of the column's
/// observed class embeddings instead of the reserved row.
pub fn embed_columns<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    codes: &[u32],
    policy: MissingPolicy,
) -> Result<Var, TensorError> {
    let m = meta.m();
    if m == 0 {
        return Err(TensorError::Invalid {
            op: "embed_columns",
            msg: "model needs at least one categorical column".into(),
        });
    }
    if codes.len() % m != 0 {
        return Err(TensorError::DataLength {
            expected: codes.len() / m * m,
            got: codes.len(),
        });
    }
    let b = codes.len() / m;
    let (ident_w, class_w) = embed_widths(cfg);

    let mut per_col = Vec::with_capacity(m);
    for (i, &card) in meta.cards.iter().enumerate() {
        let table_ix = params
            .index_of(&format!("embed/col{i}/table"))
            .ok_or_else(|| TensorError::Invalid {
                op: "embed_columns",
                msg: format!("missing table for column {i}"),
            })?;
        let mut table = tape.param(table_ix, params.value_at(table_ix).clone());
        let mut missing_row = 0usize;
        if policy == MissingPolicy::AverageClass && card > 0 {
            // Extend the table with a virtual row holding the mean of the
            // observed class rows; remap code 0 onto it.
            let class_rows = tape.gather_rows(table, (1..=card).collect())?;
            let avg_w = tape.constant(Tensor::full(&[1, card], E::from_f64(1.0 / card as f64)));
            let avg = tape.matmul(avg_w, class_rows)?;
            let flat = tape.reshape(table, &[1, (card + 1) * class_w])?;
            let joined = tape.concat_last(&[flat, avg])?;
            table = tape.reshape(joined, &[card + 2, class_w])?;
            missing_row = card + 1;
        }
        let idx: Vec<usize> = (0..b)
            .map(|r| {
                let code = codes[r * m + i] as usize;
                if code > card {
                    return Err(TensorError::Index {
                        op: "embed_columns",
                        index: code,
                        bound: card + 1,
                    });
                }
                Ok(if code == 0 { missing_row } else { code })
            })
            .collect::<Result<_, _>>()?;
        let class_part = tape.gather_rows(table, idx)?;

        let col = match cfg.col_embed {
            ColEmbed::None => class_part,
            ColEmbed::Concat { .. } => {
                let ident_ix = params.index_of(&format!("embed/col{i}/ident")).unwrap();
                let ident = tape.param(ident_ix, params.value_at(ident_ix).clone());
                let ident_b = tape.gather_rows(ident, vec![0; b])?;
                debug_assert_eq!(tape.value(ident_b).shape(), [b, ident_w]);
                tape.concat_last(&[ident_b, class_part])?
            }
            ColEmbed::Add => {
                let ident_ix = params.index_of(&format!("embed/col{i}/ident")).unwrap();
                let ident = tape.param(ident_ix, params.value_at(ident_ix).clone());
                let ident_b = tape.gather_rows(ident, vec![0; b])?;
                tape.add(class_part, ident_b)?
            }
        };
        per_col.push(col);
    }
    let joined = tape.concat_last(&per_col)?;
    tape.reshape(joined, &[b, m, cfg.dim])
}

/// Mean of the observed class embeddings of one column (identifier included),
/// as plain values. Used by embedding export.
pub fn average_class_embedding<E: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<E>,
    col: usize,
    card: usize,
) -> Result<Vec<f64>, TensorError> {
    let (_, class_w) = embed_widths(cfg);
    let table = params
        .get(&format!("embed/col{col}/table"))
        .ok_or_else(|| TensorError::Invalid {
            op: "average_class_embedding",
            msg: format!("missing table for column {col}"),
        })?;
    let mut avg = vec![0.0f64; class_w];
    if card > 0 {
        for class in 1..=card {
            for j in 0..class_w {
                avg[j] += table.data()[class * class_w + j].to_f64() / card as f64;
            }
        }
    }
    match cfg.col_embed {
        ColEmbed::None => Ok(avg),
        ColEmbed::Add => {
            let ident = params.get(&format!("embed/col{col}/ident")).unwrap();
            Ok(avg
                .iter()
                .zip(ident.data())
                .map(|(a, &c)| a + c.to_f64())
                .collect())
        }
        ColEmbed::Concat { .. } => {
            let ident = params.get(&format!("embed/col{col}/ident")).unwrap();
            let mut out: Vec<f64> = ident.data().iter().map(|&c| c.to_f64()).collect();
            out.extend_from_slice(&avg);
            Ok(out)
        }
    }
}
