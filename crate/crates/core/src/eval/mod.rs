//! Metrics and evaluation harnesses: rank AUC, per-layer linear probes,
//! categorical-perturbation robustness, and embedding export.

mod export;
mod perturb;
mod probe;

pub use export::export_embeddings;
pub use perturb::{perturb_codes, perturb_eval, Imputation, PerturbKind, PerturbOutcome, PerturbSpec};
pub use probe::{
    fit_logistic, linear_probe, pooled_features, probe_width, LogisticFit, Pooling, ProbeResult,
    ProbeSpec,
};

use crate::data::Dataset;
use crate::model::{forward_contextual, ForwardOptions, Mode, ModelConfig, TableMeta};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tape, Tensor, TensorError};

#[derive(Debug)]
pub enum EvalError {
    /// AUC is undefined without both classes.
    SingleClass,
    NonFiniteScore,
    LayerOutOfRange { layer: usize, n_layers: usize },
    BadRate(f64),
    Tensor(TensorError),
    Io(std::io::Error),
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::SingleClass => write!(f, "metric undefined: only one class present"),
            EvalError::NonFiniteScore => write!(f, "non-finite score"),
            EvalError::LayerOutOfRange { layer, n_layers } => {
                write!(f, "layer {layer} out of range 0..={n_layers}")
            }
            EvalError::BadRate(r) => write!(f, "perturbation rate {r} outside [0, 1]"),
            EvalError::Tensor(e) => write!(f, "{e}"),
            EvalError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<TensorError> for EvalError {
    fn from(e: TensorError) -> Self {
        EvalError::Tensor(e)
    }
}

impl From<std::io::Error> for EvalError {
    fn from(e: std::io::Error) -> Self {
        EvalError::Io(e)
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted half — the rank (Mann–Whitney) form, identical in value to the
/// area under the ROC curve.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::Tensor(TensorError::DataLength {
            expected: labels.len(),
            got: scores.len(),
        }));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk tie groups, assigning every member the group's average 1-based
    // rank. Ranks are halves of integers, so the sum below is exact in f64.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &ix in &order[i..j] {
            if labels[ix] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let min_pos_rank_sum = (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok((rank_sum_pos - min_pos_rank_sum) / (n_pos as f64 * n_neg as f64))
}

/// Contextual embeddings `[n, m, dim]` of `rows` after `layer` attention
/// layers; layer 0 is the raw column embedding. Inference mode throughout.
pub fn extract_embeddings<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    ds: &Dataset,
    rows: &[usize],
    layer: usize,
    batch_size: usize,
    missing_avg: bool,
) -> Result<Tensor<E>, EvalError> {
    if layer > cfg.n_layers {
        return Err(EvalError::LayerOutOfRange { layer, n_layers: cfg.n_layers });
    }
    let (m, d) = (meta.m(), cfg.dim);
    let mut data = Vec::with_capacity(rows.len() * m * d);
    for chunk in rows.chunks(batch_size.max(1)) {
        let mut codes = Vec::with_capacity(chunk.len() * m);
        for &r in chunk {
            codes.extend_from_slice(ds.cat_row(r));
        }
        let mut tape = Tape::new();
        let out = forward_contextual(
            cfg,
            meta,
            params,
            &mut tape,
            &codes,
            &mut Mode::Eval,
            ForwardOptions { capture_layers: true, capture_attention: false, missing_avg },
        )?;
        data.extend_from_slice(out.layers[layer].data());
    }
    Ok(Tensor::new(&[rows.len(), m, d], data)?)
}
