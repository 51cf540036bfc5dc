//! Linear separability probe: logistic regression on pooled contextual
//! embeddings from a frozen model, reported as test AUC and as a fraction of
//! a reference (end-to-end) AUC.

use serde::{Deserialize, Serialize};

use super::{auc, extract_embeddings, EvalError};
use crate::data::Dataset;
use crate::model::{ModelConfig, TableMeta};
use crate::params::ParamStore;
use crate::tensor::{sigmoid, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// All m embeddings side by side: width `m·d`.
    Concat,
    /// Element-wise mean over columns: width `d`.
    Average,
    /// Element-wise max over columns: width `d`.
    Max,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeSpec {
    /// 0 = pre-attention column embeddings, j = after layer j.
    pub layer: usize,
    pub pooling: Pooling,
    pub include_continuous: bool,
}

/// Fitted logistic-regression state, kept for inspection in tests/reports.
#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub auc: f64,
    /// Probe AUC divided by the reference model's AUC.
    pub normalized: f64,
    pub fit: LogisticFit,
}

/// Feature width a probe spec produces.
pub fn probe_width(cfg: &ModelConfig, meta: &TableMeta, spec: &ProbeSpec) -> usize {
    let base = match spec.pooling {
        Pooling::Concat => meta.m() * cfg.dim,
        Pooling::Average | Pooling::Max => cfg.dim,
    };
    base + if spec.include_continuous { meta.c() } else { 0 }
}

/// Pool `[n, m, d]` embeddings to a row-major f64 feature matrix, optionally
/// appending the rescaled continuous features of `rows`.
pub fn pooled_features<E: Scalar>(
    emb: &Tensor<E>,
    pooling: Pooling,
    ds: &Dataset,
    rows: &[usize],
    include_continuous: bool,
) -> (Vec<f64>, usize) {
    let (n, m, d) = (emb.shape()[0], emb.shape()[1], emb.shape()[2]);
    debug_assert_eq!(n, rows.len());
    let base = match pooling {
        Pooling::Concat => m * d,
        Pooling::Average | Pooling::Max => d,
    };
    let width = base + if include_continuous { ds.c() } else { 0 };
    let mut out = Vec::with_capacity(n * width);
    for (k, &row) in rows.iter().enumerate() {
        let block = &emb.data()[k * m * d..(k + 1) * m * d];
        match pooling {
            Pooling::Concat => out.extend(block.iter().map(|v| v.to_f64())),
            Pooling::Average => {
                for x in 0..d {
                    let mut s = 0.0;
                    for i in 0..m {
                        s += block[i * d + x].to_f64();
                    }
                    out.push(s / m as f64);
                }
            }
            Pooling::Max => {
                for x in 0..d {
                    let mut best = f64::NEG_INFINITY;
                    for i in 0..m {
                        best = best.max(block[i * d + x].to_f64());
                    }
                    out.push(best);
                }
            }
        }
        if include_continuous {
            out.extend_from_slice(ds.cont_row(row));
        }
    }
    (out, width)
}

/// Full-batch gradient descent on L2-regularized logistic loss from a zero
/// start. The step size is the inverse of a Lipschitz bound on the loss
/// gradient, which makes descent monotone; iteration stops when the loss
/// improvement drops below `1e-7`.
pub fn fit_logistic(
    x: &[f64],
    width: usize,
    y: &[u8],
    l2: f64,
    max_iters: usize,
) -> LogisticFit {
    let n = y.len();
    debug_assert_eq!(x.len(), n * width);
    let max_sqnorm = x
        .chunks(width)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>())
        .fold(0.0f64, f64::max);
    let lip = 0.25 * (max_sqnorm + 1.0) + l2; // +1 covers the bias feature
    let lr = 1.0 / lip;

    let mut w = vec![0.0f64; width];
    let mut b = 0.0f64;
    let mut z = vec![0.0f64; n];
    let mut prev_loss = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut final_loss = 0.0;
    for it in 1..=max_iters {
        let mut loss = 0.0f64;
        for (i, row) in x.chunks(width).enumerate() {
            let zi = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            z[i] = zi;
            loss += zi.max(0.0) - zi * y[i] as f64 + (-zi.abs()).exp().ln_1p();
        }
        loss /= n as f64;
        loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();

        let mut gw = vec![0.0f64; width];
        let mut gb = 0.0f64;
        for (i, row) in x.chunks(width).enumerate() {
            let r = sigmoid(z[i]) - y[i] as f64;
            for (g, a) in gw.iter_mut().zip(row) {
                *g += r * a;
            }
            gb += r;
        }
        for (g, wv) in gw.iter_mut().zip(&w) {
            *g = *g / n as f64 + l2 * wv;
        }
        gb /= n as f64;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= lr * g;
        }
        b -= lr * gb;

        iterations = it;
        final_loss = loss;
        if (prev_loss - loss).abs() < 1e-7 {
            converged = true;
            break;
        }
        prev_loss = loss;
    }
    LogisticFit { weights: w, bias: b, iterations, converged, final_loss }
}

fn apply_logistic(fit: &LogisticFit, x: &[f64], width: usize) -> Vec<f64> {
    x.chunks(width)
        .map(|row| sigmoid(row.iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>() + fit.bias))
        .collect()
}

/// Fit a logistic probe on `train_rows` embeddings and report its AUC on
/// `test_rows`, normalized by `reference_auc` (the end-to-end model's score
/// on the same rows).
#[allow(clippy::too_many_arguments)]
pub fn linear_probe<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    ds: &Dataset,
    train_rows: &[usize],
    test_rows: &[usize],
    spec: &ProbeSpec,
    reference_auc: f64,
    batch_size: usize,
    missing_avg: bool,
) -> Result<ProbeResult, EvalError> {
    let train_emb =
        extract_embeddings(cfg, meta, params, ds, train_rows, spec.layer, batch_size, missing_avg)?;
    let (xtr, width) =
        pooled_features(&train_emb, spec.pooling, ds, train_rows, spec.include_continuous);
    let ytr: Vec<u8> = train_rows.iter().map(|&r| ds.labels[r]).collect();
    let fit = fit_logistic(&xtr, width, &ytr, 1e-4, 10_000);

    let test_emb =
        extract_embeddings(cfg, meta, params, ds, test_rows, spec.layer, batch_size, missing_avg)?;
    let (xte, _) =
        pooled_features(&test_emb, spec.pooling, ds, test_rows, spec.include_continuous);
    let yte: Vec<u8> = test_rows.iter().map(|&r| ds.labels[r]).collect();
    let scores = apply_logistic(&fit, &xte, width);
    let probe_auc = auc(&scores, &yte)?;
    Ok(ProbeResult { auc: probe_auc, normalized: probe_auc / reference_auc, fit })
}
