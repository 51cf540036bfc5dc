//! Finite-difference gradient oracle.
//!
//! Re-evaluates a scalar loss with each parameter element nudged by ±h and
//! forms the central difference. It never touches the backward pass, so
//! agreement between the two is evidence both are right.

use crate::params::ParamStore;
use crate::tensor::{Tensor, TensorError};

/// Relative error with an absolute floor, so gradients near zero compare on
/// an absolute scale instead of blowing up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Worst disagreement between an analytic and a numeric gradient set.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(param name, flat element index, analytic, numeric)` of the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Central finite differences of `loss_fn` at `params`: one tensor of
/// partial derivatives per parameter, in store order.
pub fn central_diff<F>(
    params: &ParamStore<f64>,
    mut loss_fn: F,
    h: f64,
) -> Result<Vec<Tensor<f64>>, TensorError>
where
    F: FnMut(&ParamStore<f64>) -> Result<f64, TensorError>,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for ix in 0..params.len() {
        let shape = params.value_at(ix).shape().to_vec();
        let n = params.value_at(ix).len();
        let mut grad = vec![0.0f64; n];
        for j in 0..n {
            let orig = params.value_at(ix).data()[j];
            work.set_elem(ix, j, orig + h);
            let up = loss_fn(&work)?;
            work.set_elem(ix, j, orig - h);
            let down = loss_fn(&work)?;
            work.set_elem(ix, j, orig);
            grad[j] = (up - down) / (2.0 * h);
        }
        out.push(Tensor::new(&shape, grad)?);
    }
    Ok(out)
}

/// Compare analytic gradients (store order, zeros for missing) against the
/// numeric ones from [`central_diff`].
pub fn compare(
    params: &ParamStore<f64>,
    analytic: &[Option<Tensor<f64>>],
    numeric: &[Tensor<f64>],
) -> GradCheckReport {
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None };
    for ix in 0..params.len() {
        let num = numeric[ix].data();
        let zero_len = num.len();
        for j in 0..zero_len {
            let a = analytic[ix].as_ref().map_or(0.0, |t| t.data()[j]);
            let e = rel_err(a, num[j]);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((params.name_at(ix).to_string(), j, a, num[j]));
            }
        }
    }
    report
}
