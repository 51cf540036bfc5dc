//! Numeric kernels shared by the forward and backward passes.

use super::Scalar;

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

#[inline]
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln sum_j exp(row_j)` with max subtraction.
pub fn log_sum_exp<E: Scalar>(row: &[E]) -> f64 {
    let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.to_f64()));
    let s: f64 = row.iter().map(|&x| (x.to_f64() - mx).exp()).sum();
    mx + s.ln()
}

/// `out = softmax(scale * row)` with max subtraction.
pub fn softmax_row<E: Scalar>(row: &[E], scale: f64, out: &mut [E]) {
    let mx = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(scale * x.to_f64()));
    let mut sum = 0.0f64;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (scale * x.to_f64() - mx).exp();
        sum += e;
        *o = E::from_f64(e);
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o = E::from_f64(o.to_f64() * inv);
    }
}

/// Layer norm of one row with population variance: `gamma * (x - mu)/sqrt(var + eps) + beta`.
pub fn layer_norm_row<E: Scalar>(row: &[E], gamma: &[E], beta: &[E], eps: f64, out: &mut [E]) {
    let d = row.len() as f64;
    let mean: f64 = row.iter().map(|&x| x.to_f64()).sum::<f64>() / d;
    let var: f64 = row.iter().map(|&x| (x.to_f64() - mean).powi(2)).sum::<f64>() / d;
    let inv = 1.0 / (var + eps).sqrt();
    for ((o, &x), (&g, &b)) in out.iter_mut().zip(row).zip(gamma.iter().zip(beta)) {
        *o = E::from_f64((x.to_f64() - mean) * inv * g.to_f64() + b.to_f64());
    }
}

/// `c = a[m,k] * b[k,n]` (row-major, overwrite).
pub fn gemm_nn<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(E::ZERO);
        return;
    }
    unsafe {
        E::gemm(
            m,
            k,
            n,
            E::ONE,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            E::ZERO,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c[m,k] += a[m,n] * b^T` where `b` is stored `[k,n]` row-major.
pub fn gemm_nt_acc<E: Scalar>(m: usize, n: usize, k: usize, a: &[E], b: &[E], c: &mut [E]) {
    if m == 0 || k == 0 {
        return;
    }
    if n == 0 {
        return;
    }
    unsafe {
        E::gemm(
            m,
            n,
            k,
            E::ONE,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            E::ONE,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `c[k,n] += a^T * b` where `a` is `[m,k]` and `b` is `[m,n]`, both row-major.
pub fn gemm_tn_acc<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    if k == 0 || n == 0 {
        return;
    }
    if m == 0 {
        return;
    }
    unsafe {
        E::gemm(
            k,
            m,
            n,
            E::ONE,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            E::ONE,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Small dense `c = a[m,k] * b[k,n]` via plain loops; cheaper than a kernel
/// call for the tiny per-head matrices inside attention.
pub fn mm_nn_small<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for l in 0..k {
                acc += a[i * k + l].to_f64() * b[l * n + j].to_f64();
            }
            c[i * n + j] = E::from_f64(acc);
        }
    }
}

/// Small dense `c = a[m,k] * b^T` with `b` stored `[n,k]`.
pub fn mm_nt<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for l in 0..k {
                acc += a[i * k + l].to_f64() * b[j * k + l].to_f64();
            }
            c[i * n + j] = E::from_f64(acc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_small_known_product() {
        // [[1,2],[3,4]] x [[5],[6]] = [[17],[39]]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0];
        let mut c = [0.0f32; 2];
        gemm_nn(2, 2, 1, &a, &b, &mut c);
        assert_eq!(c, [17.0, 39.0]);
    }

    #[test]
    fn gemm_transposed_variants_match_naive() {
        let m = 3;
        let k = 4;
        let n = 5;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 + 0.5).collect();
        let mut c = vec![0.0; m * n];
        gemm_nn(m, k, n, &a, &b, &mut c);
        let mut c_ref = vec![0.0; m * n];
        mm_nn_small(m, k, n, &a, &b, &mut c_ref);
        for (x, y) in c.iter().zip(&c_ref) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T recovery: da[m,k] = dc[m,n] * b^T
        let mut da = vec![0.0; m * k];
        gemm_nt_acc(m, n, k, &c, &b, &mut da);
        let mut da_ref = vec![0.0; m * k];
        mm_nt(m, n, k, &c, &b, &mut da_ref);
        for (x, y) in da.iter().zip(&da_ref) {
            assert!((x - y).abs() < 1e-9);
        }

        // db[k,n] = a^T * dc
        let mut db = vec![0.0; k * n];
        gemm_tn_acc(m, k, n, &a, &c, &mut db);
        for l in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += a[i * k + l] * c[i * n + j];
                }
                assert!((db[l * n + j] - acc).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_known_values() {
        // softmax([0, ln 3]) = [0.25, 0.75]
        let row = [0.0f64, 3.0f64.ln()];
        let mut out = [0.0f64; 2];
        softmax_row(&row, 1.0, &mut out);
        assert!((out[0] - 0.25).abs() < 1e-12);
        assert!((out[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_known_values() {
        // x = [1,3]: mean 2, population var 1 -> [-1, 1]; gamma 2, beta 1 -> [-1, 3]
        let row = [1.0f64, 3.0];
        let ones = [1.0f64, 1.0];
        let zeros = [0.0f64, 0.0];
        let mut out = [0.0f64; 2];
        layer_norm_row(&row, &ones, &zeros, 0.0, &mut out);
        assert!((out[0] + 1.0).abs() < 1e-12);
        assert!((out[1] - 1.0).abs() < 1e-12);
        let gamma = [2.0f64, 2.0];
        let beta = [1.0f64, 1.0];
        layer_norm_row(&row, &gamma, &beta, 0.0, &mut out);
        assert!((out[0] + 1.0).abs() < 1e-12);
        assert!((out[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stable_logistic_helpers() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-10);
        assert!((ln_1p_exp(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert!((ln_1p_exp(1000.0) - 1000.0).abs() < 1e-9);
        assert!(ln_1p_exp(-1000.0) >= 0.0);
    }
}
