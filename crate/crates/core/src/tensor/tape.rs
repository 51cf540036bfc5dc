//! Computation tape. Every op appends a node holding its output value and
//! enough context to run the backward pass; node order is topological by
//! construction.

use std::collections::HashMap;
use std::sync::Arc;

use super::ops;
use super::{Scalar, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<E: Scalar> {
    /// Constant input; no gradient flows into it.
    Leaf,
    /// Trainable input, identified by its index in some parameter store.
    Param(usize),
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul { a: Var, b: Var },
    /// Batched `[B,m,k] x [B,k,n] -> [B,m,n]`; with `transpose_b`, `b` is
    /// `[B,n,k]` and used transposed.
    Bmm { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    /// Broadcasts `bias` (shape `[d]`) over the last axis.
    AddBias { a: Var, bias: Var },
    Scale { a: Var, c: E },
    Relu { a: Var },
    Selu { a: Var },
    /// Row-wise `softmax(scale * x)` over the last axis.
    SoftmaxLast { a: Var, scale: E },
    LayerNorm { a: Var, gamma: Var, beta: Var, eps: E },
    /// Inverted dropout; `mask` entries are `0` or `1/keep`.
    Dropout { a: Var, mask: Arc<Vec<E>> },
    Reshape { a: Var },
    ConcatLast { parts: Vec<Var> },
    /// `a` is `[rows, d]`; output row `i` is row `idx[i]` of `a`.
    GatherRows { a: Var, idx: Arc<Vec<usize>> },
    /// Mean cross-entropy of `[n, classes]` logits against class indices.
    CeMean { logits: Var, targets: Arc<Vec<usize>> },
    /// Mean binary cross-entropy of logits against 0/1 targets.
    BceMean { z: Var, targets: Arc<Vec<E>> },
    /// Mean entropy of the Bernoulli distributions `sigmoid(z)`.
    EntropyMean { z: Var },
}

pub(crate) struct Node<E: Scalar> {
    pub value: Tensor<E>,
    pub op: Op<E>,
    pub needs_grad: bool,
}

pub struct Tape<E: Scalar> {
    pub(crate) nodes: Vec<Node<E>>,
    registered: HashMap<usize, Var>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), registered: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input node.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input node. Registering the same `store_index` twice returns
    /// the first node so gradients never split across duplicates.
    pub fn param(&mut self, store_index: usize, value: Tensor<E>) -> Var {
        if let Some(&v) = self.registered.get(&store_index) {
            return v;
        }
        let v = self.push(value, Op::Param(store_index), true);
        self.registered.insert(store_index, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 {
            return Err(TensorError::Rank { op: "matmul", expected: 2, got: va.ndim() });
        }
        if vb.ndim() != 2 {
            return Err(TensorError::Rank { op: "matmul", expected: 2, got: vb.ndim() });
        }
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (k2, n) = (vb.shape()[0], vb.shape()[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = vec![E::ZERO; m * n];
        ops::gemm_nn(m, k, n, va.data(), vb.data(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, n], out).unwrap(), Op::MatMul { a, b }, needs))
    }

    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 3 {
            return Err(TensorError::Rank { op: "bmm", expected: 3, got: va.ndim() });
        }
        if vb.ndim() != 3 {
            return Err(TensorError::Rank { op: "bmm", expected: 3, got: vb.ndim() });
        }
        let (bs, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let (bs2, d1, d2) = (vb.shape()[0], vb.shape()[1], vb.shape()[2]);
        let (kb, n) = if transpose_b { (d2, d1) } else { (d1, d2) };
        if bs != bs2 || k != kb {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = vec![E::ZERO; bs * m * n];
        for bi in 0..bs {
            let pa = &va.data()[bi * m * k..(bi + 1) * m * k];
            let pb = &vb.data()[bi * d1 * d2..(bi + 1) * d1 * d2];
            let po = &mut out[bi * m * n..(bi + 1) * m * n];
            if transpose_b {
                ops::mm_nt(m, k, n, pa, pb, po);
            } else {
                ops::mm_nn_small(m, k, n, pa, pb, po);
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(&[bs, m, n], out).unwrap(),
            Op::Bmm { a, b, transpose_b },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data: Vec<E> = va
            .iter()
            .zip(vb.iter())
            .map(|(&x, &y)| E::from_f64(x.to_f64() + y.to_f64()))
            .collect();
        let value = Tensor::new(va.shape(), data).unwrap();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(bias));
        if vb.ndim() != 1 {
            return Err(TensorError::Rank { op: "add_bias", expected: 1, got: vb.ndim() });
        }
        let d = *va.shape().last().ok_or(TensorError::Rank {
            op: "add_bias",
            expected: 1,
            got: 0,
        })?;
        if vb.shape()[0] != d {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let bdat = vb.data();
        let data: Vec<E> = va
            .iter()
            .enumerate()
            .map(|(i, &x)| E::from_f64(x.to_f64() + bdat[i % d].to_f64()))
            .collect();
        let value = Tensor::new(va.shape(), data).unwrap();
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(value, Op::AddBias { a, bias }, needs))
    }

    pub fn scale(&mut self, a: Var, c: E) -> Var {
        let value = self.value(a).map(|x| E::from_f64(x.to_f64() * c.to_f64()));
        let needs = self.needs(a);
        self.push(value, Op::Scale { a, c }, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > E::ZERO { x } else { E::ZERO });
        let needs = self.needs(a);
        self.push(value, Op::Relu { a }, needs)
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| E::from_f64(ops::selu(x.to_f64())));
        let needs = self.needs(a);
        self.push(value, Op::Selu { a }, needs)
    }

    pub fn softmax_last(&mut self, a: Var, scale: E) -> Result<Var, TensorError> {
        let va = self.value(a);
        if va.ndim() == 0 || va.shape().last() == Some(&0) {
            return Err(TensorError::Invalid {
                op: "softmax_last",
                msg: format!("degenerate shape {:?}", va.shape()),
            });
        }
        let d = *va.shape().last().unwrap();
        let mut data = vec![E::ZERO; va.len()];
        for (row_out, row_in) in data.chunks_mut(d).zip(va.data().chunks(d)) {
            ops::softmax_row(row_in, scale.to_f64(), row_out);
        }
        let value = Tensor::new(va.shape(), data).unwrap();
        let needs = self.needs(a);
        Ok(self.push(value, Op::SoftmaxLast { a, scale }, needs))
    }

    pub fn layer_norm(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        eps: E,
    ) -> Result<Var, TensorError> {
        let (va, vg, vb) = (self.value(a), self.value(gamma), self.value(beta));
        let d = *va.shape().last().ok_or(TensorError::Rank {
            op: "layer_norm",
            expected: 1,
            got: 0,
        })?;
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: va.shape().to_vec(),
                right: vg.shape().to_vec(),
            });
        }
        let g = vg.data();
        let b = vb.data();
        let mut data = vec![E::ZERO; va.len()];
        for (row_out, row_in) in data.chunks_mut(d).zip(va.data().chunks(d)) {
            ops::layer_norm_row(row_in, g, b, eps.to_f64(), row_out);
        }
        let value = Tensor::new(va.shape(), data).unwrap();
        let needs = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(value, Op::LayerNorm { a, gamma, beta, eps }, needs))
    }

    /// Inverted dropout driven by the caller's RNG. `rate == 0` is an
    /// identity and adds no node.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut impl rand::Rng) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0,1)");
        if rate == 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let inv = E::from_f64(1.0 / keep);
        let n = self.value(a).len();
        let mask: Vec<E> =
            (0..n).map(|_| if rng.random::<f64>() < keep { inv } else { E::ZERO }).collect();
        let va = self.value(a);
        let data: Vec<E> = va
            .iter()
            .zip(mask.iter())
            .map(|(&x, &m)| E::from_f64(x.to_f64() * m.to_f64()))
            .collect();
        let value = Tensor::new(va.shape(), data).unwrap();
        let needs = self.needs(a);
        self.push(value, Op::Dropout { a, mask: Arc::new(mask) }, needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape { a }, needs))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Invalid { op: "concat_last", msg: "no parts".into() });
        }
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len() - 1];
        let mut total_last = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_last",
                    left: first.clone(),
                    right: s.to_vec(),
                });
            }
            total_last += *s.last().unwrap();
        }
        let rows: usize = lead.iter().product();
        let mut data = vec![E::ZERO; rows * total_last];
        let mut offset = 0usize;
        for &p in parts {
            let v = self.value(p);
            let d = *v.shape().last().unwrap();
            for r in 0..rows {
                data[r * total_last + offset..r * total_last + offset + d]
                    .copy_from_slice(&v.data()[r * d..(r + 1) * d]);
            }
            offset += d;
        }
        let mut shape = lead.to_vec();
        shape.push(total_last);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(&shape, data).unwrap(), Op::ConcatLast { parts: parts.to_vec() }, needs))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, TensorError> {
        let va = self.value(a);
        if va.ndim() != 2 {
            return Err(TensorError::Rank { op: "gather_rows", expected: 2, got: va.ndim() });
        }
        let (rows, d) = (va.shape()[0], va.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index { op: "gather_rows", index: bad, bound: rows });
        }
        let mut data = vec![E::ZERO; idx.len() * d];
        for (o, &i) in idx.iter().enumerate() {
            data[o * d..(o + 1) * d].copy_from_slice(&va.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(&[idx.len(), d], data).unwrap();
        let needs = self.needs(a);
        Ok(self.push(value, Op::GatherRows { a, idx: Arc::new(idx) }, needs))
    }

    /// Mean cross-entropy against integer class targets; logits are `[n, classes]`.
    pub fn ce_mean(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var, TensorError> {
        let v = self.value(logits);
        if v.ndim() != 2 {
            return Err(TensorError::Rank { op: "ce_mean", expected: 2, got: v.ndim() });
        }
        let (n, classes) = (v.shape()[0], v.shape()[1]);
        if targets.len() != n {
            return Err(TensorError::DataLength { expected: n, got: targets.len() });
        }
        if n == 0 {
            return Err(TensorError::Invalid { op: "ce_mean", msg: "empty batch".into() });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(TensorError::Index { op: "ce_mean", index: bad, bound: classes });
        }
        let mut total = 0.0f64;
        for (row, &t) in v.data().chunks(classes).zip(&targets) {
            total += ops::log_sum_exp(row) - row[t].to_f64();
        }
        let value = Tensor::scalar(E::from_f64(total / n as f64));
        let needs = self.needs(logits);
        Ok(self.push(value, Op::CeMean { logits, targets: Arc::new(targets) }, needs))
    }

    /// Mean binary cross-entropy of logits `z` against 0/1 targets.
    pub fn bce_mean(&mut self, z: Var, targets: Vec<E>) -> Result<Var, TensorError> {
        let v = self.value(z);
        if targets.len() != v.len() {
            return Err(TensorError::DataLength { expected: v.len(), got: targets.len() });
        }
        if v.len() == 0 {
            return Err(TensorError::Invalid { op: "bce_mean", msg: "empty batch".into() });
        }
        let mut total = 0.0f64;
        for (&zi, &yi) in v.iter().zip(&targets) {
            let (z, y) = (zi.to_f64(), yi.to_f64());
            total += z.max(0.0) - z * y + ops::ln_1p_exp(-z.abs());
        }
        let value = Tensor::scalar(E::from_f64(total / v.len() as f64));
        let needs = self.needs(z);
        Ok(self.push(value, Op::BceMean { z, targets: Arc::new(targets) }, needs))
    }

    /// Mean Bernoulli entropy of `sigmoid(z)`.
    pub fn entropy_mean(&mut self, z: Var) -> Result<Var, TensorError> {
        let v = self.value(z);
        if v.len() == 0 {
            return Err(TensorError::Invalid { op: "entropy_mean", msg: "empty batch".into() });
        }
        let mut total = 0.0f64;
        for &zi in v.iter() {
            let za = zi.to_f64().abs();
            total += ops::ln_1p_exp(-za) + za * ops::sigmoid(-za);
        }
        let value = Tensor::scalar(E::from_f64(total / v.len() as f64));
        let needs = self.needs(z);
        Ok(self.push(value, Op::EntropyMean { z }, needs))
    }
}
