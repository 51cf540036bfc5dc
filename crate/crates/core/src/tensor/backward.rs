//! Reverse pass over a tape. Nodes are visited in reverse construction order,
//! which is a valid reverse topological order because ops can only reference
//! earlier nodes.

use std::collections::HashMap;

use super::ops;
use super::tape::{Op, Tape, Var};
use super::{Scalar, Tensor, TensorError};

/// Gradients produced by one backward pass.
pub struct Grads<E: Scalar> {
    by_node: Vec<Option<Vec<E>>>,
    shapes: Vec<Vec<usize>>,
    by_param: HashMap<usize, Var>,
}

impl<E: Scalar> Grads<E> {
    /// Gradient of the loss with respect to the given node, if any reached it.
    pub fn get(&self, v: Var) -> Option<Tensor<E>> {
        self.by_node[v.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[v.0], g.clone()).unwrap())
    }

    /// Gradient for a registered parameter store index. `None` when the
    /// parameter never entered the graph or was unreachable from the loss.
    pub fn param_grad(&self, store_index: usize) -> Option<Tensor<E>> {
        self.by_param.get(&store_index).and_then(|&v| self.get(v))
    }

    /// Borrowed gradient buffer for a parameter, without copying.
    pub fn param_grad_data(&self, store_index: usize) -> Option<&[E]> {
        self.by_param
            .get(&store_index)
            .and_then(|&v| self.by_node[v.0].as_deref())
    }
}

impl<E: Scalar> Tape<E> {
    /// Accumulates gradients of a scalar `loss` into every node that can
    /// reach a parameter. Nodes not on a path from a parameter to the loss
    /// receive no gradient.
    pub fn backward(&self, loss: Var) -> Result<Grads<E>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", lv.shape()),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<E>>> = vec![None; n];
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut by_param = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            shapes.push(node.value.shape().to_vec());
            if let Op::Param(ix) = node.op {
                by_param.insert(ix, Var(i));
            }
        }
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![E::ONE]);
        }

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.step_back(Var(i), &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Grads { by_node: grads, shapes, by_param })
    }

    fn ensure<'a>(
        &self,
        grads: &'a mut [Option<Vec<E>>],
        v: Var,
    ) -> Option<&'a mut Vec<E>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![E::ZERO; len]))
    }

    fn step_back(&self, out: Var, gy: &[E], grads: &mut [Option<Vec<E>>]) {
        match &self.nodes[out.0].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1])
                };
                let n = self.value(*b).shape()[1];
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                if let Some(ga) = self.ensure(grads, *a) {
                    ops::gemm_nt_acc(m, n, k, gy, bv, ga);
                }
                if let Some(gb) = self.ensure(grads, *b) {
                    ops::gemm_tn_acc(m, k, n, av, gy, gb);
                }
            }
            Op::Bmm { a, b, transpose_b } => {
                let (bs, m, k) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1], s[2])
                };
                let n = if *transpose_b {
                    self.value(*b).shape()[1]
                } else {
                    self.value(*b).shape()[2]
                };
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let tb = *transpose_b;
                if let Some(ga) = self.ensure(grads, *a) {
                    for bi in 0..bs {
                        let g = &gy[bi * m * n..(bi + 1) * m * n];
                        let pb = &bv[bi * k * n..(bi + 1) * k * n];
                        let pga = &mut ga[bi * m * k..(bi + 1) * m * k];
                        for i in 0..m {
                            for l in 0..k {
                                let mut acc = 0.0f64;
                                for j in 0..n {
                                    let bjl = if tb { pb[j * k + l] } else { pb[l * n + j] };
                                    acc += g[i * n + j].to_f64() * bjl.to_f64();
                                }
                                pga[i * k + l] =
                                    E::from_f64(pga[i * k + l].to_f64() + acc);
                            }
                        }
                    }
                }
                if let Some(gb) = self.ensure(grads, *b) {
                    for bi in 0..bs {
                        let g = &gy[bi * m * n..(bi + 1) * m * n];
                        let pa = &av[bi * m * k..(bi + 1) * m * k];
                        let pgb = &mut gb[bi * k * n..(bi + 1) * k * n];
                        for j in 0..n {
                            for l in 0..k {
                                let mut acc = 0.0f64;
                                for i in 0..m {
                                    acc += g[i * n + j].to_f64() * pa[i * k + l].to_f64();
                                }
                                let at = if tb { j * k + l } else { l * n + j };
                                pgb[at] = E::from_f64(pgb[at].to_f64() + acc);
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(g) = self.ensure(grads, v) {
                        for (gi, &gyi) in g.iter_mut().zip(gy) {
                            *gi = E::from_f64(gi.to_f64() + gyi.to_f64());
                        }
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if let Some(g) = self.ensure(grads, *a) {
                    for (gi, &gyi) in g.iter_mut().zip(gy) {
                        *gi = E::from_f64(gi.to_f64() + gyi.to_f64());
                    }
                }
                if let Some(gb) = self.ensure(grads, *bias) {
                    let d = gb.len();
                    for (i, &gyi) in gy.iter().enumerate() {
                        gb[i % d] = E::from_f64(gb[i % d].to_f64() + gyi.to_f64());
                    }
                }
            }
            Op::Scale { a, c } => {
                if let Some(g) = self.ensure(grads, *a) {
                    let cf = c.to_f64();
                    for (gi, &gyi) in g.iter_mut().zip(gy) {
                        *gi = E::from_f64(gi.to_f64() + cf * gyi.to_f64());
                    }
                }
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                if let Some(g) = self.ensure(grads, *a) {
                    for ((gi, &gyi), &xi) in g.iter_mut().zip(gy).zip(x) {
                        if xi > E::ZERO {
                            *gi = E::from_f64(gi.to_f64() + gyi.to_f64());
                        }
                    }
                }
            }
            Op::Selu { a } => {
                let x = self.value(*a).data();
                if let Some(g) = self.ensure(grads, *a) {
                    for ((gi, &gyi), &xi) in g.iter_mut().zip(gy).zip(x) {
                        *gi = E::from_f64(
                            gi.to_f64() + gyi.to_f64() * ops::selu_grad(xi.to_f64()),
                        );
                    }
                }
            }
            Op::SoftmaxLast { a, scale } => {
                let y = self.value(out).data().to_vec();
                let d = *self.value(out).shape().last().unwrap();
                let s = scale.to_f64();
                if let Some(g) = self.ensure(grads, *a) {
                    for r in 0..y.len() / d {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gy[r * d..(r + 1) * d];
                        let dot: f64 =
                            yr.iter().zip(gr).map(|(&yi, &gi)| yi.to_f64() * gi.to_f64()).sum();
                        for j in 0..d {
                            let contrib =
                                s * yr[j].to_f64() * (gr[j].to_f64() - dot);
                            let slot = &mut g[r * d + j];
                            *slot = E::from_f64(slot.to_f64() + contrib);
                        }
                    }
                }
            }
            Op::LayerNorm { a, gamma, beta, eps } => {
                let x = self.value(*a).data();
                let gm = self.value(*gamma).data();
                let d = gm.len();
                let rows = x.len() / d;
                let epsf = eps.to_f64();
                // Per-row normalized values, recomputed rather than stored.
                let mut xhat = vec![0.0f64; x.len()];
                let mut inv_sd = vec![0.0f64; rows];
                for r in 0..rows {
                    let row = &x[r * d..(r + 1) * d];
                    let mean: f64 = row.iter().map(|&v| v.to_f64()).sum::<f64>() / d as f64;
                    let var: f64 =
                        row.iter().map(|&v| (v.to_f64() - mean).powi(2)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + epsf).sqrt();
                    inv_sd[r] = inv;
                    for j in 0..d {
                        xhat[r * d + j] = (row[j].to_f64() - mean) * inv;
                    }
                }
                if let Some(gg) = self.ensure(grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] = E::from_f64(
                                gg[j].to_f64() + gy[r * d + j].to_f64() * xhat[r * d + j],
                            );
                        }
                    }
                }
                if let Some(gb) = self.ensure(grads, *beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] =
                                E::from_f64(gb[j].to_f64() + gy[r * d + j].to_f64());
                        }
                    }
                }
                if let Some(ga) = self.ensure(grads, *a) {
                    for r in 0..rows {
                        let mut mean_dxhat = 0.0f64;
                        let mut mean_dxhat_xhat = 0.0f64;
                        for j in 0..d {
                            let dxh = gy[r * d + j].to_f64() * gm[j].to_f64();
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[r * d + j];
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_xhat /= d as f64;
                        for j in 0..d {
                            let dxh = gy[r * d + j].to_f64() * gm[j].to_f64();
                            let dx = inv_sd[r]
                                * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
                            let slot = &mut ga[r * d + j];
                            *slot = E::from_f64(slot.to_f64() + dx);
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if let Some(g) = self.ensure(grads, *a) {
                    for ((gi, &gyi), &mi) in g.iter_mut().zip(gy).zip(mask.iter()) {
                        *gi = E::from_f64(gi.to_f64() + gyi.to_f64() * mi.to_f64());
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(g) = self.ensure(grads, *a) {
                    for (gi, &gyi) in g.iter_mut().zip(gy) {
                        *gi = E::from_f64(gi.to_f64() + gyi.to_f64());
                    }
                }
            }
            Op::ConcatLast { parts } => {
                let parts = parts.clone();
                let total: usize = parts
                    .iter()
                    .map(|&p| *self.value(p).shape().last().unwrap())
                    .sum();
                let rows = gy.len() / total;
                let mut offset = 0usize;
                for &p in &parts {
                    let d = *self.value(p).shape().last().unwrap();
                    if let Some(g) = self.ensure(grads, p) {
                        for r in 0..rows {
                            for j in 0..d {
                                let slot = &mut g[r * d + j];
                                *slot = E::from_f64(
                                    slot.to_f64() + gy[r * total + offset + j].to_f64(),
                                );
                            }
                        }
                    }
                    offset += d;
                }
            }
            Op::GatherRows { a, idx } => {
                let idx = idx.clone();
                let d = self.value(*a).shape()[1];
                if let Some(g) = self.ensure(grads, *a) {
                    for (o, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            let slot = &mut g[i * d + j];
                            *slot = E::from_f64(slot.to_f64() + gy[o * d + j].to_f64());
                        }
                    }
                }
            }
            Op::CeMean { logits, targets } => {
                let targets = targets.clone();
                let v = self.value(*logits).clone();
                let (n, classes) = (v.shape()[0], v.shape()[1]);
                let seed = gy[0].to_f64() / n as f64;
                if let Some(g) = self.ensure(grads, *logits) {
                    let mut sm = vec![E::ZERO; classes];
                    for (r, &t) in targets.iter().enumerate() {
                        ops::softmax_row(&v.data()[r * classes..(r + 1) * classes], 1.0, &mut sm);
                        for j in 0..classes {
                            let one = if j == t { 1.0 } else { 0.0 };
                            let slot = &mut g[r * classes + j];
                            *slot = E::from_f64(
                                slot.to_f64() + seed * (sm[j].to_f64() - one),
                            );
                        }
                    }
                }
            }
            Op::BceMean { z, targets } => {
                let targets = targets.clone();
                let v = self.value(*z).data();
                let seed = gy[0].to_f64() / v.len() as f64;
                if let Some(g) = self.ensure(grads, *z) {
                    for (i, (&zi, &yi)) in v.iter().zip(targets.iter()).enumerate() {
                        let p = ops::sigmoid(zi.to_f64());
                        g[i] = E::from_f64(g[i].to_f64() + seed * (p - yi.to_f64()));
                    }
                }
            }
            Op::EntropyMean { z } => {
                let v = self.value(*z).data();
                let seed = gy[0].to_f64() / v.len() as f64;
                if let Some(g) = self.ensure(grads, *z) {
                    for (i, &zi) in v.iter().enumerate() {
                        let zf = zi.to_f64();
                        let p = ops::sigmoid(zf);
                        g[i] = E::from_f64(g[i].to_f64() - seed * zf * p * (1.0 - p));
                    }
                }
            }
        }
    }
}
