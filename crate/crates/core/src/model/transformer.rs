//! Multi-head self-attention over column embeddings, post-norm residual
//! blocks, and a position-wise feed-forward expansion of four.

use rand_distr::{Distribution, Uniform};

use super::ModelConfig;
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub const FFN_EXPANSION: usize = 4;

/// `[fan_in, fan_out]` weight with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
pub(crate) fn init_linear<E: Scalar>(
    name: &str,
    fan_in: usize,
    fan_out: usize,
    seed: u64,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let mut r = rng::stream(seed, &format!("init/{name}"));
    let w = Tensor::from_fn(&[fan_in, fan_out], |_| E::from_f64(dist.sample(&mut r)));
    store.insert(name, w)?;
    Ok(())
}

pub fn init_layers<E: Scalar>(
    cfg: &ModelConfig,
    seed: u64,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    let d = cfg.dim;
    let k = cfg.head_dim();
    for j in 0..cfg.n_layers {
        for h in 0..cfg.n_heads {
            for proj in ["wq", "wk", "wv"] {
                init_linear(&format!("layer{j}/h{h}/{proj}"), d, k, seed, store)?;
            }
        }
        init_linear(&format!("layer{j}/attn_out/w"), cfg.n_heads * k, d, seed, store)?;
        store.insert(&format!("layer{j}/ln1/g"), Tensor::full(&[d], E::ONE))?;
        store.insert(&format!("layer{j}/ln1/b"), Tensor::zeros(&[d]))?;
        init_linear(&format!("layer{j}/ffn/w1"), d, FFN_EXPANSION * d, seed, store)?;
        store.insert(&format!("layer{j}/ffn/b1"), Tensor::zeros(&[FFN_EXPANSION * d]))?;
        init_linear(&format!("layer{j}/ffn/w2"), FFN_EXPANSION * d, d, seed, store)?;
        store.insert(&format!("layer{j}/ffn/b2"), Tensor::zeros(&[d]))?;
        store.insert(&format!("layer{j}/ln2/g"), Tensor::full(&[d], E::ONE))?;
        store.insert(&format!("layer{j}/ln2/b"), Tensor::zeros(&[d]))?;
    }
    Ok(())
}

/// One attention head over `x: [b, m, d]` with `[d, k]` projections.
///
/// Scores are scaled by `1/sqrt(k)` before the row-wise softmax. Returns the
/// mixed values `[b, m, k]` and the attention weights `[b, m, m]`.
pub fn attention_head<E: Scalar>(
    tape: &mut Tape<E>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<(Var, Var), TensorError> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Rank { op: "attention_head", expected: 3, got: shape.len() });
    }
    let (b, m, d) = (shape[0], shape[1], shape[2]);
    let k = tape.value(wq).shape()[1];
    let flat = tape.reshape(x, &[b * m, d])?;
    let q = tape.matmul(flat, wq)?;
    let kk = tape.matmul(flat, wk)?;
    let v = tape.matmul(flat, wv)?;
    let q3 = tape.reshape(q, &[b, m, k])?;
    let k3 = tape.reshape(kk, &[b, m, k])?;
    let v3 = tape.reshape(v, &[b, m, k])?;
    let scores = tape.bmm(q3, k3, true)?;
    let attn = tape.softmax_last(scores, E::from_f64(1.0 / (k as f64).sqrt()))?;
    let mixed = tape.bmm(attn, v3, false)?;
    Ok((mixed, attn))
}

pub struct LayerOut {
    pub out: Var,
    /// Attention weights per head, `[b, m, m]` each.
    pub attn: Vec<Var>,
}

/// One post-norm transformer block: multi-head attention with a residual
/// connection and layer norm, then the feed-forward expansion with another.
#[allow(clippy::too_many_arguments)]
pub fn transformer_layer<E: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    layer: usize,
    x: Var,
    dropout_rng: &mut Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<LayerOut, TensorError> {
    let shape = tape.value(x).shape().to_vec();
    let (b, m, d) = (shape[0], shape[1], shape[2]);
    let var_of = |tape: &mut Tape<E>, name: String| -> Result<Var, TensorError> {
        let ix = params.index_of(&name).ok_or_else(|| TensorError::Invalid {
            op: "transformer_layer",
            msg: format!("missing parameter {name:?}"),
        })?;
        Ok(tape.param(ix, params.value_at(ix).clone()))
    };

    let mut heads = Vec::with_capacity(cfg.n_heads);
    let mut attn_weights = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let wq = var_of(tape, format!("layer{layer}/h{h}/wq"))?;
        let wk = var_of(tape, format!("layer{layer}/h{h}/wk"))?;
        let wv = var_of(tape, format!("layer{layer}/h{h}/wv"))?;
        let (mixed, attn) = attention_head(tape, x, wq, wk, wv)?;
        let k = cfg.head_dim();
        heads.push(tape.reshape(mixed, &[b * m, k])?);
        attn_weights.push(attn);
    }
    let concat = tape.concat_last(&heads)?;
    let wo = var_of(tape, format!("layer{layer}/attn_out/w"))?;
    let mut attn_out = tape.matmul(concat, wo)?;
    attn_out = maybe_dropout(tape, attn_out, cfg.dropout, dropout_rng);

    let x_flat = tape.reshape(x, &[b * m, d])?;
    let res1 = tape.add(x_flat, attn_out)?;
    let g1 = var_of(tape, format!("layer{layer}/ln1/g"))?;
    let b1 = var_of(tape, format!("layer{layer}/ln1/b"))?;
    let normed1 = tape.layer_norm(res1, g1, b1, E::from_f64(cfg.ln_eps))?;

    let w1 = var_of(tape, format!("layer{layer}/ffn/w1"))?;
    let bb1 = var_of(tape, format!("layer{layer}/ffn/b1"))?;
    let w2 = var_of(tape, format!("layer{layer}/ffn/w2"))?;
    let bb2 = var_of(tape, format!("layer{layer}/ffn/b2"))?;
    let h1 = tape.matmul(normed1, w1)?;
    let h1 = tape.add_bias(h1, bb1)?;
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(h1, w2)?;
    let mut h2 = tape.add_bias(h2, bb2)?;
    h2 = maybe_dropout(tape, h2, cfg.dropout, dropout_rng);

    let res2 = tape.add(normed1, h2)?;
    let g2 = var_of(tape, format!("layer{layer}/ln2/g"))?;
    let b2 = var_of(tape, format!("layer{layer}/ln2/b"))?;
    let normed2 = tape.layer_norm(res2, g2, b2, E::from_f64(cfg.ln_eps))?;
    let out = tape.reshape(normed2, &[b, m, d])?;
    Ok(LayerOut { out, attn: attn_weights })
}

pub(crate) fn maybe_dropout<E: Scalar>(
    tape: &mut Tape<E>,
    v: Var,
    rate: f64,
    rng: &mut Option<&mut rand_chacha::ChaCha8Rng>,
) -> Var {
    match rng {
        Some(r) if rate > 0.0 => tape.dropout(v, rate, *r),
        _ => v,
    }
}
