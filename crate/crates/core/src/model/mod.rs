//! The classifier: column embeddings, a stack of self-attention layers over
//! them, and an MLP head reading the contextual embeddings next to the raw
//! continuous features.
//!
//! With zero attention layers the forward pass degenerates to the baseline
//! MLP over (non-contextual) embeddings — same code path, not an emulation,
//! so the two agree bit for bit.

mod embedding;
mod transformer;

pub use embedding::{average_class_embedding, embed_columns, embed_widths, init_embeddings};
pub use transformer::{attention_head, init_layers, transformer_layer, FFN_EXPANSION};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

/// How a column identifier combines with the per-class embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "denom")]
pub enum ColEmbed {
    /// Identifier of width `dim/denom` concatenated before the class part.
    Concat { denom: usize },
    /// Identifier of full width added to the class embedding.
    Add,
    /// Class embeddings only.
    None,
}

/// What embedding a categorical code 0 (missing/unseen) receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissingPolicy {
    /// The reserved row 0 of the embedding table.
    Reserved,
    /// The mean of the column's observed class embeddings.
    AverageClass,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Number of attention layers; 0 gives the baseline MLP.
    pub n_layers: usize,
    pub n_heads: usize,
    pub col_embed: ColEmbed,
    /// Hidden widths of the MLP head; empty derives `[4l, 2l]` from the
    /// head input width l.
    pub head_hidden: Vec<usize>,
    pub dropout: f64,
    /// Layer norm between head linears (in place of batch norm).
    pub head_layer_norm: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            n_layers: 6,
            n_heads: 8,
            col_embed: ColEmbed::Concat { denom: 8 },
            head_hidden: Vec::new(),
            dropout: 0.1,
            head_layer_norm: false,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Per-head key/query/value width.
    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Width of the MLP head input: all contextual embeddings plus the
    /// continuous features.
    pub fn head_input_width(&self, m: usize, c: usize) -> usize {
        self.dim * m + c
    }

    pub fn head_hidden_for(&self, m: usize, c: usize) -> Vec<usize> {
        if !self.head_hidden.is_empty() {
            return self.head_hidden.clone();
        }
        let l = self.head_input_width(m, c);
        vec![4 * l, 2 * l]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| TensorError::Invalid { op: "model_config", msg };
        if self.dim == 0 || self.n_heads == 0 {
            return Err(bad(format!("dim {} / heads {} must be positive", self.dim, self.n_heads)));
        }
        if self.dim % self.n_heads != 0 {
            return Err(bad(format!("dim {} not divisible by heads {}", self.dim, self.n_heads)));
        }
        if let ColEmbed::Concat { denom } = self.col_embed {
            if denom < 2 || self.dim % denom != 0 {
                return Err(bad(format!(
                    "identifier fraction 1/{denom} does not divide dim {}",
                    self.dim
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Table dimensions a model is bound to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    /// Class counts d_i per categorical column, in schema order.
    pub cards: Vec<usize>,
    /// Number of continuous columns.
    pub n_cont: usize,
}

impl TableMeta {
    pub fn of(ds: &Dataset) -> TableMeta {
        TableMeta { cards: ds.cardinalities(), n_cont: ds.c() }
    }

    pub fn m(&self) -> usize {
        self.cards.len()
    }

    pub fn c(&self) -> usize {
        self.n_cont
    }
}

/// Training vs inference. Training mode carries the RNG that drives dropout;
/// inference takes no RNG at all, so it cannot perturb any stream.
pub enum Mode<'a> {
    Train { dropout: &'a mut ChaCha8Rng },
    Eval,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Capture embeddings and every layer output (index 0 = embeddings).
    pub capture_layers: bool,
    /// Capture attention weights per layer per head.
    pub capture_attention: bool,
    pub missing_avg: bool,
}

impl ForwardOptions {
    fn policy(&self) -> MissingPolicy {
        if self.missing_avg {
            MissingPolicy::AverageClass
        } else {
            MissingPolicy::Reserved
        }
    }
}

/// One mini-batch in model form.
pub struct Batch<E: Scalar> {
    pub n: usize,
    /// `[n, m]` categorical codes.
    pub codes: Vec<u32>,
    /// `[n, c]` continuous features.
    pub cont: Tensor<E>,
    /// 0/1 targets; empty for unlabeled batches.
    pub targets: Vec<E>,
}

impl<E: Scalar> Batch<E> {
    pub fn from_rows(ds: &Dataset, rows: &[usize]) -> Batch<E> {
        let (m, c) = (ds.m(), ds.c());
        let mut codes = Vec::with_capacity(rows.len() * m);
        let mut cont = Vec::with_capacity(rows.len() * c);
        let mut targets = Vec::with_capacity(rows.len());
        for &r in rows {
            codes.extend_from_slice(ds.cat_row(r));
            cont.extend(ds.cont_row(r).iter().map(|&v| E::from_f64(v)));
            targets.push(E::from_f64(ds.labels[r] as f64));
        }
        Batch {
            n: rows.len(),
            codes,
            cont: Tensor::new(&[rows.len(), c], cont).unwrap(),
            targets,
        }
    }

    /// Same rows without targets.
    pub fn unlabeled(mut self) -> Batch<E> {
        self.targets.clear();
        self
    }
}

pub struct ContextualOut<E: Scalar> {
    /// `[b, m, dim]` after all attention layers.
    pub ctx: Var,
    /// Captured per-layer values when requested; `layers[0]` is the raw
    /// column embedding, `layers[j]` the output of layer `j`.
    pub layers: Vec<Tensor<E>>,
    /// `attention[j][h]` is `[b, m, m]` for layer `j`, head `h`.
    pub attention: Vec<Vec<Tensor<E>>>,
}

pub struct ForwardOut<E: Scalar> {
    /// `[b]` classification logits.
    pub logits: Var,
    pub contextual: ContextualOut<E>,
}

/// Initialize a full supervised parameter store: embeddings, layers, head.
pub fn init_params<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    seed: u64,
) -> Result<ParamStore<E>, TensorError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    init_embeddings(cfg, meta, seed, &mut store)?;
    init_layers(cfg, seed, &mut store)?;
    init_head(cfg, meta, seed, &mut store)?;
    Ok(store)
}

/// Initialize only the MLP head parameters.
pub fn init_head<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    seed: u64,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    let mut width = cfg.head_input_width(meta.m(), meta.c());
    for (i, &h) in cfg.head_hidden_for(meta.m(), meta.c()).iter().enumerate() {
        transformer::init_linear(&format!("head/l{i}/w"), width, h, seed, store)?;
        store.insert(&format!("head/l{i}/b"), Tensor::zeros(&[h]))?;
        if cfg.head_layer_norm {
            store.insert(&format!("head/l{i}/ln_g"), Tensor::full(&[h], E::ONE))?;
            store.insert(&format!("head/l{i}/ln_b"), Tensor::zeros(&[h]))?;
        }
        width = h;
    }
    transformer::init_linear("head/out/w", width, 1, seed, store)?;
    store.insert("head/out/b", Tensor::zeros(&[1]))?;
    Ok(())
}

/// Embeddings and attention stack only; no classifier head.
pub fn forward_contextual<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    codes: &[u32],
    mode: &mut Mode<'_>,
    opts: ForwardOptions,
) -> Result<ContextualOut<E>, TensorError> {
    let mut dropout_rng: Option<&mut ChaCha8Rng> = match mode {
        Mode::Train { dropout } => Some(dropout),
        Mode::Eval => None,
    };
    let mut x = embed_columns(cfg, meta, params, tape, codes, opts.policy())?;
    let mut layers = Vec::new();
    let mut attention = Vec::new();
    if opts.capture_layers {
        layers.push(tape.value(x).clone());
    }
    for j in 0..cfg.n_layers {
        let out = transformer_layer(cfg, params, tape, j, x, &mut dropout_rng)?;
        x = out.out;
        if opts.capture_layers {
            layers.push(tape.value(x).clone());
        }
        if opts.capture_attention {
            attention.push(out.attn.iter().map(|&a| tape.value(a).clone()).collect());
        }
    }
    Ok(ContextualOut { ctx: x, layers, attention })
}

/// Full forward pass to logits.
pub fn forward<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    batch: &Batch<E>,
    mode: &mut Mode<'_>,
    opts: ForwardOptions,
) -> Result<ForwardOut<E>, TensorError> {
    let contextual = forward_contextual(cfg, meta, params, tape, &batch.codes, mode, opts)?;
    let logits = head_logits(cfg, meta, params, tape, contextual.ctx, &batch.cont, mode)?;
    Ok(ForwardOut { logits, contextual })
}

/// MLP head from contextual embeddings `[b, m, dim]` (+ continuous) to `[b]`
/// logits.
pub fn head_logits<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    ctx: Var,
    cont: &Tensor<E>,
    mode: &mut Mode<'_>,
) -> Result<Var, TensorError> {
    let mut dropout_rng: Option<&mut ChaCha8Rng> = match mode {
        Mode::Train { dropout } => Some(dropout),
        Mode::Eval => None,
    };
    let shape = tape.value(ctx).shape().to_vec();
    let (b, m, d) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(ctx, &[b, m * d])?;
    let mut x = if meta.c() > 0 {
        let cont_var = tape.constant(cont.clone());
        tape.concat_last(&[flat, cont_var])?
    } else {
        flat
    };

    let var_of = |tape: &mut Tape<E>, name: &str| -> Result<Var, TensorError> {
        let ix = params.index_of(name).ok_or_else(|| TensorError::Invalid {
            op: "head_logits",
            msg: format!("missing parameter {name:?}"),
        })?;
        Ok(tape.param(ix, params.value_at(ix).clone()))
    };

    for i in 0..cfg.head_hidden_for(m, meta.c()).len() {
        let w = var_of(tape, &format!("head/l{i}/w"))?;
        let bias = var_of(tape, &format!("head/l{i}/b"))?;
        x = tape.matmul(x, w)?;
        x = tape.add_bias(x, bias)?;
        x = tape.selu(x);
        if cfg.head_layer_norm {
            let g = var_of(tape, &format!("head/l{i}/ln_g"))?;
            let bb = var_of(tape, &format!("head/l{i}/ln_b"))?;
            x = tape.layer_norm(x, g, bb, E::from_f64(cfg.ln_eps))?;
        }
        x = transformer::maybe_dropout(tape, x, cfg.dropout, &mut dropout_rng);
    }
    let w = var_of(tape, "head/out/w")?;
    let bias = var_of(tape, "head/out/b")?;
    x = tape.matmul(x, w)?;
    x = tape.add_bias(x, bias)?;
    tape.reshape(x, &[b])
}

/// Inference-only scores `sigmoid(logit)` for a set of rows, batched to keep
/// memory flat. Deterministic: no dropout, no RNG.
pub fn predict_scores<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    ds: &Dataset,
    rows: &[usize],
    batch_size: usize,
    missing_avg: bool,
) -> Result<Vec<f64>, TensorError> {
    let mut scores = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        let batch = Batch::<E>::from_rows(ds, chunk);
        scores.extend(score_table(cfg, meta, params, &batch.codes, &batch.cont, missing_avg)?);
    }
    Ok(scores)
}

/// Scores for an explicit code/continuous table (one batch). Used by
/// inference and by evaluation harnesses that perturb codes before scoring.
pub fn score_table<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    params: &ParamStore<E>,
    codes: &[u32],
    cont: &Tensor<E>,
    missing_avg: bool,
) -> Result<Vec<f64>, TensorError> {
    let batch = Batch {
        n: cont.shape()[0],
        codes: codes.to_vec(),
        cont: cont.clone(),
        targets: Vec::new(),
    };
    let mut tape = Tape::new();
    let out = forward(
        cfg,
        meta,
        params,
        &mut tape,
        &batch,
        &mut Mode::Eval,
        ForwardOptions { missing_avg, ..Default::default() },
    )?;
    let logits = tape.value(out.logits);
    debug_assert!(logits.all_finite(), "non-finite logits in inference");
    Ok(logits.iter().map(|&z| crate::tensor::sigmoid(z.to_f64())).collect())
}
