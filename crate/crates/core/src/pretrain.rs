//! Unsupervised objectives over the categorical table: mask-and-reconstruct
//! (multi-class per column) and replace-and-detect (binary per cell), plus
//! the handoff that turns a pre-trained backbone into a supervised model.
//!
//! Corruption operates on code tables only — continuous features and labels
//! never pass through here, so they cannot be touched.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{init_embeddings, init_head, init_layers, ModelConfig, TableMeta};
use crate::params::ParamStore;
use crate::rng;
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

/// Objective heads start an order of magnitude below the backbone's
/// `1/sqrt(fan_in)` scale, so an untrained model predicts (near-)uniformly
/// and its starting loss sits at the chance level. Symmetry still breaks.
fn init_objective_linear<E: Scalar>(
    name: &str,
    fan_in: usize,
    fan_out: usize,
    seed: u64,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    use rand::distr::{Distribution, Uniform};
    let bound = 0.1 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let mut r = rng::stream(seed, &format!("init/{name}"));
    let w = Tensor::from_fn(&[fan_in, fan_out], |_| E::from_f64(dist.sample(&mut r)));
    store.insert(name, w)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    Rtd,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::Mlm => "mlm",
            Objective::Rtd => "rtd",
        })
    }
}

/// One corrupted cell of a row. `injected` is 0 for masking; `flag` records
/// whether the injected code actually differs from the original.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlannedCell {
    pub col: usize,
    pub original: u32,
    pub injected: u32,
    pub flag: bool,
}

/// Which cells of a code table were corrupted, and with what.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorruptionPlan {
    /// Corruption rate in percent of columns per row.
    pub k: u8,
    /// Whether the plan is redrawn every epoch or frozen at epoch 0.
    pub dynamic: bool,
    pub m: usize,
    /// `cells[r]` lists row r's corrupted cells in ascending column order.
    pub cells: Vec<Vec<PlannedCell>>,
}

impl CorruptionPlan {
    /// Cells corrupted per row: `max(1, round(k·m/100))` for k>0, else 0.
    pub fn per_row_count(k: u8, m: usize) -> usize {
        if k == 0 {
            return 0;
        }
        ((k as usize * m + 50) / 100).max(1).min(m)
    }

    pub fn rows(&self) -> usize {
        self.cells.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Restriction to `rows`, in the given order (for mini-batching a
    /// table-wide plan).
    pub fn subset(&self, rows: &[usize]) -> CorruptionPlan {
        CorruptionPlan {
            k: self.k,
            dynamic: self.dynamic,
            m: self.m,
            cells: rows.iter().map(|&r| self.cells[r].clone()).collect(),
        }
    }

    /// Replaced-flags for every cell, row-major `[rows·m]`, false where
    /// untouched.
    pub fn flags(&self) -> Vec<bool> {
        let mut out = vec![false; self.rows() * self.m];
        for (r, row) in self.cells.iter().enumerate() {
            for cell in row {
                out[r * self.m + cell.col] = cell.flag;
            }
        }
        out
    }
}

/// RNG for corruption draws. Dynamic plans get a fresh stream per epoch;
/// static plans always replay the epoch-0 stream, which is what makes them
/// bitwise identical across epochs.
pub fn corruption_stream(seed: u64, epoch: usize, dynamic: bool) -> ChaCha8Rng {
    let effective = if dynamic { epoch } else { 0 };
    rng::stream(seed, &format!("corrupt/{effective}"))
}

fn check_rate(k: u8) -> Result<(), TensorError> {
    if k > 100 {
        return Err(TensorError::Invalid {
            op: "corrupt",
            msg: format!("corruption rate {k}% outside 0..=100"),
        });
    }
    Ok(())
}

fn check_codes(codes: &[u32], meta: &TableMeta) -> Result<usize, TensorError> {
    let m = meta.m();
    if m == 0 || codes.len() % m != 0 {
        return Err(TensorError::Invalid {
            op: "corrupt",
            msg: format!("code table of {} not divisible into rows of {m}", codes.len()),
        });
    }
    Ok(codes.len() / m)
}

/// Mask `k%` of each row's categorical cells to the missing code 0,
/// recording originals. Selection is uniform without replacement per row.
pub fn mlm_corrupt(
    codes: &[u32],
    meta: &TableMeta,
    k: u8,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, CorruptionPlan), TensorError> {
    check_rate(k)?;
    let m = meta.m();
    let rows = check_codes(codes, meta)?;
    let per_row = CorruptionPlan::per_row_count(k, m);
    let mut corrupted = codes.to_vec();
    let mut cells = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(per_row);
        if per_row > 0 {
            let mut picked = rand::seq::index::sample(rng, m, per_row).into_vec();
            picked.sort_unstable();
            for col in picked {
                let original = codes[r * m + col];
                corrupted[r * m + col] = 0;
                row.push(PlannedCell { col, original, injected: 0, flag: false });
            }
        }
        cells.push(row);
    }
    Ok((corrupted, CorruptionPlan { k, dynamic: false, m, cells }))
}

/// Replace `k%` of each row's cells by a uniform draw from that column's
/// observed classes `1..=d_i`; the flag records whether the draw differed.
/// Columns with fewer than two classes are never selected (a replacement
/// could not differ there).
pub fn rtd_corrupt(
    codes: &[u32],
    meta: &TableMeta,
    k: u8,
    dynamic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u32>, CorruptionPlan), TensorError> {
    check_rate(k)?;
    let m = meta.m();
    let rows = check_codes(codes, meta)?;
    let eligible: Vec<usize> = (0..m).filter(|&i| meta.cards[i] >= 2).collect();
    if eligible.is_empty() {
        return Err(TensorError::Invalid {
            op: "rtd_corrupt",
            msg: "every column has fewer than two observed classes; nothing can be replaced"
                .into(),
        });
    }
    if eligible.len() < m {
        static DEGENERATE_WARNING: std::sync::Once = std::sync::Once::new();
        DEGENERATE_WARNING.call_once(|| {
            log::warn!(
                "{} of {m} columns have fewer than two classes and are excluded from replacement",
                m - eligible.len()
            );
        });
    }
    let per_row = CorruptionPlan::per_row_count(k, m).min(eligible.len());
    let mut corrupted = codes.to_vec();
    let mut cells = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row = Vec::with_capacity(per_row);
        if per_row > 0 {
            let mut picked: Vec<usize> = rand::seq::index::sample(rng, eligible.len(), per_row)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            picked.sort_unstable();
            for col in picked {
                let original = codes[r * m + col];
                let injected = rng.random_range(1..=meta.cards[col] as u32);
                corrupted[r * m + col] = injected;
                row.push(PlannedCell { col, original, injected, flag: injected != original });
            }
        }
        cells.push(row);
    }
    Ok((corrupted, CorruptionPlan { k, dynamic, m, cells }))
}

/// Per-column reconstruction heads `dim -> d_i`. A column's head never
/// predicts the missing class: output size is the observed cardinality.
pub fn init_mlm_heads<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    seed: u64,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    for (i, &card) in meta.cards.iter().enumerate() {
        if card == 0 {
            continue; // column was all-missing in training data; nothing to predict
        }
        init_objective_linear(&format!("pretrain/mlm/col{i}/w"), cfg.dim, card, seed, store)?;
        store.insert(&format!("pretrain/mlm/col{i}/b"), Tensor::zeros(&[card]))?;
    }
    Ok(())
}

/// Replaced-detection heads `dim -> 1`: one per column, or a single shared
/// one.
pub fn init_rtd_heads<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    seed: u64,
    shared: bool,
    store: &mut ParamStore<E>,
) -> Result<(), TensorError> {
    if shared {
        init_objective_linear("pretrain/rtd/shared/w", cfg.dim, 1, seed, store)?;
        store.insert("pretrain/rtd/shared/b", Tensor::zeros(&[1]))?;
    } else {
        for i in 0..meta.m() {
            init_objective_linear(&format!("pretrain/rtd/col{i}/w"), cfg.dim, 1, seed, store)?;
            store.insert(&format!("pretrain/rtd/col{i}/b"), Tensor::zeros(&[1]))?;
        }
    }
    Ok(())
}

/// Backbone plus objective heads; no classifier head — pre-training never
/// sees one.
pub fn init_pretrain_params<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    seed: u64,
    objective: Objective,
    shared_rtd: bool,
) -> Result<ParamStore<E>, TensorError> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    init_embeddings(cfg, meta, seed, &mut store)?;
    init_layers(cfg, seed, &mut store)?;
    match objective {
        Objective::Mlm => init_mlm_heads(cfg, meta, seed, &mut store)?,
        Objective::Rtd => init_rtd_heads(cfg, meta, seed, shared_rtd, &mut store)?,
    }
    Ok(store)
}

/// A pre-training loss plus bookkeeping for history/accuracy reporting.
pub struct ObjectiveOut {
    pub loss: Var,
    /// Cells that entered the loss.
    pub cells: usize,
    /// Cells whose prediction (argmax / sign) matched the target.
    pub correct: usize,
}

fn head_var<E: Scalar>(
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    name: &str,
) -> Result<Var, TensorError> {
    let ix = params.index_of(name).ok_or_else(|| TensorError::Invalid {
        op: "pretrain_loss",
        msg: format!("missing parameter {name:?}"),
    })?;
    Ok(tape.param(ix, params.value_at(ix).clone()))
}

/// Mean cross-entropy over masked cells, each scored by its column's head on
/// the cell's contextual embedding. Cells whose original value was genuinely
/// missing are excluded; if nothing remains the loss is a defined zero.
pub fn mlm_loss<E: Scalar>(
    meta: &TableMeta,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    ctx: Var,
    plan: &CorruptionPlan,
) -> Result<ObjectiveOut, TensorError> {
    let shape = tape.value(ctx).shape().to_vec();
    let (b, m, d) = (shape[0], shape[1], shape[2]);
    if plan.rows() != b || plan.m != m {
        return Err(TensorError::Invalid {
            op: "mlm_loss",
            msg: format!("plan is {}x{}, batch is {b}x{m}", plan.rows(), plan.m),
        });
    }
    // Masked cells per column, skipping genuinely-missing originals.
    let mut by_col: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); m];
    for (r, row) in plan.cells.iter().enumerate() {
        for cell in row {
            if cell.original != 0 {
                by_col[cell.col].0.push(r * m + cell.col);
                by_col[cell.col].1.push(cell.original as usize - 1);
            }
        }
    }
    let total: usize = by_col.iter().map(|(ix, _)| ix.len()).sum();
    if total == 0 {
        log::warn!("no reconstructable cells in batch (all masked cells were already missing)");
        return Ok(ObjectiveOut { loss: tape.constant(Tensor::scalar(E::ZERO)), cells: 0, correct: 0 });
    }

    let flat = tape.reshape(ctx, &[b * m, d])?;
    let mut loss: Option<Var> = None;
    let mut correct = 0usize;
    for (i, (indices, targets)) in by_col.into_iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        let card = meta.cards[i];
        let h = tape.gather_rows(flat, indices)?;
        let w = head_var(params, tape, &format!("pretrain/mlm/col{i}/w"))?;
        let bias = head_var(params, tape, &format!("pretrain/mlm/col{i}/b"))?;
        let z = tape.matmul(h, w)?;
        let z = tape.add_bias(z, bias)?;
        for (row, &t) in tape.value(z).data().chunks(card).zip(&targets) {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.to_f64().total_cmp(&b.1.to_f64()))
                .map(|(j, _)| j)
                .unwrap();
            correct += usize::from(argmax == t);
        }
        let n_i = targets.len();
        let ce = tape.ce_mean(z, targets)?;
        // Weight each column's mean by its cell share so the sum is the mean
        // over all scored cells.
        let scaled = tape.scale(ce, E::from_f64(n_i as f64 / total as f64));
        loss = Some(match loss {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    Ok(ObjectiveOut { loss: loss.unwrap(), cells: total, correct })
}

/// Mean binary cross-entropy of replaced-flags over every cell of the batch,
/// untouched cells included as negatives.
pub fn rtd_loss<E: Scalar>(
    meta: &TableMeta,
    params: &ParamStore<E>,
    tape: &mut Tape<E>,
    ctx: Var,
    plan: &CorruptionPlan,
    shared: bool,
) -> Result<ObjectiveOut, TensorError> {
    let shape = tape.value(ctx).shape().to_vec();
    let (b, m, d) = (shape[0], shape[1], shape[2]);
    if plan.rows() != b || plan.m != m {
        return Err(TensorError::Invalid {
            op: "rtd_loss",
            msg: format!("plan is {}x{}, batch is {b}x{m}", plan.rows(), plan.m),
        });
    }
    debug_assert_eq!(meta.m(), m);
    let flat = tape.reshape(ctx, &[b * m, d])?;
    let z = if shared {
        let w = head_var(params, tape, "pretrain/rtd/shared/w")?;
        let bias = head_var(params, tape, "pretrain/rtd/shared/b")?;
        let z = tape.matmul(flat, w)?;
        let z = tape.add_bias(z, bias)?;
        tape.reshape(z, &[b * m])?
    } else {
        let mut cols = Vec::with_capacity(m);
        for i in 0..m {
            let h = tape.gather_rows(flat, (0..b).map(|r| r * m + i).collect())?;
            let w = head_var(params, tape, &format!("pretrain/rtd/col{i}/w"))?;
            let bias = head_var(params, tape, &format!("pretrain/rtd/col{i}/b"))?;
            let zi = tape.matmul(h, w)?;
            cols.push(tape.add_bias(zi, bias)?);
        }
        let grid = tape.concat_last(&cols)?; // [b, m], cell (r, i) back in place
        tape.reshape(grid, &[b * m])?
    };
    let flags = plan.flags();
    let correct = tape
        .value(z)
        .iter()
        .zip(&flags)
        .filter(|&(&zi, &f)| (zi.to_f64() >= 0.0) == f)
        .count();
    let targets: Vec<E> = flags.iter().map(|&f| E::from_f64(f as u64 as f64)).collect();
    let loss = tape.bce_mean(z, targets)?;
    Ok(ObjectiveOut { loss, cells: b * m, correct })
}

/// Start a supervised model from a pre-trained backbone: embeddings and
/// attention layers are copied, the classifier head is freshly initialized
/// from `head_seed`, objective heads are dropped. Everything stays trainable.
pub fn finetune_init<E: Scalar>(
    cfg: &ModelConfig,
    meta: &TableMeta,
    pretrained: &ParamStore<E>,
    head_seed: u64,
) -> Result<ParamStore<E>, TensorError> {
    cfg.validate()?;
    let mut reference = ParamStore::<E>::new();
    init_embeddings(cfg, meta, 0, &mut reference)?;
    init_layers(cfg, 0, &mut reference)?;
    let mut store = ParamStore::new();
    for (name, shape_ref) in reference.iter() {
        let v = pretrained.get(name).ok_or_else(|| TensorError::Invalid {
            op: "finetune_init",
            msg: format!("pre-trained checkpoint lacks backbone parameter {name:?}"),
        })?;
        if v.shape() != shape_ref.shape() {
            return Err(TensorError::Invalid {
                op: "finetune_init",
                msg: format!(
                    "backbone parameter {name:?} is {:?} in the checkpoint but the data needs {:?}",
                    v.shape(),
                    shape_ref.shape()
                ),
            });
        }
        store.insert(name, v.clone())?;
    }
    init_head(cfg, meta, head_seed, &mut store)?;
    Ok(store)
}
