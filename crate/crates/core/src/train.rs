//! Training loops: supervised, unsupervised pre-training, fine-tuning, and
//! the two semi-supervised wrappers (entropy regularization and
//! pseudo-labeling). One thread mutates parameters; every random draw comes
//! from a purpose-labelled stream of the job seed, so a (config, seed, data)
//! triple fully determines all outputs bitwise.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::eval::{auc, EvalError};
use crate::model::{
    forward, forward_contextual, init_params, predict_scores, Batch, ForwardOptions, Mode,
    ModelConfig, TableMeta,
};
use crate::params::ParamStore;
use crate::pretrain::{
    self, corruption_stream, finetune_init, init_pretrain_params, CorruptionPlan, Objective,
};
use crate::rng;
use crate::tensor::{AdamW, AdamWConfig, Scalar, StepOutcome, Tape, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without strict validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Entropy-regularization weight on unlabeled predictions.
    pub lambda: f64,
    /// Pseudo-label ramp: 0 before `t1`, linear to `alpha_f` at `t2`.
    pub alpha_f: f64,
    pub t1: usize,
    pub t2: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            batch_size: 128,
            max_epochs: 300,
            patience: 15,
            seed: 0,
            lambda: 0.3,
            alpha_f: 3.0,
            t1: 30,
            t2: 70,
        }
    }
}

/// Pseudo-label weight at (1-based) epoch `t`.
pub fn alpha_schedule(alpha_f: f64, t1: usize, t2: usize, t: usize) -> f64 {
    if t < t1 {
        0.0
    } else if t < t2 {
        alpha_f * (t - t1) as f64 / (t2 - t1) as f64
    } else {
        alpha_f
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct PretrainConfig {
    pub objective: Objective,
    /// Percent of each row's columns corrupted.
    pub k: u8,
    /// Redraw replacement plans each epoch (vs frozen at epoch 0).
    pub dynamic: bool,
    /// One detection head for all columns instead of one per column.
    pub shared_rtd: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { objective: Objective::Mlm, k: 30, dynamic: true, shared_rtd: false }
    }
}

#[derive(Debug)]
pub enum TrainError {
    Tensor(TensorError),
    Eval(EvalError),
    EmptySplit(&'static str),
    SingleClass(&'static str),
    BadSchedule { t1: usize, t2: usize },
    BadWeight(f64),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "{e}"),
            TrainError::Eval(e) => write!(f, "{e}"),
            TrainError::EmptySplit(which) => write!(f, "{which} split is empty"),
            TrainError::SingleClass(which) => {
                write!(f, "{which} split holds a single class; AUC is undefined")
            }
            TrainError::BadSchedule { t1, t2 } => {
                write!(f, "pseudo-label ramp needs t1 < t2, got {t1} >= {t2}")
            }
            TrainError::BadWeight(l) => write!(f, "unlabeled-loss weight {l} outside [0, 1]"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<EvalError> for TrainError {
    fn from(e: EvalError) -> Self {
        TrainError::Eval(e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub lr: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History<R> {
    pub epochs: Vec<R>,
    /// 1-based epoch of the best validation metric; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl History<SupervisedEpoch> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_auc,lr,alpha\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_auc, e.lr, e.alpha
            ));
        }
        s
    }
}

impl History<PretrainEpoch> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,train_accuracy,lr\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_accuracy, e.lr
            ));
        }
        s
    }
}

/// Strict-improvement early stopping: `stale` counts epochs since the last
/// time the score exceeded the best.
struct EarlyStop {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        EarlyStop { patience, best: f64::NEG_INFINITY, best_epoch: 0, stale: 0 }
    }

    /// Returns true when `score` strictly improves on the best so far.
    fn observe(&mut self, epoch: usize, score: f64) -> bool {
        if score > self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    fn exhausted(&self) -> bool {
        self.stale >= self.patience
    }
}

pub struct TrainedModel<E: Scalar> {
    /// Snapshot at the best validation AUC.
    pub params: ParamStore<E>,
    pub best_val_auc: f64,
    pub history: History<SupervisedEpoch>,
}

pub struct PretrainedModel<E: Scalar> {
    /// Snapshot at the best validation objective loss (backbone plus
    /// objective heads).
    pub params: ParamStore<E>,
    pub best_val_loss: f64,
    pub history: History<PretrainEpoch>,
}

enum SemiMode {
    Supervised,
    EntropyReg,
    PseudoLabel,
}

/// Supervised training from a fresh initialization.
pub fn train_supervised<E: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &Dataset,
    train_rows: &[usize],
    val_rows: &[usize],
) -> Result<TrainedModel<E>, TrainError> {
    let params = init_params(mcfg, &TableMeta::of(ds), tcfg.seed)?;
    run_supervised(mcfg, tcfg, ds, train_rows, &[], val_rows, SemiMode::Supervised, params)
}

/// Supervised training warm-started from a pre-trained backbone; the
/// classifier head is freshly seeded from the job seed.
pub fn train_finetune<E: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &Dataset,
    train_rows: &[usize],
    val_rows: &[usize],
    pretrained: &ParamStore<E>,
) -> Result<TrainedModel<E>, TrainError> {
    let meta = TableMeta::of(ds);
    let params = finetune_init(mcfg, &meta, pretrained, tcfg.seed)?;
    run_supervised(mcfg, tcfg, ds, train_rows, &[], val_rows, SemiMode::Supervised, params)
}

/// Supervised loss plus `lambda` times the mean prediction entropy on
/// interleaved unlabeled batches.
pub fn train_entropy_reg<E: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &Dataset,
    labeled_rows: &[usize],
    unlabeled_rows: &[usize],
    val_rows: &[usize],
) -> Result<TrainedModel<E>, TrainError> {
    if !(0.0..=1.0).contains(&tcfg.lambda) || !tcfg.lambda.is_finite() {
        return Err(TrainError::BadWeight(tcfg.lambda));
    }
    let params = init_params(mcfg, &TableMeta::of(ds), tcfg.seed)?;
    run_supervised(
        mcfg, tcfg, ds, labeled_rows, unlabeled_rows, val_rows, SemiMode::EntropyReg, params,
    )
}

/// Supervised loss plus a ramped-in supervised loss against hard labels the
/// current model assigns to unlabeled batches (logit >= 0 reads as class 1).
pub fn train_pseudo_label<E: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &Dataset,
    labeled_rows: &[usize],
    unlabeled_rows: &[usize],
    val_rows: &[usize],
) -> Result<TrainedModel<E>, TrainError> {
    if tcfg.t1 >= tcfg.t2 {
        return Err(TrainError::BadSchedule { t1: tcfg.t1, t2: tcfg.t2 });
    }
    let params = init_params(mcfg, &TableMeta::of(ds), tcfg.seed)?;
    run_supervised(
        mcfg, tcfg, ds, labeled_rows, unlabeled_rows, val_rows, SemiMode::PseudoLabel, params,
    )
}

fn check_two_classes(ds: &Dataset, rows: &[usize], which: &'static str) -> Result<(), TrainError> {
    if rows.is_empty() {
        return Err(TrainError::EmptySplit(which));
    }
    let first = ds.labels[rows[0]];
    if rows.iter().all(|&r| ds.labels[r] == first) {
        return Err(TrainError::SingleClass(which));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_supervised<E: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    ds: &Dataset,
    labeled_rows: &[usize],
    unlabeled_rows: &[usize],
    val_rows: &[usize],
    mode: SemiMode,
    mut params: ParamStore<E>,
) -> Result<TrainedModel<E>, TrainError> {
    mcfg.validate()?;
    check_two_classes(ds, labeled_rows, "training")?;
    check_two_classes(ds, val_rows, "validation")?;
    let semisup = match mode {
        SemiMode::Supervised => false,
        SemiMode::EntropyReg | SemiMode::PseudoLabel => {
            if unlabeled_rows.is_empty() {
                log::warn!("no unlabeled rows; training degenerates to plain supervised");
            }
            !unlabeled_rows.is_empty()
        }
    };

    let meta = TableMeta::of(ds);
    let mut opt = AdamW::new(
        AdamWConfig { lr: tcfg.lr, weight_decay: tcfg.weight_decay, ..Default::default() },
        &params,
    );
    let mut stopper = EarlyStop::new(tcfg.patience);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val_auc = f64::NAN;
    let mut stop = StopReason::MaxEpochs;
    let bs = tcfg.batch_size.max(1);

    for epoch in 1..=tcfg.max_epochs {
        // The recorded weight is the one actually applied: zero whenever the
        // unlabeled term is skipped, so a degenerate run leaves the same
        // trace as plain supervised training.
        let alpha = if semisup {
            match mode {
                SemiMode::Supervised => 0.0,
                SemiMode::EntropyReg => tcfg.lambda,
                SemiMode::PseudoLabel => alpha_schedule(tcfg.alpha_f, tcfg.t1, tcfg.t2, epoch),
            }
        } else {
            0.0
        };
        // Unlabeled work only happens when its weight is nonzero, which is
        // what makes a zero weight reproduce supervised training bitwise.
        let use_unlabeled = alpha != 0.0;

        let mut order = labeled_rows.to_vec();
        rng::shuffle(&mut order, &mut rng::stream(tcfg.seed, &format!("batch/{epoch}")));
        let mut dropout = rng::stream(tcfg.seed, &format!("dropout/{epoch}"));

        let unlabeled_order = if use_unlabeled {
            let mut u = unlabeled_rows.to_vec();
            rng::shuffle(&mut u, &mut rng::stream(tcfg.seed, &format!("batch-unlabeled/{epoch}")));
            u
        } else {
            Vec::new()
        };
        let unlabeled_chunks: Vec<&[usize]> = unlabeled_order.chunks(bs).collect();
        let mut unlabeled_dropout =
            rng::stream(tcfg.seed, &format!("dropout-unlabeled/{epoch}"));

        let mut loss_sum = 0.0f64;
        let mut n_seen = 0usize;
        for (bix, chunk) in order.chunks(bs).enumerate() {
            let batch = Batch::<E>::from_rows(ds, chunk);
            let mut tape = Tape::new();
            let out = forward(
                mcfg,
                &meta,
                &params,
                &mut tape,
                &batch,
                &mut Mode::Train { dropout: &mut dropout },
                ForwardOptions::default(),
            )?;
            let mut loss = tape.bce_mean(out.logits, batch.targets.clone())?;

            if use_unlabeled {
                let uchunk = unlabeled_chunks[bix % unlabeled_chunks.len()];
                let ubatch = Batch::<E>::from_rows(ds, uchunk).unlabeled();
                match mode {
                    SemiMode::EntropyReg => {
                        let uout = forward(
                            mcfg,
                            &meta,
                            &params,
                            &mut tape,
                            &ubatch,
                            &mut Mode::Train { dropout: &mut unlabeled_dropout },
                            ForwardOptions::default(),
                        )?;
                        let ent = tape.entropy_mean(uout.logits)?;
                        let scaled = tape.scale(ent, E::from_f64(alpha));
                        loss = tape.add(loss, scaled)?;
                    }
                    SemiMode::PseudoLabel => {
                        // Labels come from a deterministic inference pass on
                        // the current weights; the gradient pass then runs in
                        // training mode against those hard labels.
                        let mut label_tape = Tape::new();
                        let label_out = forward(
                            mcfg,
                            &meta,
                            &params,
                            &mut label_tape,
                            &ubatch,
                            &mut Mode::Eval,
                            ForwardOptions::default(),
                        )?;
                        let pseudo: Vec<E> = label_tape
                            .value(label_out.logits)
                            .iter()
                            .map(|&z| if z.to_f64() >= 0.0 { E::ONE } else { E::ZERO })
                            .collect();
                        let uout = forward(
                            mcfg,
                            &meta,
                            &params,
                            &mut tape,
                            &ubatch,
                            &mut Mode::Train { dropout: &mut unlabeled_dropout },
                            ForwardOptions::default(),
                        )?;
                        let ubce = tape.bce_mean(uout.logits, pseudo)?;
                        let scaled = tape.scale(ubce, E::from_f64(alpha));
                        loss = tape.add(loss, scaled)?;
                    }
                    SemiMode::Supervised => unreachable!(),
                }
            }

            loss_sum += tape.value(loss).item().to_f64() * chunk.len() as f64;
            n_seen += chunk.len();
            let grads = tape.backward(loss)?;
            if opt.step(&mut params, &grads) == StepOutcome::RejectedNonFinite {
                log::warn!("epoch {epoch}: skipped an update with non-finite gradients");
            }
        }

        let scores = predict_scores(mcfg, &meta, &params, ds, val_rows, bs, false)?;
        let labels: Vec<u8> = val_rows.iter().map(|&r| ds.labels[r]).collect();
        let val_auc = auc(&scores, &labels)?;
        history.push(SupervisedEpoch {
            epoch,
            train_loss: loss_sum / n_seen as f64,
            val_auc,
            lr: tcfg.lr,
            alpha,
        });
        if stopper.observe(epoch, val_auc) {
            best_params = params.clone();
            best_val_auc = val_auc;
        }
        if stopper.exhausted() {
            stop = StopReason::Patience;
            break;
        }
    }

    Ok(TrainedModel {
        params: best_params,
        best_val_auc,
        history: History { epochs: history, best_epoch: stopper.best_epoch, stop },
    })
}

/// Pre-train a backbone on unlabeled rows. A tenth of the rows (at least
/// one) is held out and scored each epoch under a frozen corruption plan;
/// early stopping and the returned snapshot follow that validation loss.
pub fn train_pretrain<E: Scalar>(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    pcfg: &PretrainConfig,
    ds: &Dataset,
    rows: &[usize],
) -> Result<PretrainedModel<E>, TrainError> {
    mcfg.validate()?;
    if rows.len() < 2 {
        return Err(TrainError::EmptySplit("unlabeled"));
    }
    let meta = TableMeta::of(ds);
    let mut pool = rows.to_vec();
    rng::shuffle(&mut pool, &mut rng::stream(tcfg.seed, "pretrain-split"));
    let n_val = (pool.len() / 10).max(1);
    let val_rows = pool.split_off(pool.len() - n_val);
    let train_rows = pool;

    let table = |rows: &[usize]| {
        let mut codes = Vec::with_capacity(rows.len() * meta.m());
        for &r in rows {
            codes.extend_from_slice(ds.cat_row(r));
        }
        codes
    };
    let train_codes = table(&train_rows);
    let val_codes = table(&val_rows);

    // Frozen validation corruption: comparable loss across epochs.
    let mut val_rng = rng::stream(tcfg.seed, "corrupt-val");
    let (val_corrupted, val_plan) = match pcfg.objective {
        Objective::Mlm => pretrain::mlm_corrupt(&val_codes, &meta, pcfg.k, &mut val_rng)?,
        Objective::Rtd => {
            pretrain::rtd_corrupt(&val_codes, &meta, pcfg.k, pcfg.dynamic, &mut val_rng)?
        }
    };

    let mut params =
        init_pretrain_params(mcfg, &meta, tcfg.seed, pcfg.objective, pcfg.shared_rtd)?;
    let mut opt = AdamW::new(
        AdamWConfig { lr: tcfg.lr, weight_decay: tcfg.weight_decay, ..Default::default() },
        &params,
    );
    let mut stopper = EarlyStop::new(tcfg.patience);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val_loss = f64::NAN;
    let mut stop = StopReason::MaxEpochs;
    let bs = tcfg.batch_size.max(1);

    let objective_loss = |params: &ParamStore<E>,
                          tape: &mut Tape<E>,
                          codes: &[u32],
                          plan: &CorruptionPlan,
                          mode: &mut Mode<'_>|
     -> Result<pretrain::ObjectiveOut, TrainError> {
        let ctx = forward_contextual(
            mcfg,
            &meta,
            params,
            tape,
            codes,
            mode,
            ForwardOptions::default(),
        )?;
        let out = match pcfg.objective {
            Objective::Mlm => pretrain::mlm_loss(&meta, params, tape, ctx.ctx, plan)?,
            Objective::Rtd => {
                pretrain::rtd_loss(&meta, params, tape, ctx.ctx, plan, pcfg.shared_rtd)?
            }
        };
        Ok(out)
    };

    for epoch in 1..=tcfg.max_epochs {
        // Mask plans are fresh every epoch; replacement plans only when
        // dynamic.
        let dynamic_stream = pcfg.objective == Objective::Mlm || pcfg.dynamic;
        let mut crng = corruption_stream(tcfg.seed, epoch, dynamic_stream);
        let (corrupted, plan) = match pcfg.objective {
            Objective::Mlm => pretrain::mlm_corrupt(&train_codes, &meta, pcfg.k, &mut crng)?,
            Objective::Rtd => {
                pretrain::rtd_corrupt(&train_codes, &meta, pcfg.k, pcfg.dynamic, &mut crng)?
            }
        };

        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        rng::shuffle(&mut order, &mut rng::stream(tcfg.seed, &format!("batch/{epoch}")));
        let mut dropout = rng::stream(tcfg.seed, &format!("dropout/{epoch}"));

        let m = meta.m();
        let mut loss_sum = 0.0f64;
        let mut cells = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(bs) {
            let mut codes = Vec::with_capacity(chunk.len() * m);
            for &r in chunk {
                codes.extend_from_slice(&corrupted[r * m..(r + 1) * m]);
            }
            let sub_plan = plan.subset(chunk);
            let mut tape = Tape::new();
            let out = objective_loss(
                &params,
                &mut tape,
                &codes,
                &sub_plan,
                &mut Mode::Train { dropout: &mut dropout },
            )?;
            loss_sum += tape.value(out.loss).item().to_f64() * out.cells as f64;
            cells += out.cells;
            correct += out.correct;
            let grads = tape.backward(out.loss)?;
            if opt.step(&mut params, &grads) == StepOutcome::RejectedNonFinite {
                log::warn!("epoch {epoch}: skipped an update with non-finite gradients");
            }
        }

        let mut val_loss_sum = 0.0f64;
        let mut val_cells = 0usize;
        for chunk_start in (0..val_rows.len()).step_by(bs) {
            let chunk: Vec<usize> = (chunk_start..(chunk_start + bs).min(val_rows.len())).collect();
            let mut codes = Vec::with_capacity(chunk.len() * m);
            for &r in &chunk {
                codes.extend_from_slice(&val_corrupted[r * m..(r + 1) * m]);
            }
            let sub_plan = val_plan.subset(&chunk);
            let mut tape = Tape::new();
            let out = objective_loss(&params, &mut tape, &codes, &sub_plan, &mut Mode::Eval)?;
            val_loss_sum += tape.value(out.loss).item().to_f64() * out.cells.max(1) as f64;
            val_cells += out.cells.max(1);
        }
        let val_loss = val_loss_sum / val_cells as f64;

        history.push(PretrainEpoch {
            epoch,
            train_loss: if cells > 0 { loss_sum / cells as f64 } else { 0.0 },
            val_loss,
            train_accuracy: if cells > 0 { correct as f64 / cells as f64 } else { 0.0 },
            lr: tcfg.lr,
        });
        if stopper.observe(epoch, -val_loss) {
            best_params = params.clone();
            best_val_loss = val_loss;
        }
        if stopper.exhausted() {
            stop = StopReason::Patience;
            break;
        }
    }

    Ok(PretrainedModel {
        params: best_params,
        best_val_loss,
        history: History { epochs: history, best_epoch: stopper.best_epoch, stop },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_ramp_hits_documented_values() {
        assert_eq!(alpha_schedule(3.0, 30, 70, 1), 0.0);
        assert_eq!(alpha_schedule(3.0, 30, 70, 29), 0.0);
        assert_eq!(alpha_schedule(3.0, 30, 70, 30), 0.0);
        assert_eq!(alpha_schedule(3.0, 30, 70, 50), 1.5);
        assert_eq!(alpha_schedule(3.0, 30, 70, 70), 3.0);
        assert_eq!(alpha_schedule(3.0, 30, 70, 200), 3.0);
    }

    #[test]
    fn early_stop_waits_out_patience_and_keeps_best() {
        // scores: improve at 1 and 2, then flat for 15 epochs → stop at 17
        let mut s = EarlyStop::new(15);
        assert!(s.observe(1, 0.70));
        assert!(s.observe(2, 0.71));
        for epoch in 3..=16 {
            assert!(!s.observe(epoch, 0.71)); // ties are not improvements
            assert!(!s.exhausted());
        }
        assert!(!s.observe(17, 0.65));
        assert!(s.exhausted());
        assert_eq!(s.best_epoch, 2);
        assert_eq!(s.best, 0.71);
    }

    #[test]
    fn history_csv_shapes() {
        let h = History {
            epochs: vec![SupervisedEpoch {
                epoch: 1,
                train_loss: 0.5,
                val_auc: 0.75,
                lr: 0.001,
                alpha: 0.0,
            }],
            best_epoch: 1,
            stop: StopReason::MaxEpochs,
        };
        assert_eq!(h.to_csv(), "epoch,train_loss,val_auc,lr,alpha\n1,0.5,0.75,0.001,0\n");
        let p = History {
            epochs: vec![PretrainEpoch {
                epoch: 2,
                train_loss: 1.2,
                val_loss: 1.3,
                train_accuracy: 0.5,
                lr: 0.001,
            }],
            best_epoch: 2,
            stop: StopReason::Patience,
        };
        assert_eq!(
            p.to_csv(),
            "epoch,train_loss,val_loss,train_accuracy,lr\n2,1.2,1.3,0.5,0.001\n"
        );
    }
}
