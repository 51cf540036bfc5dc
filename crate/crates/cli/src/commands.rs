//! The eight job commands. Each reads a [`RunConfig`], works out of one
//! output directory, and leaves deterministic artifacts: given the same
//! config, seed, and input bytes, every output file is byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use tabtrans::data::{
    encode, fit_schema, semisup_split, split_indices, stratified_split_indices, DataError,
    Dataset, RawTable, Schema, Split,
};
use tabtrans::eval::{
    auc, export_embeddings, linear_probe, perturb_eval, EvalError, PerturbKind, PerturbSpec,
    ProbeSpec,
};
use tabtrans::model::{predict_scores, ModelConfig, TableMeta};
use tabtrans::pretrain::Objective;
use tabtrans::train::{
    train_entropy_reg, train_finetune, train_pretrain, train_pseudo_label, train_supervised,
    TrainError,
};
use tabtrans::ParamStore;

use crate::checkpoint::{Checkpoint, Phase};
use crate::config::{ConfigError, Method, RunConfig};

pub const SCHEMA_FILE: &str = "schema.json";
pub const SPLIT_FILE: &str = "split.csv";
pub const ENCODED_FILE: &str = "encoded.bin";
pub const CHECKPOINT_FILE: &str = "checkpoint.tabt";
pub const PRETRAIN_FILE: &str = "pretrain.tabt";

/// Command failure with the documented exit code: 2 config, 3 data,
/// 4 training, 5 evaluation.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Train(String),
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Train(_) => 4,
            CliError::Eval(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Train(m) => write!(f, "training error: {m}"),
            CliError::Eval(m) => write!(f, "evaluation error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e.to_string())
    }
}

fn artifact(cfg: &RunConfig, name: &str) -> PathBuf {
    Path::new(&cfg.output.dir).join(name)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("artifact paths are UTF-8")
}

fn write_file(path: &Path, bytes: &[u8], kind: &str) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {kind} {}: {e}", path.display())))
}

/// Fit the schema on training rows only, encode everything, and write the
/// three prepared artifacts. Rerunning with identical inputs rewrites
/// identical bytes.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.data.csv.is_empty() {
        return Err(CliError::Config("data.csv is not set".into()));
    }
    if cfg.data.target.is_empty() {
        return Err(CliError::Config("data.target is not set".into()));
    }
    let opts = cfg.schema_options()?;
    let table = tabtrans::data::load_csv(&cfg.data.csv, &cfg.data.missing_tokens)?;

    let split = if cfg.data.stratified {
        let labels = raw_binary_labels(&table, &cfg.data.target)?;
        stratified_split_indices(&labels, cfg.data.split_seed, cfg.data.val_frac, cfg.data.test_frac)?
    } else {
        split_indices(table.n_rows(), cfg.data.split_seed, cfg.data.val_frac, cfg.data.test_frac)?
    };
    if cfg.data.p > split.train.len() {
        return Err(CliError::Config(format!(
            "data.p = {} exceeds the {} training rows",
            cfg.data.p,
            split.train.len()
        )));
    }

    let schema = fit_schema(&table, &cfg.data.target, &split.train, &opts)?;
    let ds = encode(&table, &schema)?;

    std::fs::create_dir_all(&cfg.output.dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", cfg.output.dir)))?;
    schema.to_file(path_str(&artifact(cfg, SCHEMA_FILE)))?;
    split.save(path_str(&artifact(cfg, SPLIT_FILE)))?;
    write_file(&artifact(cfg, ENCODED_FILE), &encode_cache(&ds, &schema), "encoded cache")?;

    println!(
        "prepared {} rows: {} categorical + {} continuous columns, {} train / {} val / {} test",
        ds.n,
        ds.m(),
        ds.c(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    Ok(())
}

/// Class identities straight from the raw target column, for stratification
/// before any schema exists.
fn raw_binary_labels(table: &RawTable, target: &str) -> Result<Vec<u8>, CliError> {
    let ix = table
        .column_index(target)
        .ok_or_else(|| CliError::Data(format!("target column {target:?} not found")))?;
    let mut classes: Vec<&str> = Vec::new();
    let mut labels = Vec::with_capacity(table.n_rows());
    for (row, cells) in table.rows.iter().enumerate() {
        let v = cells[ix]
            .as_deref()
            .ok_or_else(|| CliError::Data(format!("row {}: missing target value", row + 1)))?;
        let class = match classes.iter().position(|&c| c == v) {
            Some(i) => i,
            None => {
                classes.push(v);
                if classes.len() > 2 {
                    return Err(CliError::Data(format!(
                        "target {target:?} has more than two values: {classes:?}"
                    )));
                }
                classes.len() - 1
            }
        };
        labels.push(class as u8);
    }
    Ok(labels)
}

// Encoded-dataset cache: magic "TABE", version, schema fingerprint, then the
// raw arrays. Strictly little-endian so prepared artifacts are portable.
fn encode_cache(ds: &Dataset, schema: &Schema) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"TABE");
    b.extend_from_slice(&1u32.to_le_bytes());
    let fp = schema.fingerprint();
    b.extend_from_slice(&(fp.len() as u32).to_le_bytes());
    b.extend_from_slice(fp.as_bytes());
    for dim in [ds.n, ds.m(), ds.c()] {
        b.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    b.extend_from_slice(&ds.labels);
    for &c in &ds.cat {
        b.extend_from_slice(&c.to_le_bytes());
    }
    for &v in &ds.cont {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn decode_cache(bytes: &[u8], schema: Arc<Schema>) -> Result<Dataset, String> {
    let need = |pos: usize, n: usize| -> Result<&[u8], String> {
        bytes.get(pos..pos + n).ok_or_else(|| "truncated".to_string())
    };
    let u32_at = |pos: usize| -> Result<u32, String> {
        Ok(u32::from_le_bytes(need(pos, 4)?.try_into().unwrap()))
    };
    if need(0, 4)? != b"TABE" {
        return Err("bad magic".into());
    }
    if u32_at(4)? != 1 {
        return Err(format!("unsupported version {}", u32_at(4)?));
    }
    let fp_len = u32_at(8)? as usize;
    let fp = std::str::from_utf8(need(12, fp_len)?).map_err(|_| "bad fingerprint")?;
    if fp != schema.fingerprint() {
        return Err("schema fingerprint mismatch; rerun prepare".into());
    }
    let mut pos = 12 + fp_len;
    let n = u32_at(pos)? as usize;
    let m = u32_at(pos + 4)? as usize;
    let c = u32_at(pos + 8)? as usize;
    pos += 12;
    if m != schema.cat_columns().count() || c != schema.cont_columns().count() {
        return Err("column counts disagree with schema".into());
    }
    let labels = need(pos, n)?.to_vec();
    pos += n;
    let cat: Vec<u32> = need(pos, n * m * 4)?
        .chunks_exact(4)
        .map(|ch| u32::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    pos += n * m * 4;
    let cont: Vec<f64> = need(pos, n * c * 8)?
        .chunks_exact(8)
        .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
        .collect();
    pos += n * c * 8;
    if pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - pos));
    }
    Ok(Dataset { schema, n, cat, cont, labels })
}

struct Prepared {
    schema: Arc<Schema>,
    ds: Dataset,
    split: Split,
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let schema_path = artifact(cfg, SCHEMA_FILE);
    let schema = Arc::new(Schema::from_file(path_str(&schema_path)).map_err(|e| {
        CliError::Data(format!("{e} (run `tabtrans prepare` first)"))
    })?);
    let split = Split::load(path_str(&artifact(cfg, SPLIT_FILE)))?;
    let enc_path = artifact(cfg, ENCODED_FILE);
    let bytes = std::fs::read(&enc_path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", enc_path.display())))?;
    let ds = decode_cache(&bytes, Arc::clone(&schema))
        .map_err(|e| CliError::Data(format!("{}: {e}", enc_path.display())))?;
    let max = split.train.iter().chain(&split.val).chain(&split.test).max().copied();
    if max.is_some_and(|mx| mx >= ds.n) {
        return Err(CliError::Data("split indices exceed the encoded table".into()));
    }
    Ok(Prepared { schema, ds, split })
}

/// First `p` training rows keep labels; the rest form the unlabeled pool.
fn labeled_pool(cfg: &RunConfig, split: &Split) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    if cfg.data.p == 0 {
        return Ok((split.train.clone(), Vec::new()));
    }
    if cfg.data.p > split.train.len() {
        return Err(CliError::Config(format!(
            "data.p = {} exceeds the {} training rows",
            cfg.data.p,
            split.train.len()
        )));
    }
    Ok(semisup_split(split, cfg.data.p)?)
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    config: &'a RunConfig,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot hash {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let hash_all = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>, CliError> {
        paths
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect()
    };
    let manifest = Manifest {
        command,
        seed: cfg.train.seed,
        inputs: hash_all(inputs)?,
        outputs: hash_all(outputs)?,
        config: cfg,
    };
    let text = toml::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(
        &artifact(cfg, &format!("manifest-{command}.toml")),
        text.as_bytes(),
        "manifest",
    )
}

fn prepared_inputs(cfg: &RunConfig) -> Vec<PathBuf> {
    vec![
        artifact(cfg, SCHEMA_FILE),
        artifact(cfg, SPLIT_FILE),
        artifact(cfg, ENCODED_FILE),
    ]
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let prep = load_prepared(cfg)?;
    let mcfg = cfg.model_config()?;
    let tcfg = cfg.train_config();
    let method = cfg.method()?;
    let (labeled, unlabeled) = labeled_pool(cfg, &prep.split)?;

    let model = match method {
        Method::Supervised => {
            train_supervised::<f32>(&mcfg, &tcfg, &prep.ds, &labeled, &prep.split.val)?
        }
        Method::Entropy => train_entropy_reg::<f32>(
            &mcfg, &tcfg, &prep.ds, &labeled, &unlabeled, &prep.split.val,
        )?,
        Method::PseudoLabel => train_pseudo_label::<f32>(
            &mcfg, &tcfg, &prep.ds, &labeled, &unlabeled, &prep.split.val,
        )?,
    };

    let ck = Checkpoint {
        phase: Phase::Supervised,
        config_toml: cfg.to_toml(),
        fingerprint: prep.schema.fingerprint(),
        params: model.params,
    };
    let ck_path = artifact(cfg, CHECKPOINT_FILE);
    ck.save(&ck_path).map_err(|e| CliError::Train(e.to_string()))?;
    let hist_path = artifact(cfg, "history.csv");
    write_file(&hist_path, model.history.to_csv().as_bytes(), "history")?;
    write_manifest(cfg, "train", &prepared_inputs(cfg), &[ck_path, hist_path])?;

    println!(
        "trained {} epochs, best validation AUC {:.4} at epoch {}",
        model.history.epochs.len(),
        model.best_val_auc,
        model.history.best_epoch
    );
    Ok(())
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let prep = load_prepared(cfg)?;
    let mcfg = cfg.model_config()?;
    let tcfg = cfg.train_config();
    let pcfg = cfg.pretrain_config()?;

    // Labels are never read here; the whole training partition is fair game.
    let model = train_pretrain::<f32>(&mcfg, &tcfg, &pcfg, &prep.ds, &prep.split.train)?;

    let phase = match pcfg.objective {
        Objective::Mlm => Phase::PretrainMlm,
        Objective::Rtd => Phase::PretrainRtd,
    };
    let ck = Checkpoint {
        phase,
        config_toml: cfg.to_toml(),
        fingerprint: prep.schema.fingerprint(),
        params: model.params,
    };
    let ck_path = artifact(cfg, PRETRAIN_FILE);
    ck.save(&ck_path).map_err(|e| CliError::Train(e.to_string()))?;
    let hist_path = artifact(cfg, "pretrain_history.csv");
    write_file(&hist_path, model.history.to_csv().as_bytes(), "history")?;
    write_manifest(cfg, "pretrain", &prepared_inputs(cfg), &[ck_path, hist_path])?;

    println!(
        "pre-trained ({}) {} epochs, best validation loss {:.4}",
        phase.tag(),
        model.history.epochs.len(),
        model.best_val_loss
    );
    Ok(())
}

pub fn cmd_finetune(cfg: &RunConfig) -> Result<(), CliError> {
    let prep = load_prepared(cfg)?;
    let mcfg = cfg.model_config()?;
    let tcfg = cfg.train_config();
    let (labeled, _) = labeled_pool(cfg, &prep.split)?;

    let init_path = if cfg.train.init_from.is_empty() {
        artifact(cfg, PRETRAIN_FILE)
    } else {
        PathBuf::from(&cfg.train.init_from)
    };
    let pre = Checkpoint::load(&init_path)
        .map_err(|e| CliError::Train(format!("{}: {e}", init_path.display())))?;
    if !pre.phase.is_pretrain() {
        return Err(CliError::Train(format!(
            "{} holds a {} checkpoint, not a pre-trained backbone",
            init_path.display(),
            pre.phase.tag()
        )));
    }
    check_fingerprint(&pre, &prep.schema).map_err(CliError::Train)?;

    let model = train_finetune::<f32>(&mcfg, &tcfg, &prep.ds, &labeled, &prep.split.val, &pre.params)?;

    let ck = Checkpoint {
        phase: Phase::Finetuned,
        config_toml: cfg.to_toml(),
        fingerprint: prep.schema.fingerprint(),
        params: model.params,
    };
    let ck_path = artifact(cfg, CHECKPOINT_FILE);
    ck.save(&ck_path).map_err(|e| CliError::Train(e.to_string()))?;
    let hist_path = artifact(cfg, "history.csv");
    write_file(&hist_path, model.history.to_csv().as_bytes(), "history")?;
    let mut inputs = prepared_inputs(cfg);
    inputs.push(init_path);
    write_manifest(cfg, "finetune", &inputs, &[ck_path, hist_path])?;

    println!(
        "fine-tuned {} epochs, best validation AUC {:.4} at epoch {}",
        model.history.epochs.len(),
        model.best_val_auc,
        model.history.best_epoch
    );
    Ok(())
}

fn check_fingerprint(ck: &Checkpoint, schema: &Schema) -> Result<(), String> {
    let current = schema.fingerprint();
    if ck.fingerprint != current {
        return Err(format!(
            "checkpoint was built on schema {} but the prepared schema is {}; refusing to \
             reinterpret vocabularies",
            &ck.fingerprint[..12.min(ck.fingerprint.len())],
            &current[..12]
        ));
    }
    Ok(())
}

/// Everything an evaluation command needs: the prepared data plus the model
/// reconstructed from the checkpoint's own config snapshot.
struct Loaded {
    prep: Prepared,
    mcfg: ModelConfig,
    meta: TableMeta,
    params: ParamStore<f32>,
    missing_avg: bool,
}

fn load_for_eval(cfg: &RunConfig, need_head: bool) -> Result<Loaded, CliError> {
    let prep = load_prepared(cfg).map_err(|e| match e {
        CliError::Data(m) => CliError::Eval(m),
        other => other,
    })?;
    let ck_path = if cfg.eval.checkpoint.is_empty() {
        artifact(cfg, CHECKPOINT_FILE)
    } else {
        PathBuf::from(&cfg.eval.checkpoint)
    };
    let ck = Checkpoint::load(&ck_path)
        .map_err(|e| CliError::Eval(format!("{}: {e}", ck_path.display())))?;
    check_fingerprint(&ck, &prep.schema).map_err(CliError::Eval)?;
    if need_head && !ck.phase.scorable() {
        return Err(CliError::Eval(format!(
            "{} checkpoint carries no classifier head; train or finetune first",
            ck.phase.tag()
        )));
    }
    // The snapshot, not the live config, defines the architecture.
    let snapshot: RunConfig = toml::from_str(&ck.config_toml)
        .map_err(|e| CliError::Eval(format!("checkpoint config snapshot: {e}")))?;
    let mcfg = snapshot
        .model_config()
        .map_err(|e| CliError::Eval(e.to_string()))?;
    let meta = TableMeta::of(&prep.ds);
    let missing_avg = cfg.imputation()? == tabtrans::eval::Imputation::AverageEmbedding;
    Ok(Loaded { prep, mcfg, meta, params: ck.params, missing_avg })
}

fn partition_auc(l: &Loaded, rows: &[usize], batch: usize) -> Result<f64, CliError> {
    let scores = predict_scores(&l.mcfg, &l.meta, &l.params, &l.prep.ds, rows, batch, l.missing_avg)
        .map_err(|e| CliError::Eval(e.to_string()))?;
    let labels: Vec<u8> = rows.iter().map(|&r| l.prep.ds.labels[r]).collect();
    Ok(auc(&scores, &labels)?)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let l = load_for_eval(cfg, true)?;
    let batch = cfg.eval.batch_size;
    let val = partition_auc(&l, &l.prep.split.val, batch)?;
    let test = partition_auc(&l, &l.prep.split.test, batch)?;
    let report = format!(
        "partition,rows,auc\nval,{},{}\ntest,{},{}\n",
        l.prep.split.val.len(),
        val,
        l.prep.split.test.len(),
        test
    );
    write_file(&artifact(cfg, "eval.csv"), report.as_bytes(), "report")?;
    println!("val AUC {val:.4}, test AUC {test:.4}");
    Ok(())
}

pub fn cmd_probe(cfg: &RunConfig) -> Result<(), CliError> {
    let l = load_for_eval(cfg, true)?;
    let pooling = cfg.pooling()?;
    let batch = cfg.eval.batch_size;
    let reference = partition_auc(&l, &l.prep.split.test, batch)?;
    let mut report = String::from("layer,pooling,auc,normalized_auc\n");
    for layer in 0..=l.mcfg.n_layers {
        let spec = ProbeSpec {
            layer,
            pooling,
            include_continuous: cfg.eval.include_continuous,
        };
        let probe = linear_probe(
            &l.mcfg,
            &l.meta,
            &l.params,
            &l.prep.ds,
            &l.prep.split.train,
            &l.prep.split.test,
            &spec,
            reference,
            batch,
            l.missing_avg,
        )?;
        report.push_str(&format!(
            "{layer},{},{},{}\n",
            cfg.eval.pooling, probe.auc, probe.normalized
        ));
    }
    write_file(&artifact(cfg, "probe.csv"), report.as_bytes(), "report")?;
    println!("probed layers 0..={} against test AUC {reference:.4}", l.mcfg.n_layers);
    Ok(())
}

pub fn cmd_robustness(cfg: &RunConfig) -> Result<(), CliError> {
    let l = load_for_eval(cfg, true)?;
    let kinds = cfg.perturb_kinds()?;
    let imputation = cfg.imputation()?;
    let batch = cfg.eval.batch_size;
    let mut report =
        String::from("kind,rate,imputation,clean_auc,mean_auc,min_auc,max_auc,normalized_auc\n");
    for &kind in &kinds {
        let kind_name = match kind {
            PerturbKind::Noise => "noise",
            PerturbKind::Missing => "missing",
        };
        for &rate in &cfg.eval.rates {
            let spec = PerturbSpec { kind, rate, imputation, seeds: cfg.eval.seeds.clone() };
            let out =
                perturb_eval(&l.mcfg, &l.meta, &l.params, &l.prep.ds, &l.prep.split.test, &spec, batch)?;
            report.push_str(&format!(
                "{kind_name},{rate},{},{},{},{},{},{}\n",
                cfg.eval.imputation,
                out.clean_auc,
                out.mean_auc,
                out.min_auc,
                out.max_auc,
                out.normalized
            ));
        }
    }
    write_file(&artifact(cfg, "robustness.csv"), report.as_bytes(), "report")?;
    println!("swept {} kinds x {} rates on the test split", kinds.len(), cfg.eval.rates.len());
    Ok(())
}

pub fn cmd_export(cfg: &RunConfig) -> Result<(), CliError> {
    let l = load_for_eval(cfg, false)?;
    let layer = cfg.eval.layer.unwrap_or(l.mcfg.n_layers);
    let path = artifact(cfg, "embeddings.csv");
    let file = std::fs::File::create(&path)
        .map_err(|e| CliError::Eval(format!("cannot write {}: {e}", path.display())))?;
    export_embeddings(
        &l.mcfg,
        &l.meta,
        &l.params,
        &l.prep.ds,
        &l.prep.split.test,
        layer,
        cfg.eval.batch_size,
        l.missing_avg,
        file,
    )?;
    println!(
        "exported layer-{layer} embeddings for {} test rows",
        l.prep.split.test.len()
    );
    Ok(())
}
