//! Job configuration: one TOML file with `data`, `model`, `train`,
//! `pretrain`, `eval`, and `output` sections. Every key has a default;
//! unknown keys are rejected rather than ignored. Command-line overrides
//! use `--section.key value` and are applied before deserialization.

use serde::{Deserialize, Serialize};

use tabtrans::data::{Rescaling, SchemaOptions};
use tabtrans::eval::{Imputation, PerturbKind, Pooling};
use tabtrans::model::{ColEmbed, ModelConfig};
use tabtrans::pretrain::Objective;
use tabtrans::train::{PretrainConfig, TrainConfig};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub pretrain: PretrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Input CSV with a header row.
    pub csv: String,
    /// Target column name.
    pub target: String,
    /// Target value mapped to class 1; empty picks the minority class.
    pub positive_label: String,
    /// Cell values treated as missing.
    pub missing_tokens: Vec<String>,
    /// Columns treated as categorical even when numeric.
    pub force_categorical: Vec<String>,
    /// Continuous rescaling: zscore | quantile | log | none.
    pub rescaling: String,
    pub split_seed: u64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Stratify the split by class.
    pub stratified: bool,
    /// Labeled training rows; 0 uses the whole training partition.
    pub p: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            csv: String::new(),
            target: String::new(),
            positive_label: String::new(),
            missing_tokens: vec![String::new(), "?".to_string()],
            force_categorical: Vec::new(),
            rescaling: "zscore".to_string(),
            split_seed: 0,
            val_frac: 0.15,
            test_frac: 0.20,
            stratified: false,
            p: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Embedding dimension d.
    pub dim: usize,
    /// Transformer layers N; 0 is the baseline MLP.
    pub n_layers: usize,
    pub n_heads: usize,
    /// concat-1/4 | concat-1/8 | add | none.
    pub col_embed: String,
    pub dropout: f64,
    /// Head hidden widths; empty derives {4l, 2l}.
    pub head_hidden: Vec<usize>,
    pub head_layer_norm: bool,
    pub ln_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: 32,
            n_layers: 6,
            n_heads: 8,
            col_embed: "concat-1/8".to_string(),
            dropout: 0.1,
            head_hidden: Vec::new(),
            head_layer_norm: false,
            ln_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// supervised | entropy | pseudo_label.
    pub method: String,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Entropy-regularization weight.
    pub lambda: f64,
    /// Pseudo-label ramp: 0 before t1, alpha_f after t2.
    pub alpha_f: f64,
    pub t1: usize,
    pub t2: usize,
    /// Pretrained checkpoint consumed by `finetune`; empty uses
    /// `<output.dir>/pretrain.tabt`.
    pub init_from: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            method: "supervised".to_string(),
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            lambda: t.lambda,
            alpha_f: t.alpha_f,
            t1: t.t1,
            t2: t.t2,
            init_from: String::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    /// mlm | rtd.
    pub objective: String,
    /// Percent of each row's cells corrupted.
    pub k: u8,
    /// Redraw replacement plans each epoch.
    pub dynamic: bool,
    /// One detection head shared across columns.
    pub shared_rtd_head: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            objective: "mlm".to_string(),
            k: 30,
            dynamic: true,
            shared_rtd_head: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Checkpoint to evaluate; empty uses `<output.dir>/checkpoint.tabt`.
    pub checkpoint: String,
    pub batch_size: usize,
    /// Layer for probe/export; unset uses the last layer.
    pub layer: Option<usize>,
    /// concat | average | max.
    pub pooling: String,
    pub include_continuous: bool,
    /// average | missing_class.
    pub imputation: String,
    /// Perturbation kinds for the robustness sweep: noise | missing.
    pub kinds: Vec<String>,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoint: String::new(),
            batch_size: 256,
            layer: None,
            pooling: "concat".to_string(),
            include_continuous: true,
            imputation: "average".to_string(),
            kinds: vec!["noise".to_string(), "missing".to_string()],
            rates: vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0],
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory all artifacts are written to.
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".to_string() }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        let col_embed = match self.model.col_embed.as_str() {
            "concat-1/4" => ColEmbed::Concat { denom: 4 },
            "concat-1/8" => ColEmbed::Concat { denom: 8 },
            "add" => ColEmbed::Add,
            "none" => ColEmbed::None,
            other => return err(format!(
                "model.col_embed {other:?} is not concat-1/4 | concat-1/8 | add | none"
            )),
        };
        let cfg = ModelConfig {
            dim: self.model.dim,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            col_embed,
            head_hidden: self.model.head_hidden.clone(),
            dropout: self.model.dropout,
            head_layer_norm: self.model.head_layer_norm,
            ln_eps: self.model.ln_eps,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            seed: self.train.seed,
            lambda: self.train.lambda,
            alpha_f: self.train.alpha_f,
            t1: self.train.t1,
            t2: self.train.t2,
        }
    }

    pub fn method(&self) -> Result<Method, ConfigError> {
        match self.train.method.as_str() {
            "supervised" => Ok(Method::Supervised),
            "entropy" => Ok(Method::Entropy),
            "pseudo_label" => Ok(Method::PseudoLabel),
            other => err(format!(
                "train.method {other:?} is not supervised | entropy | pseudo_label"
            )),
        }
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig, ConfigError> {
        let objective = match self.pretrain.objective.as_str() {
            "mlm" => Objective::Mlm,
            "rtd" => Objective::Rtd,
            other => return err(format!("pretrain.objective {other:?} is not mlm | rtd")),
        };
        if self.pretrain.k > 100 {
            return err(format!("pretrain.k {} exceeds 100 percent", self.pretrain.k));
        }
        Ok(PretrainConfig {
            objective,
            k: self.pretrain.k,
            dynamic: self.pretrain.dynamic,
            shared_rtd: self.pretrain.shared_rtd_head,
        })
    }

    pub fn schema_options(&self) -> Result<SchemaOptions, ConfigError> {
        let rescaling = match self.data.rescaling.as_str() {
            "zscore" => Rescaling::Zscore,
            "quantile" => Rescaling::Quantile,
            "log" => Rescaling::Log,
            "none" => Rescaling::None,
            other => return err(format!(
                "data.rescaling {other:?} is not zscore | quantile | log | none"
            )),
        };
        Ok(SchemaOptions {
            positive_label: if self.data.positive_label.is_empty() {
                None
            } else {
                Some(self.data.positive_label.clone())
            },
            force_categorical: self.data.force_categorical.clone(),
            rescaling,
            ..SchemaOptions::default()
        })
    }

    pub fn pooling(&self) -> Result<Pooling, ConfigError> {
        match self.eval.pooling.as_str() {
            "concat" => Ok(Pooling::Concat),
            "average" => Ok(Pooling::Average),
            "max" => Ok(Pooling::Max),
            other => err(format!("eval.pooling {other:?} is not concat | average | max")),
        }
    }

    pub fn imputation(&self) -> Result<Imputation, ConfigError> {
        match self.eval.imputation.as_str() {
            "average" => Ok(Imputation::AverageEmbedding),
            "missing_class" => Ok(Imputation::MissingClass),
            other => err(format!(
                "eval.imputation {other:?} is not average | missing_class"
            )),
        }
    }

    pub fn perturb_kinds(&self) -> Result<Vec<PerturbKind>, ConfigError> {
        self.eval
            .kinds
            .iter()
            .map(|k| match k.as_str() {
                "noise" => Ok(PerturbKind::Noise),
                "missing" => Ok(PerturbKind::Missing),
                other => err(format!("eval.kinds entry {other:?} is not noise | missing")),
            })
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Supervised,
    Entropy,
    PseudoLabel,
}

/// Load a config file (or start from defaults) and apply
/// `--section.key value` overrides.
pub fn load(path: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut table: toml::Table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("cannot read config {p}: {e}")))?;
            text.parse()
                .map_err(|e| ConfigError(format!("config {p}: {e}")))?
        }
        None => toml::Table::new(),
    };
    for (key, raw) in overrides {
        set_path(&mut table, key, parse_value(raw))?;
    }
    RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| ConfigError(e.to_string()))
}

/// A raw override value becomes whatever TOML scalar it parses as, falling
/// back to a plain string (so paths and labels need no quoting).
fn parse_value(raw: &str) -> toml::Value {
    if let Ok(t) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts = key.split('.').peekable();
    let mut current = table;
    loop {
        let part = parts.next().filter(|p| !p.is_empty()).ok_or_else(|| {
            ConfigError(format!("override key {key:?} is not section.key"))
        })?;
        if parts.peek().is_none() {
            current.insert(part.to_string(), value);
            return Ok(());
        }
        current = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override key {key:?} crosses a non-table")))?;
    }
}
