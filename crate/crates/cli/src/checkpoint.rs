//! Binary model snapshots.
//!
//! Layout (all integers little-endian, strings length-prefixed u32 UTF-8):
//!
//! ```text
//! magic    b"TABT"
//! version  u32          (currently 1)
//! phase    str          supervised | pretrain-mlm | pretrain-rtd | finetuned
//! config   str          full RunConfig TOML snapshot
//! schema   str          hex fingerprint of the schema the model was built on
//! params   u32 count, then per parameter:
//!            name str, ndim u32, dims u32…, data f32…
//! opt      u8           0 = no optimizer state (1 reserved)
//! ```
//!
//! Floats are stored as little-endian f32 regardless of host endianness, and
//! parameters keep their store order, so a load reproduces eval-mode
//! predictions bit for bit.

use std::fmt;
use std::path::Path;

use tabtrans::tensor::Tensor;
use tabtrans::ParamStore;

const MAGIC: &[u8; 4] = b"TABT";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Supervised,
    PretrainMlm,
    PretrainRtd,
    Finetuned,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Supervised => "supervised",
            Phase::PretrainMlm => "pretrain-mlm",
            Phase::PretrainRtd => "pretrain-rtd",
            Phase::Finetuned => "finetuned",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Phase> {
        match tag {
            "supervised" => Some(Phase::Supervised),
            "pretrain-mlm" => Some(Phase::PretrainMlm),
            "pretrain-rtd" => Some(Phase::PretrainRtd),
            "finetuned" => Some(Phase::Finetuned),
            _ => None,
        }
    }

    /// Whether the snapshot carries a classifier head.
    pub fn scorable(self) -> bool {
        matches!(self, Phase::Supervised | Phase::Finetuned)
    }

    pub fn is_pretrain(self) -> bool {
        matches!(self, Phase::PretrainMlm | Phase::PretrainRtd)
    }
}

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic,
    BadVersion(u32),
    Corrupt(String),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "{e}"),
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::BadVersion(v) => write!(f, "unsupported checkpoint version {v}"),
            CheckpointError::Corrupt(msg) => write!(f, "corrupt checkpoint: {msg}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

pub struct Checkpoint {
    pub phase: Phase,
    /// RunConfig TOML at save time; evaluation rebuilds the model from this.
    pub config_toml: String,
    pub fingerprint: String,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut b, self.phase.tag());
        put_str(&mut b, &self.config_toml);
        put_str(&mut b, &self.fingerprint);
        b.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, value) in self.params.iter() {
            put_str(&mut b, name);
            b.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for &dim in value.shape() {
                b.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in value.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b.push(0); // no optimizer state
        b
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let tag = r.str()?;
        let phase = Phase::from_tag(&tag)
            .ok_or_else(|| CheckpointError::Corrupt(format!("unknown phase {tag:?}")))?;
        let config_toml = r.str()?;
        let fingerprint = r.str()?;
        let n_params = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for chunk in r.take(len * 4)?.chunks_exact(4) {
                data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            let tensor = Tensor::new(&shape, data)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params
                .insert(&name, tensor)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        match r.take(1)?[0] {
            0 => {}
            1 => {
                return Err(CheckpointError::Corrupt(
                    "optimizer state present but not supported by this version".into(),
                ))
            }
            other => {
                return Err(CheckpointError::Corrupt(format!(
                    "bad optimizer-state flag {other}"
                )))
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { phase, config_toml, fingerprint, params })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt("truncated file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("non-UTF-8 string".into()))
    }
}
