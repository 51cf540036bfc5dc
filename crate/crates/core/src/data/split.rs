//! Deterministic train/validation/test splits.
//!
//! Row indices are shuffled once per seed; validation and test sizes are
//! floored fractions and training keeps the remainder *in shuffled order*,
//! so "the first p training rows" is well defined and reproducible.

use rand::seq::SliceRandom;

use super::DataError;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn save(&self, path: &str) -> Result<(), DataError> {
        let mut out = String::from("row_index,partition\n");
        for (rows, part) in
            [(&self.train, "train"), (&self.val, "val"), (&self.test, "test")]
        {
            for &r in rows.iter() {
                out.push_str(&format!("{r},{part}\n"));
            }
        }
        std::fs::write(path, out)
            .map_err(|e| DataError::Io { path: path.to_string(), err: e.to_string() })
    }

    pub fn load(path: &str) -> Result<Split, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::Io { path: path.to_string(), err: e.to_string() })?;
        let mut split = Split { train: vec![], val: vec![], test: vec![] };
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line.trim() != "row_index,partition" {
                    return Err(DataError::BadSplit { msg: format!("bad header {line:?}") });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (ix, part) = line.split_once(',').ok_or_else(|| DataError::BadSplit {
                msg: format!("line {}: expected two fields", i + 1),
            })?;
            let ix: usize = ix.trim().parse().map_err(|_| DataError::BadSplit {
                msg: format!("line {}: bad row index {ix:?}", i + 1),
            })?;
            match part.trim() {
                "train" => split.train.push(ix),
                "val" => split.val.push(ix),
                "test" => split.test.push(ix),
                other => {
                    return Err(DataError::BadSplit {
                        msg: format!("line {}: unknown partition {other:?}", i + 1),
                    })
                }
            }
        }
        if split.train.is_empty() {
            return Err(DataError::BadSplit { msg: "no training rows".into() });
        }
        Ok(split)
    }
}

/// Split `n` rows with `floor(val_frac * n)` validation rows,
/// `floor(test_frac * n)` test rows, and the rest for training.
pub fn split_indices(
    n: usize,
    seed: u64,
    val_frac: f64,
    test_frac: f64,
) -> Result<Split, DataError> {
    if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) {
        return Err(DataError::BadSplit {
            msg: format!("fractions {val_frac}/{test_frac} outside [0,1)"),
        });
    }
    let n_val = (val_frac * n as f64).floor() as usize;
    let n_test = (test_frac * n as f64).floor() as usize;
    if n_val + n_test >= n {
        return Err(DataError::BadSplit {
            msg: format!("{n} rows leave no training data ({n_val} val + {n_test} test)"),
        });
    }
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let test = order.split_off(n - n_test);
    let val = order.split_off(n_train);
    Ok(Split { train: order, val, test })
}

/// Class-stratified variant: each class contributes floored `val_frac` and
/// `test_frac` shares of its own rows. A single shuffled pass fills the
/// per-class quotas, so training keeps a class-mixed shuffled order and
/// "the first p training rows" stays well defined.
pub fn stratified_split_indices(
    labels: &[u8],
    seed: u64,
    val_frac: f64,
    test_frac: f64,
) -> Result<Split, DataError> {
    if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) {
        return Err(DataError::BadSplit {
            msg: format!("fractions {val_frac}/{test_frac} outside [0,1)"),
        });
    }
    let n = labels.len();
    let mut counts = [0usize; 2];
    for &l in labels {
        if l > 1 {
            return Err(DataError::BadSplit { msg: format!("label {l} is not binary") });
        }
        counts[l as usize] += 1;
    }
    let mut val_left = [0usize; 2];
    let mut test_left = [0usize; 2];
    for c in 0..2 {
        val_left[c] = (val_frac * counts[c] as f64).floor() as usize;
        test_left[c] = (test_frac * counts[c] as f64).floor() as usize;
    }
    if val_left.iter().sum::<usize>() + test_left.iter().sum::<usize>() >= n {
        return Err(DataError::BadSplit {
            msg: format!("{n} rows leave no training data after stratified quotas"),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let mut split = Split { train: vec![], val: vec![], test: vec![] };
    for ix in order {
        let c = labels[ix] as usize;
        if test_left[c] > 0 {
            test_left[c] -= 1;
            split.test.push(ix);
        } else if val_left[c] > 0 {
            val_left[c] -= 1;
            split.val.push(ix);
        } else {
            split.train.push(ix);
        }
    }
    Ok(split)
}

/// First `p` shuffled training rows keep their labels; the rest are the
/// unlabeled pool.
pub fn semisup_split(split: &Split, p: usize) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if p == 0 || p > split.train.len() {
        return Err(DataError::BadSplit {
            msg: format!("{p} labeled rows requested from {} training rows", split.train.len()),
        });
    }
    Ok((split.train[..p].to_vec(), split.train[p..].to_vec()))
}
