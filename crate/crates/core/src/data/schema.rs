//! Schema fitting and persistence. A schema is fitted on training rows only;
//! encoding any other row never feeds information back into it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, RawTable};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rescaling {
    /// `(v - mean) / std`, 0 when the column is constant.
    Zscore,
    /// Empirical CDF position in `[0, 1]` interpolated between knots.
    Quantile,
    /// `ln(1 + max(0, v - min))` with the training minimum.
    Log,
    /// Raw values passed through.
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    /// Sorted CDF knots; empty unless the rescaling is `quantile`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knots: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Observed classes in order of first occurrence in the fit rows.
    /// Code `i + 1` is `classes[i]`; code 0 is missing/unseen.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescaling: Option<Rescaling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<ContinuousStats>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schema {
    pub version: u32,
    pub target: String,
    pub positive_label: String,
    /// Both target values seen at fit time; everything else is rejected.
    pub target_classes: Vec<String>,
    /// Feature columns in original header order, target excluded.
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn cat_columns(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Categorical)
    }

    pub fn cont_columns(&self) -> impl Iterator<Item = &ColumnSchema> {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Continuous)
    }

    /// Canonical JSON used for persistence and fingerprinting. Field order is
    /// the struct declaration order, so equal schemas serialize identically.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    /// Hex SHA-256 of the canonical JSON. Two schemas agree exactly when
    /// their fingerprints agree.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_file(&self, path: &str) -> Result<(), DataError> {
        std::fs::write(path, self.canonical_json())
            .map_err(|e| DataError::Io { path: path.to_string(), err: e.to_string() })
    }

    pub fn from_file(path: &str) -> Result<Schema, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::Io { path: path.to_string(), err: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| DataError::BadSchema { msg: e.to_string() })
    }
}

#[derive(Clone, Debug)]
pub struct SchemaOptions {
    /// Class treated as 1; defaults to the minority class among fit rows.
    pub positive_label: Option<String>,
    /// Columns forced categorical even if every value parses as a number.
    pub force_categorical: Vec<String>,
    pub rescaling: Rescaling,
    /// Upper bound on stored CDF knots for quantile rescaling.
    pub max_knots: usize,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        SchemaOptions {
            positive_label: None,
            force_categorical: Vec::new(),
            rescaling: Rescaling::Zscore,
            max_knots: 1024,
        }
    }
}

/// Fit a schema for `target` using only `fit_rows` of `table`.
///
/// Column kinds are inferred: a column whose every non-missing fit cell
/// parses as a number is continuous, anything else (or anything listed in
/// `force_categorical`) is categorical.
pub fn fit_schema(
    table: &RawTable,
    target: &str,
    fit_rows: &[usize],
    opts: &SchemaOptions,
) -> Result<Schema, DataError> {
    let target_ix = table
        .column_index(target)
        .ok_or_else(|| DataError::MissingColumn { name: target.to_string() })?;
    if fit_rows.is_empty() {
        return Err(DataError::EmptyTable);
    }

    // Target: exactly two classes, positive defaults to the minority.
    let mut t_classes: Vec<String> = Vec::new();
    let mut t_counts: Vec<usize> = Vec::new();
    for &r in fit_rows {
        match &table.rows[r][target_ix] {
            None => return Err(DataError::MissingLabel { row: r }),
            Some(v) => match t_classes.iter().position(|c| c == v) {
                Some(p) => t_counts[p] += 1,
                None => {
                    t_classes.push(v.clone());
                    t_counts.push(1);
                }
            },
        }
    }
    if t_classes.len() != 2 {
        return Err(DataError::TargetCardinality { found: t_classes });
    }
    let positive_label = match &opts.positive_label {
        Some(p) => {
            if !t_classes.contains(p) {
                return Err(DataError::UnknownLabel { row: 0, value: p.clone() });
            }
            p.clone()
        }
        None => {
            // Minority class; ties break to the lexicographically larger
            // value so the choice never depends on row order.
            if t_counts[0] < t_counts[1]
                || (t_counts[0] == t_counts[1] && t_classes[0] > t_classes[1])
            {
                t_classes[0].clone()
            } else {
                t_classes[1].clone()
            }
        }
    };

    let mut columns = Vec::new();
    for (ix, name) in table.headers.iter().enumerate() {
        if ix == target_ix {
            continue;
        }
        let forced = opts.force_categorical.iter().any(|f| f == name);
        let mut numeric = !forced;
        if numeric {
            numeric = fit_rows.iter().all(|&r| match &table.rows[r][ix] {
                None => true,
                Some(v) => v.parse::<f64>().is_ok(),
            });
        }
        if numeric {
            let values: Vec<f64> = fit_rows
                .iter()
                .filter_map(|&r| table.rows[r][ix].as_ref())
                .map(|v| v.parse::<f64>().unwrap())
                .collect();
            let stats = fit_stats(&values, opts.rescaling, opts.max_knots);
            columns.push(ColumnSchema {
                name: name.clone(),
                kind: ColumnKind::Continuous,
                classes: Vec::new(),
                rescaling: Some(opts.rescaling),
                stats: Some(stats),
            });
        } else {
            let mut classes: Vec<String> = Vec::new();
            for &r in fit_rows {
                if let Some(v) = &table.rows[r][ix] {
                    if !classes.iter().any(|c| c == v) {
                        classes.push(v.clone());
                    }
                }
            }
            columns.push(ColumnSchema {
                name: name.clone(),
                kind: ColumnKind::Categorical,
                classes,
                rescaling: None,
                stats: None,
            });
        }
    }

    Ok(Schema {
        version: SCHEMA_VERSION,
        target: target.to_string(),
        positive_label,
        target_classes: t_classes,
        columns,
    })
}

fn fit_stats(values: &[f64], rescaling: Rescaling, max_knots: usize) -> ContinuousStats {
    if values.is_empty() {
        return ContinuousStats { mean: 0.0, std: 0.0, min: 0.0, knots: Vec::new() };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let knots = if rescaling == Rescaling::Quantile {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() <= max_knots {
            sorted
        } else {
            // Evenly spaced order statistics, endpoints included.
            (0..max_knots)
                .map(|j| sorted[j * (sorted.len() - 1) / (max_knots - 1)])
                .collect()
        }
    } else {
        Vec::new()
    };
    ContinuousStats { mean, std: var.sqrt(), min, knots }
}

/// Apply a fitted rescaling to one raw value.
pub fn rescale(v: f64, rescaling: Rescaling, stats: &ContinuousStats) -> f64 {
    match rescaling {
        Rescaling::None => v,
        Rescaling::Zscore => {
            if stats.std < 1e-12 {
                0.0
            } else {
                (v - stats.mean) / stats.std
            }
        }
        Rescaling::Log => (1.0 + (v - stats.min).max(0.0)).ln(),
        Rescaling::Quantile => {
            let k = &stats.knots;
            if k.is_empty() {
                return 0.0;
            }
            if k.len() == 1 {
                return 0.5;
            }
            let denom = (k.len() - 1) as f64;
            let lo = k.partition_point(|&x| x < v);
            let hi = k.partition_point(|&x| x <= v);
            if hi > lo {
                // Exact hit on a (possibly repeated) knot: average its ranks.
                return ((lo + hi - 1) as f64 / 2.0) / denom;
            }
            if lo == 0 {
                return 0.0;
            }
            if lo == k.len() {
                return 1.0;
            }
            let (x0, x1) = (k[lo - 1], k[lo]);
            let frac = if x1 > x0 { (v - x0) / (x1 - x0) } else { 0.5 };
            ((lo - 1) as f64 + frac) / denom
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ingest::read_csv;

    fn table() -> RawTable {
        let csv = "\
color,size,score,y
red,small,1.0,yes
blue,large,2.0,no
red,,3.0,no
green,small,,no
blue,large,5.0,yes
";
        read_csv(csv.as_bytes(), &[String::new()]).unwrap()
    }

    #[test]
    fn kinds_and_class_order_follow_fit_rows() {
        let t = table();
        let s = fit_schema(&t, "y", &[0, 1, 2, 3, 4], &SchemaOptions::default()).unwrap();
        assert_eq!(s.columns.len(), 3);
        assert_eq!(s.columns[0].kind, ColumnKind::Categorical);
        assert_eq!(s.columns[0].classes, ["red", "blue", "green"]);
        assert_eq!(s.columns[1].classes, ["small", "large"]);
        assert_eq!(s.columns[2].kind, ColumnKind::Continuous);
        // 2 yes vs 3 no: minority wins.
        assert_eq!(s.positive_label, "yes");
    }

    #[test]
    fn fit_rows_bound_what_the_schema_sees() {
        let t = table();
        let s = fit_schema(&t, "y", &[0, 1], &SchemaOptions::default()).unwrap();
        // green and small-missing rows were not in the fit set.
        assert_eq!(s.columns[0].classes, ["red", "blue"]);
        let stats = s.columns[2].stats.as_ref().unwrap();
        assert!((stats.mean - 1.5).abs() < 1e-12);
    }

    #[test]
    fn forced_categorical_overrides_numeric_inference() {
        let t = table();
        let opts = SchemaOptions {
            force_categorical: vec!["score".to_string()],
            ..Default::default()
        };
        let s = fit_schema(&t, "y", &[0, 1, 4], &opts).unwrap();
        assert_eq!(s.columns[2].kind, ColumnKind::Categorical);
        assert_eq!(s.columns[2].classes, ["1.0", "2.0", "5.0"]);
    }

    #[test]
    fn three_target_values_rejected() {
        let csv = "a,y\n1,x\n2,y\n3,z\n";
        let t = read_csv(csv.as_bytes(), &[String::new()]).unwrap();
        let err = fit_schema(&t, "y", &[0, 1, 2], &SchemaOptions::default()).unwrap_err();
        assert!(matches!(err, DataError::TargetCardinality { .. }));
    }

    #[test]
    fn zscore_handles_constant_columns() {
        let stats = ContinuousStats { mean: 4.0, std: 0.0, min: 4.0, knots: vec![] };
        assert_eq!(rescale(9.0, Rescaling::Zscore, &stats), 0.0);
    }

    #[test]
    fn quantile_interpolates_and_clamps() {
        let stats = ContinuousStats {
            mean: 0.0,
            std: 1.0,
            min: 1.0,
            knots: vec![1.0, 2.0, 2.0, 4.0],
        };
        assert_eq!(rescale(0.5, Rescaling::Quantile, &stats), 0.0);
        assert_eq!(rescale(9.0, Rescaling::Quantile, &stats), 1.0);
        assert!((rescale(1.0, Rescaling::Quantile, &stats) - 0.0).abs() < 1e-12);
        // Repeated knot 2.0 occupies ranks 1 and 2: average is 1.5/3.
        assert!((rescale(2.0, Rescaling::Quantile, &stats) - 0.5).abs() < 1e-12);
        let v = rescale(3.0, Rescaling::Quantile, &stats);
        assert!((v - (2.0 + 0.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_rescaling_clamps_below_train_min() {
        let stats = ContinuousStats { mean: 0.0, std: 1.0, min: 10.0, knots: vec![] };
        assert_eq!(rescale(5.0, Rescaling::Log, &stats), 0.0);
        assert!((rescale(10.0 + std::f64::consts::E - 1.0, Rescaling::Log, &stats) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let t = table();
        let s1 = fit_schema(&t, "y", &[0, 1, 2, 3, 4], &SchemaOptions::default()).unwrap();
        let s2 = fit_schema(&t, "y", &[0, 1, 2, 3, 4], &SchemaOptions::default()).unwrap();
        assert_eq!(s1.fingerprint(), s2.fingerprint());
        assert_eq!(s1.fingerprint().len(), 64);
        let s3 = fit_schema(&t, "y", &[0, 1, 2, 3], &SchemaOptions::default()).unwrap();
        assert_ne!(s1.fingerprint(), s3.fingerprint());
    }

    #[test]
    fn schema_round_trips_through_json() {
        let t = table();
        let s = fit_schema(&t, "y", &[0, 1, 2, 3, 4], &SchemaOptions::default()).unwrap();
        let json = s.canonical_json();
        let back: Schema = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fingerprint(), s.fingerprint());
    }
}
