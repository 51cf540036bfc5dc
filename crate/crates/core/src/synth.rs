//! Synthetic benchmark tables, emitted as raw string tables so tests and
//! demos exercise the full schema-fit/encode pipeline.
//!
//! Three families:
//! - an interaction task whose label is the XOR of two categorical columns
//!   (unlearnable by any linear model on one-hot features),
//! - a latent-state transfer task where many weak columns share one hidden
//!   cause, built for label-scarce + unlabeled-rich scenarios,
//! - a redundancy task where many noisy copies of a latent state allow
//!   recovery from partial corruption.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::RawTable;
use crate::rng;

fn cell(s: &str) -> Option<String> {
    Some(s.to_string())
}

/// Label = XOR of two uniform binary columns, plus `noise_cols` columns of
/// four uniform classes carrying nothing. Balanced by construction.
pub fn xor_table(n: usize, noise_cols: usize, seed: u64) -> RawTable {
    let mut r = rng::stream(seed, "synth/xor");
    let mut headers = vec!["x1".to_string(), "x2".to_string()];
    headers.extend((0..noise_cols).map(|i| format!("noise{i}")));
    headers.push("y".to_string());
    let rows = (0..n)
        .map(|_| {
            let a = r.random::<bool>();
            let b = r.random::<bool>();
            let mut row = vec![
                cell(if a { "high" } else { "low" }),
                cell(if b { "high" } else { "low" }),
            ];
            for _ in 0..noise_cols {
                row.push(cell(["n0", "n1", "n2", "n3"][r.random_range(0..4)]));
            }
            row.push(cell(if a ^ b { "yes" } else { "no" }));
            row
        })
        .collect();
    RawTable { headers, rows }
}

fn flip(z: bool, p: f64, r: &mut ChaCha8Rng) -> bool {
    z ^ (r.random::<f64>() < p)
}

/// One hidden binary state drives `cols` weak categorical views (per-column
/// flip probability `view_noise`, then one of two classes per state) and the
/// label (flip probability `label_noise`). No single column is strong, so
/// the consensus must be learned — from labels, or from the columns'
/// co-occurrence structure alone.
pub fn latent_table(
    n: usize,
    cols: usize,
    view_noise: f64,
    label_noise: f64,
    seed: u64,
) -> RawTable {
    let mut r = rng::stream(seed, "synth/latent");
    let mut headers: Vec<String> = (0..cols).map(|i| format!("view{i}")).collect();
    headers.push("y".to_string());
    let rows = (0..n)
        .map(|_| {
            let z = r.random::<bool>();
            let mut row: Vec<Option<String>> = (0..cols)
                .map(|_| {
                    let v = flip(z, view_noise, &mut r);
                    let sub = r.random_range(0..2);
                    cell(["s0a", "s0b", "s1a", "s1b"][usize::from(v) * 2 + sub])
                })
                .collect();
            row.push(cell(if flip(z, label_noise, &mut r) { "pos" } else { "neg" }));
            row
        })
        .collect();
    RawTable { headers, rows }
}

/// A four-state latent variable copied into `cols` columns with per-cell
/// flip probability `view_noise` (uniform over the other states); the label
/// is whether the state is in the upper half, with `label_noise` flips.
/// Heavy redundancy: any majority of surviving cells identifies the state.
pub fn redundant_table(
    n: usize,
    cols: usize,
    view_noise: f64,
    label_noise: f64,
    seed: u64,
) -> RawTable {
    let mut r = rng::stream(seed, "synth/redundant");
    let mut headers: Vec<String> = (0..cols).map(|i| format!("copy{i}")).collect();
    headers.push("y".to_string());
    let states = ["q0", "q1", "q2", "q3"];
    let rows = (0..n)
        .map(|_| {
            let z = r.random_range(0..4usize);
            let mut row: Vec<Option<String>> = (0..cols)
                .map(|_| {
                    let v = if r.random::<f64>() < view_noise {
                        (z + r.random_range(1..4)) % 4
                    } else {
                        z
                    };
                    cell(states[v])
                })
                .collect();
            let y = flip(z >= 2, label_noise, &mut r);
            row.push(cell(if y { "pos" } else { "neg" }));
            row
        })
        .collect();
    RawTable { headers, rows }
}
