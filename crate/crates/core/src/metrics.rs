//! Adapted Rand error.
//!
//! Only voxels with a nonzero ground-truth id count. Each predicted voxel
//! with id 0 is its own singleton segment. With `n_ij` the overlap of
//! predicted segment `i` and ground-truth segment `j`, `s_i` and `t_j` the
//! marginals:
//!
//! ```text
//! P = Σ n_ij² / Σ s_i²     R = Σ n_ij² / Σ t_j²     error = 1 − 2PR / (P + R)
//! ```
//!
//! The sums include each voxel paired with itself. In terms of unordered
//! pairs of distinct voxels this is `P = (2·TP + n) / (2·(TP + FP) + n)`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::volume::LabelMap;

/// Largest foreground size the pair-counting oracle accepts.
pub const ORACLE_LIMIT: usize = 10_000;

/// Overlap counts restricted to ground-truth foreground.
#[derive(Clone, Debug, Default)]
pub struct ContingencyTable {
    /// Total foreground voxels.
    pub n: u64,
    /// `Σ n_ij²`
    pub sum_joint_sq: u128,
    /// `Σ s_i²` over predicted segments.
    pub sum_pred_sq: u128,
    /// `Σ t_j²` over ground-truth segments.
    pub sum_gt_sq: u128,
}

impl ContingencyTable {
    pub fn from_labels(pred: &[u32], gt: &[u32]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!(
                "prediction has {} voxels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let mut joint: HashMap<(u32, u32), u64> = HashMap::new();
        let mut rows: HashMap<u32, u64> = HashMap::new();
        let mut cols: HashMap<u32, u64> = HashMap::new();
        let mut singletons = 0u64;
        let mut n = 0u64;
        for (&p, &g) in pred.iter().zip(gt) {
            if g == 0 {
                continue;
            }
            n += 1;
            *cols.entry(g).or_default() += 1;
            if p == 0 {
                singletons += 1;
            } else {
                *joint.entry((p, g)).or_default() += 1;
                *rows.entry(p).or_default() += 1;
            }
        }
        Ok(ContingencyTable {
            n,
            sum_joint_sq: sum_sq(joint.values()) + singletons as u128,
            sum_pred_sq: sum_sq(rows.values()) + singletons as u128,
            sum_gt_sq: sum_sq(cols.values()),
        })
    }

    pub fn precision(&self) -> f64 {
        self.sum_joint_sq as f64 / self.sum_pred_sq as f64
    }

    pub fn recall(&self) -> f64 {
        self.sum_joint_sq as f64 / self.sum_gt_sq as f64
    }
}

fn sum_sq<'a>(counts: impl Iterator<Item = &'a u64>) -> u128 {
    counts.map(|&v| v as u128 * v as u128).sum()
}

/// `1 − F` written as `(P + R − 2PR) / (P + R)`, which is exact for the
/// small rational cases.
fn f_error(precision: f64, recall: f64) -> f64 {
    let sum = precision + recall;
    (sum - 2.0 * precision * recall) / sum
}

/// Adapted Rand error of flat label arrays.
pub fn adapted_rand_error_flat(pred: &[u32], gt: &[u32]) -> Result<f64> {
    let table = ContingencyTable::from_labels(pred, gt)?;
    if table.n == 0 {
        return Err(Error::UndefinedMetric("ground truth has no foreground voxels".into()));
    }
    Ok(f_error(table.precision(), table.recall()))
}

pub fn adapted_rand_error(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    adapted_rand_error_flat(pred.data(), gt.data())
}

/// Brute-force evaluation over all unordered pairs of foreground voxels.
pub fn pair_counting_oracle(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("prediction and ground truth differ in shape"));
    }
    let fg: Vec<(Option<u32>, u32)> = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(_, &g)| g != 0)
        .map(|(&p, &g)| ((p != 0).then_some(p), g))
        .collect();
    let n = fg.len();
    if n > ORACLE_LIMIT {
        return Err(Error::SizeGuard(format!(
            "{n} foreground voxels exceed the oracle limit of {ORACLE_LIMIT}"
        )));
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("ground truth has no foreground voxels".into()));
    }
    let (mut both, mut same_pred, mut same_gt) = (0u64, 0u64, 0u64);
    for a in 0..n {
        for b in a + 1..n {
            let sp = fg[a].0.is_some() && fg[a].0 == fg[b].0;
            let sg = fg[a].1 == fg[b].1;
            both += (sp && sg) as u64;
            same_pred += sp as u64;
            same_gt += sg as u64;
        }
    }
    // self pairs: every voxel agrees with itself in both partitions
    let n = n as f64;
    let precision = (2.0 * both as f64 + n) / (2.0 * same_pred as f64 + n);
    let recall = (2.0 * both as f64 + n) / (2.0 * same_gt as f64 + n);
    Ok(f_error(precision, recall))
}
