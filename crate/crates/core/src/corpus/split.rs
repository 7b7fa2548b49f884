use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logs::ImpressionLog;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config(format!("split fractions must be non-negative: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<ImpressionLog>,
    pub val: Vec<ImpressionLog>,
    pub test: Vec<ImpressionLog>,
}

/// Splits by timestamp order: the earliest logs train, the latest test.
/// Equal timestamps keep their input order.
pub fn time_split(logs: &[ImpressionLog], spec: SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = logs.len();
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 logs to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| logs[i].timestamp);
    let n_train = ((n as f64) * spec.train).round() as usize;
    let n_val = (((n as f64) * spec.val).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let take = |range: std::ops::Range<usize>| -> Vec<ImpressionLog> {
        order[range].iter().map(|&i| logs[i].clone()).collect()
    };
    Ok(Split {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}

/// Indices of logs grouped by user, users in first-appearance order.
fn group_by_user(logs: &[ImpressionLog]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (i, l) in logs.iter().enumerate() {
        let g = *index.entry(l.user_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// User-stratified random subset: each user keeps `round(fraction · count)`
/// of their logs. Output preserves input order.
pub fn subsample(logs: &[ImpressionLog], fraction: f64, seed: u64) -> Result<Vec<ImpressionLog>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if fraction == 1.0 {
        return Ok(logs.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; logs.len()];
    for group in group_by_user(logs) {
        let k = ((group.len() as f64) * fraction).round() as usize;
        for j in sample(&mut rng, group.len(), k) {
            keep[group[j]] = true;
        }
    }
    Ok(logs
        .iter()
        .zip(keep)
        .filter_map(|(l, k)| k.then(|| l.clone()))
        .collect())
}
