//! Training instances with sampled negatives.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ImpressionLog;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainInstance {
    pub user_id: String,
    pub positive: String,
    pub negatives: Vec<String>,
    pub timestamp: i64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sampled {
    pub instances: Vec<TrainInstance>,
    /// Clicks dropped because their impression had no non-clicked candidate.
    pub skipped: usize,
}

fn impression_seed(seed: u64, i: u64) -> u64 {
    seed.wrapping_mul(0xA24B_AED4_963E_E407) ^ i.wrapping_add(1).wrapping_mul(0x9FB2_1C65_1E98_DF25)
}

/// One instance per clicked candidate with `neg_ratio` negatives from the
/// same impression: without replacement when enough exist, otherwise with.
pub fn sample_instances(impressions: &[ImpressionLog], neg_ratio: usize, seed: u64) -> Result<Sampled> {
    if neg_ratio == 0 {
        return Err(Error::Config("negative sampling ratio must be positive".into()));
    }
    let mut out = Sampled::default();
    for (i, imp) in impressions.iter().enumerate() {
        let pool: Vec<&String> = imp.non_clicked().collect();
        if pool.is_empty() {
            out.skipped += imp.clicked.len();
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(impression_seed(seed, i as u64));
        for pos in &imp.clicked {
            let negatives = if pool.len() >= neg_ratio {
                sample(&mut rng, pool.len(), neg_ratio)
                    .into_iter()
                    .map(|j| pool[j].clone())
                    .collect()
            } else {
                (0..neg_ratio)
                    .map(|_| pool[rng.random_range(0..pool.len())].clone())
                    .collect()
            };
            out.instances.push(TrainInstance {
                user_id: imp.user_id.clone(),
                positive: pos.clone(),
                negatives,
                timestamp: imp.timestamp,
            });
        }
    }
    Ok(out)
}
