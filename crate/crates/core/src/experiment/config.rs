//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, SplitSpec, SyntheticConfig};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::extractor::EeConfig;
use crate::graph::GraphConfig;
use crate::metrics::AucMode;
use crate::predictor::{PredictorConfig, TrainerConfig};

pub const SEED_ENV: &str = "EENR_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub synthetic: SyntheticConfig,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerSection {
    #[serde(flatten)]
    pub trainer: TrainerConfig,
    pub predictor: PredictorConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub auc_mode: AucMode,
    /// Training seeds per variant, offsets added to the experiment seed.
    pub n_seeds: usize,
    pub fractions: Vec<f64>,
    pub variants: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            auc_mode: AucMode::Impression,
            n_seeds: 3,
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            variants: super::VARIANT_NAMES.iter().map(|s| (*s).to_owned()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub ee: EeConfig,
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub trainer: TrainerSection,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            ee: EeConfig::default(),
            graph: GraphConfig::default(),
            encoder: EncoderConfig::default(),
            trainer: TrainerSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reduced recommender sizes that keep a full ablation within minutes
    /// on one core.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.encoder.word_dim = 32;
        c.encoder.d_sem = 16;
        c.trainer.trainer.epochs = 5;
        c.trainer.trainer.learning_rate = 3e-3;
        c
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    /// The configured seed, or the value of `EENR_SEED` when set.
    pub fn effective_seed(&self) -> Result<u64> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(self.seed),
        }
    }
}
