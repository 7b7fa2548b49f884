//! Configured experiments: single variants, the ablation ladder and the
//! training-fraction study.

mod config;
mod runner;
mod variants;

pub use config::{DataConfig, EvalConfig, ExperimentConfig, TrainerSection, SEED_ENV};
pub use runner::{
    embed_event_types, prepare_synthetic, run_ablation, run_fraction_study, run_variant, seeds, train_and_extract,
    train_variant, EeStage, MeanStd, PreparedData, ResultTable, TableRow, VariantRun,
};
pub use variants::{VariantSpec, VARIANT_NAMES};
