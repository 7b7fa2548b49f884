//! Click scoring, training and ranking.

mod head;
mod instances;
mod model;

pub use head::{group_loss, init_head, score, score_var, HEAD_B1, HEAD_B2, HEAD_W1, HEAD_W2};
pub use instances::{sample_instances, Sampled, TrainInstance};
pub use model::{
    rank_scores, train_rec, write_predictions, Prediction, PredictorConfig, RankedItem, RecModel, TrainHistory,
    TrainerConfig,
};
