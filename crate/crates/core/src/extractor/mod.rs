//! Character-level event extraction: BiLSTM emissions, a linear-chain CRF,
//! and rule-based post-processing of decoded spans.

pub mod crf;
pub mod decode;
pub mod eval;
pub mod model;
pub mod tags;

pub use crf::{crf_nll, CrfStructure};
pub use decode::{
    assemble_events, extract_corpus, extract_sentences, filter_rules, predict_annotated,
    split_sentences,
};
pub use eval::{eval_ee, EeReport, TypeScore};
pub use model::{CHAR_EMBEDDING, TRANSITIONS, continue_training, train_ee, CharVocab, EeConfig, EpochStats, TaggerModel};
pub use tags::{Tag, TagSpace};
