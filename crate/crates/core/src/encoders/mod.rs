//! Multi-channel news and user representations.

mod history;
mod model;
mod vocab;

pub use history::ClickHistory;
pub use model::{
    init_category_embeddings, Binder, Channels, EncoderConfig, EncoderMeta, Encoders, NewsBatch, NewsMatrix,
    UserQuery, ALPHA, ATT_B, ATT_Q, ATT_W, CATEGORY_EMBEDDING, ETYPE_EMBEDDING, USER_CD, USER_ETD, WORD_EMBEDDING,
};
pub use vocab::{build_input_sequence, input_tokens, tokenize, tokenize_role, WordVocab, EMPTY, EMPTY_TOKEN, PAD};
