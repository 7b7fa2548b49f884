//! Corpus formats, loaders, splits and the synthetic generator.

pub mod ee;
pub mod jsonl;
pub mod logs;
pub mod schema;
pub mod split;
pub mod synth;

pub use ee::{
    infer_schema, load_ee_corpus, parse_ee_corpus, read_ee_corpus_exact, write_ee_corpus,
    AnnotatedEvent, AnnotatedSentence, ArgumentSpan, EeCorpus,
};
pub use jsonl::{read_json, read_jsonl, write_json, write_jsonl};
pub use logs::{
    check_integrity, load_impressions, load_logs, load_news, write_impressions, write_news,
    EventRecord, ImpressionLog, NewsItem,
};
pub use schema::{EventSchema, EventTypeDef};
pub use split::{subsample, time_split, Split, SplitSpec};
pub use synth::{
    click_probability, generate_synthetic, synthetic_schema, GroundTruth, SyntheticConfig,
    SyntheticCorpus, UserInterest,
};
