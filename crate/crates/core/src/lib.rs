//! Event-aware news recommendation: event extraction, event-type graph
//! embeddings, news and user encoders, and the click predictor.

pub mod corpus;
pub mod encoders;
mod error;
pub mod experiment;
pub mod extractor;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod predictor;

pub use error::{Error, Result};
