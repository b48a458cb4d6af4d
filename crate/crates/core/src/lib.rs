//! Pedestrian crossing-intent and multi-label reason prediction.
//!
//! A small dense-tensor engine with reverse-mode differentiation drives a
//! model that encodes three observation streams with transformers, attends
//! over time, and scores every reason class against graph-refined reason
//! embeddings. Data tooling covers corpus validation, a planted-factor
//! synthetic generator, co-occurrence statistics and inter-rater agreement.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod plot;
pub mod reason_graph;
pub mod tape;
pub mod tensor;
pub mod tfe;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
