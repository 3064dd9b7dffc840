//! Attention-weighted bag-of-entities text classification.
//!
//! The pipeline has three stages:
//!
//! 1. [`kb_ingest`] builds an entity dictionary (name → candidate entities with
//!    commonness, plus per-name link probability) from wiki anchor statistics.
//! 2. [`detector`] finds dictionary names in documents with an earliest-longest
//!    scan and emits every candidate entity, without disambiguation.
//! 3. [`model`] averages word embeddings, attends over the candidate entities
//!    using cosine-to-document and commonness features, and classifies the
//!    result with multiclass logistic regression; [`training`] fits it with Adam.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detector;
pub mod dump;
pub mod embeddings;
pub mod error;
pub mod eval_analysis;
pub mod kb_ingest;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
