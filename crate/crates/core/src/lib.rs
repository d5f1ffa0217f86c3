//! Asymmetric masked auto-encoder post-training for dialogue response
//! selection, with contrastive bi-encoder fine-tuning and dense retrieval.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod masking;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
