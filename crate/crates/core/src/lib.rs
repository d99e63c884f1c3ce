//! Language-adversarial speaker encoding on pooled frame features.
//!
//! The crate trains a small projection head with a supervised contrastive
//! speaker loss while a gradient-reversal layer pushes language information
//! out of the embedding, then measures how much a change of script moves a
//! speaker's embedding and how well the embeddings diarise code-switched
//! conversations. See the README for the command-line workflow.

pub mod check;
pub mod cli;
pub mod corpus;
pub mod diarization;
pub mod encoder;
pub mod error;
pub mod gap;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod optimizer;
pub mod trainer;

pub use error::{Error, Result};
