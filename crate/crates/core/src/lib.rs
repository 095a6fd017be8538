//! Multi-label image classification posed as link prediction.
//!
//! Images (carrying precomputed feature codes) and findings are entities of
//! a knowledge graph; annotations become `hasFinding` edges, uncertain
//! annotations optionally `probablyHasFinding` edges, and label dependencies
//! `coOccurs` edges between findings. A DistMult or ConvE scorer is trained
//! with binary cross-entropy over closed-world targets and evaluated by
//! per-finding and macro AUC-ROC on `(image, hasFinding, ?)` completions.

pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kg;
pub mod scoring;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
