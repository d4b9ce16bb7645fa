//! Polynomial pair-weighting losses for cross-modal matching.
//!
//! The crate computes cosine similarity matrices between two modalities,
//! mines informative negatives, evaluates triplet / average-polynomial /
//! max-polynomial hinge losses with exact gradients, and trains a small
//! dual encoder with Adam so the losses can be compared end to end.

pub mod coeffs;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod mining;
pub mod model;
pub mod rng;
pub mod similarity;
pub mod sweep;
pub mod train;

pub use coeffs::{poly_deriv_eval, poly_eval, validate_coefficients, PolyCoefficients};
pub use error::{Error, Result};
pub use eval::{recall_at_k, RecallReport};
pub use loss::{loss_dispatch, LossKind, LossResult, LossSpec};
pub use matrix::Matrix;
pub use mining::{mine, MiningMask};
pub use similarity::{cosine_backward, cosine_forward, EmbeddingBatch, SimilarityMatrix};
