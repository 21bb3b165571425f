//! Knowledge-graph augmented fact verification.
//!
//! Claims and grounding documents are turned into knowledge graphs, encoded
//! by a trainable graph attention encoder, projected into soft-prompt tokens,
//! and judged by a frozen transformer in a single forward pass.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod encoder;
pub mod error;
pub mod extraction;
pub mod featurizer;
pub mod gradcheck;
pub mod kg;
pub mod trainer;
pub mod verifier;

pub use error::{Error, Result};
