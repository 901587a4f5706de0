//! Pair-concatenation one-shot learning.
//!
//! Two samples are joined into one input (vector concatenation for MLPs,
//! channel concatenation for CNNs) and a single network decides whether the
//! pair comes from an identical pattern or from different patterns. The crate
//! also carries a weight-sharing siamese baseline, the probe corruptions used
//! to shift the input distribution, evaluation metrics, and a Gaussian
//! latent-model laboratory for the background-invariance argument.

pub mod corrupt;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
