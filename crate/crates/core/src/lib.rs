//! nnfrag: a desk-scale toolkit for stress-testing neural-network
//! interpretations.
//!
//! The crate bundles a minimal differentiable engine, three saliency
//! methods, influence functions, perturbation attacks that keep
//! predictions intact while reshaping interpretations, similarity
//! metrics, geometric fragility analyses, and an experiment harness
//! with a command-line front end.

pub mod analysis;
pub mod attacks;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod harness;
pub mod influence;
pub mod interpret;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use error::NnError;
pub use tensor::Tensor;
