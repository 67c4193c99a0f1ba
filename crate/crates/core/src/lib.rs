//! First-layer gradient preconditioning in a small training kit.
//!
//! The first layer of a network sees raw pixels, so its weight gradient
//! `∇z·xᵀ` scales with input magnitude. [`precond`] replaces it with
//! `∇z·xᵀ·(x·xᵀ/B + λI)⁻¹`, the least-squares weight update that best
//! realises a gradient step on the first-layer embeddings. The remaining
//! modules supply what is needed to train and check it: dense linear algebra,
//! input unfolding, a manual-backprop network, optimizers, dataset loaders,
//! brute-force oracles and a command-line harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod params_io;
pub mod precond;
pub mod sample;
pub mod spectral;
pub mod unfold;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use precond::{TrActConfig, DEFAULT_LAMBDA};
