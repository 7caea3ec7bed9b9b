//! Score neural operator: learns the map from a probability distribution
//! (through a vector embedding) to its time-dependent score function, and
//! generates samples for seen and unseen distributions by integrating the
//! reverse diffusion.
//!
//! Modules, bottom-up:
//! - [`numerics`]: matrices, MLPs with manual backprop, Fourier features, Adam, checkpoints
//! - [`sde`]: VE/VP diffusions, denoising targets, Euler-Maruyama and RK4 samplers
//! - [`distributions`]: lattice mixture families, IDX ingestion, double-digit images
//! - [`embeddings`]: kernel mean embeddings + RKHS PCA, prototype embeddings
//! - [`score_operator`]: NOMAD operator, multi-distribution score matching, conditional baseline
//! - [`latent_vae`]: multi-distribution VAE and joint latent score matching
//! - [`eval_mmd`]: unbiased MMD, permutation tests, few-shot protocol

pub mod distributions;
pub mod embeddings;
mod error;
pub mod eval_mmd;
pub mod latent_vae;
pub mod numerics;
pub mod score_operator;
pub mod sde;

pub use error::{Error, Result};
pub use numerics::{Matrix, ParameterStore};
