//! Dense linear algebra, MLPs, Fourier features, Adam and the checkpoint container.

mod activation;
mod adam;
mod checkpoint;
mod fourier;
pub mod gradcheck;
mod matrix;
mod mlp;
mod params;
pub mod rng;

pub use activation::{sigmoid, softplus, Activation};
pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{write_atomic, Checkpoint};
pub use fourier::{fourier_features, FourierFeatureMap};
pub use matrix::{gemm, Matrix};
pub use mlp::{mlp_backward, mlp_forward, Mlp, MlpSpec, MlpTape};
pub use params::{Param, ParameterStore};
pub use rng::Rng;
