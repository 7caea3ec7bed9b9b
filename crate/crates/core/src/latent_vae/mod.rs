//! Multi-distribution VAE with a Bernoulli decoder, a latent score network,
//! and joint training of both under `L_VAE + gamma * L_SGM`.

mod joint;
mod net;

pub use joint::{generate_latent, joint_train, prototype_embeddings, JointRecord, JointReport, LatentEmbedding};
pub use net::{LatentNetSpec, LatentScoreNet, LatentTape};

use serde::{Deserialize, Serialize};

use crate::distributions::SampleBatch;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{rng, sigmoid, softplus, Activation, Matrix, Mlp, MlpSpec, MlpTape, ParameterStore, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeSpec {
    pub data_dim: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Linear layers per network.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_latent_dim() -> usize {
    16
}
fn default_hidden() -> usize {
    512
}
fn default_depth() -> usize {
    3
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_beta() -> f64 {
    2048.0
}
fn default_gamma() -> f64 {
    1.0
}

impl VaeSpec {
    pub fn new(data_dim: usize, latent_dim: usize) -> Self {
        Self {
            data_dim,
            latent_dim,
            hidden: default_hidden(),
            depth: default_depth(),
            activation: default_activation(),
            beta: default_beta(),
            gamma: default_gamma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.latent_dim == 0 || self.hidden == 0 || self.depth == 0 {
            return Err(Error::Validation(format!("degenerate VAE spec {self:?}")));
        }
        if !(self.beta > 0.0) || !(self.gamma >= 0.0) || !self.beta.is_finite() || !self.gamma.is_finite() {
            return Err(Error::Validation(format!(
                "need beta > 0 and gamma >= 0, got beta {} gamma {}",
                self.beta, self.gamma
            )));
        }
        Ok(())
    }

    /// Outputs `[mean, log-variance]`, `2 * latent_dim` columns.
    pub fn encoder(&self) -> MlpSpec {
        MlpSpec::uniform(self.data_dim, self.hidden, self.depth, 2 * self.latent_dim, self.activation)
    }

    /// Outputs Bernoulli logits.
    pub fn decoder(&self) -> MlpSpec {
        MlpSpec::uniform(self.latent_dim, self.hidden, self.depth, self.data_dim, self.activation)
    }
}

/// Latent codes of one distribution's samples.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub z: Matrix,
    pub family_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct Vae {
    spec: VaeSpec,
    encoder: Mlp,
    decoder: Mlp,
}

/// Forward values kept for the backward pass.
pub struct VaeTape {
    x: Matrix,
    eps: Matrix,
    mu: Matrix,
    logvar: Matrix,
    logits: Matrix,
    encoder: MlpTape,
    decoder: MlpTape,
}

impl VaeTape {
    /// Reparameterized draws `mu + exp(logvar / 2) * eps`.
    pub fn z(&self) -> Matrix {
        reparameterize(&self.mu, &self.logvar, &self.eps)
    }

    pub fn mu(&self) -> &Matrix {
        &self.mu
    }
}

fn reparameterize(mu: &Matrix, logvar: &Matrix, eps: &Matrix) -> Matrix {
    let mut z = mu.clone();
    for ((v, lv), e) in z.as_mut_slice().iter_mut().zip(logvar.as_slice()).zip(eps.as_slice()) {
        *v += (0.5 * lv).exp() * e;
    }
    z
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over coordinates.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// `-log Bernoulli(x | sigmoid(logit))` summed over entries.
pub fn bernoulli_nll(logits: &[f64], x: &[f64]) -> f64 {
    logits.iter().zip(x).map(|(l, x)| softplus(*l) - x * l).sum()
}

impl Vae {
    pub fn new(spec: VaeSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            encoder: Mlp::new("vae.encoder", spec.encoder())?,
            decoder: Mlp::new("vae.decoder", spec.decoder())?,
            spec,
        })
    }

    pub fn spec(&self) -> &VaeSpec {
        &self.spec
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        self.encoder.init(store, rng)?;
        self.decoder.init(store, rng)
    }

    fn check_pixels(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.data_dim {
            return Err(dim_err("vae_loss", self.spec.data_dim, x.cols()));
        }
        if let Some(v) = x.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("VAE input {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Encoder mean and log-variance.
    pub fn encode(&self, store: &ParameterStore, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.encoder.forward(store, x)?.split_cols(self.spec.latent_dim)
    }

    pub fn encode_mean(&self, store: &ParameterStore, x: &Matrix) -> Result<Matrix> {
        Ok(self.encode(store, x)?.0)
    }

    pub fn encode_batch(&self, store: &ParameterStore, batch: &SampleBatch) -> Result<LatentBatch> {
        Ok(LatentBatch {
            z: self.encode_mean(store, &batch.data)?,
            family_id: batch.family_id.clone(),
        })
    }

    /// Pixel probabilities in `[0, 1]`.
    pub fn decode(&self, store: &ParameterStore, z: &Matrix) -> Result<Matrix> {
        Ok(self.decoder.forward(store, z)?.map(sigmoid))
    }

    pub fn forward_tape(&self, store: &ParameterStore, x: &Matrix, eps: &Matrix) -> Result<(VaeLoss, VaeTape)> {
        self.check_pixels(x)?;
        if eps.shape() != (x.rows(), self.spec.latent_dim) {
            return Err(dim_err(
                "vae_loss noise",
                format!("{:?}", (x.rows(), self.spec.latent_dim)),
                format!("{:?}", eps.shape()),
            ));
        }
        if x.rows() == 0 {
            return Err(Error::Validation("vae_loss of an empty batch".into()));
        }
        let (h, encoder) = self.encoder.forward_tape(store, x)?;
        let (mu, logvar) = h.split_cols(self.spec.latent_dim)?;
        let z = reparameterize(&mu, &logvar, eps);
        let (logits, decoder) = self.decoder.forward_tape(store, &z)?;
        let n = x.rows() as f64;
        let recon = (0..x.rows()).map(|i| bernoulli_nll(logits.row(i), x.row(i))).sum::<f64>() / n;
        let kl = (0..x.rows()).map(|i| kl_standard_normal(mu.row(i), logvar.row(i))).sum::<f64>() / n;
        let loss = VaeLoss {
            total: recon + self.spec.beta * kl,
            recon,
            kl,
        };
        if !loss.total.is_finite() {
            return Err(Error::Training(format!("non-finite VAE loss {loss:?}")));
        }
        let tape = VaeTape {
            x: x.clone(),
            eps: eps.clone(),
            mu,
            logvar,
            logits,
            encoder,
            decoder,
        };
        Ok((loss, tape))
    }

    /// Accumulates gradients of `total` into `store`. `dz_extra` is an
    /// additional upstream gradient on the reparameterized draws.
    pub fn backward(&self, store: &mut ParameterStore, tape: &VaeTape, dz_extra: Option<&Matrix>) -> Result<()> {
        let n = tape.x.rows() as f64;
        let beta = self.spec.beta;
        let mut dlogits = tape.logits.clone();
        for (g, x) in dlogits.as_mut_slice().iter_mut().zip(tape.x.as_slice()) {
            *g = (sigmoid(*g) - x) / n;
        }
        let mut dz = self.decoder.backward(store, &tape.decoder, &dlogits)?;
        if let Some(extra) = dz_extra {
            dz.add_assign(extra)?;
        }
        let d = self.spec.latent_dim;
        let mut dh = Matrix::zeros(tape.x.rows(), 2 * d);
        for i in 0..tape.x.rows() {
            let (mu, lv, e, g) = (tape.mu.row(i), tape.logvar.row(i), tape.eps.row(i), dz.row(i));
            let row = dh.row_mut(i);
            for j in 0..d {
                let s = (0.5 * lv[j]).exp();
                row[j] = g[j] + beta * mu[j] / n;
                row[d + j] = 0.5 * g[j] * e[j] * s + 0.5 * beta * (s * s - 1.0) / n;
            }
        }
        self.encoder.backward(store, &tape.encoder, &dh)?;
        Ok(())
    }

    /// Batch-mean negative ELBO with `beta`-weighted KL.
    pub fn vae_loss(&self, store: &ParameterStore, x: &Matrix, eps: &Matrix) -> Result<VaeLoss> {
        Ok(self.forward_tape(store, x, eps)?.0)
    }
}

/// Reparameterization noise for one family, keyed by `(seed, family_id)`.
pub fn family_noise(seed: u64, family_id: &str, rows: usize, latent_dim: usize) -> Matrix {
    rng::standard_normal_matrix(rows, latent_dim, &mut rng::stream(seed, &[rng::tag("vae_eps"), rng::tag(family_id)]))
}

/// Mean over tasks of the full-batch VAE loss.
pub fn multi_vae_loss(vae: &Vae, store: &ParameterStore, tasks: &[SampleBatch], seed: u64) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Validation("multi_vae_loss needs at least one task".into()));
    }
    let mut total = 0.0;
    for t in tasks {
        let eps = family_noise(seed, &t.family_id, t.len(), vae.latent_dim());
        total += vae.vae_loss(store, &t.data, &eps)?.total;
    }
    Ok(total / tasks.len() as f64)
}

/// Decodes latent codes to pixel probabilities.
pub fn decode_samples(vae: &Vae, store: &ParameterStore, z: &LatentBatch, seed: u64) -> Result<SampleBatch> {
    if z.z.cols() != vae.latent_dim() {
        return Err(dim_err("decode_samples", vae.latent_dim(), z.z.cols()));
    }
    Ok(SampleBatch::new(vae.decode(store, &z.z)?, z.family_id.clone(), seed))
}

#[cfg(test)]
mod tests;
