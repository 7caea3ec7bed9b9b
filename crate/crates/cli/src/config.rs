//! Experiment configuration: one TOML document with a strict schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sno_core::latent_vae::VaeSpec;
use sno_core::numerics::Activation;
use sno_core::score_operator::{NomadSpec, Sampler, TrainConfig};
use sno_core::sde::SdeConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Score matching directly on 2-D lattice mixture samples.
    Lattice,
    /// Joint VAE + latent score matching on double-digit images.
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingChoice {
    KmePca,
    Prototype,
    Conditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub lattice: LatticeData,
    #[serde(default)]
    pub digits: DigitData,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default = "default_sde")]
    pub sde: SdeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub latent: LatentConfig,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_sde() -> SdeConfig {
    SdeConfig::ve(25.0)
}

fn default_train() -> TrainConfig {
    TrainConfig::new(300, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeData {
    pub train_families: usize,
    pub test_families: usize,
    pub samples_per_family: usize,
}

impl Default for LatticeData {
    fn default() -> Self {
        Self {
            train_families: 200,
            test_families: 10,
            samples_per_family: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DigitData {
    /// Single-digit IDX files; synthetic glyphs are rendered when absent.
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub synthetic_per_class: usize,
    pub train_families: usize,
    pub test_families: usize,
    pub samples_per_family: usize,
}

impl Default for DigitData {
    fn default() -> Self {
        Self {
            idx_images: None,
            idx_labels: None,
            synthetic_per_class: 200,
            train_families: 10,
            test_families: 5,
            samples_per_family: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub method: EmbeddingChoice,
    /// `N_x`, the embedding width.
    pub n_components: usize,
    /// RBF bandwidth; the median heuristic over the reference sets when absent.
    pub bandwidth: Option<f64>,
    /// Leading samples of each training family used as its KME reference set.
    pub kme_points: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            method: EmbeddingChoice::KmePca,
            n_components: 32,
            bandwidth: None,
            kme_points: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub width: usize,
    pub depth: usize,
    pub branch_out: usize,
    pub trunk_out: usize,
    pub fourier_features: usize,
    pub fourier_sigma: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = NomadSpec::desk(1, 1);
        Self {
            width: d.width,
            depth: d.depth,
            branch_out: d.branch_out,
            trunk_out: d.trunk_out,
            fourier_features: d.fourier_features,
            fourier_sigma: d.fourier_sigma,
            activation: d.activation,
        }
    }
}

impl ModelConfig {
    pub fn nomad(&self, data_dim: usize, cond_dim: usize) -> NomadSpec {
        NomadSpec {
            data_dim,
            cond_dim,
            width: self.width,
            depth: self.depth,
            branch_out: self.branch_out,
            trunk_out: self.trunk_out,
            fourier_features: self.fourier_features,
            fourier_sigma: self.fourier_sigma,
            activation: self.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatentConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Outer block width of the latent score net; `8 * latent_dim` when absent.
    pub net_width: Option<usize>,
    pub time_features: usize,
    pub time_sigma: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        let v = VaeSpec::new(1, 16);
        Self {
            latent_dim: v.latent_dim,
            hidden: v.hidden,
            depth: v.depth,
            beta: v.beta,
            gamma: v.gamma,
            net_width: None,
            time_features: 16,
            time_sigma: 10.0,
        }
    }
}

impl LatentConfig {
    pub fn vae(&self, data_dim: usize) -> VaeSpec {
        VaeSpec {
            data_dim,
            latent_dim: self.latent_dim,
            hidden: self.hidden,
            depth: self.depth,
            activation: Activation::Relu,
            beta: self.beta,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Adam steps spent adapting a new table row to an unseen family.
    pub finetune_steps: usize,
    pub finetune_lr: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            finetune_steps: 10_000,
            finetune_lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_gen: usize,
    pub steps: usize,
    /// Probability-flow ODE in lattice mode, reverse SDE in latent mode when absent.
    pub sampler: Option<Sampler>,
    pub train_families: usize,
    pub test_families: usize,
    pub scatter: bool,
    pub permutation_rounds: usize,
    pub fewshot_ladder: Vec<usize>,
    pub fewshot_families: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_gen: 1000,
            steps: 200,
            sampler: None,
            train_families: 10,
            test_families: 10,
            scatter: true,
            permutation_rounds: 0,
            fewshot_ladder: vec![1, 10, 100, 1000],
            fewshot_families: 5,
        }
    }
}

impl EvalConfig {
    pub fn sampler_for(&self, mode: Mode) -> Sampler {
        self.sampler.unwrap_or(match mode {
            Mode::Lattice => Sampler::ProbabilityFlow,
            Mode::Latent => Sampler::ReverseSde,
        })
    }
}

/// A parsed config together with the exact bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub bytes: Vec<u8>,
    /// Lowercase hex SHA-256 of `bytes`.
    pub hash: String,
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = Self::parse(text)?;
        Ok(LoadedConfig {
            hash: hash_bytes(&bytes),
            config,
            bytes,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.sde.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.embedding.n_components == 0 || self.embedding.kme_points == 0 {
            return bad("embedding.n_components and embedding.kme_points must be at least 1".into());
        }
        if let Some(h) = self.embedding.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("embedding.bandwidth must be positive, got {h}"));
            }
        }
        match self.mode {
            Mode::Lattice => {
                let l = &self.lattice;
                if l.train_families == 0 || l.samples_per_family == 0 {
                    return bad("lattice needs at least one family and one sample".into());
                }
                if self.embedding.method == EmbeddingChoice::Prototype {
                    return bad("prototype embeddings need an encoder; use mode = \"latent\"".into());
                }
            }
            Mode::Latent => {
                let d = &self.digits;
                if d.train_families == 0 || d.samples_per_family == 0 || d.synthetic_per_class == 0 {
                    return bad("digits needs at least one family, sample and glyph per class".into());
                }
                if d.train_families > 70 || d.test_families > 30 {
                    return bad("at most 70 train and 30 test digit pairs exist".into());
                }
                if d.idx_images.is_some() != d.idx_labels.is_some() {
                    return bad("digits.idx_images and digits.idx_labels must be given together".into());
                }
                if self.embedding.method == EmbeddingChoice::Conditional {
                    return bad("the conditional baseline runs in lattice mode only".into());
                }
                if self.embedding.method == EmbeddingChoice::Prototype
                    && self.embedding.n_components != self.latent.latent_dim
                {
                    return bad(format!(
                        "prototype embeddings have latent_dim = {} components, not {}",
                        self.latent.latent_dim, self.embedding.n_components
                    ));
                }
                self.latent.vae(1).validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        if self.eval.n_gen == 0 || self.eval.steps == 0 {
            return bad("eval.n_gen and eval.steps must be positive".into());
        }
        if self.eval.fewshot_ladder.is_empty() || self.eval.fewshot_ladder.contains(&0) {
            return bad("eval.fewshot_ladder needs positive entries".into());
        }
        if self.eval.permutation_rounds != 0 && self.eval.permutation_rounds < 100 {
            return bad("eval.permutation_rounds must be 0 or at least 100".into());
        }
        Ok(())
    }
}
