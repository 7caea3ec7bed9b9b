use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::net::ScoreNet;
use super::operator::{draw_dsm_batch, dsm_objective, ScoreOperator};
use crate::distributions::SampleBatch;
use crate::embeddings::EmbeddingMethod;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, rng, AdamConfig, Matrix, ParameterStore, Rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to `lr_final_fraction * lr` at the last step.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_steps_per_epoch")]
    pub steps_per_epoch: usize,
    #[serde(default = "default_batch_distributions")]
    pub batch_distributions: usize,
    #[serde(default = "default_batch_samples")]
    pub batch_samples: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_lr_final_fraction")]
    pub lr_final_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_embedding_method")]
    pub embedding_method: EmbeddingMethod,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
}

fn default_steps_per_epoch() -> usize {
    100
}
fn default_batch_distributions() -> usize {
    32
}
fn default_batch_samples() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_lr_final_fraction() -> f64 {
    0.1
}
fn default_embedding_method() -> EmbeddingMethod {
    EmbeddingMethod::KmePca
}
fn default_divergence() -> f64 {
    1e6
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            steps_per_epoch: default_steps_per_epoch(),
            batch_distributions: default_batch_distributions(),
            batch_samples: default_batch_samples(),
            lr: default_lr(),
            lr_schedule: LrSchedule::Constant,
            lr_final_fraction: default_lr_final_fraction(),
            seed,
            embedding_method: default_embedding_method(),
            divergence_threshold: default_divergence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_distributions == 0 || self.batch_samples == 0 {
            return Err(Error::Validation("batch sizes must be at least 1".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(Error::Validation("steps_per_epoch must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::Validation(format!(
                "bad learning rate settings: lr {}, final fraction {}",
                self.lr, self.lr_final_fraction
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let frac = (step as f64 / self.total_steps().max(1) as f64).min(1.0);
                let lo = self.lr * self.lr_final_fraction;
                lo + 0.5 * (self.lr - lo) * (1.0 + (PI * frac).cos())
            }
        }
    }
}

/// Learned per-distribution embedding rows, one per training family.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTable {
    pub name: String,
    pub rows: usize,
    pub width: usize,
}

impl ConditionalTable {
    pub fn new(name: impl Into<String>, rows: usize, width: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            width,
        }
    }

    /// Standard normal rows.
    pub fn init(&self, store: &mut ParameterStore, r: &mut Rng) -> Result<()> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..self.rows * self.width).map(|_| normal.sample(r)).collect();
        store.insert(&self.name, Matrix::from_vec(self.rows, self.width, data)?)
    }

    pub fn matrix<'s>(&self, store: &'s ParameterStore) -> Result<&'s Matrix> {
        store.value(&self.name)
    }

    pub fn row(&self, store: &ParameterStore, i: usize) -> Result<Vec<f64>> {
        let m = self.matrix(store)?;
        if i >= m.rows() {
            return Err(Error::Validation(format!(
                "conditional table `{}` has no row {i}: family was not trained",
                self.name
            )));
        }
        Ok(m.row(i).to_vec())
    }
}

/// Where each training family's conditioning vector comes from.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    /// Precomputed embeddings, one row per family.
    Fixed(&'a Matrix),
    /// Trainable table rows.
    Table(&'a ConditionalTable),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// The `k` families with the smallest keyed hash for this step, in key order.
/// Depends on family ids only, not on their position in `data`.
pub fn select_families(data: &[SampleBatch], k: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = data
        .iter()
        .enumerate()
        .map(|(i, b)| (rng::derive_seed(seed, &[rng::tag("pick"), step, rng::tag(&b.family_id)]), i))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Adam on the multi-distribution denoising objective, resuming from
/// `store.step_count`. `on_epoch` runs after every completed epoch.
pub fn train<N: ScoreNet>(
    op: &ScoreOperator<N>,
    store: &mut ParameterStore,
    data: &[SampleBatch],
    cond: Conditioning<'_>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParameterStore) -> Result<Control>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("no training families".into()));
    }
    let n_rows = match cond {
        Conditioning::Fixed(m) => m.rows(),
        Conditioning::Table(t) => t.matrix(store)?.rows(),
    };
    if n_rows != data.len() {
        return Err(Error::Validation(format!(
            "{} conditioning rows for {} families",
            n_rows,
            data.len()
        )));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let b_d = cfg.batch_distributions.min(data.len());
    let mut report = TrainReport::default();
    let mut epoch_sum = 0.0;
    let mut epoch_n = 0usize;
    while store.step_count < cfg.total_steps() {
        let step = store.step_count;
        let chosen = select_families(data, b_d, cfg.seed, step);
        let sets: Vec<&SampleBatch> = chosen.iter().map(|&i| &data[i]).collect();
        let batch = draw_dsm_batch(&sets, cfg.batch_samples, &op.sde, cfg.seed, step)?;
        let cond_rows = match cond {
            Conditioning::Fixed(m) => m.select_rows(&chosen)?,
            Conditioning::Table(t) => t.matrix(store)?.select_rows(&chosen)?,
        };
        let out = dsm_objective(op, store, &cond_rows, &batch, true)?;
        report.step_losses.push(out.loss);
        if !out.loss.is_finite() || out.loss > cfg.divergence_threshold {
            store.zero_grad();
            return Err(Error::Divergence {
                step,
                loss: out.loss,
                trace: report.step_losses,
            });
        }
        if let Conditioning::Table(t) = cond {
            let mut g = Matrix::zeros(data.len(), t.width);
            g.scatter_add_rows(&chosen, &out.dcond)?;
            store.accumulate_grad(&t.name, &g)?;
        }
        if let Err(e) = adam_step(store, cfg.lr_at(step), adam.beta1, adam.beta2, adam.eps) {
            store.zero_grad();
            return Err(match e {
                Error::Training(_) => Error::Divergence {
                    step,
                    loss: out.loss,
                    trace: report.step_losses,
                },
                other => other,
            });
        }
        epoch_sum += out.loss;
        epoch_n += 1;
        if store.step_count % cfg.steps_per_epoch as u64 == 0 {
            let rec = EpochRecord {
                epoch: (store.step_count / cfg.steps_per_epoch as u64) as usize,
                step: store.step_count,
                loss: epoch_sum / epoch_n as f64,
            };
            epoch_sum = 0.0;
            epoch_n = 0;
            report.epochs.push(rec.clone());
            if on_epoch(&rec, store)? == Control::Stop {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}

/// Adds a fresh table row for an unseen family, initialized at the mean of
/// the trained rows, and finetunes it together with the network on the
/// family's few samples. Returns the finetuned store and the row's name.
pub fn finetune_conditional<N: ScoreNet>(
    op: &ScoreOperator<N>,
    store: &ParameterStore,
    table: &ConditionalTable,
    samples: &SampleBatch,
    cfg: &TrainConfig,
) -> Result<(ParameterStore, ConditionalTable)> {
    let mut ft = store.clone();
    ft.reset_optimizer();
    let init = table.matrix(store)?.column_means();
    let row = ConditionalTable::new(format!("{}.finetune", table.name), 1, table.width);
    ft.insert(&row.name, init)?;
    ft.set_trainable(&table.name, false)?;
    let mut cfg = cfg.clone();
    cfg.batch_distributions = 1;
    train(
        op,
        &mut ft,
        std::slice::from_ref(samples),
        Conditioning::Table(&row),
        &cfg,
        &mut |_, _| Ok(Control::Continue),
    )?;
    Ok((ft, row))
}
