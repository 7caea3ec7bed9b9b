use rand::Rng as _;

use super::{decode_samples, LatentBatch, Vae};
use crate::distributions::SampleBatch;
use crate::embeddings::embed_prototype;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, rng, AdamConfig, Matrix, ParameterStore};
use crate::score_operator::{
    dsm_objective, sample_from_family, select_families, Control, DsmBatch, EpochRecord, Sampler, ScoreNet,
    ScoreOperator, TrainConfig,
};

/// Conditioning of the latent score network during joint training.
#[derive(Clone, Copy, Debug)]
pub enum LatentEmbedding<'a> {
    /// Precomputed rows, one per family (KME-PCA in pixel space).
    Fixed(&'a Matrix),
    /// Encoder-mean prototypes, recomputed at the start of every epoch.
    Prototype,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointRecord {
    pub step: u64,
    /// `vae + gamma * sgm`.
    pub total: f64,
    pub vae: f64,
    pub recon: f64,
    pub kl: f64,
    /// Zero in VAE-only runs.
    pub sgm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct JointReport {
    pub steps: Vec<JointRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl JointReport {
    pub fn total_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.total).collect()
    }

    pub fn vae_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.vae).collect()
    }

    pub fn sgm_trace(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.sgm).collect()
    }
}

/// One prototype row per family: the encoder mean averaged over its samples.
pub fn prototype_embeddings(vae: &Vae, store: &ParameterStore, data: &[SampleBatch]) -> Result<Matrix> {
    let mut out = Matrix::zeros(data.len(), vae.latent_dim());
    for (i, b) in data.iter().enumerate() {
        let u = embed_prototype(&mut |x| vae.encode_mean(store, x), &b.data)?;
        out.row_mut(i).copy_from_slice(&u.u);
    }
    Ok(out)
}

fn draw_pixels(data: &[SampleBatch], chosen: &[usize], per_family: usize, seed: u64, step: u64) -> Result<(Matrix, Vec<usize>)> {
    let d = data[chosen[0]].dim();
    let mut x = Matrix::zeros(chosen.len() * per_family, d);
    let mut groups = Vec::with_capacity(x.rows());
    for (g, &fi) in chosen.iter().enumerate() {
        let set = &data[fi];
        if set.is_empty() {
            return Err(Error::Validation(format!("family `{}` has no samples", set.family_id)));
        }
        let mut r = rng::stream(seed, &[rng::tag("vae_rows"), step, rng::tag(&set.family_id)]);
        for k in 0..per_family {
            x.row_mut(g * per_family + k).copy_from_slice(set.data.row(r.random_range(0..set.len())));
            groups.push(g);
        }
    }
    Ok((x, groups))
}

fn latent_dsm_batch(z: Matrix, groups: Vec<usize>, op_tmin: f64, op_tmax: f64, seed: u64, step: u64) -> DsmBatch {
    let mut r = rng::stream(seed, &[rng::tag("sgm"), step]);
    let t = (0..z.rows()).map(|_| op_tmin + (op_tmax - op_tmin) * r.random::<f64>()).collect();
    let noise = rng::standard_normal_matrix(z.rows(), z.cols(), &mut r);
    DsmBatch {
        groups,
        x0: z,
        z: noise,
        t,
    }
}

/// Adam on `L_VAE + gamma * L_SGM`, resuming from `store.step_count`. With
/// `op = None` only the VAE is trained. VAE minibatches and noise, and the
/// score-matching times and noise, come from separate keyed streams, so
/// `gamma = 0` reproduces the VAE-only trajectory exactly.
pub fn joint_train<N: ScoreNet>(
    vae: &Vae,
    op: Option<&ScoreOperator<N>>,
    store: &mut ParameterStore,
    data: &[SampleBatch],
    embedding: LatentEmbedding<'_>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &ParameterStore) -> Result<Control>,
) -> Result<JointReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("no training families".into()));
    }
    if let LatentEmbedding::Fixed(m) = embedding {
        if m.rows() != data.len() {
            return Err(Error::Validation(format!("{} embedding rows for {} families", m.rows(), data.len())));
        }
    }
    if let Some(op) = op {
        if op.net.data_dim() != vae.latent_dim() {
            return Err(crate::error::dim_err("joint_train latent", vae.latent_dim(), op.net.data_dim()));
        }
    }
    let gamma = vae.spec().gamma;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let b_d = cfg.batch_distributions.min(data.len());
    let spe = cfg.steps_per_epoch as u64;
    let mut report = JointReport::default();
    let mut protos: Option<Matrix> = None;
    let (mut epoch_sum, mut epoch_n) = (0.0, 0usize);
    let diverged = |report: &JointReport, step: u64, loss: f64| Error::JointDivergence {
        step,
        loss,
        vae_trace: report.vae_trace(),
        sgm_trace: report.sgm_trace(),
    };
    while store.step_count < cfg.total_steps() {
        let step = store.step_count;
        if op.is_some() && matches!(embedding, LatentEmbedding::Prototype) && (protos.is_none() || step % spe == 0) {
            protos = Some(prototype_embeddings(vae, store, data)?);
        }
        let chosen = select_families(data, b_d, cfg.seed, step);
        let (x, groups) = draw_pixels(data, &chosen, cfg.batch_samples, cfg.seed, step)?;
        let eps = rng::standard_normal_matrix(
            x.rows(),
            vae.latent_dim(),
            &mut rng::stream(cfg.seed, &[rng::tag("vae_eps"), step]),
        );
        let (vl, tape) = match vae.forward_tape(store, &x, &eps) {
            Ok(v) => v,
            Err(Error::Training(_)) => {
                store.zero_grad();
                return Err(diverged(&report, step, f64::NAN));
            }
            Err(e) => return Err(e),
        };
        let mut sgm = 0.0;
        let mut dz = None;
        if let Some(op) = op {
            let cond = match embedding {
                LatentEmbedding::Fixed(m) => m.select_rows(&chosen)?,
                LatentEmbedding::Prototype => protos.as_ref().expect("computed above").select_rows(&chosen)?,
            };
            let batch = latent_dsm_batch(tape.z(), groups, op.sde.t_min, op.sde.t_max, cfg.seed, step);
            let out = dsm_objective(op, store, &cond, &batch, true)?;
            store.scale_grads(gamma);
            let mut g = out.dx0;
            g.scale(gamma);
            dz = Some(g);
            sgm = out.loss;
        }
        let rec = JointRecord {
            step,
            total: vl.total + gamma * sgm,
            vae: vl.total,
            recon: vl.recon,
            kl: vl.kl,
            sgm,
        };
        report.steps.push(rec);
        if !rec.total.is_finite() || !rec.kl.is_finite() || rec.total > cfg.divergence_threshold {
            store.zero_grad();
            return Err(diverged(&report, step, rec.total));
        }
        vae.backward(store, &tape, dz.as_ref())?;
        if let Err(e) = adam_step(store, cfg.lr_at(step), adam.beta1, adam.beta2, adam.eps) {
            store.zero_grad();
            return Err(match e {
                Error::Training(_) => diverged(&report, step, rec.total),
                other => other,
            });
        }
        epoch_sum += rec.total;
        epoch_n += 1;
        if store.step_count % spe == 0 {
            let er = EpochRecord {
                epoch: (store.step_count / spe) as usize,
                step: store.step_count,
                loss: epoch_sum / epoch_n as f64,
            };
            epoch_sum = 0.0;
            epoch_n = 0;
            report.epochs.push(er.clone());
            if on_epoch(&er, store)? == Control::Stop {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}

/// Samples latent codes for embedding `u` and decodes them to pixels.
#[allow(clippy::too_many_arguments)]
pub fn generate_latent<N: ScoreNet>(
    vae: &Vae,
    op: &ScoreOperator<N>,
    store: &ParameterStore,
    u: &[f64],
    n: usize,
    sampler: Sampler,
    steps: usize,
    seed: u64,
    family_id: &str,
) -> Result<SampleBatch> {
    let z = sample_from_family(op, store, u, n, sampler, steps, seed, family_id)?;
    let latent = LatentBatch {
        z: z.data,
        family_id: family_id.to_owned(),
    };
    decode_samples(vae, store, &latent, seed)
}
