use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::net::ScoreNet;
use crate::distributions::SampleBatch;
use crate::embeddings::EmbeddingVector;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{rng, Matrix, ParameterStore};
use crate::sde::{lambda_weight, SdeConfig};

/// A score network bound to a diffusion. The raw network sees
/// `c_in(t) x` with `c_in(t) = 1 / sqrt(mean_coeff(t)^2 + std(t)^2)` and its
/// output is divided by `std(t)`, so the regression target of the raw
/// output is the unit-variance noise.
#[derive(Clone, Debug)]
pub struct ScoreOperator<N> {
    pub net: N,
    pub sde: SdeConfig,
}

pub struct OperatorTape<T> {
    net: T,
    c_in: Vec<f64>,
    c_out: Vec<f64>,
}

impl<N: ScoreNet> ScoreOperator<N> {
    pub fn new(net: N, sde: SdeConfig) -> Result<Self> {
        sde.validate()?;
        Ok(Self { net, sde })
    }

    fn c_in(&self, t: f64) -> f64 {
        let m = self.sde.mean_coeff(t);
        1.0 / (m * m + self.sde.variance(t)).sqrt()
    }

    fn scaled_input(&self, x: &Matrix, t: &[f64]) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
        if t.len() != x.rows() {
            return Err(dim_err("score_eval times", x.rows(), t.len()));
        }
        if let Some(&bad) = t.iter().find(|&&ti| !(ti > 0.0 && ti <= self.sde.t_max)) {
            return Err(Error::Domain(format!("score evaluated at t = {bad}")));
        }
        let c_in: Vec<f64> = t.iter().map(|&ti| self.c_in(ti)).collect();
        let c_out: Vec<f64> = t.iter().map(|&ti| 1.0 / self.sde.std(ti)).collect();
        let mut xin = x.clone();
        for (i, c) in c_in.iter().enumerate() {
            xin.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
        Ok((xin, c_in, c_out))
    }

    fn scale_rows(m: &mut Matrix, s: &[f64]) {
        for (i, c) in s.iter().enumerate() {
            m.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
    }

    /// Scores for rows of `x`, row `i` conditioned on `cond[groups[i]]` at time `t[i]`.
    pub fn score(&self, store: &ParameterStore, cond: &Matrix, groups: &[usize], x: &Matrix, t: &[f64]) -> Result<Matrix> {
        let (xin, _, c_out) = self.scaled_input(x, t)?;
        let mut s = self.net.forward(store, cond, groups, &xin, t)?;
        Self::scale_rows(&mut s, &c_out);
        Ok(s)
    }

    pub fn score_tape(
        &self,
        store: &ParameterStore,
        cond: &Matrix,
        groups: &[usize],
        x: &Matrix,
        t: &[f64],
    ) -> Result<(Matrix, OperatorTape<N::Tape>)> {
        let (xin, c_in, c_out) = self.scaled_input(x, t)?;
        let (mut s, net) = self.net.forward_tape(store, cond, groups, &xin, t)?;
        Self::scale_rows(&mut s, &c_out);
        Ok((s, OperatorTape { net, c_in, c_out }))
    }

    /// Returns `(d cond, d x)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        tape: &OperatorTape<N::Tape>,
        upstream: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        let mut up = upstream.clone();
        Self::scale_rows(&mut up, &tape.c_out);
        let (dcond, mut dx) = self.net.backward(store, &tape.net, &up)?;
        Self::scale_rows(&mut dx, &tape.c_in);
        Ok((dcond, dx))
    }

    /// Scores of a single conditioning vector at a shared time.
    pub fn score_single(&self, store: &ParameterStore, u: &[f64], x: &Matrix, t: f64) -> Result<Matrix> {
        let cond = Matrix::from_vec(1, u.len(), u.to_vec())?;
        self.score(store, &cond, &vec![0; x.rows()], x, &vec![t; x.rows()])
    }
}

/// One denoising minibatch: `x0` rows drawn from distribution `groups[i]`,
/// perturbed with noise `z` at times `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DsmBatch {
    pub groups: Vec<usize>,
    pub x0: Matrix,
    pub z: Matrix,
    pub t: Vec<f64>,
}

impl DsmBatch {
    pub fn xt(&self, sde: &SdeConfig) -> Matrix {
        let mut xt = self.x0.clone();
        for i in 0..xt.rows() {
            let (m, s) = (sde.mean_coeff(self.t[i]), sde.std(self.t[i]));
            let zr = self.z.row(i);
            for (v, z) in xt.row_mut(i).iter_mut().zip(zr) {
                *v = m * *v + s * z;
            }
        }
        xt
    }
}

/// Draws `per_family` rows (with replacement) from each selected sample set,
/// one uniform time per row. Randomness is keyed by `(seed, step, family_id)`.
pub fn draw_dsm_batch(sets: &[&SampleBatch], per_family: usize, sde: &SdeConfig, seed: u64, step: u64) -> Result<DsmBatch> {
    let d = sets.first().map(|s| s.dim()).ok_or_else(|| Error::Validation("no distributions in batch".into()))?;
    let n = sets.len() * per_family;
    let mut x0 = Matrix::zeros(n, d);
    let mut z = Matrix::zeros(n, d);
    let mut t = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (g, set) in sets.iter().enumerate() {
        if set.dim() != d {
            return Err(dim_err("draw_dsm_batch", d, set.dim()));
        }
        if set.is_empty() {
            return Err(Error::Validation(format!("family `{}` has no samples", set.family_id)));
        }
        let mut r = rng::stream(seed, &[rng::tag("dsm"), step, rng::tag(&set.family_id)]);
        for k in 0..per_family {
            let i = g * per_family + k;
            x0.row_mut(i).copy_from_slice(set.data.row(r.random_range(0..set.len())));
            t.push(sde.t_min + (sde.t_max - sde.t_min) * r.random::<f64>());
            for v in z.row_mut(i) {
                *v = StandardNormal.sample(&mut r);
            }
            groups.push(g);
        }
    }
    Ok(DsmBatch { groups, x0, z, t })
}

pub struct DsmOutput {
    pub loss: f64,
    /// Mean loss of the rows belonging to each group.
    pub group_losses: Vec<f64>,
    pub dcond: Matrix,
    pub dx0: Matrix,
}

/// `mean_i lambda(t_i) |s(x_t_i) - target_i|^2`; with `grad` set, parameter
/// gradients are accumulated into `store` and input gradients returned.
pub fn dsm_objective<N: ScoreNet>(
    op: &ScoreOperator<N>,
    store: &mut ParameterStore,
    cond: &Matrix,
    batch: &DsmBatch,
    grad: bool,
) -> Result<DsmOutput> {
    let sde = &op.sde;
    let xt = batch.xt(sde);
    let n = xt.rows();
    let (s, tape) = if grad {
        let (s, tape) = op.score_tape(store, cond, &batch.groups, &xt, &batch.t)?;
        (s, Some(tape))
    } else {
        (op.score(store, cond, &batch.groups, &xt, &batch.t)?, None)
    };
    let mut ds = Matrix::zeros(n, xt.cols());
    let mut group_sum = vec![0.0; cond.rows()];
    let mut group_n = vec![0usize; cond.rows()];
    let mut total = 0.0;
    for i in 0..n {
        let t = batch.t[i];
        let (lam, std) = (lambda_weight(sde, t), sde.std(t));
        let mut row_loss = 0.0;
        let (sr, zr) = (s.row(i), batch.z.row(i));
        let dr = ds.row_mut(i);
        for j in 0..sr.len() {
            let diff = sr[j] + zr[j] / std;
            row_loss += diff * diff;
            dr[j] = 2.0 * lam * diff / n as f64;
        }
        row_loss *= lam;
        total += row_loss;
        group_sum[batch.groups[i]] += row_loss;
        group_n[batch.groups[i]] += 1;
    }
    let loss = total / n as f64;
    let group_losses: Vec<f64> = group_sum
        .iter()
        .zip(&group_n)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let (dcond, dx0) = match tape {
        Some(tape) => {
            let (dcond, mut dxt) = op.backward(store, &tape, &ds)?;
            for i in 0..n {
                let m = sde.mean_coeff(batch.t[i]);
                dxt.row_mut(i).iter_mut().for_each(|v| *v *= m);
            }
            (dcond, dxt)
        }
        None => (Matrix::zeros(0, 0), Matrix::zeros(0, 0)),
    };
    Ok(DsmOutput {
        loss,
        group_losses,
        dcond,
        dx0,
    })
}

/// Mean over tasks of the full-batch denoising loss. Each task's times and
/// noise come from a stream keyed by `(seed, family_id)`.
pub fn dsm_loss<N: ScoreNet>(
    op: &ScoreOperator<N>,
    store: &ParameterStore,
    tasks: &[(EmbeddingVector, SampleBatch)],
    seed: u64,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Validation("dsm_loss needs at least one task".into()));
    }
    let mut scratch = store.clone();
    let mut total = 0.0;
    for (u, batch) in tasks {
        let cond = u.as_row();
        let b = draw_full(batch, &op.sde, seed);
        let out = dsm_objective(op, &mut scratch, &cond, &b, false)?;
        if !out.loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss for task `{}`", batch.family_id)));
        }
        total += out.loss;
    }
    Ok(total / tasks.len() as f64)
}

/// Every row of `batch` once, with keyed times and noise.
pub fn draw_full(batch: &SampleBatch, sde: &SdeConfig, seed: u64) -> DsmBatch {
    let mut r = rng::stream(seed, &[rng::tag("dsm_full"), rng::tag(&batch.family_id)]);
    let n = batch.len();
    let t = (0..n)
        .map(|_| sde.t_min + (sde.t_max - sde.t_min) * r.random::<f64>())
        .collect();
    let z = rng::standard_normal_matrix(n, batch.dim(), &mut r);
    DsmBatch {
        groups: vec![0; n],
        x0: batch.data.clone(),
        z,
        t,
    }
}
