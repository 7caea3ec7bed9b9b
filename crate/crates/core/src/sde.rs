//! Variance-exploding and variance-preserving diffusions.
//!
//! Both processes have linear drift `f(x, t) = a(t) x` and state-independent
//! diffusion `g(t)`, so `div(G G^T)` vanishes and the perturbation kernel is
//! Gaussian with closed-form mean coefficient and standard deviation:
//!
//! ```text
//! VE:  dx = sigma^t dw                 mean = 1,          std^2 = (sigma^{2t} - 1) / (2 ln sigma)
//! VP:  dx = -beta(t)/2 x dt + sqrt(beta(t)) dw,
//!      B(t) = beta_min t + (beta_max - beta_min) t^2 / 2,
//!                                      mean = e^{-B/2},   std^2 = 1 - e^{-B}
//! ```

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{rng, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeKind {
    Ve,
    Vp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    pub kind: SdeKind,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_sigma() -> f64 {
    25.0
}
fn default_beta_min() -> f64 {
    0.1
}
fn default_beta_max() -> f64 {
    20.0
}
fn default_t_min() -> f64 {
    1e-3
}
fn default_t_max() -> f64 {
    1.0
}

/// Score callback used by the samplers: `(states, t) -> scores`.
pub type ScoreFn<'a> = dyn FnMut(&Matrix, f64) -> Result<Matrix> + 'a;

impl SdeConfig {
    pub fn ve(sigma: f64) -> Self {
        Self {
            kind: SdeKind::Ve,
            sigma,
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
            t_min: default_t_min(),
            t_max: default_t_max(),
        }
    }

    pub fn vp(beta_min: f64, beta_max: f64) -> Self {
        Self {
            kind: SdeKind::Vp,
            sigma: default_sigma(),
            beta_min,
            beta_max,
            t_min: default_t_min(),
            t_max: default_t_max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SdeKind::Ve if !(self.sigma > 1.0) => {
                return Err(Error::Validation(format!("VE sigma must be > 1, got {}", self.sigma)))
            }
            SdeKind::Vp if !(self.beta_min > 0.0 && self.beta_min < self.beta_max) => {
                return Err(Error::Validation(format!(
                    "VP needs 0 < beta_min < beta_max, got {} / {}",
                    self.beta_min, self.beta_max
                )))
            }
            _ => {}
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max) {
            return Err(Error::Validation(format!(
                "need 0 < t_min < T, got {} / {}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.t_max)));
        }
        Ok(())
    }

    /// Integrated VP rate `B(t)`.
    fn big_b(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }

    fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    pub fn mean_coeff(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => 1.0,
            SdeKind::Vp => (-0.5 * self.big_b(t)).exp(),
        }
    }

    pub fn variance(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => (2.0 * t * self.sigma.ln()).exp_m1() / (2.0 * self.sigma.ln()),
            SdeKind::Vp => -(-self.big_b(t)).exp_m1(),
        }
    }

    pub fn std(&self, t: f64) -> f64 {
        self.variance(t).sqrt()
    }

    /// `a(t)` in `f(x, t) = a(t) x`.
    pub fn drift_coeff(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => 0.0,
            SdeKind::Vp => -0.5 * self.beta(t),
        }
    }

    /// `g(t)^2`.
    pub fn diffusion_sq(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => self.sigma.powf(2.0 * t),
            SdeKind::Vp => self.beta(t),
        }
    }

    pub fn prior_std(&self) -> f64 {
        match self.kind {
            SdeKind::Ve => self.std(self.t_max),
            SdeKind::Vp => 1.0,
        }
    }

    /// Closed-form score of `N(mean, var I)` data pushed through the forward process.
    pub fn gaussian_score(&self, mean: f64, var: f64, x: &Matrix, t: f64) -> Matrix {
        let m = self.mean_coeff(t);
        let v = m * m * var + self.variance(t);
        x.map(|xi| -(xi - m * mean) / v)
    }
}

/// Samples `x(t) | x(0)`: `mean_coeff(t) x0 + std(t) noise`.
pub fn perturb(config: &SdeConfig, x0: &Matrix, t: f64, noise: &Matrix) -> Result<Matrix> {
    config.check_t(t)?;
    if x0.shape() != noise.shape() {
        return Err(dim_err("perturb", format!("{:?}", x0.shape()), format!("{:?}", noise.shape())));
    }
    let (m, s) = (config.mean_coeff(t), config.std(t));
    let data = x0
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(x, z)| m * x + s * z)
        .collect();
    Matrix::from_vec(x0.rows(), x0.cols(), data)
}

/// `grad log p_0t(xt | x0) = -(xt - mean_coeff x0) / std^2`.
pub fn dsm_target(config: &SdeConfig, x0: &Matrix, xt: &Matrix, t: f64) -> Result<Matrix> {
    config.check_t(t)?;
    if t <= 0.0 {
        return Err(Error::Domain("denoising target is degenerate at t = 0".into()));
    }
    if x0.shape() != xt.shape() {
        return Err(dim_err("dsm_target", format!("{:?}", x0.shape()), format!("{:?}", xt.shape())));
    }
    let (m, v) = (config.mean_coeff(t), config.variance(t));
    let data = x0
        .as_slice()
        .iter()
        .zip(xt.as_slice())
        .map(|(a, b)| -(b - m * a) / v)
        .collect();
    Matrix::from_vec(x0.rows(), x0.cols(), data)
}

/// Loss weight `lambda(t)`: the perturbation variance, `1 / E|target|^2` per dimension.
pub fn lambda_weight(config: &SdeConfig, t: f64) -> f64 {
    config.variance(t)
}

fn prior_sample(config: &SdeConfig, n: usize, d: usize, r: &mut rng::Rng) -> Matrix {
    let mut x = rng::standard_normal_matrix(n, d, r);
    x.scale(config.prior_std());
    x
}

fn check_state(x: &Matrix, step: usize) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Sampling {
            step,
            reason: "state became non-finite".into(),
        });
    }
    Ok(())
}

fn call_score(score_fn: &mut ScoreFn<'_>, x: &Matrix, t: f64, step: usize) -> Result<Matrix> {
    let s = score_fn(x, t)?;
    if s.shape() != x.shape() {
        return Err(dim_err("score_fn", format!("{:?}", x.shape()), format!("{:?}", s.shape())));
    }
    if !s.is_finite() {
        return Err(Error::Sampling {
            step,
            reason: format!("score is non-finite at t = {t}"),
        });
    }
    Ok(s)
}

/// `steps + 1` times from `t_from` to `t_to`, evenly spaced in `ln t`.
///
/// Near `t_min` the score's Jacobian grows like `1 / std(t)^2 ~ 1 / t`, so
/// step sizes proportional to `t` keep `h * lambda` bounded for every step.
pub fn time_grid(t_from: f64, t_to: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_from > 0.0 && t_to > 0.0 && t_from.is_finite() && t_to.is_finite()) {
        return Err(Error::Domain(format!("time grid needs positive endpoints, got {t_from} and {t_to}")));
    }
    if steps == 0 {
        return Err(Error::Validation("integrator needs at least one step".into()));
    }
    let (a, b) = (t_from.ln(), t_to.ln());
    let mut grid: Vec<f64> = (0..=steps).map(|i| (a + (b - a) * i as f64 / steps as f64).exp()).collect();
    grid[0] = t_from;
    grid[steps] = t_to;
    Ok(grid)
}

/// Euler-Maruyama integration of the reverse-time SDE from `T` down to `t_min`
/// on [`time_grid`], started from the prior.
pub fn reverse_sde_sample(
    config: &SdeConfig,
    score_fn: &mut ScoreFn<'_>,
    n: usize,
    d: usize,
    steps: usize,
    seed: u64,
) -> Result<Matrix> {
    config.validate()?;
    if steps == 0 {
        return Err(Error::Validation("sampler needs at least one step".into()));
    }
    let mut r = rng::stream(seed, &[rng::tag("reverse_sde")]);
    let mut x = prior_sample(config, n, d, &mut r);
    let grid = time_grid(config.t_max, config.t_min, steps)?;
    for i in 0..steps {
        let (t, dt) = (grid[i], grid[i] - grid[i + 1]);
        let s = call_score(score_fn, &x, t, i)?;
        let (a, g2) = (config.drift_coeff(t), config.diffusion_sq(t));
        let noise_scale = (g2 * dt).sqrt();
        for (xi, si) in x.as_mut_slice().iter_mut().zip(s.as_slice()) {
            let z: f64 = StandardNormal.sample(&mut r);
            *xi += (g2 * si - a * *xi) * dt + noise_scale * z;
        }
        check_state(&x, i)?;
    }
    Ok(x)
}

/// RK4 on the probability-flow ODE `dx/dt = a(t) x - g(t)^2 s(x, t) / 2`
/// between `t_from` and `t_to` (either direction) over the fixed [`time_grid`].
pub fn integrate_probability_flow(
    config: &SdeConfig,
    score_fn: &mut ScoreFn<'_>,
    x: &Matrix,
    t_from: f64,
    t_to: f64,
    steps: usize,
) -> Result<Matrix> {
    let grid = time_grid(t_from, t_to, steps)?;
    let mut rhs = |x: &Matrix, t: f64, step: usize| -> Result<Matrix> {
        let s = call_score(score_fn, x, t, step)?;
        let (a, half_g2) = (config.drift_coeff(t), 0.5 * config.diffusion_sq(t));
        let data = x
            .as_slice()
            .iter()
            .zip(s.as_slice())
            .map(|(xi, si)| a * xi - half_g2 * si)
            .collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    };
    let mut x = x.clone();
    let mut tmp = x.clone();
    for i in 0..steps {
        let (t, h) = (grid[i], grid[i + 1] - grid[i]);
        let k1 = rhs(&x, t, i)?;
        stage(&mut tmp, &x, &k1, 0.5 * h);
        let k2 = rhs(&tmp, t + 0.5 * h, i)?;
        stage(&mut tmp, &x, &k2, 0.5 * h);
        let k3 = rhs(&tmp, t + 0.5 * h, i)?;
        stage(&mut tmp, &x, &k3, h);
        let k4 = rhs(&tmp, grid[i + 1], i)?;
        let (s1, s2, s3, s4) = (k1.as_slice(), k2.as_slice(), k3.as_slice(), k4.as_slice());
        for (j, xi) in x.as_mut_slice().iter_mut().enumerate() {
            *xi += h / 6.0 * (s1[j] + 2.0 * s2[j] + 2.0 * s3[j] + s4[j]);
        }
        check_state(&x, i)?;
    }
    Ok(x)
}

fn stage(out: &mut Matrix, x: &Matrix, k: &Matrix, h: f64) {
    for ((o, xi), ki) in out.as_mut_slice().iter_mut().zip(x.as_slice()).zip(k.as_slice()) {
        *o = xi + h * ki;
    }
}

/// Draws from the prior and integrates the probability-flow ODE from `T` to `t_min`.
pub fn probability_flow_sample(
    config: &SdeConfig,
    score_fn: &mut ScoreFn<'_>,
    n: usize,
    d: usize,
    steps: usize,
    seed: u64,
) -> Result<Matrix> {
    config.validate()?;
    let mut r = rng::stream(seed, &[rng::tag("probability_flow")]);
    let x = prior_sample(config, n, d, &mut r);
    integrate_probability_flow(config, score_fn, &x, config.t_max, config.t_min, steps)
}

/// Integrates the probability-flow ODE forward `t_min -> T` and back again;
/// returns the reconstruction of `x0`.
///
/// Starts at `t_min` rather than 0 so learned scores, which scale with
/// `1/std(t)`, stay finite.
pub fn forward_then_reverse_roundtrip(
    config: &SdeConfig,
    score_fn: &mut ScoreFn<'_>,
    x0: &Matrix,
    steps: usize,
) -> Result<Matrix> {
    config.validate()?;
    let xt = integrate_probability_flow(config, score_fn, x0, config.t_min, config.t_max, steps)?;
    integrate_probability_flow(config, score_fn, &xt, config.t_max, config.t_min, steps)
}
