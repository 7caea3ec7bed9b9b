//! Central finite-difference oracle for hand-written backward passes.

use rand::seq::index::sample;

use super::{rng, Matrix, ParameterStore};
use crate::error::Result;

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric, REL_FLOOR);
        if e > self.max_rel_err || self.worst.is_empty() {
            self.max_rel_err = self.max_rel_err.max(e);
            if e >= self.max_rel_err {
                self.worst = format!("{} (analytic {analytic:e}, numeric {numeric:e})", label());
            }
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Compares gradients already accumulated in `analytic` against central
/// differences of `loss`, probing at most `per_param` coordinates of every
/// trainable entry.
pub fn check_parameters(
    analytic: &ParameterStore,
    loss: &dyn Fn(&ParameterStore) -> Result<f64>,
    h: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = analytic.clone();
    let names: Vec<String> = analytic
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_owned())
        .collect();
    for (pi, name) in names.iter().enumerate() {
        let len = analytic.value(name)?.as_slice().len();
        let mut r = rng::stream(seed, &[pi as u64]);
        let idx: Vec<usize> = if len <= per_param {
            (0..len).collect()
        } else {
            sample(&mut r, len, per_param).into_vec()
        };
        for i in idx {
            let orig = analytic.value(name)?.as_slice()[i];
            probe.get_mut(name)?.value.as_mut_slice()[i] = orig + h;
            let fp = loss(&probe)?;
            probe.get_mut(name)?.value.as_mut_slice()[i] = orig - h;
            let fm = loss(&probe)?;
            probe.get_mut(name)?.value.as_mut_slice()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.grad(name)?.as_slice()[i];
            report.record(|| format!("{name}[{i}]"), a, numeric);
        }
    }
    Ok(report)
}

/// Compares an analytic input gradient against central differences of `loss`.
pub fn check_input(
    input: &Matrix,
    analytic: &Matrix,
    loss: &dyn Fn(&Matrix) -> Result<f64>,
    h: f64,
    label: &str,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut x = input.clone();
    for i in 0..input.as_slice().len() {
        let orig = input.as_slice()[i];
        x.as_mut_slice()[i] = orig + h;
        let fp = loss(&x)?;
        x.as_mut_slice()[i] = orig - h;
        let fm = loss(&x)?;
        x.as_mut_slice()[i] = orig;
        report.record(
            || format!("{label}[{i}]"),
            analytic.as_slice()[i],
            (fp - fm) / (2.0 * h),
        );
    }
    Ok(report)
}

/// `sum(a .* b)`; turns a matrix output into a scalar loss with a fixed upstream.
pub fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}
