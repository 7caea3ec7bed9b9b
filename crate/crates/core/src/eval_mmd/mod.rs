//! Unbiased maximum mean discrepancy, permutation calibration and the
//! few-shot evaluation protocol.

mod fewshot;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::embeddings::RbfKernel;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{rng, Matrix};

pub use fewshot::{fewshot_protocol, FewShotModel, FewShotResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MmdReport {
    pub mmd2_unbiased: f64,
    /// `sqrt(max(0, mmd2_unbiased))`.
    pub mmd: f64,
    pub h: f64,
    pub n: usize,
    pub m: usize,
    pub permutation_p: Option<f64>,
}

/// Sum of `k(x_i, x_j)` over `i != j`, reduced in row order.
fn off_diagonal_sum(kernel: &RbfKernel, x: &Matrix) -> f64 {
    let rows: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (0..x.rows()).filter(|&j| j != i).map(|j| kernel.eval(xi, x.row(j))).sum()
        })
        .collect();
    rows.iter().sum()
}

fn cross_sum(kernel: &RbfKernel, x: &Matrix, y: &Matrix) -> f64 {
    let rows: Vec<f64> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            y.iter_rows().map(|yj| kernel.eval(xi, yj)).sum()
        })
        .collect();
    rows.iter().sum()
}

/// Three-term unbiased estimator with diagonal terms excluded.
pub fn mmd_unbiased(kernel: &RbfKernel, x: &Matrix, y: &Matrix) -> Result<MmdReport> {
    let (n, m) = (x.rows(), y.rows());
    if n < 2 || m < 2 {
        return Err(Error::Validation(format!("MMD needs at least 2 samples per set, got {n} and {m}")));
    }
    if x.cols() != y.cols() {
        return Err(dim_err("mmd_unbiased", x.cols(), y.cols()));
    }
    let kxx = off_diagonal_sum(kernel, x) / (n * (n - 1)) as f64;
    let kyy = off_diagonal_sum(kernel, y) / (m * (m - 1)) as f64;
    let kxy = cross_sum(kernel, x, y) / (n * m) as f64;
    let mmd2 = kxx + kyy - 2.0 * kxy;
    Ok(MmdReport {
        mmd2_unbiased: mmd2,
        mmd: mmd2.max(0.0).sqrt(),
        h: kernel.h,
        n,
        m,
        permutation_p: None,
    })
}

/// Unbiased MMD^2 between the index sets `a` and `b` of a pooled kernel matrix.
fn mmd2_from_gram(k: &Matrix, a: &[usize], b: &[usize]) -> f64 {
    let within = |s: &[usize]| -> f64 {
        let mut t = 0.0;
        for (p, &i) in s.iter().enumerate() {
            let row = k.row(i);
            for (q, &j) in s.iter().enumerate() {
                if p != q {
                    t += row[j];
                }
            }
        }
        t / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &i in a {
        let row = k.row(i);
        cross += b.iter().map(|&j| row[j]).sum::<f64>();
    }
    within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64
}

/// Fraction of label permutations whose MMD^2 is at least the observed one.
pub fn permutation_test(kernel: &RbfKernel, x: &Matrix, y: &Matrix, rounds: usize, seed: u64) -> Result<f64> {
    if rounds < 100 {
        return Err(Error::Validation(format!("permutation test needs >= 100 rounds, got {rounds}")));
    }
    let (n, m) = (x.rows(), y.rows());
    if n < 2 || m < 2 {
        return Err(Error::Validation(format!("MMD needs at least 2 samples per set, got {n} and {m}")));
    }
    let z = Matrix::vconcat(&[x, y])?;
    let k = kernel.matrix(&z, &z)?;
    let idx: Vec<usize> = (0..n + m).collect();
    let observed = mmd2_from_gram(&k, &idx[..n], &idx[n..]);
    let exceed: usize = (0..rounds)
        .into_par_iter()
        .map(|r| {
            let mut perm = idx.clone();
            perm.shuffle(&mut rng::stream(seed, &[rng::tag("permutation"), r as u64]));
            usize::from(mmd2_from_gram(&k, &perm[..n], &perm[n..]) >= observed)
        })
        .sum();
    Ok(exceed as f64 / rounds as f64)
}
