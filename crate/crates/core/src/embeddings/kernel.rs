use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::numerics::Matrix;

/// Pooled points used by [`median_bandwidth`].
pub const MEDIAN_SUBSAMPLE: usize = 2000;

/// Dimension above which squared distances go through a GEMM.
const GEMM_DIM: usize = 16;

/// `k(x, y) = exp(-|x - y|^2 / (2 h^2))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RbfKernel {
    pub h: f64,
}

impl RbfKernel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Validation(format!("kernel bandwidth must be positive, got {h}")));
        }
        Ok(Self { h })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.h * self.h)).exp()
    }

    /// `K[i][j] = k(x_i, y_j)`.
    pub fn matrix(&self, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        let mut d2 = sq_dists(x, y)?;
        let c = -1.0 / (2.0 * self.h * self.h);
        d2.map_inplace(|v| (c * v).exp());
        Ok(d2)
    }

    /// `sum_ij k(x_i, y_j)`.
    pub fn sum(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        Ok(self.matrix(x, y)?.sum())
    }
}

/// Pairwise squared Euclidean distances, clamped at zero.
pub(crate) fn sq_dists(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.cols() != y.cols() {
        return Err(dim_err("sq_dists", x.cols(), y.cols()));
    }
    let d = x.cols();
    let mut out = Matrix::zeros(x.rows(), y.rows());
    if d <= GEMM_DIM {
        out.as_mut_slice()
            .par_chunks_mut(y.rows().max(1))
            .enumerate()
            .for_each(|(i, row)| {
                let xi = x.row(i);
                for (j, o) in row.iter_mut().enumerate() {
                    *o = xi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                }
            });
        return Ok(out);
    }
    let xn: Vec<f64> = x.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let yn: Vec<f64> = y.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let cross = x.matmul_t(y)?;
    for i in 0..x.rows() {
        let (cr, orow) = (cross.row(i), out.row_mut(i));
        for j in 0..yn.len() {
            orow[j] = (xn[i] + yn[j] - 2.0 * cr[j]).max(0.0);
        }
    }
    Ok(out)
}

/// Empirical inner product of two kernel mean embeddings: `(1 / nm) sum_ij k(x_i, y_j)`.
pub fn kme_inner(kernel: &RbfKernel, p: &Matrix, q: &Matrix) -> Result<f64> {
    if p.rows() == 0 || q.rows() == 0 {
        return Err(Error::Validation("kernel mean embedding of an empty batch".into()));
    }
    Ok(kernel.sum(p, q)? / (p.rows() * q.rows()) as f64)
}

/// Median pairwise distance over the pooled batches. Pools larger than
/// [`MEDIAN_SUBSAMPLE`] are thinned to evenly spaced rows.
pub fn median_bandwidth(batches: &[&Matrix]) -> Result<f64> {
    let total: usize = batches.iter().map(|b| b.rows()).sum();
    if total < 2 {
        return Err(Error::Validation(format!("median bandwidth needs 2 points, got {total}")));
    }
    let d = batches[0].cols();
    if let Some(b) = batches.iter().find(|b| b.cols() != d) {
        return Err(dim_err("median_bandwidth", d, b.cols()));
    }
    let take = total.min(MEDIAN_SUBSAMPLE);
    let mut pooled = Matrix::zeros(take, d);
    let mut next = 0usize;
    for (k, r) in batches.iter().flat_map(|b| b.iter_rows()).enumerate() {
        // row k is kept when it is the first at or past the next even stop
        if next < take && k * take >= next * total {
            pooled.row_mut(next).copy_from_slice(r);
            next += 1;
        }
    }
    let d2 = sq_dists(&pooled, &pooled)?;
    let mut dists: Vec<f64> = Vec::with_capacity(take * (take - 1) / 2);
    for i in 0..take {
        dists.extend(d2.row(i)[i + 1..].iter().map(|v| v.sqrt()));
    }
    let m = dists.len();
    let (_, hi, _) = dists.select_nth_unstable_by(m / 2, f64::total_cmp);
    let hi = *hi;
    let med = if m % 2 == 1 {
        hi
    } else {
        let lo = dists[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if !(med > 0.0) {
        return Err(Error::DegenerateData("median pairwise distance is zero".into()));
    }
    Ok(med)
}
