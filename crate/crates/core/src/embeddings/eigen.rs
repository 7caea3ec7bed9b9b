//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use crate::error::{dim_err, Error, Result};
use crate::numerics::Matrix;

const MAX_SWEEPS: usize = 100;

/// Eigenpairs sorted by descending eigenvalue; `vectors` holds unit
/// eigenvectors as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.vectors.rows()).map(|i| self.vectors.get(i, k)).collect()
    }

    /// `sum_k values[k] v_k v_k^T` over the first `rank` pairs.
    pub fn reconstruct(&self, rank: usize) -> Matrix {
        let n = self.vectors.rows();
        let mut out = Matrix::zeros(n, n);
        for k in 0..rank {
            let v = self.vector(k);
            for i in 0..n {
                let row = out.row_mut(i);
                for j in 0..n {
                    row[j] += self.values[k] * v[i] * v[j];
                }
            }
        }
        out
    }

    /// `max_k |A v_k - lambda_k v_k|_2`.
    pub fn max_residual(&self, a: &Matrix) -> f64 {
        let av = a.matmul(&self.vectors).expect("square system");
        (0..self.values.len())
            .map(|k| {
                (0..a.rows())
                    .map(|i| (av.get(i, k) - self.values[k] * self.vectors.get(i, k)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Diagonalizes a symmetric matrix by Jacobi rotations.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(dim_err("symmetric_eigen", format!("square, {n} rows"), a.cols()));
    }
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-12 * scale {
                return Err(Error::Numeric(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            return Ok(sorted(m, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m.get(p, p), m.get(q, q));
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(Error::Numeric(format!("Jacobi did not converge in {MAX_SWEEPS} sweeps")))
}

fn sorted(m: Matrix, v: Matrix) -> SymmetricEigen {
    let n = m.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m.get(b, b).total_cmp(&m.get(a, a)));
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, k, v.get(i, src));
        }
    }
    SymmetricEigen {
        values: order.iter().map(|&k| m.get(k, k)).collect(),
        vectors,
    }
}
