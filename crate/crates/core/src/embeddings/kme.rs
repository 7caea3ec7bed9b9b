//! RKHS principal components of kernel mean embeddings.
//!
//! With `G[i][j] = <mu_i, mu_j>` over `N` reference sets, the centered Gram is
//! `M[i][j] = G[i][j] + mean(G) - rowmean_i - rowmean_j`. Its eigenpairs
//! `M a = (N lambda) a` give principal directions `sum_j a_j (mu_j - mu_bar)`;
//! scaling `a` by `1 / sqrt(N lambda)` makes those directions unit-norm, and
//! the embedding of a new set `t` is its centered inner product with each.

use rayon::prelude::*;

use super::{symmetric_eigen, EmbeddingMethod, EmbeddingVector, RbfKernel, SymmetricEigen};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Checkpoint, Matrix};

/// Tolerance on negative eigenvalues of the centered Gram.
const PSD_TOL: f64 = 1e-10;
/// Smallest admissible `lambda_k` among kept components.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct KmeBasis {
    pub kernel: RbfKernel,
    pub reference: Vec<Matrix>,
    pub gram: Matrix,
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
    /// Full spectrum of the centered Gram (eigenvalues are `N lambda`).
    pub spectrum: SymmetricEigen,
    /// `N x N_x`; column `k` is `a_k / sqrt(N lambda_k)`.
    pub alphas: Matrix,
}

impl KmeBasis {
    pub fn n_reference(&self) -> usize {
        self.reference.len()
    }

    pub fn n_components(&self) -> usize {
        self.alphas.cols()
    }

    pub fn dim(&self) -> usize {
        self.reference[0].cols()
    }

    /// Kept eigenvalues `N lambda_k`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum.values[..self.n_components()]
    }

    pub fn centered_gram(&self) -> Matrix {
        center(&self.gram, &self.row_means, self.grand_mean)
    }

    /// Inner products of a set with every reference set.
    pub fn inner_products(&self, batch: &Matrix) -> Result<Vec<f64>> {
        if batch.cols() != self.dim() {
            return Err(dim_err("embed_kme", self.dim(), batch.cols()));
        }
        self.reference
            .par_iter()
            .map(|r| super::kme_inner(&self.kernel, batch, r))
            .collect()
    }

    /// Embedding from precomputed inner products `c_j = <mu_t, mu_j>`.
    pub fn project(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n_reference();
        let c_mean = c.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = (0..n)
            .map(|j| c[j] + self.grand_mean - self.row_means[j] - c_mean)
            .collect();
        (0..self.n_components())
            .map(|k| (0..n).map(|j| self.alphas.get(j, k) * centered[j]).sum())
            .collect()
    }

    pub fn embed(&self, batch: &Matrix) -> Result<EmbeddingVector> {
        if batch.rows() == 0 {
            return Err(Error::Validation("kernel mean embedding of an empty batch".into()));
        }
        let c = self.inner_products(batch)?;
        Ok(EmbeddingVector {
            u: self.project(&c),
            method: EmbeddingMethod::KmePca,
            k: batch.rows(),
        })
    }

    /// `N_x x N`; column `i` is `sqrt(N lambda_k) a_k[i]`, the embedding of
    /// reference set `i` read off the eigenvectors.
    pub fn reference_projection(&self) -> Matrix {
        let (n, nx) = (self.n_reference(), self.n_components());
        let mut out = Matrix::zeros(nx, n);
        for k in 0..nx {
            let s = self.spectrum.values[k].sqrt();
            for i in 0..n {
                out.set(k, i, s * self.spectrum.vectors.get(i, k));
            }
        }
        out
    }

    pub fn push_to(&self, ck: &mut Checkpoint, prefix: &str) -> Result<()> {
        let n = self.n_reference();
        ck.push(format!("{prefix}bandwidth"), Matrix::filled(1, 1, self.kernel.h))?;
        ck.push(format!("{prefix}n_components"), Matrix::filled(1, 1, self.n_components() as f64))?;
        for (i, r) in self.reference.iter().enumerate() {
            ck.push(format!("{prefix}ref/{i:05}"), r.clone())?;
        }
        ck.push(format!("{prefix}gram"), self.gram.clone())?;
        ck.push(format!("{prefix}row_means"), Matrix::from_vec(1, n, self.row_means.clone())?)?;
        ck.push(format!("{prefix}grand_mean"), Matrix::filled(1, 1, self.grand_mean))?;
        ck.push(
            format!("{prefix}eigenvalues"),
            Matrix::from_vec(1, n, self.spectrum.values.clone())?,
        )?;
        ck.push(format!("{prefix}eigenvectors"), self.spectrum.vectors.clone())?;
        ck.push(format!("{prefix}alphas"), self.alphas.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint, prefix: &str) -> Result<Self> {
        let scalar = |name: &str| -> Result<f64> { Ok(ck.require(&format!("{prefix}{name}"))?.get(0, 0)) };
        let reference: Vec<Matrix> = ck
            .with_prefix(&format!("{prefix}ref/"))
            .map(|(_, m)| m.clone())
            .collect::<Vec<_>>();
        let basis = Self {
            kernel: RbfKernel::new(scalar("bandwidth")?)?,
            reference,
            gram: ck.require(&format!("{prefix}gram"))?.clone(),
            row_means: ck.require(&format!("{prefix}row_means"))?.as_slice().to_vec(),
            grand_mean: scalar("grand_mean")?,
            spectrum: SymmetricEigen {
                values: ck.require(&format!("{prefix}eigenvalues"))?.as_slice().to_vec(),
                vectors: ck.require(&format!("{prefix}eigenvectors"))?.clone(),
            },
            alphas: ck.require(&format!("{prefix}alphas"))?.clone(),
        };
        let n = basis.n_reference();
        if n == 0 || basis.gram.shape() != (n, n) || basis.alphas.rows() != n || basis.row_means.len() != n {
            return Err(Error::Data(format!("inconsistent kernel basis under `{prefix}`")));
        }
        if basis.n_components() != scalar("n_components")? as usize {
            return Err(Error::Data(format!("kernel basis under `{prefix}` lost components")));
        }
        Ok(basis)
    }
}

fn center(gram: &Matrix, row_means: &[f64], grand_mean: f64) -> Matrix {
    let n = gram.rows();
    let mut m = gram.clone();
    for i in 0..n {
        let row = m.row_mut(i);
        for j in 0..n {
            row[j] += grand_mean - row_means[i] - row_means[j];
        }
    }
    m
}

/// Gram of pairwise embedding inner products, assembled over the upper triangle.
fn gram_matrix(kernel: &RbfKernel, sets: &[Matrix]) -> Result<Matrix> {
    let n = sets.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| super::kme_inner(kernel, &sets[i], &sets[j]))
        .collect::<Result<_>>()?;
    let mut g = Matrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        g.set(i, j, v);
        g.set(j, i, v);
    }
    Ok(g)
}

/// Builds the reference Gram, centers it and keeps the top `n_x` components.
pub fn build_kme_basis(kernel: &RbfKernel, reference: &[Matrix], n_x: usize) -> Result<KmeBasis> {
    let n = reference.len();
    if n == 0 || n_x == 0 || n_x > n {
        return Err(Error::Validation(format!("need 1 <= N_x <= N, got N_x = {n_x}, N = {n}")));
    }
    let d = reference[0].cols();
    for (i, r) in reference.iter().enumerate() {
        if r.cols() != d {
            return Err(dim_err("build_kme_basis", d, format!("{} in reference {i}", r.cols())));
        }
        if r.rows() == 0 {
            return Err(Error::Validation(format!("reference set {i} is empty")));
        }
    }
    let gram = gram_matrix(kernel, reference)?;
    let row_means: Vec<f64> = gram.iter_rows().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    let centered = center(&gram, &row_means, grand_mean);
    let spectrum = symmetric_eigen(&centered)?;
    let top = spectrum.values[0].abs().max(1.0);
    if let Some(&worst) = spectrum.values.last() {
        if worst < -PSD_TOL * top {
            return Err(Error::Numeric(format!("centered Gram is not PSD: eigenvalue {worst:e}")));
        }
    }
    let mut alphas = Matrix::zeros(n, n_x);
    for k in 0..n_x {
        let lambda = spectrum.values[k] / n as f64;
        if lambda <= RANK_TOL {
            return Err(Error::Rank { index: k, value: lambda });
        }
        let s = 1.0 / spectrum.values[k].sqrt();
        for i in 0..n {
            alphas.set(i, k, s * spectrum.vectors.get(i, k));
        }
    }
    Ok(KmeBasis {
        kernel: *kernel,
        reference: reference.to_vec(),
        gram,
        row_means,
        grand_mean,
        spectrum,
        alphas,
    })
}

pub fn embed_kme(basis: &KmeBasis, batch: &Matrix) -> Result<EmbeddingVector> {
    basis.embed(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{generate_family, sample_lattice_mixture, FamilySplit};
    use crate::numerics::rng;

    fn lattice_refs(n: usize, per: usize) -> Vec<Matrix> {
        generate_family(FamilySplit::Train, n, 1)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, s)| sample_lattice_mixture(s, per, i as u64).unwrap().data)
            .collect()
    }

    #[test]
    fn mirrored_pair() {
        let k = RbfKernel::new(1.0).unwrap();
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.5, 0.5]]).unwrap();
        let b = a.map(|v| -v);
        let basis = build_kme_basis(&k, &[a.clone(), b.clone()], 1).unwrap();
        let v = basis.spectrum.vector(0);
        assert!((v[0] + v[1]).abs() < 1e-12 && (v[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        let (ua, ub) = (basis.embed(&a).unwrap().u[0], basis.embed(&b).unwrap().u[0]);
        assert!((ua + ub).abs() < 1e-12 && ua.abs() > 0.0);
    }

    #[test]
    fn residual_reconstruction_and_projection_paths() {
        let k = RbfKernel::new(1.0).unwrap();
        let refs = lattice_refs(20, 40);
        let basis = build_kme_basis(&k, &refs, 10).unwrap();
        let m = basis.centered_gram();
        assert!(basis.spectrum.max_residual(&m) < 1e-8);
        assert!(basis.spectrum.reconstruct(20).max_abs_diff(&m).unwrap() < 1e-8);
        assert!(basis.spectrum.values.iter().all(|&v| v >= -1e-10));
        assert!(basis.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        let direct = basis.reference_projection();
        for (i, r) in refs.iter().enumerate() {
            let u = basis.embed(r).unwrap().u;
            for kk in 0..10 {
                assert!((u[kk] - direct.get(kk, i)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn full_rank_request_hits_centering_null_space() {
        let k = RbfKernel::new(1.0).unwrap();
        let refs = lattice_refs(6, 20);
        assert!(matches!(build_kme_basis(&k, &refs, 6), Err(Error::Rank { index: 5, .. })));
        assert!(build_kme_basis(&k, &refs, 7).is_err());
    }

    #[test]
    fn embedding_is_order_invariant_and_linear() {
        let k = RbfKernel::new(1.0).unwrap();
        let refs = lattice_refs(12, 30);
        let basis = build_kme_basis(&k, &refs, 6).unwrap();
        let x = refs[3].clone();
        let rev: Vec<usize> = (0..x.rows()).rev().collect();
        let u = basis.embed(&x).unwrap().u;
        let ur = basis.embed(&x.select_rows(&rev).unwrap()).unwrap().u;
        assert!(u.iter().zip(&ur).all(|(a, b)| (a - b).abs() < 1e-12));
        // an equal-size union has the averaged mean embedding, and projection is affine
        let mix = Matrix::vconcat(&[&refs[0], &refs[1]]).unwrap();
        let (u0, u1, um) = (
            basis.embed(&refs[0]).unwrap().u,
            basis.embed(&refs[1]).unwrap().u,
            basis.embed(&mix).unwrap().u,
        );
        for kk in 0..6 {
            assert!((um[kk] - 0.5 * (u0[kk] + u1[kk])).abs() < 1e-10);
        }
    }

    #[test]
    fn halves_of_one_large_batch_agree() {
        let k = RbfKernel::new(1.0).unwrap();
        let fam = generate_family(FamilySplit::Train, 10, 2).unwrap();
        let refs: Vec<Matrix> = fam
            .iter()
            .enumerate()
            .map(|(i, s)| sample_lattice_mixture(s, 200, i as u64).unwrap().data)
            .collect();
        let basis = build_kme_basis(&k, &refs, 5).unwrap();
        let big = sample_lattice_mixture(&fam[0], 4000, 99).unwrap().data;
        let idx: Vec<usize> = (0..4000).collect();
        let a = basis.embed(&big.select_rows(&idx[..2000]).unwrap()).unwrap().u;
        let b = basis.embed(&big.select_rows(&idx[2000..]).unwrap()).unwrap().u;
        let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 0.1, "{}", diff / norm);
    }

    #[test]
    fn checkpoint_round_trip() {
        let k = RbfKernel::new(0.8).unwrap();
        let refs: Vec<Matrix> = (0..5)
            .map(|i| rng::standard_normal_matrix(8, 2, &mut rng::stream(i, &[])))
            .collect();
        let basis = build_kme_basis(&k, &refs, 3).unwrap();
        let mut ck = Checkpoint::new();
        basis.push_to(&mut ck, "kme/").unwrap();
        let back = KmeBasis::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), "kme/").unwrap();
        assert_eq!(back, basis);
    }
}
