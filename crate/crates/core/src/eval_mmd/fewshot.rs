use serde::Serialize;

use super::{mmd_unbiased, MmdReport};
use crate::embeddings::{median_bandwidth, EmbeddingMethod, RbfKernel};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A trained generator that can be pointed at a distribution through samples.
pub trait FewShotModel {
    fn method(&self) -> EmbeddingMethod;
    /// Embedding of the distribution the rows of `samples` came from.
    fn embed(&mut self, samples: &Matrix) -> Result<Vec<f64>>;
    fn generate(&mut self, u: &[f64], n: usize, seed: u64) -> Result<Matrix>;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FewShotResult {
    pub k: usize,
    pub method: EmbeddingMethod,
    pub mmd: MmdReport,
    pub gen_mean: Vec<f64>,
    pub gen_cov_trace: f64,
    pub true_cov_trace: f64,
}

/// For each `K`, embeds the first `K` rows of `pool`, generates `n_gen`
/// samples with a shared seed and compares them with `fresh` under a kernel
/// whose bandwidth is the median heuristic on `fresh`.
pub fn fewshot_protocol(
    model: &mut dyn FewShotModel,
    pool: &Matrix,
    fresh: &Matrix,
    ladder: &[usize],
    n_gen: usize,
    seed: u64,
) -> Result<Vec<FewShotResult>> {
    let kernel = RbfKernel::new(median_bandwidth(&[fresh])?)?;
    let true_cov_trace = fresh.covariance().trace();
    let mut out = Vec::with_capacity(ladder.len());
    for &k in ladder {
        if k == 0 || k > pool.rows() {
            return Err(Error::Validation(format!("K = {k} outside 1..={}", pool.rows())));
        }
        let idx: Vec<usize> = (0..k).collect();
        let u = model.embed(&pool.select_rows(&idx)?)?;
        let gen = model.generate(&u, n_gen, seed)?;
        out.push(FewShotResult {
            k,
            method: model.method(),
            mmd: mmd_unbiased(&kernel, &gen, fresh)?,
            gen_mean: gen.column_means().into_vec(),
            gen_cov_trace: gen.covariance().trace(),
            true_cov_trace,
        });
    }
    Ok(out)
}
