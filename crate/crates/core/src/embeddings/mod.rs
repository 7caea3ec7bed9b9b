//! Distribution-to-vector embeddings.
//!
//! `KmePca` projects the centered kernel mean embedding of a sample set onto
//! the leading RKHS principal directions of a fixed reference family.
//! `Prototype` averages an encoder's latent means over the sample set.

mod eigen;
mod kernel;
mod kme;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use kernel::{kme_inner, median_bandwidth, RbfKernel, MEDIAN_SUBSAMPLE};
pub use kme::{build_kme_basis, embed_kme, KmeBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    KmePca,
    Prototype,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector {
    pub u: Vec<f64>,
    pub method: EmbeddingMethod,
    /// Number of samples the embedding was computed from.
    pub k: usize,
}

impl EmbeddingVector {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn as_row(&self) -> Matrix {
        Matrix::from_vec(1, self.u.len(), self.u.clone()).expect("row shape")
    }
}

/// Mean of `encoder_fn` over the rows of `batch`.
pub fn embed_prototype(
    encoder_fn: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
    batch: &Matrix,
) -> Result<EmbeddingVector> {
    if batch.rows() == 0 {
        return Err(Error::Validation("prototype embedding of an empty batch".into()));
    }
    let z = encoder_fn(batch)?;
    if z.rows() != batch.rows() {
        return Err(crate::error::dim_err("embed_prototype", batch.rows(), z.rows()));
    }
    Ok(EmbeddingVector {
        u: z.column_means().into_vec(),
        method: EmbeddingMethod::Prototype,
        k: batch.rows(),
    })
}
