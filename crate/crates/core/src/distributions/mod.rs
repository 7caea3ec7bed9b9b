//! Task families: lattice mixtures in the plane and double-digit images.

mod digits;
mod glyphs;
mod idx;
mod lattice;

use crate::numerics::Matrix;

pub use digits::{digit_pair_split, make_double_digit, resize_bilinear, DigitPairSpec, DigitPool, Split};
pub use glyphs::render_synthetic_digits;
pub use idx::{load_idx, IdxData, IdxFile};
pub use lattice::{
    generate_family, lattice_domain, sample_lattice_mixture, FamilySplit, LatticeDomain, LatticeMixtureSpec, Pattern,
};

/// `n x d` samples from one distribution, tagged with where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub data: Matrix,
    pub family_id: String,
    pub seed: u64,
}

impl SampleBatch {
    pub fn new(data: Matrix, family_id: impl Into<String>, seed: u64) -> Self {
        Self {
            data,
            family_id: family_id.into(),
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}
