use super::{rng, Matrix, ParameterStore, Rng};
use crate::error::{dim_err, Result};

/// Random Fourier feature embedding `y -> [sin(y B^T), cos(y B^T)]`.
///
/// `B` has shape `(m, d_in)` with i.i.d. `N(0, sigma^2)` entries, drawn once
/// and never trained. No `2*pi` factor is applied.
#[derive(Clone, Debug)]
pub struct FourierFeatureMap {
    name: String,
    n_freq: usize,
    d_in: usize,
    sigma: f64,
}

impl FourierFeatureMap {
    pub fn new(name: impl Into<String>, n_freq: usize, d_in: usize, sigma: f64) -> Self {
        Self {
            name: name.into(),
            n_freq,
            d_in,
            sigma,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_freq
    }

    /// Draws `B` and stores it as a frozen entry.
    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        let mut b = rng::standard_normal_matrix(self.n_freq, self.d_in, rng);
        b.scale(self.sigma);
        store.insert_frozen(&self.name, b)
    }

    fn projection(&self, store: &ParameterStore, y: &Matrix) -> Result<Matrix> {
        if y.cols() != self.d_in {
            return Err(dim_err("fourier_features", self.d_in, y.cols()));
        }
        let b = store.value(&self.name)?;
        y.matmul_t(b)
    }

    pub fn forward(&self, store: &ParameterStore, y: &Matrix) -> Result<Matrix> {
        let p = self.projection(store, y)?;
        let m = self.n_freq;
        let mut out = Matrix::zeros(y.rows(), 2 * m);
        for i in 0..y.rows() {
            let (pr, orow) = (p.row(i), out.row_mut(i));
            for k in 0..m {
                let (s, c) = pr[k].sin_cos();
                orow[k] = s;
                orow[m + k] = c;
            }
        }
        Ok(out)
    }

    /// Gradient with respect to `y` for an upstream gradient on the features.
    pub fn backward(&self, store: &ParameterStore, y: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        let p = self.projection(store, y)?;
        let m = self.n_freq;
        if upstream.shape() != (y.rows(), 2 * m) {
            return Err(dim_err(
                "fourier_features backward",
                format!("({}, {})", y.rows(), 2 * m),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut dp = Matrix::zeros(y.rows(), m);
        for i in 0..y.rows() {
            let (pr, ur) = (p.row(i), upstream.row(i));
            let drow = dp.row_mut(i);
            for k in 0..m {
                let (s, c) = pr[k].sin_cos();
                drow[k] = ur[k] * c - ur[m + k] * s;
            }
        }
        dp.matmul(store.value(&self.name)?)
    }
}

/// Standalone feature evaluation.
pub fn fourier_features(map: &FourierFeatureMap, store: &ParameterStore, y: &Matrix) -> Result<Matrix> {
    map.forward(store, y)
}
