//! Dense multi-layer perceptrons with hand-written reverse mode.
//!
//! Layer `l` computes `z = a W + b` with `W: (in, out)` and `b: (1, out)`,
//! then applies the hidden activation (or `final_activation` on the last
//! layer). Parameters live in a [`ParameterStore`] under
//! `"{prefix}.{l}.w"` / `"{prefix}.{l}.b"`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{gemm, Activation, Matrix, ParameterStore, Rng};
use crate::error::{dim_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub final_activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, final_activation: Activation) -> Self {
        Self {
            widths,
            activation,
            final_activation,
        }
    }

    /// `depth` linear layers of width `hidden` between `input` and `output`.
    pub fn uniform(input: usize, hidden: usize, depth: usize, output: usize, act: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        widths.push(output);
        Self::new(widths, act, Activation::Identity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Validation(format!(
                "an MLP needs at least 2 widths, got {}",
                self.widths.len()
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Validation(format!("MLP widths must be positive: {:?}", self.widths)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    prefix: String,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpTape {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            prefix: prefix.into(),
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        for (l, w) in self.spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            store.insert(&self.weight_name(l), Matrix::from_vec(fan_in, fan_out, data)?)?;
            store.insert(&self.bias_name(l), Matrix::zeros(1, fan_out))?;
        }
        Ok(())
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.spec.n_layers() {
            self.spec.final_activation
        } else {
            self.spec.activation
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(dim_err(
                "mlp_forward",
                format!("{} input columns", self.input_dim()),
                x.cols(),
            ));
        }
        Ok(())
    }

    fn affine(&self, store: &ParameterStore, layer: usize, a: &Matrix) -> Result<Matrix> {
        let w = store.value(&self.weight_name(layer))?;
        let b = store.value(&self.bias_name(layer))?;
        if w.rows() != a.cols() || b.cols() != w.cols() {
            return Err(dim_err(
                "mlp_forward",
                format!("weight with {} rows", a.cols()),
                format!("{:?}", w.shape()),
            ));
        }
        let mut z = Matrix::zeros(a.rows(), w.cols());
        for i in 0..z.rows() {
            z.row_mut(i).copy_from_slice(b.as_slice());
        }
        gemm(1.0, a, false, w, false, 1.0, &mut z)?;
        Ok(z)
    }

    pub fn forward(&self, store: &ParameterStore, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in 0..self.spec.n_layers() {
            let mut z = self.affine(store, l, &a)?;
            let act = self.activation_for(l);
            if act != Activation::Identity {
                z.map_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_tape(&self, store: &ParameterStore, x: &Matrix) -> Result<(Matrix, MlpTape)> {
        self.check_input(x)?;
        let n = self.spec.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = x.clone();
        for l in 0..n {
            let z = self.affine(store, l, &a)?;
            let act = self.activation_for(l);
            let next = if act == Activation::Identity {
                z.clone()
            } else {
                z.map(|v| act.apply(v))
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok((a, MlpTape { inputs, pre }))
    }

    /// Accumulates parameter gradients into `store` and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParameterStore, tape: &MlpTape, upstream: &Matrix) -> Result<Matrix> {
        let n = self.spec.n_layers();
        let last = &tape.pre[n - 1];
        if upstream.shape() != last.shape() {
            return Err(dim_err(
                "mlp_backward",
                format!("{:?}", last.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut delta = upstream.clone();
        apply_derivative(&mut delta, &tape.pre[n - 1], self.activation_for(n - 1));
        for l in (0..n).rev() {
            let a = &tape.inputs[l];
            {
                let wp = store.get_mut(&self.weight_name(l))?;
                gemm(1.0, a, true, &delta, false, 1.0, &mut wp.grad)?;
            }
            {
                let bp = store.get_mut(&self.bias_name(l))?;
                let g = bp.grad.as_mut_slice();
                for r in delta.iter_rows() {
                    for (gi, di) in g.iter_mut().zip(r) {
                        *gi += di;
                    }
                }
            }
            let w = store.value(&self.weight_name(l))?;
            let mut da = Matrix::zeros(delta.rows(), w.rows());
            gemm(1.0, &delta, false, w, true, 0.0, &mut da)?;
            if l > 0 {
                apply_derivative(&mut da, &tape.pre[l - 1], self.activation_for(l - 1));
            }
            delta = da;
        }
        Ok(delta)
    }
}

fn apply_derivative(delta: &mut Matrix, pre: &Matrix, act: Activation) {
    if act == Activation::Identity {
        return;
    }
    for (d, &z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        *d *= act.derivative(z);
    }
}

/// Forward pass of `mlp` on `input`.
pub fn mlp_forward(mlp: &Mlp, params: &ParameterStore, input: &Matrix) -> Result<Matrix> {
    mlp.forward(params, input)
}

/// Recomputes the forward pass, accumulates weight gradients for `upstream`
/// and returns the input gradient.
pub fn mlp_backward(mlp: &Mlp, params: &mut ParameterStore, input: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    let (_, tape) = mlp.forward_tape(params, input)?;
    mlp.backward(params, &tape, upstream)
}
