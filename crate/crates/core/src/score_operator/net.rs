use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Activation, FourierFeatureMap, Matrix, Mlp, MlpSpec, MlpTape, ParameterStore, Rng};

/// A network `(cond, x, t) -> R^d` evaluated on a batch where row `i` of `x`
/// is paired with conditioning row `groups[i]` and time `t[i]`.
pub trait ScoreNet {
    type Tape;

    fn data_dim(&self) -> usize;
    fn cond_dim(&self) -> usize;
    fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()>;
    fn forward(&self, store: &ParameterStore, cond: &Matrix, groups: &[usize], x: &Matrix, t: &[f64])
        -> Result<Matrix>;
    fn forward_tape(
        &self,
        store: &ParameterStore,
        cond: &Matrix,
        groups: &[usize],
        x: &Matrix,
        t: &[f64],
    ) -> Result<(Matrix, Self::Tape)>;
    /// Accumulates parameter gradients and returns `(d cond, d x)`.
    fn backward(&self, store: &mut ParameterStore, tape: &Self::Tape, upstream: &Matrix) -> Result<(Matrix, Matrix)>;
}

pub(crate) fn check_batch(net_cond: usize, net_d: usize, cond: &Matrix, groups: &[usize], x: &Matrix, t: &[f64]) -> Result<()> {
    if cond.cols() != net_cond {
        return Err(dim_err("score_eval cond", net_cond, cond.cols()));
    }
    if x.cols() != net_d {
        return Err(dim_err("score_eval x", net_d, x.cols()));
    }
    if groups.len() != x.rows() || t.len() != x.rows() {
        return Err(dim_err(
            "score_eval rows",
            x.rows(),
            format!("{} groups, {} times", groups.len(), t.len()),
        ));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= cond.rows()) {
        return Err(Error::Validation(format!("group {g} has no conditioning row ({} rows)", cond.rows())));
    }
    Ok(())
}

/// Branch, trunk and output widths of a NOMAD operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NomadSpec {
    pub data_dim: usize,
    pub cond_dim: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Branch output width `p`.
    #[serde(default = "default_width")]
    pub branch_out: usize,
    /// Trunk output width `q`.
    #[serde(default = "default_width")]
    pub trunk_out: usize,
    /// Number of Fourier frequencies `m`; the trunk sees `2m` features.
    #[serde(default = "default_fourier")]
    pub fourier_features: usize,
    #[serde(default = "default_fourier_sigma")]
    pub fourier_sigma: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_width() -> usize {
    128
}
fn default_depth() -> usize {
    4
}
fn default_fourier() -> usize {
    64
}
fn default_fourier_sigma() -> f64 {
    10.0
}
fn default_activation() -> Activation {
    Activation::Gelu
}

impl NomadSpec {
    pub fn desk(data_dim: usize, cond_dim: usize) -> Self {
        Self {
            data_dim,
            cond_dim,
            width: default_width(),
            depth: default_depth(),
            branch_out: default_width(),
            trunk_out: default_width(),
            fourier_features: default_fourier(),
            fourier_sigma: default_fourier_sigma(),
            activation: default_activation(),
        }
    }

    pub fn branch(&self) -> MlpSpec {
        MlpSpec::uniform(self.cond_dim, self.width, self.depth, self.branch_out, self.activation)
    }

    pub fn trunk(&self) -> MlpSpec {
        MlpSpec::uniform(2 * self.fourier_features, self.width, self.depth, self.trunk_out, self.activation)
    }

    pub fn output(&self) -> MlpSpec {
        MlpSpec::uniform(self.branch_out + self.trunk_out, self.width, self.depth, self.data_dim, self.activation)
    }
}

/// `output([branch(u), trunk(fourier([x, t]))])`.
#[derive(Clone, Debug)]
pub struct Nomad {
    spec: NomadSpec,
    branch: Mlp,
    trunk: Mlp,
    output: Mlp,
    fourier: FourierFeatureMap,
}

pub struct NomadTape {
    groups: Vec<usize>,
    n_cond: usize,
    y: Matrix,
    branch: MlpTape,
    trunk: MlpTape,
    output: MlpTape,
}

impl Nomad {
    pub fn new(spec: NomadSpec) -> Result<Self> {
        if spec.data_dim == 0 || spec.cond_dim == 0 || spec.fourier_features == 0 {
            return Err(Error::Validation(format!("degenerate NOMAD spec {spec:?}")));
        }
        if !(spec.fourier_sigma > 0.0) {
            return Err(Error::Validation("Fourier sigma must be positive".into()));
        }
        Ok(Self {
            branch: Mlp::new("branch", spec.branch())?,
            trunk: Mlp::new("trunk", spec.trunk())?,
            output: Mlp::new("output", spec.output())?,
            fourier: FourierFeatureMap::new("fourier.B", spec.fourier_features, spec.data_dim + 1, spec.fourier_sigma),
            spec,
        })
    }

    pub fn spec(&self) -> &NomadSpec {
        &self.spec
    }

    fn trunk_input(x: &Matrix, t: &[f64]) -> Matrix {
        let d = x.cols();
        let mut y = Matrix::zeros(x.rows(), d + 1);
        for i in 0..x.rows() {
            let row = y.row_mut(i);
            row[..d].copy_from_slice(x.row(i));
            row[d] = t[i];
        }
        y
    }
}

impl ScoreNet for Nomad {
    type Tape = NomadTape;

    fn data_dim(&self) -> usize {
        self.spec.data_dim
    }

    fn cond_dim(&self) -> usize {
        self.spec.cond_dim
    }

    fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        self.fourier.init(store, rng)?;
        self.branch.init(store, rng)?;
        self.trunk.init(store, rng)?;
        self.output.init(store, rng)
    }

    fn forward(&self, store: &ParameterStore, cond: &Matrix, groups: &[usize], x: &Matrix, t: &[f64]) -> Result<Matrix> {
        check_batch(self.spec.cond_dim, self.spec.data_dim, cond, groups, x, t)?;
        let b = self.branch.forward(store, cond)?.select_rows(groups)?;
        let f = self.fourier.forward(store, &Self::trunk_input(x, t))?;
        let q = self.trunk.forward(store, &f)?;
        self.output.forward(store, &Matrix::hconcat(&b, &q)?)
    }

    fn forward_tape(
        &self,
        store: &ParameterStore,
        cond: &Matrix,
        groups: &[usize],
        x: &Matrix,
        t: &[f64],
    ) -> Result<(Matrix, NomadTape)> {
        check_batch(self.spec.cond_dim, self.spec.data_dim, cond, groups, x, t)?;
        let (b, branch) = self.branch.forward_tape(store, cond)?;
        let y = Self::trunk_input(x, t);
        let f = self.fourier.forward(store, &y)?;
        let (q, trunk) = self.trunk.forward_tape(store, &f)?;
        let (out, output) = self.output.forward_tape(store, &Matrix::hconcat(&b.select_rows(groups)?, &q)?)?;
        Ok((
            out,
            NomadTape {
                groups: groups.to_vec(),
                n_cond: cond.rows(),
                y,
                branch,
                trunk,
                output,
            },
        ))
    }

    fn backward(&self, store: &mut ParameterStore, tape: &NomadTape, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
        let dh = self.output.backward(store, &tape.output, upstream)?;
        let (db_rows, dq) = dh.split_cols(self.spec.branch_out)?;
        let df = self.trunk.backward(store, &tape.trunk, &dq)?;
        let dy = self.fourier.backward(store, &tape.y, &df)?;
        let (dx, _) = dy.split_cols(self.spec.data_dim)?;
        let mut db = Matrix::zeros(tape.n_cond, self.spec.branch_out);
        db.scatter_add_rows(&tape.groups, &db_rows)?;
        let dcond = self.branch.backward(store, &tape.branch, &db)?;
        Ok((dcond, dx))
    }
}
