use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Activation, FourierFeatureMap, Matrix, Mlp, MlpSpec, MlpTape, ParameterStore, Rng};
use crate::score_operator::{check_batch, ScoreNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentNetSpec {
    pub latent_dim: usize,
    pub cond_dim: usize,
    /// Outer block width; the inner blocks use half of it.
    pub width: usize,
    #[serde(default = "default_time_features")]
    pub time_features: usize,
    #[serde(default = "default_time_sigma")]
    pub time_sigma: f64,
}

fn default_time_features() -> usize {
    16
}
fn default_time_sigma() -> f64 {
    10.0
}

impl LatentNetSpec {
    /// Block widths `8 d_z` and `4 d_z`.
    pub fn scaled(latent_dim: usize, cond_dim: usize) -> Self {
        Self {
            latent_dim,
            cond_dim,
            width: 8 * latent_dim,
            time_features: default_time_features(),
            time_sigma: default_time_sigma(),
        }
    }

    fn context(&self) -> usize {
        self.cond_dim + 2 * self.time_features
    }

    fn inner(&self) -> usize {
        (self.width / 2).max(1)
    }

    fn block(input: usize, width: usize, output: usize, last: bool) -> MlpSpec {
        let fin = if last { Activation::Identity } else { Activation::LogSigmoid };
        MlpSpec::new(vec![input, width, output], Activation::LogSigmoid, fin)
    }
}

/// Two down blocks and two up blocks of 2-layer LogSigmoid MLPs. Every block
/// also sees the context `[u, fourier(t)]`; the first down block's output
/// skips to the last up block.
#[derive(Clone, Debug)]
pub struct LatentScoreNet {
    spec: LatentNetSpec,
    down1: Mlp,
    down2: Mlp,
    up1: Mlp,
    up2: Mlp,
    time: FourierFeatureMap,
}

pub struct LatentTape {
    groups: Vec<usize>,
    n_cond: usize,
    down1: MlpTape,
    down2: MlpTape,
    up1: MlpTape,
    up2: MlpTape,
}

fn cat(parts: &[&Matrix]) -> Result<Matrix> {
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out = Matrix::hconcat(&out, p)?;
    }
    Ok(out)
}

fn split(m: &Matrix, widths: &[usize]) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(widths.len());
    let mut rest = m.clone();
    for &w in &widths[..widths.len() - 1] {
        let (a, b) = rest.split_cols(w)?;
        out.push(a);
        rest = b;
    }
    out.push(rest);
    Ok(out)
}

impl LatentScoreNet {
    pub fn new(spec: LatentNetSpec) -> Result<Self> {
        if spec.latent_dim == 0 || spec.cond_dim == 0 || spec.width == 0 || spec.time_features == 0 {
            return Err(Error::Validation(format!("degenerate latent net spec {spec:?}")));
        }
        if !(spec.time_sigma > 0.0) {
            return Err(Error::Validation("time Fourier sigma must be positive".into()));
        }
        let (w, h, e, d) = (spec.width, spec.inner(), spec.context(), spec.latent_dim);
        Ok(Self {
            down1: Mlp::new("latent.down1", LatentNetSpec::block(d + e, w, w, false))?,
            down2: Mlp::new("latent.down2", LatentNetSpec::block(w + e, h, h, false))?,
            up1: Mlp::new("latent.up1", LatentNetSpec::block(h + e, w, w, false))?,
            up2: Mlp::new("latent.up2", LatentNetSpec::block(2 * w + e, w, d, true))?,
            time: FourierFeatureMap::new("latent.time.B", spec.time_features, 1, spec.time_sigma),
            spec,
        })
    }

    pub fn spec(&self) -> &LatentNetSpec {
        &self.spec
    }

    fn context(&self, store: &ParameterStore, cond: &Matrix, groups: &[usize], t: &[f64]) -> Result<Matrix> {
        let tf = self.time.forward(store, &Matrix::column(t))?;
        Matrix::hconcat(&cond.select_rows(groups)?, &tf)
    }
}

impl ScoreNet for LatentScoreNet {
    type Tape = LatentTape;

    fn data_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn cond_dim(&self) -> usize {
        self.spec.cond_dim
    }

    fn init(&self, store: &mut ParameterStore, rng: &mut Rng) -> Result<()> {
        self.time.init(store, rng)?;
        for m in [&self.down1, &self.down2, &self.up1, &self.up2] {
            m.init(store, rng)?;
        }
        Ok(())
    }

    fn forward(&self, store: &ParameterStore, cond: &Matrix, groups: &[usize], x: &Matrix, t: &[f64]) -> Result<Matrix> {
        check_batch(self.spec.cond_dim, self.spec.latent_dim, cond, groups, x, t)?;
        let e = self.context(store, cond, groups, t)?;
        let h1 = self.down1.forward(store, &cat(&[x, &e])?)?;
        let h2 = self.down2.forward(store, &cat(&[&h1, &e])?)?;
        let h3 = self.up1.forward(store, &cat(&[&h2, &e])?)?;
        self.up2.forward(store, &cat(&[&h3, &h1, &e])?)
    }

    fn forward_tape(
        &self,
        store: &ParameterStore,
        cond: &Matrix,
        groups: &[usize],
        x: &Matrix,
        t: &[f64],
    ) -> Result<(Matrix, LatentTape)> {
        check_batch(self.spec.cond_dim, self.spec.latent_dim, cond, groups, x, t)?;
        let e = self.context(store, cond, groups, t)?;
        let (h1, down1) = self.down1.forward_tape(store, &cat(&[x, &e])?)?;
        let (h2, down2) = self.down2.forward_tape(store, &cat(&[&h1, &e])?)?;
        let (h3, up1) = self.up1.forward_tape(store, &cat(&[&h2, &e])?)?;
        let (out, up2) = self.up2.forward_tape(store, &cat(&[&h3, &h1, &e])?)?;
        Ok((
            out,
            LatentTape {
                groups: groups.to_vec(),
                n_cond: cond.rows(),
                down1,
                down2,
                up1,
                up2,
            },
        ))
    }

    fn backward(&self, store: &mut ParameterStore, tape: &LatentTape, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
        let (w, h, e, d) = (self.spec.width, self.spec.inner(), self.spec.context(), self.spec.latent_dim);
        let g4 = split(&self.up2.backward(store, &tape.up2, upstream)?, &[w, w, e])?;
        let g3 = split(&self.up1.backward(store, &tape.up1, &g4[0])?, &[h, e])?;
        let g2 = split(&self.down2.backward(store, &tape.down2, &g3[0])?, &[w, e])?;
        let mut dh1 = g2[0].clone();
        dh1.add_assign(&g4[1])?;
        let g1 = split(&self.down1.backward(store, &tape.down1, &dh1)?, &[d, e])?;
        let mut de = g1[1].clone();
        for g in [&g2[1], &g3[1], &g4[2]] {
            de.add_assign(g)?;
        }
        let (du_rows, _) = de.split_cols(self.spec.cond_dim)?;
        let mut dcond = Matrix::zeros(tape.n_cond, self.spec.cond_dim);
        dcond.scatter_add_rows(&tape.groups, &du_rows)?;
        Ok((dcond, g1[0].clone()))
    }
}
