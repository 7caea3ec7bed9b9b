//! Four-component uniform mixtures on a 6 x 6 lattice over `[-3, 3]^2`.
//!
//! Cell `(r, c)` spans `[c - 3, c - 2] x [2 - r, 3 - r]`: row 0 is the top
//! row. Two components sit in the left panel (columns 0-2) and two in the
//! right panel (columns 3-5).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SampleBatch;
use crate::error::{Error, Result};
use crate::numerics::{rng, Matrix};

pub const LATTICE: usize = 6;
const PANEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeDomain {
    pub cell_width: f64,
    pub lo: f64,
    pub hi: f64,
}

impl LatticeDomain {
    /// `([x_lo, x_hi], [y_lo, y_hi])` of cell `(r, c)`.
    pub fn cell_bounds(&self, r: usize, c: usize) -> ([f64; 2], [f64; 2]) {
        let x0 = self.lo + c as f64 * self.cell_width;
        let y1 = self.hi - r as f64 * self.cell_width;
        ([x0, x0 + self.cell_width], [y1 - self.cell_width, y1])
    }

    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        let (x, y) = self.cell_bounds(r, c);
        (0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1]))
    }

    pub fn n_cells(&self) -> usize {
        LATTICE * LATTICE
    }

    /// Cell containing the point, closed on every side.
    pub fn cells_containing(&self, x: f64, y: f64) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..LATTICE).flat_map(move |r| (0..LATTICE).map(move |c| (r, c))).filter(move |&(r, c)| {
            let (bx, by) = self.cell_bounds(r, c);
            bx[0] <= x && x <= bx[1] && by[0] <= y && y <= by[1]
        })
    }
}

pub fn lattice_domain() -> LatticeDomain {
    LatticeDomain {
        cell_width: 1.0,
        lo: -3.0,
        hi: 3.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pattern {
    LeftRowRightCol,
    LeftColRightRow,
    LeftRowRightRow,
}

impl Pattern {
    fn short(self) -> &'static str {
        match self {
            Pattern::LeftRowRightCol => "lrrc",
            Pattern::LeftColRightRow => "lcrr",
            Pattern::LeftRowRightRow => "lrrr",
        }
    }

    /// `(left pair shares a row, right pair shares a row)`.
    fn rows(self) -> (bool, bool) {
        match self {
            Pattern::LeftRowRightCol => (true, false),
            Pattern::LeftColRightRow => (false, true),
            Pattern::LeftRowRightRow => (true, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilySplit {
    /// Even mix of `LeftRowRightCol` and `LeftColRightRow`.
    Train,
    /// `LeftRowRightRow` only.
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeMixtureSpec {
    /// `(row, col)`; the first two are the left pair, the last two the right pair.
    pub cells: [[usize; 2]; 4],
    pub pattern: Pattern,
    pub weights: [f64; 4],
}

impl LatticeMixtureSpec {
    pub fn new(cells: [[usize; 2]; 4], pattern: Pattern) -> Result<Self> {
        let s = Self {
            cells,
            pattern,
            weights: [0.25; 4],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("lattice spec {:?}: {msg}", self.cells)));
        for (k, &[r, c]) in self.cells.iter().enumerate() {
            if r >= LATTICE || c >= LATTICE {
                return bad(format!("cell {k} out of range"));
            }
            let left = c < PANEL;
            if left != (k < 2) {
                return bad(format!("cell {k} is in the wrong panel"));
            }
        }
        let (left_row, right_row) = self.pattern.rows();
        for (pair, shares_row) in [(&self.cells[0..2], left_row), (&self.cells[2..4], right_row)] {
            let (a, b) = (pair[0], pair[1]);
            let ok = if shares_row {
                a[0] == b[0] && a[1] != b[1]
            } else {
                a[1] == b[1] && a[0] != b[0]
            };
            if !ok {
                return bad(format!("placement does not match {:?}", self.pattern));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return bad(format!("weights {:?} are not a probability vector", self.weights));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        let mut s = self.pattern.short().to_owned();
        for [r, c] in self.cells {
            s.push_str(&format!("-r{r}c{c}"));
        }
        s
    }

    /// Whether `(x, y)` lies in one of the four cells.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let d = lattice_domain();
        self.cells.iter().any(|&[r, c]| {
            let (bx, by) = d.cell_bounds(r, c);
            bx[0] <= x && x <= bx[1] && by[0] <= y && y <= by[1]
        })
    }

    /// Every valid placement of `pattern`, with each pair in ascending order.
    pub fn enumerate(pattern: Pattern) -> Vec<Self> {
        let (left_row, right_row) = pattern.rows();
        let lefts = pairs(left_row, 0);
        let rights = pairs(right_row, PANEL);
        let mut out = Vec::with_capacity(lefts.len() * rights.len());
        for l in &lefts {
            for r in &rights {
                out.push(Self {
                    cells: [l[0], l[1], r[0], r[1]],
                    pattern,
                    weights: [0.25; 4],
                });
            }
        }
        out
    }
}

/// Ordered cell pairs inside one panel that share a row (or a column).
fn pairs(share_row: bool, col0: usize) -> Vec<[[usize; 2]; 2]> {
    let mut out = Vec::new();
    if share_row {
        for r in 0..LATTICE {
            for a in 0..PANEL {
                for b in a + 1..PANEL {
                    out.push([[r, col0 + a], [r, col0 + b]]);
                }
            }
        }
    } else {
        for c in 0..PANEL {
            for a in 0..LATTICE {
                for b in a + 1..LATTICE {
                    out.push([[a, col0 + c], [b, col0 + c]]);
                }
            }
        }
    }
    out
}

/// Draws `count` distinct specs. `Train` splits `count` between the two
/// training patterns (the odd one goes to `LeftRowRightCol`).
pub fn generate_family(split: FamilySplit, count: usize, seed: u64) -> Result<Vec<LatticeMixtureSpec>> {
    if count == 0 {
        return Err(Error::Validation("family count must be at least 1".into()));
    }
    let plan: Vec<(Pattern, usize)> = match split {
        FamilySplit::Train => vec![
            (Pattern::LeftRowRightCol, count - count / 2),
            (Pattern::LeftColRightRow, count / 2),
        ],
        FamilySplit::Test => vec![(Pattern::LeftRowRightRow, count)],
    };
    let mut r = rng::stream(seed, &[rng::tag("generate_family")]);
    let mut out = Vec::with_capacity(count);
    for (pattern, k) in plan {
        let mut all = LatticeMixtureSpec::enumerate(pattern);
        if k > all.len() {
            return Err(Error::Validation(format!(
                "requested {k} distinct {pattern:?} specs but only {} exist",
                all.len()
            )));
        }
        all.shuffle(&mut r);
        out.extend(all.into_iter().take(k));
    }
    out.shuffle(&mut r);
    Ok(out)
}

pub fn sample_lattice_mixture(spec: &LatticeMixtureSpec, n: usize, seed: u64) -> Result<SampleBatch> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Validation("sample count must be at least 1".into()));
    }
    let d = lattice_domain();
    let mut r = rng::stream(seed, &[rng::tag("lattice")]);
    let mut data = Matrix::zeros(n, 2);
    for i in 0..n {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut k = 3;
        for (j, w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        let [row, col] = spec.cells[k];
        let (bx, by) = d.cell_bounds(row, col);
        let row_out = data.row_mut(i);
        row_out[0] = bx[0] + r.random::<f64>() * d.cell_width;
        row_out[1] = by[0] + r.random::<f64>() * d.cell_width;
    }
    Ok(SampleBatch::new(data, spec.id(), seed))
}
