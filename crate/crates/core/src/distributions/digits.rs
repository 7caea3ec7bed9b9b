//! Double-digit images: two single digits, each resized to 32 x 16, side by side.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{IdxData, SampleBatch};
use crate::error::{Error, Result};
use crate::numerics::{rng, Matrix};

pub const OUT_SIDE: usize = 32;
pub const HALF_WIDTH: usize = 16;
const N_TRAIN_PAIRS: usize = 70;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train70,
    Test30,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DigitPairSpec {
    pub left_digit: u8,
    pub right_digit: u8,
    pub split: Split,
}

impl DigitPairSpec {
    pub fn id(&self) -> String {
        format!("dd-{}{}", self.left_digit, self.right_digit)
    }
}

/// All 100 pairs, 70 train and 30 test, assigned by a seeded shuffle.
/// Returned in pair order `00, 01, ..., 99`.
pub fn digit_pair_split(seed: u64) -> Vec<DigitPairSpec> {
    let mut order: Vec<u8> = (0..100).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag("digit_split")]));
    let mut train = [false; 100];
    for &p in &order[..N_TRAIN_PAIRS] {
        train[p as usize] = true;
    }
    (0..100u8)
        .map(|p| DigitPairSpec {
            left_digit: p / 10,
            right_digit: p % 10,
            split: if train[p as usize] { Split::Train70 } else { Split::Test30 },
        })
        .collect()
}

/// Single-digit images grouped by class.
#[derive(Clone, Debug)]
pub struct DigitPool {
    rows: usize,
    cols: usize,
    images: Matrix,
    by_class: Vec<Vec<usize>>,
}

impl DigitPool {
    pub fn new(images: IdxData, labels: IdxData) -> Result<Self> {
        let (IdxData::Images { rows, cols, pixels }, IdxData::Labels(labels)) = (images, labels) else {
            return Err(Error::Data("expected an image file and a label file".into()));
        };
        if pixels.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                pixels.rows(),
                labels.len()
            )));
        }
        let mut by_class = vec![Vec::new(); 10];
        for (i, &l) in labels.iter().enumerate() {
            if l > 9 {
                return Err(Error::Data(format!("label {l} at index {i} is not a digit")));
            }
            by_class[l as usize].push(i);
        }
        Ok(Self {
            rows,
            cols,
            images: pixels,
            by_class,
        })
    }

    pub fn class_size(&self, digit: u8) -> usize {
        self.by_class.get(digit as usize).map_or(0, Vec::len)
    }

    pub fn image(&self, index: usize) -> &[f64] {
        self.images.row(index)
    }

    pub fn side(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn draw(&self, digit: u8, r: &mut rng::Rng) -> Result<&[f64]> {
        let class = self
            .by_class
            .get(digit as usize)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::Data(format!("no images of digit {digit}")))?;
        Ok(self.images.row(class[r.random_range(0..class.len())]))
    }
}

/// Bilinear resize with pixel-center alignment and edge clamping. Each output
/// pixel is a convex combination of input pixels.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// `n` images of `spec`: independent left and right draws, each resized to
/// 32 x 16 and concatenated into a flattened 32 x 32 image.
pub fn make_double_digit(spec: &DigitPairSpec, pool: &DigitPool, n: usize, seed: u64) -> Result<SampleBatch> {
    if spec.left_digit > 9 || spec.right_digit > 9 {
        return Err(Error::Validation(format!("digit pair {spec:?} out of range")));
    }
    let mut r = rng::stream(seed, &[rng::tag("double_digit")]);
    let mut data = Matrix::zeros(n, OUT_SIDE * OUT_SIDE);
    let (h, w) = pool.side();
    for i in 0..n {
        let left = resize_bilinear(pool.draw(spec.left_digit, &mut r)?, h, w, OUT_SIDE, HALF_WIDTH);
        let right = resize_bilinear(pool.draw(spec.right_digit, &mut r)?, h, w, OUT_SIDE, HALF_WIDTH);
        let row = data.row_mut(i);
        for y in 0..OUT_SIDE {
            row[y * OUT_SIDE..y * OUT_SIDE + HALF_WIDTH].copy_from_slice(&left[y * HALF_WIDTH..(y + 1) * HALF_WIDTH]);
            row[y * OUT_SIDE + HALF_WIDTH..(y + 1) * OUT_SIDE]
                .copy_from_slice(&right[y * HALF_WIDTH..(y + 1) * HALF_WIDTH]);
        }
    }
    Ok(SampleBatch::new(data, spec.id(), seed))
}
