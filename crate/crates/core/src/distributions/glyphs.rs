//! Procedural 28 x 28 seven-segment digits with per-image jitter, used when
//! no digit archive is available. Output is a pair of IDX files so it goes
//! through the same ingestion path as real data.

use rand::Rng as _;

use super::IdxFile;
use crate::numerics::rng;

const SIDE: usize = 28;

// Segment endpoints in a unit box, y pointing down.
const SEGMENTS: [[(f64, f64); 2]; 7] = [
    [(0.0, 0.0), (1.0, 0.0)], // a: top
    [(1.0, 0.0), (1.0, 0.5)], // b: upper right
    [(1.0, 0.5), (1.0, 1.0)], // c: lower right
    [(0.0, 1.0), (1.0, 1.0)], // d: bottom
    [(0.0, 0.5), (0.0, 1.0)], // e: lower left
    [(0.0, 0.0), (0.0, 0.5)], // f: upper left
    [(0.0, 0.5), (1.0, 0.5)], // g: middle
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 3, 2],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + s * dx - p.0, a.1 + s * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn render(digit: usize, r: &mut rng::Rng) -> Vec<u8> {
    let width = r.random_range(9.0..13.0);
    let height = r.random_range(17.0..21.0);
    let cx = 14.0 + r.random_range(-1.5..1.5);
    let cy = 14.0 + r.random_range(-1.5..1.5);
    let shear = r.random_range(-0.25..0.25);
    let thick = r.random_range(1.0..2.0);
    let ink = r.random_range(0.8..1.0);
    let segs: Vec<[(f64, f64); 2]> = DIGIT_SEGMENTS[digit]
        .iter()
        .map(|&s| {
            SEGMENTS[s].map(|(u, v)| {
                let y = cy + (v - 0.5) * height;
                let x = cx + (u - 0.5) * width - shear * (y - cy);
                (x, y)
            })
        })
        .collect();
    let mut img = vec![0u8; SIDE * SIDE];
    for py in 0..SIDE {
        for px in 0..SIDE {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = segs
                .iter()
                .map(|[a, b]| segment_distance(p, *a, *b))
                .fold(f64::INFINITY, f64::min);
            let v = (1.0 - (d - thick).max(0.0)).clamp(0.0, 1.0) * ink;
            img[py * SIDE + px] = (v * 255.0).round() as u8;
        }
    }
    img
}

/// `(images, labels)` with `per_class` images of every digit, classes interleaved.
pub fn render_synthetic_digits(per_class: usize, seed: u64) -> (IdxFile, IdxFile) {
    let mut r = rng::stream(seed, &[rng::tag("glyphs")]);
    let n = 10 * per_class;
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        pixels.extend(render(digit, &mut r));
        labels.push(digit as u8);
    }
    (
        IdxFile::new(vec![n, SIDE, SIDE], pixels).expect("consistent dims"),
        IdxFile::new(vec![n], labels).expect("consistent dims"),
    )
}
