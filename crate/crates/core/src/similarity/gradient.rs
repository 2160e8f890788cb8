//! Gradient-orientation descriptors: HOG and a fixed-scale SIFT descriptor.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{Descriptor, Patch, SimilarityError};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogParams {
    pub cell: usize,
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for HogParams {
    fn default() -> Self {
        Self { cell: 17, bins: 8, epsilon: 1e-5 }
    }
}

/// Fixed-scale SIFT settings. Each of the 4×4 spatial cells is
/// `3·scale` pixels wide; the Gaussian window has a standard deviation of
/// half the descriptor width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiftParams {
    pub scale: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self { scale: 10.0 }
    }
}

const SIFT_CELLS: usize = 4;
const SIFT_BINS: usize = 8;
const SIFT_CLIP: f64 = 0.2;

/// Per-pixel gradients. `angle` is the signed direction `atan2(gy, gx)` in
/// `[0, 2π)`, with `gy` the derivative along rows.
#[derive(Debug, Clone)]
pub struct GradientMaps {
    pub magnitude: Grid,
    pub angle: Grid,
}

impl GradientMaps {
    /// Central differences inside, one-sided differences on the border.
    pub fn new(img: &Grid) -> Self {
        let (rows, cols) = (img.rows(), img.cols());
        let diff = |a: f64, b: f64, span: usize| if span == 0 { 0.0 } else { (a - b) / span as f64 };
        let mut magnitude = Grid::zeros(rows, cols);
        let mut angle = Grid::zeros(rows, cols);
        for r in 0..rows {
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(rows - 1));
            for c in 0..cols {
                let (cl, cr) = (c.saturating_sub(1), (c + 1).min(cols - 1));
                let gx = diff(img.get(r, cr), img.get(r, cl), cr - cl);
                let gy = diff(img.get(rd, c), img.get(ru, c), rd - ru);
                magnitude.set(r, c, gx.hypot(gy));
                angle.set(r, c, gy.atan2(gx).rem_euclid(2.0 * PI));
            }
        }
        Self { magnitude, angle }
    }

    pub fn hog_window(&self, r0: usize, c0: usize, size: usize, params: &HogParams) -> Descriptor {
        oriented_blocks(&self.magnitude, &self.angle, r0, c0, size, params)
    }

    pub fn sift_window(&self, r0: usize, c0: usize, size: usize, params: &SiftParams) -> Descriptor {
        let width = 3.0 * params.scale;
        let sigma_w = 0.5 * SIFT_CELLS as f64 * width;
        let center = (size as f64 - 1.0) / 2.0;
        let reach = 0.5 * (SIFT_CELLS as f64 + 1.0) * width;
        let lo = (center - reach).floor().max(0.0) as usize;
        let hi = ((center + reach).ceil() as usize).min(size - 1);
        let mut hist = vec![0.0; SIFT_CELLS * SIFT_CELLS * SIFT_BINS];
        let half = SIFT_CELLS as f64 / 2.0 - 0.5;
        for r in lo..=hi {
            let dr = r as f64 - center;
            let yb = dr / width + half;
            for c in lo..=hi {
                let mag = self.magnitude.get(r0 + r, c0 + c);
                if mag == 0.0 {
                    continue;
                }
                let dc = c as f64 - center;
                let xb = dc / width + half;
                if yb <= -1.0 || yb >= SIFT_CELLS as f64 || xb <= -1.0 || xb >= SIFT_CELLS as f64 {
                    continue;
                }
                let w = mag * (-(dr * dr + dc * dc) / (2.0 * sigma_w * sigma_w)).exp();
                let ob = snap(self.angle.get(r0 + r, c0 + c) / (2.0 * PI) * SIFT_BINS as f64);
                let (y0, x0, o0) = (yb.floor(), xb.floor(), ob.floor());
                let (fy, fx, fo) = (yb - y0, xb - x0, ob - o0);
                for (iy, wy) in [(y0 as i64, 1.0 - fy), (y0 as i64 + 1, fy)] {
                    if !(0..SIFT_CELLS as i64).contains(&iy) || wy == 0.0 {
                        continue;
                    }
                    for (ix, wx) in [(x0 as i64, 1.0 - fx), (x0 as i64 + 1, fx)] {
                        if !(0..SIFT_CELLS as i64).contains(&ix) || wx == 0.0 {
                            continue;
                        }
                        let base = (iy as usize * SIFT_CELLS + ix as usize) * SIFT_BINS;
                        for (io, wo) in [(o0 as usize, 1.0 - fo), (o0 as usize + 1, fo)] {
                            if wo == 0.0 {
                                continue;
                            }
                            hist[base + io % SIFT_BINS] += w * wy * wx * wo;
                        }
                    }
                }
            }
        }
        normalize(&mut hist);
        if hist.iter().any(|&v| v > SIFT_CLIP) {
            hist.iter_mut().for_each(|v| *v = v.min(SIFT_CLIP));
            normalize(&mut hist);
        }
        Descriptor { values: hist, layout: (SIFT_CELLS, SIFT_CELLS, SIFT_BINS), segment: SIFT_CELLS * SIFT_CELLS * SIFT_BINS }
    }
}

/// Rounds bin coordinates that sit on a bin center up to rounding noise, so
/// an exact orientation does not leak 1e-16 weights into a neighbor bin.
fn snap(t: f64) -> f64 {
    let n = t.round();
    if (t - n).abs() < 1e-9 {
        n
    } else {
        t
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// HOG-style cell histograms of an (angle, magnitude) field, grouped into
/// overlapping 2×2-cell blocks that are L2-normalized. Angles are folded to
/// `[0, π)`. Layout is `(2·(nx−1), 2·(ny−1), bins)`.
pub(crate) fn oriented_blocks(
    magnitude: &Grid,
    angle: &Grid,
    r0: usize,
    c0: usize,
    size: usize,
    params: &HogParams,
) -> Descriptor {
    let (cell, bins) = (params.cell.max(1), params.bins.max(1));
    let n = size / cell;
    let off = (size - n * cell) / 2;
    let bin_width = PI / bins as f64;
    let mut cells = vec![0.0; n * n * bins];
    for cy in 0..n {
        for cx in 0..n {
            let hist = &mut cells[(cy * n + cx) * bins..(cy * n + cx + 1) * bins];
            for r in 0..cell {
                let gr = r0 + off + cy * cell + r;
                for c in 0..cell {
                    let gc = c0 + off + cx * cell + c;
                    let m = magnitude.get(gr, gc);
                    if m == 0.0 {
                        continue;
                    }
                    let t = snap(angle.get(gr, gc).rem_euclid(PI) / bin_width - 0.5);
                    let b0 = t.floor();
                    let f = t - b0;
                    let b0 = (b0 as i64).rem_euclid(bins as i64) as usize;
                    hist[b0] += m * (1.0 - f);
                    if f > 0.0 {
                        hist[(b0 + 1) % bins] += m * f;
                    }
                }
            }
        }
    }
    let nb = n.saturating_sub(1);
    let seg = 4 * bins;
    let mut values = Vec::with_capacity(nb * nb * seg);
    let eps2 = params.epsilon * params.epsilon;
    for by in 0..nb {
        for bx in 0..nb {
            let start = values.len();
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let k = ((by + dy) * n + bx + dx) * bins;
                values.extend_from_slice(&cells[k..k + bins]);
            }
            let block = &mut values[start..];
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + eps2).sqrt();
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Descriptor { values, layout: (2 * nb, 2 * nb, bins), segment: seg }
}

pub fn hog_descriptor(p: &Patch, params: &HogParams) -> Result<Descriptor, SimilarityError> {
    if p.size() / params.cell.max(1) < 2 {
        return Err(SimilarityError::InvalidPatch(format!(
            "side {} holds fewer than 2x2 cells of {}",
            p.size(),
            params.cell
        )));
    }
    let g = GradientMaps::new(p.grid());
    Ok(g.hog_window(0, 0, p.size(), params))
}

/// 128-value descriptor centered on the patch, orientation fixed at zero.
pub fn sift_descriptor(p: &Patch, params: &SiftParams) -> Descriptor {
    GradientMaps::new(p.grid()).sift_window(0, 0, p.size(), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(size: usize, seed: u64) -> Patch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Grid::from_fn(size, size, |_, _| rng.random::<f64>() * 255.0);
        Patch::new(crate::grid::gaussian_blur(&noise, 2.0)).unwrap()
    }

    fn ramp(size: usize, angle: f64) -> Patch {
        let (s, c) = angle.sin_cos();
        Patch::from_fn(size, |r, col| 3.0 * (c * col as f64 + s * r as f64)).unwrap()
    }

    #[test]
    fn hog_shape_and_block_norms() {
        let p = textured(221, 1);
        let d = hog_descriptor(&p, &HogParams::default()).unwrap();
        assert_eq!(d.layout, (24, 24, 8));
        assert_eq!(d.len(), 24 * 24 * 8);
        for seg in d.values.chunks(d.segment) {
            let n = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= 1.0 + 1e-9);
        }
        assert!(d.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn hog_ramp_concentrates_in_direction_bin() {
        let angle = 50f64.to_radians();
        let d = hog_descriptor(&ramp(69, angle), &HogParams::default()).unwrap();
        // 50° with 22.5° bins centered at 11.25 + 22.5k: bins 1 and 2
        for cell in d.values.chunks(8) {
            let total: f64 = cell.iter().sum();
            let mass: f64 = cell[1] + cell[2];
            assert!(mass / total > 1.0 - 1e-9, "{cell:?}");
            assert!(cell[2] > cell[1]);
        }
    }

    #[test]
    fn hog_gain_offset_invariance() {
        let p = textured(85, 2);
        let q = p.map(|v| 2.0 * v + 5.0);
        let a = hog_descriptor(&p, &HogParams::default()).unwrap();
        let b = hog_descriptor(&q, &HogParams::default()).unwrap();
        let d = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn hog_rejects_tiny_patch() {
        assert!(hog_descriptor(&textured(21, 3), &HogParams::default()).is_err());
    }

    #[test]
    fn sift_unit_norm_and_identity() {
        let p = textured(221, 4);
        let d = sift_descriptor(&p, &SiftParams::default());
        assert_eq!(d.len(), 128);
        assert!((d.norm() - 1.0).abs() < 1e-9);
        assert!(d.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(super::super::descriptor_similarity(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn sift_ramp_at_most_two_bins_per_cell() {
        for deg in [0.0, 17.0, 45.0, 100.0, 233.0] {
            let d = sift_descriptor(&ramp(221, f64::to_radians(deg)), &SiftParams::default());
            assert!((d.norm() - 1.0).abs() < 1e-9);
            for cell in d.values.chunks(8) {
                assert!(cell.iter().filter(|&&v| v != 0.0).count() <= 2, "{deg}: {cell:?}");
            }
        }
    }

    #[test]
    fn sift_constant_patch_is_zero() {
        let p = Patch::from_fn(41, |_, _| 4.0).unwrap();
        assert!(sift_descriptor(&p, &SiftParams::default()).values.iter().all(|&v| v == 0.0));
    }
}
