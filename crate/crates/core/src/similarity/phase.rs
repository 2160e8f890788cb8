//! Phase congruency from a log-Gabor filter bank and the HOPC descriptor
//! built on it.
//!
//! The image is mirror-padded to twice its size before filtering so that the
//! periodic extension implied by the FFT introduces no artificial edges.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::gradient::oriented_blocks;
use super::{Descriptor, HogParams, Patch, SimilarityError};
use crate::grid::Grid;

const EPSILON: f64 = 1e-4;
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcParams {
    pub scales: usize,
    pub orientations: usize,
    pub min_wavelength: f64,
    pub mult: f64,
    pub sigma_on_f: f64,
    /// Noise threshold in standard deviations above the noise energy mean.
    pub k: f64,
    /// Frequency-spread cutoff and its sigmoid gain.
    pub cutoff: f64,
    pub g: f64,
}

impl Default for PcParams {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 6,
            min_wavelength: 3.0,
            mult: 2.1,
            sigma_on_f: 0.55,
            k: 2.0,
            cutoff: 0.5,
            g: 10.0,
        }
    }
}

/// Phase congruency magnitude in [0, 1] and, per pixel, the orientation in
/// `[0, π)` of the filter with the largest congruency.
#[derive(Debug, Clone)]
pub struct PhaseCongruency {
    pub magnitude: Grid,
    pub orientation: Grid,
}

fn fft2(data: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (fr, fc) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    fr.process(data);
    let mut t = vec![Complex::default(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = data[r * cols + c];
        }
    }
    fc.process(&mut t);
    for r in 0..rows {
        for c in 0..cols {
            data[r * cols + c] = t[c * rows + r];
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if v.len() % 2 == 1 {
        m
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + m)
    }
}

/// Normalized frequency of FFT index `k` out of `n`.
fn freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

impl PhaseCongruency {
    pub fn compute(img: &Grid, params: &PcParams) -> Self {
        let (rows, cols) = (img.rows(), img.cols());
        let zeros = || Self { magnitude: Grid::zeros(rows, cols), orientation: Grid::zeros(rows, cols) };
        if rows < 2 || cols < 2 {
            return zeros();
        }
        // unit-variance input makes the result independent of contrast
        let mean = img.mean();
        let var = img.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / img.data().len() as f64;
        if !(var.sqrt() > 1e-12 * mean.abs().max(1.0)) {
            return zeros();
        }
        let sd = var.sqrt();

        let (pr, pc) = (2 * rows, 2 * cols);
        let mirror = |i: usize, n: usize| if i < n { i } else { 2 * n - 1 - i };
        let mut spectrum: Vec<Complex<f64>> = (0..pr * pc)
            .map(|k| {
                let (r, c) = (mirror(k / pc, rows), mirror(k % pc, cols));
                Complex::new((img.get(r, c) - mean) / sd, 0.0)
            })
            .collect();
        fft2(&mut spectrum, pr, pc, false);

        let nscale = params.scales.max(1);
        let norient = params.orientations.max(1);
        let log_sigma2 = 2.0 * params.sigma_on_f.ln().powi(2);
        let mut radius = vec![0.0; pr * pc];
        let mut theta = vec![0.0; pr * pc];
        for r in 0..pr {
            let v = freq(r, pr);
            for c in 0..pc {
                let u = freq(c, pc);
                radius[r * pc + c] = u.hypot(v);
                theta[r * pc + c] = v.atan2(u);
            }
        }
        let log_gabor: Vec<Vec<f64>> = (0..nscale)
            .map(|s| {
                let fo = 1.0 / (params.min_wavelength * params.mult.powi(s as i32));
                radius
                    .iter()
                    .map(|&rad| {
                        if rad == 0.0 {
                            return 0.0;
                        }
                        let lowpass = 1.0 / (1.0 + (rad / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER));
                        (-(rad / fo).ln().powi(2) / log_sigma2).exp() * lowpass
                    })
                    .collect()
            })
            .collect();

        let scale_norm = 1.0 / (pr * pc) as f64;
        // per orientation: numerator W·⌊E−T⌋ and ΣA over scales, original region only
        let per_orient: Vec<(Vec<f64>, Vec<f64>)> = (0..norient)
            .into_par_iter()
            .map(|o| {
                let angl = o as f64 * PI / norient as f64;
                let (sa, ca) = angl.sin_cos();
                let spread: Vec<f64> = theta
                    .iter()
                    .map(|&t| {
                        let (st, ct) = t.sin_cos();
                        let ds = st * ca - ct * sa;
                        let dc = ct * ca + st * sa;
                        let dtheta = (ds.atan2(dc).abs() * norient as f64 / 2.0).min(PI);
                        (dtheta.cos() + 1.0) / 2.0
                    })
                    .collect();
                let n = rows * cols;
                let mut eo_scales: Vec<Vec<Complex<f64>>> = Vec::with_capacity(nscale);
                let mut sum_an = vec![0.0; n];
                let mut max_an = vec![0.0; n];
                let mut sum_e = vec![0.0; n];
                let mut sum_o = vec![0.0; n];
                let mut tau = 0.0;
                for (s, lg) in log_gabor.iter().enumerate() {
                    let mut buf: Vec<Complex<f64>> = spectrum
                        .iter()
                        .zip(lg)
                        .zip(&spread)
                        .map(|((f, g), w)| f * (g * w))
                        .collect();
                    fft2(&mut buf, pr, pc, true);
                    let mut eo = Vec::with_capacity(n);
                    for r in 0..rows {
                        for c in 0..cols {
                            eo.push(buf[r * pc + c] * scale_norm);
                        }
                    }
                    let an: Vec<f64> = eo.iter().map(|z| z.norm()).collect();
                    if s == 0 {
                        tau = median(an.clone()) / 4f64.ln().sqrt();
                    }
                    for i in 0..n {
                        sum_an[i] += an[i];
                        max_an[i] = if s == 0 { an[i] } else { max_an[i].max(an[i]) };
                        sum_e[i] += eo[i].re;
                        sum_o[i] += eo[i].im;
                    }
                    eo_scales.push(eo);
                }
                let inv_mult = 1.0 / params.mult;
                let total_tau = tau * (1.0 - inv_mult.powi(nscale as i32)) / (1.0 - inv_mult);
                let noise_mean = total_tau * (PI / 2.0).sqrt();
                let noise_sigma = total_tau * ((4.0 - PI) / 2.0).sqrt();
                let t = noise_mean + params.k * noise_sigma;
                let mut num = vec![0.0; n];
                for i in 0..n {
                    let xe = sum_e[i].hypot(sum_o[i]) + EPSILON;
                    let (me, mo) = (sum_e[i] / xe, sum_o[i] / xe);
                    let energy: f64 = eo_scales
                        .iter()
                        .map(|eo| {
                            let (e, od) = (eo[i].re, eo[i].im);
                            e * me + od * mo - (e * mo - od * me).abs()
                        })
                        .sum();
                    let energy = (energy - t).max(0.0);
                    let width = if nscale > 1 {
                        (sum_an[i] / (max_an[i] + EPSILON) - 1.0) / (nscale - 1) as f64
                    } else {
                        1.0
                    };
                    let weight = 1.0 / (1.0 + ((params.cutoff - width) * params.g).exp());
                    num[i] = weight * energy;
                }
                (num, sum_an)
            })
            .collect();

        let mut magnitude = Grid::zeros(rows, cols);
        let mut orientation = Grid::zeros(rows, cols);
        for i in 0..rows * cols {
            let mut total_num = 0.0;
            let mut total_an = 0.0;
            let mut best = (f64::NEG_INFINITY, 0usize);
            for (o, (num, an)) in per_orient.iter().enumerate() {
                total_num += num[i];
                total_an += an[i];
                let pc_o = num[i] / (an[i] + EPSILON);
                if pc_o > best.0 {
                    best = (pc_o, o);
                }
            }
            let (r, c) = (i / cols, i % cols);
            magnitude.set(r, c, (total_num / (total_an + EPSILON)).clamp(0.0, 1.0));
            orientation.set(r, c, best.1 as f64 * PI / norient as f64);
        }
        Self { magnitude, orientation }
    }

    pub fn hopc_window(&self, r0: usize, c0: usize, size: usize, hog: &HogParams) -> Descriptor {
        oriented_blocks(&self.magnitude, &self.orientation, r0, c0, size, hog)
    }
}

pub fn phase_congruency(p: &Patch, params: &PcParams) -> Grid {
    PhaseCongruency::compute(p.grid(), params).magnitude
}

/// HOG layout over phase congruency magnitude and orientation.
pub fn hopc_descriptor(p: &Patch, hog: &HogParams, pc: &PcParams) -> Result<Descriptor, SimilarityError> {
    if p.size() / hog.cell.max(1) < 2 {
        return Err(SimilarityError::InvalidPatch(format!(
            "side {} holds fewer than 2x2 cells of {}",
            p.size(),
            hog.cell
        )));
    }
    Ok(PhaseCongruency::compute(p.grid(), pc).hopc_window(0, 0, p.size(), hog))
}
