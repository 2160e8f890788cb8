//! In-plane height accuracy of a SAR-optical stereo configuration.
//!
//! The configuration is reduced to the vertical plane through both sensors
//! and the target. The SAR sensor sits at `(Xs, Zs) = (R sin θ, Hs)` with
//! `R = (Hs - h) / cos θ`; the optical sensor at `(Xo, Zo) = (∓(Ho - h) tan α, Ho)`
//! on the opposite or the same side. The target height follows from
//! intersecting the optical ray `z = k (x - Xo) + Zo` with the range circle
//! `(Xs - x)² + (Zs - z)² = R²`, and its standard deviation from first-order
//! propagation of the range and viewing-angle noise:
//!
//! ```text
//! σ_h² = (∂h/∂R)² σ_R² + (∂h/∂α)² σ_α²,   σ_R = σ0,  σ_α = 1e-6 · σ0
//! ∂h/∂R = -R k / ((Xs - x) + k (Zs - z))
//! ∂h/∂α = -(Xs - x)(Zo - z) / ((Xs - x) + k (Zs - z)) · (1/k) · ∂k/∂α
//! ```
//!
//! Flat Earth is assumed (`Zs = Hs`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GroundPoint, LookSide, OpticalSensorModel, SarSensorModel};
use crate::intersection::ObservationWeights;

/// Cells with a larger normalized accuracy are flagged as near-singular.
pub const FLAG_THRESHOLD: f64 = 10.0;

/// Relative tangency below which the ray is considered glancing.
const GLANCING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccuracyError {
    #[error("glancing intersection or ray misses the range circle")]
    GlancingOrMiss,
    #[error("invalid stereo configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StereoMode {
    OppositeSide,
    SameSide,
}

impl StereoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StereoMode::OppositeSide => "opposite_side",
            StereoMode::SameSide => "same_side",
        }
    }

    fn sign(self) -> f64 {
        match self {
            StereoMode::OppositeSide => -1.0,
            StereoMode::SameSide => 1.0,
        }
    }
}

fn default_sigma0() -> f64 {
    1.0
}

fn default_sigma_alpha_factor() -> f64 {
    1e-6
}

/// One stereo configuration. Angles in radians, lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoConfig {
    pub mode: StereoMode,
    /// Radar viewing angle.
    pub theta: f64,
    /// Optical viewing angle; may be negative in same-side mode.
    pub alpha: f64,
    pub hs: f64,
    pub ho: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_sigma_alpha_factor")]
    pub sigma_alpha_factor: f64,
}

impl StereoConfig {
    pub fn from_degrees(mode: StereoMode, theta_deg: f64, alpha_deg: f64, hs: f64, ho: f64) -> Self {
        Self {
            mode,
            theta: theta_deg.to_radians(),
            alpha: alpha_deg.to_radians(),
            hs,
            ho,
            h: 0.0,
            sigma0: default_sigma0(),
            sigma_alpha_factor: default_sigma_alpha_factor(),
        }
    }

    pub fn validate(&self) -> Result<(), AccuracyError> {
        let bad = |m: &str| Err(AccuracyError::InvalidConfig(m.to_string()));
        let half = std::f64::consts::FRAC_PI_2;
        if !(self.theta > 0.0 && self.theta < half) {
            return bad("theta must lie in (0, 90) degrees");
        }
        if !(self.alpha.abs() < half) || self.alpha == 0.0 {
            return bad("alpha must be nonzero with |alpha| < 90 degrees");
        }
        if self.mode == StereoMode::OppositeSide && self.alpha < 0.0 {
            return bad("alpha must be positive in opposite-side mode");
        }
        if !(self.hs > self.h && self.ho > self.h) {
            return bad("platform heights must exceed the target height");
        }
        if !(self.sigma0 > 0.0) || !(self.sigma_alpha_factor >= 0.0) {
            return bad("sigma0 must be positive and sigma_alpha_factor non-negative");
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        (self.hs - self.h) / self.theta.cos()
    }

    pub fn sigma_alpha(&self) -> f64 {
        self.sigma_alpha_factor * self.sigma0
    }

    pub fn geometry(&self) -> Result<InPlaneGeometry, AccuracyError> {
        self.validate()?;
        let r = self.range();
        Ok(InPlaneGeometry {
            xs: r * self.theta.sin(),
            zs: self.hs,
            range: r,
            xo: self.mode.sign() * (self.ho - self.h) * self.alpha.tan(),
            zo: self.ho,
            alpha: self.alpha,
            sign: self.mode.sign(),
            target_h: self.h,
        })
    }

    /// Full 3-D sensor models realizing this configuration in the `y = 0`
    /// plane, with the optical camera aimed at the target and observation
    /// weights equivalent to `σ_R = σ0`, `σ_α = sigma_alpha_factor · σ0`.
    pub fn sensor_models(&self, focal: f64) -> Result<(SarSensorModel, OpticalSensorModel, ObservationWeights), AccuracyError> {
        let g = self.geometry()?;
        let speed = 7500.0;
        // Flying -y and looking right puts the target on the -x side of the track.
        let sar = SarSensorModel {
            s0: [g.xs, 0.0, g.zs],
            v: [0.0, -speed, 0.0],
            t0: 0.0,
            az_time_per_row: 1e-4,
            r_near: g.range - 1000.0,
            range_per_col: 1.0,
            look_side: LookSide::Right,
        };
        let target = GroundPoint::new(0.0, 0.0, self.h);
        let opt = OpticalSensorModel::look_at([g.xo, 0.0, g.zo], target, 0.0, focal, 0.0, 0.0);
        let weights = ObservationWeights {
            sigma_t: self.sigma0 / speed,
            sigma_r: self.sigma0,
            sigma_px: focal * self.sigma_alpha(),
        };
        Ok((sar, opt, weights))
    }
}

/// The planar construction derived from a [`StereoConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InPlaneGeometry {
    pub xs: f64,
    pub zs: f64,
    pub range: f64,
    pub xo: f64,
    pub zo: f64,
    pub alpha: f64,
    /// -1 for opposite side, +1 for same side.
    sign: f64,
    target_h: f64,
}

impl InPlaneGeometry {
    /// Ray slope `k`.
    pub fn slope(&self, alpha: f64) -> f64 {
        self.sign / alpha.tan()
    }

    pub fn slope_derivative(&self, alpha: f64) -> f64 {
        -self.sign / alpha.sin().powi(2)
    }

    /// Intersection of the optical ray at viewing angle `alpha` (pivoting
    /// about the optical sensor) with the range circle of radius `range`.
    pub fn intersect(&self, range: f64, alpha: f64) -> Result<(f64, f64), AccuracyError> {
        // Parameterize the ray by height: x = Xo + m (z - Zo), m = 1/k.
        let m = self.sign * alpha.tan();
        let a = self.xs - self.xo + m * self.zo;
        let qa = 1.0 + m * m;
        let qb = a * m + self.zs;
        let qc = a * a + self.zs * self.zs - range * range;
        let disc = qb * qb - qa * qc;
        if disc < 0.0 {
            return Err(AccuracyError::GlancingOrMiss);
        }
        let sq = disc.sqrt();
        // Stable pair of roots.
        let q = qb + qb.signum() * sq;
        let roots = [q / qa, if q != 0.0 { qc / q } else { qb / qa }];
        let zmax = self.zs.min(self.zo);
        let best = roots
            .iter()
            .copied()
            .filter(|z| *z <= zmax)
            .map(|z| (self.xo + m * (z - self.zo), z))
            .min_by(|p, q| {
                let dp = p.0.hypot(p.1 - self.target_h);
                let dq = q.0.hypot(q.1 - self.target_h);
                dp.total_cmp(&dq)
            })
            .ok_or(AccuracyError::GlancingOrMiss)?;
        // Tangency: component of the radius vector along the ray direction.
        let (x, z) = best;
        let along = (m * (self.xs - x) + (self.zs - z)) / qa.sqrt();
        if along.abs() < GLANCING_TOL * range {
            return Err(AccuracyError::GlancingOrMiss);
        }
        Ok(best)
    }

    pub fn partials_at(&self, x: f64, z: f64) -> Result<(f64, f64), AccuracyError> {
        let k = self.slope(self.alpha);
        let denom = (self.xs - x) + k * (self.zs - z);
        if !(denom.abs() >= GLANCING_TOL * self.range * k.abs().max(1.0)) {
            return Err(AccuracyError::GlancingOrMiss);
        }
        let dh_dr = -self.range * k / denom;
        let dh_dalpha = -((self.xs - x) * (self.zo - z) / denom) / k * self.slope_derivative(self.alpha);
        Ok((dh_dr, dh_dalpha))
    }
}

/// The stereo intersection point `(x, z)` of the unperturbed configuration.
pub fn intersection_point(cfg: &StereoConfig) -> Result<(f64, f64), AccuracyError> {
    let g = cfg.geometry()?;
    g.intersect(g.range, g.alpha)
}

/// `(∂h/∂R, ∂h/∂α)` at the intersection point.
pub fn height_partials(cfg: &StereoConfig) -> Result<(f64, f64), AccuracyError> {
    let g = cfg.geometry()?;
    let (x, z) = g.intersect(g.range, g.alpha)?;
    g.partials_at(x, z)
}

/// `σ_h / σ0`.
pub fn normalized_height_accuracy(cfg: &StereoConfig) -> Result<f64, AccuracyError> {
    let (dr, da) = height_partials(cfg)?;
    let s0 = cfg.sigma0;
    Ok(((dr * s0).powi(2) + (da * cfg.sigma_alpha()).powi(2)).sqrt() / s0)
}

/// Sweep specification; angles in degrees, cells sampled at their centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mode: StereoMode,
    pub theta_deg: (f64, f64),
    pub alpha_deg: (f64, f64),
    pub steps: (usize, usize),
    pub hs: f64,
    pub ho: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_sigma_alpha_factor")]
    pub sigma_alpha_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub theta_deg: f64,
    pub alpha_deg: f64,
    /// `None` when the configuration is glancing or invalid.
    pub sigma_ratio: Option<f64>,
    pub flagged: bool,
}

impl GridSpec {
    pub fn theta_step(&self) -> f64 {
        (self.theta_deg.1 - self.theta_deg.0) / self.steps.0 as f64
    }

    pub fn alpha_step(&self) -> f64 {
        (self.alpha_deg.1 - self.alpha_deg.0) / self.steps.1 as f64
    }

    fn config(&self, theta_deg: f64, alpha_deg: f64) -> StereoConfig {
        StereoConfig {
            h: self.h,
            sigma0: self.sigma0,
            sigma_alpha_factor: self.sigma_alpha_factor,
            ..StereoConfig::from_degrees(self.mode, theta_deg, alpha_deg, self.hs, self.ho)
        }
    }
}

/// Dense `σ_h/σ0` grid, row-major in θ. Cells above [`FLAG_THRESHOLD`] or
/// without a solution are flagged.
pub fn accuracy_grid(spec: &GridSpec) -> Vec<GridCell> {
    let (nt, na) = spec.steps;
    let (dt, da) = (spec.theta_step(), spec.alpha_step());
    (0..nt * na)
        .into_par_iter()
        .map(|idx| {
            let theta_deg = spec.theta_deg.0 + (idx / na) as f64 * dt + 0.5 * dt;
            let alpha_deg = spec.alpha_deg.0 + (idx % na) as f64 * da + 0.5 * da;
            let sigma_ratio = normalized_height_accuracy(&spec.config(theta_deg, alpha_deg)).ok();
            GridCell {
                theta_deg,
                alpha_deg,
                sigma_ratio,
                flagged: sigma_ratio.map_or(true, |s| s > FLAG_THRESHOLD),
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "mode,theta_deg,alpha_deg,sigma_ratio,flag";

pub fn csv_row(mode: StereoMode, cell: &GridCell) -> String {
    let sigma = cell.sigma_ratio.map_or_else(|| "inf".to_string(), |s| format!("{s:.6}"));
    format!(
        "{},{:.6},{:.6},{},{}",
        mode.as_str(),
        cell.theta_deg,
        cell.alpha_deg,
        sigma,
        u8::from(cell.flagged)
    )
}

pub fn grid_csv(mode: StereoMode, cells: &[GridCell]) -> String {
    let mut out = String::with_capacity(48 * (cells.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for c in cells {
        out.push_str(&csv_row(mode, c));
        out.push('\n');
    }
    out
}
