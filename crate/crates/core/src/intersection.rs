//! SAR-optical forward intersection.
//!
//! Four observations (zero-Doppler time, slant range, optical row and
//! column) constrain three object coordinates. The overdetermined system is
//! solved by Gauss-Newton with step halving; the inverse normal matrix at the
//! solution is the covariance of the point.
//!
//! Residuals are weighted by their standard deviations. The Doppler equation
//! is scaled to meters (divided by `|v|`) and weighted by `sigma_t · |v|` so
//! all four components are commensurable.

use nalgebra::{Matrix3, Matrix4x3, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    opt_forward, GeometryError, GroundPoint, ImagePoint, OpticalSensorModel, SarObservation,
    SarSensorModel,
};

/// Normal matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
const MAX_HALVINGS: usize = 8;
const STALL_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntersectionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("normal matrix is singular (condition number {0:.3e})")]
    SingularNormalMatrix(f64),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Standard deviations of the four observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationWeights {
    /// Azimuth time (s).
    pub sigma_t: f64,
    /// Slant range (m).
    pub sigma_r: f64,
    /// Optical row and column (px).
    pub sigma_px: f64,
}

impl ObservationWeights {
    /// Half-pixel measurement noise in both images.
    pub fn half_pixel(sar: &SarSensorModel) -> Self {
        Self {
            sigma_t: sar.az_time_per_row.abs() * 0.5,
            sigma_r: sar.range_per_col * 0.5,
            sigma_px: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), IntersectionError> {
        for (name, v) in [("sigma_t", self.sigma_t), ("sigma_r", self.sigma_r), ("sigma_px", self.sigma_px)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IntersectionError::InvalidWeights(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the step length (m).
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionResult {
    pub point: GroundPoint,
    /// Covariance of (x, y, h) in m².
    pub covariance: Matrix3<f64>,
    pub iterations: usize,
    /// Root mean square of the weighted residuals.
    pub rms_residual: f64,
}

impl IntersectionResult {
    pub fn sigma_h(&self) -> f64 {
        self.covariance[(2, 2)].sqrt()
    }
}

/// The fixed inputs of one intersection problem.
#[derive(Debug, Clone, Copy)]
pub struct StereoPair<'a> {
    pub sar: &'a SarSensorModel,
    pub opt: &'a OpticalSensorModel,
    pub sar_obs: SarObservation,
    pub opt_obs: ImagePoint,
    pub weights: ObservationWeights,
}

impl StereoPair<'_> {
    fn doppler_sigma(&self) -> f64 {
        self.weights.sigma_t * self.sar.velocity().norm()
    }

    /// Weighted residuals `[range, doppler, row, col]`.
    pub fn residuals(&self, p: &GroundPoint) -> Result<Vector4<f64>, GeometryError> {
        let s = self.sar.position(self.sar_obs.t);
        let range = (s - p.to_vector()).norm() - self.sar_obs.r;
        let doppler = self.sar.doppler_distance(p, self.sar_obs.t);
        let ip = opt_forward(self.opt, p)?;
        Ok(Vector4::new(
            range / self.weights.sigma_r,
            doppler / self.doppler_sigma(),
            (ip.row - self.opt_obs.row) / self.weights.sigma_px,
            (ip.col - self.opt_obs.col) / self.weights.sigma_px,
        ))
    }

    /// Analytic Jacobian of [`Self::residuals`] with respect to (x, y, h).
    pub fn jacobian(&self, p: &GroundPoint) -> Result<Matrix4x3<f64>, GeometryError> {
        let pv = p.to_vector();
        let los = pv - self.sar.position(self.sar_obs.t);
        let d_range = los / los.norm() / self.weights.sigma_r;
        let d_doppler = self.sar.velocity().normalize() / self.doppler_sigma();

        let r = self.opt.rotation();
        let u = r.transpose() * (pv - self.opt.center());
        if !(u.z < 0.0) {
            return Err(GeometryError::BehindCamera);
        }
        let c = self.opt.focal / (u.z * u.z * self.weights.sigma_px);
        let (r0, r1, r2) = (r.column(0), r.column(1), r.column(2));
        let d_col: Vector3<f64> = (r0 * u.z - r2 * u.x) * c;
        let d_row: Vector3<f64> = (r1 * u.z - r2 * u.y) * c;

        Ok(Matrix4x3::from_rows(&[
            d_range.transpose(),
            d_doppler.transpose(),
            d_row.transpose(),
            d_col.transpose(),
        ]))
    }
}

/// Weighted residual vector; see [`StereoPair::residuals`].
pub fn residuals(
    sar: &SarSensorModel,
    opt: &OpticalSensorModel,
    sar_obs: SarObservation,
    opt_obs: ImagePoint,
    p: &GroundPoint,
    weights: ObservationWeights,
) -> Result<Vector4<f64>, GeometryError> {
    StereoPair { sar, opt, sar_obs, opt_obs, weights }.residuals(p)
}

/// Condition number of a symmetric positive semi-definite matrix.
pub fn condition_number(m: &Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn normal_inverse(j: &Matrix4x3<f64>) -> Result<Matrix3<f64>, IntersectionError> {
    let n = j.transpose() * j;
    let cond = condition_number(&n);
    if !(cond <= MAX_CONDITION) {
        return Err(IntersectionError::SingularNormalMatrix(cond));
    }
    n.try_inverse()
        .ok_or(IntersectionError::SingularNormalMatrix(f64::INFINITY))
}

pub fn intersect(
    sar: &SarSensorModel,
    opt: &OpticalSensorModel,
    sar_obs: SarObservation,
    opt_obs: ImagePoint,
    initial: GroundPoint,
    weights: ObservationWeights,
    options: SolverOptions,
) -> Result<IntersectionResult, IntersectionError> {
    weights.validate()?;
    let pair = StereoPair { sar, opt, sar_obs, opt_obs, weights };
    let mut p = initial.to_vector();
    let mut res = pair.residuals(&initial)?;
    let mut sse = res.norm_squared();

    for iteration in 1..=options.max_iterations {
        let gp = GroundPoint::from_vector(&p);
        let j = pair.jacobian(&gp)?;
        let ninv = normal_inverse(&j)?;
        let step = -(ninv * (j.transpose() * res));

        // The final step is taken whole. Below a millimetre the cost change
        // of a Gauss-Newton step is lost in rounding, so a rejected step there
        // ends the iteration too.
        let finish = |q: Vector3<f64>| -> Result<IntersectionResult, IntersectionError> {
            let (q, r) = match pair.residuals(&GroundPoint::from_vector(&q)) {
                Ok(r) => (q, r),
                Err(_) => (p, res),
            };
            let point = GroundPoint::from_vector(&q);
            let covariance = normal_inverse(&pair.jacobian(&point)?)?;
            Ok(IntersectionResult {
                point,
                covariance,
                iterations: iteration,
                rms_residual: (r.norm_squared() / 4.0).sqrt(),
            })
        };
        if step.norm() < options.tol {
            return finish(p + step);
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = p + step * scale;
            match pair.residuals(&GroundPoint::from_vector(&candidate)) {
                Ok(r) if r.norm_squared() <= sse => {
                    accepted = Some((candidate, r));
                    break;
                }
                _ => scale *= 0.5,
            }
        }
        match accepted {
            Some((next, r)) => {
                p = next;
                res = r;
                sse = res.norm_squared();
            }
            None if step.norm() < STALL_STEP => return finish(p + step),
            None => return Err(IntersectionError::NoConvergence(iteration)),
        }
    }
    Err(IntersectionError::NoConvergence(options.max_iterations))
}
