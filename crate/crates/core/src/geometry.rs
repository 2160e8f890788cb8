//! Sensor models for the two imaging geometries.
//!
//! All coordinates live in one local, flat, metric Cartesian frame: `x` east,
//! `y` north, `h` up. The SAR sensor follows a constant-velocity orbit
//! segment and images in zero-Doppler (time, slant range) coordinates; the
//! optical sensor is a pinhole camera described by the collinearity
//! equations.
//!
//! ```text
//! SAR:      R = |S(t) - P|            V · (P - S(t)) = 0
//! optical:  x = x0 + c · u1 / u3      y = y0 + c · u2 / u3,   u = Rᵀ (P - Pc)
//! ```
//!
//! Image axes: `x` ↔ column, `y` ↔ row, both increasing with the pixel index.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("range sphere does not reach the plane h = {h} (range {range} m, closest approach {closest} m)")]
    NoIntersection { h: f64, range: f64, closest: f64 },
    #[error("velocity is vertical, look side is undefined")]
    AmbiguousSide,
    #[error("point is not in front of the optical camera")]
    BehindCamera,
    #[error("viewing ray is parallel to the plane h = {0}")]
    RayParallelToPlane(f64),
    #[error("invalid sensor model: {0}")]
    InvalidModel(String),
}

/// A point in the local object frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

impl GroundPoint {
    pub const fn new(x: f64, y: f64, h: f64) -> Self {
        Self { x, y, h }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.h)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &GroundPoint) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.h.is_finite()
    }
}

/// Sub-pixel image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePoint {
    pub row: f64,
    pub col: f64,
}

impl ImagePoint {
    pub const fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }

    /// Nearest integer pixel `(row, col)`.
    pub fn rounded(&self) -> (i64, i64) {
        (self.row.round() as i64, self.col.round() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LookSide {
    Left,
    Right,
}

/// Zero-Doppler SAR measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SarObservation {
    /// Zero-Doppler azimuth time (s).
    pub t: f64,
    /// Slant range (m).
    pub r: f64,
}

/// Linear-orbit SAR sensor with a regular (time, range) pixel grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarSensorModel {
    /// Sensor position at `t0`.
    pub s0: [f64; 3],
    /// Constant velocity (m/s).
    pub v: [f64; 3],
    /// Reference time, also the azimuth time of row 0.
    pub t0: f64,
    pub az_time_per_row: f64,
    /// Slant range of column 0.
    pub r_near: f64,
    pub range_per_col: f64,
    pub look_side: LookSide,
}

impl SarSensorModel {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = self.s0.iter().chain(self.v.iter()).all(|v| v.is_finite())
            && [self.t0, self.az_time_per_row, self.r_near, self.range_per_col]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidModel("non-finite SAR parameter".into()));
        }
        if self.velocity().norm() <= 0.0 {
            return Err(GeometryError::InvalidModel("|v| must be positive".into()));
        }
        if self.range_per_col <= 0.0 {
            return Err(GeometryError::InvalidModel("range_per_col must be positive".into()));
        }
        if self.az_time_per_row == 0.0 {
            return Err(GeometryError::InvalidModel("az_time_per_row must be nonzero".into()));
        }
        Ok(())
    }

    pub fn position0(&self) -> Vector3<f64> {
        Vector3::from(self.s0)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from(self.v)
    }

    /// Sensor position at azimuth time `t`.
    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.position0() + self.velocity() * (t - self.t0)
    }

    pub fn time_of_row(&self, row: f64) -> f64 {
        self.t0 + row * self.az_time_per_row
    }

    pub fn range_of_col(&self, col: f64) -> f64 {
        self.r_near + col * self.range_per_col
    }

    pub fn to_observation(&self, ip: ImagePoint) -> SarObservation {
        SarObservation {
            t: self.time_of_row(ip.row),
            r: self.range_of_col(ip.col),
        }
    }

    pub fn to_image(&self, obs: SarObservation) -> ImagePoint {
        ImagePoint {
            row: (obs.t - self.t0) / self.az_time_per_row,
            col: (obs.r - self.r_near) / self.range_per_col,
        }
    }

    /// Unit vector pointing from the ground track toward the imaged side.
    pub fn look_direction(&self) -> Result<Vector3<f64>, GeometryError> {
        let right = self.velocity().cross(&Vector3::z());
        let n = right.norm();
        if n <= 1e-12 * self.velocity().norm() {
            return Err(GeometryError::AmbiguousSide);
        }
        let right = right / n;
        Ok(match self.look_side {
            LookSide::Right => right,
            LookSide::Left => -right,
        })
    }

    /// Doppler condition `V · (P - S(t))`, scaled to meters by `|V|`.
    pub fn doppler_distance(&self, p: &GroundPoint, t: f64) -> f64 {
        let v = self.velocity();
        v.dot(&(p.to_vector() - self.position(t))) / v.norm()
    }
}

/// Pinhole camera with Euler-angle orientation and focal length in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalSensorModel {
    /// Projection center.
    pub pc: [f64; 3],
    pub phi: f64,
    pub omega: f64,
    pub kappa: f64,
    pub focal: f64,
    pub principal_row: f64,
    pub principal_col: f64,
}

impl OpticalSensorModel {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = self.pc.iter().all(|v| v.is_finite())
            && [self.phi, self.omega, self.kappa, self.focal, self.principal_row, self.principal_col]
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidModel("non-finite optical parameter".into()));
        }
        if self.focal <= 0.0 {
            return Err(GeometryError::InvalidModel("focal must be positive".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-12 || (r.determinant() - 1.0).abs() > 1e-12 {
            return Err(GeometryError::InvalidModel("rotation is not orthonormal".into()));
        }
        Ok(())
    }

    /// Camera looking from `pc` at `target`, with image rotation `kappa`.
    pub fn look_at(
        pc: [f64; 3],
        target: GroundPoint,
        kappa: f64,
        focal: f64,
        principal_row: f64,
        principal_col: f64,
    ) -> Self {
        let axis = (target.to_vector() - Vector3::from(pc)).normalize();
        // The optical axis is -R e3; with R = Rz Ry Rx, Rzᵀ(-axis) = Ry Rx e3.
        let rz = rotation_from_angles(0.0, 0.0, kappa);
        let b = rz.transpose() * (-axis);
        let omega = (-b.y).clamp(-1.0, 1.0).asin();
        let phi = b.x.atan2(b.z);
        Self {
            pc,
            phi,
            omega,
            kappa,
            focal,
            principal_row,
            principal_col,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.pc)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_angles(self.phi, self.omega, self.kappa)
    }

    /// Viewing direction (unit, world frame) of the principal point.
    pub fn axis(&self) -> Vector3<f64> {
        -self.rotation().column(2).into_owned()
    }
}

/// `R = Rz(kappa) · Ry(phi) · Rx(omega)`.
pub fn rotation_from_angles(phi: f64, omega: f64, kappa: f64) -> Matrix3<f64> {
    let (sp, cp) = phi.sin_cos();
    let (so, co) = omega.sin_cos();
    let (sk, ck) = kappa.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, co, -so, 0.0, so, co);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(ck, -sk, 0.0, sk, ck, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Zero-Doppler time and slant range of a ground point (closed form for a
/// linear orbit).
pub fn sar_forward(model: &SarSensorModel, p: &GroundPoint) -> SarObservation {
    let v = model.velocity();
    let t = model.t0 + v.dot(&(p.to_vector() - model.position0())) / v.norm_squared();
    let r = (model.position(t) - p.to_vector()).norm();
    SarObservation { t, r }
}

/// Ground point at height `h` on the range-Doppler circle of `obs`, on the
/// model's look side.
pub fn sar_inverse_at_height(
    model: &SarSensorModel,
    obs: SarObservation,
    h: f64,
) -> Result<GroundPoint, GeometryError> {
    let side = model.look_direction()?;
    let s = model.position(obs.t);
    let n1 = model.velocity().normalize();
    let c = n1.z;
    // Foot of the perpendicular from S onto the line {zero-Doppler plane} ∩ {z = h}.
    let b = (h - s.z) / (1.0 - c * c);
    let a = -b * c;
    let w = n1 * a + Vector3::z() * b;
    let closest2 = w.norm_squared();
    let r2 = obs.r * obs.r;
    if r2 < closest2 {
        return Err(GeometryError::NoIntersection {
            h,
            range: obs.r,
            closest: closest2.sqrt(),
        });
    }
    let along = (r2 - closest2).sqrt();
    let p = s + w + side * along;
    // Pin the height exactly; the constructed point already satisfies it up to rounding.
    Ok(GroundPoint::new(p.x, p.y, h))
}

/// Camera-frame vector `u = Rᵀ (P - Pc)`.
fn camera_vector(model: &OpticalSensorModel, p: &GroundPoint) -> Vector3<f64> {
    model.rotation().transpose() * (p.to_vector() - model.center())
}

pub fn opt_forward(model: &OpticalSensorModel, p: &GroundPoint) -> Result<ImagePoint, GeometryError> {
    let u = camera_vector(model, p);
    // The camera looks along -z of its own frame.
    if !(u.z < 0.0) {
        return Err(GeometryError::BehindCamera);
    }
    Ok(ImagePoint {
        col: model.principal_col + model.focal * u.x / u.z,
        row: model.principal_row + model.focal * u.y / u.z,
    })
}

/// Intersection of the viewing ray through `ip` with the plane `z = h`.
pub fn opt_inverse_at_height(
    model: &OpticalSensorModel,
    ip: ImagePoint,
    h: f64,
) -> Result<GroundPoint, GeometryError> {
    let cam = Vector3::new(
        ip.col - model.principal_col,
        ip.row - model.principal_row,
        model.focal,
    );
    // P = Pc + λ R cam with λ < 0 for points in front of the camera.
    let dir = model.rotation() * cam;
    let pc = model.center();
    if dir.z.abs() <= 1e-15 * dir.norm() {
        return Err(GeometryError::RayParallelToPlane(h));
    }
    let lambda = (h - pc.z) / dir.z;
    if lambda >= 0.0 {
        return Err(GeometryError::BehindCamera);
    }
    let p = pc + dir * lambda;
    Ok(GroundPoint::new(p.x, p.y, h))
}
