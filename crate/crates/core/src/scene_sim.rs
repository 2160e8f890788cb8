//! Synthetic urban scenes and a pair of simple renderers.
//!
//! A scene is a cell-constant height field (ground plane plus extruded boxes)
//! with a procedural reflectance texture. The optical renderer ray-casts every
//! pixel into the height field; the SAR renderer forward-projects surface
//! samples into (zero-Doppler time, slant range) bins, so layover and radar
//! shadow follow from the geometry. The two renderers use different
//! radiometric transfer functions of the same texture.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::PointCloud;
use crate::geometry::{
    opt_forward, sar_forward, sar_inverse_at_height, GeometryError, GroundPoint, ImagePoint, LookSide,
    OpticalSensorModel, SarSensorModel,
};
use crate::raster::{GeoTransform, Raster, Sidecar};

const RAY_EPS: f64 = 1e-6;
/// Thermal noise floor added to SAR intensities so shadow stays finite in dB.
const SAR_NOISE_FLOOR: f64 = 1e-3;
const SAR_SPEED: f64 = 7500.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("no pixel of the optical image sees the scene")]
    SceneNotVisible,
    #[error("the scene lies outside the SAR swath")]
    SceneOutsideSwath,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Axis-aligned box on the ground plane; `height` is above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    /// Number of random reflectance rectangles painted over the base level.
    pub patches: usize,
    pub min_patch: f64,
    pub max_patch: f64,
    /// Amplitude of the fine-grained value noise.
    pub grain: f64,
    /// Correlation length of the value noise in meters.
    pub grain_scale: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self { patches: 900, min_patch: 3.0, max_patch: 30.0, grain: 0.15, grain_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    /// Height-field and texture cell size in meters.
    pub cell: f64,
    pub ground_height: f64,
    pub buildings: Vec<Building>,
    pub texture_seed: u64,
    pub texture: TextureParams,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            origin: [0.0, 0.0],
            extent: [360.0, 360.0],
            cell: 0.25,
            ground_height: 0.0,
            buildings: Vec::new(),
            texture_seed: 1,
            texture: TextureParams::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if !(self.cell > 0.0) || !(self.extent[0] > self.cell) || !(self.extent[1] > self.cell) {
            return bad("extent and cell must be positive".into());
        }
        let (x0, y0) = (self.origin[0], self.origin[1]);
        let (x1, y1) = (x0 + self.extent[0], y0 + self.extent[1]);
        for (i, b) in self.buildings.iter().enumerate() {
            if !(b.height > 0.0) {
                return bad(format!("buildings[{i}].height must be > 0"));
            }
            if !(b.x0 < b.x1 && b.y0 < b.y1 && b.x0 >= x0 && b.y0 >= y0 && b.x1 <= x1 && b.y1 <= y1) {
                return bad(format!("buildings[{i}] footprint outside extent or empty"));
            }
        }
        Ok(())
    }

    pub fn max_height(&self) -> f64 {
        self.ground_height + self.buildings.iter().map(|b| b.height).fold(0.0, f64::max)
    }

    /// Random non-overlapping boxes with a free border, heights in
    /// `[min_h, max_h]`. Footprints are snapped to the cell grid.
    pub fn with_random_buildings(mut self, count: usize, min_h: f64, max_h: f64, border: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let snap = |v: f64, o: f64, c: f64| o + ((v - o) / c).round() * c;
        let mut placed: Vec<Building> = Vec::new();
        let mut attempts = 0;
        while placed.len() < count && attempts < 10_000 {
            attempts += 1;
            let w = rng.random_range(12.0..28.0);
            let l = rng.random_range(12.0..28.0);
            let x = rng.random_range(self.origin[0] + border..self.origin[0] + self.extent[0] - border - w);
            let y = rng.random_range(self.origin[1] + border..self.origin[1] + self.extent[1] - border - l);
            let b = Building {
                x0: snap(x, self.origin[0], self.cell),
                y0: snap(y, self.origin[1], self.cell),
                x1: snap(x + w, self.origin[0], self.cell),
                y1: snap(y + l, self.origin[1], self.cell),
                height: (rng.random_range(min_h..=max_h) / self.cell).round() * self.cell,
            };
            let gap = 25.0;
            if placed.iter().all(|p| b.x0 > p.x1 + gap || b.x1 < p.x0 - gap || b.y0 > p.y1 + gap || b.y1 < p.y0 - gap) {
                placed.push(b);
            }
        }
        self.buildings = placed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderNoise {
    /// Additive Gaussian noise of the optical image in gray levels.
    pub optical_sigma: f64,
    pub speckle_looks: f64,
    pub low_speckle_looks: f64,
    pub enable_shadow_layover: bool,
    pub seed: u64,
}

impl Default for RenderNoise {
    fn default() -> Self {
        Self { optical_sigma: 2.0, speckle_looks: 1.0, low_speckle_looks: 32.0, enable_shadow_layover: true, seed: 7 }
    }
}

impl RenderNoise {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.optical_sigma >= 0.0) {
            return Err(SimError::InvalidSpec("optical_sigma must be >= 0".into()));
        }
        if !(self.speckle_looks >= 1.0) || !(self.low_speckle_looks >= 1.0) {
            return Err(SimError::InvalidSpec("speckle looks must be >= 1".into()));
        }
        Ok(())
    }
}

/// DEM and reflectance rasters of a scene; both carry a geotransform whose
/// pixel centers sit at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dem: Raster,
    pub reflectance: Raster,
}

fn value_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize, cell: f64, scale: f64) -> Vec<f64> {
    let step = (scale / cell).max(1.0);
    let (lr, lc) = ((rows as f64 / step).ceil() as usize + 2, (cols as f64 / step).ceil() as usize + 2);
    let lattice: Vec<f64> = (0..lr * lc).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let fr = r as f64 / step;
        let (i, u) = (fr.floor() as usize, fr - fr.floor());
        for c in 0..cols {
            let fc = c as f64 / step;
            let (j, v) = (fc.floor() as usize, fc - fc.floor());
            let a = lattice[i * lc + j] * (1.0 - v) + lattice[i * lc + j + 1] * v;
            let b = lattice[(i + 1) * lc + j] * (1.0 - v) + lattice[(i + 1) * lc + j + 1] * v;
            out[r * cols + c] = a * (1.0 - u) + b * u;
        }
    }
    out
}

pub fn make_scene(spec: &SceneSpec) -> Result<Scene, SimError> {
    spec.validate()?;
    let d = spec.cell;
    let cols = (spec.extent[0] / d).round() as usize;
    let rows = (spec.extent[1] / d).round() as usize;
    let (ox, oy) = (spec.origin[0], spec.origin[1]);
    let gt = GeoTransform { x0: ox + d / 2.0, y0: oy + d / 2.0, dx: d, dy: d };
    let center = |r: usize, c: usize| (ox + (c as f64 + 0.5) * d, oy + (r as f64 + 0.5) * d);

    let mut dem = vec![spec.ground_height as f32; rows * cols];
    for b in &spec.buildings {
        let top = (spec.ground_height + b.height) as f32;
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = center(r, c);
                if x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1 {
                    let v = &mut dem[r * cols + c];
                    *v = v.max(top);
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let mut refl = vec![0.35f64; rows * cols];
    let t = &spec.texture;
    for _ in 0..t.patches {
        let w = rng.random_range(t.min_patch..=t.max_patch);
        let l = rng.random_range(t.min_patch..=t.max_patch);
        let x = rng.random_range(ox - w..ox + spec.extent[0]);
        let y = rng.random_range(oy - l..oy + spec.extent[1]);
        let level = rng.random_range(0.05..0.95);
        let c0 = (((x - ox) / d).floor().max(0.0)) as usize;
        let c1 = ((((x + w) - ox) / d).ceil().max(0.0) as usize).min(cols);
        let r0 = (((y - oy) / d).floor().max(0.0)) as usize;
        let r1 = ((((y + l) - oy) / d).ceil().max(0.0) as usize).min(rows);
        for r in r0..r1 {
            for c in c0..c1 {
                refl[r * cols + c] = level;
            }
        }
    }
    let grain = value_noise(&mut rng, rows, cols, d, t.grain_scale);
    let refl: Vec<f32> = refl
        .iter()
        .zip(&grain)
        .map(|(v, g)| (v + t.grain * 2.0 * g).clamp(0.0, 1.0) as f32)
        .collect();

    let sidecar = Sidecar { geotransform: Some(gt), ..Default::default() };
    Ok(Scene {
        dem: Raster::new(rows, cols, dem).expect("sized above").with_sidecar(sidecar.clone()),
        reflectance: Raster::new(rows, cols, refl).expect("sized above").with_sidecar(sidecar),
    })
}

/// Surface hit of a ray: position and outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

/// Cell-constant height field built from a DEM raster.
#[derive(Debug, Clone)]
pub struct HeightField {
    ox: f64,
    oy: f64,
    d: f64,
    rows: usize,
    cols: usize,
    h: Vec<f64>,
    hmin: f64,
    hmax: f64,
}

impl HeightField {
    /// Requires a geotransform with equal positive spacing on both axes.
    pub fn from_raster(dem: &Raster) -> Result<Self, SimError> {
        let gt = dem
            .sidecar
            .geotransform
            .ok_or_else(|| SimError::InvalidSpec("DEM without geotransform".into()))?;
        if !(gt.dx > 0.0) || (gt.dx - gt.dy).abs() > 1e-12 * gt.dx {
            return Err(SimError::InvalidSpec("DEM spacing must be square with positive axes".into()));
        }
        let h: Vec<f64> = dem.data().iter().map(|&v| v as f64).collect();
        if h.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidSpec("DEM has nodata cells".into()));
        }
        let (hmin, hmax) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        Ok(Self { ox: gt.x0 - gt.dx / 2.0, oy: gt.y0 - gt.dy / 2.0, d: gt.dx, rows: dem.rows(), cols: dem.cols(), h, hmin, hmax })
    }

    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.ox, self.oy, self.ox + self.cols as f64 * self.d, self.oy + self.rows as f64 * self.d)
    }

    pub fn height_range(&self) -> (f64, f64) {
        (self.hmin, self.hmax)
    }

    pub fn cell_size(&self) -> f64 {
        self.d
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.ox) / self.d).floor();
        let r = ((y - self.oy) / self.d).floor();
        (c >= 0.0 && r >= 0.0 && (c as usize) < self.cols && (r as usize) < self.rows).then_some((r as usize, c as usize))
    }

    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        self.cell_of(x, y).map(|(r, c)| self.h[r * self.cols + c])
    }

    fn cell_height(&self, r: usize, c: usize) -> f64 {
        self.h[r * self.cols + c]
    }

    /// Parameter interval in which the ray's horizontal trace lies inside the
    /// field.
    fn xy_interval(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> (f64, f64) {
        let (x0, y0, x1, y1) = self.bounds();
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (o, d, a, b) in [(o.x, dir.x, x0, x1), (o.y, dir.y, y0, y1)] {
            if d.abs() < 1e-300 {
                if o < a || o >= b {
                    return (1.0, 0.0);
                }
            } else {
                let (t1, t2) = ((a - o) / d, (b - o) / d);
                lo = lo.max(t1.min(t2));
                hi = hi.min(t1.max(t2));
            }
        }
        (lo, hi)
    }

    /// First surface hit of a descending ray.
    pub fn cast(&self, o: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        if !(dir.z < 0.0) {
            return None;
        }
        let (lo, hi) = self.xy_interval(o, dir);
        let t_top = if o.z > self.hmax { (self.hmax - o.z) / dir.z } else { 0.0 };
        let mut t = lo.max(t_top).max(0.0);
        if t > hi {
            return None;
        }
        let p = o + dir * t;
        let nudge = o + dir * (t + RAY_EPS * self.d / dir.xy().norm().max(1e-12)).min(hi);
        let (mut r, mut c) = self.cell_of(nudge.x, nudge.y).or_else(|| self.cell_of(p.x, p.y))?;
        let step_x: i64 = if dir.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dir.y > 0.0 { 1 } else { -1 };
        let next_x = |c: usize| self.ox + (c as f64 + if step_x > 0 { 1.0 } else { 0.0 }) * self.d;
        let next_y = |r: usize| self.oy + (r as f64 + if step_y > 0 { 1.0 } else { 0.0 }) * self.d;
        let mut t_max_x = if dir.x.abs() > 1e-300 { (next_x(c) - o.x) / dir.x } else { f64::INFINITY };
        let mut t_max_y = if dir.y.abs() > 1e-300 { (next_y(r) - o.y) / dir.y } else { f64::INFINITY };
        let dt_x = if dir.x.abs() > 1e-300 { self.d / dir.x.abs() } else { f64::INFINITY };
        let dt_y = if dir.y.abs() > 1e-300 { self.d / dir.y.abs() } else { f64::INFINITY };
        let mut entered: Option<Vector3<f64>> = None;
        loop {
            let hc = self.cell_height(r, c);
            let z_in = o.z + dir.z * t;
            if z_in <= hc + RAY_EPS {
                let normal = entered.unwrap_or_else(Vector3::z);
                let tt = if entered.is_none() { ((hc - o.z) / dir.z).max(t.min((hc - o.z) / dir.z)) } else { t };
                return Some(Hit { point: o + dir * tt, normal });
            }
            let t_exit = t_max_x.min(t_max_y);
            let t_hit = (hc - o.z) / dir.z;
            if t_hit <= t_exit {
                return Some(Hit { point: o + dir * t_hit, normal: Vector3::z() });
            }
            if t_max_x < t_max_y {
                let nc = c as i64 + step_x;
                if nc < 0 || nc >= self.cols as i64 {
                    return None;
                }
                c = nc as usize;
                t = t_max_x;
                t_max_x += dt_x;
                entered = Some(Vector3::new(-step_x as f64, 0.0, 0.0));
            } else {
                let nr = r as i64 + step_y;
                if nr < 0 || nr >= self.rows as i64 {
                    return None;
                }
                r = nr as usize;
                t = t_max_y;
                t_max_y += dt_y;
                entered = Some(Vector3::new(0.0, -step_y as f64, 0.0));
            }
        }
    }

    /// True when the segment from surface point `p` toward `target` (above the
    /// field) is not blocked. The cell containing `p` is not tested.
    pub fn visible(&self, p: &Vector3<f64>, target: &Vector3<f64>) -> bool {
        let dir = target - p;
        let horiz = dir.xy().norm();
        if horiz < 1e-12 || p.z >= self.hmax {
            return true;
        }
        let dir = dir / horiz;
        if dir.z <= 0.0 {
            return false;
        }
        let start = p + dir * (RAY_EPS * self.d);
        let Some((mut r, mut c)) = self.cell_of(start.x, start.y) else {
            return true;
        };
        let step_x: i64 = if dir.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dir.y > 0.0 { 1 } else { -1 };
        let bx = |c: usize| self.ox + (c as f64 + if step_x > 0 { 1.0 } else { 0.0 }) * self.d;
        let by = |r: usize| self.oy + (r as f64 + if step_y > 0 { 1.0 } else { 0.0 }) * self.d;
        let mut t_max_x = if dir.x.abs() > 1e-300 { (bx(c) - p.x) / dir.x } else { f64::INFINITY };
        let mut t_max_y = if dir.y.abs() > 1e-300 { (by(r) - p.y) / dir.y } else { f64::INFINITY };
        let dt_x = if dir.x.abs() > 1e-300 { self.d / dir.x.abs() } else { f64::INFINITY };
        let dt_y = if dir.y.abs() > 1e-300 { self.d / dir.y.abs() } else { f64::INFINITY };
        loop {
            let t = t_max_x.min(t_max_y);
            let z = p.z + dir.z * t;
            if z >= self.hmax {
                return true;
            }
            if t_max_x < t_max_y {
                let nc = c as i64 + step_x;
                if nc < 0 || nc >= self.cols as i64 {
                    return true;
                }
                c = nc as usize;
                t_max_x += dt_x;
            } else {
                let nr = r as i64 + step_y;
                if nr < 0 || nr >= self.rows as i64 {
                    return true;
                }
                r = nr as usize;
                t_max_y += dt_y;
            }
            // the ray rises, so its lowest point in the new cell is at entry
            if self.cell_height(r, c) > z + RAY_EPS {
                return false;
            }
        }
    }

    /// Reference points on the top faces, one per `stride` cells.
    pub fn reference_cloud(&self, stride: usize) -> PointCloud {
        let stride = stride.max(1);
        let mut pts = Vec::new();
        for r in (0..self.rows).step_by(stride) {
            for c in (0..self.cols).step_by(stride) {
                let x = self.ox + (c as f64 + 0.5) * self.d;
                let y = self.oy + (r as f64 + 0.5) * self.d;
                pts.push(GroundPoint::new(x, y, self.cell_height(r, c)));
            }
        }
        PointCloud::new(pts)
    }
}

fn optical_gray(refl: f64, normal: &Vector3<f64>) -> f64 {
    // soft light from the south-west; roofs and ground face straight up
    let sun = Vector3::new(-0.4, -0.3, 0.866).normalize();
    let shade = 0.35 + 0.65 * normal.dot(&sun).max(0.0) / sun.z;
    20.0 + 200.0 * refl * shade.min(1.2)
}

fn sar_backscatter(refl: f64, wall: bool) -> f64 {
    if wall {
        0.25 + 0.5 * refl
    } else {
        0.02 + 0.9 * refl * refl
    }
}

fn row_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ray-cast rendering with 2×2 supersampling per pixel.
pub fn render_optical(
    scene: &Scene,
    model: &OpticalSensorModel,
    rows: usize,
    cols: usize,
    noise: &RenderNoise,
) -> Result<Raster, SimError> {
    model.validate()?;
    noise.validate()?;
    let hf = HeightField::from_raster(&scene.dem)?;
    let refl = &scene.reflectance;
    let gt = refl.sidecar.geotransform.ok_or_else(|| SimError::InvalidSpec("reflectance without geotransform".into()))?;
    let rot = model.rotation();
    let pc = model.center();
    let sample_refl = |x: f64, y: f64| {
        let (r, c) = gt.to_pixel(x, y);
        refl.value(r.round().max(0.0) as usize, c.round().max(0.0) as usize)
    };
    let normal = Normal::new(0.0, noise.optical_sigma.max(0.0)).map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    let rows_out: Vec<(Vec<f32>, usize)> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut rng = row_rng(noise.seed, r as u64);
            let mut hits = 0;
            let line = (0..cols)
                .map(|c| {
                    let mut acc = 0.0;
                    let mut n = 0;
                    for (dr, dc) in [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)] {
                        let cam = Vector3::new(
                            c as f64 + dc - model.principal_col,
                            r as f64 + dr - model.principal_row,
                            model.focal,
                        );
                        let dir = -(rot * cam);
                        if let Some(hit) = hf.cast(&pc, &dir) {
                            if let Some(v) = sample_refl(hit.point.x - hit.normal.x * 1e-6, hit.point.y - hit.normal.y * 1e-6) {
                                acc += optical_gray(v, &hit.normal);
                                n += 1;
                            }
                        }
                    }
                    hits += n;
                    let v = if n > 0 { acc / n as f64 } else { 0.0 };
                    let e = if noise.optical_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    (v + e) as f32
                })
                .collect();
            (line, hits)
        })
        .collect();
    if rows_out.iter().all(|(_, h)| *h == 0) {
        return Err(SimError::SceneNotVisible);
    }
    let data: Vec<f32> = rows_out.into_iter().flat_map(|(l, _)| l).collect();
    Ok(Raster::new(rows, cols, data)
        .expect("sized above")
        .with_sidecar(Sidecar { optical: Some(model.clone()), ..Default::default() }))
}

/// Speckled SAR intensity plus a low-speckle channel of the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SarRender {
    pub intensity: Raster,
    pub low_speckle: Raster,
}

/// One surface sample projected into the SAR image.
struct SarSample {
    row: f64,
    col: f64,
    value: f64,
}

/// Surface samples whose azimuth row falls in `(row - 1, row + 1)`.
fn sar_samples_for_row(
    hf: &HeightField,
    refl: &Raster,
    model: &SarSensorModel,
    row: usize,
    sub: usize,
    shadows: bool,
) -> Vec<SarSample> {
    let v = model.velocity();
    let dy_row = model.az_time_per_row * v.norm();
    let s0 = model.position0();
    // rows map linearly to y for an orbit along +y or -y
    let y_of_row = |rr: f64| s0.y + v.y.signum() * rr * dy_row;
    let (ya, yb) = {
        let (a, b) = (y_of_row(row as f64 - 1.0), y_of_row(row as f64 + 1.0));
        (a.min(b), a.max(b))
    };
    let d = hf.d;
    let ds = d / sub as f64;
    let r_lo = (((ya - hf.oy) / d).floor().max(0.0)) as usize;
    let r_hi = ((((yb - hf.oy) / d).ceil()) as usize).min(hf.rows);
    let range_spacing = model.range_per_col;
    let mut out = Vec::new();
    let mut push = |p: Vector3<f64>, area: f64, value: f64| {
        let obs = sar_forward(model, &GroundPoint::new(p.x, p.y, p.z));
        let ip = model.to_image(obs);
        if ip.row <= row as f64 - 1.0 || ip.row >= row as f64 + 1.0 {
            return;
        }
        let s = model.position(obs.t);
        if shadows && !hf.visible(&p, &s) {
            return;
        }
        let sin_inc = (s - p).xy().norm() / obs.r;
        let pixel_area = dy_row * range_spacing / sin_inc.max(1e-6);
        out.push(SarSample { row: ip.row, col: ip.col, value: value * area / pixel_area });
    };
    for r in r_lo..r_hi {
        for k in 0..sub {
            let y = hf.oy + r as f64 * d + (k as f64 + 0.5) * ds;
            if y <= ya || y >= yb {
                continue;
            }
            for c in 0..hf.cols {
                let h = hf.cell_height(r, c);
                let rv = refl.value(r, c).unwrap_or(0.0);
                for m in 0..sub {
                    let x = hf.ox + c as f64 * d + (m as f64 + 0.5) * ds;
                    push(Vector3::new(x, y, h), ds * ds, sar_backscatter(rv, false));
                }
                if !shadows || c + 1 >= hf.cols {
                    continue;
                }
                // vertical faces between x-neighbours, facing the lower side
                let hn = hf.cell_height(r, c + 1);
                if (hn - h).abs() < 1e-9 {
                    continue;
                }
                let (lo, hi, nx, rv_w) = if hn > h {
                    (h, hn, -1.0, refl.value(r, c + 1).unwrap_or(0.0))
                } else {
                    (hn, h, 1.0, rv)
                };
                let look = model.look_direction().map(|l| l.x).unwrap_or(0.0);
                // only faces turned toward the sensor are lit
                if nx * look >= 0.0 {
                    continue;
                }
                let xw = hf.ox + (c + 1) as f64 * d + nx * 1e-7;
                let nz = ((hi - lo) / ds).ceil().max(1.0) as usize;
                let dz = (hi - lo) / nz as f64;
                for kz in 0..nz {
                    let z = lo + (kz as f64 + 0.5) * dz;
                    push(Vector3::new(xw, y, z), ds * dz, sar_backscatter(rv_w, true));
                }
            }
        }
    }
    out
}

/// Forward projection of surface samples into the slant-range grid with
/// bilinear splatting, layover accumulation, shadowing and gamma speckle.
pub fn render_sar(
    scene: &Scene,
    model: &SarSensorModel,
    rows: usize,
    cols: usize,
    noise: &RenderNoise,
) -> Result<SarRender, SimError> {
    model.validate()?;
    noise.validate()?;
    let hf = HeightField::from_raster(&scene.dem)?;
    let sub = 2;
    let lines: Vec<(Vec<f64>, usize)> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut line = vec![0.0; cols];
            let mut n = 0;
            for s in sar_samples_for_row(&hf, &scene.reflectance, model, r, sub, noise.enable_shadow_layover) {
                let wr = 1.0 - (s.row - r as f64).abs();
                let c0 = s.col.floor();
                let fc = s.col - c0;
                for (cc, wc) in [(c0 as i64, 1.0 - fc), (c0 as i64 + 1, fc)] {
                    if cc >= 0 && (cc as usize) < cols && wc > 0.0 {
                        line[cc as usize] += s.value * wr * wc;
                        n += 1;
                    }
                }
            }
            (line, n)
        })
        .collect();
    if lines.iter().all(|(_, n)| *n == 0) {
        return Err(SimError::SceneOutsideSwath);
    }
    let speckle = |looks: f64, stream_base: u64| -> Vec<f32> {
        lines
            .par_iter()
            .enumerate()
            .flat_map_iter(|(r, (line, _))| {
                let mut rng = row_rng(noise.seed, stream_base + r as u64);
                let gamma = Gamma::new(looks, 1.0 / looks).expect("looks >= 1");
                line.iter()
                    .map(|&v| ((v + SAR_NOISE_FLOOR) * gamma.sample(&mut rng)) as f32)
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let sidecar = Sidecar { sar: Some(model.clone()), ..Default::default() };
    let intensity = Raster::new(rows, cols, speckle(noise.speckle_looks, 1 << 32))
        .expect("sized above")
        .with_sidecar(sidecar.clone());
    let low_speckle = Raster::new(rows, cols, speckle(noise.low_speckle_looks, 2 << 32))
        .expect("sized above")
        .with_sidecar(sidecar);
    Ok(SarRender { intensity, low_speckle })
}

/// `10·log10` of an intensity raster; non-positive samples become nodata.
pub fn to_db(r: &Raster) -> Raster {
    let data = r.data().iter().map(|&v| if v > 0.0 { 10.0 * v.log10() } else { f32::NAN }).collect();
    Raster::new(r.rows(), r.cols(), data)
        .expect("same size")
        .with_nodata(r.nodata)
        .with_sidecar(r.sidecar.clone())
}

/// Acquisition geometry of a simulated image pair over a scene: both sensors
/// look from the -x side (same-side stereo), the SAR flying along +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSetup {
    pub sar_off_nadir_deg: f64,
    pub opt_off_nadir_deg: f64,
    pub sar_altitude: f64,
    pub opt_altitude: f64,
    /// Ground sample distance of both images in meters.
    pub gsd: f64,
    /// Scene strip left out of both images on every side, in meters.
    pub border: f64,
}

impl Default for SensorSetup {
    fn default() -> Self {
        Self {
            sar_off_nadir_deg: 45.0,
            opt_off_nadir_deg: 5.0,
            sar_altitude: 515_000.0,
            opt_altitude: 770_000.0,
            gsd: 0.5,
            border: 20.0,
        }
    }
}

/// Sensor models with their raster shapes `(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensors {
    pub sar: SarSensorModel,
    pub sar_shape: (usize, usize),
    pub opt: OpticalSensorModel,
    pub opt_shape: (usize, usize),
}

impl SensorSetup {
    pub fn build(&self, spec: &SceneSpec) -> Result<Sensors, SimError> {
        if !(self.gsd > 0.0) || !(self.sar_off_nadir_deg > 0.0 && self.sar_off_nadir_deg < 80.0) {
            return Err(SimError::InvalidSpec("sensor setup out of range".into()));
        }
        let (x0, y0) = (spec.origin[0] + self.border, spec.origin[1] + self.border);
        let (x1, y1) = (spec.origin[0] + spec.extent[0] - self.border, spec.origin[1] + spec.extent[1] - self.border);
        if !(x1 > x0 && y1 > y0) {
            return Err(SimError::InvalidSpec("border leaves no image area".into()));
        }
        let (cx, cy, h) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0, spec.ground_height);
        let theta = self.sar_off_nadir_deg.to_radians();
        let xs = cx - (self.sar_altitude - h) * theta.tan();
        let range_per_col = self.gsd * theta.sin();
        let slant = |x: f64| ((x - xs).powi(2) + (self.sar_altitude - h).powi(2)).sqrt();
        let sar = SarSensorModel {
            s0: [xs, y0, self.sar_altitude],
            v: [0.0, SAR_SPEED, 0.0],
            t0: 0.0,
            az_time_per_row: self.gsd / SAR_SPEED,
            r_near: slant(x0),
            range_per_col,
            look_side: LookSide::Right,
        };
        let sar_shape = (
            ((y1 - y0) / self.gsd).floor() as usize + 1,
            ((slant(x1) - slant(x0)) / range_per_col).floor() as usize + 1,
        );

        let alpha = self.opt_off_nadir_deg.to_radians();
        let pc = [cx - (self.opt_altitude - h) * alpha.tan(), cy, self.opt_altitude];
        let dist = (self.opt_altitude - h) / alpha.cos();
        let focal = dist / self.gsd;
        let opt_rows = ((y1 - y0) / self.gsd).floor() as usize + 1;
        let opt_cols = ((x1 - x0) / self.gsd).floor() as usize + 1;
        let opt = OpticalSensorModel::look_at(
            pc,
            GroundPoint::new(cx, cy, h),
            std::f64::consts::PI,
            focal,
            (opt_rows as f64 - 1.0) / 2.0,
            (opt_cols as f64 - 1.0) / 2.0,
        );
        sar.validate()?;
        opt.validate()?;
        Ok(Sensors { sar, sar_shape, opt, opt_shape: (opt_rows, opt_cols) })
    }
}

/// Why a ground point has no usable correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthStatus {
    Ok,
    SarShadow,
    SarLayover,
    OpticalOccluded,
    OutsideSar,
    OutsideOptical,
    /// Visible, but too close to the optical border for a full template.
    OutsideTemplateMargin,
    NoSurface,
}

impl TruthStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TruthStatus::Ok => "ok",
            TruthStatus::SarShadow => "sar_shadow",
            TruthStatus::SarLayover => "sar_layover",
            TruthStatus::OpticalOccluded => "optical_occluded",
            TruthStatus::OutsideSar => "outside_sar",
            TruthStatus::OutsideOptical => "outside_optical",
            TruthStatus::OutsideTemplateMargin => "outside_template_margin",
            TruthStatus::NoSurface => "no_surface",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub ground: GroundPoint,
    pub sar: ImagePoint,
    pub opt: ImagePoint,
}

fn inside(ip: &ImagePoint, shape: (usize, usize)) -> bool {
    ip.row >= -0.5 && ip.col >= -0.5 && ip.row < shape.0 as f64 - 0.5 && ip.col < shape.1 as f64 - 0.5
}

fn optical_visible(hf: &HeightField, opt: &OpticalSensorModel, p: &Vector3<f64>) -> bool {
    hf.visible(p, &opt.center())
}

/// Exact projections of surface points into both images, each with a
/// visibility status.
pub fn ground_truth_correspondences(
    hf: &HeightField,
    sensors: &Sensors,
    points: &[GroundPoint],
) -> Vec<(Correspondence, TruthStatus)> {
    points
        .iter()
        .map(|g| {
            let p = g.to_vector();
            let obs = sar_forward(&sensors.sar, g);
            let sar = sensors.sar.to_image(obs);
            let opt = opt_forward(&sensors.opt, g).unwrap_or(ImagePoint { row: f64::NAN, col: f64::NAN });
            let corr = Correspondence { ground: *g, sar, opt };
            let status = if !inside(&sar, sensors.sar_shape) {
                TruthStatus::OutsideSar
            } else if !inside(&opt, sensors.opt_shape) {
                TruthStatus::OutsideOptical
            } else if !hf.visible(&p, &sensors.sar.position(obs.t)) {
                TruthStatus::SarShadow
            } else if !optical_visible(hf, &sensors.opt, &p) {
                TruthStatus::OpticalOccluded
            } else {
                TruthStatus::Ok
            };
            (corr, status)
        })
        .collect()
}

/// The surface point imaged by a SAR pixel, found along its range-Doppler
/// line between the field's lowest and highest heights. Fails when no
/// visible surface point exists (shadow) or several do (layover).
pub fn sar_pixel_truth(hf: &HeightField, sensors: &Sensors, ip: ImagePoint) -> Result<Correspondence, TruthStatus> {
    let sar = &sensors.sar;
    let obs = sar.to_observation(ip);
    let (hmin, hmax) = hf.height_range();
    let f = |h: f64| -> Option<(f64, GroundPoint)> {
        let g = sar_inverse_at_height(sar, obs, h).ok()?;
        Some((hf.height_at(g.x, g.y)? - h, g))
    };
    let step = 0.01;
    let (lo, hi) = (hmin - 0.5, hmax + 0.5);
    let n = ((hi - lo) / step).ceil() as usize;
    let mut visible = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..=n {
        let h = lo + k as f64 * step;
        let cur = f(h).map(|(v, _)| v);
        if let (Some((ha, fa)), Some(fb)) = (prev, cur) {
            if (fa > 0.0) != (fb > 0.0) {
                let (mut a, mut b) = (ha, h);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    match f(m) {
                        Some((fm, _)) if (fm > 0.0) == (fa > 0.0) => a = m,
                        _ => b = m,
                    }
                }
                // the crossing lies on a top face (root) or a wall (jump)
                let (fb_val, g) = f(b).expect("evaluated above");
                let g = if fb_val.abs() < 1e-6 { GroundPoint::new(g.x, g.y, g.h + fb_val) } else { g };
                let s = sar.position(obs.t);
                let p = g.to_vector();
                // nudge toward the sensor so wall points test the open side
                let toward = (s - p).normalize() * 1e-7;
                if hf.visible(&(p + toward), &s) {
                    visible.push(g);
                }
            }
        }
        prev = cur.map(|v| (h, v));
    }
    let g = match visible.len() {
        0 => return Err(if prev.is_none() { TruthStatus::NoSurface } else { TruthStatus::SarShadow }),
        1 => visible[0],
        _ => return Err(TruthStatus::SarLayover),
    };
    let opt = opt_forward(&sensors.opt, &g).map_err(|_| TruthStatus::OutsideOptical)?;
    if !inside(&opt, sensors.opt_shape) {
        return Err(TruthStatus::OutsideOptical);
    }
    let p = g.to_vector();
    let toward = (sensors.opt.center() - p).normalize() * 1e-7;
    if !optical_visible(hf, &sensors.opt, &(p + toward)) {
        return Err(TruthStatus::OpticalOccluded);
    }
    Ok(Correspondence { ground: g, sar: ip, opt })
}

/// [`sar_pixel_truth`] restricted to homologues whose optical template of
/// side `template_size` fits inside the optical raster.
pub fn keypoint_truth(
    hf: &HeightField,
    sensors: &Sensors,
    ip: ImagePoint,
    template_size: usize,
) -> Result<Correspondence, TruthStatus> {
    let c = sar_pixel_truth(hf, sensors, ip)?;
    let half = (template_size / 2) as f64;
    let (r, col) = (c.opt.row.round(), c.opt.col.round());
    let (rows, cols) = (sensors.opt_shape.0 as f64, sensors.opt_shape.1 as f64);
    if r < half || col < half || r > rows - 1.0 - half || col > cols - 1.0 - half {
        return Err(TruthStatus::OutsideTemplateMargin);
    }
    Ok(c)
}

pub const TRUTH_CSV_HEADER: &str = "x,y,h,r_s,c_s,r_o,c_o";

pub fn truth_csv(rows: &[Correspondence]) -> String {
    let mut s = String::from(TRUTH_CSV_HEADER);
    s.push('\n');
    for c in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.ground.x, c.ground.y, c.ground.h, c.sar.row, c.sar.col, c.opt.row, c.opt.col
        ));
    }
    s
}

/// Scene layout used by the simulator defaults: a textured square with a
/// handful of boxes up to 18 m.
pub fn standard_scene(seed: u64) -> SceneSpec {
    SceneSpec { texture_seed: seed, ..SceneSpec::default() }.with_random_buildings(8, 6.0, 18.0, 40.0, seed ^ 0x5eed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_spec() -> SceneSpec {
        SceneSpec { extent: [60.0, 60.0], cell: 0.25, texture: TextureParams { patches: 40, ..Default::default() }, ..Default::default() }
    }

    fn small_setup() -> SensorSetup {
        SensorSetup { border: 5.0, ..Default::default() }
    }

    #[test]
    fn flat_and_box_dems() {
        let s = make_scene(&flat_spec()).unwrap();
        let st = s.dem.stats().unwrap();
        assert_eq!((st.min, st.max), (0.0, 0.0));
        let mut spec = flat_spec();
        spec.buildings.push(Building { x0: 20.0, y0: 20.0, x1: 30.0, y1: 35.0, height: 20.0 });
        let st = make_scene(&spec).unwrap().dem.stats().unwrap();
        assert_eq!(st.max - st.min, 20.0);
    }

    #[test]
    fn scene_is_deterministic() {
        let a = make_scene(&flat_spec()).unwrap();
        let b = make_scene(&flat_spec()).unwrap();
        assert_eq!(a.reflectance.encode(), b.reflectance.encode());
        assert_eq!(a.dem.encode(), b.dem.encode());
    }

    #[test]
    fn invalid_buildings_rejected() {
        let mut spec = flat_spec();
        spec.buildings.push(Building { x0: 20.0, y0: 20.0, x1: 30.0, y1: 35.0, height: 0.0 });
        assert!(matches!(make_scene(&spec), Err(SimError::InvalidSpec(_))));
        spec.buildings[0] = Building { x0: 50.0, y0: 20.0, x1: 70.0, y1: 35.0, height: 5.0 };
        assert!(matches!(make_scene(&spec), Err(SimError::InvalidSpec(_))));
    }

    #[test]
    fn cast_hits_roof_and_wall() {
        let mut spec = flat_spec();
        spec.buildings.push(Building { x0: 20.0, y0: 20.0, x1: 30.0, y1: 30.0, height: 10.0 });
        let hf = HeightField::from_raster(&make_scene(&spec).unwrap().dem).unwrap();
        let down = Vector3::new(0.0, 0.0, -1.0);
        let hit = hf.cast(&Vector3::new(25.1, 25.1, 100.0), &down).unwrap();
        assert!((hit.point - Vector3::new(25.1, 25.1, 10.0)).norm() < 1e-9);
        let hit = hf.cast(&Vector3::new(5.1, 5.1, 100.0), &down).unwrap();
        assert!((hit.point.z).abs() < 1e-9);
        // 45° ray toward +x reaching the wall at x = 20 at height 5
        let hit = hf.cast(&Vector3::new(10.0, 25.1, 15.0), &Vector3::new(1.0, 0.0, -1.0)).unwrap();
        assert!((hit.point - Vector3::new(20.0, 25.1, 5.0)).norm() < 1e-9, "{:?}", hit.point);
        assert_eq!(hit.normal, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn shadow_length_matches_trigonometry() {
        let mut spec = SceneSpec { extent: [120.0, 60.0], ..flat_spec() };
        spec.buildings.push(Building { x0: 30.0, y0: 20.0, x1: 40.0, y1: 40.0, height: 20.0 });
        let hf = HeightField::from_raster(&make_scene(&spec).unwrap().dem).unwrap();
        // sensor toward -x at 30° off nadir
        let theta = 30f64.to_radians();
        let mut shadow = 0.0;
        let mut x = 40.0 + hf.cell_size() / 2.0;
        while x < 120.0 {
            let p = Vector3::new(x, 30.1, 0.0);
            let s = p + Vector3::new(-theta.sin(), 0.0, theta.cos()) * 1e6;
            if !hf.visible(&p, &s) {
                shadow += hf.cell_size();
            }
            x += hf.cell_size();
        }
        assert!((shadow - 20.0 * theta.tan()).abs() <= hf.cell_size(), "{shadow}");
    }

    #[test]
    fn optical_marker_projects_onto_rendered_edge() {
        let mut spec = flat_spec();
        spec.texture.patches = 0;
        spec.texture.grain = 0.0;
        spec.buildings.push(Building { x0: 20.0, y0: 20.0, x1: 30.0, y1: 30.0, height: 8.0 });
        let mut scene = make_scene(&spec).unwrap();
        // bright roof, dark ground
        let dem = scene.dem.clone();
        for r in 0..dem.rows() {
            for c in 0..dem.cols() {
                scene.reflectance.set(r, c, if dem.get(r, c) > 0.0 { 1.0 } else { 0.0 });
            }
        }
        let sensors = small_setup().build(&spec).unwrap();
        let noise = RenderNoise { optical_sigma: 0.0, ..Default::default() };
        let img = render_optical(&scene, &sensors.opt, sensors.opt_shape.0, sensors.opt_shape.1, &noise).unwrap();
        // the far roof edge at x = 30, crossed along the row through y = 25
        let corner = opt_forward(&sensors.opt, &GroundPoint::new(30.0, 25.0, 8.0)).unwrap();
        let mid = opt_forward(&sensors.opt, &GroundPoint::new(25.0, 25.0, 8.0)).unwrap();
        let r = corner.row.round() as usize;
        let (mut best, mut arg) = (0.0, 0usize);
        for c in mid.col.round() as usize..img.cols() {
            let step = (img.get(r, c) - img.get(r, c - 1)).abs();
            if step > best {
                best = step;
                arg = c;
            }
        }
        // a step between columns arg-1 and arg sits at arg - 0.5
        assert!(((arg as f64 - 0.5) - corner.col).abs() <= 0.5 + 1e-9, "{arg} vs {}", corner.col);
    }

    #[test]
    fn optical_flat_nadir_is_a_resampling() {
        let spec = flat_spec();
        let scene = make_scene(&spec).unwrap();
        let setup = SensorSetup { opt_off_nadir_deg: 1e-9, ..small_setup() };
        let sensors = setup.build(&spec).unwrap();
        let noise = RenderNoise { optical_sigma: 0.0, ..Default::default() };
        let img = render_optical(&scene, &sensors.opt, sensors.opt_shape.0, sensors.opt_shape.1, &noise).unwrap();
        // oracle: average of the reflectance cells under the four sub-samples
        let gt = scene.reflectance.sidecar.geotransform.unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for r in (0..img.rows()).step_by(3) {
            for c in (0..img.cols()).step_by(3) {
                let mut acc = 0.0;
                for (dr, dc) in [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)] {
                    let g = crate::geometry::opt_inverse_at_height(&sensors.opt, ImagePoint { row: r as f64 + dr, col: c as f64 + dc }, 0.0).unwrap();
                    let (pr, pc) = gt.to_pixel(g.x, g.y);
                    acc += optical_gray(scene.reflectance.value(pr.round() as usize, pc.round() as usize).unwrap(), &Vector3::z());
                }
                a.push(acc / 4.0);
                b.push(img.get(r, c) as f64);
            }
        }
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        assert!(cov / (va * vb).sqrt() > 0.99);
        let again = render_optical(&scene, &sensors.opt, sensors.opt_shape.0, sensors.opt_shape.1, &noise).unwrap();
        assert_eq!(again.encode(), img.encode());
    }

    #[test]
    fn sar_flat_bright_square_lands_at_forward_projection() {
        let mut spec = flat_spec();
        spec.texture = TextureParams { patches: 0, grain: 0.0, ..Default::default() };
        let mut scene = make_scene(&spec).unwrap();
        // one bright 2 m square centred at (31, 29)
        let gt = scene.reflectance.sidecar.geotransform.unwrap();
        for r in 0..scene.reflectance.rows() {
            for c in 0..scene.reflectance.cols() {
                let (x, y) = gt.to_map(r as f64, c as f64);
                if (x - 31.0).abs() < 1.0 && (y - 29.0).abs() < 1.0 {
                    scene.reflectance.set(r, c, 1.0);
                } else {
                    scene.reflectance.set(r, c, 0.0);
                }
            }
        }
        let sensors = small_setup().build(&spec).unwrap();
        let noise = RenderNoise { speckle_looks: 1e12, low_speckle_looks: 1e12, ..Default::default() };
        let img = render_sar(&scene, &sensors.sar, sensors.sar_shape.0, sensors.sar_shape.1, &noise).unwrap().intensity;
        let (mut w, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for r in 0..img.rows() {
            for c in 0..img.cols() {
                let v = img.get(r, c) as f64 - SAR_NOISE_FLOOR - 0.02;
                if v > 0.1 {
                    w += v;
                    sr += v * r as f64;
                    sc += v * c as f64;
                }
            }
        }
        let want = sensors.sar.to_image(sar_forward(&sensors.sar, &GroundPoint::new(31.0, 29.0, 0.0)));
        assert!((sr / w - want.row).abs() < 0.5 && (sc / w - want.col).abs() < 0.5, "{} {} vs {want:?}", sr / w, sc / w);
    }

    #[test]
    fn speckle_statistics() {
        let mut spec = flat_spec();
        spec.texture = TextureParams { patches: 0, grain: 0.0, ..Default::default() };
        let scene = make_scene(&spec).unwrap();
        let sensors = small_setup().build(&spec).unwrap();
        let (rows, cols) = sensors.sar_shape;
        let clean = render_sar(&scene, &sensors.sar, rows, cols, &RenderNoise { speckle_looks: 1e12, low_speckle_looks: 1e12, ..Default::default() }).unwrap();
        let many = render_sar(&scene, &sensors.sar, rows, cols, &RenderNoise { speckle_looks: 1e4, low_speckle_looks: 1e4, ..Default::default() }).unwrap();
        let mut sq = 0.0;
        let mut n = 0.0;
        for r in 2..rows - 2 {
            for c in 2..cols - 2 {
                let (a, b) = (clean.intensity.get(r, c) as f64, many.intensity.get(r, c) as f64);
                sq += (b / a - 1.0).powi(2);
                n += 1.0;
            }
        }
        assert!((sq / n).sqrt() < 0.02);
        let again = render_sar(&scene, &sensors.sar, rows, cols, &RenderNoise { speckle_looks: 1e4, low_speckle_looks: 1e4, ..Default::default() }).unwrap();
        assert_eq!(again.intensity.encode(), many.intensity.encode());
    }

    #[test]
    fn truth_statuses() {
        let mut spec = flat_spec();
        spec.buildings.push(Building { x0: 25.0, y0: 20.0, x1: 35.0, y1: 40.0, height: 15.0 });
        let scene = make_scene(&spec).unwrap();
        let hf = HeightField::from_raster(&scene.dem).unwrap();
        let sensors = small_setup().build(&spec).unwrap();
        let pts = [
            GroundPoint::new(12.0, 30.0, 0.0),
            GroundPoint::new(37.0, 30.0, 0.0), // behind the box seen from -x at 45°
            GroundPoint::new(30.0, 30.0, 15.0),
        ];
        let out = ground_truth_correspondences(&hf, &sensors, &pts);
        assert_eq!(out[0].1, TruthStatus::Ok);
        assert_eq!(out[1].1, TruthStatus::SarShadow);
        assert_eq!(out[2].1, TruthStatus::Ok);
        let csv = truth_csv(&[out[0].0]);
        assert!(csv.starts_with("x,y,h,r_s,c_s,r_o,c_o\n12,30,0,"));
    }

    #[test]
    fn pixel_truth_recovers_roof_point() {
        let mut spec = SceneSpec { extent: [100.0, 60.0], ..flat_spec() };
        spec.buildings.push(Building { x0: 25.0, y0: 20.0, x1: 60.0, y1: 40.0, height: 15.0 });
        let scene = make_scene(&spec).unwrap();
        let hf = HeightField::from_raster(&scene.dem).unwrap();
        let sensors = small_setup().build(&spec).unwrap();
        let g = GroundPoint::new(50.3, 31.2, 15.0);
        let ip = sensors.sar.to_image(sar_forward(&sensors.sar, &g));
        let c = sar_pixel_truth(&hf, &sensors, ip).unwrap();
        assert!(c.ground.distance(&g) < 1e-6, "{:?}", c.ground);
        // a roof point near the front edge shares its pixel with ground in front
        let g = GroundPoint::new(26.0, 31.2, 15.0);
        let ip = sensors.sar.to_image(sar_forward(&sensors.sar, &g));
        assert_eq!(sar_pixel_truth(&hf, &sensors, ip), Err(TruthStatus::SarLayover));
    }
}
