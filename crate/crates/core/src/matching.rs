//! Tie-point matching between a SAR and an optical image.
//!
//! Keypoints come from a block-wise Harris detector on the SAR image. For
//! each keypoint a height sweep is pushed through the SAR inverse and the
//! optical forward model; the resulting line of optical pixels (plus a row
//! buffer) is the only place searched. Every candidate pixel carries the 3-D
//! point it implies, so the winning candidate is also a reconstruction.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    opt_forward, sar_inverse_at_height, GeometryError, GroundPoint, ImagePoint, OpticalSensorModel, SarSensorModel,
};
use crate::grid::{gaussian_blur, Grid};
use crate::intersection::{intersect, ObservationWeights, SolverOptions};
use crate::raster::Raster;
use crate::similarity::{compare, FeatureMaps, Measure, MeasureParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("keypoint footprint falls outside the height prior")]
    OutsideDem,
    #[error("no window candidate fits the optical raster")]
    EmptyWindow,
    #[error("every candidate was skipped for {0:?}")]
    AllCandidatesSkipped(Measure),
    #[error("outlier test needs at least two measures, got {0}")]
    TooFewMeasures(usize),
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub sar: ImagePoint,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisParams {
    pub block_size: usize,
    pub k: f64,
    pub sigma: f64,
    /// Fraction of the strongest response in the image.
    pub min_response: f64,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self { block_size: 100, k: 0.04, sigma: 1.5, min_response: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub template_size: usize,
    pub h_low_offset: f64,
    pub h_high_offset: f64,
    pub buffer_rows: usize,
    pub d_outlier_threshold: f64,
    pub harris: HarrisParams,
    pub measures: Vec<Measure>,
    /// Measure whose argmax supplies the tie point.
    pub primary: Measure,
    /// Convert the SAR raster to dB before matching.
    pub sar_to_db: bool,
    /// Polish each tie point with the joint intersection solver.
    pub refine: bool,
    /// Observation weights of the refinement; half a pixel when absent.
    pub weights: Option<ObservationWeights>,
    pub params: MeasureParams,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            template_size: 221,
            h_low_offset: -5.0,
            h_high_offset: 20.0,
            buffer_rows: 1,
            d_outlier_threshold: 10.0,
            harris: HarrisParams::default(),
            measures: Measure::ALL.to_vec(),
            primary: Measure::Hopc,
            sar_to_db: true,
            refine: false,
            weights: None,
            params: MeasureParams::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |m: &str| Err(MatchError::InvalidConfig(m.into()));
        if self.template_size % 2 == 0 || self.template_size < 3 {
            return bad("template_size must be odd and >= 3");
        }
        if !(self.h_low_offset <= self.h_high_offset) {
            return bad("h_low_offset must not exceed h_high_offset");
        }
        if !(self.d_outlier_threshold > 0.0) {
            return bad("d_outlier_threshold must be > 0");
        }
        if self.measures.is_empty() {
            return bad("measures must not be empty");
        }
        if !self.measures.contains(&self.primary) {
            return bad("primary must be one of measures");
        }
        if self.harris.block_size == 0 || !(self.harris.sigma > 0.0) || !(self.harris.min_response >= 0.0) {
            return bad("harris parameters out of range");
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.template_size / 2
    }
}

/// Harris response `det(M) − k·tr(M)²` of the Gaussian-smoothed structure
/// tensor, with central-difference gradients.
pub fn harris_response(img: &Grid, k: f64, sigma: f64) -> Grid {
    let (rows, cols) = (img.rows(), img.cols());
    let at = |r: i64, c: i64| img.get(r.clamp(0, rows as i64 - 1) as usize, c.clamp(0, cols as i64 - 1) as usize);
    let mut xx = Grid::zeros(rows, cols);
    let mut yy = Grid::zeros(rows, cols);
    let mut xy = Grid::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let (ri, ci) = (r as i64, c as i64);
            let gx = 0.5 * (at(ri, ci + 1) - at(ri, ci - 1));
            let gy = 0.5 * (at(ri + 1, ci) - at(ri - 1, ci));
            xx.set(r, c, gx * gx);
            yy.set(r, c, gy * gy);
            xy.set(r, c, gx * gy);
        }
    }
    let (xx, yy, xy) = (gaussian_blur(&xx, sigma), gaussian_blur(&yy, sigma), gaussian_blur(&xy, sigma));
    Grid::from_fn(rows, cols, |r, c| {
        let (a, b, d) = (xx.get(r, c), yy.get(r, c), xy.get(r, c));
        a * b - d * d - k * (a + b) * (a + b)
    })
}

/// Strongest Harris corner per `block_size` tile, restricted to pixels at
/// least `margin` away from the border. NaN samples are treated as zero.
pub fn detect_keypoints(img: &Grid, params: &HarrisParams, margin: usize) -> Vec<KeyPoint> {
    let (rows, cols) = (img.rows(), img.cols());
    if rows <= 2 * margin || cols <= 2 * margin || params.block_size == 0 {
        return Vec::new();
    }
    let clean = img.map(|v| if v.is_finite() { v } else { 0.0 });
    let resp = harris_response(&clean, params.k, params.sigma);
    let (r_lo, r_hi, c_lo, c_hi) = (margin, rows - margin, margin, cols - margin);
    let mut global = 0.0f64;
    for r in r_lo..r_hi {
        for c in c_lo..c_hi {
            global = global.max(resp.get(r, c));
        }
    }
    if !(global > 0.0) {
        return Vec::new();
    }
    let floor = params.min_response * global;
    let b = params.block_size;
    let mut out = Vec::new();
    for br in (0..rows).step_by(b) {
        for bc in (0..cols).step_by(b) {
            let mut best: Option<(f64, usize, usize)> = None;
            for r in br.max(r_lo)..(br + b).min(r_hi) {
                for c in bc.max(c_lo)..(bc + b).min(c_hi) {
                    let v = resp.get(r, c);
                    if v > 0.0 && v >= floor && best.is_none_or(|(bv, _, _)| v > bv) {
                        best = Some((v, r, c));
                    }
                }
            }
            if let Some((v, r, c)) = best {
                out.push(KeyPoint { sar: ImagePoint { row: r as f64, col: c as f64 }, response: v });
            }
        }
    }
    out
}

/// Coarse elevation knowledge used to seed each keypoint's height sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum HeightPrior {
    Plane(f64),
    Dem(Raster),
}

impl HeightPrior {
    fn mean(&self) -> Option<f64> {
        match self {
            HeightPrior::Plane(h) => Some(*h),
            HeightPrior::Dem(r) => r.stats().map(|s| s.mean),
        }
    }

    fn at(&self, x: f64, y: f64) -> Option<f64> {
        match self {
            HeightPrior::Plane(h) => Some(*h),
            HeightPrior::Dem(r) => r.sample_map(x, y),
        }
    }
}

/// Fixed point of `h = prior(sar_inverse_at_height(kp, h))` from the prior's
/// mean; stops when a step is below 0.1 m or after 20 iterations.
pub fn initial_height(prior: &HeightPrior, kp: &KeyPoint, sar: &SarSensorModel) -> Result<f64, MatchError> {
    let obs = sar.to_observation(kp.sar);
    let mut h = prior.mean().ok_or(MatchError::OutsideDem)?;
    for _ in 0..20 {
        let g = sar_inverse_at_height(sar, obs, h)?;
        let next = prior.at(g.x, g.y).ok_or(MatchError::OutsideDem)?;
        let step = (next - h).abs();
        h = next;
        if step < 0.1 {
            break;
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImblsCandidate {
    pub opt: ImagePoint,
    pub ground: GroundPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImblsWindow {
    pub keypoint: KeyPoint,
    pub h0: f64,
    /// Sorted by height, then by position along the swept line.
    pub candidates: Vec<ImblsCandidate>,
    pub buffer_rows: usize,
}

impl ImblsWindow {
    pub fn contains(&self, row: i64, col: i64) -> bool {
        self.candidates.iter().any(|c| c.opt.row as i64 == row && c.opt.col as i64 == col)
    }
}

/// Height sweep samples whose consecutive optical projections are at most
/// `max_step` pixels apart.
fn sweep(
    project: &impl Fn(f64) -> Result<ImagePoint, GeometryError>,
    lo: f64,
    hi: f64,
    max_step: f64,
) -> Result<Vec<(f64, ImagePoint)>, GeometryError> {
    let mut out = vec![(lo, project(lo)?)];
    if hi <= lo {
        return Ok(out);
    }
    let mut stack = vec![(hi, project(hi)?)];
    while let Some(&(h, p)) = stack.last() {
        let (h_prev, p_prev) = *out.last().expect("seeded");
        if p.distance(&p_prev) <= max_step || h - h_prev < 1e-9 {
            out.push(stack.pop().expect("non-empty"));
        } else {
            let m = 0.5 * (h_prev + h);
            stack.push((m, project(m)?));
        }
    }
    Ok(out)
}

/// Search window of a keypoint for heights in `[h0 + low, h0 + high]`.
pub fn build_imbls_window(
    sar: &SarSensorModel,
    opt: &OpticalSensorModel,
    opt_shape: (usize, usize),
    kp: &KeyPoint,
    h0: f64,
    cfg: &MatchConfig,
) -> Result<ImblsWindow, MatchError> {
    let obs = sar.to_observation(kp.sar);
    let ground = |h: f64| sar_inverse_at_height(sar, obs, h);
    let project = |h: f64| ground(h).and_then(|g| opt_forward(opt, &g));
    let (lo, hi) = (h0 + cfg.h_low_offset, h0 + cfg.h_high_offset);
    let samples = sweep(&project, lo, hi, 1.0)?;

    // dense walk along the polyline; each pixel keeps the nearest point
    let mut nearest: HashMap<(i64, i64), (f64, f64, usize)> = HashMap::new();
    let mut order = 0usize;
    let mut visit = |h: f64, p: ImagePoint| {
        let key = (p.row.round() as i64, p.col.round() as i64);
        let d = (p.row - key.0 as f64).powi(2) + (p.col - key.1 as f64).powi(2);
        let e = nearest.entry(key).or_insert_with(|| {
            order += 1;
            (f64::INFINITY, h, order)
        });
        if d < e.0 {
            e.0 = d;
            e.1 = h;
        }
    };
    visit(samples[0].0, samples[0].1);
    for w in samples.windows(2) {
        let ((ha, pa), (hb, pb)) = (w[0], w[1]);
        let n = (pa.distance(&pb) / 0.1).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            let p = ImagePoint { row: pa.row + t * (pb.row - pa.row), col: pa.col + t * (pb.col - pa.col) };
            visit(ha + t * (hb - ha), p);
        }
    }

    let mut chain: Vec<((i64, i64), f64, usize)> = nearest.into_iter().map(|(k, (_, h, o))| (k, h, o)).collect();
    chain.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
    let half = cfg.half() as i64;
    let (rows, cols) = (opt_shape.0 as i64, opt_shape.1 as i64);
    let fits = |r: i64, c: i64| r >= half && c >= half && r < rows - half && c < cols - half;
    let mut seen = std::collections::HashSet::new();
    let mut candidates = Vec::new();
    let b = cfg.buffer_rows as i64;
    for ((r, c), h, _) in chain {
        let g = ground(h)?;
        for dr in -b..=b {
            let key = (r + dr, c);
            if fits(key.0, key.1) && seen.insert(key) {
                candidates.push(ImblsCandidate { opt: ImagePoint { row: key.0 as f64, col: key.1 as f64 }, ground: g });
            }
        }
    }
    if candidates.is_empty() {
        return Err(MatchError::EmptyWindow);
    }
    Ok(ImblsWindow { keypoint: *kp, h0, candidates, buffer_rows: cfg.buffer_rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureMatch {
    pub opt: ImagePoint,
    pub score: f64,
    /// Index into the window's candidates.
    pub candidate: usize,
}

/// Best candidate per measure. Ties go to the candidate whose height is
/// closest to the window's prior height.
pub fn match_keypoint(
    sar: &FeatureMaps,
    opt: &FeatureMaps,
    window: &ImblsWindow,
    measures: &[Measure],
    template_size: usize,
    params: &MeasureParams,
) -> Result<BTreeMap<Measure, Result<MeasureMatch, MatchError>>, MatchError> {
    if window.candidates.is_empty() {
        return Err(MatchError::EmptyWindow);
    }
    let kp = window.keypoint.sar;
    let mut out = BTreeMap::new();
    for &m in measures {
        let template = sar.describe(m, kp.row.round() as i64, kp.col.round() as i64, template_size, params);
        let mut best: Option<MeasureMatch> = None;
        if let Some(template) = template {
            for (i, cand) in window.candidates.iter().enumerate() {
                let Some(f) = opt.describe(m, cand.opt.row as i64, cand.opt.col as i64, template_size, params) else {
                    continue;
                };
                let Ok(s) = compare(m, &template, &f, params) else {
                    continue;
                };
                let better = match best {
                    None => true,
                    Some(b) => {
                        s > b.score
                            || (s == b.score
                                && (cand.ground.h - window.h0).abs()
                                    < (window.candidates[b.candidate].ground.h - window.h0).abs())
                    }
                };
                if better {
                    best = Some(MeasureMatch { opt: cand.opt, score: s, candidate: i });
                }
            }
        }
        out.insert(m, best.ok_or(MatchError::AllCandidatesSkipped(m)));
    }
    Ok(out)
}

/// Spread of the per-measure argmax positions: row range plus column range.
/// The point is kept when the spread is below `threshold`.
pub fn combine_outlier(argmaxes: &[ImagePoint], threshold: f64) -> Result<(bool, f64), MatchError> {
    if argmaxes.len() < 2 {
        return Err(MatchError::TooFewMeasures(argmaxes.len()));
    }
    let span = |f: fn(&ImagePoint) -> f64| {
        let (lo, hi) = argmaxes.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo
    };
    let d = span(|p| p.row) + span(|p| p.col);
    Ok((d < threshold, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiePoint {
    pub kp_id: usize,
    pub sar: ImagePoint,
    pub opt: ImagePoint,
    pub ground: GroundPoint,
    pub scores: BTreeMap<Measure, (f64, ImagePoint)>,
    pub d_outlier: f64,
}

/// What happened to one keypoint.
#[derive(Debug, Clone, PartialEq)]
pub enum KeypointOutcome {
    Kept(TiePoint),
    Outlier { d_outlier: f64 },
    Failed(MatchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRun {
    pub keypoints: Vec<KeyPoint>,
    pub outcomes: Vec<KeypointOutcome>,
}

impl MatchRun {
    pub fn tie_points(&self) -> Vec<TiePoint> {
        self.outcomes
            .iter()
            .filter_map(|o| match o {
                KeypointOutcome::Kept(t) => Some(t.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Matching input image: SAR intensities in dB when configured.
pub fn sar_matching_grid(sar: &Raster, to_db: bool) -> Grid {
    let g = sar.to_grid();
    if to_db {
        g.map(|v| if v > 0.0 { 10.0 * v.log10() } else { f64::NAN })
    } else {
        g
    }
}

/// Detection, windowing, matching and outlier removal over all keypoints.
/// Keypoints are processed in parallel; outcomes keep keypoint order.
pub fn run_matching(
    sar: &Raster,
    opt: &Raster,
    sar_model: &SarSensorModel,
    opt_model: &OpticalSensorModel,
    prior: &HeightPrior,
    cfg: &MatchConfig,
) -> Result<MatchRun, MatchError> {
    cfg.validate()?;
    sar_model.validate()?;
    opt_model.validate()?;
    let sar_grid = sar_matching_grid(sar, cfg.sar_to_db);
    let keypoints = detect_keypoints(&sar_grid, &cfg.harris, cfg.half());
    let with_phase = cfg.measures.contains(&Measure::Hopc);
    let fill = |g: Grid| {
        let finite: Vec<f64> = g.data().iter().copied().filter(|v| v.is_finite()).collect();
        let m = if finite.is_empty() { 0.0 } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        g.map(|v| if v.is_finite() { v } else { m })
    };
    let (sar_maps, opt_maps) = rayon::join(
        || FeatureMaps::new(fill(sar_grid.clone()), with_phase, &cfg.params),
        || FeatureMaps::new(fill(opt.to_grid()), with_phase, &cfg.params),
    );
    let opt_shape = (opt.rows(), opt.cols());
    let weights = cfg.weights.unwrap_or_else(|| ObservationWeights::half_pixel(sar_model));
    let outcomes = keypoints
        .par_iter()
        .enumerate()
        .map(|(id, kp)| {
            let run = || -> Result<KeypointOutcome, MatchError> {
                let h0 = initial_height(prior, kp, sar_model)?;
                let window = build_imbls_window(sar_model, opt_model, opt_shape, kp, h0, cfg)?;
                let per = match_keypoint(&sar_maps, &opt_maps, &window, &cfg.measures, cfg.template_size, &cfg.params)?;
                let primary = per[&cfg.primary].clone()?;
                let scores: BTreeMap<Measure, (f64, ImagePoint)> =
                    per.iter().filter_map(|(m, r)| r.as_ref().ok().map(|mm| (*m, (mm.score, mm.opt)))).collect();
                let argmaxes: Vec<ImagePoint> = scores.values().map(|(_, p)| *p).collect();
                let (keep, d_outlier) = match combine_outlier(&argmaxes, cfg.d_outlier_threshold) {
                    Ok(v) => v,
                    Err(MatchError::TooFewMeasures(_)) => (true, 0.0),
                    Err(e) => return Err(e),
                };
                if !keep {
                    return Ok(KeypointOutcome::Outlier { d_outlier });
                }
                let mut ground = window.candidates[primary.candidate].ground;
                if cfg.refine {
                    let obs = sar_model.to_observation(kp.sar);
                    if let Ok(r) = intersect(sar_model, opt_model, obs, primary.opt, ground, weights, SolverOptions::default()) {
                        ground = r.point;
                    }
                }
                Ok(KeypointOutcome::Kept(TiePoint { kp_id: id, sar: kp.sar, opt: primary.opt, ground, scores, d_outlier }))
            };
            run().unwrap_or_else(KeypointOutcome::Failed)
        })
        .collect();
    Ok(MatchRun { keypoints, outcomes })
}

pub const TIE_POINT_CSV_HEADER: &str =
    "kp_id,r_s,c_s,r_o,c_o,x,y,h,d_outlier,score_ncc,score_mi,score_hog,score_sift,score_hopc";

pub fn tie_points_csv(points: &[TiePoint]) -> String {
    let mut s = String::from(TIE_POINT_CSV_HEADER);
    s.push('\n');
    for t in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            t.kp_id, t.sar.row, t.sar.col, t.opt.row, t.opt.col, t.ground.x, t.ground.y, t.ground.h, t.d_outlier
        ));
        for m in Measure::ALL {
            s.push(',');
            if let Some((v, _)) = t.scores.get(&m) {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LookSide;
    use crate::raster::{GeoTransform, Sidecar};

    fn ip(r: f64, c: f64) -> ImagePoint {
        ImagePoint { row: r, col: c }
    }

    #[test]
    fn harris_constant_is_empty() {
        assert!(detect_keypoints(&Grid::from_fn(200, 200, |_, _| 3.0), &HarrisParams::default(), 5).is_empty());
    }

    #[test]
    fn harris_square_corner() {
        let img = Grid::from_fn(100, 100, |r, c| if (30..70).contains(&r) && (40..75).contains(&c) { 1.0 } else { 0.0 });
        let kps = detect_keypoints(&img, &HarrisParams::default(), 3);
        assert_eq!(kps.len(), 1);
        let resp = harris_response(&img, 0.04, 1.5);
        let best = resp.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(kps[0].response, best);
        // corners sit between pixels 29.5/69.5 and 39.5/74.5
        let near = [(29.5, 39.5), (29.5, 74.5), (69.5, 39.5), (69.5, 74.5)]
            .iter()
            .any(|(r, c)| (kps[0].sar.row - r).abs() <= 1.0 && (kps[0].sar.col - c).abs() <= 1.0);
        assert!(near, "{:?}", kps[0]);
    }

    #[test]
    fn harris_checkerboard_one_per_block() {
        let img = Grid::from_fn(200, 200, |r, c| ((r / 25 + c / 25) % 2) as f64);
        let kps = detect_keypoints(&img, &HarrisParams::default(), 5);
        assert_eq!(kps.len(), 4);
        let mut blocks: Vec<_> = kps.iter().map(|k| (k.sar.row as usize / 100, k.sar.col as usize / 100)).collect();
        blocks.dedup();
        assert_eq!(blocks.len(), 4);
    }

    fn sar_model() -> SarSensorModel {
        let theta = 40f64.to_radians();
        let hs = 515_000.0;
        let xs = -hs * theta.tan();
        SarSensorModel {
            s0: [xs, 0.0, hs],
            v: [0.0, 7500.0, 0.0],
            t0: 0.0,
            az_time_per_row: 0.5 / 7500.0,
            r_near: ((-100.0 - xs).powi(2) + hs * hs).sqrt(),
            range_per_col: 0.5 * theta.sin(),
            look_side: LookSide::Right,
        }
    }

    fn nadir_camera() -> OpticalSensorModel {
        OpticalSensorModel::look_at([0.0, 100.0, 770_000.0], GroundPoint::new(0.0, 100.0, 0.0), std::f64::consts::PI, 1.54e6, 200.0, 200.0)
    }

    #[test]
    fn initial_height_on_plane_and_ramp() {
        let sar = sar_model();
        let kp = KeyPoint { sar: ip(150.0, 200.0), response: 1.0 };
        assert_eq!(initial_height(&HeightPrior::Plane(500.0), &kp, &sar).unwrap(), 500.0);

        // h = 0.2·x on a 1 m grid
        let n = 600;
        let data: Vec<f32> = (0..n * n).map(|i| (0.2 * ((i % n) as f64 - 300.0)) as f32).collect();
        let dem = Raster::new(n, n, data).unwrap().with_sidecar(Sidecar {
            geotransform: Some(GeoTransform { x0: -300.0, y0: -100.0, dx: 1.0, dy: 1.0 }),
            ..Default::default()
        });
        let prior = HeightPrior::Dem(dem.clone());
        let h0 = initial_height(&prior, &kp, &sar).unwrap();
        // oracle: dense 1-D search for the fixed point
        let obs = sar.to_observation(kp.sar);
        let mut best = (f64::INFINITY, 0.0);
        let mut h = -60.0;
        while h < 60.0 {
            let g = sar_inverse_at_height(&sar, obs, h).unwrap();
            let e = (dem.sample_map(g.x, g.y).unwrap() - h).abs();
            if e < best.0 {
                best = (e, h);
            }
            h += 1e-3;
        }
        assert!((h0 - best.1).abs() < 0.1, "{h0} vs {}", best.1);

        let hole = HeightPrior::Dem(Raster::new(n, n, vec![0.0; n * n]).unwrap().with_sidecar(Sidecar {
            geotransform: Some(GeoTransform { x0: 5000.0, y0: 5000.0, dx: 1.0, dy: 1.0 }),
            ..Default::default()
        }));
        assert_eq!(initial_height(&hole, &kp, &sar), Err(MatchError::OutsideDem));
    }

    fn small_cfg() -> MatchConfig {
        MatchConfig { template_size: 11, ..Default::default() }
    }

    #[test]
    fn collapsed_sweep_is_three_pixels() {
        let cfg = MatchConfig { h_low_offset: 0.0, h_high_offset: 0.0, ..small_cfg() };
        let kp = KeyPoint { sar: ip(200.0, 200.0), response: 1.0 };
        let w = build_imbls_window(&sar_model(), &nadir_camera(), (401, 401), &kp, 0.0, &cfg).unwrap();
        assert_eq!(w.candidates.len(), 3);
        let rows: Vec<f64> = w.candidates.iter().map(|c| c.opt.row).collect();
        assert_eq!(rows[1] - rows[0], 1.0);
        assert_eq!(rows[2] - rows[1], 1.0);
    }

    #[test]
    fn nadir_window_spans_the_disparity() {
        let sar = sar_model();
        let opt = nadir_camera();
        let cfg = MatchConfig { buffer_rows: 0, ..small_cfg() };
        let kp = KeyPoint { sar: ip(200.0, 200.0), response: 1.0 };
        let w = build_imbls_window(&sar, &opt, (401, 401), &kp, 0.0, &cfg).unwrap();
        // closed form: a height change dh moves the ground point of a fixed
        // range by dh·cot(incidence); the nadir camera maps it 1:1 at 0.5 m/px
        let obs = sar.to_observation(kp.sar);
        let g = sar_inverse_at_height(&sar, obs, 0.0).unwrap();
        let s = sar.position(obs.t);
        let cot = (s.z - g.h) / (g.x - s.x);
        let span = 25.0 * cot / 0.5;
        let cols: Vec<f64> = w.candidates.iter().map(|c| c.opt.col).collect();
        let extent = cols.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - cols.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((extent - span).abs() <= 1.0, "{extent} vs {span}");
        // heights are monotone and the chain is 8-connected
        for p in w.candidates.windows(2) {
            assert!(p[1].ground.h >= p[0].ground.h);
        }
        let mut sorted = w.candidates.clone();
        sorted.sort_by(|a, b| a.opt.col.total_cmp(&b.opt.col));
        for p in sorted.windows(2) {
            assert!((p[1].opt.col - p[0].opt.col) <= 1.0 && (p[1].opt.row - p[0].opt.row).abs() <= 1.0);
        }
    }

    #[test]
    fn window_outside_raster_is_empty() {
        let kp = KeyPoint { sar: ip(200.0, 200.0), response: 1.0 };
        let r = build_imbls_window(&sar_model(), &nadir_camera(), (20, 20), &kp, 0.0, &small_cfg());
        assert_eq!(r, Err(MatchError::EmptyWindow));
    }

    fn texture(rows: usize, cols: usize, seed: u64) -> Grid {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        gaussian_blur(&Grid::from_fn(rows, cols, |_, _| rng.random::<f64>()), 1.0)
    }

    #[test]
    fn self_matching_finds_the_true_pixel() {
        let img = texture(120, 120, 3);
        let params = MeasureParams::default();
        let maps = FeatureMaps::new(img, true, &params);
        let candidates: Vec<ImblsCandidate> = (40..80)
            .map(|c| ImblsCandidate { opt: ip(60.0, c as f64), ground: GroundPoint::new(0.0, 0.0, c as f64) })
            .collect();
        let w = ImblsWindow { keypoint: KeyPoint { sar: ip(60.0, 57.0), response: 1.0 }, h0: 0.0, candidates, buffer_rows: 0 };
        let per = match_keypoint(&maps, &maps, &w, &Measure::ALL, 51, &params).unwrap();
        for (m, r) in per {
            assert_eq!(r.unwrap().opt, ip(60.0, 57.0), "{m:?}");
        }
    }

    #[test]
    fn singleton_window_and_ties() {
        let img = texture(80, 80, 4);
        let params = MeasureParams::default();
        let maps = FeatureMaps::new(img, false, &params);
        let one = ImblsWindow {
            keypoint: KeyPoint { sar: ip(40.0, 40.0), response: 1.0 },
            h0: 0.0,
            candidates: vec![ImblsCandidate { opt: ip(35.0, 44.0), ground: GroundPoint::new(0.0, 0.0, 0.0) }],
            buffer_rows: 0,
        };
        let per = match_keypoint(&maps, &maps, &one, &[Measure::Ncc, Measure::Hog], 21, &params).unwrap();
        assert!(per.values().all(|r| r.as_ref().unwrap().opt == ip(35.0, 44.0)));

        // two identical candidates: the one closer to h0 wins
        let tie = ImblsWindow {
            candidates: vec![
                ImblsCandidate { opt: ip(40.0, 40.0), ground: GroundPoint::new(0.0, 0.0, 9.0) },
                ImblsCandidate { opt: ip(40.0, 40.0), ground: GroundPoint::new(0.0, 0.0, 1.0) },
            ],
            ..one.clone()
        };
        let per = match_keypoint(&maps, &maps, &tie, &[Measure::Ncc], 21, &params).unwrap();
        assert_eq!(per[&Measure::Ncc].as_ref().unwrap().candidate, 1);

        let constant = FeatureMaps::new(Grid::from_fn(80, 80, |_, _| 1.0), false, &params);
        let per = match_keypoint(&constant, &constant, &one, &[Measure::Ncc], 21, &params).unwrap();
        assert_eq!(per[&Measure::Ncc], Err(MatchError::AllCandidatesSkipped(Measure::Ncc)));
    }

    #[test]
    fn outlier_spread() {
        let same = vec![ip(3.0, 4.0); 5];
        assert_eq!(combine_outlier(&same, 5.0).unwrap(), (true, 0.0));
        let pts: Vec<ImagePoint> =
            [10.0, 11.0, 12.0, 10.0, 11.0].iter().zip([20.0, 20.0, 21.0, 22.0, 20.0]).map(|(&r, c)| ip(r, c)).collect();
        assert_eq!(combine_outlier(&pts, 5.0).unwrap(), (true, 4.0));
        let spread = vec![ip(0.0, 0.0), ip(8.0, 4.0), ip(3.0, 1.0)];
        assert_eq!(combine_outlier(&spread, 10.0).unwrap(), (false, 12.0));
        assert_eq!(combine_outlier(&same[..1], 5.0), Err(MatchError::TooFewMeasures(1)));
    }

    #[test]
    fn csv_leaves_absent_scores_empty() {
        let mut scores = BTreeMap::new();
        scores.insert(Measure::Hopc, (-0.5, ip(1.0, 2.0)));
        let t = TiePoint { kp_id: 3, sar: ip(1.0, 2.0), opt: ip(1.0, 2.0), ground: GroundPoint::new(1.0, 2.0, 3.0), scores, d_outlier: 0.0 };
        let csv = tie_points_csv(&[t]);
        assert_eq!(csv.lines().nth(1).unwrap(), "3,1,2,1,2,1,2,3,0,,,,,-0.5");
    }

    #[test]
    fn config_validation() {
        assert!(MatchConfig::default().validate().is_ok());
        assert!(MatchConfig { template_size: 220, ..Default::default() }.validate().is_err());
        assert!(MatchConfig { h_low_offset: 30.0, ..Default::default() }.validate().is_err());
        assert!(MatchConfig { measures: vec![Measure::Ncc], ..Default::default() }.validate().is_err());
    }
}
