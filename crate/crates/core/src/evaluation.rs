//! Accuracy of reconstructed points against a reference cloud: distance to a
//! least-squares plane through the nearest reference neighbours.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::GroundPoint;

pub const DEFAULT_NEIGHBOURS: usize = 10;
const DEGENERATE_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("neighbourhood is collinear or coincident")]
    DegenerateNeighborhood,
    #[error("reference cloud has {have} points, need {need}")]
    TooFewPoints { have: usize, need: usize },
    #[error("no distances to summarize")]
    EmptyInput,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Reference points with a bucket index on (x, y). Distances are 3-D.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<GroundPoint>,
    cell: f64,
    origin: (f64, f64),
    buckets: HashMap<(i64, i64), Vec<usize>>,
    key_bounds: (i64, i64, i64, i64),
}

impl PointCloud {
    pub fn new(points: Vec<GroundPoint>) -> Self {
        let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &points {
            xmin = xmin.min(p.x);
            ymin = ymin.min(p.y);
            xmax = xmax.max(p.x);
            ymax = ymax.max(p.y);
        }
        let area = ((xmax - xmin) * (ymax - ymin)).max(0.0);
        // about DEFAULT_NEIGHBOURS points per bucket on a uniform cloud
        let mut cell = (area * DEFAULT_NEIGHBOURS as f64 / points.len().max(1) as f64).sqrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = (xmax - xmin).max(ymax - ymin).max(1.0);
        }
        let origin = if points.is_empty() { (0.0, 0.0) } else { (xmin, ymin) };
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(origin, cell, p.x, p.y)).or_default().push(i);
        }
        let key_bounds = buckets.keys().fold((i64::MAX, i64::MIN, i64::MAX, i64::MIN), |b, &(x, y)| {
            (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y))
        });
        Self { points, cell, origin, buckets, key_bounds }
    }

    fn key(origin: (f64, f64), cell: f64, x: f64, y: f64) -> (i64, i64) {
        (((x - origin.0) / cell).floor() as i64, ((y - origin.1) / cell).floor() as i64)
    }

    /// Parses whitespace-separated `x y z` lines; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse_xyz(text: &str) -> Result<Self, EvaluationError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            match vals {
                Ok(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => points.push(GroundPoint::new(v[0], v[1], v[2])),
                _ => return Err(EvaluationError::Parse { line: i + 1, msg: format!("expected `x y z`, got {line:?}") }),
            }
        }
        Ok(Self::new(points))
    }

    pub fn to_xyz(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            s.push_str(&format!("{} {} {}\n", p.x, p.y, p.h));
        }
        s
    }

    pub fn points(&self) -> &[GroundPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the `k` nearest points, ordered by distance then index.
    pub fn nearest(&self, p: &GroundPoint, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let (cx, cy) = Self::key(self.origin, self.cell, p.x, p.y);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0i64;
        let max_ring = self.max_ring(cx, cy);
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    if let Some(ids) = self.buckets.get(&(cx + dx, cy + dy)) {
                        found.extend(ids.iter().map(|&i| (self.points[i].distance(p), i)));
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                found.truncate(k);
                // anything outside the visited rings is at least ring·cell away
                if found[k - 1].0 <= ring as f64 * self.cell || ring >= max_ring {
                    return found.into_iter().map(|(_, i)| i).collect();
                }
            }
            if ring >= max_ring {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                return found.into_iter().take(k).map(|(_, i)| i).collect();
            }
            ring += 1;
        }
    }

    fn max_ring(&self, cx: i64, cy: i64) -> i64 {
        if self.buckets.is_empty() {
            return 0;
        }
        let (x0, x1, y0, y1) = self.key_bounds;
        [cx - x0, x1 - cx, cy - y0, y1 - cy].into_iter().max().unwrap_or(0).max(0)
    }
}

/// Orthogonal distance from `p` to the total-least-squares plane through its
/// `k` nearest reference points.
pub fn plane_distance(p: &GroundPoint, cloud: &PointCloud, k: usize) -> Result<f64, EvaluationError> {
    if cloud.len() < k || k < 3 {
        return Err(EvaluationError::TooFewPoints { have: cloud.len(), need: k.max(3) });
    }
    let idx = cloud.nearest(p, k);
    let pts: Vec<Vector3<f64>> = idx.iter().map(|&i| cloud.points()[i].to_vector()).collect();
    let centroid = pts.iter().fold(Vector3::zeros(), |a, v| a + v) / k as f64;
    let mut scatter = Matrix3::zeros();
    for v in &pts {
        let d = v - centroid;
        scatter += d * d.transpose();
    }
    scatter /= k as f64;
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    if eig.eigenvalues[order[1]] < DEGENERATE_EIGENVALUE {
        return Err(EvaluationError::DegenerateNeighborhood);
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    Ok(normal.dot(&(p.to_vector() - centroid)).abs())
}

/// Plane distances for many points, evaluated in parallel; order preserved.
pub fn plane_distances(points: &[GroundPoint], cloud: &PointCloud, k: usize) -> Vec<Result<f64, EvaluationError>> {
    points.par_iter().map(|p| plane_distance(p, cloud, k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    /// Root-mean-square distance in meters.
    pub rms_m: f64,
    pub mse_m2: f64,
    pub median: f64,
    /// Share of distances strictly below one meter.
    pub pct_below_1m: f64,
    pub n: usize,
}

pub const STATS_CSV_HEADER: &str = "n,mean,rms_m,mse_m2,median,pct_below_1m";

impl EvalStats {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.n, self.mean, self.rms_m, self.mse_m2, self.median, self.pct_below_1m)
    }
}

pub fn stats(distances: &[f64]) -> Result<EvalStats, EvaluationError> {
    if distances.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let n = distances.len();
    let mut abs: Vec<f64> = distances.iter().map(|d| d.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let mean = abs.iter().sum::<f64>() / n as f64;
    let mse = abs.iter().map(|d| d * d).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 { abs[n / 2] } else { 0.5 * (abs[n / 2 - 1] + abs[n / 2]) };
    let below = abs.iter().filter(|&&d| d < 1.0).count();
    Ok(EvalStats { mean, rms_m: mse.sqrt(), mse_m2: mse, median, pct_below_1m: below as f64 / n as f64, n })
}
