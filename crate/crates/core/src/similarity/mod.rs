//! Patch similarity measures.
//!
//! Every measure follows the same contract: a scalar where larger means more
//! similar. Signal-based measures compare gray values directly (NCC,
//! normalized mutual information); descriptor-based measures (HOG, SIFT at a
//! fixed scale, HOPC) compare feature vectors by the negative L2 distance.
//!
//! The descriptor pipelines are split into a per-pixel feature stage
//! ([`FeatureMaps`]) and a window stage, so a matcher can compute the
//! expensive per-pixel features once per image and describe many candidate
//! windows cheaply.

mod gradient;
mod phase;
mod signal;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

pub use gradient::{hog_descriptor, sift_descriptor, GradientMaps, HogParams, SiftParams};
pub use phase::{hopc_descriptor, phase_congruency, PcParams, PhaseCongruency};
pub use signal::{ncc, nmi, DEFAULT_NMI_BINS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("patch has zero variance")]
    ConstantPatch,
    #[error("patch occupies a single histogram bin")]
    DegenerateHistogram,
    #[error("descriptor layouts differ: {0:?} vs {1:?}")]
    LayoutMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("patch sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Ncc,
    Mi,
    Hog,
    Sift,
    Hopc,
}

impl Measure {
    pub const ALL: [Measure; 5] = [Measure::Ncc, Measure::Mi, Measure::Hog, Measure::Sift, Measure::Hopc];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Ncc => "ncc",
            Measure::Mi => "mi",
            Measure::Hog => "hog",
            Measure::Sift => "sift",
            Measure::Hopc => "hopc",
        }
    }

    pub fn parse(s: &str) -> Option<Measure> {
        Measure::ALL.into_iter().find(|m| m.as_str().eq_ignore_ascii_case(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub value: f64,
    pub measure: Measure,
}

/// Square template with an odd side.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    grid: Grid,
}

impl Patch {
    pub fn new(grid: Grid) -> Result<Self, SimilarityError> {
        if grid.rows() != grid.cols() {
            return Err(SimilarityError::InvalidPatch(format!(
                "not square: {}x{}",
                grid.rows(),
                grid.cols()
            )));
        }
        if grid.rows() % 2 == 0 {
            return Err(SimilarityError::InvalidPatch(format!("even side {}", grid.rows())));
        }
        if grid.data().iter().any(|v| !v.is_finite()) {
            return Err(SimilarityError::InvalidPatch("non-finite sample".into()));
        }
        Ok(Self { grid })
    }

    pub fn from_fn(size: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self, SimilarityError> {
        Self::new(Grid::from_fn(size, size, f))
    }

    pub fn size(&self) -> usize {
        self.grid.rows()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        self.grid.data()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Patch {
        Patch { grid: self.grid.map(f) }
    }
}

/// Feature vector with its `(cells_x, cells_y, bins)` layout. Values are
/// grouped in normalization segments of `segment` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    pub layout: (usize, usize, usize),
    pub segment: usize,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Negative Euclidean distance.
pub fn descriptor_similarity(a: &Descriptor, b: &Descriptor) -> Result<f64, SimilarityError> {
    if a.layout != b.layout || a.values.len() != b.values.len() {
        return Err(SimilarityError::LayoutMismatch(a.layout, b.layout));
    }
    let d2: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(-d2.sqrt())
}

/// Per-pixel features of a whole image, shared by all windows cut from it.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub image: Grid,
    pub gradients: GradientMaps,
    pub phase: Option<PhaseCongruency>,
}

/// Settings of all five measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureParams {
    pub nmi_bins: usize,
    pub hog: HogParams,
    pub sift: SiftParams,
    pub pc: PcParams,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            nmi_bins: DEFAULT_NMI_BINS,
            hog: HogParams::default(),
            sift: SiftParams::default(),
            pc: PcParams::default(),
        }
    }
}

/// A measure-specific representation of one window.
#[derive(Debug, Clone)]
pub enum WindowFeature {
    Samples(Patch),
    Descriptor(Descriptor),
}

impl FeatureMaps {
    pub fn new(image: Grid, with_phase: bool, params: &MeasureParams) -> Self {
        let gradients = GradientMaps::new(&image);
        let phase = with_phase.then(|| PhaseCongruency::compute(&image, &params.pc));
        Self { image, gradients, phase }
    }

    /// Representation of the window of side `size` centered at `(row, col)`;
    /// `None` when the window does not fit.
    pub fn describe(&self, measure: Measure, row: i64, col: i64, size: usize, params: &MeasureParams) -> Option<WindowFeature> {
        if !self.image.contains_window(row, col, size) {
            return None;
        }
        let half = (size / 2) as i64;
        let (r0, c0) = ((row - half) as usize, (col - half) as usize);
        Some(match measure {
            Measure::Ncc | Measure::Mi => WindowFeature::Samples(Patch::new(self.image.window(row, col, size)?).ok()?),
            Measure::Hog => WindowFeature::Descriptor(self.gradients.hog_window(r0, c0, size, &params.hog)),
            Measure::Sift => WindowFeature::Descriptor(self.gradients.sift_window(r0, c0, size, &params.sift)),
            Measure::Hopc => {
                let pc = self.phase.as_ref()?;
                WindowFeature::Descriptor(pc.hopc_window(r0, c0, size, &params.hog))
            }
        })
    }
}

/// Similarity of two window representations of the same measure.
pub fn compare(measure: Measure, a: &WindowFeature, b: &WindowFeature, params: &MeasureParams) -> Result<f64, SimilarityError> {
    match (a, b) {
        (WindowFeature::Samples(a), WindowFeature::Samples(b)) => match measure {
            Measure::Mi => nmi(a, b, params.nmi_bins),
            _ => ncc(a, b),
        },
        (WindowFeature::Descriptor(a), WindowFeature::Descriptor(b)) => descriptor_similarity(a, b),
        _ => Err(SimilarityError::LayoutMismatch((0, 0, 0), (0, 0, 0))),
    }
}
