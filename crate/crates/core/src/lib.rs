//! SAR-optical stereogrammetry.
//!
//! Joint tie-point matching and 3D reconstruction from one SAR and one
//! optical image: sensor models, the four-equation stereo intersection, an
//! in-plane accuracy model for configuration design, five patch similarity
//! measures, the search-line constrained matcher, a synthetic scene
//! simulator and a point-cloud evaluation harness.

pub mod accuracy;
pub mod evaluation;
pub mod geometry;
pub mod grid;
pub mod intersection;
pub mod matching;
pub mod raster;
pub mod scene_sim;
pub mod similarity;

pub use geometry::{GroundPoint, ImagePoint, LookSide, OpticalSensorModel, SarObservation, SarSensorModel};
