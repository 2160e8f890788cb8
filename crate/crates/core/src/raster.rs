//! Raster container and its on-disk formats.
//!
//! `RFLT` files hold an ASCII header line `RFLT <rows> <cols> <nodata|none>`
//! followed by row-major little-endian `f32` samples. A JSON sidecar at
//! `<path>.json` optionally carries a sensor model and a geotransform.
//! Binary 16-bit (and 8-bit) PGM is accepted for reading.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{OpticalSensorModel, SarSensorModel};
use crate::grid::Grid;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("unrecognized raster magic")]
    BadMagic,
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("raster dimensions {rows}x{cols} overflow")]
    DimensionOverflow { rows: usize, cols: usize },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("sample count {found} does not match {rows}x{cols}")]
    SizeMismatch { rows: usize, cols: usize, found: usize },
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Affine pixel-to-map mapping: `x = x0 + col·dx`, `y = y0 + row·dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl GeoTransform {
    pub fn to_map(&self, row: f64, col: f64) -> (f64, f64) {
        (self.x0 + col * self.dx, self.y0 + row * self.dy)
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((y - self.y0) / self.dy, (x - self.x0) / self.dx)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sar: Option<SarSensorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical: Option<OpticalSensorModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geotransform: Option<GeoTransform>,
}

impl Sidecar {
    pub fn is_empty(&self) -> bool {
        self.sar.is_none() && self.optical.is_none() && self.geotransform.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    pub nodata: Option<f32>,
    pub sidecar: Sidecar,
}

impl Raster {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if rows.checked_mul(cols).is_none_or(|n| n.checked_mul(4).is_none()) {
            return Err(RasterError::DimensionOverflow { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(RasterError::SizeMismatch { rows, cols, found: data.len() });
        }
        Ok(Self { rows, cols, data, nodata: None, sidecar: Sidecar::default() })
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self { rows, cols, data: vec![value; rows * cols], nodata: None, sidecar: Sidecar::default() }
    }

    pub fn from_grid(g: &Grid) -> Self {
        Self {
            rows: g.rows(),
            cols: g.cols(),
            data: g.data().iter().map(|&v| v as f32).collect(),
            nodata: None,
            sidecar: Sidecar::default(),
        }
    }

    pub fn with_nodata(mut self, nodata: Option<f32>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn with_sidecar(mut self, sidecar: Sidecar) -> Self {
        self.sidecar = sidecar;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        v.is_nan() || self.nodata.is_some_and(|nd| v == nd || (nd.is_nan() && v.is_nan()))
    }

    /// Sample value, `None` for nodata or outside the raster.
    pub fn value(&self, r: usize, c: usize) -> Option<f64> {
        if r >= self.rows || c >= self.cols {
            return None;
        }
        let v = self.get(r, c);
        (!self.is_nodata(v)).then_some(v as f64)
    }

    /// Samples as `f64`, nodata mapped to NaN.
    pub fn to_grid(&self) -> Grid {
        Grid::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| if self.is_nodata(v) { f64::NAN } else { v as f64 }).collect(),
        )
    }

    /// Statistics over valid samples; `None` if there are none.
    pub fn stats(&self) -> Option<RasterStats> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0;
        for &v in &self.data {
            if self.is_nodata(v) {
                continue;
            }
            let v = v as f64;
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        (count > 0).then(|| RasterStats { min, max, mean: sum / count as f64, count })
    }

    /// Bilinear sample at map coordinates through the geotransform. `None`
    /// outside the raster, next to nodata, or without a geotransform.
    pub fn sample_map(&self, x: f64, y: f64) -> Option<f64> {
        let gt = self.sidecar.geotransform?;
        let (row, col) = gt.to_pixel(x, y);
        if !(row >= 0.0 && col >= 0.0) || row > (self.rows - 1) as f64 || col > (self.cols - 1) as f64 {
            return None;
        }
        let r0 = (row.floor() as usize).min(self.rows.saturating_sub(2));
        let c0 = (col.floor() as usize).min(self.cols.saturating_sub(2));
        let (r1, c1) = ((r0 + 1).min(self.rows - 1), (c0 + 1).min(self.cols - 1));
        let (fr, fc) = (row - r0 as f64, col - c0 as f64);
        let v00 = self.value(r0, c0)?;
        let v01 = self.value(r0, c1)?;
        let v10 = self.value(r1, c0)?;
        let v11 = self.value(r1, c1)?;
        Some((v00 * (1.0 - fc) + v01 * fc) * (1.0 - fr) + (v10 * (1.0 - fc) + v11 * fc) * fr)
    }

    pub fn encode(&self) -> Vec<u8> {
        let nodata = match self.nodata {
            Some(v) => format!("{v}"),
            None => "none".to_string(),
        };
        let header = format!("RFLT {} {} {}\n", self.rows, self.cols, nodata);
        let mut out = Vec::with_capacity(header.len() + 4 * self.data.len());
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses `RFLT` or binary PGM bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        if bytes.starts_with(b"RFLT ") {
            decode_rflt(bytes)
        } else if bytes.starts_with(b"P5") {
            decode_pgm(bytes)
        } else {
            Err(RasterError::BadMagic)
        }
    }

    /// Reads the raster and, if present, its `<path>.json` sidecar.
    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let bytes = fs::read(path).map_err(|source| RasterError::Io { path: path.to_owned(), source })?;
        let mut r = Self::decode(&bytes)?;
        let sc = sidecar_path(path);
        if sc.exists() {
            let text = fs::read_to_string(&sc).map_err(|source| RasterError::Io { path: sc.clone(), source })?;
            r.sidecar = serde_json::from_str(&text).map_err(|e| RasterError::Sidecar(format!("{}: {e}", sc.display())))?;
        }
        Ok(r)
    }

    /// Writes the raster (and a sidecar when it carries metadata) atomically.
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        write_atomic(path, &self.encode())?;
        if !self.sidecar.is_empty() {
            let json = serde_json::to_string_pretty(&self.sidecar).map_err(|e| RasterError::Sidecar(e.to_string()))?;
            write_atomic(&sidecar_path(path), json.as_bytes())?;
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    let io = |source| RasterError::Io { path: path.to_owned(), source };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

fn split_header(bytes: &[u8], fields: usize) -> Result<(Vec<String>, usize), RasterError> {
    // whitespace-separated tokens; PGM comments run from '#' to end of line
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < fields {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(RasterError::BadHeader("unexpected end of header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates header and payload
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(RasterError::BadHeader("missing header terminator".into()));
    }
    Ok((tokens, i + 1))
}

fn parse_dim(s: &str) -> Result<usize, RasterError> {
    s.parse().map_err(|_| RasterError::BadHeader(format!("bad dimension {s:?}")))
}

fn payload_len(rows: usize, cols: usize, width: usize) -> Result<usize, RasterError> {
    rows.checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or(RasterError::DimensionOverflow { rows, cols })
}

fn decode_rflt(bytes: &[u8]) -> Result<Raster, RasterError> {
    let (tok, start) = split_header(bytes, 4)?;
    if bytes[start - 1] != b'\n' {
        return Err(RasterError::BadHeader("header must end with a newline".into()));
    }
    let rows = parse_dim(&tok[1])?;
    let cols = parse_dim(&tok[2])?;
    let nodata = match tok[3].as_str() {
        "none" => None,
        s => Some(s.parse::<f32>().map_err(|_| RasterError::BadHeader(format!("bad nodata {s:?}")))?),
    };
    let expected = payload_len(rows, cols, 4)?;
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(RasterError::TruncatedPayload { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(RasterError::BadHeader(format!("{} trailing bytes", payload.len() - expected)));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(Raster { rows, cols, data, nodata, sidecar: Sidecar::default() })
}

fn decode_pgm(bytes: &[u8]) -> Result<Raster, RasterError> {
    let (tok, start) = split_header(bytes, 4)?;
    if tok[0] != "P5" {
        return Err(RasterError::BadMagic);
    }
    let cols = parse_dim(&tok[1])?;
    let rows = parse_dim(&tok[2])?;
    let maxval = parse_dim(&tok[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(RasterError::BadHeader(format!("bad maxval {maxval}")));
    }
    let width = if maxval > 255 { 2 } else { 1 };
    let expected = payload_len(rows, cols, width)?;
    let payload = &bytes[start..];
    if payload.len() < expected {
        return Err(RasterError::TruncatedPayload { expected, found: payload.len() });
    }
    let data = if width == 2 {
        payload[..expected].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32).collect()
    } else {
        payload[..expected].iter().map(|&b| b as f32).collect()
    };
    Ok(Raster { rows, cols, data, nodata: None, sidecar: Sidecar::default() })
}
