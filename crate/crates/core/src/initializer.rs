//! Turns the user-drawn outline on one slice into a seed: a center, an
//! intensity range of interest and a target mean radius.
//!
//! Contour points are continuous voxel coordinates in the slice plane. The
//! in-plane axes are `(x, y)` for a `z` slice, `(x, z)` for a `y` slice and
//! `(y, z)` for an `x` slice. Pixel centers sit at integer coordinates.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::ImageVolume;

pub const DEFAULT_TRIM_PERCENT: f64 = 0.02;
const MIN_INTERIOR_PIXELS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ContourError {
    #[error("contour needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("contour point {0} is not finite")]
    NonFinitePoint(usize),
    #[error("slice_index {index} is outside 0..{len} along axis {axis}")]
    SliceOutOfGrid { axis: SliceAxis, index: i64, len: usize },
    #[error("degenerate contour (area {0:.3} pixels)")]
    Degenerate(f64),
    #[error("contour too small: {0} interior pixels, need at least {MIN_INTERIOR_PIXELS}")]
    TooSmall(usize),
    #[error("trim_percent must lie in [0, 0.5), got {0}")]
    BadTrim(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

impl SliceAxis {
    /// Volume axis normal to the slice.
    pub fn index(self) -> usize {
        match self {
            Self::X => 0,
            Self::Y => 1,
            Self::Z => 2,
        }
    }

    /// Volume axes spanned by the slice's (first, second) in-plane coordinates.
    pub fn in_plane(self) -> (usize, usize) {
        match self {
            Self::X => (1, 2),
            Self::Y => (0, 2),
            Self::Z => (0, 1),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x" => Some(Self::X),
            "y" => Some(Self::Y),
            "z" => Some(Self::Z),
            _ => None,
        }
    }
}

impl std::fmt::Display for SliceAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::X => "x",
            Self::Y => "y",
            Self::Z => "z",
        })
    }
}

/// Closed polygon drawn on one slice. The last point connects back to the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitContour {
    pub slice_axis: SliceAxis,
    pub slice_index: i64,
    pub points: Vec<[f64; 2]>,
}

/// Seed derived from the contour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedModel {
    /// World position in mm.
    pub center: [f64; 3],
    pub intensity_min: f32,
    pub intensity_max: f32,
    /// Mean center-to-boundary distance in mm.
    pub radius: f64,
}

impl SeedModel {
    pub fn center_point(&self) -> Point3<f64> {
        Point3::from(self.center)
    }

    pub fn in_range(&self, value: f32) -> bool {
        value >= self.intensity_min && value <= self.intensity_max
    }
}

impl InitContour {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("contour serializes")
    }

    /// Checks the point count, finiteness and that the slice exists in `volume`.
    pub fn validate(&self, volume: &ImageVolume) -> Result<(), ContourError> {
        if self.points.len() < 3 {
            return Err(ContourError::TooFewPoints(self.points.len()));
        }
        if let Some(i) = self.points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(ContourError::NonFinitePoint(i));
        }
        let len = volume.dims()[self.slice_axis.index()];
        if self.slice_index < 0 || self.slice_index as usize >= len {
            return Err(ContourError::SliceOutOfGrid { axis: self.slice_axis, index: self.slice_index, len });
        }
        Ok(())
    }

    /// Shoelace area in pixel units (absolute).
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let a = self.points[i];
                let b = self.points[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum();
        (twice / 2.0).abs()
    }

    /// Volume index of an in-plane pixel on this slice.
    fn volume_index(&self, a: f64, b: f64) -> [f64; 3] {
        let (ia, ib) = self.slice_axis.in_plane();
        let mut idx = [0.0; 3];
        idx[ia] = a;
        idx[ib] = b;
        idx[self.slice_axis.index()] = self.slice_index as f64;
        idx
    }
}

/// x positions where the horizontal line `y = row` crosses the polygon, sorted.
/// An edge counts when exactly one endpoint lies strictly above the line.
fn row_crossings(points: &[[f64; 2]], row: f64, out: &mut Vec<f64>) {
    out.clear();
    let n = points.len();
    for i in 0..n {
        let [xi, yi] = points[i];
        let [xj, yj] = points[(i + n - 1) % n];
        if (yi > row) != (yj > row) {
            out.push(xi + (row - yi) * (xj - xi) / (yj - yi));
        }
    }
    out.sort_by(f64::total_cmp);
}

/// In-plane pixel indices `(a, b)` whose centers are inside the contour under
/// the even-odd rule, ordered row by row.
pub fn rasterize_contour(contour: &InitContour, volume: &ImageVolume) -> Result<Vec<[usize; 2]>, ContourError> {
    contour.validate(volume)?;
    let area = contour.area();
    if area < 1.0 {
        return Err(ContourError::Degenerate(area));
    }
    let (ia, ib) = contour.slice_axis.in_plane();
    let (width, height) = (volume.dims()[ia], volume.dims()[ib]);

    let (lo, hi) = contour
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
    let row_start = lo.floor().max(0.0) as usize;
    let row_end = (hi.ceil().max(0.0) as usize).min(height.saturating_sub(1));

    let mut pixels = Vec::new();
    let mut xs = Vec::new();
    for row in row_start..=row_end {
        row_crossings(&contour.points, row as f64, &mut xs);
        for span in xs.chunks_exact(2) {
            // Pixel center c is inside iff span[0] <= c < span[1].
            let first = span[0].ceil().max(0.0);
            let last = span[1].ceil() - 1.0;
            if last < first {
                continue;
            }
            let last = (last as usize).min(width.saturating_sub(1));
            for col in first as usize..=last {
                pixels.push([col, row]);
            }
        }
    }
    if pixels.is_empty() {
        return Err(ContourError::Degenerate(area));
    }
    Ok(pixels)
}

/// Nearest-rank quantile of an ascending sample, `q` in [0, 1].
fn nearest_rank(sorted: &[f32], q: f64) -> f32 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Points along the closed polygon every `step` units of arc length, starting at the first vertex.
pub fn resample_closed(points: &[[f64; 2]], step: f64) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut out = Vec::new();
    // Distance already travelled past the last emitted sample.
    let mut carry = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        if len == 0.0 {
            continue;
        }
        let mut t = if out.is_empty() { 0.0 } else { step - carry };
        while t < len {
            out.push([a[0] + dx * t / len, a[1] + dy * t / len]);
            t += step;
        }
        carry = len - (t - step);
    }
    out
}

/// Derives center, trimmed intensity range and mean radius from `contour`.
pub fn derive_seed(contour: &InitContour, volume: &ImageVolume, trim_percent: f64) -> Result<SeedModel, ContourError> {
    if !(0.0..0.5).contains(&trim_percent) {
        return Err(ContourError::BadTrim(trim_percent));
    }
    let pixels = rasterize_contour(contour, volume)?;
    if pixels.len() < MIN_INTERIOR_PIXELS {
        return Err(ContourError::TooSmall(pixels.len()));
    }
    let grid = volume.grid();

    let n = pixels.len() as f64;
    let (sa, sb) = pixels.iter().fold((0.0, 0.0), |(sa, sb), p| (sa + p[0] as f64, sb + p[1] as f64));
    let center = grid.index_to_world(contour.volume_index(sa / n, sb / n));

    let mut values: Vec<f32> = pixels
        .iter()
        .map(|&[a, b]| {
            let idx = contour.volume_index(a as f64, b as f64).map(|c| c as usize);
            volume.get(idx)
        })
        .collect();
    values.sort_by(f32::total_cmp);
    let intensity_min = nearest_rank(&values, trim_percent);
    let intensity_max = nearest_rank(&values, 1.0 - trim_percent);

    let samples = resample_closed(&contour.points, 1.0);
    let radius = samples
        .iter()
        .map(|p| (grid.index_to_world(contour.volume_index(p[0], p[1])) - center).norm())
        .sum::<f64>()
        / samples.len() as f64;

    Ok(SeedModel { center: center.coords.into(), intensity_min, intensity_max, radius })
}
