//! Scalar 3D image volumes and binary masks on a shared voxel grid.
//!
//! Indices map to physical millimetres through voxel centers:
//! `world = origin + index * spacing`, component-wise. Scalars are kept as
//! `f32` regardless of how they were stored on disk.

mod metaimage;

pub use metaimage::{
    load_metaimage, read_metaimage_bytes, save_mask, save_volume, write_metaimage_bytes,
    ElementType, MetaImageError,
};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("dimensions must all be positive, got {0:?}")]
    ZeroDimension([usize; 3]),
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("data length {found} does not match {expected} voxels")]
    DataLength { expected: usize, found: usize },
}

/// Geometry shared by volumes and masks: voxel counts, spacing and origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
    /// World position of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, GridError> {
        if dims.contains(&0) {
            return Err(GridError::ZeroDimension(dims));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(GridError::BadSpacing(spacing));
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat offset of an in-grid index, x fastest.
    #[inline]
    pub fn offset(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    /// Inverse of [`Grid::offset`].
    #[inline]
    pub fn index_of(&self, offset: usize) -> [usize; 3] {
        let i = offset % self.dims[0];
        let rest = offset / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// World position of a (possibly fractional) index.
    #[inline]
    pub fn index_to_world(&self, index: [f64; 3]) -> Point3<f64> {
        Point3::new(
            self.origin[0] + index[0] * self.spacing[0],
            self.origin[1] + index[1] * self.spacing[1],
            self.origin[2] + index[2] * self.spacing[2],
        )
    }

    #[inline]
    pub fn voxel_center(&self, index: [usize; 3]) -> Point3<f64> {
        self.index_to_world([index[0] as f64, index[1] as f64, index[2] as f64])
    }

    /// Continuous index coordinates of a world point.
    #[inline]
    pub fn world_to_index(&self, p: &Point3<f64>) -> [f64; 3] {
        [
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Index of the voxel whose center is nearest to `p`, or `None` outside the grid.
    #[inline]
    pub fn nearest_voxel(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let c = self.world_to_index(p);
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let r = c[axis].round();
            if !(r >= 0.0 && r < self.dims[axis] as f64) {
                return None;
            }
            out[axis] = r as usize;
        }
        Some(out)
    }

    /// Geometric mean of the three spacings.
    pub fn mean_spacing(&self) -> f64 {
        (self.spacing[0] * self.spacing[1] * self.spacing[2]).cbrt()
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    pub fn spacing_vector(&self) -> Vector3<f64> {
        Vector3::from(self.spacing)
    }

    pub fn contains_index(&self, index: [i64; 3]) -> bool {
        (0..3).all(|a| index[a] >= 0 && (index[a] as usize) < self.dims[a])
    }
}

/// A scalar image volume. Immutable once built, so it can be shared freely.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    grid: Grid,
    data: Vec<f32>,
}

impl ImageVolume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self, GridError> {
        let grid = Grid::new(grid.dims, grid.spacing, grid.origin)?;
        if data.len() != grid.len() {
            return Err(GridError::DataLength { expected: grid.len(), found: data.len() });
        }
        Ok(Self { grid, data })
    }

    /// Builds a volume by evaluating `f` at every index.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> f32) -> Result<Self, GridError> {
        let grid = Grid::new(grid.dims, grid.spacing, grid.origin)?;
        let data = (0..grid.len()).map(|o| f(grid.index_of(o))).collect();
        Ok(Self { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, index: [usize; 3]) -> f32 {
        self.data[self.grid.offset(index)]
    }

    /// Nearest-voxel lookup; `None` marks a point outside the grid.
    #[inline]
    pub fn sample_at_world(&self, p: &Point3<f64>) -> Option<f32> {
        self.grid.nearest_voxel(p).map(|idx| self.get(idx))
    }

    pub fn mean_spacing(&self) -> f64 {
        self.grid.mean_spacing()
    }

    /// Smallest and largest scalar.
    pub fn value_range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// One occupancy flag per voxel, on the grid of the volume it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    grid: GridKey,
    bits: Vec<bool>,
}

// Grid with bit-exact float comparison so masks can be Eq/Hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct GridKey {
    dims: [usize; 3],
    spacing: [u64; 3],
    origin: [u64; 3],
}

impl From<&Grid> for GridKey {
    fn from(g: &Grid) -> Self {
        Self {
            dims: g.dims,
            spacing: g.spacing.map(f64::to_bits),
            origin: g.origin.map(f64::to_bits),
        }
    }
}

impl From<GridKey> for Grid {
    fn from(k: GridKey) -> Self {
        Grid { dims: k.dims, spacing: k.spacing.map(f64::from_bits), origin: k.origin.map(f64::from_bits) }
    }
}

impl BinaryMask {
    pub fn empty(grid: &Grid) -> Self {
        Self { grid: grid.into(), bits: vec![false; grid.len()] }
    }

    pub fn full(grid: &Grid) -> Self {
        Self { grid: grid.into(), bits: vec![true; grid.len()] }
    }

    pub fn from_bits(grid: &Grid, bits: Vec<bool>) -> Result<Self, GridError> {
        if bits.len() != grid.len() {
            return Err(GridError::DataLength { expected: grid.len(), found: bits.len() });
        }
        Ok(Self { grid: grid.into(), bits })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let bits = (0..grid.len()).map(|o| f(grid.index_of(o))).collect();
        Self { grid: grid.into(), bits }
    }

    pub fn grid(&self) -> Grid {
        self.grid.into()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    /// True when both masks live on bit-identical grids.
    pub fn same_grid(&self, other: &BinaryMask) -> bool {
        self.grid == other.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, index: [usize; 3]) -> bool {
        self.bits[self.grid().offset(index)]
    }

    #[inline]
    pub fn set(&mut self, index: [usize; 3], value: bool) {
        let o = self.grid().offset(index);
        self.bits[o] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}
