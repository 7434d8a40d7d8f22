//! Balloon-inflation segmentation of star-shaped objects in 3D scalar volumes.
//!
//! A contour drawn on one slice yields a [`SeedModel`]; a small cube seeded
//! at its center is inflated along fixed radial directions while the voxels
//! ahead stay inside the seed's intensity range. The resulting surface is
//! voxelized and scored with the Dice similarity coefficient.

pub mod evaluation;
pub mod inflation;
pub mod initializer;
pub mod mesh;
pub mod phantom;
pub mod volume;

pub use evaluation::{compare, dsc, mask_volume_cm3, Batch, EvalError, EvalReport};
pub use inflation::{
    inflation_speed, run_segmentation, run_segmentation_observed, segment, try_move_vertex, InflationError,
    InflationObserver, InflationParams, MoveOutcome, SegStats, Segmentation, Termination,
};
pub use initializer::{derive_seed, rasterize_contour, ContourError, InitContour, SeedModel, SliceAxis};
pub use mesh::{MeshError, TriMesh, VertexState};
pub use phantom::{Phantom, PhantomError, PhantomKind, PhantomSpec};
pub use volume::{
    load_metaimage, save_mask, save_volume, BinaryMask, ElementType, Grid, ImageVolume, MetaImageError,
};
