//! Synthetic volumes with analytically known ground truth.
//!
//! Noise is additive Gaussian drawn from `ChaCha8Rng::seed_from_u64(rng_seed)`
//! through `rand_distr::Normal`, one draw per voxel in x-fastest order, so a
//! spec always produces bit-identical volumes on every platform.
//!
//! The `star_blob` radial function is
//! `R(u) = R0 * (1 + Σ a_m * Re((u_x + i u_y)^m))` for unit direction `u`,
//! which is smooth everywhere (including the poles) and stays within
//! `R0 * (1 ± Σ|a_m|)`.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initializer::{InitContour, SliceAxis};
use crate::volume::{BinaryMask, Grid, GridError, ImageVolume};

/// Number of vertices in the suggested contour.
pub const CONTOUR_POINTS: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Sphere,
    Ellipsoid,
    StarBlob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
    /// World position in mm.
    pub center: [f64; 3],
    /// One radius for sphere and star_blob, three semi-axes for ellipsoid.
    pub radii: Vec<f64>,
    /// `(degree, amplitude fraction)` pairs, star_blob only.
    #[serde(default)]
    pub blob_harmonics: Vec<(u32, f64)>,
    pub fg_intensity: f32,
    pub bg_intensity: f32,
    #[serde(default)]
    pub noise_sigma: f32,
    #[serde(default)]
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: ImageVolume,
    pub truth: BinaryMask,
    pub contour: InitContour,
}

fn invalid(msg: impl Into<String>) -> PhantomError {
    PhantomError::Invalid(msg.into())
}

impl PhantomSpec {
    pub fn sphere(dims: [usize; 3], spacing: [f64; 3], center: [f64; 3], radius: f64) -> Self {
        Self {
            kind: PhantomKind::Sphere,
            dims,
            spacing,
            origin: [0.0; 3],
            center,
            radii: vec![radius],
            blob_harmonics: Vec::new(),
            fg_intensity: 100.0,
            bg_intensity: 0.0,
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let want = match self.kind {
            PhantomKind::Ellipsoid => 3,
            _ => 1,
        };
        if self.radii.len() != want {
            return Err(invalid(format!("{:?} needs {want} radii, got {}", self.kind, self.radii.len())));
        }
        if self.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(invalid("radii must be positive"));
        }
        if self.fg_intensity == self.bg_intensity {
            return Err(invalid("fg_intensity must differ from bg_intensity"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma must be non-negative"));
        }
        if self.kind == PhantomKind::StarBlob {
            let total: f64 = self.blob_harmonics.iter().map(|&(_, a)| a.abs()).sum();
            if total.is_nan() || total >= 1.0 {
                return Err(invalid(format!("total harmonic amplitude {total} must be below 1")));
            }
            if self.blob_harmonics.iter().any(|&(d, _)| d == 0) {
                return Err(invalid("harmonic degree must be at least 1"));
            }
        } else if !self.blob_harmonics.is_empty() {
            return Err(invalid("blob_harmonics only apply to star_blob"));
        }
        Grid::new(self.dims, self.spacing, self.origin)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, PhantomError> {
        Ok(Grid::new(self.dims, self.spacing, self.origin)?)
    }

    fn center_point(&self) -> Point3<f64> {
        Point3::from(self.center)
    }

    /// Surface radius of a star_blob along unit direction `u`.
    pub fn blob_radius(&self, u: &Vector3<f64>) -> f64 {
        let rho = u.x.hypot(u.y);
        let phi = u.y.atan2(u.x);
        let bump: f64 = self
            .blob_harmonics
            .iter()
            .map(|&(m, a)| a * rho.powi(m as i32) * (m as f64 * phi).cos())
            .sum();
        self.radii[0] * (1.0 + bump)
    }

    /// Analytic inside test for a world point.
    pub fn inside(&self, p: &Point3<f64>) -> bool {
        let d = p - self.center_point();
        match self.kind {
            PhantomKind::Sphere => d.norm_squared() <= self.radii[0] * self.radii[0],
            PhantomKind::Ellipsoid => {
                (0..3).map(|a| (d[a] / self.radii[a]).powi(2)).sum::<f64>() <= 1.0
            }
            PhantomKind::StarBlob => {
                let dist = d.norm();
                dist == 0.0 || dist <= self.blob_radius(&(d / dist))
            }
        }
    }

    fn max_extent(&self) -> f64 {
        let amp: f64 = self.blob_harmonics.iter().map(|&(_, a)| a.abs()).sum();
        self.radii.iter().cloned().fold(0.0, f64::max) * (1.0 + amp)
    }

    /// Boundary polygon on the slice nearest the center, in slice voxel coordinates.
    fn suggested_contour(&self, grid: &Grid) -> InitContour {
        let c = self.center_point();
        let kc = grid.world_to_index(&c)[2].round().clamp(0.0, (grid.dims[2] - 1) as f64);
        let plane_z = grid.index_to_world([0.0, 0.0, kc]).z;
        let origin = Point3::new(c.x, c.y, plane_z);
        let reach = 2.0 * self.max_extent() + grid.spacing[2];
        let points = (0..CONTOUR_POINTS)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / CONTOUR_POINTS as f64;
                let w = Vector3::new(t.cos(), t.sin(), 0.0);
                let (mut lo, mut hi) = (0.0, reach);
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    if self.inside(&(origin + w * mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let idx = grid.world_to_index(&(origin + w * lo));
                [idx[0], idx[1]]
            })
            .collect();
        InitContour { slice_axis: SliceAxis::Z, slice_index: kc as i64, points }
    }

    pub fn generate(&self) -> Result<Phantom, PhantomError> {
        self.validate()?;
        let grid = self.grid()?;
        let truth = BinaryMask::from_fn(&grid, |idx| self.inside(&grid.voxel_center(idx)));
        let (fg, bg) = (self.fg_intensity, self.bg_intensity);
        let mut data: Vec<f32> = truth.bits().iter().map(|&b| if b { fg } else { bg }).collect();
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
            let normal = Normal::new(0.0f32, self.noise_sigma).expect("validated sigma");
            for v in &mut data {
                *v += normal.sample(&mut rng);
            }
        }
        let volume = ImageVolume::new(grid, data)?;
        let contour = self.suggested_contour(&grid);
        Ok(Phantom { volume, truth, contour })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initializer::derive_seed;

    #[test]
    fn noiseless_sphere_volume() {
        let spec = PhantomSpec::sphere([32, 32, 32], [1.0; 3], [15.5, 15.5, 15.5], 10.0);
        let p = spec.generate().unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        let shell = 4.0 * std::f64::consts::PI * 100.0;
        assert!((p.truth.count() as f64 - analytic).abs() < shell, "{}", p.truth.count());

        let mut values: Vec<f32> = p.volume.data().to_vec();
        values.sort_by(f32::total_cmp);
        values.dedup();
        assert_eq!(values, vec![0.0, 100.0]);
    }

    #[test]
    fn two_levels_without_noise() {
        let mut spec = PhantomSpec::sphere([16, 16, 16], [1.0; 3], [8.0; 3], 5.0);
        spec.bg_intensity = 41.0;
        spec.fg_intensity = 42.0;
        let p = spec.generate().unwrap();
        let mut values: Vec<f32> = p.volume.data().to_vec();
        values.sort_by(f32::total_cmp);
        values.dedup();
        assert_eq!(values.len(), 2);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut spec = PhantomSpec::sphere([16, 16, 16], [1.0; 3], [8.0; 3], 5.0);
        spec.noise_sigma = 10.0;
        spec.rng_seed = 1234;
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a.volume, b.volume);
        spec.rng_seed = 1235;
        assert_ne!(spec.generate().unwrap().volume, a.volume);
    }

    #[test]
    fn validation() {
        let mut spec = PhantomSpec::sphere([16, 16, 16], [1.0; 3], [8.0; 3], 5.0);
        spec.kind = PhantomKind::StarBlob;
        spec.blob_harmonics = vec![(2, 0.6), (3, 0.5)];
        assert!(matches!(spec.generate(), Err(PhantomError::Invalid(m)) if m.contains("amplitude")));
        spec.blob_harmonics = vec![(2, 0.2)];
        spec.generate().unwrap();
        spec.kind = PhantomKind::Ellipsoid;
        assert!(spec.validate().is_err());
        let mut spec = PhantomSpec::sphere([16, 16, 16], [1.0; 3], [8.0; 3], 5.0);
        spec.fg_intensity = 0.0;
        assert!(spec.validate().is_err());
        let text = r#"{"kind":"sphere","dims":[4,4,4],"spacing":[1,1,1],"center":[2,2,2],"radii":[1],
                       "fg_intensity":1,"bg_intensity":0,"bogus":1}"#;
        assert!(PhantomSpec::from_json(text).is_err());
    }

    #[test]
    fn contour_traces_the_equator() {
        let spec = PhantomSpec::sphere([40, 40, 40], [1.0, 1.0, 2.0], [20.0, 19.0, 40.0], 12.0);
        let p = spec.generate().unwrap();
        assert_eq!(p.contour.slice_index, 20);
        assert_eq!(p.contour.points.len(), CONTOUR_POINTS);
        for q in &p.contour.points {
            let r = (q[0] - 20.0).hypot(q[1] - 19.0);
            assert!((r - 12.0).abs() < 1e-9);
        }
        let seed = derive_seed(&p.contour, &p.volume, 0.02).unwrap();
        assert!((seed.radius - 12.0).abs() < 0.15);
        assert_eq!((seed.intensity_min, seed.intensity_max), (100.0, 100.0));
    }

    #[test]
    fn ellipsoid_and_blob_truth() {
        let mut spec = PhantomSpec::sphere([40, 40, 40], [1.0; 3], [20.0; 3], 1.0);
        spec.kind = PhantomKind::Ellipsoid;
        spec.radii = vec![12.0, 8.0, 5.0];
        let p = spec.generate().unwrap();
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * 12.0 * 8.0 * 5.0;
        assert!((p.truth.count() as f64 - analytic).abs() < 0.1 * analytic);

        spec.kind = PhantomKind::StarBlob;
        spec.radii = vec![10.0];
        spec.blob_harmonics = vec![(2, 0.1), (3, 0.08), (5, 0.07)];
        let blob = spec.generate().unwrap();
        let u = Vector3::x();
        assert!((spec.blob_radius(&u) - 12.5).abs() < 1e-12);
        assert!((spec.blob_radius(&Vector3::z()) - 10.0).abs() < 1e-12);
        assert!(blob.truth.get([20 + 12, 20, 20]));
        assert!(!blob.truth.get([20 + 13, 20, 20]));
    }
}
