//! The inflation loop: split long edges, refresh normals and curvature, push
//! every vertex outward along its fixed direction when the voxel ahead
//! passes the intensity gate, then smooth radii.

use std::time::Instant;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::mask_volume_cm3;
use crate::initializer::{derive_seed, ContourError, InitContour, SeedModel, DEFAULT_TRIM_PERCENT};
use crate::mesh::{MeshError, TriMesh, VertexState};
use crate::volume::{BinaryMask, ImageVolume};

#[derive(Debug, Error, PartialEq)]
pub enum InflationError {
    #[error("invalid parameter {field}: {reason}")]
    BadParam { field: &'static str, reason: String },
    #[error("seed outside intensity range: center intensity {intensity:?} not in [{min}, {max}]")]
    SeedOutsideRange { intensity: Option<f32>, min: f32, max: f32 },
    #[error("seed radius must be positive, got {0}")]
    BadSeedRadius(f64),
    #[error(transparent)]
    Contour(#[from] ContourError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Tuning knobs. Fields left `None` are derived from the volume and seed at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InflationParams {
    /// Edges longer than `split_factor * mean_spacing` are split.
    pub split_factor: f64,
    /// Largest radial step per iteration in mm. Default `0.5 * mean_spacing`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_step: Option<f64>,
    pub cosine_exponent: f64,
    pub curvature_gain: f64,
    pub smooth_lambda: f64,
    pub trim_percent: f64,
    /// Relative tolerance of the memory test.
    pub intensity_tolerance: f64,
    /// Per-iteration decay of the memory after a memory-test rejection.
    pub memory_decay: f64,
    /// Default `ceil(2 * radius / base_step) + 50`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    /// Default `0.01 * mean_spacing`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_eps: Option<f64>,
    pub convergence_window: usize,
    pub radius_stop_ratio: f64,
}

impl Default for InflationParams {
    fn default() -> Self {
        Self {
            split_factor: 2.95,
            base_step: None,
            cosine_exponent: 1.0,
            curvature_gain: 1.0,
            smooth_lambda: 0.2,
            trim_percent: DEFAULT_TRIM_PERCENT,
            intensity_tolerance: 0.05,
            memory_decay: 0.95,
            max_iterations: None,
            convergence_eps: None,
            convergence_window: 5,
            radius_stop_ratio: 1.0,
        }
    }
}

fn bad(field: &'static str, reason: impl Into<String>) -> InflationError {
    InflationError::BadParam { field, reason: reason.into() }
}

fn check_fraction(field: &'static str, v: f64) -> Result<(), InflationError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(bad(field, format!("{v} is not in [0, 1]")))
    }
}

fn check_positive(field: &'static str, v: f64) -> Result<(), InflationError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("{v} is not positive")))
    }
}

fn check_non_negative(field: &'static str, v: f64) -> Result<(), InflationError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("{v} is negative")))
    }
}

impl InflationParams {
    /// Parses the flat JSON form; unknown keys are rejected.
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn validate(&self) -> Result<(), InflationError> {
        check_positive("split_factor", self.split_factor)?;
        if let Some(step) = self.base_step {
            check_positive("base_step", step)?;
        }
        check_non_negative("cosine_exponent", self.cosine_exponent)?;
        check_non_negative("curvature_gain", self.curvature_gain)?;
        check_fraction("smooth_lambda", self.smooth_lambda)?;
        if !(0.0..0.5).contains(&self.trim_percent) {
            return Err(bad("trim_percent", format!("{} is not in [0, 0.5)", self.trim_percent)));
        }
        check_fraction("intensity_tolerance", self.intensity_tolerance)?;
        check_fraction("memory_decay", self.memory_decay)?;
        if self.max_iterations == Some(0) {
            return Err(bad("max_iterations", "must be at least 1"));
        }
        if let Some(eps) = self.convergence_eps {
            check_non_negative("convergence_eps", eps)?;
        }
        if self.convergence_window == 0 {
            return Err(bad("convergence_window", "must be at least 1"));
        }
        check_positive("radius_stop_ratio", self.radius_stop_ratio)?;
        Ok(())
    }

    /// Fills the derived defaults for a given volume and seed.
    pub fn resolve(&self, volume: &ImageVolume, seed: &SeedModel) -> ResolvedParams {
        let spacing = volume.mean_spacing();
        let base_step = self.base_step.unwrap_or(0.5 * spacing);
        ResolvedParams {
            split_threshold: self.split_factor * spacing,
            base_step,
            cosine_exponent: self.cosine_exponent,
            curvature_gain: self.curvature_gain,
            smooth_lambda: self.smooth_lambda,
            intensity_tolerance: self.intensity_tolerance,
            memory_decay: self.memory_decay,
            max_iterations: self
                .max_iterations
                .unwrap_or_else(|| (2.0 * seed.radius / base_step).ceil() as usize + 50),
            convergence_eps: self.convergence_eps.unwrap_or(0.01 * spacing),
            convergence_window: self.convergence_window,
            radius_stop_ratio: self.radius_stop_ratio,
        }
    }
}

/// Parameters with every default resolved to a concrete value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedParams {
    pub split_threshold: f64,
    pub base_step: f64,
    pub cosine_exponent: f64,
    pub curvature_gain: f64,
    pub smooth_lambda: f64,
    pub intensity_tolerance: f64,
    pub memory_decay: f64,
    pub max_iterations: usize,
    pub convergence_eps: f64,
    pub convergence_window: usize,
    pub radius_stop_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    RadiusReached,
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegStats {
    pub iterations_run: usize,
    pub final_mean_radius: f64,
    pub vertex_count: usize,
    pub triangle_count: usize,
    pub volume_cm3: f64,
    /// Seconds, including voxelization.
    pub wall_time: f64,
    pub termination_reason: Termination,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub mesh: TriMesh,
    pub mask: BinaryMask,
    pub stats: SegStats,
}

/// Speed factor in [0, 1]: `max(0, cos φ)^p / (1 + g κ)`, with `φ` the angle
/// between the radial direction and the surface normal.
pub fn inflation_speed(state: &VertexState, cosine_exponent: f64, curvature_gain: f64) -> f64 {
    let cos = state.direction.dot(&state.normal);
    if cos <= 0.0 {
        return 0.0;
    }
    cos.min(1.0).powf(cosine_exponent) / (1.0 + curvature_gain * state.curvature)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MoveOutcome {
    Accepted { radius: f64, intensity: f32, memory: f32 },
    /// The destination left the grid or its intensity is outside the seed range.
    OutOfRange { intensity: Option<f32> },
    /// The destination is too dark compared to the vertex memory; memory decays.
    BelowMemory { intensity: f32, memory: f32 },
}

/// Decides a single outward move of `displacement` mm for one vertex.
pub fn try_move_vertex(
    state: &VertexState,
    center: &Point3<f64>,
    volume: &ImageVolume,
    seed: &SeedModel,
    intensity_tolerance: f64,
    memory_decay: f64,
    displacement: f64,
) -> MoveOutcome {
    let radius = state.radius + displacement;
    let target = center + state.direction * radius;
    let intensity = match volume.sample_at_world(&target) {
        Some(i) if seed.in_range(i) => i,
        other => return MoveOutcome::OutOfRange { intensity: other },
    };
    let memory = state.recent_max_intensity;
    let decayed = (memory_decay * memory as f64) as f32;
    if intensity as f64 >= (1.0 - intensity_tolerance) * memory as f64 {
        MoveOutcome::Accepted { radius, intensity, memory: decayed.max(intensity) }
    } else {
        MoveOutcome::BelowMemory { intensity, memory: decayed }
    }
}

/// Hooks for instrumenting a run. All methods default to no-ops.
pub trait InflationObserver {
    fn seeded(&mut self, _mesh: &TriMesh) {}
    fn split_pass(&mut self, _mesh: &TriMesh) {}
    fn move_accepted(&mut self, _vertex: usize, _target: Point3<f64>, _intensity: f32) {}
    /// After all moves of an iteration, before smoothing. `before` holds the radii going in.
    fn moves_done(&mut self, _iteration: usize, _before: &[f64], _mesh: &TriMesh) {}
    fn iteration_done(&mut self, _iteration: usize, _mesh: &TriMesh) {}
}

impl InflationObserver for () {}

/// Runs the inflation from `seed` until the mean radius reaches the seed
/// radius, the surface stops moving, or the iteration cap is hit.
pub fn run_segmentation(
    volume: &ImageVolume,
    seed: &SeedModel,
    params: &InflationParams,
) -> Result<Segmentation, InflationError> {
    run_segmentation_observed(volume, seed, params, &mut ())
}

pub fn run_segmentation_observed(
    volume: &ImageVolume,
    seed: &SeedModel,
    params: &InflationParams,
    observer: &mut dyn InflationObserver,
) -> Result<Segmentation, InflationError> {
    let started = Instant::now();
    params.validate()?;
    if !(seed.radius > 0.0 && seed.radius.is_finite()) {
        return Err(InflationError::BadSeedRadius(seed.radius));
    }
    let p = params.resolve(volume, seed);
    let center = seed.center_point();
    let center_intensity = volume.sample_at_world(&center);
    match center_intensity {
        Some(i) if seed.in_range(i) => {}
        _ => {
            return Err(InflationError::SeedOutsideRange {
                intensity: center_intensity,
                min: seed.intensity_min,
                max: seed.intensity_max,
            })
        }
    }

    let mut mesh = TriMesh::seed_cube(center, volume.mean_spacing())?;
    mesh.reset_memory(center_intensity.unwrap());
    observer.seeded(&mesh);

    let mut quiet = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut baseline = Vec::new();
    while iterations < p.max_iterations {
        iterations += 1;

        mesh.split_long_edges_observed(p.split_threshold, |m| observer.split_pass(m))?;
        baseline.clear();
        baseline.extend(mesh.states().iter().map(|s| s.radius));

        mesh.recompute_normals_and_curvature();

        for v in 0..mesh.vertex_count() {
            let state = &mesh.states()[v];
            let speed = inflation_speed(state, p.cosine_exponent, p.curvature_gain);
            let outcome = try_move_vertex(
                state,
                &center,
                volume,
                seed,
                p.intensity_tolerance,
                p.memory_decay,
                speed * p.base_step,
            );
            match outcome {
                MoveOutcome::Accepted { radius, intensity, memory } => {
                    mesh.set_radius(v, radius);
                    let s = mesh.state_mut(v);
                    s.recent_max_intensity = memory;
                    s.frozen = false;
                    observer.move_accepted(v, center + s.direction * radius, intensity);
                }
                MoveOutcome::OutOfRange { .. } => mesh.state_mut(v).frozen = true,
                MoveOutcome::BelowMemory { memory, .. } => {
                    let s = mesh.state_mut(v);
                    s.recent_max_intensity = memory;
                    s.frozen = false;
                }
            }
        }

        observer.moves_done(iterations, &baseline, &mesh);
        mesh.radial_smooth(p.smooth_lambda);
        observer.iteration_done(iterations, &mesh);

        if mesh.mean_radius() >= p.radius_stop_ratio * seed.radius {
            termination = Termination::RadiusReached;
            break;
        }
        let max_change = mesh
            .states()
            .iter()
            .zip(&baseline)
            .map(|(s, &r)| (s.radius - r).abs())
            .fold(0.0, f64::max);
        quiet = if max_change < p.convergence_eps { quiet + 1 } else { 0 };
        if quiet >= p.convergence_window {
            termination = Termination::Converged;
            break;
        }
    }

    let mask = mesh.voxelize(volume.grid())?;
    let stats = SegStats {
        iterations_run: iterations,
        final_mean_radius: mesh.mean_radius(),
        vertex_count: mesh.vertex_count(),
        triangle_count: mesh.triangle_count(),
        volume_cm3: mask_volume_cm3(&mask),
        wall_time: started.elapsed().as_secs_f64(),
        termination_reason: termination,
    };
    Ok(Segmentation { mesh, mask, stats })
}

/// Derives the seed from `contour` and runs the inflation.
pub fn segment(
    volume: &ImageVolume,
    contour: &InitContour,
    params: &InflationParams,
) -> Result<(SeedModel, Segmentation), InflationError> {
    params.validate()?;
    let seed = derive_seed(contour, volume, params.trim_percent)?;
    let result = run_segmentation(volume, &seed, params)?;
    Ok((seed, result))
}
