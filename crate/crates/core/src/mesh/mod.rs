//! Closed triangle mesh that stays star-shaped about a fixed center.
//!
//! Every vertex is stored as a unit direction from the center plus a radial
//! distance. Directions never change after a vertex is created; only radii
//! move. Because new vertices are placed on the great arc between their
//! parents, the radial projection of the mesh onto the unit sphere is always a
//! valid spherical triangulation, so every ray from the center pierces the
//! surface exactly once.

mod export;
mod voxelize;

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

/// Maximum number of split passes before giving up.
pub const MAX_SPLIT_PASSES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("seed cube edge length must be positive, got {0}")]
    BadEdgeLength(f64),
    #[error("split threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("split did not converge after {MAX_SPLIT_PASSES} passes ({remaining} edges still long)")]
    SplitDidNotConverge { remaining: usize },
    #[error("edge ({0}, {1}) midpoint coincides with the center")]
    DegenerateSplit(u32, u32),
    #[error("mesh not watertight: no triangle found along direction {0:?}")]
    NotWatertight([f64; 3]),
    #[error("edge ({a}, {b}) bounds {count} triangles")]
    NonManifoldEdge { a: u32, b: u32, count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexState {
    /// Unit vector from the center; fixed for the vertex's lifetime.
    pub direction: Vector3<f64>,
    /// Distance from the center in mm.
    pub radius: f64,
    pub normal: Vector3<f64>,
    /// Normalized umbrella magnitude, see [`TriMesh::recompute_normals_and_curvature`].
    pub curvature: f64,
    /// Decaying memory of the highest intensity this vertex moved into.
    pub recent_max_intensity: f32,
    /// Set when the last move attempt was blocked by the intensity range.
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    center: Point3<f64>,
    positions: Vec<Point3<f64>>,
    states: Vec<VertexState>,
    triangles: Vec<[u32; 3]>,
    adjacency: Vec<Vec<u32>>,
}

#[inline]
fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriMesh {
    /// Axis-aligned cube of side `edge_length` centered on `center`, 12 outward-wound triangles.
    pub fn seed_cube(center: Point3<f64>, edge_length: f64) -> Result<Self, MeshError> {
        if !(edge_length > 0.0 && edge_length.is_finite()) {
            return Err(MeshError::BadEdgeLength(edge_length));
        }
        let h = edge_length / 2.0;
        let radius = h * 3f64.sqrt();
        let states = (0..8u32)
            .map(|i| {
                let corner = Vector3::new(
                    if i & 1 == 0 { -1.0 } else { 1.0 },
                    if i & 2 == 0 { -1.0 } else { 1.0 },
                    if i & 4 == 0 { -1.0 } else { 1.0 },
                );
                let direction = corner.normalize();
                VertexState {
                    direction,
                    radius,
                    normal: direction,
                    curvature: 0.0,
                    recent_max_intensity: f32::NEG_INFINITY,
                    frozen: false,
                }
            })
            .collect();
        // Quads listed counter-clockwise as seen from outside.
        let quads: [[u32; 4]; 6] =
            [[0, 4, 6, 2], [1, 3, 7, 5], [0, 1, 5, 4], [2, 6, 7, 3], [0, 2, 3, 1], [4, 5, 7, 6]];
        let triangles = quads.iter().flat_map(|&[a, b, c, d]| [[a, b, c], [a, c, d]]).collect();
        let mut mesh = Self { center, positions: Vec::new(), states, triangles, adjacency: Vec::new() };
        mesh.positions = mesh.states.iter().map(|s| center + s.direction * s.radius).collect();
        mesh.rebuild_adjacency();
        Ok(mesh)
    }

    pub fn center(&self) -> Point3<f64> {
        self.center
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn states(&self) -> &[VertexState] {
        &self.states
    }

    pub fn state_mut(&mut self, v: usize) -> &mut VertexState {
        &mut self.states[v]
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Sorted 1-ring neighbors of `v`.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Moves vertex `v` along its fixed direction.
    #[inline]
    pub fn set_radius(&mut self, v: usize, radius: f64) {
        let s = &mut self.states[v];
        s.radius = radius;
        self.positions[v] = self.center + s.direction * radius;
    }

    pub fn mean_radius(&self) -> f64 {
        self.states.iter().map(|s| s.radius).sum::<f64>() / self.states.len() as f64
    }

    /// Sets every vertex memory to `value`.
    pub fn reset_memory(&mut self, value: f32) {
        for s in &mut self.states {
            s.recent_max_intensity = value;
        }
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.positions.len()];
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for ring in &mut adj {
            ring.sort_unstable();
            ring.dedup();
        }
        self.adjacency = adj;
    }

    /// Undirected edge -> incident triangles.
    fn edge_map(&self) -> HashMap<(u32, u32), Vec<u32>> {
        let mut map: HashMap<(u32, u32), Vec<u32>> = HashMap::with_capacity(self.triangles.len() * 3 / 2);
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                map.entry(edge_key(t[k], t[(k + 1) % 3])).or_default().push(ti as u32);
            }
        }
        map
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<_> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| edge_key(t[k], t[(k + 1) % 3])))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn edge_length(&self, (a, b): (u32, u32)) -> f64 {
        (self.positions[a as usize] - self.positions[b as usize]).norm()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges().into_iter().map(|e| self.edge_length(e)).fold(0.0, f64::max)
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edges().len() as i64 + self.triangle_count() as i64
    }

    /// Checks that every edge bounds exactly two triangles, traversed in opposite directions.
    pub fn check_manifold(&self) -> Result<(), MeshError> {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            let back = directed.get(&(b, a)).copied().unwrap_or(0);
            if n != 1 || back != 1 {
                let (a, b) = edge_key(a, b);
                return Err(MeshError::NonManifoldEdge { a, b, count: n + back });
            }
        }
        Ok(())
    }

    /// Signed volume of the triangle fan about the center (positive when outward-wound).
    pub fn fan_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.positions[i as usize] - self.center);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Midpoint-splits every edge longer than `threshold` until none remain.
    pub fn split_long_edges(&mut self, threshold: f64) -> Result<usize, MeshError> {
        self.split_long_edges_observed(threshold, |_| {})
    }

    /// Like [`TriMesh::split_long_edges`], calling `after_pass` once per pass that split something.
    ///
    /// Within a pass an edge is only split when neither incident triangle was
    /// touched earlier in the same pass; longest edges go first.
    pub fn split_long_edges_observed(
        &mut self,
        threshold: f64,
        mut after_pass: impl FnMut(&TriMesh),
    ) -> Result<usize, MeshError> {
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(MeshError::BadThreshold(threshold));
        }
        let mut total = 0;
        for _ in 0..MAX_SPLIT_PASSES {
            let long = self.long_edges(threshold);
            if long.is_empty() {
                return Ok(total);
            }
            total += self.split_pass(&long)?;
            self.rebuild_adjacency();
            after_pass(self);
        }
        let remaining = self.long_edges(threshold).len();
        if remaining > 0 {
            return Err(MeshError::SplitDidNotConverge { remaining });
        }
        Ok(total)
    }

    fn long_edges(&self, threshold: f64) -> Vec<(u32, u32)> {
        let mut long: Vec<((u32, u32), f64)> = self
            .edges()
            .into_iter()
            .map(|e| (e, self.edge_length(e)))
            .filter(|&(_, len)| len > threshold)
            .collect();
        long.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        long.into_iter().map(|(e, _)| e).collect()
    }

    fn split_pass(&mut self, long: &[(u32, u32)]) -> Result<usize, MeshError> {
        let edge_map = self.edge_map();
        let mut touched = vec![false; self.triangles.len()];
        let mut splits = 0;
        for &(a, b) in long {
            let tris = &edge_map[&(a, b)];
            debug_assert_eq!(tris.len(), 2);
            let (t1, t2) = (tris[0] as usize, tris[1] as usize);
            if touched[t1] || touched[t2] {
                continue;
            }
            let m = self.add_midpoint_vertex(a, b)?;
            for t in [t1, t2] {
                // Rotate so the split edge is (p, q) and r is opposite.
                let tri = self.triangles[t];
                let k = (0..3)
                    .find(|&k| edge_key(tri[k], tri[(k + 1) % 3]) == (a, b))
                    .expect("triangle contains its edge");
                let (p, q, r) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
                self.triangles[t] = [p, m, r];
                self.triangles.push([m, q, r]);
            }
            touched[t1] = true;
            touched[t2] = true;
            touched.extend([true, true]);
            splits += 1;
        }
        Ok(splits)
    }

    fn add_midpoint_vertex(&mut self, a: u32, b: u32) -> Result<u32, MeshError> {
        let (pa, pb) = (self.positions[a as usize], self.positions[b as usize]);
        let mid = Point3::from((pa.coords + pb.coords) / 2.0);
        let offset = mid - self.center;
        let radius = offset.norm();
        if radius.is_nan() || radius <= 1e-12 {
            return Err(MeshError::DegenerateSplit(a, b));
        }
        let (sa, sb) = (&self.states[a as usize], &self.states[b as usize]);
        let normal = (sa.normal + sb.normal).try_normalize(0.0).unwrap_or(offset / radius);
        let state = VertexState {
            direction: offset / radius,
            radius,
            normal,
            curvature: 0.5 * (sa.curvature + sb.curvature),
            recent_max_intensity: sa.recent_max_intensity.max(sb.recent_max_intensity),
            frozen: false,
        };
        self.positions.push(mid);
        self.states.push(state);
        Ok((self.positions.len() - 1) as u32)
    }

    /// Area-weighted vertex normals and a 1-ring curvature estimate.
    ///
    /// Curvature is `|Δ| / (2 r̄)`, where `Δ` is the offset from the vertex to
    /// the mean of its ring and `r̄` the mean distance to the ring vertices.
    /// It is dimensionless and zero on flat regions.
    pub fn recompute_normals_and_curvature(&mut self) {
        let mut normals = vec![Vector3::zeros(); self.positions.len()];
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.positions[i as usize]);
            // Cross product length is twice the area: area weighting for free.
            let n = (b - a).cross(&(c - a));
            for &i in t {
                normals[i as usize] += n;
            }
        }
        for (v, n) in normals.into_iter().enumerate() {
            let ring = &self.adjacency[v];
            assert!(!ring.is_empty(), "isolated vertex {v}");
            let p = self.positions[v];
            let mut sum = Vector3::zeros();
            let mut dist = 0.0;
            for &q in ring {
                let d = self.positions[q as usize] - p;
                sum += d;
                dist += d.norm();
            }
            let k = ring.len() as f64;
            let umbrella = sum / k;
            let mean_dist = dist / k;
            let s = &mut self.states[v];
            s.normal = n.try_normalize(0.0).unwrap_or(s.direction);
            s.curvature = if mean_dist > 0.0 { umbrella.norm() / (2.0 * mean_dist) } else { 0.0 };
        }
    }

    /// Blends every radius toward its ring mean: `r <- (1 - λ) r + λ mean(ring r)`.
    /// All vertices update simultaneously; directions are untouched.
    pub fn radial_smooth(&mut self, lambda: f64) {
        debug_assert!((0.0..=1.0).contains(&lambda));
        if lambda == 0.0 {
            return;
        }
        let smoothed: Vec<f64> = (0..self.states.len())
            .map(|v| {
                let ring = &self.adjacency[v];
                let ring_mean = ring.iter().map(|&q| self.states[q as usize].radius).sum::<f64>() / ring.len() as f64;
                (1.0 - lambda) * self.states[v].radius + lambda * ring_mean
            })
            .collect();
        for (v, r) in smoothed.into_iter().enumerate() {
            self.set_radius(v, r);
        }
    }
}

#[cfg(test)]
mod tests;
