//! Star ray-cast: the surface radius along any direction, and mask voxelization.

use nalgebra::{Point3, Vector3};

use super::{edge_key, MeshError, TriMesh};
use crate::volume::{BinaryMask, Grid};

const INSIDE_EPS: f64 = -1e-12;

/// Finds the triangle pierced by a ray from the mesh center by walking across
/// neighboring triangles, with a linear scan as fallback.
pub struct RayLocator<'a> {
    mesh: &'a TriMesh,
    neighbors: Vec<[u32; 3]>,
    last: u32,
}

impl<'a> RayLocator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let map = mesh.edge_map();
        let neighbors = mesh
            .triangles
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let mut n = [u32::MAX; 3];
                for k in 0..3 {
                    if let Some(&other) =
                        map[&edge_key(t[k], t[(k + 1) % 3])].iter().find(|&&o| o as usize != ti)
                    {
                        n[k] = other;
                    }
                }
                n
            })
            .collect();
        Self { mesh, neighbors, last: 0 }
    }

    /// Orientation of `u` against the three edges of triangle `t` (as seen from the center).
    #[inline]
    fn edge_tests(&self, t: usize, u: &Vector3<f64>) -> [f64; 3] {
        let [a, b, c] = self.mesh.triangles[t].map(|i| &self.mesh.states[i as usize].direction);
        [a.cross(b).dot(u), b.cross(c).dot(u), c.cross(a).dot(u)]
    }

    /// Index of the triangle whose spherical projection contains unit direction `u`.
    pub fn locate(&mut self, u: &Vector3<f64>) -> Option<usize> {
        let n = self.mesh.triangles.len();
        let mut t = self.last as usize;
        let mut prev = usize::MAX;
        for _ in 0..n.min(4096) {
            let d = self.edge_tests(t, u);
            if d.iter().all(|&x| x >= INSIDE_EPS) {
                self.last = t as u32;
                return Some(t);
            }
            // Cross the most violated edge, but never straight back.
            let mut order = [0usize, 1, 2];
            order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
            let next = order
                .iter()
                .filter(|&&k| d[k] < INSIDE_EPS)
                .map(|&k| self.neighbors[t][k] as usize)
                .find(|&nt| nt != prev && nt != u32::MAX as usize);
            match next {
                Some(nt) => {
                    prev = t;
                    t = nt;
                }
                None => break,
            }
        }
        let found = (0..n).find(|&t| self.edge_tests(t, u).iter().all(|&x| x >= INSIDE_EPS))?;
        self.last = found as u32;
        Some(found)
    }

    /// Distance from the center to the surface along unit direction `u`.
    pub fn radius_along(&mut self, u: &Vector3<f64>) -> Result<f64, MeshError> {
        let t = self.locate(u).ok_or(MeshError::NotWatertight([u.x, u.y, u.z]))?;
        let [p0, p1, p2] = self.mesh.triangles[t].map(|i| self.mesh.positions[i as usize]);
        let n = (p1 - p0).cross(&(p2 - p0));
        let denom = n.dot(u);
        if denom <= 0.0 {
            return Err(MeshError::NotWatertight([u.x, u.y, u.z]));
        }
        Ok(n.dot(&(p0 - self.mesh.center)) / denom)
    }
}

impl TriMesh {
    /// Surface radius along an arbitrary (not necessarily unit) direction.
    pub fn radius_along(&self, direction: &Vector3<f64>) -> Result<f64, MeshError> {
        let u = direction.normalize();
        RayLocator::new(self).radius_along(&u)
    }

    /// Marks every voxel whose center lies within the surface.
    ///
    /// Only the bounding box of the vertices is visited; a voxel at distance
    /// `d` from the center along direction `u` is inside iff `d <= R(u)`.
    pub fn voxelize(&self, grid: &Grid) -> Result<BinaryMask, MeshError> {
        let mut mask = BinaryMask::empty(grid);
        let (lo, hi) = self.positions.iter().fold(
            ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]),
            |(mut lo, mut hi), p| {
                let c = grid.world_to_index(p);
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a]);
                }
                (lo, hi)
            },
        );
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let start = lo[a].ceil().max(0.0);
            let end = hi[a].floor().min(grid.dims[a] as f64 - 1.0);
            if end < start {
                return Ok(mask);
            }
            range[a] = (start as usize, end as usize);
        }

        let mut locator = RayLocator::new(self);
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let p: Point3<f64> = grid.voxel_center([i, j, k]);
                    let d = p - self.center;
                    let dist = d.norm();
                    let inside = dist == 0.0 || dist <= locator.radius_along(&(d / dist))?;
                    if inside {
                        mask.set([i, j, k], true);
                    }
                }
            }
        }
        Ok(mask)
    }
}
