//! ASCII OBJ and binary STL writers.

use std::fmt::Write as _;

use super::TriMesh;

impl TriMesh {
    /// `v` lines followed by `f` lines with 1-based indices.
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.positions.len() * 40 + self.triangles.len() * 24);
        for p in &self.positions {
            writeln!(out, "v {} {} {}", p.x, p.y, p.z).unwrap();
        }
        for t in &self.triangles {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        out
    }

    /// Little-endian binary STL: 80-byte header, triangle count, 50-byte records.
    pub fn to_stl(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(84 + 50 * self.triangles.len());
        let mut header = [0u8; 80];
        let tag = b"balloonseg binary STL";
        header[..tag.len()].copy_from_slice(tag);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.positions[i as usize]);
            let n = (b - a).cross(&(c - a)).try_normalize(0.0).unwrap_or_default();
            for v in [n.x, n.y, n.z] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            for p in [a, b, c] {
                for v in [p.x, p.y, p.z] {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&0u16.to_le_bytes());
        }
        out
    }
}
