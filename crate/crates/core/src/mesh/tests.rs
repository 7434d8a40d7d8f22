use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::volume::Grid;

/// Cube refined until edges are at most `max_edge`, with every vertex on the sphere.
pub(crate) fn sphere_mesh(center: Point3<f64>, radius: f64, max_edge: f64) -> TriMesh {
    let mut m = TriMesh::seed_cube(center, radius).unwrap();
    loop {
        for v in 0..m.vertex_count() {
            m.set_radius(v, radius);
        }
        if m.split_long_edges(max_edge).unwrap() == 0 {
            return m;
        }
    }
}

fn icosahedron(radius: f64) -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let triangles = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    let states: Vec<VertexState> = raw
        .iter()
        .map(|p| {
            let d = Vector3::from(*p).normalize();
            VertexState {
                direction: d,
                radius,
                normal: d,
                curvature: 0.0,
                recent_max_intensity: 0.0,
                frozen: false,
            }
        })
        .collect();
    let mut m = TriMesh { center: Point3::origin(), positions: Vec::new(), states, triangles, adjacency: Vec::new() };
    m.positions = m.states.iter().map(|s| Point3::from(s.direction * s.radius)).collect();
    m.rebuild_adjacency();
    m
}

fn assert_closed_star(m: &TriMesh) {
    assert_eq!(m.euler_characteristic(), 2);
    m.check_manifold().unwrap();
    assert!(m.fan_volume() > 0.0);
    for t in m.triangles() {
        let [a, b, c] = t.map(|i| m.states()[i as usize].direction);
        assert!(a.dot(&b.cross(&c)) > 0.0, "spherical triangle {t:?} is inverted");
    }
}

/// Möller–Trumbore crossing count of the ray `center + t u`, t > 0.
fn ray_crossings(m: &TriMesh, u: &Vector3<f64>) -> usize {
    let o = m.center();
    m.triangles()
        .iter()
        .filter(|t| {
            let [p0, p1, p2] = t.map(|i| m.positions()[i as usize]);
            let (e1, e2) = (p1 - p0, p2 - p0);
            let h = u.cross(&e2);
            let det = e1.dot(&h);
            if det.abs() < 1e-14 {
                return false;
            }
            let s = o - p0;
            let bu = s.dot(&h) / det;
            let q = s.cross(&e1);
            let bv = u.dot(&q) / det;
            let t = e2.dot(&q) / det;
            (0.0..=1.0).contains(&bu) && bv >= 0.0 && bu + bv <= 1.0 && t > 0.0
        })
        .count()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[test]
fn seed_cube_geometry() {
    let m = TriMesh::seed_cube(Point3::origin(), 2.0).unwrap();
    assert_eq!(m.vertex_count(), 8);
    assert_eq!(m.triangle_count(), 12);
    assert_eq!(m.edges().len(), 18);
    for (p, s) in m.positions().iter().zip(m.states()) {
        assert!(p.iter().all(|c| (c.abs() - 1.0).abs() < 1e-12));
        assert!((s.radius - 3f64.sqrt()).abs() < 1e-12);
        assert!((s.direction.norm() - 1.0).abs() < 1e-15);
    }
    assert_closed_star(&m);
    for edge in [0.5, 2.0, 7.3] {
        let m = TriMesh::seed_cube(Point3::new(3.0, -1.0, 2.0), edge).unwrap();
        let v = m.fan_volume();
        assert!((v - edge.powi(3)).abs() <= 1e-9 * edge.powi(3));
    }
    assert_eq!(TriMesh::seed_cube(Point3::origin(), 0.0), Err(MeshError::BadEdgeLength(0.0)));
}

#[test]
fn split_thresholds() {
    let mut m = TriMesh::seed_cube(Point3::origin(), 2.0).unwrap();
    let before = m.clone();
    assert_eq!(m.split_long_edges(3.0).unwrap(), 0);
    assert_eq!(m, before);

    assert_eq!(m.split_long_edges(2.0).unwrap(), 6);
    let longest = m.edges().into_iter().map(|e| m.edge_length(e)).fold(0.0, f64::max);
    assert!(longest <= 2.0);
    assert_closed_star(&m);
    assert_eq!(m.vertex_count(), 14);

    let spacing = Grid::new([1, 1, 1], [1.0; 3], [0.0; 3]).unwrap().mean_spacing();
    assert_eq!(2.95 * spacing, 2.95);
    assert_eq!(m.split_long_edges(-1.0), Err(MeshError::BadThreshold(-1.0)));
}

#[test]
fn split_gives_up_below_representable_scale() {
    let mut m = TriMesh::seed_cube(Point3::origin(), 2.0).unwrap();
    assert!(matches!(m.split_long_edges(1e-3), Err(MeshError::SplitDidNotConverge { .. })));
}

#[test]
fn split_keeps_radial_function_at_old_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut m = sphere_mesh(Point3::new(1.0, 2.0, 3.0), 5.0, 3.0);
    for v in 0..m.vertex_count() {
        m.set_radius(v, rng.random_range(4.0..8.0));
    }
    let old: Vec<(Vector3<f64>, f64)> = m.states().iter().map(|s| (s.direction, s.radius)).collect();
    let mut passes = 0;
    m.split_long_edges_observed(1.0, |mesh| {
        passes += 1;
        assert_closed_star(mesh);
    })
    .unwrap();
    assert!(passes > 0);
    for (d, r) in old {
        let got = m.radius_along(&d).unwrap();
        assert!((got - r).abs() < 1e-9 * r, "{got} vs {r}");
    }
}

#[test]
fn split_memory_takes_parent_max() {
    let mut m = TriMesh::seed_cube(Point3::origin(), 2.0).unwrap();
    for v in 0..8 {
        m.state_mut(v).recent_max_intensity = v as f32;
    }
    m.split_long_edges(2.0).unwrap();
    for v in 8..m.vertex_count() {
        // Each new vertex sits on a face diagonal; the larger corner index wins.
        let mem = m.states()[v].recent_max_intensity;
        let parents: Vec<f32> = m.neighbors(v).iter().filter(|&&q| q < 8).map(|&q| q as f32).collect();
        assert!(parents.contains(&mem));
    }
}

#[test]
fn icosahedron_normals_and_curvature() {
    let mut m = icosahedron(5.0);
    assert_closed_star(&m);
    m.recompute_normals_and_curvature();
    let k0 = m.states()[0].curvature;
    assert!(k0 > 0.0);
    for s in m.states() {
        assert!(s.normal.dot(&s.direction) > 0.99);
        assert!((s.normal.norm() - 1.0).abs() < 1e-12);
        assert!((s.curvature - k0).abs() < 1e-6);
    }
}

#[test]
fn curvature_decreases_with_sphere_radius() {
    let mean_curv = |r: f64| {
        let mut m = sphere_mesh(Point3::origin(), r, 2.0);
        m.recompute_normals_and_curvature();
        m.states().iter().map(|s| s.curvature).sum::<f64>() / m.vertex_count() as f64
    };
    let k: Vec<f64> = [10.0, 20.0, 40.0].into_iter().map(mean_curv).collect();
    assert!(k[0] > k[1] && k[1] > k[2], "{k:?}");
    assert!(k[2] < 0.02);
}

#[test]
fn spike_has_highest_curvature() {
    let mut m = sphere_mesh(Point3::origin(), 10.0, 3.0);
    let spike = 5;
    m.set_radius(spike, 50.0);
    m.recompute_normals_and_curvature();
    let ks = m.states()[spike].curvature;
    for &q in m.neighbors(spike) {
        assert!(ks > m.states()[q as usize].curvature);
    }
}

#[test]
fn smoothing_cases() {
    let mut m = icosahedron(4.0);
    let before = m.clone();
    m.radial_smooth(0.0);
    assert_eq!(m, before);
    m.radial_smooth(0.7);
    for s in m.states() {
        assert!((s.radius - 4.0).abs() < 1e-12);
    }

    m.set_radius(0, 8.0);
    m.radial_smooth(0.5);
    assert!((m.states()[0].radius - 6.0).abs() < 1e-12);
    for (p, s) in m.positions().iter().zip(m.states()) {
        assert!((p.coords - s.direction * s.radius).norm() < 1e-12);
    }
}

#[test]
fn voxelized_sphere_matches_analytic_band() {
    let c = Point3::new(16.0, 16.0, 16.0);
    let m = sphere_mesh(c, 10.0, 1.5);
    let g = Grid::new([33, 33, 33], [1.0; 3], [0.0; 3]).unwrap();
    let mask = m.voxelize(&g).unwrap();
    let mut mismatches = 0;
    for o in 0..g.len() {
        let idx = g.index_of(o);
        let d = (g.voxel_center(idx) - c).norm();
        if mask.get(idx) != (d <= 10.0) {
            mismatches += 1;
            assert!((d - 10.0).abs() <= 1.0, "mismatch at distance {d}");
        }
    }
    let analytic = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
    assert!((mask.count() as f64 - analytic).abs() < 0.05 * analytic);
    assert!(mismatches < 400);
}

#[test]
fn voxelize_tiny_and_cube() {
    let g = Grid::new([20, 20, 20], [1.0; 3], [0.0; 3]).unwrap();
    let tiny = TriMesh::seed_cube(Point3::new(4.5, 4.5, 4.5), 0.2).unwrap();
    assert_eq!(tiny.voxelize(&g).unwrap().count(), 0);

    let cube = TriMesh::seed_cube(Point3::new(10.5, 10.5, 10.5), 10.0).unwrap();
    assert_eq!(cube.voxelize(&g).unwrap().count(), 1000);

    let g = Grid::new([40, 40, 40], [0.7, 0.8, 0.9], [0.0; 3]).unwrap();
    let edge = 12.0;
    let cube = TriMesh::seed_cube(Point3::new(14.13, 15.07, 16.91), edge).unwrap();
    let count = cube.voxelize(&g).unwrap().count() as f64;
    let expected = edge.powi(3) / g.voxel_volume_mm3();
    let layer = 2.0 * (edge * edge) * (1.0 / 0.7 / 0.8 + 1.0 / 0.7 / 0.9 + 1.0 / 0.8 / 0.9);
    assert!((count - expected).abs() <= layer, "{count} vs {expected}");
}

#[test]
fn ray_parity_on_irregular_star() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut m = sphere_mesh(Point3::new(-3.0, 4.0, 1.0), 6.0, 2.5);
    for v in 0..m.vertex_count() {
        m.set_radius(v, rng.random_range(2.0..12.0));
    }
    for _ in 0..1000 {
        let u = random_unit(&mut rng);
        assert_eq!(ray_crossings(&m, &u), 1);
        let r = m.radius_along(&u).unwrap();
        assert!(r > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn operations_preserve_topology(
        seed in any::<u64>(),
        ops in proptest::collection::vec(0u8..3, 1..12),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = TriMesh::seed_cube(Point3::new(1.0, -2.0, 0.5), 2.0).unwrap();
        for op in ops {
            match op {
                0 => {
                    for v in 0..m.vertex_count() {
                        let r = m.states()[v].radius * rng.random_range(1.0..1.3);
                        m.set_radius(v, r);
                    }
                }
                1 => { m.split_long_edges(2.0).unwrap(); }
                _ => m.radial_smooth(rng.random_range(0.0..=1.0)),
            }
            prop_assert_eq!(m.euler_characteristic(), 2);
            prop_assert!(m.check_manifold().is_ok());
            prop_assert!(m.fan_volume() > 0.0);
        }
    }

    #[test]
    fn smoothing_is_a_convex_combination(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = sphere_mesh(Point3::origin(), 5.0, 3.0);
        for v in 0..m.vertex_count() {
            m.set_radius(v, rng.random_range(1.0..10.0));
        }
        let radii = |m: &TriMesh| m.states().iter().map(|s| s.radius).collect::<Vec<_>>();
        let before = radii(&m);
        m.radial_smooth(lambda);
        let after = radii(&m);
        let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
        let min = |v: &[f64]| v.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(max(&after) <= max(&before) + 1e-12);
        prop_assert!(min(&after) >= min(&before) - 1e-12);
    }
}
