use balloonseg_core::{
    derive_seed, dsc, load_metaimage, run_segmentation, run_segmentation_observed, save_mask, save_volume, segment,
    ElementType, InflationError, InflationObserver, InflationParams, PhantomSpec, SeedModel, Termination, TriMesh,
};

fn sphere() -> balloonseg_core::Phantom {
    PhantomSpec::sphere([40, 40, 40], [1.0; 3], [20.0, 20.0, 20.0], 12.0).generate().unwrap()
}

fn seed_of(p: &balloonseg_core::Phantom) -> SeedModel {
    derive_seed(&p.contour, &p.volume, 0.02).unwrap()
}

#[test]
fn single_iteration_cap() {
    let p = sphere();
    let params = InflationParams { max_iterations: Some(1), ..Default::default() };
    let seg = run_segmentation(&p.volume, &seed_of(&p), &params).unwrap();
    assert_eq!(seg.stats.iterations_run, 1);
    assert_eq!(seg.stats.termination_reason, Termination::MaxIterations);
}

#[test]
fn seed_in_background_is_rejected() {
    let p = sphere();
    let mut seed = seed_of(&p);
    seed.center = [3.0, 3.0, 3.0];
    let err = run_segmentation(&p.volume, &seed, &InflationParams::default()).unwrap_err();
    assert!(matches!(err, InflationError::SeedOutsideRange { intensity: Some(v), .. } if v == 0.0));
    assert!(err.to_string().starts_with("seed outside intensity range"));
}

#[test]
fn reaches_radius_on_clean_sphere() {
    let p = sphere();
    let (seed, seg) = segment(&p.volume, &p.contour, &InflationParams::default()).unwrap();
    assert_eq!(seg.stats.termination_reason, Termination::RadiusReached);
    assert!(seg.stats.final_mean_radius >= seed.radius);
    assert!(dsc(&seg.mask, &p.truth).unwrap() >= 95.0);
    assert_eq!(seg.stats.vertex_count, seg.mesh.vertex_count());
    assert_eq!(seg.stats.triangle_count, 2 * seg.stats.vertex_count - 4);
}

/// Records radius changes through the move step and through smoothing.
#[derive(Default)]
struct RadiusLog {
    after_moves: Vec<f64>,
    shrunk_in_moves: usize,
    smoothing_excess: f64,
}

impl InflationObserver for RadiusLog {
    fn moves_done(&mut self, _iteration: usize, before: &[f64], mesh: &TriMesh) {
        self.after_moves = mesh.states().iter().map(|s| s.radius).collect();
        self.shrunk_in_moves += before.iter().zip(&self.after_moves).filter(|(b, a)| a < b).count();
    }

    fn iteration_done(&mut self, _iteration: usize, mesh: &TriMesh) {
        let lambda = InflationParams::default().smooth_lambda;
        for (v, s) in mesh.states().iter().enumerate() {
            let r = self.after_moves[v];
            let ring = mesh.neighbors(v).iter().map(|&n| self.after_moves[n as usize]);
            let (lo, hi) = ring.fold((r, r), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let drop = r - s.radius;
            self.smoothing_excess = self.smoothing_excess.max(drop - lambda * (hi - lo) - 1e-12);
        }
    }
}

#[test]
fn moves_never_shrink_and_smoothing_is_bounded() {
    let mut spec = PhantomSpec::sphere([40, 40, 40], [1.0; 3], [20.0, 20.0, 20.0], 12.0);
    spec.noise_sigma = 10.0;
    spec.rng_seed = 21;
    let p = spec.generate().unwrap();
    let mut log = RadiusLog::default();
    run_segmentation_observed(&p.volume, &seed_of(&p), &InflationParams::default(), &mut log).unwrap();
    assert_eq!(log.shrunk_in_moves, 0);
    assert!(log.smoothing_excess <= 0.0, "{}", log.smoothing_excess);
}

#[test]
fn widening_the_gate_never_shrinks_the_result() {
    let p = sphere();
    let base = seed_of(&p);
    let params = InflationParams { radius_stop_ratio: 2.0, ..Default::default() };
    let mut last = 0.0;
    for widen in [0.0f32, 10.0, 50.0, 99.0] {
        let seed = SeedModel { intensity_min: base.intensity_min - widen, intensity_max: base.intensity_max + widen, ..base };
        let vol = run_segmentation(&p.volume, &seed, &params).unwrap().stats.volume_cm3;
        assert!(vol >= last, "widen {widen}: {vol} < {last}");
        last = vol;
    }
}

#[test]
fn frozen_surface_converges() {
    // Without smoothing, every vertex eventually freezes at the boundary.
    let p = sphere();
    let params = InflationParams { smooth_lambda: 0.0, radius_stop_ratio: 2.0, ..Default::default() };
    let seed = seed_of(&p);
    let seg = run_segmentation(&p.volume, &seed, &params).unwrap();
    assert_eq!(seg.stats.termination_reason, Termination::Converged);
    let resolved = params.resolve(&p.volume, &seed);
    assert!(seg.stats.iterations_run < resolved.max_iterations);
    assert!(seg.mesh.states().iter().all(|s| s.frozen));
}

#[test]
fn halts_within_cap() {
    let p = sphere();
    for cap in [1, 2, 7, 30] {
        let params = InflationParams { max_iterations: Some(cap), radius_stop_ratio: 5.0, ..Default::default() };
        let seg = run_segmentation(&p.volume, &seed_of(&p), &params).unwrap();
        assert!(seg.stats.iterations_run <= cap);
    }
}

#[test]
fn files_round_trip_through_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let p = sphere();
    let vol_path = dir.path().join("sphere.mhd");
    save_volume(&p.volume, &vol_path, ElementType::Short).unwrap();
    let loaded = load_metaimage(&vol_path).unwrap();
    assert_eq!(loaded, p.volume);

    let (_, seg) = segment(&loaded, &p.contour, &InflationParams::default()).unwrap();
    let mask_path = dir.path().join("mask.mha");
    save_mask(&seg.mask, &mask_path).unwrap();
    let back = balloonseg_core::BinaryMask::from_volume(&load_metaimage(&mask_path).unwrap());
    assert_eq!(back, seg.mask);
}
