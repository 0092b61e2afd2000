use aeromag_core::filters::*;
use aeromag_core::synthetics::{synth_homogeneous, synth_homogeneous_gradients, HomogeneousSource};
use aeromag_core::{Grid, GridGeoref};

fn square(n: usize, cell: f64) -> GridGeoref {
    GridGeoref::new(0.0, 0.0, cell, n, n).unwrap()
}

/// Relative L2 difference over the central 80% of the grid.
fn interior_rel_l2(a: &Grid, b: &Grid) -> f64 {
    let (nr, nc) = (a.georef.n_rows, a.georef.n_cols);
    let (r0, c0) = (nr / 10, nc / 10);
    let (mut num, mut den) = (0.0, 0.0);
    for r in r0..nr - r0 {
        for c in c0..nc - c0 {
            let d = a.get(r, c) - b.get(r, c);
            num += d * d;
            den += b.get(r, c) * b.get(r, c);
        }
    }
    (num / den).sqrt()
}

fn interior_max_abs(g: &Grid, f: impl Fn(f64) -> f64) -> f64 {
    let (nr, nc) = (g.georef.n_rows, g.georef.n_cols);
    let (r0, c0) = (nr / 10, nc / 10);
    let mut m: f64 = 0.0;
    for r in r0..nr - r0 {
        for c in c0..nc - c0 {
            m = m.max(f(g.get(r, c)).abs());
        }
    }
    m
}

#[test]
fn upward_continuation_composes() {
    let georef = square(256, 100.0);
    let (x, y) = georef.cell_center(128, 128);
    let g = synth_homogeneous(&HomogeneousSource::harmonic(x, y, 200.0, 1e8, 3.0, 0.0), georef);
    let plan = SpectralPlan::default();
    let twice = upward_continue(&upward_continue(&g, 100.0, &plan).unwrap(), 100.0, &plan).unwrap();
    let once = upward_continue(&g, 200.0, &plan).unwrap();
    let err = interior_rel_l2(&twice, &once);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn upward_continuation_matches_analytic_field_at_height() {
    // A harmonic source continued by h is the same source at z0 + h.
    let georef = square(256, 100.0);
    let (x, y) = georef.cell_center(128, 128);
    let src = HomogeneousSource::harmonic(x, y, 300.0, 1e8, 2.0, 0.0);
    let up = upward_continue(&synth_homogeneous(&src, georef), 200.0, &SpectralPlan::default()).unwrap();
    let truth = synth_homogeneous(&HomogeneousSource { z0: 500.0, ..src }, georef);
    assert!(interior_rel_l2(&up, &truth) <= 2e-2);
}

#[test]
fn spectral_derivatives_match_analytic_gradients() {
    let georef = square(256, 50.0);
    let (x, y) = georef.cell_center(128, 128);
    let src = HomogeneousSource::harmonic(x, y, 200.0, 1e8, 2.0, 0.0);
    let g = synth_homogeneous(&src, georef);
    let truth = synth_homogeneous_gradients(&src, georef);
    let plan = SpectralPlan::default();
    for (axis, t) in [Axis::X, Axis::Y, Axis::Z].into_iter().zip(&truth) {
        let d = derivative(&g, axis, &plan).unwrap();
        let err = interior_rel_l2(&d, t);
        assert!(err <= 1e-3, "{axis:?}: {err:e}");
    }
}

#[test]
fn ramp_derivatives() {
    let georef = square(128, 10.0);
    let ramp_x = Grid::from_fn(georef, "nT", |x, _| 3.0 * x);
    let d = derivative(&ramp_x, Axis::X, &SpectralPlan::default()).unwrap();
    assert!(interior_max_abs(&d, |v| v - 3.0) <= 3e-3);

    let ramp_y = Grid::from_fn(georef, "nT", |_, y| 3.0 * y);
    let range = 3.0 * 1280.0;
    let d = derivative(&ramp_y, Axis::X, &SpectralPlan::default()).unwrap();
    assert!(interior_max_abs(&d, |v| v) <= 1e-6 * range);
}

fn sinusoid(georef: GridGeoref, wavelength: f64) -> Grid {
    Grid::from_fn(georef, "nT", |x, _| (2.0 * std::f64::consts::PI * x / wavelength).sin())
}

#[test]
fn lowpass_stop_band() {
    let georef = square(256, 100.0);
    let out = lowpass(&sinusoid(georef, 250.0), 500.0, &SpectralPlan::default()).unwrap();
    let peak = interior_max_abs(&out, |v| v);
    assert!(peak <= 1e-3, "{peak:e}");
}

#[test]
fn lowpass_pass_band() {
    let georef = square(256, 100.0);
    let input = sinusoid(georef, 2000.0);
    let out = lowpass(&input, 500.0, &SpectralPlan::default()).unwrap();
    let gain = interior_max_abs(&out, |v| v) / interior_max_abs(&input, |v| v);
    assert!((gain - 1.0).abs() <= 0.02, "{gain}");
}

#[test]
fn detrend_recovers_plane_under_zero_mean_anomaly() {
    let georef = square(128, 100.0);
    let (cx, cy) = georef.cell_center(64, 64);
    // odd in each axis about the centre: zero mean, orthogonal to the plane
    let plane = |x: f64, y: f64| 50.0 + 0.02 * x - 0.01 * y;
    let g = Grid::from_fn(georef, "nT", |x, y| {
        plane(x, y) + 5.0 * ((x - cx) / 700.0).sin() * ((y - cy) / 700.0).sin()
    });
    let (_, surface) = detrend_poly(&g, 1).unwrap();
    let c = surface.world_coefficients();
    for (got, want) in c.iter().zip([50.0, 0.02, -0.01]) {
        assert!((got - want).abs() <= 1e-3 * want.abs(), "{c:?}");
    }
}

#[test]
fn filters_are_bit_stable() {
    let georef = square(96, 100.0);
    let g = Grid::from_fn(georef, "nT", |x, y| (x / 900.0).sin() * (y / 1300.0).cos());
    let plan = SpectralPlan::default();
    assert_eq!(upward_continue(&g, 150.0, &plan).unwrap(), upward_continue(&g, 150.0, &plan).unwrap());
    assert_eq!(derivative(&g, Axis::Z, &plan).unwrap(), derivative(&g, Axis::Z, &plan).unwrap());
}
