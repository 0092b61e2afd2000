use aeromag_core::synthetics::*;
use aeromag_core::GridGeoref;

#[test]
fn noise_has_the_requested_spread() {
    let georef = GridGeoref::new(0.0, 0.0, 10.0, 256, 256).unwrap();
    let flat = aeromag_core::Grid::filled(georef, 50.0, "nT");
    let noisy = add_noise(&flat, 1.0, 99);
    let n = noisy.values.len() as f64;
    let mean = noisy.values.iter().sum::<f64>() / n;
    let sd = (noisy.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 50.0).abs() < 0.02, "mean {mean}");
    assert!((0.97..=1.03).contains(&sd), "sd {sd}");
    assert_eq!(noisy, add_noise(&flat, 1.0, 99));
    assert_ne!(noisy, add_noise(&flat, 1.0, 100));
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-3;
    for shape in [FieldShape::Radial, FieldShape::Harmonic] {
        for si in [1.0, 2.0, 3.0] {
            let mut s = HomogeneousSource::radial(100.0, -50.0, 250.0, 1e6, si, 3.0);
            s.shape = shape;
            for &(x, y) in &[(0.0, 0.0), (400.0, 300.0), (100.0, -50.0), (-700.0, 20.0)] {
                let g = s.gradient_at(x, y, 0.0);
                let fd = (
                    (s.field_at(x + h, y, 0.0) - s.field_at(x - h, y, 0.0)) / (2.0 * h),
                    (s.field_at(x, y + h, 0.0) - s.field_at(x, y - h, 0.0)) / (2.0 * h),
                    (s.field_at(x, y, h) - s.field_at(x, y, -h)) / (2.0 * h),
                );
                let scale = g.0.abs().max(g.1.abs()).max(g.2.abs());
                for (a, b) in [(g.0, fd.0), (g.1, fd.1), (g.2, fd.2)] {
                    assert!((a - b).abs() <= 1e-6 * scale, "{shape:?} N={si} at ({x},{y}): {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn fields_obey_euler_homogeneity() {
    for shape in [FieldShape::Radial, FieldShape::Harmonic] {
        for si in [1.0, 2.0, 3.0] {
            let mut s = HomogeneousSource::radial(10.0, 20.0, 300.0, 5e5, si, -7.0);
            s.shape = shape;
            for &(x, y) in &[(0.0, 0.0), (250.0, -125.0), (900.0, 900.0)] {
                let (tx, ty, tz) = s.gradient_at(x, y, 0.0);
                let lhs = (x - s.x0) * tx + (y - s.y0) * ty + (0.0 - s.z0) * tz;
                let rhs = -si * (s.field_at(x, y, 0.0) - s.base);
                assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-12), "{shape:?} N={si}: {lhs} vs {rhs}");
            }
        }
    }
}

#[test]
fn peak_sits_over_the_source() {
    let georef = GridGeoref::new(0.0, 0.0, 100.0, 41, 41).unwrap();
    let (x, y) = georef.cell_center(13, 27);
    let g = synth_homogeneous(&HomogeneousSource::radial(x, y, 150.0, 1e6, 2.0, 0.0), georef);
    let arg = (0..g.values.len()).max_by(|&a, &b| g.values[a].total_cmp(&g.values[b])).unwrap();
    assert_eq!((arg / 41, arg % 41), (13, 27));
    let expected = 1e6 / (150.0 * 150.0);
    assert!((g.get(13, 27) - expected).abs() <= 1e-12 * expected);
}

#[test]
fn vertical_dipole_at_the_pole_is_positive_and_symmetric() {
    let georef = GridGeoref::new(-1000.0, -1000.0, 100.0, 21, 21).unwrap();
    let d = DipoleSource { x0: 50.0, y0: 50.0, z0: 200.0, moment: 1e6, inclination: 90.0, declination: 0.0 };
    let g = synth_dipole(&d, georef, 90.0, 0.0);
    // Directly above: 2 m / r^3 scaled to nT.
    let expected = 1e-7 * 1e6 * 2.0 / 200f64.powi(3) * 1e9;
    assert!((g.get(10, 10) - expected).abs() <= 1e-9 * expected);
    for k in 1..10 {
        assert!((g.get(10 - k, 10) - g.get(10 + k, 10)).abs() <= 1e-9 * expected);
        assert!((g.get(10, 10 - k) - g.get(10 + k, 10)).abs() <= 1e-9 * expected);
    }
}
