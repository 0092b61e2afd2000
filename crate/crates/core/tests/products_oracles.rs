use aeromag_core::euler::{euler_sweep, EulerConfig, EulerSolution};
use aeromag_core::products::*;
use aeromag_core::synthetics::{synth_sum, synth_sum_gradients, HomogeneousSource};
use aeromag_core::GridGeoref;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn at(x0: f64, y0: f64, z0: f64) -> EulerSolution {
    EulerSolution { x0, y0, z0, si: 1.0, base: 0.0, rms: 0.0, sigma_z: 0.0, window_row: 0, window_col: 0 }
}

fn two_source_solutions() -> Vec<EulerSolution> {
    let georef = GridGeoref::new(0.0, 0.0, 100.0, 96, 96).unwrap();
    let (x1, y1) = georef.cell_center(48, 16);
    let (x3, y3) = georef.cell_center(48, 80);
    let sources = [
        HomogeneousSource::radial(x1, y1, 300.0, 3e4, 1.0, 0.0),
        HomogeneousSource::radial(x3, y3, 800.0, 100.0 * 800f64.powi(3), 3.0, 0.0),
    ];
    let t = synth_sum(&sources, georef);
    let [tx, ty, tz] = synth_sum_gradients(&sources, georef);
    euler_sweep(&t, &tx, &ty, &tz, &EulerConfig::default()).unwrap().solutions
}

#[test]
fn histogram_matches_brute_force_binning() {
    let sol = two_source_solutions();
    assert!(sol.len() > 50);
    let w = 50.0;
    let h = depth_histogram(&sol, w).unwrap();
    assert_eq!(h.total, sol.len());
    assert_eq!(h.counts.iter().sum::<usize>(), sol.len());
    assert_eq!(h.bin_edges.len(), h.counts.len() + 1);
    for (k, &count) in h.counts.iter().enumerate() {
        let lo = k as f64 * w;
        let hi = (k + 1) as f64 * w;
        let brute = sol.iter().filter(|s| s.z0 >= lo && s.z0 < hi).count();
        assert_eq!(count, brute, "bin {k}");
    }
    let deepest = sol.iter().map(|s| s.z0).fold(0.0, f64::max);
    assert!(*h.bin_edges.last().unwrap() > deepest);
    assert!(h.bin_edges[h.bin_edges.len() - 2] <= deepest);

    let mut last = 0.0;
    for k in 0..=200 {
        let f = h.cumulative_fraction(k as f64 * 10.0);
        assert!(f >= last && (0.0..=1.0).contains(&f));
        last = f;
    }
    assert_eq!(h.cumulative_fraction(deepest), 1.0);
}

#[test]
fn histogram_edges_are_half_open() {
    let h = depth_histogram(&[at(0.0, 0.0, 0.0), at(0.0, 0.0, 50.0), at(0.0, 0.0, 99.9)], 50.0).unwrap();
    assert_eq!(h.counts, vec![1, 2]);
    assert!(depth_histogram(&[], 50.0).is_err());
    assert!(depth_histogram(&[at(0.0, 0.0, -1.0)], 50.0).is_err());
    assert!(depth_histogram(&[at(0.0, 0.0, 1.0)], 0.0).is_err());
}

fn line_at(azimuth_deg: f64, n: usize) -> Vec<EulerSolution> {
    let (s, c) = azimuth_deg.to_radians().sin_cos();
    (0..n)
        .map(|i| {
            let t = (i / 2) as f64 * 37.0 - 500.0;
            let jitter = if i % 2 == 0 { 1.0 } else { -1.0 };
            // along the azimuth (clockwise from north) plus a small offset across it
            at(1000.0 + t * s + jitter * c, 2000.0 + t * c - jitter * s, 300.0)
        })
        .collect()
}

#[test]
fn lineament_azimuths() {
    let r = trend_analysis(&line_at(22.5, 40), 1.5).unwrap();
    assert!((r.principal_azimuth - 22.5).abs() <= 1e-9, "{}", r.principal_azimuth);
    assert_eq!(r.sector_label, "NNE-SSW");
    assert!(r.anisotropy_ratio > 100.0);

    let r = trend_analysis(&line_at(45.0, 40), 1.5).unwrap();
    assert!((r.principal_azimuth - 45.0).abs() <= 1e-9);
    assert_eq!(r.sector_label, "NE-SW");

    let r = trend_analysis(&line_at(112.5, 40), 1.5).unwrap();
    assert!((r.principal_azimuth - 112.5).abs() <= 1e-9);
    assert_eq!(sector_for_azimuth(292.5), sector_for_azimuth(112.5));
    assert_eq!(sector_for_azimuth(0.0), "N-S");
    assert_eq!(sector_for_azimuth(90.0), "E-W");
}

#[test]
fn isotropic_scatter_has_no_trend() {
    let mut none = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<_> = (0..1000)
            .map(|_| {
                let rho = 1000.0 * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                at(rho * phi.cos(), rho * phi.sin(), 100.0)
            })
            .collect();
        if trend_analysis(&s, 1.5).unwrap().sector_label == "NONE" {
            none += 1;
        }
    }
    assert!(none >= 95, "{none} of 100 isotropic clouds reported no trend");
}

#[test]
fn degenerate_scatter_is_reported() {
    let s = vec![at(5.0, 5.0, 1.0); 4];
    assert!(matches!(trend_analysis(&s, 1.5), Err(ProductsError::DegenerateScatter)));
    assert!(trend_analysis(&s[..2], 1.5).is_err());
    assert!(trend_analysis(&line_at(0.0, 10), 0.5).is_err());
}

#[test]
fn profiles_select_the_corridor() {
    let sol = two_source_solutions();
    let spec = ProfileSpec { axis: ProfileAxis::EastWest, center: 4850.0, half_width: 250.0, label: "mid".into() };
    let p = extract_profile(&sol, &spec).unwrap();
    let inside = sol.iter().filter(|s| (s.y0 - 4850.0).abs() <= 250.0).count();
    assert_eq!(p.records.len(), inside);
    assert_eq!(p.record_matrix_shape(), (inside, 6));
    assert!(p.records.windows(2).all(|w| w[0].along <= w[1].along));
    let mut buf = Vec::new();
    write_profile_csv(&p, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), inside + 1);
}
