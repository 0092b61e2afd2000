use aeromag_core::geodata::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scatter(n: usize, extent: f64, seed: u64) -> SurveyPointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| SurveyPoint {
            x: rng.random_range(0.0..extent),
            y: rng.random_range(0.0..extent),
            value: rng.random_range(-500.0..500.0),
        })
        .collect();
    SurveyPointSet::new(points, "UTM").unwrap()
}

fn d2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

#[test]
fn point_files_round_trip_exactly() {
    let set = scatter(1000, 5000.0, 1);
    let mut buf = Vec::new();
    write_points(&set, &mut buf).unwrap();
    let back = load_points(buf.as_slice(), "UTM").unwrap();
    assert_eq!(back.points.len(), 1000);
    for (a, b) in set.points.iter().zip(&back.points) {
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}

#[test]
fn spacing_median_matches_brute_force() {
    let set = scatter(400, 2000.0, 2);
    let xy = set.xy();
    let mut nn: Vec<f64> = (0..xy.len())
        .map(|i| {
            (0..xy.len())
                .filter(|&j| j != i)
                .map(|j| d2(xy[i], xy[j]))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let median = 0.5 * (nn[199] + nn[200]);
    let report = sample_spacing_report(&set, None).unwrap();
    assert!((report.median_spacing - median).abs() <= 1e-12 * median);
    assert_eq!(report.min_spacing, nn[0]);
    assert_eq!(report.max_spacing, nn[399]);
    assert_eq!(report.recommended_cell_size, report.median_spacing);

    let coarse = sample_spacing_report(&set, Some(2.0 * median)).unwrap();
    assert!(coarse.undersampled && coarse.aliasing_warning);
    let fine = sample_spacing_report(&set, Some(0.25 * median)).unwrap();
    assert!(fine.oversampled && fine.aliasing_warning);
}

#[test]
fn nearest_gridding_matches_brute_force() {
    let set = scatter(500, 5000.0, 3);
    let georef = GridGeoref::new(0.0, 0.0, 100.0, 50, 50).unwrap();
    let max_radius = 180.0;
    let grid = grid_nearest(&set, georef, max_radius).unwrap();
    let xy = set.xy();
    for r in 0..50 {
        for c in 0..50 {
            let q = georef.cell_center(r, c);
            let mut best = (f64::INFINITY, usize::MAX);
            for (i, &p) in xy.iter().enumerate() {
                let d = d2(p, q);
                if d < best.0 {
                    best = (d, i);
                }
            }
            if best.0 <= max_radius * max_radius {
                assert!(!grid.is_masked(r, c));
                assert_eq!(grid.get(r, c), set.points[best.1].value);
            } else {
                assert!(grid.is_masked(r, c), "cell ({r}, {c}) should be nodata");
            }
        }
    }
}

#[test]
fn kriging_weights_match_a_dense_solve() {
    let pts = [(0.0, 0.0), (120.0, 10.0), (40.0, 150.0), (200.0, 180.0), (90.0, 60.0)];
    let target = (75.0, 80.0);
    for kind in [VariogramKind::Spherical, VariogramKind::Exponential, VariogramKind::Gaussian] {
        let v = VariogramModel { kind, nugget: 2.0, sill: 40.0, range_m: 300.0 };
        let w = ordinary_kriging_weights(&pts, target, &v).unwrap();

        let k = pts.len();
        let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut b = DVector::<f64>::zeros(k + 1);
        for i in 0..k {
            for j in 0..k {
                a[(i, j)] = v.gamma(d2(pts[i], pts[j]).sqrt());
            }
            a[(i, k)] = 1.0;
            a[(k, i)] = 1.0;
            b[i] = v.gamma(d2(pts[i], target).sqrt());
        }
        b[k] = 1.0;
        let expected = a.lu().solve(&b).unwrap();
        for i in 0..k {
            assert!((w[i] - expected[i]).abs() <= 1e-9, "{kind:?} weight {i}: {} vs {}", w[i], expected[i]);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn kriging_honours_data_at_cell_centers() {
    let georef = GridGeoref::new(0.0, 0.0, 50.0, 20, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut points = Vec::new();
    for r in (0..20).step_by(3) {
        for c in (0..20).step_by(3) {
            let (x, y) = georef.cell_center(r, c);
            points.push(SurveyPoint { x, y, value: rng.random_range(-50.0..50.0) });
        }
    }
    let set = SurveyPointSet::new(points.clone(), "UTM").unwrap();
    let v = VariogramModel::default_for(&set);
    let (grid, report) = grid_kriging(&set, georef, &v, 12).unwrap();
    assert!(report.singular_cells.is_empty());
    for p in &points {
        let c = ((p.x / 50.0) as usize, (p.y / 50.0) as usize);
        let g = grid.get(c.1, c.0);
        assert!((g - p.value).abs() <= 1e-8 * (1.0 + p.value.abs()), "{g} vs {}", p.value);
    }
}

#[test]
fn esri_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let georef = GridGeoref::new(312_500.25, 4_101_000.5, 37.5, 64, 64).unwrap();
    let values: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(-2000.0..2000.0)).collect();
    let mut grid = Grid::from_values(georef, values, "nT");
    for i in (0..grid.mask.len()).step_by(97) {
        grid.mask[i] = true;
    }
    let mut buf = Vec::new();
    write_grid(&grid, &mut buf).unwrap();
    let back = read_grid(buf.as_slice()).unwrap();
    assert_eq!(back.georef, grid.georef);
    assert_eq!(back.mask, grid.mask);
    for i in 0..grid.values.len() {
        if !grid.mask[i] {
            assert_eq!(back.values[i].to_bits(), grid.values[i].to_bits());
        }
    }
}

#[test]
fn malformed_inputs_are_rejected() {
    assert!(load_points("x,y,tmi\n1,2\n".as_bytes(), "UTM").is_err());
    assert!(load_points("x,y,tmi\n1,2,abc\n".as_bytes(), "UTM").is_err());
    assert!(read_grid("ncols 2\nnrows 2\n".as_bytes()).is_err());
    assert!(GridGeoref::new(0.0, 0.0, -1.0, 4, 4).is_err());
    assert!(GridGeoref::new(0.0, 0.0, 1.0, 0, 4).is_err());
}
