use aeromag_core::spatialstats::*;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn one_to_five() {
    let s = descriptive_stats(&[3.0, 1.0, 5.0, 2.0, 4.0]).unwrap();
    assert_eq!(s.n, 5);
    assert_eq!((s.minimum, s.maximum, s.median, s.mean), (1.0, 5.0, 3.0, 3.0));
    assert!(close(s.geometric_mean.unwrap(), 120f64.powf(0.2), 1e-14));
    assert!(close(s.harmonic_mean.unwrap(), 5.0 / (137.0 / 60.0), 1e-14));
    assert!(close(s.root_mean_square, 11f64.sqrt(), 1e-14));
    assert_eq!(s.skewness, Some(0.0));
    assert!(close(s.kurtosis.unwrap(), 1.7, 1e-14));
    assert!(close(s.variance.unwrap(), 2.5, 1e-14));
    assert!(close(s.mean_difference.unwrap(), 2.0, 1e-14));
    assert_eq!(s.trimean, 3.0);
    assert_eq!(s.winsorized_mean, 3.0);
    assert_eq!(s.midrange, 3.0);
    assert_eq!(s.range, 4.0);
    assert_eq!((s.sum, s.sum_absolute, s.sum_squares, s.mean_square), (15.0, 15.0, 55.0, 11.0));
    assert!(close(s.average_abs_deviation, 1.2, 1e-14));
    assert_eq!(s.median_abs_deviation, 1.0);
}

#[test]
fn not_applicable_rows() {
    let c = descriptive_stats(&[7.0; 6]).unwrap();
    assert_eq!(c.skewness, None);
    assert_eq!(c.kurtosis, None);
    assert_eq!(c.variance, Some(0.0));
    let neg = descriptive_stats(&[-1.0, 2.0, 3.0]).unwrap();
    assert_eq!(neg.geometric_mean, None);
    assert_eq!(neg.harmonic_mean, None);
    let one = descriptive_stats(&[4.0]).unwrap();
    assert_eq!(one.variance, None);
    assert_eq!(one.mean_difference, None);
    assert!(descriptive_stats(&[]).is_err());
    assert!(descriptive_stats(&[1.0, f64::NAN]).is_err());
}

#[test]
fn moments_match_two_pass_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x: Vec<f64> = (0..333).map(|_| rng.random_range(10.0..900.0)).collect();
    let s = descriptive_stats(&x).unwrap();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    assert!(close(s.mean, mean, 1e-12));
    assert!(close(s.variance.unwrap(), m(2) * n / (n - 1.0), 1e-12));
    assert!(close(s.skewness.unwrap(), m(3) / m(2).powf(1.5), 1e-9));
    assert!(close(s.kurtosis.unwrap(), m(4) / (m(2) * m(2)), 1e-12));
    let mut pairs = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            pairs += (x[i] - x[j]).abs();
        }
    }
    assert!(close(s.mean_difference.unwrap(), pairs / (n * (n - 1.0)), 1e-12));
    assert!(close(s.geometric_mean.unwrap(), (x.iter().map(|v| v.ln()).sum::<f64>() / n).exp(), 1e-12));
}

#[test]
fn nearest_neighbour_distances_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let pts: Vec<(f64, f64)> = (0..500).map(|_| (rng.random_range(0.0..1e4), rng.random_range(0.0..1e4))).collect();
    let d = nearest_neighbor_distances(&pts).unwrap();
    for (i, &p) in pts.iter().enumerate() {
        let brute = pts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| (p.0 - q.0).hypot(p.1 - q.1))
            .fold(f64::INFINITY, f64::min);
        assert!(close(d[i], brute, 1e-12), "{i}: {} vs {brute}", d[i]);
    }
    assert!(nearest_neighbor_distances(&pts[..1]).is_err());
}

#[test]
fn csr_on_known_patterns() {
    let pair = [(0.0, 0.0), (100.0, 0.0)];
    assert_eq!(nearest_neighbor_distances(&pair).unwrap(), vec![100.0, 100.0]);

    let lattice: Vec<(f64, f64)> = (0..9).map(|i| ((i % 3) as f64, (i / 3) as f64)).collect();
    let r = csr_tests(&lattice, bounding_box_area(&lattice)).unwrap();
    assert_eq!(r.lambda_intensity, 2.25);
    assert!(close(r.clark_evans, 3.0, 1e-12));
    assert!(close(r.skellam, 40.5 * std::f64::consts::PI, 1e-12));
    assert_eq!(r.skellam_dof, 18);

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let pts: Vec<(f64, f64)> = (0..100).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
    assert_eq!(csr_tests(&pts, 100.0).unwrap().lambda_intensity, 1.0);
    assert!(csr_tests(&pts, 0.0).is_err());
}

#[test]
fn pca_matches_a_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let (n, d) = (20, 3);
    let data: Vec<f64> = (0..n)
        .flat_map(|_| {
            let a: f64 = rng.random_range(-5.0..5.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            [a + 0.1 * b, 2.0 * a - b, rng.random_range(-0.3..0.3)]
        })
        .collect();
    let p = pca(&data, d).unwrap();

    let x = DMatrix::from_row_slice(n, d, &data);
    let means = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - means[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (k, &o) in order.iter().enumerate() {
        assert!(close(p.eigenvalues[k], eig.eigenvalues[o], 1e-10));
        let v = eig.eigenvectors.column(o);
        let dot: f64 = (0..d).map(|i| v[i] * p.loadings[i][k]).sum();
        assert!((dot.abs() - 1.0).abs() <= 1e-10, "component {k}: {dot}");
    }

    // orthonormal loadings reconstruct every row from its scores
    for k in 0..d {
        for l in 0..d {
            let dot: f64 = (0..d).map(|i| p.loadings[i][k] * p.loadings[i][l]).sum();
            assert!((dot - if k == l { 1.0 } else { 0.0 }).abs() <= 1e-12);
        }
    }
    for row in data.chunks(d) {
        let scores = p.project(row);
        for i in 0..d {
            let back = p.means[i] + (0..d).map(|k| scores[k] * p.loadings[i][k]).sum::<f64>();
            assert!((back - row[i]).abs() <= 1e-10);
        }
    }
}

#[test]
fn pca_of_identical_rows_is_degenerate() {
    let p = pca(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 2).unwrap();
    assert!(p.degenerate);
    assert_eq!(p.eigenvalues, vec![0.0, 0.0]);
    assert!(pca(&[1.0, 2.0, 3.0], 2).is_err());
}
