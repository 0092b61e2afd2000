//! Statistics over solution clouds and survey point sets: PCA, complete
//! spatial randomness (Clark–Evans, Skellam), nearest-neighbour distances and
//! a descriptive-statistics battery whose row names follow the classic NNS
//! report layout.
//!
//! All reductions use a fixed pairwise summation tree, so results do not
//! depend on thread scheduling.

use std::io::Write;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::geodata::PointIndex;
use crate::linalg::{pairwise_sum, sym_eigen};

/// Above this many values the Gini mean difference is reported as N/A.
pub const MEAN_DIFFERENCE_MAX_N: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("area must be positive, got {0}")]
    NonpositiveArea(f64),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("data length {len} is not a multiple of dimension {dim}")]
    DimensionMismatch { len: usize, dim: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// The descriptive battery. `None` marks a row that is not applicable to the
/// input and serialises as `"N/A"`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptiveStats {
    pub n: usize,
    /// Values at the 1, 5, 10, 25, 50, 75, 90, 95 and 99 percent levels.
    pub percentiles: [f64; 9],
    pub minimum: f64,
    pub maximum: f64,
    pub mean: f64,
    pub median: f64,
    pub geometric_mean: Option<f64>,
    pub harmonic_mean: Option<f64>,
    pub root_mean_square: f64,
    pub trim_mean: f64,
    pub interquartile_mean: f64,
    pub midrange: f64,
    pub winsorized_mean: f64,
    pub trimean: f64,
    pub variance: Option<f64>,
    pub standard_deviation: Option<f64>,
    pub interquartile_range: f64,
    pub range: f64,
    pub mean_difference: Option<f64>,
    pub median_abs_deviation: f64,
    pub average_abs_deviation: f64,
    pub quartile_dispersion: Option<f64>,
    pub relative_mean_difference: Option<f64>,
    pub standard_error: Option<f64>,
    pub coef_of_variation: Option<f64>,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub sum: f64,
    pub sum_absolute: f64,
    pub sum_squares: f64,
    pub mean_square: f64,
}

pub const PERCENTILE_LEVELS: [f64; 9] = [1.0, 5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0];

/// Row labels in report order.
pub const ROW_LABELS: [&str; 38] = [
    "1%-tile",
    "5%-tile",
    "10%-tile",
    "25%-tile",
    "50%-tile",
    "75%-tile",
    "90%-tile",
    "95%-tile",
    "99%-tile",
    "Minimum",
    "Maximum",
    "Mean",
    "Median",
    "Geometric Mean",
    "Harmonic Mean",
    "Root Mean Square",
    "Trim Mean (10%)",
    "Interquartile Mean",
    "Midrange",
    "Winsorized Mean",
    "TriMean",
    "Variance",
    "Standard Deviation",
    "Interquartile Range",
    "Range",
    "Mean Difference",
    "Median Abs. Deviation",
    "Average Abs. Deviation",
    "Quartile Dispersion",
    "Relative Mean Diff.",
    "Standard Error",
    "Coef. of Variation",
    "Skewness",
    "Kurtosis",
    "Sum",
    "Sum Absolute",
    "Sum Squares",
    "Mean Square",
];

impl DescriptiveStats {
    /// `(label, value)` pairs in report order.
    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        let mut values: Vec<Option<f64>> = self.percentiles.iter().map(|v| Some(*v)).collect();
        values.extend([
            Some(self.minimum),
            Some(self.maximum),
            Some(self.mean),
            Some(self.median),
            self.geometric_mean,
            self.harmonic_mean,
            Some(self.root_mean_square),
            Some(self.trim_mean),
            Some(self.interquartile_mean),
            Some(self.midrange),
            Some(self.winsorized_mean),
            Some(self.trimean),
            self.variance,
            self.standard_deviation,
            Some(self.interquartile_range),
            Some(self.range),
            self.mean_difference,
            Some(self.median_abs_deviation),
            Some(self.average_abs_deviation),
            self.quartile_dispersion,
            self.relative_mean_difference,
            self.standard_error,
            self.coef_of_variation,
            self.skewness,
            self.kurtosis,
            Some(self.sum),
            Some(self.sum_absolute),
            Some(self.sum_squares),
            Some(self.mean_square),
        ]);
        ROW_LABELS.iter().copied().zip(values).collect()
    }

    pub fn get(&self, label: &str) -> Option<Option<f64>> {
        self.rows().into_iter().find(|(l, _)| *l == label).map(|(_, v)| v)
    }
}

impl Serialize for DescriptiveStats {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = self.rows();
        let mut map = serializer.serialize_map(Some(rows.len()))?;
        for (label, value) in rows {
            match value {
                Some(v) => map.serialize_entry(label, &v)?,
                None => map.serialize_entry(label, "N/A")?,
            }
        }
        map.end()
    }
}

/// Linear interpolation between closest ranks on sorted data, `p` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

fn mean_of(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

pub fn descriptive_stats(values: &[f64]) -> Result<DescriptiveStats> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let n = values.len();
    let nf = n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let percentiles = PERCENTILE_LEVELS.map(|p| percentile_sorted(&sorted, p));
    let minimum = sorted[0];
    let maximum = sorted[n - 1];
    let median = percentile_sorted(&sorted, 50.0);
    let q1 = percentiles[3];
    let q3 = percentiles[5];

    let sum = pairwise_sum(values);
    let mean = sum / nf;
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    let sum_absolute = pairwise_sum(&abs);
    let sum_squares = pairwise_sum(&squares);
    let mean_square = sum_squares / nf;

    let all_positive = minimum > 0.0;
    let geometric_mean = all_positive.then(|| {
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        mean_of(&logs).exp()
    });
    let harmonic_mean = all_positive.then(|| {
        let inv: Vec<f64> = values.iter().map(|v| 1.0 / v).collect();
        nf / pairwise_sum(&inv)
    });

    let k = (0.05 * nf).floor() as usize;
    let trim_mean = mean_of(&sorted[k..n - k]);
    let (lo, hi) = (sorted[k], sorted[n - 1 - k]);
    let wins: Vec<f64> = sorted.iter().map(|v| v.clamp(lo, hi)).collect();
    let winsorized_mean = mean_of(&wins);
    let q = n / 4;
    let interquartile_mean = mean_of(&sorted[q..n - q]);

    let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2 = mean_of(&dev.iter().map(|d| d * d).collect::<Vec<_>>());
    let m3 = mean_of(&dev.iter().map(|d| d * d * d).collect::<Vec<_>>());
    let m4 = mean_of(&dev.iter().map(|d| (d * d) * (d * d)).collect::<Vec<_>>());
    let average_abs_deviation = mean_of(&dev.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let mut mad: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
    mad.sort_by(f64::total_cmp);
    let median_abs_deviation = percentile_sorted(&mad, 50.0);

    let variance = (n >= 2).then(|| m2 * nf / (nf - 1.0));
    let standard_deviation = variance.map(f64::sqrt);
    let standard_error = standard_deviation.map(|s| s / nf.sqrt());
    let coef_of_variation = standard_deviation.and_then(|s| (mean != 0.0).then(|| s / mean));
    let shape_ok = n >= 2 && m2 > 0.0;
    let skewness = shape_ok.then(|| m3 / m2.powf(1.5));
    let kurtosis = shape_ok.then(|| m4 / (m2 * m2));

    let mean_difference = (n >= 2 && n <= MEAN_DIFFERENCE_MAX_N).then(|| {
        // Σ_{i<j} (x_j − x_i) over sorted data = Σ_i (2i − n + 1)·x_i
        let terms: Vec<f64> = sorted.iter().enumerate().map(|(i, v)| (2.0 * i as f64 - nf + 1.0) * v).collect();
        2.0 * pairwise_sum(&terms) / (nf * (nf - 1.0))
    });
    let relative_mean_difference = mean_difference.and_then(|md| (mean != 0.0).then(|| md / mean));
    let quartile_dispersion = (q1 + q3 != 0.0).then(|| (q3 - q1) / (q3 + q1));

    Ok(DescriptiveStats {
        n,
        percentiles,
        minimum,
        maximum,
        mean,
        median,
        geometric_mean,
        harmonic_mean,
        root_mean_square: mean_square.sqrt(),
        trim_mean,
        interquartile_mean,
        midrange: 0.5 * (minimum + maximum),
        winsorized_mean,
        trimean: 0.25 * (q1 + 2.0 * median + q3),
        variance,
        standard_deviation,
        interquartile_range: q3 - q1,
        range: maximum - minimum,
        mean_difference,
        median_abs_deviation,
        average_abs_deviation,
        quartile_dispersion,
        relative_mean_difference,
        standard_error,
        coef_of_variation,
        skewness,
        kurtosis,
        sum,
        sum_absolute,
        sum_squares,
        mean_square,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnsReport {
    #[serde(skip)]
    pub nn_distances: Vec<f64>,
    pub n_points: usize,
    pub stats: DescriptiveStats,
}

fn check_points(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 2 {
        return Err(StatsError::TooFewPoints { needed: 2, got: points.len() });
    }
    if let Some(i) = points.iter().position(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(StatsError::NonFinite(i));
    }
    Ok(())
}

/// Exact nearest-neighbour distance for every point (duplicates give 0).
pub fn nearest_neighbor_distances(points: &[(f64, f64)]) -> Result<Vec<f64>> {
    check_points(points)?;
    Ok(PointIndex::new(points.to_vec()).nearest_neighbor_distances())
}

pub fn nearest_neighbor_stats(points: &[(f64, f64)]) -> Result<NnsReport> {
    let nn_distances = nearest_neighbor_distances(points)?;
    let stats = descriptive_stats(&nn_distances)?;
    Ok(NnsReport { n_points: points.len(), nn_distances, stats })
}

pub fn write_nn_distances_csv<W: Write>(report: &NnsReport, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "index,distance")?;
    for (i, d) in report.nn_distances.iter().enumerate() {
        writeln!(sink, "{i},{}", crate::fmt_f64(*d))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsrReport {
    pub lambda_intensity: f64,
    pub clark_evans: f64,
    pub skellam: f64,
    pub skellam_dof: usize,
    pub n_points: usize,
    pub area_m2: f64,
    pub mean_nn_distance: f64,
}

/// Area of the axis-aligned bounding box, the fallback when no survey area is
/// known.
pub fn bounding_box_area(points: &[(f64, f64)]) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    (x1 - x0) * (y1 - y0)
}

/// Clark–Evans ratio and Skellam statistic without edge correction.
pub fn csr_tests(points: &[(f64, f64)], area_m2: f64) -> Result<CsrReport> {
    if !(area_m2.is_finite() && area_m2 > 0.0) {
        return Err(StatsError::NonpositiveArea(area_m2));
    }
    let d = nearest_neighbor_distances(points)?;
    let n = points.len();
    let lambda = n as f64 / area_m2;
    let mean_nn = mean_of(&d);
    let sq: Vec<f64> = d.iter().map(|r| r * r).collect();
    Ok(CsrReport {
        lambda_intensity: lambda,
        clark_evans: mean_nn / (0.5 / lambda.sqrt()),
        skellam: 2.0 * std::f64::consts::PI * lambda * pairwise_sum(&sq),
        skellam_dof: 2 * n,
        n_points: n,
        area_m2,
        mean_nn_distance: mean_nn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaResult {
    /// `loadings[i][k]`: weight of variable `i` in component `k`.
    pub loadings: Vec<Vec<f64>>,
    #[serde(rename = "Lambda")]
    pub eigenvalues: Vec<f64>,
    pub means: Vec<f64>,
    pub n_samples: usize,
    /// All rows identical: every eigenvalue is zero.
    pub degenerate: bool,
}

impl PcaResult {
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.loadings.iter().map(|row| row[k]).collect()
    }

    /// Scores of one observation on every component.
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let d = self.means.len();
        (0..d)
            .map(|k| (0..d).map(|i| (row[i] - self.means[i]) * self.loadings[i][k]).sum())
            .collect()
    }
}

/// Sample covariance (divisor n − 1) of row-major `n × d` data.
pub fn covariance(data: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if d == 0 || data.len() % d != 0 {
        return Err(StatsError::DimensionMismatch { len: data.len(), dim: d });
    }
    let n = data.len() / d;
    if n < 2 {
        return Err(StatsError::TooFewPoints { needed: 2, got: n });
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i / d));
    }
    let means: Vec<f64> = (0..d)
        .map(|j| mean_of(&(0..n).map(|i| data[i * d + j]).collect::<Vec<_>>()))
        .collect();
    let mut cov = vec![0.0; d * d];
    for p in 0..d {
        for q in p..d {
            let prod: Vec<f64> = (0..n).map(|i| (data[i * d + p] - means[p]) * (data[i * d + q] - means[q])).collect();
            let c = pairwise_sum(&prod) / (n as f64 - 1.0);
            cov[p * d + q] = c;
            cov[q * d + p] = c;
        }
    }
    Ok((cov, means))
}

/// Principal components of row-major `n × d` data.
pub fn pca(data: &[f64], d: usize) -> Result<PcaResult> {
    let (cov, means) = covariance(data, d)?;
    let n = data.len() / d;
    let (vals, vecs) = sym_eigen(&cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = -1e-12 * trace.abs().max(1.0);
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&k| if vals[k] < 0.0 && vals[k] >= floor { 0.0 } else { vals[k] })
        .collect();
    let mut loadings = vec![vec![0.0; d]; d];
    for (col, &k) in order.iter().enumerate() {
        let mut v: Vec<f64> = (0..d).map(|i| vecs[i * d + k]).collect();
        let big = v.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            loadings[i][col] = v[i];
        }
    }
    let degenerate = eigenvalues.iter().all(|&v| v == 0.0);
    Ok(PcaResult { loadings, eigenvalues, means, n_samples: n, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_sequence() {
        let s = descriptive_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.midrange, 3.0);
        assert_eq!(s.range, 4.0);
        assert_eq!(s.variance, Some(2.5));
        assert_eq!(s.skewness, Some(0.0));
    }

    #[test]
    fn single_value_has_no_spread_rows() {
        let s = descriptive_stats(&[7.0]).unwrap();
        assert_eq!(s.variance, None);
        assert_eq!(s.kurtosis, None);
        assert_eq!(s.mean_difference, None);
        assert_eq!(s.percentiles, [7.0; 9]);
    }

    #[test]
    fn nonpositive_values_disable_geometric_and_harmonic() {
        let s = descriptive_stats(&[0.0, 1.0, 2.0]).unwrap();
        assert!(s.geometric_mean.is_none() && s.harmonic_mean.is_none());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.starts_with("{\"1%-tile\":"));
        assert!(json.contains("\"Geometric Mean\":\"N/A\""));
    }

    #[test]
    fn empty_input_errors() {
        assert_eq!(descriptive_stats(&[]), Err(StatsError::EmptyInput));
        assert!(matches!(descriptive_stats(&[1.0, f64::NAN]), Err(StatsError::NonFinite(1))));
    }

    #[test]
    fn gini_mean_difference_small_case() {
        // pairs of {1, 2, 4}: 1, 3, 2 -> mean 2
        let s = descriptive_stats(&[4.0, 1.0, 2.0]).unwrap();
        assert!((s.mean_difference.unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lattice_csr() {
        let pts: Vec<(f64, f64)> = (0..9).map(|k| ((k % 3) as f64, (k / 3) as f64)).collect();
        let r = csr_tests(&pts, bounding_box_area(&pts)).unwrap();
        assert_eq!(r.lambda_intensity, 2.25);
        assert!((r.clark_evans - 3.0).abs() < 1e-12);
        assert!((r.skellam - 40.5 * std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(r.skellam_dof, 18);
        assert!(matches!(csr_tests(&pts, 0.0), Err(StatsError::NonpositiveArea(_))));
        assert!(matches!(csr_tests(&pts[..1], 1.0), Err(StatsError::TooFewPoints { .. })));
    }

    #[test]
    fn axis_aligned_pca() {
        // x = ±2 alternately has variance 4 * n/(n-1); use 4 symmetric samples
        let data = [-2.0, 0.0, 2.0, 0.0, -2.0, 0.0, 2.0, 0.0];
        let p = pca(&data, 2).unwrap();
        assert!((p.eigenvalues[0] - 16.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.eigenvalues[1], 0.0);
        assert_eq!(p.component(0), vec![1.0, 0.0]);
        assert!(!p.degenerate);
    }

    #[test]
    fn identical_rows_flag_degenerate() {
        let p = pca(&[1.0, 2.0, 1.0, 2.0, 1.0, 2.0], 2).unwrap();
        assert!(p.degenerate);
        assert!(pca(&[1.0, 2.0, 3.0], 2).is_err());
    }
}
