//! Presentation products derived from a solution set: corridor profile
//! sections, depth-frequency histograms and structural-trend reports.
//!
//! Everything here is plain data ready for plotting; nothing is rendered.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::euler::EulerSolution;
use crate::fmt_f64;
use crate::spatialstats;

pub const DEFAULT_BIN_WIDTH: f64 = 50.0;
pub const DEFAULT_ANISOTROPY_THRESHOLD: f64 = 1.5;

/// Compass sectors folded onto reciprocal pairs, starting at north and
/// stepping 22.5° clockwise.
pub const SECTOR_LABELS: [&str; 8] = ["N-S", "NNE-SSW", "NE-SW", "ENE-WSW", "E-W", "WNW-ESE", "NW-SE", "NNW-SSE"];

#[derive(Debug, Error, PartialEq)]
pub enum ProductsError {
    #[error("solution set is empty")]
    EmptySolutionSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {needed} solutions, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("solution positions are all identical")]
    DegenerateScatter,
    #[error("solution {index} has an invalid depth {depth}")]
    InvalidDepth { index: usize, depth: f64 },
}

pub type Result<T> = std::result::Result<T, ProductsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileAxis {
    EastWest,
    NorthSouth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub axis: ProfileAxis,
    /// Northing of an east-west line, easting of a north-south line.
    pub center: f64,
    pub half_width: f64,
    #[serde(default)]
    pub label: String,
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) || !self.center.is_finite() {
            return Err(ProductsError::InvalidParameter(format!(
                "profile `{}` needs a finite center and positive half_width",
                self.label
            )));
        }
        Ok(())
    }

    /// `(along, cross)` coordinates of a solution.
    fn project(&self, s: &EulerSolution) -> (f64, f64) {
        match self.axis {
            ProfileAxis::EastWest => (s.x0, s.y0),
            ProfileAxis::NorthSouth => (s.y0, s.x0),
        }
    }

    pub fn contains(&self, s: &EulerSolution) -> bool {
        (self.project(s).1 - self.center).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRecord {
    pub along: f64,
    pub z0: f64,
    pub si: f64,
    pub rms: f64,
    pub x0: f64,
    pub y0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileSection {
    pub label: String,
    pub axis: ProfileAxis,
    pub records: Vec<ProfileRecord>,
}

impl ProfileSection {
    /// `(n, 6)`: one row of `(along, z0, si, rms, x0, y0)` per record.
    pub fn record_matrix_shape(&self) -> (usize, usize) {
        (self.records.len(), 6)
    }
}

pub fn extract_profile(solutions: &[EulerSolution], spec: &ProfileSpec) -> Result<ProfileSection> {
    spec.validate()?;
    let mut records: Vec<ProfileRecord> = solutions
        .iter()
        .filter(|s| spec.contains(s))
        .map(|s| ProfileRecord { along: spec.project(s).0, z0: s.z0, si: s.si, rms: s.rms, x0: s.x0, y0: s.y0 })
        .collect();
    records.sort_by(|a, b| a.along.total_cmp(&b.along).then(a.z0.total_cmp(&b.z0)));
    Ok(ProfileSection { label: spec.label.clone(), axis: spec.axis, records })
}

pub fn write_profile_csv<W: Write>(section: &ProfileSection, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "along,z0,si,rms,x0,y0")?;
    for r in &section.records {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            fmt_f64(r.along),
            fmt_f64(r.z0),
            fmt_f64(r.si),
            fmt_f64(r.rms),
            fmt_f64(r.x0),
            fmt_f64(r.y0)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthHistogram {
    pub bin_width: f64,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    #[serde(skip)]
    sorted_depths: Vec<f64>,
}

impl DepthHistogram {
    /// Fraction of solutions with depth `≤ depth`.
    pub fn cumulative_fraction(&self, depth: f64) -> f64 {
        let k = self.sorted_depths.partition_point(|&z| z <= depth);
        k as f64 / self.total as f64
    }
}

/// Bins `[k·w, (k+1)·w)` from zero up to the bin holding the deepest solution.
pub fn depth_histogram(solutions: &[EulerSolution], bin_width: f64) -> Result<DepthHistogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(ProductsError::InvalidParameter(format!("bin_width must be positive, got {bin_width}")));
    }
    if solutions.is_empty() {
        return Err(ProductsError::EmptySolutionSet);
    }
    if let Some((index, s)) = solutions.iter().enumerate().find(|(_, s)| !(s.z0.is_finite() && s.z0 >= 0.0)) {
        return Err(ProductsError::InvalidDepth { index, depth: s.z0 });
    }
    let mut sorted_depths: Vec<f64> = solutions.iter().map(|s| s.z0).collect();
    sorted_depths.sort_by(f64::total_cmp);
    let deepest = sorted_depths[sorted_depths.len() - 1];
    let mut n_bins = (deepest / bin_width).floor() as usize + 1;
    while deepest >= n_bins as f64 * bin_width {
        n_bins += 1;
    }
    let bin_edges: Vec<f64> = (0..=n_bins).map(|k| k as f64 * bin_width).collect();
    let mut counts = vec![0; n_bins];
    for &z in &sorted_depths {
        let mut k = ((z / bin_width).floor() as usize).min(n_bins - 1);
        while k > 0 && z < bin_edges[k] {
            k -= 1;
        }
        while z >= bin_edges[k + 1] {
            k += 1;
        }
        counts[k] += 1;
    }
    Ok(DepthHistogram { bin_width, bin_edges, counts, total: solutions.len(), sorted_depths })
}

pub fn write_histogram_csv<W: Write>(hist: &DepthHistogram, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "bin_low,bin_high,count")?;
    for (k, c) in hist.counts.iter().enumerate() {
        writeln!(sink, "{},{},{}", fmt_f64(hist.bin_edges[k]), fmt_f64(hist.bin_edges[k + 1]), c)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    /// Degrees clockwise from north in `[0, 180)`.
    pub principal_azimuth: f64,
    /// `λ1 / λ2`; infinite (serialised as `null`) for collinear positions.
    pub anisotropy_ratio: f64,
    pub sector_label: String,
    pub anisotropy_threshold: f64,
    pub n_solutions: usize,
}

/// Folds an azimuth to `[0, 180)` and names its reciprocal sector pair.
pub fn sector_for_azimuth(azimuth: f64) -> &'static str {
    let folded = azimuth.rem_euclid(180.0);
    let k = (folded / 22.5).round() as usize % 8;
    SECTOR_LABELS[k]
}

/// Principal axis of the `(x0, y0)` scatter.
pub fn trend_analysis(solutions: &[EulerSolution], anisotropy_threshold: f64) -> Result<TrendReport> {
    if !(anisotropy_threshold >= 1.0) {
        return Err(ProductsError::InvalidParameter(format!(
            "anisotropy threshold must be at least 1, got {anisotropy_threshold}"
        )));
    }
    if solutions.len() < 3 {
        return Err(ProductsError::TooFewPoints { needed: 3, got: solutions.len() });
    }
    let data: Vec<f64> = solutions.iter().flat_map(|s| [s.x0, s.y0]).collect();
    let pca = spatialstats::pca(&data, 2).map_err(|e| ProductsError::InvalidParameter(e.to_string()))?;
    if pca.degenerate {
        return Err(ProductsError::DegenerateScatter);
    }
    let (ex, ey) = (pca.loadings[0][0], pca.loadings[1][0]);
    let principal_azimuth = ex.atan2(ey).to_degrees().rem_euclid(180.0);
    let principal_azimuth = if principal_azimuth >= 180.0 { 0.0 } else { principal_azimuth };
    let anisotropy_ratio = if pca.eigenvalues[1] > 0.0 {
        pca.eigenvalues[0] / pca.eigenvalues[1]
    } else {
        f64::INFINITY
    };
    let sector_label = if anisotropy_ratio >= anisotropy_threshold {
        sector_for_azimuth(principal_azimuth).to_string()
    } else {
        "NONE".to_string()
    };
    Ok(TrendReport { principal_azimuth, anisotropy_ratio, sector_label, anisotropy_threshold, n_solutions: solutions.len() })
}
