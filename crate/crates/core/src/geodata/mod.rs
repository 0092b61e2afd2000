//! Survey points, georeferenced grids, gridding and grid file I/O.
//!
//! Grids are stored row-major with row 0 at the **south** edge. The cell-center
//! mapping in [`GridGeoref::cell_center`] is the only place that converts
//! indices to coordinates; every other module goes through it.

mod esri;
mod gridding;
mod index;
mod points;

pub use esri::{read_grid, write_grid, NODATA_VALUE};
pub use gridding::{
    grid_kriging, grid_nearest, ordinary_kriging_weights, KrigingReport, VariogramKind,
    VariogramModel, DEFAULT_NEIGHBORHOOD,
};
pub use index::PointIndex;
pub use points::{load_points, sample_spacing_report, write_points, SpacingReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeodataError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("non-finite value at line {line}")]
    NonFinite { line: u64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid georeference: {0}")]
    InvalidGeoref(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid header: {0}")]
    HeaderMismatch(String),
    #[error("grid body has {got} samples, header implies {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GeodataError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyPoint {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

/// Scattered TMI observations in planar metres / nanotesla.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyPointSet {
    pub points: Vec<SurveyPoint>,
    pub crs_label: String,
    /// Indices of rows whose `(x, y)` repeats an earlier row.
    pub duplicates: Vec<usize>,
}

impl SurveyPointSet {
    /// Builds a set, validating finiteness and flagging repeated coordinates.
    pub fn new(points: Vec<SurveyPoint>, crs_label: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeodataError::EmptyInput);
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.value.is_finite()) {
                return Err(GeodataError::NonFinite { line: i as u64 + 2 });
            }
        }
        let duplicates = find_duplicates(&points);
        Ok(Self {
            points,
            crs_label: crs_label.into(),
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duplicate_count(&self) -> usize {
        self.duplicates.len()
    }

    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }

    /// Points with later duplicates removed (first occurrence wins).
    pub fn distinct(&self) -> Vec<SurveyPoint> {
        let mut skip = vec![false; self.points.len()];
        for &d in &self.duplicates {
            skip[d] = true;
        }
        self.points
            .iter()
            .zip(skip)
            .filter(|(_, s)| !s)
            .map(|(p, _)| *p)
            .collect()
    }
}

fn find_duplicates(points: &[SurveyPoint]) -> Vec<usize> {
    let mut keyed: Vec<(u64, u64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (canonical_bits(p.x), canonical_bits(p.y), i))
        .collect();
    keyed.sort_unstable();
    let mut dups: Vec<usize> = keyed
        .windows(2)
        .filter(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1)
        .map(|w| w[1].2)
        .collect();
    dups.sort_unstable();
    dups
}

// -0.0 and 0.0 are the same coordinate
fn canonical_bits(v: f64) -> u64 {
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

/// Regular raster geometry. `x_origin`/`y_origin` are the lower-left cell corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeoref {
    pub x_origin: f64,
    pub y_origin: f64,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl GridGeoref {
    pub fn new(x_origin: f64, y_origin: f64, cell_size: f64, n_cols: usize, n_rows: usize) -> Result<Self> {
        let g = Self {
            x_origin,
            y_origin,
            cell_size,
            n_cols,
            n_rows,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(GeodataError::InvalidGeoref(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if self.n_cols < 2 || self.n_rows < 2 {
            return Err(GeodataError::InvalidGeoref(format!(
                "grid must be at least 2x2, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !(self.x_origin.is_finite() && self.y_origin.is_finite()) {
            return Err(GeodataError::InvalidGeoref("origin must be finite".into()));
        }
        Ok(())
    }

    /// Center of cell `(row, col)`, with `row` counted from the south edge.
    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_origin + (col as f64 + 0.5) * self.cell_size,
            self.y_origin + (row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Georef covering the bounding box of `points` at the given cell size,
    /// with cell centers starting at the minimum coordinate.
    pub fn covering(points: &SurveyPointSet, cell_size: f64) -> Result<Self> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &points.points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let n_cols = (((x1 - x0) / cell_size).round() as usize + 1).max(2);
        let n_rows = (((y1 - y0) / cell_size).round() as usize + 1).max(2);
        Self::new(x0 - 0.5 * cell_size, y0 - 0.5 * cell_size, cell_size, n_cols, n_rows)
    }
}

/// Regular raster of field samples; `mask[i] == true` marks nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub georef: GridGeoref,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub units: String,
}

impl Grid {
    pub fn filled(georef: GridGeoref, value: f64, units: impl Into<String>) -> Self {
        Self {
            georef,
            values: vec![value; georef.len()],
            mask: vec![false; georef.len()],
            units: units.into(),
        }
    }

    /// Wraps a fully valid value vector. Panics on a length mismatch.
    pub fn from_values(georef: GridGeoref, values: Vec<f64>, units: impl Into<String>) -> Self {
        assert_eq!(values.len(), georef.len(), "value count must match georef");
        let mask = vec![false; values.len()];
        Self {
            georef,
            values,
            mask,
            units: units.into(),
        }
    }

    /// Evaluates `f(x, y)` at every cell center.
    pub fn from_fn(georef: GridGeoref, units: impl Into<String>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(georef.len());
        for row in 0..georef.n_rows {
            for col in 0..georef.n_cols {
                let (x, y) = georef.cell_center(row, col);
                values.push(f(x, y));
            }
        }
        Self::from_values(georef, values, units)
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.georef.n_cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.mask[self.index(row, col)]
    }

    pub fn has_nodata(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// `(min, max)` over unmasked cells, or `None` if every cell is masked.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| !m)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Checks shape and finiteness invariants.
    pub fn validate(&self) -> Result<()> {
        self.georef.validate()?;
        let n = self.georef.len();
        if self.values.len() != n || self.mask.len() != n {
            return Err(GeodataError::DimensionMismatch {
                expected: n,
                got: self.values.len(),
            });
        }
        if let Some(i) = self
            .values
            .iter()
            .zip(&self.mask)
            .position(|(v, &m)| !m && !v.is_finite())
        {
            return Err(GeodataError::NonFinite { line: i as u64 });
        }
        Ok(())
    }

    /// Same georef and mask, new values.
    pub fn with_values(&self, values: Vec<f64>, units: impl Into<String>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            georef: self.georef,
            values,
            mask: self.mask.clone(),
            units: units.into(),
        }
    }

    /// Element-wise map over all cells (masked cells included; their values are
    /// meaningless but kept finite by callers).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect(), self.units.clone())
    }
}
