//! Mining airborne total-magnetic-intensity (TMI) surveys for source structure.
//!
//! The crate is organised as one module per processing stage:
//!
//! - [`geodata`]: survey points, regular grids, gridding (nearest / ordinary kriging)
//!   and ESRI ASCII grid I/O.
//! - [`synthetics`]: analytic fields with known sources, used as verification oracles.
//! - [`filters`]: detrending, spectral continuation, low-pass and derivatives.
//! - [`euler`]: moving-window Euler deconvolution over a structural-index set.
//! - [`spatialstats`]: PCA, complete-spatial-randomness tests, nearest-neighbour
//!   statistics and a descriptive-statistics battery.
//! - [`classifier`]: a small tanh/softmax perceptron assigning solutions to SI classes.
//! - [`products`]: profile sections, depth histograms and trend reports.
//! - [`pipeline`]: configuration, orchestration and the artifact manifest.
//!
//! Coordinates are planar metres (UTM easting/northing). Depth `z` is positive
//! downward and the observation surface sits at `z = 0` unless a filter moved it.

pub mod classifier;
pub mod euler;
pub mod filters;
pub mod geodata;
mod linalg;
pub mod pipeline;
pub mod products;
pub mod rng;
pub mod spatialstats;
pub mod synthetics;

pub use euler::{EulerConfig, EulerSolution, SolutionSet};
pub use geodata::{Grid, GridGeoref, SurveyPoint, SurveyPointSet};

/// Formats a float with 17 significant digits, enough to round-trip any binary64.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
