//! Moving-window Euler deconvolution.
//!
//! Each window solves the linearised homogeneity relation
//!
//! ```text
//! x0·Tx + y0·Ty + z0·Tz + N·B = x·Tx + y·Ty + z·Tz + N·T
//! ```
//!
//! for `(x0, y0, z0, B)` at every structural index `N` of the configured set,
//! keeps the best-fitting index, and screens the result by misfit, depth and
//! depth uncertainty.
//!
//! Windows are solved in window-local coordinates (offsets from the window
//! centre), so translating the grid origin changes nothing but the final
//! `(x0, y0)` offset.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geodata::{Grid, GridGeoref};
use crate::linalg::{lstsq_qr, sym_eigen, upper_inverse};

const RMS_EPS: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;

pub const SOLUTION_CSV_HEADER: &str = "x0,y0,z0,si,base,rms,sigma_z,window_row,window_col";

#[derive(Debug, Error)]
pub enum EulerError {
    #[error("degenerate window (condition number {condition:e})")]
    DegenerateWindow { condition: f64 },
    #[error("input grids do not share one georeference")]
    GeorefMismatch,
    #[error("no {window}x{window} window fits a {rows}x{cols} grid")]
    EmptySweep { window: usize, rows: usize, cols: usize },
    #[error("invalid Euler configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed solution file, line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EulerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EulerConfig {
    pub window_size: usize,
    pub si_set: Vec<f64>,
    pub rms_accept: f64,
    pub max_depth: f64,
    pub depth_uncertainty_max: f64,
    pub window_step: usize,
    /// Height of the observation surface above ground, e.g. after upward
    /// continuation. Reported depths are measured below ground.
    pub observation_height: f64,
}

impl Default for EulerConfig {
    fn default() -> Self {
        Self {
            window_size: 3,
            si_set: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            rms_accept: 8.9e-3,
            max_depth: 1500.0,
            depth_uncertainty_max: 0.15,
            window_step: 1,
            observation_height: 0.0,
        }
    }
}

impl EulerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EulerError::InvalidConfig(m.to_string()));
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return bad("window_size must be odd and at least 3");
        }
        if self.si_set.is_empty() {
            return bad("si_set is empty");
        }
        if self.si_set.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("structural indices must be positive");
        }
        if self.si_set.windows(2).any(|w| w[0] >= w[1]) {
            return bad("si_set must be strictly increasing");
        }
        if !(self.rms_accept.is_finite() && self.rms_accept > 0.0) {
            return bad("rms_accept must be positive");
        }
        if !(self.max_depth.is_finite() && self.max_depth > 0.0) {
            return bad("max_depth must be positive");
        }
        if !(self.depth_uncertainty_max.is_finite() && self.depth_uncertainty_max > 0.0) {
            return bad("depth_uncertainty_max must be positive");
        }
        if self.window_step == 0 {
            return bad("window_step must be at least 1");
        }
        if !(self.observation_height.is_finite() && self.observation_height >= 0.0) {
            return bad("observation_height must be non-negative");
        }
        Ok(())
    }
}

/// Least-squares result of one window at one structural index, in the
/// coordinate frame of the supplied cell centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowFit {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub base: f64,
    pub rms: f64,
    pub sigma_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerSolution {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub si: f64,
    pub base: f64,
    pub rms: f64,
    pub sigma_z: f64,
    pub window_row: usize,
    pub window_col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputId {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: EulerConfig,
    pub georef: Option<GridGeoref>,
    pub inputs: Vec<InputId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSet {
    pub solutions: Vec<EulerSolution>,
    pub provenance: Provenance,
    pub rejected_counts: BTreeMap<String, usize>,
}

impl SolutionSet {
    /// A set with no sweep behind it, e.g. for hand-built or loaded solutions.
    pub fn from_solutions(solutions: Vec<EulerSolution>, config: EulerConfig) -> Self {
        Self {
            solutions,
            provenance: Provenance { config, georef: None, inputs: Vec::new() },
            rejected_counts: empty_counts(),
        }
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

fn empty_counts() -> BTreeMap<String, usize> {
    ["degenerate", "depth_range", "rms", "uncertainty"]
        .iter()
        .map(|k| (k.to_string(), 0))
        .collect()
}

/// Hex SHA-256 over the grid georeference, mask and values.
pub fn grid_fingerprint(grid: &Grid) -> String {
    let g = &grid.georef;
    let mut h = Sha256::new();
    for v in [g.x_origin, g.y_origin, g.cell_size] {
        h.update(v.to_le_bytes());
    }
    h.update((g.n_cols as u64).to_le_bytes());
    h.update((g.n_rows as u64).to_le_bytes());
    for (v, m) in grid.values.iter().zip(&grid.mask) {
        h.update(if *m { [1u8] } else { [0u8] });
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Solves one window for one structural index.
///
/// Slices hold the `w²` samples of the window; `coords` are the matching cell
/// centres. Observations sit at `z = 0`.
pub fn solve_window(t: &[f64], tx: &[f64], ty: &[f64], tz: &[f64], coords: &[(f64, f64)], si: f64) -> Result<WindowFit> {
    let m = t.len();
    debug_assert!(m >= 4 && [tx.len(), ty.len(), tz.len(), coords.len()].iter().all(|&l| l == m));
    let mut a = Vec::with_capacity(m * 4);
    let mut rhs = Vec::with_capacity(m);
    for i in 0..m {
        let (x, y) = coords[i];
        a.extend_from_slice(&[tx[i], ty[i], tz[i], si]);
        rhs.push(x * tx[i] + y * ty[i] + si * t[i]);
    }

    // column equilibration keeps the conditioning test independent of units
    let mut scale = [0.0; 4];
    for (j, s) in scale.iter_mut().enumerate() {
        let n = (0..m).map(|i| a[i * 4 + j] * a[i * 4 + j]).sum::<f64>().sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(EulerError::DegenerateWindow { condition: f64::INFINITY });
        }
        *s = 1.0 / n;
    }
    let scaled: Vec<f64> = a.iter().enumerate().map(|(k, v)| v * scale[k % 4]).collect();

    let mut normal = [0.0; 16];
    for p in 0..4 {
        for q in 0..4 {
            normal[p * 4 + q] = (0..m).map(|i| scaled[i * 4 + p] * scaled[i * 4 + q]).sum();
        }
    }
    let (vals, _) = sym_eigen(&normal, 4);
    let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
    let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(EulerError::DegenerateWindow { condition });
    }

    let (y, residual, r) =
        lstsq_qr(&scaled, &rhs, m, 4).ok_or(EulerError::DegenerateWindow { condition: f64::INFINITY })?;
    let sol: Vec<f64> = y.iter().zip(&scale).map(|(v, s)| v * s).collect();

    let res_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rms = res_norm / rhs_norm.max(RMS_EPS);

    let dof = (m.saturating_sub(4)).max(1) as f64;
    let variance = res_norm * res_norm / dof;
    let rinv = upper_inverse(&r, 4);
    let zz: f64 = (0..4).map(|k| rinv[2 * 4 + k] * rinv[2 * 4 + k]).sum::<f64>() * scale[2] * scale[2];
    let sigma_z = (variance * zz).sqrt();

    Ok(WindowFit { x0: sol[0], y0: sol[1], z0: sol[2], base: sol[3], rms, sigma_z })
}

enum Outcome {
    Masked,
    Degenerate,
    Rejected(&'static str),
    Accepted(EulerSolution),
}

/// Sweeps every window position over the four grids.
pub fn euler_sweep(t: &Grid, tx: &Grid, ty: &Grid, tz: &Grid, config: &EulerConfig) -> Result<SolutionSet> {
    config.validate()?;
    let georef = t.georef;
    if [tx, ty, tz].iter().any(|g| g.georef != georef) {
        return Err(EulerError::GeorefMismatch);
    }
    let w = config.window_size;
    let half = w / 2;
    if georef.n_rows < w || georef.n_cols < w {
        return Err(EulerError::EmptySweep { window: w, rows: georef.n_rows, cols: georef.n_cols });
    }
    let centers: Vec<(usize, usize)> = (half..georef.n_rows - half)
        .step_by(config.window_step)
        .flat_map(|r| (half..georef.n_cols - half).step_by(config.window_step).map(move |c| (r, c)))
        .collect();

    let cell = georef.cell_size;
    let coords: Vec<(f64, f64)> = (0..w * w)
        .map(|k| {
            let dr = (k / w) as f64 - half as f64;
            let dc = (k % w) as f64 - half as f64;
            (dc * cell, dr * cell)
        })
        .collect();

    let outcomes: Vec<Outcome> = centers
        .par_iter()
        .map(|&(rc, cc)| {
            let mut buf = [Vec::with_capacity(w * w), Vec::with_capacity(w * w), Vec::with_capacity(w * w), Vec::with_capacity(w * w)];
            for r in rc - half..=rc + half {
                for c in cc - half..=cc + half {
                    for (b, g) in buf.iter_mut().zip([t, tx, ty, tz]) {
                        let i = g.index(r, c);
                        if g.mask[i] || !g.values[i].is_finite() {
                            return Outcome::Masked;
                        }
                        b.push(g.values[i]);
                    }
                }
            }
            let mut best: Option<(f64, WindowFit)> = None;
            for &si in &config.si_set {
                if let Ok(fit) = solve_window(&buf[0], &buf[1], &buf[2], &buf[3], &coords, si) {
                    if best.map_or(true, |(_, b)| fit.rms < b.rms) {
                        best = Some((si, fit));
                    }
                }
            }
            let Some((si, fit)) = best else {
                return Outcome::Degenerate;
            };
            let (xc, yc) = georef.cell_center(rc, cc);
            let z0 = fit.z0 - config.observation_height;
            if !(fit.rms <= config.rms_accept) {
                return Outcome::Rejected("rms");
            }
            if !(z0 > 0.0 && z0 <= config.max_depth) {
                return Outcome::Rejected("depth_range");
            }
            if !(fit.sigma_z / z0 <= config.depth_uncertainty_max) {
                return Outcome::Rejected("uncertainty");
            }
            Outcome::Accepted(EulerSolution {
                x0: xc + fit.x0,
                y0: yc + fit.y0,
                z0,
                si,
                base: fit.base,
                rms: fit.rms,
                sigma_z: fit.sigma_z,
                window_row: rc,
                window_col: cc,
            })
        })
        .collect();

    let mut rejected_counts = empty_counts();
    let mut solutions = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Accepted(s) => solutions.push(s),
            Outcome::Degenerate => *rejected_counts.entry("degenerate".into()).or_default() += 1,
            Outcome::Rejected(why) => *rejected_counts.entry(why.into()).or_default() += 1,
            Outcome::Masked => *rejected_counts.entry("masked".into()).or_default() += 1,
        }
    }
    let inputs = [("T", t), ("Tx", tx), ("Ty", ty), ("Tz", tz)]
        .iter()
        .map(|(n, g)| InputId { name: n.to_string(), sha256: grid_fingerprint(g) })
        .collect();
    Ok(SolutionSet {
        solutions,
        provenance: Provenance { config: config.clone(), georef: Some(georef), inputs },
        rejected_counts,
    })
}

/// One group of [`cluster_solutions`]; indices refer to the input set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub representative: usize,
    pub members: Vec<usize>,
}

/// Greedy proximity clustering in solution order.
///
/// A solution joins the first cluster whose current representative is within
/// `radius` horizontally and within `radius` in depth; the representative is
/// the minimum-rms member (earliest on ties). Clusters are returned ordered by
/// representative index.
pub fn cluster_solutions(solutions: &[EulerSolution], radius: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, s) in solutions.iter().enumerate() {
        let home = clusters.iter_mut().find(|c| {
            let r = &solutions[c.representative];
            (s.x0 - r.x0).hypot(s.y0 - r.y0) <= radius && (s.z0 - r.z0).abs() <= radius
        });
        match home {
            Some(c) => {
                c.members.push(i);
                if s.rms < solutions[c.representative].rms {
                    c.representative = i;
                }
            }
            None => clusters.push(Cluster { representative: i, members: vec![i] }),
        }
    }
    clusters.sort_by_key(|c| c.representative);
    clusters
}

/// Most frequent structural index among `members` (smallest on ties).
pub fn modal_si(solutions: &[EulerSolution], members: &[usize]) -> Option<f64> {
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &m in members {
        let si = solutions[m].si;
        match counts.iter_mut().find(|(s, _)| *s == si) {
            Some(c) => c.1 += 1,
            None => counts.push((si, 1)),
        }
    }
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
    counts.first().map(|c| c.0)
}

/// Collapses each cluster of [`cluster_solutions`] to its representative.
pub fn filter_cluster(set: &SolutionSet, radius: f64) -> SolutionSet {
    let reps = cluster_solutions(&set.solutions, radius)
        .into_iter()
        .map(|c| set.solutions[c.representative])
        .collect();
    SolutionSet { solutions: reps, provenance: set.provenance.clone(), rejected_counts: set.rejected_counts.clone() }
}

pub fn write_solutions_csv<W: Write>(set: &SolutionSet, mut sink: W) -> Result<()> {
    use crate::fmt_f64 as f;
    writeln!(sink, "{SOLUTION_CSV_HEADER}")?;
    for s in &set.solutions {
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{}",
            f(s.x0),
            f(s.y0),
            f(s.z0),
            f(s.si),
            f(s.base),
            f(s.rms),
            f(s.sigma_z),
            s.window_row,
            s.window_col
        )?;
    }
    Ok(())
}

/// Reads a solution CSV written by [`write_solutions_csv`].
pub fn read_solutions_csv<R: Read>(source: R) -> Result<Vec<EulerSolution>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = rdr
        .headers()
        .map_err(|e| EulerError::Malformed { line: 1, reason: e.to_string() })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != SOLUTION_CSV_HEADER {
        return Err(EulerError::Malformed { line: 1, reason: format!("unexpected header `{header}`") });
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| EulerError::Malformed { line, reason: e.to_string() })?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| EulerError::Malformed { line, reason: format!("column {}: {e}", i + 1) })
        };
        let idx = |i: usize| -> Result<usize> {
            rec[i]
                .parse::<usize>()
                .map_err(|e| EulerError::Malformed { line, reason: format!("column {}: {e}", i + 1) })
        };
        if rec.len() != 9 {
            return Err(EulerError::Malformed { line, reason: format!("expected 9 fields, got {}", rec.len()) });
        }
        out.push(EulerSolution {
            x0: num(0)?,
            y0: num(1)?,
            z0: num(2)?,
            si: num(3)?,
            base: num(4)?,
            rms: num(5)?,
            sigma_z: num(6)?,
            window_row: idx(7)?,
            window_col: idx(8)?,
        });
    }
    Ok(out)
}

/// Writes the provenance sidecar: config snapshot, inputs and rejection tallies.
pub fn write_provenance_json<W: Write>(set: &SolutionSet, sink: W) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        provenance: &'a Provenance,
        rejected_counts: &'a BTreeMap<String, usize>,
        accepted: usize,
    }
    let doc = Sidecar { provenance: &set.provenance, rejected_counts: &set.rejected_counts, accepted: set.len() };
    serde_json::to_writer_pretty(sink, &doc).map_err(std::io::Error::from)?;
    Ok(())
}

/// Reads a sidecar written by [`write_provenance_json`] and attaches it to
/// `solutions`.
pub fn read_provenance_json<R: Read>(source: R, solutions: Vec<EulerSolution>) -> Result<SolutionSet> {
    #[derive(Deserialize)]
    struct Sidecar {
        provenance: Provenance,
        rejected_counts: BTreeMap<String, usize>,
        accepted: usize,
    }
    let doc: Sidecar = serde_json::from_reader(source)
        .map_err(|e| EulerError::Malformed { line: e.line(), reason: e.to_string() })?;
    if doc.accepted != solutions.len() {
        return Err(EulerError::Malformed {
            line: 0,
            reason: format!("sidecar lists {} solutions, CSV has {}", doc.accepted, solutions.len()),
        });
    }
    Ok(SolutionSet { solutions, provenance: doc.provenance, rejected_counts: doc.rejected_counts })
}
