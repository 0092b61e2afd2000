use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::points::median_sorted;
use super::{GeodataError, Grid, GridGeoref, PointIndex, Result, SurveyPointSet};
use crate::linalg::lu_solve;

/// Number of nearest points used per kriging cell unless configured otherwise.
pub const DEFAULT_NEIGHBORHOOD: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariogramKind {
    Spherical,
    Exponential,
    Gaussian,
}

/// Variogram with total sill `sill` (nugget included) and range `range_m`.
/// Exponential and Gaussian models use the practical range (95% of sill).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub nugget: f64,
    pub sill: f64,
    pub range_m: f64,
}

impl VariogramModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nugget >= 0.0
            && self.sill > 0.0
            && self.nugget <= self.sill
            && self.range_m > 0.0
            && self.sill.is_finite()
            && self.range_m.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GeodataError::InvalidParameter(format!("invalid variogram {self:?}")))
        }
    }

    /// Spherical, zero nugget, sill = sample variance, range = 10 x median spacing.
    pub fn default_for(points: &SurveyPointSet) -> Self {
        let vals: Vec<f64> = points.points.iter().map(|p| p.value).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut nn = PointIndex::new(points.xy()).nearest_neighbor_distances();
        nn.retain(|d| d.is_finite());
        nn.sort_by(f64::total_cmp);
        let spacing = if nn.is_empty() { 0.0 } else { median_sorted(&nn) };
        Self {
            kind: VariogramKind::Spherical,
            nugget: 0.0,
            sill: if var > 0.0 { var } else { 1.0 },
            range_m: if spacing > 0.0 { 10.0 * spacing } else { 1.0 },
        }
    }

    /// Semivariance at lag `h`; exactly 0 at `h == 0`.
    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        let partial = self.sill - self.nugget;
        let r = h / self.range_m;
        let shape = match self.kind {
            VariogramKind::Spherical => {
                if r >= 1.0 {
                    1.0
                } else {
                    1.5 * r - 0.5 * r * r * r
                }
            }
            VariogramKind::Exponential => 1.0 - (-3.0 * r).exp(),
            VariogramKind::Gaussian => 1.0 - (-3.0 * r * r).exp(),
        };
        self.nugget + partial * shape
    }
}

/// Nearest-point gridding: each cell center takes the value of the closest
/// point within `max_radius` (ties by smallest point index), otherwise nodata.
pub fn grid_nearest(points: &SurveyPointSet, georef: GridGeoref, max_radius: f64) -> Result<Grid> {
    georef.validate()?;
    if points.is_empty() {
        return Err(GeodataError::TooFewPoints { needed: 1, got: 0 });
    }
    if !(max_radius > 0.0) {
        return Err(GeodataError::InvalidParameter(format!(
            "max_radius must be positive, got {max_radius}"
        )));
    }
    let index = PointIndex::new(points.xy());
    let r2 = max_radius * max_radius;
    let cells: Vec<Option<f64>> = (0..georef.len())
        .into_par_iter()
        .map(|c| {
            let q = georef.cell_center(c / georef.n_cols, c % georef.n_cols);
            match index.nearest(q) {
                Some((d2, i)) if d2 <= r2 => Some(points.points[i].value),
                _ => None,
            }
        })
        .collect();
    Ok(cells_to_grid(georef, cells, "nT"))
}

fn cells_to_grid(georef: GridGeoref, cells: Vec<Option<f64>>, units: &str) -> Grid {
    let mask = cells.iter().map(Option::is_none).collect();
    let values = cells.into_iter().map(|c| c.unwrap_or(0.0)).collect();
    Grid {
        georef,
        values,
        mask,
        units: units.into(),
    }
}

/// Per-run diagnostics from ordinary kriging.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KrigingReport {
    /// Cells whose kriging system could not be solved; masked in the output.
    pub singular_cells: Vec<usize>,
    /// Cells where at least one weight was negative.
    pub negative_weight_cells: usize,
}

/// Ordinary-kriging weights of `neighbors` for a prediction at `target`.
///
/// Solves `[Γ 1; 1ᵀ 0] [w; μ] = [γ₀; 1]` in semivariogram form. Returns the
/// `neighbors.len()` weights (the Lagrange multiplier is dropped), or `None`
/// when the system is singular.
pub fn ordinary_kriging_weights(
    neighbors: &[(f64, f64)],
    target: (f64, f64),
    variogram: &VariogramModel,
) -> Option<Vec<f64>> {
    let k = neighbors.len();
    let n = k + 1;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for i in 0..k {
        for j in 0..k {
            let h = hypot(neighbors[i], neighbors[j]);
            a[i * n + j] = variogram.gamma(h);
        }
        a[i * n + k] = 1.0;
        a[k * n + i] = 1.0;
        b[i] = variogram.gamma(hypot(neighbors[i], target));
    }
    b[k] = 1.0;
    let mut w = lu_solve(&a, &b, n, 1e-13)?;
    w.truncate(k);
    Some(w)
}

#[inline]
fn hypot(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    (dx * dx + dy * dy).sqrt()
}

/// Ordinary kriging onto `georef` using the `neighborhood` nearest distinct
/// points per cell. Later duplicate coordinates are excluded; cells whose
/// system is singular are masked and reported rather than failing the run.
pub fn grid_kriging(
    points: &SurveyPointSet,
    georef: GridGeoref,
    variogram: &VariogramModel,
    neighborhood: usize,
) -> Result<(Grid, KrigingReport)> {
    georef.validate()?;
    variogram.validate()?;
    let distinct = points.distinct();
    if distinct.len() < 2 {
        return Err(GeodataError::TooFewPoints {
            needed: 2,
            got: distinct.len(),
        });
    }
    if neighborhood < 2 {
        return Err(GeodataError::InvalidParameter(format!(
            "neighborhood must be at least 2, got {neighborhood}"
        )));
    }
    let xy: Vec<(f64, f64)> = distinct.iter().map(|p| (p.x, p.y)).collect();
    let index = PointIndex::new(xy.clone());
    let k = neighborhood.min(distinct.len());

    // Coordinates are shifted to the first point to keep lag arithmetic well scaled.
    let origin = xy[0];
    let solved: Vec<Option<(f64, bool)>> = (0..georef.len())
        .into_par_iter()
        .map(|c| {
            let q = georef.cell_center(c / georef.n_cols, c % georef.n_cols);
            let nb = index.k_nearest(q, k);
            let local: Vec<(f64, f64)> = nb
                .iter()
                .map(|&(_, i)| (xy[i].0 - origin.0, xy[i].1 - origin.1))
                .collect();
            let target = (q.0 - origin.0, q.1 - origin.1);
            let w = ordinary_kriging_weights(&local, target, variogram)?;
            let value: f64 = w.iter().zip(&nb).map(|(wi, &(_, i))| wi * distinct[i].value).sum();
            let negative = w.iter().any(|&wi| wi < 0.0);
            value.is_finite().then_some((value, negative))
        })
        .collect();

    let mut report = KrigingReport::default();
    let cells = solved
        .into_iter()
        .enumerate()
        .map(|(c, s)| match s {
            Some((v, neg)) => {
                if neg {
                    report.negative_weight_cells += 1;
                }
                Some(v)
            }
            None => {
                report.singular_cells.push(c);
                None
            }
        })
        .collect();
    Ok((cells_to_grid(georef, cells, "nT"), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::SurveyPoint;

    fn pts(v: &[(f64, f64, f64)]) -> SurveyPointSet {
        SurveyPointSet::new(
            v.iter().map(|&(x, y, value)| SurveyPoint { x, y, value }).collect(),
            "",
        )
        .unwrap()
    }

    #[test]
    fn nearest_identity_at_centers() {
        let g = GridGeoref::new(0.0, 0.0, 10.0, 3, 2).unwrap();
        let mut v = Vec::new();
        for r in 0..2 {
            for c in 0..3 {
                let (x, y) = g.cell_center(r, c);
                v.push((x, y, (r * 3 + c) as f64));
            }
        }
        let grid = grid_nearest(&pts(&v), g, 100.0).unwrap();
        assert_eq!(grid.values, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(!grid.has_nodata());
    }

    #[test]
    fn nearest_radius_cut() {
        let g = GridGeoref::new(0.0, 0.0, 10.0, 5, 5).unwrap();
        let grid = grid_nearest(&pts(&[(25.0, 25.0, 7.0)]), g, 1.0).unwrap();
        assert_eq!(grid.unmasked_count(), 1);
        assert_eq!(grid.get(2, 2), 7.0);
        assert!(grid_nearest(&pts(&[(25.0, 25.0, 7.0)]), g, 0.0).is_err());
    }

    #[test]
    fn kriging_exact_at_data() {
        let data = [(0.0, 0.0, 3.0), (100.0, 0.0, 5.0), (0.0, 100.0, -2.0), (100.0, 100.0, 8.0), (50.0, 50.0, 1.5)];
        let p = pts(&data);
        let vg = VariogramModel { kind: VariogramKind::Spherical, nugget: 0.0, sill: 10.0, range_m: 300.0 };
        let g = GridGeoref::new(-25.0, -25.0, 50.0, 4, 4).unwrap();
        let (grid, rep) = grid_kriging(&p, g, &vg, 16).unwrap();
        assert!(rep.singular_cells.is_empty());
        let check = |r, c, want: f64| {
            let got = grid.get(r, c);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
        };
        check(0, 0, 3.0);
        check(0, 2, 5.0);
        check(2, 0, -2.0);
        check(2, 2, 8.0);
        check(1, 1, 1.5);
    }

    #[test]
    fn kriging_constant_data_constant_grid() {
        let data: Vec<(f64, f64, f64)> = (0..20).map(|i| ((i * 37 % 200) as f64, (i * 53 % 170) as f64, 42.0)).collect();
        let p = pts(&data);
        let vg = VariogramModel::default_for(&p);
        let g = GridGeoref::new(0.0, 0.0, 20.0, 10, 9).unwrap();
        let (grid, _) = grid_kriging(&p, g, &vg, 8).unwrap();
        for v in grid.values {
            assert!((v - 42.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kriging_skips_duplicates() {
        let p = pts(&[(0.0, 0.0, 1.0), (0.0, 0.0, 9.0), (10.0, 0.0, 2.0), (0.0, 10.0, 3.0)]);
        let vg = VariogramModel { kind: VariogramKind::Exponential, nugget: 0.0, sill: 1.0, range_m: 50.0 };
        let g = GridGeoref::new(-5.0, -5.0, 10.0, 2, 2).unwrap();
        let (grid, rep) = grid_kriging(&p, g, &vg, 16).unwrap();
        assert!(rep.singular_cells.is_empty());
        assert!((grid.get(0, 0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn variogram_shapes() {
        let s = VariogramModel { kind: VariogramKind::Spherical, nugget: 1.0, sill: 5.0, range_m: 100.0 };
        assert_eq!(s.gamma(0.0), 0.0);
        assert_eq!(s.gamma(100.0), 5.0);
        assert_eq!(s.gamma(1000.0), 5.0);
        assert!((s.gamma(50.0) - (1.0 + 4.0 * (0.75 - 0.0625))).abs() < 1e-12);
        let bad = VariogramModel { nugget: 6.0, ..s };
        assert!(bad.validate().is_err());
    }
}
