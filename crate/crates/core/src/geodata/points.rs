use std::io::{Read, Write};

use serde::Serialize;

use super::{GeodataError, PointIndex, Result, SurveyPoint, SurveyPointSet};

/// Reads a `x,y,tmi` CSV (UTF-8, LF or CRLF). Column order is free; extra
/// columns are ignored.
pub fn load_points<R: Read>(source: R, crs_label: &str) -> Result<SurveyPointSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(source);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect::<Vec<_>>();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| GeodataError::MalformedRow {
            line: 1,
            reason: format!("header lacks column `{name}`"),
        })
    };
    let (ix, iy, iv) = (col("x")?, col("y")?, col("tmi")?);

    let mut points = Vec::new();
    for rec in rdr.records() {
        let line = rec.as_ref().ok().and_then(|r| r.position()).map(|p| p.line()).unwrap_or(0);
        let rec = rec.map_err(|e| csv_error(e, line))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<f64> {
            let raw = rec.get(i).ok_or_else(|| GeodataError::MalformedRow {
                line,
                reason: "missing field".into(),
            })?;
            let v: f64 = raw.parse().map_err(|_| GeodataError::MalformedRow {
                line,
                reason: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(GeodataError::NonFinite { line });
            }
            Ok(v)
        };
        points.push(SurveyPoint {
            x: field(ix)?,
            y: field(iy)?,
            value: field(iv)?,
        });
    }
    if points.is_empty() {
        return Err(GeodataError::EmptyInput);
    }
    SurveyPointSet::new(points, crs_label)
}

fn csv_error(e: csv::Error, line: u64) -> GeodataError {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GeodataError::Io(io),
        other => GeodataError::MalformedRow {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Writes points as `x,y,tmi` with 17 significant digits.
pub fn write_points<W: Write>(points: &SurveyPointSet, mut sink: W) -> Result<()> {
    writeln!(sink, "x,y,tmi")?;
    for p in &points.points {
        writeln!(
            sink,
            "{},{},{}",
            crate::fmt_f64(p.x),
            crate::fmt_f64(p.y),
            crate::fmt_f64(p.value)
        )?;
    }
    Ok(())
}

/// Nearest-neighbour spacing of a survey and the resulting grid-size advice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpacingReport {
    pub min_spacing: f64,
    pub median_spacing: f64,
    pub max_spacing: f64,
    pub recommended_cell_size: f64,
    pub checked_cell_size: f64,
    /// Cell size below half the median spacing: the grid invents detail.
    pub oversampled: bool,
    /// Cell size above the median spacing: data are folded above Nyquist.
    pub undersampled: bool,
    pub aliasing_warning: bool,
}

pub fn sample_spacing_report(points: &SurveyPointSet, cell_size: Option<f64>) -> Result<SpacingReport> {
    if points.len() < 2 {
        return Err(GeodataError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let index = PointIndex::new(points.xy());
    let mut d = index.nearest_neighbor_distances();
    d.sort_by(f64::total_cmp);
    let median = median_sorted(&d);
    let checked = cell_size.unwrap_or(median);
    if !(checked > 0.0) {
        return Err(GeodataError::InvalidParameter(format!(
            "cell size must be positive, got {checked}"
        )));
    }
    let oversampled = checked < 0.5 * median;
    let undersampled = checked > median;
    Ok(SpacingReport {
        min_spacing: d[0],
        median_spacing: median,
        max_spacing: d[d.len() - 1],
        recommended_cell_size: median,
        checked_cell_size: checked,
        oversampled,
        undersampled,
        aliasing_warning: oversampled || undersampled,
    })
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_csv() {
        let set = load_points("x,y,tmi\n0,0,100\n100,0,101".as_bytes(), "utm").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.duplicate_count(), 0);
        assert_eq!(set.points[1], SurveyPoint { x: 100.0, y: 0.0, value: 101.0 });
    }

    #[test]
    fn flags_duplicate_coordinates() {
        let set = load_points("x,y,tmi\n0,0,1\n0,0,2".as_bytes(), "").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.duplicate_count(), 1);
    }

    #[test]
    fn accepts_crlf_and_column_order() {
        let set = load_points("tmi,y,x\r\n5,2,1\r\n6,4,3\r\n".as_bytes(), "").unwrap();
        assert_eq!(set.points[0], SurveyPoint { x: 1.0, y: 2.0, value: 5.0 });
        assert_eq!(set.points[1], SurveyPoint { x: 3.0, y: 4.0, value: 6.0 });
    }

    #[test]
    fn error_paths() {
        assert!(matches!(load_points("x,y,tmi\n".as_bytes(), ""), Err(GeodataError::EmptyInput)));
        assert!(matches!(
            load_points("x,y,tmi\n0,0,1\n0,abc,2".as_bytes(), ""),
            Err(GeodataError::MalformedRow { line: 3, .. })
        ));
        assert!(matches!(
            load_points("x,y,tmi\n0,0,NaN".as_bytes(), ""),
            Err(GeodataError::NonFinite { line: 2 })
        ));
        assert!(matches!(
            load_points("x,y,tmi\n0,0,inf".as_bytes(), ""),
            Err(GeodataError::NonFinite { line: 2 })
        ));
        assert!(matches!(
            load_points("x,y,z\n0,0,1".as_bytes(), ""),
            Err(GeodataError::MalformedRow { line: 1, .. })
        ));
    }

    fn lattice(n: usize, spacing: f64) -> SurveyPointSet {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(SurveyPoint { x: j as f64 * spacing, y: i as f64 * spacing, value: 0.0 });
            }
        }
        SurveyPointSet::new(pts, "").unwrap()
    }

    #[test]
    fn lattice_spacing() {
        let r = sample_spacing_report(&lattice(10, 100.0), None).unwrap();
        assert_eq!(r.median_spacing, 100.0);
        assert_eq!(r.recommended_cell_size, 100.0);
        assert!(!r.aliasing_warning);
    }

    #[test]
    fn coarse_grid_warns_undersampling() {
        let r = sample_spacing_report(&lattice(10, 100.0), Some(500.0)).unwrap();
        assert!(r.undersampled && r.aliasing_warning);
        let r = sample_spacing_report(&lattice(10, 100.0), Some(20.0)).unwrap();
        assert!(r.oversampled && r.aliasing_warning);
    }

    #[test]
    fn single_point_is_rejected() {
        let set = SurveyPointSet::new(vec![SurveyPoint { x: 0.0, y: 0.0, value: 0.0 }], "").unwrap();
        assert!(matches!(
            sample_spacing_report(&set, None),
            Err(GeodataError::TooFewPoints { .. })
        ));
    }
}
