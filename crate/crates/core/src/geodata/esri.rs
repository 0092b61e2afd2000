//! ESRI ASCII grid (`.asc`) reader and writer.
//!
//! The header stores the lower-left *corner*; rows are written north first.
//! Values use 17 significant digits, so a write/read cycle is bit-exact.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};

use super::{GeodataError, Grid, GridGeoref, Result};

pub const NODATA_VALUE: f64 = -99999.0;

pub fn write_grid<W: Write>(grid: &Grid, sink: W) -> Result<()> {
    grid.validate()?;
    let mut w = std::io::BufWriter::new(sink);
    let g = &grid.georef;
    writeln!(w, "ncols {}", g.n_cols)?;
    writeln!(w, "nrows {}", g.n_rows)?;
    writeln!(w, "xllcorner {}", crate::fmt_f64(g.x_origin))?;
    writeln!(w, "yllcorner {}", crate::fmt_f64(g.y_origin))?;
    writeln!(w, "cellsize {}", crate::fmt_f64(g.cell_size))?;
    writeln!(w, "NODATA_value -99999")?;
    let mut line = String::new();
    for row in (0..g.n_rows).rev() {
        line.clear();
        for col in 0..g.n_cols {
            if col > 0 {
                line.push(' ');
            }
            if grid.is_masked(row, col) {
                line.push_str("-99999");
            } else {
                line.push_str(&crate::fmt_f64(grid.get(row, col)));
            }
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid<R: Read>(source: R) -> Result<Grid> {
    let reader = BufReader::new(source);
    let mut header: HashMap<String, String> = HashMap::new();
    let mut samples: Vec<f64> = Vec::new();
    let mut nodata = NODATA_VALUE;
    let mut in_body = false;
    let mut masked: Vec<bool> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or("");
        if !in_body && first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && first.parse::<f64>().is_err() {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            let value = parts
                .next()
                .ok_or_else(|| GeodataError::HeaderMismatch(format!("`{key}` has no value")))?;
            if key == "nodata_value" {
                nodata = value
                    .parse()
                    .map_err(|_| GeodataError::HeaderMismatch(format!("bad NODATA_value `{value}`")))?;
            }
            header.insert(key, value.to_string());
            continue;
        }
        in_body = true;
        for tok in trimmed.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| GeodataError::MalformedRow {
                line: lineno as u64 + 1,
                reason: format!("`{tok}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(GeodataError::NonFinite { line: lineno as u64 + 1 });
            }
            masked.push(v == nodata);
            samples.push(v);
        }
    }

    let get_usize = |k: &str| -> Result<usize> {
        header
            .get(k)
            .ok_or_else(|| GeodataError::HeaderMismatch(format!("missing `{k}`")))?
            .parse()
            .map_err(|_| GeodataError::HeaderMismatch(format!("`{k}` is not a count")))
    };
    let get_f64 = |k: &str| -> Option<Result<f64>> {
        header.get(k).map(|v| {
            v.parse()
                .map_err(|_| GeodataError::HeaderMismatch(format!("`{k}` is not a number")))
        })
    };
    let n_cols = get_usize("ncols")?;
    let n_rows = get_usize("nrows")?;
    let cell_size = get_f64("cellsize").ok_or_else(|| GeodataError::HeaderMismatch("missing `cellsize`".into()))??;
    let (x_origin, y_origin) = match (get_f64("xllcorner"), get_f64("yllcorner")) {
        (Some(x), Some(y)) => (x?, y?),
        _ => match (get_f64("xllcenter"), get_f64("yllcenter")) {
            (Some(x), Some(y)) => (x? - 0.5 * cell_size, y? - 0.5 * cell_size),
            _ => return Err(GeodataError::HeaderMismatch("missing lower-left origin".into())),
        },
    };
    let georef = GridGeoref::new(x_origin, y_origin, cell_size, n_cols, n_rows)?;
    if samples.len() != georef.len() {
        return Err(GeodataError::DimensionMismatch {
            expected: georef.len(),
            got: samples.len(),
        });
    }

    // file rows run north to south; storage runs south to north
    let mut values = vec![0.0; georef.len()];
    let mut mask = vec![false; georef.len()];
    for file_row in 0..n_rows {
        let row = n_rows - 1 - file_row;
        for col in 0..n_cols {
            let src = file_row * n_cols + col;
            let dst = row * n_cols + col;
            if masked[src] {
                mask[dst] = true;
            } else {
                values[dst] = samples[src];
            }
        }
    }
    Ok(Grid {
        georef,
        values,
        mask,
        units: String::new(),
    })
}
