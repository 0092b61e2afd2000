//! Grid enhancement: polynomial detrending, spectral continuation, low-pass
//! filtering and first derivatives.
//!
//! Spectral operators work on a padded square of side
//! `next_pow2(pad_factor × max(n_rows, n_cols))`. The grid mean is removed
//! first and restored as `mean × H(0)`. Each edge is extended by linear
//! extrapolation of its least-squares slope over the last n/16 samples, and
//! the outer `taper × size` cells of every extension roll off to zero with a
//! half cosine, so the padded field is continuous across the periodic wrap.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodata::{Grid, PointIndex};
use crate::linalg::{lu_solve, pairwise_sum};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("grid has nodata cells; fill them before spectral filtering")]
    MaskedInput,
    #[error("polynomial surface of degree {degree} is rank deficient on the unmasked cells")]
    RankDeficient { degree: u8 },
    #[error("cutoff wavelength {cutoff} m is below the Nyquist wavelength {nyquist} m")]
    CutoffBelowNyquist { cutoff: f64, nyquist: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, FilterError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralPlan {
    pub pad_factor: usize,
    /// Fraction of the padded size over which each extension rolls off, in [0, 0.5].
    pub taper: f64,
}

impl Default for SpectralPlan {
    fn default() -> Self {
        Self {
            pad_factor: 2,
            taper: 0.1,
        }
    }
}

impl SpectralPlan {
    pub fn validate(&self) -> Result<()> {
        if self.pad_factor < 1 || !(0.0..=0.5).contains(&self.taper) {
            return Err(FilterError::InvalidParameter(format!(
                "spectral plan needs pad_factor >= 1 and taper in [0, 0.5], got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn padded_size(&self, n_rows: usize, n_cols: usize) -> usize {
        (self.pad_factor * n_rows.max(n_cols)).next_power_of_two()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

// ---------------------------------------------------------------------------
// polynomial detrending

/// Least-squares polynomial surface in scaled local coordinates
/// `u = (x − center_x) / scale`, `v = (y − center_y) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySurface {
    pub degree: u8,
    pub center_x: f64,
    pub center_y: f64,
    pub scale: f64,
    /// Coefficients of `1, u, v, u², uv, v²` (truncated to the degree).
    pub local_coefficients: Vec<f64>,
}

fn poly_terms(degree: u8, u: f64, v: f64) -> [f64; 6] {
    match degree {
        0 => [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        1 => [1.0, u, v, 0.0, 0.0, 0.0],
        _ => [1.0, u, v, u * u, u * v, v * v],
    }
}

fn n_terms(degree: u8) -> usize {
    match degree {
        0 => 1,
        1 => 3,
        _ => 6,
    }
}

impl PolySurface {
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.center_x) / self.scale;
        let v = (y - self.center_y) / self.scale;
        let t = poly_terms(self.degree, u, v);
        self.local_coefficients.iter().zip(t).map(|(c, t)| c * t).sum()
    }

    /// Coefficients of `1, x, y, x², xy, y²` in world coordinates.
    pub fn world_coefficients(&self) -> Vec<f64> {
        let mut c = [0.0; 6];
        c[..self.local_coefficients.len()].copy_from_slice(&self.local_coefficients);
        let (xc, yc, s) = (self.center_x, self.center_y, self.scale);
        let s2 = s * s;
        let world = [
            c[0] - c[1] * xc / s - c[2] * yc / s + (c[3] * xc * xc + c[4] * xc * yc + c[5] * yc * yc) / s2,
            c[1] / s - (2.0 * c[3] * xc + c[4] * yc) / s2,
            c[2] / s - (c[4] * xc + 2.0 * c[5] * yc) / s2,
            c[3] / s2,
            c[4] / s2,
            c[5] / s2,
        ];
        world[..n_terms(self.degree)].to_vec()
    }
}

/// Removes the least-squares polynomial surface of `degree` (0, 1 or 2).
/// Masked cells stay masked and are ignored by the fit.
pub fn detrend_poly(grid: &Grid, degree: u8) -> Result<(Grid, PolySurface)> {
    if degree > 2 {
        return Err(FilterError::InvalidParameter(format!("degree must be 0, 1 or 2, got {degree}")));
    }
    let g = grid.georef;
    let p = n_terms(degree);
    if grid.unmasked_count() <= p {
        return Err(FilterError::RankDeficient { degree });
    }
    let center_x = g.x_origin + 0.5 * g.n_cols as f64 * g.cell_size;
    let center_y = g.y_origin + 0.5 * g.n_rows as f64 * g.cell_size;
    let scale = 0.5 * (g.n_cols.max(g.n_rows) as f64) * g.cell_size;

    let mut ata = vec![0.0; p * p];
    let mut atb = vec![0.0; p];
    for row in 0..g.n_rows {
        for col in 0..g.n_cols {
            if grid.is_masked(row, col) {
                continue;
            }
            let (x, y) = g.cell_center(row, col);
            let t = poly_terms(degree, (x - center_x) / scale, (y - center_y) / scale);
            let b = grid.get(row, col);
            for i in 0..p {
                atb[i] += t[i] * b;
                for j in 0..p {
                    ata[i * p + j] += t[i] * t[j];
                }
            }
        }
    }
    let coeffs = lu_solve(&ata, &atb, p, 1e-12).ok_or(FilterError::RankDeficient { degree })?;
    let surface = PolySurface {
        degree,
        center_x,
        center_y,
        scale,
        local_coefficients: coeffs,
    };
    let mut values = grid.values.clone();
    for row in 0..g.n_rows {
        for col in 0..g.n_cols {
            let i = grid.index(row, col);
            if !grid.mask[i] {
                let (x, y) = g.cell_center(row, col);
                values[i] -= surface.evaluate(x, y);
            }
        }
    }
    Ok((grid.with_values(values, grid.units.clone()), surface))
}

/// Fills nodata cells with the value of the nearest valid cell (ties by the
/// smallest row-major index). A grid with no valid cell is returned unchanged.
pub fn fill_nodata(grid: &Grid) -> Grid {
    if !grid.has_nodata() || grid.unmasked_count() == 0 {
        return grid.clone();
    }
    let g = grid.georef;
    let valid: Vec<usize> = (0..g.len()).filter(|&i| !grid.mask[i]).collect();
    let xy = valid
        .iter()
        .map(|&i| g.cell_center(i / g.n_cols, i % g.n_cols))
        .collect();
    let index = PointIndex::new(xy);
    let mut out = grid.clone();
    for i in 0..g.len() {
        if grid.mask[i] {
            let q = g.cell_center(i / g.n_cols, i % g.n_cols);
            let (_, k) = index.nearest(q).expect("at least one valid cell");
            out.values[i] = grid.values[valid[k]];
            out.mask[i] = false;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// spectral machinery

/// Extends `line[..n]` in place to the full length of `line` (see module docs).
fn extend_line(line: &mut [f64], n: usize, taper_len: usize) {
    let m = line.len();
    if m == n {
        return;
    }
    let gap = m - n;
    let h_right = gap / 2;
    let h_left = gap - h_right;
    let weight = |d: usize, h: usize| -> f64 {
        let l = taper_len.min(h);
        if l == 0 || d <= h - l {
            1.0
        } else {
            let t = (d - (h - l)) as f64 / l as f64;
            0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    };
    let k = (n / 16).clamp(2.min(n), n);
    let (e_right, s_right) = (line[n - 1], edge_slope(line[n - k..n].iter().copied()));
    let (e_left, s_left) = (line[0], edge_slope(line[..k].iter().rev().copied()));
    for d in 1..=h_right {
        line[n - 1 + d] = (e_right + s_right * d as f64) * weight(d, h_right);
    }
    for d in 1..=h_left {
        line[m - d] = (e_left + s_left * d as f64) * weight(d, h_left);
    }
}

/// Least-squares slope per sample of a short run, oriented outward.
fn edge_slope(run: impl ExactSizeIterator<Item = f64>) -> f64 {
    let k = run.len();
    if k < 2 {
        return 0.0;
    }
    let tm = (k - 1) as f64 / 2.0;
    let (mut num, mut den, mut sum) = (0.0, 0.0, 0.0);
    let vals: Vec<f64> = run.collect();
    for v in &vals {
        sum += v;
    }
    let mean = sum / k as f64;
    for (t, v) in vals.iter().enumerate() {
        let dt = t as f64 - tm;
        num += dt * (v - mean);
        den += dt * dt;
    }
    num / den
}

struct Spectrum {
    data: Vec<Complex64>,
    size: usize,
    mean: f64,
}

fn fft_rows(data: &mut [Complex64], size: usize, fft: &Arc<dyn Fft<f64>>) {
    data.par_chunks_mut(size).for_each(|row| fft.process(row));
}

fn transpose(data: &[Complex64], size: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    out.par_chunks_mut(size).enumerate().for_each(|(c, dst)| {
        for r in 0..size {
            dst[r] = data[r * size + c];
        }
    });
    out
}

fn forward(grid: &Grid, plan: &SpectralPlan) -> Result<Spectrum> {
    plan.validate()?;
    if grid.has_nodata() {
        return Err(FilterError::MaskedInput);
    }
    let g = grid.georef;
    let (nr, nc) = (g.n_rows, g.n_cols);
    let size = plan.padded_size(nr, nc);
    let taper_len = (plan.taper * size as f64).round() as usize;
    let mean = pairwise_sum(&grid.values) / grid.values.len() as f64;

    // rows first (x direction), then columns (y direction)
    let mut real = vec![0.0; size * size];
    for r in 0..nr {
        let line = &mut real[r * size..(r + 1) * size];
        for c in 0..nc {
            line[c] = grid.values[r * nc + c] - mean;
        }
        extend_line(line, nc, taper_len);
    }
    let mut column = vec![0.0; size];
    for c in 0..size {
        for r in 0..nr {
            column[r] = real[r * size + c];
        }
        extend_line(&mut column, nr, taper_len);
        for r in 0..size {
            real[r * size + c] = column[r];
        }
    }

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let mut data: Vec<Complex64> = real.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    fft_rows(&mut data, size, &fft);
    let mut data = transpose(&data, size);
    fft_rows(&mut data, size, &fft);
    // data is now column-major: data[kx_index * size + ky_index]
    Ok(Spectrum { data, size, mean })
}

fn wavenumber(i: usize, size: usize, cell: f64) -> f64 {
    let m = if i < size / 2 { i as f64 } else { i as f64 - size as f64 };
    std::f64::consts::TAU * m / (size as f64 * cell)
}

/// Applies the transfer function `response(kx, ky)` (rad/m) to `grid`.
fn apply_response(grid: &Grid, plan: &SpectralPlan, units: &str, response: impl Fn(f64, f64) -> Complex64 + Sync) -> Result<Grid> {
    let Spectrum { mut data, size, mean } = forward(grid, plan)?;
    let cell = grid.georef.cell_size;
    data.par_chunks_mut(size).enumerate().for_each(|(ix, col)| {
        let kx = wavenumber(ix, size, cell);
        for (iy, v) in col.iter_mut().enumerate() {
            *v *= response(kx, wavenumber(iy, size, cell));
        }
    });
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(size);
    fft_rows(&mut data, size, &ifft);
    let mut data = transpose(&data, size);
    fft_rows(&mut data, size, &ifft);
    let norm = 1.0 / (size * size) as f64;
    let dc = response(0.0, 0.0).re * mean;
    let g = grid.georef;
    let mut values = Vec::with_capacity(g.len());
    for r in 0..g.n_rows {
        for c in 0..g.n_cols {
            values.push(data[r * size + c].re * norm + dc);
        }
    }
    Ok(grid.with_values(values, units))
}

/// Upward continuation by `height` metres: multiplies the spectrum by `e^{−|k|h}`.
pub fn upward_continue(grid: &Grid, height: f64, plan: &SpectralPlan) -> Result<Grid> {
    if !(height > 0.0 && height.is_finite()) {
        return Err(FilterError::InvalidParameter(format!("height must be positive, got {height}")));
    }
    apply_response(grid, plan, &grid.units, |kx, ky| {
        Complex64::new((-(kx * kx + ky * ky).sqrt() * height).exp(), 0.0)
    })
}

/// First derivative along `axis` in units per metre. Horizontal derivatives
/// multiply by `i·k`; the vertical derivative (positive downward) by `|k|`.
pub fn derivative(grid: &Grid, axis: Axis, plan: &SpectralPlan) -> Result<Grid> {
    let units = format!("{}/m", if grid.units.is_empty() { "nT" } else { &grid.units });
    match axis {
        Axis::X => apply_response(grid, plan, &units, |kx, _| Complex64::new(0.0, kx)),
        Axis::Y => apply_response(grid, plan, &units, |_, ky| Complex64::new(0.0, ky)),
        Axis::Z => apply_response(grid, plan, &units, |kx, ky| Complex64::new((kx * kx + ky * ky).sqrt(), 0.0)),
    }
}

/// Radially symmetric low-pass with a cosine roll-off: unit gain for
/// wavelengths ≥ 2·cutoff, zero gain for wavelengths ≤ cutoff.
pub fn lowpass(grid: &Grid, cutoff_wavelength: f64, plan: &SpectralPlan) -> Result<Grid> {
    let nyquist = 2.0 * grid.georef.cell_size;
    if !(cutoff_wavelength >= nyquist) {
        return Err(FilterError::CutoffBelowNyquist {
            cutoff: cutoff_wavelength,
            nyquist,
        });
    }
    let kc = std::f64::consts::TAU / cutoff_wavelength;
    let k_pass = 0.5 * kc;
    apply_response(grid, plan, &grid.units, move |kx, ky| {
        let k = (kx * kx + ky * ky).sqrt();
        let gain = if k <= k_pass {
            1.0
        } else if k >= kc {
            0.0
        } else {
            0.5 * (1.0 + (std::f64::consts::PI * (k - k_pass) / (kc - k_pass)).cos())
        };
        Complex64::new(gain, 0.0)
    })
}
