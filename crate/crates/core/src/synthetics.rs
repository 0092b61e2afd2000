//! Analytic fields with known sources.
//!
//! The homogeneous field `T = B + A · r^(−N)`, with
//! `r² = (x − x0)² + (y − y0)² + z0²`, satisfies Euler's homogeneity relation
//! exactly with index `N`, which makes it the reference for the solver and the
//! spectral filters. Depth is positive downward; the observation plane is `z = 0`.
//!
//! `r^(−N)` is only a potential field for N = 1. Spectral operators
//! (continuation, `|k|` vertical derivative) assume a harmonic field, so
//! [`FieldShape::Harmonic`] provides harmonic fields of the same degree for
//! N ∈ {1, 2, 3}: a pole `A/r`, its vertical derivative `A·u/r³`, and its second
//! vertical derivative `A·(2u² − ρ²)/r⁵`, with `u = z0 − z` and `ρ` the
//! horizontal offset. All three satisfy Euler's relation with index N.

use serde::{Deserialize, Serialize};

use crate::geodata::{Grid, GridGeoref};
use crate::rng::gaussian_at;

/// Magnetic constant over 4π, in T·m/A; anomalies are reported in nT.
const MU0_OVER_4PI: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldShape {
    /// `A · r^(−N)`, any N in (0, 3].
    #[default]
    Radial,
    /// Harmonic field homogeneous of degree −N; N must be 1, 2 or 3.
    Harmonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousSource {
    pub x0: f64,
    pub y0: f64,
    /// Depth below the observation plane, metres, > 0.
    pub z0: f64,
    /// nT·m^N
    pub amplitude: f64,
    /// Structural index N in (0, 3].
    pub si: f64,
    /// Base level, nT.
    pub base: f64,
    #[serde(default)]
    pub shape: FieldShape,
}

impl HomogeneousSource {
    pub fn radial(x0: f64, y0: f64, z0: f64, amplitude: f64, si: f64, base: f64) -> Self {
        Self { x0, y0, z0, amplitude, si, base, shape: FieldShape::Radial }
    }

    pub fn harmonic(x0: f64, y0: f64, z0: f64, amplitude: f64, si: f64, base: f64) -> Self {
        Self { x0, y0, z0, amplitude, si, base, shape: FieldShape::Harmonic }
    }

    pub fn is_valid(&self) -> bool {
        let si_ok = match self.shape {
            FieldShape::Radial => self.si > 0.0 && self.si <= 3.0,
            FieldShape::Harmonic => self.si == 1.0 || self.si == 2.0 || self.si == 3.0,
        };
        si_ok
            && self.z0 > 0.0
            && self.x0.is_finite()
            && self.y0.is_finite()
            && self.amplitude.is_finite()
            && self.base.is_finite()
    }

    /// Field at `(x, y, z)`, z positive down (observation plane z = 0).
    pub fn field_at(&self, x: f64, y: f64, z: f64) -> f64 {
        let a = x - self.x0;
        let b = y - self.y0;
        let u = self.z0 - z;
        let rho2 = a * a + b * b;
        let r2 = rho2 + u * u;
        let shape = match self.shape {
            FieldShape::Radial => r2.powf(-0.5 * self.si),
            FieldShape::Harmonic => {
                let r = r2.sqrt();
                match self.si as u8 {
                    1 => 1.0 / r,
                    2 => u / (r2 * r),
                    _ => (2.0 * u * u - rho2) / (r2 * r2 * r),
                }
            }
        };
        self.base + self.amplitude * shape
    }

    /// `(∂T/∂x, ∂T/∂y, ∂T/∂z)` at `(x, y, z)`.
    pub fn gradient_at(&self, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
        let a = x - self.x0;
        let b = y - self.y0;
        let u = self.z0 - z;
        let rho2 = a * a + b * b;
        let r2 = rho2 + u * u;
        let amp = self.amplitude;
        match self.shape {
            FieldShape::Radial => {
                // d/dq of A r^-N = -N A r^(-N-2) (q - q0); note z - z0 = -u
                let f = -self.si * amp * r2.powf(-0.5 * self.si - 1.0);
                (f * a, f * b, -f * u)
            }
            FieldShape::Harmonic => {
                let r = r2.sqrt();
                match self.si as u8 {
                    1 => {
                        let r3 = r2 * r;
                        (-amp * a / r3, -amp * b / r3, amp * u / r3)
                    }
                    2 => {
                        let r5 = r2 * r2 * r;
                        let h = -3.0 * amp * u / r5;
                        (h * a, h * b, amp * (2.0 * u * u - rho2) / r5)
                    }
                    _ => {
                        let r7 = r2 * r2 * r2 * r;
                        let h = -amp * (12.0 * u * u - 3.0 * rho2) / r7;
                        (h * a, h * b, amp * u * (6.0 * u * u - 9.0 * rho2) / r7)
                    }
                }
            }
        }
    }
}

/// Homogeneous field sampled at cell centers.
pub fn synth_homogeneous(source: &HomogeneousSource, georef: GridGeoref) -> Grid {
    Grid::from_fn(georef, "nT", |x, y| source.field_at(x, y, 0.0))
}

/// Exact analytic `(Tx, Ty, Tz)` grids for a homogeneous source, in nT/m.
pub fn synth_homogeneous_gradients(source: &HomogeneousSource, georef: GridGeoref) -> [Grid; 3] {
    [
        Grid::from_fn(georef, "nT/m", |x, y| source.gradient_at(x, y, 0.0).0),
        Grid::from_fn(georef, "nT/m", |x, y| source.gradient_at(x, y, 0.0).1),
        Grid::from_fn(georef, "nT/m", |x, y| source.gradient_at(x, y, 0.0).2),
    ]
}

/// Sum of several homogeneous sources (base levels add).
pub fn synth_sum(sources: &[HomogeneousSource], georef: GridGeoref) -> Grid {
    Grid::from_fn(georef, "nT", |x, y| sources.iter().map(|s| s.field_at(x, y, 0.0)).sum())
}

pub fn synth_sum_gradients(sources: &[HomogeneousSource], georef: GridGeoref) -> [Grid; 3] {
    let comp = |k: usize| {
        Grid::from_fn(georef, "nT/m", move |x, y| {
            sources
                .iter()
                .map(|s| {
                    let g = s.gradient_at(x, y, 0.0);
                    [g.0, g.1, g.2][k]
                })
                .sum()
        })
    };
    [comp(0), comp(1), comp(2)]
}

/// Point dipole; angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    /// A·m²
    pub moment: f64,
    pub inclination: f64,
    pub declination: f64,
}

/// Unit vector (north, east, down) for an inclination/declination pair.
fn direction(inclination: f64, declination: f64) -> [f64; 3] {
    let (i, d) = (inclination.to_radians(), declination.to_radians());
    [i.cos() * d.cos(), i.cos() * d.sin(), i.sin()]
}

/// Total-field anomaly of a point dipole, projected on the ambient direction.
///
/// Grid axes are x = east, y = north, z = down.
pub fn synth_dipole(source: &DipoleSource, georef: GridGeoref, field_inclination: f64, field_declination: f64) -> Grid {
    let m_ned = direction(source.inclination, source.declination);
    let f_ned = direction(field_inclination, field_declination);
    // to (east, north, down)
    let m = [m_ned[1], m_ned[0], m_ned[2]];
    let f = [f_ned[1], f_ned[0], f_ned[2]];
    Grid::from_fn(georef, "nT", |x, y| {
        let r = [x - source.x0, y - source.y0, -source.z0];
        let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let rn = r2.sqrt();
        let rhat = [r[0] / rn, r[1] / rn, r[2] / rn];
        let mdotr = m[0] * rhat[0] + m[1] * rhat[1] + m[2] * rhat[2];
        let scale = MU0_OVER_4PI * source.moment / (r2 * rn) * 1e9;
        let b: Vec<f64> = (0..3).map(|k| scale * (3.0 * mdotr * rhat[k] - m[k])).collect();
        b[0] * f[0] + b[1] * f[1] + b[2] * f[2]
    })
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma`.
///
/// Cell `i` draws from a counter-based stream at position `i`, so the result is
/// independent of evaluation order. Masked cells are left untouched.
pub fn add_noise(grid: &Grid, sigma: f64, seed: u64) -> Grid {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    if sigma == 0.0 {
        return grid.clone();
    }
    let values = grid
        .values
        .iter()
        .zip(&grid.mask)
        .enumerate()
        .map(|(i, (&v, &m))| if m { v } else { v + sigma * gaussian_at(seed, i as u64) })
        .collect();
    grid.with_values(values, grid.units.clone())
}
