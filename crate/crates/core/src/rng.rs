//! Deterministic randomness.
//!
//! Two sources are used: a counter-based Gaussian stream for grid noise (each
//! cell's draw depends only on `(seed, cell index)`, so parallel evaluation
//! reproduces the serial stream), and named sub-seeds derived from the single
//! run seed so stages can be re-run on their own.

use sha2::{Digest, Sha256};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in the open interval (0, 1) from 53 random bits.
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate for position `counter` of the stream keyed by `seed`.
///
/// Box-Muller on two hashed uniforms; the result is a pure function of its
/// arguments.
pub fn gaussian_at(seed: u64, counter: u64) -> f64 {
    let key = splitmix64(seed ^ 0xD1B5_4A32_D192_ED03);
    let a = splitmix64(key ^ splitmix64(counter.wrapping_mul(2)));
    let b = splitmix64(key ^ splitmix64(counter.wrapping_mul(2).wrapping_add(1)));
    let u1 = unit_open(a);
    let u2 = unit_open(b);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Derives a stage seed from the run seed and a stage name.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
