//! Coupled Brownian increments.
//!
//! Increments are drawn on the finest mesh and aggregated upward, so every
//! coarse level sees the same Brownian path as the fine reference. Normals
//! come from a counter-based generator keyed by `(seed, component, index)`;
//! no increment depends on how many others were drawn before it.

use crate::error::{Error, Result};

/// Identifies the `(seed → increments)` map. Recorded in every study output.
pub const GENERATOR_VERSION: &str = "splitmix64-counter+box-muller-cos/v1";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of Monte-Carlo path `path`: `base ⊕ mix64(path + γ)`.
pub fn path_seed(base: u64, path: u64) -> u64 {
    base ^ mix64(path.wrapping_add(GOLDEN_GAMMA))
}

fn stream_key(seed: u64, component: usize) -> u64 {
    mix64(seed ^ mix64((component as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

fn counter_u64(key: u64, counter: u64) -> u64 {
    mix64(key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Standard normal draw number `index` of Wiener component `component`.
pub fn standard_normal(seed: u64, component: usize, index: u64) -> f64 {
    let key = stream_key(seed, component);
    let a = counter_u64(key, 2 * index);
    let b = counter_u64(key, 2 * index + 1);
    let unit = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * unit; // (0, 1]
    let u2 = (b >> 11) as f64 * unit; // [0, 1)
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `d1` Wiener components sampled on `m_fine` equal steps of `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianLattice {
    d1: usize,
    m_fine: usize,
    horizon: f64,
    seed: u64,
    increments: Vec<Vec<f64>>,
}

impl BrownianLattice {
    pub fn generate(d1: usize, m_fine: usize, horizon: f64, seed: u64) -> Result<Self> {
        if d1 == 0 {
            return Err(Error::config("need at least one Wiener component"));
        }
        if !m_fine.is_power_of_two() {
            return Err(Error::config(format!("m_fine = {m_fine} is not a power of 2")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {horizon}")));
        }
        let scale = (horizon / m_fine as f64).sqrt();
        let increments = (0..d1)
            .map(|k| (0..m_fine as u64).map(|i| scale * standard_normal(seed, k, i)).collect())
            .collect();
        Ok(Self { d1, m_fine, horizon, seed, increments })
    }

    /// Wraps externally supplied fine increments (one row per component).
    pub fn from_increments(increments: Vec<Vec<f64>>, horizon: f64) -> Result<Self> {
        let d1 = increments.len();
        let m_fine = increments.first().map_or(0, Vec::len);
        if d1 == 0 || !m_fine.is_power_of_two() || increments.iter().any(|r| r.len() != m_fine) {
            return Err(Error::config("increments must be d1 rows of equal power-of-2 length"));
        }
        Ok(Self { d1, m_fine, horizon, seed: 0, increments })
    }

    pub fn d1(&self) -> usize {
        self.d1
    }

    pub fn m_fine(&self) -> usize {
        self.m_fine
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    /// Increments on `m` steps. See [`coarsen_increments`] for the summation order.
    pub fn coarsen(&self, m: usize) -> Result<Vec<Vec<f64>>> {
        coarsen_increments(&self.increments, m)
    }
}

/// Aggregates rows of power-of-2 length down to `m` entries.
///
/// The canonical order is repeated pairwise halving: each pass replaces
/// `(x₂ⱼ, x₂ⱼ₊₁)` by `x₂ⱼ + x₂ⱼ₊₁`. Because every dyadic level is an
/// intermediate result of the same passes, coarsening in stages is bitwise
/// identical to coarsening in one call.
pub fn coarsen_increments(rows: &[Vec<f64>], m: usize) -> Result<Vec<Vec<f64>>> {
    let len = rows.first().map_or(0, Vec::len);
    if m == 0 || !len.is_multiple_of(m) || !(len / m).is_power_of_two() {
        return Err(Error::config(format!("level {m} does not divide {len} by a power of 2")));
    }
    Ok(rows
        .iter()
        .map(|row| {
            let mut cur = row.clone();
            while cur.len() > m {
                cur = cur.chunks_exact(2).map(|p| p[0] + p[1]).collect();
            }
            cur
        })
        .collect())
}
