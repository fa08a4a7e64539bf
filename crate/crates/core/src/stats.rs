//! Finite statistics: Poisson-sampled behaviors and first-order error
//! propagation through affine functionals and −log₂.

use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::behavior::{Affine, Behavior};
use crate::error::{out_of_range, Error, Result};

/// Frequencies with one standard deviation per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredBehavior {
    pub behavior: Behavior,
    pub sigma: [f64; 16],
}

impl MeasuredBehavior {
    /// Infinite statistics: zero uncertainty.
    pub fn exact(behavior: Behavior) -> Self {
        Self {
            behavior,
            sigma: [0.0; 16],
        }
    }
}

pub(crate) fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Draws Poisson counts with means counts·p(ab|xy) and returns the
/// per-setting frequencies n/N with σ = √n / N.
pub fn sample_behavior(b: &Behavior, counts_per_setting: f64, seed: u64) -> Result<MeasuredBehavior> {
    if !(counts_per_setting > 0.0 && counts_per_setting.is_finite()) {
        return Err(out_of_range("counts_per_setting", counts_per_setting, "(0, ∞)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.0; 16];
    let mut sigma = [0.0; 16];
    for setting in 0..4 {
        let cells = setting * 4..setting * 4 + 4;
        let n: Vec<u64> = cells
            .clone()
            .map(|k| poisson(counts_per_setting * b.probabilities()[k], &mut rng))
            .collect();
        let total: u64 = n.iter().sum();
        if total == 0 {
            return Err(Error::InvalidBehavior(format!("setting {setting} drew no counts")));
        }
        let total = total as f64;
        for (k, nk) in cells.zip(n) {
            p[k] = nk as f64 / total;
            sigma[k] = (nk as f64).sqrt() / total;
        }
    }
    Ok(MeasuredBehavior {
        behavior: Behavior::new(p)?,
        sigma,
    })
}

/// (Σ c·p + constant, √Σ c²σ²), treating cells as independent.
pub fn propagate_affine(m: &MeasuredBehavior, coefficients: &[f64; 16], constant: f64) -> (f64, f64) {
    let p = m.behavior.probabilities();
    let value = coefficients.iter().zip(p).map(|(c, p)| c * p).sum::<f64>() + constant;
    let var: f64 = coefficients.iter().zip(&m.sigma).map(|(c, s)| (c * s).powi(2)).sum();
    (value, var.sqrt())
}

pub fn propagate_functional(m: &MeasuredBehavior, f: &Affine) -> (f64, f64) {
    propagate_affine(m, &f.coefficients, f.constant)
}

/// Delta method for −log₂ v.
pub fn propagate_log2(value: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(value > 0.0) {
        return Err(out_of_range("value", value, "(0, 1]"));
    }
    Ok((-value.log2(), sigma / (value * LN_2)))
}

/// Rounds to `digits` significant digits.
pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}
