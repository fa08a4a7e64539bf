//! Self-testing: fidelity with the partially entangled state lower-bounded
//! by an affine function s_α·B_α + μ_α of the tilted Bell value.

use serde::{Deserialize, Serialize};

use crate::behavior::{expectation_values, Behavior, Expectations};
use crate::error::{out_of_range, Result};
use crate::tilted::{alpha_from_theta, evaluate, quantum_max, theta_from_alpha};

/// Smallest angle for which the fidelity bound is proven.
pub const THETA_MIN: f64 = 0.14;

/// Uniform grid size for the α* search before golden-section refinement.
pub const ALPHA_GRID: usize = 2000;

const RANGE_SLACK: f64 = 1e-12;

/// Largest admissible α, i.e. α(THETA_MIN) ≈ 1.85266.
pub fn alpha_max() -> f64 {
    alpha_from_theta(THETA_MIN).expect("THETA_MIN is a valid angle")
}

fn check_valid(alpha: f64) -> Result<f64> {
    let hi = alpha_max();
    if !(alpha >= 0.0 && alpha <= hi + RANGE_SLACK) {
        return Err(out_of_range("alpha", alpha, &format!("[0, {hi:.6}]")));
    }
    Ok(alpha.min(hi))
}

/// (s_α, μ_α) with μ_α chosen so that the bound is exactly 1 at B = √(8+2α²).
pub fn slope_offset(alpha: f64) -> Result<(f64, f64)> {
    let alpha = check_valid(alpha)?;
    let a2 = alpha * alpha;
    let q = (8.0 + 2.0 * a2).sqrt();
    let l = alpha + 2.0;
    let inner = 1.0 + ((4.0 - a2) / (8.0 + 2.0 * a2)).sqrt() + (2.0 * a2 / (8.0 + 2.0 * a2)).sqrt();
    let s = (1.0 - 0.25 * inner) / (q - l);
    Ok((s, 1.0 - s * q))
}

/// s_α·B + μ_α without clamping.
pub fn raw_fidelity_bound(alpha: f64, bell_value: f64) -> Result<f64> {
    let (s, mu) = slope_offset(alpha)?;
    Ok(s * bell_value + mu)
}

/// Fidelity lower bound as reported: clamped below at 0.
pub fn fidelity_bound(alpha: f64, bell_value: f64) -> Result<f64> {
    Ok(raw_fidelity_bound(alpha, bell_value)?.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityBound {
    pub alpha_star: f64,
    pub theta_star: f64,
    /// slope·bell_value + offset, unclamped.
    pub certified_fidelity: f64,
    pub slope: f64,
    pub offset: f64,
    /// B_{α*} of the input behavior.
    pub bell_value: f64,
    /// Set when the bound does not beat the best separable fidelity cos²θ*.
    pub non_informative: bool,
}

impl FidelityBound {
    pub fn reported_fidelity(&self) -> f64 {
        self.certified_fidelity.max(0.0)
    }

    /// cos²θ*, the largest fidelity any separable state reaches.
    pub fn separable_reference(&self) -> f64 {
        self.theta_star.cos().powi(2)
    }
}

pub fn di_estimate(b: &Behavior) -> Result<FidelityBound> {
    Ok(di_estimate_from_expectations(&expectation_values(b)?))
}

/// Maximizes s_α·B_α + μ_α over the valid α range.
pub fn di_estimate_from_expectations(e: &Expectations) -> FidelityBound {
    let hi = alpha_max();
    let objective = |alpha: f64| {
        let (s, mu) = slope_offset(alpha).expect("alpha inside the searched range");
        s * evaluate(alpha, e) + mu
    };

    let step = hi / (ALPHA_GRID - 1) as f64;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for k in 0..ALPHA_GRID {
        let v = objective(k as f64 * step);
        if v > best_value {
            best_value = v;
            best = k;
        }
    }
    let lo = best.saturating_sub(1) as f64 * step;
    let up = ((best + 1).min(ALPHA_GRID - 1) as f64 * step).min(hi);
    let (mut alpha_star, refined) = golden_section_max(objective, lo, up, 1e-12);
    if refined < best_value {
        alpha_star = best as f64 * step;
    }

    let (slope, offset) = slope_offset(alpha_star).expect("alpha inside the searched range");
    let bell_value = evaluate(alpha_star, e);
    let certified_fidelity = slope * bell_value + offset;
    let theta_star = theta_from_alpha(alpha_star).expect("alpha inside [0, 2]");
    FidelityBound {
        alpha_star,
        theta_star,
        certified_fidelity,
        slope,
        offset,
        bell_value,
        non_informative: certified_fidelity <= theta_star.cos().powi(2),
    }
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Separable reference for a nominal angle: cos²θ.
pub fn separable_fidelity(theta: f64) -> f64 {
    theta.cos().powi(2)
}

/// Bound at the quantum maximum; 1 up to rounding for every valid α.
pub fn bound_at_quantum_max(alpha: f64) -> Result<f64> {
    raw_fidelity_bound(alpha, quantum_max(alpha)?)
}
