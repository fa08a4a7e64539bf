//! Conditional probability tables P(ab|xy) for two parties with binary
//! inputs and ±1 outcomes.
//!
//! Storage is flat: index `(2x + y)·4 + 2a + b`, where outcome index 0 is
//! +1 and 1 is −1. The same order is used by [`Affine`] coefficients, so a
//! functional and a behavior pair up entrywise.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{out_of_range, Error, Result};
use crate::linalg::kron;
use crate::quantum::{DensityMatrix, Observable};

/// Entries below this are treated as rounding dust and clipped to zero;
/// anything more negative is rejected.
pub const PROBABILITY_FLOOR: f64 = -1e-12;
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Default threshold for calling raw frequencies no-signaling.
pub const DEFAULT_SIGNALING_TOL: f64 = 1e-9;
/// Marginals are only well defined below this signaling level.
pub const MARGINAL_TOL: f64 = 1e-6;

const SIGN: [f64; 2] = [1.0, -1.0];
const OUTCOME_KEYS: [&str; 4] = ["++", "+-", "-+", "--"];

#[inline]
pub const fn index(a: usize, b: usize, x: usize, y: usize) -> usize {
    (2 * x + y) * 4 + 2 * a + b
}

/// Key of the form `"ab|xy"`, e.g. `"+-|01"`.
pub fn cell_key(a: usize, b: usize, x: usize, y: usize) -> String {
    format!("{}|{}{}", OUTCOME_KEYS[2 * a + b], x, y)
}

pub fn parse_cell_key(key: &str) -> Option<usize> {
    let (ab, xy) = key.split_once('|')?;
    let o = OUTCOME_KEYS.iter().position(|k| *k == ab)?;
    let mut chars = xy.chars();
    let x = chars.next()?.to_digit(10)? as usize;
    let y = chars.next()?.to_digit(10)? as usize;
    if chars.next().is_some() || x > 1 || y > 1 {
        return None;
    }
    Some(index(o / 2, o % 2, x, y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behavior {
    p: [f64; 16],
}

impl Behavior {
    pub fn new(mut p: [f64; 16]) -> Result<Self> {
        for (k, v) in p.iter_mut().enumerate() {
            if !v.is_finite() || *v < PROBABILITY_FLOOR {
                return Err(Error::InvalidBehavior(format!("entry {k} = {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        for x in 0..2 {
            for y in 0..2 {
                let s: f64 = (0..4).map(|o| p[(2 * x + y) * 4 + o]).sum();
                if (s - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidBehavior(format!(
                        "setting ({x},{y}) sums to {s}"
                    )));
                }
            }
        }
        Ok(Self { p })
    }

    pub fn uniform() -> Self {
        Self { p: [0.25; 16] }
    }

    /// Local deterministic strategy: `alice[x]`, `bob[y]` are outcome
    /// indices (0 for +1, 1 for −1).
    pub fn deterministic(alice: [usize; 2], bob: [usize; 2]) -> Self {
        let mut p = [0.0; 16];
        for x in 0..2 {
            for y in 0..2 {
                p[index(alice[x], bob[y], x, y)] = 1.0;
            }
        }
        Self { p }
    }

    /// The PR box: a·b = (−1)^{xy} with uniform marginals.
    pub fn pr_box() -> Self {
        let mut p = [0.0; 16];
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let product = SIGN[a] * SIGN[b];
                        let want = if x * y == 1 { -1.0 } else { 1.0 };
                        if product == want {
                            p[index(a, b, x, y)] = 0.5;
                        }
                    }
                }
            }
        }
        Self { p }
    }

    pub fn probabilities(&self) -> &[f64; 16] {
        &self.p
    }

    pub fn get(&self, a: usize, b: usize, x: usize, y: usize) -> f64 {
        self.p[index(a, b, x, y)]
    }

    /// Σ_b p(ab|xy).
    pub fn alice_marginal(&self, a: usize, x: usize, y: usize) -> f64 {
        self.get(a, 0, x, y) + self.get(a, 1, x, y)
    }

    /// Σ_a p(ab|xy).
    pub fn bob_marginal(&self, b: usize, x: usize, y: usize) -> f64 {
        self.get(0, b, x, y) + self.get(1, b, x, y)
    }

    /// Same table with Alice's outcome labels swapped for every input.
    pub fn flip_alice_outcomes(&self) -> Self {
        let mut p = [0.0; 16];
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        p[index(1 - a, b, x, y)] = self.get(a, b, x, y);
                    }
                }
            }
        }
        Self { p }
    }

    /// Convex combination (1 − t)·self + t·other.
    pub fn mix(&self, other: &Behavior, t: f64) -> Self {
        let mut p = [0.0; 16];
        for (k, v) in p.iter_mut().enumerate() {
            *v = (1.0 - t) * self.p[k] + t * other.p[k];
        }
        Self { p }
    }

    pub fn total_variation(&self, other: &Behavior) -> f64 {
        // Maximum over settings of the per-setting TV distance.
        (0..4)
            .map(|s| {
                0.5 * (0..4)
                    .map(|o| (self.p[s * 4 + o] - other.p[s * 4 + o]).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Collins–Gisin coordinates with setting-averaged marginals.
    pub fn cg_coordinates(&self) -> CgCoordinates {
        let mut c = CgCoordinates::default();
        for x in 0..2 {
            c.alice[x] = 0.5 * (self.alice_marginal(0, x, 0) + self.alice_marginal(0, x, 1));
        }
        for y in 0..2 {
            c.bob[y] = 0.5 * (self.bob_marginal(0, 0, y) + self.bob_marginal(0, 1, y));
        }
        for x in 0..2 {
            for y in 0..2 {
                c.joint[x][y] = self.get(0, 0, x, y);
            }
        }
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// P_A(+|x), P_B(+|y) and P(++|xy): the eight numbers that determine a
/// no-signaling behavior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CgCoordinates {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
    pub joint: [[f64; 2]; 2],
}

impl CgCoordinates {
    /// Rebuilds the full table. Entries may be negative if the joint term
    /// lies outside its Fréchet bounds.
    pub fn to_table(&self) -> [f64; 16] {
        let mut p = [0.0; 16];
        for x in 0..2 {
            for y in 0..2 {
                let (pa, pb, pab) = (self.alice[x], self.bob[y], self.joint[x][y]);
                p[index(0, 0, x, y)] = pab;
                p[index(0, 1, x, y)] = pa - pab;
                p[index(1, 0, x, y)] = pb - pab;
                p[index(1, 1, x, y)] = 1.0 - pa - pb + pab;
            }
        }
        p
    }
}

impl Serialize for Behavior {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut table = BTreeMap::new();
        for x in 0..2 {
            for y in 0..2 {
                let s = (2 * x + y) * 4;
                let row: [f64; 4] = [self.p[s], self.p[s + 1], self.p[s + 2], self.p[s + 3]];
                table.insert(format!("{x}{y}"), row);
            }
        }
        table.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Behavior {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let table = BTreeMap::<String, [f64; 4]>::deserialize(deserializer)?;
        let mut p = [0.0; 16];
        for x in 0..2 {
            for y in 0..2 {
                let key = format!("{x}{y}");
                let row = table
                    .get(&key)
                    .ok_or_else(|| serde::de::Error::custom(format!("missing setting `{key}`")))?;
                p[(2 * x + y) * 4..(2 * x + y) * 4 + 4].copy_from_slice(row);
            }
        }
        if table.len() != 4 {
            return Err(serde::de::Error::custom("expected exactly four settings"));
        }
        Behavior::new(p).map_err(serde::de::Error::custom)
    }
}

/// Affine functional Σ c(ab|xy)·p(ab|xy) + constant over behaviors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub coefficients: [f64; 16],
    pub constant: f64,
}

impl Affine {
    pub fn zero() -> Self {
        Self {
            coefficients: [0.0; 16],
            constant: 0.0,
        }
    }

    pub fn evaluate(&self, b: &Behavior) -> f64 {
        self.coefficients
            .iter()
            .zip(b.probabilities())
            .map(|(c, p)| c * p)
            .sum::<f64>()
            + self.constant
    }

    /// ⟨A_x⟩ with the marginal averaged over Bob's two inputs.
    pub fn alice_expectation(x: usize) -> Self {
        let mut f = Self::zero();
        for y in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    f.coefficients[index(a, b, x, y)] = 0.5 * SIGN[a];
                }
            }
        }
        f
    }

    /// ⟨B_y⟩ with the marginal averaged over Alice's two inputs.
    pub fn bob_expectation(y: usize) -> Self {
        let mut f = Self::zero();
        for x in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    f.coefficients[index(a, b, x, y)] = 0.5 * SIGN[b];
                }
            }
        }
        f
    }

    /// ⟨A_x B_y⟩ = P(a=b|xy) − P(a≠b|xy).
    pub fn correlator(x: usize, y: usize) -> Self {
        let mut f = Self::zero();
        for a in 0..2 {
            for b in 0..2 {
                f.coefficients[index(a, b, x, y)] = SIGN[a] * SIGN[b];
            }
        }
        f
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        out.coefficients.iter_mut().for_each(|c| *c *= s);
        out.constant *= s;
        out
    }

    pub fn plus(&self, other: &Affine) -> Self {
        let mut out = *self;
        for (c, o) in out.coefficients.iter_mut().zip(&other.coefficients) {
            *c += o;
        }
        out.constant += other.constant;
        out
    }

    /// Rewrites the functional on no-signaling behaviors as
    /// `constant + Σ coefficient·coordinate` in Collins–Gisin coordinates.
    pub fn to_cg(&self) -> (f64, CgCoordinates) {
        let c = &self.coefficients;
        let mut constant = self.constant;
        let mut coef = CgCoordinates::default();
        for x in 0..2 {
            for y in 0..2 {
                let c_pp = c[index(0, 0, x, y)];
                let c_pm = c[index(0, 1, x, y)];
                let c_mp = c[index(1, 0, x, y)];
                let c_mm = c[index(1, 1, x, y)];
                constant += c_mm;
                coef.alice[x] += c_pm - c_mm;
                coef.bob[y] += c_mp - c_mm;
                coef.joint[x][y] += c_pp - c_pm - c_mp + c_mm;
            }
        }
        (constant, coef)
    }

    /// Inverse of [`Affine::to_cg`]: spreads marginal coefficients evenly
    /// over the other party's inputs, so the value on a signaling behavior
    /// equals the value on its Collins–Gisin regularization.
    pub fn from_cg(constant: f64, coef: &CgCoordinates) -> Self {
        let mut f = Self {
            coefficients: [0.0; 16],
            constant,
        };
        for x in 0..2 {
            for y in 0..2 {
                for b in 0..2 {
                    f.coefficients[index(0, b, x, y)] += 0.5 * coef.alice[x];
                }
                for a in 0..2 {
                    f.coefficients[index(a, 0, x, y)] += 0.5 * coef.bob[y];
                }
                f.coefficients[index(0, 0, x, y)] += coef.joint[x][y];
            }
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalingReport {
    pub max_signaling_a: f64,
    pub max_signaling_b: f64,
    pub is_no_signaling: bool,
}

impl SignalingReport {
    pub fn max(&self) -> f64 {
        self.max_signaling_a.max(self.max_signaling_b)
    }
}

/// Measurement directions for both parties, two inputs each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub alice: [Observable; 2],
    pub bob: [Observable; 2],
}

/// p(ab|xy) = Tr[ρ (Π_{a|x} ⊗ Π_{b|y})].
pub fn born_behavior(rho: &DensityMatrix, m: &MeasurementSet) -> Behavior {
    let mut p = [0.0; 16];
    for x in 0..2 {
        for y in 0..2 {
            for a in 0..2 {
                let pa = m.alice[x].projector(a == 0);
                for b in 0..2 {
                    let pb = m.bob[y].projector(b == 0);
                    p[index(a, b, x, y)] = rho.expectation(&kron(&pa, &pb)).max(0.0);
                }
            }
            // Renormalize away rounding so the table is exactly stochastic.
            let s: f64 = (0..4).map(|o| p[(2 * x + y) * 4 + o]).sum();
            for o in 0..4 {
                p[(2 * x + y) * 4 + o] /= s;
            }
        }
    }
    Behavior { p }
}

/// (1 − f)·p + f/4.
pub fn apply_white_noise(b: &Behavior, fraction: f64) -> Result<Behavior> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(out_of_range("fraction", fraction, "[0, 1]"));
    }
    Ok(b.mix(&Behavior::uniform(), fraction))
}

pub fn signaling_report(b: &Behavior, tol: f64) -> SignalingReport {
    let mut sa: f64 = 0.0;
    let mut sb: f64 = 0.0;
    for x in 0..2 {
        for a in 0..2 {
            sa = sa.max((b.alice_marginal(a, x, 0) - b.alice_marginal(a, x, 1)).abs());
        }
    }
    for y in 0..2 {
        for bb in 0..2 {
            sb = sb.max((b.bob_marginal(bb, 0, y) - b.bob_marginal(bb, 1, y)).abs());
        }
    }
    SignalingReport {
        max_signaling_a: sa,
        max_signaling_b: sb,
        is_no_signaling: sa <= tol && sb <= tol,
    }
}

/// Projects finite-statistics frequencies onto the no-signaling set.
///
/// Marginals are averaged over the other party's input; the joint term
/// P(++|xy) is kept. Whenever that leaves a negative reconstructed entry,
/// the joint term is clipped into its Fréchet interval
/// [max(0, P_A + P_B − 1), min(P_A, P_B)], which zeroes the offending
/// entry while holding the marginals fixed.
pub fn collins_gisin_regularize(b: &Behavior) -> Behavior {
    let mut c = b.cg_coordinates();
    for x in 0..2 {
        for y in 0..2 {
            let (pa, pb) = (c.alice[x], c.bob[y]);
            let lo = (pa + pb - 1.0).max(0.0);
            let hi = pa.min(pb);
            c.joint[x][y] = c.joint[x][y].clamp(lo, hi);
        }
    }
    let mut p = c.to_table();
    for v in p.iter_mut() {
        // Clamp leaves at most rounding-level negatives.
        *v = v.max(0.0);
    }
    Behavior { p }
}

/// ⟨A_x⟩, ⟨B_y⟩ and ⟨A_x B_y⟩ of a no-signaling behavior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
    /// `correlators[x][y]` = ⟨A_x B_y⟩.
    pub correlators: [[f64; 2]; 2],
}

impl Expectations {
    pub fn as_tuple(&self) -> [f64; 8] {
        [
            self.alice[0],
            self.alice[1],
            self.bob[0],
            self.bob[1],
            self.correlators[0][0],
            self.correlators[0][1],
            self.correlators[1][0],
            self.correlators[1][1],
        ]
    }
}

pub fn expectation_values(b: &Behavior) -> Result<Expectations> {
    let report = signaling_report(b, MARGINAL_TOL);
    if !report.is_no_signaling {
        return Err(Error::Signaling {
            found: report.max(),
            tol: MARGINAL_TOL,
        });
    }
    let mut e = Expectations::default();
    for x in 0..2 {
        e.alice[x] = Affine::alice_expectation(x).evaluate(b);
        e.bob[x] = Affine::bob_expectation(x).evaluate(b);
        for y in 0..2 {
            e.correlators[x][y] = Affine::correlator(x, y).evaluate(b);
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{random, PesState};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn chsh_settings() -> MeasurementSet {
        MeasurementSet {
            alice: [Observable::xz(0.0), Observable::xz(std::f64::consts::FRAC_PI_2)],
            bob: [Observable::xz(FRAC_PI_4), Observable::xz(-FRAC_PI_4)],
        }
    }

    fn random_settings<R: Rng>(rng: &mut R) -> MeasurementSet {
        MeasurementSet {
            alice: [random::observable(rng), random::observable(rng)],
            bob: [random::observable(rng), random::observable(rng)],
        }
    }

    fn chsh(e: &Expectations) -> f64 {
        e.correlators[0][0] + e.correlators[0][1] + e.correlators[1][0] - e.correlators[1][1]
    }

    #[test]
    fn rejects_unnormalized_and_negative() {
        let mut p = [0.25; 16];
        p[0] = 0.3;
        assert!(Behavior::new(p).is_err());
        let mut p = [0.25; 16];
        p[0] = -1e-6;
        p[1] = 0.5 + 1e-6;
        assert!(Behavior::new(p).is_err());
        let mut p = [0.25; 16];
        p[0] = -1e-13;
        p[1] = 0.5 + 1e-13;
        assert_eq!(Behavior::new(p).unwrap().get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn born_on_maximally_mixed_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = born_behavior(&DensityMatrix::maximally_mixed(), &random_settings(&mut rng));
        for &v in b.probabilities() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn born_perfect_zz_correlation() {
        let rho = PesState::new(FRAC_PI_4).unwrap().density();
        let m = MeasurementSet {
            alice: [Observable::pauli_z(), Observable::pauli_x()],
            bob: [Observable::pauli_z(), Observable::pauli_x()],
        };
        let b = born_behavior(&rho, &m);
        assert!((b.get(0, 0, 0, 0) - 0.5).abs() < 1e-14);
        assert!((b.get(1, 1, 0, 0) - 0.5).abs() < 1e-14);
        assert!(b.get(0, 1, 0, 0).abs() < 1e-14);
        assert!(b.get(1, 0, 0, 0).abs() < 1e-14);
        let e = expectation_values(&b).unwrap();
        assert!((e.correlators[0][0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn white_noise_limits_and_chsh_scaling() {
        let rho = PesState::new(FRAC_PI_4).unwrap().density();
        let b = born_behavior(&rho, &chsh_settings());
        assert_eq!(apply_white_noise(&b, 0.0).unwrap(), b);
        assert_eq!(apply_white_noise(&b, 1.0).unwrap(), Behavior::uniform());
        let noisy = apply_white_noise(&b, 0.005).unwrap();
        let e = expectation_values(&noisy).unwrap();
        assert!((chsh(&e) - 0.995 * 2.0 * SQRT_2).abs() < 1e-12);
        assert!(e.alice[0].abs() < 1e-12);
        assert!(apply_white_noise(&b, 1.5).is_err());
    }

    #[test]
    fn signaling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let b = born_behavior(&random::density(&mut rng), &random_settings(&mut rng));
            assert!(signaling_report(&b, DEFAULT_SIGNALING_TOL).is_no_signaling);
        }
        assert!(signaling_report(&Behavior::pr_box(), DEFAULT_SIGNALING_TOL).is_no_signaling);

        let mut p = *Behavior::uniform().probabilities();
        p[index(0, 0, 0, 0)] += 0.01;
        p[index(1, 0, 0, 0)] -= 0.01;
        let shifted = Behavior::new(p).unwrap();
        let r = signaling_report(&shifted, DEFAULT_SIGNALING_TOL);
        assert!((r.max_signaling_a - 0.01).abs() < 1e-15);
        assert!(!r.is_no_signaling);
        assert!(matches!(expectation_values(&shifted), Err(Error::Signaling { .. })));
    }

    #[test]
    fn regularization_fixes_no_signaling_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let b = born_behavior(&random::density(&mut rng), &random_settings(&mut rng));
            let r = collins_gisin_regularize(&b);
            for (u, v) in b.probabilities().iter().zip(r.probabilities()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert_eq!(collins_gisin_regularize(&Behavior::pr_box()), Behavior::pr_box());
    }

    #[test]
    fn regularization_averages_marginals() {
        // Alice's x=0 marginal is m + ε under y=0 and m − ε under y=1.
        let (m, eps) = (0.5, 0.02);
        let mut p = *Behavior::uniform().probabilities();
        p[index(0, 0, 0, 0)] += eps;
        p[index(1, 0, 0, 0)] -= eps;
        p[index(0, 0, 0, 1)] -= eps;
        p[index(1, 0, 0, 1)] += eps;
        let b = Behavior::new(p).unwrap();
        let r = collins_gisin_regularize(&b);
        for y in 0..2 {
            assert!((r.alice_marginal(0, 0, y) - m).abs() < 1e-15);
        }
        assert!(signaling_report(&r, 1e-12).is_no_signaling);
    }

    #[test]
    fn regularization_clips_inside_frechet_bounds() {
        // Perfectly correlated at y=0, marginal shifted at y=1: the
        // averaged marginal makes p(+-|00) negative before clipping.
        let mut p = [0.0; 16];
        p[index(0, 0, 0, 0)] = 0.5;
        p[index(1, 1, 0, 0)] = 0.5;
        p[index(0, 0, 0, 1)] = 0.3;
        p[index(1, 1, 0, 1)] = 0.7;
        for s in 2..4 {
            for o in 0..4 {
                p[s * 4 + o] = 0.25;
            }
        }
        let b = Behavior::new(p).unwrap();
        let r = collins_gisin_regularize(&b);
        assert!(r.probabilities().iter().all(|&v| v >= 0.0));
        assert!(signaling_report(&r, 1e-12).is_no_signaling);
        assert_eq!(collins_gisin_regularize(&r), r);
    }

    #[test]
    fn expectation_examples() {
        let e = expectation_values(&Behavior::uniform()).unwrap();
        assert!(e.as_tuple().iter().all(|v| v.abs() < 1e-15));

        let theta: f64 = 0.45975;
        let mu = (2.0 * theta).sin().atan();
        let m = MeasurementSet {
            alice: [Observable::xz(0.0), Observable::xz(std::f64::consts::FRAC_PI_2)],
            bob: [Observable::xz(mu), Observable::xz(-mu)],
        };
        let b = born_behavior(&PesState::new(theta).unwrap().density(), &m);
        let e = expectation_values(&b).unwrap();
        assert!((e.alice[0] - (2.0 * theta).cos()).abs() < 1e-12);
        assert!((e.alice[0] - 0.6061).abs() < 1e-3);
    }

    #[test]
    fn json_layout_and_round_trip() {
        let b = Behavior::deterministic([0, 1], [1, 0]);
        let json = b.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["10"], serde_json::json!([0.0, 0.0, 0.0, 1.0]));
        assert_eq!(v["00"], serde_json::json!([0.0, 1.0, 0.0, 0.0]));
        assert_eq!(Behavior::from_json(&json).unwrap(), b);
        assert!(Behavior::from_json(r#"{"00":[1,0,0,0]}"#).is_err());
    }

    #[test]
    fn cell_keys_parse() {
        for k in 0..16 {
            let (s, o) = (k / 4, k % 4);
            let key = cell_key(o / 2, o % 2, s / 2, s % 2);
            assert_eq!(parse_cell_key(&key), Some(k));
        }
        assert_eq!(parse_cell_key("+x|00"), None);
    }

    #[test]
    fn affine_cg_round_trip_on_no_signaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut f = Affine::zero();
            f.coefficients.iter_mut().for_each(|c| *c = rng.random_range(-1.0..1.0));
            f.constant = rng.random_range(-1.0..1.0);
            let b = born_behavior(&random::density(&mut rng), &random_settings(&mut rng));
            let (k, coef) = f.to_cg();
            let g = Affine::from_cg(k, &coef);
            assert!((f.evaluate(&b) - g.evaluate(&b)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn regularization_is_idempotent(raw in proptest::collection::vec(0.0f64..1.0, 16)) {
            let mut p = [0.0; 16];
            for s in 0..4 {
                let total: f64 = raw[s * 4..s * 4 + 4].iter().sum::<f64>() + 1e-9;
                for o in 0..4 {
                    p[s * 4 + o] = (raw[s * 4 + o] + 2.5e-10) / total;
                }
            }
            let b = Behavior::new(p).unwrap();
            let once = collins_gisin_regularize(&b);
            let twice = collins_gisin_regularize(&once);
            prop_assert!(signaling_report(&once, 1e-12).is_no_signaling);
            for (u, v) in once.probabilities().iter().zip(twice.probabilities()) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }

        #[test]
        fn born_expectations_match_trace(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random::density(&mut rng);
            let m = random_settings(&mut rng);
            let e = expectation_values(&born_behavior(&rho, &m)).unwrap();
            let id = crate::linalg::ComplexMatrix::identity(2);
            for x in 0..2 {
                let a = m.alice[x].matrix();
                prop_assert!((e.alice[x] - rho.expectation(&kron(&a, &id))).abs() < 1e-9);
                prop_assert!((e.bob[x] - rho.expectation(&kron(&id, &m.bob[x].matrix()))).abs() < 1e-9);
                for y in 0..2 {
                    let ab = kron(&a, &m.bob[y].matrix());
                    prop_assert!((e.correlators[x][y] - rho.expectation(&ab)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn white_noise_scales_expectations(seed in any::<u64>(), f in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = born_behavior(&random::density(&mut rng), &random_settings(&mut rng));
            let e = expectation_values(&b).unwrap().as_tuple();
            let en = expectation_values(&apply_white_noise(&b, f).unwrap()).unwrap().as_tuple();
            for (u, v) in e.iter().zip(&en) {
                prop_assert!(((1.0 - f) * u - v).abs() < 1e-12);
            }
        }
    }
}
