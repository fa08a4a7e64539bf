//! The tilted CHSH family
//! B_α = α⟨A₀⟩ + ⟨A₀B₀⟩ + ⟨A₀B₁⟩ + ⟨A₁B₀⟩ − ⟨A₁B₁⟩ ≤ α + 2,
//! with quantum maximum √(8 + 2α²) reached by cos θ|00⟩ + sin θ|11⟩.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{Affine, Expectations, MeasurementSet};
use crate::error::{out_of_range, Result};
use crate::linalg::{hermitian_eigensystem, kron, ComplexMatrix};
use crate::quantum::{Observable, PesState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedBell {
    alpha: f64,
}

impl TiltedBell {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn local_bound(&self) -> f64 {
        self.alpha + 2.0
    }

    pub fn quantum_max(&self) -> f64 {
        (8.0 + 2.0 * self.alpha * self.alpha).sqrt()
    }

    pub fn evaluate(&self, e: &Expectations) -> f64 {
        evaluate(self.alpha, e)
    }

    /// (B − L)/(Q − L); undefined (NaN) at α = 2 where Q = L.
    pub fn relative_violation(&self, bell_value: f64) -> f64 {
        (bell_value - self.local_bound()) / (self.quantum_max() - self.local_bound())
    }

    /// B_α as an affine functional of the 16 probabilities, marginals
    /// averaged over Bob's input.
    pub fn functional(&self) -> Affine {
        let mut f = Affine::alice_expectation(0).scaled(self.alpha);
        for x in 0..2 {
            for y in 0..2 {
                let sign = if x * y == 1 { -1.0 } else { 1.0 };
                f = f.plus(&Affine::correlator(x, y).scaled(sign));
            }
        }
        f
    }

    /// Bell operator α A₀⊗I + A₀⊗(B₀ + B₁) + A₁⊗(B₀ − B₁).
    pub fn operator(&self, m: &MeasurementSet) -> ComplexMatrix {
        let id = ComplexMatrix::identity(2);
        let a0 = m.alice[0].matrix();
        let a1 = m.alice[1].matrix();
        let b0 = m.bob[0].matrix();
        let b1 = m.bob[1].matrix();
        let k0 = &(&id.scale_real(self.alpha) + &b0) + &b1;
        let k1 = &b0 - &b1;
        &kron(&a0, &k0) + &kron(&a1, &k1)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&alpha) {
        return Err(out_of_range("alpha", alpha, "[0, 2]"));
    }
    Ok(())
}

pub fn evaluate(alpha: f64, e: &Expectations) -> f64 {
    let c = &e.correlators;
    alpha * e.alice[0] + c[0][0] + c[0][1] + c[1][0] - c[1][1]
}

pub fn local_bound(alpha: f64) -> Result<f64> {
    Ok(TiltedBell::new(alpha)?.local_bound())
}

pub fn quantum_max(alpha: f64) -> Result<f64> {
    Ok(TiltedBell::new(alpha)?.quantum_max())
}

/// θ = ½·atan2(√(4 − α²), √2·α); finite at α = 0 where it gives π/4.
pub fn theta_from_alpha(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(0.5 * (4.0 - alpha * alpha).sqrt().atan2(2f64.sqrt() * alpha))
}

/// α = 2/√(1 + 2 tan²2θ), written as 2cos2θ/√(cos²2θ + 2 sin²2θ).
pub fn alpha_from_theta(theta: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_4).contains(&theta) {
        return Err(out_of_range("theta", theta, "[0, pi/4]"));
    }
    if theta == FRAC_PI_4 {
        return Ok(0.0);
    }
    let (s, c) = (2.0 * theta).sin_cos();
    Ok((2.0 * c / (c * c + 2.0 * s * s).sqrt()).clamp(0.0, 2.0))
}

/// Measurement angles in the x–z plane, measured from the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingsAnsatz {
    pub alice_angles: [f64; 2],
    pub bob_angles: [f64; 2],
}

impl SettingsAnsatz {
    pub fn measurement_set(&self) -> MeasurementSet {
        MeasurementSet {
            alice: self.alice_angles.map(Observable::xz),
            bob: self.bob_angles.map(Observable::xz),
        }
    }
}

/// A₀ = σ_z, A₁ = σ_x, B₀/B₁ = cos μ σ_z ± sin μ σ_x with tan μ = sin 2θ.
pub fn optimal_settings(theta: f64) -> Result<SettingsAnsatz> {
    if !(theta > 0.0 && theta <= FRAC_PI_4) {
        return Err(out_of_range("theta", theta, "(0, pi/4]"));
    }
    let mu = (2.0 * theta).sin().atan();
    Ok(SettingsAnsatz {
        alice_angles: [0.0, FRAC_PI_2],
        bob_angles: [mu, -mu],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeeSawResult {
    pub value: f64,
    pub settings: SettingsAnsatz,
    pub state: PesState,
    pub iterations: usize,
}

/// Alternating maximization of the Bell operator: top eigenvector for the
/// state, then the best x–z-plane direction for each observable with the
/// rest held fixed. Each step is monotone, so the value never decreases.
pub fn see_saw_max(alpha: f64, iterations: usize, seed: u64) -> Result<SeeSawResult> {
    let bell = TiltedBell::new(alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angle = || rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut settings = SettingsAnsatz {
        alice_angles: [angle(), angle()],
        bob_angles: [angle(), angle()],
    };

    let sx = crate::linalg::pauli_x();
    let sz = crate::linalg::pauli_z();
    let id = ComplexMatrix::identity(2);

    let top = |s: &SettingsAnsatz| {
        let es = hermitian_eigensystem(&bell.operator(&s.measurement_set()))
            .expect("Bell operator is Hermitian");
        (es.values[0], es.vectors.column(0))
    };
    // Best angle for maximizing ⟨ψ| (n·σ) ⊗ K |ψ⟩ or ⟨ψ| K ⊗ (n·σ) |ψ⟩.
    let best_angle = |psi: &[Complex64], alice_side: bool, k: &ComplexMatrix, current: f64| {
        let (ox, oz) = if alice_side {
            (kron(&sx, k), kron(&sz, k))
        } else {
            (kron(k, &sx), kron(k, &sz))
        };
        let rx = ox.expectation(psi).re;
        let rz = oz.expectation(psi).re;
        if rx.hypot(rz) < 1e-300 {
            current
        } else {
            rx.atan2(rz)
        }
    };

    let (mut value, mut psi) = top(&settings);
    let mut used = 0;
    let mut stalled = 0;
    for it in 0..iterations {
        used = it + 1;
        let m = settings.measurement_set();
        let (b0, b1) = (m.bob[0].matrix(), m.bob[1].matrix());
        let k0 = &(&id.scale_real(alpha) + &b0) + &b1;
        let k1 = &b0 - &b1;
        settings.alice_angles[0] = best_angle(&psi, true, &k0, settings.alice_angles[0]);
        settings.alice_angles[1] = best_angle(&psi, true, &k1, settings.alice_angles[1]);

        let m = settings.measurement_set();
        let (a0, a1) = (m.alice[0].matrix(), m.alice[1].matrix());
        let j0 = &a0 + &a1;
        let j1 = &a0 - &a1;
        settings.bob_angles[0] = best_angle(&psi, false, &j0, settings.bob_angles[0]);
        settings.bob_angles[1] = best_angle(&psi, false, &j1, settings.bob_angles[1]);

        let (next, next_psi) = top(&settings);
        let gain = next - value;
        value = next.max(value);
        psi = next_psi;
        if gain < 1e-15 {
            stalled += 1;
            if stalled >= 5 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(SeeSawResult {
        value,
        settings,
        state: schmidt_pes(&psi),
        iterations: used,
    })
}

/// PES angle with the same Schmidt coefficients as `psi`.
fn schmidt_pes(psi: &[Complex64]) -> PesState {
    let m = ComplexMatrix::from_vec(2, 2, psi.to_vec()).expect("two-qubit amplitudes");
    let es = hermitian_eigensystem(&(&m * &m.adjoint())).expect("Hermitian");
    let big = es.values[0].max(0.0).sqrt();
    let small = es.values[1].max(0.0).sqrt();
    PesState::new(small.atan2(big)).expect("Schmidt angle lies in [0, pi/4]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{born_behavior, expectation_values};
    use std::f64::consts::SQRT_2;

    fn pes_value(theta: f64) -> f64 {
        let alpha = alpha_from_theta(theta).unwrap();
        let s = optimal_settings(theta).unwrap();
        let b = born_behavior(&PesState::new(theta).unwrap().density(), &s.measurement_set());
        evaluate(alpha, &expectation_values(&b).unwrap())
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(evaluate(0.7, &Expectations::default()), 0.0);
        let pr = Expectations {
            alice: [0.0; 2],
            bob: [0.0; 2],
            correlators: [[1.0, 1.0], [1.0, -1.0]],
        };
        assert_eq!(evaluate(0.0, &pr), 4.0);
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(local_bound(0.0).unwrap(), 2.0);
        assert!((quantum_max(0.0).unwrap() - 2.0 * SQRT_2).abs() < 1e-15);
        assert_eq!(local_bound(2.0).unwrap(), 4.0);
        assert_eq!(quantum_max(2.0).unwrap(), 4.0);
        let t = TiltedBell::new(1.914).unwrap();
        assert!((t.local_bound() - 3.914).abs() < 1e-12);
        assert!((t.quantum_max() - 3.91494).abs() < 1e-5);
        let (lo, hi) = (t.relative_violation(3.87), t.relative_violation(3.89));
        assert!(lo < -32.84 && -32.84 < hi);
        assert!(quantum_max(2.1).is_err());
        assert!(local_bound(-0.1).is_err());
    }

    #[test]
    fn quantum_max_dominates_local_bound() {
        for k in 0..=200 {
            let t = TiltedBell::new(2.0 * k as f64 / 200.0).unwrap();
            assert!(t.quantum_max() >= t.local_bound() - 1e-15);
            if k < 200 {
                assert!(t.quantum_max() > t.local_bound());
            }
        }
    }

    #[test]
    fn conversion_examples() {
        assert_eq!(theta_from_alpha(2.0).unwrap(), 0.0);
        assert_eq!(alpha_from_theta(FRAC_PI_4).unwrap(), 0.0);
        assert!((theta_from_alpha(0.0).unwrap() - FRAC_PI_4).abs() < 1e-15);
        let theta = theta_from_alpha(0.949).unwrap();
        assert!((theta - 0.45975).abs() < 5e-5);
        assert!((theta - 0.45946).abs() < 5e-3);
        assert!(alpha_from_theta(-0.01).is_err());
        assert!(theta_from_alpha(2.5).is_err());
    }

    #[test]
    fn conversions_are_inverse() {
        for k in 0..=200 {
            let theta = 0.05 + (FRAC_PI_4 - 0.1) * k as f64 / 200.0;
            let back = theta_from_alpha(alpha_from_theta(theta).unwrap()).unwrap();
            assert!((back - theta).abs() < 1e-9, "theta={theta}");
        }
        for k in 0..=20 {
            let theta = FRAC_PI_4 - 0.05 * k as f64 / 20.0;
            let back = theta_from_alpha(alpha_from_theta(theta).unwrap()).unwrap();
            assert!((back - theta).abs() < 1e-4);
        }
    }

    #[test]
    fn optimal_settings_reach_quantum_max() {
        let s = optimal_settings(FRAC_PI_4).unwrap();
        assert!((s.bob_angles[0] - FRAC_PI_4).abs() < 1e-15);
        assert!((pes_value(FRAC_PI_4) - 2.0 * SQRT_2).abs() < 1e-12);

        for k in 1..=100 {
            let theta = FRAC_PI_4 * k as f64 / 100.0;
            let q = quantum_max(alpha_from_theta(theta).unwrap()).unwrap();
            assert!((pes_value(theta) - q).abs() < 1e-9, "theta={theta}");
        }
        assert!(optimal_settings(0.0).is_err());
    }

    #[test]
    fn optimal_value_closed_form() {
        // 4√(1+t²)/√(1+2t²) with t = tan 2θ.
        for &(theta, expected) in &[(0.45975, 3.13066), (0.10539, 3.91522)] {
            let t = (2.0f64 * theta).tan();
            let closed = 4.0 * (1.0 + t * t).sqrt() / (1.0 + 2.0 * t * t).sqrt();
            assert!((closed - expected).abs() < 5e-5, "{closed}");
            assert!((pes_value(theta) - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn see_saw_examples() {
        let r = see_saw_max(0.0, 2000, 1).unwrap();
        assert!((r.value - 2.0 * SQRT_2).abs() < 1e-6);
        assert!((r.state.theta() - FRAC_PI_4).abs() < 1e-3);
        let r = see_saw_max(2.0, 2000, 2).unwrap();
        assert!((r.value - 4.0).abs() < 1e-6);
        let q = quantum_max(1.373).unwrap();
        assert!((q - 3.430781).abs() < 1e-6);
        let r = see_saw_max(1.373, 2000, 3).unwrap();
        assert!(r.value <= q + 1e-9 && r.value >= q - 1e-6, "{}", r.value);
    }

    #[test]
    fn see_saw_is_deterministic_per_seed() {
        let a = see_saw_max(0.8, 500, 11).unwrap();
        let b = see_saw_max(0.8, 500, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn algebraic_bound_on_expectations() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let alpha = rng.random_range(0.0..=2.0);
            let mut u = || rng.random_range(-1.0..=1.0);
            let e = Expectations {
                alice: [u(), u()],
                bob: [u(), u()],
                correlators: [[u(), u()], [u(), u()]],
            };
            assert!(evaluate(alpha, &e) <= 4.0 + alpha);
        }
    }

    #[test]
    fn functional_matches_evaluate() {
        let theta = 0.3;
        let alpha = alpha_from_theta(theta).unwrap();
        let s = optimal_settings(theta).unwrap();
        let b = born_behavior(&PesState::new(theta).unwrap().density(), &s.measurement_set());
        let t = TiltedBell::new(alpha).unwrap();
        let e = expectation_values(&b).unwrap();
        assert!((t.functional().evaluate(&b) - t.evaluate(&e)).abs() < 1e-14);
        let op = t.operator(&s.measurement_set());
        let direct = PesState::new(theta).unwrap().density().expectation(&op);
        assert!((direct - t.evaluate(&e)).abs() < 1e-12);
    }
}
