//! Two-qubit states and single-qubit dichotomic observables.
//!
//! Basis ordering is |00⟩, |01⟩, |10⟩, |11⟩ with Alice's qubit first.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::linalg::{self, hermitian_eigensystem, kron, ComplexMatrix, ONE, ZERO};

/// Polarization-to-bit relabeling applied to the photon source. The
/// source emits in the |HV⟩/|VH⟩ sector; mapping H→0 on Alice and V→0 on
/// Bob sends |HV⟩ → |00⟩ and |VH⟩ → |11⟩.
pub const ALICE_POLARIZATION_TO_BIT: [(char, u8); 2] = [('H', 0), ('V', 1)];
pub const BOB_POLARIZATION_TO_BIT: [(char, u8); 2] = [('V', 0), ('H', 1)];

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const EIGEN_FLOOR: f64 = -1e-10;

/// A validated 4×4 two-qubit density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.rows() != 4 || matrix.cols() != 4 {
            return Err(Error::Dimension {
                expected: "4x4".into(),
                got: format!("{}x{}", matrix.rows(), matrix.cols()),
            });
        }
        let drift = matrix.hermitian_drift();
        if drift > linalg::HERMITIAN_REPAIR_LIMIT {
            return Err(Error::NotHermitian(drift));
        }
        let matrix = if drift > HERMITIAN_TOL {
            matrix.hermitian_part()
        } else {
            matrix
        };
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let es = hermitian_eigensystem(&matrix)?;
        let min = *es.values.last().unwrap();
        if min < EIGEN_FLOOR {
            return Err(Error::InvalidState(format!(
                "minimum eigenvalue {min:e} below {EIGEN_FLOOR:e}"
            )));
        }
        Ok(Self { matrix })
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) amplitude vector.
    pub fn from_pure(psi: &[Complex64]) -> Result<Self> {
        if psi.len() != 4 {
            return Err(Error::Dimension {
                expected: "4 amplitudes".into(),
                got: format!("{}", psi.len()),
            });
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        let unit: Vec<Complex64> = psi.iter().map(|z| z / norm).collect();
        Self::new(ComplexMatrix::outer(&unit, &unit))
    }

    pub fn maximally_mixed() -> Self {
        Self {
            matrix: ComplexMatrix::identity(4).scale_real(0.25),
        }
    }

    /// v·ρ + (1 − v)·I/4.
    pub fn with_white_noise(&self, visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(out_of_range("visibility", visibility, "[0, 1]"));
        }
        let mixed = &self.matrix.scale_real(visibility)
            + &ComplexMatrix::identity(4).scale_real((1.0 - visibility) / 4.0);
        Self::new(mixed)
    }

    /// Convex combination Σ wᵢ ρᵢ; weights are normalized.
    pub fn mixture(parts: &[(f64, DensityMatrix)]) -> Result<Self> {
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if parts.is_empty() || total <= 0.0 || parts.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::InvalidState("mixture weights must be nonnegative with positive sum".into()));
        }
        let mut acc = ComplexMatrix::zeros(4, 4);
        for (w, rho) in parts {
            acc = &acc + &rho.matrix.scale_real(w / total);
        }
        Self::new(acc)
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// U ρ U†.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Result<Self> {
        Self::new(&(u * &self.matrix) * &u.adjoint())
    }

    /// Tr(ρ O) for a Hermitian O; imaginary dust is dropped.
    pub fn expectation(&self, observable: &ComplexMatrix) -> f64 {
        self.matrix.trace_product(observable).re
    }

    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[(i, j)]
    }
}

/// cos θ|00⟩ + sin θ|11⟩ with θ ∈ [0, π/4].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PesState {
    theta: f64,
}

impl PesState {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..=FRAC_PI_4 + 1e-12).contains(&theta) {
            return Err(out_of_range("theta", theta, "[0, pi/4]"));
        }
        Ok(Self {
            theta: theta.min(FRAC_PI_4),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn amplitudes(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.theta.cos(), 0.0),
            ZERO,
            ZERO,
            Complex64::new(self.theta.sin(), 0.0),
        ]
    }

    pub fn density(&self) -> DensityMatrix {
        let a = self.amplitudes();
        DensityMatrix {
            matrix: ComplexMatrix::outer(&a, &a),
        }
    }

    pub fn concurrence(&self) -> f64 {
        (2.0 * self.theta).sin()
    }
}

/// A dichotomic qubit observable n·σ with outcomes ±1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    bloch: [f64; 3],
}

impl Observable {
    pub fn new(bloch: [f64; 3]) -> Result<Self> {
        let norm = bloch.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidObservable(format!(
                "Bloch vector norm {norm} is not 1"
            )));
        }
        Ok(Self { bloch })
    }

    /// Normalizes a nonzero Bloch vector.
    pub fn from_direction(v: [f64; 3]) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidObservable("zero direction".into()));
        }
        Ok(Self {
            bloch: [v[0] / norm, v[1] / norm, v[2] / norm],
        })
    }

    /// cos(angle)·σ_z + sin(angle)·σ_x.
    pub fn xz(angle: f64) -> Self {
        Self {
            bloch: [angle.sin(), 0.0, angle.cos()],
        }
    }

    pub fn pauli_x() -> Self {
        Self { bloch: [1.0, 0.0, 0.0] }
    }

    pub fn pauli_y() -> Self {
        Self { bloch: [0.0, 1.0, 0.0] }
    }

    pub fn pauli_z() -> Self {
        Self { bloch: [0.0, 0.0, 1.0] }
    }

    pub fn bloch(&self) -> [f64; 3] {
        self.bloch
    }

    /// Polar angle in the x–z plane, atan2(n_x, n_z).
    pub fn xz_angle(&self) -> f64 {
        self.bloch[0].atan2(self.bloch[2])
    }

    pub fn matrix(&self) -> ComplexMatrix {
        let [x, y, z] = self.bloch;
        let terms = [
            linalg::pauli_x().scale_real(x),
            linalg::pauli_y().scale_real(y),
            linalg::pauli_z().scale_real(z),
        ];
        &(&terms[0] + &terms[1]) + &terms[2]
    }

    /// (I + s·n·σ)/2 for outcome s = ±1 (`positive` selects +1).
    pub fn projector(&self, positive: bool) -> ComplexMatrix {
        let sign = if positive { 1.0 } else { -1.0 };
        (&ComplexMatrix::identity(2) + &self.matrix().scale_real(sign)).scale_real(0.5)
    }

    /// Single-letter label when the observable is a Pauli axis.
    pub fn pauli_label(&self) -> Option<char> {
        let labels = ['X', 'Y', 'Z'];
        self.bloch
            .iter()
            .position(|&c| (c - 1.0).abs() < 1e-12)
            .map(|k| labels[k])
    }

    pub fn from_pauli_label(label: &str) -> Result<Self> {
        match label.trim() {
            "X" | "x" => Ok(Self::pauli_x()),
            "Y" | "y" => Ok(Self::pauli_y()),
            "Z" | "z" => Ok(Self::pauli_z()),
            other => Err(Error::InvalidObservable(format!("unknown Pauli label `{other}`"))),
        }
    }
}

/// Tr(ρ²).
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix.trace_product(&rho.matrix).re
}

/// ⟨ψ(θ)|ρ|ψ(θ)⟩.
pub fn fidelity_with_pes(rho: &DensityMatrix, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let m = &rho.matrix;
    c * c * m[(0, 0)].re + s * s * m[(3, 3)].re + 2.0 * s * c * m[(0, 3)].re
}

/// Wootters concurrence.
///
/// Uses the singular values of τ_ij = ⟨vᵢ|ṽⱼ⟩, with vᵢ the subnormalized
/// eigenvectors of ρ and ṽ = (σ_y⊗σ_y)|v*⟩. These equal the square roots
/// of the eigenvalues of ρρ̃ without squaring small values first.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let yy = kron(&linalg::pauli_y(), &linalg::pauli_y());
    let es = hermitian_eigensystem(&rho.matrix).expect("density matrix is Hermitian");
    let vs: Vec<Vec<Complex64>> = (0..4)
        .map(|k| {
            let w = es.values[k].max(0.0).sqrt();
            es.vectors.column(k).into_iter().map(|z| z * w).collect()
        })
        .collect();
    let tilde: Vec<Vec<Complex64>> = vs
        .iter()
        .map(|v| {
            let conj: Vec<Complex64> = v.iter().map(|z| z.conj()).collect();
            yy.apply(&conj)
        })
        .collect();
    let tau = nalgebra::DMatrix::from_fn(4, 4, |i, j| {
        vs[i]
            .iter()
            .zip(&tilde[j])
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
    });
    let mut lambdas: Vec<f64> = tau.singular_values().iter().copied().collect();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    (lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0)
}

/// Random sampling helpers shared by property tests and the acceptance
/// suite.
pub mod random {
    use super::*;

    fn gaussian_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Haar-random unitary via Gram–Schmidt on a Ginibre matrix.
    pub fn unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
        let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        while cols.len() < n {
            let mut v: Vec<Complex64> = (0..n).map(|_| gaussian_complex(rng)).collect();
            for u in &cols {
                let overlap: Complex64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= overlap * ui;
                }
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-8 {
                cols.push(v.into_iter().map(|z| z / norm).collect());
            }
        }
        let mut u = ComplexMatrix::zeros(n, n);
        for (j, col) in cols.iter().enumerate() {
            for (i, z) in col.iter().enumerate() {
                u[(i, j)] = *z;
            }
        }
        u
    }

    /// Full-rank random state GG†/Tr(GG†) with G Ginibre.
    pub fn density<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
        let g = ComplexMatrix::from_vec(4, 4, (0..16).map(|_| gaussian_complex(rng)).collect())
            .unwrap();
        let gg = &g * &g.adjoint();
        let tr = gg.trace().re;
        DensityMatrix::new(gg.scale_real(1.0 / tr).hermitian_part()).unwrap()
    }

    pub fn pure_state<R: Rng + ?Sized>(rng: &mut R) -> DensityMatrix {
        let psi: Vec<Complex64> = (0..4).map(|_| gaussian_complex(rng)).collect();
        DensityMatrix::from_pure(&psi).unwrap()
    }

    pub fn observable<R: Rng + ?Sized>(rng: &mut R) -> Observable {
        loop {
            let v = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            if let Ok(o) = Observable::from_direction(v) {
                return o;
            }
        }
    }

    /// Random convex mixture of `terms` product pure states.
    pub fn separable<R: Rng + ?Sized>(terms: usize, rng: &mut R) -> DensityMatrix {
        let mut acc = ComplexMatrix::zeros(4, 4);
        let mut total = 0.0;
        for _ in 0..terms {
            let a: Vec<Complex64> = (0..2).map(|_| gaussian_complex(rng)).collect();
            let b: Vec<Complex64> = (0..2).map(|_| gaussian_complex(rng)).collect();
            let pa = ComplexMatrix::outer(&a, &a);
            let pb = ComplexMatrix::outer(&b, &b);
            let prod = kron(&pa, &pb);
            let w: f64 = rng.random::<f64>() + 1e-3;
            acc = &acc + &prod.scale_real(w / prod.trace().re);
            total += w;
        }
        DensityMatrix::new(acc.scale_real(1.0 / total).hermitian_part()).unwrap()
    }
}

#[allow(dead_code)]
fn basis_state(index: usize) -> [Complex64; 4] {
    let mut v = [ZERO; 4];
    v[index] = ONE;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn density_rejects_bad_trace() {
        let m = ComplexMatrix::identity(4).scale_real(0.3);
        assert!(matches!(DensityMatrix::new(m), Err(Error::InvalidState(_))));
    }

    #[test]
    fn density_rejects_negative_eigenvalue() {
        let m = ComplexMatrix::from_real(
            4,
            4,
            &[
                0.6, 0.0, 0.0, 0.0, //
                0.0, 0.5, 0.0, 0.0, //
                0.0, 0.0, 0.1, 0.0, //
                0.0, 0.0, 0.0, -0.2,
            ],
        )
        .unwrap();
        assert!(DensityMatrix::new(m).is_err());
    }

    #[test]
    fn pes_rejects_out_of_range_theta() {
        assert!(PesState::new(-0.1).is_err());
        assert!(PesState::new(1.0).is_err());
    }

    #[test]
    fn purity_examples() {
        for &theta in &[0.1, 0.3, FRAC_PI_4] {
            let rho = PesState::new(theta).unwrap().density();
            assert!((purity(&rho) - 1.0).abs() < 1e-14);
        }
        assert!((purity(&DensityMatrix::maximally_mixed()) - 0.25).abs() < 1e-15);
        let v: f64 = 0.997;
        let rho = PesState::new(0.4).unwrap().density().with_white_noise(v).unwrap();
        let analytic = v * v + v * (1.0 - v) / 2.0 + (1.0 - v).powi(2) / 4.0;
        assert!((analytic - 0.99550675).abs() < 1e-12);
        assert!((purity(&rho) - analytic).abs() < 1e-14);
    }

    #[test]
    fn fidelity_examples() {
        let theta = 0.37;
        let pes = PesState::new(theta).unwrap().density();
        assert!((fidelity_with_pes(&pes, theta) - 1.0).abs() < 1e-14);
        let zero = DensityMatrix::from_pure(&basis_state(0)).unwrap();
        assert!((fidelity_with_pes(&zero, theta) - theta.cos().powi(2)).abs() < 1e-15);
        let noisy = pes.with_white_noise(0.995).unwrap();
        assert!((fidelity_with_pes(&noisy, theta) - 0.99625).abs() < 1e-12);
    }

    #[test]
    fn concurrence_examples() {
        assert!(concurrence(&DensityMatrix::maximally_mixed()).abs() < 1e-12);
        let bell = PesState::new(FRAC_PI_4).unwrap().density();
        let werner = bell.with_white_noise(0.9).unwrap();
        // Werner-state closed form (3v − 1)/2.
        assert!((concurrence(&werner) - 0.85).abs() < 1e-10);
    }

    #[test]
    fn concurrence_of_pes_grid() {
        for k in 0..100 {
            let theta = FRAC_PI_4 * k as f64 / 99.0;
            let rho = PesState::new(theta).unwrap().density();
            assert!(
                (concurrence(&rho) - (2.0 * theta).sin()).abs() < 1e-10,
                "theta={theta}"
            );
        }
    }

    #[test]
    fn concurrence_of_separable_mixtures_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let rho = random::separable(1 + rand::Rng::random_range(&mut rng, 0..4), &mut rng);
            assert!(concurrence(&rho) < 1e-8);
        }
    }

    #[test]
    fn observable_eigenvalues_are_plus_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let o = random::observable(&mut rng);
            let es = hermitian_eigensystem(&o.matrix()).unwrap();
            assert!((es.values[0] - 1.0).abs() < 1e-10);
            assert!((es.values[1] + 1.0).abs() < 1e-10);
        }
        assert!(Observable::new([1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn pauli_labels_round_trip() {
        for l in ["X", "Y", "Z"] {
            let o = Observable::from_pauli_label(l).unwrap();
            assert_eq!(o.pauli_label().unwrap().to_string(), l);
        }
        assert_eq!(Observable::xz(0.3).pauli_label(), None);
    }

    proptest! {
        #[test]
        fn purity_and_fidelity_unitarily_invariant(seed in any::<u64>(), theta in 0.0..FRAC_PI_4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random::density(&mut rng);
            let u = random::unitary(4, &mut rng);
            let rotated = rho.conjugate_by(&u).unwrap();
            prop_assert!((purity(&rho) - purity(&rotated)).abs() < 1e-10);

            let psi = PesState::new(theta).unwrap().amplitudes();
            let u_psi = u.apply(&psi);
            let f0 = rho.matrix().expectation(&psi).re;
            let f1 = rotated.matrix().expectation(&u_psi).re;
            prop_assert!((f0 - f1).abs() < 1e-10);
            prop_assert!((f0 - fidelity_with_pes(&rho, theta)).abs() < 1e-12);
        }
    }
}
