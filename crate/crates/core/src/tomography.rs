//! Simulated two-qubit state tomography over the nine Pauli-pair bases:
//! Poisson counts, linear inversion with a physicality projection, and the
//! closest partially entangled state.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};
use crate::linalg::{self, hermitian_eigensystem, kron, ComplexMatrix, Eigensystem};
use crate::stats::poisson;
use crate::quantum::{concurrence, fidelity_with_pes, purity, DensityMatrix, Observable};

pub const PAULI_LABELS: [char; 3] = ['X', 'Y', 'Z'];

/// Coincidence counts for one pair of local Pauli bases, in the outcome
/// order (++, +−, −+, −−).
#[derive(Debug, Clone, PartialEq)]
pub struct CountsRecord {
    pub setting: (Observable, Observable),
    pub counts: [u64; 4],
    /// Acquisition time relative to the nominal block. Frequencies are
    /// normalized per record, so it does not enter the inversion.
    pub weight: f64,
}

impl CountsRecord {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn labels(&self) -> Result<(char, char)> {
        match (self.setting.0.pauli_label(), self.setting.1.pauli_label()) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Tomography("record setting is not a Pauli pair".into())),
        }
    }
}

fn pauli(label: char) -> Observable {
    match label {
        'X' => Observable::pauli_x(),
        'Y' => Observable::pauli_y(),
        _ => Observable::pauli_z(),
    }
}

/// The nine settings σ_i ⊗ σ_j, row-major over (X, Y, Z).
pub fn pauli_settings() -> Vec<(Observable, Observable)> {
    PAULI_LABELS
        .iter()
        .flat_map(|&a| PAULI_LABELS.iter().map(move |&b| (pauli(a), pauli(b))))
        .collect()
}

/// Born probabilities of (++, +−, −+, −−) for one setting.
pub fn outcome_probabilities(rho: &DensityMatrix, setting: &(Observable, Observable)) -> [f64; 4] {
    let mut p = [0.0; 4];
    for (k, (a, b)) in [(true, true), (true, false), (false, true), (false, false)].into_iter().enumerate() {
        let proj = kron(&setting.0.projector(a), &setting.1.projector(b));
        p[k] = rho.expectation(&proj).max(0.0);
    }
    p
}

/// Poisson counts with means mean_counts·p(outcome | setting).
pub fn simulate_counts(rho: &DensityMatrix, mean_counts: f64, seed: u64) -> Result<Vec<CountsRecord>> {
    if !(mean_counts > 0.0 && mean_counts.is_finite()) {
        return Err(out_of_range("mean_counts", mean_counts, "(0, ∞)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pauli_settings()
        .into_iter()
        .map(|setting| {
            let p = outcome_probabilities(rho, &setting);
            let counts = p.map(|pk| poisson(mean_counts * pk, &mut rng));
            CountsRecord {
                setting,
                counts,
                weight: 1.0,
            }
        })
        .collect())
}

/// Exact Born frequencies per setting, the infinite-counts limit.
pub fn analytic_frequencies(rho: &DensityMatrix) -> Vec<((char, char), [f64; 4])> {
    PAULI_LABELS
        .iter()
        .flat_map(|&a| PAULI_LABELS.iter().map(move |&b| (a, b)))
        .map(|(a, b)| ((a, b), outcome_probabilities(rho, &(pauli(a), pauli(b)))))
        .collect()
}

/// Linear inversion followed by projection onto unit-trace PSD matrices.
pub fn reconstruct(records: &[CountsRecord]) -> Result<DensityMatrix> {
    let mut freqs = Vec::with_capacity(records.len());
    for r in records {
        let n = r.total();
        if n == 0 {
            continue;
        }
        freqs.push((r.labels()?, r.counts.map(|c| c as f64 / n as f64)));
    }
    reconstruct_from_frequencies(&freqs)
}

/// Inversion from per-setting outcome frequencies; settings may repeat and
/// are averaged.
pub fn reconstruct_from_frequencies(freqs: &[((char, char), [f64; 4])]) -> Result<DensityMatrix> {
    let idx = |c: char| PAULI_LABELS.iter().position(|&l| l == c);
    let mut corr = [[(0.0, 0usize); 3]; 3];
    let mut alice = [(0.0, 0usize); 3];
    let mut bob = [(0.0, 0usize); 3];
    for &((a, b), f) in freqs {
        let (Some(i), Some(j)) = (idx(a), idx(b)) else {
            return Err(Error::Tomography(format!("unknown setting {a}{b}")));
        };
        let add = |acc: &mut (f64, usize), v: f64| {
            acc.0 += v;
            acc.1 += 1;
        };
        add(&mut corr[i][j], f[0] - f[1] - f[2] + f[3]);
        add(&mut alice[i], f[0] + f[1] - f[2] - f[3]);
        add(&mut bob[j], f[0] - f[1] + f[2] - f[3]);
    }
    let mean = |acc: (f64, usize)| acc.0 / acc.1 as f64;
    let missing: Vec<String> = (0..9)
        .filter(|k| corr[k / 3][k % 3].1 == 0)
        .map(|k| format!("{}{}", PAULI_LABELS[k / 3], PAULI_LABELS[k % 3]))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Tomography(format!("incomplete basis, missing {}", missing.join(", "))));
    }

    let sigma = [linalg::pauli_x(), linalg::pauli_y(), linalg::pauli_z()];
    let id = ComplexMatrix::identity(2);
    let mut m = ComplexMatrix::identity(4);
    for i in 0..3 {
        m = &m + &kron(&sigma[i], &id).scale_real(mean(alice[i]));
        m = &m + &kron(&id, &sigma[i]).scale_real(mean(bob[i]));
        for j in 0..3 {
            m = &m + &kron(&sigma[i], &sigma[j]).scale_real(mean(corr[i][j]));
        }
    }
    DensityMatrix::new(project_to_states(&m.scale_real(0.25))?)
}

/// Closest unit-trace PSD matrix in Frobenius norm: the spectrum is
/// projected onto the probability simplex.
pub fn project_to_states(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let es = hermitian_eigensystem(m)?;
    let values = simplex_projection(&es.values);
    Ok(Eigensystem {
        values,
        vectors: es.vectors,
    }
    .reconstruct())
}

/// Euclidean projection onto {μ ≥ 0, Σμ = 1}.
pub fn simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Maximizes ⟨ψ(θ)|ρ|ψ(θ)⟩ over θ ∈ [0, π/4].
///
/// In the {|00⟩, |11⟩} sector the objective is
/// (a+d)/2 + ((a−d)/2)·cos 2θ + r·sin 2θ, a sinusoid in 2θ, so the
/// constrained optimum is the unconstrained one clipped to [0, π/2].
/// A flat objective returns π/4.
pub fn closest_pes(rho: &DensityMatrix) -> (f64, f64) {
    let a = rho.element(0, 0).re;
    let d = rho.element(3, 3).re;
    let r = rho.element(0, 3).re;
    let half_diff = 0.5 * (a - d);
    let theta = if half_diff.hypot(r) <= 1e-15 {
        FRAC_PI_4
    } else {
        let phi = r.atan2(half_diff);
        let arc = |x: f64, y: f64| {
            let d = (x - y).abs() % TAU;
            d.min(TAU - d)
        };
        let phi = if (0.0..=FRAC_PI_2).contains(&phi) {
            phi
        } else if arc(phi, 0.0) <= arc(phi, FRAC_PI_2) {
            0.0
        } else {
            FRAC_PI_2
        };
        0.5 * phi
    };
    (theta, fidelity_with_pes(rho, theta))
}

/// Largest eigenvalue of ρ restricted to span{|00⟩, |11⟩}.
pub fn sector_max_eigenvalue(rho: &DensityMatrix) -> f64 {
    let a = rho.element(0, 0).re;
    let d = rho.element(3, 3).re;
    let r = rho.element(0, 3);
    0.5 * (a + d) + (0.25 * (a - d).powi(2) + r.norm_sqr()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    pub purity: f64,
    pub concurrence: f64,
    pub theta_closest: f64,
    pub fidelity_closest: f64,
}

impl TomographyResult {
    pub fn from_state(rho: DensityMatrix) -> Self {
        let (theta_closest, fidelity_closest) = closest_pes(&rho);
        Self {
            purity: purity(&rho),
            concurrence: concurrence(&rho),
            theta_closest,
            fidelity_closest,
            rho,
        }
    }
}

pub fn analyze(records: &[CountsRecord]) -> Result<TomographyResult> {
    Ok(TomographyResult::from_state(reconstruct(records)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct CountsRow {
    setting_a: char,
    setting_b: char,
    n_pp: u64,
    n_pm: u64,
    n_mp: u64,
    n_mm: u64,
}

pub fn write_counts_csv<W: Write>(records: &[CountsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let (a, b) = r.labels()?;
        let [n_pp, n_pm, n_mp, n_mm] = r.counts;
        w.serialize(CountsRow {
            setting_a: a,
            setting_b: b,
            n_pp,
            n_pm,
            n_mp,
            n_mm,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_counts_csv<R: Read>(input: R) -> Result<Vec<CountsRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: CountsRow = row?;
        let obs = |c: char| Observable::from_pauli_label(&c.to_string());
        out.push(CountsRecord {
            setting: (obs(row.setting_a)?, obs(row.setting_b)?),
            counts: [row.n_pp, row.n_pm, row.n_mp, row.n_mm],
            weight: 1.0,
        });
    }
    if out.iter().all(|r| r.total() == 0) {
        return Err(Error::Tomography("no positive counts".into()));
    }
    Ok(out)
}
