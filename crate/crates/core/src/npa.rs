//! Moment-matrix (NPA) relaxations of the two-input, two-output quantum set,
//! the guessing-probability program built on them, and the affine
//! certificate read off its dual.
//!
//! Operators are the +1-outcome projectors A_x, B_y (Collins-Gisin basis).
//! Eve's binary measurement splits the moment matrix into one
//! subnormalized block per outcome e, with Γ⁺ + Γ⁻ tied to the observed
//! behavior.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{cell_key, index, parse_cell_key, signaling_report, Affine, Behavior, CgCoordinates};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

use crate::sdp::{min_eigenvalue, solve, BlockSparse, SdpProblem, SdpSolution, SolveOptions, SolveStatus};

/// Tolerance on input signaling accepted by [`build_program`].
pub const SIGNALING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Level 1 plus the products A_x B_y.
    Level1ab,
    Level2,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Level1ab => "level1ab",
            Level::Level2 => "level2",
        })
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "level1ab" | "1+ab" => Ok(Level::Level1ab),
            "level2" | "2" => Ok(Level::Level2),
            _ => Err(Error::Config(format!("unknown NPA level {s:?}"))),
        }
    }
}

/// Product of projectors, stored per party as a list of input labels.
/// Adjacent repeats are collapsed (P² = P) and the parties commute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    pub alice: Vec<u8>,
    pub bob: Vec<u8>,
}

fn collapse(mut v: Vec<u8>) -> Vec<u8> {
    v.dedup();
    v
}

impl Word {
    pub fn identity() -> Self {
        Self {
            alice: vec![],
            bob: vec![],
        }
    }

    pub fn new(alice: &[u8], bob: &[u8]) -> Self {
        Self {
            alice: collapse(alice.to_vec()),
            bob: collapse(bob.to_vec()),
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut w = self.clone();
        w.alice.reverse();
        w.bob.reverse();
        w
    }

    /// u† v
    pub fn dagger_times(&self, v: &Word) -> Word {
        let mut alice: Vec<u8> = self.alice.iter().rev().copied().collect();
        alice.extend(&v.alice);
        let mut bob: Vec<u8> = self.bob.iter().rev().copied().collect();
        bob.extend(&v.bob);
        Word::new(&alice, &bob)
    }

    /// Representative of {w, w†}: moments are real in this relaxation.
    pub fn canonical(&self) -> Word {
        let adj = self.adjoint();
        if adj < *self {
            adj
        } else {
            self.clone()
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.alice.is_empty() && self.bob.is_empty() {
            return f.write_str("1");
        }
        for x in &self.alice {
            write!(f, "A{x}")?;
        }
        for y in &self.bob {
            write!(f, "B{y}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentLayout {
    pub level: Level,
    pub monomials: Vec<Word>,
    /// Canonical word of every upper-triangle cell (i ≤ j), row-major.
    cells: Vec<(usize, usize, Word)>,
}

impl MomentLayout {
    pub fn new(level: Level) -> Self {
        let mut monomials = vec![
            Word::identity(),
            Word::new(&[0], &[]),
            Word::new(&[1], &[]),
            Word::new(&[], &[0]),
            Word::new(&[], &[1]),
        ];
        for x in 0..2 {
            for y in 0..2 {
                monomials.push(Word::new(&[x], &[y]));
            }
        }
        if level == Level::Level2 {
            monomials.push(Word::new(&[0, 1], &[]));
            monomials.push(Word::new(&[1, 0], &[]));
            monomials.push(Word::new(&[], &[0, 1]));
            monomials.push(Word::new(&[], &[1, 0]));
        }
        let mut cells = Vec::new();
        for i in 0..monomials.len() {
            for j in i..monomials.len() {
                cells.push((i, j, monomials[i].dagger_times(&monomials[j]).canonical()));
            }
        }
        Self {
            level,
            monomials,
            cells,
        }
    }

    pub fn dim(&self) -> usize {
        self.monomials.len()
    }

    pub fn word_at(&self, i: usize, j: usize) -> &Word {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.cells
            .iter()
            .find(|c| c.0 == i && c.1 == j)
            .map(|c| &c.2)
            .expect("cell inside the layout")
    }

    /// Cells grouped by canonical word, in first-appearance order.
    pub fn classes(&self) -> Vec<(Word, Vec<(usize, usize)>)> {
        let mut order: Vec<Word> = Vec::new();
        let mut groups: BTreeMap<Word, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, j, w) in &self.cells {
            let g = groups.entry(w.clone()).or_insert_with(|| {
                order.push(w.clone());
                Vec::new()
            });
            g.push((*i, *j));
        }
        order
            .into_iter()
            .map(|w| {
                let g = groups.remove(&w).unwrap_or_default();
                (w, g)
            })
            .collect()
    }

    /// A representative cell for `w`, preferring the diagonal.
    pub fn cell_of(&self, w: &Word) -> Option<(usize, usize)> {
        let w = w.canonical();
        let mut found = None;
        for (i, j, cw) in &self.cells {
            if *cw == w {
                if i == j {
                    return Some((*i, *j));
                }
                found.get_or_insert((*i, *j));
            }
        }
        found
    }

    /// Symmetric 0/1 pattern of the cells in `cells`, scaled, added to `m`.
    fn indicator(m: &mut BlockSparse, block: usize, cells: &[(usize, usize)], scale: f64) {
        for &(i, j) in cells {
            m.push(block, j, i, scale);
        }
    }
}

/// Words whose moments are fixed by the behavior, with their CG coordinate.
fn behavior_words(c: &CgCoordinates) -> Vec<(Word, f64)> {
    let mut v = vec![(Word::identity(), 1.0)];
    for x in 0..2u8 {
        v.push((Word::new(&[x], &[]), c.alice[x as usize]));
    }
    for y in 0..2u8 {
        v.push((Word::new(&[], &[y]), c.bob[y as usize]));
    }
    for x in 0..2u8 {
        for y in 0..2u8 {
            v.push((Word::new(&[x], &[y]), c.joint[x as usize][y as usize]));
        }
    }
    v
}

/// Guessing program posed over free moment variables: the two moment
/// matrices are the dual slack S = C − Σ yᵢAᵢ, block 0 holding Γ⁺ and
/// block 1 holding Γ⁻ with the behavior words substituted as
/// Γ⁻[w] = coord_w − Γ⁺[w]. The primal X is then a sum-of-squares
/// certificate whose feasibility does not depend on the behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct GuessingProgram {
    pub layout: MomentLayout,
    pub x_star: usize,
    pub sdp: SdpProblem,
    /// P_guess = dual objective + offset.
    pub offset: f64,
    /// Cell pattern in block 1 of 1, A_x, B_y, A_xB_y (in that order).
    matching: Vec<BlockSparse>,
}

impl GuessingProgram {
    /// P_guess(Q) ≤ 1 − Q(A_x*) + Σ_w coord_w(Q)·⟨F_w, X⁻⟩ for every Q in
    /// the relaxation, whenever X is primal feasible.
    fn certificate_from_primal(&self, x: &[DMatrix<f64>]) -> (f64, CgCoordinates) {
        let w: Vec<f64> = self.matching.iter().map(|f| f.inner(x)).collect();
        let mut c = CgCoordinates::default();
        c.alice.copy_from_slice(&w[1..3]);
        c.bob.copy_from_slice(&w[3..5]);
        for a in 0..2 {
            for b in 0..2 {
                c.joint[a][b] = w[5 + 2 * a + b];
            }
        }
        c.alice[self.x_star] -= 1.0;
        (1.0 + w[0], c)
    }
}

pub fn check_no_signaling(b: &Behavior) -> Result<()> {
    let rep = signaling_report(b, SIGNALING_TOL);
    if !rep.is_no_signaling {
        return Err(Error::Signaling {
            found: rep.max(),
            tol: SIGNALING_TOL,
        });
    }
    Ok(())
}

/// Guessing-probability SDP for Alice's input `x_star`:
/// maximize Γ⁺[A_x*] + Γ⁻[1] − Γ⁻[A_x*].
pub fn build_program(b: &Behavior, x_star: usize, level: Level) -> Result<GuessingProgram> {
    check_no_signaling(b)?;
    if x_star > 1 {
        return Err(Error::Config(format!("x_star must be 0 or 1, got {x_star}")));
    }
    let layout = MomentLayout::new(level);
    let n = layout.dim();
    let mut sdp = SdpProblem::new(vec![n, n]);
    let coords = b.cg_coordinates();
    let fixed = behavior_words(&coords);
    let ax = Word::new(&[x_star as u8], &[]);
    let classes = layout.classes();

    let mut objective = BlockSparse::new();
    let mut matching = Vec::with_capacity(fixed.len());
    for (w, value) in &fixed {
        let cells = &classes.iter().find(|(cw, _)| cw == w).expect("behavior word in layout").1;
        MomentLayout::indicator(&mut objective, 1, cells, *value);
        let mut f = BlockSparse::new();
        MomentLayout::indicator(&mut f, 1, cells, 1.0);
        matching.push(f);
    }
    for (w, cells) in &classes {
        let mut plus = BlockSparse::new();
        MomentLayout::indicator(&mut plus, 0, cells, -1.0);
        if fixed.iter().any(|(fw, _)| fw == w) {
            MomentLayout::indicator(&mut plus, 1, cells, 1.0);
            let rhs = if *w == ax {
                2.0
            } else if *w == Word::identity() {
                -1.0
            } else {
                0.0
            };
            sdp.add_constraint(plus, rhs);
        } else {
            sdp.add_constraint(plus, 0.0);
            let mut minus = BlockSparse::new();
            MomentLayout::indicator(&mut minus, 1, cells, -1.0);
            sdp.add_constraint(minus, 0.0);
        }
    }
    sdp.objective = objective;
    Ok(GuessingProgram {
        layout,
        x_star,
        sdp,
        offset: 1.0 - coords.alice[x_star],
        matching,
    })
}

/// Affine upper bound on the guessing probability, valid for every
/// behavior in the relaxation set it was derived at.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub coefficients: [f64; 16],
    pub constant: f64,
    pub level: Level,
    pub x_star: usize,
    /// SHA-256 of the source behavior's probabilities (little-endian f64).
    pub source_hash: String,
}

impl Certificate {
    pub fn affine(&self) -> Affine {
        Affine {
            coefficients: self.coefficients,
            constant: self.constant,
        }
    }

    pub fn evaluate(&self, b: &Behavior) -> f64 {
        self.affine().evaluate(b)
    }

    /// Largest coefficient magnitude.
    pub fn magnitude(&self) -> f64 {
        self.coefficients.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CertificateJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<CertificateJson>(s)?.try_into()
    }
}

pub fn behavior_hash(b: &Behavior) -> String {
    let mut h = Sha256::new();
    for p in b.probabilities() {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct CertificateJson {
    coefficients: BTreeMap<String, f64>,
    constant: f64,
    level: Level,
    x_star: usize,
    source_hash: String,
}

impl From<&Certificate> for CertificateJson {
    fn from(c: &Certificate) -> Self {
        let mut coefficients = BTreeMap::new();
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        coefficients.insert(cell_key(a, b, x, y), c.coefficients[index(a, b, x, y)]);
                    }
                }
            }
        }
        Self {
            coefficients,
            constant: c.constant,
            level: c.level,
            x_star: c.x_star,
            source_hash: c.source_hash.clone(),
        }
    }
}

impl TryFrom<CertificateJson> for Certificate {
    type Error = Error;

    fn try_from(j: CertificateJson) -> Result<Self> {
        if j.coefficients.len() != 16 {
            return Err(Error::Certificate(format!("{} coefficients, expected 16", j.coefficients.len())));
        }
        let mut coefficients = [0.0; 16];
        for (k, v) in &j.coefficients {
            let i = parse_cell_key(k).ok_or_else(|| Error::Certificate(format!("bad key {k:?}")))?;
            coefficients[i] = *v;
        }
        Ok(Self {
            coefficients,
            constant: j.constant,
            level: j.level,
            x_star: j.x_star,
            source_hash: j.source_hash,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuessingOutcome {
    /// Certificate value at the input behavior, clamped to [0.5, 1].
    pub p_guess: f64,
    pub certificate: Certificate,
    pub solution: SdpSolution,
}

/// Solves the program and reads the certificate off the primal X.
///
/// X is first projected onto the equalities ⟨Aᵢ, X⟩ = bᵢ. Weak duality then
/// gives P_guess ≤ ⟨C, X⟩ − ⟨S, X⟩ ≤ ⟨C, X⟩ + n·max(0, −λ_min(X)), because
/// the moment blocks S satisfy Tr S ≤ n; that slack is added to the constant,
/// so the certificate is sound even when the solver stops early.
pub fn solve_program(program: &GuessingProgram, b: &Behavior, opts: &SolveOptions) -> Result<GuessingOutcome> {
    let solution = solve(&program.sdp, opts)?;
    if solution.status == SolveStatus::Infeasible {
        return Err(Error::SolverFailure(format!(
            "guessing program reported infeasible after {} iterations",
            solution.iterations
        )));
    }
    let x = project_onto_equalities(&program.sdp, &solution.primal_blocks)?;
    let min_eig = x.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    let slack = program.layout.dim() as f64 * (-min_eig).max(0.0);
    let (constant, cg) = program.certificate_from_primal(&x);
    let affine = Affine::from_cg(constant + slack, &cg);
    if !affine.constant.is_finite() || affine.coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::SolverFailure(format!(
            "guessing program ended with status {:?} and a non-finite certificate",
            solution.status
        )));
    }
    let certificate = Certificate {
        coefficients: affine.coefficients,
        constant: affine.constant,
        level: program.layout.level,
        x_star: program.x_star,
        source_hash: behavior_hash(b),
    };
    Ok(GuessingOutcome {
        p_guess: certificate.evaluate(b).clamp(0.5, 1.0),
        certificate,
        solution,
    })
}

/// Least-norm correction X + Σ cᵢAᵢ satisfying the equalities exactly.
fn project_onto_equalities(p: &SdpProblem, x: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let m = p.constraints.len();
    let dense: Vec<Vec<DMatrix<f64>>> = p.constraints.iter().map(|c| c.coefficients.to_dense(&p.blocks)).collect();
    let gram = DMatrix::from_fn(m, m, |i, j| p.constraints[j].coefficients.inner(&dense[i]));
    let r = DVector::from_iterator(m, p.apply(x).iter().zip(&p.constraints).map(|(ax, c)| c.rhs - ax));
    let c = gram
        .cholesky()
        .ok_or_else(|| Error::SolverFailure("dependent certificate constraints".into()))?
        .solve(&r);
    let mut out = x.to_vec();
    for (ci, a) in c.iter().zip(&p.constraints) {
        a.coefficients.add_to(&mut out, *ci);
    }
    Ok(out)
}

/// Self-testing behaviors sit on the boundary of the quantum set, where no
/// finite optimal certificate exists and the solver stalls near the optimum;
/// the projected certificate still bounds P_guess there.
pub fn guess(b: &Behavior, x_star: usize, level: Level) -> Result<GuessingOutcome> {
    let program = build_program(b, x_star, level)?;
    solve_program(&program, b, &SolveOptions::default())
}

/// Upper bound on Eve's probability of guessing Alice's outcome for `x_star`.
pub fn guessing_probability(b: &Behavior, x_star: usize, level: Level) -> Result<(f64, Certificate)> {
    let g = guess(b, x_star, level)?;
    Ok((g.p_guess, g.certificate))
}

/// −log₂ p
pub fn randomness_bits(p_guess: f64) -> Result<f64> {
    if !(p_guess > 0.0) {
        return Err(crate::error::out_of_range("p_guess", p_guess, "(0, 1]"));
    }
    Ok(-p_guess.log2())
}

/// Tolerance on certificate values slightly above 1 from solver rounding.
const CERT_UPPER_SLACK: f64 = 1e-9;

/// Evaluates the certificate on a behavior and converts to bits.
pub fn certificate_randomness(cert: &Certificate, b: &Behavior) -> Result<f64> {
    let v = cert.evaluate(b);
    if !(v > 0.0) || v > 1.0 + CERT_UPPER_SLACK {
        return Err(Error::Certificate(format!("certificate value {v} outside (0, 1]")));
    }
    randomness_bits(v.min(1.0))
}

/// Maximum of an affine Bell functional over the relaxation: one moment
/// matrix Γ = F₁ + Σ_w y_w F_w over the free moments y_w.
pub fn bell_max_program(functional: &Affine, level: Level) -> SdpProblem {
    let layout = MomentLayout::new(level);
    let mut sdp = SdpProblem::new(vec![layout.dim()]);
    let (_, cg) = functional.to_cg();
    let fixed = behavior_words(&cg);
    for (w, cells) in layout.classes() {
        if w == Word::identity() {
            MomentLayout::indicator(&mut sdp.objective, 0, &cells, 1.0);
            continue;
        }
        let coef = fixed.iter().find(|(fw, _)| *fw == w).map_or(0.0, |(_, c)| *c);
        let mut row = BlockSparse::new();
        MomentLayout::indicator(&mut row, 0, &cells, -1.0);
        sdp.add_constraint(row, coef);
    }
    sdp
}

/// Relaxation value of max ⟨functional⟩ (primal side, an upper bound).
pub fn bell_max(functional: &Affine, level: Level) -> Result<f64> {
    let s = solve(&bell_max_program(functional, level), &SolveOptions::default())?;
    if s.status != SolveStatus::Optimal && s.gap.abs() > 1e-6 {
        return Err(Error::SolverFailure(format!("Bell maximization ended with {:?}", s.status)));
    }
    Ok(functional.to_cg().0 + s.primal_value)
}
