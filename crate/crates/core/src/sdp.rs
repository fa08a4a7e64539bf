//! Small dense semidefinite programs in standard form
//!
//!   minimize ⟨C, X⟩  s.t.  ⟨A_i, X⟩ = b_i,  X = diag(X_1, …, X_k) ⪰ 0,
//!
//! with dual  maximize bᵀy  s.t.  S = C − Σ y_i A_i ⪰ 0.
//!
//! Solved by an infeasible primal-dual interior-point method using
//! Nesterov-Todd scaling and Mehrotra's predictor-corrector.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BLOCK_DIM: usize = 64;
pub const MAX_CONSTRAINTS: usize = 2000;

/// Relative threshold below which a constraint row counts as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Symmetric block-diagonal matrix stored as its lower-triangle entries:
/// an entry (i, j, v) with i > j stands for both M_ij and M_ji.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockSparse {
    entries: Vec<Entry>,
}

impl BlockSparse {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds v to cell (i, j) of `block` (and to its mirror).
    pub fn push(&mut self, block: usize, i: usize, j: usize, value: f64) -> &mut Self {
        let (row, col) = if i >= j { (i, j) } else { (j, i) };
        match self
            .entries
            .iter_mut()
            .find(|e| e.block == block && e.row == row && e.col == col)
        {
            Some(e) => e.value += value,
            None => self.entries.push(Entry {
                block,
                row,
                col,
                value,
            }),
        }
        self
    }

    pub fn with(mut self, block: usize, i: usize, j: usize, value: f64) -> Self {
        self.push(block, i, j, value);
        self
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.value == 0.0)
    }

    /// Frobenius inner product with a block-diagonal symmetric matrix.
    pub fn inner(&self, x: &[DMatrix<f64>]) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let v = x[e.block][(e.row, e.col)];
                if e.row == e.col {
                    e.value * v
                } else {
                    2.0 * e.value * v
                }
            })
            .sum()
    }

    /// m += scale · self
    pub fn add_to(&self, m: &mut [DMatrix<f64>], scale: f64) {
        for e in &self.entries {
            m[e.block][(e.row, e.col)] += scale * e.value;
            if e.row != e.col {
                m[e.block][(e.col, e.row)] += scale * e.value;
            }
        }
    }

    pub fn to_dense(&self, blocks: &[usize]) -> Vec<DMatrix<f64>> {
        let mut m = zeros(blocks);
        self.add_to(&mut m, 1.0);
        m
    }

    fn frobenius_sq(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let w = if e.row == e.col { 1.0 } else { 2.0 };
                w * e.value * e.value
            })
            .sum()
    }

    /// Coordinates in the orthonormal basis of symmetric matrices, where an
    /// off-diagonal pair carries weight √2.
    fn svec(&self, offsets: &[usize], total: usize) -> Vec<f64> {
        let mut v = vec![0.0; total];
        for e in &self.entries {
            let k = offsets[e.block] + e.row * (e.row + 1) / 2 + e.col;
            let w = if e.row == e.col { 1.0 } else { std::f64::consts::SQRT_2 };
            v[k] += w * e.value;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coefficients: BlockSparse,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub objective: BlockSparse,
    pub constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<usize>) -> Self {
        Self {
            blocks,
            objective: BlockSparse::new(),
            constraints: Vec::new(),
        }
    }

    pub fn add_constraint(&mut self, coefficients: BlockSparse, rhs: f64) -> usize {
        self.constraints.push(Constraint { coefficients, rhs });
        self.constraints.len() - 1
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedSdp(msg));
        if self.blocks.is_empty() {
            return bad("no blocks".into());
        }
        if let Some(&n) = self.blocks.iter().find(|&&n| n == 0 || n > MAX_BLOCK_DIM) {
            return bad(format!("block dimension {n} outside 1..={MAX_BLOCK_DIM}"));
        }
        if self.constraints.len() > MAX_CONSTRAINTS {
            return bad(format!("{} constraints exceed {MAX_CONSTRAINTS}", self.constraints.len()));
        }
        let check = |m: &BlockSparse, what: &str| -> Result<()> {
            for e in m.entries() {
                if e.block >= self.blocks.len() || e.row >= self.blocks[e.block] {
                    return Err(Error::MalformedSdp(format!(
                        "{what}: entry ({}, {}, {}) outside the block structure",
                        e.block, e.row, e.col
                    )));
                }
                if !e.value.is_finite() {
                    return Err(Error::MalformedSdp(format!("{what}: non-finite coefficient")));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (i, c) in self.constraints.iter().enumerate() {
            check(&c.coefficients, &format!("constraint {i}"))?;
            if !c.rhs.is_finite() {
                return bad(format!("constraint {i}: non-finite right-hand side"));
            }
        }
        Ok(())
    }

    /// ⟨A_i, X⟩ for every constraint.
    pub fn apply(&self, x: &[DMatrix<f64>]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.coefficients.inner(x)).collect()
    }

    /// C − Σ y_i A_i
    pub fn dual_slack(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let mut s = self.objective.to_dense(&self.blocks);
        for (c, &yi) in self.constraints.iter().zip(y) {
            c.coefficients.add_to(&mut s, -yi);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: ProblemJson = serde_json::from_str(s)?;
        let p = raw.into_problem()?;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    /// Progress stopped before the tolerances were met.
    Stalled,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    /// Relative gap for early termination.
    pub gap_tol: f64,
    /// Relative primal and dual infeasibility for early termination.
    pub feasibility_tol: f64,
    /// Absolute gap required for an `Optimal` status.
    pub accept_gap: f64,
    /// Absolute residual required for an `Optimal` status.
    pub accept_residual: f64,
    pub step_fraction: f64,
    /// Dual objective magnitude at which the primal is declared infeasible.
    pub divergence: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gap_tol: 1e-9,
            feasibility_tol: 1e-10,
            accept_gap: 1e-7,
            accept_residual: 1e-8,
            step_fraction: 0.98,
            divergence: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub primal_blocks: Vec<DMatrix<f64>>,
    pub dual_vector: Vec<f64>,
    pub dual_slack: Vec<DMatrix<f64>>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    /// Indices of constraints dropped as linearly dependent (their dual is 0).
    pub dropped_constraints: Vec<usize>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SolutionJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: SolutionJson = serde_json::from_str(s)?;
        raw.into_solution()
    }
}

fn zeros(blocks: &[usize]) -> Vec<DMatrix<f64>> {
    blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect()
}

fn identity(blocks: &[usize], scale: f64) -> Vec<DMatrix<f64>> {
    blocks.iter().map(|&n| DMatrix::identity(n, n) * scale).collect()
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frobenius(a: &[DMatrix<f64>]) -> f64 {
    inner(a, a).sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.min()
}

struct Independent {
    keep: Vec<usize>,
    dropped: Vec<usize>,
    inconsistent: bool,
}

/// Modified Gram-Schmidt on the constraint rows, carrying right-hand sides
/// along so dependent rows can be checked for consistency.
fn rank_check(p: &SdpProblem) -> Independent {
    let mut offsets = Vec::with_capacity(p.blocks.len());
    let mut total = 0;
    for &n in &p.blocks {
        offsets.push(total);
        total += n * (n + 1) / 2;
    }
    let mut basis: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut inconsistent = false;
    for (i, c) in p.constraints.iter().enumerate() {
        let mut v = c.coefficients.svec(&offsets, total);
        let mut rhs = c.rhs;
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for (q, beta) in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
                rhs -= d * beta;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= RANK_TOL * norm0.max(1.0) {
            dropped.push(i);
            if rhs.abs() > 1e-8 * (1.0 + c.rhs.abs()) {
                inconsistent = true;
            }
        } else {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push((v, rhs / norm));
            keep.push(i);
        }
    }
    Independent {
        keep,
        dropped,
        inconsistent,
    }
}

/// Per-block Nesterov-Todd scaling: X = G Λ Gᵀ and S = G⁻ᵀ Λ G⁻¹.
struct NtBlock {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    lambda: DVector<f64>,
    w: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

fn lower_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone()).map(|c| c.l())
}

fn lower_inverse(l: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
}

fn nt_block(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtBlock> {
    let l = lower_cholesky(x)?;
    let r = lower_cholesky(s)?;
    let svd = (r.transpose() * &l).svd(true, true);
    let v = svd.v_t?.transpose();
    let lambda = svd.singular_values;
    if lambda.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|s| 1.0 / s.sqrt()));
    let sqrt = DMatrix::from_diagonal(&lambda.map(f64::sqrt));
    let g = &l * &v * inv_sqrt;
    let l_inv = lower_inverse(&l)?;
    let r_inv = lower_inverse(&r)?;
    let g_inv = sqrt * v.transpose() * &l_inv;
    let w = &g * g.transpose();
    Some(NtBlock {
        g,
        g_inv,
        lambda,
        w,
        l_inv,
        r_inv,
    })
}

/// Largest step t ≤ 1/τ-scaled keeping Z + tΔ ⪰ 0, given Z = K Kᵀ with K⁻¹ known.
fn max_step(k_inv: &DMatrix<f64>, delta: &DMatrix<f64>) -> f64 {
    let mut m = k_inv * delta * k_inv.transpose();
    symmetrize(&mut m);
    let lmin = SymmetricEigen::new(m).eigenvalues.min();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

struct Reduced<'a> {
    p: &'a SdpProblem,
    rows: Vec<usize>,
}

impl Reduced<'_> {
    fn a(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|&i| self.p.constraints[i].coefficients.inner(x)),
        )
    }

    fn a_t(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut m = zeros(&self.p.blocks);
        for (k, &i) in self.rows.iter().enumerate() {
            self.p.constraints[i].coefficients.add_to(&mut m, y[k]);
        }
        m
    }

    fn b(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&i| self.p.constraints[i].rhs))
    }
}

fn congruence(nt: &[NtBlock], m: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    nt.iter().zip(m).map(|(b, x)| &b.w * x * &b.w).collect()
}

/// Schur complement M_ij = Tr(A_i W A_j W).
fn schur(r: &Reduced, nt: &[NtBlock]) -> DMatrix<f64> {
    let m = r.rows.len();
    let mut out = DMatrix::zeros(m, m);
    for (j, &cj) in r.rows.iter().enumerate() {
        let aj = r.p.constraints[cj].coefficients.to_dense(&r.p.blocks);
        let waw = congruence(nt, &aj);
        for (i, &ci) in r.rows.iter().enumerate().skip(j) {
            let v = r.p.constraints[ci].coefficients.inner(&waw);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

enum SchurFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurFactor {
    fn new(m: DMatrix<f64>) -> Self {
        match nalgebra::Cholesky::new(m.clone()) {
            Some(c) => Self::Cholesky(c),
            None => Self::Lu(m.lu()),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Self::Cholesky(c) => Some(c.solve(rhs)),
            Self::Lu(lu) => lu.solve(rhs),
        }
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
}

/// Solves A(ΔX) = r_p, Aᵀ Δy + ΔS = R_d, ΔX + W ΔS W = R_c.
fn newton(
    r: &Reduced,
    factor: &SchurFactor,
    nt: &[NtBlock],
    rp: &DVector<f64>,
    rd: &[DMatrix<f64>],
    rc: &[DMatrix<f64>],
) -> Option<Direction> {
    let wrdw = congruence(nt, rd);
    let rhs = rp - r.a(rc) + r.a(&wrdw);
    let mut dy = factor.solve(&rhs)?;
    let assemble = |dy: &DVector<f64>| {
        let aty = r.a_t(dy);
        let ds: Vec<DMatrix<f64>> = rd.iter().zip(&aty).map(|(d, a)| d - a).collect();
        let wdsw = congruence(nt, &ds);
        let dx: Vec<DMatrix<f64>> = rc
            .iter()
            .zip(&wdsw)
            .map(|(c, w)| {
                let mut m = c - w;
                symmetrize(&mut m);
                m
            })
            .collect();
        (dx, ds)
    };
    let (mut dx, mut ds) = assemble(&dy);
    // Iterative refinement: A(ΔX) = r_p is what the rounding in M erodes,
    // and A(W Aᵀδy W) = M δy, so the defect maps straight back onto Δy.
    for _ in 0..2 {
        let defect = rp - r.a(&dx);
        if defect.amax() <= 1e-15 * (1.0 + rp.amax()) {
            break;
        }
        dy += factor.solve(&defect)?;
        (dx, ds) = assemble(&dy);
    }
    Some(Direction { dx, dy, ds })
}

fn step_lengths(nt: &[NtBlock], d: &Direction, tau: f64) -> (f64, f64) {
    let mut ap = f64::INFINITY;
    let mut ad = f64::INFINITY;
    for (k, b) in nt.iter().enumerate() {
        ap = ap.min(max_step(&b.l_inv, &d.dx[k]));
        ad = ad.min(max_step(&b.r_inv, &d.ds[k]));
    }
    ((tau * ap).min(1.0), (tau * ad).min(1.0))
}

fn axpy(x: &[DMatrix<f64>], t: f64, d: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    x.iter().zip(d).map(|(a, b)| a + b * t).collect()
}

#[derive(Clone)]
struct Iterate {
    x: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
}

struct Measures {
    pobj: f64,
    dobj: f64,
    rp: DVector<f64>,
    rd: Vec<DMatrix<f64>>,
    pinf: f64,
    dinf: f64,
    rp_max: f64,
    rd_max: f64,
}

fn measure(r: &Reduced, c: &[DMatrix<f64>], it: &Iterate, b: &DVector<f64>) -> Measures {
    let pobj = inner(c, &it.x);
    let dobj = b.dot(&it.y);
    let rp = b - r.a(&it.x);
    let aty = r.a_t(&it.y);
    let rd: Vec<DMatrix<f64>> = c
        .iter()
        .zip(&aty)
        .zip(&it.s)
        .map(|((ci, a), s)| ci - a - s)
        .collect();
    let pinf = rp.norm() / (1.0 + b.norm());
    let dinf = frobenius(&rd) / (1.0 + frobenius(c));
    let rp_max = rp.amax();
    let rd_max = rd.iter().map(|m| m.amax()).fold(0.0, f64::max);
    Measures {
        pobj,
        dobj,
        rp,
        rd,
        pinf,
        dinf,
        rp_max,
        rd_max,
    }
}

pub fn solve(p: &SdpProblem, opts: &SolveOptions) -> Result<SdpSolution> {
    p.validate()?;
    let rank = rank_check(p);
    let blocks = &p.blocks;
    let n_total = p.total_dim() as f64;
    let c = p.objective.to_dense(blocks);

    if rank.inconsistent {
        return Ok(SdpSolution {
            status: SolveStatus::Infeasible,
            primal_blocks: zeros(blocks),
            dual_vector: vec![0.0; p.constraints.len()],
            dual_slack: c.clone(),
            primal_value: f64::NAN,
            dual_value: f64::NAN,
            gap: f64::NAN,
            iterations: 0,
            dropped_constraints: rank.dropped,
        });
    }

    let r = Reduced {
        p,
        rows: rank.keep.clone(),
    };
    let b = r.b();

    let sqrt_n = n_total.sqrt();
    let c_norm = p.objective.frobenius_sq().sqrt();
    let mut xi = 10f64.max(sqrt_n);
    let mut eta = 10f64.max(sqrt_n).max(c_norm);
    for &i in &r.rows {
        let a_norm = p.constraints[i].coefficients.frobenius_sq().sqrt();
        xi = xi.max(sqrt_n * (1.0 + p.constraints[i].rhs.abs()) / (1.0 + a_norm));
        eta = eta.max(a_norm);
    }
    let mut it = Iterate {
        x: identity(blocks, xi),
        y: DVector::zeros(r.rows.len()),
        s: identity(blocks, eta),
    };

    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut best_merit = f64::INFINITY;
    let mut since_progress = 0;
    // Iterate closest to the acceptance tolerances, kept in case later
    // steps lose accuracy to ill-conditioning.
    let acceptance = |m: &Measures| {
        ((m.pobj - m.dobj).abs() / opts.accept_gap)
            .max(m.rp_max / opts.accept_residual)
            .max(m.rd_max / opts.accept_residual)
    };
    let mut best: Option<(f64, Iterate)> = None;

    while iterations < opts.max_iterations {
        let m = measure(&r, &c, &it, &b);
        let mu = inner(&it.x, &it.s) / n_total;
        let gap = (m.pobj - m.dobj).abs();
        let rel_gap = gap.max(mu * n_total) / (1.0 + m.pobj.abs() + m.dobj.abs());
        if m.pinf <= opts.feasibility_tol && m.dinf <= opts.feasibility_tol && rel_gap <= opts.gap_tol {
            status = SolveStatus::Optimal;
            break;
        }
        if m.dobj > opts.divergence && m.dinf <= 1e-6 {
            status = SolveStatus::Infeasible;
            break;
        }
        if m.pobj < -opts.divergence && m.pinf <= 1e-6 {
            status = SolveStatus::Infeasible;
            break;
        }
        let score = acceptance(&m);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, it.clone()));
        }
        let merit = m.pinf.max(m.dinf).max(rel_gap);
        if merit < 0.5 * best_merit {
            best_merit = merit;
            since_progress = 0;
        } else {
            since_progress += 1;
            if since_progress >= 8 {
                status = SolveStatus::Stalled;
                break;
            }
        }

        let nt: Option<Vec<NtBlock>> = it.x.iter().zip(&it.s).map(|(x, s)| nt_block(x, s)).collect();
        let Some(nt) = nt else {
            status = SolveStatus::Stalled;
            break;
        };
        let factor = SchurFactor::new(schur(&r, &nt));

        // Predictor: σ = 0, R_c = −X.
        let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let Some(aff) = newton(&r, &factor, &nt, &m.rp, &m.rd, &rc_aff) else {
            status = SolveStatus::Stalled;
            break;
        };
        let (ap, ad) = step_lengths(&nt, &aff, 1.0);
        let mu_aff = inner(&axpy(&it.x, ap, &aff.dx), &axpy(&it.s, ad, &aff.ds)) / n_total;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector in the scaled space: R = 2σμI − 2Λ² − (D_X D_S + D_S D_X).
        let rc: Vec<DMatrix<f64>> = nt
            .iter()
            .enumerate()
            .map(|(k, blk)| {
                let dxs = &blk.g_inv * &aff.dx[k] * blk.g_inv.transpose();
                let dss = blk.g.transpose() * &aff.ds[k] * &blk.g;
                let cross = &dxs * &dss + &dss * &dxs;
                let n = blk.lambda.len();
                let mut d = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut rij = -cross[(i, j)];
                        if i == j {
                            rij += 2.0 * sigma * mu - 2.0 * blk.lambda[i] * blk.lambda[i];
                        }
                        d[(i, j)] = rij / (blk.lambda[i] + blk.lambda[j]);
                    }
                }
                &blk.g * d * blk.g.transpose()
            })
            .collect();
        let Some(dir) = newton(&r, &factor, &nt, &m.rp, &m.rd, &rc) else {
            status = SolveStatus::Stalled;
            break;
        };
        let (ap, ad) = step_lengths(&nt, &dir, opts.step_fraction);
        it.x = axpy(&it.x, ap, &dir.dx);
        it.y += &dir.dy * ad;
        it.s = axpy(&it.s, ad, &dir.ds);
        for m in it.x.iter_mut().chain(it.s.iter_mut()) {
            symmetrize(m);
        }
        iterations += 1;
    }

    let mut m = measure(&r, &c, &it, &b);
    if status != SolveStatus::Optimal && status != SolveStatus::Infeasible {
        if let Some((score, kept)) = best {
            if score < acceptance(&m) {
                it = kept;
                m = measure(&r, &c, &it, &b);
            }
        }
    }
    let gap = (m.pobj - m.dobj).abs();
    if status != SolveStatus::Optimal
        && status != SolveStatus::Infeasible
        && gap <= opts.accept_gap
        && m.rp_max <= opts.accept_residual
        && m.rd_max <= opts.accept_residual
    {
        status = SolveStatus::Optimal;
    }

    let mut dual_vector = vec![0.0; p.constraints.len()];
    for (k, &i) in r.rows.iter().enumerate() {
        dual_vector[i] = it.y[k];
    }
    Ok(SdpSolution {
        status,
        primal_value: m.pobj,
        dual_value: m.dobj,
        gap,
        primal_blocks: it.x,
        dual_vector,
        dual_slack: it.s,
        iterations,
        dropped_constraints: rank.dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// max_i |⟨A_i, X⟩ − b_i|
    pub primal_residual: f64,
    /// max |C − Σ y_i A_i − S| over all entries
    pub dual_residual: f64,
    pub min_primal_eigenvalue: f64,
    /// Smallest eigenvalue of C − Σ y_i A_i.
    pub min_dual_eigenvalue: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub violations: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const VERIFY_PSD_TOL: f64 = 1e-9;
pub const VERIFY_RESIDUAL_TOL: f64 = 1e-8;
pub const VERIFY_GAP_TOL: f64 = 1e-7;

/// Recomputes residuals, eigenvalue floors and the gap from scratch.
pub fn verify(p: &SdpProblem, s: &SdpSolution) -> VerifyReport {
    let mut violations = Vec::new();
    let ax = p.apply(&s.primal_blocks);
    let primal_residual = p
        .constraints
        .iter()
        .zip(&ax)
        .map(|(c, v)| (v - c.rhs).abs())
        .fold(0.0, f64::max);
    let slack = p.dual_slack(&s.dual_vector);
    let dual_residual = slack
        .iter()
        .zip(&s.dual_slack)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    let min_primal_eigenvalue = s.primal_blocks.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    let min_dual_eigenvalue = slack.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    let c = p.objective.to_dense(&p.blocks);
    let primal_value = inner(&c, &s.primal_blocks);
    let dual_value: f64 = p.constraints.iter().zip(&s.dual_vector).map(|(c, y)| c.rhs * y).sum();
    let gap = (primal_value - dual_value).abs();

    if s.status != SolveStatus::Optimal {
        violations.push(format!("status: {:?}", s.status));
    }
    if !(primal_residual <= VERIFY_RESIDUAL_TOL) {
        violations.push(format!("primal residual {primal_residual:.3e} > {VERIFY_RESIDUAL_TOL:e}"));
    }
    if !(dual_residual <= VERIFY_RESIDUAL_TOL) {
        violations.push(format!("dual residual {dual_residual:.3e} > {VERIFY_RESIDUAL_TOL:e}"));
    }
    if !(min_primal_eigenvalue >= -VERIFY_PSD_TOL) {
        violations.push(format!("primal eigenvalue {min_primal_eigenvalue:.3e} < -{VERIFY_PSD_TOL:e}"));
    }
    if !(min_dual_eigenvalue >= -VERIFY_RESIDUAL_TOL) {
        violations.push(format!("dual slack eigenvalue {min_dual_eigenvalue:.3e} < -{VERIFY_RESIDUAL_TOL:e}"));
    }
    if !(gap <= VERIFY_GAP_TOL) {
        violations.push(format!("duality gap {gap:.3e} > {VERIFY_GAP_TOL:e}"));
    }
    if dual_value > primal_value + 1e-9 {
        violations.push(format!("weak duality: dual {dual_value} > primal {primal_value}"));
    }
    VerifyReport {
        primal_residual,
        dual_residual,
        min_primal_eigenvalue,
        min_dual_eigenvalue,
        primal_value,
        dual_value,
        gap,
        violations,
    }
}

// JSON: block-major lists of row-major dense lower triangles.

fn lower_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

fn from_lower_triangle(n: usize, v: &[f64]) -> Result<DMatrix<f64>> {
    if v.len() != n * (n + 1) / 2 {
        return Err(Error::MalformedSdp(format!(
            "lower triangle of length {} for a {n}x{n} block",
            v.len()
        )));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

fn sparse_to_triangles(m: &BlockSparse, blocks: &[usize]) -> Vec<Vec<f64>> {
    m.to_dense(blocks).iter().map(lower_triangle).collect()
}

fn triangles_to_sparse(t: &[Vec<f64>], blocks: &[usize]) -> Result<BlockSparse> {
    if t.len() != blocks.len() {
        return Err(Error::MalformedSdp(format!("{} blocks given, {} expected", t.len(), blocks.len())));
    }
    let mut m = BlockSparse::new();
    for (k, (v, &n)) in t.iter().zip(blocks).enumerate() {
        let d = from_lower_triangle(n, v)?;
        for i in 0..n {
            for j in 0..=i {
                if d[(i, j)] != 0.0 {
                    m.push(k, i, j, d[(i, j)]);
                }
            }
        }
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct ConstraintJson {
    rhs: f64,
    blocks: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    blocks: Vec<usize>,
    objective: Vec<Vec<f64>>,
    constraints: Vec<ConstraintJson>,
}

impl From<&SdpProblem> for ProblemJson {
    fn from(p: &SdpProblem) -> Self {
        Self {
            blocks: p.blocks.clone(),
            objective: sparse_to_triangles(&p.objective, &p.blocks),
            constraints: p
                .constraints
                .iter()
                .map(|c| ConstraintJson {
                    rhs: c.rhs,
                    blocks: sparse_to_triangles(&c.coefficients, &p.blocks),
                })
                .collect(),
        }
    }
}

impl ProblemJson {
    fn into_problem(self) -> Result<SdpProblem> {
        let objective = triangles_to_sparse(&self.objective, &self.blocks)?;
        let constraints = self
            .constraints
            .iter()
            .map(|c| {
                Ok(Constraint {
                    coefficients: triangles_to_sparse(&c.blocks, &self.blocks)?,
                    rhs: c.rhs,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SdpProblem {
            blocks: self.blocks,
            objective,
            constraints,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SolutionJson {
    status: SolveStatus,
    primal_value: f64,
    dual_value: f64,
    gap: f64,
    iterations: usize,
    blocks: Vec<usize>,
    primal_blocks: Vec<Vec<f64>>,
    dual_vector: Vec<f64>,
    dual_slack: Vec<Vec<f64>>,
    dropped_constraints: Vec<usize>,
}

impl From<&SdpSolution> for SolutionJson {
    fn from(s: &SdpSolution) -> Self {
        Self {
            status: s.status,
            primal_value: s.primal_value,
            dual_value: s.dual_value,
            gap: s.gap,
            iterations: s.iterations,
            blocks: s.primal_blocks.iter().map(|m| m.nrows()).collect(),
            primal_blocks: s.primal_blocks.iter().map(lower_triangle).collect(),
            dual_vector: s.dual_vector.clone(),
            dual_slack: s.dual_slack.iter().map(lower_triangle).collect(),
            dropped_constraints: s.dropped_constraints.clone(),
        }
    }
}

impl SolutionJson {
    fn into_solution(self) -> Result<SdpSolution> {
        let unpack = |t: &[Vec<f64>]| -> Result<Vec<DMatrix<f64>>> {
            if t.len() != self.blocks.len() {
                return Err(Error::MalformedSdp("block count mismatch".into()));
            }
            t.iter().zip(&self.blocks).map(|(v, &n)| from_lower_triangle(n, v)).collect()
        };
        Ok(SdpSolution {
            status: self.status,
            primal_blocks: unpack(&self.primal_blocks)?,
            dual_slack: unpack(&self.dual_slack)?,
            dual_vector: self.dual_vector,
            primal_value: self.primal_value,
            dual_value: self.dual_value,
            gap: self.gap,
            iterations: self.iterations,
            dropped_constraints: self.dropped_constraints,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace_problem() -> SdpProblem {
        let mut p = SdpProblem::new(vec![2]);
        p.objective = BlockSparse::new().with(0, 0, 0, 1.0).with(0, 1, 1, 1.0);
        p.add_constraint(BlockSparse::new().with(0, 0, 0, 1.0).with(0, 1, 1, 1.0), 1.0);
        p
    }

    #[test]
    fn trace_example() {
        let p = trace_problem();
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.primal_value - 1.0).abs() < 1e-8);
        assert!((s.dual_value - 1.0).abs() < 1e-8);
        assert!((s.primal_blocks[0].trace() - 1.0).abs() < 1e-8);
        assert!(verify(&p, &s).passed(), "{:?}", verify(&p, &s));
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let mut p = SdpProblem::new(vec![2]);
        p.objective = BlockSparse::new().with(0, 0, 0, 1.0);
        p.add_constraint(BlockSparse::new().with(0, 0, 0, 1.0), 1.0);
        p.add_constraint(BlockSparse::new().with(0, 0, 0, 1.0), 2.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(!verify(&p, &s).passed());
    }

    #[test]
    fn infeasible_by_divergence() {
        // X₁₁ = −1 has independent rows but no PSD solution.
        let mut p = SdpProblem::new(vec![2]);
        p.objective = BlockSparse::new().with(0, 0, 0, 1.0).with(0, 1, 1, 1.0);
        p.add_constraint(BlockSparse::new().with(0, 0, 0, 1.0), -1.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible, "{s:?}");
    }

    #[test]
    fn redundant_consistent_rows_are_dropped() {
        let mut p = trace_problem();
        p.add_constraint(BlockSparse::new().with(0, 0, 0, 2.0).with(0, 1, 1, 2.0), 2.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.dropped_constraints, vec![1]);
        assert_eq!(s.dual_vector[1], 0.0);
        assert!((s.primal_value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn off_diagonal_coupling() {
        // min −2X₁₂ s.t. X₁₁ = X₂₂ = 1 → −2 at X = [[1,1],[1,1]].
        let mut p = SdpProblem::new(vec![2]);
        p.objective = BlockSparse::new().with(0, 1, 0, -1.0);
        p.add_constraint(BlockSparse::new().with(0, 0, 0, 1.0), 1.0);
        p.add_constraint(BlockSparse::new().with(0, 1, 1, 1.0), 1.0);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert!(s.is_optimal());
        assert!((s.primal_value + 2.0).abs() < 1e-7, "{}", s.primal_value);
        assert!(verify(&p, &s).passed());
    }

    #[test]
    fn deterministic() {
        let p = trace_problem();
        let a = solve(&p, &SolveOptions::default()).unwrap();
        let b = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.primal_value.to_bits(), b.primal_value.to_bits());
    }

    #[test]
    fn negative_eigenvalue_is_named() {
        let p = trace_problem();
        let mut s = solve(&p, &SolveOptions::default()).unwrap();
        let n = s.primal_blocks[0].nrows();
        let e = SymmetricEigen::new(s.primal_blocks[0].clone());
        let mut vals = e.eigenvalues.clone();
        vals[0] = -1e-3;
        vals[1] = 1.0 + 1e-3;
        s.primal_blocks[0] = &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose();
        assert_eq!(n, 2);
        let r = verify(&p, &s);
        assert!(!r.passed());
        assert!(r.violations.iter().any(|v| v.starts_with("primal eigenvalue")), "{r:?}");
    }

    #[test]
    fn perturbation_shows_in_residual() {
        let p = trace_problem();
        let mut s = solve(&p, &SolveOptions::default()).unwrap();
        let before = verify(&p, &s).primal_residual;
        s.primal_blocks[0][(0, 0)] += 1e-6;
        let r = verify(&p, &s);
        assert!((r.primal_residual - 1e-6).abs() < 1e-8 + before, "{r:?}");
    }

    #[test]
    fn json_roundtrip() {
        let mut p = trace_problem();
        p.objective.push(0, 0, 1, 0.25);
        let back = SdpProblem::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back.blocks, p.blocks);
        let x = identity(&p.blocks, 1.0);
        assert_eq!(back.objective.inner(&x), p.objective.inner(&x));
        assert_eq!(back.apply(&x), p.apply(&x));

        let s = solve(&p, &SolveOptions::default()).unwrap();
        let s2 = SdpSolution::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s2.status, s.status);
        assert_eq!(s2.dual_vector, s.dual_vector);
        assert!((&s2.primal_blocks[0] - &s.primal_blocks[0]).amax() == 0.0);
    }

    #[test]
    fn malformed_problems_rejected() {
        let mut p = SdpProblem::new(vec![2]);
        p.add_constraint(BlockSparse::new().with(0, 2, 0, 1.0), 1.0);
        assert!(solve(&p, &SolveOptions::default()).is_err());
        assert!(solve(&SdpProblem::new(vec![65]), &SolveOptions::default()).is_err());
        assert!(solve(&SdpProblem::new(vec![]), &SolveOptions::default()).is_err());
    }

    /// Brute-force LP oracle: min cᵀx, Ax = b, x ≥ 0 over all basic solutions.
    fn lp_oracle(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
        let (m, n) = a.shape();
        let mut best = f64::INFINITY;
        let mut pick = vec![0usize; m];
        fn rec(
            k: usize,
            start: usize,
            pick: &mut Vec<usize>,
            a: &DMatrix<f64>,
            b: &DVector<f64>,
            c: &DVector<f64>,
            best: &mut f64,
        ) {
            let (m, n) = a.shape();
            if k == m {
                let sub = DMatrix::from_fn(m, m, |i, j| a[(i, pick[j])]);
                if let Some(xb) = sub.lu().solve(b) {
                    if xb.iter().all(|&v| v >= -1e-12) {
                        let val: f64 = (0..m).map(|j| c[pick[j]] * xb[j]).sum();
                        *best = best.min(val);
                    }
                }
                return;
            }
            for j in start..n {
                pick[k] = j;
                rec(k + 1, j + 1, pick, a, b, c, best);
            }
        }
        rec(0, 0, &mut pick, a, b, c, &mut best);
        let _ = n;
        best
    }

    #[test]
    fn diagonal_sdps_match_lp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..100 {
            let n = rng.random_range(3..7);
            let m = rng.random_range(1..n);
            let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
            let y0 = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let s0 = DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
            let b = &a * &x0;
            let c = a.transpose() * &y0 + &s0;

            let mut p = SdpProblem::new(vec![n]);
            for j in 0..n {
                p.objective.push(0, j, j, c[j]);
            }
            for i in 0..m {
                let mut row = BlockSparse::new();
                for j in 0..n {
                    row.push(0, j, j, a[(i, j)]);
                }
                p.add_constraint(row, b[i]);
            }
            let s = solve(&p, &SolveOptions::default()).unwrap();
            let oracle = lp_oracle(&a, &b, &c);
            assert!(s.is_optimal(), "case {case}: {:?}", s.status);
            assert!((s.primal_value - oracle).abs() < 1e-7, "case {case}: {} vs {oracle}", s.primal_value);
            assert!(s.dual_value <= s.primal_value + 1e-9, "case {case}");
            assert!(verify(&p, &s).passed(), "case {case}: {:?}", verify(&p, &s));
        }
    }

    #[test]
    fn random_dense_sdps_satisfy_weak_duality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let blocks = vec![rng.random_range(2..5), rng.random_range(1..4)];
            let mut p = SdpProblem::new(blocks.clone());
            let rand_sym = |rng: &mut ChaCha8Rng| {
                let mut m = BlockSparse::new();
                for (k, &n) in blocks.iter().enumerate() {
                    for i in 0..n {
                        for j in 0..=i {
                            m.push(k, i, j, rng.random_range(-1.0..1.0));
                        }
                    }
                }
                m
            };
            // Strictly feasible: b = A(I), C = Aᵀy₀ + I.
            let ones = identity(&blocks, 1.0);
            let mut c = identity(&blocks, 1.0);
            let nc = rng.random_range(1..5);
            for _ in 0..nc {
                let a = rand_sym(&mut rng);
                let y0: f64 = rng.random_range(-0.3..0.3);
                a.add_to(&mut c, y0);
                let rhs = a.inner(&ones);
                p.add_constraint(a, rhs);
            }
            for (k, m) in c.iter().enumerate() {
                for i in 0..m.nrows() {
                    for j in 0..=i {
                        p.objective.push(k, i, j, m[(i, j)]);
                    }
                }
            }
            let s = solve(&p, &SolveOptions::default()).unwrap();
            assert!(s.is_optimal(), "case {case}: {:?}", s.status);
            assert!(s.dual_value <= s.primal_value + 1e-9);
            assert!(verify(&p, &s).passed(), "case {case}: {:?}", verify(&p, &s));
        }
    }
}
