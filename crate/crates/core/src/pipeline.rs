//! End-to-end simulated experiment: tomography, settings choice, Bell
//! sampling, randomness certification and self-testing per target angle,
//! written out as CSV tables and a JSON manifest.

use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{born_behavior, collins_gisin_regularize, Behavior};
use crate::error::{out_of_range, Error, Result};
use crate::npa::{guess, Certificate, Level};
use crate::quantum::{DensityMatrix, PesState};
use crate::selftest::{di_estimate, separable_fidelity, FidelityBound};
use crate::stats::{propagate_affine, propagate_functional, propagate_log2, round_significant, sample_behavior, MeasuredBehavior};
use crate::tilted::{alpha_from_theta, optimal_settings, TiltedBell};
use crate::tomography::{analyze, simulate_counts, TomographyResult};

pub const DEFAULT_THETAS: [f64; 5] = [0.10539, 0.19002, 0.32140, 0.45946, 0.7847];

/// White-noise fractions tried, in order, when a sampled behavior falls
/// outside the relaxation and the guessing program has no solution.
pub const FEASIBILITY_MIX: [f64; 6] = [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3];

/// Points on the reference curve.
pub const REFERENCE_POINTS: usize = 24;

fn default_thetas() -> Vec<f64> {
    DEFAULT_THETAS.to_vec()
}
fn default_visibility() -> f64 {
    0.997
}
fn default_white_noise() -> f64 {
    0.005
}
fn default_counts() -> Option<f64> {
    Some(1e4)
}
fn default_level() -> Level {
    Level::Level2
}
fn default_x_star() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_thetas")]
    pub theta_list: Vec<f64>,
    #[serde(default = "default_visibility")]
    pub visibility: f64,
    /// Noise of the reference curve.
    #[serde(default = "default_white_noise")]
    pub white_noise: f64,
    /// Counts per setting for both tomography and the Bell test; `null`
    /// selects infinite statistics.
    #[serde(default = "default_counts")]
    pub counts_per_setting: Option<f64>,
    #[serde(default = "default_level")]
    pub npa_level: Level,
    #[serde(default = "default_x_star")]
    pub x_star: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            theta_list: default_thetas(),
            visibility: default_visibility(),
            white_noise: default_white_noise(),
            counts_per_setting: default_counts(),
            npa_level: default_level(),
            x_star: default_x_star(),
            seed: 0,
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_list.is_empty() {
            return Err(Error::Config("theta_list is empty".into()));
        }
        for &t in &self.theta_list {
            if !(t > 0.0 && t <= FRAC_PI_4) {
                return Err(out_of_range("theta", t, "(0, pi/4]"));
            }
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(out_of_range("visibility", self.visibility, "[0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.white_noise) {
            return Err(out_of_range("white_noise", self.white_noise, "[0, 1]"));
        }
        if let Some(n) = self.counts_per_setting {
            if !(n > 0.0 && n.is_finite()) {
                return Err(out_of_range("counts_per_setting", n, "(0, ∞)"));
            }
        }
        if self.x_star > 1 {
            return Err(Error::Config(format!("x_star must be 0 or 1, got {}", self.x_star)));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// One row per target angle, in the column order of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub theta_target: f64,
    pub concurrence: f64,
    pub purity: f64,
    pub theta_closest: f64,
    pub fidelity_closest: f64,
    pub alpha: f64,
    pub bell_value: f64,
    pub bell_sigma: f64,
    pub local_bound: f64,
    pub quantum_bound: f64,
    pub relative_violation: f64,
    pub p_guess: f64,
    pub randomness_bits: f64,
    pub randomness_sigma: f64,
    /// None when the fidelity bound is not informative.
    pub theta_star: Option<f64>,
    pub certified_fidelity: f64,
    pub flags: Vec<String>,
    pub seed: u64,
    pub level: Level,
    pub counts_per_setting: Option<f64>,
    /// Regularized behavior the numbers were computed on.
    pub behavior: Behavior,
    #[serde(with = "certificate_json")]
    pub certificate: Certificate,
}

mod certificate_json {
    use super::Certificate;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &Certificate, s: S) -> Result<S::Ok, S::Error> {
        let v: serde_json::Value = serde_json::from_str(&c.to_json().map_err(serde::ser::Error::custom)?)
            .map_err(serde::ser::Error::custom)?;
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Certificate, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Certificate::from_json(&v.to_string()).map_err(D::Error::custom)
    }
}

/// A row that could not be produced, with the stage that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub theta_target: f64,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RowFailure>,
}

fn fail(theta: f64, stage: &str) -> impl FnOnce(Error) -> RowFailure + '_ {
    move |e| RowFailure {
        theta_target: theta,
        stage: stage.to_string(),
        reason: e.to_string(),
    }
}

fn source_state(theta: f64, visibility: f64) -> Result<DensityMatrix> {
    PesState::new(theta)?.density().with_white_noise(visibility)
}

pub fn run_row(config: &ExperimentConfig, theta: f64, seed: u64) -> std::result::Result<ResultRow, RowFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tomo_seed, bell_seed): (u64, u64) = (rng.random(), rng.random());
    let rho = source_state(theta, config.visibility).map_err(fail(theta, "state"))?;

    let tomo = match config.counts_per_setting {
        Some(n) => simulate_counts(&rho, n, tomo_seed)
            .and_then(|r| analyze(&r))
            .map_err(fail(theta, "tomography"))?,
        None => TomographyResult::from_state(rho.clone()),
    };

    let mut flags = Vec::new();
    let settings_theta = if tomo.theta_closest > 0.0 {
        tomo.theta_closest
    } else {
        flags.push("tomography_theta_zero".to_string());
        theta
    };
    let alpha = alpha_from_theta(settings_theta).map_err(fail(theta, "settings"))?;
    let bell = TiltedBell::new(alpha).map_err(fail(theta, "settings"))?;
    let m = optimal_settings(settings_theta)
        .map_err(fail(theta, "settings"))?
        .measurement_set();
    let exact = born_behavior(&rho, &m);

    let measured = match config.counts_per_setting {
        Some(n) => sample_behavior(&exact, n, bell_seed).map_err(fail(theta, "sampling"))?,
        None => MeasuredBehavior::exact(exact),
    };
    let regularized = MeasuredBehavior {
        behavior: collins_gisin_regularize(&measured.behavior),
        sigma: measured.sigma,
    };
    let (bell_value, bell_sigma) = propagate_functional(&regularized, &bell.functional());

    let certificate = certify(&regularized.behavior, config, &mut flags).map_err(fail(theta, "randomness"))?;
    let (p_guess, p_sigma) = propagate_affine(&regularized, &certificate.coefficients, certificate.constant);
    if p_guess > 1.0 {
        flags.push("certificate_above_one".to_string());
    }
    // Sampling can leave the quantum set, where the affine bound may fall
    // below the trivial 1/2.
    if p_guess < 0.5 {
        flags.push("certificate_below_half".to_string());
    }
    let (randomness_bits, randomness_sigma) =
        propagate_log2(p_guess.clamp(0.5, 1.0), p_sigma).map_err(fail(theta, "randomness"))?;

    let fid: FidelityBound = di_estimate(&regularized.behavior).map_err(fail(theta, "self-test"))?;
    if fid.non_informative {
        flags.push("fidelity_non_informative".to_string());
    }
    if bell_value < bell.local_bound() {
        flags.push("no_violation".to_string());
    }

    Ok(ResultRow {
        theta_target: theta,
        concurrence: tomo.concurrence,
        purity: tomo.purity,
        theta_closest: tomo.theta_closest,
        fidelity_closest: tomo.fidelity_closest,
        alpha,
        bell_value,
        bell_sigma,
        local_bound: bell.local_bound(),
        quantum_bound: bell.quantum_max(),
        relative_violation: bell.relative_violation(bell_value),
        p_guess,
        randomness_bits,
        randomness_sigma,
        theta_star: (!fid.non_informative).then_some(fid.theta_star),
        certified_fidelity: fid.reported_fidelity(),
        flags,
        seed,
        level: config.npa_level,
        counts_per_setting: config.counts_per_setting,
        behavior: regularized.behavior,
        certificate,
    })
}

/// Certificate for `b`. A sampled behavior can fall just outside the
/// relaxation, leaving the program without a solution; it is then solved
/// at a white-noise mixture, whose certificate still bounds every quantum
/// behavior and is evaluated at `b` by the caller.
fn certify(b: &Behavior, config: &ExperimentConfig, flags: &mut Vec<String>) -> Result<Certificate> {
    let first = match guess(b, config.x_star, config.npa_level) {
        Ok(g) => return Ok(g.certificate),
        Err(e) => e,
    };
    for f in FEASIBILITY_MIX {
        let mixed = b.mix(&Behavior::uniform(), f);
        if let Ok(g) = guess(&mixed, config.x_star, config.npa_level) {
            flags.push(format!("solved_at_noise_mix_{f}"));
            return Ok(g.certificate);
        }
    }
    Err(first)
}

/// Per-row seeds drawn from the configured seed.
pub fn row_seeds(config: &ExperimentConfig) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    config.theta_list.iter().map(|_| rng.random()).collect()
}

pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&theta, seed) in config.theta_list.iter().zip(row_seeds(config)) {
        match run_row(config, theta, seed) {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(PipelineOutput { rows, failures })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub theta: f64,
    pub concurrence: f64,
    pub p_guess: f64,
    pub randomness_bits: f64,
}

/// Infinite-statistics randomness for PES(θ) with the configured white
/// noise, on a uniform θ grid up to π/4.
pub fn analytic_reference(config: &ExperimentConfig) -> Result<Vec<ReferencePoint>> {
    reference_curve(config, &reference_grid(REFERENCE_POINTS))
}

pub fn reference_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|k| FRAC_PI_4 * k as f64 / n as f64).collect()
}

pub fn reference_curve(config: &ExperimentConfig, thetas: &[f64]) -> Result<Vec<ReferencePoint>> {
    thetas
        .iter()
        .map(|&theta| {
            let rho = source_state(theta, 1.0 - config.white_noise)?;
            let b = born_behavior(&rho, &optimal_settings(theta)?.measurement_set());
            let g = guess(&b, config.x_star, config.npa_level)?;
            Ok(ReferencePoint {
                theta,
                concurrence: (2.0 * theta).sin(),
                p_guess: g.p_guess,
                randomness_bits: -g.p_guess.log2(),
            })
        })
        .collect()
}

fn sig6(x: f64) -> String {
    format!("{}", round_significant(x, 6))
}

fn sig2(x: f64) -> String {
    format!("{}", round_significant(x, 2))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// table.csv, fig2–5.csv, rows.json; fig4.csv carries the reference curve.
pub fn write_outputs(dir: &Path, out: &PipelineOutput, reference: &[ReferencePoint]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let table: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                sig6(r.theta_target),
                sig6(r.concurrence),
                sig6(r.purity),
                sig6(r.alpha),
                sig6(r.bell_value),
                sig2(r.bell_sigma),
                sig6(r.local_bound),
                sig6(r.quantum_bound),
                sig6(r.relative_violation),
                sig6(r.p_guess),
                sig6(r.randomness_bits),
                sig2(r.randomness_sigma),
                r.theta_star.map_or_else(|| "NA".to_string(), sig6),
                sig6(r.certified_fidelity),
                r.flags.join(";"),
            ]
        })
        .chain(out.failures.iter().map(|f| {
            let mut v = vec![sig6(f.theta_target)];
            v.extend(std::iter::repeat_n(String::new(), 13));
            v.push(format!("failed:{}:{}", f.stage, f.reason));
            v
        }))
        .collect();
    write_csv(
        &dir.join("table.csv"),
        &[
            "theta_target",
            "concurrence",
            "purity",
            "alpha",
            "bell_value",
            "bell_sigma",
            "local_bound",
            "quantum_bound",
            "relative_violation",
            "p_guess",
            "randomness_bits",
            "randomness_sigma",
            "theta_star",
            "certified_fidelity",
            "flags",
        ],
        &table,
    )?;

    let fig2: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                sig6(r.theta_target),
                sig6(r.concurrence),
                sig6(r.purity),
                sig6(r.theta_closest),
                sig6(r.fidelity_closest),
            ]
        })
        .collect();
    write_csv(
        &dir.join("fig2.csv"),
        &["theta_target", "concurrence", "purity", "theta_closest", "fidelity_closest"],
        &fig2,
    )?;

    let mut fig3: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                "point".into(),
                sig6(r.theta_target),
                sig6(r.alpha),
                sig6(r.bell_value),
                sig2(r.bell_sigma),
                sig6(r.local_bound),
                sig6(r.quantum_bound),
            ]
        })
        .collect();
    for theta in reference_grid(REFERENCE_POINTS) {
        let b = TiltedBell::new(alpha_from_theta(theta)?)?;
        fig3.push(vec![
            "curve".into(),
            sig6(theta),
            sig6(b.alpha()),
            String::new(),
            String::new(),
            sig6(b.local_bound()),
            sig6(b.quantum_max()),
        ]);
    }
    write_csv(
        &dir.join("fig3.csv"),
        &["kind", "theta", "alpha", "bell_value", "bell_sigma", "local_bound", "quantum_bound"],
        &fig3,
    )?;

    let mut fig4: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                "point".into(),
                sig6(r.theta_target),
                sig6(r.concurrence),
                sig6(r.randomness_bits),
                sig2(r.randomness_sigma),
            ]
        })
        .collect();
    fig4.extend(reference.iter().map(|p| {
        vec![
            "reference".into(),
            sig6(p.theta),
            sig6(p.concurrence),
            sig6(p.randomness_bits),
            String::new(),
        ]
    }));
    write_csv(
        &dir.join("fig4.csv"),
        &["kind", "theta", "concurrence", "randomness_bits", "randomness_sigma"],
        &fig4,
    )?;

    let mut fig5: Vec<Vec<String>> = out
        .rows
        .iter()
        .map(|r| {
            vec![
                "point".into(),
                sig6(r.theta_target),
                sig6(r.certified_fidelity),
                r.theta_star.map_or_else(|| "NA".to_string(), sig6),
                sig6(separable_fidelity(r.theta_target)),
            ]
        })
        .collect();
    for theta in reference_grid(REFERENCE_POINTS) {
        fig5.push(vec![
            "separable".into(),
            sig6(theta),
            String::new(),
            String::new(),
            sig6(separable_fidelity(theta)),
        ]);
    }
    write_csv(
        &dir.join("fig5.csv"),
        &["kind", "theta", "certified_fidelity", "theta_star", "separable_fidelity"],
        &fig5,
    )?;

    fs::write(dir.join("rows.json"), serde_json::to_string_pretty(out)?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub row_seeds: Vec<u64>,
    pub crate_version: String,
    pub started: String,
    pub finished: String,
    /// The summary table's ε row is not regenerated by this pipeline.
    pub epsilon: String,
    pub rows: usize,
    pub failures: usize,
}

/// Runs the pipeline and writes every artifact into `config.output_dir`.
pub fn run_and_write(config: &ExperimentConfig) -> Result<PipelineOutput> {
    let started = chrono::Utc::now().to_rfc3339();
    let out = run_pipeline(config)?;
    let reference = analytic_reference(config)?;
    write_outputs(&config.output_dir, &out, &reference)?;
    let manifest = Manifest {
        config: config.clone(),
        seed: config.seed,
        row_seeds: row_seeds(config),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        epsilon: "not reconstructed".to_string(),
        rows: out.rows.len(),
        failures: out.failures.len(),
    };
    fs::write(config.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(out)
}

/// Writes the reference curve alone to `reference.csv`.
pub fn write_reference(config: &ExperimentConfig) -> Result<Vec<ReferencePoint>> {
    config.validate()?;
    let reference = analytic_reference(config)?;
    fs::create_dir_all(&config.output_dir)?;
    let rows: Vec<Vec<String>> = reference
        .iter()
        .map(|p| vec![sig6(p.theta), sig6(p.concurrence), sig6(p.p_guess), sig6(p.randomness_bits)])
        .collect();
    write_csv(
        &config.output_dir.join("reference.csv"),
        &["theta", "concurrence", "p_guess", "randomness_bits"],
        &rows,
    )?;
    Ok(reference)
}
