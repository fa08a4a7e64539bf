//! Python bindings: `import dicert_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dicert::behavior::Behavior;
use dicert::npa::{self, Level};
use dicert::pipeline::{self, ExperimentConfig};
use dicert::{selftest, tilted};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn behavior(p: Vec<f64>) -> PyResult<Behavior> {
    let p: [f64; 16] = p
        .try_into()
        .map_err(|v: Vec<f64>| err(format!("expected 16 probabilities, got {}", v.len())))?;
    Behavior::new(p).map_err(err)
}

#[pyfunction]
fn local_bound(alpha: f64) -> PyResult<f64> {
    tilted::local_bound(alpha).map_err(err)
}

#[pyfunction]
fn quantum_max(alpha: f64) -> PyResult<f64> {
    tilted::quantum_max(alpha).map_err(err)
}

#[pyfunction]
fn theta_from_alpha(alpha: f64) -> PyResult<f64> {
    tilted::theta_from_alpha(alpha).map_err(err)
}

#[pyfunction]
fn alpha_from_theta(theta: f64) -> PyResult<f64> {
    tilted::alpha_from_theta(theta).map_err(err)
}

/// Born-rule behavior of PES(θ) with white noise at the optimal settings,
/// as 16 probabilities p(ab|xy) in (x, y, a, b) order.
#[pyfunction]
#[pyo3(signature = (theta, visibility = 1.0))]
fn tilted_behavior(theta: f64, visibility: f64) -> PyResult<Vec<f64>> {
    let m = tilted::optimal_settings(theta).map_err(err)?.measurement_set();
    let rho = dicert::quantum::PesState::new(theta)
        .and_then(|s| s.density().with_white_noise(visibility))
        .map_err(err)?;
    Ok(dicert::behavior::born_behavior(&rho, &m).probabilities().to_vec())
}

#[pyfunction]
fn fidelity_bound(alpha: f64, bell_value: f64) -> PyResult<f64> {
    selftest::fidelity_bound(alpha, bell_value).map_err(err)
}

/// (p_guess, certificate JSON) for input `x_star`.
#[pyfunction]
#[pyo3(signature = (probabilities, x_star = 1, level = "level2"))]
fn guessing_probability(probabilities: Vec<f64>, x_star: usize, level: &str) -> PyResult<(f64, String)> {
    let b = behavior(probabilities)?;
    let level: Level = level.parse().map_err(err)?;
    let (p, cert) = npa::guessing_probability(&b, x_star, level).map_err(err)?;
    Ok((p, cert.to_json().map_err(err)?))
}

/// Runs the simulated experiment for a JSON config and returns the rows
/// and failures as JSON, without writing files.
#[pyfunction]
fn run_pipeline(config_json: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_json(config_json).map_err(err)?;
    let out = pipeline::run_pipeline(&config).map_err(err)?;
    serde_json::to_string(&out).map_err(err)
}

#[pymodule]
fn dicert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(local_bound, m)?)?;
    m.add_function(wrap_pyfunction!(quantum_max, m)?)?;
    m.add_function(wrap_pyfunction!(theta_from_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_from_theta, m)?)?;
    m.add_function(wrap_pyfunction!(tilted_behavior, m)?)?;
    m.add_function(wrap_pyfunction!(fidelity_bound, m)?)?;
    m.add_function(wrap_pyfunction!(guessing_probability, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
