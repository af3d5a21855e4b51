//! Python bindings. Matrices cross the boundary as lists of rows; reports come
//! back as plain dicts with the same fields as the CLI's JSON.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use sparse_encoders::encoder::{self, EncoderMode};
use sparse_encoders::harness::{self, ExperimentConfig, InputKind, Sparsity};
use sparse_encoders::{metrics, synth, DataMatrix, Error, SparseEncoder, SynthParams};

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Numerical(_) | Error::RankDeficient { .. } | Error::DegenerateSelection { .. } => {
            PyArithmeticError::new_err(msg)
        }
        Error::Io(_) => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn data(x: Vec<Vec<f64>>, covariance: bool) -> PyResult<DataMatrix> {
    let x = DataMatrix::from_rows(&x).map_err(to_py)?;
    let kind = if covariance { InputKind::Covariance } else { InputKind::Data };
    harness::prepare_input(x, kind).map_err(to_py)
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Build one encoder. Give exactly one of `r`, `schedule` or `eps`.
///
/// Returns a dict with `loadings` (d x k), `decoder` (k x d) and `report`.
#[pyfunction]
#[pyo3(signature = (x, k, r=None, schedule=None, eps=None, algorithm="batch", strategy="randomized", seed=0, trials=1, covariance=false))]
#[allow(clippy::too_many_arguments)]
fn encode<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    k: usize,
    r: Option<usize>,
    schedule: Option<Vec<usize>>,
    eps: Option<f64>,
    algorithm: &str,
    strategy: &str,
    seed: u64,
    trials: usize,
    covariance: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let sparsity = match (r, schedule, eps) {
        (Some(r), None, None) => Sparsity::Fixed(r),
        (None, Some(s), None) => Sparsity::Schedule(s),
        (None, None, Some(e)) => Sparsity::Eps(e),
        _ => return Err(PyValueError::new_err("give exactly one of r, schedule, eps")),
    };
    let mut cfg = ExperimentConfig::new(k, sparsity);
    cfg.algorithm = algorithm.parse().map_err(to_py)?;
    cfg.strategy = strategy.parse().map_err(to_py)?;
    cfg.seed = seed;
    cfg.trials = trials;
    let x = data(x, covariance)?;
    let run = py.detach(|| harness::run_encoder(&x, &cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("loadings", rows_of(run.encoder.loadings()))?;
    out.set_item("decoder", rows_of(run.decoder.matrix()))?;
    out.set_item("report", to_dict(py, &run.report)?)?;
    Ok(out)
}

/// `‖X − XH(XH)†X‖_F²` for a dense encoder `h` (d x k).
#[pyfunction]
fn information_loss(x: Vec<Vec<f64>>, h: Vec<Vec<f64>>) -> PyResult<f64> {
    let x = data(x, false)?;
    let h = encoder_of(h)?;
    encoder::information_loss(&x, &h).map_err(to_py)
}

fn encoder_of(h: Vec<Vec<f64>>) -> PyResult<SparseEncoder> {
    let h = DataMatrix::from_rows(&h).map_err(to_py)?;
    SparseEncoder::from_dense(h.into_inner(), EncoderMode::External).map_err(to_py)
}

/// Losses and sparsity of a given encoder, as in `spenc metrics`.
#[pyfunction]
fn measure<'py>(py: Python<'py>, x: Vec<Vec<f64>>, h: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let x = data(x, false)?;
    let h = encoder_of(h)?;
    let k = h.k();
    let out = PyDict::new(py);
    out.set_item("info_loss", encoder::information_loss(&x, &h).map_err(to_py)?)?;
    out.set_item(
        "info_loss_normalized",
        metrics::normalized_information_loss(&x, &h, k).map_err(to_py)?,
    )?;
    out.set_item(
        "sym_explained_variance",
        metrics::symmetric_explained_variance(&x, &h, k).map_err(to_py)?,
    )?;
    out.set_item("combined_sparsity", metrics::combined_sparsity(&h))?;
    out.set_item("avg_column_sparsity", metrics::avg_column_sparsity(&h))?;
    Ok(out)
}

/// Per-column sparsities for `k` columns at accuracy `eps`.
#[pyfunction]
fn adaptive_schedule(k: usize, eps: f64) -> PyResult<Vec<usize>> {
    encoder::adaptive_schedule(k, eps).map_err(to_py)
}

/// Synthetic `n x d` matrix; `kind` is power-law, spiked, flat or all-ones.
#[pyfunction]
#[pyo3(signature = (kind, n, d, seed=0, decay=1.0, spikes=3, spike=10.0, noise=0.1))]
#[allow(clippy::too_many_arguments)]
fn generate(
    kind: &str,
    n: usize,
    d: usize,
    seed: u64,
    decay: f64,
    spikes: usize,
    spike: f64,
    noise: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let kind = kind.parse().map_err(to_py)?;
    let params = SynthParams {
        decay,
        spikes,
        spike,
        noise,
    };
    let x = synth::generate_synthetic(kind, n, d, &params, seed).map_err(to_py)?;
    Ok(x.to_rows())
}

#[pymodule]
fn sparse_encoders_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(information_loss, m)?)?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
