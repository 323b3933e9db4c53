//! Python module `spectral_denoise`.
//!
//! Matrices cross the boundary as sequences of rows (lists of lists or 2-D
//! numpy arrays) and come back as lists of lists.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use spectral_denoise::applications::{
    estimate_noise_covariances, estimate_sampling_probabilities, missing_data_denoise, shrink_submatrix_baseline,
    snr_gain_tau, submatrix_denoise, whiten_denoise, Covariance, NoiseCovariances, SamplingPattern,
};
use spectral_denoise::simlab::{run_experiment, ExperimentConfig, SCENARIOS};
use spectral_denoise::spiked::{cosines, forward_singular_value, invert_singular_value};
use spectral_denoise::{
    diagonal_denoise, localized_denoise, make_equispaced_partition, svs_shrink, AspectRatio, DenoiseError,
    DenoiseOptions, DenoiseResult, Partition, WeightOperator,
};

create_exception!(spectral_denoise, SpectralDenoiseError, PyValueError);
create_exception!(spectral_denoise, BelowDetectionThreshold, SpectralDenoiseError);

fn to_py(e: DenoiseError) -> PyErr {
    match e {
        DenoiseError::BelowDetectionThreshold { .. } => BelowDetectionThreshold::new_err(e.to_string()),
        _ => SpectralDenoiseError::new_err(e.to_string()),
    }
}

type Rows = Vec<Vec<f64>>;

fn matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(SpectralDenoiseError::new_err("matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(SpectralDenoiseError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A vector of diagonal weights, or a dense matrix.
#[derive(FromPyObject)]
enum Weight {
    Diagonal(Vec<f64>),
    Dense(Rows),
}

fn weight(dim: usize, w: Option<Weight>, indices: Option<Vec<usize>>) -> PyResult<WeightOperator> {
    let op = match (w, indices) {
        (Some(_), Some(_)) => return Err(SpectralDenoiseError::new_err("give weights or indices, not both")),
        (Some(Weight::Diagonal(d)), None) => WeightOperator::diagonal(DVector::from_vec(d)),
        (Some(Weight::Dense(m)), None) => WeightOperator::dense(matrix(&m)?),
        (None, Some(idx)) => WeightOperator::selection(dim, idx),
        (None, None) => Ok(WeightOperator::identity(dim)),
    };
    op.map_err(to_py)
}

fn covariance(w: Weight) -> PyResult<Covariance> {
    Ok(match w {
        Weight::Diagonal(d) => Covariance::Diagonal(d),
        Weight::Dense(m) => Covariance::Dense(matrix(&m)?),
    })
}

fn options(rank: Option<usize>, margin: f64) -> DenoiseOptions {
    DenoiseOptions { rank, margin }
}

/// Output of a spectral denoiser.
#[pyclass(name = "Denoised", module = "spectral_denoise", get_all, frozen)]
struct PyDenoised {
    x_hat: Rows,
    rank: usize,
    singular_values: Vec<f64>,
    t: Vec<f64>,
    c: Vec<f64>,
    c_tilde: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    mu: f64,
    nu: f64,
    amse_estimate: f64,
    clipped_components: Vec<usize>,
}

#[pymethods]
impl PyDenoised {
    fn __repr__(&self) -> String {
        format!(
            "Denoised(shape=({}, {}), rank={}, amse_estimate={})",
            self.x_hat.len(),
            self.x_hat.first().map_or(0, Vec::len),
            self.rank,
            self.amse_estimate
        )
    }
}

impl PyDenoised {
    fn new(res: &DenoiseResult, x_hat: &DMatrix<f64>) -> Self {
        let sp = &res.spikes;
        let g = &res.geometry;
        Self {
            x_hat: rows_of(x_hat),
            rank: sp.rank,
            singular_values: sp.lambda.clone(),
            t: sp.t.clone(),
            c: sp.c.clone(),
            c_tilde: sp.c_tilde.clone(),
            alpha: g.alpha.clone(),
            beta: g.beta.clone(),
            mu: g.mu,
            nu: g.nu,
            amse_estimate: res.amse_estimate,
            clipped_components: res.clipped_components.clone(),
        }
    }
}

fn gamma(g: f64) -> PyResult<AspectRatio> {
    AspectRatio::new(g).map_err(to_py)
}

/// Bulk edge `1 + sqrt(gamma)` of the noise singular values.
#[pyfunction]
fn bulk_edge(g: f64) -> PyResult<f64> {
    Ok(gamma(g)?.bulk_edge())
}

/// Smallest detectable population singular value `gamma^(1/4)`.
#[pyfunction]
fn population_threshold(g: f64) -> PyResult<f64> {
    Ok(gamma(g)?.population_threshold())
}

#[pyfunction(name = "forward_singular_value")]
fn py_forward(t: f64, g: f64) -> PyResult<f64> {
    forward_singular_value(t, gamma(g)?).map_err(to_py)
}

#[pyfunction(name = "invert_singular_value")]
fn py_invert(lambda: f64, g: f64) -> PyResult<f64> {
    invert_singular_value(lambda, gamma(g)?).map_err(to_py)
}

/// Asymptotic cosines `(c, c_tilde)` between population and empirical
/// singular vectors.
#[pyfunction(name = "cosines")]
fn py_cosines(t: f64, g: f64) -> PyResult<(f64, f64)> {
    let c = cosines(t, gamma(g)?).map_err(to_py)?;
    Ok((c.c, c.c_tilde))
}

/// Optimal spectral denoiser for the loss `|Omega (Xhat - X) Pi^T|_F^2`.
#[pyfunction(name = "spectral_denoise")]
#[pyo3(signature = (y, row_weights=None, col_weights=None, row_indices=None, col_indices=None, rank=None, margin=0.0, diagonal=false))]
#[allow(clippy::too_many_arguments)]
fn py_spectral_denoise(
    py: Python<'_>,
    y: Rows,
    row_weights: Option<Weight>,
    col_weights: Option<Weight>,
    row_indices: Option<Vec<usize>>,
    col_indices: Option<Vec<usize>>,
    rank: Option<usize>,
    margin: f64,
    diagonal: bool,
) -> PyResult<PyDenoised> {
    let y = matrix(&y)?;
    let omega = weight(y.nrows(), row_weights, row_indices)?;
    let pi = weight(y.ncols(), col_weights, col_indices)?;
    let opts = options(rank, margin);
    let res = py
        .detach(|| {
            if diagonal {
                diagonal_denoise(&y, &omega, &pi, &opts)
            } else {
                spectral_denoise::spectral_denoise(&y, &omega, &pi, &opts)
            }
        })
        .map_err(to_py)?;
    Ok(PyDenoised::new(&res, &res.x_hat))
}

/// Optimal singular value shrinkage.
#[pyfunction(name = "svs_shrink")]
#[pyo3(signature = (y, rank=None, margin=0.0))]
fn py_svs_shrink(py: Python<'_>, y: Rows, rank: Option<usize>, margin: f64) -> PyResult<PyDenoised> {
    let y = matrix(&y)?;
    let res = py.detach(|| svs_shrink(&y, &options(rank, margin))).map_err(to_py)?;
    Ok(PyDenoised::new(&res, &res.x_hat))
}

#[derive(FromPyObject)]
enum Blocks {
    Count(usize),
    Explicit(Vec<Vec<usize>>),
}

fn partition(dim: usize, b: Blocks) -> PyResult<Partition> {
    match b {
        Blocks::Count(k) => make_equispaced_partition(dim, k),
        Blocks::Explicit(blocks) => Partition::new(dim, blocks),
    }
    .map_err(to_py)
}

/// Tile-wise optimal denoising. Blocks are a count of equispaced blocks or
/// explicit lists of indices. Returns `(x_hat, amse_estimate, rank)`.
#[pyfunction(name = "localized_denoise")]
#[pyo3(signature = (y, row_blocks, col_blocks, rank=None, margin=0.0))]
fn py_localized_denoise(
    py: Python<'_>,
    y: Rows,
    row_blocks: Blocks,
    col_blocks: Blocks,
    rank: Option<usize>,
    margin: f64,
) -> PyResult<(Rows, f64, usize)> {
    let y = matrix(&y)?;
    let rows = partition(y.nrows(), row_blocks)?;
    let cols = partition(y.ncols(), col_blocks)?;
    let res = py
        .detach(|| localized_denoise(&y, &rows, &cols, &options(rank, margin)))
        .map_err(to_py)?;
    Ok((rows_of(&res.x_hat), res.amse_estimate, res.spikes.rank))
}

/// Estimate of `Y[rows, cols]` from the whole matrix, or from the submatrix
/// alone when `baseline` is set. Returns `(x_hat, amse_estimate, rank)`.
#[pyfunction(name = "submatrix_denoise")]
#[pyo3(signature = (y, rows, cols, baseline=false, rank=None, margin=0.0))]
fn py_submatrix_denoise(
    py: Python<'_>,
    y: Rows,
    rows: Vec<usize>,
    cols: Vec<usize>,
    baseline: bool,
    rank: Option<usize>,
    margin: f64,
) -> PyResult<(Rows, f64, usize)> {
    let y = matrix(&y)?;
    let opts = options(rank, margin);
    let res = py
        .detach(|| {
            if baseline {
                shrink_submatrix_baseline(&y, &rows, &cols, &opts)
            } else {
                submatrix_denoise(&y, &rows, &cols, &opts)
            }
        })
        .map_err(to_py)?;
    Ok((rows_of(&res.x_hat), res.amse_estimate, res.rank))
}

/// Whiten, denoise and unwhiten. Without covariances, diagonal ones are
/// estimated from `y`. Returns the denoised result and the SNR gain `tau`.
#[pyfunction(name = "whiten_denoise")]
#[pyo3(signature = (y, cov_s=None, cov_t=None, rank=None, margin=0.0))]
fn py_whiten_denoise(
    py: Python<'_>,
    y: Rows,
    cov_s: Option<Weight>,
    cov_t: Option<Weight>,
    rank: Option<usize>,
    margin: f64,
) -> PyResult<(PyDenoised, f64)> {
    let y = matrix(&y)?;
    let cov = match (cov_s, cov_t) {
        (Some(s), Some(t)) => NoiseCovariances::new(covariance(s)?, covariance(t)?).map_err(to_py)?,
        (None, None) => estimate_noise_covariances(&y).map_err(to_py)?,
        _ => return Err(SpectralDenoiseError::new_err("give both cov_s and cov_t, or neither")),
    };
    let res = py.detach(|| whiten_denoise(&y, &cov, &options(rank, margin))).map_err(to_py)?;
    Ok((PyDenoised::new(&res.whitened, &res.x_hat), snr_gain_tau(&cov)))
}

/// Denoise a partially observed matrix given `(row, col, value)` entries.
/// Sampling probabilities are estimated from the pattern when omitted, in
/// which case `shape` is required.
#[pyfunction(name = "missing_data_denoise")]
#[pyo3(signature = (entries, noise_sd, q_row=None, q_col=None, shape=None, rank=None, margin=0.1))]
#[allow(clippy::too_many_arguments)]
fn py_missing_data_denoise(
    py: Python<'_>,
    entries: Vec<(usize, usize, f64)>,
    noise_sd: f64,
    q_row: Option<Vec<f64>>,
    q_col: Option<Vec<f64>>,
    shape: Option<(usize, usize)>,
    rank: Option<usize>,
    margin: f64,
) -> PyResult<PyDenoised> {
    let pattern = match (q_row, q_col, shape) {
        (Some(qr), Some(qc), _) => SamplingPattern::new(qr, qc, entries),
        (None, None, Some((p, n))) => SamplingPattern::new(vec![1.0; p], vec![1.0; n], entries).and_then(|pat| {
            let (qr, qc) = estimate_sampling_probabilities(&pat)?;
            pat.with_probabilities(qr, qc)
        }),
        _ => return Err(SpectralDenoiseError::new_err("give q_row and q_col, or shape")),
    }
    .map_err(to_py)?;
    let res = py
        .detach(|| missing_data_denoise(&pattern, noise_sd, &options(rank, margin)))
        .map_err(to_py)?;
    Ok(PyDenoised::new(&res.normalized, &res.x_hat))
}

/// Runs an experiment from a JSON config, or the defaults of a named
/// scenario, and returns the report as JSON.
#[pyfunction(name = "run_experiment")]
#[pyo3(signature = (config=None, scenario=None, scale=None, replicates=None, seed=None, jobs=None))]
fn py_run_experiment(
    py: Python<'_>,
    config: Option<&str>,
    scenario: Option<&str>,
    scale: Option<f64>,
    replicates: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> PyResult<String> {
    let mut cfg = match (config, scenario) {
        (Some(text), None) => ExperimentConfig::from_json(text),
        (None, Some(name)) => ExperimentConfig::for_scenario(name),
        _ => return Err(SpectralDenoiseError::new_err("give exactly one of config or scenario")),
    }
    .map_err(to_py)?;
    if let Some(s) = scale {
        cfg.scale = s;
    }
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(j) = jobs {
        cfg.jobs = j;
    }
    let report = py.detach(|| run_experiment(&cfg)).map_err(to_py)?;
    Ok(report.to_json())
}

#[pymodule(name = "spectral_denoise")]
pub fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", spectral_denoise::VERSION)?;
    m.add("SCENARIOS", SCENARIOS.to_vec())?;
    m.add("SpectralDenoiseError", m.py().get_type::<SpectralDenoiseError>())?;
    m.add("BelowDetectionThreshold", m.py().get_type::<BelowDetectionThreshold>())?;
    m.add_class::<PyDenoised>()?;
    m.add_function(wrap_pyfunction!(bulk_edge, m)?)?;
    m.add_function(wrap_pyfunction!(population_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(py_forward, m)?)?;
    m.add_function(wrap_pyfunction!(py_invert, m)?)?;
    m.add_function(wrap_pyfunction!(py_cosines, m)?)?;
    m.add_function(wrap_pyfunction!(py_spectral_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(py_svs_shrink, m)?)?;
    m.add_function(wrap_pyfunction!(py_localized_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(py_submatrix_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(py_whiten_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(py_missing_data_denoise, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_experiment, m)?)?;
    Ok(())
}
