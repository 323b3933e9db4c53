//! Pipelines that reduce unweighted estimation problems to weighted spectral
//! denoising: submatrix denoising, doubly-heteroscedastic noise, and missing
//! data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoise::{spectral_denoise, svs_shrink, DenoiseOptions, DenoiseResult, Decomposition};
use crate::error::{invalid, mismatch, DenoiseError, Result};
use crate::geometry::WeightOperator;
use crate::linalg::{sym_apply, sym_eigenvalues};

fn check_indices(name: &str, idx: &[usize], dim: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(invalid(format!("{name} index set is empty")));
    }
    WeightOperator::selection(dim, idx.to_vec()).map(|_| ())
}

#[derive(Debug, Clone)]
pub struct SubmatrixResult {
    /// Estimate of the selected `p0 x n0` submatrix.
    pub x_hat: DMatrix<f64>,
    pub amse_estimate: f64,
    pub rank: usize,
}

/// Estimates the submatrix `Y[rows, cols]` by denoising the whole matrix
/// under the loss restricted to the submatrix.
pub fn submatrix_denoise(
    y: &DMatrix<f64>,
    rows: &[usize],
    cols: &[usize],
    opts: &DenoiseOptions,
) -> Result<SubmatrixResult> {
    check_indices("row", rows, y.nrows())?;
    check_indices("column", cols, y.ncols())?;
    let omega = WeightOperator::selection(y.nrows(), rows.to_vec())?;
    let pi = WeightOperator::selection(y.ncols(), cols.to_vec())?;
    let decomp = Decomposition::compute(y, opts)?;
    let geometry = decomp.geometry(&omega, &pi)?;
    let b = crate::denoise::optimal_b(&geometry);
    let (amse, _) = crate::denoise::amse_estimate(&geometry);
    Ok(SubmatrixResult {
        x_hat: decomp.reconstruct_block(&b, rows, cols),
        amse_estimate: amse,
        rank: decomp.rank(),
    })
}

/// Singular value shrinkage applied to the submatrix alone, after rescaling
/// its noise to variance `1/n0`.
pub fn shrink_submatrix_baseline(
    y: &DMatrix<f64>,
    rows: &[usize],
    cols: &[usize],
    opts: &DenoiseOptions,
) -> Result<SubmatrixResult> {
    check_indices("row", rows, y.nrows())?;
    check_indices("column", cols, y.ncols())?;
    let scale = (y.ncols() as f64 / cols.len() as f64).sqrt();
    let y0 = y.select_rows(rows.iter()).select_columns(cols.iter()) * scale;
    let res = svs_shrink(&y0, opts)?;
    Ok(SubmatrixResult {
        x_hat: res.x_hat / scale,
        amse_estimate: res.amse_estimate / (scale * scale),
        rank: res.spikes.rank,
    })
}

/// A symmetric positive definite covariance, diagonal or dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Covariance {
    pub fn identity(dim: usize) -> Self {
        Covariance::Diagonal(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Dense(m) => m.nrows(),
        }
    }

    fn eigenvalues(&self) -> Vec<f64> {
        match self {
            Covariance::Diagonal(d) => d.clone(),
            Covariance::Dense(m) => sym_eigenvalues(m).iter().copied().collect(),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let Covariance::Dense(m) = self {
            if !m.is_square() {
                return Err(invalid(format!("{name} must be square")));
            }
            if (m - m.transpose()).amax() > 1e-10 * m.amax().max(1.0) {
                return Err(invalid(format!("{name} must be symmetric")));
            }
        }
        if self.dim() == 0 {
            return Err(invalid(format!("{name} is empty")));
        }
        let ev = self.eigenvalues();
        if ev.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(invalid(format!("{name} must be positive definite")));
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Diagonal(d) => d.iter().sum(),
            Covariance::Dense(m) => m.trace(),
        }
    }

    pub fn trace_inverse(&self) -> f64 {
        self.eigenvalues().iter().map(|x| 1.0 / x).sum()
    }

    fn scaled(&self, s: f64) -> Self {
        match self {
            Covariance::Diagonal(d) => Covariance::Diagonal(d.iter().map(|x| x * s).collect()),
            Covariance::Dense(m) => Covariance::Dense(m * s),
        }
    }

    /// `A^power` as a weight operator.
    pub fn power(&self, power: f64) -> WeightOperator {
        match self {
            Covariance::Diagonal(d) => {
                WeightOperator::diagonal(DVector::from_iterator(d.len(), d.iter().map(|x| x.powf(power))))
            }
            Covariance::Dense(m) => {
                let floor = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
                WeightOperator::dense(sym_apply(m, floor, |x| x.powf(power)))
            }
        }
        .expect("powers of a positive definite matrix are finite")
    }
}

/// Row and column noise covariances `S`, `T` of `N = S^{1/2} G T^{1/2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCovariances {
    pub s: Covariance,
    pub t: Covariance,
    /// `tr(T)/n = 1`.
    pub normalized: bool,
}

impl NoiseCovariances {
    pub fn new(s: Covariance, t: Covariance) -> Result<Self> {
        s.validate("S")?;
        t.validate("T")?;
        let normalized = ((t.trace() / t.dim() as f64) - 1.0).abs() <= 1e-12;
        Ok(Self { s, t, normalized })
    }

    pub fn identity(p: usize, n: usize) -> Self {
        Self {
            s: Covariance::identity(p),
            t: Covariance::identity(n),
            normalized: true,
        }
    }

    /// Rescales to `tr(T)/n = 1`, moving the scale into `S`. The noise
    /// distribution is unchanged.
    pub fn normalize(&self) -> Self {
        let c = self.t.trace() / self.t.dim() as f64;
        Self {
            s: self.s.scaled(c),
            t: self.t.scaled(1.0 / c),
            normalized: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WhitenResult {
    pub x_hat: DMatrix<f64>,
    /// Denoiser output on the whitened matrix.
    pub whitened: DenoiseResult,
}

/// Whitens the noise, denoises under the loss weighted by `S^{1/2}`, `T^{1/2}`
/// and unwhitens.
pub fn whiten_denoise(y: &DMatrix<f64>, cov: &NoiseCovariances, opts: &DenoiseOptions) -> Result<WhitenResult> {
    let (p, n) = y.shape();
    if cov.s.dim() != p || cov.t.dim() != n {
        return Err(mismatch(format!(
            "covariances are {}x{} but the observation is {p}x{n}",
            cov.s.dim(),
            cov.t.dim()
        )));
    }
    let (s_half, t_half) = (cov.s.power(0.5), cov.t.power(0.5));
    let (s_ihalf, t_ihalf) = (cov.s.power(-0.5), cov.t.power(-0.5));
    let y_white = s_ihalf.sandwich(y, &t_ihalf)?;
    let whitened = spectral_denoise(&y_white, &s_half, &t_half, opts)?;
    let x_hat = s_half.sandwich(&whitened.x_hat, &t_half)?;
    Ok(WhitenResult { x_hat, whitened })
}

/// Diagonal estimates of `S`, `T` from row and column energies, normalized
/// so that `tr(T)/n = 1`.
pub fn estimate_noise_covariances(y: &DMatrix<f64>) -> Result<NoiseCovariances> {
    const FLOOR: f64 = 1e-12;
    let (p, n) = y.shape();
    if p == 0 || n == 0 {
        return Err(invalid("empty observation"));
    }
    let mut a = vec![0.0; p];
    let mut b = vec![0.0; n];
    for j in 0..n {
        for i in 0..p {
            let sq = y[(i, j)] * y[(i, j)];
            a[i] += sq;
            b[j] += sq;
        }
    }
    if let Some(i) = a.iter().position(|&x| x == 0.0) {
        return Err(DenoiseError::DegenerateEstimate(format!("row {i} is identically zero")));
    }
    if let Some(j) = b.iter().position(|&x| x == 0.0) {
        return Err(DenoiseError::DegenerateEstimate(format!("column {j} is identically zero")));
    }
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let a: Vec<f64> = a.into_iter().map(|x| x.max(FLOOR)).collect();
    let b: Vec<f64> = b.into_iter().map(|x| (x / mean_a).max(FLOOR)).collect();
    Ok(NoiseCovariances {
        s: Covariance::Diagonal(a),
        t: Covariance::Diagonal(b),
        normalized: false,
    }
    .normalize())
}

/// `(tr S/p)(tr S^{-1}/p)(tr T/n)(tr T^{-1}/n)`, the factor by which
/// whitening multiplies the signal-to-noise ratio.
pub fn snr_gain_tau(cov: &NoiseCovariances) -> f64 {
    let (p, n) = (cov.s.dim() as f64, cov.t.dim() as f64);
    (cov.s.trace() / p) * (cov.s.trace_inverse() / p) * (cov.t.trace() / n) * (cov.t.trace_inverse() / n)
}

/// Observed entries of a `p x n` matrix with row/column sampling
/// probabilities. Entry `(i, j)` is observed independently with probability
/// `q_row[i] * q_col[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPattern {
    pub p: usize,
    pub n: usize,
    pub q_row: Vec<f64>,
    pub q_col: Vec<f64>,
    /// `(row, col, value)` of every observed entry, no duplicates.
    pub entries: Vec<(usize, usize, f64)>,
}

fn check_probabilities(name: &str, q: &[f64]) -> Result<()> {
    if let Some(i) = q.iter().position(|&x| !(x > 0.0 && x <= 1.0)) {
        return Err(invalid(format!("{name}[{i}] = {} is not in (0, 1]", q[i])));
    }
    Ok(())
}

impl SamplingPattern {
    pub fn new(q_row: Vec<f64>, q_col: Vec<f64>, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        check_probabilities("q_row", &q_row)?;
        check_probabilities("q_col", &q_col)?;
        let (p, n) = (q_row.len(), q_col.len());
        if p == 0 || n == 0 {
            return Err(invalid("sampling probabilities must be nonempty"));
        }
        let mut seen = vec![false; p * n];
        for &(i, j, v) in &entries {
            if i >= p || j >= n {
                return Err(invalid(format!("entry ({i}, {j}) outside a {p}x{n} matrix")));
            }
            if !v.is_finite() {
                return Err(invalid(format!("entry ({i}, {j}) is not finite")));
            }
            if std::mem::replace(&mut seen[i + j * p], true) {
                return Err(invalid(format!("entry ({i}, {j}) observed twice")));
            }
        }
        Ok(Self { p, n, q_row, q_col, entries })
    }

    /// Observes each entry of `full` independently with probability
    /// `q_row[i] * q_col[j]`, scanning in column-major order.
    pub fn sample<R: Rng + ?Sized>(full: &DMatrix<f64>, q_row: Vec<f64>, q_col: Vec<f64>, rng: &mut R) -> Result<Self> {
        if full.shape() != (q_row.len(), q_col.len()) {
            return Err(mismatch(format!(
                "matrix is {:?} but probabilities are {}x{}",
                full.shape(),
                q_row.len(),
                q_col.len()
            )));
        }
        check_probabilities("q_row", &q_row)?;
        check_probabilities("q_col", &q_col)?;
        let mut entries = Vec::new();
        for j in 0..full.ncols() {
            for i in 0..full.nrows() {
                if rng.random::<f64>() < q_row[i] * q_col[j] {
                    entries.push((i, j, full[(i, j)]));
                }
            }
        }
        Self::new(q_row, q_col, entries)
    }

    pub fn num_observed(&self) -> usize {
        self.entries.len()
    }

    pub fn mask(&self) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(self.p, self.n, false);
        for &(i, j, _) in &self.entries {
            m[(i, j)] = true;
        }
        m
    }

    /// The sampling operator: values of `a` at the observed positions.
    pub fn sample_values(&self, a: &DMatrix<f64>) -> Vec<f64> {
        self.entries.iter().map(|&(i, j, _)| a[(i, j)]).collect()
    }

    /// Adjoint of [`Self::sample_values`]: places `values` at the observed
    /// positions and zeros elsewhere.
    pub fn backproject_values(&self, values: &[f64]) -> Result<DMatrix<f64>> {
        if values.len() != self.entries.len() {
            return Err(mismatch(format!(
                "{} values for {} observed entries",
                values.len(),
                self.entries.len()
            )));
        }
        let mut m = DMatrix::zeros(self.p, self.n);
        for (&(i, j, _), &v) in self.entries.iter().zip(values) {
            m[(i, j)] = v;
        }
        Ok(m)
    }

    pub fn with_probabilities(&self, q_row: Vec<f64>, q_col: Vec<f64>) -> Result<Self> {
        if q_row.len() != self.p || q_col.len() != self.n {
            return Err(mismatch("probability vectors do not match the pattern shape"));
        }
        Self::new(q_row, q_col, self.entries.clone())
    }
}

/// Observed values in place, zeros elsewhere.
pub fn backproject(pattern: &SamplingPattern) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(pattern.p, pattern.n);
    for &(i, j, v) in &pattern.entries {
        m[(i, j)] = v;
    }
    m
}

#[derive(Debug, Clone)]
pub struct MissingDataResult {
    pub x_hat: DMatrix<f64>,
    /// Denoiser output on the normalized, rescaled backprojection.
    pub normalized: DenoiseResult,
    /// Factor applied to the normalized backprojection before denoising.
    pub rescale: f64,
}

/// Denoises a partially observed matrix whose entries carry iid noise of
/// standard deviation `noise_sd`.
///
/// The normalized backprojection `P^{-1/2} Y Q^{-1/2}` has noise variance
/// `noise_sd^2` per entry; it is multiplied by `1 / (noise_sd sqrt(n))` so the
/// noise has variance `1/n`, denoised, and the scale restored.
pub fn missing_data_denoise(
    pattern: &SamplingPattern,
    noise_sd: f64,
    opts: &DenoiseOptions,
) -> Result<MissingDataResult> {
    if !(noise_sd.is_finite() && noise_sd > 0.0) {
        return Err(invalid(format!("noise standard deviation must be positive, got {noise_sd}")));
    }
    check_probabilities("q_row", &pattern.q_row)?;
    check_probabilities("q_col", &pattern.q_col)?;
    let inv_half = |q: &[f64]| {
        WeightOperator::diagonal(DVector::from_iterator(q.len(), q.iter().map(|x| 1.0 / x.sqrt())))
    };
    let p_ih = inv_half(&pattern.q_row)?;
    let q_ih = inv_half(&pattern.q_col)?;
    let rescale = 1.0 / (noise_sd * (pattern.n as f64).sqrt());
    let y = p_ih.sandwich(&backproject(pattern), &q_ih)? * rescale;
    let normalized = spectral_denoise(&y, &p_ih, &q_ih, opts)?;
    let x_hat = p_ih.sandwich(&normalized.x_hat, &q_ih)? / rescale;
    Ok(MissingDataResult {
        x_hat,
        normalized,
        rescale,
    })
}

/// Rank-one fit of the sampling probabilities to observed row and column
/// counts. The split of scale between rows and columns is not identifiable;
/// both mean probabilities are set to `sqrt(observed fraction)`. Results are
/// clamped into `(0, 1]`.
pub fn estimate_sampling_probabilities(pattern: &SamplingPattern) -> Result<(Vec<f64>, Vec<f64>)> {
    let (p, n) = (pattern.p, pattern.n);
    let mut rows = vec![0usize; p];
    let mut cols = vec![0usize; n];
    for &(i, j, _) in &pattern.entries {
        rows[i] += 1;
        cols[j] += 1;
    }
    if let Some(i) = rows.iter().position(|&c| c == 0) {
        return Err(DenoiseError::DegenerateEstimate(format!("row {i} has no observations")));
    }
    if let Some(j) = cols.iter().position(|&c| c == 0) {
        return Err(DenoiseError::DegenerateEstimate(format!("column {j} has no observations")));
    }
    let mean = (pattern.entries.len() as f64 / (p * n) as f64).sqrt();
    let q_row = rows.iter().map(|&c| (c as f64 / n as f64 / mean).min(1.0)).collect();
    let q_col = cols.iter().map(|&c| (c as f64 / p as f64 / mean).min(1.0)).collect();
    Ok((q_row, q_col))
}
