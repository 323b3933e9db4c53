//! Synthetic signals, noise models, error metrics and a Monte Carlo runner
//! for the standard simulation scenarios.
//!
//! Every replicate draws from its own ChaCha8 generator. The replicate seed is
//! `derive_seed(base, replicate)`, shared by all grid points; signal, noise and sampling use separate
//! streams of that generator, so runs are reproducible for any thread count.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::applications::{
    estimate_noise_covariances, missing_data_denoise, shrink_submatrix_baseline, submatrix_denoise,
    whiten_denoise, Covariance, NoiseCovariances, SamplingPattern,
};
use crate::denoise::{spectral_denoise, svs_shrink, DenoiseOptions};
use crate::error::{invalid, mismatch, DenoiseError, Result};
use crate::geometry::{WeightOperator, WeightedGeometry};
use crate::linalg::{op_norm, GramSpectrum};
use crate::localized::{localized_denoise, make_equispaced_partition};
use crate::spiked::{naive_rank, AspectRatio, SpikeParams};

pub const SCHEMA_VERSION: u32 = 1;

const STREAM_SIGNAL: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SAMPLING: u64 = 3;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index` under base seed `base`:
/// `splitmix64(splitmix64(base) + index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(index))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A synthetic low-rank signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Two-valued board of `cells_row x cells_col` cells with unit Frobenius
    /// norm; light cells carry the fraction `f` of the energy.
    Checkerboard { f: f64, cells_row: usize, cells_col: usize },
    /// Haar-distributed singular vectors with singular values `t`.
    RandomOrthonormal { t: Vec<f64> },
    /// Rank one; both singular vectors are constant on each half of their
    /// coordinates, with energy `first_half_energy` on the first half.
    PiecewiseConstant { t: f64, first_half_energy: f64 },
    /// Rank at most two: a constant vector and a vector equal to `+c` on the
    /// first half and `-c` on the second, on both sides. Dimensions must be
    /// even.
    ConstantAndSign { t: Vec<f64> },
    Custom { u: DMatrix<f64>, t: Vec<f64>, v: DMatrix<f64> },
}

/// A generated signal with its exact thin SVD.
#[derive(Debug, Clone)]
pub struct Signal {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub t: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Signal {
    fn from_factors(u: DMatrix<f64>, t: Vec<f64>, v: DMatrix<f64>) -> Self {
        let x = &u * DMatrix::from_diagonal(&DVector::from_column_slice(&t)) * v.transpose();
        Self { x, u, t, v }
    }

    pub fn rank(&self) -> usize {
        self.t.len()
    }
}

fn check_values(t: &[f64]) -> Result<()> {
    if t.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(invalid("singular values must be positive and finite"));
    }
    if t.windows(2).any(|w| w[0] <= w[1]) {
        return Err(invalid("singular values must be strictly decreasing"));
    }
    Ok(())
}

fn check_orthonormal(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let g = m.transpose() * m;
    let err = (g - DMatrix::identity(m.ncols(), m.ncols())).amax();
    if err > 1e-8 {
        return Err(invalid(format!("{name} columns are not orthonormal (error {err:.2e})")));
    }
    Ok(())
}

fn haar_orthonormal<R: Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn cell_signs(dim: usize, cells: usize) -> Result<DVector<f64>> {
    let part = make_equispaced_partition(dim, cells)?;
    let mut s = DVector::zeros(dim);
    for (b, block) in part.blocks().iter().enumerate() {
        let sign = if b % 2 == 0 { 1.0 } else { -1.0 };
        for &i in block {
            s[i] = sign;
        }
    }
    Ok(s)
}

fn checkerboard(f: f64, p: usize, n: usize, cells_row: usize, cells_col: usize) -> Result<Signal> {
    if !(0.5..=1.0).contains(&f) {
        return Err(invalid(format!("light-square energy fraction must lie in [1/2, 1], got {f}")));
    }
    if cells_row < 2 || cells_col < 2 {
        return Err(invalid("a checkerboard needs at least two cells per side"));
    }
    let sr = cell_signs(p, cells_row)?;
    let sc = cell_signs(n, cells_col)?;
    let light_rows = sr.iter().filter(|s| **s > 0.0).count() as f64;
    let light_cols = sc.iter().filter(|s| **s > 0.0).count() as f64;
    let (pf, nf) = (p as f64, n as f64);
    let n_light = light_rows * light_cols + (pf - light_rows) * (nf - light_cols);
    let n_dark = pf * nf - n_light;
    let light = (f / n_light).sqrt();
    let dark = ((1.0 - f) / n_dark).sqrt();
    // X = a 1 1^T + b sr sc^T.
    let a = 0.5 * (light + dark);
    let b = 0.5 * (light - dark);

    let basis = |s: &DVector<f64>| {
        let m = DMatrix::from_columns(&[DVector::from_element(s.len(), 1.0), s.clone()]);
        let qr = m.qr();
        (qr.q(), qr.r())
    };
    let (qr_, rr) = basis(&sr);
    let (qc, rc) = basis(&sc);
    let core = &rr * DMatrix::from_diagonal(&DVector::from_vec(vec![a, b])) * rc.transpose();
    let svd = core.svd(true, true);
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let top = svd.singular_values[order[0]];
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-12 * top)
        .collect();
    let small_u = svd.u.expect("requested");
    let small_vt = svd.v_t.expect("requested");
    let u = DMatrix::from_columns(&keep.iter().map(|&i| &qr_ * small_u.column(i)).collect::<Vec<_>>());
    let v = DMatrix::from_columns(
        &keep
            .iter()
            .map(|&i| &qc * small_vt.row(i).transpose())
            .collect::<Vec<_>>(),
    );
    let t: Vec<f64> = keep.iter().map(|&i| svd.singular_values[i]).collect();
    let x = DMatrix::from_fn(p, n, |i, j| if sr[i] * sc[j] > 0.0 { light } else { dark });
    Ok(Signal { x, u, t, v })
}

fn half_split(dim: usize, first_energy: f64) -> DVector<f64> {
    let h = dim / 2;
    let a = (first_energy / h as f64).sqrt();
    let b = ((1.0 - first_energy) / (dim - h) as f64).sqrt();
    DVector::from_fn(dim, |i, _| if i < h { a } else { b })
}

fn constant_and_sign(dim: usize, k: usize) -> DMatrix<f64> {
    let c = 1.0 / (dim as f64).sqrt();
    DMatrix::from_fn(dim, k, |i, j| if j == 0 || i < dim / 2 { c } else { -c })
}

/// Generates `X` and its singular factors.
pub fn gen_signal<R: Rng + ?Sized>(spec: &SignalSpec, p: usize, n: usize, rng: &mut R) -> Result<Signal> {
    if p == 0 || n == 0 {
        return Err(invalid("signal dimensions must be positive"));
    }
    match spec {
        SignalSpec::Checkerboard { f, cells_row, cells_col } => checkerboard(*f, p, n, *cells_row, *cells_col),
        SignalSpec::RandomOrthonormal { t } => {
            check_values(t)?;
            if t.len() > p.min(n) {
                return Err(invalid(format!("rank {} exceeds min(p, n) = {}", t.len(), p.min(n))));
            }
            let u = haar_orthonormal(p, t.len(), rng);
            let v = haar_orthonormal(n, t.len(), rng);
            Ok(Signal::from_factors(u, t.clone(), v))
        }
        SignalSpec::PiecewiseConstant { t, first_half_energy } => {
            check_values(&[*t])?;
            if !(0.0..=1.0).contains(first_half_energy) || p < 2 || n < 2 {
                return Err(invalid(format!(
                    "first-half energy must lie in [0, 1] and dimensions be at least 2, got {first_half_energy}"
                )));
            }
            let u = DMatrix::from_columns(&[half_split(p, *first_half_energy)]);
            let v = DMatrix::from_columns(&[half_split(n, *first_half_energy)]);
            Ok(Signal::from_factors(u, vec![*t], v))
        }
        SignalSpec::ConstantAndSign { t } => {
            check_values(t)?;
            if t.len() > 2 {
                return Err(invalid("constant-and-sign signals have rank at most 2"));
            }
            if !p.is_multiple_of(2) || !n.is_multiple_of(2) {
                return Err(invalid(format!("constant-and-sign signals need even dimensions, got {p}x{n}")));
            }
            let u = constant_and_sign(p, t.len());
            let v = constant_and_sign(n, t.len());
            Ok(Signal::from_factors(u, t.clone(), v))
        }
        SignalSpec::Custom { u, t, v } => {
            check_values(t)?;
            if u.shape() != (p, t.len()) || v.shape() != (n, t.len()) {
                return Err(mismatch(format!(
                    "factors are {:?} and {:?} for a {p}x{n} signal of rank {}",
                    u.shape(),
                    v.shape(),
                    t.len()
                )));
            }
            check_orthonormal("U", u)?;
            check_orthonormal("V", v)?;
            Ok(Signal::from_factors(u.clone(), t.clone(), v.clone()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum NoiseDist {
    Gaussian,
    Rademacher,
    /// Student t, rescaled to unit variance when `df > 2`.
    StudentT { df: f64 },
}

impl NoiseDist {
    pub fn validate(&self) -> Result<()> {
        if let NoiseDist::StudentT { df } = self {
            if !(df.is_finite() && *df > 0.0) {
                return Err(invalid(format!("degrees of freedom must be positive, got {df}")));
            }
        }
        Ok(())
    }

    /// Whether the variance is infinite, so entries are left unnormalized.
    pub fn infinite_variance(&self) -> bool {
        matches!(self, NoiseDist::StudentT { df } if *df <= 2.0)
    }

    pub fn label(&self) -> String {
        match self {
            NoiseDist::Gaussian => "gaussian".into(),
            NoiseDist::Rademacher => "rademacher".into(),
            NoiseDist::StudentT { df } => format!("t{df}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub dist: NoiseDist,
    /// Per-entry standard deviation; `1/sqrt(n)` when absent.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(dist: NoiseDist, seed: u64) -> Self {
        Self { dist, scale: None, seed }
    }
}

/// Fills a `p x n` matrix column by column from `rng`.
pub fn sample_noise<R: Rng + ?Sized>(dist: NoiseDist, scale: f64, p: usize, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    dist.validate()?;
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(invalid(format!("noise scale must be nonnegative, got {scale}")));
    }
    let m = match dist {
        NoiseDist::Gaussian => DMatrix::from_fn(p, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal)),
        NoiseDist::Rademacher => DMatrix::from_fn(p, n, |_, _| if rng.random::<bool>() { scale } else { -scale }),
        NoiseDist::StudentT { df } => {
            let t = StudentT::new(df).map_err(|e| invalid(format!("student t: {e}")))?;
            let norm = if df > 2.0 { ((df - 2.0) / df).sqrt() } else { 1.0 };
            DMatrix::from_fn(p, n, |_, _| scale * norm * t.sample(rng))
        }
    };
    Ok(m)
}

/// Noise matrix drawn from the seed in `spec`.
pub fn gen_noise(spec: &NoiseSpec, p: usize, n: usize) -> Result<DMatrix<f64>> {
    let scale = spec.scale.unwrap_or(1.0 / (n.max(1) as f64).sqrt());
    let mut rng = stream_rng(spec.seed, STREAM_NOISE);
    sample_noise(spec.dist, scale, p, n, &mut rng)
}

/// `||Omega (X_hat - X) Pi^T||_F / ||Omega X Pi^T||_F`, with identity weights
/// when omitted.
pub fn relative_error(
    x_hat: &DMatrix<f64>,
    x: &DMatrix<f64>,
    omega: Option<&WeightOperator>,
    pi: Option<&WeightOperator>,
) -> Result<f64> {
    if x_hat.shape() != x.shape() {
        return Err(mismatch(format!("estimate is {:?} but the signal is {:?}", x_hat.shape(), x.shape())));
    }
    let (p, n) = x.shape();
    let id_r;
    let id_c;
    let omega = match omega {
        Some(o) => o,
        None => {
            id_r = WeightOperator::identity(p);
            &id_r
        }
    };
    let pi = match pi {
        Some(o) => o,
        None => {
            id_c = WeightOperator::identity(n);
            &id_c
        }
    };
    let den = omega.sandwich(x, pi)?.norm();
    if den == 0.0 || !den.is_finite() {
        return Err(DenoiseError::UndefinedMetric(
            "weighted signal norm is zero".into(),
        ));
    }
    let num = omega.sandwich(&(x_hat - x), pi)?.norm();
    Ok(num / den)
}

fn linspace(a: f64, b: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![a];
    }
    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
}

fn even(x: f64) -> usize {
    (((x / 2.0).round() as usize) * 2).max(2)
}

fn scaled_dim(dim: usize, scale: f64) -> usize {
    ((dim as f64 * scale).round() as usize).max(2)
}

fn default_f_grid() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}

fn default_noise_factor() -> f64 {
    0.1
}

fn default_cells() -> usize {
    4
}

fn default_blocks() -> usize {
    4
}

fn default_t_offset() -> f64 {
    0.5
}

fn default_rank() -> usize {
    5
}

fn default_q_range() -> (f64, f64) {
    (0.3, 0.7)
}

fn default_margin() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    2.0
}

fn default_weighted_fraction() -> f64 {
    0.75
}

fn default_noises() -> Vec<NoiseDist> {
    vec![NoiseDist::Gaussian]
}

fn default_true() -> bool {
    true
}

/// Scenario parameters. Every field has a default, so `{}` selects the
/// standard setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", content = "params", rename_all = "kebab-case")]
pub enum Scenario {
    /// Checkerboard signal, localized denoising against shrinkage.
    LocalizedCheckerboard(CheckerboardParams),
    /// Rank-one signal concentrated on a corner submatrix.
    Submatrix(SubmatrixParams),
    /// Diagonal row and column noise covariances with condition number kappa.
    Heteroscedastic(HeteroscedasticParams),
    /// Bernoulli entry sampling with rank-one probabilities.
    MissingData(MissingDataParams),
    /// Accuracy of the limiting weighted inner products.
    WeightedInnerProducts(InnerProductParams),
    /// Naive rank estimation and its effect on the weighted error.
    RankEstimation(RankParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckerboardParams {
    pub p: usize,
    pub n: usize,
    pub f: Vec<f64>,
    pub cells_row: usize,
    pub cells_col: usize,
    pub blocks_row: usize,
    pub blocks_col: usize,
    /// Noise standard deviation is `noise_factor / sqrt(n)`.
    pub noise_factor: f64,
}

impl Default for CheckerboardParams {
    fn default() -> Self {
        Self {
            p: 800,
            n: 800,
            f: default_f_grid(),
            cells_row: default_cells(),
            cells_col: default_cells(),
            blocks_row: default_blocks(),
            blocks_col: default_blocks(),
            noise_factor: default_noise_factor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmatrixParams {
    pub p: usize,
    pub n: usize,
    /// Fraction of the signal energy inside the upper-left quarter.
    pub f: Vec<f64>,
    /// Singular value is the detection threshold plus this offset.
    pub t_offset: f64,
}

impl Default for SubmatrixParams {
    fn default() -> Self {
        Self {
            p: 500,
            n: 1000,
            f: vec![0.05, 0.25, 0.5, 0.75, 0.95],
            t_offset: default_t_offset(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeteroscedasticParams {
    pub p: usize,
    pub n: usize,
    pub rank: usize,
    pub kappa: Vec<f64>,
    /// Singular values are `threshold + t_offset + k`.
    pub t_offset: f64,
    /// Also denoise with covariances estimated from the data.
    pub estimated: bool,
}

impl Default for HeteroscedasticParams {
    fn default() -> Self {
        Self {
            p: 500,
            n: 1000,
            rank: default_rank(),
            kappa: vec![1.0, 2.0, 5.0, 10.0],
            t_offset: default_t_offset(),
            estimated: default_true(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingDataParams {
    pub p: usize,
    pub n: usize,
    pub rank: usize,
    pub sigma: Vec<f64>,
    /// Row and column sampling probabilities are equispaced in this range.
    pub q_range: (f64, f64),
    /// Margin above the bulk edge for rank detection.
    pub margin: f64,
}

impl Default for MissingDataParams {
    fn default() -> Self {
        Self {
            p: 200,
            n: 400,
            rank: default_rank(),
            sigma: vec![0.3, 0.4, 0.5, 0.7, 1.0],
            q_range: default_q_range(),
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerProductParams {
    pub n: Vec<usize>,
    pub gamma: f64,
    pub noise: Vec<NoiseDist>,
    /// Fraction of leading coordinates kept by the diagonal 0/1 weight.
    pub weighted_fraction: f64,
}

impl Default for InnerProductParams {
    fn default() -> Self {
        Self {
            n: vec![500],
            gamma: default_gamma(),
            noise: vec![
                NoiseDist::Gaussian,
                NoiseDist::Rademacher,
                NoiseDist::StudentT { df: 10.0 },
                NoiseDist::StudentT { df: 3.0 },
            ],
            weighted_fraction: default_weighted_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankParams {
    pub p: usize,
    pub n: usize,
    pub noise: Vec<NoiseDist>,
    /// When false, the observation is pure noise.
    pub signal: bool,
}

impl Default for RankParams {
    fn default() -> Self {
        Self {
            p: 300,
            n: 600,
            noise: default_noises(),
            signal: default_true(),
        }
    }
}

fn default_replicates() -> usize {
    20
}

fn default_jobs() -> usize {
    1
}

fn default_scale() -> f64 {
    1.0
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Multiplies dimensions and replicate counts; aspect ratios are kept.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(flatten)]
    pub scenario: Scenario,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, replicates: usize, seed: u64) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            replicates,
            seed,
            jobs: 1,
            scale: 1.0,
            scenario,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config with default parameters for a scenario given by name.
    pub fn for_scenario(name: &str) -> Result<Self> {
        let text = format!(r#"{{"scenario": "{name}", "params": {{}}}}"#);
        Self::from_json(&text).map_err(|_| {
            invalid(format!(
                "unknown scenario '{name}'; expected one of {}",
                SCENARIOS.join(", ")
            ))
        })
    }

    pub fn scenario_name(&self) -> &'static str {
        match self.scenario {
            Scenario::LocalizedCheckerboard(_) => "localized-checkerboard",
            Scenario::Submatrix(_) => "submatrix",
            Scenario::Heteroscedastic(_) => "heteroscedastic",
            Scenario::MissingData(_) => "missing-data",
            Scenario::WeightedInnerProducts(_) => "weighted-inner-products",
            Scenario::RankEstimation(_) => "rank-estimation",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported config schema {}; expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates must be positive"));
        }
        if self.jobs == 0 {
            return Err(invalid("jobs must be positive"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(invalid(format!("scale must be positive, got {}", self.scale)));
        }
        let grid_ok = match &self.scenario {
            Scenario::LocalizedCheckerboard(c) => !c.f.is_empty(),
            Scenario::Submatrix(c) => !c.f.is_empty(),
            Scenario::Heteroscedastic(c) => !c.kappa.is_empty() && c.kappa.iter().all(|k| *k >= 1.0),
            Scenario::MissingData(c) => {
                !c.sigma.is_empty()
                    && c.sigma.iter().all(|s| *s > 0.0)
                    && 0.0 < c.q_range.0
                    && c.q_range.0 <= c.q_range.1
                    && c.q_range.1 <= 1.0
            }
            Scenario::WeightedInnerProducts(c) => {
                !c.n.is_empty() && !c.noise.is_empty() && c.gamma > 0.0 && (0.0..=1.0).contains(&c.weighted_fraction)
            }
            Scenario::RankEstimation(c) => !c.noise.is_empty(),
        };
        if !grid_ok {
            return Err(invalid(format!("invalid parameter grid for {}", self.scenario_name())));
        }
        for dist in self.noise_models() {
            dist.validate()?;
        }
        Ok(())
    }

    fn noise_models(&self) -> Vec<NoiseDist> {
        match &self.scenario {
            Scenario::WeightedInnerProducts(c) => c.noise.clone(),
            Scenario::RankEstimation(c) => c.noise.clone(),
            _ => Vec::new(),
        }
    }

    /// The config after applying `scale`: dimensions and replicates shrink or
    /// grow together, aspect ratios are preserved, and `scale` becomes 1.
    pub fn resolved(&self) -> Self {
        let s = self.scale;
        let mut out = self.clone();
        out.scale = 1.0;
        if s == 1.0 {
            return out;
        }
        out.replicates = ((self.replicates as f64 * s).round() as usize).max(1);
        let pair = |p: usize, n: usize| {
            let n2 = even(n as f64 * s);
            let p2 = even(p as f64 * n2 as f64 / n as f64);
            (p2, n2)
        };
        match &mut out.scenario {
            Scenario::LocalizedCheckerboard(c) => {
                (c.p, c.n) = pair(c.p, c.n);
            }
            Scenario::Submatrix(c) => (c.p, c.n) = pair(c.p, c.n),
            Scenario::Heteroscedastic(c) => (c.p, c.n) = pair(c.p, c.n),
            Scenario::MissingData(c) => (c.p, c.n) = pair(c.p, c.n),
            Scenario::RankEstimation(c) => (c.p, c.n) = pair(c.p, c.n),
            Scenario::WeightedInnerProducts(c) => {
                for n in c.n.iter_mut() {
                    *n = scaled_dim(*n, s);
                }
            }
        }
        out
    }
}

pub const SCENARIOS: [&str; 6] = [
    "localized-checkerboard",
    "submatrix",
    "heteroscedastic",
    "missing-data",
    "weighted-inner-products",
    "rank-estimation",
];

/// One point of a scenario's parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub label: String,
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Replicates with a finite value.
    pub count: usize,
}

impl Aggregate {
    /// Statistics of the finite values, folded in order. `std` is the sample
    /// standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let count = finite.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                count,
            };
        }
        let mean = finite.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std: var.sqrt(),
            min: finite.iter().copied().fold(f64::INFINITY, f64::min),
            max: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count,
        }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub point: GridPoint,
    pub metrics: BTreeMap<String, Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub grid_index: usize,
    pub replicate_id: usize,
    pub seed: u64,
    /// Values in the order of [`ExperimentReport::metric_names`]; NaN marks a
    /// replicate on which the metric failed.
    pub values: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub version: String,
    pub scenario: String,
    /// The resolved config that was run.
    pub config: ExperimentConfig,
    pub metric_names: Vec<String>,
    pub grid: Vec<GridReport>,
    pub replicates: Vec<ReplicateRow>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn grid_point(&self, label: &str) -> Option<&GridReport> {
        self.grid.iter().find(|g| g.point.label == label)
    }

    pub fn metric(&self, label: &str, metric: &str) -> Option<Aggregate> {
        self.grid_point(label).and_then(|g| g.metrics.get(metric).copied())
    }

    /// Per-replicate values of one metric at one grid point.
    pub fn values(&self, label: &str, metric: &str) -> Vec<f64> {
        let Some(gi) = self.grid.iter().position(|g| g.point.label == label) else {
            return Vec::new();
        };
        let Some(mi) = self.metric_names.iter().position(|m| m == metric) else {
            return Vec::new();
        };
        self.replicates
            .iter()
            .filter(|r| r.grid_index == gi)
            .map(|r| r.values[mi])
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Writes `replicates.csv`: grid label, replicate id, seed, metrics.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["grid".to_string(), "replicate_id".into(), "seed".into()];
        header.extend(self.metric_names.iter().cloned());
        header.push("error".into());
        w.write_record(&header)?;
        for row in &self.replicates {
            let mut rec = vec![
                self.grid[row.grid_index].point.label.clone(),
                row.replicate_id.to_string(),
                row.seed.to_string(),
            ];
            rec.extend(row.values.iter().map(|v| v.to_string()));
            rec.push(row.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()
    }

    /// Writes `report.json` and `replicates.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        self.write_csv(std::fs::File::create(dir.join("replicates.csv"))?)
    }
}

type Metrics = Vec<(&'static str, f64)>;

fn param(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn point(label: String, pairs: &[(&str, serde_json::Value)]) -> GridPoint {
    GridPoint {
        label,
        params: param(pairs),
    }
}

fn grid_of(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    use serde_json::json;
    match &cfg.scenario {
        Scenario::LocalizedCheckerboard(c) => c.f.iter().map(|f| point(format!("f={f}"), &[("f", json!(f))])).collect(),
        Scenario::Submatrix(c) => c.f.iter().map(|f| point(format!("f={f}"), &[("f", json!(f))])).collect(),
        Scenario::Heteroscedastic(c) => c
            .kappa
            .iter()
            .map(|k| point(format!("kappa={k}"), &[("kappa", json!(k))]))
            .collect(),
        Scenario::MissingData(c) => c
            .sigma
            .iter()
            .map(|s| point(format!("sigma={s}"), &[("sigma", json!(s))]))
            .collect(),
        Scenario::WeightedInnerProducts(c) => c
            .n
            .iter()
            .flat_map(|&n| {
                c.noise.iter().map(move |d| {
                    point(
                        format!("n={n},noise={}", d.label()),
                        &[("n", json!(n)), ("noise", serde_json::to_value(d).expect("serializable"))],
                    )
                })
            })
            .collect(),
        Scenario::RankEstimation(c) => c
            .noise
            .iter()
            .map(|d| {
                point(
                    format!("noise={}", d.label()),
                    &[("noise", serde_json::to_value(d).expect("serializable"))],
                )
            })
            .collect(),
    }
}

fn metric_names(cfg: &ExperimentConfig) -> Vec<&'static str> {
    match &cfg.scenario {
        Scenario::LocalizedCheckerboard(_) => {
            vec!["localized_error", "shrink_error", "loss_gap", "rank"]
        }
        Scenario::Submatrix(_) => vec![
            "spectral_error",
            "baseline_error",
            "global_shrink_error",
            "rank",
            "baseline_rank",
        ],
        Scenario::Heteroscedastic(_) => vec![
            "whitened_error",
            "estimated_error",
            "unwhitened_error",
            "rank",
        ],
        Scenario::MissingData(_) => vec!["spectral_error", "rank", "backprojection_discrepancy"],
        Scenario::WeightedInnerProducts(_) => vec!["c_omega_error", "d_error"],
        Scenario::RankEstimation(_) => vec!["naive_rank", "oracle_error", "naive_error"],
    }
}

fn run_replicate(cfg: &ExperimentConfig, grid_index: usize, seed: u64) -> Result<Metrics> {
    let mut sig_rng = stream_rng(seed, STREAM_SIGNAL);
    let mut noise_rng = stream_rng(seed, STREAM_NOISE);
    match &cfg.scenario {
        Scenario::LocalizedCheckerboard(c) => {
            let f = c.f[grid_index];
            let spec = SignalSpec::Checkerboard {
                f,
                cells_row: c.cells_row,
                cells_col: c.cells_col,
            };
            let sig = gen_signal(&spec, c.p, c.n, &mut sig_rng)?;
            checkerboard_replicate(&sig, c, &mut noise_rng)
        }
        Scenario::Submatrix(c) => {
            let gamma = AspectRatio::from_dims(c.p, c.n)?;
            let f = c.f[grid_index];
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid(format!("energy fraction must lie in [0, 1], got {f}")));
            }
            let spec = SignalSpec::PiecewiseConstant {
                t: gamma.population_threshold() + c.t_offset,
                first_half_energy: f.sqrt(),
            };
            let sig = gen_signal(&spec, c.p, c.n, &mut sig_rng)?;
            let noise = sample_noise(NoiseDist::Gaussian, 1.0 / (c.n as f64).sqrt(), c.p, c.n, &mut noise_rng)?;
            submatrix_replicate(&sig, &(&sig.x + noise))
        }
        Scenario::Heteroscedastic(c) => {
            let kappa = c.kappa[grid_index];
            let gamma = AspectRatio::from_dims(c.p, c.n)?;
            let t: Vec<f64> = (0..c.rank)
                .rev()
                .map(|k| gamma.population_threshold() + c.t_offset + k as f64)
                .collect();
            let sig = gen_signal(&SignalSpec::RandomOrthonormal { t }, c.p, c.n, &mut sig_rng)?;
            heteroscedastic_replicate(&sig, kappa, c.estimated, &mut noise_rng)
        }
        Scenario::MissingData(c) => {
            let sigma = c.sigma[grid_index];
            let gamma = AspectRatio::from_dims(c.p, c.n)?.value();
            let t: Vec<f64> = (1..=c.rank).rev().map(|k| (gamma.sqrt() + 200.0 * k as f64).sqrt()).collect();
            let sig = gen_signal(&SignalSpec::RandomOrthonormal { t }, c.p, c.n, &mut sig_rng)?;
            let mut samp_rng = stream_rng(seed, STREAM_SAMPLING);
            missing_data_replicate(&sig, sigma, c, &mut noise_rng, &mut samp_rng)
        }
        Scenario::WeightedInnerProducts(c) => {
            let (ni, di) = (grid_index / c.noise.len(), grid_index % c.noise.len());
            inner_product_replicate(c.n[ni], c.gamma, c.noise[di], c.weighted_fraction, &mut noise_rng)
        }
        Scenario::RankEstimation(c) => rank_replicate(c, c.noise[grid_index], &mut noise_rng),
    }
}

fn checkerboard_replicate<R: Rng + ?Sized>(sig: &Signal, c: &CheckerboardParams, rng: &mut R) -> Result<Metrics> {
    let sigma = c.noise_factor / (c.n as f64).sqrt();
    let y = &sig.x + sample_noise(NoiseDist::Gaussian, sigma, c.p, c.n, rng)?;
    // Bring the noise to variance 1/n, denoise, scale back.
    let scale = 1.0 / (sigma * (c.n as f64).sqrt());
    let ys = &y * scale;
    let opts = DenoiseOptions::default();
    let rows = make_equispaced_partition(c.p, c.blocks_row)?;
    let cols = make_equispaced_partition(c.n, c.blocks_col)?;
    let loc = localized_denoise(&ys, &rows, &cols, &opts)?;
    let shr = svs_shrink(&ys, &opts)?;
    let loc_x = loc.x_hat / scale;
    let shr_x = shr.x_hat / scale;
    let energy = sig.x.norm_squared();
    let gap = ((&loc_x - &sig.x).norm_squared() - (&shr_x - &sig.x).norm_squared()) / energy;
    Ok(vec![
        ("localized_error", relative_error(&loc_x, &sig.x, None, None)?),
        ("shrink_error", relative_error(&shr_x, &sig.x, None, None)?),
        ("loss_gap", gap),
        ("rank", loc.spikes.rank as f64),
    ])
}

fn submatrix_replicate(sig: &Signal, y: &DMatrix<f64>) -> Result<Metrics> {
    let (p, n) = y.shape();
    let rows: Vec<usize> = (0..p / 2).collect();
    let cols: Vec<usize> = (0..n / 2).collect();
    let x0 = sig.x.view((0, 0), (p / 2, n / 2)).into_owned();
    let opts = DenoiseOptions::default();
    let spectral = submatrix_denoise(y, &rows, &cols, &opts)?;
    let baseline = shrink_submatrix_baseline(y, &rows, &cols, &opts)?;
    let global = svs_shrink(y, &opts)?;
    let global0 = global.x_hat.view((0, 0), (p / 2, n / 2)).into_owned();
    Ok(vec![
        ("spectral_error", relative_error(&spectral.x_hat, &x0, None, None)?),
        ("baseline_error", relative_error(&baseline.x_hat, &x0, None, None)?),
        ("global_shrink_error", relative_error(&global0, &x0, None, None)?),
        ("rank", spectral.rank as f64),
        ("baseline_rank", baseline.rank as f64),
    ])
}

fn heteroscedastic_replicate<R: Rng + ?Sized>(sig: &Signal, kappa: f64, estimated: bool, rng: &mut R) -> Result<Metrics> {
    let (p, n) = sig.x.shape();
    let s = linspace(1.0 / kappa, 1.0, p);
    let t = linspace(1.0 / kappa, 1.0, n);
    let g = sample_noise(NoiseDist::Gaussian, 1.0 / (n as f64).sqrt(), p, n, rng)?;
    let noise = DMatrix::from_fn(p, n, |i, j| s[i].sqrt() * g[(i, j)] * t[j].sqrt());
    let y = &sig.x + noise;
    let opts = DenoiseOptions::default();
    let cov = NoiseCovariances::new(Covariance::Diagonal(s.clone()), Covariance::Diagonal(t.clone()))?;
    let white = whiten_denoise(&y, &cov, &opts)?;
    let estimated_error = if estimated {
        let est = estimate_noise_covariances(&y)?;
        relative_error(&whiten_denoise(&y, &est, &opts)?.x_hat, &sig.x, None, None)?
    } else {
        f64::NAN
    };
    // Shrinkage after rescaling the noise to average variance 1/n.
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let level = (mean(&s) * mean(&t)).sqrt();
    let plain = svs_shrink(&(&y / level), &opts)?.x_hat * level;
    Ok(vec![
        ("whitened_error", relative_error(&white.x_hat, &sig.x, None, None)?),
        ("estimated_error", estimated_error),
        ("unwhitened_error", relative_error(&plain, &sig.x, None, None)?),
        ("rank", white.whitened.spikes.rank as f64),
    ])
}

fn missing_data_replicate<R: Rng + ?Sized>(
    sig: &Signal,
    sigma: f64,
    c: &MissingDataParams,
    noise_rng: &mut R,
    samp_rng: &mut R,
) -> Result<Metrics> {
    let (p, n) = sig.x.shape();
    let q_row = linspace(c.q_range.0, c.q_range.1, p);
    let q_col = linspace(c.q_range.0, c.q_range.1, n);
    let y = &sig.x + sample_noise(NoiseDist::Gaussian, sigma, p, n, noise_rng)?;
    let pattern = SamplingPattern::sample(&y, q_row.clone(), q_col.clone(), samp_rng)?;
    let res = missing_data_denoise(&pattern, sigma, &DenoiseOptions { rank: None, margin: c.margin })?;
    let sampled_x = pattern.backproject_values(&pattern.sample_values(&sig.x))?;
    let pxq = DMatrix::from_fn(p, n, |i, j| q_row[i] * sig.x[(i, j)] * q_col[j]);
    Ok(vec![
        ("spectral_error", relative_error(&res.x_hat, &sig.x, None, None)?),
        ("rank", res.normalized.spikes.rank as f64),
        ("backprojection_discrepancy", op_norm(&(sampled_x - pxq))),
    ])
}

/// Relative Frobenius errors of the empirical weighted Grams `D` (of the
/// estimated vectors) and `C` (estimated against true vectors) against their
/// limits, with all entries taken in absolute value.
fn inner_product_replicate<R: Rng + ?Sized>(
    n: usize,
    gamma: f64,
    dist: NoiseDist,
    fraction: f64,
    rng: &mut R,
) -> Result<Metrics> {
    let p = even(gamma * n as f64);
    let n = even(n as f64);
    let ar = AspectRatio::from_dims(p, n)?;
    let th = ar.population_threshold();
    let spec = SignalSpec::ConstantAndSign { t: vec![th + 3.0, th + 2.0] };
    let sig = gen_signal(&spec, p, n, rng)?;
    let y = &sig.x + sample_noise(dist, 1.0 / (n as f64).sqrt(), p, n, rng)?;
    let kept = (fraction * p as f64).round() as usize;
    let omega = WeightOperator::selection(p, (0..kept).collect())?;
    let trip = GramSpectrum::new(&y).top(2)?;

    let wu_hat = omega.apply(&trip.u)?;
    let wu = omega.apply(&sig.u)?;
    let d_hat = (wu_hat.transpose() * &wu_hat).abs();
    let c_hat = (wu_hat.transpose() * &wu).abs();

    let spikes = SpikeParams::from_population(&sig.t, ar)?;
    let mu = kept as f64 / p as f64;
    let e = wu.transpose() * &wu;
    let (d_pred, _) = WeightedGeometry::predict_empirical(&e, &e, &spikes, mu, mu);
    let c_pred = DMatrix::from_fn(2, 2, |j, k| (e[(j, k)] * spikes.c[j]).abs());
    let d_pred = d_pred.abs();
    Ok(vec![
        ("c_omega_error", (c_hat - &c_pred).norm() / c_pred.norm()),
        ("d_error", (d_hat - &d_pred).norm() / d_pred.norm()),
    ])
}

fn rank_replicate<R: Rng + ?Sized>(c: &RankParams, dist: NoiseDist, rng: &mut R) -> Result<Metrics> {
    let (p, n) = (c.p, c.n);
    let ar = AspectRatio::from_dims(p, n)?;
    let th = ar.population_threshold();
    let spec = SignalSpec::ConstantAndSign { t: vec![th + 2.0, th + 1.0] };
    let sig = gen_signal(&spec, p, n, rng)?;
    let noise = sample_noise(dist, 1.0 / (n as f64).sqrt(), p, n, rng)?;
    let (x, y) = if c.signal {
        (sig.x.clone(), &sig.x + noise)
    } else {
        (DMatrix::zeros(p, n), noise)
    };
    let values = GramSpectrum::new(&y).singular_values().to_vec();
    let r_naive = naive_rank(&values, ar, 0.0)?;
    let omega = WeightOperator::diagonal(DVector::from_vec(linspace(1.0 / p as f64, 1.0, p)))?;
    let pi = WeightOperator::diagonal(DVector::from_vec(linspace(1.0 / p as f64, 1.0 / ar.value(), n)))?;
    let mut out: Metrics = vec![("naive_rank", r_naive as f64)];
    if c.signal {
        let oracle = spectral_denoise(&y, &omega, &pi, &DenoiseOptions::with_rank(2))?;
        let naive = spectral_denoise(&y, &omega, &pi, &DenoiseOptions::with_rank(r_naive))?;
        out.push(("oracle_error", relative_error(&oracle.x_hat, &x, Some(&omega), Some(&pi))?));
        out.push(("naive_error", relative_error(&naive.x_hat, &x, Some(&omega), Some(&pi))?));
    } else {
        out.push(("oracle_error", f64::NAN));
        out.push(("naive_error", f64::NAN));
    }
    Ok(out)
}

/// Runs every replicate of every grid point and aggregates in replicate order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let cfg = config.resolved();
    let start = Instant::now();
    let grid = grid_of(&cfg);
    let names = metric_names(&cfg);
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..cfg.replicates).map(move |r| (g, r)))
        .collect();
    let run = |&(g, r): &(usize, usize)| {
        let seed = derive_seed(cfg.seed, r as u64);
        let (values, error) = match run_replicate(&cfg, g, seed) {
            Ok(m) => (
                names
                    .iter()
                    .map(|name| m.iter().find(|(k, _)| k == name).map_or(f64::NAN, |(_, v)| *v))
                    .collect(),
                None,
            ),
            Err(e) => (vec![f64::NAN; names.len()], Some(e.to_string())),
        };
        ReplicateRow {
            grid_index: g,
            replicate_id: r,
            seed,
            values,
            error,
        }
    };
    let rows: Vec<ReplicateRow> = if cfg.jobs == 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| DenoiseError::Numerical(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    let grid_reports = grid
        .into_iter()
        .enumerate()
        .map(|(g, point)| {
            let metrics = names
                .iter()
                .enumerate()
                .map(|(m, name)| {
                    let vals: Vec<f64> = rows.iter().filter(|r| r.grid_index == g).map(|r| r.values[m]).collect();
                    (name.to_string(), Aggregate::of(&vals))
                })
                .collect();
            GridReport { point, metrics }
        })
        .collect();
    Ok(ExperimentReport {
        version: crate::VERSION.to_string(),
        scenario: cfg.scenario_name().to_string(),
        metric_names: names.iter().map(|s| s.to_string()).collect(),
        config: cfg,
        grid: grid_reports,
        replicates: rows,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Naive against oracle rank for the weighted denoiser.
pub fn rank_estimation_study(params: RankParams, replicates: usize, seed: u64) -> Result<ExperimentReport> {
    run_experiment(&ExperimentConfig::new(Scenario::RankEstimation(params), replicates, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn checkerboard_energy_and_rank() {
        for f in [0.5, 0.6, 0.7, 0.9, 1.0] {
            let s = gen_signal(
                &SignalSpec::Checkerboard { f, cells_row: 8, cells_col: 8 },
                80,
                64,
                &mut rng(),
            )
            .unwrap();
            assert!((s.x.norm() - 1.0).abs() < 1e-12);
            let light: f64 = (0..80)
                .flat_map(|i| (0..64).map(move |j| (i, j)))
                .filter(|&(i, j)| (i / 10 + j / 8) % 2 == 0)
                .map(|(i, j)| s.x[(i, j)].powi(2))
                .sum();
            assert!((light - f).abs() < 1e-12, "f={f}: {light}");
            assert_eq!(s.rank(), if f == 0.5 { 1 } else { 2 });
            let rebuilt = &s.u * DMatrix::from_diagonal(&DVector::from_vec(s.t.clone())) * s.v.transpose();
            assert!((rebuilt - &s.x).amax() < 1e-12);
            if f == 1.0 {
                assert!(s.x.iter().filter(|v| **v == 0.0).count() == 80 * 64 / 2);
            }
        }
        let bad = SignalSpec::Checkerboard { f: 0.4, cells_row: 8, cells_col: 8 };
        assert!(gen_signal(&bad, 16, 16, &mut rng()).is_err());
    }

    #[test]
    fn random_orthonormal_factors() {
        let s = gen_signal(&SignalSpec::RandomOrthonormal { t: vec![3.0, 2.0, 1.0] }, 50, 40, &mut rng()).unwrap();
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((s.u.transpose() * &s.u - &i3).amax() < 1e-12);
        assert!((s.v.transpose() * &s.v - &i3).amax() < 1e-12);
        let sv = s.x.singular_values();
        assert!((sv[0] - 3.0).abs() < 1e-12 && (sv[2] - 1.0).abs() < 1e-12);
        assert!(gen_signal(&SignalSpec::RandomOrthonormal { t: vec![1.0, 2.0] }, 5, 5, &mut rng()).is_err());
    }

    #[test]
    fn piecewise_submatrix_energy() {
        let f: f64 = 0.3;
        let s = gen_signal(
            &SignalSpec::PiecewiseConstant { t: 2.0, first_half_energy: f.sqrt() },
            40,
            60,
            &mut rng(),
        )
        .unwrap();
        let x0 = s.x.view((0, 0), (20, 30)).norm_squared();
        assert!((x0 / s.x.norm_squared() - f).abs() < 1e-12);
    }

    #[test]
    fn rademacher_support_and_determinism() {
        let spec = NoiseSpec::new(NoiseDist::Rademacher, 9);
        let g = gen_noise(&spec, 30, 100).unwrap();
        assert!(g.iter().all(|v| (v.abs() - 0.1).abs() < 1e-15));
        assert_eq!(g, gen_noise(&spec, 30, 100).unwrap());
        let spec = NoiseSpec::new(NoiseDist::Gaussian, 9);
        assert_eq!(gen_noise(&spec, 7, 9).unwrap(), gen_noise(&spec, 7, 9).unwrap());
    }

    #[test]
    fn noise_variance_and_tails() {
        for dist in [NoiseDist::Gaussian, NoiseDist::Rademacher, NoiseDist::StudentT { df: 10.0 }] {
            let g = gen_noise(&NoiseSpec { dist, scale: Some(1.0), seed: 1 }, 400, 400).unwrap();
            let var = g.norm_squared() / g.len() as f64;
            assert!((var - 1.0).abs() < 0.05, "{dist:?}: {var}");
        }
        let g = gen_noise(&NoiseSpec { dist: NoiseDist::StudentT { df: 10.0 }, scale: Some(1.0), seed: 2 }, 1000, 1000)
            .unwrap();
        let m2 = g.iter().map(|v| v * v).sum::<f64>() / 1e6;
        let m4 = g.iter().map(|v| v.powi(4)).sum::<f64>() / 1e6;
        assert!(m4 / (m2 * m2) > 3.0);
        assert!(gen_noise(&NoiseSpec::new(NoiseDist::StudentT { df: 0.0 }, 0), 2, 2).is_err());
        assert!(NoiseDist::StudentT { df: 2.0 }.infinite_variance());
    }

    #[test]
    fn relative_error_examples() {
        let x = DMatrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 - 2.5);
        assert_eq!(relative_error(&x, &x, None, None).unwrap(), 0.0);
        assert!((relative_error(&DMatrix::zeros(4, 3), &x, None, None).unwrap() - 1.0).abs() < 1e-15);
        assert!((relative_error(&(&x * 2.0), &x, None, None).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            relative_error(&x, &DMatrix::zeros(4, 3), None, None),
            Err(DenoiseError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn seeds_are_distinct_and_fixed() {
        assert_eq!(derive_seed(0, 0), splitmix64(splitmix64(0)));
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        let s: std::collections::HashSet<u64> =
            (0..10).flat_map(|b| (0..100).map(move |i| derive_seed(b, i))).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn config_parsing_and_scaling() {
        let cfg = ExperimentConfig::from_json(
            r#"{"schema": 1, "replicates": 10, "seed": 5, "scenario": "submatrix", "params": {"f": [0.25]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.scenario_name(), "submatrix");
        let mut half = cfg.clone();
        half.scale = 0.5;
        let r = half.resolved();
        assert_eq!(r.replicates, 5);
        match r.scenario {
            Scenario::Submatrix(s) => assert_eq!((s.p, s.n), (250, 500)),
            _ => unreachable!(),
        }
        assert!(ExperimentConfig::for_scenario("nope").is_err());
        for name in SCENARIOS {
            assert_eq!(ExperimentConfig::for_scenario(name).unwrap().scenario_name(), name);
        }
        assert!(ExperimentConfig::from_json(r#"{"schema": 2, "scenario": "submatrix", "params": {}}"#).is_err());
    }

    #[test]
    fn runner_is_deterministic_across_jobs() {
        let mut cfg = ExperimentConfig::for_scenario("rank-estimation").unwrap();
        cfg.replicates = 4;
        cfg.scale = 0.2;
        cfg.seed = 11;
        let a = run_experiment(&cfg).unwrap();
        cfg.jobs = 3;
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.replicates, b.replicates);
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.replicates.len(), 1);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
