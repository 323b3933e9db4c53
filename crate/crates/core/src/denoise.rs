//! Spectral denoisers `Xhat = U B V^T` built on the leading singular vectors
//! of the observation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::geometry::{
    recover_population_geometry, trace_weight, weighted_gram, WeightOperator, WeightedGeometry,
};
use crate::linalg::{sym_pinv, GramSpectrum, SingularTriplets};
use crate::spiked::{estimate_spike_params, naive_rank, AspectRatio, SpikeParams};

/// Relative eigenvalue cutoff for the pseudoinverses of `D` and `D~`.
pub const PINV_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseOptions {
    /// Number of components; detected with [`naive_rank`] when absent.
    pub rank: Option<usize>,
    /// Additive margin above the bulk edge used for rank detection.
    pub margin: f64,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self {
            rank: None,
            margin: 0.0,
        }
    }
}

impl DenoiseOptions {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank: Some(rank),
            margin: 0.0,
        }
    }
}

/// Leading singular triplets of an observation and the spike parameters
/// recovered from them. Computed once and shared by every weighting.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub triplets: SingularTriplets,
    pub spikes: SpikeParams,
    /// Singular values of the observation, descending: all of them when the
    /// rank was detected, otherwise only the leading `rank`.
    pub singular_values: Vec<f64>,
    pub shape: (usize, usize),
}

impl Decomposition {
    pub fn compute(y: &DMatrix<f64>, opts: &DenoiseOptions) -> Result<Self> {
        let (p, n) = y.shape();
        let gamma = AspectRatio::from_dims(p, n)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observation contains non-finite entries"));
        }
        let spectrum = GramSpectrum::new(y);
        let (triplets, values) = match opts.rank {
            Some(r) => {
                let trip = spectrum.top(r)?;
                let values = trip.values.clone();
                (trip, values)
            }
            None => {
                let values = spectrum.singular_values().to_vec();
                let r = naive_rank(&values, gamma, opts.margin)?;
                (spectrum.top(r)?, values)
            }
        };
        let spikes = estimate_spike_params(&triplets.values, gamma, Some(triplets.rank()))?;
        Ok(Self {
            triplets,
            spikes,
            singular_values: values,
            shape: (p, n),
        })
    }

    pub fn rank(&self) -> usize {
        self.spikes.rank
    }

    /// Weighted geometry for the loss `|Omega (Xhat - X) Pi^T|_F^2`.
    pub fn geometry(&self, omega: &WeightOperator, pi: &WeightOperator) -> Result<WeightedGeometry> {
        let (p, n) = self.shape;
        if omega.dim() != p || pi.dim() != n {
            return Err(mismatch(format!(
                "weights act on {}x{} but the observation is {p}x{n}",
                omega.dim(),
                pi.dim()
            )));
        }
        if self.rank() == 0 {
            return Ok(WeightedGeometry::empty());
        }
        let mu = trace_weight(omega, p)?;
        let nu = trace_weight(pi, n)?;
        let d = weighted_gram(&self.triplets.u, omega)?;
        let d_tilde = weighted_gram(&self.triplets.v, pi)?;
        recover_population_geometry(&d, &d_tilde, &self.spikes, mu, nu)
    }

    /// `U B V^T` restricted to the given rows and columns, entry by entry.
    ///
    /// Each entry is formed in the same order regardless of the index sets,
    /// so sub-blocks agree bitwise with the full reconstruction.
    pub fn reconstruct_block(&self, b: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let r = self.rank();
        let u = &self.triplets.u;
        let v = &self.triplets.v;
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        let mut ub = vec![0.0; r];
        for (a, &i) in rows.iter().enumerate() {
            for (l, slot) in ub.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += u[(i, k)] * b[(k, l)];
                }
                *slot = acc;
            }
            for (c, &j) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for (l, w) in ub.iter().enumerate() {
                    acc += w * v[(j, l)];
                }
                out[(a, c)] = acc;
            }
        }
        out
    }

    pub fn reconstruct(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.shape.0).collect();
        let cols: Vec<usize> = (0..self.shape.1).collect();
        self.reconstruct_block(b, &rows, &cols)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiseFlags {
    /// No component was detected; the estimate is the zero matrix.
    pub rank_zero: bool,
    /// The AMSE formula evaluated negative and was clamped to zero.
    pub amse_clamped: bool,
}

#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub b_hat: DMatrix<f64>,
    pub x_hat: DMatrix<f64>,
    pub amse_estimate: f64,
    pub spikes: SpikeParams,
    pub geometry: WeightedGeometry,
    pub clipped_components: Vec<usize>,
    pub flags: DenoiseFlags,
}

/// `D^+ C diag(t) C~^T D~^+`.
pub fn optimal_b(geom: &WeightedGeometry) -> DMatrix<f64> {
    let t = DMatrix::from_diagonal(&DVector::from_column_slice(&geom.t));
    sym_pinv(&geom.d, PINV_CUTOFF) * &geom.c * t * geom.c_tilde.transpose() * sym_pinv(&geom.d_tilde, PINV_CUTOFF)
}

/// Estimated weighted AMSE of [`optimal_b`]. The second component reports
/// whether a negative round-off value was clamped.
pub fn amse_estimate(geom: &WeightedGeometry) -> (f64, bool) {
    let r = geom.rank;
    if r == 0 {
        return (0.0, false);
    }
    let t = DMatrix::from_diagonal(&DVector::from_column_slice(&geom.t));
    let first = &geom.e * &t * &geom.e_tilde;
    let second = geom.c.transpose()
        * sym_pinv(&geom.d, PINV_CUTOFF)
        * &geom.c
        * &t
        * geom.c_tilde.transpose()
        * sym_pinv(&geom.d_tilde, PINV_CUTOFF)
        * &geom.c_tilde;
    let value: f64 = (0..r).map(|k| (first[(k, k)] - second[(k, k)]) * geom.t[k]).sum();
    if value < 0.0 {
        (0.0, true)
    } else {
        (value, false)
    }
}

/// Correction factors `eta_k` of the diagonal denoiser.
pub fn correction_factors(geom: &WeightedGeometry, spikes: &SpikeParams) -> Vec<f64> {
    (0..geom.rank)
        .map(|k| {
            let (c2, ct2) = (spikes.c[k].powi(2), spikes.c_tilde[k].powi(2));
            let (s2, st2) = (spikes.s[k].powi(2), spikes.s_tilde[k].powi(2));
            let (a, b) = (geom.alpha[k], geom.beta[k]);
            a / (c2 * a + s2 * geom.mu) * b / (ct2 * b + st2 * geom.nu)
        })
        .collect()
}

/// Optimal diagonal `B` and its AMSE.
pub fn diagonal_b(geom: &WeightedGeometry, spikes: &SpikeParams) -> (DMatrix<f64>, f64) {
    let eta = correction_factors(geom, spikes);
    let r = geom.rank;
    let mut b = DMatrix::zeros(r, r);
    let mut amse = 0.0;
    for k in 0..r {
        let cc = spikes.c[k] * spikes.c_tilde[k];
        b[(k, k)] = geom.t[k] * cc * eta[k];
        amse += geom.t[k].powi(2) * geom.alpha[k] * geom.beta[k] * (1.0 - cc * cc * eta[k]);
    }
    (b, amse)
}

fn finish(
    decomp: &Decomposition,
    geometry: WeightedGeometry,
    b_hat: DMatrix<f64>,
    amse: f64,
    amse_clamped: bool,
) -> DenoiseResult {
    let x_hat = decomp.reconstruct(&b_hat);
    DenoiseResult {
        x_hat,
        b_hat,
        amse_estimate: amse,
        spikes: decomp.spikes.clone(),
        clipped_components: geometry.clipped.clone(),
        geometry,
        flags: DenoiseFlags {
            rank_zero: decomp.rank() == 0,
            amse_clamped,
        },
    }
}

/// Optimal spectral denoiser for a precomputed decomposition.
pub fn spectral_denoise_with(
    decomp: &Decomposition,
    omega: &WeightOperator,
    pi: &WeightOperator,
) -> Result<DenoiseResult> {
    let geometry = decomp.geometry(omega, pi)?;
    let b = optimal_b(&geometry);
    let (amse, clamped) = amse_estimate(&geometry);
    Ok(finish(decomp, geometry, b, amse, clamped))
}

/// Optimal spectral denoiser of `Y` for the loss `|Omega (Xhat - X) Pi^T|_F^2`.
pub fn spectral_denoise(
    y: &DMatrix<f64>,
    omega: &WeightOperator,
    pi: &WeightOperator,
    opts: &DenoiseOptions,
) -> Result<DenoiseResult> {
    check_weights(y, omega, pi)?;
    let decomp = Decomposition::compute(y, opts)?;
    spectral_denoise_with(&decomp, omega, pi)
}

/// Best denoiser among those with diagonal `B`.
pub fn diagonal_denoise(
    y: &DMatrix<f64>,
    omega: &WeightOperator,
    pi: &WeightOperator,
    opts: &DenoiseOptions,
) -> Result<DenoiseResult> {
    check_weights(y, omega, pi)?;
    let decomp = Decomposition::compute(y, opts)?;
    let geometry = decomp.geometry(omega, pi)?;
    let (b, amse) = diagonal_b(&geometry, &decomp.spikes);
    let clamped = amse < 0.0;
    Ok(finish(&decomp, geometry, b, amse.max(0.0), clamped))
}

/// Singular value shrinkage for a precomputed decomposition.
pub fn svs_shrink_with(decomp: &Decomposition) -> DenoiseResult {
    let sp = &decomp.spikes;
    let geometry = WeightedGeometry::unweighted(sp);
    let r = sp.rank;
    let mut b = DMatrix::zeros(r, r);
    let mut amse = 0.0;
    for k in 0..r {
        let cc = sp.c[k] * sp.c_tilde[k];
        b[(k, k)] = sp.t[k] * cc;
        amse += sp.t[k].powi(2) * (1.0 - cc * cc);
    }
    finish(decomp, geometry, b, amse, false)
}

/// Optimal singular value shrinkage `sum_k t_k c_k c~_k u_k v_k^T`.
pub fn svs_shrink(y: &DMatrix<f64>, opts: &DenoiseOptions) -> Result<DenoiseResult> {
    Ok(svs_shrink_with(&Decomposition::compute(y, opts)?))
}

fn check_weights(y: &DMatrix<f64>, omega: &WeightOperator, pi: &WeightOperator) -> Result<()> {
    if omega.dim() != y.nrows() || pi.dim() != y.ncols() {
        return Err(mismatch(format!(
            "weights act on {}x{} but the observation is {}x{}",
            omega.dim(),
            pi.dim(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

/// Outcome of [`check_shrinkage_properties`] on a grid of signal strengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageReport {
    pub t: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t_hat: Vec<f64>,
    /// `alpha <= mu` or `beta <= nu`, under which both properties must hold.
    pub hypothesis_holds: bool,
    /// Grid indices where `t_hat > lambda`.
    pub shrinkage_violations: Vec<usize>,
    /// Grid indices `i` where `t_hat[i + 1] < t_hat[i]`.
    pub monotonicity_violations: Vec<usize>,
}

impl ShrinkageReport {
    pub fn shrinks(&self) -> bool {
        self.shrinkage_violations.is_empty()
    }

    pub fn monotone(&self) -> bool {
        self.monotonicity_violations.is_empty()
    }
}

/// Diagonal denoiser output `t_hat` as a function of the observed singular
/// value for a single component with fixed weighted geometry.
pub fn diagonal_singular_value(
    t: f64,
    gamma: AspectRatio,
    alpha: f64,
    beta: f64,
    mu: f64,
    nu: f64,
) -> Result<f64> {
    let sp = SpikeParams::from_population(&[t], gamma)?;
    let mut geom = WeightedGeometry::unweighted(&sp);
    geom.alpha = vec![alpha];
    geom.beta = vec![beta];
    geom.mu = mu;
    geom.nu = nu;
    Ok(diagonal_b(&geom, &sp).0[(0, 0)])
}

pub fn check_shrinkage_properties(
    gamma: AspectRatio,
    alpha: f64,
    beta: f64,
    mu: f64,
    nu: f64,
    t_grid: &[f64],
) -> Result<ShrinkageReport> {
    for (name, x) in [("alpha", alpha), ("beta", beta), ("mu", mu), ("nu", nu)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(invalid(format!("{name} must be positive, got {x}")));
        }
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("t grid must be strictly increasing"));
    }
    let mut lambda = Vec::with_capacity(t_grid.len());
    let mut t_hat = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let sp = SpikeParams::from_population(&[t], gamma)?;
        lambda.push(sp.lambda[0]);
        t_hat.push(diagonal_singular_value(t, gamma, alpha, beta, mu, nu)?);
    }
    let shrinkage_violations = (0..t_grid.len()).filter(|&i| t_hat[i] > lambda[i]).collect();
    let monotonicity_violations = (0..t_grid.len().saturating_sub(1))
        .filter(|&i| t_hat[i + 1] < t_hat[i])
        .collect();
    Ok(ShrinkageReport {
        t: t_grid.to_vec(),
        lambda,
        t_hat,
        hypothesis_holds: alpha <= mu || beta <= nu,
        shrinkage_violations,
        monotonicity_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spiked(p: usize, n: usize, t: &[f64], rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = t.len();
        let u = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
        let v = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
        let x = &u * DMatrix::from_diagonal(&DVector::from_column_slice(t)) * v.transpose();
        let scale = 1.0 / (n as f64).sqrt();
        let g = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        (&x + g, x)
    }

    /// Random geometry with positive definite `D`, `D~`.
    fn random_geometry(r: usize, rng: &mut ChaCha8Rng) -> WeightedGeometry {
        let spd = |rng: &mut ChaCha8Rng| {
            let a = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>() - 0.5);
            &a * a.transpose() + DMatrix::identity(r, r) * 0.5
        };
        let mut g = WeightedGeometry::empty();
        g.rank = r;
        g.t = (0..r).map(|k| 3.0 - 0.4 * k as f64).collect();
        g.d = spd(rng);
        g.d_tilde = spd(rng);
        g.e = spd(rng);
        g.e_tilde = spd(rng);
        g.c = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>());
        g.c_tilde = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>());
        g.alpha = (0..r).map(|k| g.e[(k, k)]).collect();
        g.beta = (0..r).map(|k| g.e_tilde[(k, k)]).collect();
        g
    }

    fn objective(g: &WeightedGeometry, b: &DMatrix<f64>) -> f64 {
        let t = DMatrix::from_diagonal(&DVector::from_column_slice(&g.t));
        let m = &g.c * t * g.c_tilde.transpose();
        (&g.d * b * &g.d_tilde).dot(b) - 2.0 * m.dot(b)
    }

    #[test]
    fn scalar_case() {
        let mut g = WeightedGeometry::empty();
        g.rank = 1;
        g.t = vec![2.0];
        g.d = DMatrix::from_element(1, 1, 0.8);
        g.d_tilde = DMatrix::from_element(1, 1, 1.3);
        g.c = DMatrix::from_element(1, 1, 0.6);
        g.c_tilde = DMatrix::from_element(1, 1, 0.7);
        let b = optimal_b(&g);
        assert!((b[(0, 0)] - 2.0 * 0.6 * 0.7 / (0.8 * 1.3)).abs() < 1e-14);
    }

    #[test]
    fn unweighted_geometry_gives_shrinker() {
        let sp = SpikeParams::from_population(&[3.0, 2.0], AspectRatio::new(0.5).unwrap()).unwrap();
        let g = WeightedGeometry::unweighted(&sp);
        let b = optimal_b(&g);
        for k in 0..2 {
            assert!((b[(k, k)] - sp.t[k] * sp.c[k] * sp.c_tilde[k]).abs() < 1e-14);
        }
        assert!(b[(0, 1)].abs() < 1e-15);
        let (amse, _) = amse_estimate(&g);
        let expect: f64 = (0..2).map(|k| sp.t[k].powi(2) * (1.0 - (sp.c[k] * sp.c_tilde[k]).powi(2))).sum();
        assert!((amse - expect).abs() < 1e-12);
    }

    #[test]
    fn normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for r in 1..=4 {
            let g = random_geometry(r, &mut rng);
            let b = optimal_b(&g);
            // vec(D B D~) = (D~ kron D) vec(B) for symmetric D~.
            let k = g.d_tilde.kronecker(&g.d);
            let t = DMatrix::from_diagonal(&DVector::from_column_slice(&g.t));
            let m = &g.c * t * g.c_tilde.transpose();
            let rhs = DVector::from_column_slice(m.as_slice());
            let sol = k.lu().solve(&rhs).unwrap();
            let oracle = DMatrix::from_column_slice(r, r, sol.as_slice());
            assert!((&b - &oracle).norm() / oracle.norm() < 1e-10);

            let base = objective(&g, &b);
            for _ in 0..20 {
                let dir = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>() - 0.5);
                assert!(objective(&g, &(&b + dir * 1e-3)) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn zero_signal_amse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = random_geometry(2, &mut rng);
        g.t = vec![1e-12, 1e-13];
        assert!(amse_estimate(&g).0 < 1e-20);
    }

    #[test]
    fn diagonal_equals_optimal_when_weighted_orthogonal() {
        let gamma = AspectRatio::new(0.8).unwrap();
        let sp = SpikeParams::from_population(&[3.5, 2.2], gamma).unwrap();
        let e = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, 1.7]));
        let et = DMatrix::from_diagonal(&DVector::from_vec(vec![2.1, 0.9]));
        let (d, dt) = WeightedGeometry::predict_empirical(&e, &et, &sp, 0.6, 1.4);
        let geo = recover_population_geometry(&d, &dt, &sp, 0.6, 1.4).unwrap();
        let full = optimal_b(&geo);
        let (diag, amse_diag) = diagonal_b(&geo, &sp);
        assert!((&full - &diag).amax() < 1e-10);
        assert!((amse_estimate(&geo).0 - amse_diag).abs() < 1e-10);
    }

    #[test]
    fn correction_factor_examples() {
        let gamma = AspectRatio::new(1.0).unwrap();
        let same = diagonal_singular_value(2.0, gamma, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((same - 1.5).abs() < 1e-14);
        // eta = (10 / (0.75 * 10 + 0.25))^2
        let eta = (10.0f64 / 7.75).powi(2);
        let ten = diagonal_singular_value(2.0, gamma, 10.0, 10.0, 1.0, 1.0).unwrap();
        assert!((ten - 1.5 * eta).abs() < 1e-12);
        assert!(ten < 2.5);
        let hundred = diagonal_singular_value(2.0, gamma, 100.0, 100.0, 1.0, 1.0).unwrap();
        assert!(hundred > 2.5);
    }

    #[test]
    fn shrinkage_properties() {
        let gamma = AspectRatio::new(0.1).unwrap();
        let th = gamma.population_threshold();
        let grid: Vec<f64> = (1..400).map(|i| th + 0.01 * i as f64).collect();
        let plain = check_shrinkage_properties(gamma, 1.0, 1.0, 1.0, 1.0, &grid).unwrap();
        assert!(plain.shrinks() && plain.monotone() && plain.hypothesis_holds);
        let big = check_shrinkage_properties(gamma, 10.0, 10.0, 1.0, 1.0, &grid).unwrap();
        assert!(!big.monotone());
        assert!(!big.hypothesis_holds);
        let mixed = check_shrinkage_properties(AspectRatio::new(1.0).unwrap(), 0.5, 2.0, 1.0, 1.0, &grid[50..])
            .unwrap();
        assert!(mixed.hypothesis_holds && mixed.shrinks());
        assert!(check_shrinkage_properties(gamma, 1.0, 1.0, 1.0, 1.0, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn identity_weights_reduce_to_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for rep in 0..20 {
            let (p, n) = if rep % 2 == 0 { (120, 200) } else { (200, 120) };
            let (y, _) = spiked(p, n, &[4.0, 2.5], &mut rng);
            let opts = DenoiseOptions::default();
            let w = spectral_denoise(&y, &WeightOperator::identity(p), &WeightOperator::identity(n), &opts)
                .unwrap();
            let s = svs_shrink(&y, &opts).unwrap();
            assert_eq!(w.spikes.rank, s.spikes.rank);
            assert!((&w.x_hat - &s.x_hat).norm() <= 1e-8 * s.x_hat.norm());
        }
    }

    #[test]
    fn shrink_example() {
        let sp = crate::spiked::estimate_spike_params(&[2.5], AspectRatio::new(1.0).unwrap(), Some(1)).unwrap();
        let t_hat = sp.t[0] * sp.c[0] * sp.c_tilde[0];
        assert!((t_hat - 1.5).abs() < 1e-14);
    }

    #[test]
    fn pure_noise_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, _) = spiked(150, 300, &[], &mut rng);
        let opts = DenoiseOptions { rank: None, margin: 0.1 };
        let res = svs_shrink(&y, &opts).unwrap();
        assert!(res.flags.rank_zero);
        assert_eq!(res.x_hat.amax(), 0.0);
        assert_eq!(res.amse_estimate, 0.0);
        let w = WeightOperator::selection(150, (0..50).collect()).unwrap();
        let res = spectral_denoise(&y, &w, &WeightOperator::identity(300), &opts).unwrap();
        assert_eq!(res.x_hat.amax(), 0.0);
    }

    #[test]
    fn forced_rank_below_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (y, _) = spiked(100, 200, &[3.0], &mut rng);
        match svs_shrink(&y, &DenoiseOptions::with_rank(3)) {
            Err(crate::DenoiseError::BelowDetectionThreshold { index: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reconstruction_identity_and_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (y, _) = spiked(90, 140, &[3.0, 2.0], &mut rng);
        let decomp = Decomposition::compute(&y, &DenoiseOptions::default()).unwrap();
        let res = svs_shrink_with(&decomp);
        let u = &decomp.triplets.u;
        let v = &decomp.triplets.v;
        let direct = u * &res.b_hat * v.transpose();
        assert!((&direct - &res.x_hat).norm() <= 1e-12 * direct.norm());
        let rows = [3usize, 7, 40];
        let cols = [0usize, 139];
        let block = decomp.reconstruct_block(&res.b_hat, &rows, &cols);
        for (a, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                assert_eq!(block[(a, c)].to_bits(), res.x_hat[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn sign_flip_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (y, _) = spiked(100, 160, &[4.0, 3.0], &mut rng);
        let omega = WeightOperator::diagonal(DVector::from_fn(100, |i, _| 0.2 + i as f64 / 50.0)).unwrap();
        let pi = WeightOperator::selection(160, (0..90).collect()).unwrap();
        let decomp = Decomposition::compute(&y, &DenoiseOptions::default()).unwrap();
        let base = spectral_denoise_with(&decomp, &omega, &pi).unwrap();
        let mut flipped = decomp.clone();
        flipped.triplets.u.column_mut(1).neg_mut();
        flipped.triplets.v.column_mut(1).neg_mut();
        let other = spectral_denoise_with(&flipped, &omega, &pi).unwrap();
        assert!((&base.x_hat - &other.x_hat).norm() < 1e-12 * base.x_hat.norm());
        assert!((base.amse_estimate - other.amse_estimate).abs() < 1e-12);
    }

    #[test]
    fn weighted_beats_shrinkage_under_weighted_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (p, n) = (300, 500);
        let omega = WeightOperator::diagonal(DVector::from_fn(p, |i, _| if i < p / 4 { 3.0 } else { 0.3 })).unwrap();
        let pi = WeightOperator::identity(n);
        for _ in 0..5 {
            // Left vectors concentrated on the heavily weighted rows.
            let mut u = DMatrix::zeros(p, 1);
            for i in 0..p / 4 {
                u[(i, 0)] = rng.sample::<f64, _>(StandardNormal);
            }
            u.normalize_mut();
            let v = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let x = &u * v.transpose() * 2.0;
            let g = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal) / (n as f64).sqrt());
            let y = &x + g;
            let opts = DenoiseOptions::default();
            let w = spectral_denoise(&y, &omega, &pi, &opts).unwrap();
            let s = svs_shrink(&y, &opts).unwrap();
            let loss = |xh: &DMatrix<f64>| omega.sandwich(&(xh - &x), &pi).unwrap().norm_squared();
            let slack = 0.02 * omega.sandwich(&x, &pi).unwrap().norm_squared();
            assert!(loss(&w.x_hat) <= loss(&s.x_hat) + slack);
        }
    }
}
