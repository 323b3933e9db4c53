//! Weight operators and the weighted geometry of singular vectors.
//!
//! For weights `Omega` (q x p) and `Pi`, the loss `|Omega (Xhat - X) Pi^T|_F^2`
//! depends on the spectral denoiser only through a handful of `r x r`
//! matrices: empirical weighted Grams `D`, `D~` of the observed singular
//! vectors, their population counterparts `E`, `E~`, and the cross terms
//! `C`, `C~`. This module estimates all of them from `D`, `D~` and the
//! recovered spike parameters.
//!
//! The population limits are assumed to exist; only finite-n quantities are
//! ever available, so convergence itself cannot be checked here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, DenoiseError, Result};
use crate::linalg::op_norm;
use crate::spiked::SpikeParams;

/// Floor applied to estimated `alpha_k`, `beta_k`.
pub const ALPHA_FLOOR: f64 = 1e-8;
/// Smallest cosine for which the weighted geometry is recovered.
pub const MIN_COSINE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
enum WeightKind {
    Identity,
    /// `diag(w)`, square.
    Diagonal(DVector<f64>),
    /// Rectangular selection of the listed coordinates, in order. Equivalent
    /// for every quantity used here to the square coordinate projection.
    Selection(Vec<usize>),
    Dense(DMatrix<f64>),
}

/// A weight matrix with `dim` columns, stored in whichever form is cheapest.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightOperator {
    dim: usize,
    kind: WeightKind,
    op_norm_bound: f64,
}

impl WeightOperator {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            kind: WeightKind::Identity,
            op_norm_bound: 1.0,
        }
    }

    pub fn diagonal(weights: DVector<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("diagonal weights must be finite"));
        }
        let norm = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        Ok(Self {
            dim: weights.len(),
            op_norm_bound: norm,
            kind: WeightKind::Diagonal(weights),
        })
    }

    /// Coordinate selection of `indices` out of `0..dim`.
    pub fn selection(dim: usize, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(invalid(format!("index {bad} out of range for dimension {dim}")));
        }
        let mut seen = vec![false; dim];
        for &i in &indices {
            if std::mem::replace(&mut seen[i], true) {
                return Err(invalid(format!("duplicate index {i} in selection")));
            }
        }
        Ok(Self {
            dim,
            op_norm_bound: if indices.is_empty() { 0.0 } else { 1.0 },
            kind: WeightKind::Selection(indices),
        })
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|w| !w.is_finite()) {
            return Err(invalid("weight matrix must be finite"));
        }
        Ok(Self {
            dim: matrix.ncols(),
            op_norm_bound: op_norm(&matrix),
            kind: WeightKind::Dense(matrix),
        })
    }

    /// Number of columns.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows of the operator.
    pub fn out_dim(&self) -> usize {
        match &self.kind {
            WeightKind::Identity => self.dim,
            WeightKind::Diagonal(w) => w.len(),
            WeightKind::Selection(idx) => idx.len(),
            WeightKind::Dense(m) => m.nrows(),
        }
    }

    pub fn op_norm_bound(&self) -> f64 {
        self.op_norm_bound
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, WeightKind::Identity)
    }

    /// `Omega * A` for `A` with `dim` rows.
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.dim {
            return Err(mismatch(format!(
                "weight operator has {} columns but the operand has {} rows",
                self.dim,
                a.nrows()
            )));
        }
        Ok(match &self.kind {
            WeightKind::Identity => a.clone(),
            WeightKind::Diagonal(w) => {
                let mut out = a.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= w[i];
                }
                out
            }
            WeightKind::Selection(idx) => a.select_rows(idx.iter()),
            WeightKind::Dense(m) => m * a,
        })
    }

    /// `Omega A Pi^T` with `self = Omega`.
    pub fn sandwich(&self, a: &DMatrix<f64>, pi: &WeightOperator) -> Result<DMatrix<f64>> {
        let left = self.apply(a)?;
        Ok(pi.apply(&left.transpose())?.transpose())
    }

    /// Explicit matrix of the operator.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.apply(&DMatrix::identity(self.dim, self.dim))
            .expect("identity has matching dimension")
    }
}

/// `tr(Omega^T Omega) / dim`.
pub fn trace_weight(omega: &WeightOperator, dim: usize) -> Result<f64> {
    if omega.dim() != dim {
        return Err(mismatch(format!(
            "weight operator has {} columns, expected {dim}",
            omega.dim()
        )));
    }
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let sq = match &omega.kind {
        WeightKind::Identity => dim as f64,
        WeightKind::Diagonal(w) => w.norm_squared(),
        WeightKind::Selection(idx) => idx.len() as f64,
        WeightKind::Dense(m) => m.norm_squared(),
    };
    Ok(sq / dim as f64)
}

/// `(Omega V)^T (Omega V)`: entry `(j, k)` is `<Omega v_j, Omega v_k>`.
pub fn weighted_gram(vectors: &DMatrix<f64>, omega: &WeightOperator) -> Result<DMatrix<f64>> {
    for (j, col) in vectors.column_iter().enumerate() {
        if (col.norm() - 1.0).abs() > 1e-8 {
            return Err(invalid(format!("column {j} is not unit norm ({})", col.norm())));
        }
    }
    let w = omega.apply(vectors)?;
    let g = w.transpose() * &w;
    // Exact symmetry regardless of summation order.
    Ok((&g + g.transpose()) * 0.5)
}

/// Estimated population weighted geometry for `r` detected components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGeometry {
    pub rank: usize,
    pub t: Vec<f64>,
    pub d: DMatrix<f64>,
    pub d_tilde: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub e_tilde: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_tilde: DMatrix<f64>,
    pub mu: f64,
    pub nu: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Components whose `alpha` or `beta` estimate was raised to the floor.
    pub clipped: Vec<usize>,
}

impl WeightedGeometry {
    pub fn empty() -> Self {
        Self {
            rank: 0,
            t: Vec::new(),
            d: DMatrix::zeros(0, 0),
            d_tilde: DMatrix::zeros(0, 0),
            e: DMatrix::zeros(0, 0),
            e_tilde: DMatrix::zeros(0, 0),
            c: DMatrix::zeros(0, 0),
            c_tilde: DMatrix::zeros(0, 0),
            mu: 1.0,
            nu: 1.0,
            alpha: Vec::new(),
            beta: Vec::new(),
            clipped: Vec::new(),
        }
    }

    /// Geometry of unweighted loss: `D = E = I`, `C = diag(c)`.
    pub fn unweighted(spikes: &SpikeParams) -> Self {
        let r = spikes.rank;
        let eye = DMatrix::identity(r, r);
        Self {
            rank: r,
            t: spikes.t.clone(),
            d: eye.clone(),
            d_tilde: eye.clone(),
            e: eye.clone(),
            e_tilde: eye,
            c: DMatrix::from_diagonal(&DVector::from_column_slice(&spikes.c)),
            c_tilde: DMatrix::from_diagonal(&DVector::from_column_slice(&spikes.c_tilde)),
            mu: 1.0,
            nu: 1.0,
            alpha: vec![1.0; r],
            beta: vec![1.0; r],
            clipped: Vec::new(),
        }
    }

    /// Predicted empirical Grams for a known population geometry: the
    /// forward direction of [`recover_population_geometry`].
    ///
    /// `e`, `e_tilde` hold the population weighted Grams (`alpha`, `beta` on
    /// the diagonal).
    pub fn predict_empirical(
        e: &DMatrix<f64>,
        e_tilde: &DMatrix<f64>,
        spikes: &SpikeParams,
        mu: f64,
        nu: f64,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let r = spikes.rank;
        let side = |pop: &DMatrix<f64>, c: &[f64], s: &[f64], trace: f64| {
            DMatrix::from_fn(r, r, |j, k| {
                if j == k {
                    c[k] * c[k] * pop[(k, k)] + s[k] * s[k] * trace
                } else {
                    pop[(j, k)] * c[j] * c[k]
                }
            })
        };
        (
            side(e, &spikes.c, &spikes.s, mu),
            side(e_tilde, &spikes.c_tilde, &spikes.s_tilde, nu),
        )
    }
}

/// Inverts the limit formulas for the weighted inner products: recovers
/// `alpha`, `beta`, off-diagonal `e_jk`, and `C`, `C~` from the empirical
/// weighted Grams.
pub fn recover_population_geometry(
    d: &DMatrix<f64>,
    d_tilde: &DMatrix<f64>,
    spikes: &SpikeParams,
    mu: f64,
    nu: f64,
) -> Result<WeightedGeometry> {
    let r = spikes.rank;
    if d.shape() != (r, r) || d_tilde.shape() != (r, r) {
        return Err(mismatch(format!(
            "weighted Grams must be {r}x{r}, got {:?} and {:?}",
            d.shape(),
            d_tilde.shape()
        )));
    }
    if !(mu > 0.0 && nu > 0.0 && mu.is_finite() && nu.is_finite()) {
        return Err(invalid(format!("mu and nu must be positive, got {mu}, {nu}")));
    }
    for k in 0..r {
        let worst = spikes.c[k].min(spikes.c_tilde[k]);
        if worst.is_nan() || worst < MIN_COSINE {
            return Err(DenoiseError::IllConditionedRecovery {
                component: k,
                cosine: worst,
            });
        }
    }

    let mut clipped = Vec::new();
    let mut alpha = Vec::with_capacity(r);
    let mut beta = Vec::with_capacity(r);
    for k in 0..r {
        let (c2, ct2) = (spikes.c[k].powi(2), spikes.c_tilde[k].powi(2));
        let a = (d[(k, k)] - spikes.s[k].powi(2) * mu) / c2;
        let b = (d_tilde[(k, k)] - spikes.s_tilde[k].powi(2) * nu) / ct2;
        if !(a >= ALPHA_FLOOR && b >= ALPHA_FLOOR) {
            clipped.push(k);
        }
        alpha.push(a.max(ALPHA_FLOOR));
        beta.push(b.max(ALPHA_FLOOR));
    }

    let population = |emp: &DMatrix<f64>, c: &[f64], diag: &[f64]| {
        DMatrix::from_fn(r, r, |j, k| {
            if j == k {
                diag[k]
            } else {
                emp[(j, k)] / (c[j] * c[k])
            }
        })
    };
    let e = population(d, &spikes.c, &alpha);
    let e_tilde = population(d_tilde, &spikes.c_tilde, &beta);
    let c = DMatrix::from_fn(r, r, |j, k| e[(j, k)] * spikes.c[j]);
    let c_tilde = DMatrix::from_fn(r, r, |j, k| e_tilde[(j, k)] * spikes.c_tilde[j]);

    Ok(WeightedGeometry {
        rank: r,
        t: spikes.t.clone(),
        d: d.clone(),
        d_tilde: d_tilde.clone(),
        e,
        e_tilde,
        c,
        c_tilde,
        mu,
        nu,
        alpha,
        beta,
        clipped,
    })
}
