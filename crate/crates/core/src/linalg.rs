//! Dense linear-algebra helpers: truncated SVD through the Gram matrix of the
//! short side, symmetric pseudoinverses and matrix functions.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DenoiseError, Result};

/// Leading singular triplets of a matrix, singular values descending.
#[derive(Debug, Clone)]
pub struct SingularTriplets {
    pub values: Vec<f64>,
    /// `p x k`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// `n x k`, orthonormal columns.
    pub v: DMatrix<f64>,
}

impl SingularTriplets {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        Self {
            values: self.values[..k].to_vec(),
            u: self.u.columns(0, k).into_owned(),
            v: self.v.columns(0, k).into_owned(),
        }
    }
}

/// Eigenvalues/vectors of a symmetric matrix, sorted descending.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Moore-Penrose pseudoinverse of a symmetric matrix; eigenvalues at or below
/// `rel_cutoff * max|eigenvalue|` are treated as zero.
pub fn sym_pinv(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if largest == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let cutoff = rel_cutoff * largest;
    let inv = eig
        .eigenvalues
        .map(|x| if x.abs() > cutoff { 1.0 / x } else { 0.0 });
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&inv) * q.transpose()
}

/// `f(A)` for symmetric `A`, applying `f` to eigenvalues floored at `floor`.
pub fn sym_apply(a: &DMatrix<f64>, floor: f64, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|x| f(x.max(floor)));
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&vals) * q.transpose()
}

/// Eigenvalues of a symmetric matrix (unsorted).
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
}

/// Operator (spectral) norm.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let spec = GramSpectrum::new(a);
    spec.top(1).map(|t| t.values[0]).unwrap_or(0.0)
}

/// Residual tolerance for the subspace iteration, relative to the largest
/// Gram eigenvalue.
const RITZ_TOL: f64 = 1e-11;
const MAX_SUBSPACE_ITERS: usize = 400;
/// Below this short-side dimension a full eigendecomposition is cheap enough.
const DENSE_DIM: usize = 96;
/// Contract on the returned triplets: `|Y^T u - s v| <= tol * |Y|_op`.
const TRIPLET_RESIDUAL_TOL: f64 = 1e-8;

/// Spectral access to a `p x n` matrix through the Gram matrix of its short
/// side. The Gram matrix is formed once; all singular values and any number
/// of leading triplets can then be extracted.
pub struct GramSpectrum<'a> {
    y: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    /// `true` when `gram = Y Y^T` (p <= n), otherwise `gram = Y^T Y`.
    rows_side: bool,
    all_values: OnceCell<Vec<f64>>,
}

impl<'a> GramSpectrum<'a> {
    pub fn new(y: &'a DMatrix<f64>) -> Self {
        let rows_side = y.nrows() <= y.ncols();
        let gram = if rows_side {
            y * y.transpose()
        } else {
            y.transpose() * y
        };
        Self {
            y,
            gram,
            rows_side,
            all_values: OnceCell::new(),
        }
    }

    pub fn short_dim(&self) -> usize {
        self.gram.nrows()
    }

    /// All `min(p, n)` singular values, descending.
    pub fn singular_values(&self) -> &[f64] {
        self.all_values.get_or_init(|| {
            let mut ev: Vec<f64> = sym_eigenvalues(&self.gram).iter().copied().collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            ev.into_iter().map(|x| x.max(0.0).sqrt()).collect()
        })
    }

    /// The `k` leading singular triplets.
    pub fn top(&self, k: usize) -> Result<SingularTriplets> {
        let m = self.short_dim();
        if k > m {
            return Err(DenoiseError::InvalidArgument(format!(
                "requested {k} singular triplets from a matrix with {m} singular values"
            )));
        }
        let (p, n) = self.y.shape();
        if k == 0 {
            return Ok(SingularTriplets {
                values: Vec::new(),
                u: DMatrix::zeros(p, 0),
                v: DMatrix::zeros(n, 0),
            });
        }
        let eig = if m <= DENSE_DIM || 4 * k >= m {
            None
        } else {
            subspace_iteration(&self.gram, k)
        };
        let (theta, w) = match eig {
            Some(e) => e,
            None => {
                let (vals, vecs) = sym_eigen_desc(&self.gram);
                (vals[..k].to_vec(), vecs.columns(0, k).into_owned())
            }
        };
        let trip = self.assemble(&theta, w);
        self.check_residual(&trip)?;
        Ok(trip)
    }

    fn assemble(&self, theta: &[f64], w: DMatrix<f64>) -> SingularTriplets {
        let values: Vec<f64> = theta.iter().map(|x| x.max(0.0).sqrt()).collect();
        // The other side: Y^T u / s (or Y v / s).
        let mut other = if self.rows_side {
            self.y.transpose() * &w
        } else {
            self.y * &w
        };
        for (j, &s) in values.iter().enumerate() {
            let mut col = other.column_mut(j);
            if s > f64::MIN_POSITIVE {
                col /= s;
            } else {
                col.fill(0.0);
            }
        }
        let mut w = w;
        // Deterministic sign: the largest-magnitude entry of each short-side
        // vector is positive.
        for j in 0..values.len() {
            let col = w.column(j);
            let imax = col.iamax();
            if col[imax] < 0.0 {
                w.column_mut(j).neg_mut();
                other.column_mut(j).neg_mut();
            }
        }
        if self.rows_side {
            SingularTriplets { values, u: w, v: other }
        } else {
            SingularTriplets { values, u: other, v: w }
        }
    }

    fn check_residual(&self, trip: &SingularTriplets) -> Result<()> {
        let Some(&s1) = trip.values.first() else {
            return Ok(());
        };
        let tol = TRIPLET_RESIDUAL_TOL * s1.max(f64::MIN_POSITIVE);
        let yv = self.y * &trip.v;
        let ytu = self.y.transpose() * &trip.u;
        for (j, &s) in trip.values.iter().enumerate() {
            let r1 = (yv.column(j) - trip.u.column(j) * s).norm();
            let r2 = (ytu.column(j) - trip.v.column(j) * s).norm();
            if r1.max(r2) > tol && s > tol {
                return Err(DenoiseError::Numerical(format!(
                    "singular triplet {j} residual {:.3e} exceeds {:.3e}",
                    r1.max(r2),
                    tol
                )));
            }
        }
        Ok(())
    }
}

/// Top-`k` eigenpairs of a symmetric positive semidefinite matrix by block
/// subspace iteration with Rayleigh-Ritz projection. Returns `None` when the
/// iteration does not converge, so the caller can fall back to a dense solve.
fn subspace_iteration(m: &DMatrix<f64>, k: usize) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let dim = m.nrows();
    let block = (2 * k + 8).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let start = DMatrix::from_fn(dim, block, |_, _| rng.random::<f64>() - 0.5);
    let mut q = start.qr().q();
    for _ in 0..MAX_SUBSPACE_ITERS {
        let z = m * &q;
        let h = q.transpose() * &z;
        let (theta, w) = sym_eigen_desc(&h);
        let ritz_z = &z * &w;
        let ritz_x = &q * &w;
        let scale = theta[0].abs().max(f64::MIN_POSITIVE);
        let converged = (0..k).all(|i| {
            let r = (ritz_z.column(i) - ritz_x.column(i) * theta[i]).norm();
            r <= RITZ_TOL * scale
        });
        if converged {
            return Some((theta[..k].to_vec(), ritz_x.columns(0, k).into_owned()));
        }
        q = ritz_z.qr().q();
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(p, n, |_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn matches_full_svd_tall_and_wide() {
        for (p, n) in [(60, 40), (40, 60), (300, 200), (200, 300)] {
            let y = random(p, n, 7);
            let spec = GramSpectrum::new(&y);
            let reference = y.clone().svd(true, true);
            let mut sv: Vec<f64> = reference.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in spec.singular_values().iter().zip(&sv) {
                assert!((a - b).abs() < 1e-10 * sv[0]);
            }
            let top = spec.top(3).unwrap();
            for j in 0..3 {
                assert!((top.values[j] - sv[j]).abs() < 1e-10 * sv[0]);
                let r = (&y * top.v.column(j) - top.u.column(j) * top.values[j]).norm();
                assert!(r < 1e-9 * sv[0]);
            }
            let gram = top.u.transpose() * &top.u;
            assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-10);
        }
    }

    #[test]
    fn spiked_matrix_top_triplets() {
        let (p, n) = (400, 800);
        let mut y = random(p, n, 3) * (12.0f64 / n as f64).sqrt();
        let u = DVector::from_fn(p, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }) / (p as f64).sqrt();
        let v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        y += &u * v.transpose() * 4.0;
        let top = GramSpectrum::new(&y).top(1).unwrap();
        assert!(top.u.column(0).dot(&u).abs() > 0.9);
        assert!(top.values[0] > 4.0);
    }

    #[test]
    fn pinv_handles_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let pinv = sym_pinv(&a, 1e-8);
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, 0.25, 0.25, 0.25]);
        assert!((pinv - expect).norm() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1e-12]));
        let pd = sym_pinv(&d, 1e-8);
        assert!((pd[(0, 0)] - 0.5).abs() < 1e-15 && pd[(1, 1)] == 0.0);
    }

    #[test]
    fn sqrt_and_inverse_sqrt() {
        let b = random(5, 5, 11);
        let a = &b * b.transpose() + DMatrix::identity(5, 5);
        let r = sym_apply(&a, 0.0, f64::sqrt);
        assert!((&r * &r - &a).norm() < 1e-12);
        let ri = sym_apply(&a, 0.0, |x| 1.0 / x.sqrt());
        assert!((&ri * &r - DMatrix::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -3.0, 2.0]));
        assert!((op_norm(&d) - 3.0).abs() < 1e-12);
    }
}
