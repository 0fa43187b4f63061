//! Leading eigenpairs of symmetric operators.
//!
//! Small problems are materialized and handed to a dense symmetric
//! eigensolver. Large problems use a block Krylov method with full
//! reorthogonalization and thick restarts, so only products with the operator
//! are needed. Blocks are at least two wide, which keeps exactly degenerate
//! pairs (one oscillation resolved by two modes) from being missed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("requested {k} eigenpairs of a {n}-dimensional operator")]
    KOutOfRange { k: usize, n: usize },
    #[error("eigensolver failed: {0}")]
    EigFailure(String),
    #[error("eigensolver did not converge after {iterations} block steps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

/// A symmetric linear operator known through block products.
pub trait SymmetricOperator<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// Returns `A * x` for the `dim x b` block `x`.
    fn apply(&self, x: &DMatrix<T>) -> DMatrix<T>;

    fn to_dense(&self) -> DMatrix<T> {
        self.apply(&DMatrix::identity(self.dim(), self.dim()))
    }
}

impl<T: Real> SymmetricOperator<T> for DMatrix<T> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DMatrix<T>) -> DMatrix<T> {
        self * x
    }

    fn to_dense(&self) -> DMatrix<T> {
        self.clone()
    }
}

/// `X Xᵀ` for a `W x P` matrix `X`, applied without forming it.
pub struct GramOperator<'a, T: Real> {
    pub x: &'a DMatrix<T>,
}

impl<T: Real> SymmetricOperator<T> for GramOperator<'_, T> {
    fn dim(&self) -> usize {
        self.x.nrows()
    }

    fn apply(&self, v: &DMatrix<T>) -> DMatrix<T> {
        let xt_v = self.x.tr_mul(v);
        self.x * xt_v
    }

    fn to_dense(&self) -> DMatrix<T> {
        self.x * self.x.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Dense below `dense_threshold`, Krylov above.
    Auto,
    Dense,
    Krylov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    pub solver: SolverKind,
    /// Residual tolerance relative to the largest Ritz value magnitude.
    pub tol: f64,
    /// Seed of the deterministic start block.
    pub seed: u64,
    pub block: usize,
    /// Krylov basis size that triggers a thick restart.
    pub max_basis: usize,
    pub max_steps: usize,
    pub dense_threshold: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Auto,
            tol: 1e-10,
            seed: 0x5eed,
            block: 8,
            max_basis: 160,
            max_steps: 2000,
            dense_threshold: 400,
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue; eigenvectors are columns.
#[derive(Debug, Clone)]
pub struct EigenPairs<T: Real> {
    pub values: Vec<T>,
    pub vectors: DMatrix<T>,
}

pub fn top_eigenpairs<T: Real, A: SymmetricOperator<T> + ?Sized>(
    op: &A,
    k: usize,
    cfg: &EigenConfig,
) -> Result<EigenPairs<T>, LinalgError> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(LinalgError::KOutOfRange { k, n });
    }
    let use_dense = match cfg.solver {
        SolverKind::Dense => true,
        SolverKind::Krylov => false,
        SolverKind::Auto => n <= cfg.dense_threshold || 3 * (k + cfg.block) >= n,
    };
    if use_dense {
        dense_top(op.to_dense(), k)
    } else {
        block_krylov(op, k, cfg)
    }
}

/// All eigenpairs of a symmetric matrix, descending.
pub fn symmetric_eigen<T: Real>(m: DMatrix<T>) -> Result<EigenPairs<T>, LinalgError> {
    let n = m.nrows();
    dense_top(m, n)
}

fn dense_top<T: Real>(m: DMatrix<T>, k: usize) -> Result<EigenPairs<T>, LinalgError> {
    let n = m.nrows();
    let sym = (&m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::try_new(sym, T::eps(), 0)
        .ok_or_else(|| LinalgError::EigFailure("dense symmetric eigensolver did not converge".into()))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::EigFailure("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigenPairs { values, vectors })
}

fn random_block<T: Real>(rng: &mut ChaCha8Rng, n: usize, b: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, b, |_, _| T::lit(rng.random_range(-1.0..1.0)))
}

/// Orthonormalizes `block` against the first `m` columns of `basis` and
/// internally. Columns that vanish are replaced by fresh random directions
/// while the space allows it.
fn orthonormalize_block<T: Real>(
    block: DMatrix<T>,
    basis: &DMatrix<T>,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<T> {
    let n = block.nrows();
    let room = n - m;
    let target = block.ncols().min(room);
    let prior = basis.columns(0, m);
    let mut accepted: Vec<DVector<T>> = Vec::with_capacity(target);
    let mut candidates: Vec<DVector<T>> = block.column_iter().map(|c| c.into_owned()).collect();
    let mut refills = 0;
    while accepted.len() < target {
        let mut v = match candidates.pop() {
            Some(v) => v,
            None => {
                refills += 1;
                if refills > 4 * target + 8 {
                    break;
                }
                random_block::<T>(rng, n, 1).column(0).into_owned()
            }
        };
        let original = v.norm();
        if original == T::zero() {
            continue;
        }
        for _ in 0..2 {
            if m > 0 {
                let coeffs = prior.tr_mul(&v);
                v -= &prior * coeffs;
            }
            for q in &accepted {
                let c = q.dot(&v);
                v.axpy(-c, q, T::one());
            }
        }
        let norm = v.norm();
        if norm > original * T::lit(1e-8).max(T::eps() * T::lit(100.0)) {
            accepted.push(v / norm);
        }
    }
    // candidates were popped from the back; restore the original order
    accepted.reverse();
    let cols = accepted.len();
    DMatrix::from_fn(n, cols, |r, c| accepted[c][r])
}

fn block_krylov<T: Real, A: SymmetricOperator<T> + ?Sized>(
    op: &A,
    k: usize,
    cfg: &EigenConfig,
) -> Result<EigenPairs<T>, LinalgError> {
    let n = op.dim();
    let b = cfg.block.max(2).min(n);
    let keep_after_restart = (k + b).min(n);
    let max_basis = cfg.max_basis.max(keep_after_restart + 2 * b).min(n);
    let tol = T::lit(cfg.tol).max(T::eps() * T::lit(64.0));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut basis = DMatrix::<T>::zeros(n, max_basis);
    let mut images = DMatrix::<T>::zeros(n, max_basis);
    let mut m = 0;
    let mut next = random_block::<T>(&mut rng, n, b);
    let mut worst = f64::INFINITY;

    for _step in 0..cfg.max_steps {
        let room = max_basis - m;
        let mut q = orthonormalize_block(next, &basis, m, &mut rng);
        if q.ncols() > room {
            q = q.columns(0, room).into_owned();
        }
        if q.ncols() == 0 && m < k {
            return Err(LinalgError::EigFailure("Krylov basis collapsed".into()));
        }
        let aq = op.apply(&q);
        let added = q.ncols();
        basis.columns_mut(m, added).copy_from(&q);
        images.columns_mut(m, added).copy_from(&aq);
        m += added;

        if m < k {
            next = aq;
            continue;
        }

        let v = basis.columns(0, m);
        let av = images.columns(0, m);
        let h = v.tr_mul(&av);
        let ritz = dense_top(h, m)?;
        let scale = ritz
            .values
            .iter()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()))
            .max(T::eps());
        let s_k = ritz.vectors.columns(0, k);
        let y = &v * s_k;
        let ay = &av * s_k;
        let mut unconverged = Vec::new();
        worst = 0.0;
        for i in 0..k {
            let r = ay.column(i) - y.column(i) * ritz.values[i];
            let rel = r.norm() / scale;
            worst = worst.max(rel.as_f64());
            if rel > tol {
                unconverged.push(i);
            }
        }
        let exhausted = m == n;
        if unconverged.is_empty() || exhausted {
            return Ok(EigenPairs {
                values: ritz.values[..k].to_vec(),
                vectors: y,
            });
        }

        if m + b > max_basis {
            // thick restart on the leading Ritz vectors; continue from residuals
            let keep = keep_after_restart.min(m);
            let s = ritz.vectors.columns(0, keep);
            let new_v = &v * s;
            let new_av = &av * s;
            basis.columns_mut(0, keep).copy_from(&new_v);
            images.columns_mut(0, keep).copy_from(&new_av);
            m = keep;
            let mut res = DMatrix::<T>::zeros(n, b);
            for (slot, &i) in unconverged.iter().take(b).enumerate() {
                let r = ay.column(i) - y.column(i) * ritz.values[i];
                res.set_column(slot, &r);
            }
            for slot in unconverged.len().min(b)..b {
                res.set_column(slot, &random_block::<T>(&mut rng, n, 1).column(0));
            }
            next = res;
        } else {
            next = aq;
        }
    }
    Err(LinalgError::NotConverged {
        iterations: cfg.max_steps,
        residual: worst,
    })
}

/// Order-preserving Gram–Schmidt (two passes) on the columns of `a`.
/// Columns that are numerically dependent on their predecessors yield `None`.
pub fn orthonormalize_columns<T: Real>(a: &DMatrix<T>) -> Option<DMatrix<T>> {
    let (n, k) = a.shape();
    let mut q = DMatrix::<T>::zeros(n, k);
    for j in 0..k {
        let mut v = a.column(j).into_owned();
        let original = v.norm();
        if original == T::zero() {
            return None;
        }
        for _ in 0..2 {
            for i in 0..j {
                let c = q.column(i).dot(&v);
                v.axpy(-c, &q.column(i), T::one());
            }
        }
        let norm = v.norm();
        if norm <= original * T::eps() * T::lit(1e3) {
            return None;
        }
        q.set_column(j, &(v / norm));
    }
    Some(q)
}

/// Order-preserving Gram–Schmidt that skips dependent columns instead of
/// failing. A column is dropped when less than `rel_tol` of its norm survives
/// projection onto its kept predecessors. Returns the basis and the indices
/// of the kept columns.
pub fn orthonormal_subset<T: Real>(a: &DMatrix<T>, rel_tol: T) -> (DMatrix<T>, Vec<usize>) {
    let n = a.nrows();
    let mut cols: Vec<DVector<T>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..a.ncols() {
        let mut v = a.column(j).into_owned();
        let original = v.norm();
        if original == T::zero() {
            continue;
        }
        for _ in 0..2 {
            for q in &cols {
                let c = q.dot(&v);
                v.axpy(-c, q, T::one());
            }
        }
        let norm = v.norm();
        if norm > original * rel_tol {
            cols.push(v / norm);
            kept.push(j);
        }
    }
    let mut q = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        q.set_column(j, c);
    }
    (q, kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    /// Symmetric matrix with a prescribed spectrum in a random orthonormal basis.
    fn with_spectrum(values: &[f64], seed: u64) -> DMatrix<f64> {
        let n = values.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = orthonormalize_columns(&g).unwrap();
        &q * DMatrix::from_diagonal(&DVector::from_column_slice(values)) * q.transpose()
    }

    #[test]
    fn dense_sorted_descending() {
        let a = random_symmetric(30, 1);
        let e = top_eigenpairs(&a, 30, &EigenConfig::default()).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let recon = &e.vectors * DMatrix::from_diagonal(&DVector::from_vec(e.values.clone())) * e.vectors.transpose();
        assert!((recon - a).amax() < 1e-10);
    }

    #[test]
    fn krylov_matches_dense_with_degenerate_pairs() {
        let mut spectrum: Vec<f64> = vec![10.0, 10.0, 7.0, 7.0, 5.0, 3.0, 3.0, 2.5];
        spectrum.extend((0..292).map(|i| 2.0 * (-(i as f64) / 40.0).exp()));
        let a = with_spectrum(&spectrum, 7);
        let cfg = EigenConfig {
            solver: SolverKind::Krylov,
            ..EigenConfig::default()
        };
        let kry = top_eigenpairs(&a, 8, &cfg).unwrap();
        for (got, want) in kry.values.iter().zip(&spectrum) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        for i in 0..8 {
            let v = kry.vectors.column(i);
            let r = &a * v - v * kry.values[i];
            assert!(r.norm() < 1e-8);
        }
        let gram = kry.vectors.transpose() * &kry.vectors;
        assert!((gram - DMatrix::identity(8, 8)).amax() < 1e-10);
    }

    #[test]
    fn krylov_restarts_on_slowly_decaying_spectrum() {
        let spectrum: Vec<f64> = (0..600).map(|i| 1.0 / (1.0 + i as f64 * 0.01)).collect();
        let a = with_spectrum(&spectrum, 3);
        let cfg = EigenConfig {
            solver: SolverKind::Krylov,
            max_basis: 48,
            ..EigenConfig::default()
        };
        let kry = top_eigenpairs(&a, 6, &cfg).unwrap();
        for (got, want) in kry.values.iter().zip(&spectrum) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn gram_operator_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = DMatrix::<f64>::from_fn(40, 90, |_, _| rng.random_range(-1.0..1.0));
        let op = GramOperator { x: &x };
        assert!((op.to_dense() - &x * x.transpose()).amax() < 1e-12);
        let cfg = EigenConfig {
            solver: SolverKind::Krylov,
            ..EigenConfig::default()
        };
        let kry = top_eigenpairs(&op, 5, &cfg).unwrap();
        let dense = top_eigenpairs(&op, 5, &EigenConfig { solver: SolverKind::Dense, ..cfg.clone() }).unwrap();
        for (a, b) in kry.values.iter().zip(&dense.values) {
            assert!((a - b).abs() < 1e-8 * dense.values[0]);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = random_symmetric(500, 5);
        let cfg = EigenConfig {
            solver: SolverKind::Krylov,
            ..EigenConfig::default()
        };
        let e1 = top_eigenpairs(&a, 4, &cfg).unwrap();
        let e2 = top_eigenpairs(&a, 4, &cfg).unwrap();
        assert_eq!(e1.values, e2.values);
        assert_eq!(e1.vectors, e2.vectors);
    }

    #[test]
    fn k_out_of_range() {
        let a = DMatrix::<f64>::identity(4, 4);
        assert!(matches!(
            top_eigenpairs(&a, 5, &EigenConfig::default()),
            Err(LinalgError::KOutOfRange { k: 5, n: 4 })
        ));
        assert!(top_eigenpairs(&a, 0, &EigenConfig::default()).is_err());
    }

    #[test]
    fn f32_dense_path() {
        let a = DMatrix::<f32>::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let e = top_eigenpairs(&a, 2, &EigenConfig::default()).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0]);
    }

    #[test]
    fn gram_schmidt_detects_dependence() {
        let a = DMatrix::from_column_slice(3, 2, &[1.0_f64, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(orthonormalize_columns(&a).is_none());
        let (q, kept) = orthonormal_subset(&a, 1e-8);
        assert_eq!(q.ncols(), kept.len());
        assert!(kept.len() < a.ncols());
    }
}
