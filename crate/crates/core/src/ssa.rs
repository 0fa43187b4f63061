//! Singular spectrum analysis of a standardized trajectory matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::TrajectoryMatrix;
use crate::linalg::{self, EigenConfig, GramOperator, LinalgError};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SsaError {
    #[error("trajectory matrix must be standardized")]
    NotStandardized,
    #[error("k = {k} outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("singular value decomposition failed: {0}")]
    SvdFailure(#[from] LinalgError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Ssa,
    Nlsa,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Ssa => "SSA",
            Method::Nlsa => "NLSA",
        })
    }
}

/// Ordered modes of one decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet<T: Real> {
    pub method: Method,
    /// Orthonormal length-`W` patterns, one per column.
    pub modes: DMatrix<T>,
    /// Projections `Xᵀ u_i`, one length-`P` column per mode.
    pub pcs: DMatrix<T>,
    /// Singular values (SSA) or transition-matrix eigenvalues (NLSA), descending.
    pub spectrum: Vec<T>,
    /// Diagonal of `Λ = EOFᵀ X Xᵀ EOF / W`.
    pub variance: Vec<T>,
    /// NLSA only: the unit-norm temporal eigenfunctions the modes were lifted from.
    pub eigenfunctions: Option<DMatrix<T>>,
}

impl<T: Real> ModeSet<T> {
    pub fn k(&self) -> usize {
        self.modes.ncols()
    }

    pub fn window(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode(&self, i: usize) -> Vec<T> {
        self.modes.column(i).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsaConfig {
    pub eigen: EigenConfig,
    /// Relative singular-value gap below which two modes are treated as a
    /// rotation-ambiguous pair.
    pub degeneracy_tol: f64,
}

impl Default for SsaConfig {
    fn default() -> Self {
        Self {
            eigen: EigenConfig::default(),
            degeneracy_tol: 1e-6,
        }
    }
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn canonical_signs<T: Real>(modes: &mut DMatrix<T>) {
    for mut col in modes.column_iter_mut() {
        let mut best = T::zero();
        let mut sign = T::one();
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = if v < T::zero() { -T::one() } else { T::one() };
            }
        }
        if sign < T::zero() {
            col.neg_mut();
        }
    }
}

/// Rotates every near-degenerate pair so the first mode of the pair attains
/// the largest possible magnitude at the window midpoint (the second is zero there).
pub(crate) fn fix_pair_phases<T: Real>(modes: &mut DMatrix<T>, spectrum: &[T], tol: T) {
    let mid = modes.nrows() / 2;
    let mut i = 0;
    while i + 1 < spectrum.len() {
        let (s0, s1) = (spectrum[i], spectrum[i + 1]);
        let gap = (s0 - s1).abs() / s0.abs().max(T::eps());
        if gap < tol && s0 > T::zero() {
            let a = modes[(mid, i)];
            let b = modes[(mid, i + 1)];
            let r = (a * a + b * b).sqrt();
            if r > T::zero() {
                let (c, s) = (a / r, b / r);
                let u0 = modes.column(i).into_owned();
                let u1 = modes.column(i + 1).into_owned();
                modes.set_column(i, &(&u0 * c + &u1 * s));
                modes.set_column(i + 1, &(&u1 * c - &u0 * s));
            }
            i += 2;
        } else {
            i += 1;
        }
    }
}

pub fn ssa_decompose<T: Real>(
    x: &TrajectoryMatrix<T>,
    k: usize,
    cfg: &SsaConfig,
) -> Result<ModeSet<T>, SsaError> {
    if !x.is_standardized() {
        return Err(SsaError::NotStandardized);
    }
    let data = x.data();
    let max = data.nrows().min(data.ncols());
    if k == 0 || k > max {
        return Err(SsaError::KOutOfRange { k, max });
    }
    let eig = linalg::top_eigenpairs(&GramOperator { x: data }, k, &cfg.eigen)?;
    let projections = data.tr_mul(&eig.vectors);
    let sigma: Vec<T> = projections.column_iter().map(|c| c.norm()).collect();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).expect("finite singular values"));
    let spectrum: Vec<T> = order.iter().map(|&i| sigma[i]).collect();
    let mut modes = DMatrix::from_fn(data.nrows(), k, |r, c| eig.vectors[(r, order[c])]);

    fix_pair_phases(&mut modes, &spectrum, T::lit(cfg.degeneracy_tol));
    canonical_signs(&mut modes);
    let pcs = data.tr_mul(&modes);
    let mut ms = ModeSet {
        method: Method::Ssa,
        modes,
        pcs,
        spectrum,
        variance: Vec::new(),
        eigenfunctions: None,
    };
    ms.variance = variance_spectrum(&ms, x)?;
    Ok(ms)
}

/// Per-mode variance `‖Xᵀ u_i‖² / W`: the diagonal of `EOFᵀ X Xᵀ EOF / W`.
pub fn variance_spectrum<T: Real>(ms: &ModeSet<T>, x: &TrajectoryMatrix<T>) -> Result<Vec<T>, SsaError> {
    let data = x.data();
    if ms.modes.nrows() != data.nrows() {
        return Err(SsaError::ShapeMismatch(format!(
            "modes of length {} against W = {}",
            ms.modes.nrows(),
            data.nrows()
        )));
    }
    let w = T::from_count(data.nrows());
    let proj = data.tr_mul(&ms.modes);
    Ok(proj.column_iter().map(|c| c.norm_squared() / w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{delay_embed, standardize_rows};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_standardized(w: usize, p: usize, seed: u64) -> TrajectoryMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..w + p - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
        standardize_rows(delay_embed(&x, w).unwrap()).unwrap()
    }

    #[test]
    fn energy_identity_full_rank() {
        let x = random_standardized(20, 41, 1);
        let ms = ssa_decompose(&x, 20, &SsaConfig::default()).unwrap();
        let energy: f64 = ms.spectrum.iter().map(|s| s * s).sum();
        let frob = x.data().norm_squared();
        assert!((energy - frob).abs() <= 1e-8 * frob);
        let var_sum: f64 = ms.variance.iter().sum();
        assert!((var_sum - frob / 20.0).abs() <= 1e-8 * frob);
    }

    #[test]
    fn orthonormal_sorted_and_definitional_pcs() {
        let x = random_standardized(30, 71, 2);
        let ms = ssa_decompose(&x, 10, &SsaConfig::default()).unwrap();
        let gram = ms.modes.transpose() * &ms.modes;
        assert!((gram - DMatrix::identity(10, 10)).amax() <= 1e-8);
        assert!(ms.spectrum.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(ms.pcs, x.data().tr_mul(&ms.modes));
        for (v, s) in ms.variance.iter().zip(&ms.spectrum) {
            assert!((v - s * s / 30.0).abs() <= 1e-8 * v.max(1e-300));
        }
    }

    #[test]
    fn rank_one_spectrum() {
        let a: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        let b: Vec<f64> = (0..9).map(|j| (j as f64 * 0.7).cos()).collect();
        let data = DMatrix::from_fn(6, 9, |r, c| a[r] * b[c]);
        let x = TrajectoryMatrix::from_standardized(data);
        let ms = ssa_decompose(&x, 3, &SsaConfig::default()).unwrap();
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((ms.spectrum[0] - na * nb).abs() < 1e-10 * na * nb);
        assert!(ms.spectrum[1].abs() < 1e-10 * na * nb);
        assert!(ms.spectrum[2].abs() < 1e-10 * na * nb);
    }

    #[test]
    fn sign_convention_and_repeatability() {
        let x = random_standardized(25, 60, 3);
        let a = ssa_decompose(&x, 6, &SsaConfig::default()).unwrap();
        let b = ssa_decompose(&x, 6, &SsaConfig::default()).unwrap();
        assert_eq!(a.modes, b.modes);
        for col in a.modes.column_iter() {
            let max = col.iter().copied().fold(0.0_f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn zero_matrix_has_zero_variance() {
        let x = TrajectoryMatrix::from_standardized(DMatrix::<f64>::zeros(5, 8));
        let ms = ModeSet {
            method: Method::Ssa,
            modes: DMatrix::identity(5, 3),
            pcs: DMatrix::zeros(8, 3),
            spectrum: vec![0.0; 3],
            variance: vec![],
            eigenfunctions: None,
        };
        assert_eq!(variance_spectrum(&ms, &x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn errors() {
        let x = random_standardized(10, 11, 4);
        assert!(matches!(
            ssa_decompose(&x, 11, &SsaConfig::default()),
            Err(SsaError::KOutOfRange { k: 11, max: 10 })
        ));
        let raw = delay_embed(&[1.0_f64, 2.0, 4.0, 3.0], 2).unwrap();
        assert!(matches!(
            ssa_decompose(&raw, 1, &SsaConfig::default()),
            Err(SsaError::NotStandardized)
        ));
    }

    #[test]
    fn sine_pair_is_degenerate_and_quarter_shifted() {
        // 365-day tone with W and P spanning whole periods: exact degeneracy
        let n = 2554;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 365.0 + 0.3).sin())
            .collect();
        let tm = standardize_rows(delay_embed(&x, 1095).unwrap()).unwrap();
        let ms = ssa_decompose(&tm, 2, &SsaConfig::default()).unwrap();
        let rel = (ms.spectrum[0] - ms.spectrum[1]).abs() / ms.spectrum[0];
        assert!(rel <= 1e-6, "relative gap {rel}");
        // phase convention: the second mode vanishes at the midpoint, the
        // first peaks there, i.e. a quarter period apart
        let mid = 1095 / 2;
        assert!(ms.modes[(mid, 1)].abs() < 1e-8);
        let peak = ms.modes.column(0).amax();
        assert!((ms.modes[(mid, 0)].abs() - peak).abs() < 1e-3 * peak);
    }
}
