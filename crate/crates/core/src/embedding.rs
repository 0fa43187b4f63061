//! Uniform delay embedding, per-row standardization, and trapezoid-weighted
//! reconstruction back to the time domain.
//!
//! A series `x` of length `N` becomes a `W x P` trajectory matrix with
//! `P = N - W + 1`; column `p` holds the window `x[p..p + W]`. Row `j` is then
//! the series shifted by `j`, so every time step `t` is covered by the entries
//! `(j, t - j)` for rows `j` with `max(0, t - P + 1) <= j <= min(t, W - 1)`.
//! Reconstruction averages over exactly those entries.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, Real};

/// Days per year used to convert between samples and years.
pub const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("window length must be positive")]
    WindowZero,
    #[error("window length {window} exceeds half the series length ({max})")]
    WindowTooLarge { window: usize, max: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("row {row} is constant and cannot be standardized")]
    ConstantRow { row: usize },
    #[error("trajectory matrix is already standardized")]
    AlreadyStandardized,
    #[error("component is not in the standardized domain")]
    NotStandardized,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Largest whole number of years not exceeding half the series, in samples.
/// Falls back to `N / 2` for series shorter than two years.
pub fn default_window(n: usize) -> usize {
    let half = n / 2;
    let years = (half as f64 / DAYS_PER_YEAR).floor();
    if years < 1.0 {
        return half;
    }
    ((years * DAYS_PER_YEAR).floor() as usize).min(half)
}

/// Per-row affine statistics used to invert standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowStats<T> {
    pub means: Vec<T>,
    pub stds: Vec<T>,
}

impl<T: Real> RowStats<T> {
    pub fn identity(window: usize) -> Self {
        Self {
            means: vec![T::zero(); window],
            stds: vec![T::one(); window],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMatrix<T: Real> {
    data: DMatrix<T>,
    stats: RowStats<T>,
    standardized: bool,
}

impl<T: Real> TrajectoryMatrix<T> {
    pub fn window(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_windows(&self) -> usize {
        self.data.ncols()
    }

    /// Length of the series the matrix was built from.
    pub fn series_len(&self) -> usize {
        self.window() + self.n_windows() - 1
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn stats(&self) -> &RowStats<T> {
        &self.stats
    }

    pub fn row_means(&self) -> &[T] {
        &self.stats.means
    }

    pub fn row_stds(&self) -> &[T] {
        &self.stats.stds
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Wraps an arbitrary `W x P` matrix, treating it as already standardized
    /// with identity statistics. Used for synthetic inputs to the decompositions.
    pub fn from_standardized(data: DMatrix<T>) -> Self {
        let w = data.nrows();
        Self {
            data,
            stats: RowStats::identity(w),
            standardized: true,
        }
    }

    /// Anti-diagonal average of the matrix: the series the matrix represents.
    pub fn hankel_average(&self) -> Vec<T> {
        let (w, p) = self.data.shape();
        let mut acc = vec![T::zero(); w + p - 1];
        for col in 0..p {
            for row in 0..w {
                acc[row + col] += self.data[(row, col)];
            }
        }
        for (t, v) in acc.iter_mut().enumerate() {
            *v /= T::from_count(coverage_count(t, w, p));
        }
        acc
    }
}

/// Rows covering time `t` as an inclusive range `(first, last)`.
pub fn covering_rows(t: usize, window: usize, n_windows: usize) -> (usize, usize) {
    let first = (t + 1).saturating_sub(n_windows);
    let last = t.min(window - 1);
    (first, last)
}

/// Number of windows covering time `t`: the trapezoid weight.
pub fn coverage_count(t: usize, window: usize, n_windows: usize) -> usize {
    let (first, last) = covering_rows(t, window, n_windows);
    last + 1 - first
}

pub fn delay_embed<T: Real>(values: &[T], window: usize) -> Result<TrajectoryMatrix<T>, EmbeddingError> {
    if window == 0 {
        return Err(EmbeddingError::WindowZero);
    }
    let n = values.len();
    if window > n / 2 {
        return Err(EmbeddingError::WindowTooLarge {
            window,
            max: n / 2,
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingError::NonFinite { index });
    }
    let p = n - window + 1;
    let data = DMatrix::from_fn(window, p, |row, col| values[row + col]);
    Ok(TrajectoryMatrix {
        data,
        stats: RowStats::identity(window),
        standardized: false,
    })
}

/// Centers every row and scales it to unit sample standard deviation.
pub fn standardize_rows<T: Real>(
    mut x: TrajectoryMatrix<T>,
) -> Result<TrajectoryMatrix<T>, EmbeddingError> {
    if x.standardized {
        return Err(EmbeddingError::AlreadyStandardized);
    }
    let (w, p) = x.data.shape();
    let mut means = Vec::with_capacity(w);
    let mut stds = Vec::with_capacity(w);
    let mut row_buf = vec![T::zero(); p];
    for row in 0..w {
        for (col, slot) in row_buf.iter_mut().enumerate() {
            *slot = x.data[(row, col)];
        }
        let m = scalar::mean(&row_buf);
        let s = scalar::std_dev(&row_buf, 1);
        let scale = m.abs().max(T::one());
        if !(s > T::eps() * T::lit(16.0) * scale) {
            return Err(EmbeddingError::ConstantRow { row });
        }
        for col in 0..p {
            x.data[(row, col)] = (x.data[(row, col)] - m) / s;
        }
        means.push(m);
        stds.push(s);
    }
    x.stats = RowStats { means, stds };
    x.standardized = true;
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Standardized,
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedComponent<T> {
    pub values: Vec<T>,
    pub mode_indices: Vec<usize>,
    pub domain: Domain,
}

/// Trapezoid-weighted reconstruction of the modes `indices` (columns of
/// `modes`, `W x k`) with their projections (columns of `pcs`, `P x k`).
pub fn reconstruct_component<T: Real>(
    modes: &DMatrix<T>,
    pcs: &DMatrix<T>,
    indices: &[usize],
    n: usize,
) -> Result<ReconstructedComponent<T>, EmbeddingError> {
    let (w, k) = modes.shape();
    let p = pcs.nrows();
    if pcs.ncols() != k {
        return Err(EmbeddingError::ShapeMismatch(format!(
            "{k} modes but {} projections",
            pcs.ncols()
        )));
    }
    if w == 0 || p == 0 || w + p - 1 != n {
        return Err(EmbeddingError::ShapeMismatch(format!(
            "W={w}, P={p} incompatible with N={n}"
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
        return Err(EmbeddingError::ShapeMismatch(format!(
            "mode index {bad} out of range ({k} modes)"
        )));
    }
    let mut acc = vec![T::zero(); n];
    for &i in indices {
        let u = modes.column(i);
        let pc = pcs.column(i);
        let pc = pc.as_slice();
        for (j, &uj) in u.iter().enumerate() {
            for (slot, &v) in acc[j..j + p].iter_mut().zip(pc) {
                *slot += uj * v;
            }
        }
    }
    for (t, v) in acc.iter_mut().enumerate() {
        *v /= T::from_count(coverage_count(t, w, p));
    }
    Ok(ReconstructedComponent {
        values: acc,
        mode_indices: indices.to_vec(),
        domain: Domain::Standardized,
    })
}

/// Maps a standardized-domain component back to original units.
///
/// At each `t` the forward maps `y = (x - m_j) / s_j` of the covering rows are
/// averaged with the trapezoid weights into `y = a x - b`, which is then
/// inverted. A full reconstruction therefore round-trips exactly.
pub fn destandardize<T: Real>(
    rc: &ReconstructedComponent<T>,
    stats: &RowStats<T>,
    n: usize,
) -> Result<ReconstructedComponent<T>, EmbeddingError> {
    if rc.domain != Domain::Standardized {
        return Err(EmbeddingError::NotStandardized);
    }
    let w = stats.means.len();
    if stats.stds.len() != w || rc.values.len() != n || w == 0 || w > n {
        return Err(EmbeddingError::ShapeMismatch(format!(
            "stats for W={w} cannot map a component of length {} (N={n})",
            rc.values.len()
        )));
    }
    let p = n - w + 1;
    // prefix sums of 1/s and m/s over rows
    let mut inv_s = vec![T::zero(); w + 1];
    let mut m_over_s = vec![T::zero(); w + 1];
    for j in 0..w {
        inv_s[j + 1] = inv_s[j] + T::one() / stats.stds[j];
        m_over_s[j + 1] = m_over_s[j] + stats.means[j] / stats.stds[j];
    }
    let values = rc
        .values
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            let (first, last) = covering_rows(t, w, p);
            let count = T::from_count(last + 1 - first);
            let a = (inv_s[last + 1] - inv_s[first]) / count;
            let b = (m_over_s[last + 1] - m_over_s[first]) / count;
            (y + b) / a
        })
        .collect();
    Ok(ReconstructedComponent {
        values,
        mode_indices: rc.mode_indices.clone(),
        domain: Domain::Original,
    })
}

/// Dumps a matrix as a 16-byte header (rows, cols as little-endian `u64`)
/// followed by row-major little-endian `f64` entries.
pub fn write_matrix<T: Real, W: Write>(m: &DMatrix<T>, mut sink: W) -> Result<(), EmbeddingError> {
    sink.write_all(&(m.nrows() as u64).to_le_bytes())?;
    sink.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for row in 0..m.nrows() {
        for col in 0..m.ncols() {
            sink.write_all(&m[(row, col)].as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<T: Real, R: Read>(mut source: R) -> Result<DMatrix<T>, EmbeddingError> {
    let mut word = [0u8; 8];
    source.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    source.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut m = DMatrix::zeros(rows, cols);
    for row in 0..rows {
        for col in 0..cols {
            source.read_exact(&mut word)?;
            m[(row, col)] = T::lit(f64::from_le_bytes(word));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_count() {
        let x: Vec<f64> = (1..=10).map(f64::from).collect();
        let tm = delay_embed(&x, 3).unwrap();
        assert_eq!(tm.n_windows(), 8);
        assert_eq!(tm.data().column(0).as_slice(), &[1.0, 2.0, 3.0]);
        assert!(!tm.is_standardized());
    }

    #[test]
    fn fourteen_year_dimensions() {
        let x = vec![0.0_f32; 5114];
        let tm = delay_embed(&x, 2556).unwrap();
        assert_eq!((tm.window(), tm.n_windows()), (2556, 2559));
        assert_eq!(default_window(5114), 2556);
    }

    #[test]
    fn enumerated_columns() {
        let tm = delay_embed(&[1.0_f64, 2.0, 3.0, 4.0], 2).unwrap();
        let cols: Vec<Vec<f64>> = tm.data().column_iter().map(|c| c.iter().copied().collect()).collect();
        assert_eq!(cols, vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(delay_embed(&[1.0_f64; 10], 0), Err(EmbeddingError::WindowZero)));
        assert!(matches!(
            delay_embed(&[1.0_f64; 10], 6),
            Err(EmbeddingError::WindowTooLarge { window: 6, max: 5 })
        ));
        assert!(matches!(
            delay_embed(&[1.0, f64::INFINITY, 0.0, 0.0], 1),
            Err(EmbeddingError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn standardizes_simple_row() {
        let tm = TrajectoryMatrix {
            data: DMatrix::from_row_slice(1, 3, &[1.0_f64, 2.0, 3.0]),
            stats: RowStats::identity(1),
            standardized: false,
        };
        let s = standardize_rows(tm).unwrap();
        assert_eq!(s.row_means(), &[2.0]);
        assert_eq!(s.row_stds(), &[1.0]);
        assert_eq!(s.data().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert!(matches!(standardize_rows(s), Err(EmbeddingError::AlreadyStandardized)));
    }

    #[test]
    fn standardized_row_is_fixed_point() {
        let row = [-1.0_f64, 0.0, 1.0];
        let tm = TrajectoryMatrix {
            data: DMatrix::from_row_slice(1, 3, &row),
            stats: RowStats::identity(1),
            standardized: false,
        };
        let s = standardize_rows(tm).unwrap();
        assert_eq!(s.row_means(), &[0.0]);
        assert_eq!(s.row_stds(), &[1.0]);
        assert_eq!(s.data().row(0).iter().copied().collect::<Vec<_>>(), row.to_vec());
    }

    #[test]
    fn constant_row_rejected() {
        let x = vec![5.0_f64; 20];
        assert!(matches!(
            standardize_rows(delay_embed(&x, 4).unwrap()),
            Err(EmbeddingError::ConstantRow { row: 0 })
        ));
    }

    #[test]
    fn trapezoid_weights() {
        let (n, w) = (20, 6);
        let p = n - w + 1;
        for t in 0..n {
            let one_based = t + 1;
            let expected = if one_based < w {
                one_based
            } else if one_based <= p {
                w
            } else {
                n - one_based + 1
            };
            assert_eq!(coverage_count(t, w, p), expected, "t={one_based}");
        }
    }

    #[test]
    fn empty_selection_is_zero() {
        let modes = DMatrix::<f64>::from_element(4, 2, 1.0);
        let pcs = DMatrix::<f64>::from_element(7, 2, 1.0);
        let rc = reconstruct_component(&modes, &pcs, &[], 10).unwrap();
        assert_eq!(rc.values, vec![0.0; 10]);
        assert_eq!(rc.domain, Domain::Standardized);
        assert!(matches!(
            reconstruct_component(&modes, &pcs, &[0], 11),
            Err(EmbeddingError::ShapeMismatch(_))
        ));
        assert!(matches!(
            reconstruct_component(&modes, &pcs, &[2], 10),
            Err(EmbeddingError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn destandardize_affine_cases() {
        let (n, w) = (12, 4);
        let zero = ReconstructedComponent {
            values: vec![0.0_f64; n],
            mode_indices: vec![],
            domain: Domain::Standardized,
        };
        let stats = RowStats {
            means: vec![3.0; w],
            stds: vec![2.0; w],
        };
        let out = destandardize(&zero, &stats, n).unwrap();
        assert!(out.values.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        assert_eq!(out.domain, Domain::Original);

        let ramp = ReconstructedComponent {
            values: (0..n).map(|i| i as f64).collect(),
            ..zero.clone()
        };
        let same = destandardize(&ramp, &RowStats::identity(w), n).unwrap();
        assert_eq!(same.values, ramp.values);
        assert!(matches!(
            destandardize(&same, &stats, n),
            Err(EmbeddingError::NotStandardized)
        ));
    }

    #[test]
    fn raw_matrix_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0_f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[0..8], &2u64.to_le_bytes());
        assert_eq!(&buf[8..16], &3u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[24..32], &2.0f64.to_le_bytes());
        let back: DMatrix<f64> = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
