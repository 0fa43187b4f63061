//! Nonlinear Laplacian spectral analysis.
//!
//! A Gaussian kernel on the columns of the trajectory matrix is density
//! normalized (α = 1), turned into a Markov matrix, and its leading nontrivial
//! eigenfunctions are lifted back into window space.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::TrajectoryMatrix;
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::linalg::{self, EigenConfig, LinalgError, SymmetricOperator};
use crate::scalar::Real;
use crate::ssa::{canonical_signs, fix_pair_phases, variance_spectrum, Method, ModeSet, SsaError};

#[derive(Debug, Error)]
pub enum NlsaError {
    #[error("need at least 2 embedding points, got {p}")]
    TooFewPoints { p: usize },
    #[error("trajectory matrix must be standardized")]
    NotStandardized,
    #[error("k = {k} outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("kernel-sum curve is flat; the sampled points are indistinguishable")]
    DegenerateCurve,
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("kernel row {row} has zero density")]
    ZeroDensity { row: usize },
    #[error("eigendecomposition failed: {0}")]
    EigFailure(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl From<SsaError> for NlsaError {
    fn from(e: SsaError) -> Self {
        match e {
            SsaError::ShapeMismatch(s) => NlsaError::ShapeMismatch(s),
            other => NlsaError::EigFailure(other.to_string()),
        }
    }
}

/// Compressed sparse rows with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> Csr<T> {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|pos| self.values[r.start + pos])
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    fn map(&self, f: impl Fn(usize, usize, T) -> T) -> Csr<T> {
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            values.extend(self.row(i).map(|(j, v)| f(i, j, v)));
        }
        Csr { values, ..self.clone() }
    }

    fn row_sums(&self) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).fold(T::zero(), |acc, (_, v)| acc + v)).collect()
    }
}

impl<T: Real> SymmetricOperator<T> for Csr<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            for i in 0..self.n {
                out[(i, c)] = self.row(i).fold(T::zero(), |acc, (j, v)| acc + v * x[(j, c)]);
            }
        }
        out
    }

    fn to_dense(&self) -> DMatrix<T> {
        Csr::to_dense(self)
    }
}

/// Euclidean distances between embedding columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Distances<T> {
    Dense(DMatrix<T>),
    /// Union-symmetrized k-nearest-neighbor graph; the diagonal is kept.
    Knn { k: usize, graph: Csr<T> },
}

impl<T: Real> Distances<T> {
    pub fn len(&self) -> usize {
        match self {
            Distances::Dense(m) => m.nrows(),
            Distances::Knn { graph, .. } => graph.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance between points `i` and `j`, `None` when the edge was pruned.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        match self {
            Distances::Dense(m) => Some(m[(i, j)]),
            Distances::Knn { graph, .. } => graph.get(i, j),
        }
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn column<T: Real>(data: &DMatrix<T>, j: usize) -> &[T] {
    let w = data.nrows();
    &data.as_slice()[j * w..(j + 1) * w]
}

/// All pairwise column distances, or the symmetrized kNN graph when `knn` is set.
pub fn pairwise_distances<T: Real>(x: &TrajectoryMatrix<T>, knn: Option<usize>) -> Result<Distances<T>, NlsaError> {
    let data = x.data();
    let p = data.ncols();
    if p < 2 {
        return Err(NlsaError::TooFewPoints { p });
    }
    match knn {
        None => {
            let upper: Vec<Vec<T>> = (0..p)
                .into_par_iter()
                .map(|i| {
                    let ci = column(data, i);
                    (i + 1..p).map(|j| sq_dist(ci, column(data, j)).sqrt()).collect()
                })
                .collect();
            let mut m = DMatrix::zeros(p, p);
            for (i, row) in upper.iter().enumerate() {
                for (off, &d) in row.iter().enumerate() {
                    m[(i, i + 1 + off)] = d;
                    m[(i + 1 + off, i)] = d;
                }
            }
            Ok(Distances::Dense(m))
        }
        Some(k) => {
            if k == 0 {
                return Err(NlsaError::InvalidConfig("knn must be positive".into()));
            }
            let k = k.min(p - 1);
            let neighbors: Vec<Vec<(usize, T)>> = (0..p)
                .into_par_iter()
                .map(|i| {
                    let ci = column(data, i);
                    let mut row: Vec<(usize, T)> = (0..p)
                        .filter(|&j| j != i)
                        .map(|j| (j, sq_dist(ci, column(data, j)).sqrt()))
                        .collect();
                    let by_dist = |a: &(usize, T), b: &(usize, T)| {
                        a.1.partial_cmp(&b.1).expect("finite distances").then(a.0.cmp(&b.0))
                    };
                    if k < row.len() {
                        row.select_nth_unstable_by(k - 1, by_dist);
                        row.truncate(k);
                    }
                    row
                })
                .collect();
            let mut adj: Vec<Vec<(usize, T)>> = (0..p).map(|i| vec![(i, T::zero())]).collect();
            for (i, row) in neighbors.into_iter().enumerate() {
                for (j, d) in row {
                    adj[i].push((j, d));
                    adj[j].push((i, d));
                }
            }
            let mut graph = Csr { n: p, indptr: vec![0], indices: Vec::new(), values: Vec::new() };
            for mut row in adj {
                row.sort_by_key(|e| e.0);
                row.dedup_by_key(|e| e.0);
                for (j, d) in row {
                    graph.indices.push(j);
                    graph.values.push(d);
                }
                graph.indptr.push(graph.indices.len());
            }
            Ok(Distances::Knn { k, graph })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlsaConfig {
    /// Density normalization exponent; only 1 is supported.
    pub alpha: f64,
    /// Diffusion time; only 1 is supported.
    pub t_diffusion: u32,
    pub grid_points: usize,
    /// Grid bounds as multiples of the median squared distance.
    pub grid_min: f64,
    pub grid_max: f64,
    pub subset_size: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub knn: Option<usize>,
    /// Fixed kernel scale; skips the sampling heuristic when set.
    pub epsilon: Option<f64>,
    pub eigen: EigenConfig,
}

impl Default for NlsaConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            t_diffusion: 1,
            grid_points: 48,
            grid_min: 1e-6,
            grid_max: 1e6,
            subset_size: 256,
            n_runs: 10,
            seed: 0x6e6c7361,
            knn: None,
            epsilon: None,
            eigen: EigenConfig::default(),
        }
    }
}

impl NlsaConfig {
    pub fn validate(&self) -> Result<(), NlsaError> {
        let bad = |m: &str| Err(NlsaError::InvalidConfig(m.into()));
        if self.alpha != 1.0 {
            return bad("alpha is fixed at 1");
        }
        if self.t_diffusion != 1 {
            return bad("diffusion time is fixed at 1");
        }
        if self.grid_points < 8 {
            return bad("epsilon grid needs at least 8 points");
        }
        if !(self.grid_min > 0.0 && self.grid_max / self.grid_min >= 1e4) {
            return bad("epsilon grid must span at least 4 decades");
        }
        if self.subset_size < 2 || self.n_runs == 0 {
            return bad("subset size must be >= 2 and run count >= 1");
        }
        if matches!(self.epsilon, Some(e) if !(e > 0.0 && e.is_finite())) {
            return bad("fixed epsilon must be positive and finite");
        }
        if self.knn == Some(0) {
            return bad("knn must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    /// `(ln ε, Z^c)` averaged over runs.
    pub curve: Vec<(f64, f64)>,
    /// Median over runs of the fitted turning-point value.
    pub turning_point: f64,
    pub runs: Vec<f64>,
    pub subset_size: usize,
    /// Set when a tanh fit failed and the curve midpoint was used instead.
    pub fit_failed: bool,
}

struct RunResult {
    epsilon: f64,
    curve: Vec<f64>,
    turning_point: f64,
    fit_failed: bool,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn subset_sq_dists<T: Real>(data: &DMatrix<T>, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            out.push(sq_dist(column(data, i), column(data, j)).as_f64());
        }
    }
    out
}

fn tanh_model(p: &[f64], u: f64) -> f64 {
    p[0] * (1.0 + ((u - p[1]) / p[2]).tanh()) / 2.0 + p[3]
}

fn epsilon_run(sq: &[f64], c: usize, grid_u: &[f64]) -> Result<RunResult, NlsaError> {
    let cf = c as f64;
    // Z^c over the full c×c block: c diagonal ones plus twice the upper triangle
    let curve: Vec<f64> = grid_u
        .iter()
        .map(|&u| {
            let eps = u.exp();
            cf + 2.0 * sq.iter().map(|z2| (-z2 / (2.0 * eps)).exp()).sum::<f64>()
        })
        .collect();
    let (lo, hi) = (curve[0], curve[curve.len() - 1]);
    if hi - lo <= 1e-9 * cf * cf {
        return Err(NlsaError::DegenerateCurve);
    }

    let scale = cf * cf;
    let y: Vec<f64> = curve.iter().map(|v| v / scale).collect();
    let (ylo, yhi) = (lo / scale, hi / scale);
    let (u_lo, u_hi) = (grid_u[0], grid_u[grid_u.len() - 1]);
    let span = u_hi - u_lo;
    let half = 0.5 * (ylo + yhi);
    let u_mid = interp_crossing(grid_u, &y, half);
    let mut opts = LmOptions::unbounded(4);
    opts.lower = vec![0.0, u_lo - span, 1e-3, f64::NEG_INFINITY];
    opts.upper = vec![f64::INFINITY, u_hi + span, span, f64::INFINITY];
    let fit = levenberg_marquardt(
        |p, r| {
            for (i, &u) in grid_u.iter().enumerate() {
                r[i] = tanh_model(p, u) - y[i];
            }
        },
        grid_u.len(),
        &[yhi - ylo, u_mid, span / 10.0, ylo],
        &opts,
    );
    let ok = fit.converged && fit.params.iter().all(|v| v.is_finite()) && (u_lo..=u_hi).contains(&fit.params[1]);
    let zt = if ok { fit.params[0] / 2.0 + fit.params[3] } else { half };
    let target = zt / std::f64::consts::E;
    let u_star = interp_crossing(grid_u, &y, target);
    Ok(RunResult {
        epsilon: u_star.exp(),
        curve,
        turning_point: zt * scale,
        fit_failed: !ok,
    })
}

/// `u` at which the nondecreasing sampled curve first reaches `target`,
/// linear in `u` between grid points and clamped to the grid.
fn interp_crossing(u: &[f64], y: &[f64], target: f64) -> f64 {
    if target <= y[0] {
        return u[0];
    }
    for g in 1..y.len() {
        if y[g] >= target {
            let dy = y[g] - y[g - 1];
            let frac = if dy > 0.0 { (target - y[g - 1]) / dy } else { 0.0 };
            return u[g - 1] + frac * (u[g] - u[g - 1]);
        }
    }
    u[u.len() - 1]
}

/// Samples the kernel-sum curve `Z^c(ε)` on random column subsets and picks
/// the scale where it falls to `1/e` of its fitted turning point.
pub fn estimate_epsilon<T: Real>(x: &TrajectoryMatrix<T>, cfg: &NlsaConfig) -> Result<EpsilonEstimate, NlsaError> {
    cfg.validate()?;
    let data = x.data();
    let p = data.ncols();
    if p < 2 {
        return Err(NlsaError::TooFewPoints { p });
    }
    let c = cfg.subset_size.min(p);

    // grid reference: median squared distance over an evenly strided subset
    let strided: Vec<usize> = (0..c).map(|i| (i * (p - 1)) / (c - 1).max(1)).collect();
    let mut ref_sq = subset_sq_dists(data, &strided);
    let mut z2_ref = median(&mut ref_sq);
    if z2_ref <= 0.0 {
        z2_ref = ref_sq.last().copied().unwrap_or(0.0);
    }
    if z2_ref <= 0.0 || !z2_ref.is_finite() {
        return Err(NlsaError::DegenerateCurve);
    }
    let (l0, l1) = (cfg.grid_min.ln(), cfg.grid_max.ln());
    let g = cfg.grid_points;
    let grid_u: Vec<f64> = (0..g)
        .map(|i| z2_ref.ln() + l0 + (l1 - l0) * i as f64 / (g - 1) as f64)
        .collect();

    let runs: Vec<RunResult> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(run as u64);
            let mut idx = rand::seq::index::sample(&mut rng, p, c).into_vec();
            idx.sort_unstable();
            epsilon_run(&subset_sq_dists(data, &idx), c, &grid_u)
        })
        .collect::<Result<_, _>>()?;

    let curve = grid_u
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, runs.iter().map(|r| r.curve[i]).sum::<f64>() / runs.len() as f64))
        .collect();
    let mut eps: Vec<f64> = runs.iter().map(|r| r.epsilon).collect();
    let mut zt: Vec<f64> = runs.iter().map(|r| r.turning_point).collect();
    let per_run = eps.clone();
    Ok(EpsilonEstimate {
        epsilon: median(&mut eps),
        curve,
        turning_point: median(&mut zt),
        runs: per_run,
        subset_size: c,
        fit_failed: runs.iter().any(|r| r.fit_failed),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelMatrix<T> {
    Dense(DMatrix<T>),
    Sparse(Csr<T>),
}

impl<T: Real> KernelMatrix<T> {
    pub fn dim(&self) -> usize {
        match self {
            KernelMatrix::Dense(m) => m.nrows(),
            KernelMatrix::Sparse(s) => s.n,
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            KernelMatrix::Dense(m) => m.clone(),
            KernelMatrix::Sparse(s) => s.to_dense(),
        }
    }

    fn row_sums(&self) -> Vec<T> {
        match self {
            KernelMatrix::Dense(m) => m.row_iter().map(|r| r.sum()).collect(),
            KernelMatrix::Sparse(s) => s.row_sums(),
        }
    }

    fn map(&self, f: impl Fn(usize, usize, T) -> T + Sync) -> Self {
        match self {
            KernelMatrix::Dense(m) => KernelMatrix::Dense(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| f(i, j, m[(i, j)]))),
            KernelMatrix::Sparse(s) => KernelMatrix::Sparse(s.map(f)),
        }
    }
}

impl<T: Real> SymmetricOperator<T> for KernelMatrix<T> {
    fn dim(&self) -> usize {
        KernelMatrix::dim(self)
    }

    fn apply(&self, x: &DMatrix<T>) -> DMatrix<T> {
        match self {
            KernelMatrix::Dense(m) => m * x,
            KernelMatrix::Sparse(s) => s.apply(x),
        }
    }

    fn to_dense(&self) -> DMatrix<T> {
        KernelMatrix::to_dense(self)
    }
}

/// Gaussian kernel `J_ij = exp(-z_ij² / 2ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionKernel<T> {
    pub epsilon: T,
    pub j: KernelMatrix<T>,
    pub knn: Option<usize>,
}

impl<T: Real> DiffusionKernel<T> {
    pub fn new(distances: &Distances<T>, epsilon: T) -> Result<Self, NlsaError> {
        if !(epsilon > T::zero() && epsilon.is_finite()) {
            return Err(NlsaError::InvalidKernel(format!("epsilon must be positive, got {epsilon}")));
        }
        let two_eps = epsilon + epsilon;
        let kernel = |z: T| (-(z * z) / two_eps).exp();
        let (j, knn) = match distances {
            Distances::Dense(d) => (KernelMatrix::Dense(d.map(kernel)), None),
            Distances::Knn { k, graph } => (KernelMatrix::Sparse(graph.map(|_, _, z| kernel(z))), Some(*k)),
        };
        Ok(Self { epsilon, j, knn })
    }

    /// Wraps an explicit kernel matrix after checking symmetry and entry range.
    pub fn from_matrix(j: DMatrix<T>, epsilon: T) -> Result<Self, NlsaError> {
        if !j.is_square() {
            return Err(NlsaError::InvalidKernel("kernel must be square".into()));
        }
        let n = j.nrows();
        for r in 0..n {
            for c in 0..n {
                let v = j[(r, c)];
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(NlsaError::InvalidKernel(format!("entry ({r}, {c}) = {v} outside [0, 1]")));
                }
                if v != j[(c, r)] {
                    return Err(NlsaError::InvalidKernel(format!("entry ({r}, {c}) breaks symmetry")));
                }
            }
        }
        Ok(Self { epsilon, j: KernelMatrix::Dense(j), knn: None })
    }

    pub fn dim(&self) -> usize {
        self.j.dim()
    }
}

/// Row-stochastic `T = D⁻¹ K` with `K = Q⁻¹ J Q⁻¹`, stored as `K` and the
/// row sums `d` of `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    pub k: KernelMatrix<T>,
    pub d: Vec<T>,
}

impl<T: Real> TransitionMatrix<T> {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut t = self.k.to_dense();
        for (i, mut row) in t.row_iter_mut().enumerate() {
            row /= self.d[i];
        }
        t
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.k.row_sums().iter().zip(&self.d).map(|(&s, &d)| s / d).collect()
    }

    /// `S = D^{-1/2} K D^{-1/2}`, similar to `T` and symmetric.
    pub fn symmetric_conjugate(&self) -> KernelMatrix<T> {
        let inv_sqrt: Vec<T> = self.d.iter().map(|d| T::one() / d.sqrt()).collect();
        self.k.map(|i, j, v| v * inv_sqrt[i] * inv_sqrt[j])
    }
}

pub fn build_transition<T: Real>(kernel: &DiffusionKernel<T>) -> Result<TransitionMatrix<T>, NlsaError> {
    let q = kernel.j.row_sums();
    if let Some(row) = q.iter().position(|&v| !(v > T::zero())) {
        return Err(NlsaError::ZeroDensity { row });
    }
    let k = kernel.j.map(|i, j, v| v / (q[i] * q[j]));
    let d = k.row_sums();
    if let Some(row) = d.iter().position(|&v| !(v > T::zero())) {
        return Err(NlsaError::ZeroDensity { row });
    }
    Ok(TransitionMatrix { k, d })
}

/// Relative norm a lifted eigenfunction must retain after projecting out the
/// modes before it.
pub const LIFT_TOLERANCE: f64 = 1e-8;

/// Leading nontrivial eigenfunctions of `T`, lifted to window space.
///
/// Lifted directions already spanned by earlier modes are dropped, so the
/// result can hold fewer than `k` modes when `X` has low rank.
///
/// `spectrum` holds the eigenvalues and `eigenfunctions` the unit-norm right
/// eigenvectors `φ_i`. The modes are the order-preserving orthonormalization
/// of `X φ_i` and `pcs = Xᵀ modes`, so reconstruction treats both methods alike.
pub fn nlsa_decompose<T: Real>(
    t: &TransitionMatrix<T>,
    x: &TrajectoryMatrix<T>,
    k: usize,
    eigen: &EigenConfig,
) -> Result<ModeSet<T>, NlsaError> {
    if !x.is_standardized() {
        return Err(NlsaError::NotStandardized);
    }
    let data = x.data();
    let p = t.dim();
    if data.ncols() != p {
        return Err(NlsaError::ShapeMismatch(format!(
            "transition matrix of size {p} against P = {}",
            data.ncols()
        )));
    }
    let max = (p - 1).min(data.nrows());
    if k == 0 || k > max {
        return Err(NlsaError::KOutOfRange { k, max });
    }
    let s = t.symmetric_conjugate();
    let pairs = linalg::top_eigenpairs(&s, k + 1, eigen)?;
    let lead = pairs.values[0];
    if (lead - T::one()).abs() > T::lit(1e-8) {
        return Err(NlsaError::EigFailure(format!("leading eigenvalue {lead} differs from 1")));
    }
    if pairs.values[1] >= T::one() - T::lit(1e-12) {
        return Err(NlsaError::EigFailure(
            "eigenvalue 1 is repeated; the kernel graph is disconnected or T is the identity".into(),
        ));
    }

    let inv_sqrt: Vec<T> = t.d.iter().map(|d| T::one() / d.sqrt()).collect();
    let mut phi = DMatrix::from_fn(p, k, |r, c| pairs.vectors[(r, c + 1)] * inv_sqrt[r]);
    for mut col in phi.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    canonical_signs(&mut phi);

    // a low-rank X maps several eigenfunctions into the same subspace; only
    // directions that add something new become modes
    let (mut modes, kept) = linalg::orthonormal_subset(&(data * &phi), T::lit(LIFT_TOLERANCE));
    if kept.is_empty() {
        return Err(NlsaError::EigFailure("every lifted eigenfunction vanishes under X".into()));
    }
    let spectrum: Vec<T> = kept.iter().map(|&i| pairs.values[i + 1]).collect();
    let phi = phi.select_columns(&kept);
    fix_pair_phases(&mut modes, &spectrum, T::lit(1e-6));
    canonical_signs(&mut modes);
    let pcs = data.tr_mul(&modes);
    let mut ms = ModeSet {
        method: Method::Nlsa,
        modes,
        pcs,
        spectrum,
        variance: Vec::new(),
        eigenfunctions: Some(phi),
    };
    ms.variance = variance_spectrum(&ms, x)?;
    Ok(ms)
}

/// Result of the full NLSA chain.
#[derive(Debug, Clone)]
pub struct NlsaOutput<T: Real> {
    pub modes: ModeSet<T>,
    pub epsilon: f64,
    /// `None` when a fixed epsilon was configured.
    pub estimate: Option<EpsilonEstimate>,
}

/// Distances, kernel scale, kernel, transition matrix, and decomposition.
pub fn nlsa<T: Real>(x: &TrajectoryMatrix<T>, k: usize, cfg: &NlsaConfig) -> Result<NlsaOutput<T>, NlsaError> {
    cfg.validate()?;
    let (epsilon, estimate) = match cfg.epsilon {
        Some(e) => (e, None),
        None => {
            let est = estimate_epsilon(x, cfg)?;
            (est.epsilon, Some(est))
        }
    };
    let distances = pairwise_distances(x, cfg.knn)?;
    let kernel = DiffusionKernel::new(&distances, T::lit(epsilon))?;
    let t = build_transition(&kernel)?;
    let modes = nlsa_decompose(&t, x, k, &cfg.eigen)?;
    Ok(NlsaOutput { modes, epsilon, estimate })
}
