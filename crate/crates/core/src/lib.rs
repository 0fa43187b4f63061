//! Harmonic oscillations and seasonal cycles of daily environmental series.
//!
//! A series is delay embedded into a trajectory matrix, decomposed by
//! singular spectrum analysis ([`ssa`]) or nonlinear Laplacian spectral
//! analysis ([`nlsa`]), and each mode is tested for a single spectral peak at
//! an integer number of cycles per year ([`spectral`]). Modes that pair up at
//! the same harmonic are summed into a seasonal cycle. [`metrics`] describes
//! the input series itself and [`synth`] produces test signals with known
//! content.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod embedding;
pub mod fit;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod nlsa;
pub mod scalar;
pub mod spectral;
pub mod ssa;
pub mod synth;

pub use scalar::Real;

pub type FluxSeries64 = ingest::FluxSeries<f64>;
pub type TrajectoryMatrix64 = embedding::TrajectoryMatrix<f64>;
pub type ModeSet64 = ssa::ModeSet<f64>;
pub type PowerSpectrum64 = spectral::PowerSpectrum<f64>;
pub type SeasonalCycle64 = spectral::SeasonalCycle<f64>;
pub type TransitionMatrix64 = nlsa::TransitionMatrix<f64>;
pub type DiffusionKernel64 = nlsa::DiffusionKernel<f64>;

pub type FluxSeries32 = ingest::FluxSeries<f32>;
pub type TrajectoryMatrix32 = embedding::TrajectoryMatrix<f32>;
pub type ModeSet32 = ssa::ModeSet<f32>;
