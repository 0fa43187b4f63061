//! Synthetic daily series with known harmonic content, for testing the
//! detection chain end to end.

use std::f64::consts::PI;
use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::DAYS_PER_YEAR;
use crate::ingest::{write_flux_csv, FluxSeries, IngestError};

/// Days over which an amplitude change ramps from 1% to 99% of its extent.
pub const RAMP_DAYS: f64 = 60.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    /// Cycles per year.
    pub f: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Harmonic {
    pub fn new(f: f64, amplitude: f64, phase: f64) -> Self {
        Self { f, amplitude, phase }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    None,
    White { sigma: f64 },
    /// Power spectral density proportional to `1/f^beta`, scaled to std `sigma`.
    Broadband { sigma: f64, beta: f64 },
    /// White noise restricted to frequencies at or above `cutoff` cycles per year.
    HighFrequency { sigma: f64, cutoff: f64 },
}

/// Multiplies the signal by `factor` from `at_fraction` of the record onwards,
/// through a logistic ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeChange {
    pub at_fraction: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecipe {
    pub n_years: f64,
    /// Exact sample count; overrides `n_years` when set.
    pub n_days: Option<usize>,
    pub harmonics: Vec<Harmonic>,
    pub noise: Noise,
    pub amplitude_change: Option<AmplitudeChange>,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub site_id: String,
    pub variable: String,
}

impl Default for SignalRecipe {
    fn default() -> Self {
        Self {
            n_years: 4.0,
            n_days: None,
            harmonics: vec![Harmonic::new(1.0, 1.0, 0.0)],
            noise: Noise::None,
            amplitude_change: None,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date"),
            site_id: "SYN".into(),
            variable: "X".into(),
        }
    }
}

impl SignalRecipe {
    pub fn n_samples(&self) -> usize {
        self.n_days.unwrap_or_else(|| (self.n_years * DAYS_PER_YEAR).round() as usize)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidRecipe(m));
        let years = self.n_samples() as f64 / DAYS_PER_YEAR;
        if !(years >= 2.0 - 1e-9) {
            return bad(format!("record of {years:.3} years is shorter than 2"));
        }
        for h in &self.harmonics {
            if !(h.amplitude >= 0.0 && h.amplitude.is_finite() && h.f.is_finite() && h.phase.is_finite()) {
                return bad(format!("invalid harmonic {h:?}"));
            }
        }
        let sigma_ok = |s: f64| s >= 0.0 && s.is_finite();
        match self.noise {
            Noise::None => {}
            Noise::White { sigma } if sigma_ok(sigma) => {}
            Noise::Broadband { sigma, beta } if sigma_ok(sigma) && beta.is_finite() => {}
            Noise::HighFrequency { sigma, cutoff } if sigma_ok(sigma) && cutoff > 0.0 => {}
            other => return bad(format!("invalid noise {other:?}")),
        }
        if let Some(c) = self.amplitude_change {
            if !((0.0..=1.0).contains(&c.at_fraction) && c.factor >= 0.0 && c.factor.is_finite()) {
                return bad(format!("invalid amplitude change {c:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Frequencies of the harmonics with nonzero amplitude.
    pub harmonics: Vec<f64>,
    /// Signal before noise is added.
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub series: FluxSeries<f64>,
    pub truth: GroundTruth,
}

fn amplitude_profile(n: usize, change: Option<AmplitudeChange>) -> Vec<f64> {
    let Some(c) = change else { return vec![1.0; n] };
    let t0 = c.at_fraction * n as f64;
    let tau = (RAMP_DAYS / 2.0) / 99f64.ln();
    (0..n)
        .map(|t| 1.0 + (c.factor - 1.0) / (1.0 + (-(t as f64 - t0) / tau).exp()))
        .collect()
}

fn rescale(x: &mut [f64], sigma: f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let gain = if sd > 0.0 { sigma / sd } else { 0.0 };
    x.iter_mut().for_each(|v| *v = (*v - mean) * gain);
}

fn inverse_real(spectrum: &mut [Complex<f64>]) -> Vec<f64> {
    let n = spectrum.len();
    FftPlanner::new().plan_fft_inverse(n).process(spectrum);
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

/// `1/f^beta` power with uniform random phases, Hermitian so the result is real.
fn broadband(n: usize, sigma: f64, beta: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let mag = (k as f64).powf(-beta / 2.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let c = Complex::from_polar(mag, phase);
        if 2 * k == n {
            spec[k] = Complex::new(c.re, 0.0);
        } else {
            spec[k] = c;
            spec[n - k] = c.conj();
        }
    }
    let mut x = inverse_real(&mut spec);
    rescale(&mut x, sigma);
    x
}

fn high_frequency(n: usize, sigma: f64, cutoff: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut spec: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(normal.sample(rng), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spec);
    let df = DAYS_PER_YEAR / n as f64;
    for (k, c) in spec.iter_mut().enumerate() {
        if ((k.min(n - k)) as f64) * df < cutoff {
            *c = Complex::new(0.0, 0.0);
        }
    }
    let mut x = inverse_real(&mut spec);
    rescale(&mut x, sigma);
    x
}

pub fn generate(recipe: &SignalRecipe) -> Result<Synthetic, SynthError> {
    recipe.validate()?;
    let n = recipe.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let profile = amplitude_profile(n, recipe.amplitude_change);
    let clean: Vec<f64> = (0..n)
        .map(|t| {
            let yr = t as f64 / DAYS_PER_YEAR;
            let s: f64 = recipe
                .harmonics
                .iter()
                .map(|h| h.amplitude * (2.0 * PI * h.f * yr + h.phase).sin())
                .sum();
            s * profile[t]
        })
        .collect();
    let noise = match recipe.noise {
        Noise::None => vec![0.0; n],
        Noise::White { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        }
        Noise::Broadband { sigma, beta } => broadband(n, sigma, beta, &mut rng),
        Noise::HighFrequency { sigma, cutoff } => high_frequency(n, sigma, cutoff, &mut rng),
    };
    let values = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let series = FluxSeries::new(recipe.start_date, values).with_labels(&recipe.site_id, &recipe.variable);
    let harmonics = recipe
        .harmonics
        .iter()
        .filter(|h| h.amplitude > 0.0)
        .map(|h| h.f)
        .collect();
    Ok(Synthetic {
        series,
        truth: GroundTruth { harmonics, clean, noise },
    })
}

/// Writes the generated series in the ingest CSV format.
pub fn write_synthetic_csv<W: Write>(synthetic: &Synthetic, sink: W) -> Result<(), SynthError> {
    Ok(write_flux_csv(&synthetic.series, sink)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_flux_csv, written_column_spec};
    use crate::spectral::fft_power;

    #[test]
    fn noiseless_tone_spectrum() {
        let s = generate(&SignalRecipe::default()).unwrap();
        let spec = fft_power(&s.series.values, 1.0).unwrap();
        let (i, &p) = spec.power.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
        assert!((spec.freqs[i] - 1.0).abs() < 1e-9);
        assert!(p >= 0.99);
        assert_eq!(s.truth.harmonics, vec![1.0]);
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        for noise in [
            Noise::White { sigma: 0.3 },
            Noise::Broadband { sigma: 1.5, beta: 1.0 },
            Noise::HighFrequency { sigma: 1.0, cutoff: 6.0 },
        ] {
            let r = SignalRecipe { noise, seed: 11, ..SignalRecipe::default() };
            let a = generate(&r).unwrap();
            let b = generate(&r).unwrap();
            assert_eq!(a.series.values, b.series.values);
            let c = generate(&SignalRecipe { seed: 12, ..r }).unwrap();
            assert_ne!(a.series.values, c.series.values);
        }
    }

    #[test]
    fn noise_has_requested_std() {
        for noise in [Noise::Broadband { sigma: 1.5, beta: 1.0 }, Noise::HighFrequency { sigma: 1.5, cutoff: 6.0 }] {
            let s = generate(&SignalRecipe { noise, ..SignalRecipe::default() }).unwrap();
            let n = s.truth.noise.len() as f64;
            let sd = (s.truth.noise.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            assert!((sd - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn broadband_power_falls_with_frequency() {
        let r = SignalRecipe {
            harmonics: vec![],
            noise: Noise::Broadband { sigma: 1.0, beta: 1.0 },
            n_years: 14.0,
            ..SignalRecipe::default()
        };
        let spec = fft_power(&generate(&r).unwrap().series.values, 1.0).unwrap();
        let band = |lo: f64, hi: f64| -> f64 {
            spec.freqs.iter().zip(&spec.power).filter(|(f, _)| **f >= lo && **f < hi).map(|(_, p)| p).sum()
        };
        // equal power per octave for 1/f
        let (a, b) = (band(1.0, 2.0), band(32.0, 64.0));
        assert!((a / b - 1.0).abs() < 0.05, "{a} {b}");
    }

    #[test]
    fn high_frequency_noise_is_band_limited() {
        let r = SignalRecipe {
            harmonics: vec![],
            noise: Noise::HighFrequency { sigma: 1.0, cutoff: 6.0 },
            ..SignalRecipe::default()
        };
        let spec = fft_power(&generate(&r).unwrap().series.values, 1.0).unwrap();
        let low: f64 = spec.freqs.iter().zip(&spec.power).filter(|(f, _)| **f < 6.0 - 1e-9).map(|(_, p)| p).sum();
        assert!(low < 1e-20);
    }

    #[test]
    fn amplitude_ramp() {
        let r = SignalRecipe {
            amplitude_change: Some(AmplitudeChange { at_fraction: 0.5, factor: 3.0 }),
            n_days: Some(1460),
            ..SignalRecipe::default()
        };
        let p = amplitude_profile(r.n_samples(), r.amplitude_change);
        let mid = r.n_samples() / 2;
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!((p[p.len() - 1] - 3.0).abs() < 1e-6);
        assert!((p[mid - 30] - 1.02).abs() < 1e-3);
        assert!((p[mid + 30] - 2.98).abs() < 1e-3);
    }

    #[test]
    fn invalid_recipes() {
        assert!(generate(&SignalRecipe { n_years: 1.5, ..SignalRecipe::default() }).is_err());
        assert!(generate(&SignalRecipe { harmonics: vec![Harmonic::new(1.0, -1.0, 0.0)], ..SignalRecipe::default() }).is_err());
        assert!(generate(&SignalRecipe { noise: Noise::White { sigma: -0.1 }, ..SignalRecipe::default() }).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = generate(&SignalRecipe { noise: Noise::White { sigma: 0.1 }, ..SignalRecipe::default() }).unwrap();
        let mut buf = Vec::new();
        write_synthetic_csv(&s, &mut buf).unwrap();
        let back: FluxSeries<f64> = parse_flux_csv(buf.as_slice(), &written_column_spec(false)).unwrap();
        assert_eq!(back.start_date, s.series.start_date);
        assert_eq!(back.values.len(), s.series.values.len());
        for (a, b) in back.values.iter().zip(&s.series.values) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
