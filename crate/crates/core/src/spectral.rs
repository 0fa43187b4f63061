//! Power spectra, low-pass filtering, harmonic classification of modes,
//! pairing, and seasonal-cycle construction.

use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{destandardize, reconstruct_component, EmbeddingError, RowStats, DAYS_PER_YEAR};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::scalar::Real;
use crate::ssa::{Method, ModeSet};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("series of length {len} is shorter than {min}")]
    TooShort { len: usize, min: usize },
    #[error("cutoff frequency must be positive, got {0}")]
    InvalidCutoff(f64),
    #[error("sampling interval must be positive, got {0}")]
    InvalidSampling(f64),
    #[error("inventory holds no complete harmonic pair")]
    NoPairs,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relative slack for comparing computed bin frequencies against cutoffs,
/// so a bin that lands on a cutoff up to rounding counts as on it.
const FREQ_SLACK: f64 = 1e-9;

pub(crate) fn at_or_above(freq: f64, cutoff: f64) -> bool {
    freq >= cutoff * (1.0 - FREQ_SLACK)
}

/// Relative power over the positive frequencies `n = 1..=N/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum<T> {
    /// Cycles per year, ascending.
    pub freqs: Vec<T>,
    /// Sums to one unless `zero_power` is set.
    pub power: Vec<T>,
    pub n_samples: usize,
    pub dt_days: f64,
    /// The mean-removed series had no power; `power` is all zeros.
    pub zero_power: bool,
}

impl<T: Real> PowerSpectrum<T> {
    /// Frequency spacing in cycles per year.
    pub fn bin_width(&self) -> f64 {
        DAYS_PER_YEAR / (self.n_samples as f64 * self.dt_days)
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }
}

fn check_input(len: usize, dt_days: f64) -> Result<(), SpectralError> {
    if len < 4 {
        return Err(SpectralError::TooShort { len, min: 4 });
    }
    if !(dt_days > 0.0 && dt_days.is_finite()) {
        return Err(SpectralError::InvalidSampling(dt_days));
    }
    Ok(())
}

pub fn fft_power<T: Real>(series: &[T], dt_days: f64) -> Result<PowerSpectrum<T>, SpectralError> {
    let n = series.len();
    check_input(n, dt_days)?;
    let mean = crate::scalar::mean(series);
    let mut buf: Vec<Complex<T>> = series.iter().map(|&x| Complex::new(x - mean, T::zero())).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let mut power: Vec<T> = buf[1..=half].iter().map(|c| c.norm_sqr()).collect();
    let total = power.iter().fold(T::zero(), |a, &b| a + b);
    // round-off left by the mean removal of a constant series
    let scale = series.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let floor = T::from_count(n) * T::eps() * T::lit(16.0) * scale;
    let zero_power = total <= floor * floor;
    if zero_power {
        power.iter_mut().for_each(|p| *p = T::zero());
    } else {
        power.iter_mut().for_each(|p| *p /= total);
    }
    let df = DAYS_PER_YEAR / (n as f64 * dt_days);
    Ok(PowerSpectrum {
        freqs: (1..=half).map(|k| T::lit(k as f64 * df)).collect(),
        power,
        n_samples: n,
        dt_days,
        zero_power,
    })
}

/// Removes every two-sided frequency bin at or above `f_l` cycles per year.
pub fn lowpass<T: Real>(series: &[T], f_l: f64, dt_days: f64) -> Result<Vec<T>, SpectralError> {
    if !(f_l > 0.0 && f_l.is_finite()) {
        return Err(SpectralError::InvalidCutoff(f_l));
    }
    let n = series.len();
    check_input(n, dt_days)?;
    let mut buf: Vec<Complex<T>> = series.iter().map(|&x| Complex::new(x, T::zero())).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = DAYS_PER_YEAR / (n as f64 * dt_days);
    for (k, c) in buf.iter_mut().enumerate() {
        let m = k.min(n - k);
        if at_or_above(m as f64 * df, f_l) {
            *c = Complex::new(T::zero(), T::zero());
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let inv_n = T::one() / T::from_count(n);
    Ok(buf.iter().map(|c| c.re * inv_n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Allowed distance of the fitted peak from an integer harmonic.
    pub eps_f: f64,
    /// Allowed leftover power relative to the fitted peak height.
    pub eps_p: f64,
    pub harmonic_set: Vec<u32>,
    /// Upper end of the fit window in cycles per year.
    pub fit_max_k: f64,
    /// Half-width of the peak support in fitted standard deviations.
    pub support_sigmas: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            eps_f: 0.15,
            eps_p: 0.15,
            harmonic_set: (1..=6).collect(),
            fit_max_k: 7.0,
            support_sigmas: 3.0,
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicLabel {
    pub mode_index: usize,
    pub is_harmonic: bool,
    pub mu_k: f64,
    pub sigma_g: f64,
    /// Amplitude of the fitted Gaussian in relative-power units.
    pub peak_height: f64,
    /// Largest bin power outside `mu_k ± support_sigmas · sigma_g`.
    pub residual_max: f64,
    pub matched_f: Option<u32>,
    /// Why the spectrum could not be fitted, or a note that the fit hit its iteration cap. Rejected
    /// spectra without a fit report zeros for the fit parameters.
    pub diagnostic: Option<String>,
}

impl HarmonicLabel {
    fn rejected(mode_index: usize, why: &str) -> Self {
        Self {
            mode_index,
            is_harmonic: false,
            mu_k: 0.0,
            sigma_g: 0.0,
            peak_height: 0.0,
            residual_max: 0.0,
            matched_f: None,
            diagnostic: Some(why.to_string()),
        }
    }
}

fn gaussian(p: &[f64], k: f64) -> f64 {
    p[0] * (-(k - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp()
}

/// Gaussian peak fit over the low-frequency window, then the two acceptance tests.
pub fn classify_spectrum<T: Real>(spec: &PowerSpectrum<T>, mode_index: usize, cfg: &ClassifierConfig) -> HarmonicLabel {
    if spec.zero_power {
        return HarmonicLabel::rejected(mode_index, "zero power");
    }
    let freqs: Vec<f64> = spec.freqs.iter().map(|v| v.as_f64()).collect();
    let power: Vec<f64> = spec.power.iter().map(|v| v.as_f64()).collect();
    let m = freqs.iter().take_while(|&&k| k <= cfg.fit_max_k * (1.0 + FREQ_SLACK)).count();
    if m < 3 {
        return HarmonicLabel::rejected(mode_index, "fit window holds fewer than 3 bins");
    }
    let dk = spec.bin_width();
    let peak = (0..m)
        .max_by(|&a, &b| power[a].partial_cmp(&power[b]).expect("finite power"))
        .expect("non-empty window");
    let mut opts = LmOptions::unbounded(3);
    opts.lower = vec![0.0, 0.0, dk / 4.0];
    opts.upper = vec![f64::INFINITY, cfg.fit_max_k, cfg.fit_max_k];
    opts.max_iter = cfg.max_iter;
    opts.tol = cfg.tol;
    let fit = levenberg_marquardt(
        |p, r| {
            for i in 0..m {
                r[i] = gaussian(p, freqs[i]) - power[i];
            }
        },
        m,
        &[power[peak], freqs[peak], dk],
        &opts,
    );
    let (a, mu, sigma) = (fit.params[0], fit.params[1], fit.params[2]);
    let half_width = cfg.support_sigmas * sigma;
    let residual_max = freqs
        .iter()
        .zip(&power)
        .filter(|(k, _)| (*k - mu).abs() > half_width)
        .map(|(_, &p)| p)
        .fold(0.0, f64::max);
    let nearest = cfg
        .harmonic_set
        .iter()
        .copied()
        .min_by(|&x, &y| (mu - x as f64).abs().partial_cmp(&(mu - y as f64).abs()).expect("finite"));
    // an iteration-capped fit still gives the best parameters found so far
    let diagnostic = (!fit.converged).then(|| format!("peak fit stopped at the {}-iteration cap", fit.iterations));
    let accepted = fit.params.iter().all(|v| v.is_finite())
        && a > 0.0
        && residual_max <= cfg.eps_p * a
        && nearest.is_some_and(|f| (mu - f as f64).abs() <= cfg.eps_f);
    HarmonicLabel {
        mode_index,
        is_harmonic: accepted,
        mu_k: mu,
        sigma_g: sigma,
        peak_height: a,
        residual_max,
        matched_f: if accepted { nearest } else { None },
        diagnostic,
    }
}

pub fn classify_mode<T: Real>(
    mode: &[T],
    dt_days: f64,
    mode_index: usize,
    cfg: &ClassifierConfig,
) -> Result<HarmonicLabel, SpectralError> {
    Ok(classify_spectrum(&fft_power(mode, dt_days)?, mode_index, cfg))
}

/// Classifies every mode of `ms`, in parallel, in mode order.
pub fn classify_modes<T: Real>(ms: &ModeSet<T>, dt_days: f64, cfg: &ClassifierConfig) -> Result<Vec<HarmonicLabel>, SpectralError> {
    (0..ms.k())
        .into_par_iter()
        .map(|i| classify_mode(&ms.mode(i), dt_days, i, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    #[serde(rename = "none")]
    NoHarmonics,
    Deficient,
    Fundamental,
    Multiple,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::NoHarmonics, Category::Deficient, Category::Fundamental, Category::Multiple];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::NoHarmonics => "none",
            Category::Deficient => "deficient",
            Category::Fundamental => "fundamental",
            Category::Multiple => "multiple",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmonicPair {
    pub mode_a: usize,
    pub mode_b: usize,
    pub f: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicInventory {
    pub labels: Vec<HarmonicLabel>,
    pub pairs: Vec<HarmonicPair>,
    /// Harmonic modes left without a partner.
    pub deficient: Vec<usize>,
    pub category: Category,
}

impl HarmonicInventory {
    /// Modes of all complete pairs, ascending.
    pub fn paired_modes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.pairs.iter().flat_map(|p| [p.mode_a, p.mode_b]).collect();
        v.sort_unstable();
        v
    }

    /// Distinct harmonics with a complete pair, ascending.
    pub fn paired_harmonics(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.pairs.iter().map(|p| p.f).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Greedy pairing in ascending mode order: a harmonic mode pairs with the
/// earliest still-open mode matched to the same harmonic.
pub fn pair_harmonics(labels: &[HarmonicLabel]) -> HarmonicInventory {
    let mut order: Vec<&HarmonicLabel> = labels.iter().collect();
    order.sort_by_key(|l| l.mode_index);
    let mut open: std::collections::BTreeMap<u32, usize> = Default::default();
    let mut pairs = Vec::new();
    for l in order {
        let Some(f) = l.matched_f.filter(|_| l.is_harmonic) else { continue };
        match open.remove(&f) {
            Some(a) => pairs.push(HarmonicPair { mode_a: a, mode_b: l.mode_index, f }),
            None => {
                open.insert(f, l.mode_index);
            }
        }
    }
    let mut deficient: Vec<usize> = open.into_values().collect();
    deficient.sort_unstable();

    let any_harmonic = labels.iter().any(|l| l.is_harmonic);
    let has_fundamental = pairs.iter().any(|p| p.f == 1);
    let has_higher = pairs.iter().any(|p| p.f >= 2);
    let category = match (any_harmonic, has_fundamental, has_higher) {
        (false, _, _) => Category::NoHarmonics,
        (true, false, _) => Category::Deficient,
        (true, true, false) => Category::Fundamental,
        (true, true, true) => Category::Multiple,
    };
    HarmonicInventory {
        labels: labels.to_vec(),
        pairs,
        deficient,
        category,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalCycle<T> {
    /// Original units, one value per input sample.
    pub values: Vec<T>,
    pub harmonics_used: Vec<u32>,
    pub mode_indices: Vec<usize>,
    pub method: Method,
}

/// Reconstructs all paired modes and maps the sum back to original units.
pub fn build_seasonal_cycle<T: Real>(
    ms: &ModeSet<T>,
    inv: &HarmonicInventory,
    stats: &RowStats<T>,
    n: usize,
) -> Result<SeasonalCycle<T>, SpectralError> {
    if inv.pairs.is_empty() {
        return Err(SpectralError::NoPairs);
    }
    let indices = inv.paired_modes();
    let rc = reconstruct_component(&ms.modes, &ms.pcs, &indices, n)?;
    let original = destandardize(&rc, stats, n)?;
    Ok(SeasonalCycle {
        values: original.values,
        harmonics_used: inv.paired_harmonics(),
        mode_indices: indices,
        method: ms.method,
    })
}

/// Writes `freq,power` rows.
pub fn write_spectrum_csv<T: Real, W: Write>(spec: &PowerSpectrum<T>, sink: W) -> Result<(), SpectralError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["freq", "power"])?;
    for (f, p) in spec.freqs.iter().zip(&spec.power) {
        w.write_record([format!("{f}"), format!("{p:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `date,value` rows starting at `start`, one day per sample.
pub fn write_cycle_csv<T: Real, W: Write>(cycle: &SeasonalCycle<T>, start: NaiveDate, sink: W) -> Result<(), SpectralError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["date", "value"])?;
    for (d, v) in start.iter_days().zip(&cycle.values) {
        w.write_record([d.format("%Y-%m-%d").to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(n: usize, f: f64, phase: f64) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / DAYS_PER_YEAR + phase).sin()).collect()
    }

    fn label(i: usize, f: Option<u32>) -> HarmonicLabel {
        HarmonicLabel {
            mode_index: i,
            is_harmonic: f.is_some(),
            mu_k: f.map_or(0.5, |f| f as f64),
            sigma_g: 0.1,
            peak_height: 0.5,
            residual_max: 0.0,
            matched_f: f,
            diagnostic: None,
        }
    }

    #[test]
    fn single_tone_dominates_one_bin() {
        let n = 5114;
        let spec = fft_power(&tone(n, 3.0, 0.0), 1.0).unwrap();
        let (i, &p) = spec.power.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap();
        assert!((spec.freqs[i] - 3.0).abs() <= 1.0 / 14.0);
        assert!(p >= 0.99);
        let total: f64 = spec.power.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(spec.freqs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_series_has_zero_power() {
        let spec = fft_power(&vec![3.7_f64; 100], 1.0).unwrap();
        assert!(spec.zero_power);
        assert!(spec.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn two_equal_tones_split_power() {
        let n = (4.0 * DAYS_PER_YEAR) as usize;
        let x: Vec<f64> = tone(n, 1.0, 0.0).iter().zip(tone(n, 2.0, 0.4)).map(|(a, b)| a + b).collect();
        let spec = fft_power(&x, 1.0).unwrap();
        let mut p = spec.power.clone();
        p.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(fft_power(&[1.0_f64, 2.0, 3.0], 1.0), Err(SpectralError::TooShort { .. })));
        assert!(matches!(lowpass(&[1.0_f64; 8], 0.0, 1.0), Err(SpectralError::InvalidCutoff(_))));
    }

    #[test]
    fn lowpass_removes_high_tone() {
        let n = (4.0 * DAYS_PER_YEAR) as usize;
        let low = tone(n, 1.0, 0.0);
        let x: Vec<f64> = low.iter().zip(tone(n, 10.0, 0.0)).map(|(a, b)| a + b).collect();
        let y = lowpass(&x, 6.0, 1.0).unwrap();
        let dev = y.iter().zip(&low).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-8, "{dev}");
        let yy = lowpass(&y, 6.0, 1.0).unwrap();
        assert!(y.iter().zip(&yy).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn classifies_pure_harmonic() {
        let w = (7.0 * DAYS_PER_YEAR) as usize;
        let l = classify_mode(&tone(w, 2.0, 0.3), 1.0, 0, &ClassifierConfig::default()).unwrap();
        assert!(l.is_harmonic, "{l:?}");
        assert_eq!(l.matched_f, Some(2));
        assert!((l.mu_k - 2.0).abs() <= 0.05);
    }

    #[test]
    fn rejects_two_equal_tones() {
        let w = (7.0 * DAYS_PER_YEAR) as usize;
        let x: Vec<f64> = tone(w, 2.0, 0.0).iter().zip(tone(w, 3.0, 1.0)).map(|(a, b)| a + b).collect();
        let l = classify_mode(&x, 1.0, 0, &ClassifierConfig::default()).unwrap();
        assert!(!l.is_harmonic, "{l:?}");
        assert_eq!(l.matched_f, None);
    }

    #[test]
    fn rejects_off_harmonic_tone() {
        let w = (7.0 * DAYS_PER_YEAR) as usize;
        let l = classify_mode(&tone(w, 2.5, 0.0), 1.0, 0, &ClassifierConfig::default()).unwrap();
        assert!(!l.is_harmonic);
    }

    #[test]
    fn zero_mode_is_not_harmonic() {
        let l = classify_mode(&vec![0.0_f64; 800], 1.0, 3, &ClassifierConfig::default()).unwrap();
        assert!(!l.is_harmonic);
        assert_eq!(l.mode_index, 3);
        assert!(l.diagnostic.is_some());
    }

    #[test]
    fn pairing_examples() {
        let inv = pair_harmonics(&[label(0, Some(1)), label(1, Some(1)), label(2, Some(2)), label(3, Some(2))]);
        assert_eq!(
            inv.pairs,
            vec![
                HarmonicPair { mode_a: 0, mode_b: 1, f: 1 },
                HarmonicPair { mode_a: 2, mode_b: 3, f: 2 }
            ]
        );
        assert_eq!(inv.category, Category::Multiple);

        let inv = pair_harmonics(&[label(0, Some(1)), label(1, None)]);
        assert!(inv.pairs.is_empty());
        assert_eq!(inv.deficient, vec![0]);
        assert_eq!(inv.category, Category::Deficient);

        let inv = pair_harmonics(&[label(0, None), label(1, None)]);
        assert_eq!(inv.category, Category::NoHarmonics);
    }

    #[test]
    fn pairing_interleaved_and_fundamental_only() {
        let inv = pair_harmonics(&[label(0, Some(1)), label(1, Some(2)), label(2, Some(1)), label(3, Some(1))]);
        assert_eq!(inv.pairs, vec![HarmonicPair { mode_a: 0, mode_b: 2, f: 1 }]);
        assert_eq!(inv.deficient, vec![1, 3]);
        assert_eq!(inv.category, Category::Fundamental);
    }

    #[test]
    fn pair_without_fundamental_is_deficient() {
        let inv = pair_harmonics(&[label(0, Some(2)), label(1, Some(2))]);
        assert_eq!(inv.pairs.len(), 1);
        assert_eq!(inv.category, Category::Deficient);
    }

    #[test]
    fn category_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&Category::NoHarmonics).unwrap(), "\"none\"");
        assert_eq!(serde_json::to_string(&Category::Multiple).unwrap(), "\"multiple\"");
    }

    #[test]
    fn export_formats() {
        let spec = fft_power(&tone(64, 30.0, 0.0), 1.0).unwrap();
        let mut out = Vec::new();
        write_spectrum_csv(&spec, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("freq,power\n"));
        assert_eq!(text.lines().count(), 33);

        let cycle = SeasonalCycle { values: vec![1.5, 2.5], harmonics_used: vec![1], mode_indices: vec![0, 1], method: Method::Ssa };
        let mut out = Vec::new();
        write_cycle_csv(&cycle, NaiveDate::from_ymd_opt(2020, 2, 28).unwrap(), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "date,value\n2020-02-28,1.5\n2020-02-29,2.5\n");
    }
}
