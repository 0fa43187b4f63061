//! Data-characterization metrics: high-frequency variability, regularity,
//! sample entropy, persistent low quality flags, and three-bin labeling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{self, Real};
use crate::spectral::{at_or_above, fft_power, PowerSpectrum, SpectralError};

/// Half a year on the daily grid, rounded up.
pub const HALF_YEAR_SAMPLES: usize = 183;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series of length {len} is too short for templates of length {m}")]
    TooShort { len: usize, m: usize },
    #[error("no values to bin")]
    Empty,
    #[error("value {index} is NaN")]
    NotANumber { index: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Power fraction at or above `cutoff` cycles per year.
pub fn hf_variability<T: Real>(spec: &PowerSpectrum<T>, cutoff: f64) -> f64 {
    spec.freqs
        .iter()
        .zip(&spec.power)
        .filter(|(k, _)| at_or_above(k.as_f64(), cutoff))
        .map(|(_, p)| p.as_f64())
        .sum()
}

/// Power fraction in bins closer than one bin width to any of `harmonics`.
pub fn regularity<T: Real>(spec: &PowerSpectrum<T>, harmonics: &[u32]) -> f64 {
    let dk = spec.bin_width();
    spec.freqs
        .iter()
        .zip(&spec.power)
        .filter(|(k, _)| harmonics.iter().any(|&f| (k.as_f64() - f as f64).abs() < dk))
        .map(|(_, p)| p.as_f64())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntropy {
    /// `-ln(A/B)`; `None` when `A` or `B` is zero and the entropy is infinite.
    pub value: Option<f64>,
    /// Matching template pairs of length `m + 1`.
    pub a: u64,
    /// Matching template pairs of length `m`.
    pub b: u64,
    pub m: usize,
    pub r: f64,
}

impl SampleEntropy {
    pub fn as_f64(&self) -> f64 {
        self.value.unwrap_or(f64::INFINITY)
    }

    pub fn is_undefined(&self) -> bool {
        self.value.is_none()
    }
}

/// Sample entropy with tolerance `r = r_frac · std` (population std).
///
/// Both counts use the first `N - m` templates, so `A` and `B` are taken
/// over the same template starts; unordered pairs, no self-matches.
pub fn sample_entropy<T: Real>(series: &[T], m: usize, r_frac: f64) -> Result<SampleEntropy, MetricsError> {
    let n = series.len();
    if m == 0 || n <= m + 1 {
        return Err(MetricsError::TooShort { len: n, m });
    }
    let x: Vec<f64> = series.iter().map(|v| v.as_f64()).collect();
    let r = r_frac * scalar::std_dev(&x, 0);
    let starts = n - m;
    let (mut a, mut b) = (0u64, 0u64);
    for i in 0..starts {
        for j in i + 1..starts {
            if (0..m).all(|o| (x[i + o] - x[j + o]).abs() <= r) {
                b += 1;
                if (x[i + m] - x[j + m]).abs() <= r {
                    a += 1;
                }
            }
        }
    }
    let value = (a > 0 && b > 0).then(|| (b as f64 / a as f64).ln());
    Ok(SampleEntropy { value, a, b, m, r })
}

/// A maximal run `start..end` of samples below the mean flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QfWindow {
    pub start: usize,
    pub end: usize,
}

impl QfWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistentQf {
    pub flagged: bool,
    pub windows: Vec<QfWindow>,
    pub mean: f64,
}

/// Maximal runs of at least `min_run` samples strictly below the mean flag.
pub fn persistent_qf<T: Real>(qf: &[T], min_run: usize) -> PersistentQf {
    let mean = scalar::mean(qf);
    let mut windows = Vec::new();
    let mut start = None;
    for (i, &v) in qf.iter().enumerate() {
        match (v < mean, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if i - s >= min_run {
                    windows.push(QfWindow { start: s, end: i });
                }
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        if qf.len() - s >= min_run {
            windows.push(QfWindow { start: s, end: qf.len() });
        }
    }
    PersistentQf {
        flagged: !windows.is_empty(),
        windows,
        mean: mean.as_f64(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinLabel {
    Low,
    Mid,
    High,
}

impl BinLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BinLabel::Low => "low",
            BinLabel::Mid => "mid",
            BinLabel::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub labels: Vec<BinLabel>,
    pub min: f64,
    pub max: f64,
    /// All finite values were equal; every finite value is labeled low.
    pub degenerate_range: bool,
}

/// Splits `[min, max]` of the finite values into three equal bins, the last
/// one closed. `+∞` lands in the high bin and `-∞` in the low one.
pub fn bin_metrics(values: &[f64]) -> Result<Binning, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(index) = values.iter().position(|v| v.is_nan()) {
        return Err(MetricsError::NotANumber { index });
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let degenerate_range = !(max > min);
    let width = (max - min) / 3.0;
    let labels = values
        .iter()
        .map(|&v| {
            if v == f64::INFINITY {
                BinLabel::High
            } else if v == f64::NEG_INFINITY || degenerate_range {
                BinLabel::Low
            } else {
                match ((v - min) / width).floor() as i64 {
                    i64::MIN..=0 => BinLabel::Low,
                    1 => BinLabel::Mid,
                    _ => BinLabel::High,
                }
            }
        })
        .collect();
    Ok(Binning { labels, min, max, degenerate_range })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub hf_cutoff: f64,
    pub regularity_set: Vec<u32>,
    pub entropy_m: usize,
    pub entropy_r_frac: f64,
    pub qf_min_run: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            hf_cutoff: 6.0,
            regularity_set: vec![1, 2, 3, 4],
            entropy_m: 2,
            entropy_r_frac: 0.2,
            qf_min_run: HALF_YEAR_SAMPLES,
        }
    }
}

impl MetricsConfig {
    /// Regularity over the first five harmonics instead of four.
    pub fn with_five_harmonics(mut self) -> Self {
        self.regularity_set = vec![1, 2, 3, 4, 5];
        self
    }
}

/// Labels of one series within a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBins {
    /// Only set for unfiltered series.
    pub hf_variability: Option<BinLabel>,
    pub regularity: BinLabel,
    pub sample_entropy: BinLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationReport {
    pub hf_variability: f64,
    pub regularity: f64,
    pub sample_entropy: SampleEntropy,
    pub persistent_qf: Option<PersistentQf>,
    /// Filled in once the whole batch is known.
    pub bins: Option<MetricBins>,
}

pub fn characterize<T: Real>(
    series: &[T],
    qf: Option<&[T]>,
    dt_days: f64,
    cfg: &MetricsConfig,
) -> Result<CharacterizationReport, MetricsError> {
    let spec = fft_power(series, dt_days)?;
    Ok(CharacterizationReport {
        hf_variability: hf_variability(&spec, cfg.hf_cutoff),
        regularity: regularity(&spec, &cfg.regularity_set),
        sample_entropy: sample_entropy(series, cfg.entropy_m, cfg.entropy_r_frac)?,
        persistent_qf: qf.map(|q| persistent_qf(q, cfg.qf_min_run)),
        bins: None,
    })
}
