//! Pipeline configuration and its `key = value` file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use seasonal_modes::ingest::{ColumnRef, ColumnSpec, GapPolicy};
use seasonal_modes::linalg::SolverKind;
use seasonal_modes::metrics::MetricsConfig;
use seasonal_modes::nlsa::NlsaConfig;
use seasonal_modes::spectral::ClassifierConfig;
use seasonal_modes::ssa::{Method, SsaConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

/// Pre-decomposition filtering of the input series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Filter {
    None,
    /// Low-pass with the cutoff in cycles per year.
    Lowpass(f64),
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Filter::None => f.write_str("none"),
            Filter::Lowpass(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Filter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Filter::None);
        }
        match s.parse::<f64>() {
            Ok(c) if c > 0.0 && c.is_finite() => Ok(Filter::Lowpass(c)),
            _ => Err(format!("`{s}` is neither `none` nor a positive cutoff")),
        }
    }
}

impl From<Filter> for String {
    fn from(f: Filter) -> Self {
        f.to_string()
    }
}

impl TryFrom<String> for Filter {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Files, or directories whose `*.csv` entries are taken in name order.
    pub inputs: Vec<PathBuf>,
    pub columns: ColumnSpec,
    /// Embedding window in days; defaults to whole years up to half the series.
    pub window: Option<usize>,
    pub k: usize,
    pub filters: Vec<Filter>,
    pub methods: Vec<Method>,
    pub ssa: SsaConfig,
    pub nlsa: NlsaConfig,
    pub classifier: ClassifierConfig,
    pub metrics: MetricsConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
    /// Write per-combination plot data next to the report.
    pub plot_data: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            columns: ColumnSpec { has_header: true, ..ColumnSpec::default() },
            window: None,
            k: 16,
            filters: vec![Filter::None],
            methods: vec![Method::Ssa, Method::Nlsa],
            ssa: SsaConfig::default(),
            nlsa: NlsaConfig::default(),
            classifier: ClassifierConfig::default(),
            metrics: MetricsConfig::default(),
            output_dir: None,
            seed: 0,
            plot_data: true,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|e| ConfigError::Value {
                key: key.into(),
                reason: format!("`{s}`: {e}"),
            })
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::Value {
        key: key.into(),
        reason: format!("`{}`: {e}", value.trim()),
    })
}

fn parse_char(key: &str, value: &str) -> Result<char, ConfigError> {
    let v = value.trim();
    let v = match v {
        "tab" | "\\t" => "\t",
        "semicolon" => ";",
        "comma" => ",",
        other => other,
    };
    let mut chars = v.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(ConfigError::Value {
            key: key.into(),
            reason: format!("expected a single character, got `{v}`"),
        }),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(ConfigError::Value {
            key: key.into(),
            reason: format!("expected a boolean, got `{other}`"),
        }),
    }
}

pub fn parse_methods(key: &str, value: &str) -> Result<Vec<Method>, ConfigError> {
    let mut out = Vec::new();
    for item in value.split(',').map(|s| s.trim().to_ascii_lowercase()) {
        match item.as_str() {
            "ssa" => out.push(Method::Ssa),
            "nlsa" => out.push(Method::Nlsa),
            "both" => out.extend([Method::Ssa, Method::Nlsa]),
            "" => {}
            other => {
                return Err(ConfigError::Value {
                    key: key.into(),
                    reason: format!("unknown method `{other}`"),
                })
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Optional count where `none` or `0` disables it.
fn parse_opt_count(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    match value.trim() {
        "none" | "off" | "0" | "" => Ok(None),
        v => parse_one(key, v).map(Some),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        match key {
            "input" | "inputs" => self.inputs.extend(value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from)),
            "date_column" => self.columns.date_column = ColumnRef::parse(value),
            "value_column" => self.columns.value_column = ColumnRef::parse(value),
            "qf_column" => {
                self.columns.qf_column = match value.trim() {
                    "" | "none" => None,
                    v => Some(ColumnRef::parse(v)),
                }
            }
            "delimiter" => self.columns.delimiter = parse_char(key, value)?,
            "decimal_mark" => self.columns.decimal_mark = parse_char(key, value)?,
            "header" => self.columns.has_header = parse_bool(key, value)?,
            "gaps" => {
                self.columns.gap_policy = match value.trim() {
                    "reject" => GapPolicy::Reject,
                    "interpolate" => GapPolicy::Interpolate,
                    other => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            reason: format!("expected `reject` or `interpolate`, got `{other}`"),
                        })
                    }
                }
            }
            "window" => {
                self.window = match value.trim() {
                    "auto" => None,
                    v => Some(parse_one(key, v)?),
                }
            }
            "k" => self.k = parse_one(key, value)?,
            "filters" => self.filters = parse_list(key, value)?,
            "methods" => self.methods = parse_methods(key, value)?,
            "eps_f" => self.classifier.eps_f = parse_one(key, value)?,
            "eps_p" => self.classifier.eps_p = parse_one(key, value)?,
            "harmonic_set" => self.classifier.harmonic_set = parse_list(key, value)?,
            "regularity_set" => self.metrics.regularity_set = parse_list(key, value)?,
            "output" => self.output_dir = Some(PathBuf::from(value.trim())),
            "seed" => self.seed = parse_one(key, value)?,
            "plots" => self.plot_data = parse_bool(key, value)?,
            "solver" => {
                let kind = match value.trim() {
                    "auto" => SolverKind::Auto,
                    "dense" => SolverKind::Dense,
                    "krylov" => SolverKind::Krylov,
                    other => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            reason: format!("expected auto, dense, or krylov, got `{other}`"),
                        })
                    }
                };
                self.ssa.eigen.solver = kind;
                self.nlsa.eigen.solver = kind;
            }
            "eigen_tol" => {
                let tol = parse_one(key, value)?;
                self.ssa.eigen.tol = tol;
                self.nlsa.eigen.tol = tol;
            }
            "nlsa.subset" => self.nlsa.subset_size = parse_one(key, value)?,
            "nlsa.runs" => self.nlsa.n_runs = parse_one(key, value)?,
            "nlsa.grid_points" => self.nlsa.grid_points = parse_one(key, value)?,
            "nlsa.grid_min" => self.nlsa.grid_min = parse_one(key, value)?,
            "nlsa.grid_max" => self.nlsa.grid_max = parse_one(key, value)?,
            "nlsa.knn" => self.nlsa.knn = parse_opt_count(key, value)?,
            "nlsa.epsilon" => {
                self.nlsa.epsilon = match value.trim() {
                    "auto" | "" => None,
                    v => Some(parse_one(key, v)?),
                }
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment and blank lines are skipped.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            self.set(key, value).map_err(|e| match e {
                ConfigError::Value { .. } | ConfigError::UnknownKey(_) => ConfigError::Syntax {
                    line: i + 1,
                    reason: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Propagates the master seed into the solvers and checks consistency.
    pub fn finalize(mut self) -> Result<Self, ConfigError> {
        self.nlsa.seed = self.seed;
        self.nlsa.eigen.seed = self.seed ^ 0x5eed;
        self.ssa.eigen.seed = self.seed ^ 0x5eed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.methods.is_empty() {
            return invalid("at least one method is required".into());
        }
        if self.filters.is_empty() {
            return invalid("at least one filter is required".into());
        }
        if self.k == 0 {
            return invalid("k must be positive".into());
        }
        if self.window == Some(0) {
            return invalid("window must be positive".into());
        }
        let c = &self.classifier;
        if !(c.eps_f > 0.0 && c.eps_p > 0.0) {
            return invalid("eps_f and eps_p must be positive".into());
        }
        if c.harmonic_set.is_empty() || c.harmonic_set.contains(&0) {
            return invalid("harmonic_set must list positive integers".into());
        }
        if self.metrics.regularity_set.is_empty() {
            return invalid("regularity_set must not be empty".into());
        }
        self.columns.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.nlsa.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let text = "
            # sample configuration
            input = a.csv, b.csv
            input = more/
            header = true
            date_column = TIMESTAMP
            value_column = GPP   # trailing comment
            qf_column = GPP_QC
            delimiter = semicolon
            decimal_mark = ,
            gaps = interpolate
            window = 2556
            k = 12
            filters = none, 6, 4
            methods = both
            harmonic_set = 1,2,3,4
            nlsa.knn = 64
            nlsa.epsilon = 3.5
            solver = krylov
            seed = 42
            plots = false
        ";
        let cfg = PipelineConfig::parse_str(text).unwrap().finalize().unwrap();
        assert_eq!(cfg.inputs.len(), 3);
        assert_eq!(cfg.columns.value_column, ColumnRef::Name("GPP".into()));
        assert_eq!(cfg.columns.delimiter, ';');
        assert_eq!(cfg.columns.decimal_mark, ',');
        assert_eq!(cfg.window, Some(2556));
        assert_eq!(cfg.filters, vec![Filter::None, Filter::Lowpass(6.0), Filter::Lowpass(4.0)]);
        assert_eq!(cfg.methods, vec![Method::Ssa, Method::Nlsa]);
        assert_eq!(cfg.nlsa.knn, Some(64));
        assert_eq!(cfg.nlsa.epsilon, Some(3.5));
        assert_eq!(cfg.nlsa.seed, 42);
        assert_eq!(cfg.ssa.eigen.solver, SolverKind::Krylov);
        assert!(!cfg.plot_data);
    }

    #[test]
    fn reports_line_of_bad_entry() {
        let err = PipelineConfig::parse_str("k = 4\nfilters = none, -3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");
        let err = PipelineConfig::parse_str("colour = blue").unwrap_err();
        assert!(err.to_string().contains("colour"));
        let err = PipelineConfig::parse_str("just words").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn rejects_empty_selections() {
        let cfg = PipelineConfig { methods: vec![], ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig { filters: vec![], ..PipelineConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn filter_round_trip() {
        for f in [Filter::None, Filter::Lowpass(6.0), Filter::Lowpass(2.5)] {
            assert_eq!(f.to_string().parse::<Filter>().unwrap(), f);
        }
        assert!("0".parse::<Filter>().is_err());
    }
}
