//! Batch orchestration: load, filter, embed, decompose, classify, reconstruct,
//! characterize, and report.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use seasonal_modes::embedding::{default_window, delay_embed, standardize_rows};
use seasonal_modes::ingest::{parse_flux_csv, ColumnRef, validate_series, FluxSeries, STEP_DAYS};
use seasonal_modes::metrics::{bin_metrics, characterize, CharacterizationReport, MetricBins};
use seasonal_modes::nlsa::{nlsa, EpsilonEstimate, NlsaConfig};
use seasonal_modes::spectral::{
    build_seasonal_cycle, classify_modes, fft_power, lowpass, pair_harmonics, write_cycle_csv, write_spectrum_csv,
    Category, HarmonicInventory, PowerSpectrum, SeasonalCycle,
};
use seasonal_modes::ssa::{ssa_decompose, Method, ModeSet};
use serde::{Deserialize, Serialize};

use crate::config::{Filter, PipelineConfig};

const DT_DAYS: f64 = STEP_DAYS as f64;

/// How many leading modes get plot data.
pub const PLOTTED_MODES: usize = 12;

/// Settings that shaped the results, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub window: Option<usize>,
    pub k: usize,
    pub filters: Vec<Filter>,
    pub methods: Vec<Method>,
    pub eps_f: f64,
    pub eps_p: f64,
    pub harmonic_set: Vec<u32>,
    pub peak_support_sigmas: f64,
    pub regularity_set: Vec<u32>,
    pub seed: u64,
    pub nlsa: NlsaConfig,
    /// Kernel normalization used to build the transition matrix.
    pub kernel_normalization: String,
}

impl ConfigEcho {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            window: cfg.window,
            k: cfg.k,
            filters: cfg.filters.clone(),
            methods: cfg.methods.clone(),
            eps_f: cfg.classifier.eps_f,
            eps_p: cfg.classifier.eps_p,
            harmonic_set: cfg.classifier.harmonic_set.clone(),
            peak_support_sigmas: cfg.classifier.support_sigmas,
            regularity_set: cfg.metrics.regularity_set.clone(),
            seed: cfg.seed,
            nlsa: cfg.nlsa.clone(),
            kernel_normalization: "q = J 1; K = Q^-1 J Q^-1; d = K 1; T = D^-1 K".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub k: usize,
    /// Singular values (SSA) or transition eigenvalues (NLSA).
    pub spectrum: Vec<f64>,
    pub variance: Vec<f64>,
    pub epsilon: Option<f64>,
    pub epsilon_estimate: Option<EpsilonEstimate>,
    pub inventory: HarmonicInventory,
    pub category: Category,
    pub harmonics_used: Vec<u32>,
}

impl MethodResult {
    pub fn n_pairs(&self) -> usize {
        self.inventory.pairs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok(Box<MethodResult>),
    Failed { error: String },
}

impl Outcome {
    pub fn result(&self) -> Option<&MethodResult> {
        match self {
            Outcome::Ok(r) => Some(r),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub filter: Filter,
    pub window: Option<usize>,
    pub characterization: Option<CharacterizationReport>,
    pub error: Option<String>,
    pub methods: Vec<MethodReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub id: String,
    pub path: String,
    pub site_id: String,
    pub variable: String,
    pub n_samples: Option<usize>,
    pub start_date: Option<NaiveDate>,
    pub error: Option<String>,
    pub filters: Vec<FilterReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ConfigEcho,
    pub series: Vec<SeriesReport>,
    /// Batch-level problems, such as finding no input at all.
    pub errors: Vec<String>,
}

impl RunReport {
    /// Every (series, filter, method) outcome in report order.
    pub fn outcomes(&self) -> impl Iterator<Item = (&SeriesReport, &FilterReport, &MethodReport)> {
        self.series
            .iter()
            .flat_map(|s| s.filters.iter().flat_map(move |f| f.methods.iter().map(move |m| (s, f, m))))
    }

    pub fn any_succeeded(&self) -> bool {
        self.outcomes().any(|(_, _, m)| m.outcome.result().is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub series: String,
    pub filter: Filter,
    pub stage: String,
    pub seconds: f64,
}

pub struct PipelineOutput {
    pub report: RunReport,
    pub timings: Vec<Timing>,
}

/// A loaded input: either a parsed series or the reason it could not be read.
pub struct InputSeries {
    pub id: String,
    pub path: String,
    pub series: Result<FluxSeries<f64>, String>,
}

/// Expands directories to their `*.csv` files, sorted by name.
pub fn expand_inputs(inputs: &[PathBuf]) -> (Vec<PathBuf>, Vec<String>) {
    let mut files = Vec::new();
    let mut errors = Vec::new();
    for p in inputs {
        if p.is_dir() {
            match fs::read_dir(p) {
                Ok(entries) => {
                    let mut found: Vec<PathBuf> = entries
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|f| f.is_file() && f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                        .collect();
                    found.sort();
                    files.extend(found);
                }
                Err(e) => errors.push(format!("{}: {e}", p.display())),
            }
        } else {
            files.push(p.clone());
        }
    }
    (files, errors)
}

fn series_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn variable_name(cfg: &PipelineConfig) -> String {
    match &cfg.columns.value_column {
        ColumnRef::Name(n) => n.clone(),
        ColumnRef::Index(i) => format!("column_{i}"),
    }
}

pub fn load_inputs(cfg: &PipelineConfig) -> (Vec<InputSeries>, Vec<String>) {
    let (files, errors) = expand_inputs(&cfg.inputs);
    let mut ids: Vec<String> = files.iter().map(|f| series_id(f)).collect();
    // disambiguate equal stems from different directories by full path
    for i in 0..ids.len() {
        if ids.iter().filter(|x| **x == ids[i]).count() > 1 {
            ids[i] = files[i].display().to_string();
        }
    }
    let loaded = files
        .iter()
        .zip(ids)
        .map(|(f, id)| {
            let series = File::open(f)
                .map_err(|e| e.to_string())
                .and_then(|file| parse_flux_csv::<f64, _>(file, &cfg.columns).map_err(|e| e.to_string()))
                .and_then(|s| validate_series(s, 8).map_err(|e| e.to_string()))
                .map(|s| s.with_labels(series_id(f), variable_name(cfg)));
            InputSeries { id, path: f.display().to_string(), series }
        })
        .collect();
    (loaded, errors)
}

/// In-memory results of one (series, filter) for plot output.
pub struct Artifacts {
    pub signal: Vec<f64>,
    pub signal_spectrum: Option<PowerSpectrum<f64>>,
    pub methods: Vec<(Method, ModeSet<f64>, Option<SeasonalCycle<f64>>)>,
}

fn decompose(
    method: Method,
    x: &seasonal_modes::embedding::TrajectoryMatrix<f64>,
    cfg: &PipelineConfig,
) -> Result<(ModeSet<f64>, Option<f64>, Option<EpsilonEstimate>), String> {
    match method {
        Method::Ssa => {
            let k = cfg.k.min(x.window()).min(x.n_windows());
            ssa_decompose(x, k, &cfg.ssa).map(|m| (m, None, None)).map_err(|e| e.to_string())
        }
        Method::Nlsa => {
            let k = cfg.k.min(x.window()).min(x.n_windows() - 1);
            let out = nlsa(x, k, &cfg.nlsa).map_err(|e| e.to_string())?;
            Ok((out.modes, Some(out.epsilon), out.estimate))
        }
    }
}

fn failed_methods(cfg: &PipelineConfig, error: &str) -> Vec<MethodReport> {
    cfg.methods
        .iter()
        .map(|&method| MethodReport { method, outcome: Outcome::Failed { error: error.to_string() } })
        .collect()
}

/// Runs one series through one filter and every configured method.
pub fn analyze_filter(
    series: &FluxSeries<f64>,
    id: &str,
    filter: Filter,
    cfg: &PipelineConfig,
    timings: &mut Vec<Timing>,
) -> (FilterReport, Artifacts) {
    let mut time = |stage: &str, start: Instant| {
        timings.push(Timing { series: id.into(), filter, stage: stage.into(), seconds: start.elapsed().as_secs_f64() })
    };
    let n = series.len();
    let fail = |error: String, window: Option<usize>, signal: Vec<f64>, ch: Option<CharacterizationReport>| {
        (
            FilterReport { filter, window, characterization: ch, methods: failed_methods(cfg, &error), error: Some(error) },
            Artifacts { signal, signal_spectrum: None, methods: Vec::new() },
        )
    };

    let signal = match filter {
        Filter::None => series.values.clone(),
        Filter::Lowpass(c) => match lowpass(&series.values, c, DT_DAYS) {
            Ok(v) => v,
            Err(e) => return fail(format!("lowpass: {e}"), None, Vec::new(), None),
        },
    };
    let t0 = Instant::now();
    let characterization = characterize(&signal, series.qf.as_deref(), DT_DAYS, &cfg.metrics).ok();
    time("metrics", t0);

    let window = cfg.window.unwrap_or_else(|| default_window(n));
    let t0 = Instant::now();
    let x = match delay_embed(&signal, window).and_then(standardize_rows) {
        Ok(x) => x,
        Err(e) => return fail(format!("embedding: {e}"), Some(window), signal, characterization),
    };
    time("embedding", t0);

    let mut reports = Vec::new();
    let mut method_artifacts = Vec::new();
    for &method in &cfg.methods {
        let t0 = Instant::now();
        let outcome = decompose(method, &x, cfg).and_then(|(ms, epsilon, estimate)| {
            let labels = classify_modes(&ms, DT_DAYS, &cfg.classifier).map_err(|e| e.to_string())?;
            let inventory = pair_harmonics(&labels);
            let cycle = if inventory.pairs.is_empty() {
                None
            } else {
                Some(build_seasonal_cycle(&ms, &inventory, x.stats(), n).map_err(|e| e.to_string())?)
            };
            let result = MethodResult {
                k: ms.k(),
                spectrum: ms.spectrum.clone(),
                variance: ms.variance.clone(),
                epsilon,
                epsilon_estimate: estimate,
                category: inventory.category,
                harmonics_used: inventory.paired_harmonics(),
                inventory,
            };
            method_artifacts.push((method, ms, cycle));
            Ok(result)
        });
        time(&method.to_string(), t0);
        reports.push(MethodReport {
            method,
            outcome: match outcome {
                Ok(r) => Outcome::Ok(Box::new(r)),
                Err(error) => Outcome::Failed { error },
            },
        });
    }
    let signal_spectrum = fft_power(&signal, DT_DAYS).ok();
    (
        FilterReport { filter, window: Some(window), characterization, error: None, methods: reports },
        Artifacts { signal, signal_spectrum, methods: method_artifacts },
    )
}

/// Labels each metric against the batch: per filter across series, with
/// high-frequency variability binned over unfiltered series only.
pub fn assign_bins(report: &mut RunReport) {
    let filters = report.config.filters.clone();
    for filter in filters {
        let mut slots: Vec<(usize, usize)> = Vec::new();
        for (si, s) in report.series.iter().enumerate() {
            for (fi, f) in s.filters.iter().enumerate() {
                if f.filter == filter && f.characterization.is_some() {
                    slots.push((si, fi));
                }
            }
        }
        if slots.is_empty() {
            continue;
        }
        let get = |r: &RunReport, (si, fi): (usize, usize)| -> CharacterizationReport {
            r.series[si].filters[fi].characterization.clone().expect("filtered above")
        };
        let chars: Vec<CharacterizationReport> = slots.iter().map(|&s| get(report, s)).collect();
        let reg = bin_metrics(&chars.iter().map(|c| c.regularity).collect::<Vec<_>>()).expect("non-empty");
        let ent = bin_metrics(&chars.iter().map(|c| c.sample_entropy.as_f64()).collect::<Vec<_>>()).expect("non-empty");
        let hf = (filter == Filter::None)
            .then(|| bin_metrics(&chars.iter().map(|c| c.hf_variability).collect::<Vec<_>>()).expect("non-empty"));
        for (i, &(si, fi)) in slots.iter().enumerate() {
            let c = report.series[si].filters[fi].characterization.as_mut().expect("filtered above");
            c.bins = Some(MetricBins {
                hf_variability: hf.as_ref().map(|b| b.labels[i]),
                regularity: reg.labels[i],
                sample_entropy: ent.labels[i],
            });
        }
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> PipelineOutput {
    let (inputs, mut errors) = load_inputs(cfg);
    if inputs.is_empty() {
        errors.push("no input series found".into());
    }
    let tasks: Vec<(usize, Filter)> = (0..inputs.len())
        .flat_map(|i| cfg.filters.iter().map(move |&f| (i, f)))
        .collect();
    let results: Vec<(FilterReport, Vec<Timing>)> = tasks
        .par_iter()
        .map(|&(i, filter)| {
            let input = &inputs[i];
            let mut timings = Vec::new();
            let report = match &input.series {
                Err(e) => FilterReport {
                    filter,
                    window: None,
                    characterization: None,
                    error: Some(format!("load: {e}")),
                    methods: failed_methods(cfg, &format!("load: {e}")),
                },
                Ok(series) => {
                    let (report, artifacts) = analyze_filter(series, &input.id, filter, cfg, &mut timings);
                    if let (Some(dir), true) = (&cfg.output_dir, cfg.plot_data) {
                        if let Err(e) = write_plot_data(dir, &input.id, filter, series.start_date, &artifacts) {
                            let mut report = report;
                            report.error = Some(format!("plot data: {e}"));
                            return (report, timings);
                        }
                    }
                    report
                }
            };
            (report, timings)
        })
        .collect();

    let mut results = results.into_iter();
    let mut timings = Vec::new();
    let series = inputs
        .iter()
        .map(|input| {
            let filters = cfg
                .filters
                .iter()
                .map(|_| {
                    let (r, t) = results.next().expect("one result per task");
                    timings.extend(t);
                    r
                })
                .collect();
            let (site_id, variable, n, start, error) = match &input.series {
                Ok(s) => (s.site_id.clone(), s.variable.clone(), Some(s.len()), Some(s.start_date), None),
                Err(e) => (input.id.clone(), variable_name(cfg), None, None, Some(e.clone())),
            };
            SeriesReport {
                id: input.id.clone(),
                path: input.path.clone(),
                site_id,
                variable,
                n_samples: n,
                start_date: start,
                error,
                filters,
            }
        })
        .collect();
    let mut report = RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        config: ConfigEcho::new(cfg),
        series,
        errors,
    };
    assign_bins(&mut report);
    PipelineOutput { report, timings }
}

fn filter_dir_name(filter: Filter) -> String {
    match filter {
        Filter::None => "none".into(),
        Filter::Lowpass(c) => format!("lowpass_{c}"),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, std::io::Error> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

/// Signal, spectra, seasonal cycles, and leading modes as delimited text.
pub fn write_plot_data(
    out: &Path,
    id: &str,
    filter: Filter,
    start: NaiveDate,
    artifacts: &Artifacts,
) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let dir = out.join("plots").join(id).join(filter_dir_name(filter));
    fs::create_dir_all(&dir)?;

    let mut w = csv_writer(&dir.join("signal.csv"))?;
    w.write_record(["date", "value"])?;
    for (d, v) in start.iter_days().zip(&artifacts.signal) {
        w.write_record([d.format("%Y-%m-%d").to_string(), v.to_string()])?;
    }
    w.flush()?;
    if let Some(spec) = &artifacts.signal_spectrum {
        write_spectrum_csv(spec, BufWriter::new(File::create(dir.join("signal_spectrum.csv"))?))?;
    }

    for (method, ms, cycle) in &artifacts.methods {
        let tag = method.to_string().to_ascii_lowercase();
        if let Some(c) = cycle {
            write_cycle_csv(c, start, BufWriter::new(File::create(dir.join(format!("{tag}_cycle.csv")))?))?;
        }
        let mut w = csv_writer(&dir.join(format!("{tag}_spectrum.csv")))?;
        w.write_record(["mode", "spectrum", "variance"])?;
        for (i, (s, v)) in ms.spectrum.iter().zip(&ms.variance).enumerate() {
            w.write_record([i.to_string(), s.to_string(), v.to_string()])?;
        }
        w.flush()?;

        let shown = ms.k().min(PLOTTED_MODES);
        let header: Vec<String> = (0..shown).map(|i| format!("mode_{i}")).collect();
        let mut w = csv_writer(&dir.join(format!("{tag}_modes.csv")))?;
        w.write_record(std::iter::once("lag".to_string()).chain(header.iter().cloned()))?;
        for lag in 0..ms.window() {
            w.write_record(std::iter::once(lag.to_string()).chain((0..shown).map(|i| ms.modes[(lag, i)].to_string())))?;
        }
        w.flush()?;

        let spectra: Vec<PowerSpectrum<f64>> = (0..shown)
            .map(|i| fft_power(&ms.mode(i), DT_DAYS))
            .collect::<Result<_, _>>()?;
        let mut w = csv_writer(&dir.join(format!("{tag}_mode_spectra.csv")))?;
        w.write_record(std::iter::once("freq".to_string()).chain(header.iter().cloned()))?;
        if let Some(first) = spectra.first() {
            for (b, f) in first.freqs.iter().enumerate() {
                w.write_record(std::iter::once(f.to_string()).chain(spectra.iter().map(|s| format!("{:e}", s.power[b]))))?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Writes `report.json`, `summary.tsv`, and `timings.json` into `dir`.
pub fn write_outputs(dir: &Path, output: &PipelineOutput) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), output.report.to_json())?;
    let summary = crate::summary::summarize(std::slice::from_ref(&output.report));
    fs::write(dir.join("summary.tsv"), summary.to_tsv())?;
    fs::write(
        dir.join("timings.json"),
        serde_json::to_string_pretty(&output.timings).expect("timings serialize") + "\n",
    )?;
    Ok(())
}
