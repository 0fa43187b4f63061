use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seasonal_modes::synth::{generate, write_synthetic_csv, AmplitudeChange, Harmonic, Noise, SignalRecipe};
use seasonal_modes_cli::config::PipelineConfig;
use seasonal_modes_cli::pipeline::{run_pipeline, write_outputs, RunReport};
use seasonal_modes_cli::summary::summarize;

#[derive(Parser)]
#[command(name = "seasonal-modes", version, about = "Harmonic and seasonal-cycle analysis of daily series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one or more series and write report.json, summary.tsv, and plot data.
    Run(RunArgs),
    /// Pool the category percentages of existing reports.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic daily series with known harmonic content.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` configuration file; flags below override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Input CSV files or directories of them.
    #[arg(short, long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Embedding window in days, or `auto`.
    #[arg(long)]
    window: Option<String>,
    /// Number of modes per method.
    #[arg(short)]
    k: Option<String>,
    /// Comma-separated filters: `none` or a low-pass cutoff in cycles per year.
    #[arg(long)]
    filters: Option<String>,
    /// `ssa`, `nlsa`, or `both`.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Sparse kernel with this many neighbours per point.
    #[arg(long)]
    knn: Option<String>,
    #[arg(long)]
    date_column: Option<String>,
    #[arg(long)]
    value_column: Option<String>,
    #[arg(long)]
    qf_column: Option<String>,
    /// Skip the per-series plot data.
    #[arg(long)]
    no_plots: bool,
    /// Any other configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4.0)]
    years: f64,
    /// Exact length in days; overrides --years.
    #[arg(long)]
    days: Option<usize>,
    /// Comma-separated `f:amplitude:phase` terms.
    #[arg(long, default_value = "1:1:0")]
    harmonics: String,
    /// `none`, `white:σ`, `broadband:σ:β`, or `hf:σ:cutoff`.
    #[arg(long, default_value = "none")]
    noise: String,
    /// Multiply the amplitude by a factor part way through, as `fraction:factor`.
    #[arg(long)]
    amp_change: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "SYN")]
    site: String,
    /// Output CSV; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>, String> {
    s.split(':')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad {what} `{s}`")))
        .collect()
}

fn parse_noise(s: &str) -> Result<Noise, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let v = if rest.is_empty() { vec![] } else { numbers(rest, "noise")? };
    match (kind.to_ascii_lowercase().as_str(), v.as_slice()) {
        ("none", []) => Ok(Noise::None),
        ("white", [sigma]) => Ok(Noise::White { sigma: *sigma }),
        ("broadband", [sigma, beta]) => Ok(Noise::Broadband { sigma: *sigma, beta: *beta }),
        ("hf", [sigma, cutoff]) => Ok(Noise::HighFrequency { sigma: *sigma, cutoff: *cutoff }),
        _ => Err(format!("bad noise `{s}`")),
    }
}

fn synth(args: SynthArgs) -> Result<(), String> {
    let harmonics = args
        .harmonics
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| match numbers(t, "harmonic")?.as_slice() {
            [f, a] => Ok(Harmonic::new(*f, *a, 0.0)),
            [f, a, p] => Ok(Harmonic::new(*f, *a, *p)),
            _ => Err(format!("bad harmonic `{t}`")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let amplitude_change = match &args.amp_change {
        None => None,
        Some(s) => match numbers(s, "amplitude change")?.as_slice() {
            [at_fraction, factor] => Some(AmplitudeChange { at_fraction: *at_fraction, factor: *factor }),
            _ => return Err(format!("bad amplitude change `{s}`")),
        },
    };
    let recipe = SignalRecipe {
        n_years: args.years,
        n_days: args.days,
        harmonics,
        noise: parse_noise(&args.noise)?,
        amplitude_change,
        seed: args.seed,
        site_id: args.site,
        ..SignalRecipe::default()
    };
    let synthetic = generate(&recipe).map_err(|e| e.to_string())?;
    match args.out {
        Some(path) => {
            let file = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            write_synthetic_csv(&synthetic, BufWriter::new(file))
        }
        None => write_synthetic_csv(&synthetic, std::io::stdout().lock()),
    }
    .map_err(|e| e.to_string())
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, String> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::from_file(p).map_err(|e| e.to_string())?,
        None => PipelineConfig::default(),
    };
    let flags = [
        ("window", &args.window),
        ("k", &args.k),
        ("filters", &args.filters),
        ("methods", &args.methods),
        ("seed", &args.seed),
        ("nlsa.knn", &args.knn),
        ("date_column", &args.date_column),
        ("value_column", &args.value_column),
        ("qf_column", &args.qf_column),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| e.to_string())?;
        }
    }
    for kv in &args.sets {
        let (key, value) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(key.trim(), value.trim()).map_err(|e| e.to_string())?;
    }
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs.clone();
    }
    if args.output.is_some() {
        cfg.output_dir = args.output.clone();
    }
    if args.no_plots {
        cfg.plot_data = false;
    }
    cfg.finalize().map_err(|e| e.to_string())
}

fn run(args: RunArgs) -> ExitCode {
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    let output = run_pipeline(&cfg);
    let report = &output.report;
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    for (s, f, m) in report.outcomes() {
        match m.outcome.result() {
            Some(r) => eprintln!("{}\t{}\t{}\t{}", s.id, f.filter, m.method, r.category),
            None => eprintln!("{}\t{}\t{}\tfailed", s.id, f.filter, m.method),
        }
    }
    match &cfg.output_dir {
        Some(dir) => {
            if let Err(e) = write_outputs(dir, &output) {
                eprintln!("error: writing {}: {e}", dir.display());
                return ExitCode::from(1);
            }
        }
        None => {
            let mut out = std::io::stdout().lock();
            if out.write_all(report.to_json().as_bytes()).is_err() {
                return ExitCode::from(1);
            }
        }
    }
    if report.any_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn summarize_cmd(paths: &[PathBuf], output: Option<PathBuf>) -> Result<(), String> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str::<RunReport>(&text).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tsv = summarize(&reports).to_tsv();
    match output {
        Some(p) => std::fs::write(&p, tsv).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout().lock().write_all(tsv.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Summarize { reports, output } => match summarize_cmd(&reports, output) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Synth(args) => match synth(args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
