//! `prevest`: simulate testing regimens, run the scenario suites, and
//! estimate daily prevalence from testing matrices.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use prevest_core::dataio::{
    anonymize_shuffle, load_toml, parse_testing_matrix, simulation_matrix, write_table, write_testing_matrix,
    TestingMatrix,
};
use prevest_core::estimators::series::write_series;
use prevest_core::estimators::OutputFormat;
use prevest_core::pipeline::{analyze, AnalysisConfig};
use prevest_core::population::Day;
use prevest_core::scenario::{run_scenario, scenario, summarize, trajectory_summary, RunOptions, SCENARIO_NAMES};
use prevest_core::simulator::{simulate, ScenarioConfig};
use prevest_core::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_PARSE: u8 = 4;
const EXIT_RUNTIME: u8 = 5;

/// HT-K replicate count below which the scenario harness warns.
const HTK_RECOMMENDED: u64 = 10_000;

#[derive(Parser, Debug)]
#[command(name = "prevest", version, about = "Prevalence estimation under testing-with-isolation regimens")]
#[command(after_help = "Exit codes: 0 success, 2 usage, 3 configuration, 4 input parse, 5 runtime failure.")]
struct Cli {
    /// Worker threads for replicate fan-out; results do not depend on it.
    #[arg(long, global = true, env = "PREVEST_JOBS", value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,

    /// Also write the JSON run report to this file (it always goes to stderr).
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a configured population and write the mean daily trajectory.
    Simulate(SimulateArgs),
    /// Run a named scenario and write per-day bias, RMSE and coverage.
    Scenario(ScenarioArgs),
    /// Adjust a testing matrix and write daily TPR and HT-E estimates.
    #[command(visible_alias = "estimate")]
    Analyze(AnalyzeArgs),
    /// Shuffle a testing matrix so rows no longer identify individuals.
    Anonymize(AnonymizeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Jsonl => OutputFormat::Jsonl,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    replicates: u64,
    /// Overrides the seed in the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the population size in the configuration file.
    #[arg(long)]
    population: Option<usize>,
    /// Trajectory output; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Also export the first replicate as a testing matrix (CSV).
    #[arg(long, value_name = "PATH")]
    matrix: Option<PathBuf>,
    /// Calendar date of day 1 in the exported matrix.
    #[arg(long, default_value = "2020-08-17")]
    start_date: NaiveDate,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    #[arg(value_parser = PossibleValuesParser::new(SCENARIO_NAMES))]
    name: String,
    /// Replicates for TPR and HT-E.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    replicates: u64,
    /// Replicates for HT-K.
    #[arg(long, default_value_t = HTK_RECOMMENDED)]
    htk_replicates: u64,
    /// BCa bootstrap iterations per HT-E series; 0 skips HT-E intervals.
    #[arg(long, default_value_t = 399)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the scenario's population size.
    #[arg(long)]
    population: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Testing matrix (CSV: id column optional, one column per date).
    matrix: PathBuf,
    /// Analysis configuration (TOML with [policy], [intervals], [ht]).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured bootstrap iterations.
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate series output; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct AnonymizeArgs {
    matrix: PathBuf,
    /// Analysis configuration; only its [policy] table is used.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct RunReport {
    command: String,
    config_digest: String,
    seed: u64,
    wall_time_secs: f64,
    outputs: Vec<PathBuf>,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    excluded_days: Option<Vec<Day>>,
}

impl RunReport {
    fn new(command: &str, config: &impl Serialize, seed: u64) -> anyhow::Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        Ok(RunReport {
            command: command.to_string(),
            config_digest: format!("sha256:{:x}", Sha256::digest(&canonical)),
            seed,
            wall_time_secs: 0.0,
            outputs: Vec::new(),
            warnings: Vec::new(),
            excluded_days: None,
        })
    }

    fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("prevest: warning: {msg}");
        self.warnings.push(msg);
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::UninformativeTest { .. }) => EXIT_CONFIG,
        Some(Error::UnknownScenario { .. }) => EXIT_USAGE,
        Some(Error::Parse { .. }) => EXIT_PARSE,
        _ => EXIT_RUNTIME,
    }
}

/// Runs `f` against a buffered file, or stdout when `path` is `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            eprintln!("prevest: wrote {}", p.display());
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn read_matrix(path: &Path) -> anyhow::Result<TestingMatrix> {
    let file = File::open(path).map_err(Error::Io).with_context(|| format!("opening {}", path.display()))?;
    let m = parse_testing_matrix(io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    Ok(m)
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        Some(p) => Ok(load_toml(p).with_context(|| format!("loading {}", p.display()))?),
        None => Ok(T::default()),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<RunReport> {
    let mut config: ScenarioConfig = load_toml(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(n) = a.population {
        config.population_size = n;
    }
    config.validate()?;
    let mut report = RunReport::new("simulate", &(&config, a.replicates), config.seed)?;
    let sims = (0..a.replicates)
        .into_par_iter()
        .map(|r| simulate(&config, r))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = trajectory_summary(&sims);
    with_output(a.out.as_deref(), |w| Ok(write_table(w, &rows, a.format.into())?))?;
    report.outputs.extend(a.out.clone());
    if let Some(path) = &a.matrix {
        let m = simulation_matrix(&sims[0], a.start_date);
        with_output(Some(path), |w| Ok(write_testing_matrix(w, &m)?))?;
        report.outputs.push(path.clone());
    }
    Ok(report)
}

fn cmd_scenario(a: &ScenarioArgs) -> anyhow::Result<RunReport> {
    let mut sc = scenario(&a.name)?;
    if let Some(n) = a.population {
        sc.config.population_size = n;
    }
    let opts = RunOptions {
        replicates: a.replicates,
        htk_replicates: a.htk_replicates,
        bootstrap_iterations: a.bootstrap,
        seed: a.seed,
        ..Default::default()
    };
    let digest_input = serde_json::json!({
        "scenario": sc.name,
        "config": sc.config,
        "replicates": opts.replicates,
        "htk_replicates": opts.htk_replicates,
        "bootstrap": opts.bootstrap_iterations,
        "level": opts.level,
        "ht": opts.ht,
    });
    let mut report = RunReport::new("scenario", &digest_input, a.seed)?;
    if !sc.ht_known {
        report.warn(format!("HT-K is not available for `{}`; it is omitted", sc.name));
    } else if a.htk_replicates < HTK_RECOMMENDED {
        report.warn(format!(
            "HT-K uses {} replicates (fewer than the recommended {HTK_RECOMMENDED})",
            a.htk_replicates
        ));
    }
    eprintln!(
        "prevest: running `{}` with {} replicate(s) on {} thread(s)",
        sc.name,
        opts.replicates.max(if sc.ht_known { opts.htk_replicates } else { 0 }),
        rayon::current_num_threads()
    );
    let results = run_scenario(&sc, &opts)?;
    let rows = summarize(&sc.name, &results, sc.config.horizon_days);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ext = match a.format {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    };
    let path = a.out.join(format!("{}.summary.{ext}", sc.name));
    with_output(Some(&path), |w| Ok(write_table(w, &rows, a.format.into())?))?;
    report.outputs.push(path);
    Ok(report)
}

fn cmd_analyze(a: &AnalyzeArgs) -> anyhow::Result<RunReport> {
    let mut config: AnalysisConfig = load_config(a.config.as_deref())?;
    if let Some(b) = a.bootstrap {
        config.intervals.bootstrap_iterations = b;
    }
    let matrix = read_matrix(&a.matrix)?;
    let mut report = RunReport::new("analyze", &config, a.seed)?;
    let analysis = analyze(&matrix, &config.policy, &config.intervals, &config.ht, a.seed)?;
    for w in &analysis.warnings {
        report.warn(w.clone());
    }
    with_output(a.out.as_deref(), |w| Ok(write_series(w, &analysis.records, a.format.into())?))?;
    report.outputs.extend(a.out.clone());
    report.excluded_days = Some(analysis.excluded_days);
    Ok(report)
}

fn cmd_anonymize(a: &AnonymizeArgs) -> anyhow::Result<RunReport> {
    let config: AnalysisConfig = load_config(a.config.as_deref())?;
    let matrix = read_matrix(&a.matrix)?;
    let mut report = RunReport::new("anonymize", &config.policy, a.seed)?;
    let shuffled = anonymize_shuffle(&matrix, &config.policy, a.seed)?;
    with_output(Some(&a.out), |w| Ok(write_testing_matrix(w, &shuffled)?))?;
    report.outputs.push(a.out.clone());
    Ok(report)
}

fn run(cli: &Cli) -> anyhow::Result<RunReport> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
            .context("starting the worker pool")?;
    }
    let start = Instant::now();
    let mut report = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Scenario(a) => cmd_scenario(a)?,
        Command::Analyze(a) => cmd_analyze(a)?,
        Command::Anonymize(a) => cmd_anonymize(a)?,
    };
    report.wall_time_secs = start.elapsed().as_secs_f64();
    if let Some(missing) = report.outputs.iter().find(|p| !p.exists()) {
        bail!("output {} was not written", missing.display());
    }
    let json = serde_json::to_string(&report)?;
    eprintln!("{json}");
    if let Some(path) = &cli.report {
        std::fs::write(path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prevest: error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
