use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmr_cli::config::{resolve_estimate, resolve_simulate, Overrides, RunConfig};
use cmr_cli::estimate::run_estimate;
use cmr_cli::study::{run_simulate, write_artifacts, write_metrics};
use cmr_cli::{CliError, CliResult};

/// Causal mean ratio estimation for count outcomes.
#[derive(Parser)]
#[command(name = "cmr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the causal mean ratio from a CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study and write its metrics as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated estimators, e.g. IPTW,PG,DR.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Outcome family (poisson, negbin, zip, zinb; `auto` for estimate).
    #[arg(long, value_delimiter = ',')]
    family: Option<Vec<String>>,
    /// Model heaped reports.
    #[arg(long)]
    heaping: bool,
    /// Heaping grid width.
    #[arg(long)]
    eta: Option<u64>,
    /// Confidence level for Wald intervals (default 0.95)
    #[arg(long)]
    ci_level: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Input CSV file
    #[arg(long)]
    input: Option<PathBuf>,
    /// Binary exposure column (default A)
    #[arg(long)]
    exposure: Option<String>,
    /// Count outcome column (default Y)
    #[arg(long)]
    outcome: Option<String>,
    /// Comma-separated propensity model covariates
    #[arg(long, value_delimiter = ',')]
    weight_covariates: Option<Vec<String>>,
    /// Comma-separated outcome mean covariates
    #[arg(long, value_delimiter = ',')]
    outcome_covariates: Option<Vec<String>>,
    /// Comma-separated zero-part covariates (ZIP/ZINB)
    #[arg(long, value_delimiter = ',')]
    susceptibility_covariates: Option<Vec<String>>,
    /// `fixed` or `estimated`.
    #[arg(long)]
    weight_treatment: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// `partners` or `heaping`.
    #[arg(long)]
    design: Option<String>,
    /// Comma-separated regimes (none, MW, MO, MB) or `all`.
    #[arg(long, value_delimiter = ',')]
    misspec: Option<Vec<String>>,
    /// Sample size per replication (default 800)
    #[arg(long)]
    n: Option<usize>,
    /// Number of replications (default 2000)
    #[arg(long)]
    reps: Option<usize>,
    /// Base seed; replication r uses seed + r
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for SVG figures.
    #[arg(long)]
    figures: Option<PathBuf>,
    /// Write the first replication's dataset to this CSV file.
    #[arg(long)]
    sample_data: Option<PathBuf>,
}

fn common_overrides(c: &Common) -> Overrides {
    Overrides {
        ci_level: c.ci_level,
        methods: c.methods.clone(),
        family: c.family.clone(),
        heaping: c.heaping,
        eta: c.eta,
        output: c.output.clone(),
        ..Overrides::default()
    }
}

fn load(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    path.as_deref().map(RunConfig::load).unwrap_or_else(|| Ok(RunConfig::default()))
}

fn sink(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn estimate(args: EstimateArgs) -> CliResult<()> {
    let cfg = load(&args.common.config)?;
    let ov = Overrides {
        input: args.input,
        exposure: args.exposure,
        outcome: args.outcome,
        weight_covariates: args.weight_covariates,
        outcome_covariates: args.outcome_covariates,
        susceptibility_covariates: args.susceptibility_covariates,
        weight_treatment: args.weight_treatment,
        ..common_overrides(&args.common)
    };
    let settings = resolve_estimate(&cfg, &ov)?;
    let report = run_estimate(&settings)?;
    let mut out = sink(&settings.output)?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::Io(e.into()))?;
    writeln!(out)?;
    for r in report.estimates.iter().filter(|r| r.estimate.is_none()) {
        eprintln!("{}: {}", r.method, r.error.as_deref().unwrap_or("failed"));
    }
    match report.failures() {
        0 => Ok(()),
        k => Err(CliError::Estimation(format!("{k} of {} methods failed", report.estimates.len()))),
    }
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = load(&args.common.config)?;
    let ov = Overrides {
        design: args.design,
        misspec: args.misspec,
        n: args.n,
        reps: args.reps,
        seed: args.seed,
        figures: args.figures,
        sample_data: args.sample_data,
        ..common_overrides(&args.common)
    };
    let settings = resolve_simulate(&cfg, &ov)?;
    let rows = run_simulate(&settings)?;
    write_metrics(sink(&settings.output)?, &rows)?;
    write_artifacts(&settings, &rows)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cmr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
