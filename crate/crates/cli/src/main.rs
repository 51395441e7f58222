use std::path::PathBuf;
use std::process::ExitCode;

use brnn_cli::commands::{
    cmd_baseline, cmd_calibrate, cmd_monitor, cmd_simulate, cmd_train, BaselineInputs,
};
use brnn_cli::config::RunConfig;
use brnn_cli::report::cmd_report;
use brnn_cli::{CliError, CliResult};
use brnn_core::detection::DetectionMethod;
use brnn_core::plant::FaultKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "brnn",
    version,
    about = "Bayesian recurrent network process monitoring"
)]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation, training and the Monte-Carlo ensemble.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the reference plant and write data plus truth CSVs.
    Simulate(SimulateArgs),
    /// Train the network on normal operating data.
    Train(TrainArgs),
    /// Calibrate detection and identification thresholds.
    Calibrate(CalibrateArgs),
    /// Monitor a test run with a trained model and calibrated thresholds.
    Monitor(MonitorArgs),
    /// Fit and run the PCA/DPCA comparison models.
    Baseline(BaselineArgs),
    /// Tabulate FAR/FDR/delay across monitored runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// `default` or a plant seed.
    #[arg(long)]
    plant: Option<String>,
    #[arg(long)]
    fault: Option<FaultKind>,
    /// Number of recorded steps.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    onset: Option<usize>,
    #[arg(long)]
    magnitude: Option<f64>,
    #[arg(long)]
    target: Option<usize>,
    /// File stem for the outputs.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    method: Option<DetectionMethod>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct MonitorArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    thresholds: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Truth file; defaults to `<test stem>.truth.csv` when present.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Scenario label in the summary; defaults to the test file stem.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    /// Restrict to these variants (repeatable).
    #[arg(long = "variant")]
    variants: Vec<String>,
    #[arg(long)]
    lag: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Summary files or directories holding them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn run(cli: Cli) -> CliResult<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            if let Some(p) = a.plant {
                s.plant = p;
            }
            s.fault = a.fault.unwrap_or(s.fault);
            s.t = a.t.unwrap_or(s.t);
            s.onset = a.onset.unwrap_or(s.onset);
            s.magnitude = a.magnitude.or(s.magnitude);
            s.target_channel = a.target.or(s.target_channel);
            if let Some(n) = a.name {
                s.name = n;
            }
            cfg.validate()?;
            cmd_simulate(&cfg)
        }
        Command::Train(a) => {
            cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
            cfg.validate()?;
            cmd_train(&cfg, &a.train, &a.validation)
        }
        Command::Calibrate(a) => {
            let d = &mut cfg.monitor.detection;
            d.method = a.method.unwrap_or(d.method);
            d.alpha = a.alpha.unwrap_or(d.alpha);
            cfg.validate()?;
            cmd_calibrate(&cfg, &a.model, &a.validation)
        }
        Command::Monitor(a) => cmd_monitor(
            &a.model,
            &a.thresholds,
            &a.test,
            a.truth.as_deref(),
            a.scenario.as_deref(),
            &cfg.out,
        ),
        Command::Baseline(a) => {
            if !a.variants.is_empty() {
                cfg.baseline.variants = a.variants;
            }
            cfg.baseline.lag = a.lag.unwrap_or(cfg.baseline.lag);
            cfg.validate()?;
            let inputs = BaselineInputs {
                train: &a.train,
                validation: &a.validation,
                test: &a.test,
                truth: a.truth.as_deref(),
                scenario: a.scenario.as_deref(),
            };
            cmd_baseline(&cfg, &inputs)
        }
        Command::Report(a) => cmd_report(&a.inputs, &cfg.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(log) => {
            print!("{log}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(CliError::exit_code(&e) as u8)
        }
    }
}
