use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use railodo_cli::commands::{cmd_estimate, cmd_evaluate, cmd_simulate, cmd_sweep, thread_cap, RunManifest};
use railodo_cli::config::{estimator_from, evaluation_from, parse_mask, scenario_from, KeyValues};
use railodo_cli::CliError;
use railodo_core::estimator::Mode;
use railodo_core::PixelRect;

/// Rail visual-inertial odometry workbench.
#[derive(Parser)]
#[command(name = "railodo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the sensor log and ground truth.
    Simulate(SimulateArgs),
    /// Run the sliding-window estimator on a simulated log directory.
    Estimate(EstimateArgs),
    /// Segment-based evaluation of an estimate against ground truth.
    Evaluate(EvaluateArgs),
    /// Simulate, estimate and evaluate a seeds x modes x baselines grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (key = value).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the log files.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the stereo baseline, meters.
    #[arg(long)]
    baseline: Option<f64>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Directory written by `simulate`.
    log_dir: PathBuf,
    /// Estimated trajectory file; diagnostics go next to it.
    #[arg(long)]
    out: PathBuf,
    /// File with `estimator.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Drop features inside "u0,v0,u1,v1" (pixels).
    #[arg(long, value_parser = parse_mask)]
    mask: Option<PixelRect>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated trajectory.
    estimate: PathBuf,
    /// Ground-truth trajectory.
    ground_truth: PathBuf,
    /// Comma-separated segment lengths in meters.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive)]
    segment_lengths: Option<Vec<f64>>,
    /// File with `evaluation.*` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.txt and segments.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Run manifest.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the manifest output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    mode: Option<Vec<Mode>>,
    /// Comma-separated baselines, meters.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive)]
    baseline: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_positive)]
    segment_lengths: Option<Vec<f64>>,
    /// Drop features inside "u0,v0,u1,v1" (pixels).
    #[arg(long, value_parser = parse_mask)]
    mask: Option<PixelRect>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: railodo_core::estimator::EstimatorError| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(x) if x > 0.0 => Ok(x),
        _ => Err(format!("expected a positive number, found '{s}'")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => {
            let mut scenario = scenario_from(&KeyValues::load(&a.config)?)?;
            if let Some(seed) = a.seed {
                scenario.seed = seed;
            }
            simulate_with(scenario, a.baseline, &a.out)
        }
        Command::Estimate(a) => {
            let kv = match &a.config {
                Some(p) => KeyValues::load(p)?,
                None => KeyValues::parse("", "defaults")?,
            };
            let mut config = estimator_from(&kv)?;
            if let Some(m) = a.mode {
                config.mode = m;
            }
            if a.mask.is_some() {
                config.mask = a.mask;
            }
            let out = cmd_estimate(&a.log_dir, &config, &a.out)?;
            let gaps = out.diagnostics.iter().filter(|d| d.gap).count();
            eprintln!("{} poses written to {} ({gaps} gap frames)", out.states.len(), a.out.display());
            Ok(())
        }
        Command::Evaluate(a) => {
            let mut config = match &a.config {
                Some(p) => evaluation_from(&KeyValues::load(p)?)?,
                None => Default::default(),
            };
            if let Some(l) = a.segment_lengths {
                config.segment_lengths = l;
            }
            let (text, _) = cmd_evaluate(&a.estimate, &a.ground_truth, &config, a.out.as_deref())?;
            print!("{text}");
            Ok(())
        }
        Command::Sweep(a) => {
            let mut m = RunManifest::load(&a.config)?;
            if let Some(o) = a.out {
                m.out = o;
            }
            if let Some(s) = a.seed {
                m.seeds = s;
            }
            if let Some(x) = a.mode {
                m.modes = x;
            }
            if let Some(b) = a.baseline {
                m.baselines = b;
            }
            if let Some(l) = a.segment_lengths {
                m.evaluation.segment_lengths = l;
            }
            if a.mask.is_some() {
                m.estimator.mask = a.mask;
            }
            let out = cmd_sweep(&m, thread_cap()?)?;
            print!("{}", out.table);
            if out.succeeded() == 0 {
                return Err(CliError::Run("every sweep cell failed".into()));
            }
            Ok(())
        }
    }
}

fn simulate_with(
    mut scenario: railodo_core::simulator::ScenarioConfig,
    baseline: Option<f64>,
    out: &std::path::Path,
) -> Result<(), CliError> {
    if let Some(b) = baseline {
        scenario.baseline = b;
    }
    scenario.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let sim = cmd_simulate(&scenario, out)?;
    eprintln!(
        "{} frames, {} IMU samples, {} observations written to {}",
        sim.log.frames.len(),
        sim.log.imu.len(),
        sim.log.observations.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
