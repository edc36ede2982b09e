use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use railodo_core::estimator::{run_estimator, EstimatorConfig, EstimatorError, EstimatorOutput, Mode};
use railodo_core::evaluation::{
    aggregate, evaluate, render_report, EvalConfig, EvalReport, EvaluationError, LengthReport, ReportRow,
    SegmentError, Trajectory,
};
use railodo_core::simulator::{simulate, ScenarioConfig, SensorLog, Simulation};

use crate::config::{estimator_from, evaluation_from, scenario_from, KeyValues, SensorInfo};
use crate::files::{self, FRAMES_FILE, GROUND_TRUTH_FILE, IMU_FILE, OBSERVATIONS_FILE, SENSORS_FILE};
use crate::CliError;

fn run_error(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::InvalidConfig(_) | EstimatorError::InvalidLog(_) => CliError::Input(e.to_string()),
        _ => CliError::Run(e.to_string()),
    }
}

fn eval_error(e: EvaluationError) -> CliError {
    match e {
        EvaluationError::TooFewPoses(_) | EvaluationError::NotIncreasing(_) | EvaluationError::InvalidConfig(_) => {
            CliError::Input(e.to_string())
        }
        _ => CliError::Evaluation(e.to_string()),
    }
}

/// Ground truth at the camera frames.
pub fn frame_ground_truth(sim: &Simulation, scenario: &ScenarioConfig) -> Vec<(f64, railodo_core::Pose)> {
    sim.frame_ground_truth(scenario.frame_step()).samples.iter().map(|s| (s.timestamp, s.pose)).collect()
}

/// Initial velocity in the first body frame, which is the estimator's world.
pub fn initial_body_velocity(sim: &Simulation) -> nalgebra::Vector3<f64> {
    let first = &sim.ground_truth.samples[0];
    first.pose.rotation.inverse() * first.velocity
}

/// Writes the sensor log and frame-rate ground truth of `scenario` into `out`.
pub fn cmd_simulate(scenario: &ScenarioConfig, out: &Path) -> Result<Simulation, CliError> {
    let sim = simulate(scenario).map_err(|e| CliError::Input(e.to_string()))?;
    let log = &sim.log;
    let info = SensorInfo {
        intrinsics: log.intrinsics,
        rig: log.rig,
        body_cam0: log.body_cam0,
        imu_noise: log.imu_noise,
        imu_rate_hz: scenario.imu.rate_hz,
        camera_rate_hz: scenario.camera_rate_hz,
        initial_velocity: initial_body_velocity(&sim),
    };
    files::write(&out.join(IMU_FILE), &files::format_imu(&log.imu))?;
    files::write(&out.join(FRAMES_FILE), &files::format_frames(&log.frames))?;
    files::write(&out.join(OBSERVATIONS_FILE), &files::format_observations(&log.observations))?;
    files::write(&out.join(SENSORS_FILE), &info.to_text())?;
    files::write(&out.join(GROUND_TRUTH_FILE), &files::format_trajectory(&frame_ground_truth(&sim, scenario)))?;
    Ok(sim)
}

/// Reads a log directory written by [`cmd_simulate`].
pub fn load_log(dir: &Path) -> Result<(SensorLog, SensorInfo), CliError> {
    let info = SensorInfo::from_kv(&KeyValues::load(&dir.join(SENSORS_FILE))?)?;
    let read = |name: &str| -> Result<(String, String), CliError> {
        let path = dir.join(name);
        Ok((files::read(&path)?, path.display().to_string()))
    };
    let (text, src) = read(IMU_FILE)?;
    let imu = files::parse_imu(&text, &src)?;
    let (text, src) = read(FRAMES_FILE)?;
    let frames = files::parse_frames(&text, &src)?;
    let (text, src) = read(OBSERVATIONS_FILE)?;
    let observations = files::parse_observations(&text, &src)?;
    if let Some(o) = observations.iter().find(|o| o.frame_id >= frames.len()) {
        return Err(CliError::Input(format!("{src}: observation references missing frame {}", o.frame_id)));
    }
    let log = SensorLog {
        imu,
        imu_noise: info.imu_noise,
        frames,
        observations,
        intrinsics: info.intrinsics,
        rig: info.rig,
        body_cam0: info.body_cam0,
    };
    Ok((log, info))
}

pub fn diagnostics_csv(out: &EstimatorOutput) -> String {
    let mut s = String::from(
        "frame_id,timestamp,landmarks,new_landmarks,window_landmarks,reprojection_residuals,depth_residuals,gated_depths,iterations,rms,gap,reanchored\n",
    );
    for d in &out.diagnostics {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{:.6},{},{}",
            d.frame_id,
            d.timestamp,
            d.landmarks,
            d.new_landmarks,
            d.window_landmarks,
            d.reprojection_residuals,
            d.depth_residuals,
            d.gated_depths,
            d.iterations,
            d.rms,
            u8::from(d.gap),
            u8::from(d.reanchored)
        );
    }
    s
}

/// Path of the diagnostics file written next to an estimate.
pub fn diagnostics_path(estimate: &Path) -> PathBuf {
    estimate.with_extension("diagnostics.csv")
}

pub fn cmd_estimate(log_dir: &Path, config: &EstimatorConfig, out: &Path) -> Result<EstimatorOutput, CliError> {
    let (log, info) = load_log(log_dir)?;
    let output = run_estimator(&log, config, info.initial_velocity).map_err(run_error)?;
    files::write(out, &files::format_trajectory(&output.poses()))?;
    files::write(&diagnostics_path(out), &diagnostics_csv(&output))?;
    Ok(output)
}

fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let samples = files::parse_trajectory(&files::read(path)?, &path.display().to_string())?;
    Trajectory::new(samples).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Evaluates `est` against `gt`; returns the rendered table and CSV, also
/// written to `out` when given.
pub fn cmd_evaluate(est: &Path, gt: &Path, config: &EvalConfig, out: Option<&Path>) -> Result<(String, String), CliError> {
    let (e, g) = (load_trajectory(est)?, load_trajectory(gt)?);
    let ev = evaluate(&e, &g, config).map_err(eval_error)?;
    let row = ReportRow {
        run: est.file_stem().map_or("estimate".into(), |s| s.to_string_lossy().into_owned()),
        mode: "-".into(),
        baseline: None,
        report: Some(ev.report),
        segments: ev.segments,
    };
    let (text, csv) = render_report(&[row]);
    if let Some(dir) = out {
        files::write(&dir.join("report.txt"), &text)?;
        files::write(&dir.join("segments.csv"), &csv)?;
    }
    Ok((text, csv))
}

/// Experiment grid: every seed × mode × baseline cell is simulated,
/// estimated and evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub evaluation: EvalConfig,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    pub baselines: Vec<f64>,
}

impl RunManifest {
    /// Paths in the manifest resolve relative to its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let kv = KeyValues::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let scenario_path = base.join(kv.require::<String>("scenario")?);
        let scenario = scenario_from(&KeyValues::load(&scenario_path)?)?;
        let estimator = match kv.get::<String>("estimator")? {
            Some(p) => estimator_from(&KeyValues::load(&base.join(p))?)?,
            None => estimator_from(&kv)?,
        };
        let evaluation = evaluation_from(&kv)?;
        let out = base.join(kv.get::<String>("out")?.unwrap_or_else(|| "sweep-out".into()));
        let seeds = kv.list("seeds")?.unwrap_or_else(|| vec![scenario.seed]);
        let modes = kv.list("modes")?.unwrap_or_else(|| vec![estimator.mode]);
        let baselines = kv.list("baselines")?.unwrap_or_else(|| vec![scenario.baseline]);
        kv.finish(&["", "estimator", "evaluation"])?;
        let m = Self { scenario, estimator, evaluation, out, seeds, modes, baselines };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() || self.modes.is_empty() || self.baselines.is_empty() {
            return Err(CliError::Input("manifest lists must be non-empty".into()));
        }
        if self.baselines.iter().any(|b| !(*b > 0.0)) {
            return Err(CliError::Input("baselines must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub mode: Mode,
    pub baseline: f64,
    pub seed: u64,
    pub outcome: Result<(EvalReport, Vec<SegmentError>), String>,
}

fn cell_name(mode: Mode, baseline: f64, seed: u64) -> String {
    format!("{}_b{baseline:.2}_s{seed}", mode.name())
}

/// Runs one simulation per (baseline, seed) and every mode on it.
fn run_group(m: &RunManifest, baseline: f64, seed: u64) -> Vec<CellResult> {
    let mut scenario = m.scenario.clone();
    scenario.baseline = baseline;
    scenario.seed = seed;
    let fail = |mode: Mode, e: String| CellResult { mode, baseline, seed, outcome: Err(e) };
    let sim = match simulate(&scenario) {
        Ok(s) => s,
        Err(e) => return m.modes.iter().map(|&mode| fail(mode, e.to_string())).collect(),
    };
    let gt = match Trajectory::new(frame_ground_truth(&sim, &scenario)) {
        Ok(t) => t,
        Err(e) => return m.modes.iter().map(|&mode| fail(mode, e.to_string())).collect(),
    };
    let v0 = initial_body_velocity(&sim);
    m.modes
        .par_iter()
        .map(|&mode| {
            let mut config = m.estimator.clone();
            config.mode = mode;
            let outcome = (|| {
                let out = run_estimator(&sim.log, &config, v0).map_err(|e| e.to_string())?;
                let dir = m.out.join("cells").join(cell_name(mode, baseline, seed));
                let est_path = dir.join("estimate.txt");
                files::write(&est_path, &files::format_trajectory(&out.poses())).map_err(|e| e.to_string())?;
                files::write(&diagnostics_path(&est_path), &diagnostics_csv(&out)).map_err(|e| e.to_string())?;
                let est = Trajectory::new(out.poses()).map_err(|e| e.to_string())?;
                let ev = evaluate(&est, &gt, &m.evaluation).map_err(|e| e.to_string())?;
                Ok((ev.report, ev.segments))
            })();
            CellResult { mode, baseline, seed, outcome }
        })
        .collect()
}

/// Report over the pooled segments of several runs.
pub fn pooled_report(lengths: &[f64], runs: &[&(EvalReport, Vec<SegmentError>)]) -> EvalReport {
    let lengths = lengths
        .iter()
        .map(|&length| {
            let errors: Vec<SegmentError> = runs
                .iter()
                .flat_map(|r| r.1.iter().filter(|s| (s.length - length).abs() < 1e-9).copied())
                .collect();
            let skipped = runs
                .iter()
                .flat_map(|r| r.0.lengths.iter().filter(|l| (l.length - length).abs() < 1e-9).map(|l| l.skipped))
                .sum();
            let stats = aggregate(&errors).ok();
            LengthReport { length, distance: stats.map(|s| s.0), heading: stats.map(|s| s.1), segments: errors.len(), skipped }
        })
        .collect();
    EvalReport {
        lengths,
        matched: runs.iter().map(|r| r.0.matched).sum(),
        unmatched: runs.iter().map(|r| r.0.unmatched).sum(),
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub table: String,
    pub cells: Vec<CellResult>,
}

impl SweepOutput {
    pub fn succeeded(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_ok()).count()
    }
}

/// Runs the grid with at most `threads` concurrent tasks and writes
/// `report.txt`, `segments.csv` and one `errors_<mode>.csv` per mode.
pub fn cmd_sweep(m: &RunManifest, threads: Option<usize>) -> Result<SweepOutput, CliError> {
    m.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Run(e.to_string()))?;
    let groups: Vec<(f64, u64)> = m.baselines.iter().flat_map(|&b| m.seeds.iter().map(move |&s| (b, s))).collect();
    let mut cells: Vec<CellResult> =
        pool.install(|| groups.par_iter().flat_map(|&(b, s)| run_group(m, b, s)).collect());
    let mode_rank = |mode: Mode| m.modes.iter().position(|&x| x == mode).unwrap_or(usize::MAX);
    let baseline_rank = |b: f64| m.baselines.iter().position(|&x| x == b).unwrap_or(usize::MAX);
    cells.sort_by_key(|c| (mode_rank(c.mode), baseline_rank(c.baseline), c.seed));

    let mut rows = Vec::new();
    let mut cell_rows = Vec::new();
    let mut failures = String::new();
    for &mode in &m.modes {
        for &baseline in &m.baselines {
            let group: Vec<&CellResult> = cells.iter().filter(|c| c.mode == mode && c.baseline == baseline).collect();
            let ok: Vec<&(EvalReport, Vec<SegmentError>)> = group.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            for c in &group {
                match &c.outcome {
                    Ok((report, segments)) => cell_rows.push(ReportRow {
                        run: format!("s{}", c.seed),
                        mode: mode.name().into(),
                        baseline: Some(baseline),
                        report: Some(report.clone()),
                        segments: segments.clone(),
                    }),
                    Err(e) => {
                        let _ = writeln!(failures, "failed: {}: {e}", cell_name(mode, baseline, c.seed));
                    }
                }
            }
            rows.push(ReportRow {
                run: "pooled".into(),
                mode: mode.name().into(),
                baseline: Some(baseline),
                report: (!ok.is_empty()).then(|| pooled_report(&m.evaluation.segment_lengths, &ok)),
                segments: Vec::new(),
            });
        }
    }
    let (mut table, _) = render_report(&rows);
    let _ = writeln!(table, "seeds: {}", m.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
    table.push_str(&failures);
    let (_, csv) = render_report(&cell_rows);
    files::write(&m.out.join("report.txt"), &table)?;
    files::write(&m.out.join("segments.csv"), &csv)?;
    for &mode in &m.modes {
        let mut s = String::from("seed,baseline,L,start_arclength,dist_pct,head_degpm\n");
        for c in cells.iter().filter(|c| c.mode == mode) {
            if let Ok((_, segments)) = &c.outcome {
                for e in segments {
                    let _ = writeln!(
                        s,
                        "{},{},{},{:.3},{:.6},{:.8}",
                        c.seed, c.baseline, e.length, e.start_arclength, e.distance_pct, e.heading_degpm
                    );
                }
            }
        }
        files::write(&m.out.join(format!("errors_{}.csv", mode.name())), &s)?;
    }
    Ok(SweepOutput { table, cells })
}

/// Thread cap from `RAILODO_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("RAILODO_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Input(format!("RAILODO_THREADS must be a positive integer, found '{v}'"))),
        },
    }
}
