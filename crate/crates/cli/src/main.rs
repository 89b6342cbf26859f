use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::{info, warn};
use riotc_core::config::{ConfigError, RunConfig};
use riotc_core::eval::{ape_rmse, origin_align, rpe_rmse, EvalError, DEFAULT_RPE_INTERVAL};
use riotc_core::io::{self, IoError, MetricsRow};
use riotc_core::pipeline::{self, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "riotc", version, about = "Radar-inertial odometry with online time-offset calibration")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Config file of `key = value` lines; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one config key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate a dataset: imu.csv, radar.csv, groundtruth.csv and meta.txt.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        out_dir: PathBuf,
    },
    /// Run the filter on a dataset directory; writes trajectory.csv and estimate_log.csv.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        dataset_dir: PathBuf,
        out_dir: PathBuf,
        /// Freeze the time offset at this value (no offset estimation).
        #[arg(long, value_name = "SECONDS", allow_hyphen_values = true)]
        fixed_td: Option<f64>,
    },
    /// Score an estimated trajectory against ground truth; writes one metrics row.
    Evaluate {
        est: PathBuf,
        truth: PathBuf,
        out: PathBuf,
        /// Name written to the sequence column.
        #[arg(long, default_value = "sequence")]
        sequence: String,
        /// RPE path interval, m.
        #[arg(long, default_value_t = DEFAULT_RPE_INTERVAL)]
        rpe_interval: f64,
        /// estimate_log.csv of the run; its last row fills the offset columns.
        #[arg(long)]
        estimate_log: Option<PathBuf>,
    },
    /// Independent simulate-filter-evaluate trials; writes metrics.csv and report.txt.
    Montecarlo {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        out_dir: PathBuf,
    },
}

/// Failure with its exit code: 1 usage, 2 I/O, 3 numerical.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { 2 } else { 1 };
        Self { code, msg: e.to_string() }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Self { code: 2, msg: e.to_string() }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Self { code: 3, msg: e.to_string() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(e) => e.into(),
            PipelineError::Sim(e) => Self::usage(e.to_string()),
            e => Self { code: 3, msg: e.to_string() },
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| Failure::usage(format!("--set {kv}: {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source }.into())
}

fn print_metrics(row: &MetricsRow) {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
    println!("{}:", row.sequence);
    println!("  APE  trans {:.6} m   rot {:.6} deg", row.ape_trans_m, row.ape_rot_deg);
    println!("  RPE  trans {} m   rot {} deg", opt(row.rpe_trans_m), opt(row.rpe_rot_deg));
    if row.td_final_s.is_finite() {
        println!("  t_d  {:.6} s (sigma {:.6} s)", row.td_final_s, row.td_sigma_s);
    }
}

fn simulate(cfg: &RunConfig, out_dir: &Path) -> Result<(), Failure> {
    let ds = pipeline::simulate(cfg)?;
    pipeline::write_dataset(out_dir, &ds, cfg)?;
    println!("wrote {} IMU samples and {} radar scans to {}", ds.imu.len(), ds.radar.len(), out_dir.display());
    Ok(())
}

fn run(mut cfg: RunConfig, dataset_dir: &Path, out_dir: &Path, fixed_td: Option<f64>) -> Result<(), Failure> {
    if let Some(td) = fixed_td {
        if !td.is_finite() {
            return Err(Failure::usage("--fixed-td must be finite"));
        }
        cfg = cfg.with_fixed_td(td);
        cfg.validate()?;
    }
    let ds = pipeline::load_dataset(dataset_dir)?;
    if ds.truth.is_empty() {
        warn!("{} has no ground truth; the filter starts at rest", dataset_dir.display());
    }
    let out = pipeline::run_dataset(&cfg, &ds)?;
    create_dir(out_dir)?;
    io::write_trajectory(&out_dir.join("trajectory.csv"), &out.trajectory)?;
    io::write_estimate_log(&out_dir.join("estimate_log.csv"), &out.estimate_log())?;
    println!(
        "{} updates, {} scans skipped; t_d = {:.6} s (sigma {:.6} s)",
        out.records.len(),
        out.skipped.len(),
        out.td_final(),
        out.td_sigma()
    );
    Ok(())
}

fn evaluate(est: &Path, truth: &Path, out: &Path, sequence: &str, interval: f64, log: Option<&Path>) -> Result<(), Failure> {
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Failure::usage("--rpe-interval must be positive"));
    }
    // without a log the offset columns are NaN
    let (td_final_s, td_sigma_s) = match log {
        Some(p) => io::read_estimate_log(p)?.last().map_or((f64::NAN, f64::NAN), |r| (r.td_hat, r.td_sigma)),
        None => (f64::NAN, f64::NAN),
    };
    let est = io::read_trajectory(est)?;
    let truth = io::read_truth(truth)?;
    let aligned = origin_align(&est, &truth)?;
    let ape = ape_rmse(&aligned, &truth)?;
    let rpe = match rpe_rmse(&aligned, &truth, interval) {
        Ok(r) => Some(r),
        Err(e @ EvalError::PathTooShort { .. }) => {
            warn!("RPE left empty: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let row = MetricsRow {
        sequence: sequence.to_string(),
        ape_trans_m: ape.trans_m,
        ape_rot_deg: ape.rot_deg,
        rpe_trans_m: rpe.map(|r| r.trans_m),
        rpe_rot_deg: rpe.map(|r| r.rot_deg),
        td_final_s,
        td_sigma_s,
    };
    io::write_metrics(out, std::slice::from_ref(&row))?;
    print_metrics(&row);
    Ok(())
}

fn montecarlo(cfg: &RunConfig, trials: u64, out_dir: &Path) -> Result<(), Failure> {
    let trials = usize::try_from(trials).map_err(|_| Failure::usage("too many trials"))?;
    let report = pipeline::montecarlo(cfg, trials);
    create_dir(out_dir)?;
    io::write_metrics(&out_dir.join("metrics.csv"), &report.rows)?;
    let text = format!("{}\nconfig:\n{}", report.summary(), cfg.echo());
    io::write_text(&out_dir.join("report.txt"), &text)?;
    print!("{}", report.summary());
    if report.rows.is_empty() {
        return Err(Failure { code: 3, msg: "every trial failed".into() });
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Simulate { cfg, out_dir } => simulate(&load_config(&cfg)?, &out_dir),
        Cmd::Run { cfg, dataset_dir, out_dir, fixed_td } => run(load_config(&cfg)?, &dataset_dir, &out_dir, fixed_td),
        Cmd::Evaluate { est, truth, out, sequence, rpe_interval, estimate_log } => {
            evaluate(&est, &truth, &out, &sequence, rpe_interval, estimate_log.as_deref())
        }
        Cmd::Montecarlo { cfg, trials, out_dir } => montecarlo(&load_config(&cfg)?, trials, &out_dir),
    }
}

fn main() -> ExitCode {
    let keys = RunConfig::key_help();
    let mut cmd = Cli::command().after_long_help(keys.clone());
    for name in ["simulate", "run", "montecarlo"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(keys.clone()));
    }
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    info!("{cli:?}");
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
