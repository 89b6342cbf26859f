//! End-to-end runs: simulate, filter, evaluate and Monte-Carlo batches.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::RunConfig;
use crate::ego_velocity::RadarScan;
use crate::eval::{ape_rmse, origin_align, rpe_rmse, EvalError, DEFAULT_RPE_INTERVAL};
use crate::filter::{Filter, FilterError, SkipReason, UpdateRecord};
use crate::io::{self, DatasetBundle, EstimateRow, IoError, MetricsRow};
use crate::propagation::ImuSample;
use crate::simulator::{self, Dataset, SimError};
use crate::so3::Quaternion;
use crate::state::{Covariance, NominalState};
use crate::temporal::{self, Event, SensorBuffer, TemporalError};
use crate::trajectory::{PoseSample, Trajectory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("dataset has no IMU samples")]
    NoImu,
}

impl PipelineError {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Filter(_) | Self::Temporal(TemporalError::Filter(_)))
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    Ok(simulator::simulate(&cfg.sim_config())?)
}

pub fn write_dataset(dir: &Path, ds: &Dataset, cfg: &RunConfig) -> Result<DatasetBundle, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    let bundle = DatasetBundle {
        imu_path: dir.join("imu.csv"),
        radar_path: dir.join("radar.csv"),
        groundtruth_path: Some(dir.join("groundtruth.csv")),
        meta_path: dir.join("meta.txt"),
    };
    io::write_imu(&bundle.imu_path, &ds.imu)?;
    io::write_radar(&bundle.radar_path, &ds.radar)?;
    if let Some(gt) = &bundle.groundtruth_path {
        io::write_trajectory(gt, &ds.truth)?;
    }
    io::write_text(&bundle.meta_path, &cfg.echo())?;
    Ok(bundle)
}

/// Loads a dataset directory. A missing ground-truth file yields an empty
/// trajectory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, PipelineError> {
    let bundle = DatasetBundle::in_dir(dir);
    let imu = io::read_imu(&bundle.imu_path)?;
    let radar = io::read_radar(&bundle.radar_path)?;
    let truth = match &bundle.groundtruth_path {
        Some(p) => io::read_truth(p)?,
        None => Trajectory::default(),
    };
    Ok(Dataset { imu, radar, truth })
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    /// Pose after every applied update.
    pub trajectory: Trajectory,
    pub records: Vec<UpdateRecord>,
    pub skipped: Vec<(f64, SkipReason)>,
    pub final_state: NominalState,
    pub final_cov: Covariance,
    pub propagation_steps: usize,
}

impl RunOutput {
    pub fn estimate_log(&self) -> Vec<EstimateRow> {
        self.records
            .iter()
            .map(|r| EstimateRow { t: r.t, td_hat: r.td_hat, td_sigma: r.td_sigma, residual: r.residual, n_inliers: r.n_inliers })
            .collect()
    }

    pub fn td_final(&self) -> f64 {
        self.final_state.t_d
    }

    pub fn td_sigma(&self) -> f64 {
        self.final_cov[(crate::state::idx::TD, crate::state::idx::TD)].max(0.0).sqrt()
    }
}

/// Filter state at the first IMU stamp: pose and velocity from the nearest
/// ground-truth sample when one lies within 10 ms, rest otherwise.
pub fn initial_state(cfg: &RunConfig, t0: f64, truth: &Trajectory) -> NominalState {
    let k = truth.poses.partition_point(|p| p.stamp < t0);
    let near = [k.checked_sub(1), Some(k)]
        .into_iter()
        .flatten()
        .filter_map(|i| truth.poses.get(i))
        .filter(|p| (p.stamp - t0).abs() <= crate::eval::ASSOCIATION_TOLERANCE)
        .min_by(|a, b| (a.stamp - t0).abs().total_cmp(&(b.stamp - t0).abs()));
    let (q, p, v) = match near {
        Some(s) => (s.q_gi, s.p_gi, s.v_gi.unwrap_or_else(Vector3::zeros)),
        None => {
            warn!("no ground truth at t = {t0}; starting at rest with identity attitude");
            (Quaternion::identity(), Vector3::zeros(), Vector3::zeros())
        }
    };
    NominalState { q_gi: q, p_gi: p, v_gi: v, t_d: cfg.t_d_init, stamp: t0, ..Default::default() }
}

/// Replays the streams through the sensor buffer. Radar scans are queued up
/// to `radar_lookahead` seconds ahead of the IMU stream so that a negative
/// offset estimate finds its scans waiting instead of already stale.
pub fn run_filter(cfg: &RunConfig, imu: &[ImuSample], radar: &[RadarScan], x0: NominalState) -> Result<RunOutput, PipelineError> {
    if imu.is_empty() {
        return Err(PipelineError::NoImu);
    }
    let mut filter = Filter::new(x0, cfg.initial_cov.to_matrix(), cfg.filter.clone(), cfg.seed)?;
    let mut buf = SensorBuffer::new(cfg.buffer_horizon)?;
    let mut out = RunOutput::default();
    let mut next_scan = 0;
    for s in imu {
        while next_scan < radar.len() && radar[next_scan].stamp <= s.stamp + cfg.radar_lookahead {
            buf.push_radar(radar[next_scan].clone())?;
            next_scan += 1;
        }
        buf.push_imu(*s)?;
        for ev in temporal::step(&mut buf, &mut filter)? {
            match ev {
                Event::Propagated { .. } => out.propagation_steps += 1,
                Event::Updated { record, .. } => {
                    out.trajectory.poses.push(PoseSample {
                        stamp: record.t,
                        q_gi: record.state.q_gi,
                        p_gi: record.state.p_gi,
                        v_gi: Some(record.state.v_gi),
                    });
                    out.records.push(record);
                }
                Event::Skipped { scan_stamp, reason, .. } => out.skipped.push((scan_stamp, reason)),
            }
        }
    }
    let waiting = buf.radar().len() + radar.len() - next_scan;
    if waiting > 0 {
        info!("{waiting} radar scans map past the end of the IMU stream");
    }
    out.final_state = *filter.state();
    out.final_cov = *filter.covariance();
    Ok(out)
}

/// Runs the filter on a dataset, starting from its ground truth.
pub fn run_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<RunOutput, PipelineError> {
    let t0 = ds.imu.first().ok_or(PipelineError::NoImu)?.stamp;
    run_filter(cfg, &ds.imu, &ds.radar, initial_state(cfg, t0, &ds.truth))
}

/// Metrics of an estimate against ground truth. RPE is left empty when the
/// reference path is shorter than one interval.
pub fn evaluate(sequence: &str, est: &Trajectory, truth: &Trajectory, td_final: f64, td_sigma: f64) -> Result<MetricsRow, PipelineError> {
    let aligned = origin_align(est, truth)?;
    let ape = ape_rmse(&aligned, truth)?;
    let rpe = match rpe_rmse(&aligned, truth, DEFAULT_RPE_INTERVAL) {
        Ok(r) => Some(r),
        Err(e @ EvalError::PathTooShort { .. }) => {
            warn!("{sequence}: RPE not available: {e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    Ok(MetricsRow {
        sequence: sequence.to_string(),
        ape_trans_m: ape.trans_m,
        ape_rot_deg: ape.rot_deg,
        rpe_trans_m: rpe.map(|r| r.trans_m),
        rpe_rot_deg: rpe.map(|r| r.rot_deg),
        td_final_s: td_final,
        td_sigma_s: td_sigma,
    })
}

/// Simulates, filters and evaluates one trial.
pub fn run_trial(cfg: &RunConfig, sequence: &str) -> Result<(MetricsRow, RunOutput), PipelineError> {
    let ds = simulate(cfg)?;
    let out = run_dataset(cfg, &ds)?;
    let row = evaluate(sequence, &out.trajectory, &ds.truth, out.td_final(), out.td_sigma())?;
    Ok((row, out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stat {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self { mean, std: var.sqrt(), count: n }
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloReport {
    pub rows: Vec<MetricsRow>,
    /// `(trial, message)` for every failed trial.
    pub failures: Vec<(usize, String)>,
    pub ape_trans: Stat,
    pub ape_rot: Stat,
    pub rpe_trans: Stat,
    pub rpe_rot: Stat,
    pub td_final: Stat,
}

impl MonteCarloReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trials: {} succeeded, {} failed", self.rows.len(), self.failures.len());
        for (name, st) in [
            ("ape_trans_m", &self.ape_trans),
            ("ape_rot_deg", &self.ape_rot),
            ("rpe_trans_m", &self.rpe_trans),
            ("rpe_rot_deg", &self.rpe_rot),
            ("td_final_s", &self.td_final),
        ] {
            let _ = writeln!(s, "{name:<12} mean {:.6e}  std {:.6e}  (n = {})", st.mean, st.std, st.count);
        }
        for (i, msg) in &self.failures {
            let _ = writeln!(s, "trial {i} failed: {msg}");
        }
        s
    }
}

/// Independent trials; trial `i` simulates and filters with seed
/// `seed + i`. Results come back in trial order regardless of scheduling.
pub fn montecarlo(cfg: &RunConfig, trials: usize) -> MonteCarloReport {
    let results: Vec<Result<MetricsRow, String>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i as u64);
            c.sim.seed = c.seed;
            run_trial(&c, &format!("trial_{i}")).map(|(row, _)| row).map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(msg) => failures.push((i, msg)),
        }
    }
    let col = |f: &dyn Fn(&MetricsRow) -> Option<f64>| Stat::of(&rows.iter().filter_map(f).collect::<Vec<_>>());
    MonteCarloReport {
        ape_trans: col(&|r| Some(r.ape_trans_m)),
        ape_rot: col(&|r| Some(r.ape_rot_deg)),
        rpe_trans: col(&|r| r.rpe_trans_m),
        rpe_rot: col(&|r| r.rpe_rot_deg),
        td_final: col(&|r| Some(r.td_final_s)),
        rows,
        failures,
    }
}
