//! CSV dataset and result files.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};
use log::warn;
use nalgebra::Vector3;
use thiserror::Error;

use crate::ego_velocity::{RadarPoint, RadarScan};
use crate::propagation::ImuSample;
use crate::so3::Quaternion;
use crate::trajectory::{PoseSample, Trajectory};

pub const IMU_HEADER: &[&str] = &["t", "wx", "wy", "wz", "ax", "ay", "az"];
pub const RADAR_HEADER: &[&str] = &["t", "scan_id", "px", "py", "pz", "doppler"];
pub const POSE_HEADER: &[&str] = &["t", "px", "py", "pz", "qw", "qx", "qy", "qz"];
pub const VELOCITY_COLUMNS: &[&str] = &["vx", "vy", "vz"];
pub const ESTIMATE_HEADER: &[&str] = &["t", "td_hat", "td_sigma", "r_x", "r_y", "r_z", "n_inliers"];
pub const METRICS_HEADER: &[&str] =
    &["sequence", "ape_trans_m", "ape_rot_deg", "rpe_trans_m", "rpe_rot_deg", "td_final_s", "td_sigma_s"];

/// Quaternions further than this from unit norm are rejected.
const QUAT_REJECT: f64 = 1e-3;
const QUAT_WARN: f64 = 1e-6;
const QUAT_KEEP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: u64, reason: String },
    #[error("{path}:{line}: timestamp does not increase")]
    NonMonotonic { path: PathBuf, line: u64 },
    #[error("{path}:{line}: scan_id goes backwards or repeats a finished scan")]
    ScanOrder { path: PathBuf, line: u64 },
    #[error("{path}:{line}: quaternion norm {norm} is not unit")]
    Quaternion { path: PathBuf, line: u64, norm: f64 },
}

impl IoError {
    /// Path of the file involved.
    pub fn path(&self) -> &Path {
        match self {
            Self::Io { path, .. }
            | Self::Header { path, .. }
            | Self::Parse { path, .. }
            | Self::NonMonotonic { path, .. }
            | Self::ScanOrder { path, .. }
            | Self::Quaternion { path, .. } => path,
        }
    }

    /// Whether the failure is about reaching the file rather than its content.
    pub fn is_access(&self) -> bool {
        matches!(self, Self::Io { .. })
    }
}

/// Full round-trip precision: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::Io { path: path.to_path_buf(), source },
        other => IoError::Parse { path: path.to_path_buf(), line, reason: format!("{other:?}") },
    }
}

struct Rows {
    path: PathBuf,
    records: Vec<(u64, StringRecord)>,
    header: Vec<String>,
}

impl Rows {
    fn read(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut rdr = ReaderBuilder::new().has_headers(true).flexible(false).trim(csv::Trim::All).from_reader(file);
        let header = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            records.push((line, rec));
        }
        Ok(Self { path: path.to_path_buf(), records, header })
    }

    fn expect_header(&self, expected: &[&str]) -> Result<(), IoError> {
        if self.header.iter().map(String::as_str).eq(expected.iter().copied()) {
            Ok(())
        } else {
            Err(IoError::Header { path: self.path.clone(), expected: expected.join(","), found: self.header.join(",") })
        }
    }

    fn float(&self, line: u64, rec: &StringRecord, i: usize) -> Result<f64, IoError> {
        let field = rec.get(i).unwrap_or("");
        let v: f64 = field.parse().map_err(|_| IoError::Parse {
            path: self.path.clone(),
            line,
            reason: format!("column {} is not a number: '{field}'", i + 1),
        })?;
        if !v.is_finite() {
            return Err(IoError::Parse { path: self.path.clone(), line, reason: format!("column {} is not finite", i + 1) });
        }
        Ok(v)
    }

    fn vec3(&self, line: u64, rec: &StringRecord, i: usize) -> Result<Vector3<f64>, IoError> {
        Ok(Vector3::new(self.float(line, rec, i)?, self.float(line, rec, i + 1)?, self.float(line, rec, i + 2)?))
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(file);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn v3(v: &Vector3<f64>) -> [String; 3] {
    [fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z)]
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    let rows = Rows::read(path)?;
    rows.expect_header(IMU_HEADER)?;
    let mut out: Vec<ImuSample> = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let s = ImuSample::new(rows.float(*line, rec, 0)?, rows.vec3(*line, rec, 1)?, rows.vec3(*line, rec, 4)?);
        if out.last().is_some_and(|p| s.stamp <= p.stamp) {
            return Err(IoError::NonMonotonic { path: rows.path.clone(), line: *line });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_imu(path: &Path, imu: &[ImuSample]) -> Result<(), IoError> {
    write_rows(
        path,
        IMU_HEADER,
        imu.iter().map(|s| {
            let mut r = vec![fmt_f64(s.stamp)];
            r.extend(v3(&s.gyro));
            r.extend(v3(&s.accel));
            r
        }),
    )
}

pub fn read_radar(path: &Path) -> Result<Vec<RadarScan>, IoError> {
    let rows = Rows::read(path)?;
    rows.expect_header(RADAR_HEADER)?;
    let mut out: Vec<RadarScan> = Vec::new();
    let mut last_id: Option<u64> = None;
    for (line, rec) in &rows.records {
        let t = rows.float(*line, rec, 0)?;
        let field = rec.get(1).unwrap_or("");
        let id: u64 = field.parse().map_err(|_| IoError::Parse {
            path: rows.path.clone(),
            line: *line,
            reason: format!("scan_id is not a non-negative integer: '{field}'"),
        })?;
        let point = RadarPoint::new(rows.vec3(*line, rec, 2)?, rows.float(*line, rec, 5)?);
        match last_id {
            Some(prev) if id == prev => {
                let scan = out.last_mut().expect("scan open");
                if t != scan.stamp {
                    return Err(IoError::Parse {
                        path: rows.path.clone(),
                        line: *line,
                        reason: format!("scan {id} changes stamp from {} to {t}", scan.stamp),
                    });
                }
                scan.points.push(point);
            }
            Some(prev) if id < prev => return Err(IoError::ScanOrder { path: rows.path.clone(), line: *line }),
            _ => {
                if out.last().is_some_and(|s| t <= s.stamp) {
                    return Err(IoError::NonMonotonic { path: rows.path.clone(), line: *line });
                }
                out.push(RadarScan { stamp: t, points: vec![point] });
                last_id = Some(id);
            }
        }
    }
    Ok(out)
}

pub fn write_radar(path: &Path, scans: &[RadarScan]) -> Result<(), IoError> {
    write_rows(
        path,
        RADAR_HEADER,
        scans.iter().enumerate().flat_map(|(id, scan)| {
            scan.points.iter().map(move |p| {
                let mut r = vec![fmt_f64(scan.stamp), id.to_string()];
                r.extend(v3(&p.p));
                r.push(fmt_f64(p.doppler));
                r
            })
        }),
    )
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let rows = Rows::read(path)?;
    let with_v: Vec<&str> = POSE_HEADER.iter().chain(VELOCITY_COLUMNS).copied().collect();
    let has_v = rows.header.len() == with_v.len();
    rows.expect_header(if has_v { &with_v } else { POSE_HEADER })?;
    let mut poses: Vec<PoseSample> = Vec::with_capacity(rows.records.len());
    for (line, rec) in &rows.records {
        let stamp = rows.float(*line, rec, 0)?;
        let p = rows.vec3(*line, rec, 1)?;
        let q = Quaternion::new(
            rows.float(*line, rec, 4)?,
            rows.float(*line, rec, 5)?,
            rows.float(*line, rec, 6)?,
            rows.float(*line, rec, 7)?,
        );
        let norm = q.norm();
        if (norm - 1.0).abs() > QUAT_REJECT {
            return Err(IoError::Quaternion { path: rows.path.clone(), line: *line, norm });
        }
        if (norm - 1.0).abs() > QUAT_WARN {
            warn!("{}:{line}: quaternion norm {norm}, normalising", rows.path.display());
        }
        let v = if has_v { Some(rows.vec3(*line, rec, 8)?) } else { None };
        if poses.last().is_some_and(|s| stamp <= s.stamp) {
            return Err(IoError::NonMonotonic { path: rows.path.clone(), line: *line });
        }
        // unit to rounding is kept bit for bit so that read and write stay inverse
        let q_gi = if (norm - 1.0).abs() <= QUAT_KEEP { q } else { q.normalize() };
        poses.push(PoseSample { stamp, q_gi, p_gi: p, v_gi: v });
    }
    Ok(Trajectory::new(poses))
}

pub fn read_truth(path: &Path) -> Result<Trajectory, IoError> {
    read_trajectory(path)
}

/// Velocity columns are written when every pose carries a velocity.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let has_v = !traj.is_empty() && traj.poses.iter().all(|p| p.v_gi.is_some());
    let header: Vec<&str> =
        POSE_HEADER.iter().chain(if has_v { VELOCITY_COLUMNS } else { &[] }).copied().collect();
    write_rows(
        path,
        &header,
        traj.poses.iter().map(|s| {
            let mut r = vec![fmt_f64(s.stamp)];
            r.extend(v3(&s.p_gi));
            r.extend([s.q_gi.w, s.q_gi.x, s.q_gi.y, s.q_gi.z].map(fmt_f64));
            if let (true, Some(v)) = (has_v, s.v_gi) {
                r.extend(v3(&v));
            }
            r
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateRow {
    pub t: f64,
    pub td_hat: f64,
    pub td_sigma: f64,
    pub residual: Vector3<f64>,
    pub n_inliers: usize,
}

pub fn write_estimate_log(path: &Path, rows: &[EstimateRow]) -> Result<(), IoError> {
    write_rows(
        path,
        ESTIMATE_HEADER,
        rows.iter().map(|e| {
            let mut r = vec![fmt_f64(e.t), fmt_f64(e.td_hat), fmt_f64(e.td_sigma)];
            r.extend(v3(&e.residual));
            r.push(e.n_inliers.to_string());
            r
        }),
    )
}

pub fn read_estimate_log(path: &Path) -> Result<Vec<EstimateRow>, IoError> {
    let rows = Rows::read(path)?;
    rows.expect_header(ESTIMATE_HEADER)?;
    rows.records
        .iter()
        .map(|(line, rec)| {
            let field = rec.get(6).unwrap_or("");
            let n_inliers = field.parse().map_err(|_| IoError::Parse {
                path: rows.path.clone(),
                line: *line,
                reason: format!("n_inliers is not a count: '{field}'"),
            })?;
            Ok(EstimateRow {
                t: rows.float(*line, rec, 0)?,
                td_hat: rows.float(*line, rec, 1)?,
                td_sigma: rows.float(*line, rec, 2)?,
                residual: rows.vec3(*line, rec, 3)?,
                n_inliers,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub sequence: String,
    pub ape_trans_m: f64,
    pub ape_rot_deg: f64,
    /// Empty when the reference path is shorter than one interval.
    pub rpe_trans_m: Option<f64>,
    pub rpe_rot_deg: Option<f64>,
    pub td_final_s: f64,
    pub td_sigma_s: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), IoError> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    write_rows(
        path,
        METRICS_HEADER,
        rows.iter().map(|m| {
            vec![
                m.sequence.clone(),
                fmt_f64(m.ape_trans_m),
                fmt_f64(m.ape_rot_deg),
                opt(m.rpe_trans_m),
                opt(m.rpe_rot_deg),
                fmt_f64(m.td_final_s),
                fmt_f64(m.td_sigma_s),
            ]
        }),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, IoError> {
    let rows = Rows::read(path)?;
    rows.expect_header(METRICS_HEADER)?;
    rows.records
        .iter()
        .map(|(line, rec)| {
            let opt = |i: usize| -> Result<Option<f64>, IoError> {
                if rec.get(i).unwrap_or("").is_empty() {
                    Ok(None)
                } else {
                    rows.float(*line, rec, i).map(Some)
                }
            };
            Ok(MetricsRow {
                sequence: rec.get(0).unwrap_or("").to_string(),
                ape_trans_m: rows.float(*line, rec, 1)?,
                ape_rot_deg: rows.float(*line, rec, 2)?,
                rpe_trans_m: opt(3)?,
                rpe_rot_deg: opt(4)?,
                td_final_s: rows.float(*line, rec, 5)?,
                td_sigma_s: rows.float(*line, rec, 6)?,
            })
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}

/// File layout of one dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub imu_path: PathBuf,
    pub radar_path: PathBuf,
    pub groundtruth_path: Option<PathBuf>,
    pub meta_path: PathBuf,
}

impl DatasetBundle {
    pub fn in_dir(dir: &Path) -> Self {
        let gt = dir.join("groundtruth.csv");
        Self {
            imu_path: dir.join("imu.csv"),
            radar_path: dir.join("radar.csv"),
            groundtruth_path: gt.exists().then_some(gt),
            meta_path: dir.join("meta.txt"),
        }
    }
}
