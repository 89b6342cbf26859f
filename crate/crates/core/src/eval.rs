//! Trajectory accuracy metrics: origin alignment, APE, RPE and the motion
//! intensity of the gyro stream.

use nalgebra::Vector3;
use thiserror::Error;

use crate::propagation::ImuSample;
use crate::so3::{rotation_angle, RotationMatrix};
use crate::trajectory::{PoseSample, Trajectory};

/// Largest stamp difference for two poses to be associated, s.
pub const ASSOCIATION_TOLERANCE: f64 = 0.01;
pub const DEFAULT_RPE_INTERVAL: f64 = 10.0;
pub const DEFAULT_DELTA_OMEGA_WINDOW: f64 = 0.11;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no estimated pose lies within {ASSOCIATION_TOLERANCE} s of a reference pose")]
    NoAssociation,
    #[error("reference path of {length:.3} m is shorter than the {interval} m interval")]
    PathTooShort { length: f64, interval: f64 },
    #[error("IMU data does not cover [{from}, {to}]")]
    InsufficientSamples { from: f64, to: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub trans_m: f64,
    pub rot_deg: f64,
}

/// Index pairs `(est, ref)` matched by nearest stamp within the tolerance.
pub fn associate(est: &Trajectory, reference: &Trajectory) -> Vec<(usize, usize)> {
    let r = &reference.poses;
    est.poses
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let k = r.partition_point(|p| p.stamp < e.stamp);
            let best = [k.checked_sub(1), (k < r.len()).then_some(k)]
                .into_iter()
                .flatten()
                .min_by(|a, b| (r[*a].stamp - e.stamp).abs().total_cmp(&(r[*b].stamp - e.stamp).abs()))?;
            ((r[best].stamp - e.stamp).abs() <= ASSOCIATION_TOLERANCE).then_some((i, best))
        })
        .collect()
}

fn rot(p: &PoseSample) -> RotationMatrix {
    p.q_gi.to_rotation_matrix()
}

/// Rigidly moves `est` so that its first associated pose coincides with the
/// matching reference pose.
pub fn origin_align(est: &Trajectory, reference: &Trajectory) -> Result<Trajectory, EvalError> {
    let &(i0, j0) = associate(est, reference).first().ok_or(EvalError::NoAssociation)?;
    let (e0, r0) = (&est.poses[i0], &reference.poses[j0]);
    if e0.q_gi == r0.q_gi && e0.p_gi == r0.p_gi {
        // identity transform; q q⁻¹ would only reproduce it up to rounding
        return Ok(est.clone());
    }
    let q_a = r0.q_gi * e0.q_gi.inverse();
    let r_a = q_a.to_rotation_matrix();
    let mut poses: Vec<PoseSample> = est
        .poses
        .iter()
        .map(|p| PoseSample {
            stamp: p.stamp,
            q_gi: q_a * p.q_gi,
            p_gi: r_a * (p.p_gi - e0.p_gi) + r0.p_gi,
            v_gi: p.v_gi.map(|v| r_a * v),
        })
        .collect();
    // pin the anchor exactly instead of up to rounding
    poses[i0].q_gi = r0.q_gi;
    poses[i0].p_gi = r0.p_gi;
    Ok(Trajectory::new(poses))
}

fn rmse(errors: &[(f64, f64)]) -> PoseError {
    let n = errors.len() as f64;
    let (st, sr) = errors.iter().fold((0.0, 0.0), |(a, b), (t, r)| (a + t * t, b + r * r));
    PoseError { trans_m: (st / n).sqrt(), rot_deg: (sr / n).sqrt() }
}

/// RMSE of position distance and geodesic rotation angle over associated
/// poses. Expects an aligned estimate.
pub fn ape_rmse(est: &Trajectory, reference: &Trajectory) -> Result<PoseError, EvalError> {
    let pairs = associate(est, reference);
    if pairs.is_empty() {
        return Err(EvalError::NoAssociation);
    }
    let errors: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(i, j)| {
            let (e, r) = (&est.poses[i], &reference.poses[j]);
            ((e.p_gi - r.p_gi).norm(), rotation_angle(&(rot(r).transpose() * rot(e))).to_degrees())
        })
        .collect();
    Ok(rmse(&errors))
}

fn relative(a: &PoseSample, b: &PoseSample) -> (RotationMatrix, Vector3<f64>) {
    let ra = rot(a);
    (ra.transpose() * rot(b), ra.transpose() * (b.p_gi - a.p_gi))
}

/// Pose pairs tiling the reference path into consecutive, non-overlapping
/// stretches of at least `interval_m` arc length.
/// Each entry holds the `(est, ref)` index pairs at both ends.
pub fn rpe_pairs(est: &Trajectory, reference: &Trajectory, interval_m: f64) -> Vec<((usize, usize), (usize, usize))> {
    let pairs = associate(est, reference);
    let mut arc = Vec::with_capacity(reference.len());
    let mut acc = 0.0;
    for (k, p) in reference.poses.iter().enumerate() {
        if k > 0 {
            acc += (p.p_gi - reference.poses[k - 1].p_gi).norm();
        }
        arc.push(acc);
    }
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..pairs.len() {
        if arc[pairs[k].1] - arc[pairs[start].1] >= interval_m {
            out.push((start, k));
            start = k;
        }
    }
    out.into_iter().map(|(a, b)| (pairs[a], pairs[b])).collect()
}

/// RMSE of the relative-pose discrepancy `T_ref(i,j)⁻¹ T_est(i,j)` over the
/// tiled pairs.
pub fn rpe_rmse(est: &Trajectory, reference: &Trajectory, interval_m: f64) -> Result<PoseError, EvalError> {
    if associate(est, reference).is_empty() {
        return Err(EvalError::NoAssociation);
    }
    let tiles = rpe_pairs(est, reference, interval_m);
    if tiles.is_empty() {
        return Err(EvalError::PathTooShort { length: reference.path_length(), interval: interval_m });
    }
    let errors: Vec<(f64, f64)> = tiles
        .iter()
        .map(|&((ea, ra), (eb, rb))| {
            let (re, te) = relative(&est.poses[ea], &est.poses[eb]);
            let (rr, tr) = relative(&reference.poses[ra], &reference.poses[rb]);
            let d_rot = rr.transpose() * re;
            let d_trans = rr.transpose() * (te - tr);
            (d_trans.norm(), rotation_angle(&d_rot).to_degrees())
        })
        .collect();
    Ok(rmse(&errors))
}

/// Norm of the mean gyro reading over `[t - window, t]`.
pub fn delta_omega(imu: &[ImuSample], t: f64, window: f64) -> Result<f64, EvalError> {
    let from = t - window;
    let err = EvalError::InsufficientSamples { from, to: t };
    match (imu.first(), imu.last()) {
        (Some(a), Some(b)) if a.stamp <= from && b.stamp >= t => {}
        _ => return Err(err),
    }
    let lo = imu.partition_point(|s| s.stamp < from);
    let hi = imu.partition_point(|s| s.stamp <= t);
    if hi <= lo {
        return Err(err);
    }
    let sum: Vector3<f64> = imu[lo..hi].iter().map(|s| s.gyro).sum();
    Ok((sum / (hi - lo) as f64).norm())
}
