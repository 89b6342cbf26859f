//! Radar ego-velocity measurement model and the EKF update.

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::ego_velocity::EgoVelocityEstimate;
use crate::propagation::ImuSample;
use crate::so3::{quat_to_rot, skew, Quaternion, RotationMatrix};
use crate::state::{idx, inject_error, reset_error, Covariance, ErrorState, NominalState, StateError, STATE_DIM};

pub type MeasurementJacobian = SMatrix<f64, 3, STATE_DIM>;
type Gain = SMatrix<f64, STATE_DIM, 3>;

/// 0.997 quantile of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_3DOF_0997: f64 = 13.931_422_665_512_084;

#[derive(Debug, Error, PartialEq)]
pub enum UpdateError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("innovation rejected by chi-square gate (NIS {nis:.3})")]
    Gated { nis: f64 },
    #[error(transparent)]
    State(#[from] StateError),
}

/// Fixed IMU-to-radar transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    /// Rotation from the IMU frame to the radar frame.
    pub r_ri: RotationMatrix,
    /// Radar origin in the IMU frame, m.
    pub p_ir: Vector3<f64>,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self { r_ri: Matrix3::identity(), p_ir: Vector3::new(0.1, 0.0, 0.05) }
    }
}

impl Extrinsics {
    pub fn from_quaternion(q_ri: &Quaternion, p_ir: Vector3<f64>) -> Self {
        Self { r_ri: quat_to_rot(&q_ri.normalize()), p_ir }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CovarianceForm {
    /// `(I - KH) P (I - KH)ᵀ + K R Kᵀ`
    #[default]
    Joseph,
    /// `(I - KH) P`, symmetrised.
    Simple,
}

/// Radar ego-velocity predicted from the state and the IMU sample at the
/// corrected time: `R_RI (Rᵀ v + (ω - b_g) × p_IR)`.
pub fn predict_ego_velocity(x: &NominalState, u: &ImuSample, ext: &Extrinsics) -> Vector3<f64> {
    let r = quat_to_rot(&x.q_gi);
    ext.r_ri * (r.transpose() * x.v_gi + skew(&(u.gyro - x.b_g)) * ext.p_ir)
}

pub fn compute_residual(meas: &EgoVelocityEstimate, pred: &Vector3<f64>) -> Vector3<f64> {
    meas.v_r - pred
}

/// Measurement Jacobian with respect to the error state. The `t_d` column is
/// the chain rule through the attitude and velocity rates at the corrected time.
pub fn compute_h(x: &NominalState, u: &ImuSample, ext: &Extrinsics, gravity: &Vector3<f64>) -> MeasurementJacobian {
    let r = quat_to_rot(&x.q_gi);
    let h_q = ext.r_ri * skew(&(r.transpose() * x.v_gi));
    let h_bg = ext.r_ri * skew(&ext.p_ir);
    let h_v = ext.r_ri * r.transpose();
    let h_td = h_q * (u.gyro - x.b_g) + h_v * (r * (u.accel - x.b_a) + gravity);

    let mut h = MeasurementJacobian::zeros();
    h.fixed_view_mut::<3, 3>(0, idx::ATT).copy_from(&h_q);
    h.fixed_view_mut::<3, 3>(0, idx::BG).copy_from(&h_bg);
    h.fixed_view_mut::<3, 3>(0, idx::VEL).copy_from(&h_v);
    h.set_column(idx::TD, &h_td);
    h
}

/// How strongly the `t_d` column stands out from the IMU noise that enters
/// it: `h_tdᵀ C⁻¹ h_td` with `C` the covariance the white gyro and
/// accelerometer noise of one sample induce on `h_td`.
pub fn offset_excitation(h: &MeasurementJacobian, sigma_g: f64, sigma_a: f64, imu_rate: f64) -> f64 {
    let h_q = h.fixed_view::<3, 3>(0, idx::ATT);
    let h_td: Vector3<f64> = h.column(idx::TD).into();
    let c = h_q * h_q.transpose() * (sigma_g * sigma_g * imu_rate)
        + Matrix3::identity() * (sigma_a * sigma_a * imu_rate + 1e-18);
    match c.cholesky() {
        Some(ch) => h_td.dot(&ch.solve(&h_td)),
        None => f64::INFINITY,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub state: NominalState,
    pub cov: Covariance,
    pub correction: ErrorState,
    /// Normalised innovation squared `rᵀ S⁻¹ r`.
    pub nis: f64,
}

/// Standard error-state Kalman update followed by injection and reset.
/// With `gate` set, innovations whose NIS exceeds the value are rejected.
pub fn kalman_update(
    x: &NominalState,
    p: &Covariance,
    r: &Vector3<f64>,
    h: &MeasurementJacobian,
    r_meas: &Matrix3<f64>,
    form: CovarianceForm,
    gate: Option<f64>,
) -> Result<UpdateOutcome, UpdateError> {
    let s = h * p * h.transpose() + r_meas;
    let s = (s + s.transpose()) * 0.5;
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(UpdateError::SingularInnovation)?;
    let nis = r.dot(&(s_inv * r));
    if let Some(limit) = gate {
        if nis > limit {
            return Err(UpdateError::Gated { nis });
        }
    }
    let k: Gain = p * h.transpose() * s_inv;
    let dx = k * r;
    let state = inject_error(x, &dx)?;
    let ikh = Covariance::identity() - k * h;
    let cov = match form {
        CovarianceForm::Joseph => ikh * p * ikh.transpose() + k * r_meas * k.transpose(),
        CovarianceForm::Simple => ikh * p,
    };
    Ok(UpdateOutcome { state, cov: reset_error(&cov), correction: dx, nis })
}
