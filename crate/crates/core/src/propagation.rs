//! Nominal-state RK4 integration and error-state covariance propagation.

use nalgebra::{SMatrix, Vector3, Vector4};
use thiserror::Error;

use crate::so3::{omega_matrix, quat_to_rot, skew, Quaternion};
use crate::state::{idx, noise_idx, symmetrize, Covariance, NoiseCovariance, NominalState, NOISE_DIM, STATE_DIM};

pub type TransitionMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type NoiseJacobian = SMatrix<f64, STATE_DIM, NOISE_DIM>;

/// Slack allowed when an integration step ends past the bracketing sample.
const STAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("step to {end} runs past the bracketing IMU sample at {bound}")]
    BeyondSample { end: f64, bound: f64 },
    #[error("no IMU data covers time {0}")]
    NotCovered(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Arrival stamp on the IMU clock, seconds.
    pub stamp: f64,
    /// Measured body rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Measured specific force, m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(stamp: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { stamp, gyro, accel }
    }

    pub fn is_finite(&self) -> bool {
        self.stamp.is_finite()
            && self.gyro.iter().all(|v| v.is_finite())
            && self.accel.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation between two samples at time `t`.
    pub fn interpolate(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let span = b.stamp - a.stamp;
        if span <= 0.0 {
            return ImuSample { stamp: t, ..*a };
        }
        let s = (t - a.stamp) / span;
        ImuSample {
            stamp: t,
            gyro: a.gyro + (b.gyro - a.gyro) * s,
            accel: a.accel + (b.accel - a.accel) * s,
        }
    }
}

/// Time derivative of the nominal state. Bias and offset derivatives are zero
/// and therefore not stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub q_dot: Vector4<f64>,
    pub v_dot: Vector3<f64>,
    pub p_dot: Vector3<f64>,
}

pub fn continuous_dynamics(x: &NominalState, u: &ImuSample, gravity: &Vector3<f64>) -> StateDerivative {
    let w = u.gyro - x.b_g;
    let a = u.accel - x.b_a;
    StateDerivative {
        q_dot: 0.5 * omega_matrix(&w) * x.q_gi.as_vector4(),
        v_dot: quat_to_rot(&x.q_gi) * a + gravity,
        p_dot: x.v_gi,
    }
}

/// Integrates the nominal state by `dt` with classic RK4. IMU inputs are
/// linearly interpolated between `u0` and `u1` at each stage time.
pub fn rk4_step(
    x: &NominalState,
    u0: &ImuSample,
    u1: &ImuSample,
    dt: f64,
    gravity: &Vector3<f64>,
) -> Result<NominalState, PropagationError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PropagationError::InvalidStep(dt));
    }
    let end = x.stamp + dt;
    if end > u1.stamp + STAMP_TOLERANCE {
        return Err(PropagationError::BeyondSample { end, bound: u1.stamp });
    }

    let input = |t: f64| ImuSample::interpolate(u0, u1, t);
    // Stage states carry an unnormalised quaternion; the rotation uses its
    // normalised version.
    let deriv = |q: &Vector4<f64>, v: &Vector3<f64>, u: &ImuSample| {
        let w = u.gyro - x.b_g;
        let a = u.accel - x.b_a;
        let qn = Quaternion::from_vector4(q).normalize();
        (0.5 * omega_matrix(&w) * q, quat_to_rot(&qn) * a + gravity, *v)
    };

    let (q0, v0, p0) = (x.q_gi.as_vector4(), x.v_gi, x.p_gi);
    let (ua, um, ub) = (input(x.stamp), input(x.stamp + 0.5 * dt), input(end));

    let (kq1, kv1, kp1) = deriv(&q0, &v0, &ua);
    let (kq2, kv2, kp2) = deriv(&(q0 + 0.5 * dt * kq1), &(v0 + 0.5 * dt * kv1), &um);
    let (kq3, kv3, kp3) = deriv(&(q0 + 0.5 * dt * kq2), &(v0 + 0.5 * dt * kv2), &um);
    let (kq4, kv4, kp4) = deriv(&(q0 + dt * kq3), &(v0 + dt * kv3), &ub);

    let h = dt / 6.0;
    let q = q0 + h * (kq1 + 2.0 * kq2 + 2.0 * kq3 + kq4);
    Ok(NominalState {
        q_gi: Quaternion::from_vector4(&q).normalize(),
        v_gi: v0 + h * (kv1 + 2.0 * kv2 + 2.0 * kv3 + kv4),
        p_gi: p0 + h * (kp1 + 2.0 * kp2 + 2.0 * kp3 + kp4),
        stamp: end,
        ..*x
    })
}

/// Error-state dynamics matrix `F`.
pub fn compute_f(x: &NominalState, u: &ImuSample) -> TransitionMatrix {
    let w = u.gyro - x.b_g;
    let a = u.accel - x.b_a;
    let r = quat_to_rot(&x.q_gi);
    let mut f = TransitionMatrix::zeros();
    f.fixed_view_mut::<3, 3>(idx::ATT, idx::ATT).copy_from(&(-skew(&w)));
    f.fixed_view_mut::<3, 3>(idx::ATT, idx::BG).fill_with_identity();
    f.fixed_view_mut::<3, 3>(idx::ATT, idx::BG).neg_mut();
    f.fixed_view_mut::<3, 3>(idx::VEL, idx::ATT).copy_from(&(-r * skew(&a)));
    f.fixed_view_mut::<3, 3>(idx::VEL, idx::BA).copy_from(&(-r));
    f.fixed_view_mut::<3, 3>(idx::POS, idx::VEL).fill_with_identity();
    f
}

/// Noise Jacobian `G` for the noise ordering `(n_g, n_wg, n_a, n_wa, n_d)`.
pub fn compute_g(x: &NominalState) -> NoiseJacobian {
    let r = quat_to_rot(&x.q_gi);
    let mut g = NoiseJacobian::zeros();
    g.fixed_view_mut::<3, 3>(idx::ATT, noise_idx::GYRO).fill_with_identity();
    g.fixed_view_mut::<3, 3>(idx::ATT, noise_idx::GYRO).neg_mut();
    g.fixed_view_mut::<3, 3>(idx::BG, noise_idx::GYRO_WALK).fill_with_identity();
    g.fixed_view_mut::<3, 3>(idx::VEL, noise_idx::ACCEL).copy_from(&(-r));
    g.fixed_view_mut::<3, 3>(idx::BA, noise_idx::ACCEL_WALK).fill_with_identity();
    g[(idx::TD, noise_idx::OFFSET)] = 1.0;
    g
}

/// Second-order truncation `I + F dt + ½ (F dt)²` of the transition matrix.
pub fn transition_matrix(f: &TransitionMatrix, dt: f64) -> TransitionMatrix {
    let fdt = f * dt;
    TransitionMatrix::identity() + fdt + 0.5 * fdt * fdt
}

/// `Φ P Φᵀ + Q_k` with trapezoidal `Q_k = ½ (Φ G Q_c Gᵀ Φᵀ + G Q_c Gᵀ) dt`.
pub fn propagate_covariance(
    p: &Covariance,
    f: &TransitionMatrix,
    g: &NoiseJacobian,
    qc: &NoiseCovariance,
    dt: f64,
) -> Covariance {
    let phi = transition_matrix(f, dt);
    let gqg = g * qc * g.transpose();
    let qk = 0.5 * (phi * gqg * phi.transpose() + gqg) * dt;
    symmetrize(&(phi * p * phi.transpose() + qk))
}
