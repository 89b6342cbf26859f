//! Nominal state, error state, covariance and noise parameters.

use nalgebra::{DMatrix, SMatrix, SVector, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::so3::{small_angle_quat, Quaternion};

pub const STATE_DIM: usize = 16;
pub const NOISE_DIM: usize = 13;

/// Offsets of each block inside the error state, the covariance and the
/// columns of `F`, `G` and `H`.
pub mod idx {
    pub const ATT: usize = 0;
    pub const BG: usize = 3;
    pub const VEL: usize = 6;
    pub const BA: usize = 9;
    pub const POS: usize = 12;
    pub const TD: usize = 15;
}

/// Offsets inside the 13-dim process noise vector `(n_g, n_wg, n_a, n_wa, n_d)`.
pub mod noise_idx {
    pub const GYRO: usize = 0;
    pub const GYRO_WALK: usize = 3;
    pub const ACCEL: usize = 6;
    pub const ACCEL_WALK: usize = 9;
    pub const OFFSET: usize = 12;
}

pub type ErrorState = SVector<f64, STATE_DIM>;
pub type Covariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type NoiseCovariance = SMatrix<f64, NOISE_DIM, NOISE_DIM>;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("error state has a non-finite component at index {0}")]
    NonFiniteError(usize),
    #[error("invalid noise parameter {name}: {reason}")]
    InvalidNoise { name: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NominalState {
    /// Attitude of the IMU frame in the global frame.
    pub q_gi: Quaternion,
    pub b_g: Vector3<f64>,
    pub v_gi: Vector3<f64>,
    pub b_a: Vector3<f64>,
    pub p_gi: Vector3<f64>,
    /// IMU-radar time offset in seconds; radar stamp `t` maps to `t + t_d`.
    pub t_d: f64,
    /// Filter time on the IMU clock.
    pub stamp: f64,
}

impl Default for NominalState {
    fn default() -> Self {
        Self {
            q_gi: Quaternion::identity(),
            b_g: Vector3::zeros(),
            v_gi: Vector3::zeros(),
            b_a: Vector3::zeros(),
            p_gi: Vector3::zeros(),
            t_d: 0.0,
            stamp: 0.0,
        }
    }
}

/// Continuous-time noise densities and the gravity vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    /// Gyro white noise, rad/s/√Hz.
    pub sigma_g: f64,
    /// Gyro bias random walk, rad/s²/√Hz.
    pub sigma_wg: f64,
    /// Accelerometer white noise, m/s²/√Hz.
    pub sigma_a: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub sigma_wa: f64,
    /// Time offset random walk, s/√s.
    pub sigma_td: f64,
    pub gravity: Vector3<f64>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_g: 1e-3,
            sigma_wg: 1e-5,
            sigma_a: 1e-2,
            sigma_wa: 1e-4,
            sigma_td: 2e-3,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

impl NoiseParams {
    /// Checks sign constraints and, when `check_gravity`, that ‖g‖ ∈ [9.7, 9.9].
    pub fn validate(&self, check_gravity: bool) -> Result<(), StateError> {
        let sigmas = [
            ("sigma_g", self.sigma_g),
            ("sigma_wg", self.sigma_wg),
            ("sigma_a", self.sigma_a),
            ("sigma_wa", self.sigma_wa),
            ("sigma_td", self.sigma_td),
        ];
        for (name, s) in sigmas {
            if !(s.is_finite() && s >= 0.0) {
                return Err(StateError::InvalidNoise {
                    name,
                    reason: format!("must be finite and >= 0, got {s}"),
                });
            }
        }
        let g = self.gravity.norm();
        if !g.is_finite() || (check_gravity && !(9.7..=9.9).contains(&g)) {
            return Err(StateError::InvalidNoise {
                name: "gravity",
                reason: format!("norm {g} outside [9.7, 9.9]"),
            });
        }
        Ok(())
    }

    /// Diagonal continuous-time process noise covariance `Q_c`.
    pub fn continuous_cov(&self) -> NoiseCovariance {
        let mut q = NoiseCovariance::zeros();
        for i in 0..3 {
            q[(noise_idx::GYRO + i, noise_idx::GYRO + i)] = self.sigma_g.powi(2);
            q[(noise_idx::GYRO_WALK + i, noise_idx::GYRO_WALK + i)] = self.sigma_wg.powi(2);
            q[(noise_idx::ACCEL + i, noise_idx::ACCEL + i)] = self.sigma_a.powi(2);
            q[(noise_idx::ACCEL_WALK + i, noise_idx::ACCEL_WALK + i)] = self.sigma_wa.powi(2);
        }
        q[(noise_idx::OFFSET, noise_idx::OFFSET)] = self.sigma_td.powi(2);
        q
    }
}

/// Diagonal of the initial covariance, one variance per block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialCovariance {
    pub attitude: f64,
    pub gyro_bias: f64,
    pub velocity: f64,
    pub accel_bias: f64,
    pub position: f64,
    pub time_offset: f64,
}

impl Default for InitialCovariance {
    fn default() -> Self {
        Self {
            attitude: 1e-2,
            gyro_bias: 1e-4,
            velocity: 1e-2,
            accel_bias: 1e-4,
            position: 0.0,
            time_offset: 0.05 * 0.05,
        }
    }
}

impl InitialCovariance {
    pub fn to_matrix(&self) -> Covariance {
        let mut p = Covariance::zeros();
        let blocks = [
            (idx::ATT, self.attitude),
            (idx::BG, self.gyro_bias),
            (idx::VEL, self.velocity),
            (idx::BA, self.accel_bias),
            (idx::POS, self.position),
        ];
        for (start, var) in blocks {
            for i in 0..3 {
                p[(start + i, start + i)] = var;
            }
        }
        p[(idx::TD, idx::TD)] = self.time_offset;
        p
    }
}

/// Applies an error state to a nominal state: additive on vectors and `t_d`,
/// right-multiplied small-angle quaternion on the attitude.
pub fn inject_error(x: &NominalState, dx: &ErrorState) -> Result<NominalState, StateError> {
    if let Some(i) = dx.iter().position(|v| !v.is_finite()) {
        return Err(StateError::NonFiniteError(i));
    }
    let theta: Vector3<f64> = dx.fixed_rows::<3>(idx::ATT).into();
    let q_gi = if theta == Vector3::zeros() {
        x.q_gi
    } else {
        x.q_gi.hamilton(&small_angle_quat(&theta)).normalize()
    };
    Ok(NominalState {
        q_gi,
        b_g: x.b_g + dx.fixed_rows::<3>(idx::BG),
        v_gi: x.v_gi + dx.fixed_rows::<3>(idx::VEL),
        b_a: x.b_a + dx.fixed_rows::<3>(idx::BA),
        p_gi: x.p_gi + dx.fixed_rows::<3>(idx::POS),
        t_d: x.t_d + dx[idx::TD],
        stamp: x.stamp,
    })
}

/// Covariance after the error mean has been injected. The reset Jacobian is
/// taken as identity, so this only restores exact symmetry.
pub fn reset_error(p: &Covariance) -> Covariance {
    symmetrize(p)
}

pub fn symmetrize<const N: usize>(p: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (p + p.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<const N: usize>(p: &SMatrix<f64, N, N>) -> f64 {
    let s = symmetrize(p);
    SymmetricEigen::new(DMatrix::from_column_slice(N, N, s.as_slice())).eigenvalues.min()
}

/// Symmetric within `1e-9` (relative to the largest entry) and
/// `λ_min ≥ -1e-9 · trace`.
pub fn is_valid_covariance<const N: usize>(p: &SMatrix<f64, N, N>) -> bool {
    if p.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let scale = p.amax().max(1e-300);
    if (p - p.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    min_eigenvalue(p) >= -1e-9 * p.trace().abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn sample_state() -> NominalState {
        NominalState {
            q_gi: Quaternion::new(0.8, 0.1, -0.3, 0.5).normalize(),
            b_g: Vector3::new(0.01, -0.02, 0.005),
            v_gi: Vector3::new(1.0, 2.0, -0.5),
            b_a: Vector3::new(0.1, 0.0, -0.05),
            p_gi: Vector3::new(10.0, -3.0, 2.0),
            t_d: -0.1,
            stamp: 12.5,
        }
    }

    #[test]
    fn zero_error_is_identity() {
        let x = sample_state();
        assert_eq!(inject_error(&x, &ErrorState::zeros()).unwrap(), x);
    }

    #[test]
    fn offset_block_isolated() {
        let x = sample_state();
        let mut dx = ErrorState::zeros();
        dx[idx::TD] = 0.01;
        let y = inject_error(&x, &dx).unwrap();
        assert_eq!(y.t_d, x.t_d + 0.01);
        assert_eq!(y.q_gi, x.q_gi);
        assert_eq!(y.v_gi, x.v_gi);
        assert_eq!(y.p_gi, x.p_gi);
        assert_eq!(y.b_g, x.b_g);
        assert_eq!(y.b_a, x.b_a);
    }

    #[test]
    fn attitude_error_matches_exponential_map() {
        let x = NominalState::default();
        let mut dx = ErrorState::zeros();
        dx[idx::ATT] = 1e-3;
        let q = inject_error(&x, &dx).unwrap().q_gi;
        let exact = UnitQuaternion::from_scaled_axis(Vector3::new(1e-3, 0.0, 0.0));
        let diff = (q.as_vector4() - nalgebra::Vector4::new(exact.w, exact.i, exact.j, exact.k)).norm();
        assert!(diff < 1e-7, "{diff}");
    }

    #[test]
    fn non_finite_error_rejected() {
        let mut dx = ErrorState::zeros();
        dx[7] = f64::NAN;
        assert_eq!(
            inject_error(&sample_state(), &dx),
            Err(StateError::NonFiniteError(7))
        );
    }

    #[test]
    fn reset_symmetrizes() {
        let p = InitialCovariance::default().to_matrix();
        assert_eq!(reset_error(&p), p);
        let mut q = p;
        q[(0, 1)] += 1e-12;
        let r = reset_error(&q);
        assert_eq!(r, (q + q.transpose()) * 0.5);
        assert_eq!(r, r.transpose());
    }

    #[test]
    fn initial_covariance_layout() {
        let p = InitialCovariance::default().to_matrix();
        assert_eq!(p[(0, 0)], 1e-2);
        assert_eq!(p[(4, 4)], 1e-4);
        assert_eq!(p[(12, 12)], 0.0);
        assert!((p[(15, 15)] - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseParams::default().validate(true).is_ok());
        let bad = NoiseParams { sigma_a: -1.0, ..Default::default() };
        assert!(bad.validate(true).is_err());
        let moon = NoiseParams { gravity: Vector3::new(0.0, 0.0, -1.62), ..Default::default() };
        assert!(moon.validate(true).is_err());
        assert!(moon.validate(false).is_ok());
    }

    fn err_vec(scale: f64) -> impl Strategy<Value = ErrorState> {
        proptest::collection::vec(-scale..scale, STATE_DIM)
            .prop_map(|v| ErrorState::from_column_slice(&v))
    }

    proptest! {
        #[test]
        fn injection_is_additive(a in err_vec(1e-4), b in err_vec(1e-4)) {
            let x = sample_state();
            let twice = inject_error(&inject_error(&x, &a).unwrap(), &b).unwrap();
            let once = inject_error(&x, &(a + b)).unwrap();
            // vector blocks: same additions in a different order
            prop_assert!((twice.v_gi - once.v_gi).amax() < 1e-12);
            prop_assert!((twice.p_gi - once.p_gi).amax() < 1e-12);
            prop_assert!((twice.b_g - once.b_g).amax() < 1e-15);
            prop_assert!((twice.t_d - once.t_d).abs() < 1e-15);
            let dq = (twice.q_gi.as_vector4() - once.q_gi.as_vector4()).norm();
            prop_assert!(dq < 1e-7);
        }

        #[test]
        fn reset_preserves_psd(v in proptest::collection::vec(-1.0..1.0f64, STATE_DIM * STATE_DIM)) {
            let a = Covariance::from_column_slice(&v);
            let p = a * a.transpose();
            let r = reset_error(&p);
            prop_assert!(min_eigenvalue(&r) >= -1e-12 * r.trace());
        }
    }
}
