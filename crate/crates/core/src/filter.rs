//! The error-state filter: nominal state, covariance and one-step operations.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ego_velocity::{ransac_estimate, EgoVelocityError, RadarScan, RansacConfig};
use crate::propagation::{compute_f, compute_g, propagate_covariance, rk4_step, ImuSample, PropagationError};
use crate::state::{idx, is_valid_covariance, Covariance, NoiseCovariance, NoiseParams, NominalState, StateError};
use crate::update::{
    compute_h, compute_residual, kalman_update, offset_excitation, predict_ego_velocity, CovarianceForm, Extrinsics,
    UpdateError, CHI2_3DOF_0997,
};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("covariance lost symmetry or positive semi-definiteness at t = {0}")]
    Covariance(f64),
}

/// Source of the ego-velocity measurement covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeasurementNoise {
    /// Covariance reported by the least-squares fit on the inliers.
    Lsq,
    /// Isotropic, with the given standard deviation in m/s.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub noise: NoiseParams,
    pub extrinsics: Extrinsics,
    pub ransac: RansacConfig,
    pub covariance_form: CovarianceForm,
    pub chi2_gate: bool,
    /// Minimum excitation statistic for the offset column to take part in an
    /// update. Zero disables the check.
    pub td_excitation_gate: f64,
    pub meas_noise: MeasurementNoise,
    /// Largest lag, in seconds, at which a scan whose corrected time is
    /// already behind the filter is still applied.
    pub stale_tolerance: f64,
    /// Check the covariance after every operation.
    pub check_covariance: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: NoiseParams::default(),
            extrinsics: Extrinsics::default(),
            ransac: RansacConfig::default(),
            covariance_form: CovarianceForm::Joseph,
            chi2_gate: false,
            td_excitation_gate: 30.0,
            meas_noise: MeasurementNoise::Lsq,
            stale_tolerance: 0.01,
            check_covariance: false,
        }
    }
}

/// Why a scan did not produce an update.
#[derive(Clone, Debug, PartialEq)]
pub enum SkipReason {
    Stale { lag: f64 },
    EgoVelocity(EgoVelocityError),
    Gated { nis: f64 },
    SingularInnovation,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Stale { lag } => write!(f, "stale by {lag:.4} s"),
            Self::EgoVelocity(e) => write!(f, "ego-velocity: {e}"),
            Self::Gated { nis } => write!(f, "gated (NIS {nis:.2})"),
            Self::SingularInnovation => write!(f, "singular innovation covariance"),
        }
    }
}

/// Result of one applied radar update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateRecord {
    /// Filter time at which the update was applied.
    pub t: f64,
    pub td_hat: f64,
    pub td_sigma: f64,
    pub residual: Vector3<f64>,
    pub n_inliers: usize,
    pub nis: f64,
    /// Whether the offset column took part.
    pub td_excited: bool,
    pub state: NominalState,
}

#[derive(Clone, Debug)]
pub struct Filter {
    state: NominalState,
    cov: Covariance,
    cfg: FilterConfig,
    qc: NoiseCovariance,
    rng: ChaCha8Rng,
}

impl Filter {
    pub fn new(state: NominalState, cov: Covariance, cfg: FilterConfig, seed: u64) -> Result<Self, FilterError> {
        cfg.noise.validate(false)?;
        let qc = cfg.noise.continuous_cov();
        Ok(Self { state, cov, cfg, qc, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn state(&self) -> &NominalState {
        &self.state
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn stamp(&self) -> f64 {
        self.state.stamp
    }

    /// Overrides the offset estimate, keeping its variance.
    pub fn reset_offset(&mut self, t_d: f64) {
        self.state.t_d = t_d;
    }

    pub fn td_sigma(&self) -> f64 {
        self.cov[(idx::TD, idx::TD)].max(0.0).sqrt()
    }

    /// One RK4 step plus covariance propagation over `[stamp, stamp + dt]`,
    /// inside the IMU interval `[u0, u1]`.
    pub fn propagate_step(&mut self, u0: &ImuSample, u1: &ImuSample, dt: f64) -> Result<(), FilterError> {
        let start = ImuSample::interpolate(u0, u1, self.state.stamp);
        let f = compute_f(&self.state, &start);
        let g = compute_g(&self.state);
        let next = rk4_step(&self.state, u0, u1, dt, &self.cfg.noise.gravity)?;
        self.cov = propagate_covariance(&self.cov, &f, &g, &self.qc, dt);
        self.state = next;
        self.check()
    }

    /// Propagates up to `target` through the buffered samples. Emits the
    /// `(from, to)` span of every integration step.
    pub fn propagate_to(
        &mut self,
        target: f64,
        imu: &VecDeque<ImuSample>,
        mut on_step: impl FnMut(f64, f64),
    ) -> Result<(), FilterError> {
        while self.state.stamp < target {
            let cur = self.state.stamp;
            let k = imu.partition_point(|s| s.stamp <= cur);
            if k == 0 || k >= imu.len() {
                return Err(PropagationError::NotCovered(cur).into());
            }
            let (u0, u1) = (imu[k - 1], imu[k]);
            let end = target.min(u1.stamp);
            self.propagate_step(&u0, &u1, end - cur)?;
            // land exactly on the requested time
            self.state.stamp = end;
            on_step(cur, end);
        }
        Ok(())
    }

    /// Ego-velocity update from `scan`, with `u` the IMU reading at the
    /// scan's corrected time and `imu_rate` the local sample rate.
    pub fn update(&mut self, scan: &RadarScan, u: &ImuSample, imu_rate: f64) -> Result<UpdateRecord, SkipReason> {
        let est = ransac_estimate(scan, &self.cfg.ransac, &mut self.rng).map_err(SkipReason::EgoVelocity)?;
        let pred = predict_ego_velocity(&self.state, u, &self.cfg.extrinsics);
        let r = compute_residual(&est, &pred);
        let mut h = compute_h(&self.state, u, &self.cfg.extrinsics, &self.cfg.noise.gravity);
        let n = &self.cfg.noise;
        let excited = self.cfg.td_excitation_gate <= 0.0
            || offset_excitation(&h, n.sigma_g, n.sigma_a, imu_rate) >= self.cfg.td_excitation_gate;
        if !excited {
            h.set_column(idx::TD, &Vector3::zeros());
        }
        let r_meas = match self.cfg.meas_noise {
            MeasurementNoise::Lsq => est.meas_cov,
            MeasurementNoise::Fixed(s) => Matrix3::identity() * (s * s),
        };
        let gate = self.cfg.chi2_gate.then_some(CHI2_3DOF_0997);
        let out = match kalman_update(&self.state, &self.cov, &r, &h, &r_meas, self.cfg.covariance_form, gate) {
            Ok(out) => out,
            Err(UpdateError::Gated { nis }) => return Err(SkipReason::Gated { nis }),
            Err(UpdateError::SingularInnovation) | Err(UpdateError::State(_)) => {
                return Err(SkipReason::SingularInnovation)
            }
        };
        self.state = out.state;
        self.cov = out.cov;
        if self.cfg.check_covariance && !is_valid_covariance(&self.cov) {
            return Err(SkipReason::SingularInnovation);
        }
        Ok(UpdateRecord {
            t: self.state.stamp,
            td_hat: self.state.t_d,
            td_sigma: self.td_sigma(),
            residual: r,
            n_inliers: est.n_inliers,
            nis: out.nis,
            td_excited: excited,
            state: self.state,
        })
    }

    fn check(&self) -> Result<(), FilterError> {
        if self.cfg.check_covariance && !is_valid_covariance(&self.cov) {
            return Err(FilterError::Covariance(self.state.stamp));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::InitialCovariance;

    fn still_imu(n: usize, rate: f64) -> VecDeque<ImuSample> {
        (0..n)
            .map(|i| ImuSample::new(i as f64 / rate, Vector3::zeros(), Vector3::new(0.0, 0.0, 9.81)))
            .collect()
    }

    #[test]
    fn propagates_across_sample_boundaries() {
        let imu = still_imu(11, 10.0);
        let mut f = Filter::new(NominalState::default(), InitialCovariance::default().to_matrix(), FilterConfig::default(), 0).unwrap();
        let mut spans = vec![];
        f.propagate_to(0.25, &imu, |a, b| spans.push((a, b))).unwrap();
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[2], (0.2, 0.25));
        assert_eq!(f.stamp(), 0.25);
        f.propagate_to(0.3, &imu, |a, b| spans.push((a, b))).unwrap();
        assert_eq!(spans[3], (0.25, 0.3));
        assert!(f.state().p_gi.norm() < 1e-12);
    }

    #[test]
    fn propagation_needs_coverage() {
        let imu = still_imu(3, 10.0);
        let mut f = Filter::new(NominalState::default(), Covariance::identity(), FilterConfig::default(), 0).unwrap();
        assert!(matches!(f.propagate_to(0.5, &imu, |_, _| {}), Err(FilterError::Propagation(PropagationError::NotCovered(_)))));
    }

    #[test]
    fn covariance_check_catches_corruption() {
        let imu = still_imu(3, 10.0);
        let mut p = Covariance::identity();
        p[(0, 0)] = -1.0;
        let cfg = FilterConfig { check_covariance: true, ..Default::default() };
        let mut f = Filter::new(NominalState::default(), p, cfg, 0).unwrap();
        assert!(matches!(f.propagate_to(0.05, &imu, |_, _| {}), Err(FilterError::Covariance(_))));
    }
}
