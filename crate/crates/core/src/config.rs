//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use thiserror::Error;

use crate::filter::{FilterConfig, MeasurementNoise};
use crate::simulator::{SimConfig, TrajectoryKind};
use crate::so3::Quaternion;
use crate::state::InitialCovariance;
use crate::temporal::DEFAULT_HORIZON;
use crate::update::{CovarianceForm, Extrinsics};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key '{key}' given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: bad value for '{key}': {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every key with its meaning, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for simulation, RANSAC and Monte-Carlo trials"),
    ("duration", "simulated duration, s"),
    ("imu_rate", "IMU rate, Hz"),
    ("radar_rate", "radar scan rate, Hz"),
    ("injected_t_d", "offset applied to simulated radar stamps (stamp = t - injected_t_d), s"),
    ("trajectory", "stationary | circle | sinusoid | figure8"),
    ("amplitude", "trajectory position amplitude or circle radius, m"),
    ("frequency", "trajectory base frequency, Hz"),
    ("rotation_amplitude", "attitude oscillation amplitude, rad"),
    ("radar_doppler_sigma", "simulated Doppler noise std, m/s"),
    ("outlier_ratio", "fraction of simulated returns with a gross Doppler offset"),
    ("landmarks_per_scan", "returns per simulated scan"),
    ("fov_azimuth_deg", "half-width of the simulated azimuth field of view, deg"),
    ("fov_elevation_deg", "half-width of the simulated elevation field of view, deg"),
    ("min_range", "nearest simulated return, m"),
    ("max_range", "farthest simulated return, m"),
    ("sim_imu_noise_scale", "multiplier on the IMU noise used by the simulator only"),
    ("sim_radar_noise_scale", "multiplier on radar_doppler_sigma used by the simulator only"),
    ("sigma_g", "gyro white noise, rad/s/sqrt(Hz)"),
    ("sigma_wg", "gyro bias random walk, rad/s^2/sqrt(Hz)"),
    ("sigma_a", "accelerometer white noise, m/s^2/sqrt(Hz)"),
    ("sigma_wa", "accelerometer bias random walk, m/s^3/sqrt(Hz)"),
    ("sigma_td", "time offset random walk, s/sqrt(s)"),
    ("gravity", "gravity vector in the global frame, m/s^2"),
    ("extrinsic_q_ri", "IMU-to-radar rotation as quaternion w x y z"),
    ("extrinsic_p_ir", "radar origin in the IMU frame, m"),
    ("ransac_iterations", "RANSAC minimal-sample draws"),
    ("ransac_inlier_threshold", "Doppler residual bound for inliers, m/s"),
    ("ransac_min_inlier_ratio", "smallest accepted inlier fraction"),
    ("ransac_min_points", "smallest accepted scan size"),
    ("ransac_min_range", "returns closer than this are ignored, m"),
    ("ransac_max_condition", "largest accepted direction-matrix condition number"),
    ("ransac_stationary_ratio", "fraction of near-zero Dopplers that declares rest"),
    ("ransac_sigma_floor", "floor on the fitted Doppler std, m/s"),
    ("ransac_cov_floor", "floor on ego-velocity covariance eigenvalues, (m/s)^2"),
    ("t_d_init", "initial time offset estimate, s"),
    ("init_var_attitude", "initial attitude variance, rad^2"),
    ("init_var_gyro_bias", "initial gyro bias variance, (rad/s)^2"),
    ("init_var_velocity", "initial velocity variance, (m/s)^2"),
    ("init_var_accel_bias", "initial accelerometer bias variance, (m/s^2)^2"),
    ("init_var_position", "initial position variance, m^2"),
    ("init_var_td", "initial time offset variance, s^2"),
    ("covariance_form", "joseph | simple"),
    ("chi2_gate", "reject updates whose NIS exceeds the 3-dof 0.997 quantile (true | false)"),
    ("td_excitation_gate", "minimum offset excitation statistic for the offset to be updated; 0 disables"),
    ("meas_noise", "lsq (covariance from the fit) | fixed"),
    ("meas_noise_sigma", "ego-velocity std when meas_noise = fixed, m/s"),
    ("stale_tolerance", "largest lag at which a late scan is still applied, s"),
    ("buffer_horizon", "IMU retention window, s"),
    ("radar_lookahead", "how far ahead of the IMU stream radar scans are queued during replay, s"),
    ("check_covariance", "verify covariance symmetry and PSD after every step (true | false)"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub sim_imu_noise_scale: f64,
    pub sim_radar_noise_scale: f64,
    pub filter: FilterConfig,
    pub t_d_init: f64,
    pub initial_cov: InitialCovariance,
    pub meas_noise_sigma: f64,
    pub buffer_horizon: f64,
    pub radar_lookahead: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: sim.seed,
            filter: FilterConfig { noise: sim.imu_noise, extrinsics: sim.extrinsics, ..Default::default() },
            sim,
            sim_imu_noise_scale: 1.0,
            sim_radar_noise_scale: 1.0,
            t_d_init: 0.0,
            initial_cov: InitialCovariance::default(),
            meas_noise_sigma: 0.05,
            buffer_horizon: DEFAULT_HORIZON,
            radar_lookahead: 1.0,
        }
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn parse_floats<const N: usize>(v: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
    if parts.len() != N {
        return Err(format!("expected {N} numbers, got {}", parts.len()));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse(p)?;
    }
    Ok(out)
}

fn vec3_text(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            cfg.set(key, value)
                .map_err(|reason| ConfigError::BadValue { line, key: key.to_string(), reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let noise = &mut self.filter.noise;
        let ransac = &mut self.filter.ransac;
        match key {
            "seed" => {
                self.seed = parse(v)?;
                self.sim.seed = self.seed;
            }
            "duration" => self.sim.duration = parse(v)?,
            "imu_rate" => self.sim.imu_rate = parse(v)?,
            "radar_rate" => self.sim.radar_rate = parse(v)?,
            "injected_t_d" => self.sim.injected_t_d = parse(v)?,
            "trajectory" => self.sim.trajectory = parse::<TrajectoryKind>(v)?,
            "amplitude" => self.sim.amplitude = parse(v)?,
            "frequency" => self.sim.frequency = parse(v)?,
            "rotation_amplitude" => self.sim.rotation_amplitude = parse(v)?,
            "radar_doppler_sigma" => self.sim.radar_doppler_sigma = parse(v)?,
            "outlier_ratio" => self.sim.outlier_ratio = parse(v)?,
            "landmarks_per_scan" => self.sim.landmarks_per_scan = parse(v)?,
            "fov_azimuth_deg" => self.sim.geometry.azimuth_deg = parse(v)?,
            "fov_elevation_deg" => self.sim.geometry.elevation_deg = parse(v)?,
            "min_range" => self.sim.geometry.min_range = parse(v)?,
            "max_range" => self.sim.geometry.max_range = parse(v)?,
            "sim_imu_noise_scale" => self.sim_imu_noise_scale = parse(v)?,
            "sim_radar_noise_scale" => self.sim_radar_noise_scale = parse(v)?,
            "sigma_g" => noise.sigma_g = parse(v)?,
            "sigma_wg" => noise.sigma_wg = parse(v)?,
            "sigma_a" => noise.sigma_a = parse(v)?,
            "sigma_wa" => noise.sigma_wa = parse(v)?,
            "sigma_td" => noise.sigma_td = parse(v)?,
            "gravity" => noise.gravity = Vector3::from(parse_floats::<3>(v)?),
            "extrinsic_q_ri" => {
                let [w, x, y, z] = parse_floats::<4>(v)?;
                let q = Quaternion::new(w, x, y, z);
                if (q.norm() - 1.0).abs() > 1e-3 {
                    return Err(format!("quaternion norm {} is not 1", q.norm()));
                }
                self.filter.extrinsics.r_ri = Extrinsics::from_quaternion(&q, Vector3::zeros()).r_ri;
            }
            "extrinsic_p_ir" => self.filter.extrinsics.p_ir = Vector3::from(parse_floats::<3>(v)?),
            "ransac_iterations" => ransac.iterations = parse(v)?,
            "ransac_inlier_threshold" => ransac.inlier_threshold = parse(v)?,
            "ransac_min_inlier_ratio" => ransac.min_inlier_ratio = parse(v)?,
            "ransac_min_points" => ransac.min_points = parse(v)?,
            "ransac_min_range" => ransac.min_range = parse(v)?,
            "ransac_max_condition" => ransac.max_condition = parse(v)?,
            "ransac_stationary_ratio" => ransac.stationary_ratio = parse(v)?,
            "ransac_sigma_floor" => ransac.sigma_floor = parse(v)?,
            "ransac_cov_floor" => ransac.cov_eigen_floor = parse(v)?,
            "t_d_init" => self.t_d_init = parse(v)?,
            "init_var_attitude" => self.initial_cov.attitude = parse(v)?,
            "init_var_gyro_bias" => self.initial_cov.gyro_bias = parse(v)?,
            "init_var_velocity" => self.initial_cov.velocity = parse(v)?,
            "init_var_accel_bias" => self.initial_cov.accel_bias = parse(v)?,
            "init_var_position" => self.initial_cov.position = parse(v)?,
            "init_var_td" => self.initial_cov.time_offset = parse(v)?,
            "covariance_form" => {
                self.filter.covariance_form = match v {
                    "joseph" => CovarianceForm::Joseph,
                    "simple" => CovarianceForm::Simple,
                    _ => return Err(format!("expected joseph or simple, got '{v}'")),
                }
            }
            "chi2_gate" => self.filter.chi2_gate = parse_bool(v)?,
            "td_excitation_gate" => self.filter.td_excitation_gate = parse(v)?,
            "meas_noise" => {
                self.filter.meas_noise = match v {
                    "lsq" => MeasurementNoise::Lsq,
                    "fixed" => MeasurementNoise::Fixed(self.meas_noise_sigma),
                    _ => return Err(format!("expected lsq or fixed, got '{v}'")),
                }
            }
            "meas_noise_sigma" => {
                self.meas_noise_sigma = parse(v)?;
                if let MeasurementNoise::Fixed(_) = self.filter.meas_noise {
                    self.filter.meas_noise = MeasurementNoise::Fixed(self.meas_noise_sigma);
                }
            }
            "stale_tolerance" => self.filter.stale_tolerance = parse(v)?,
            "buffer_horizon" => self.buffer_horizon = parse(v)?,
            "radar_lookahead" => self.radar_lookahead = parse(v)?,
            "check_covariance" => self.filter.check_covariance = parse_bool(v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        // the simulator shares the filter's model parameters
        self.sim.extrinsics = self.filter.extrinsics;
        Ok(())
    }

    /// Simulator settings with the simulation-only noise multipliers applied.
    pub fn sim_config(&self) -> SimConfig {
        let mut sim = self.sim.clone();
        let n = self.filter.noise;
        let k = self.sim_imu_noise_scale;
        sim.imu_noise = crate::state::NoiseParams {
            sigma_g: n.sigma_g * k,
            sigma_wg: n.sigma_wg * k,
            sigma_a: n.sigma_a * k,
            sigma_wa: n.sigma_wa * k,
            ..n
        };
        sim.radar_doppler_sigma *= self.sim_radar_noise_scale;
        sim.seed = self.seed;
        sim
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.sim_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.filter.noise.validate(true).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let ic = &self.initial_cov;
        for (name, v) in [
            ("init_var_attitude", ic.attitude),
            ("init_var_gyro_bias", ic.gyro_bias),
            ("init_var_velocity", ic.velocity),
            ("init_var_accel_bias", ic.accel_bias),
            ("init_var_position", ic.position),
            ("init_var_td", ic.time_offset),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative variance"));
            }
        }
        if !self.t_d_init.is_finite() {
            return bad("t_d_init must be finite".into());
        }
        if !(self.buffer_horizon.is_finite() && self.buffer_horizon >= self.t_d_init.abs() + 1.0) {
            return bad(format!("buffer_horizon must be at least |t_d_init| + 1 s = {}", self.t_d_init.abs() + 1.0));
        }
        if !(self.radar_lookahead.is_finite() && self.radar_lookahead >= 0.0 && self.radar_lookahead < self.buffer_horizon) {
            return bad("radar_lookahead must lie in [0, buffer_horizon)".into());
        }
        if !(self.meas_noise_sigma.is_finite() && self.meas_noise_sigma > 0.0) {
            return bad("meas_noise_sigma must be positive".into());
        }
        let r = &self.filter.ransac;
        if r.iterations == 0 || r.min_points < 3 || !(0.0..=1.0).contains(&r.min_inlier_ratio) || !(r.inlier_threshold > 0.0) {
            return bad("RANSAC settings out of range".into());
        }
        if !(self.filter.stale_tolerance >= 0.0 && self.filter.td_excitation_gate >= 0.0) {
            return bad("stale_tolerance and td_excitation_gate must be non-negative".into());
        }
        if !(self.sim_imu_noise_scale >= 0.0 && self.sim_radar_noise_scale >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        Ok(())
    }

    /// Current value of every key, in `KEYS` order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.sim;
        let n = &self.filter.noise;
        let r = &self.filter.ransac;
        let ic = &self.initial_cov;
        let q = Quaternion::from_rotation_matrix(&self.filter.extrinsics.r_ri);
        let values = vec![
            self.seed.to_string(),
            s.duration.to_string(),
            s.imu_rate.to_string(),
            s.radar_rate.to_string(),
            s.injected_t_d.to_string(),
            s.trajectory.to_string(),
            s.amplitude.to_string(),
            s.frequency.to_string(),
            s.rotation_amplitude.to_string(),
            s.radar_doppler_sigma.to_string(),
            s.outlier_ratio.to_string(),
            s.landmarks_per_scan.to_string(),
            s.geometry.azimuth_deg.to_string(),
            s.geometry.elevation_deg.to_string(),
            s.geometry.min_range.to_string(),
            s.geometry.max_range.to_string(),
            self.sim_imu_noise_scale.to_string(),
            self.sim_radar_noise_scale.to_string(),
            n.sigma_g.to_string(),
            n.sigma_wg.to_string(),
            n.sigma_a.to_string(),
            n.sigma_wa.to_string(),
            n.sigma_td.to_string(),
            vec3_text(&n.gravity),
            format!("{} {} {} {}", q.w, q.x, q.y, q.z),
            vec3_text(&self.filter.extrinsics.p_ir),
            r.iterations.to_string(),
            r.inlier_threshold.to_string(),
            r.min_inlier_ratio.to_string(),
            r.min_points.to_string(),
            r.min_range.to_string(),
            r.max_condition.to_string(),
            r.stationary_ratio.to_string(),
            r.sigma_floor.to_string(),
            r.cov_eigen_floor.to_string(),
            self.t_d_init.to_string(),
            ic.attitude.to_string(),
            ic.gyro_bias.to_string(),
            ic.velocity.to_string(),
            ic.accel_bias.to_string(),
            ic.position.to_string(),
            ic.time_offset.to_string(),
            match self.filter.covariance_form {
                CovarianceForm::Joseph => "joseph".into(),
                CovarianceForm::Simple => "simple".into(),
            },
            self.filter.chi2_gate.to_string(),
            self.filter.td_excitation_gate.to_string(),
            match self.filter.meas_noise {
                MeasurementNoise::Lsq => "lsq".into(),
                MeasurementNoise::Fixed(_) => "fixed".into(),
            },
            self.meas_noise_sigma.to_string(),
            self.filter.stale_tolerance.to_string(),
            self.buffer_horizon.to_string(),
            self.radar_lookahead.to_string(),
            self.filter.check_covariance.to_string(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    /// Effective configuration in the input format.
    pub fn echo(&self) -> String {
        let mut out = String::from("# effective configuration\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Key reference with defaults, for `--help`.
    pub fn key_help() -> String {
        let defaults = Self::default().entries();
        let mut out = String::from("Config keys (`key = value`, `#` starts a comment):\n");
        for ((k, doc), (_, d)) in KEYS.iter().zip(defaults) {
            let _ = writeln!(out, "  {k:<24} {doc} [default: {d}]");
        }
        out
    }

    /// Freezes the offset at `t_d` for the fixed-offset ablation.
    pub fn with_fixed_td(mut self, t_d: f64) -> Self {
        self.t_d_init = t_d;
        self.filter.noise.sigma_td = 0.0;
        self.initial_cov.time_offset = 0.0;
        self
    }
}
