//! Closed-form ground truth and synthetic IMU / radar streams.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::ego_velocity::{doppler_predict, RadarPoint, RadarScan};
use crate::propagation::ImuSample;
use crate::so3::{skew, Quaternion};
use crate::state::NoiseParams;
use crate::trajectory::{PoseSample, Trajectory};
use crate::update::Extrinsics;

const IMU_STREAM: u64 = 1;
const RADAR_STREAM: u64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Stationary,
    Circle,
    Sinusoid,
    Figure8,
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stationary => "stationary",
            Self::Circle => "circle",
            Self::Sinusoid => "sinusoid",
            Self::Figure8 => "figure8",
        })
    }
}

impl FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stationary" => Ok(Self::Stationary),
            "circle" => Ok(Self::Circle),
            "sinusoid" => Ok(Self::Sinusoid),
            "figure8" => Ok(Self::Figure8),
            other => Err(format!("unknown trajectory '{other}' (stationary, circle, sinusoid, figure8)")),
        }
    }
}

/// Sensor field of view and range band for synthetic returns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanGeometry {
    /// Half-width in azimuth, degrees.
    pub azimuth_deg: f64,
    /// Half-width in elevation, degrees.
    pub elevation_deg: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self { azimuth_deg: 60.0, elevation_deg: 15.0, min_range: 1.0, max_range: 30.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub imu_rate: f64,
    pub radar_rate: f64,
    /// Offset applied to the radar stamps: a scan taken at `t` is stamped
    /// `t - injected_t_d`.
    pub injected_t_d: f64,
    pub trajectory: TrajectoryKind,
    /// Position amplitude (circle radius), m.
    pub amplitude: f64,
    /// Base motion frequency, Hz.
    pub frequency: f64,
    /// Attitude amplitude, rad.
    pub rotation_amplitude: f64,
    pub imu_noise: NoiseParams,
    pub radar_doppler_sigma: f64,
    pub outlier_ratio: f64,
    pub landmarks_per_scan: usize,
    pub geometry: ScanGeometry,
    pub extrinsics: Extrinsics,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            imu_rate: 200.0,
            radar_rate: 10.0,
            injected_t_d: -0.15,
            trajectory: TrajectoryKind::Figure8,
            amplitude: 5.0,
            frequency: 0.1,
            rotation_amplitude: 0.8,
            imu_noise: NoiseParams::default(),
            radar_doppler_sigma: 0.03,
            outlier_ratio: 0.1,
            landmarks_per_scan: 60,
            geometry: ScanGeometry::default(),
            extrinsics: Extrinsics::default(),
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !pos(self.duration) {
            return bad("duration must be positive");
        }
        if !pos(self.imu_rate) || !pos(self.radar_rate) {
            return bad("rates must be positive");
        }
        if self.imu_rate < 10.0 * self.radar_rate {
            return bad("imu_rate must be at least 10 x radar_rate");
        }
        if !(0.0..=0.5).contains(&self.outlier_ratio) {
            return bad("outlier_ratio must lie in [0, 0.5]");
        }
        if !self.injected_t_d.is_finite() {
            return bad("injected_t_d must be finite");
        }
        if !nonneg(self.amplitude) || !nonneg(self.frequency) || !nonneg(self.rotation_amplitude) {
            return bad("trajectory amplitudes and frequency must be non-negative");
        }
        if !nonneg(self.radar_doppler_sigma) {
            return bad("radar_doppler_sigma must be non-negative");
        }
        if self.landmarks_per_scan < 3 {
            return bad("landmarks_per_scan must be at least 3");
        }
        let g = &self.geometry;
        if !(pos(g.azimuth_deg) && g.azimuth_deg <= 180.0 && pos(g.elevation_deg) && g.elevation_deg <= 90.0) {
            return bad("field of view out of range");
        }
        if !(pos(g.min_range) && g.max_range.is_finite() && g.max_range > g.min_range) {
            return bad("range band must satisfy 0 < min_range < max_range");
        }
        self.imu_noise.validate(true).map_err(|e| SimError::InvalidConfig(e.to_string()))
    }

    pub fn imu_count(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    pub fn scan_count(&self) -> usize {
        (self.duration * self.radar_rate).round() as usize
    }
}

/// `offset + rate·t + amp·sin(ω t + phase)` with its first two derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Harmonic {
    offset: f64,
    rate: f64,
    amp: f64,
    omega: f64,
    phase: f64,
}

impl Harmonic {
    fn sine(amp: f64, omega: f64, phase: f64) -> Self {
        Self { amp, omega, phase, ..Default::default() }
    }

    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (s, c) = (self.omega * t + self.phase).sin_cos();
        let w = self.omega;
        (
            self.offset + self.rate * t + self.amp * s,
            self.rate + self.amp * w * c,
            -self.amp * w * w * s,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub q_gi: Quaternion,
    pub p_gi: Vector3<f64>,
    pub v_gi: Vector3<f64>,
    /// Global-frame acceleration.
    pub a_gi: Vector3<f64>,
    /// Body angular rate.
    pub omega: Vector3<f64>,
}

/// Analytic trajectory: per-axis harmonic position and ZYX Euler angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthModel {
    pos: [Harmonic; 3],
    /// roll, pitch, yaw
    euler: [Harmonic; 3],
}

impl TruthModel {
    pub fn new(kind: TrajectoryKind, amplitude: f64, frequency: f64, rotation_amplitude: f64) -> Self {
        let w = 2.0 * PI * frequency;
        let (a, th) = (amplitude, rotation_amplitude);
        let zero = Harmonic::default();
        match kind {
            TrajectoryKind::Stationary => Self { pos: [zero; 3], euler: [zero; 3] },
            TrajectoryKind::Circle => Self {
                pos: [Harmonic::sine(a, w, FRAC_PI_2), Harmonic::sine(a, w, 0.0), zero],
                // heading tangent to the circle
                euler: [zero, zero, Harmonic { offset: FRAC_PI_2, rate: w, ..Default::default() }],
            },
            TrajectoryKind::Sinusoid => Self {
                pos: [Harmonic { rate: a * w, ..Default::default() }, Harmonic::sine(a, w, 0.0), Harmonic::sine(0.1 * a, 2.0 * w, 0.3)],
                euler: [Harmonic::sine(0.3 * th, 2.0 * w, 0.0), Harmonic::sine(0.3 * th, w, 1.0), Harmonic::sine(th, w, FRAC_PI_2)],
            },
            TrajectoryKind::Figure8 => Self {
                pos: [Harmonic::sine(a, w, 0.0), Harmonic::sine(0.5 * a, 2.0 * w, 0.0), Harmonic::sine(0.1 * a, w, 0.5)],
                euler: [Harmonic::sine(0.3 * th, 2.0 * w, 0.0), Harmonic::sine(0.3 * th, 2.0 * w, PI / 3.0), Harmonic::sine(th, w, 0.0)],
            },
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.trajectory, cfg.amplitude, cfg.frequency, cfg.rotation_amplitude)
    }

    pub fn sample(&self, t: f64) -> TruthSample {
        let p = self.pos.map(|h| h.eval(t));
        let [(phi, dphi, _), (theta, dtheta, _), (psi, dpsi, _)] = self.euler.map(|h| h.eval(t));
        let (sr, cr) = phi.sin_cos();
        let (sp, cp) = theta.sin_cos();
        let q = Quaternion::from_axis_angle(&Vector3::z(), psi)
            * Quaternion::from_axis_angle(&Vector3::y(), theta)
            * Quaternion::from_axis_angle(&Vector3::x(), phi);
        let omega = Vector3::new(
            dphi - dpsi * sp,
            dtheta * cr + dpsi * sr * cp,
            -dtheta * sr + dpsi * cr * cp,
        );
        TruthSample {
            t,
            q_gi: q,
            p_gi: Vector3::new(p[0].0, p[1].0, p[2].0),
            v_gi: Vector3::new(p[0].1, p[1].1, p[2].1),
            a_gi: Vector3::new(p[0].2, p[1].2, p[2].2),
            omega,
        }
    }
}

/// Ground truth at the IMU epochs.
pub fn generate_truth(cfg: &SimConfig) -> (Trajectory, TruthModel) {
    let model = TruthModel::from_config(cfg);
    let poses = (0..cfg.imu_count())
        .map(|k| {
            let s = model.sample(k as f64 / cfg.imu_rate);
            PoseSample { stamp: s.t, q_gi: s.q_gi, p_gi: s.p_gi, v_gi: Some(s.v_gi) }
        })
        .collect();
    (Trajectory::new(poses), model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImu {
    pub samples: Vec<ImuSample>,
    /// True biases in effect for each sample.
    pub gyro_bias: Vec<Vector3<f64>>,
    pub accel_bias: Vec<Vector3<f64>>,
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

pub fn synth_imu(model: &TruthModel, cfg: &SimConfig) -> SynthImu {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(IMU_STREAM);
    let n = &cfg.imu_noise;
    let dt = 1.0 / cfg.imu_rate;
    let (white_g, white_a) = (n.sigma_g / dt.sqrt(), n.sigma_a / dt.sqrt());
    let (walk_g, walk_a) = (n.sigma_wg * dt.sqrt(), n.sigma_wa * dt.sqrt());
    let count = cfg.imu_count();
    let mut out = SynthImu {
        samples: Vec::with_capacity(count),
        gyro_bias: Vec::with_capacity(count),
        accel_bias: Vec::with_capacity(count),
    };
    let (mut bg, mut ba) = (Vector3::zeros(), Vector3::zeros());
    for k in 0..count {
        let s = model.sample(k as f64 / cfg.imu_rate);
        let r = s.q_gi.to_rotation_matrix();
        let gyro = s.omega + bg + gaussian3(&mut rng) * white_g;
        let accel = r.transpose() * (s.a_gi - n.gravity) + ba + gaussian3(&mut rng) * white_a;
        out.samples.push(ImuSample::new(s.t, gyro, accel));
        out.gyro_bias.push(bg);
        out.accel_bias.push(ba);
        bg += gaussian3(&mut rng) * walk_g;
        ba += gaussian3(&mut rng) * walk_a;
    }
    out
}

/// True radar ego-velocity in the radar frame.
pub fn radar_velocity(s: &TruthSample, ext: &Extrinsics) -> Vector3<f64> {
    let r: Matrix3<f64> = s.q_gi.to_rotation_matrix();
    ext.r_ri * (r.transpose() * s.v_gi + skew(&s.omega) * ext.p_ir)
}

/// Stamp and true epoch of scan `j`. The epoch is recovered from the stamp
/// exactly as the filter maps it, so the two agree to the last bit.
pub fn radar_epoch(j: usize, radar_rate: f64, injected_t_d: f64) -> (f64, f64) {
    let stamp = j as f64 / radar_rate - injected_t_d;
    (stamp, stamp + injected_t_d)
}

/// One synthetic scan of static landmarks seen by a sensor moving with
/// `v_r`. The returned mask flags the points carrying a gross outlier.
pub fn synth_scan<R: Rng + ?Sized>(
    rng: &mut R,
    stamp: f64,
    v_r: &Vector3<f64>,
    n_points: usize,
    sigma: f64,
    outlier_ratio: f64,
    geom: &ScanGeometry,
) -> (RadarScan, Vec<bool>) {
    let mut outlier = vec![false; n_points];
    let n_out = ((outlier_ratio * n_points as f64).round() as usize).min(n_points);
    for i in index::sample(rng, n_points, n_out) {
        outlier[i] = true;
    }
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let max_el = geom.elevation_deg.to_radians().sin();
    let points = outlier
        .iter()
        .map(|&bad| {
            let az = rng.random_range(-geom.azimuth_deg..=geom.azimuth_deg).to_radians();
            let el = rng.random_range(-max_el..=max_el).asin();
            let range = rng.random_range(geom.min_range..=geom.max_range);
            let u = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let mut d = doppler_predict(v_r, &u).expect("unit direction") + noise.sample(rng);
            if bad {
                let mag = rng.random_range(1.0..=3.0);
                d += if rng.random_bool(0.5) { mag } else { -mag };
            }
            RadarPoint::new(u * range, d)
        })
        .collect();
    (RadarScan { stamp, points }, outlier)
}

pub fn synth_radar(model: &TruthModel, cfg: &SimConfig) -> Vec<RadarScan> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(RADAR_STREAM);
    (0..cfg.scan_count())
        .map(|j| {
            let (stamp, t) = radar_epoch(j, cfg.radar_rate, cfg.injected_t_d);
            let v_r = radar_velocity(&model.sample(t), &cfg.extrinsics);
            synth_scan(&mut rng, stamp, &v_r, cfg.landmarks_per_scan, cfg.radar_doppler_sigma, cfg.outlier_ratio, &cfg.geometry).0
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub imu: Vec<ImuSample>,
    pub radar: Vec<RadarScan>,
    pub truth: Trajectory,
}

pub fn simulate(cfg: &SimConfig) -> Result<Dataset, SimError> {
    cfg.validate()?;
    let (truth, model) = generate_truth(cfg);
    let imu = synth_imu(&model, cfg).samples;
    let radar = synth_radar(&model, cfg);
    Ok(Dataset { imu, radar, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::quat_to_rot;

    fn all_kinds() -> [TrajectoryKind; 4] {
        [TrajectoryKind::Stationary, TrajectoryKind::Circle, TrajectoryKind::Sinusoid, TrajectoryKind::Figure8]
    }

    #[test]
    fn circle_speed_is_constant() {
        let (rho, f) = (4.0, 0.2);
        let m = TruthModel::new(TrajectoryKind::Circle, rho, f, 0.0);
        let speed = rho * 2.0 * PI * f;
        for k in 0..500 {
            let s = m.sample(k as f64 * 0.037);
            assert!((s.v_gi.norm() - speed).abs() < 1e-12);
            assert!((s.omega - Vector3::new(0.0, 0.0, 2.0 * PI * f)).norm() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-4;
        for kind in all_kinds() {
            let m = TruthModel::new(kind, 5.0, 0.1, 0.8);
            for k in 0..200 {
                let t = k as f64 * 0.29;
                let (a, b) = (m.sample(t - h), m.sample(t + h));
                let s = m.sample(t);
                assert!(((b.p_gi - a.p_gi) / (2.0 * h) - s.v_gi).norm() < 1e-6, "{kind} v");
                assert!(((b.v_gi - a.v_gi) / (2.0 * h) - s.a_gi).norm() < 1e-6, "{kind} a");
                // Rᵀ Ṙ = [ω]×
                let rdot = (quat_to_rot(&b.q_gi) - quat_to_rot(&a.q_gi)) / (2.0 * h);
                let w = quat_to_rot(&s.q_gi).transpose() * rdot;
                assert!((w - skew(&s.omega)).norm() < 1e-6, "{kind} omega");
            }
        }
    }

    #[test]
    fn stationary_is_constant() {
        let m = TruthModel::new(TrajectoryKind::Stationary, 5.0, 0.1, 0.8);
        let s0 = m.sample(0.0);
        for k in 1..100 {
            let s = m.sample(k as f64 * 0.7);
            assert_eq!((s.q_gi, s.p_gi, s.v_gi, s.a_gi, s.omega), (s0.q_gi, s0.p_gi, s0.v_gi, s0.a_gi, s0.omega));
        }
        assert_eq!(s0.v_gi, Vector3::zeros());
    }

    #[test]
    fn dynamic_profiles_rotate_fast_enough() {
        for kind in [TrajectoryKind::Sinusoid, TrajectoryKind::Figure8] {
            let m = TruthModel::new(kind, 5.0, 0.1, 0.8);
            let peak = (0..6000).map(|k| m.sample(k as f64 * 0.01).omega.norm()).fold(0.0, f64::max);
            assert!(peak > 0.25, "{kind}: {peak}");
        }
    }

    #[test]
    fn noiseless_stationary_imu_is_gravity_reaction() {
        let cfg = SimConfig {
            trajectory: TrajectoryKind::Stationary,
            duration: 1.0,
            imu_noise: NoiseParams { sigma_g: 0.0, sigma_wg: 0.0, sigma_a: 0.0, sigma_wa: 0.0, ..Default::default() },
            ..Default::default()
        };
        let model = TruthModel::from_config(&cfg);
        let imu = synth_imu(&model, &cfg);
        assert_eq!(imu.samples.len(), 200);
        let r = quat_to_rot(&model.sample(0.0).q_gi);
        for s in &imu.samples {
            assert_eq!(s.accel, -r.transpose() * cfg.imu_noise.gravity);
            assert_eq!(s.gyro, Vector3::zeros());
        }
    }

    #[test]
    fn gyro_noise_matches_density() {
        let cfg = SimConfig { duration: 500.0, ..Default::default() };
        let model = TruthModel::from_config(&cfg);
        let imu = synth_imu(&model, &cfg);
        assert_eq!(imu.samples.len(), 100_000);
        let want = cfg.imu_noise.sigma_g * cfg.imu_rate.sqrt();
        let mut sum2 = Vector3::zeros();
        for (s, bg) in imu.samples.iter().zip(&imu.gyro_bias) {
            let e = s.gyro - model.sample(s.stamp).omega - bg;
            sum2 += e.component_mul(&e);
        }
        for axis in 0..3 {
            let std = (sum2[axis] / imu.samples.len() as f64).sqrt();
            assert!((std / want - 1.0).abs() < 0.05, "axis {axis}: {std} vs {want}");
        }
    }

    #[test]
    fn scan_stamps_carry_the_offset() {
        let cfg = SimConfig { injected_t_d: -0.15, duration: 5.0, ..Default::default() };
        let radar = synth_radar(&TruthModel::from_config(&cfg), &cfg);
        assert_eq!(radar.len(), 50);
        for (j, scan) in radar.iter().enumerate() {
            let t = j as f64 / cfg.radar_rate;
            assert!((scan.stamp - t - 0.15).abs() < 1e-12);
            assert!(scan.stamp > t);
        }
        let cfg0 = SimConfig { injected_t_d: 0.0, ..cfg };
        for (j, scan) in synth_radar(&TruthModel::from_config(&cfg0), &cfg0).iter().enumerate() {
            assert_eq!(scan.stamp, j as f64 / cfg.radar_rate);
        }
    }

    #[test]
    fn epochs_close_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let j = rng.random_range(0..100_000);
            let d = rng.random_range(-0.5..0.5);
            let (stamp, t) = radar_epoch(j, 10.0, d);
            assert_eq!(crate::temporal::correction_time(stamp, d), t);
            assert!((t - j as f64 / 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn outlier_fraction_and_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Vector3::new(2.0, -0.5, 0.3);
        let (scan, mask) = synth_scan(&mut rng, 0.0, &v, 100, 0.0, 0.3, &ScanGeometry::default());
        assert_eq!(mask.iter().filter(|b| **b).count(), 30);
        for (p, bad) in scan.points.iter().zip(&mask) {
            let off = (p.doppler - doppler_predict(&v, &p.p).unwrap()).abs();
            if *bad {
                assert!((1.0 - 1e-12..=3.0 + 1e-12).contains(&off));
            } else {
                assert!(off < 1e-12);
            }
            let r = p.p.norm();
            assert!((1.0..=30.0).contains(&r));
            let el = (p.p.z / r).asin().to_degrees();
            let az = p.p.y.atan2(p.p.x).to_degrees();
            assert!(el.abs() <= 15.0 + 1e-9 && az.abs() <= 60.0 + 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { imu_rate: 50.0, ..Default::default() }.validate().is_err());
        assert!(SimConfig { outlier_ratio: 0.6, ..Default::default() }.validate().is_err());
        assert!(SimConfig { landmarks_per_scan: 2, ..Default::default() }.validate().is_err());
        let d = SimConfig::default();
        assert_eq!((d.imu_count(), d.scan_count()), (12_000, 600));
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SimConfig { duration: 3.0, ..Default::default() };
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        let other = simulate(&SimConfig { seed: 7, ..cfg.clone() }).unwrap();
        assert_ne!(other.imu, simulate(&cfg).unwrap().imu);
    }

    #[test]
    fn trajectory_kind_round_trips() {
        for kind in all_kinds() {
            assert_eq!(kind.to_string().parse::<TrajectoryKind>().unwrap(), kind);
        }
        assert!("spiral".parse::<TrajectoryKind>().is_err());
    }
}
