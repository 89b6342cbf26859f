//! Radar ego-velocity from a single Doppler point cloud: 3-point RANSAC
//! followed by least squares on the consensus set.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::Rng;
use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EgoVelocityError {
    #[error("point at the sensor origin has no direction")]
    ZeroRange,
    #[error("point directions do not span 3D (condition number {condition:.3e})")]
    DegenerateGeometry { condition: f64 },
    #[error("scan has {found} usable points, {required} required")]
    TooFewPoints { found: usize, required: usize },
    #[error("largest consensus holds {inliers} of {points} points, below the minimum inlier ratio")]
    NoConsensus { inliers: usize, points: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarPoint {
    /// Position in the radar frame, m.
    pub p: Vector3<f64>,
    /// Measured radial velocity, m/s.
    pub doppler: f64,
}

impl RadarPoint {
    pub fn new(p: Vector3<f64>, doppler: f64) -> Self {
        Self { p, doppler }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadarScan {
    /// Arrival stamp on the radar clock, seconds.
    pub stamp: f64,
    pub points: Vec<RadarPoint>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EgoVelocityEstimate {
    /// Radar ego-velocity in the radar frame, m/s.
    pub v_r: Vector3<f64>,
    /// Indices into the original scan.
    pub inlier_indices: Vec<usize>,
    pub meas_cov: Matrix3<f64>,
    pub n_inliers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Doppler residual bound for inliers, m/s.
    pub inlier_threshold: f64,
    pub min_inlier_ratio: f64,
    pub min_points: usize,
    /// Points closer than this are discarded, m.
    pub min_range: f64,
    /// Largest accepted condition number of a direction matrix.
    pub max_condition: f64,
    /// Fraction of near-zero Dopplers that declares the platform at rest.
    pub stationary_ratio: f64,
    /// Floor on the residual standard deviation, m/s.
    pub sigma_floor: f64,
    /// Floor on the eigenvalues of the returned covariance, (m/s)².
    pub cov_eigen_floor: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            inlier_threshold: 0.1,
            min_inlier_ratio: 0.3,
            min_points: 8,
            min_range: 0.25,
            max_condition: 1e3,
            stationary_ratio: 0.8,
            sigma_floor: 0.01,
            cov_eigen_floor: 1e-6,
        }
    }
}

/// Radial velocity a static point at `p` shows to a sensor moving with `v_r`.
pub fn doppler_predict(v_r: &Vector3<f64>, p: &Vector3<f64>) -> Result<f64, EgoVelocityError> {
    let n = p.norm();
    if n <= 0.0 || !n.is_finite() {
        return Err(EgoVelocityError::ZeroRange);
    }
    Ok(-v_r.dot(&(p / n)))
}

/// Gram matrix `AᵀA` and right-hand side `Aᵀb` for rows `uᵢᵀ v = -v_dⁱ`.
fn normal_equations<'a>(points: impl Iterator<Item = &'a RadarPoint>) -> (Matrix3<f64>, Vector3<f64>, usize) {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    let mut n = 0;
    for pt in points {
        let u = pt.p.normalize();
        ata += u * u.transpose();
        atb -= u * pt.doppler;
        n += 1;
    }
    (ata, atb, n)
}

/// Condition number of the direction matrix from its Gram matrix.
fn condition_number(ata: &Matrix3<f64>) -> f64 {
    let eig = SymmetricEigen::new(*ata).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    (hi / lo).sqrt()
}

fn floor_eigenvalues(cov: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let d = eig.eigenvalues.map(|l| l.max(floor));
    let out = eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

/// Least-squares ego-velocity with the default conditioning threshold and
/// noise floors.
pub fn lsq_solve(points: &[RadarPoint]) -> Result<(Vector3<f64>, Matrix3<f64>), EgoVelocityError> {
    lsq_solve_with(points, &RansacConfig::default())
}

/// Minimises `Σ (v_dⁱ + uᵢ·v)²` and returns `σ̂² (AᵀA)⁻¹` as covariance, with
/// `σ̂²` the unbiased residual variance.
pub fn lsq_solve_with(
    points: &[RadarPoint],
    cfg: &RansacConfig,
) -> Result<(Vector3<f64>, Matrix3<f64>), EgoVelocityError> {
    if points.len() < 3 {
        return Err(EgoVelocityError::TooFewPoints { found: points.len(), required: 3 });
    }
    if points.iter().any(|p| !(p.p.norm() > 0.0)) {
        return Err(EgoVelocityError::ZeroRange);
    }
    let (ata, atb, n) = normal_equations(points.iter());
    let condition = condition_number(&ata);
    if !(condition <= cfg.max_condition) {
        return Err(EgoVelocityError::DegenerateGeometry { condition });
    }
    let chol = ata.cholesky().ok_or(EgoVelocityError::DegenerateGeometry { condition })?;
    let v = chol.solve(&atb);
    let ssr: f64 = points
        .iter()
        .map(|pt| (pt.doppler + pt.p.normalize().dot(&v)).powi(2))
        .sum();
    let sigma2 = if n > 3 { ssr / (n - 3) as f64 } else { 0.0 };
    let sigma2 = sigma2.max(cfg.sigma_floor * cfg.sigma_floor);
    let cov = floor_eigenvalues(&(chol.inverse() * sigma2), cfg.cov_eigen_floor);
    Ok((v, cov))
}

/// Exact velocity through three points, or `None` when their directions are
/// ill-conditioned.
fn solve_minimal(points: [&RadarPoint; 3], max_condition: f64) -> Option<Vector3<f64>> {
    let (ata, atb, _) = normal_equations(points.into_iter());
    if !(condition_number(&ata) <= max_condition) {
        return None;
    }
    ata.cholesky().map(|c| c.solve(&atb))
}

/// Ego-velocity by 3-point RANSAC and a final least-squares fit on the largest
/// consensus set.
pub fn ransac_estimate<R: Rng + ?Sized>(
    scan: &RadarScan,
    cfg: &RansacConfig,
    rng: &mut R,
) -> Result<EgoVelocityEstimate, EgoVelocityError> {
    let usable: Vec<usize> = scan
        .points
        .iter()
        .enumerate()
        .filter(|(_, pt)| pt.p.norm() > cfg.min_range && pt.doppler.is_finite())
        .map(|(i, _)| i)
        .collect();
    let required = cfg.min_points.max(3);
    if usable.len() < required {
        return Err(EgoVelocityError::TooFewPoints { found: usable.len(), required });
    }
    let pts = |ids: &[usize]| ids.iter().map(|&i| scan.points[i]).collect::<Vec<_>>();

    let still: Vec<usize> = usable
        .iter()
        .copied()
        .filter(|&i| scan.points[i].doppler.abs() < cfg.inlier_threshold)
        .collect();
    if still.len() as f64 >= cfg.stationary_ratio * usable.len() as f64 {
        let (ata, _, _) = normal_equations(still.iter().map(|&i| &scan.points[i]));
        let floor2 = cfg.sigma_floor * cfg.sigma_floor;
        let cov = match ata.try_inverse() {
            Some(inv) if condition_number(&ata) <= cfg.max_condition => inv * floor2,
            _ => Matrix3::identity() * floor2,
        };
        let n_inliers = still.len();
        return Ok(EgoVelocityEstimate {
            v_r: Vector3::zeros(),
            inlier_indices: still,
            meas_cov: floor_eigenvalues(&cov, cfg.cov_eigen_floor),
            n_inliers,
        });
    }

    let consensus = |v: &Vector3<f64>| -> Vec<usize> {
        usable
            .iter()
            .copied()
            .filter(|&i| {
                let pt = &scan.points[i];
                (pt.doppler + pt.p.normalize().dot(v)).abs() < cfg.inlier_threshold
            })
            .collect()
    };

    let mut best: Vec<usize> = Vec::new();
    let mut accepted = 0;
    let max_draws = cfg.iterations.saturating_mul(20).max(100);
    for _ in 0..max_draws {
        if accepted == cfg.iterations {
            break;
        }
        let s = index::sample(rng, usable.len(), 3);
        let sample = [&scan.points[usable[s.index(0)]], &scan.points[usable[s.index(1)]], &scan.points[usable[s.index(2)]]];
        // degenerate samples are redrawn without counting
        let Some(v) = solve_minimal(sample, cfg.max_condition) else { continue };
        accepted += 1;
        let inliers = consensus(&v);
        if inliers.len() > best.len() {
            best = inliers;
        }
    }
    if accepted == 0 {
        let (ata, _, _) = normal_equations(usable.iter().map(|&i| &scan.points[i]));
        return Err(EgoVelocityError::DegenerateGeometry { condition: condition_number(&ata) });
    }
    if best.len() < 3 || (best.len() as f64) < cfg.min_inlier_ratio * usable.len() as f64 {
        return Err(EgoVelocityError::NoConsensus { inliers: best.len(), points: usable.len() });
    }

    // refit until the consensus of the fitted model stops changing
    let mut inliers = best;
    let (mut v_r, mut meas_cov) = lsq_solve_with(&pts(&inliers), cfg)?;
    for _ in 0..10 {
        let refined = consensus(&v_r);
        if refined == inliers || refined.len() < 3 {
            break;
        }
        inliers = refined;
        (v_r, meas_cov) = lsq_solve_with(&pts(&inliers), cfg)?;
    }
    let inliers = consensus(&v_r);
    if inliers.len() < 3 || (inliers.len() as f64) < cfg.min_inlier_ratio * usable.len() as f64 {
        return Err(EgoVelocityError::NoConsensus { inliers: inliers.len(), points: usable.len() });
    }
    let n_inliers = inliers.len();
    Ok(EgoVelocityEstimate { v_r, inlier_indices: inliers, meas_cov, n_inliers })
}
