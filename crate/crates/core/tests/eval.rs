use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riotc_core::eval::*;
use riotc_core::propagation::ImuSample;
use riotc_core::so3::Quaternion;
use riotc_core::trajectory::{PoseSample, Trajectory};

fn pose(t: f64, q: Quaternion, p: Vector3<f64>) -> PoseSample {
    PoseSample { stamp: t, q_gi: q, p_gi: p, v_gi: None }
}

fn random_walk(rng: &mut ChaCha8Rng, n: usize, dt: f64) -> Trajectory {
    let mut q = Quaternion::identity();
    let mut p = Vector3::zeros();
    let poses = (0..n)
        .map(|k| {
            q = q * Quaternion::exp(&Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.1..0.1)));
            p += q.rotate(&Vector3::new(rng.random_range(0.5..1.5), rng.random_range(-0.2..0.2), rng.random_range(-0.1..0.1)));
            pose(k as f64 * dt, q, p)
        })
        .collect();
    Trajectory::new(poses)
}

fn perturb(rng: &mut ChaCha8Rng, t: &Trajectory, s: f64) -> Trajectory {
    Trajectory::new(
        t.poses
            .iter()
            .map(|p| {
                let dq = Quaternion::exp(&Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)));
                let dp = Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
                pose(p.stamp, p.q_gi * dq, p.p_gi + dp)
            })
            .collect(),
    )
}

fn transform(t: &Trajectory, q: Quaternion, d: Vector3<f64>) -> Trajectory {
    Trajectory::new(t.poses.iter().map(|p| pose(p.stamp, q * p.q_gi, q.rotate(&p.p_gi) + d)).collect())
}

fn angle_deg(a: &Quaternion, b: &Quaternion) -> f64 {
    let r = a.to_rotation_matrix().transpose() * b.to_rotation_matrix();
    (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos().to_degrees()
}

#[test]
fn identical_trajectories_score_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random_walk(&mut rng, 100, 0.1);
    let aligned = origin_align(&t, &t).unwrap();
    assert_eq!(aligned, t);
    let ape = ape_rmse(&t, &t).unwrap();
    let rpe = rpe_rmse(&t, &t, 10.0).unwrap();
    assert_eq!((ape.trans_m, ape.rot_deg, rpe.trans_m, rpe.rot_deg), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn constant_offset_gives_exact_ape() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_walk(&mut rng, 50, 0.1);
    let shifted = Trajectory::new(t.poses.iter().map(|p| pose(p.stamp, p.q_gi, p.p_gi + Vector3::x())).collect());
    let ape = ape_rmse(&shifted, &t).unwrap();
    assert_eq!(ape.trans_m, 1.0);
    assert_eq!(ape.rot_deg, 0.0);
}

#[test]
fn alignment_undoes_a_rigid_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_walk(&mut rng, 200, 0.05);
    let moved = transform(&t, Quaternion::exp(&Vector3::new(0.3, -1.2, 2.0)), Vector3::new(4.0, -7.0, 1.5));
    let aligned = origin_align(&moved, &t).unwrap();
    assert_eq!(aligned.poses[0].p_gi, t.poses[0].p_gi);
    assert_eq!(aligned.poses[0].q_gi, t.poses[0].q_gi);
    for (a, r) in aligned.poses.iter().zip(&t.poses) {
        assert!((a.p_gi - r.p_gi).norm() < 1e-12 * (1.0 + r.p_gi.norm()));
        assert!((a.q_gi.to_rotation_matrix() - r.q_gi.to_rotation_matrix()).norm() < 1e-12);
    }
}

#[test]
fn alignment_preserves_relative_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = random_walk(&mut rng, 300, 0.05);
    let est = perturb(&mut rng, &t, 0.05);
    let est = transform(&est, Quaternion::exp(&Vector3::new(-0.4, 0.1, 0.9)), Vector3::new(1.0, 2.0, 3.0));
    let before = rpe_rmse(&est, &t, 10.0).unwrap();
    let after = rpe_rmse(&origin_align(&est, &t).unwrap(), &t, 10.0).unwrap();
    assert!((before.trans_m - after.trans_m).abs() < 1e-12);
    assert!((before.rot_deg - after.rot_deg).abs() < 1e-10);
}

#[test]
fn rpe_is_gauge_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_walk(&mut rng, 300, 0.05);
    let moved = transform(&t, Quaternion::exp(&Vector3::new(1.0, 0.5, -2.0)), Vector3::new(-3.0, 8.0, 0.0));
    let rpe = rpe_rmse(&moved, &t, 10.0).unwrap();
    assert!(rpe.trans_m < 1e-10 && rpe.rot_deg < 1e-6, "{rpe:?}");
    let est = perturb(&mut rng, &t, 0.02);
    let a = rpe_rmse(&est, &t, 10.0).unwrap();
    let b = rpe_rmse(&transform(&est, Quaternion::exp(&Vector3::new(0.2, 0.2, 0.2)), Vector3::new(5.0, 5.0, 5.0)), &t, 10.0).unwrap();
    assert!((a.trans_m - b.trans_m).abs() < 1e-10 && (a.rot_deg - b.rot_deg).abs() < 1e-8);
}

#[test]
fn ape_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = random_walk(&mut rng, 400, 0.02);
    let est = perturb(&mut rng, &t, 0.1);
    let ape = ape_rmse(&est, &t).unwrap();
    let n = t.len() as f64;
    let mut st = 0.0;
    let mut sr = 0.0;
    for (e, r) in est.poses.iter().zip(&t.poses) {
        let d = e.p_gi - r.p_gi;
        st += d.x * d.x + d.y * d.y + d.z * d.z;
        sr += angle_deg(&r.q_gi, &e.q_gi).powi(2);
    }
    assert!((ape.trans_m - (st / n).sqrt()).abs() < 1e-12);
    assert!((ape.rot_deg - (sr / n).sqrt()).abs() < 1e-12);
}

#[test]
fn rpe_hand_computed_three_poses() {
    // reference walks 10 m along x twice; the estimate overshoots the first
    // leg by 0.5 m and turns 90 degrees at the middle pose
    let q0 = Quaternion::identity();
    let reference = Trajectory::new(vec![
        pose(0.0, q0, Vector3::zeros()),
        pose(1.0, q0, Vector3::new(10.0, 0.0, 0.0)),
        pose(2.0, q0, Vector3::new(20.0, 0.0, 0.0)),
    ]);
    let turn = Quaternion::from_axis_angle(&Vector3::z(), std::f64::consts::FRAC_PI_2);
    let est = Trajectory::new(vec![
        pose(0.0, q0, Vector3::zeros()),
        pose(1.0, turn, Vector3::new(10.5, 0.0, 0.0)),
        pose(2.0, turn, Vector3::new(10.5, 10.0, 0.0)),
    ]);
    assert_eq!(rpe_pairs(&est, &reference, 10.0), vec![((0, 0), (1, 1)), ((1, 1), (2, 2))]);
    // pair 1: translation error 0.5 m, rotation error 90 deg
    // pair 2: relative motion is 10 m forward with no turn, as in the reference
    let rpe = rpe_rmse(&est, &reference, 10.0).unwrap();
    assert!((rpe.trans_m - (0.25f64 / 2.0).sqrt()).abs() < 1e-12);
    assert!((rpe.rot_deg - (8100.0f64 / 2.0).sqrt()).abs() < 1e-9);
}

#[test]
fn rpe_tiles_disjointly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = random_walk(&mut rng, 300, 0.05);
    let tiles = rpe_pairs(&t, &t, 10.0);
    assert!(tiles.len() > 2);
    for w in tiles.windows(2) {
        assert_eq!(w[0].1, w[1].0);
    }
}

#[test]
fn short_path_and_missing_overlap() {
    let q = Quaternion::identity();
    let t = Trajectory::new(vec![pose(0.0, q, Vector3::zeros()), pose(1.0, q, Vector3::new(3.0, 0.0, 0.0))]);
    assert!(matches!(rpe_rmse(&t, &t, 10.0), Err(EvalError::PathTooShort { .. })));
    let later = Trajectory::new(vec![pose(5.0, q, Vector3::zeros())]);
    assert_eq!(origin_align(&later, &t), Err(EvalError::NoAssociation));
    assert_eq!(ape_rmse(&later, &t), Err(EvalError::NoAssociation));
}

#[test]
fn association_tolerance() {
    let q = Quaternion::identity();
    let reference = Trajectory::new((0..10).map(|k| pose(k as f64 * 0.1, q, Vector3::zeros())).collect());
    let est = Trajectory::new(vec![pose(0.205, q, Vector3::zeros()), pose(0.5099, q, Vector3::zeros()), pose(0.65, q, Vector3::zeros())]);
    assert_eq!(associate(&est, &reference), vec![(0, 2), (1, 5)]);
}

#[test]
fn delta_omega_examples() {
    let imu = |f: &dyn Fn(f64) -> Vector3<f64>| -> Vec<ImuSample> {
        (0..1000).map(|k| {
            let t = k as f64 * 0.005;
            ImuSample::new(t, f(t), Vector3::zeros())
        })
        .collect()
    };
    let c = imu(&|_| Vector3::new(0.3, 0.0, 0.0));
    assert!((delta_omega(&c, 2.0, 0.11).unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(delta_omega(&imu(&|_| Vector3::zeros()), 2.0, 0.11).unwrap(), 0.0);

    let s = imu(&|t| Vector3::new((3.0 * t).sin(), 0.5 * (2.0 * t).cos(), 0.1));
    let t = 3.3025;
    let mut acc = Vector3::zeros();
    let mut n = 0.0;
    for k in 0..1000 {
        let tk = k as f64 * 0.005;
        if tk >= t - 0.11 - 1e-12 && tk <= t + 1e-12 {
            acc += Vector3::new((3.0 * tk).sin(), 0.5 * (2.0 * tk).cos(), 0.1);
            n += 1.0;
        }
    }
    assert!((delta_omega(&s, t, 0.11).unwrap() - (acc / n).norm()).abs() < 1e-9);
    assert!(matches!(delta_omega(&c, 0.05, 0.11), Err(EvalError::InsufficientSamples { .. })));
    assert!(matches!(delta_omega(&c, 6.0, 0.11), Err(EvalError::InsufficientSamples { .. })));
}

#[test]
fn metrics_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let t = random_walk(&mut rng, 200, 0.05);
        let s = rng.random_range(0.0..0.3);
        let est = perturb(&mut rng, &t, s);
        let ape = ape_rmse(&est, &t).unwrap();
        let rpe = rpe_rmse(&est, &t, 10.0).unwrap();
        assert!(ape.trans_m >= 0.0 && ape.rot_deg >= 0.0 && rpe.trans_m >= 0.0 && rpe.rot_deg >= 0.0);
    }
}
