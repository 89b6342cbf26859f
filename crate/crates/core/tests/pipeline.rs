use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riotc_core::config::RunConfig;
use riotc_core::ego_velocity::{ransac_estimate, RansacConfig};
use riotc_core::eval::{ape_rmse, origin_align};
use riotc_core::pipeline::*;
use riotc_core::simulator::{radar_epoch, radar_velocity, synth_scan, ScanGeometry, TrajectoryKind, TruthModel};
use riotc_core::update::{predict_ego_velocity, Extrinsics};

fn noiseless() -> RunConfig {
    let mut cfg = RunConfig { sim_imu_noise_scale: 0.0, sim_radar_noise_scale: 0.0, ..Default::default() };
    cfg.sim.outlier_ratio = 0.0;
    cfg
}

#[test]
fn noiseless_closed_loop_tracks_truth() {
    // started at the true offset, so only integration error is left
    let mut cfg = noiseless();
    cfg.t_d_init = cfg.sim.injected_t_d;
    let (row, out) = run_trial(&cfg, "noiseless").unwrap();
    assert_eq!(out.records.len(), 600);
    assert!(out.skipped.is_empty(), "{:?}", out.skipped.first());
    assert!(row.ape_trans_m < 1e-3, "APE {} m", row.ape_trans_m);
    assert!((out.td_final() + 0.15).abs() < 1e-3, "t_d {}", out.td_final());
}

#[test]
fn noiseless_scan_gives_exact_ego_velocity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = Vector3::new(1.3, -0.4, 0.25);
    let (scan, _) = synth_scan(&mut rng, 0.0, &v, 60, 0.0, 0.0, &ScanGeometry::default());
    let est = ransac_estimate(&scan, &RansacConfig::default(), &mut rng).unwrap();
    assert!((est.v_r - v).norm() < 1e-9);
}

#[test]
fn simulator_and_filter_agree_on_the_offset_sign() {
    // a scan stamped `stamp` was taken at stamp + t_d; predicting at that
    // instant from the true state must reproduce the simulated velocity
    let model = TruthModel::new(TrajectoryKind::Figure8, 5.0, 0.1, 0.8);
    let ext = Extrinsics::default();
    for j in [3, 57, 311] {
        let (stamp, t_true) = radar_epoch(j, 10.0, -0.15);
        let t_filter = riotc_core::temporal::correction_time(stamp, -0.15);
        assert_eq!(t_filter, t_true);
        let s = model.sample(t_filter);
        let x = riotc_core::state::NominalState { q_gi: s.q_gi, v_gi: s.v_gi, p_gi: s.p_gi, stamp: t_filter, ..Default::default() };
        let u = riotc_core::propagation::ImuSample::new(t_filter, s.omega, Vector3::zeros());
        let pred = predict_ego_velocity(&x, &u, &ext);
        assert!((pred - radar_velocity(&s, &ext)).norm() < 1e-12);
    }
}

#[test]
fn dataset_round_trip_is_exact_and_reproducible() {
    let mut cfg = RunConfig::default();
    cfg.sim.duration = 5.0;
    let ds = simulate(&cfg).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_dataset(a.path(), &ds, &cfg).unwrap();
    write_dataset(b.path(), &simulate(&cfg).unwrap(), &cfg).unwrap();
    for f in ["imu.csv", "radar.csv", "groundtruth.csv", "meta.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let back = load_dataset(a.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn frozen_offset_equals_shifted_stamps() {
    let mut cfg = RunConfig::default();
    cfg.sim.duration = 20.0;
    let ds = simulate(&cfg).unwrap();
    let c = -0.12;
    let frozen = run_dataset(&cfg.clone().with_fixed_td(c), &ds).unwrap();
    let mut shifted = ds.clone();
    for s in &mut shifted.radar {
        s.stamp += c;
    }
    let zero = run_dataset(&cfg.with_fixed_td(0.0), &shifted).unwrap();
    assert_eq!(frozen.records.len(), zero.records.len());
    for (a, b) in frozen.trajectory.poses.iter().zip(&zero.trajectory.poses) {
        assert_eq!((a.stamp, a.q_gi, a.p_gi), (b.stamp, b.q_gi, b.p_gi));
    }
    assert_eq!(frozen.td_final(), c);
}

#[test]
fn fixed_zero_matches_online_without_offset() {
    let mut cfg = RunConfig::default();
    cfg.sim.injected_t_d = 0.0;
    cfg.sim.duration = 30.0;
    let ds = simulate(&cfg).unwrap();
    let online = run_dataset(&cfg, &ds).unwrap();
    let fixed = run_dataset(&cfg.clone().with_fixed_td(0.0), &ds).unwrap();
    let a = ape_rmse(&origin_align(&online.trajectory, &ds.truth).unwrap(), &ds.truth).unwrap();
    let b = ape_rmse(&origin_align(&fixed.trajectory, &ds.truth).unwrap(), &ds.truth).unwrap();
    assert!(online.td_final().abs() < 0.01, "{}", online.td_final());
    let (pa, pb) = (online.final_state.p_gi, fixed.final_state.p_gi);
    assert!((pa - pb).norm() < 0.5, "{pa} vs {pb}");
    assert!((a.trans_m - b.trans_m).abs() < 0.2, "{a:?} vs {b:?}");
}

#[test]
fn single_trial_montecarlo_equals_run_trial() {
    let mut cfg = RunConfig::default();
    cfg.sim.duration = 15.0;
    let report = montecarlo(&cfg, 1);
    let (row, _) = run_trial(&cfg, "trial_0").unwrap();
    assert_eq!(report.rows, vec![row.clone()]);
    assert_eq!(report.td_final.mean, row.td_final_s);
    assert!(report.failures.is_empty());
}

#[test]
fn montecarlo_is_deterministic_and_ordered() {
    let mut cfg = RunConfig::default();
    cfg.sim.duration = 15.0;
    let a = montecarlo(&cfg, 4);
    let b = montecarlo(&cfg, 4);
    assert_eq!(a.rows, b.rows);
    let names: Vec<_> = a.rows.iter().map(|r| r.sequence.as_str()).collect();
    assert_eq!(names, ["trial_0", "trial_1", "trial_2", "trial_3"]);
    let mut c1 = cfg.clone();
    c1.seed += 1;
    assert_eq!(a.rows[1].td_final_s, run_trial(&c1, "x").unwrap().0.td_final_s);
}

#[test]
fn short_run_reports_empty_rpe() {
    let mut cfg = RunConfig::default();
    cfg.sim.duration = 2.0;
    let (row, _) = run_trial(&cfg, "short").unwrap();
    assert!(row.rpe_trans_m.is_none() && row.rpe_rot_deg.is_none());
    assert!(row.ape_trans_m.is_finite());
}

#[test]
fn offset_holds_still_at_rest() {
    let mut cfg = RunConfig::default();
    cfg.sim.trajectory = TrajectoryKind::Stationary;
    cfg.sim.duration = 30.0;
    let out = run_trial(&cfg, "rest").map(|(_, o)| o).unwrap();
    assert!(out.records.len() > 250);
    let mut prev = cfg.t_d_init;
    for r in &out.records {
        assert!((r.td_hat - prev).abs() < 1e-5, "t_d moved by {} at t = {}", r.td_hat - prev, r.t);
        prev = r.td_hat;
    }
}
