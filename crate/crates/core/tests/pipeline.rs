use trajgp::analysis::{default_force_theta, segment_observations, train_force, TrainOptions};
use trajgp::force::{build_force_observations, delta_v_std_from_force_std, fit_force_gp, integrate_speed};
use trajgp::synthetic::{generate_race, write_race, RaceConfig};
use trajgp::trajectory::{extract_segment, load_altitude_file, load_trajectory_file, SegmentSpec};

#[test]
fn posterior_forces_integrate_back_to_observed_speeds() {
    let race = generate_race(&RaceConfig { seed: 21, ..Default::default() }).unwrap();
    let opts = TrainOptions::default();
    for (i, skier) in race.skiers.iter().enumerate().take(3) {
        let traj = &race.trajectories[i];
        for seg in &race.segments {
            let obs = segment_observations(traj, &race.profile, skier.mass, seg, &[1, 2, 3, 4]).unwrap();
            let theta = train_force(&obs, &default_force_theta(), &opts).unwrap().theta;
            for lap in 1..=4 {
                let part = extract_segment(traj, seg, lap).unwrap();
                let lap_obs = build_force_observations(&part, &race.profile, skier.mass, seg.kind, seg.lap_length).unwrap();
                let model = fit_force_gp(&lap_obs.observations, &theta).unwrap();
                let mut forces = Vec::new();
                let mut var = 0.0;
                for o in &lap_obs.observations {
                    let p = model.predict(o.d).unwrap();
                    forces.push(p.mean);
                    var += delta_v_std_from_force_std(p.std(), skier.mass, o.dt).unwrap().powi(2);
                }
                let v = integrate_speed(part.samples[0].v, &lap_obs.observations, &forces, skier.mass, seg.kind);
                let end = part.samples.last().unwrap().v;
                let err = (v.last().unwrap() - end).abs();
                assert!(err < 3.0 * var.sqrt(), "{} {} lap {lap}: {err} vs {}", skier.id, seg.name, var.sqrt());
            }
        }
    }
}

#[test]
fn written_race_loads_back_unchanged() {
    let race = generate_race(&RaceConfig { seed: 5, n_skiers: 2, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_race(&race, dir.path()).unwrap();
    let profile = load_altitude_file(&dir.path().join("altitude.csv")).unwrap();
    assert_eq!(profile, race.profile);
    let segments: Vec<SegmentSpec> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("segments.json")).unwrap()).unwrap();
    assert_eq!(segments, race.segments);
    for (skier, traj) in race.skiers.iter().zip(&race.trajectories) {
        let (loaded, report) = load_trajectory_file(&dir.path().join("trajectories").join(format!("{}.csv", skier.id))).unwrap();
        assert_eq!(&loaded, traj);
        assert_eq!((report.duplicate_timestamps, report.dropped_decreasing), (0, 0));
    }
}
