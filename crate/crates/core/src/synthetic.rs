//! Synthetic relay races with known kinetics.
//!
//! Each skier tracks a slope-dependent target speed. The resultant force
//! (uphill convention, `F_r = m a + m g sin(phi)` with signed incline) is a
//! speed controller plus white process noise held constant over each
//! sampling interval. Reported speeds carry additive Gaussian noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::G;
use crate::trajectory::{
    within_lap, write_altitude, write_trajectory, AltitudeProfile, SegmentKind, SegmentSpec,
    SkierConfig, Trajectory, TrajectorySample,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaceConfig {
    pub laps: usize,
    pub lap_length: f64,
    pub n_skiers: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Integration sub-steps per sampling interval.
    pub substeps: usize,
    /// Standard deviation of the process force noise in newtons.
    pub force_noise: f64,
    /// Standard deviation of the reported speed noise in m/s.
    pub speed_noise: f64,
    /// Time constant of the speed controller in seconds.
    pub response_time: f64,
    pub seed: u64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        Self {
            laps: 4,
            lap_length: 2500.0,
            n_skiers: 6,
            dt: 1.0,
            substeps: 10,
            force_noise: 20.0,
            speed_noise: 0.1,
            response_time: 3.0,
            seed: 0,
        }
    }
}

/// Generative parameters of one skier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkierTruth {
    pub id: String,
    pub mass: f64,
    /// Target speed on flat ground in m/s.
    pub flat_speed: f64,
    /// Exponential sensitivity of the target speed to the incline.
    pub slope_sensitivity: f64,
    /// Fractional loss of target speed per lap.
    pub fatigue: f64,
}

/// Noise-free state at a sampling instant and the mean resultant force over
/// the interval that follows it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub d: f64,
    pub v: f64,
    pub f_r: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticRace {
    pub config: RaceConfig,
    pub profile: AltitudeProfile,
    pub segments: Vec<SegmentSpec>,
    pub skiers: Vec<SkierConfig>,
    pub truth: Vec<SkierTruth>,
    pub trajectories: Vec<Trajectory>,
    pub ground_truth: Vec<Vec<TruthSample>>,
}

/// Control points of the synthetic lap. The killer hill climbs between 900 m
/// and 1300 m and the steepest downhill falls between 1500 m and 1800 m.
const TRACK_POINTS: [(f64, f64); 10] = [
    (0.0, 200.0),
    (300.0, 205.0),
    (600.0, 200.0),
    (900.0, 194.0),
    (1300.0, 228.0),
    (1500.0, 231.0),
    (1800.0, 196.0),
    (2100.0, 203.0),
    (2300.0, 199.0),
    (2500.0, 200.0),
];

/// Spacing of the generated altitude profile in meters.
const PROFILE_STEP: f64 = 10.0;

/// A closed lap of `lap_length` meters with one marked climb and descent.
pub fn track_profile(lap_length: f64) -> Result<AltitudeProfile> {
    if !(lap_length > 0.0) {
        return Err(Error::InvalidParameter(format!("lap length {lap_length}")));
    }
    let scale = lap_length / 2500.0;
    let n = (lap_length / PROFILE_STEP).round().max(2.0) as usize;
    let step = lap_length / n as f64;
    let mut points = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let d = i as f64 * step;
        let u = d / scale;
        let j = TRACK_POINTS
            .iter()
            .rposition(|p| p.0 <= u)
            .unwrap_or(0)
            .min(TRACK_POINTS.len() - 2);
        let (d0, h0) = TRACK_POINTS[j];
        let (d1, h1) = TRACK_POINTS[j + 1];
        // Cosine easing keeps the slope continuous at control points.
        let s = ((u - d0) / (d1 - d0)).clamp(0.0, 1.0);
        let w = 0.5 - 0.5 * (PI * s).cos();
        points.push((d, h0 + (h1 - h0) * w));
    }
    AltitudeProfile::new(points)
}

pub fn default_segments(lap_length: f64) -> Vec<SegmentSpec> {
    let scale = lap_length / 2500.0;
    vec![
        SegmentSpec {
            name: "killer_hill".into(),
            d_start: 900.0 * scale,
            d_end: 1300.0 * scale,
            kind: SegmentKind::Uphill,
            lap_length,
        },
        SegmentSpec {
            name: "steepest_downhill".into(),
            d_start: 1500.0 * scale,
            d_end: 1800.0 * scale,
            kind: SegmentKind::Downhill,
            lap_length,
        },
    ]
}

/// Position on a circular loop near Falun, Sweden. Only metadata.
fn lat_lon(d: f64, lap_length: f64) -> (f64, f64) {
    let radius = lap_length / (2.0 * PI);
    let a = 2.0 * PI * within_lap(d, lap_length) / lap_length;
    let lat = 60.6 + radius * a.sin() / 111_320.0;
    let lon = 15.6 + radius * a.cos() / (111_320.0 * (60.6f64).to_radians().cos());
    (lat, lon)
}

/// Incline sine averaged over a window centered on `d_lap`.
fn smoothed_sin(profile: &AltitudeProfile, d_lap: f64, lap_length: f64) -> f64 {
    let half = 30.0_f64.min(lap_length / 4.0);
    let a = d_lap - half;
    let b = d_lap + half;
    let h = |x: f64| {
        let laps = (x / lap_length).floor();
        let base = profile.altitude(x - laps * lap_length).unwrap_or(0.0);
        let lap_rise = profile.points()[profile.points().len() - 1].1 - profile.points()[0].1;
        base + laps * lap_rise
    };
    ((h(b) - h(a)) / (b - a)).clamp(-1.0, 1.0)
}

fn sin_phi(profile: &AltitudeProfile, d: f64, lap_length: f64) -> f64 {
    let w = within_lap(d, lap_length).min(profile.d_max());
    profile.incline_angle(w).map(f64::sin).unwrap_or(0.0)
}

impl SkierTruth {
    pub fn target_speed(&self, profile: &AltitudeProfile, d: f64, lap_length: f64) -> f64 {
        let lap = (d / lap_length).floor();
        let s = smoothed_sin(profile, within_lap(d, lap_length), lap_length);
        self.flat_speed * (1.0 - self.fatigue * lap) * (-self.slope_sensitivity * s).exp()
    }
}

fn draw_skiers(n: usize, rng: &mut ChaCha8Rng) -> Vec<SkierTruth> {
    (0..n)
        .map(|i| SkierTruth {
            id: format!("skier_{:02}", i + 1),
            mass: 62.0 + 24.0 * rng.random::<f64>(),
            flat_speed: 6.2 + 1.0 * rng.random::<f64>(),
            slope_sensitivity: 5.5 + 1.5 * rng.random::<f64>(),
            fatigue: 0.005 + 0.015 * rng.random::<f64>(),
        })
        .collect()
}

/// Simulates one skier until the race distance is covered.
fn simulate(
    skier: &SkierTruth,
    profile: &AltitudeProfile,
    cfg: &RaceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, Vec<TruthSample>)> {
    let race = cfg.laps as f64 * cfg.lap_length;
    let h = cfg.dt / cfg.substeps as f64;
    let force = Normal::new(0.0, cfg.force_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let speed = Normal::new(0.0, cfg.speed_noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let m = skier.mass;

    let mut t = 0.0;
    let mut d = 0.0;
    let mut v = skier.target_speed(profile, 0.0, cfg.lap_length);
    let mut truth = Vec::new();
    let mut samples = Vec::new();
    let max_steps = (race / 0.5 / cfg.dt).ceil() as usize + 10;
    for _ in 0..max_steps {
        let noise = force.sample(rng);
        let (t0, d0, v0) = (t, d, v);
        let mut impulse = 0.0;
        for _ in 0..cfg.substeps {
            // Implicit midpoint: forces are evaluated where the sub-step is centered.
            let mut v_mid = v;
            let mut d_mid = d + 0.5 * h * v;
            let mut f = 0.0;
            for _ in 0..3 {
                let target = skier.target_speed(profile, d_mid, cfg.lap_length);
                f = m * G * sin_phi(profile, d_mid, cfg.lap_length) + m * (target - v_mid) / cfg.response_time + noise;
                let a = (f - m * G * sin_phi(profile, d_mid, cfg.lap_length)) / m;
                v_mid = (v + 0.5 * h * a).max(0.5);
                d_mid = d + 0.5 * h * v_mid;
            }
            let a = (f - m * G * sin_phi(profile, d_mid, cfg.lap_length)) / m;
            v = (v + h * a).max(0.5);
            d += h * v_mid;
            impulse += f * h;
        }
        t += cfg.dt;
        truth.push(TruthSample {
            t: t0,
            d: d0,
            v: v0,
            f_r: impulse / cfg.dt,
        });
        let (lat, lon) = lat_lon(d0, cfg.lap_length);
        samples.push(TrajectorySample {
            t: t0,
            lat,
            lon,
            d: d0,
            v: (v0 + speed.sample(rng)).max(0.0),
        });
        if d0 >= race {
            break;
        }
    }
    Ok((Trajectory::new(samples), truth))
}

/// Deterministic for a given configuration.
pub fn generate_race(cfg: &RaceConfig) -> Result<SyntheticRace> {
    if cfg.laps == 0 || cfg.n_skiers == 0 || cfg.substeps == 0 {
        return Err(Error::InvalidParameter("laps, skiers and substeps must be positive".into()));
    }
    if !(cfg.dt > 0.0 && cfg.lap_length > 0.0 && cfg.response_time > 0.0) {
        return Err(Error::InvalidParameter("dt, lap length and response time must be positive".into()));
    }
    if !(cfg.force_noise >= 0.0 && cfg.speed_noise >= 0.0) {
        return Err(Error::InvalidParameter("noise levels must be non-negative".into()));
    }
    let profile = track_profile(cfg.lap_length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = draw_skiers(cfg.n_skiers, &mut rng);
    let mut trajectories = Vec::with_capacity(truth.len());
    let mut ground_truth = Vec::with_capacity(truth.len());
    for (i, skier) in truth.iter().enumerate() {
        let mut skier_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xA5A5_0000 + i as u64));
        let (traj, gt) = simulate(skier, &profile, cfg, &mut skier_rng)?;
        trajectories.push(traj);
        ground_truth.push(gt);
    }
    let skiers = truth
        .iter()
        .enumerate()
        .map(|(i, s)| SkierConfig {
            id: s.id.clone(),
            mass: s.mass,
            team: Some(format!("team_{}", i % 3 + 1)),
            relay: Some("synthetic_relay".into()),
        })
        .collect();
    Ok(SyntheticRace {
        config: cfg.clone(),
        profile,
        segments: default_segments(cfg.lap_length),
        skiers,
        truth,
        trajectories,
        ground_truth,
    })
}

/// Writes the race as plain files:
///
/// * `altitude.csv`, `segments.json`, `skiers.json`
/// * `trajectories/<id>.csv`
/// * `truth/<id>.csv` and `truth/skiers.json` with the generative parameters
pub fn write_race(race: &SyntheticRace, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("trajectories"))?;
    std::fs::create_dir_all(dir.join("truth"))?;
    write_altitude(&race.profile, std::fs::File::create(dir.join("altitude.csv"))?)?;
    std::fs::write(dir.join("segments.json"), serde_json::to_string_pretty(&race.segments)? + "\n")?;
    std::fs::write(dir.join("skiers.json"), serde_json::to_string_pretty(&race.skiers)? + "\n")?;
    std::fs::write(
        dir.join("truth").join("skiers.json"),
        serde_json::to_string_pretty(&(&race.config, &race.truth))? + "\n",
    )?;
    for ((skier, traj), gt) in race.skiers.iter().zip(&race.trajectories).zip(&race.ground_truth) {
        write_trajectory(traj, std::fs::File::create(dir.join("trajectories").join(format!("{}.csv", skier.id)))?)?;
        let mut w = csv::Writer::from_path(dir.join("truth").join(format!("{}.csv", skier.id)))?;
        w.write_record(["t", "d", "v", "f_r"])?;
        for s in gt {
            w.write_record([s.t, s.d, s.v, s.f_r].map(|x| x.to_string()))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Noisy force observations of a smooth known profile over one segment.
#[derive(Clone, Debug)]
pub struct ForceSegment {
    /// Trajectory whose kinetics reproduce `observed` exactly.
    pub trajectory: Trajectory,
    pub profile: AltitudeProfile,
    pub mass: f64,
    pub truth: Vec<(f64, f64)>,
    pub observed: Vec<f64>,
    /// Independent noisy draws at held-out distances.
    pub held_out: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceSegmentConfig {
    pub amplitude: f64,
    pub length_scale: f64,
    pub noise: f64,
    pub samples: usize,
    pub held_out: usize,
    pub mass: f64,
    pub seed: u64,
}

impl Default for ForceSegmentConfig {
    fn default() -> Self {
        Self {
            amplitude: 100.0,
            length_scale: 100.0,
            noise: 5.0,
            samples: 150,
            held_out: 100,
            mass: 75.0,
            seed: 0,
        }
    }
}

/// A random smooth force profile: a sum of a few sinusoids with wavelengths
/// around `2 pi length_scale` and unit-scaled to `amplitude` at its peak.
pub struct ForceProfile {
    terms: Vec<(f64, f64, f64)>,
    scale: f64,
}

impl ForceProfile {
    pub fn random(amplitude: f64, length_scale: f64, span: f64, rng: &mut ChaCha8Rng) -> Self {
        let terms: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                let w = (0.6 + 0.8 * rng.random::<f64>()) / length_scale;
                let phase = 2.0 * PI * rng.random::<f64>();
                let a = 0.5 + rng.random::<f64>();
                (a, w, phase)
            })
            .collect();
        let mut p = Self { terms, scale: 1.0 };
        let peak = (0..=1000)
            .map(|i| p.eval(span * i as f64 / 1000.0).abs())
            .fold(0.0, f64::max);
        p.scale = amplitude / peak;
        p
    }

    pub fn eval(&self, d: f64) -> f64 {
        self.scale * self.terms.iter().map(|(a, w, ph)| a * (w * d + ph).sin()).sum::<f64>()
    }
}

/// Samples a force profile over a 400 m stretch. The track slope in each
/// sampling interval balances the noise-free force, so the speed performs a
/// small random walk driven only by the observation noise. Observations sit
/// at interval midpoints.
pub fn generate_force_segment(cfg: &ForceSegmentConfig) -> Result<ForceSegment> {
    if cfg.samples < 2 {
        return Err(Error::InvalidParameter("a force segment needs at least 2 samples".into()));
    }
    if !(cfg.mass > 0.0) {
        return Err(Error::InvalidParameter(format!("mass {}", cfg.mass)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let span = 400.0;
    let shape = ForceProfile::random(cfg.amplitude, cfg.length_scale, span, &mut rng);
    let step = span / (cfg.samples - 1) as f64;

    let mut points = vec![(0.0, 0.0)];
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut truth = Vec::with_capacity(cfg.samples - 1);
    let mut observed = Vec::with_capacity(cfg.samples - 1);
    let (mut t, mut v, mut h) = (0.0, 4.0, 0.0);
    samples.push(TrajectorySample { t, lat: 0.0, lon: 0.0, d: 0.0, v });
    for i in 1..cfg.samples {
        let d_mid = (i as f64 - 0.5) * step;
        let f_true = shape.eval(d_mid);
        let f_obs = f_true + noise.sample(&mut rng);
        let sin_phi = (f_true / (cfg.mass * G)).clamp(-0.5, 0.5);
        h += step * sin_phi;
        points.push((i as f64 * step, h));
        // Constant acceleration over the interval: v1^2 = v0^2 + 2 a step.
        let a = f_obs / cfg.mass - G * sin_phi;
        let v1 = (v * v + 2.0 * a * step).max(0.25).sqrt();
        let a = (v1 * v1 - v * v) / (2.0 * step);
        let dt = 2.0 * step / (v + v1);
        t += dt;
        v = v1;
        samples.push(TrajectorySample { t, lat: 0.0, lon: 0.0, d: i as f64 * step, v });
        truth.push((d_mid, f_true));
        observed.push(cfg.mass * a + cfg.mass * G * sin_phi);
    }
    points.push((2500.0f64.max(span + 1.0), h));
    let profile = AltitudeProfile::new(points)?;
    let held_out = (0..cfg.held_out)
        .map(|_| {
            let d = span * rng.random::<f64>();
            (d, shape.eval(d) + noise.sample(&mut rng))
        })
        .collect();
    Ok(ForceSegment {
        trajectory: Trajectory::new(samples),
        profile,
        mass: cfg.mass,
        truth,
        observed,
        held_out,
    })
}
