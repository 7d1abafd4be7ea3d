//! Grey-box resultant force estimation.
//!
//! Newton's law along the track relates the measured speed change to the
//! gravity component and an unknown resultant force `F_r`, which is then
//! modeled as a GP over track distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpModel, PosteriorPrediction};
use crate::hyperopt::HyperParamVector;
use crate::kernels::{check_positive, KernelFamily};
use crate::trajectory::{within_lap, AltitudeProfile, SegmentKind, Trajectory};

/// Gravitational acceleration in m/s^2.
pub const G: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceObservation {
    /// Cumulative distance at the midpoint of the sampling interval.
    pub d: f64,
    pub f_r: f64,
    pub dt: f64,
    pub dv: f64,
    /// Sine of the incline at the midpoint.
    pub sin_phi: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForceObservations {
    pub observations: Vec<ForceObservation>,
    /// Sample pairs skipped because time did not advance.
    pub skipped: usize,
}

impl ForceObservations {
    pub fn distances(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.d).collect()
    }

    pub fn forces(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.f_r).collect()
    }
}

/// `F_r = m dv/dt + m g sin(phi)` uphill, `F_r = m dv/dt - m g sin(phi)`
/// downhill, for each pair of consecutive samples.
pub fn resultant_force(mass: f64, dv: f64, dt: f64, sin_phi: f64, kind: SegmentKind) -> f64 {
    let gravity = mass * G * sin_phi;
    match kind {
        SegmentKind::Uphill => mass * dv / dt + gravity,
        SegmentKind::Downhill => mass * dv / dt - gravity,
    }
}

pub fn build_force_observations(
    segment: &Trajectory,
    profile: &AltitudeProfile,
    mass: f64,
    kind: SegmentKind,
    lap_length: f64,
) -> Result<ForceObservations> {
    check_positive("mass", mass)?;
    check_positive("lap_length", lap_length)?;
    if segment.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "force observations need at least 2 samples, got {}",
            segment.len()
        )));
    }
    let mut out = ForceObservations::default();
    for w in segment.samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dt = b.t - a.t;
        if !(dt > 0.0) {
            out.skipped += 1;
            continue;
        }
        let d_mid = 0.5 * (a.d + b.d);
        let sin_phi = profile.incline_angle(within_lap_clamped(d_mid, lap_length, profile))?.sin();
        let dv = b.v - a.v;
        out.observations.push(ForceObservation {
            d: d_mid,
            f_r: resultant_force(mass, dv, dt, sin_phi, kind),
            dt,
            dv,
            sin_phi,
        });
    }
    if out.skipped > 0 {
        log::warn!("skipped {} sample pairs with non-positive time step", out.skipped);
    }
    Ok(out)
}

/// Within-lap distance, mapping a midpoint that falls on the lap end back
/// onto the profile instead of wrapping it to zero.
fn within_lap_clamped(d: f64, lap_length: f64, profile: &AltitudeProfile) -> f64 {
    let w = within_lap(d, lap_length);
    if w == 0.0 && d > 0.0 && profile.d_max() >= lap_length {
        lap_length
    } else {
        w
    }
}

/// Fits the resultant-force GP with an SE kernel and zero prior mean.
pub fn fit_force_gp(observations: &[ForceObservation], theta: &HyperParamVector) -> Result<GpModel> {
    theta.validate()?;
    if theta.family != KernelFamily::Se {
        return Err(Error::InvalidParameter(format!(
            "the force model uses the se kernel, got {}",
            theta.family
        )));
    }
    if observations.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "force model needs at least 2 observations, got {}",
            observations.len()
        )));
    }
    let d: Vec<f64> = observations.iter().map(|o| o.d).collect();
    let f: Vec<f64> = observations.iter().map(|o| o.f_r).collect();
    GpModel::fit(&d, &f, theta.kernel(), theta.noise_var(), 0.0)
}

pub fn estimate_force(model: &GpModel, d_star: f64) -> Result<PosteriorPrediction> {
    model.predict(d_star)
}

/// Speed-change uncertainty implied by a force standard deviation.
pub fn delta_v_std_from_force_std(force_std: f64, mass: f64, dt: f64) -> Result<f64> {
    check_positive("mass", mass)?;
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("time step {dt} must be non-negative")));
    }
    Ok(force_std * dt / mass)
}

/// `sigma_r(d_t) * dt / m` from the force model's predictive variance.
pub fn greybox_delta_v_std(model: &GpModel, d_t: f64, mass: f64, dt: f64) -> Result<f64> {
    let p = model.predict(d_t)?;
    delta_v_std_from_force_std(p.std(), mass, dt)
}

/// Empirical CDF as `(value, P(X <= value))` over distinct sorted values.
pub fn force_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::Empty("a CDF needs at least one sample".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("CDF samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => out.push((v, p)),
        }
    }
    Ok(out)
}

/// Integrates `dv = (F_r / m -/+ g sin(phi)) dt` from `v0` using the
/// supplied per-interval forces.
pub fn integrate_speed(
    v0: f64,
    observations: &[ForceObservation],
    forces: &[f64],
    mass: f64,
    kind: SegmentKind,
) -> Vec<f64> {
    let mut v = v0;
    let mut out = Vec::with_capacity(observations.len() + 1);
    out.push(v);
    for (o, &f) in observations.iter().zip(forces) {
        let gravity = G * o.sin_phi;
        let accel = match kind {
            SegmentKind::Uphill => f / mass - gravity,
            SegmentKind::Downhill => f / mass + gravity,
        };
        v += accel * o.dt;
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TrajectorySample;
    use proptest::prelude::*;

    fn traj(points: &[(f64, f64, f64)]) -> Trajectory {
        Trajectory::new(
            points
                .iter()
                .map(|&(t, d, v)| TrajectorySample { t, lat: 0.0, lon: 0.0, d, v })
                .collect(),
        )
    }

    fn flat() -> AltitudeProfile {
        AltitudeProfile::new(vec![(0.0, 10.0), (2500.0, 10.0)]).unwrap()
    }

    /// Constant grade with `sin(phi) = 0.1` over the whole lap.
    fn ramp() -> AltitudeProfile {
        AltitudeProfile::new(vec![(0.0, 0.0), (2500.0, 250.0)]).unwrap()
    }

    #[test]
    fn substitution_examples() {
        assert!((resultant_force(80.0, 0.5, 1.0, 0.1, SegmentKind::Uphill) - 118.48).abs() < 1e-9);
        assert!((resultant_force(80.0, 1.0, 1.0, 0.1, SegmentKind::Downhill) - 1.52).abs() < 1e-9);

        let t = traj(&[(0.0, 100.0, 5.0), (1.0, 105.0, 5.5)]);
        let obs = build_force_observations(&t, &ramp(), 80.0, SegmentKind::Uphill, 2500.0).unwrap();
        let o = obs.observations[0];
        assert!((o.f_r - 118.48).abs() < 1e-9);
        assert_eq!(o.d, 102.5);
        assert_eq!(o.dv, 0.5);
    }

    #[test]
    fn equilibrium_on_flat_track() {
        let t = traj(&[(0.0, 0.0, 4.0), (1.0, 4.0, 4.0), (2.0, 8.0, 4.0), (3.0, 12.0, 4.0)]);
        let obs = build_force_observations(&t, &flat(), 70.0, SegmentKind::Uphill, 2500.0).unwrap();
        assert_eq!(obs.observations.len(), 3);
        assert!(obs.observations.iter().all(|o| o.f_r == 0.0));
    }

    #[test]
    fn non_advancing_time_is_skipped() {
        let t = traj(&[(0.0, 0.0, 4.0), (0.0, 4.0, 4.5), (1.0, 8.0, 5.0)]);
        let obs = build_force_observations(&t, &flat(), 70.0, SegmentKind::Uphill, 2500.0).unwrap();
        assert_eq!(obs.skipped, 1);
        assert_eq!(obs.observations.len(), 1);
        assert!(build_force_observations(&traj(&[(0.0, 0.0, 1.0)]), &flat(), 70.0, SegmentKind::Uphill, 2500.0).is_err());
        assert!(build_force_observations(&t, &flat(), 0.0, SegmentKind::Uphill, 2500.0).is_err());
    }

    #[test]
    fn midpoint_on_a_later_lap_uses_within_lap_distance() {
        let p = AltitudeProfile::new(vec![(0.0, 0.0), (100.0, 10.0), (2500.0, 10.0)]).unwrap();
        let t = traj(&[(0.0, 2550.0, 5.0), (1.0, 2560.0, 5.0)]);
        let obs = build_force_observations(&t, &p, 50.0, SegmentKind::Uphill, 2500.0).unwrap();
        assert!((obs.observations[0].sin_phi - 0.1).abs() < 1e-12);
        let t = traj(&[(0.0, 2495.0, 5.0), (1.0, 2505.0, 5.0)]);
        assert!(build_force_observations(&t, &p, 50.0, SegmentKind::Uphill, 2500.0).is_ok());
    }

    #[test]
    fn greybox_std_examples() {
        assert!((delta_v_std_from_force_std(20.0, 80.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(delta_v_std_from_force_std(20.0, 80.0, 0.0).unwrap(), 0.0);
        assert!(delta_v_std_from_force_std(20.0, -1.0, 1.0).is_err());
        assert!(delta_v_std_from_force_std(20.0, 80.0, -1.0).is_err());

        let model = fit_force_gp(
            &[
                ForceObservation { d: 0.0, f_r: 10.0, dt: 1.0, dv: 0.0, sin_phi: 0.0 },
                ForceObservation { d: 1.0, f_r: 12.0, dt: 1.0, dv: 0.0, sin_phi: 0.0 },
            ],
            &HyperParamVector::se(100.0, 300.0, 1.0),
        )
        .unwrap();
        // Far from the data the predictive variance is 400.
        let s = greybox_delta_v_std(&model, 1e6, 80.0, 1.0).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
    }

    #[test]
    fn force_model_examples() {
        let theta = HyperParamVector::se(4.0, 100.0, 10.0);
        let o = |d: f64, f: f64| ForceObservation { d, f_r: f, dt: 1.0, dv: 0.0, sin_phi: 0.0 };

        let m = fit_force_gp(&[o(5.0, 30.0), o(5.0, 40.0)], &theta).unwrap();
        let mean = estimate_force(&m, 5.0).unwrap().mean;
        assert!(mean > 0.0 && mean < 40.0);
        // Two noisy copies act like one observation of their mean with half the noise.
        assert!((mean - 100.0 / 102.0 * 35.0).abs() < 1e-9);

        let far = estimate_force(&m, 1e5).unwrap();
        assert!(far.mean.abs() < 1e-12);
        assert!((far.variance - 104.0).abs() < 1e-9);

        assert!(fit_force_gp(&[o(0.0, 1.0)], &theta).is_err());
        assert!(fit_force_gp(&[o(0.0, 1.0), o(1.0, 2.0)], &HyperParamVector::local_periodic(1.0, 1.0, 1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn single_observation_shrinks_towards_zero() {
        let model = GpModel::fit(&[3.0], &[50.0], crate::KernelSpec::se(100.0, 10.0), 25.0, 0.0).unwrap();
        let p = estimate_force(&model, 3.0).unwrap();
        assert!((p.mean - 100.0 / 125.0 * 50.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(force_cdf(&[0.0]).unwrap(), vec![(0.0, 1.0)]);
        let c = force_cdf(&[4.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(c[1], (2.0, 0.5));
        let c = force_cdf(&[1.0, 2.0, 1.0]).unwrap();
        assert_eq!(c, vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
        assert!(force_cdf(&[]).is_err());
    }

    fn series() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.5f64..8.0, 1.0f64..10.0), 2..30)
    }

    fn to_traj(steps: &[(f64, f64)], d0: f64) -> Trajectory {
        let mut d = d0;
        let pts: Vec<(f64, f64, f64)> = steps
            .iter()
            .enumerate()
            .map(|(i, &(v, dd))| {
                d += dd;
                (i as f64, d, v)
            })
            .collect();
        traj(&pts)
    }

    proptest! {
        #[test]
        fn uphill_downhill_duality(
            steps in series(),
            hs in proptest::collection::vec(-30.0f64..30.0, 2..8),
            mass in 40.0f64..100.0,
        ) {
            let step = 2500.0 / (hs.len() - 1) as f64;
            let p = AltitudeProfile::new(hs.iter().enumerate().map(|(i, &h)| (i as f64 * step, h)).collect()).unwrap();
            let t = to_traj(&steps, 100.0);
            let up = build_force_observations(&t, &p, mass, SegmentKind::Uphill, 2500.0).unwrap();
            let down = build_force_observations(&t, &p.negated(), mass, SegmentKind::Downhill, 2500.0).unwrap();
            prop_assert_eq!(up.forces(), down.forces());
        }

        #[test]
        fn doubling_mass_doubles_force_on_flat_track(steps in series(), mass in 40.0f64..100.0) {
            let t = to_traj(&steps, 0.0);
            let a = build_force_observations(&t, &flat(), mass, SegmentKind::Uphill, 2500.0).unwrap();
            let b = build_force_observations(&t, &flat(), 2.0 * mass, SegmentKind::Uphill, 2500.0).unwrap();
            for (x, y) in a.forces().iter().zip(b.forces()) {
                prop_assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn greybox_std_is_linear(s in 0.0f64..100.0, m in 1.0f64..200.0, dt in 0.0f64..5.0, c in 0.1f64..10.0) {
            let base = delta_v_std_from_force_std(s, m, dt).unwrap();
            let tol = 1e-12 * base.max(1e-300);
            prop_assert!((delta_v_std_from_force_std(c * s, m, dt).unwrap() - c * base).abs() <= tol * c);
            prop_assert!((delta_v_std_from_force_std(s, m, c * dt).unwrap() - c * base).abs() <= tol * c);
            prop_assert!((delta_v_std_from_force_std(s, c * m, dt).unwrap() - base / c).abs() <= tol);
        }

        #[test]
        fn integrating_observed_forces_reproduces_speed(
            steps in series(),
            hs in proptest::collection::vec(-30.0f64..30.0, 2..8),
            mass in 40.0f64..100.0,
            downhill in any::<bool>(),
        ) {
            let kind = if downhill { SegmentKind::Downhill } else { SegmentKind::Uphill };
            let step = 2500.0 / (hs.len() - 1) as f64;
            let p = AltitudeProfile::new(hs.iter().enumerate().map(|(i, &h)| (i as f64 * step, h)).collect()).unwrap();
            let t = to_traj(&steps, 0.0);
            let obs = build_force_observations(&t, &p, mass, kind, 2500.0).unwrap();
            let v = integrate_speed(t.samples[0].v, &obs.observations, &obs.forces(), mass, kind);
            for (a, b) in v.iter().zip(t.speeds()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
