//! End-to-end pipelines over loaded data: training, flow prediction with
//! either engine, grey-box versus black-box comparison, force reports and
//! segment clustering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{
    blackbox_delta_v_std, cluster, extract_features, fit_aggregated_flow, stride_indices,
    FeatureVector,
};
use crate::force::{
    build_force_observations, fit_force_gp, force_cdf, greybox_delta_v_std, ForceObservation,
};
use crate::gp::{GpModel, PosteriorPrediction};
use crate::hyperopt::{optimize, HyperParamVector, OptimizeOptions, OptimizeReport};
use crate::kernels::KernelFamily;
use crate::online::{uniform_grid, OnlineGpState};
use crate::trajectory::{extract_segment, lap_index, within_lap, AltitudeProfile, SegmentSpec, SkierConfig, Trajectory};

/// Largest training set handed to the hyperparameter optimizer.
pub const DEFAULT_TRAIN_POINTS: usize = 300;
/// Largest data set used for a batch fit.
pub const DEFAULT_FIT_POINTS: usize = 2000;
/// Spacing of reported posterior curves in meters.
pub const CURVE_STEP: f64 = 5.0;

pub fn default_individual_theta(lap_length: f64) -> HyperParamVector {
    HyperParamVector::local_periodic(0.2, 40.0, 0.1, 2.0 * lap_length, lap_length)
}

pub fn default_force_theta() -> HyperParamVector {
    HyperParamVector::se(400.0, 2500.0, 50.0)
}

pub fn default_aggregated_theta() -> HyperParamVector {
    HyperParamVector::composite(0.2, 40.0, 50.0, 0.5, 20.0)
}

pub fn default_theta(family: KernelFamily, lap_length: f64) -> HyperParamVector {
    match family {
        KernelFamily::LocalPeriodic => default_individual_theta(lap_length),
        KernelFamily::Se => default_force_theta(),
        KernelFamily::CompositeCluster => default_aggregated_theta(),
    }
}

/// Uniform-stride thinning of paired data to at most `max` items.
pub fn thin(d: &[f64], v: &[f64], max: usize) -> (Vec<f64>, Vec<f64>) {
    let keep = stride_indices(d.len(), max);
    (keep.iter().map(|&i| d[i]).collect(), keep.iter().map(|&i| v[i]).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_points: usize,
    pub optimize: OptimizeOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_points: DEFAULT_TRAIN_POINTS,
            optimize: OptimizeOptions::default(),
        }
    }
}

/// Maximum-likelihood hyperparameters on a thinned copy of the data.
pub fn train(d: &[f64], v: &[f64], init: &HyperParamVector, opts: &TrainOptions) -> Result<OptimizeReport> {
    if d.len() != v.len() {
        return Err(Error::InvalidInput(format!("{} inputs but {} targets", d.len(), v.len())));
    }
    let (d, v) = thin(d, v, opts.max_points);
    optimize(&d, &v, init, &opts.optimize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Sgp,
    Ogp,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgp" => Ok(Engine::Sgp),
            "ogp" => Ok(Engine::Ogp),
            other => Err(Error::InvalidParameter(format!("unknown engine `{other}`"))),
        }
    }
}

/// Either engine behind one prediction interface.
pub enum FlowModel {
    Sgp(GpModel),
    Ogp(Box<OnlineGpState>),
}

impl FlowModel {
    pub fn predict(&self, d: f64) -> Result<PosteriorPrediction> {
        match self {
            FlowModel::Sgp(m) => m.predict(d),
            FlowModel::Ogp(s) => s.predict(d),
        }
    }
}

/// Fits the selected engine on `(d, v)`. The batch engine thins to
/// `max_fit` points; the on-line engine streams every sample through a
/// uniform grid of `grid_size` points over `grid_range`.
pub fn fit_flow(
    d: &[f64],
    v: &[f64],
    theta: &HyperParamVector,
    engine: Engine,
    grid_size: usize,
    grid_range: (f64, f64),
    max_fit: usize,
) -> Result<FlowModel> {
    theta.validate()?;
    if d.len() < 2 {
        return Err(Error::InvalidInput(format!("flow fit needs at least 2 samples, got {}", d.len())));
    }
    match engine {
        Engine::Sgp => {
            let (d, v) = thin(d, v, max_fit);
            Ok(FlowModel::Sgp(GpModel::fit(&d, &v, theta.kernel(), theta.noise_var(), 0.0)?))
        }
        Engine::Ogp => {
            let grid = uniform_grid(grid_range.0, grid_range.1, grid_size)?;
            let mut state = OnlineGpState::init(&grid, theta.kernel(), theta.noise_var(), 0.0)?;
            state.update_many(d, v)?;
            Ok(FlowModel::Ogp(Box::new(state)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub d: f64,
    pub mean: f64,
    pub std: f64,
    pub observed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub n: usize,
    pub rmse: Option<f64>,
    /// Fraction of observations within two predictive standard deviations.
    pub coverage_2sigma: Option<f64>,
}

pub fn predict_rows(model: &FlowModel, test: &Trajectory) -> Result<Vec<FlowRow>> {
    test.samples
        .iter()
        .map(|s| {
            let p = model.predict(s.d)?;
            Ok(FlowRow {
                d: s.d,
                mean: p.mean,
                std: p.std(),
                observed: s.v,
            })
        })
        .collect()
}

pub fn summarize(rows: &[FlowRow]) -> FlowSummary {
    if rows.is_empty() {
        return FlowSummary {
            n: 0,
            rmse: None,
            coverage_2sigma: None,
        };
    }
    let n = rows.len() as f64;
    let mse = rows.iter().map(|r| (r.mean - r.observed).powi(2)).sum::<f64>() / n;
    let covered = rows.iter().filter(|r| (r.observed - r.mean).abs() <= 2.0 * r.std).count();
    FlowSummary {
        n: rows.len(),
        rmse: Some(mse.sqrt()),
        coverage_2sigma: Some(covered as f64 / n),
    }
}

/// Grid range covering both the training and the prediction distances.
pub fn span(a: &Trajectory, b: &Trajectory) -> Option<(f64, f64)> {
    let ds = a.samples.iter().chain(&b.samples).map(|s| s.d);
    let (lo, hi) = ds.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    (lo <= hi).then_some((lo, hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub lap: usize,
    pub intervals: usize,
    pub black_box: f64,
    pub grey_box: f64,
    /// `1 - grey / black`.
    pub reduction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub skier: String,
    pub segment: String,
    pub rows: Vec<CompareRow>,
}

impl CompareTable {
    pub fn mean_reduction(&self) -> Option<f64> {
        if self.rows.is_empty() {
            return None;
        }
        Some(self.rows.iter().map(|r| r.reduction).sum::<f64>() / self.rows.len() as f64)
    }
}

/// Force observations on one segment over several laps, pooled on cumulative
/// distance.
pub fn segment_observations(
    traj: &Trajectory,
    profile: &AltitudeProfile,
    mass: f64,
    seg: &SegmentSpec,
    laps: &[usize],
) -> Result<Vec<ForceObservation>> {
    let mut out = Vec::new();
    for &lap in laps {
        let part = extract_segment(traj, seg, lap)?;
        if part.len() < 2 {
            continue;
        }
        out.extend(build_force_observations(&part, profile, mass, seg.kind, seg.lap_length)?.observations);
    }
    Ok(out)
}

pub fn train_force(
    observations: &[ForceObservation],
    init: &HyperParamVector,
    opts: &TrainOptions,
) -> Result<OptimizeReport> {
    let d: Vec<f64> = observations.iter().map(|o| o.d).collect();
    let f: Vec<f64> = observations.iter().map(|o| o.f_r).collect();
    train(&d, &f, init, opts)
}

/// Per-lap mean speed-change uncertainty of the black-box flow model and the
/// grey-box force model on one segment. Laps with fewer than two samples on
/// the segment are left out.
pub fn compare(
    traj: &Trajectory,
    profile: &AltitudeProfile,
    skier: &SkierConfig,
    seg: &SegmentSpec,
    laps: &[usize],
    flow: &GpModel,
    force_theta: &HyperParamVector,
) -> Result<CompareTable> {
    skier.validate()?;
    let mut rows = Vec::new();
    for &lap in laps {
        let part = extract_segment(traj, seg, lap)?;
        if part.len() < 3 {
            log::warn!("{}: lap {lap} has {} samples on {}, skipped", skier.id, part.len(), seg.name);
            continue;
        }
        let obs = build_force_observations(&part, profile, skier.mass, seg.kind, seg.lap_length)?;
        if obs.observations.len() < 2 {
            log::warn!("{}: lap {lap} yields fewer than 2 force observations, skipped", skier.id);
            continue;
        }
        let model = fit_force_gp(&obs.observations, force_theta)?;
        let (mut black, mut grey, mut n) = (0.0, 0.0, 0usize);
        for w in part.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) {
                continue;
            }
            black += blackbox_delta_v_std(flow, w[1].d, w[0].d)?;
            grey += greybox_delta_v_std(&model, 0.5 * (w[0].d + w[1].d), skier.mass, dt)?;
            n += 1;
        }
        let (black, grey) = (black / n as f64, grey / n as f64);
        rows.push(CompareRow {
            lap,
            intervals: n,
            black_box: black,
            grey_box: grey,
            reduction: 1.0 - grey / black,
        });
    }
    Ok(CompareTable {
        skier: skier.id.clone(),
        segment: seg.name.clone(),
        rows,
    })
}

/// Hyperparameters behind a comparison table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareModels {
    pub flow: OptimizeReport,
    pub force: OptimizeReport,
}

/// Trains the black-box flow model on the whole trajectory and the force
/// model on the segment pooled over `laps`, then tabulates [`compare`].
#[allow(clippy::too_many_arguments)]
pub fn compare_skier(
    traj: &Trajectory,
    profile: &AltitudeProfile,
    skier: &SkierConfig,
    seg: &SegmentSpec,
    laps: &[usize],
    flow_init: &HyperParamVector,
    force_init: &HyperParamVector,
    opts: &TrainOptions,
    max_fit: usize,
) -> Result<(CompareTable, CompareModels)> {
    let flow_report = train(&traj.distances(), &traj.speeds(), flow_init, opts)?;
    let (d, v) = thin(&traj.distances(), &traj.speeds(), max_fit);
    let flow = crate::flow::fit_individual_flow(&d, &v, &flow_report.theta)?;
    let obs = segment_observations(traj, profile, skier.mass, seg, laps)?;
    if obs.len() < 2 {
        return Err(Error::Empty(format!(
            "{} has fewer than 2 force observations on {}",
            skier.id, seg.name
        )));
    }
    let force_report = train_force(&obs, force_init, opts)?;
    let table = compare(traj, profile, skier, seg, laps, &flow, &force_report.theta)?;
    Ok((
        table,
        CompareModels {
            flow: flow_report,
            force: force_report,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub d: f64,
    pub d_lap: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceLapReport {
    pub lap: usize,
    pub observations: usize,
    pub skipped: usize,
    pub curve: Vec<CurvePoint>,
    /// Empirical distribution of the posterior mean force at the observations.
    pub cdf: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceReport {
    pub skier: String,
    pub segment: String,
    pub theta: HyperParamVector,
    pub laps: Vec<ForceLapReport>,
}

fn curve_points(seg: &SegmentSpec, lap: usize, predict: impl Fn(f64) -> Result<PosteriorPrediction>) -> Result<Vec<CurvePoint>> {
    let offset = (lap - 1) as f64 * seg.lap_length;
    let n = ((seg.d_end - seg.d_start) / CURVE_STEP).floor() as usize;
    (0..=n)
        .map(|i| {
            let d_lap = (seg.d_start + i as f64 * CURVE_STEP).min(seg.d_end);
            let p = predict(offset + d_lap)?;
            Ok(CurvePoint {
                d: offset + d_lap,
                d_lap,
                mean: p.mean,
                std: p.std(),
            })
        })
        .collect()
}

pub fn force_report(
    traj: &Trajectory,
    profile: &AltitudeProfile,
    skier: &SkierConfig,
    seg: &SegmentSpec,
    laps: &[usize],
    theta: &HyperParamVector,
) -> Result<ForceReport> {
    skier.validate()?;
    let mut out = Vec::new();
    for &lap in laps {
        let part = extract_segment(traj, seg, lap)?;
        if part.len() < 3 {
            log::warn!("{}: lap {lap} has {} samples on {}, skipped", skier.id, part.len(), seg.name);
            continue;
        }
        let obs = build_force_observations(&part, profile, skier.mass, seg.kind, seg.lap_length)?;
        if obs.observations.len() < 2 {
            continue;
        }
        let model = fit_force_gp(&obs.observations, theta)?;
        let means: Vec<f64> = obs
            .observations
            .iter()
            .map(|o| model.predict(o.d).map(|p| p.mean))
            .collect::<Result<_>>()?;
        out.push(ForceLapReport {
            lap,
            observations: obs.observations.len(),
            skipped: obs.skipped,
            curve: curve_points(seg, lap, |d| model.predict(d))?,
            cdf: force_cdf(&means)?,
        });
    }
    Ok(ForceReport {
        skier: skier.id.clone(),
        segment: seg.name.clone(),
        theta: theta.clone(),
        laps: out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkierFeatures {
    pub id: String,
    pub features: FeatureVector,
    pub standardized: Vec<f64>,
    pub cluster: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub cluster: usize,
    pub members: Vec<String>,
    pub pooled: usize,
    pub theta: Option<HyperParamVector>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub segment: String,
    pub lap: usize,
    pub k: usize,
    pub objective: f64,
    pub skiers: Vec<SkierFeatures>,
    pub centroids: Vec<Vec<f64>>,
    pub models: Vec<ClusterModel>,
}

/// Clusters skiers by the speed features of one segment in one lap and fits
/// an aggregated flow model per cluster.
pub fn cluster_segment(
    skiers: &[(String, &Trajectory)],
    seg: &SegmentSpec,
    lap: usize,
    k: usize,
    seed: u64,
    init: &HyperParamVector,
    opts: &TrainOptions,
) -> Result<ClusterReport> {
    let mut parts = Vec::new();
    let mut feats = Vec::new();
    for (id, traj) in skiers {
        let part = extract_segment(traj, seg, lap)?;
        if part.is_empty() {
            log::warn!("{id}: no samples on {} in lap {lap}, left out of clustering", seg.name);
            continue;
        }
        feats.push(extract_features(&part.speeds())?);
        parts.push((id.clone(), part));
    }
    let assignment = cluster(&feats, k, seed)?;
    let mut models = Vec::new();
    for c in 0..assignment.k() {
        let members = assignment.members(c);
        let (mut d, mut v) = (Vec::new(), Vec::new());
        for &i in &members {
            d.extend(parts[i].1.distances());
            v.extend(parts[i].1.speeds());
        }
        let ids: Vec<String> = members.iter().map(|&i| parts[i].0.clone()).collect();
        if d.len() < 2 {
            models.push(ClusterModel {
                cluster: c,
                members: ids,
                pooled: d.len(),
                theta: None,
                curve: Vec::new(),
            });
            continue;
        }
        let mut opts = opts.clone();
        opts.optimize.seed = seed.wrapping_add(c as u64);
        let report = train(&d, &v, init, &opts)?;
        let model = fit_aggregated_flow(&d, &v, &report.theta)?;
        models.push(ClusterModel {
            cluster: c,
            members: ids,
            pooled: d.len(),
            curve: curve_points(seg, lap, |x| model.predict(x))?,
            theta: Some(report.theta),
        });
    }
    let skiers = parts
        .iter()
        .enumerate()
        .map(|(i, (id, _))| SkierFeatures {
            id: id.clone(),
            features: feats[i],
            standardized: assignment.standardized[i].clone(),
            cluster: assignment.labels[i],
        })
        .collect();
    Ok(ClusterReport {
        segment: seg.name.clone(),
        lap,
        k,
        objective: assignment.objective,
        skiers,
        centroids: assignment.centroids,
        models,
    })
}

/// Laps present in a trajectory.
pub fn laps_present(traj: &Trajectory, lap_length: f64, laps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = traj
        .samples
        .iter()
        .map(|s| lap_index(s.d, lap_length))
        .filter(|&l| l <= laps)
        .collect();
    out.dedup();
    out
}

/// Within-lap distances, for plotting several laps on one axis.
pub fn within_lap_distances(traj: &Trajectory, lap_length: f64) -> Vec<f64> {
    traj.samples.iter().map(|s| within_lap(s.d, lap_length)).collect()
}
