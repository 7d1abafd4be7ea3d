//! Black-box speed models, segment features and k-means grouping of skiers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::hyperopt::HyperParamVector;
use crate::kernels::KernelFamily;

/// Largest pooled data set handed to an aggregated fit.
pub const MAX_POOLED: usize = 2000;

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

/// Indices `0, stride, 2 stride, ...` keeping at most `max` of `n` items.
pub fn stride_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max || max == 0 {
        return (0..n).collect();
    }
    let stride = n.div_ceil(max);
    (0..n).step_by(stride).collect()
}

fn check_family(theta: &HyperParamVector, want: KernelFamily, what: &str) -> Result<()> {
    theta.validate()?;
    if theta.family != want {
        return Err(Error::InvalidParameter(format!(
            "{what} uses the {want} kernel, got {}",
            theta.family
        )));
    }
    Ok(())
}

fn check_pairs(d: &[f64], v: &[f64]) -> Result<()> {
    if d.len() != v.len() {
        return Err(Error::InvalidInput(format!("{} distances but {} speeds", d.len(), v.len())));
    }
    if d.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a flow model needs at least 2 samples, got {}",
            d.len()
        )));
    }
    Ok(())
}

/// Speed over distance for one skier, local-periodic kernel, zero mean.
pub fn fit_individual_flow(d: &[f64], v: &[f64], theta: &HyperParamVector) -> Result<GpModel> {
    check_family(theta, KernelFamily::LocalPeriodic, "the individual flow model")?;
    check_pairs(d, v)?;
    GpModel::fit(d, v, theta.kernel(), theta.noise_var(), 0.0)
}

/// `sqrt(var(d_t) + var(d_prev))` from the flow model's predictive variances.
pub fn blackbox_delta_v_std(model: &GpModel, d_t: f64, d_prev: f64) -> Result<f64> {
    let a = model.predict(d_t)?.variance;
    let b = model.predict(d_prev)?.variance;
    Ok((a + b).sqrt())
}

/// Pooled speed data of one cluster under the composite kernel. Pools larger
/// than [`MAX_POOLED`] are thinned by a uniform stride after sorting by
/// distance.
pub fn fit_aggregated_flow(d: &[f64], v: &[f64], theta: &HyperParamVector) -> Result<GpModel> {
    check_family(theta, KernelFamily::CompositeCluster, "the aggregated flow model")?;
    check_pairs(d, v)?;
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let keep = stride_indices(order.len(), MAX_POOLED);
    let ds: Vec<f64> = keep.iter().map(|&i| d[order[i]]).collect();
    let vs: Vec<f64> = keep.iter().map(|&i| v[order[i]]).collect();
    GpModel::fit(&ds, &vs, theta.kernel(), theta.noise_var(), 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max: f64,
    pub min: f64,
    pub variance: f64,
    pub mean: f64,
    pub energy: f64,
    pub skewness: f64,
    /// Excess kurtosis.
    pub kurtosis: f64,
}

impl FeatureVector {
    pub const DIM: usize = 7;

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.max,
            self.min,
            self.variance,
            self.mean,
            self.energy,
            self.skewness,
            self.kurtosis,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            max: a[0],
            min: a[1],
            variance: a[2],
            mean: a[3],
            energy: a[4],
            skewness: a[5],
            kurtosis: a[6],
        }
    }
}

/// Variances below this are treated as zero for the shape moments.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Population moments of a speed series.
pub fn extract_features(speeds: &[f64]) -> Result<FeatureVector> {
    if speeds.is_empty() {
        return Err(Error::Empty("features need at least one speed sample".into()));
    }
    if speeds.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("speed samples must be finite".into()));
    }
    let n = speeds.len() as f64;
    let mean = speeds.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in speeds {
        let c = v - mean;
        let c2 = c * c;
        m2 += c2;
        m3 += c2 * c;
        m4 += c2 * c2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 < DEGENERATE_VARIANCE {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok(FeatureVector {
        max: speeds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: speeds.iter().copied().fold(f64::INFINITY, f64::min),
        variance: m2,
        mean,
        energy: speeds.iter().map(|v| v * v).sum(),
        skewness,
        kurtosis,
    })
}

/// Per-dimension z-scores. Constant dimensions map to 0.
pub fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut out = vec![vec![0.0; dim]; rows.len()];
    for j in 0..dim {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        for (o, r) in out.iter_mut().zip(rows) {
            o[j] = (r[j] - mean) / std;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansRun {
    pub objective: f64,
    /// Within-cluster sum of squares after every iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// Centroids in standardized feature space.
    pub centroids: Vec<Vec<f64>>,
    pub standardized: Vec<Vec<f64>>,
    pub objective: f64,
    pub best_restart: usize,
    pub restarts: Vec<KMeansRun>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

/// Standardizes the features, then runs seeded k-means.
pub fn cluster(features: &[FeatureVector], k: usize, seed: u64) -> Result<ClusterAssignment> {
    let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    let z = standardize(&rows);
    let mut out = kmeans(&z, k, seed)?;
    out.standardized = z;
    Ok(out)
}

/// k-means++ seeded Lloyd iterations, restarted [`KMEANS_RESTARTS`] times.
/// The lowest final objective wins; ties go to the earliest restart. Labels
/// are renumbered in order of first appearance.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} clusters from {} items",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::InvalidInput("points have differing dimensions".into()));
    }

    let mut best: Option<(usize, Vec<usize>, Vec<Vec<f64>>)> = None;
    let mut runs: Vec<KMeansRun> = Vec::with_capacity(KMEANS_RESTARTS);
    for restart in 0..KMEANS_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64));
        let init = plus_plus(points, k, &mut rng);
        let (labels, centroids, run) = lloyd(points, init);
        let better = match &best {
            None => true,
            Some((i, _, _)) => run.objective < runs[*i].objective,
        };
        runs.push(run);
        if better {
            best = Some((restart, labels, centroids));
        }
    }
    let (best_restart, labels, centroids) = best.expect("at least one restart");
    let (labels, centroids) = relabel(labels, centroids);
    Ok(ClusterAssignment {
        labels,
        centroids,
        standardized: points.to_vec(),
        objective: runs[best_restart].objective,
        best_restart,
        restarts: runs,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[next].clone());
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

fn objective(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
/// Nothing moves when every point sits on its centroid.
fn reseed_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &[Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = (usize::MAX, 0.0);
        for (i, p) in points.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if d > far.1 {
                far = (i, d);
            }
        }
        if far.0 == usize::MAX {
            return;
        }
        labels[far.0] = empty;
    }
}

fn update(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>, KMeansRun) {
    let mut labels = assign(points, &centroids);
    reseed_empty(points, &mut labels, &centroids);
    update(points, &labels, &mut centroids);
    let mut history = vec![objective(points, &labels, &centroids)];
    let mut iterations = 1;
    while iterations < KMEANS_MAX_ITER {
        let mut next = assign(points, &centroids);
        reseed_empty(points, &mut next, &centroids);
        if next == labels {
            break;
        }
        labels = next;
        update(points, &labels, &mut centroids);
        let obj = objective(points, &labels, &centroids);
        debug_assert!(obj <= history[history.len() - 1] * (1.0 + 1e-12) + 1e-12);
        history.push(obj);
        iterations += 1;
    }
    let run = KMeansRun {
        objective: history[history.len() - 1],
        history,
        iterations,
    };
    (labels, centroids, run)
}

fn relabel(labels: Vec<usize>, centroids: Vec<Vec<f64>>) -> (Vec<usize>, Vec<Vec<f64>>) {
    let k = centroids.len();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = next;
        next += 1;
    }
    let mut new_centroids = vec![Vec::new(); k];
    for (old, c) in centroids.into_iter().enumerate() {
        new_centroids[map[old]] = c;
    }
    (labels.into_iter().map(|l| map[l]).collect(), new_centroids)
}
