//! Grid-based on-line GP regression.
//!
//! The posterior over latent function values at `s` fixed grid inputs is
//! updated one observation at a time in `O(s^2)`; the state never grows
//! with the number of observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::PosteriorPrediction;
use crate::kernels::{check_finite_inputs, check_non_negative, KernelSpec};
use crate::linalg::{factor_until, symmetrize};

/// Largest accepted entry of `K_bar^-1 K_bar - I`.
pub const INVERSE_TOLERANCE: f64 = 1e-6;

/// Predictive variances are floored at this multiple of the noise variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// `s` uniformly spaced points covering `[d_min, d_max]`.
pub fn uniform_grid(d_min: f64, d_max: f64, s: usize) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::InvalidInput("grid needs at least one point".into()));
    }
    if !(d_min.is_finite() && d_max.is_finite()) || d_max < d_min || (s > 1 && d_max == d_min) {
        return Err(Error::InvalidInput(format!(
            "invalid grid range [{d_min}, {d_max}] for {s} points"
        )));
    }
    if s == 1 {
        return Ok(vec![0.5 * (d_min + d_max)]);
    }
    let step = (d_max - d_min) / (s - 1) as f64;
    Ok((0..s).map(|i| d_min + step * i as f64).collect())
}

#[derive(Clone, Debug)]
pub struct OnlineGpState {
    grid: Vec<f64>,
    mu_g: DVector<f64>,
    k_g: DMatrix<f64>,
    k_bar: DMatrix<f64>,
    k_bar_inv: DMatrix<f64>,
    m_bar: DVector<f64>,
    kernel: KernelSpec,
    noise_var: f64,
    mean_const: f64,
    prior_jitter: f64,
    count: u64,
}

impl OnlineGpState {
    /// Sets `mu_g = m_bar`, `K_g = K_bar` and caches `K_bar^-1`. The prior
    /// mean is the constant `mean_const`, so `m_bar = mean_const * 1`.
    pub fn init(grid: &[f64], kernel: KernelSpec, noise_var: f64, mean_const: f64) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Empty("grid needs at least one point".into()));
        }
        check_finite_inputs(grid)?;
        kernel.validate()?;
        check_non_negative("noise_var", noise_var)?;
        let mut sorted = grid.to_vec();
        sorted.sort_by(f64::total_cmp);
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Singular(format!("grid point {} is repeated", w[0])));
        }
        let (k_bar, k_bar_inv, prior_jitter) = prior(grid, &kernel, None)?;
        let s = grid.len();
        let m_bar = DVector::from_element(s, mean_const);
        Ok(Self {
            grid: grid.to_vec(),
            mu_g: m_bar.clone(),
            k_g: k_bar.clone(),
            k_bar,
            k_bar_inv,
            m_bar,
            kernel,
            noise_var,
            mean_const,
            prior_jitter,
            count: 0,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn mu_g(&self) -> &DVector<f64> {
        &self.mu_g
    }

    pub fn k_g(&self) -> &DMatrix<f64> {
        &self.k_g
    }

    pub fn k_bar(&self) -> &DMatrix<f64> {
        &self.k_bar
    }

    pub fn k_bar_inv(&self) -> &DMatrix<f64> {
        &self.k_bar_inv
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Diagonal jitter added to the grid prior to make its inverse accurate.
    pub fn prior_jitter(&self) -> f64 {
        self.prior_jitter
    }

    /// Number of `f64` values held by the state. Independent of `count`.
    pub fn footprint(&self) -> usize {
        self.grid.len()
            + self.mu_g.len()
            + self.k_g.len()
            + self.k_bar.len()
            + self.k_bar_inv.len()
            + self.m_bar.len()
    }

    /// Absorbs one observation `v_t` at input `d_t`.
    pub fn update(&mut self, d_t: f64, v_t: f64) -> Result<()> {
        if !d_t.is_finite() || !v_t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "observation ({d_t}, {v_t}) is not finite"
            )));
        }
        let k_t = self.kernel.cross(d_t, &self.grid);
        // J_t = k(d_t, d_bar) K_bar^-1, kept as a column vector
        let j = &self.k_bar_inv * &k_t;
        let mu_p = self.mean_const + j.dot(&(&self.mu_g - &self.m_bar));

        let kg_j = &self.k_g * &j;
        let kbar_j = &self.k_bar * &j;
        let sigma_p = self.kernel.prior_variance() + j.dot(&kg_j) - j.dot(&kbar_j);

        let denom = self.noise_var + sigma_p;
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::Degenerate(format!(
                "innovation variance {denom} at d = {d_t}"
            )));
        }
        let gain = &kg_j / denom;
        self.mu_g.axpy(v_t - mu_p, &gain, 1.0);
        // K_t = K_{t-1} - g (J K_{t-1}); J K_{t-1} is kg_j^T by symmetry
        self.k_g.ger(-1.0, &gain, &kg_j, 1.0);
        symmetrize(&mut self.k_g);
        self.count += 1;
        Ok(())
    }

    pub fn update_many(&mut self, inputs: &[f64], targets: &[f64]) -> Result<()> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for (&d, &v) in inputs.iter().zip(targets) {
            self.update(d, v)?;
        }
        Ok(())
    }

    /// Approximate predictive distribution of a noisy observation at `d_star`.
    pub fn predict(&self, d_star: f64) -> Result<PosteriorPrediction> {
        if !d_star.is_finite() {
            return Err(Error::InvalidInput(format!("query {d_star} is not finite")));
        }
        let k_star = self.kernel.cross(d_star, &self.grid);
        let a = &self.k_bar_inv * &k_star;
        let mean = a.dot(&(&self.mu_g - &self.m_bar)) + self.mean_const;
        // a^T (K_g K_bar^-1 - I) k = a^T K_g a - a^T k
        let correction = a.dot(&(&self.k_g * &a)) - a.dot(&k_star);
        let raw = self.kernel.prior_variance() + self.noise_var + correction;
        let floor = self.noise_var * VARIANCE_FLOOR;
        let variance = if raw < floor {
            log::warn!("on-line predictive variance {raw:e} at d = {d_star} clamped to {floor:e}");
            floor
        } else {
            raw
        };
        Ok(PosteriorPrediction { mean, variance })
    }

    pub fn predict_many(&self, queries: &[f64]) -> Result<Vec<PosteriorPrediction>> {
        queries.iter().map(|&d| self.predict(d)).collect()
    }

    pub fn checkpoint(&self) -> OnlineCheckpoint {
        let s = self.grid.len();
        let mut k_g = Vec::with_capacity(s * s);
        for i in 0..s {
            for j in 0..s {
                k_g.push(self.k_g[(i, j)]);
            }
        }
        OnlineCheckpoint {
            grid: self.grid.clone(),
            mu_g: self.mu_g.as_slice().to_vec(),
            k_g,
            kernel: self.kernel,
            noise_var: self.noise_var,
            mean_const: self.mean_const,
            prior_jitter: self.prior_jitter,
            count: self.count,
        }
    }

    pub fn restore(cp: &OnlineCheckpoint) -> Result<Self> {
        let s = cp.grid.len();
        if s == 0 || cp.mu_g.len() != s || cp.k_g.len() != s * s {
            return Err(Error::Schema(format!(
                "checkpoint sizes do not match a grid of {s} points"
            )));
        }
        check_finite_inputs(&cp.grid)?;
        cp.kernel.validate()?;
        check_non_negative("noise_var", cp.noise_var)?;
        let (k_bar, k_bar_inv, prior_jitter) = prior(&cp.grid, &cp.kernel, Some(cp.prior_jitter))?;
        Ok(Self {
            grid: cp.grid.clone(),
            mu_g: DVector::from_column_slice(&cp.mu_g),
            k_g: DMatrix::from_row_slice(s, s, &cp.k_g),
            k_bar,
            k_bar_inv,
            m_bar: DVector::from_element(s, cp.mean_const),
            kernel: cp.kernel,
            noise_var: cp.noise_var,
            mean_const: cp.mean_const,
            prior_jitter,
            count: cp.count,
        })
    }
}

/// Builds the grid prior covariance and its inverse. Without a fixed jitter
/// the jitter ladder is walked until the inverse reproduces the identity to
/// [`INVERSE_TOLERANCE`].
fn prior(
    grid: &[f64],
    kernel: &KernelSpec,
    fixed_jitter: Option<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let raw = kernel.gram(grid, 0.0)?.matrix;
    let with_jitter = |jitter: f64| {
        let mut m = raw.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        m
    };
    if let Some(jitter) = fixed_jitter {
        let k_bar = with_jitter(jitter);
        let chol = k_bar
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { max_jitter: jitter })?;
        let mut inv = chol.inverse();
        symmetrize(&mut inv);
        return Ok((k_bar, inv, jitter));
    }

    let mut found = None;
    let factor = factor_until(raw.clone(), kernel.prior_variance(), |f| {
        let k_bar = with_jitter(f.jitter);
        let mut inv = f.chol.inverse();
        symmetrize(&mut inv);
        let residual = (&inv * &k_bar - DMatrix::identity(k_bar.nrows(), k_bar.ncols())).amax();
        let ok = residual <= INVERSE_TOLERANCE;
        if ok {
            found = Some((k_bar, inv));
        }
        ok
    })?;
    let (k_bar, inv) = found.expect("accepted factor stores its inverse");
    if factor.jitter > 0.0 {
        log::info!("grid prior needed diagonal jitter {:e}", factor.jitter);
    }
    Ok((k_bar, inv, factor.jitter))
}

/// JSON checkpoint of a streaming run. `k_g` is stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineCheckpoint {
    pub grid: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub k_g: Vec<f64>,
    pub kernel: KernelSpec,
    pub noise_var: f64,
    pub mean_const: f64,
    #[serde(default)]
    pub prior_jitter: f64,
    pub count: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpModel;
    use proptest::prelude::*;

    const E_INV: f64 = 0.367_879_441_171_442_33;

    #[test]
    fn init_examples() {
        let st = OnlineGpState::init(&[0.0], KernelSpec::se(1.0, 1.0), 1.0, 0.0).unwrap();
        assert_eq!(st.mu_g().as_slice(), &[0.0]);
        assert_eq!(st.k_g()[(0, 0)], 1.0);
        assert_eq!(st.k_bar_inv()[(0, 0)], 1.0);
        assert_eq!(st.count(), 0);

        let st = OnlineGpState::init(&[0.0, 1.0], KernelSpec::se(1.0, 1.0), 1.0, 0.0).unwrap();
        assert!((st.k_bar()[(0, 1)] - E_INV).abs() < 1e-15);
        assert_eq!(st.k_bar()[(1, 1)], 1.0);
        let residual = (st.k_bar_inv() * st.k_bar() - DMatrix::identity(2, 2)).amax();
        assert!(residual < 1e-12);
    }

    #[test]
    fn repeated_grid_point_is_rejected() {
        assert!(matches!(
            OnlineGpState::init(&[0.0, 1.0, 0.0], KernelSpec::se(1.0, 1.0), 1.0, 0.0),
            Err(Error::Singular(_))
        ));
        assert!(OnlineGpState::init(&[], KernelSpec::se(1.0, 1.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn hand_traced_single_update() {
        let mut st = OnlineGpState::init(&[0.0], KernelSpec::se(1.0, 1.0), 1.0, 0.0).unwrap();
        st.update(0.0, 2.0).unwrap();
        assert!((st.mu_g()[0] - 1.0).abs() < 1e-15);
        assert!((st.k_g()[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(st.count(), 1);

        let p = st.predict(0.0).unwrap();
        assert!((p.mean - 1.0).abs() < 1e-15);
        assert!((p.variance - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_innovation_keeps_the_mean() {
        let grid = [0.0, 1.0, 2.0];
        let mut st = OnlineGpState::init(&grid, KernelSpec::se(1.0, 1.5), 0.2, 0.5).unwrap();
        st.update(0.3, 1.7).unwrap();
        let before = st.mu_g().clone();
        let mu_p = st.predict(1.4).unwrap().mean;
        st.update(1.4, mu_p).unwrap();
        assert!((st.mu_g() - before).amax() < 1e-12);
    }

    #[test]
    fn fresh_state_predicts_the_prior() {
        let k = KernelSpec::local_periodic(2.0, 0.8, 7.0, 3.0);
        let st = OnlineGpState::init(&[0.0, 1.0, 2.0, 3.0], k, 0.3, 1.5).unwrap();
        for q in [-3.0, 0.5, 2.0, 11.0] {
            let p = st.predict(q).unwrap();
            assert!((p.mean - 1.5).abs() < 1e-9);
            assert!((p.variance - 2.3).abs() < 1e-9);
        }
    }

    #[test]
    fn huge_noise_leaves_state_unchanged() {
        let grid = [0.0, 1.0, 2.0];
        let mut st = OnlineGpState::init(&grid, KernelSpec::se(1.0, 1.0), 1e12, 0.0).unwrap();
        let mu0 = st.mu_g().clone();
        let k0 = st.k_g().clone();
        for (d, v) in [(0.5, 3.0), (1.2, -2.0), (1.9, 5.0)] {
            st.update(d, v).unwrap();
        }
        assert!((st.mu_g() - mu0).amax() < 1e-6);
        assert!((st.k_g() - k0).amax() < 1e-6);
    }

    #[test]
    fn footprint_is_constant() {
        let grid = uniform_grid(0.0, 10.0, 20).unwrap();
        let mut st = OnlineGpState::init(&grid, KernelSpec::se(1.0, 2.0), 0.1, 0.0).unwrap();
        let size = st.footprint();
        for i in 0..500 {
            st.update((i % 97) as f64 * 0.1, (i as f64).sin()).unwrap();
            assert_eq!(st.footprint(), size);
        }
    }

    #[test]
    fn dense_grid_tracks_the_batch_model() {
        let grid = uniform_grid(0.0, 100.0, 200).unwrap();
        let k = KernelSpec::se(4.0, 15.0);
        let noise = 0.05;
        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let xs: Vec<f64> = (0..50).map(|_| 100.0 * next()).collect();
        let ys: Vec<f64> = xs.iter().map(|d| 5.0 + (d / 12.0).sin()).collect();
        let mut st = OnlineGpState::init(&grid, k, noise, 0.0).unwrap();
        st.update_many(&xs, &ys).unwrap();
        let batch = GpModel::fit(&xs, &ys, k, noise, 0.0).unwrap();
        for _ in 0..20 {
            let q = 5.0 + 90.0 * next();
            let a = st.predict(q).unwrap();
            let b = batch.predict(q).unwrap();
            assert!((a.mean - b.mean).abs() <= 0.05 * b.mean.abs(), "mean at {q}: {} vs {}", a.mean, b.mean);
            assert!((a.std() - b.std()).abs() <= 0.05 * b.std(), "std at {q}: {} vs {}", a.std(), b.std());
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let grid = uniform_grid(0.0, 5.0, 6).unwrap();
        let mut st = OnlineGpState::init(&grid, KernelSpec::se(1.0, 1.3), 0.1, 0.2).unwrap();
        st.update_many(&[0.3, 2.2, 4.9], &[1.0, -1.0, 0.5]).unwrap();
        let json = serde_json::to_string(&st.checkpoint()).unwrap();
        let cp: OnlineCheckpoint = serde_json::from_str(&json).unwrap();
        let mut resumed = OnlineGpState::restore(&cp).unwrap();
        assert_eq!(resumed.count(), 3);
        st.update(1.1, 0.4).unwrap();
        resumed.update(1.1, 0.4).unwrap();
        assert!((st.mu_g() - resumed.mu_g()).amax() < 1e-12);
        assert!((st.k_g() - resumed.k_g()).amax() < 1e-12);
    }

    #[test]
    fn uniform_grid_shapes() {
        assert_eq!(uniform_grid(0.0, 10.0, 3).unwrap(), vec![0.0, 5.0, 10.0]);
        assert_eq!(uniform_grid(2.0, 4.0, 1).unwrap(), vec![3.0]);
        assert!(uniform_grid(0.0, 1.0, 0).is_err());
        assert!(uniform_grid(1.0, 0.0, 3).is_err());
        let g = uniform_grid(0.0, 10_000.0, 500).unwrap();
        assert_eq!(g.len(), 500);
        assert_eq!(g[499], 10_000.0);
    }

    proptest! {
        #[test]
        fn grid_variance_never_grows(
            obs in proptest::collection::vec((0.0f64..10.0, -3.0f64..3.0), 1..30),
        ) {
            let grid = uniform_grid(0.0, 10.0, 8).unwrap();
            let mut st = OnlineGpState::init(&grid, KernelSpec::se(1.0, 2.0), 0.1, 0.0).unwrap();
            let k_bar_diag = st.k_bar().diagonal();
            let mut prev = st.k_g().diagonal();
            for (d, v) in obs {
                st.update(d, v).unwrap();
                let cur = st.k_g().diagonal();
                for i in 0..cur.len() {
                    prop_assert!(cur[i] <= prev[i] + 1e-10);
                    prop_assert!(cur[i] <= k_bar_diag[i] + 1e-8);
                }
                prop_assert_eq!(st.k_g().clone(), st.k_g().transpose());
                prev = cur;
            }
        }
    }
}
