//! Maximum-likelihood hyperparameter estimation.
//!
//! The cost is `r^T C^-1 r + ln|C|` with `r = targets - mean`, and its
//! gradient with respect to slot `i` is `tr{(C^-1 - alpha alpha^T) dC/dθ_i}`
//! where `alpha = C^-1 r`. Optimization runs in log-parameter space with
//! L-BFGS; the period of the local-periodic family is held fixed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_finite_inputs, check_positive, KernelFamily, KernelSpec};
use crate::lbfgs::{self, LbfgsConfig, Termination};
use crate::linalg::factor_with_jitter;

/// Clamp applied to every natural-log parameter during optimization.
pub const LOG_BOUND: f64 = 12.0;

/// Ordered hyperparameters of one kernel family, noise variance first.
///
/// * `se`: `[noise_var, sigma_sq, length]`
/// * `local_periodic`: `[noise_var, sigma_sq, l_p, l_d]` plus the fixed `period`
/// * `composite_cluster`: `[noise_var, sigma_s_sq, l_d, sigma_c_sq, l_c]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParamVector {
    pub family: KernelFamily,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl HyperParamVector {
    pub fn new(family: KernelFamily, values: Vec<f64>, period: Option<f64>) -> Result<Self> {
        let theta = Self {
            family,
            values,
            period,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn se(noise_var: f64, sigma_sq: f64, length: f64) -> Self {
        Self {
            family: KernelFamily::Se,
            values: vec![noise_var, sigma_sq, length],
            period: None,
        }
    }

    pub fn local_periodic(noise_var: f64, sigma_sq: f64, l_p: f64, l_d: f64, period: f64) -> Self {
        Self {
            family: KernelFamily::LocalPeriodic,
            values: vec![noise_var, sigma_sq, l_p, l_d],
            period: Some(period),
        }
    }

    pub fn composite(noise_var: f64, sigma_s_sq: f64, l_d: f64, sigma_c_sq: f64, l_c: f64) -> Self {
        Self {
            family: KernelFamily::CompositeCluster,
            values: vec![noise_var, sigma_s_sq, l_d, sigma_c_sq, l_c],
            period: None,
        }
    }

    pub fn from_kernel(kernel: &KernelSpec, noise_var: f64) -> Self {
        let mut values = vec![noise_var];
        values.extend(kernel.slot_values());
        let period = match kernel {
            KernelSpec::LocalPeriodic(p) => Some(p.lambda),
            _ => None,
        };
        Self {
            family: kernel.family(),
            values,
            period,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = self.family.slot_names();
        if self.values.len() != names.len() {
            return Err(Error::InvalidParameter(format!(
                "{} expects {} hyperparameters, got {}",
                self.family,
                names.len(),
                self.values.len()
            )));
        }
        for (name, v) in names.iter().zip(&self.values) {
            check_positive(name, *v)?;
        }
        match (self.family, self.period) {
            (KernelFamily::LocalPeriodic, Some(p)) => check_positive("period", p),
            (KernelFamily::LocalPeriodic, None) => Err(Error::InvalidParameter(
                "local_periodic hyperparameters need a period".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn noise_var(&self) -> f64 {
        self.values[0]
    }

    pub fn kernel(&self) -> KernelSpec {
        let v = &self.values;
        match self.family {
            KernelFamily::Se => KernelSpec::se(v[1], v[2]),
            KernelFamily::LocalPeriodic => {
                KernelSpec::local_periodic(v[1], v[2], v[3], self.period.unwrap_or(f64::NAN))
            }
            KernelFamily::CompositeCluster => KernelSpec::composite(v[1], v[2], v[3], v[4]),
        }
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            family: self.family,
            values,
            period: self.period,
        }
    }
}

/// Cost and its gradient in natural parameter space.
pub fn cost_and_grad(
    theta: &HyperParamVector,
    inputs: &[f64],
    targets: &[f64],
    mean_const: f64,
) -> Result<(f64, Vec<f64>)> {
    theta.validate()?;
    if inputs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.len() < 2 {
        return Err(Error::InvalidInput(
            "hyperparameter estimation needs at least two training points".into(),
        ));
    }
    check_finite_inputs(targets)?;

    let kernel = theta.kernel();
    let n = inputs.len();
    let gram = kernel.gram(inputs, theta.noise_var())?;
    let factor = factor_with_jitter(gram.matrix, kernel.prior_variance())?;
    let residual = DVector::from_iterator(n, targets.iter().map(|t| t - mean_const));
    let alpha = factor.chol.solve(&residual);
    let cost = residual.dot(&alpha) + factor.log_det();

    // W = C^-1 - alpha alpha^T; both W and dC/dθ are symmetric, so the trace
    // of the product is the sum of their elementwise product.
    let mut w: DMatrix<f64> = factor.chol.inverse();
    w.ger(-1.0, &alpha, &alpha, 1.0);

    let mut grad = Vec::with_capacity(theta.values.len());
    for slot in 0..theta.values.len() {
        let g = if slot == 0 {
            w.trace()
        } else {
            let d = kernel.gram_grad(inputs, slot)?;
            w.dot(&d)
        };
        grad.push(g);
    }
    Ok((cost, grad))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Convergence threshold on the log-space gradient infinity norm.
    pub tol: f64,
    /// Extra starts drawn log-uniformly within one decade of the initial point.
    pub restarts: usize,
    pub seed: u64,
    pub mean_const: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            restarts: 4,
            seed: 0,
            mean_const: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Stalled,
    Failed,
}

impl From<Termination> for RunStatus {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Converged => RunStatus::Converged,
            Termination::MaxIterations => RunStatus::MaxIterations,
            Termination::Stalled => RunStatus::Stalled,
        }
    }
}

/// One optimization trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub status: RunStatus,
    /// Cost of every accepted iterate, starting point first.
    pub trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub theta: HyperParamVector,
    pub cost: f64,
    pub converged: bool,
    /// Index into `runs` of the winning trajectory.
    pub best_run: usize,
    pub runs: Vec<RunLog>,
}

/// Minimizes the cost from `init` and from `opts.restarts` perturbed starts.
/// The best final cost wins; ties go to the earliest run.
pub fn optimize(
    inputs: &[f64],
    targets: &[f64],
    init: &HyperParamVector,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport> {
    init.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let log_init: Vec<f64> = init
        .values
        .iter()
        .map(|v| v.ln().clamp(-LOG_BOUND, LOG_BOUND))
        .collect();

    let mut starts = vec![log_init.clone()];
    for _ in 0..opts.restarts {
        starts.push(
            log_init
                .iter()
                .map(|x| (x + rng.random_range(-1.0..=1.0) * std::f64::consts::LN_10).clamp(-LOG_BOUND, LOG_BOUND))
                .collect(),
        );
    }

    let cfg = LbfgsConfig {
        max_iter: opts.max_iter,
        tol: opts.tol,
        lower: -LOG_BOUND,
        upper: LOG_BOUND,
        ..Default::default()
    };

    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = init.with_values(x.iter().map(|v| v.exp()).collect());
        let (c, g) = cost_and_grad(&theta, inputs, targets, opts.mean_const)?;
        // chain rule for θ = exp(x)
        let g_log = g.iter().zip(&theta.values).map(|(gi, t)| gi * t).collect();
        Ok((c, g_log))
    };

    let mut runs = Vec::with_capacity(starts.len());
    for start in starts {
        let start_nat: Vec<f64> = start.iter().map(|v| v.exp()).collect();
        match lbfgs::minimize(&objective, &start, &cfg) {
            Ok(r) => runs.push(RunLog {
                start: start_nat,
                end: r.x.iter().map(|v| v.exp()).collect(),
                cost: r.f,
                iterations: r.iterations,
                status: r.termination.into(),
                trace: r.trace,
                error: None,
            }),
            Err(e) => {
                log::warn!("optimization start {start_nat:?} failed: {e}");
                runs.push(RunLog {
                    start: start_nat,
                    end: Vec::new(),
                    cost: f64::INFINITY,
                    iterations: 0,
                    status: RunStatus::Failed,
                    trace: Vec::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.status != RunStatus::Failed && r.cost.is_finite())
        .min_by(|(ia, a), (ib, b)| a.cost.total_cmp(&b.cost).then(ia.cmp(ib)))
        .map(|(i, _)| i);

    let Some(best_run) = best else {
        return Err(Error::Optimization {
            message: format!("all {} starts failed", runs.len()),
            best: Box::new(init.clone()),
        });
    };
    let theta = init.with_values(runs[best_run].end.clone());
    // report the cost at the natural-space parameters actually returned
    let (cost, _) = cost_and_grad(&theta, inputs, targets, opts.mean_const)?;
    Ok(OptimizeReport {
        converged: runs[best_run].status == RunStatus::Converged,
        theta,
        cost,
        best_run,
        runs,
    })
}
