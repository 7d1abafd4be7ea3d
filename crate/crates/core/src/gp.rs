//! Batch Gaussian-process regression over scalar inputs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_finite_inputs, check_non_negative, GramWarning, KernelSpec};
use crate::linalg::{factor_with_jitter, Factor};

/// Predictive mean and variance of a noisy observation at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorPrediction {
    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A fitted model: training data, constant prior mean and a cached
/// factorization of `C = K + noise_var * I`.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_var: f64,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    mean_const: f64,
    factor: Factor,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Fits the model. Costs `O(M^3)` time and `O(M^2)` memory.
    pub fn fit(
        inputs: &[f64],
        targets: &[f64],
        kernel: KernelSpec,
        noise_var: f64,
        mean_const: f64,
    ) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.is_empty() {
            return Err(Error::Empty("no training data".into()));
        }
        kernel.validate()?;
        check_non_negative("noise_var", noise_var)?;
        check_finite_inputs(targets)?;
        if !mean_const.is_finite() {
            return Err(Error::InvalidParameter("prior mean must be finite".into()));
        }

        let gram = kernel.gram(inputs, noise_var)?;
        if let Some(GramWarning::DuplicateInputs { value, .. }) = gram.warning {
            return Err(Error::Singular(format!(
                "input {value} is repeated and noise_var is zero; add observation noise"
            )));
        }
        let factor = factor_with_jitter(gram.matrix, kernel.prior_variance())?;
        let residual = DVector::from_iterator(targets.len(), targets.iter().map(|t| t - mean_const));
        let alpha = factor.chol.solve(&residual);

        Ok(Self {
            kernel,
            noise_var,
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            mean_const,
            factor,
            alpha,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn mean_const(&self) -> f64 {
        self.mean_const
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn factor(&self) -> &Factor {
        &self.factor
    }

    /// Diagonal jitter the factorization needed (zero in the common case).
    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn predict(&self, d_star: f64) -> Result<PosteriorPrediction> {
        if !d_star.is_finite() {
            return Err(Error::InvalidInput(format!("query {d_star} is not finite")));
        }
        let k = self.kernel.cross(d_star, &self.inputs);
        let mean = k.dot(&self.alpha) + self.mean_const;
        let v = self
            .factor
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a positive diagonal");
        let variance = self.noise_var + self.kernel.prior_variance() - v.norm_squared();
        Ok(PosteriorPrediction {
            mean,
            variance: variance.max(0.0),
        })
    }

    pub fn predict_many(&self, queries: &[f64]) -> Result<Vec<PosteriorPrediction>> {
        queries.iter().map(|&d| self.predict(d)).collect()
    }

    /// `residual^T C^-1 residual + ln|C|`, without the one-half factor or the
    /// `2 pi` constant. Lower is better.
    pub fn log_marginal_cost(&self) -> f64 {
        let fit: f64 = self
            .targets
            .iter()
            .zip(self.alpha.iter())
            .map(|(t, a)| (t - self.mean_const) * a)
            .sum();
        fit + self.factor.log_det()
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            kernel: self.kernel,
            noise_var: self.noise_var,
            mean_const: self.mean_const,
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }
}

/// JSON export of a model; the factorization is recomputed on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub kernel: KernelSpec,
    pub noise_var: f64,
    pub mean_const: f64,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl GpSnapshot {
    pub fn into_model(self) -> Result<GpModel> {
        GpModel::fit(
            &self.inputs,
            &self.targets,
            self.kernel,
            self.noise_var,
            self.mean_const,
        )
    }
}
