//! Covariance functions over scalar track distance.
//!
//! Every family uses the `exp[-(d - d')^2 / l^2]` convention, with no factor
//! of two in the denominator. Hyperparameters are stored in natural space.
//!
//! Gradient slots are numbered with the observation-noise variance first,
//! followed by the kernel parameters:
//!
//! | family              | slots                                   |
//! |---------------------|-----------------------------------------|
//! | `se`                | `[noise_var, sigma_sq, length]`         |
//! | `local_periodic`    | `[noise_var, sigma_sq, l_p, l_d]`       |
//! | `composite_cluster` | `[noise_var, sigma_s^2, l_d, sigma_c^2, l_c]` |
//!
//! The period `lambda` of the local-periodic family is a fixed constant and
//! has no gradient slot.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential parameters `sigma_sq * exp(-(d-d')^2 / length^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub sigma_sq: f64,
    pub length: f64,
}

impl SeParams {
    pub fn new(sigma_sq: f64, length: f64) -> Self {
        Self { sigma_sq, length }
    }

    fn validate(&self, what: &str) -> Result<()> {
        check_positive(&format!("{what}.sigma_sq"), self.sigma_sq)?;
        check_positive(&format!("{what}.length"), self.length)
    }

    #[inline]
    fn decay(&self, r: f64) -> f64 {
        (-(r * r) / (self.length * self.length)).exp()
    }

    #[inline]
    fn cov(&self, r: f64) -> f64 {
        self.sigma_sq * self.decay(r)
    }
}

/// Local-periodic parameters: an SE envelope times a periodic factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalPeriodicParams {
    pub sigma_sq: f64,
    /// Length scale of the periodic factor (dimensionless).
    pub l_p: f64,
    /// Decay length of the SE envelope (meters).
    pub l_d: f64,
    /// Period length (meters), e.g. the lap length.
    pub lambda: f64,
}

impl LocalPeriodicParams {
    pub fn new(sigma_sq: f64, l_p: f64, l_d: f64, lambda: f64) -> Self {
        Self {
            sigma_sq,
            l_p,
            l_d,
            lambda,
        }
    }

    fn validate(&self) -> Result<()> {
        check_positive("local_periodic.sigma_sq", self.sigma_sq)?;
        check_positive("local_periodic.l_p", self.l_p)?;
        check_positive("local_periodic.l_d", self.l_d)?;
        check_positive("local_periodic.lambda", self.lambda)
    }

    #[inline]
    fn sin_sq(&self, r: f64) -> f64 {
        let s = (PI * r / self.lambda).sin();
        s * s
    }

    /// Periodic factor times SE envelope, without the variance.
    #[inline]
    fn shape(&self, r: f64) -> f64 {
        let periodic = -self.sin_sq(r) / (self.l_p * self.l_p);
        let envelope = -(r * r) / (self.l_d * self.l_d);
        (periodic + envelope).exp()
    }

    #[inline]
    fn cov(&self, r: f64) -> f64 {
        self.sigma_sq * self.shape(r)
    }

    /// The SE envelope alone, `sigma_sq * exp(-r^2 / l_d^2)`.
    pub fn envelope(&self, d: f64, d2: f64) -> f64 {
        let r = d - d2;
        self.sigma_sq * (-(r * r) / (self.l_d * self.l_d)).exp()
    }
}

/// Base SE process plus a correlated cluster-noise SE term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeClusterParams {
    pub base: SeParams,
    pub cluster: SeParams,
}

impl CompositeClusterParams {
    pub fn new(base: SeParams, cluster: SeParams) -> Self {
        Self { base, cluster }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Se,
    LocalPeriodic,
    CompositeCluster,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Se => "se",
            KernelFamily::LocalPeriodic => "local_periodic",
            KernelFamily::CompositeCluster => "composite_cluster",
        }
    }

    /// Names of the gradient slots, noise variance first.
    pub fn slot_names(self) -> &'static [&'static str] {
        match self {
            KernelFamily::Se => &["noise_var", "sigma_sq", "length"],
            KernelFamily::LocalPeriodic => &["noise_var", "sigma_sq", "l_p", "l_d"],
            KernelFamily::CompositeCluster => {
                &["noise_var", "sigma_s_sq", "l_d", "sigma_c_sq", "l_c"]
            }
        }
    }

    pub fn n_slots(self) -> usize {
        self.slot_names().len()
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A covariance family together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum KernelSpec {
    Se(SeParams),
    LocalPeriodic(LocalPeriodicParams),
    CompositeCluster(CompositeClusterParams),
}

/// Gram matrix together with any singularity warning raised while building it.
#[derive(Clone, Debug)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub warning: Option<GramWarning>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GramWarning {
    /// Two inputs coincide and no noise was added, so the matrix is singular.
    DuplicateInputs { first: usize, second: usize, value: f64 },
}

impl KernelSpec {
    pub fn se(sigma_sq: f64, length: f64) -> Self {
        KernelSpec::Se(SeParams::new(sigma_sq, length))
    }

    pub fn local_periodic(sigma_sq: f64, l_p: f64, l_d: f64, lambda: f64) -> Self {
        KernelSpec::LocalPeriodic(LocalPeriodicParams::new(sigma_sq, l_p, l_d, lambda))
    }

    pub fn composite(sigma_s_sq: f64, l_d: f64, sigma_c_sq: f64, l_c: f64) -> Self {
        KernelSpec::CompositeCluster(CompositeClusterParams::new(
            SeParams::new(sigma_s_sq, l_d),
            SeParams::new(sigma_c_sq, l_c),
        ))
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            KernelSpec::Se(_) => KernelFamily::Se,
            KernelSpec::LocalPeriodic(_) => KernelFamily::LocalPeriodic,
            KernelSpec::CompositeCluster(_) => KernelFamily::CompositeCluster,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Se(p) => p.validate("se"),
            KernelSpec::LocalPeriodic(p) => p.validate(),
            KernelSpec::CompositeCluster(p) => {
                p.base.validate("composite_cluster.base")?;
                // A zero cluster variance switches the correlated term off.
                check_non_negative("composite_cluster.cluster.sigma_sq", p.cluster.sigma_sq)?;
                check_positive("composite_cluster.cluster.length", p.cluster.length)
            }
        }
    }

    /// Prior variance `k(d, d)`.
    pub fn prior_variance(&self) -> f64 {
        match self {
            KernelSpec::Se(p) => p.sigma_sq,
            KernelSpec::LocalPeriodic(p) => p.sigma_sq,
            KernelSpec::CompositeCluster(p) => p.base.sigma_sq + p.cluster.sigma_sq,
        }
    }

    /// Covariance without input validation. Callers must pass finite inputs.
    #[inline]
    pub fn covariance(&self, d: f64, d2: f64) -> f64 {
        let r = d - d2;
        match self {
            KernelSpec::Se(p) => p.cov(r),
            KernelSpec::LocalPeriodic(p) => p.cov(r),
            KernelSpec::CompositeCluster(p) => p.base.cov(r) + p.cluster.cov(r),
        }
    }

    pub fn eval(&self, d: f64, d2: f64) -> Result<f64> {
        if !d.is_finite() || !d2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "kernel inputs must be finite, got ({d}, {d2})"
            )));
        }
        Ok(self.covariance(d, d2))
    }

    /// Covariance vector between one query and a set of inputs.
    pub fn cross(&self, d_star: f64, inputs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(inputs.len(), inputs.iter().map(|&d| self.covariance(d_star, d)))
    }

    /// `K(inputs, inputs) + noise_var * I`.
    pub fn gram(&self, inputs: &[f64], noise_var: f64) -> Result<Gram> {
        if inputs.is_empty() {
            return Err(Error::Empty("gram matrix needs at least one input".into()));
        }
        check_finite_inputs(inputs)?;
        check_non_negative("noise_var", noise_var)?;

        let n = inputs.len();
        let mut matrix = DMatrix::zeros(n, n);
        let diag = self.prior_variance() + noise_var;
        for j in 0..n {
            matrix[(j, j)] = diag;
            for i in (j + 1)..n {
                let k = self.covariance(inputs[i], inputs[j]);
                matrix[(i, j)] = k;
                matrix[(j, i)] = k;
            }
        }

        let warning = if noise_var == 0.0 {
            find_duplicate(inputs)
        } else {
            None
        };
        if let Some(GramWarning::DuplicateInputs { value, .. }) = &warning {
            log::warn!("gram matrix is singular: input {value} appears twice with zero noise");
        }
        Ok(Gram { matrix, warning })
    }

    /// Derivative of `K + noise_var * I` with respect to gradient slot `slot`.
    pub fn gram_grad(&self, inputs: &[f64], slot: usize) -> Result<DMatrix<f64>> {
        let family = self.family();
        if slot >= family.n_slots() {
            return Err(Error::UnknownParameter {
                family: family.name(),
                index: slot,
            });
        }
        check_finite_inputs(inputs)?;
        let n = inputs.len();
        if slot == 0 {
            return Ok(DMatrix::identity(n, n));
        }

        let entry = |r: f64| -> f64 {
            match (self, slot) {
                (KernelSpec::Se(p), 1) => p.decay(r),
                (KernelSpec::Se(p), 2) => length_grad(p, r),
                (KernelSpec::LocalPeriodic(p), 1) => p.shape(r),
                (KernelSpec::LocalPeriodic(p), 2) => {
                    2.0 * p.cov(r) * p.sin_sq(r) / p.l_p.powi(3)
                }
                (KernelSpec::LocalPeriodic(p), 3) => 2.0 * p.cov(r) * r * r / p.l_d.powi(3),
                (KernelSpec::CompositeCluster(p), 1) => p.base.decay(r),
                (KernelSpec::CompositeCluster(p), 2) => length_grad(&p.base, r),
                (KernelSpec::CompositeCluster(p), 3) => p.cluster.decay(r),
                (KernelSpec::CompositeCluster(p), 4) => length_grad(&p.cluster, r),
                _ => unreachable!("slot range checked above"),
            }
        };
        // Variance slots are one on the diagonal, length slots zero.
        let diag = entry(0.0);

        let mut out = DMatrix::zeros(n, n);
        for j in 0..n {
            out[(j, j)] = diag;
            for i in (j + 1)..n {
                let v = entry(inputs[i] - inputs[j]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Kernel parameters in slot order (slots `1..`).
    pub fn slot_values(&self) -> Vec<f64> {
        match self {
            KernelSpec::Se(p) => vec![p.sigma_sq, p.length],
            KernelSpec::LocalPeriodic(p) => vec![p.sigma_sq, p.l_p, p.l_d],
            KernelSpec::CompositeCluster(p) => vec![
                p.base.sigma_sq,
                p.base.length,
                p.cluster.sigma_sq,
                p.cluster.length,
            ],
        }
    }
}

#[inline]
fn length_grad(p: &SeParams, r: f64) -> f64 {
    2.0 * p.cov(r) * r * r / p.length.powi(3)
}

fn find_duplicate(inputs: &[f64]) -> Option<GramWarning> {
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.sort_by(|&a, &b| inputs[a].total_cmp(&inputs[b]));
    order.windows(2).find_map(|w| {
        (inputs[w[0]] == inputs[w[1]]).then(|| GramWarning::DuplicateInputs {
            first: w[0].min(w[1]),
            second: w[0].max(w[1]),
            value: inputs[w[0]],
        })
    })
}

pub(crate) fn check_finite_inputs(inputs: &[f64]) -> Result<()> {
    match inputs.iter().position(|d| !d.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "input {i} is not finite ({})",
            inputs[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

pub(crate) fn check_non_negative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be non-negative and finite, got {value}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E_INV: f64 = 0.367_879_441_171_442_33;

    fn lp() -> KernelSpec {
        KernelSpec::local_periodic(1.3, 0.7, 9.0, 2.5)
    }

    #[test]
    fn se_examples() {
        assert_eq!(KernelSpec::se(2.0, 1.0).eval(0.0, 0.0).unwrap(), 2.0);
        let k = KernelSpec::se(1.0, 1.0).eval(0.0, 1.0).unwrap();
        assert!((k - E_INV).abs() < 1e-15);
    }

    #[test]
    fn lp_at_one_period_keeps_only_the_envelope() {
        let k = KernelSpec::local_periodic(1.0, 1.0, 10.0, 2.5)
            .eval(0.0, 2.5)
            .unwrap();
        assert!((k - (-6.25f64 / 100.0).exp()).abs() < 1e-12);
        assert!((k - 0.939_413).abs() < 1e-6);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let k = KernelSpec::se(1.0, 1.0);
        assert!(matches!(k.eval(f64::NAN, 0.0), Err(Error::InvalidInput(_))));
        assert!(k.eval(0.0, f64::INFINITY).is_err());
        assert!(k.gram(&[0.0, f64::NAN], 0.1).is_err());
    }

    #[test]
    fn gram_examples() {
        let k = KernelSpec::se(1.0, 1.0);
        let g = k.gram(&[0.0], 0.5).unwrap();
        assert_eq!(g.matrix[(0, 0)], 1.5);
        assert!(g.warning.is_none());

        let g = k.gram(&[0.0, 1.0], 0.0).unwrap().matrix;
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        assert!((g[(0, 1)] - E_INV).abs() < 1e-15);
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn gram_matches_entrywise_eval() {
        let k = lp();
        let inputs = [0.3, 4.1, -2.2, 7.7, 1.05];
        let g = k.gram(&inputs, 0.1).unwrap().matrix;
        for i in 0..5 {
            for j in 0..5 {
                let mut e = k.eval(inputs[i], inputs[j]).unwrap();
                if i == j {
                    e += 0.1;
                }
                assert!((g[(i, j)] - e).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn duplicate_inputs_without_noise_warn() {
        let k = KernelSpec::se(1.0, 1.0);
        let g = k.gram(&[0.0, 3.0, 0.0], 0.0).unwrap();
        assert_eq!(
            g.warning,
            Some(GramWarning::DuplicateInputs {
                first: 0,
                second: 2,
                value: 0.0
            })
        );
        assert!(k.gram(&[0.0, 0.0], 1e-3).unwrap().warning.is_none());
    }

    #[test]
    fn gram_rejects_empty_and_negative_noise() {
        let k = KernelSpec::se(1.0, 1.0);
        assert!(matches!(k.gram(&[], 0.1), Err(Error::Empty(_))));
        assert!(k.gram(&[0.0], -1.0).is_err());
    }

    #[test]
    fn noise_slot_is_identity() {
        for k in [KernelSpec::se(2.0, 3.0), lp(), KernelSpec::composite(1.0, 2.0, 0.5, 1.0)] {
            let g = k.gram_grad(&[0.0, 1.0, 5.0], 0).unwrap();
            assert_eq!(g, DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn se_length_gradient_example() {
        let g = KernelSpec::se(1.0, 1.0).gram_grad(&[0.0, 1.0], 2).unwrap();
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(1, 1)], 0.0);
        assert!((g[(0, 1)] - 2.0 * E_INV).abs() < 1e-15);
        assert!((g[(0, 1)] - 0.735_759).abs() < 1e-6);
    }

    #[test]
    fn unknown_slot_is_an_error() {
        assert!(matches!(
            KernelSpec::se(1.0, 1.0).gram_grad(&[0.0], 3),
            Err(Error::UnknownParameter { index: 3, .. })
        ));
        assert!(lp().gram_grad(&[0.0], 4).is_err());
        assert!(KernelSpec::composite(1.0, 1.0, 1.0, 1.0)
            .gram_grad(&[0.0], 5)
            .is_err());
    }

    /// Rebuilds the spec with slot `slot` set to `value` (slot 0 is noise and
    /// is handled by the caller).
    fn with_slot(k: &KernelSpec, slot: usize, value: f64) -> KernelSpec {
        let mut k = *k;
        match (&mut k, slot) {
            (KernelSpec::Se(p), 1) => p.sigma_sq = value,
            (KernelSpec::Se(p), 2) => p.length = value,
            (KernelSpec::LocalPeriodic(p), 1) => p.sigma_sq = value,
            (KernelSpec::LocalPeriodic(p), 2) => p.l_p = value,
            (KernelSpec::LocalPeriodic(p), 3) => p.l_d = value,
            (KernelSpec::CompositeCluster(p), 1) => p.base.sigma_sq = value,
            (KernelSpec::CompositeCluster(p), 2) => p.base.length = value,
            (KernelSpec::CompositeCluster(p), 3) => p.cluster.sigma_sq = value,
            (KernelSpec::CompositeCluster(p), 4) => p.cluster.length = value,
            _ => panic!("bad slot"),
        }
        k
    }

    fn fd_gram_grad(k: &KernelSpec, inputs: &[f64], noise: f64, slot: usize) -> DMatrix<f64> {
        let h = 1e-6;
        if slot == 0 {
            let plus = k.gram(inputs, noise + h).unwrap().matrix;
            let minus = k.gram(inputs, noise - h).unwrap().matrix;
            return (plus - minus) / (2.0 * h);
        }
        let v = k.slot_values()[slot - 1];
        let plus = with_slot(k, slot, v + h).gram(inputs, noise).unwrap().matrix;
        let minus = with_slot(k, slot, v - h).gram(inputs, noise).unwrap().matrix;
        (plus - minus) / (2.0 * h)
    }

    fn assert_grad_matches_fd(k: &KernelSpec, inputs: &[f64]) {
        for slot in 0..k.family().n_slots() {
            let analytic = k.gram_grad(inputs, slot).unwrap();
            let fd = fd_gram_grad(k, inputs, 0.1, slot);
            let scale = analytic.amax().max(fd.amax()).max(1e-12);
            for (a, f) in analytic.iter().zip(fd.iter()) {
                let denom = a.abs().max(f.abs()).max(1e-4 * scale);
                let rel = (a - f).abs() / denom;
                assert!(rel < 1e-5, "{:?} slot {slot}: {a} vs {f} (rel {rel})", k.family());
            }
        }
    }

    #[test]
    fn lp_gradients_match_finite_differences() {
        let inputs = [0.0, 0.4, 1.3, 2.9, 3.3];
        assert_grad_matches_fd(&KernelSpec::local_periodic(1.0, 1.0, 3.0, 2.5), &inputs);
        assert_grad_matches_fd(&KernelSpec::local_periodic(1.3, 0.7, 2.0, 1.7), &inputs);
    }

    #[test]
    fn se_and_composite_gradients_match_finite_differences() {
        let inputs = [0.0, 0.4, 1.3, 2.9, 3.3];
        assert_grad_matches_fd(&KernelSpec::se(1.7, 1.2), &inputs);
        assert_grad_matches_fd(&KernelSpec::composite(1.1, 1.5, 0.4, 0.6), &inputs);
    }

    #[test]
    fn composite_is_sum_of_parts() {
        let inputs = [0.0, 0.5, 1.1, 4.0];
        let comp = KernelSpec::composite(1.2, 2.0, 0.3, 0.5).gram(&inputs, 0.05).unwrap();
        let base = KernelSpec::se(1.2, 2.0).gram(&inputs, 0.05).unwrap();
        // noise enters only once
        let cluster = KernelSpec::se(0.3, 0.5).gram(&inputs, 0.0).unwrap();
        let sum = base.matrix + cluster.matrix;
        assert!((comp.matrix - sum).amax() < 1e-15);
    }

    #[test]
    fn json_shape() {
        let k = KernelSpec::local_periodic(1.0, 0.5, 5000.0, 2500.0);
        let v = serde_json::to_value(k).unwrap();
        assert_eq!(v["family"], "local_periodic");
        assert_eq!(v["params"]["l_d"], 5000.0);
        let back: KernelSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, k);

        let c: KernelSpec = serde_json::from_str(
            r#"{"family":"composite_cluster","params":{"base":{"sigma_sq":1,"length":2},"cluster":{"sigma_sq":0.5,"length":3}}}"#,
        )
        .unwrap();
        assert_eq!(c, KernelSpec::composite(1.0, 2.0, 0.5, 3.0));
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::se(0.0, 1.0).validate().is_err());
        assert!(KernelSpec::se(1.0, -1.0).validate().is_err());
        assert!(KernelSpec::local_periodic(1.0, 1.0, 1.0, 0.0).validate().is_err());
        assert!(KernelSpec::composite(1.0, 1.0, 0.0, 1.0).validate().is_ok());
        assert!(KernelSpec::composite(1.0, 1.0, 1.0, f64::NAN).validate().is_err());
    }

    fn any_kernel() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (0.1f64..10.0, 0.1f64..10.0).prop_map(|(s, l)| KernelSpec::se(s, l)),
            (0.1f64..10.0, 0.1f64..3.0, 0.5f64..20.0, 0.5f64..5.0)
                .prop_map(|(s, p, d, lam)| KernelSpec::local_periodic(s, p, d, lam)),
            (0.1f64..10.0, 0.1f64..10.0, 0.0f64..5.0, 0.1f64..10.0)
                .prop_map(|(s, l, c, lc)| KernelSpec::composite(s, l, c, lc)),
        ]
    }

    proptest! {
        #[test]
        fn symmetric_and_exact_diagonal(k in any_kernel(), a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assert_eq!(k.eval(a, b).unwrap(), k.eval(b, a).unwrap());
            prop_assert_eq!(k.eval(a, a).unwrap(), k.prior_variance());
        }

        #[test]
        fn gram_is_positive_definite(
            k in any_kernel(),
            inputs in proptest::collection::btree_set(-5000i64..5000, 1..64),
        ) {
            let inputs: Vec<f64> = inputs.into_iter().map(|i| i as f64 * 0.01).collect();
            let g = k.gram(&inputs, 1e-8).unwrap().matrix;
            // Eigenvalues are bounded below by the noise up to rounding.
            let eig = g.symmetric_eigenvalues();
            let floor = -1e-10 * k.prior_variance() * inputs.len() as f64;
            prop_assert!(eig.min() >= floor, "min eigenvalue {}", eig.min());
        }

        #[test]
        fn lp_decays_over_whole_periods(
            s in 0.1f64..10.0, lp in 0.1f64..3.0, ld in 1.0f64..50.0, lam in 0.5f64..5.0, d in -10.0f64..10.0,
        ) {
            let k = KernelSpec::local_periodic(s, lp, ld, lam);
            let mut prev = k.eval(d, d).unwrap();
            for j in 1..8 {
                let cur = k.eval(d, d + lam * j as f64).unwrap();
                prop_assert!(cur <= prev);
                prev = cur;
            }
        }

        #[test]
        fn lp_periodic_factor_is_unity_at_integer_periods(
            s in 0.1f64..10.0, lp in 0.1f64..3.0, ld_periods in 0.5f64..20.0, j in 1u32..5,
        ) {
            let lam = 2500.0;
            let k = LocalPeriodicParams::new(s, lp, ld_periods * lam, lam);
            let spec = KernelSpec::LocalPeriodic(k);
            let d = 100.0;
            let d2 = d + lam * j as f64;
            let ratio = spec.eval(d, d2).unwrap() / k.envelope(d, d2);
            prop_assert_eq!(ratio, 1.0);
        }
    }
}
