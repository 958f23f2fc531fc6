//! Regularized empirical risk minimization in an RKHS.
//!
//! For a weighted sample `(x_i, y_i, w_i)` the solver minimizes
//!
//! ```text
//! J(α) = Σ_i w_i L*(y_i, (Kα)_i) + λ αᵀKα
//! ```
//!
//! over representer coefficients `α`, where `K` is the Gram matrix on the
//! sample inputs and `L*` the shifted loss. The gradient is `∇J = K r` with
//! the reduced residual `r = w ⊙ L'(y, Kα) + 2λα`, and a Newton step for the
//! Hessian `K diag(w ⊙ L'') K + 2λK` is obtained from the reduced system
//! `(diag(w ⊙ L'') K + 2λI) d = -r`, whose eigenvalues are bounded below by
//! `2λ` even when `K` is singular (duplicate inputs).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ConvergenceError, Error, Result};
use crate::kernels::Kernel;
use crate::losses::SmoothLoss;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// A finite probability measure on `X × Y`: atoms with nonnegative weights
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InsufficientData("empty weighted sample".into()));
        }
        if xs.len() != ys.len() || xs.len() != weights.len() {
            return Err(Error::invalid(format!(
                "sample has {} inputs, {} labels and {} weights",
                xs.len(),
                ys.len(),
                weights.len()
            )));
        }
        let dim = xs[0].len();
        if let Some(x) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(
                "sample weights must be finite and nonnegative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "sample weights sum to {total}, not 1"
            )));
        }
        Ok(Self { xs, ys, weights })
    }

    /// Empirical measure `n⁻¹ Σ δ_(x_i, y_i)`.
    pub fn uniform(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        Self::new(xs, ys, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(1 - eps) · self + eps · other`. The atoms of `other` are appended
    /// after the atoms of `self`, so coefficient vectors for `self` extend to
    /// the mixture by zero padding.
    pub fn mix(&self, other: &WeightedSample, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::invalid(format!(
                "mixing weight {eps} outside [0, 1]"
            )));
        }
        let mut xs = self.xs.clone();
        let mut ys = self.ys.clone();
        let mut weights: Vec<f64> = self.weights.iter().map(|w| (1.0 - eps) * w).collect();
        xs.extend(other.xs.iter().cloned());
        ys.extend_from_slice(&other.ys);
        weights.extend(other.weights.iter().map(|w| eps * w));
        Self::new(xs, ys, weights)
    }

    /// Total weight of atoms equal to `(x, y)`.
    pub fn atom_mass(&self, x: &[f64], y: f64) -> f64 {
        self.xs
            .iter()
            .zip(&self.ys)
            .zip(&self.weights)
            .filter(|((xi, &yi), _)| xi.as_slice() == x && yi == y)
            .map(|(_, w)| w)
            .sum()
    }
}

/// Which loss enters the objective. Minimizers coincide; only objective
/// values differ (by the constant `Σ w_i L(y_i, 0)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossForm {
    Shifted,
    Unshifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Regularization parameter `λ > 0`.
    pub lambda: f64,
    /// Stop once `‖∇J‖∞` falls to this value.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Extra diagonal added to the Newton system, relative to `trace(K)`.
    /// Only affects step directions, never the fixed point.
    #[serde(default)]
    pub ridge: f64,
}

fn default_grad_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    200
}

impl TrainConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            grad_tol: default_grad_tol(),
            max_iter: default_max_iter(),
            ridge: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.grad_tol.is_nan() || self.grad_tol <= 0.0 {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be nonnegative"));
        }
        Ok(())
    }
}

/// Which part of the input space a local model serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionId {
    Global,
    Region(usize),
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionId::Global => f.write_str("global"),
            RegionId::Region(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for RegionId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RegionId::Global => s.serialize_str("global"),
            RegionId::Region(b) => s.serialize_u64(*b as u64),
        }
    }
}

impl<'de> Deserialize<'de> for RegionId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(b) => Ok(RegionId::Region(b)),
            Raw::Name(s) if s == "global" => Ok(RegionId::Global),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "region_id must be an integer or \"global\", got {s:?}"
            ))),
        }
    }
}

/// `f(x) = Σ_i α_i k(x, anchor_i)`, an element of the RKHS of `kernel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalModel {
    pub region_id: RegionId,
    pub lambda: f64,
    pub kernel: Kernel,
    pub loss: SmoothLoss,
    pub anchors: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub anchor_weights: Vec<f64>,
}

impl LocalModel {
    /// The zero function (used for regions without data).
    pub fn zero(region_id: RegionId, kernel: Kernel, loss: SmoothLoss, lambda: f64) -> Self {
        Self {
            region_id,
            lambda,
            kernel,
            loss,
            anchors: Vec::new(),
            alpha: Vec::new(),
            anchor_weights: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.anchors.len() != self.alpha.len() {
            return Err(Error::invalid(format!(
                "model has {} anchors but {} coefficients",
                self.anchors.len(),
                self.alpha.len()
            )));
        }
        if !self.anchor_weights.is_empty() && self.anchor_weights.len() != self.alpha.len() {
            return Err(Error::invalid("anchor weights do not match anchors"));
        }
        if let Some(a) = self
            .anchors
            .iter()
            .find(|a| a.len() != self.kernel.input_dim)
        {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.input_dim,
                got: a.len(),
            });
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("model lambda must be positive"));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.kernel.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.input_dim,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.anchors
            .iter()
            .zip(&self.alpha)
            .map(|(a, &c)| c * self.kernel.eval_unchecked(x, a))
            .sum()
    }

    /// `‖f‖_H = √(αᵀGα)`.
    pub fn h_norm(&self) -> f64 {
        if self.alpha.is_empty() {
            return 0.0;
        }
        let g = self.kernel.gram_unchecked(&self.anchors);
        quad_form_norm(&g, &self.alpha)
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().all(|&a| a == 0.0)
    }
}

pub(crate) fn quad_form_norm(g: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    v.dot(&(g * &v)).max(0.0).sqrt()
}

/// A trained model together with solver diagnostics.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: LocalModel,
    pub iterations: usize,
    /// `‖∇J‖∞` at the returned coefficients.
    pub grad_norm: f64,
}

struct Problem<'a> {
    gram: DMatrix<f64>,
    ys: &'a [f64],
    weights: &'a [f64],
    loss: SmoothLoss,
    lambda: f64,
    form: LossForm,
}

impl Problem<'_> {
    fn objective(&self, alpha: &DVector<f64>, f: &DVector<f64>) -> f64 {
        let data: f64 = self
            .ys
            .iter()
            .zip(self.weights)
            .zip(f.iter())
            .map(|((&y, &w), &t)| {
                let l = match self.form {
                    LossForm::Shifted => self.loss.shifted().value_unchecked(y, t),
                    LossForm::Unshifted => self.loss.value_unchecked(y, t),
                };
                w * l
            })
            .sum();
        data + self.lambda * alpha.dot(f)
    }

    fn residual(&self, alpha: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            alpha.len(),
            (0..alpha.len()).map(|i| {
                self.weights[i] * self.loss.dt_unchecked(self.ys[i], f[i])
                    + 2.0 * self.lambda * alpha[i]
            }),
        )
    }

    fn newton_direction(
        &self,
        f: &DVector<f64>,
        r: &DVector<f64>,
        ridge: f64,
    ) -> Option<DVector<f64>> {
        let n = r.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let di = self.weights[i] * self.loss.dtt_unchecked(self.ys[i], f[i]);
            for j in 0..n {
                a[(i, j)] = di * self.gram[(i, j)];
            }
            a[(i, i)] += 2.0 * self.lambda + ridge;
        }
        let d = a.lu().solve(&(-r))?;
        d.iter().all(|v| v.is_finite()).then_some(d)
    }
}

/// Value of the regularized weighted empirical risk at `alpha`, with anchors
/// at the sample inputs.
pub fn objective(
    alpha: &[f64],
    sample: &WeightedSample,
    kernel: &Kernel,
    loss: SmoothLoss,
    lambda: f64,
    form: LossForm,
) -> Result<f64> {
    if alpha.len() != sample.len() {
        return Err(Error::invalid(format!(
            "{} coefficients for {} sample points",
            alpha.len(),
            sample.len()
        )));
    }
    check_sample(sample, kernel, loss)?;
    let gram = kernel.gram_unchecked(sample.xs());
    let a = DVector::from_column_slice(alpha);
    let f = &gram * &a;
    let p = Problem {
        gram,
        ys: sample.ys(),
        weights: sample.weights(),
        loss,
        lambda,
        form,
    };
    Ok(p.objective(&a, &f))
}

fn check_sample(sample: &WeightedSample, kernel: &Kernel, loss: SmoothLoss) -> Result<()> {
    if let Some(x) = sample.xs().iter().find(|x| x.len() != kernel.input_dim) {
        return Err(Error::DimensionMismatch {
            expected: kernel.input_dim,
            got: x.len(),
        });
    }
    sample.ys().iter().try_for_each(|&y| loss.check_label(y))
}

/// Minimizes the shifted-loss objective. See [`train_with`].
pub fn train(
    sample: &WeightedSample,
    kernel: &Kernel,
    loss: SmoothLoss,
    cfg: &TrainConfig,
) -> Result<LocalModel> {
    Ok(train_with(sample, kernel, loss, cfg, None, LossForm::Shifted)?.model)
}

/// Damped Newton iteration from `init` (zero when `None`; shorter vectors are
/// zero padded). Steps are accepted on the Armijo condition for the
/// objective, or on a decrease of the residual norm once objective values
/// are dominated by rounding. Falls back to the step `-r` when the Newton
/// system cannot be solved.
pub fn train_with(
    sample: &WeightedSample,
    kernel: &Kernel,
    loss: SmoothLoss,
    cfg: &TrainConfig,
    init: Option<&[f64]>,
    form: LossForm,
) -> Result<Fit> {
    cfg.validate()?;
    check_sample(sample, kernel, loss)?;
    let n = sample.len();
    let gram = kernel.gram_unchecked(sample.xs());
    let ridge = cfg.ridge * gram.trace();
    let p = Problem {
        gram,
        ys: sample.ys(),
        weights: sample.weights(),
        loss,
        lambda: cfg.lambda,
        form,
    };

    let mut alpha = DVector::zeros(n);
    if let Some(init) = init {
        if init.len() > n {
            return Err(Error::invalid(
                "initial coefficients longer than the sample",
            ));
        }
        alpha.rows_mut(0, init.len()).copy_from_slice(init);
    }
    let mut f = &p.gram * &alpha;
    let mut best: (f64, DVector<f64>) = (f64::INFINITY, alpha.clone());

    for iter in 0..=cfg.max_iter {
        let r = p.residual(&alpha, &f);
        let grad = &p.gram * &r;
        let gnorm = grad.amax();
        if gnorm < best.0 {
            best = (gnorm, alpha.clone());
        }
        if gnorm <= cfg.grad_tol {
            return Ok(Fit {
                model: LocalModel {
                    region_id: RegionId::Global,
                    lambda: cfg.lambda,
                    kernel: *kernel,
                    loss,
                    anchors: sample.xs().to_vec(),
                    alpha: alpha.as_slice().to_vec(),
                    anchor_weights: sample.weights().to_vec(),
                },
                iterations: iter,
                grad_norm: gnorm,
            });
        }
        if iter == cfg.max_iter {
            break;
        }

        let mut d = p.newton_direction(&f, &r, ridge).unwrap_or_else(|| -&r);
        let mut slope = grad.dot(&d);
        if slope.is_nan() || slope >= 0.0 {
            d = -&r;
            slope = -grad.dot(&r);
        }
        let kd = &p.gram * &d;
        let obj0 = p.objective(&alpha, &f);
        let rnorm0 = r.norm();

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let a_try = &alpha + step * &d;
            let f_try = &f + step * &kd;
            let armijo = p.objective(&a_try, &f_try) <= obj0 + ARMIJO_C * step * slope;
            let shrinks = || p.residual(&a_try, &f_try).norm() < (1.0 - ARMIJO_C * step) * rnorm0;
            if armijo || shrinks() {
                alpha = a_try;
                f = &p.gram * &alpha;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Err(ConvergenceError {
        iterations: cfg.max_iter,
        grad_norm: best.0,
        best_alpha: best.1.as_slice().to_vec(),
        region: None,
        eps: None,
    }
    .into())
}

/// Trains with the shifted and the unshifted loss and compares coefficients.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub alpha_shifted: Vec<f64>,
    pub alpha_unshifted: Vec<f64>,
    /// `‖α_L - α_L*‖∞`.
    pub max_abs_diff: f64,
}

pub fn shifted_unshifted_identity_check(
    sample: &WeightedSample,
    kernel: &Kernel,
    loss: SmoothLoss,
    cfg: &TrainConfig,
) -> Result<IdentityReport> {
    let s = train_with(sample, kernel, loss, cfg, None, LossForm::Shifted)?;
    let u = train_with(sample, kernel, loss, cfg, None, LossForm::Unshifted)?;
    let max_abs_diff = s
        .model
        .alpha
        .iter()
        .zip(&u.model.alpha)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(IdentityReport {
        alpha_shifted: s.model.alpha,
        alpha_unshifted: u.model.alpha,
        max_abs_diff,
    })
}
