//! Influence functions of local and composed predictors, their closed-form
//! upper bounds, and a maxbias probe.
//!
//! Contamination is applied per region: every region whose input ball
//! contains the contaminating mass is retrained on
//! `(1 - ε) P_b + ε Q_b`, where `Q_b` is the contaminating distribution
//! restricted to the region and renormalized; all other regions keep their
//! fit. Because empirical measures are finite, the contaminated measures are
//! represented exactly as weighted samples and the difference quotient
//! `(f̃ - f) / ε` carries no resampling noise.
//!
//! All sup-norms here are maxima over a finite probe set, i.e. lower bounds
//! of the essential supremum. Kernel sup-norms are exact for the Gaussian
//! RBF kernel and empirical otherwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::composer::{ComposedModel, RegionSettings};
use crate::data::{halton_box, Dataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::SmoothLoss;
use crate::regionalization::{RegionPredicate, WeightScheme};
use crate::solver::{self, quad_form_norm, LocalModel, LossForm, TrainConfig, WeightedSample};

/// Default ε ladder: halving from `1e-2` down to `1.25e-3`.
pub const DEFAULT_EPS_LADDER: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];

/// Number of quasi-random probes added to the training inputs.
pub const DEFAULT_PROBE_COUNT: usize = 512;

/// Residual ratio above which the ladder is reported as not converging.
pub const LADDER_RATIO_LIMIT: f64 = 0.9;

/// The contaminating distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Contamination {
    /// Point mass at `(x, y)`.
    Dirac { x: Vec<f64>, y: f64 },
    /// An arbitrary finite distribution `Q`.
    Mixture(WeightedSample),
}

impl Contamination {
    pub fn dirac(x: Vec<f64>, y: f64) -> Self {
        Contamination::Dirac { x, y }
    }

    /// `Q_b`: the part of `Q` on the region, renormalized; `None` for the
    /// null measure.
    pub fn restrict_to(&self, region: &RegionPredicate) -> Option<WeightedSample> {
        match self {
            Contamination::Dirac { x, y } => region.contains(x).then(|| {
                WeightedSample::new(vec![x.clone()], vec![*y], vec![1.0]).expect("single atom")
            }),
            Contamination::Mixture(q) => {
                let keep: Vec<usize> = (0..q.len())
                    .filter(|&i| q.weights()[i] > 0.0 && region.contains(&q.xs()[i]))
                    .collect();
                let mass: f64 = keep.iter().map(|&i| q.weights()[i]).sum();
                if keep.is_empty() || mass <= 0.0 {
                    return None;
                }
                let xs = keep.iter().map(|&i| q.xs()[i].clone()).collect();
                let ys = keep.iter().map(|&i| q.ys()[i]).collect();
                let mut ws: Vec<f64> = keep.iter().map(|&i| q.weights()[i] / mass).collect();
                // absorb rounding so the weights sum to one
                let total: f64 = ws.iter().sum();
                ws.iter_mut().for_each(|w| *w /= total);
                Some(WeightedSample::new(xs, ys, ws).expect("restricted mixture is valid"))
            }
        }
    }

    fn check(&self, dim: usize, loss: SmoothLoss) -> Result<()> {
        let check_point = |x: &[f64], y: f64| -> Result<()> {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            loss.check_label(y)
        };
        match self {
            Contamination::Dirac { x, y } => check_point(x, *y),
            Contamination::Mixture(q) => q
                .xs()
                .iter()
                .zip(q.ys())
                .try_for_each(|(x, &y)| check_point(x, y)),
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "contamination level {eps} must lie in (0, 1/2)"
        )))
    }
}

/// A contaminating distribution with a decreasing ladder of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub contamination: Contamination,
    pub eps_ladder: Vec<f64>,
}

impl ContaminationSpec {
    pub fn new(contamination: Contamination, eps_ladder: Vec<f64>) -> Result<Self> {
        if eps_ladder.is_empty() {
            return Err(Error::invalid("empty contamination ladder"));
        }
        eps_ladder.iter().try_for_each(|&e| check_eps(e))?;
        if eps_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid(
                "contamination ladder must be strictly decreasing",
            ));
        }
        Ok(Self {
            contamination,
            eps_ladder,
        })
    }

    pub fn dirac(x: Vec<f64>, y: f64) -> Self {
        Self::new(Contamination::dirac(x, y), DEFAULT_EPS_LADDER.to_vec()).expect("default ladder")
    }
}

/// `(1 - ε) P_b + ε Q_b`, or `P_b` unchanged when `Q_b` is null.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminatedSample {
    pub sample: WeightedSample,
    pub affected: bool,
}

pub fn contaminate_region(
    sample: &WeightedSample,
    region: &RegionPredicate,
    contamination: &Contamination,
    eps: f64,
) -> Result<ContaminatedSample> {
    check_eps(eps)?;
    match contamination.restrict_to(region) {
        None => Ok(ContaminatedSample {
            sample: sample.clone(),
            affected: false,
        }),
        Some(q) => Ok(ContaminatedSample {
            sample: sample.mix(&q, eps)?,
            affected: true,
        }),
    }
}

/// Training inputs plus `count` Halton points in their bounding box.
pub fn default_probes(data: &Dataset, count: usize) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = data.bounding_box();
    let mut probes = data.xs().to_vec();
    probes.extend(halton_box(&lo, &hi, count, 0)?);
    Ok(probes)
}

/// `‖D_b - δ_z‖_TV = 2 (1 - D_b({z}))` for a discrete `D_b`.
pub fn tv_to_dirac(sample: Option<&WeightedSample>, x: &[f64], y: f64) -> f64 {
    let mass = sample.map_or(0.0, |s| s.atom_mass(x, y));
    2.0 * (1.0 - mass).max(0.0)
}

/// Difference quotient `(f̃_b - f_b) / ε` of one local model.
#[derive(Debug, Clone)]
pub struct LocalQuotient {
    pub region_id: usize,
    pub eps: f64,
    pub base: LocalModel,
    /// `None` when the region is not contaminated; the quotient is then 0.
    pub perturbed: Option<LocalModel>,
}

impl LocalQuotient {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.perturbed {
            None => 0.0,
            Some(p) => (p.predict_unchecked(x) - self.base.predict_unchecked(x)) / self.eps,
        }
    }

    /// RKHS norm of the quotient. The perturbed anchors extend the base
    /// anchors, so the difference lives on the perturbed anchor set.
    pub fn h_norm(&self) -> f64 {
        match &self.perturbed {
            None => 0.0,
            Some(p) => difference_h_norm(&self.base, p) / self.eps,
        }
    }
}

fn difference_h_norm(base: &LocalModel, perturbed: &LocalModel) -> f64 {
    let mut diff = perturbed.alpha.clone();
    for (d, a) in diff.iter_mut().zip(&base.alpha) {
        *d -= a;
    }
    let g = perturbed.kernel.gram_unchecked(&perturbed.anchors);
    quad_form_norm(&g, &diff)
}

/// Difference quotient of the composed predictor, formed from the two
/// composed predictors directly (not from the local quotients).
#[derive(Debug, Clone)]
pub struct ComposedQuotient {
    pub eps: f64,
    pub base: ComposedModel,
    pub perturbed: ComposedModel,
}

impl ComposedQuotient {
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.perturbed.predict(x).value - self.base.predict(x).value) / self.eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub eps: f64,
    /// Max over probes of the composed quotient.
    pub sup: f64,
    pub h_norms: BTreeMap<usize, f64>,
}

/// Finite-difference influence function estimate for one contamination.
#[derive(Debug, Clone)]
pub struct InfluenceEstimate {
    /// Local quotients at the smallest ε, for every region.
    pub per_region: BTreeMap<usize, LocalQuotient>,
    pub composed: ComposedQuotient,
    pub eps_used: f64,
    /// Empirical sup of the composed quotient at `eps_used`.
    pub sup_norm_estimate: f64,
    pub h_norms: BTreeMap<usize, f64>,
    pub ladder: Vec<LadderRung>,
    /// `r(ε_k) = max_p |q_{ε_k}(p) - q_{ε_{k+1}}(p)|`.
    pub ladder_residuals: Vec<f64>,
    /// `r(ε_{k+1}) / r(ε_k)`; 0 when both residuals vanish.
    pub ladder_ratios: Vec<f64>,
    pub ladder_converged: bool,
    /// Empirical sup of the Richardson-extrapolated quotient (diagnostic).
    pub richardson_sup: f64,
    /// Estimated constant `C₂` in `q(ε) ≈ IF + C₂ ε`.
    pub second_order: f64,
    /// Regions retrained under contamination.
    pub affected_regions: Vec<usize>,
    /// Maximum absolute residual of the decomposition identity over the
    /// probes, at the smallest ε.
    pub decomposition_residual: f64,
}

impl InfluenceEstimate {
    /// Allowance for solver and discretization error:
    /// `10 (grad_tol / ε + ε C₂)`.
    pub fn slack(&self, grad_tol: f64) -> f64 {
        10.0 * (grad_tol / self.eps_used + self.eps_used * self.second_order)
    }
}

/// Max over probes of `|IF^comp(x) - Σ_b w_b(x) IF_b(x)|`.
pub fn decomposition_check(estimate: &InfluenceEstimate, probes: &[Vec<f64>]) -> f64 {
    let scheme = &estimate.composed.base.scheme;
    let residuals = exec::map_slice(probes, |x| {
        let (w, _) = scheme.weights_or_nearest(x);
        let assembled: f64 = w
            .iter()
            .enumerate()
            .filter(|(_, &wb)| wb != 0.0)
            .map(|(i, &wb)| wb * estimate.per_region[&(i + 1)].eval(x))
            .sum();
        (estimate.composed.eval(x) - assembled).abs()
    });
    residuals.into_iter().fold(0.0, f64::max)
}

/// One region's contribution to the closed-form bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTerm {
    pub region_id: usize,
    pub weight_sup: f64,
    pub lambda: f64,
    pub kernel_sup: f64,
    /// Whether `kernel_sup` is exact rather than an empirical lower bound.
    pub kernel_sup_exact: bool,
    /// `2 |L|₁ ‖w_b‖ λ_b⁻¹ ‖k_b‖²`.
    pub term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lipschitz: f64,
    /// `2 |L|₁ Σ_b ‖w_b‖ λ_b⁻¹ ‖k_b‖²`.
    pub if_bound_rough: f64,
    pub per_region_terms: Vec<RegionTerm>,
    /// True when some kernel sup-norm is an empirical lower bound, so the
    /// bound itself may be underestimated.
    pub empirical_kernel_norm: bool,
}

impl BoundReport {
    /// `|L|₁ Σ_b ‖w_b‖ λ_b⁻¹ ‖k_b‖² TV_b`.
    pub fn tv_refined(&self, tv: &[f64]) -> f64 {
        self.lipschitz
            * self
                .per_region_terms
                .iter()
                .zip(tv)
                .map(|(t, &tv)| t.weight_sup * t.kernel_sup * t.kernel_sup / t.lambda * tv)
                .sum::<f64>()
    }

    /// `2 |L|₁ Σ_b ‖w_b‖ (ε_b / λ_b) ‖k_b‖²`.
    pub fn maxbias(&self, eps: &[f64]) -> f64 {
        2.0 * self.lipschitz
            * self
                .per_region_terms
                .iter()
                .zip(eps)
                .map(|(t, &e)| t.weight_sup * (e / t.lambda) * t.kernel_sup * t.kernel_sup)
                .sum::<f64>()
    }

    /// Per-region RKHS-norm bound `λ_b⁻¹ ‖k_b‖ |L|₁ TV_b` of the local
    /// influence function.
    pub fn local_h_norm_bound(&self, b: usize, tv: f64) -> f64 {
        let t = &self.per_region_terms[b - 1];
        t.kernel_sup * self.lipschitz * tv / t.lambda
    }
}

/// Closed-form influence-function bound for a scheme and per-region
/// settings. `probes` feed the empirical weight and kernel sup-norms.
pub fn if_bound(
    scheme: &WeightScheme,
    settings: &[RegionSettings],
    loss: SmoothLoss,
    probes: &[Vec<f64>],
) -> Result<BoundReport> {
    if settings.len() != scheme.num_regions() {
        return Err(Error::invalid(format!(
            "{} region settings for {} regions",
            settings.len(),
            scheme.num_regions()
        )));
    }
    let lipschitz = loss.lipschitz_constant();
    let mut terms = Vec::with_capacity(settings.len());
    for (region, s) in scheme.partition.regions.iter().zip(settings) {
        let inside: Vec<Vec<f64>> = probes
            .iter()
            .filter(|p| region.contains(p))
            .cloned()
            .collect();
        let k = s.kernel.sup_norm_on_region(region, &inside)?;
        let w = scheme.weight_sup_norm(region.id, probes);
        terms.push(RegionTerm {
            region_id: region.id,
            weight_sup: w,
            lambda: s.lambda,
            kernel_sup: k.value,
            kernel_sup_exact: !k.is_lower_bound(),
            term: 2.0 * lipschitz * (w * k.value * k.value / s.lambda),
        });
    }
    let sum: f64 = terms
        .iter()
        .map(|t| t.weight_sup * t.kernel_sup * t.kernel_sup / t.lambda)
        .sum();
    Ok(BoundReport {
        lipschitz,
        if_bound_rough: 2.0 * lipschitz * sum,
        empirical_kernel_norm: terms.iter().any(|t| !t.kernel_sup_exact),
        per_region_terms: terms,
    })
}

/// Settings recovered from a trained composed model.
pub fn region_settings(model: &ComposedModel) -> Vec<RegionSettings> {
    model
        .locals
        .iter()
        .map(|m| RegionSettings {
            kernel: m.kernel,
            lambda: m.lambda,
        })
        .collect()
}

/// A named adversarial contamination for the maxbias probe.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxbiasCandidate {
    pub label: String,
    pub contamination: Contamination,
}

/// Point masses at the corners and center of the data bounding box with
/// extreme labels, plus a label-flip copy of the data.
///
/// Extreme labels are ±1 for classification and `min - 3·range`,
/// `max + 3·range` for regression. Labels are flipped to `-y`
/// (classification) or mirrored to `min + max - y` (regression).
pub fn adversarial_family(data: &Dataset, loss: SmoothLoss) -> Result<Vec<MaxbiasCandidate>> {
    let dim = data.dim();
    if dim > 16 {
        return Err(Error::invalid(
            "adversarial corners are limited to 16 dimensions",
        ));
    }
    let (lo, hi) = data.bounding_box();
    let (ymin, ymax) = data.label_range();
    let labels = if loss.is_classification() {
        vec![-1.0, 1.0]
    } else {
        let range = ymax - ymin;
        vec![ymin - 3.0 * range, ymax + 3.0 * range]
    };
    let mut points: Vec<Vec<f64>> = (0..1usize << dim)
        .map(|mask| {
            (0..dim)
                .map(|j| if mask >> j & 1 == 1 { hi[j] } else { lo[j] })
                .collect()
        })
        .collect();
    points.push(lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect());

    let mut family = Vec::new();
    for p in &points {
        for &y in &labels {
            family.push(MaxbiasCandidate {
                label: format!("dirac x={p:?} y={y}"),
                contamination: Contamination::dirac(p.clone(), y),
            });
        }
    }
    let flipped: Vec<f64> = data
        .ys()
        .iter()
        .map(|&y| {
            if loss.is_classification() {
                -y
            } else {
                ymin + ymax - y
            }
        })
        .collect();
    family.push(MaxbiasCandidate {
        label: "label-flip".into(),
        contamination: Contamination::Mixture(WeightedSample::uniform(
            data.xs().to_vec(),
            flipped,
        )?),
    });
    Ok(family)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxbiasOutcome {
    pub label: String,
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxbiasReport {
    pub eps: Vec<f64>,
    pub bound: f64,
    pub empirical_max: f64,
    pub candidates: Vec<MaxbiasOutcome>,
    pub satisfied: bool,
}

/// Precomputed state for auditing one trained composed model against the
/// data it was trained on.
pub struct Auditor<'a> {
    model: &'a ComposedModel,
    solver: TrainConfig,
    samples: Vec<Option<WeightedSample>>,
    probes: Vec<Vec<f64>>,
    /// `weights[p][b - 1] = w_b(probe p)`.
    weights: Vec<Vec<f64>>,
    /// `base_local[b - 1][p] = f_b(probe p)`.
    base_local: Vec<Vec<f64>>,
    base_composed: Vec<f64>,
    bounds: BoundReport,
}

impl<'a> Auditor<'a> {
    /// Checks that `model` was trained on `data` (same regional samples as
    /// anchors) and caches base predictions at the probes. Only `grad_tol`,
    /// `max_iter` and `ridge` of `solver` are used; each region keeps its
    /// own `λ_b`.
    pub fn new(
        data: &Dataset,
        model: &'a ComposedModel,
        solver: TrainConfig,
        probes: Vec<Vec<f64>>,
    ) -> Result<Self> {
        model.validate()?;
        let part = model.partition();
        let mut samples = Vec::with_capacity(model.num_regions());
        for b in 1..=model.num_regions() {
            let restricted = part.restrict(data, b);
            let local = model.local(b);
            match restricted.sample() {
                None => {
                    if !local.alpha.is_empty() {
                        return Err(Error::invalid(format!(
                            "region {b} has no data but its model has anchors"
                        )));
                    }
                    samples.push(None);
                }
                Some(s) => {
                    if s.xs() != local.anchors.as_slice() {
                        return Err(Error::invalid(format!(
                            "model for region {b} was not trained on this dataset"
                        )));
                    }
                    samples.push(Some(s.clone()));
                }
            }
        }
        if let Some(p) = probes.iter().find(|p| p.len() != data.dim()) {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: p.len(),
            });
        }
        let weights: Vec<Vec<f64>> =
            exec::map_slice(&probes, |x| model.scheme.weights_or_nearest(x).0);
        let base_local: Vec<Vec<f64>> = model
            .locals
            .iter()
            .map(|m| exec::map_slice(&probes, |x| m.predict_unchecked(x)))
            .collect();
        let base_composed = compose(&weights, &base_local, &[]);
        let bounds = if_bound(
            &model.scheme,
            &region_settings(model),
            model.loss(),
            &probes,
        )?;
        Ok(Self {
            model,
            solver,
            samples,
            probes,
            weights,
            base_local,
            base_composed,
            bounds,
        })
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    pub fn bounds(&self) -> &BoundReport {
        &self.bounds
    }

    pub fn model(&self) -> &ComposedModel {
        self.model
    }

    pub fn region_sample(&self, b: usize) -> Option<&WeightedSample> {
        self.samples[b - 1].as_ref()
    }

    /// `TV_b = ‖D_b - δ_z‖` for every region.
    pub fn tv_per_region(&self, x: &[f64], y: f64) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| tv_to_dirac(s.as_ref(), x, y))
            .collect()
    }

    /// `|L|₁ Σ_b ‖w_b‖ λ_b⁻¹ ‖k_b‖² ‖D_b - δ_z‖_TV`, never above the rough
    /// bound.
    pub fn tv_refined_if_bound(&self, x: &[f64], y: f64) -> f64 {
        self.bounds.tv_refined(&self.tv_per_region(x, y))
    }

    /// Retrains region `b` on `(1 - ε) D_b + ε Q_b`, warm-started from the
    /// base coefficients. `None` when the region is unaffected.
    fn perturbed_local(
        &self,
        b: usize,
        contamination: &Contamination,
        eps: f64,
    ) -> Result<Option<LocalModel>> {
        let Some(sample) = &self.samples[b - 1] else {
            return Ok(None);
        };
        let region = self.model.partition().region(b);
        let mixed = contaminate_region(sample, region, contamination, eps)?;
        if !mixed.affected {
            return Ok(None);
        }
        let base = self.model.local(b);
        let cfg = TrainConfig {
            lambda: base.lambda,
            ..self.solver
        };
        let fit = solver::train_with(
            &mixed.sample,
            &base.kernel,
            base.loss,
            &cfg,
            Some(&base.alpha),
            LossForm::Shifted,
        )
        .map_err(|e| match e {
            Error::Convergence(c) => Error::from(c.in_region(b).at_eps(eps)),
            e => e,
        })?;
        let mut m = fit.model;
        m.region_id = base.region_id;
        Ok(Some(m))
    }

    fn affected_regions(&self, contamination: &Contamination) -> Vec<usize> {
        (1..=self.model.num_regions())
            .filter(|&b| {
                self.samples[b - 1].is_some()
                    && contamination
                        .restrict_to(self.model.partition().region(b))
                        .is_some()
            })
            .collect()
    }

    fn perturbed_composed(&self, perturbed: &BTreeMap<usize, LocalModel>) -> ComposedModel {
        let mut m = self.model.clone();
        for (&b, local) in perturbed {
            m.locals[b - 1] = local.clone();
        }
        m
    }

    /// Finite-difference influence function along the ε ladder of `spec`.
    pub fn influence(&self, spec: &ContaminationSpec) -> Result<InfluenceEstimate> {
        if spec.eps_ladder.len() < 2 {
            return Err(Error::invalid("the ε ladder needs at least two levels"));
        }
        spec.contamination
            .check(self.probes.first().map_or(0, Vec::len), self.model.loss())?;
        let affected = self.affected_regions(&spec.contamination);
        let ladder = &spec.eps_ladder;
        let jobs: Vec<(usize, usize)> = (0..ladder.len())
            .flat_map(|k| affected.iter().map(move |&b| (k, b)))
            .collect();
        let fits = exec::try_map_range(jobs.len(), |j| {
            let (k, b) = jobs[j];
            self.perturbed_local(b, &spec.contamination, ladder[k])
                .map(|m| m.expect("affected region"))
        })?;
        let mut per_rung: Vec<BTreeMap<usize, LocalModel>> = vec![BTreeMap::new(); ladder.len()];
        for ((k, b), m) in jobs.into_iter().zip(fits) {
            per_rung[k].insert(b, m);
        }

        let mut rungs = Vec::with_capacity(ladder.len());
        let mut quotients: Vec<Vec<f64>> = Vec::with_capacity(ladder.len());
        for (k, &eps) in ladder.iter().enumerate() {
            let pert_local: Vec<(usize, Vec<f64>)> = per_rung[k]
                .iter()
                .map(|(&b, m)| (b, exec::map_slice(&self.probes, |x| m.predict_unchecked(x))))
                .collect();
            let pert = compose(&self.weights, &self.base_local, &pert_local);
            let q: Vec<f64> = pert
                .iter()
                .zip(&self.base_composed)
                .map(|(p, b)| (p - b) / eps)
                .collect();
            let h_norms = (1..=self.model.num_regions())
                .map(|b| {
                    let h = per_rung[k]
                        .get(&b)
                        .map_or(0.0, |m| difference_h_norm(self.model.local(b), m) / eps);
                    (b, h)
                })
                .collect();
            rungs.push(LadderRung {
                eps,
                sup: sup_abs(&q),
                h_norms,
            });
            quotients.push(q);
        }

        let residuals: Vec<f64> = quotients
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let ratios: Vec<f64> = residuals
            .windows(2)
            .map(|w| if w[1] == 0.0 { 0.0 } else { w[1] / w[0] })
            .collect();
        let converged = ratios.iter().all(|&r| r <= LADDER_RATIO_LIMIT);
        let last = ladder.len() - 1;
        let (e_prev, e_last) = (ladder[last - 1], ladder[last]);
        let extrap = e_last / (e_prev - e_last);
        let richardson: Vec<f64> = quotients[last]
            .iter()
            .zip(&quotients[last - 1])
            .map(|(ql, qp)| ql + (ql - qp) * extrap)
            .collect();
        let second_order = residuals[last - 1] / (e_prev - e_last);

        let eps_used = ladder[last];
        let bottom = per_rung.pop().expect("nonempty ladder");
        let composed = ComposedQuotient {
            eps: eps_used,
            base: self.model.clone(),
            perturbed: self.perturbed_composed(&bottom),
        };
        let per_region: BTreeMap<usize, LocalQuotient> = (1..=self.model.num_regions())
            .map(|b| {
                (
                    b,
                    LocalQuotient {
                        region_id: b,
                        eps: eps_used,
                        base: self.model.local(b).clone(),
                        perturbed: bottom.get(&b).cloned(),
                    },
                )
            })
            .collect();
        let mut estimate = InfluenceEstimate {
            per_region,
            composed,
            eps_used,
            sup_norm_estimate: rungs[last].sup,
            h_norms: rungs[last].h_norms.clone(),
            ladder: rungs,
            ladder_residuals: residuals,
            ladder_ratios: ratios,
            ladder_converged: converged,
            richardson_sup: sup_abs(&richardson),
            second_order,
            affected_regions: affected,
            decomposition_residual: 0.0,
        };
        estimate.decomposition_residual = decomposition_check(&estimate, &self.probes);
        Ok(estimate)
    }

    /// Trains the contaminated composed model at the full levels `eps[b]`
    /// for every candidate and reports the largest sup-norm shift.
    pub fn maxbias(&self, eps: &[f64], candidates: &[MaxbiasCandidate]) -> Result<MaxbiasReport> {
        if eps.len() != self.model.num_regions() {
            return Err(Error::invalid(format!(
                "{} contamination levels for {} regions",
                eps.len(),
                self.model.num_regions()
            )));
        }
        if let Some(e) = eps.iter().find(|&&e| !(0.0..0.5).contains(&e)) {
            return Err(Error::invalid(format!(
                "maxbias level {e} must lie in [0, 1/2)"
            )));
        }
        let dim = self.probes.first().map_or(0, Vec::len);
        for c in candidates {
            c.contamination.check(dim, self.model.loss())?;
        }
        let sups = exec::try_map_range(candidates.len(), |i| -> Result<f64> {
            let c = &candidates[i].contamination;
            let mut pert_local = Vec::new();
            for b in 1..=self.model.num_regions() {
                if eps[b - 1] == 0.0 {
                    continue;
                }
                if let Some(m) = self.perturbed_local(b, c, eps[b - 1])? {
                    pert_local.push((b, exec::map_slice(&self.probes, |x| m.predict_unchecked(x))));
                }
            }
            if pert_local.is_empty() {
                return Ok(0.0);
            }
            let pert = compose(&self.weights, &self.base_local, &pert_local);
            Ok(pert
                .iter()
                .zip(&self.base_composed)
                .map(|(p, b)| (p - b).abs())
                .fold(0.0, f64::max))
        })?;
        let bound = self.bounds.maxbias(eps);
        let empirical_max = sups.iter().copied().fold(0.0, f64::max);
        Ok(MaxbiasReport {
            eps: eps.to_vec(),
            bound,
            empirical_max,
            candidates: candidates
                .iter()
                .zip(sups)
                .map(|(c, sup)| MaxbiasOutcome {
                    label: c.label.clone(),
                    sup,
                })
                .collect(),
            satisfied: empirical_max <= bound,
        })
    }

    /// Full audit of one contamination: influence estimate, bounds, and the
    /// maxbias probe at levels `maxbias_eps`.
    pub fn audit(
        &self,
        spec: &ContaminationSpec,
        maxbias_eps: &[f64],
        candidates: &[MaxbiasCandidate],
    ) -> Result<AuditReport> {
        let est = self.influence(spec)?;
        let tv = match &spec.contamination {
            Contamination::Dirac { x, y } => self.tv_per_region(x, *y),
            // the rough constant: TV of two probability measures is at most 2
            Contamination::Mixture(_) => vec![2.0; self.model.num_regions()],
        };
        let slack = est.slack(self.solver.grad_tol);
        let h_norm_ok = est
            .h_norms
            .iter()
            .all(|(&b, &h)| h <= self.bounds.local_h_norm_bound(b, tv[b - 1]) + slack);
        let maxbias = self.maxbias(maxbias_eps, candidates)?;
        let if_ok = est.sup_norm_estimate <= self.bounds.if_bound_rough + slack && h_norm_ok;
        Ok(AuditReport {
            if_bound_rough: self.bounds.if_bound_rough,
            if_bound_tv: self.bounds.tv_refined(&tv),
            maxbias_bound: maxbias.bound,
            per_region_terms: self.bounds.per_region_terms.clone(),
            empirical: EmpiricalSection {
                if_sup: est.sup_norm_estimate,
                maxbias_sup: maxbias.empirical_max,
                decomposition_residual: est.decomposition_residual,
                ladder: est.ladder.clone(),
                ladder_ratios: est.ladder_ratios.clone(),
                ladder_converged: est.ladder_converged,
                richardson_sup: est.richardson_sup,
                slack,
                affected_regions: est.affected_regions.clone(),
                tv,
                maxbias_candidates: maxbias.candidates,
            },
            satisfied: Satisfied {
                r#if: if_ok,
                maxbias: maxbias.satisfied,
            },
            caveats: caveats(&self.bounds),
        })
    }
}

fn caveats(bounds: &BoundReport) -> Vec<String> {
    let mut c = vec![
        "empirical sup-norms are maxima over probe points and underestimate the essential sup"
            .to_string(),
    ];
    if bounds.empirical_kernel_norm {
        c.push(
            "kernel sup-norm is an empirical lower bound of ‖k‖, so the bound may be underestimated".into(),
        );
    }
    c
}

/// Composed predictions at the probes, with the listed regions replaced by
/// their perturbed predictions.
fn compose(
    weights: &[Vec<f64>],
    base_local: &[Vec<f64>],
    replaced: &[(usize, Vec<f64>)],
) -> Vec<f64> {
    (0..weights.len())
        .map(|p| {
            weights[p]
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| {
                    let v = replaced
                        .iter()
                        .find(|(b, _)| *b == i + 1)
                        .map_or(base_local[i][p], |(_, vals)| vals[p]);
                    w * v
                })
                .sum()
        })
        .collect()
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSection {
    pub if_sup: f64,
    pub maxbias_sup: f64,
    pub decomposition_residual: f64,
    pub ladder: Vec<LadderRung>,
    pub ladder_ratios: Vec<f64>,
    pub ladder_converged: bool,
    pub richardson_sup: f64,
    pub slack: f64,
    pub affected_regions: Vec<usize>,
    pub tv: Vec<f64>,
    pub maxbias_candidates: Vec<MaxbiasOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Satisfied {
    #[serde(rename = "if")]
    pub r#if: bool,
    pub maxbias: bool,
}

/// Machine-readable audit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub if_bound_rough: f64,
    pub if_bound_tv: f64,
    pub maxbias_bound: f64,
    pub per_region_terms: Vec<RegionTerm>,
    pub empirical: EmpiricalSection,
    pub satisfied: Satisfied,
    pub caveats: Vec<String>,
}

impl AuditReport {
    pub fn all_satisfied(&self) -> bool {
        self.satisfied.r#if && self.satisfied.maxbias
    }
}
