//! The composed predictor `f^comp(x) = Σ_b w_b(x) f_b(x)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::Kernel;
use crate::losses::SmoothLoss;
use crate::regionalization::{RegionPartition, Restriction, WeightKind, WeightScheme};
use crate::solver::{self, LocalModel, RegionId, TrainConfig, WeightedSample};

/// Anything that maps inputs to real predictions.
pub trait Predictor: Sync {
    fn predict_point(&self, x: &[f64]) -> f64;

    fn predict_many(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        exec::map_slice(xs, |x| self.predict_point(x))
    }
}

impl Predictor for LocalModel {
    fn predict_point(&self, x: &[f64]) -> f64 {
        self.predict_unchecked(x)
    }
}

/// Adapter turning a closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn predict_point(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

/// Per-region hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionSettings {
    pub kernel: Kernel,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ComposedDoc", try_from = "ComposedDoc")]
pub struct ComposedModel {
    pub scheme: WeightScheme,
    /// `locals[b - 1]` serves region `b`.
    pub locals: Vec<LocalModel>,
    /// Regions that received no data; their local predictor is zero.
    pub null_region_ids: BTreeSet<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposedDoc {
    partition: RegionPartition,
    scheme: WeightKind,
    locals: Vec<LocalModel>,
    null_region_ids: Vec<usize>,
}

impl From<ComposedModel> for ComposedDoc {
    fn from(m: ComposedModel) -> Self {
        ComposedDoc {
            partition: m.scheme.partition,
            scheme: m.scheme.kind,
            locals: m.locals,
            null_region_ids: m.null_region_ids.into_iter().collect(),
        }
    }
}

impl TryFrom<ComposedDoc> for ComposedModel {
    type Error = Error;

    fn try_from(d: ComposedDoc) -> Result<Self> {
        let m = ComposedModel {
            scheme: WeightScheme::new(d.partition, d.scheme)?,
            locals: d.locals,
            null_region_ids: d.null_region_ids.into_iter().collect(),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Value of the composed predictor and whether `x` lay in some region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub covered: bool,
}

impl ComposedModel {
    pub fn validate(&self) -> Result<()> {
        if self.locals.len() != self.scheme.num_regions() {
            return Err(Error::invalid(format!(
                "{} local models for {} regions",
                self.locals.len(),
                self.scheme.num_regions()
            )));
        }
        for (b, m) in self.locals.iter().enumerate() {
            m.validate()?;
            if m.region_id != RegionId::Region(b + 1) {
                return Err(Error::invalid(format!(
                    "local model at position {} is tagged {}",
                    b + 1,
                    m.region_id
                )));
            }
        }
        if let Some(b) = self
            .null_region_ids
            .iter()
            .find(|&&b| b == 0 || b > self.locals.len())
        {
            return Err(Error::invalid(format!("null region id {b} out of range")));
        }
        Ok(())
    }

    pub fn num_regions(&self) -> usize {
        self.locals.len()
    }

    pub fn local(&self, b: usize) -> &LocalModel {
        &self.locals[b - 1]
    }

    pub fn partition(&self) -> &RegionPartition {
        &self.scheme.partition
    }

    pub fn loss(&self) -> SmoothLoss {
        self.locals[0].loss
    }

    /// `Σ_b w_b(x) f_b(x)`; points outside every region use the nearest
    /// region's predictor.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let (w, covered) = self.scheme.weights_or_nearest(x);
        let value = w
            .iter()
            .zip(&self.locals)
            .filter(|(&wb, _)| wb != 0.0)
            .map(|(&wb, f)| wb * f.predict_unchecked(x))
            .sum();
        Prediction { value, covered }
    }
}

impl Predictor for ComposedModel {
    fn predict_point(&self, x: &[f64]) -> f64 {
        self.predict(x).value
    }
}

/// Trains one local model per region on the region's empirical measure.
/// Regions without data get the zero function. Local fits run in parallel;
/// the result does not depend on scheduling.
pub fn fit_composed(
    data: &Dataset,
    scheme: &WeightScheme,
    settings: &[RegionSettings],
    loss: SmoothLoss,
    solver_cfg: &TrainConfig,
) -> Result<ComposedModel> {
    let nb = scheme.num_regions();
    if settings.len() != nb {
        return Err(Error::invalid(format!(
            "{} region settings for {nb} regions",
            settings.len()
        )));
    }
    for s in settings {
        if s.kernel.input_dim != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: s.kernel.input_dim,
            });
        }
    }
    let locals = exec::try_map_range(nb, |i| -> Result<(LocalModel, bool)> {
        let b = i + 1;
        let s = settings[i];
        let cfg = TrainConfig {
            lambda: s.lambda,
            ..*solver_cfg
        };
        cfg.validate()?;
        match scheme.partition.restrict(data, b) {
            Restriction::NullMeasure => Ok((
                LocalModel::zero(RegionId::Region(b), s.kernel, loss, s.lambda),
                true,
            )),
            Restriction::Sample { sample, .. } => {
                let mut m = train_region(&sample, &s.kernel, loss, &cfg, b)?;
                m.region_id = RegionId::Region(b);
                Ok((m, false))
            }
        }
    })?;
    let null_region_ids = locals
        .iter()
        .enumerate()
        .filter(|(_, (_, null))| *null)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(ComposedModel {
        scheme: scheme.clone(),
        locals: locals.into_iter().map(|(m, _)| m).collect(),
        null_region_ids,
    })
}

fn train_region(
    sample: &WeightedSample,
    kernel: &Kernel,
    loss: SmoothLoss,
    cfg: &TrainConfig,
    b: usize,
) -> Result<LocalModel> {
    solver::train(sample, kernel, loss, cfg).map_err(|e| match e {
        Error::Convergence(c) => Error::from(c.in_region(b)),
        e => e,
    })
}

/// The unregionalized model on the whole sample.
pub fn fit_global(
    data: &Dataset,
    kernel: &Kernel,
    loss: SmoothLoss,
    cfg: &TrainConfig,
) -> Result<LocalModel> {
    let sample = WeightedSample::uniform(data.xs().to_vec(), data.ys().to_vec())?;
    solver::train(&sample, kernel, loss, cfg)
}

/// `n⁻¹ Σ L(y_i, f(x_i))`, or with the shifted loss when `shifted`.
pub fn empirical_risk<P: Predictor + ?Sized>(
    predictor: &P,
    data: &Dataset,
    loss: SmoothLoss,
    shifted: bool,
) -> Result<f64> {
    data.ys().iter().try_for_each(|&y| loss.check_label(y))?;
    let preds = predictor.predict_many(data.xs());
    let total: f64 = data
        .ys()
        .iter()
        .zip(&preds)
        .map(|(&y, &t)| {
            if shifted {
                loss.shifted().value_unchecked(y, t)
            } else {
                loss.value_unchecked(y, t)
            }
        })
        .sum();
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regionalization::{regionalize, RegionPredicate};

    fn line_data() -> Dataset {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![-2.0 + i as f64 * 0.1]).collect();
        let ys = xs.iter().map(|x| (2.0 * x[0]).sin()).collect();
        Dataset::new(xs, ys).unwrap()
    }

    fn settings(b: usize, lambda: f64) -> Vec<RegionSettings> {
        vec![
            RegionSettings {
                kernel: Kernel::gaussian_rbf(0.8, 1).unwrap(),
                lambda,
            };
            b
        ]
    }

    #[test]
    fn single_region_equals_global_model() {
        let data = line_data();
        let part = regionalize(data.xs(), 1, 0.0, 1, 0).unwrap();
        let scheme = WeightScheme::new(part, WeightKind::NormalizedIndicator).unwrap();
        let loss = SmoothLoss::LogisticRegression;
        let cfg = TrainConfig::new(0.1);
        let comp = fit_composed(&data, &scheme, &settings(1, 0.1), loss, &cfg).unwrap();
        let glob = fit_global(&data, &Kernel::gaussian_rbf(0.8, 1).unwrap(), loss, &cfg).unwrap();
        for i in 0..100 {
            let x = [-3.0 + 0.06 * i as f64];
            let d = comp.predict(&x).value - glob.predict(&x).unwrap();
            assert!(d.abs() <= 1e-12, "{d}");
        }
    }

    fn two_region_scheme(overlap: bool) -> WeightScheme {
        let r = if overlap { 1.2 } else { 0.9 };
        let part = RegionPartition::new(
            vec![
                RegionPredicate {
                    id: 1,
                    center: vec![-1.0],
                    radius: r,
                },
                RegionPredicate {
                    id: 2,
                    center: vec![1.0],
                    radius: r,
                },
            ],
            0.0,
            1,
        )
        .unwrap();
        WeightScheme::new(part, WeightKind::NormalizedIndicator).unwrap()
    }

    #[test]
    fn disjoint_interior_point_uses_own_region() {
        let data = line_data();
        let scheme = two_region_scheme(false);
        let m = fit_composed(
            &data,
            &scheme,
            &settings(2, 0.2),
            SmoothLoss::LogisticRegression,
            &TrainConfig::new(0.2),
        )
        .unwrap();
        let x = [-1.3];
        assert_eq!(m.predict(&x).value, m.local(1).predict(&x).unwrap());
    }

    #[test]
    fn overlap_point_averages_locals() {
        let data = line_data();
        let scheme = two_region_scheme(true);
        let m = fit_composed(
            &data,
            &scheme,
            &settings(2, 0.2),
            SmoothLoss::LogisticRegression,
            &TrainConfig::new(0.2),
        )
        .unwrap();
        let x = [0.05];
        let f1 = m.local(1).predict(&x).unwrap();
        let f2 = m.local(2).predict(&x).unwrap();
        let got = m.predict(&x).value;
        assert!((got - 0.5 * (f1 + f2)).abs() < 1e-15);
        assert!(got >= f1.min(f2) && got <= f1.max(f2));
    }

    #[test]
    fn null_region_gets_zero_function() {
        let data = line_data();
        let part = RegionPartition::new(
            vec![
                RegionPredicate {
                    id: 1,
                    center: vec![0.0],
                    radius: 5.0,
                },
                RegionPredicate {
                    id: 2,
                    center: vec![40.0],
                    radius: 1.0,
                },
            ],
            0.0,
            1,
        )
        .unwrap();
        let scheme = WeightScheme::new(part, WeightKind::NormalizedIndicator).unwrap();
        let m = fit_composed(
            &data,
            &scheme,
            &settings(2, 0.3),
            SmoothLoss::LogisticRegression,
            &TrainConfig::new(0.3),
        )
        .unwrap();
        assert_eq!(m.null_region_ids, BTreeSet::from([2]));
        assert_eq!(m.predict(&[40.0]).value, 0.0);
    }

    #[test]
    fn predict_composed_examples() {
        let scheme = two_region_scheme(true);
        let k = Kernel::gaussian_rbf(1.0, 1).unwrap();
        let mut locals: Vec<LocalModel> = (1..=2)
            .map(|b| LocalModel::zero(RegionId::Region(b), k, SmoothLoss::LogisticRegression, 1.0))
            .collect();
        let m = ComposedModel {
            scheme: scheme.clone(),
            locals: locals.clone(),
            null_region_ids: BTreeSet::new(),
        };
        assert_eq!(m.predict(&[0.0]).value, 0.0);

        // constant-ish locals: one anchor at x so f_b(x) = α_b
        locals[0].anchors = vec![vec![0.0]];
        locals[0].alpha = vec![2.0];
        locals[1].anchors = vec![vec![0.0]];
        locals[1].alpha = vec![4.0];
        let m = ComposedModel {
            scheme,
            locals,
            null_region_ids: BTreeSet::new(),
        };
        assert_eq!(m.predict(&[0.0]).value, 3.0);
        let p = m.predict(&[9.0]);
        assert!(!p.covered);
    }

    #[test]
    fn empirical_risk_examples() {
        let data = line_data();
        let zero = FnPredictor(|_: &[f64]| 0.0);
        let reg = SmoothLoss::LogisticRegression;
        assert_eq!(empirical_risk(&zero, &data, reg, true).unwrap(), 0.0);
        let perfect = FnPredictor(|x: &[f64]| (2.0 * x[0]).sin());
        assert_eq!(empirical_risk(&perfect, &data, reg, false).unwrap(), 0.0);

        let small = Dataset::new(vec![vec![0.0], vec![1.0]], vec![1.0, -1.0]).unwrap();
        let lin = FnPredictor(|x: &[f64]| x[0] - 0.5);
        let cls = SmoothLoss::LogisticClassification;
        let expect = 0.5 * ((1.0 + 0.5f64.exp()).ln() + (1.0 + 0.5f64.exp()).ln());
        assert!((empirical_risk(&lin, &small, cls, false).unwrap() - expect).abs() < 1e-15);
        let bad = Dataset::new(vec![vec![0.0]], vec![0.3]).unwrap();
        assert!(empirical_risk(&lin, &bad, cls, false).is_err());
    }

    #[test]
    fn json_round_trip() {
        let data = line_data();
        let scheme = two_region_scheme(true);
        let m = fit_composed(
            &data,
            &scheme,
            &settings(2, 0.2),
            SmoothLoss::LogisticRegression,
            &TrainConfig::new(0.2),
        )
        .unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        for key in ["partition", "scheme", "locals", "null_region_ids"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ComposedModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
