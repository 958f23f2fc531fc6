//! Smooth, convex, Lipschitz losses and their shifted versions.
//!
//! Every shipped loss is twice continuously differentiable in `t` with
//! bounded first and second derivatives, which is what the influence-function
//! machinery needs. Non-smooth losses (hinge, ε-insensitive) are deliberately
//! absent.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothLoss {
    /// `ln(1 + exp(-y t))`, labels in `{-1, +1}`.
    LogisticClassification,
    /// `-ln(4 e^{y-t} / (1 + e^{y-t})²) = 2 ln cosh((y - t) / 2)`.
    LogisticRegression,
}

/// `ln(1 + e^u)` without overflow.
#[inline]
pub(crate) fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-u})` without overflow.
#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `e^{-|u|} / (1 + e^{-|u|})²`, i.e. `σ(u) σ(-u)`.
#[inline]
fn logistic_density(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `2 ln cosh(r / 2)`, accurate near zero and finite for large `|r|`.
#[inline]
fn two_log_cosh_half(r: f64) -> f64 {
    let a = r.abs();
    if a < 40.0 {
        let s = (a / 4.0).sinh();
        2.0 * (2.0 * s * s).ln_1p()
    } else {
        a + 2.0 * ((-a).exp().ln_1p() - LN_2)
    }
}

impl SmoothLoss {
    pub const ALL: [SmoothLoss; 2] = [
        SmoothLoss::LogisticClassification,
        SmoothLoss::LogisticRegression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SmoothLoss::LogisticClassification => "logistic-classification",
            SmoothLoss::LogisticRegression => "logistic-regression",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, SmoothLoss::LogisticClassification)
    }

    pub fn check_label(self, y: f64) -> Result<()> {
        match self {
            SmoothLoss::LogisticClassification if y != 1.0 && y != -1.0 => Err(Error::invalid(
                format!("classification labels must be -1 or +1, got {y}"),
            )),
            _ if !y.is_finite() => Err(Error::invalid(format!("non-finite label {y}"))),
            _ => Ok(()),
        }
    }

    pub fn value(self, y: f64, t: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.value_unchecked(y, t))
    }

    pub fn dt(self, y: f64, t: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.dt_unchecked(y, t))
    }

    pub fn dtt(self, y: f64, t: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.dtt_unchecked(y, t))
    }

    #[inline]
    pub(crate) fn value_unchecked(self, y: f64, t: f64) -> f64 {
        match self {
            SmoothLoss::LogisticClassification => softplus(-y * t),
            SmoothLoss::LogisticRegression => two_log_cosh_half(y - t),
        }
    }

    #[inline]
    pub(crate) fn dt_unchecked(self, y: f64, t: f64) -> f64 {
        match self {
            SmoothLoss::LogisticClassification => -y * sigmoid(-y * t),
            SmoothLoss::LogisticRegression => -((y - t) / 2.0).tanh(),
        }
    }

    #[inline]
    pub(crate) fn dtt_unchecked(self, y: f64, t: f64) -> f64 {
        match self {
            SmoothLoss::LogisticClassification => logistic_density(y * t),
            SmoothLoss::LogisticRegression => 2.0 * logistic_density(y - t),
        }
    }

    /// Exact Lipschitz constant `|L|₁` in `t`.
    pub fn lipschitz_constant(self) -> f64 {
        1.0
    }

    /// `sup_{y,t} L''(y, t)`.
    pub fn second_derivative_bound(self) -> f64 {
        match self {
            SmoothLoss::LogisticClassification => 0.25,
            SmoothLoss::LogisticRegression => 0.5,
        }
    }

    pub fn shifted(self) -> ShiftedLoss {
        ShiftedLoss { base: self }
    }
}

impl fmt::Display for SmoothLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SmoothLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SmoothLoss::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown loss {s:?}")))
    }
}

/// `L*(y, t) = L(y, t) - L(y, 0)`. Has the same derivatives in `t` and the
/// same Lipschitz constant as the base loss, but may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftedLoss {
    pub base: SmoothLoss,
}

impl ShiftedLoss {
    pub fn value(self, y: f64, t: f64) -> Result<f64> {
        self.base.check_label(y)?;
        Ok(self.value_unchecked(y, t))
    }

    #[inline]
    pub(crate) fn value_unchecked(self, y: f64, t: f64) -> f64 {
        self.base.value_unchecked(y, t) - self.base.value_unchecked(y, 0.0)
    }

    pub fn dt(self, y: f64, t: f64) -> Result<f64> {
        self.base.dt(y, t)
    }

    pub fn dtt(self, y: f64, t: f64) -> Result<f64> {
        self.base.dtt(y, t)
    }

    pub fn lipschitz_constant(self) -> f64 {
        self.base.lipschitz_constant()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CLS: SmoothLoss = SmoothLoss::LogisticClassification;
    const REG: SmoothLoss = SmoothLoss::LogisticRegression;

    #[test]
    fn value_examples() {
        assert!((CLS.value(1.0, 0.0).unwrap() - LN_2).abs() < 1e-16);
        assert_eq!(REG.value(0.7, 0.7).unwrap(), 0.0);
        let v = CLS.value(1.0, 35.0).unwrap();
        assert!((v - 6.305116760146989e-16).abs() < 1e-28, "{v}");
    }

    #[test]
    fn regression_matches_textbook_formula_where_it_is_safe() {
        for &(y, t) in &[(0.0, 1.0), (2.0, -1.5), (-3.0, 0.25), (5.0, 5.5)] {
            let r: f64 = y - t;
            let naive = -(4.0 * r.exp() / (1.0 + r.exp()).powi(2)).ln();
            assert!((REG.value(y, t).unwrap() - naive).abs() < 1e-13);
        }
    }

    #[test]
    fn stable_at_extreme_residuals() {
        for loss in SmoothLoss::ALL {
            for &t in &[-700.0, -350.0, 350.0, 700.0, 1e4] {
                let v = loss.value(1.0, t).unwrap();
                assert!(v.is_finite() && v >= 0.0);
                assert!(loss.dt(1.0, t).unwrap().is_finite());
                assert!(loss.dtt(1.0, t).unwrap() >= 0.0);
            }
        }
        // Far tail is linear with slope 1.
        let a = REG.value(0.0, 700.0).unwrap();
        let b = REG.value(0.0, 701.0).unwrap();
        assert!((b - a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_examples() {
        for loss in SmoothLoss::ALL {
            assert_eq!(loss.shifted().value(1.0, 0.0).unwrap(), 0.0);
            assert_eq!(loss.shifted().value(-1.0, 0.0).unwrap(), 0.0);
        }
        let v = CLS.shifted().value(1.0, 1.0).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln() - LN_2;
        assert!((v - expect).abs() < 1e-15);
        assert!((v + 0.379885).abs() < 1e-6);
        // L(0,1) - L(0,0) with L(0,0) = 0
        let naive = -(4.0 * (-1.0f64).exp() / (1.0 + (-1.0f64).exp()).powi(2)).ln();
        assert!((REG.shifted().value(0.0, 1.0).unwrap() - naive).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(CLS.dt(1.0, 0.0).unwrap(), -0.5);
        assert_eq!(CLS.dtt(1.0, 0.0).unwrap(), 0.25);
        assert_eq!(REG.dt(1.3, 1.3).unwrap(), 0.0);
        assert_eq!(REG.dtt(1.3, 1.3).unwrap(), 0.5);
        assert_eq!(
            CLS.shifted().dt(1.0, 0.3).unwrap(),
            CLS.dt(1.0, 0.3).unwrap()
        );
    }

    #[test]
    fn invalid_classification_label() {
        assert!(CLS.value(0.0, 1.0).is_err());
        assert!(CLS.dt(2.0, 1.0).is_err());
        assert!(CLS.shifted().value(0.5, 1.0).is_err());
        assert!(REG.value(0.5, 1.0).is_ok());
        assert!(REG.value(f64::NAN, 1.0).is_err());
    }

    /// Dense-grid oracle for sup |L'| and sup L''.
    fn grid_sup(f: impl Fn(f64, f64) -> f64, ys: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for &y in ys {
            for i in -200_000..=200_000 {
                let t = i as f64 * 1e-3;
                m = m.max(f(y, t).abs());
            }
        }
        m
    }

    #[test]
    fn lipschitz_and_curvature_constants_match_grid_oracle() {
        let cls = grid_sup(|y, t| CLS.dt_unchecked(y, t), &[-1.0, 1.0]);
        assert!(cls <= 1.0 && cls > 1.0 - 1e-12, "{cls}");
        let reg = grid_sup(|y, t| REG.dt_unchecked(y, t), &[-2.0, 0.0, 3.5]);
        assert!(reg <= 1.0 && reg > 1.0 - 1e-12, "{reg}");
        assert_eq!(CLS.lipschitz_constant(), 1.0);
        assert_eq!(REG.shifted().lipschitz_constant(), 1.0);

        let c2 = grid_sup(|y, t| CLS.dtt_unchecked(y, t), &[-1.0, 1.0]);
        assert_eq!(c2, CLS.second_derivative_bound());
        let r2 = grid_sup(|y, t| REG.dtt_unchecked(y, t), &[-2.0, 0.0, 3.5]);
        assert_eq!(r2, REG.second_derivative_bound());
    }

    #[test]
    fn parse_names() {
        assert_eq!("logistic-regression".parse::<SmoothLoss>().unwrap(), REG);
        assert_eq!(
            "logistic-classification".parse::<SmoothLoss>().unwrap(),
            CLS
        );
        assert!("hinge".parse::<SmoothLoss>().is_err());
    }

    fn label(loss: SmoothLoss) -> BoxedStrategy<f64> {
        match loss {
            SmoothLoss::LogisticClassification => prop_oneof![Just(-1.0), Just(1.0)].boxed(),
            SmoothLoss::LogisticRegression => (-5.0..5.0f64).boxed(),
        }
    }

    fn case() -> impl Strategy<Value = (SmoothLoss, f64, f64, f64)> {
        prop_oneof![Just(CLS), Just(REG)]
            .prop_flat_map(|l| (Just(l), label(l), -8.0..8.0f64, -8.0..8.0f64))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn gradient_check((loss, y, t, _s) in case()) {
            let h = 1e-6;
            let fd = (loss.value_unchecked(y, t + h) - loss.value_unchecked(y, t - h)) / (2.0 * h);
            let d = loss.dt_unchecked(y, t);
            prop_assert!((d - fd).abs() <= 1e-6 * (1.0 + d.abs()), "dt {d} fd {fd}");
            let fd2 = (loss.dt_unchecked(y, t + h) - loss.dt_unchecked(y, t - h)) / (2.0 * h);
            let d2 = loss.dtt_unchecked(y, t);
            prop_assert!((d2 - fd2).abs() <= 1e-6 * (1.0 + d2.abs()), "dtt {d2} fd {fd2}");
        }

        #[test]
        fn midpoint_convexity((loss, y, t, s) in case()) {
            let mid = loss.value_unchecked(y, 0.5 * (t + s));
            let avg = 0.5 * (loss.value_unchecked(y, t) + loss.value_unchecked(y, s));
            prop_assert!(mid <= avg + 1e-12);
            prop_assert!(loss.dtt_unchecked(y, t) >= 0.0);
        }

        #[test]
        fn lipschitz_audit((loss, y, t, s) in case()) {
            let lhs = (loss.value_unchecked(y, t) - loss.value_unchecked(y, s)).abs();
            prop_assert!(lhs <= loss.lipschitz_constant() * (t - s).abs() + 1e-12);
            prop_assert!(loss.dt_unchecked(y, t).abs() <= loss.lipschitz_constant());
        }

        #[test]
        fn shift_identity((loss, y, t, _s) in case()) {
            let sh = loss.shifted().value_unchecked(y, t);
            let resid = sh - loss.value_unchecked(y, t) + loss.value_unchecked(y, 0.0);
            prop_assert!(resid.abs() <= 4.0 * f64::EPSILON * (1.0 + loss.value_unchecked(y, t)));
        }
    }
}
