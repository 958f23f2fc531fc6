//! Positive-definite kernels, Gram matrices and region-restricted sup-norms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::squared_distance;
use crate::error::{Error, Result};
use crate::exec;
use crate::regionalization::RegionPredicate;

/// Kernel family and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelFamily {
    /// `exp(-‖x - x'‖² / γ²)` with length-scale `γ > 0`.
    GaussianRbf { gamma: f64 },
    /// `⟨x, x'⟩`.
    Linear,
    /// `(⟨x, x'⟩ + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    #[serde(flatten)]
    pub family: KernelFamily,
    pub input_dim: usize,
}

impl Kernel {
    pub fn new(family: KernelFamily, input_dim: usize) -> Result<Self> {
        let k = Self { family, input_dim };
        k.validate()?;
        Ok(k)
    }

    pub fn gaussian_rbf(gamma: f64, input_dim: usize) -> Result<Self> {
        Self::new(KernelFamily::GaussianRbf { gamma }, input_dim)
    }

    pub fn linear(input_dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Linear, input_dim)
    }

    pub fn polynomial(degree: u32, offset: f64, input_dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Polynomial { degree, offset }, input_dim)
    }

    /// Checks hyperparameter ranges; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("kernel input dimension must be positive"));
        }
        match self.family {
            KernelFamily::GaussianRbf { gamma } if !(gamma.is_finite() && gamma > 0.0) => Err(
                Error::invalid(format!("gaussian-rbf gamma must be positive, got {gamma}")),
            ),
            KernelFamily::Polynomial { degree: 0, .. } => {
                Err(Error::invalid("polynomial degree must be positive"))
            }
            KernelFamily::Polynomial { offset, .. } if !(offset.is_finite() && offset >= 0.0) => {
                Err(Error::invalid(format!(
                    "polynomial offset must be nonnegative, got {offset}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(x2)?;
        Ok(self.eval_unchecked(x, x2))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self.family {
            KernelFamily::GaussianRbf { gamma } => {
                (-squared_distance(x, x2) / (gamma * gamma)).exp()
            }
            KernelFamily::Linear => dot(x, x2),
            KernelFamily::Polynomial { degree, offset } => {
                (dot(x, x2) + offset).powi(degree as i32)
            }
        }
    }

    /// Whether `k(x, x)` is the same for every `x`, so the sup-norm is known
    /// without probing.
    pub fn has_constant_diagonal(&self) -> bool {
        matches!(self.family, KernelFamily::GaussianRbf { .. })
    }

    /// Gram matrix `G[i][j] = k(points[i], points[j])`. The upper triangle is
    /// computed and mirrored, so the result is exactly symmetric.
    pub fn gram(&self, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if points.is_empty() {
            return Err(Error::InsufficientData(
                "gram matrix of an empty point list".into(),
            ));
        }
        for p in points {
            self.check_dim(p)?;
        }
        Ok(self.gram_unchecked(points))
    }

    pub(crate) fn gram_unchecked(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let n = points.len();
        let rows = exec::map_range(n, |i| {
            (i..n)
                .map(|j| self.eval_unchecked(&points[i], &points[j]))
                .collect::<Vec<_>>()
        });
        let mut g = DMatrix::zeros(n, n);
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                g[(i, i + off)] = v;
                g[(i + off, i)] = v;
            }
        }
        g
    }

    /// `sup √k(x,x)` over a region. Exact for families with constant
    /// diagonal; otherwise the maximum over `probes`, which is a lower bound
    /// of the true supremum.
    pub fn sup_norm_on_region(
        &self,
        region: &RegionPredicate,
        probes: &[Vec<f64>],
    ) -> Result<KernelSupNorm> {
        if self.has_constant_diagonal() {
            let value = match self.family {
                KernelFamily::GaussianRbf { .. } => 1.0,
                _ => unreachable!(),
            };
            return Ok(KernelSupNorm {
                value,
                region_id: region.id,
                method: SupNormMethod::Exact,
            });
        }
        if probes.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no probes to estimate the kernel sup-norm on region {}",
                region.id
            )));
        }
        let mut value: f64 = 0.0;
        for p in probes {
            self.check_dim(p)?;
            if !region.contains(p) {
                return Err(Error::invalid(format!(
                    "probe {p:?} lies outside region {}",
                    region.id
                )));
            }
            value = value.max(self.eval_unchecked(p, p).max(0.0).sqrt());
        }
        Ok(KernelSupNorm {
            value,
            region_id: region.id,
            method: SupNormMethod::EmpiricalSup,
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupNormMethod {
    Exact,
    /// Maximum over probe points: a lower bound of the true sup, so any
    /// bound built from it may be underestimated.
    EmpiricalSup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSupNorm {
    pub value: f64,
    pub region_id: usize,
    pub method: SupNormMethod,
}

impl KernelSupNorm {
    pub fn is_lower_bound(&self) -> bool {
        self.method == SupNormMethod::EmpiricalSup
    }
}
