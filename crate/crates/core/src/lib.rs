//! Localized kernel learning with regionalized support vector machines.
//!
//! The input space is split into possibly overlapping regions, one
//! regularized kernel model is trained per region with a smooth Lipschitz
//! loss, and the local models are blended with a partition of unity. The
//! [`robustness`] module audits the blended predictor: it estimates
//! influence functions by finite differences of exactly contaminated
//! empirical measures and compares them with closed-form upper bounds.

pub mod composer;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod kernels;
pub mod losses;
pub mod regionalization;
pub mod robustness;
pub mod solver;

pub use composer::{fit_composed, fit_global, ComposedModel, Predictor, RegionSettings};
pub use data::Dataset;
pub use error::{ConvergenceError, Error, Result};
pub use experiments::{LambdaSchedule, SyntheticTask, TaskKind};
pub use kernels::{Kernel, KernelFamily, KernelSupNorm, SupNormMethod};
pub use losses::{ShiftedLoss, SmoothLoss};
pub use regionalization::{
    regionalize, RegionPartition, RegionPredicate, WeightKind, WeightScheme,
};
pub use robustness::{AuditReport, Auditor, Contamination, ContaminationSpec, InfluenceEstimate};
pub use solver::{train, LocalModel, RegionId, TrainConfig, WeightedSample};
