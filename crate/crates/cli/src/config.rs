//! TOML configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use locsvm::experiments::PartitionConfig;
use locsvm::robustness::{Contamination, DEFAULT_EPS_LADDER, DEFAULT_PROBE_COUNT};
use locsvm::{
    Dataset, Kernel, KernelFamily, SmoothLoss, SyntheticTask, TaskKind, TrainConfig, WeightKind,
    WeightedSample,
};
use serde::Deserialize;

use crate::dataset;
use crate::error::{CliError, CliResult};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    pub model: ModelSpec,
    pub audit: Option<AuditSpec>,
    pub experiment: Option<ExperimentSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Relative paths resolve against the config file's directory.
    pub csv: Option<PathBuf>,
    pub synthetic: Option<TaskSpec>,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    SineRegression {
        dim: usize,
        #[serde(default)]
        noise: f64,
    },
    TwoMoonsClassification {
        dim: usize,
        noise: f64,
    },
    PiecewiseRegression {
        dim: usize,
        breakpoints: Vec<f64>,
        #[serde(default)]
        noise: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    #[serde(default = "one")]
    pub regions: usize,
    #[serde(default)]
    pub tau: f64,
    #[serde(default = "one")]
    pub min_region_size: usize,
    #[serde(default)]
    pub weights: WeightsSpec,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            regions: 1,
            tau: 0.0,
            min_region_size: 1,
            weights: WeightsSpec::NormalizedIndicator,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightsSpec {
    #[default]
    NormalizedIndicator,
    SmoothBump {
        h: f64,
    },
}

impl From<WeightsSpec> for WeightKind {
    fn from(w: WeightsSpec) -> Self {
        match w {
            WeightsSpec::NormalizedIndicator => WeightKind::NormalizedIndicator,
            WeightsSpec::SmoothBump { h } => WeightKind::SmoothBump { bandwidth: h },
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    GaussianRbf { gamma: f64 },
    Linear,
    Polynomial { degree: u32, offset: f64 },
}

impl From<KernelSpec> for KernelFamily {
    fn from(k: KernelSpec) -> Self {
        match k {
            KernelSpec::GaussianRbf { gamma } => KernelFamily::GaussianRbf { gamma },
            KernelSpec::Linear => KernelFamily::Linear,
            KernelSpec::Polynomial { degree, offset } => {
                KernelFamily::Polynomial { degree, offset }
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub loss: SmoothLoss,
    pub kernel: KernelSpec,
    /// Shared λ; `lambdas` gives one value per region instead.
    pub lambda: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub grad_tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    #[serde(default = "default_ladder")]
    pub eps_ladder: Vec<f64>,
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    #[serde(default = "default_maxbias_eps")]
    pub maxbias_eps: f64,
    pub contamination: ContaminationConfig,
}

fn default_ladder() -> Vec<f64> {
    DEFAULT_EPS_LADDER.to_vec()
}

fn default_probe_count() -> usize {
    DEFAULT_PROBE_COUNT
}

fn default_maxbias_eps() -> f64 {
    0.1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ContaminationConfig {
    Dirac {
        x: Vec<f64>,
        y: f64,
    },
    /// Every training label flipped (classification) or mirrored
    /// (regression).
    LabelFlip,
    Mixture {
        atoms: Vec<Atom>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub x: Vec<f64>,
    pub y: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Consistency {
        #[serde(default = "default_n_ladder")]
        n_ladder: Vec<usize>,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_eval_size")]
        eval_size: usize,
    },
    Tradeoff {
        n: usize,
        lambdas: Vec<f64>,
        #[serde(default = "default_eval_size")]
        eval_size: usize,
    },
}

fn default_n_ladder() -> Vec<usize> {
    vec![100, 200, 400, 800, 1600]
}

fn default_c() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.25
}

fn default_eval_size() -> usize {
    100_000
}

/// A parsed config together with the file it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub path: PathBuf,
    pub config: Config,
}

pub fn load(path: &Path, seed_override: Option<u64>) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut config: Config =
        toml::from_str(&text).map_err(|e| CliError::config(path, e.to_string()))?;
    if config.version != CONFIG_VERSION {
        return Err(CliError::config(
            path,
            format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                config.version
            ),
        ));
    }
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let loaded = Loaded {
        path: path.to_path_buf(),
        config,
    };
    loaded.check()?;
    Ok(loaded)
}

impl Loaded {
    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::config(&self.path, message)
    }

    fn check(&self) -> CliResult<()> {
        let c = &self.config;
        match (&c.data.csv, &c.data.synthetic) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(self.err("[data] needs exactly one of `csv` or `synthetic`"))
            }
            (Some(_), None) if c.data.n.is_some() => {
                return Err(self.err("[data] `n` only applies to synthetic data"))
            }
            (None, Some(_)) if c.data.n.is_none() && c.experiment.is_none() => {
                return Err(self.err("[data] synthetic data needs `n`"))
            }
            _ => {}
        }
        match (c.model.lambda, &c.model.lambdas) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(self.err("[model] needs exactly one of `lambda` or `lambdas`"))
            }
            _ => {}
        }
        if c.experiment.is_some() && c.data.synthetic.is_none() {
            return Err(self.err("experiments need synthetic data"));
        }
        if let Some(a) = &c.audit {
            if !(0.0..0.5).contains(&a.maxbias_eps) {
                return Err(self.err(format!(
                    "[audit] maxbias_eps = {} must lie in [0, 1/2)",
                    a.maxbias_eps
                )));
            }
            if let Some(e) = a.eps_ladder.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
                return Err(self.err(format!("[audit] eps_ladder value {e} must lie in (0, 1/2)")));
            }
        }
        Ok(())
    }

    pub fn task(&self) -> CliResult<Option<SyntheticTask>> {
        let Some(spec) = &self.config.data.synthetic else {
            return Ok(None);
        };
        let (kind, dim) = match spec.clone() {
            TaskSpec::SineRegression { dim, noise } => (TaskKind::SineRegression { noise }, dim),
            TaskSpec::TwoMoonsClassification { dim, noise } => {
                (TaskKind::TwoMoonsClassification { noise }, dim)
            }
            TaskSpec::PiecewiseRegression {
                dim,
                breakpoints,
                noise,
            } => (TaskKind::PiecewiseRegression { breakpoints, noise }, dim),
        };
        Ok(Some(SyntheticTask::new(kind, dim, self.config.seed)?))
    }

    pub fn dataset(&self) -> CliResult<Dataset> {
        if let Some(task) = self.task()? {
            let n = self
                .config
                .data
                .n
                .ok_or_else(|| self.err("[data] synthetic data needs `n`"))?;
            return Ok(task.generate(n)?);
        }
        let rel = self.config.data.csv.as_ref().expect("checked");
        let path = match self.path.parent() {
            Some(dir) if rel.is_relative() => dir.join(rel),
            _ => rel.clone(),
        };
        let data = dataset::load(&path)?;
        let loss = self.config.model.loss;
        if let Some(&y) = data.ys().iter().find(|&&y| loss.check_label(y).is_err()) {
            return Err(CliError::Dataset {
                path,
                message: format!("label {y} is not valid for the {loss} loss"),
            });
        }
        Ok(data)
    }

    pub fn kernel(&self, dim: usize) -> CliResult<Kernel> {
        Ok(Kernel::new(self.config.model.kernel.into(), dim)?)
    }

    pub fn solver(&self, lambda: f64) -> TrainConfig {
        let m = &self.config.model;
        let mut cfg = TrainConfig::new(lambda);
        if let Some(t) = m.grad_tol {
            cfg.grad_tol = t;
        }
        if let Some(i) = m.max_iter {
            cfg.max_iter = i;
        }
        cfg
    }

    /// Per-region λ for a partition with `b` regions.
    pub fn lambdas(&self, b: usize) -> CliResult<Vec<f64>> {
        match (&self.config.model.lambdas, self.config.model.lambda) {
            (Some(ls), _) if ls.len() == b => Ok(ls.clone()),
            (Some(ls), _) => Err(self.err(format!(
                "[model] lists {} lambdas but the partition has {b} regions",
                ls.len()
            ))),
            (None, Some(l)) => Ok(vec![l; b]),
            (None, None) => unreachable!("checked"),
        }
    }

    pub fn partition_config(&self, dim: usize) -> CliResult<PartitionConfig> {
        let p = &self.config.partition;
        Ok(PartitionConfig {
            regions: p.regions,
            tau: p.tau,
            min_region_size: p.min_region_size,
            weights: p.weights.into(),
            kernel: self.kernel(dim)?,
        })
    }

    pub fn contamination(&self, data: &Dataset) -> CliResult<Contamination> {
        let audit = self
            .config
            .audit
            .as_ref()
            .ok_or_else(|| self.err("missing [audit] section"))?;
        let loss = self.config.model.loss;
        Ok(match &audit.contamination {
            ContaminationConfig::Dirac { x, y } => Contamination::dirac(x.clone(), *y),
            ContaminationConfig::LabelFlip => {
                let (lo, hi) = data.label_range();
                let ys = data
                    .ys()
                    .iter()
                    .map(|&y| {
                        if loss.is_classification() {
                            -y
                        } else {
                            lo + hi - y
                        }
                    })
                    .collect();
                Contamination::Mixture(WeightedSample::uniform(data.xs().to_vec(), ys)?)
            }
            ContaminationConfig::Mixture { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.weight).sum();
                if atoms.is_empty()
                    || atoms.iter().any(|a| a.weight.is_nan() || a.weight < 0.0)
                    || total.is_nan()
                    || total <= 0.0
                {
                    return Err(
                        self.err("[audit] mixture needs nonnegative weights with positive total")
                    );
                }
                let sample = WeightedSample::new(
                    atoms.iter().map(|a| a.x.clone()).collect(),
                    atoms.iter().map(|a| a.y).collect(),
                    atoms.iter().map(|a| a.weight / total).collect(),
                )?;
                Contamination::Mixture(sample)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
version = 1
seed = 3
[data]
synthetic = { kind = "sine-regression", dim = 2, noise = 0.1 }
n = 40
[model]
loss = "logistic-regression"
kernel = { family = "gaussian-rbf", gamma = 1.0 }
lambda = 0.5
"#;

    fn parse(text: &str) -> Result<Config, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn base_config_parses() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.partition.regions, 1);
        assert!(matches!(c.model.kernel, KernelSpec::GaussianRbf { gamma } if gamma == 1.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(&format!("{BASE}bogus = 1\n")).is_err());
        assert!(parse(&BASE.replace("gamma = 1.0", "gamma = 1.0, width = 2")).is_err());
        assert!(parse(&BASE.replace("noise = 0.1", "noise = 0.1, sigma = 1")).is_err());
        let with_partition = format!("{BASE}[partition]\nregions = 2\nweights = {{ kind = \"smooth-bump\", h = 1, extra = 0 }}\n");
        assert!(parse(&with_partition).is_err());
    }

    #[test]
    fn audit_defaults() {
        let text = format!(
            "{BASE}[audit]\ncontamination = {{ kind = \"dirac\", x = [0.0, 0.0], y = 5.0 }}\n"
        );
        let a = parse(&text).unwrap().audit.unwrap();
        assert_eq!(a.eps_ladder, DEFAULT_EPS_LADDER.to_vec());
        assert_eq!(a.probe_count, DEFAULT_PROBE_COUNT);
        assert_eq!(a.maxbias_eps, 0.1);
    }
}
