//! Synthetic tasks with known Bayes predictors, Monte-Carlo risk, and the
//! consistency and robustness/accuracy trade-off experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::composer::{empirical_risk, fit_composed, fit_global, Predictor, RegionSettings};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::Kernel;
use crate::losses::SmoothLoss;
use crate::regionalization::{regionalize, WeightKind, WeightScheme};
use crate::robustness::{default_probes, if_bound, DEFAULT_PROBE_COUNT};
use crate::solver::TrainConfig;

/// Inputs are drawn uniformly from `[-INPUT_HALF_WIDTH, INPUT_HALF_WIDTH]^d`
/// for the regression tasks.
pub const INPUT_HALF_WIDTH: f64 = 3.0;

/// Quadrature nodes per moon for the two-moons class probability.
const MOON_NODES: usize = 512;

/// Clamp for the two-moons Bayes logit.
const MAX_LOGIT: f64 = 35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskKind {
    /// `y = (1/d) Σ_j sin(x_j) + σ ξ`.
    SineRegression { noise: f64 },
    /// Two interleaved half circles in the first two coordinates with
    /// isotropic Gaussian noise `σ > 0`; further coordinates are pure
    /// standard normal noise. Labels are ±1 with equal probability.
    TwoMoonsClassification { noise: f64 },
    /// Step function of `x_0` with levels alternating `-1, +1, -1, …`
    /// between sorted breakpoints, plus Gaussian noise.
    PiecewiseRegression {
        breakpoints: Vec<f64>,
        #[serde(default)]
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    #[serde(flatten)]
    pub kind: TaskKind,
    pub dim: usize,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(kind: TaskKind, dim: usize, seed: u64) -> Result<Self> {
        let t = Self { kind, dim, seed };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("task dimension must be positive"));
        }
        let noise = match &self.kind {
            TaskKind::SineRegression { noise } => *noise,
            TaskKind::TwoMoonsClassification { noise } => {
                if self.dim < 2 {
                    return Err(Error::invalid("two moons needs at least two dimensions"));
                }
                if *noise <= 0.0 {
                    return Err(Error::invalid("two moons needs positive noise"));
                }
                *noise
            }
            TaskKind::PiecewiseRegression { breakpoints, noise } => {
                if breakpoints.iter().any(|b| !b.is_finite()) {
                    return Err(Error::invalid("breakpoints must be finite"));
                }
                if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("breakpoints must be strictly increasing"));
                }
                *noise
            }
        };
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::invalid(format!(
                "noise {noise} must be finite and nonnegative"
            )));
        }
        Ok(())
    }

    /// The loss the task is meant to be learned with.
    pub fn natural_loss(&self) -> SmoothLoss {
        match self.kind {
            TaskKind::TwoMoonsClassification { .. } => SmoothLoss::LogisticClassification,
            _ => SmoothLoss::LogisticRegression,
        }
    }

    /// Noise-free regression function, or `P(y = 1 | x)` for two moons.
    pub fn target(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TaskKind::SineRegression { .. } => {
                x.iter().map(|v| v.sin()).sum::<f64>() / x.len() as f64
            }
            TaskKind::PiecewiseRegression { breakpoints, .. } => {
                let k = breakpoints.iter().filter(|&&b| x[0] >= b).count();
                if k % 2 == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            TaskKind::TwoMoonsClassification { noise } => {
                let l = moon_logit(x, *noise);
                1.0 / (1.0 + (-l).exp())
            }
        }
    }

    /// Minimizer of the conditional risk of [`natural_loss`](Self::natural_loss):
    /// the regression function for symmetric noise, the log-odds for two
    /// moons (clamped to ±35).
    pub fn bayes_predict(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TaskKind::TwoMoonsClassification { noise } => moon_logit(x, *noise),
            _ => self.target(x),
        }
    }

    /// `n` draws from the training stream.
    pub fn generate(&self, n: usize) -> Result<Dataset> {
        self.draw(n, 0)
    }

    /// `n` draws from an independent evaluation stream.
    pub fn evaluation_sample(&self, n: usize) -> Result<Dataset> {
        self.draw(n, 1)
    }

    fn draw(&self, n: usize, stream: u64) -> Result<Dataset> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InsufficientData(
                "cannot draw an empty sample".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, y) = self.draw_one(&mut rng);
            xs.push(x);
            ys.push(y);
        }
        Dataset::new(xs, ys)
    }

    fn draw_one(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..self.dim)
                .map(|_| rng.random_range(-INPUT_HALF_WIDTH..INPUT_HALF_WIDTH))
                .collect()
        };
        match &self.kind {
            TaskKind::SineRegression { noise } | TaskKind::PiecewiseRegression { noise, .. } => {
                let x = uniform(rng);
                let e: f64 = rng.sample(StandardNormal);
                let y = self.target(&x) + noise * e;
                (x, y)
            }
            TaskKind::TwoMoonsClassification { noise } => {
                let positive = rng.random_bool(0.5);
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (cx, cy) = moon_point(positive, theta);
                let mut x = Vec::with_capacity(self.dim);
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                x.push(cx + noise * e0);
                x.push(cy + noise * e1);
                for _ in 2..self.dim {
                    x.push(rng.sample(StandardNormal));
                }
                (x, if positive { 1.0 } else { -1.0 })
            }
        }
    }
}

fn moon_point(positive: bool, theta: f64) -> (f64, f64) {
    if positive {
        (theta.cos(), theta.sin())
    } else {
        (1.0 - theta.cos(), 0.5 - theta.sin())
    }
}

/// `log P(y=1|x) - log P(y=-1|x)` by midpoint quadrature over each arc.
fn moon_logit(x: &[f64], noise: f64) -> f64 {
    let log_density = |positive: bool| {
        let mut terms = [0.0; MOON_NODES];
        for (k, t) in terms.iter_mut().enumerate() {
            let theta = std::f64::consts::PI * (k as f64 + 0.5) / MOON_NODES as f64;
            let (cx, cy) = moon_point(positive, theta);
            let d2 = (x[0] - cx).powi(2) + (x[1] - cy).powi(2);
            *t = -d2 / (2.0 * noise * noise);
        }
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    };
    (log_density(true) - log_density(false)).clamp(-MAX_LOGIT, MAX_LOGIT)
}

/// Monte-Carlo risk with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Unshifted risk of `predictor` on an evaluation sample.
pub fn mc_risk<P: Predictor + ?Sized>(
    predictor: &P,
    eval: &Dataset,
    loss: SmoothLoss,
) -> Result<RiskEstimate> {
    let preds = predictor.predict_many(eval.xs());
    let losses: Vec<f64> = eval
        .ys()
        .iter()
        .zip(&preds)
        .map(|(&y, &t)| loss.value(y, t))
        .collect::<Result<_>>()?;
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = if losses.len() > 1 {
        losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(RiskEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Risk of the task's Bayes predictor on `eval`.
pub fn bayes_risk(task: &SyntheticTask, eval: &Dataset, loss: SmoothLoss) -> Result<RiskEstimate> {
    let bayes = crate::composer::FnPredictor(|x: &[f64]| task.bayes_predict(x));
    mc_risk(&bayes, eval, loss)
}

/// `λ(n_b) = c · n_b^(-β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub c: f64,
    pub beta: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        Self { c: 1.0, beta: 0.25 }
    }
}

impl LambdaSchedule {
    /// Accepts exactly `c > 0` and `0 < β < 1/2`, the range where
    /// `λ → 0` and `λ² n → ∞`.
    pub fn new(c: f64, beta: f64) -> Result<Self> {
        let s = Self { c, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::invalid(format!(
                "schedule constant {} must be positive",
                self.c
            )));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(Error::invalid(format!(
                "schedule exponent {} must lie in (0, 1/2)",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.c * (n.max(1) as f64).powf(-self.beta)
    }
}

/// How data are split and local models configured for an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub regions: usize,
    pub tau: f64,
    pub min_region_size: usize,
    pub weights: WeightKind,
    pub kernel: Kernel,
}

impl PartitionConfig {
    fn scheme(&self, data: &Dataset, seed: u64) -> Result<WeightScheme> {
        let partition = regionalize(
            data.xs(),
            self.regions,
            self.tau,
            self.min_region_size,
            seed,
        )?;
        WeightScheme::new(partition, self.weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n: usize,
    pub risk: f64,
    pub risk_se: f64,
    pub bayes_proxy: f64,
    pub global_risk: f64,
    /// λ of the global model, `schedule(n)`.
    pub lambda: f64,
    pub region_sizes: Vec<usize>,
    pub region_lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub task: SyntheticTask,
    pub schedule: LambdaSchedule,
    pub eval_size: usize,
    pub rows: Vec<TrendRow>,
    pub note: String,
}

impl TrendReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,risk,bayes_proxy,global_risk,lambda\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.n, r.risk, r.bayes_proxy, r.global_risk, r.lambda
            ));
        }
        s
    }
}

/// Trains composed and global models on nested samples of increasing size
/// with `λ_b = schedule(n_b)` and compares their Monte-Carlo risks.
pub fn consistency_trend(
    task: &SyntheticTask,
    n_ladder: &[usize],
    schedule: LambdaSchedule,
    partition: &PartitionConfig,
    solver: TrainConfig,
    eval_size: usize,
) -> Result<TrendReport> {
    schedule.validate()?;
    if n_ladder.is_empty() || n_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "sample-size ladder must be nonempty and increasing",
        ));
    }
    let loss = task.natural_loss();
    let eval = task.evaluation_sample(eval_size)?;
    let bayes = bayes_risk(task, &eval, loss)?;
    let rows = exec::try_map_range(n_ladder.len(), |i| -> Result<TrendRow> {
        let n = n_ladder[i];
        let data = task.generate(n)?;
        let scheme = partition.scheme(&data, task.seed)?;
        let sizes: Vec<usize> = (1..=scheme.num_regions())
            .map(|b| {
                scheme
                    .partition
                    .restrict(&data, b)
                    .sample()
                    .map_or(0, |s| s.len())
            })
            .collect();
        let settings: Vec<RegionSettings> = sizes
            .iter()
            .map(|&nb| RegionSettings {
                kernel: partition.kernel,
                lambda: schedule.lambda(nb),
            })
            .collect();
        let composed = fit_composed(&data, &scheme, &settings, loss, &solver)?;
        let lambda = schedule.lambda(n);
        let global = fit_global(
            &data,
            &partition.kernel,
            loss,
            &TrainConfig { lambda, ..solver },
        )?;
        let risk = mc_risk(&composed, &eval, loss)?;
        let global_risk = mc_risk(&global, &eval, loss)?;
        Ok(TrendRow {
            n,
            risk: risk.mean,
            risk_se: risk.std_error,
            bayes_proxy: bayes.mean,
            global_risk: global_risk.mean,
            lambda,
            region_sizes: sizes,
            region_lambdas: settings.iter().map(|s| s.lambda).collect(),
        })
    })?;
    Ok(TrendReport {
        task: task.clone(),
        schedule,
        eval_size,
        rows,
        note: "risk is the Monte-Carlo unshifted risk; the composed-vs-global ratio is an engineering target"
            .into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub risk: f64,
    pub risk_se: f64,
    pub train_risk: f64,
    pub if_bound_rough: f64,
}

/// One composed model per `λ` (shared by all regions) on a fixed sample:
/// Monte-Carlo risk next to the influence bound.
pub fn tradeoff_sweep(
    task: &SyntheticTask,
    n: usize,
    lambdas: &[f64],
    partition: &PartitionConfig,
    solver: TrainConfig,
    eval_size: usize,
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("empty λ grid"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(Error::invalid(format!("λ = {l} must be positive")));
    }
    let loss = task.natural_loss();
    let data = task.generate(n)?;
    let eval = task.evaluation_sample(eval_size)?;
    let scheme = partition.scheme(&data, task.seed)?;
    let probes = default_probes(&data, DEFAULT_PROBE_COUNT)?;
    exec::try_map_range(lambdas.len(), |i| -> Result<SweepRow> {
        let lambda = lambdas[i];
        let settings = vec![
            RegionSettings {
                kernel: partition.kernel,
                lambda,
            };
            scheme.num_regions()
        ];
        let bound = if_bound(&scheme, &settings, loss, &probes)?;
        let model = fit_composed(&data, &scheme, &settings, loss, &solver)?;
        let risk = mc_risk(&model, &eval, loss)?;
        Ok(SweepRow {
            lambda,
            risk: risk.mean,
            risk_se: risk.std_error,
            train_risk: empirical_risk(&model, &data, loss, false)?,
            if_bound_rough: bound.if_bound_rough,
        })
    })
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("lambda,risk,risk_se,train_risk,if_bound_rough\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda, r.risk, r.risk_se, r.train_risk, r.if_bound_rough
        ));
    }
    s
}
