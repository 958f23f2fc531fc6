use std::fmt::Write as _;
use std::path::Path;

use locsvm::composer::{fit_composed, ComposedModel, RegionSettings};
use locsvm::experiments::{consistency_trend, sweep_to_csv, tradeoff_sweep, LambdaSchedule};
use locsvm::robustness::{
    adversarial_family, default_probes, AuditReport, Auditor, ContaminationSpec,
};
use locsvm::{regionalize, Dataset, KernelFamily, WeightKind, WeightScheme};
use serde::Serialize;

use crate::config::{ExperimentSpec, Loaded};
use crate::error::{CliError, CliResult};

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(dir, name, &text)
}

/// Fits the composed model and writes `model.json` and `summary.txt`.
pub fn train(cfg: &Loaded, out: &Path) -> CliResult<String> {
    let data = cfg.dataset()?;
    let p = &cfg.config.partition;
    let partition = regionalize(
        data.xs(),
        p.regions,
        p.tau,
        p.min_region_size,
        cfg.config.seed,
    )?;
    let scheme = WeightScheme::new(partition, p.weights.into())?;
    let lambdas = cfg.lambdas(scheme.num_regions())?;
    let kernel = cfg.kernel(data.dim())?;
    let settings: Vec<RegionSettings> = lambdas
        .iter()
        .map(|&lambda| RegionSettings { kernel, lambda })
        .collect();
    let model = fit_composed(
        &data,
        &scheme,
        &settings,
        cfg.config.model.loss,
        &cfg.solver(lambdas[0]),
    )?;
    let summary = summary(&data, &model)?;
    write_json(out, "model.json", &model)?;
    write_file(out, "summary.txt", &summary)?;
    Ok(summary)
}

fn kernel_label(family: KernelFamily) -> String {
    match family {
        KernelFamily::GaussianRbf { gamma } => format!("gaussian-rbf (gamma {gamma})"),
        KernelFamily::Linear => "linear".into(),
        KernelFamily::Polynomial { degree, offset } => {
            format!("polynomial (degree {degree}, offset {offset})")
        }
    }
}

fn summary(data: &Dataset, model: &ComposedModel) -> CliResult<String> {
    let mut s = String::new();
    let part = model.partition();
    let loss = model.loss();
    let _ = writeln!(s, "samples      {}", data.len());
    let _ = writeln!(s, "dimension    {}", data.dim());
    let _ = writeln!(s, "loss         {loss}");
    let _ = writeln!(
        s,
        "kernel       {}",
        kernel_label(model.local(1).kernel.family)
    );
    if model.num_regions() == 1 {
        let _ = writeln!(s, "regions      1 (global model)");
    } else {
        let weights = match model.scheme.kind {
            WeightKind::NormalizedIndicator => "normalized-indicator".to_string(),
            WeightKind::SmoothBump { bandwidth } => format!("smooth-bump (h {bandwidth})"),
        };
        let _ = writeln!(
            s,
            "regions      {} (tau {}, weights {weights})",
            model.num_regions(),
            part.tau
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>6} {:>6} {:>10} {:>12} {:>12} {:>12}",
        "region", "n_b", "lambda", "h_norm", "h_bound", "margin"
    );
    for b in 1..=model.num_regions() {
        let m = model.local(b);
        let region = part.region(b);
        if m.anchors.is_empty() {
            let _ = writeln!(
                s,
                "{b:>6} {:>6} {:>10.4} {:>12} {:>12} {:>12}",
                0, m.lambda, "-", "-", "-"
            );
            continue;
        }
        let k = m.kernel.sup_norm_on_region(region, &m.anchors)?;
        let h = m.h_norm();
        let bound = k.value * loss.lipschitz_constant() / m.lambda;
        let _ = writeln!(
            s,
            "{b:>6} {:>6} {:>10.4} {:>12.6} {:>12.6} {:>12.6}",
            m.anchors.len(),
            m.lambda,
            h,
            bound,
            bound - h
        );
    }
    if model.null_region_ids.is_empty() {
        let _ = writeln!(s, "\nnull regions none");
    } else {
        let ids: Vec<String> = model
            .null_region_ids
            .iter()
            .map(|b| b.to_string())
            .collect();
        let _ = writeln!(s, "\nnull regions {}", ids.join(", "));
    }
    Ok(s)
}

pub fn load_model(path: &Path) -> CliResult<ComposedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model: ComposedModel =
        serde_json::from_str(&text).map_err(|e| CliError::config(path, e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// Audits a trained model; writes `audit.json` even when a bound fails.
pub fn audit(cfg: &Loaded, model_path: &Path, out: &Path) -> CliResult<AuditReport> {
    let spec_cfg = cfg
        .config
        .audit
        .as_ref()
        .ok_or_else(|| CliError::config(&cfg.path, "missing [audit] section"))?;
    let data = cfg.dataset()?;
    let model = load_model(model_path)?;
    if model.loss() != cfg.config.model.loss {
        return Err(CliError::config(
            &cfg.path,
            format!(
                "model was trained with the {} loss, config says {}",
                model.loss(),
                cfg.config.model.loss
            ),
        ));
    }
    let probes = default_probes(&data, spec_cfg.probe_count)?;
    let auditor = Auditor::new(&data, &model, cfg.solver(1.0), probes)?;
    let spec = ContaminationSpec::new(cfg.contamination(&data)?, spec_cfg.eps_ladder.clone())?;
    let candidates = adversarial_family(&data, model.loss())?;
    let eps = vec![spec_cfg.maxbias_eps; model.num_regions()];
    let report = auditor.audit(&spec, &eps, &candidates)?;
    write_json(out, "audit.json", &report)?;
    Ok(report)
}

pub fn audit_summary(r: &AuditReport) -> String {
    let verdict = |ok: bool| if ok { "satisfied" } else { "VIOLATED" };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "influence  sup {:.6} <= bound {:.6} (tv-refined {:.6}): {}",
        r.empirical.if_sup,
        r.if_bound_rough,
        r.if_bound_tv,
        verdict(r.satisfied.r#if)
    );
    let _ = writeln!(
        s,
        "maxbias    sup {:.6} <= bound {:.6}: {}",
        r.empirical.maxbias_sup,
        r.maxbias_bound,
        verdict(r.satisfied.maxbias)
    );
    let _ = writeln!(
        s,
        "decomposition residual {:.3e}",
        r.empirical.decomposition_residual
    );
    if !r.empirical.ladder_converged {
        let _ = writeln!(
            s,
            "warning: ε ladder residual ratios exceed 0.9: {:?}",
            r.empirical.ladder_ratios
        );
    }
    s
}

/// Runs the configured experiment; writes a CSV and a JSON report.
pub fn experiment(cfg: &Loaded, out: &Path) -> CliResult<String> {
    let spec = cfg
        .config
        .experiment
        .as_ref()
        .ok_or_else(|| CliError::config(&cfg.path, "missing [experiment] section"))?;
    let task = cfg
        .task()?
        .expect("checked: experiments use synthetic data");
    let partition = cfg.partition_config(task.dim)?;
    match spec {
        ExperimentSpec::Consistency {
            n_ladder,
            c,
            beta,
            eval_size,
        } => {
            let schedule = LambdaSchedule::new(*c, *beta)?;
            let report = consistency_trend(
                &task,
                n_ladder,
                schedule,
                &partition,
                cfg.solver(1.0),
                *eval_size,
            )?;
            let csv = report.to_csv();
            write_file(out, "trend.csv", &csv)?;
            write_json(out, "trend.json", &report)?;
            Ok(csv)
        }
        ExperimentSpec::Tradeoff {
            n,
            lambdas,
            eval_size,
        } => {
            let rows = tradeoff_sweep(&task, *n, lambdas, &partition, cfg.solver(1.0), *eval_size)?;
            let csv = sweep_to_csv(&rows);
            write_file(out, "sweep.csv", &csv)?;
            write_json(out, "sweep.json", &rows)?;
            Ok(csv)
        }
    }
}
