//! End-to-end runs: data generation, training, evaluation snapshots and artifacts.
//!
//! Every random draw comes from a fixed substream of the run seed, so a run is
//! reproduced exactly by its manifest. Streams 0 to 2 belong to the trainer;
//! the ones below belong to data generation and evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::{version_string, ExperimentConfig, MetricName, MANIFEST_FORMAT};
use crate::costs::CostSpec;
use crate::datagen::{
    build_imbalanced_pair_at, mode_proportions, sample_prior, write_samples_csv, Degradation, NoiseSpec,
};
use crate::error::{Error, Result};
use crate::math::{Mat, Rng};
use crate::metrics::{mean_displacement, mean_psnr, residual_mean, sliced_wasserstein, MetricRecord};
use crate::neural::Mlp;
use crate::oracle::{solve_ot_exact, solve_uot_entropic, DiscreteMeasure, MAX_EXACT_POINTS};
use crate::svg;
use crate::trainer::{train_with, Dataset, Divergence, LossRecord, TrainState};

const STREAM_TARGET: u64 = 10;
const STREAM_SOURCE: u64 = 11;
const STREAM_SOURCE_NOISE: u64 = 12;
const STREAM_EVAL: u64 = 13;
const STREAM_EVAL_NOISE: u64 = 14;
const STREAM_EVAL_TARGET: u64 = 15;
const STREAM_SW: u64 = 16;
const STREAM_LEVEL_BASE: u64 = 20;
const STREAM_PAIR_TRAIN: u64 = 100;
const STREAM_PAIR_EVAL: u64 = 110;

/// Signals are in [-1, 1].
pub const PSNR_RANGE: f64 = 2.0;

/// Training pools and held-out evaluation sets.
#[derive(Clone, Debug)]
pub struct RunData {
    pub train_y: Mat,
    pub train_x: Mat,
    /// Held-out measurements and the clean signals behind them.
    pub eval_y: Mat,
    pub eval_clean: Mat,
    /// Held-out draws from the target prior.
    pub eval_target: Mat,
    /// `eval_clean` re-measured at each noise level, for multi-level noise.
    pub eval_by_level: Vec<(f64, Mat)>,
    /// Target share of mode 0 (two-mode priors).
    pub major_share: Option<f64>,
    pub mode_means: Option<Vec<Vec<f64>>>,
}

pub fn generate_data(cfg: &ExperimentConfig) -> Result<RunData> {
    let seed = cfg.seed();
    let degradation = cfg.degradation()?;
    let d = &cfg.data;
    let mode_means = cfg.prior.mode_means().filter(|m| m.len() == 2);
    let (train_y, train_x, eval_y, eval_clean, eval_target, major_share) = if let Some(k) = d.imbalance_k {
        let train = build_imbalanced_pair_at(&cfg.prior, k, d.n_target, &degradation, seed, STREAM_PAIR_TRAIN)?;
        let per_mode = d.n_eval.div_ceil(2);
        let eval = build_imbalanced_pair_at(&cfg.prior, k, per_mode * (k + 1), &degradation, seed, STREAM_PAIR_EVAL)?;
        let major = train.target_labels.iter().filter(|&&l| l == 0).count();
        let share = major as f64 / train.target_labels.len() as f64;
        (train.source, train.target, eval.source, eval.source_clean, eval.target, Some(share))
    } else {
        let source_prior = d.source_prior.as_ref().unwrap_or(&cfg.prior);
        let train_x = sample_prior(&cfg.prior, &mut Rng::stream(seed, STREAM_TARGET), d.n_target)?;
        let clean = sample_prior(source_prior, &mut Rng::stream(seed, STREAM_SOURCE), d.n_source)?;
        let train_y = degradation.degrade_all(&clean, &mut Rng::stream(seed, STREAM_SOURCE_NOISE))?;
        let eval_clean = sample_prior(source_prior, &mut Rng::stream(seed, STREAM_EVAL), d.n_eval)?;
        let eval_y = degradation.degrade_all(&eval_clean, &mut Rng::stream(seed, STREAM_EVAL_NOISE))?;
        let eval_target = sample_prior(&cfg.prior, &mut Rng::stream(seed, STREAM_EVAL_TARGET), d.n_eval)?;
        let share = cfg.prior.components().filter(|c| c.len() == 2).map(|c| c[0].weight);
        (train_y, train_x, eval_y, eval_clean, eval_target, share)
    };
    let mut eval_by_level = Vec::new();
    if let NoiseSpec::MultiLevel { levels } = &degradation.noise {
        for (k, level) in levels.iter().enumerate() {
            let single = Degradation::new(degradation.op.clone(), NoiseSpec::Gaussian { sigma: level.sigma })?;
            let ys = single.degrade_all(&eval_clean, &mut Rng::stream(seed, STREAM_LEVEL_BASE + k as u64))?;
            eval_by_level.push((level.sigma, ys));
        }
    }
    Ok(RunData {
        train_y,
        train_x,
        eval_y,
        eval_clean,
        eval_target,
        eval_by_level,
        major_share,
        mode_means,
    })
}

/// Metric name for PSNR at a single noise level.
pub fn level_metric_name(sigma: f64) -> String {
    format!("psnr_sigma{sigma}")
}

/// Compute the configured metrics for `map` on the held-out sets.
pub fn evaluate_map(
    cfg: &ExperimentConfig,
    data: &RunData,
    spec: &CostSpec,
    map: &Mlp,
    step: usize,
) -> Result<Vec<MetricRecord>> {
    let op = &spec.op;
    let mapped = map.forward_batch(&data.eval_y)?;
    let mut out = Vec::new();
    for metric in &cfg.eval {
        match metric {
            MetricName::DataFidelity => {
                out.push(MetricRecord::new(metric.as_str(), step, residual_mean(op, &mapped, &data.eval_y)?)?);
            }
            MetricName::Psnr => {
                out.push(MetricRecord::new(metric.as_str(), step, mean_psnr(&mapped, &data.eval_clean, PSNR_RANGE)?)?);
            }
            MetricName::PsnrPerLevel => {
                for (sigma, ys) in &data.eval_by_level {
                    let xs = map.forward_batch(ys)?;
                    let v = mean_psnr(&xs, &data.eval_clean, PSNR_RANGE)?;
                    out.push(MetricRecord::new(level_metric_name(*sigma), step, v)?);
                }
            }
            MetricName::SlicedWasserstein => {
                // the same directions at every snapshot keep snapshots comparable
                let mut rng = Rng::stream(cfg.seed(), STREAM_SW);
                let v = sliced_wasserstein(&mapped, &data.eval_target, cfg.sw_projections, &mut rng)?;
                out.push(MetricRecord::new(metric.as_str(), step, v)?);
            }
            MetricName::Displacement => {
                out.push(MetricRecord::new(metric.as_str(), step, mean_displacement(&mapped, &data.eval_y)?)?);
            }
            MetricName::TransportCost => {
                let mut total = 0.0;
                for (y, x) in data.eval_y.row_iter().zip(mapped.row_iter()) {
                    total += spec.cost(y, x)?;
                }
                out.push(MetricRecord::new(metric.as_str(), step, total / mapped.rows() as f64)?);
            }
            MetricName::ModeError => {
                let (Some(means), Some(share)) = (&data.mode_means, data.major_share) else {
                    return Err(Error::invalid("mode_error needs a two-mode prior"));
                };
                let p = mode_proportions(&mapped, means)?;
                out.push(MetricRecord::new(metric.as_str(), step, (p[0] - share).abs())?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub name: String,
    pub seed: u64,
    pub config_sha256: String,
    pub status: RunStatus,
    pub steps_completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
    /// Snapshot with the lowest sliced Wasserstein distance, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_sw_step: Option<usize>,
    pub final_metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_sw_metrics: Option<BTreeMap<String, f64>>,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub history: Vec<LossRecord>,
    pub metrics: Vec<MetricRecord>,
}

impl RunReport {
    pub fn status(&self) -> RunStatus {
        self.manifest.status
    }

    /// Value of `name` at the last evaluated snapshot.
    pub fn final_metric(&self, name: &str) -> Option<f64> {
        self.manifest.final_metrics.get(name).copied()
    }

    /// Value at the best-SW snapshot, falling back to the last snapshot.
    pub fn selected_metric(&self, name: &str) -> Option<f64> {
        self.manifest
            .best_sw_metrics
            .as_ref()
            .and_then(|m| m.get(name).copied())
            .or_else(|| self.final_metric(name))
    }

    pub fn metric_series(&self, name: &str) -> Vec<(usize, f64)> {
        self.metrics.iter().filter(|m| m.name == name).map(|m| (m.step, m.value)).collect()
    }
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_metrics_csv(path: &Path, metrics: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn by_step(metrics: &[MetricRecord], step: usize) -> BTreeMap<String, f64> {
    metrics.iter().filter(|m| m.step == step).map(|m| (m.name.clone(), m.value)).collect()
}

const SOURCE_COLOR: &str = "#1f77b4";
const MAPPED_COLOR: &str = "#d62728";
const TARGET_COLOR: &str = "#2ca02c";

fn write_figures(dir: &Path, title: &str, data: &RunData, mapped: &Mat, artifacts: &mut Vec<String>) -> Result<()> {
    let (y_dim, x_dim) = (data.eval_y.cols(), mapped.cols());
    if x_dim == 2 {
        let mut series = Vec::new();
        if y_dim == 2 {
            series.push(svg::Series { label: "source y", color: SOURCE_COLOR, points: &data.eval_y });
        }
        series.push(svg::Series { label: "target x", color: TARGET_COLOR, points: &data.eval_target });
        series.push(svg::Series { label: "mapped T(y)", color: MAPPED_COLOR, points: mapped });
        let arrows = (y_dim == 2).then_some((&data.eval_y, mapped, 150));
        svg::scatter_2d(&dir.join("map.svg"), title, &series, arrows)?;
        artifacts.push("map.svg".into());
    } else if x_dim == 1 && y_dim == 1 {
        // graph of the learned map
        let graph = Mat::from_fn(mapped.rows(), 2, |i, j| if j == 0 { data.eval_y.get(i, 0) } else { mapped.get(i, 0) });
        let series = [svg::Series { label: "(y, T(y))", color: MAPPED_COLOR, points: &graph }];
        svg::scatter_2d(&dir.join("map.svg"), title, &series, None)?;
        artifacts.push("map.svg".into());
    } else {
        for i in 0..data.eval_y.rows().min(3) {
            let mut signals: Vec<(&str, &str, &[f64])> = vec![("clean x", "black", data.eval_clean.row(i))];
            if y_dim == x_dim {
                signals.push(("measurement y", SOURCE_COLOR, data.eval_y.row(i)));
            }
            signals.push(("T(y)", MAPPED_COLOR, mapped.row(i)));
            let name = format!("signals_{i}.svg");
            svg::overlay_1d(&dir.join(&name), &format!("{title} #{i}"), &signals)?;
            artifacts.push(name);
        }
    }
    Ok(())
}

/// Run one experiment into `out_dir`. A divergence is not an `Err`: partial
/// artifacts are written and the manifest records the abort.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let spec = cfg.cost_spec()?;
    let train_cfg = cfg.train_config();
    let data = generate_data(cfg)?;
    let ckpt_dir = out_dir.join("checkpoints");
    if cfg.save_checkpoints {
        std::fs::create_dir_all(&ckpt_dir)?;
    }

    let init = TrainState::init(&train_cfg, spec.y_dim(), spec.x_dim())?;
    let mut metrics = evaluate_map(cfg, &data, &spec, &init.map.net, 0)?;
    let track_sw = cfg.eval.contains(&MetricName::SlicedWasserstein);
    let mut best: Option<(usize, f64, Mlp)> = None;

    let mut mu = Dataset::new(data.train_y.clone());
    let mut nu = Dataset::new(data.train_x.clone());
    let outcome = train_with(&train_cfg, &mut mu, &mut nu, &spec, &mut |state| {
        let recs = evaluate_map(cfg, &data, &spec, &state.map.net, state.step)?;
        if cfg.save_checkpoints {
            state.map.net.save(&ckpt_dir.join(format!("map_{:07}.ckpt", state.step)))?;
            state.potential.net.save(&ckpt_dir.join(format!("potential_{:07}.ckpt", state.step)))?;
        }
        if track_sw {
            let sw = recs.iter().find(|r| r.name == MetricName::SlicedWasserstein.as_str()).expect("sw tracked").value;
            if best.as_ref().map_or(true, |b| sw < b.1) {
                best = Some((state.step, sw, state.map.net.clone()));
            }
        }
        metrics.extend(recs);
        Ok(())
    })?;

    let state = &outcome.state;
    let last_step = metrics.last().map_or(0, |m| m.step);
    let mut artifacts = vec!["loss.csv".to_string(), "metrics.csv".to_string()];
    write_loss_csv(&out_dir.join("loss.csv"), &state.history)?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &metrics)?;
    state.map.net.save(&out_dir.join("map_final.ckpt"))?;
    state.potential.net.save(&out_dir.join("potential_final.ckpt"))?;
    artifacts.extend(["map_final.ckpt".to_string(), "potential_final.ckpt".to_string()]);
    if let Some((_, _, net)) = &best {
        net.save(&out_dir.join("map_best_sw.ckpt"))?;
        artifacts.push("map_best_sw.ckpt".into());
    }
    let selected = best.as_ref().map_or(&state.map.net, |b| &b.2);
    let mapped = selected.forward_batch(&data.eval_y)?;
    write_samples_csv(&out_dir.join("mapped.csv"), &mapped)?;
    artifacts.push("mapped.csv".into());
    let title = if cfg.name.is_empty() { "run" } else { &cfg.name };
    write_figures(out_dir, title, &data, &mapped, &mut artifacts)?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        version: version_string(),
        name: cfg.name.clone(),
        seed: cfg.seed(),
        config_sha256: cfg.sha256(),
        status: if outcome.divergence.is_some() { RunStatus::Diverged } else { RunStatus::Completed },
        steps_completed: state.history.len(),
        divergence: outcome.divergence.clone(),
        best_sw_step: best.as_ref().map(|b| b.0),
        final_metrics: by_step(&metrics, last_step),
        best_sw_metrics: best.as_ref().map(|b| by_step(&metrics, b.0)),
        artifacts,
        config: cfg.clone(),
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        manifest,
        history: outcome.state.history,
        metrics,
    })
}

/// Worker count for batch runs: `UOT_LAB_THREADS` if set, else the core count.
pub fn thread_budget() -> usize {
    std::env::var("UOT_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run independent experiments on up to `threads` workers; results keep input order.
pub fn run_many(jobs: &[(ExperimentConfig, PathBuf)], threads: usize) -> Vec<Result<RunReport>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<RunReport>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, dir)) = jobs.get(i) else { break };
                let result = run_experiment(cfg, dir);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

/// One row of a sweep or ablation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub tau: f64,
    pub status: RunStatus,
    pub steps_completed: usize,
    pub metrics: BTreeMap<String, f64>,
}

impl SummaryRow {
    fn from_report(label: String, r: &RunReport) -> Self {
        SummaryRow {
            label,
            tau: r.manifest.config.cost.tau,
            status: r.status(),
            steps_completed: r.manifest.steps_completed,
            metrics: r.manifest.final_metrics.clone(),
        }
    }
}

/// Columns: label, tau, status, steps_completed, then the union of metric
/// names in sorted order. A metric missing from a row is left empty.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let names: std::collections::BTreeSet<&String> = rows.iter().flat_map(|r| r.metrics.keys()).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string(), "tau".into(), "status".into(), "steps_completed".into()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let status = match r.status {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
        };
        let mut rec = vec![r.label.clone(), r.tau.to_string(), status.to_string(), r.steps_completed.to_string()];
        rec.extend(names.iter().map(|n| r.metrics.get(*n).map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn named(cfg: &ExperimentConfig, suffix: &str) -> String {
    if cfg.name.is_empty() {
        suffix.to_string()
    } else {
        format!("{}_{suffix}", cfg.name)
    }
}

fn summarize(
    jobs: Vec<(String, ExperimentConfig, PathBuf)>,
    csv_path: &Path,
    threads: usize,
) -> Result<Vec<(SummaryRow, RunReport)>> {
    std::fs::create_dir_all(csv_path.parent().unwrap_or(Path::new(".")))?;
    let runs: Vec<_> = jobs.iter().map(|(_, c, d)| (c.clone(), d.clone())).collect();
    let mut out = Vec::new();
    for ((label, _, _), result) in jobs.into_iter().zip(run_many(&runs, threads)) {
        let report = result?;
        out.push((SummaryRow::from_report(label, &report), report));
    }
    write_summary_csv(csv_path, &out.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>())?;
    Ok(out)
}

/// One run per factor in `sweep.tau_factors`, each in `out/tau_x<factor>`,
/// summarized in `out/sweep.csv`.
pub fn run_tau_sweep(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<(SummaryRow, RunReport)>> {
    cfg.validate()?;
    let jobs = cfg
        .sweep
        .tau_factors
        .iter()
        .map(|&f| {
            let label = format!("tau_x{f}");
            let mut c = cfg.clone();
            c.cost.tau *= f;
            c.name = named(cfg, &label);
            let dir = out.join(&label);
            (label, c, dir)
        })
        .collect();
    summarize(jobs, &out.join("sweep.csv"), threads)
}

/// The cost-term variants of the ablation, as (label, use_likelihood, use_quadratic).
pub const ABLATION_VARIANTS: [(&str, bool, bool); 3] = [
    ("quadratic_only", false, true),
    ("likelihood_only", true, false),
    ("both", true, true),
];

fn cost_variant_jobs(cfg: &ExperimentConfig, out: &Path, which: &[(&str, bool, bool)]) -> Vec<(String, ExperimentConfig, PathBuf)> {
    which
        .iter()
        .map(|&(label, l, q)| {
            let mut c = cfg.clone();
            c.cost.use_likelihood = l;
            c.cost.use_quadratic = q;
            c.name = named(cfg, label);
            (label.to_string(), c, out.join(label))
        })
        .collect()
}

/// Quadratic-only, likelihood-only and combined cost from one config;
/// summary in `out/ablation.csv`.
pub fn run_cost_ablation(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<(SummaryRow, RunReport)>> {
    cfg.validate()?;
    summarize(cost_variant_jobs(cfg, out, &ABLATION_VARIANTS), &out.join("ablation.csv"), threads)
}

/// Likelihood-only against quadratic-only on the same data; summary in
/// `out/fig1.csv` and one `map.svg` per variant directory.
pub fn run_fig1(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<(SummaryRow, RunReport)>> {
    cfg.validate()?;
    let mut eval = cfg.clone();
    for m in [MetricName::DataFidelity, MetricName::Displacement] {
        if !eval.eval.contains(&m) {
            eval.eval.push(m);
        }
    }
    eval.validate()?;
    summarize(cost_variant_jobs(&eval, out, &ABLATION_VARIANTS[..2]), &out.join("fig1.csv"), threads)
}

/// Exact OT and entropic UOT between the first `n` training measurements and
/// the first `n` clean training signals, under the configured cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub eps: f64,
    pub rho: f64,
    pub ot_cost: f64,
    pub uot_cost: f64,
    pub uot_mass: f64,
}

pub fn run_oracle(cfg: &ExperimentConfig, out: &Path, n: usize, eps: Option<f64>, rho: f64) -> Result<OracleReport> {
    cfg.validate()?;
    if n == 0 || n > MAX_EXACT_POINTS {
        return Err(Error::invalid(format!("oracle sample count must lie in 1..={MAX_EXACT_POINTS}, got {n}")));
    }
    let data = generate_data(cfg)?;
    let n = n.min(data.train_y.rows()).min(data.train_x.rows());
    let ys: Vec<Vec<f64>> = (0..n).map(|i| data.train_y.row(i).to_vec()).collect();
    let xs: Vec<Vec<f64>> = (0..n).map(|i| data.train_x.row(i).to_vec()).collect();
    let spec = cfg.cost_spec()?;
    let cost = spec.cost_matrix(&ys, &xs)?;
    // default: entropic scale 5% of the mean cost
    let eps = eps.unwrap_or(0.05 * cost.data().iter().sum::<f64>() / cost.data().len() as f64);
    let src = DiscreteMeasure::uniform(ys)?;
    let tgt = DiscreteMeasure::uniform(xs)?;
    let ot = solve_ot_exact(&src, &tgt, &cost)?;
    let uot = solve_uot_entropic(&src, &tgt, &cost, eps, rho, rho)?;
    std::fs::create_dir_all(out)?;
    ot.write_csv(&out.join("ot_plan.csv"))?;
    uot.write_csv(&out.join("uot_plan.csv"))?;
    let report = OracleReport {
        n,
        eps,
        rho,
        ot_cost: ot.cost(&cost)?,
        uot_cost: uot.cost(&cost)?,
        uot_mass: uot.mass(),
    };
    std::fs::write(out.join("oracle.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
            "name": "t",
            "prior": {{"kind": "two_modes"}},
            "degradation": {{"op": {{"kind": "identity", "dim": 2}}}},
            "cost": {{"tau": 1.0}},
            "train": {{"iterations": 30, "eval_every": 10, "batch_size": 8,
                       "map_hidden": [8], "potential_hidden": [8], "seed": 4}},
            "data": {{"n_source": 64, "n_target": 64, "n_eval": 40}},
            "eval": ["data_fidelity", "sliced_wasserstein", "transport_cost", "displacement"]
            {extra}
        }}"#
        );
        ExperimentConfig::from_json_str(&text).unwrap()
    }

    #[test]
    fn run_writes_artifacts_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small("");
        let a = run_experiment(&cfg, &dir.path().join("a")).unwrap();
        assert_eq!(a.status(), RunStatus::Completed);
        assert_eq!(a.history.len(), 30);
        for f in ["loss.csv", "metrics.csv", "manifest.json", "mapped.csv", "map.svg", "map_final.ckpt", "checkpoints/map_0000030.ckpt"] {
            assert!(dir.path().join("a").join(f).exists(), "{f}");
        }
        // snapshots at 0 (initial), 10, 20, 30
        assert_eq!(a.metric_series("transport_cost").iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 10, 20, 30]);
        let from_manifest = ExperimentConfig::load(&dir.path().join("a/manifest.json")).unwrap();
        assert_eq!(from_manifest, cfg);
        let b = run_experiment(&from_manifest, &dir.path().join("b")).unwrap();
        let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
        assert_eq!(read("a/loss.csv"), read("b/loss.csv"));
        assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));
        assert_eq!(b.manifest.config_sha256, a.manifest.config_sha256);
        assert_eq!(read_loss_csv(&dir.path().join("a/loss.csv")).unwrap(), a.history);
        assert_eq!(read_metrics_csv(&dir.path().join("a/metrics.csv")).unwrap(), a.metrics);
    }

    #[test]
    fn imbalanced_data_has_requested_shares() {
        let text = r#"{
            "prior": {"kind": "two_modes"},
            "degradation": {"op": {"kind": "identity", "dim": 2}},
            "cost": {"tau": 1.0},
            "train": {"iterations": 1},
            "data": {"n_target": 400, "n_eval": 101, "imbalance_k": 3},
            "eval": ["mode_error"]
        }"#;
        let cfg = ExperimentConfig::from_json_str(text).unwrap();
        let d = generate_data(&cfg).unwrap();
        assert_eq!(d.major_share, Some(0.75));
        assert_eq!(d.train_x.rows(), 400);
        assert_eq!(d.train_y.rows(), 200);
        assert!(d.eval_y.rows() >= 101);
        // held-out and training measurements come from different streams
        assert_ne!(d.eval_y.row(0), d.train_y.row(0));
    }

    #[test]
    fn multilevel_eval_sets_share_clean_signals() {
        let text = r#"{
            "prior": {"kind": "two_modes"},
            "degradation": {"op": {"kind": "identity", "dim": 2},
                            "noise": {"kind": "multi_level", "levels": [{"sigma": 0.0, "proportion": 1}, {"sigma": 0.5, "proportion": 1}]}},
            "cost": {"tau": 1.0},
            "train": {"iterations": 1},
            "data": {"n_eval": 50},
            "eval": ["psnr_per_level"]
        }"#;
        let cfg = ExperimentConfig::from_json_str(text).unwrap();
        let d = generate_data(&cfg).unwrap();
        assert_eq!(d.eval_by_level.len(), 2);
        assert_eq!(d.eval_by_level[0].1, d.eval_clean);
        assert_ne!(d.eval_by_level[1].1, d.eval_clean);
        assert_eq!(level_metric_name(0.025), "psnr_sigma0.025");
    }

    #[test]
    fn sweep_and_ablation_emit_one_row_per_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small("");
        cfg.train.iterations = 5;
        cfg.train.eval_every = 5;
        cfg.save_checkpoints = false;
        let rows = run_tau_sweep(&cfg, dir.path(), 2).unwrap();
        let taus: Vec<f64> = rows.iter().map(|r| r.0.tau).collect();
        assert_eq!(taus, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("label,tau,status,steps_completed,data_fidelity,displacement,sliced_wasserstein,transport_cost"));
        let ab = run_cost_ablation(&cfg, &dir.path().join("ab"), 1).unwrap();
        let labels: Vec<&str> = ab.iter().map(|r| r.0.label.as_str()).collect();
        assert_eq!(labels, vec!["quadratic_only", "likelihood_only", "both"]);
    }

    #[test]
    fn oracle_uot_cost_is_below_ot() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_oracle(&small(""), dir.path(), 12, Some(0.01), 1.0).unwrap();
        assert!(r.uot_cost <= r.ot_cost * 1.02, "{r:?}");
        assert!(dir.path().join("ot_plan.csv").exists());
        assert!(run_oracle(&small(""), dir.path(), 0, None, 1.0).is_err());
    }
}
