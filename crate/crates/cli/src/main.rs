use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use uot_lab::config::ExperimentConfig;
use uot_lab::experiment::{
    evaluate_map, generate_data, run_cost_ablation, run_experiment, run_fig1, run_oracle, run_tau_sweep,
    thread_budget, write_metrics_csv, RunStatus, SummaryRow,
};
use uot_lab::math::Rng;
use uot_lab::neural::Mlp;
use uot_lab::operators::CorruptionOp;
use uot_lab::oracle::{grid_2d, twist_check, TwistVerdict};
use uot_lab::datagen::sample_prior;
use uot_lab::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "uot-lab", version, about = "Unbalanced OT maps for unpaired inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config, or a run manifest to reproduce.
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's output_dir, then runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one map and write losses, metrics, checkpoints, figures and a manifest.
    Train(Common),
    /// Evaluate a saved map checkpoint on the config's held-out data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Map checkpoint (default: <out>/map_best_sw.ckpt, else <out>/map_final.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exact OT against entropic UOT on a subsample, with plan CSVs.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 128)]
        n: usize,
        /// Entropic scale (default: 5% of the mean cost).
        #[arg(long)]
        eps: Option<f64>,
        /// KL marginal strength.
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
    },
    /// Check injectivity of x -> lambda*x + A(x) on a grid and report the Lipschitz constant of A.
    TwistCheck {
        #[command(flatten)]
        common: Common,
        /// Quadratic weight (default: cost.quad_weight).
        #[arg(long)]
        lambda: Option<f64>,
        /// Points per axis for 2D operators.
        #[arg(long, default_value_t = 41)]
        grid: usize,
        /// Grid half-width.
        #[arg(long, default_value_t = 2.0)]
        range: f64,
    },
    /// Sweep tau over sweep.tau_factors; with --ablation, run the cost-term ablation instead.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ablation: bool,
    },
    /// Likelihood-only against quadratic-only cost on the same data.
    Fig1(Common),
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let cfg = ExperimentConfig::load(&self.config)?;
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.resolve_output_dir(self.out.as_deref())
    }
}

fn print_rows(rows: &[SummaryRow]) {
    for r in rows {
        let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
        println!("{:<18} tau={:<10} {:?} steps={} {}", r.label, r.tau, r.status, r.steps_completed, metrics.join(" "));
    }
}

fn any_diverged(rows: &[SummaryRow]) -> bool {
    rows.iter().any(|r| r.status == RunStatus::Diverged)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg);
            let report = run_experiment(&cfg, &out)?;
            for (k, v) in &report.manifest.final_metrics {
                println!("{k} = {v:.6}");
            }
            if let Some(step) = report.manifest.best_sw_step {
                println!("best sliced-wasserstein snapshot: step {step}");
            }
            println!("artifacts in {}", out.display());
            if let Some(d) = &report.manifest.divergence {
                eprintln!("error: training diverged at step {}: {}", d.step, d.reason);
                return Ok(EXIT_DIVERGED);
            }
            Ok(0)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg);
            let ckpt = match checkpoint {
                Some(p) => p,
                None => ["map_best_sw.ckpt", "map_final.ckpt"]
                    .iter()
                    .map(|f| out.join(f))
                    .find(|p| p.exists())
                    .with_context(|| format!("no map checkpoint in {}; pass --checkpoint", out.display()))?,
            };
            let map = Mlp::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let data = generate_data(&cfg)?;
            let metrics = evaluate_map(&cfg, &data, &cfg.cost_spec()?, &map, 0)?;
            std::fs::create_dir_all(&out)?;
            write_metrics_csv(&out.join("eval_metrics.csv"), &metrics)?;
            for m in &metrics {
                println!("{} = {:.6}", m.name, m.value);
            }
            Ok(0)
        }
        Command::Oracle { common, n, eps, rho } => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg).join("oracle");
            let r = run_oracle(&cfg, &out, n, eps, rho)?;
            println!("n = {}  eps = {:.6}  rho = {}", r.n, r.eps, r.rho);
            println!("exact OT cost      = {:.6}", r.ot_cost);
            println!("entropic UOT cost  = {:.6}  (mass {:.6})", r.uot_cost, r.uot_mass);
            println!("plans in {}", out.display());
            Ok(0)
        }
        Command::TwistCheck { common, lambda, grid, range } => {
            let cfg = common.load()?;
            let op = cfg.degradation()?.op;
            let lambda = lambda.unwrap_or(cfg.cost.quad_weight);
            twist(&op, &cfg, lambda, grid, range)
        }
        Command::Sweep { common, ablation } => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg);
            let rows = if ablation {
                run_cost_ablation(&cfg, &out, thread_budget())?
            } else {
                run_tau_sweep(&cfg, &out, thread_budget())?
            };
            let rows: Vec<SummaryRow> = rows.into_iter().map(|r| r.0).collect();
            print_rows(&rows);
            let file = if ablation { "ablation.csv" } else { "sweep.csv" };
            println!("summary in {}", out.join(file).display());
            Ok(if any_diverged(&rows) { EXIT_DIVERGED } else { 0 })
        }
        Command::Fig1(common) => {
            let cfg = common.load()?;
            let out = common.out_dir(&cfg);
            let rows: Vec<SummaryRow> = run_fig1(&cfg, &out, thread_budget())?.into_iter().map(|r| r.0).collect();
            print_rows(&rows);
            println!("figures: {} and {}", out.join("likelihood_only/map.svg").display(), out.join("quadratic_only/map.svg").display());
            Ok(if any_diverged(&rows) { EXIT_DIVERGED } else { 0 })
        }
    }
}

fn twist(op: &CorruptionOp, cfg: &ExperimentConfig, lambda: f64, grid: usize, range: f64) -> anyhow::Result<u8> {
    if grid < 2 {
        bail!("--grid must be >= 2");
    }
    let mut rng = Rng::stream(cfg.seed(), 30);
    let l = op.lipschitz_estimate(256, &mut rng)?;
    let points = if op.in_dim() == 2 {
        grid_2d(-range, range, grid)
    } else {
        // no grid in higher dimensions: probe prior draws instead
        sample_prior(&cfg.prior, &mut rng, grid * grid)?.to_rows()
    };
    let bound = if l.is_lower_bound() { "lower bound" } else { "power iteration" };
    println!("lipschitz L = {:.10} ({bound})", l.value);
    println!("lambda = {lambda}  ({} L)", if lambda > l.value { ">" } else { "<=" });
    match twist_check(op, lambda, &points, 1e-9)? {
        TwistVerdict::Injective => println!("verdict: injective on {} points", points.len()),
        TwistVerdict::CollisionFound(a, b) => println!("verdict: collision between {a:?} and {b:?}"),
    }
    Ok(0)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. }) => EXIT_CONFIG,
        Some(e) if e.is_divergence() => EXIT_DIVERGED,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
