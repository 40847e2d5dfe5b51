use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spardis::bilevel::{read_checkpoint, write_checkpoint, BilevelConfig, LinearRepresentation, Trainer};
use spardis::experiments::{self, emit, ExperimentConfig, ExperimentId};
use spardis::identifiability::conditioned_matrix;
use spardis::metrics::evaluate;
use spardis::prox::{
    kkt_residual, lambda_max, lasso_cd, objective, ridge_solve, PenaltyKind, RegressionProblem,
    SolverSettings,
};
use spardis::selftest::run_checks;
use spardis::taskgen::{make_task, read_bundle, write_bundle, LatentSampler, LatentSpec, SupportSpec, TaskDataset};
use spardis::{sample_orthogonal, Matrix, RngStream};

#[derive(Parser)]
#[command(name = "spardis", version, about = "Sparse multi-task representation learning experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-task regression bundle.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one task of a bundle with a sparse or dense linear predictor.
    Solve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 0)]
        task: usize,
        #[arg(long, value_enum, default_value_t = Penalty::Lasso)]
        penalty: Penalty,
        /// Absolute penalty; overrides --lambda-rel.
        #[arg(long)]
        lambda: Option<f64>,
        /// Penalty as a fraction of λ_max.
        #[arg(long, default_value_t = 0.1)]
        lambda_rel: f64,
        /// Fit on the ground-truth features instead of the observations.
        #[arg(long)]
        true_features: bool,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Train a linear representation on a bundle by bilevel optimization.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for `checkpoint.txt` and `trace.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Disentanglement metrics of a trained representation on a bundle.
    Metrics {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an experiment and write results.csv and summary.json.
    Exp {
        id: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `results/<id>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in consistency checks; exit code 2 if any fails.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Penalty {
    Lasso,
    Ridge,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
enum MixingSpec {
    Identity,
    Orthogonal,
    Conditioned { cond: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenConfig {
    seed: u64,
    tasks: usize,
    n: usize,
    noise_sigma: f64,
    latent: LatentSpec,
    support: SupportSpec,
    mixing: MixingSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            tasks: 100,
            n: 50,
            noise_sigma: 0.1,
            latent: LatentSpec::shapes3d(1.0, 0.0),
            support: SupportSpec::Bernoulli { p: 0.5 },
            mixing: MixingSpec::Orthogonal,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainConfig {
    seed: u64,
    /// Representation width; defaults to the bundle's latent dimension.
    m: Option<usize>,
    bilevel: BilevelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            m: None,
            bilevel: BilevelConfig {
                lambda: 0.05,
                ..Default::default()
            },
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: GenConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.tasks == 0 {
        bail!("need at least one task");
    }
    let rng = RngStream::new(cfg.seed);
    let sampler = LatentSampler::new(&cfg.latent, &mut rng.child_named("grid-jitter"))?;
    let m = sampler.m();
    let mixing = match cfg.mixing {
        MixingSpec::Identity => None,
        MixingSpec::Orthogonal => Some(sample_orthogonal(m, &mut rng.child_named("mixing"))),
        MixingSpec::Conditioned { cond } => Some(conditioned_matrix(m, cond, &mut rng.child_named("mixing"))),
    };
    let tasks: Vec<TaskDataset> = (0..cfg.tasks)
        .map(|t| {
            let mut r = rng.child_named("tasks").child(t as u64);
            let mut task = make_task(&sampler, &cfg.support, cfg.n, cfg.noise_sigma, &mut r)?;
            if let Some(l) = &mixing {
                task.x = task.f_true.matmul_t(l);
            }
            Ok(task)
        })
        .collect::<spardis::Result<_>>()?;
    let manifest = write_bundle(out, &tasks, cfg.seed, Some(&cfg.latent), Some(&cfg.support), mixing.as_ref())?;
    println!(
        "wrote {} tasks (m={}, d={}, n={}) to {}",
        manifest.tasks.len(),
        manifest.m,
        manifest.d,
        cfg.n,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveReport {
    task: usize,
    penalty: &'static str,
    lambda: f64,
    lambda_max: f64,
    objective: f64,
    kkt_residual: f64,
    support: Vec<usize>,
    support_true: Vec<usize>,
    weights: Vec<f64>,
}

fn solve(bundle: &Path, task: usize, penalty: Penalty, lambda: Option<f64>, rel: f64, true_features: bool, tol: f64) -> Result<()> {
    let (_, tasks) = read_bundle(bundle)?;
    let Some(t) = tasks.get(task) else {
        bail!("bundle has {} tasks, asked for {task}", tasks.len());
    };
    let f = if true_features { t.f_true.clone() } else { t.x.clone() };
    let base = RegressionProblem::lasso(f, &t.y, 0.0)?;
    let (kind, name) = match penalty {
        Penalty::Lasso => (PenaltyKind::Lasso, "lasso"),
        Penalty::Ridge => (PenaltyKind::Ridge, "ridge"),
    };
    let lmax = lambda_max(&base, kind);
    let lam = lambda.unwrap_or(rel * lmax);
    let (p, w) = match penalty {
        Penalty::Lasso => {
            let p = base.with_lambda(lam);
            let w = lasso_cd(&p, &SolverSettings::with_tol(tol))?;
            (p, w)
        }
        Penalty::Ridge => {
            let p = RegressionProblem::ridge(base.features, &t.y, lam)?;
            let w = ridge_solve(&p)?;
            (p, w)
        }
    };
    let report = SolveReport {
        task,
        penalty: name,
        lambda: lam,
        lambda_max: lmax,
        objective: objective(&p, w.matrix()),
        kkt_residual: kkt_residual(&p, w.matrix()),
        support: w.support().to_vec(),
        support_true: t.support_true.clone(),
        weights: w.vector().to_vec(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn train(bundle: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg: TrainConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (manifest, tasks) = read_bundle(bundle)?;
    let m = cfg.m.unwrap_or(manifest.m);
    let rng = RngStream::new(cfg.seed);
    let init = LinearRepresentation::random(m, manifest.d, true, &mut rng.child_named("init"));
    let per_step = cfg.bilevel.tasks_per_step;
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let mut trainer = Trainer::new(cfg.bilevel.clone(), init)?;
    let mut shuffle = rng.child_named("order");
    let mut cursor = order.len();
    let mut status = Ok(());
    for _ in 0..cfg.bilevel.outer_steps {
        let mut batch = Vec::with_capacity(per_step);
        while batch.len() < per_step {
            if cursor == order.len() {
                shuffle.shuffle(&mut order);
                cursor = 0;
            }
            batch.push(tasks[order[cursor]].clone());
            cursor += 1;
        }
        if let Err(e) = trainer.step(&batch) {
            status = Err(e);
            break;
        }
    }
    let (rep, trace) = trainer.into_parts();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_checkpoint(&out.join("checkpoint.txt"), &rep, trace.steps.len(), &cfg.bilevel)?;
    let mut w = csv::Writer::from_path(out.join("trace.csv"))?;
    for s in &trace.steps {
        w.serialize(s)?;
    }
    w.flush()?;
    status?;
    let last = trace.steps.last().map_or(f64::NAN, |s| s.outer_loss);
    println!("trained {} steps, final outer loss {last:.6e}; wrote {}", trace.steps.len(), out.display());
    Ok(())
}

fn metrics(bundle: &Path, checkpoint: &Path) -> Result<()> {
    let (_, tasks) = read_bundle(bundle)?;
    let (rep, _) = read_checkpoint(checkpoint)?;
    let stack = |get: &dyn Fn(&TaskDataset) -> &Matrix| -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = tasks
            .iter()
            .flat_map(|t| {
                let mtx = get(t);
                (0..mtx.rows()).map(move |i| mtx.row(i).to_vec())
            })
            .collect();
        Ok(Matrix::from_rows(&rows)?)
    };
    let z_true = stack(&|t| &t.f_true)?;
    let x = stack(&|t| &t.x)?;
    let report = evaluate(&z_true, &rep.features(&x))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn exp(id: &str, config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let id: ExperimentId = id.parse()?;
    let mut cfg: ExperimentConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rows = experiments::run(id, &cfg)?;
    let dir = out.map_or_else(|| PathBuf::from("results").join(id.short()), Path::to_path_buf);
    let (by_lambda, section, notes) = match id {
        ExperimentId::E1 => (
            false,
            serde_json::to_value(&cfg.e1)?,
            vec!["λ chosen per run by 5-fold CV (fold = index mod 5); lambda_rel is λ/λ_max of that run".into()],
        ),
        ExperimentId::E2 | ExperimentId::E3 => (
            true,
            serde_json::to_value(if id == ExperimentId::E2 { &cfg.e2 } else { &cfg.e3 })?,
            vec![
                "lambda_rel is λ/λ_ref, λ_ref the per-task λ_max at the initial representation averaged over reference tasks".into(),
                "best entries select λ by mean MCC per arm and setting".into(),
            ],
        ),
        ExperimentId::E4 => (
            false,
            serde_json::to_value(&cfg.e4)?,
            vec!["lambda is the absolute λ₁; sparsity is 1 − ‖W‖₂,₀/m averaged over tasks".into()],
        ),
        ExperimentId::UnitOracles => (false, serde_json::json!({}), Vec::new()),
    };
    let echo = serde_json::json!({ "experiment": id, "seed": cfg.seed, "settings": section });
    let (csv, json) = emit(&dir, id.short(), cfg.seed, &echo, &rows, by_lambda, notes)?;
    println!("{} rows -> {} and {}", rows.len(), csv.display(), json.display());
    if id == ExperimentId::UnitOracles && rows.iter().any(|r| r.value != 1.0) {
        bail!("some unit oracle checks failed");
    }
    Ok(())
}

fn selftest(seed: u64) -> bool {
    let checks = run_checks(seed);
    for c in &checks {
        println!(
            "{} {:<28} value {:.3e} (threshold {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{}/{} checks passed", checks.len() - failed, checks.len());
    failed == 0
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Gen { config, seed, out } => gen(config.as_deref(), *seed, out),
        Command::Solve {
            bundle,
            task,
            penalty,
            lambda,
            lambda_rel,
            true_features,
            tol,
        } => solve(bundle, *task, *penalty, *lambda, *lambda_rel, *true_features, *tol),
        Command::Train {
            bundle,
            config,
            seed,
            out,
        } => train(bundle, config.as_deref(), *seed, out),
        Command::Metrics { bundle, checkpoint } => metrics(bundle, checkpoint),
        Command::Exp { id, config, seed, out } => exp(id, config.as_deref(), *seed, out.as_deref()),
        Command::Selftest { seed } => {
            return if selftest(*seed) { ExitCode::SUCCESS } else { ExitCode::from(2) };
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
