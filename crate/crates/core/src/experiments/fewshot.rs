//! Few-shot classification with the group-sparse multiclass SVM on a fixed
//! representation: accuracy, sparsity and feature usage along a λ₁ grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ResultRow;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::prox::SolverSettings;
use crate::rng::RngStream;
use crate::svm::{solve_dual_capped, sparsity, DualVariables, SvmProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    /// Representation width.
    pub m: usize,
    pub ways: usize,
    pub shots: usize,
    pub test_shots: usize,
    /// Features on which the class means of one task differ.
    pub informative: usize,
    /// Standard deviation of the informative mean coordinates.
    pub separation: f64,
    pub tasks: usize,
    pub seeds: usize,
    pub lambda2: f64,
    /// Ascending, nonnegative.
    pub lambda1_grid: Vec<f64>,
    pub tol: f64,
    /// Sweep budget per solve; unconverged solves are kept and counted.
    pub max_sweeps: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            m: 20,
            ways: 5,
            shots: 5,
            test_shots: 15,
            informative: 4,
            separation: 2.0,
            tasks: 20,
            seeds: 5,
            lambda2: 1.0,
            lambda1_grid: vec![0.0, 0.3, 1.0, 3.0, 10.0, 30.0],
            tol: 1e-8,
            max_sweeps: 200_000,
        }
    }
}

impl FewShotConfig {
    fn validate(&self) -> Result<()> {
        if self.ways < 2 || self.shots == 0 || self.test_shots == 0 || self.tasks == 0 || self.seeds == 0 {
            return Err(Error::InvalidArgument("need ways >= 2, shots, test shots, tasks and seeds".into()));
        }
        if self.informative == 0 || self.informative > self.m {
            return Err(Error::InvalidArgument("informative features must lie in 1..=m".into()));
        }
        if self.lambda1_grid.is_empty()
            || self.lambda1_grid[0] < 0.0
            || self.lambda1_grid.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidArgument("λ₁ grid must be nonnegative and strictly ascending".into()));
        }
        if !(self.lambda2 > 0.0) {
            return Err(Error::InvalidArgument("lambda2 must be > 0".into()));
        }
        Ok(())
    }
}

struct FewShotTask {
    train: Matrix,
    train_labels: Vec<usize>,
    test: Matrix,
    test_labels: Vec<usize>,
}

fn sample_task(cfg: &FewShotConfig, rng: &mut RngStream) -> FewShotTask {
    let feats = rng.sample_indices(cfg.m, cfg.informative);
    let means: Vec<Vec<f64>> = (0..cfg.ways)
        .map(|_| {
            let mut mu = vec![0.0; cfg.m];
            for &j in &feats {
                mu[j] = cfg.separation * rng.normal();
            }
            mu
        })
        .collect();
    let draw = |per_class: usize, rng: &mut RngStream| {
        let labels: Vec<usize> = (0..cfg.ways).flat_map(|c| std::iter::repeat(c).take(per_class)).collect();
        let x = Matrix::from_fn(labels.len(), cfg.m, |i, j| means[labels[i]][j] + rng.normal());
        (x, labels)
    };
    let (train, train_labels) = draw(cfg.shots, rng);
    let (test, test_labels) = draw(cfg.test_shots, rng);
    FewShotTask {
        train,
        train_labels,
        test,
        test_labels,
    }
}

fn accuracy(w: &Matrix, x: &Matrix, labels: &[usize]) -> f64 {
    let hits = (0..x.rows())
        .filter(|&i| {
            let scores: Vec<f64> = (0..w.rows()).map(|l| dot(w.row(l), x.row(i))).collect();
            let pred = (0..scores.len()).fold(0, |b, l| if scores[l] > scores[b] { l } else { b });
            pred == labels[i]
        })
        .count();
    hits as f64 / labels.len() as f64
}

struct GridPoint {
    accuracy: f64,
    sparsity: f64,
    gap: f64,
    converged: bool,
    usage: Vec<bool>,
}

/// Solves one task along the λ₁ grid, warm-starting each dual from the last.
fn solve_task(cfg: &FewShotConfig, task: &FewShotTask) -> Result<Vec<GridPoint>> {
    let base = SvmProblem::from_labels(task.train.clone(), &task.train_labels, cfg.ways, cfg.lambda1_grid[0], cfg.lambda2)?;
    let settings = SolverSettings {
        max_iters: cfg.max_sweeps,
        tol: cfg.tol,
        warm_start: None,
    };
    let mut dual: Option<DualVariables> = None;
    let mut out = Vec::with_capacity(cfg.lambda1_grid.len());
    for &l1 in &cfg.lambda1_grid {
        let prob = base.with_lambda1(l1);
        let init = match dual.take() {
            Some(d) => d,
            None => DualVariables::new(prob.onehot().clone())?,
        };
        let sol = solve_dual_capped(&prob, &settings, init)?;
        let w = sol.primal.matrix();
        let usage = (0..cfg.m).map(|j| (0..w.rows()).any(|l| w[(l, j)] != 0.0)).collect();
        out.push(GridPoint {
            accuracy: accuracy(w, &task.test, &task.test_labels),
            sparsity: sparsity(&sol.primal),
            gap: sol.gap,
            converged: sol.converged,
            usage,
        });
        dual = Some(sol.dual);
    }
    Ok(out)
}

fn run_seed(cfg: &FewShotConfig, seed: u64) -> Result<Vec<ResultRow>> {
    let rng = RngStream::new(seed);
    let g = cfg.lambda1_grid.len();
    let mut acc = vec![0.0; g];
    let mut sp = vec![0.0; g];
    let mut gap = vec![0.0f64; g];
    let mut unconverged = vec![0usize; g];
    let mut usage = vec![vec![0usize; cfg.m]; g];
    for t in 0..cfg.tasks {
        let task = sample_task(cfg, &mut rng.child_named("tasks").child(t as u64));
        for (i, p) in solve_task(cfg, &task)?.into_iter().enumerate() {
            acc[i] += p.accuracy;
            sp[i] += p.sparsity;
            gap[i] = gap[i].max(p.gap);
            unconverged[i] += usize::from(!p.converged);
            for (u, used) in usage[i].iter_mut().zip(p.usage) {
                *u += usize::from(used);
            }
        }
    }
    let n = cfg.ways * cfg.shots;
    let tasks = cfg.tasks as f64;
    let row = |l1: f64, metric: String, value: f64| ResultRow {
        experiment: "E4".into(),
        arm: "svm_group".into(),
        setting: format!("{}-way-{}-shot", cfg.ways, cfg.shots),
        seed,
        n,
        lambda: l1,
        lambda_rel: 0.0,
        metric,
        value,
    };
    let mut rows = Vec::new();
    for (i, &l1) in cfg.lambda1_grid.iter().enumerate() {
        rows.push(row(l1, "accuracy".into(), acc[i] / tasks));
        rows.push(row(l1, "sparsity".into(), sp[i] / tasks));
        rows.push(row(l1, "max_gap".into(), gap[i]));
        rows.push(row(l1, "unconverged".into(), unconverged[i] as f64 / tasks));
        for (j, &u) in usage[i].iter().enumerate() {
            rows.push(row(l1, format!("usage_f{j:02}"), u as f64 / tasks));
        }
    }
    Ok(rows)
}

/// Mean test accuracy, mean sparsity `1 − ‖W‖₂,₀/m`, worst duality gap,
/// fraction of solves that hit the sweep budget and per-feature usage
/// fraction over tasks, for every λ₁ and seed.
pub fn run_e4(cfg: &FewShotConfig, seed: u64) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let parts: Vec<Vec<ResultRow>> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|i| run_seed(cfg, seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}
