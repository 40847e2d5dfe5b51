//! Disentanglement of a bilevel-trained linear representation as a function
//! of the inner penalty, for sparse (Lasso) and dense (Ridge) inner problems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ResultRow;
use crate::bilevel::{BilevelConfig, InnerKind, LinearRepresentation, Trainer};
use crate::error::{Error, Result};
use crate::identifiability::{check_sufficient_support, SupportFamily};
use crate::linalg::{logspace, mean, sample_orthogonal, Matrix};
use crate::metrics::evaluate;
use crate::prox::{lambda_max, PenaltyKind, RegressionProblem};
use crate::rng::RngStream;
use crate::taskgen::{make_task, LatentSampler, LatentSpec, SupportSpec, TaskDataset};

/// One sweep point: latent correlation and support distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentSetting {
    pub label: String,
    pub rho: f64,
    pub support: SupportSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilevelExpConfig {
    pub noise_alpha: f64,
    pub n_per_task: usize,
    pub noise_sigma: f64,
    pub settings: Vec<DisentSetting>,
    pub arms: Vec<InnerKind>,
    pub seeds: usize,
    pub grid_points: usize,
    /// Lower end of the λ grid relative to the reference λ_max.
    pub grid_lo: f64,
    pub steps: usize,
    pub lr: f64,
    pub tasks_per_step: usize,
    pub split: f64,
    pub inner_tol: f64,
    /// Fresh latent samples used to score the learned representation.
    pub eval_samples: usize,
    /// Tasks averaged to fix the reference λ_max at initialization.
    pub reference_tasks: usize,
}

fn bernoulli_setting(rho: f64) -> DisentSetting {
    DisentSetting {
        label: format!("rho={rho}"),
        rho,
        support: SupportSpec::Bernoulli { p: 0.5 },
    }
}

impl Default for BilevelExpConfig {
    fn default() -> Self {
        BilevelExpConfig {
            noise_alpha: 1.0,
            n_per_task: 50,
            noise_sigma: 0.1,
            settings: vec![bernoulli_setting(0.0), bernoulli_setting(0.5), bernoulli_setting(0.9)],
            arms: vec![InnerKind::Lasso, InnerKind::Ridge],
            seeds: 5,
            grid_points: 20,
            grid_lo: 1e-3,
            steps: 500,
            lr: 0.5,
            tasks_per_step: 32,
            split: 0.5,
            inner_tol: 1e-10,
            eval_samples: 2000,
            reference_tasks: 32,
        }
    }
}

impl BilevelExpConfig {
    /// Support-condition violations: contiguous blocks of size 2, 3 and 6
    /// (6 means every task uses every feature) and dense Laplace weights,
    /// next to the Bernoulli reference, all at ρ = 0.
    pub fn violation_default() -> Self {
        let m = crate::taskgen::SHAPES3D_LEVELS.len();
        let mut settings = vec![DisentSetting {
            label: "bernoulli".into(),
            rho: 0.0,
            support: SupportSpec::Bernoulli { p: 0.5 },
        }];
        for size in [2, 3, 6] {
            settings.push(DisentSetting {
                label: format!("block={size}"),
                rho: 0.0,
                support: SupportSpec::contiguous_blocks(m, size),
            });
        }
        settings.push(DisentSetting {
            label: "laplace".into(),
            rho: 0.0,
            support: SupportSpec::LaplaceDense { mu: 0.0, b: 1.0 },
        });
        BilevelExpConfig {
            settings,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.grid_points == 0 || self.arms.is_empty() || self.settings.is_empty() {
            return Err(Error::InvalidArgument("need seeds, grid points, arms and settings".into()));
        }
        if !(self.grid_lo > 0.0 && self.grid_lo <= 1.0) {
            return Err(Error::InvalidArgument("grid_lo must lie in (0, 1]".into()));
        }
        if self.eval_samples < 3 || self.reference_tasks == 0 {
            return Err(Error::InvalidArgument("need eval samples and reference tasks".into()));
        }
        Ok(())
    }

    fn trainer_config(&self, lambda: f64, kind: InnerKind) -> BilevelConfig {
        BilevelConfig {
            lambda,
            kind,
            inner_tol: self.inner_tol,
            outer_lr: self.lr,
            outer_steps: self.steps,
            tasks_per_step: self.tasks_per_step,
            split: self.split,
            ..Default::default()
        }
    }
}

fn arm_label(kind: InnerKind) -> &'static str {
    match kind {
        InnerKind::Lasso => "inner_lasso",
        InnerKind::Ridge => "inner_ridge",
    }
}

/// Everything shared by the runs of one (seed, setting) pair.
struct World {
    sampler: LatentSampler,
    mixing: Matrix,
    init: LinearRepresentation,
    support: SupportSpec,
    task_rng: RngStream,
    eval_rng: RngStream,
    n_per_task: usize,
    noise_sigma: f64,
}

impl World {
    fn task(&self, step: usize, index: usize) -> Result<TaskDataset> {
        let mut rng = self.task_rng.child(step as u64).child(index as u64);
        let mut t = make_task(&self.sampler, &self.support, self.n_per_task, self.noise_sigma, &mut rng)?;
        t.x = t.f_true.matmul_t(&self.mixing);
        Ok(t)
    }

    /// Mean λ_max of the inner problem at the initial representation.
    fn reference_lambda(&self, kind: InnerKind, count: usize, split: f64) -> Result<f64> {
        let mut acc = Vec::with_capacity(count);
        for i in 0..count {
            let (train, _) = self.task(usize::MAX, i)?.split(split);
            let f = self.init.features(&train.x);
            let p = RegressionProblem::lasso(f, &train.y, 0.0)?;
            acc.push(match kind {
                InnerKind::Lasso => lambda_max(&p, PenaltyKind::Lasso),
                InnerKind::Ridge => lambda_max(&p, PenaltyKind::Ridge),
            });
        }
        Ok(mean(&acc))
    }
}

fn build_world(cfg: &BilevelExpConfig, setting: &DisentSetting, idx: usize, seed: u64) -> Result<World> {
    let rng = RngStream::new(seed);
    let spec = LatentSpec::shapes3d(cfg.noise_alpha, setting.rho);
    let m = spec.m;
    setting.support.validate(m)?;
    let sampler = LatentSampler::new(&spec, &mut rng.child_named(&format!("grid-{idx}")))?;
    let mixing = sample_orthogonal(m, &mut rng.child_named("mixing"));
    let init = LinearRepresentation::random(m, m, true, &mut rng.child_named("init"));
    Ok(World {
        sampler,
        mixing,
        init,
        support: setting.support.clone(),
        task_rng: rng.child_named(&format!("tasks-{idx}")),
        eval_rng: rng.child_named(&format!("eval-{idx}")),
        n_per_task: cfg.n_per_task,
        noise_sigma: cfg.noise_sigma,
    })
}

fn run_world(cfg: &BilevelExpConfig, setting: &DisentSetting, idx: usize, seed: u64, experiment: &str) -> Result<Vec<ResultRow>> {
    let world = build_world(cfg, setting, idx, seed)?;
    let m = world.init.m();
    let row = |arm: &str, lambda: f64, rel: f64, metric: &str, value: f64| ResultRow {
        experiment: experiment.into(),
        arm: arm.into(),
        setting: setting.label.clone(),
        seed,
        n: cfg.n_per_task,
        lambda,
        lambda_rel: rel,
        metric: metric.into(),
        value,
    };
    let mut rows = Vec::new();

    // support family realized by the first steps' tasks
    let observed: Vec<Vec<usize>> = (0..cfg.steps.clamp(1, 50))
        .flat_map(|s| (0..cfg.tasks_per_step).map(move |i| (s, i)))
        .map(|(s, i)| world.task(s, i).map(|t| t.support_true))
        .collect::<Result<_>>()?;
    let fam = SupportFamily::from_observed(m, observed.iter().map(|s| s.as_slice()))?;
    let holds = check_sufficient_support(&fam).holds();
    rows.push(row("tasks", 0.0, 0.0, "sufficient_support", if holds { 1.0 } else { 0.0 }));

    let mut eval_rng = world.eval_rng.clone();
    let z_eval = world.sampler.sample(cfg.eval_samples, &mut eval_rng);
    let x_eval = z_eval.matmul_t(&world.mixing);

    for &kind in &cfg.arms {
        let arm = arm_label(kind);
        let lref = world.reference_lambda(kind, cfg.reference_tasks, cfg.split)?;
        let grid = logspace(cfg.grid_lo, 1.0, cfg.grid_points);
        for &rel in &grid {
            let lambda = rel * lref;
            let mut trainer = Trainer::new(cfg.trainer_config(lambda, kind), world.init.clone())?;
            let mut diverged = false;
            for step in 0..cfg.steps {
                let tasks: Vec<TaskDataset> = (0..cfg.tasks_per_step)
                    .map(|i| world.task(step, i))
                    .collect::<Result<_>>()?;
                match trainer.step(&tasks) {
                    Ok(_) => {}
                    Err(Error::Diverged { step, loss, .. }) => {
                        log::warn!("{experiment} {arm} {} λ={lambda:e}: diverged at step {step} (loss {loss:e})", setting.label);
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            let trace = trainer.trace();
            let tail = &trace.steps[trace.steps.len().saturating_sub(50)..];
            let used: Vec<_> = tail.iter().filter(|s| s.tasks_used > 0).collect();
            let final_loss = mean(&used.iter().map(|s| s.outer_loss).collect::<Vec<_>>());
            let sparsity = mean(&used.iter().map(|s| s.inner_sparsity).collect::<Vec<_>>());
            let z_learned = trainer.rep().features(&x_eval);
            let report = evaluate(&z_eval, &z_learned)?;
            rows.push(row(arm, lambda, rel, "mcc", report.mcc));
            rows.push(row(arm, lambda, rel, "r_score", report.r_score));
            rows.push(row(arm, lambda, rel, "dci_d", report.dci_d));
            rows.push(row(arm, lambda, rel, "dci_c", report.dci_c));
            rows.push(row(arm, lambda, rel, "outer_loss", final_loss));
            rows.push(row(arm, lambda, rel, "inner_support_frac", sparsity));
            rows.push(row(arm, lambda, rel, "diverged", if diverged { 1.0 } else { 0.0 }));
        }
    }
    Ok(rows)
}

fn run_sweep(cfg: &BilevelExpConfig, seed: u64, experiment: &str) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.settings.len())
        .flat_map(|s| (0..cfg.seeds as u64).map(move |i| (s, seed.wrapping_add(i))))
        .collect();
    let parts: Vec<Vec<ResultRow>> = jobs
        .into_par_iter()
        .map(|(s, sd)| run_world(cfg, &cfg.settings[s], s, sd, experiment))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// MCC, R and DCI of the trained representation over the λ grid, per inner
/// kind, latent correlation and seed.
pub fn run_e2(cfg: &BilevelExpConfig, seed: u64) -> Result<Vec<ResultRow>> {
    run_sweep(cfg, seed, "E2")
}

/// As [`run_e2`] over the support-violation settings.
pub fn run_e3(cfg: &BilevelExpConfig, seed: u64) -> Result<Vec<ResultRow>> {
    run_sweep(cfg, seed, "E3")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sweep_runs() {
        let cfg = BilevelExpConfig {
            settings: vec![bernoulli_setting(0.0)],
            seeds: 1,
            grid_points: 2,
            steps: 5,
            eval_samples: 100,
            reference_tasks: 4,
            ..Default::default()
        };
        let rows = run_e2(&cfg, 1).unwrap();
        // one support row + 2 arms × 2 λ × 7 metrics
        assert_eq!(rows.len(), 1 + 2 * 2 * 7);
        assert!(rows.iter().all(|r| r.value.is_finite()));
    }
}
