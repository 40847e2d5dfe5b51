//! Sample efficiency of sparse vs dense predictors on disentangled and
//! linearly entangled features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ResultRow;
use crate::error::{Error, Result};
use crate::linalg::{logspace, sample_orthogonal, Matrix};
use crate::metrics::r2;
use crate::prox::{lambda_max, lasso_cd, ridge_path, PenaltyKind, PrimalWeights, RegressionProblem, SolverSettings};
use crate::rng::RngStream;
use crate::taskgen::{sample_task_weight, task_with_weight, LatentSampler, LatentSpec, SupportSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralizationConfig {
    pub m: usize,
    pub ar_base: f64,
    pub noise_var: f64,
    /// Support sizes as fractions `ℓ/m`.
    pub sparsity: Vec<f64>,
    pub n_train: Vec<usize>,
    pub n_test: usize,
    pub folds: usize,
    pub seeds: usize,
    pub grid_points: usize,
    /// Lower end of the λ grid relative to λ_max.
    pub grid_lo: f64,
    /// Lower end of the Ridge grid relative to its scale `‖F‖²_F / n`.
    pub ridge_grid_lo: f64,
    /// Lasso KKT tolerance as a fraction of λ_max.
    pub solver_tol_rel: f64,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        GeneralizationConfig {
            m: 100,
            ar_base: 0.9,
            noise_var: 0.04,
            sparsity: vec![0.05, 0.2, 0.4, 0.8],
            n_train: vec![25, 50, 75, 100, 125, 150],
            n_test: 1000,
            folds: 5,
            seeds: 10,
            grid_points: 20,
            grid_lo: 1e-3,
            ridge_grid_lo: 1e-3,
            solver_tol_rel: 1e-5,
        }
    }
}

impl GeneralizationConfig {
    fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.seeds == 0 || self.grid_points == 0 || self.n_test < 2 {
            return Err(Error::InvalidArgument("E1 needs folds >= 2, seeds, grid points and a test set".into()));
        }
        if !(self.solver_tol_rel > 0.0) {
            return Err(Error::InvalidArgument("solver_tol_rel must be > 0".into()));
        }
        if !(self.grid_lo > 0.0 && self.grid_lo <= 1.0 && self.ridge_grid_lo > 0.0 && self.ridge_grid_lo <= 1.0) {
            return Err(Error::InvalidArgument("grid lower ends must lie in (0, 1]".into()));
        }
        if self.n_train.iter().any(|&n| n < self.folds) {
            return Err(Error::InvalidArgument("every training size needs at least one sample per fold".into()));
        }
        if self.sparsity.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::InvalidArgument("sparsity fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Arm {
    DisLasso,
    EntLasso,
    DisRidge,
    EntRidge,
}

impl Arm {
    const ALL: [Arm; 4] = [Arm::DisLasso, Arm::EntLasso, Arm::DisRidge, Arm::EntRidge];

    fn label(self) -> &'static str {
        match self {
            Arm::DisLasso => "dis_lasso",
            Arm::EntLasso => "ent_lasso",
            Arm::DisRidge => "dis_ridge",
            Arm::EntRidge => "ent_ridge",
        }
    }

    fn entangled(self) -> bool {
        matches!(self, Arm::EntLasso | Arm::EntRidge)
    }

    fn penalty(self) -> PenaltyKind {
        match self {
            Arm::DisLasso | Arm::EntLasso => PenaltyKind::Lasso,
            Arm::DisRidge | Arm::EntRidge => PenaltyKind::Ridge,
        }
    }
}

/// Fits along a descending λ grid, warm-starting each Lasso solve from the
/// previous one (Ridge shares one eigendecomposition). Returns one
/// coefficient vector per grid point.
fn fit_path(f: &Matrix, y: &[f64], grid: &[f64], kind: PenaltyKind, tol: f64) -> Result<Vec<Vec<f64>>> {
    if kind == PenaltyKind::Ridge {
        return ridge_path(f, y, grid);
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut warm: Option<PrimalWeights> = None;
    for &lam in grid {
        let p = RegressionProblem::lasso(f.clone(), y, lam)?;
        let mut s = SolverSettings {
            max_iters: 100_000,
            tol,
            warm_start: None,
        };
        if let Some(w0) = warm.take() {
            s = s.warm(w0);
        }
        let w = lasso_cd(&p, &s)?;
        out.push(w.vector().to_vec());
        warm = Some(w);
    }
    Ok(out)
}

fn mse(f: &Matrix, y: &[f64], w: &[f64]) -> f64 {
    f.matvec(w).iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
}

/// λ chosen by K-fold CV (fold = index mod K), then refit on all samples.
/// Returns `(λ, λ/λ_max, w)`.
fn cv_fit(f: &Matrix, y: &[f64], kind: PenaltyKind, cfg: &GeneralizationConfig) -> Result<(f64, f64, Vec<f64>)> {
    let n = f.rows();
    let full = RegressionProblem::lasso(f.clone(), y, 0.0)?;
    let (lmax, lo) = match kind {
        PenaltyKind::Ridge => (lambda_max(&full, PenaltyKind::Ridge), cfg.ridge_grid_lo),
        _ => (lambda_max(&full, PenaltyKind::Lasso), cfg.grid_lo),
    };
    if !(lmax > 0.0) {
        return Ok((0.0, 0.0, vec![0.0; f.cols()]));
    }
    let tol = match kind {
        PenaltyKind::Ridge => 0.0,
        _ => cfg.solver_tol_rel * lmax,
    };
    let mut grid = logspace(lo * lmax, lmax, cfg.grid_points);
    grid.reverse();
    let mut err = vec![0.0; grid.len()];
    for fold in 0..cfg.folds {
        let tr: Vec<usize> = (0..n).filter(|i| i % cfg.folds != fold).collect();
        let va: Vec<usize> = (0..n).filter(|i| i % cfg.folds == fold).collect();
        let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
        let yva: Vec<f64> = va.iter().map(|&i| y[i]).collect();
        let (ftr, fva) = (f.select_rows(&tr), f.select_rows(&va));
        for (e, w) in err.iter_mut().zip(fit_path(&ftr, &ytr, &grid, kind, tol)?) {
            *e += mse(&fva, &yva, &w);
        }
    }
    // first minimum along the descending grid: ties go to the larger λ
    let best = (0..grid.len()).fold(0, |b, i| if err[i] < err[b] { i } else { b });
    let w = fit_path(f, y, &grid[..=best], kind, tol)?.pop().expect("nonempty path");
    Ok((grid[best], grid[best] / lmax, w))
}

fn run_seed(cfg: &GeneralizationConfig, seed: u64) -> Result<Vec<ResultRow>> {
    let rng = RngStream::new(seed);
    let spec = LatentSpec::ar_decay(cfg.m, cfg.ar_base);
    let sampler = LatentSampler::new(&spec, &mut rng.child_named("latent"))?;
    let l = sample_orthogonal(cfg.m, &mut rng.child_named("mixing"));
    let sigma = cfg.noise_var.sqrt();
    let mut rows = Vec::new();
    for (si, &ratio) in cfg.sparsity.iter().enumerate() {
        let support = SupportSpec::fraction(cfg.m, ratio);
        let (w, s) = sample_task_weight(&support, cfg.m, &mut rng.child_named(&format!("weights-{si}")));
        let mut test_rng = rng.child_named(&format!("test-{si}"));
        let test = task_with_weight(&sampler, w.clone(), s.clone(), cfg.n_test, sigma, &mut test_rng);
        let test_ent = test.f_true.matmul_t(&l);
        for &n in &cfg.n_train {
            let mut data_rng = rng.child_named(&format!("train-{si}-{n}"));
            let train = task_with_weight(&sampler, w.clone(), s.clone(), n, sigma, &mut data_rng);
            let train_ent = train.f_true.matmul_t(&l);
            for arm in Arm::ALL {
                let (ftr, fte) = if arm.entangled() {
                    (&train_ent, &test_ent)
                } else {
                    (&train.f_true, &test.f_true)
                };
                let (lam, rel, coef) = cv_fit(ftr, &train.y, arm.penalty(), cfg)?;
                let score = r2(&test.y, &fte.matvec(&coef))?;
                rows.push(ResultRow {
                    experiment: "E1".into(),
                    arm: arm.label().into(),
                    setting: format!("l/m={ratio}"),
                    seed,
                    n,
                    lambda: lam,
                    lambda_rel: rel,
                    metric: "r2".into(),
                    value: score,
                });
            }
        }
    }
    Ok(rows)
}

/// Test R² of four arms (Lasso/Ridge × disentangled/entangled features)
/// with λ chosen by cross-validation, for every support fraction, training
/// size and seed. Seeds are `seed, seed+1, ...`.
pub fn run_e1(cfg: &GeneralizationConfig, seed: u64) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let per_seed: Vec<Vec<ResultRow>> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|i| run_seed(cfg, seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}
