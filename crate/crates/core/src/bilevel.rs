//! Bilevel training of a shared linear representation `x ↦ Θx`.
//!
//! Each task fits a sparse (or Ridge) linear predictor on the learned
//! features of its training split; the outer loss is the squared error of
//! that predictor on the held-out split. Hypergradients come from implicit
//! differentiation of the inner optimality conditions with the support and
//! signs of the inner solution held fixed.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_psd, Matrix};
use crate::prox::{lasso_cd, ridge_solve, PrimalWeights, RegressionProblem, SolverSettings};
use crate::rng::RngStream;
use crate::taskgen::TaskDataset;

/// Learned map `x ↦ Θx` with `Θ` of shape `m×d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRepresentation {
    pub theta: Matrix,
    pub row_norm_constraint: bool,
}

impl LinearRepresentation {
    /// Wraps `theta`, normalizing its rows when constrained.
    pub fn new(theta: Matrix, row_norm_constraint: bool) -> Result<Self> {
        if row_norm_constraint && (0..theta.rows()).any(|i| theta.row(i).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidArgument("cannot normalize a zero row of theta".into()));
        }
        let mut rep = LinearRepresentation {
            theta,
            row_norm_constraint,
        };
        rep.project();
        Ok(rep)
    }

    /// Gaussian initialization.
    pub fn random(m: usize, d: usize, row_norm_constraint: bool, rng: &mut RngStream) -> Self {
        let theta = Matrix::gaussian(m, d, rng);
        LinearRepresentation::new(theta, row_norm_constraint).expect("gaussian rows are nonzero")
    }

    pub fn m(&self) -> usize {
        self.theta.rows()
    }

    pub fn d(&self) -> usize {
        self.theta.cols()
    }

    /// Learned features `X Θᵀ`.
    pub fn features(&self, x: &Matrix) -> Matrix {
        x.matmul_t(&self.theta)
    }

    /// Rescales rows to unit norm when constrained.
    pub fn project(&mut self) {
        if self.row_norm_constraint {
            self.theta.normalize_rows();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerKind {
    Lasso,
    Ridge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilevelConfig {
    /// Shared inner penalty.
    pub lambda: f64,
    pub kind: InnerKind,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub outer_lr: f64,
    pub outer_steps: usize,
    pub tasks_per_step: usize,
    /// Fraction of each task's samples held out for the outer loss.
    pub split: f64,
    /// Training aborts once the outer loss exceeds this multiple of the
    /// first step's loss.
    pub divergence_factor: f64,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            lambda: 0.1,
            kind: InnerKind::Lasso,
            inner_tol: 1e-10,
            inner_max_iters: 10_000,
            outer_lr: 0.05,
            outer_steps: 2000,
            tasks_per_step: 8,
            split: 0.5,
            divergence_factor: 1e3,
        }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidArgument(format!("split {} outside (0,1)", self.split)));
        }
        if !(self.outer_lr > 0.0) || self.tasks_per_step == 0 || !(self.inner_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "outer_lr, tasks_per_step and inner_tol must be positive".into(),
            ));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidArgument("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }

    pub fn inner_settings(&self) -> SolverSettings {
        SolverSettings {
            max_iters: self.inner_max_iters,
            tol: self.inner_tol,
            warm_start: None,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fits the inner predictor on `X Θᵀ`: Lasso `(1/2n)‖y − Fw‖² + λ‖w‖₁` or
/// Ridge `(1/2n)‖y − Fw‖² + (λ/2)‖w‖²`.
pub fn inner_solve(
    rep: &LinearRepresentation,
    task: &TaskDataset,
    lambda: f64,
    kind: InnerKind,
    settings: &SolverSettings,
) -> Result<PrimalWeights> {
    let f = rep.features(&task.x);
    match kind {
        InnerKind::Lasso => lasso_cd(&RegressionProblem::lasso(f, &task.y, lambda)?, settings),
        InnerKind::Ridge => ridge_solve(&RegressionProblem::ridge(f, &task.y, lambda)?),
    }
}

/// Inner solution refined by solving its optimality conditions on the
/// support: `(A_SᵀA_S + n·l2·I) w_S = A_Sᵀy − nλ·sign(w_S)`.
struct Polished {
    w: Vec<f64>,
    support: Vec<usize>,
    /// Cholesky factor of the restricted system matrix.
    chol: Option<Matrix>,
}

fn polish(
    a: &Matrix,
    y: &[f64],
    lambda: f64,
    kind: InnerKind,
    settings: &SolverSettings,
) -> Result<Polished> {
    let n = a.rows() as f64;
    let m = a.cols();
    let (support, signs, l2, l1) = match kind {
        InnerKind::Lasso => {
            let p = RegressionProblem::lasso(a.clone(), y, lambda)?;
            let sol = lasso_cd(&p, settings)?;
            let s = sol.support().to_vec();
            let signs: Vec<f64> = s.iter().map(|&j| sol.vector()[j].signum()).collect();
            (s, signs, 0.0, lambda)
        }
        InnerKind::Ridge => ((0..m).collect(), vec![0.0; m], lambda, 0.0),
    };
    let mut w = vec![0.0; m];
    if support.is_empty() {
        return Ok(Polished {
            w,
            support,
            chol: None,
        });
    }
    let a_s = a.select_cols(&support);
    let mut g = a_s.gram();
    for i in 0..support.len() {
        g[(i, i)] += n * l2;
    }
    let mut b = a_s.t_matvec(y);
    for (bi, s) in b.iter_mut().zip(&signs) {
        *bi -= n * l1 * s;
    }
    let chol = g.cholesky().map_err(|_| {
        Error::Singular(format!("restricted Gram on support of size {}", support.len()))
    })?;
    let ws = solve_psd(&g, &b)?;
    for (&j, v) in support.iter().zip(&ws) {
        w[j] = *v;
    }
    Ok(Polished {
        w,
        support,
        chol: Some(chol),
    })
}

/// Outer loss `(1/2n_val)‖y_val − X_val Θᵀ ŵ‖²` at the polished inner
/// solution fitted on `train`.
pub fn outer_loss(
    rep: &LinearRepresentation,
    train: &TaskDataset,
    val: &TaskDataset,
    lambda: f64,
    kind: InnerKind,
    settings: &SolverSettings,
) -> Result<f64> {
    let a = rep.features(&train.x);
    let p = polish(&a, &train.y, lambda, kind, settings)?;
    let b = rep.features(&val.x);
    let pred = b.matvec(&p.w);
    let nv = val.n() as f64;
    Ok(val.y.iter().zip(&pred).map(|(y, q)| (y - q).powi(2)).sum::<f64>() / (2.0 * nv))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypergradient {
    /// `∂ outer / ∂Θ`, `m×d`.
    pub grad: Matrix,
    pub outer_loss: f64,
    pub support: Vec<usize>,
}

/// Gradient of [`outer_loss`] with respect to `Θ`, by the implicit function
/// theorem applied to the inner optimality conditions with the support and
/// signs frozen.
pub fn hypergradient(
    rep: &LinearRepresentation,
    train: &TaskDataset,
    val: &TaskDataset,
    lambda: f64,
    kind: InnerKind,
    settings: &SolverSettings,
) -> Result<Hypergradient> {
    let (m, d) = (rep.m(), rep.d());
    let a = rep.features(&train.x);
    let p = polish(&a, &train.y, lambda, kind, settings)?;
    let b = rep.features(&val.x);
    let nv = val.n() as f64;
    let r_val: Vec<f64> = val.y.iter().zip(b.matvec(&p.w)).map(|(y, q)| y - q).collect();
    let loss = dot(&r_val, &r_val) / (2.0 * nv);
    let mut grad = Matrix::zeros(m, d);
    let Some(chol) = p.chol else {
        return Ok(Hypergradient {
            grad,
            outer_loss: loss,
            support: p.support,
        });
    };
    let s = &p.support;

    // direct term: Θ enters the validation predictions X_val Θᵀ ŵ
    let xv_r = val.x.t_matvec(&r_val);
    for &a_idx in s {
        let wa = p.w[a_idx];
        for (g, v) in grad.row_mut(a_idx).iter_mut().zip(&xv_r) {
            *g -= wa * v / nv;
        }
    }

    // implicit term: q = G⁻¹ ∂L/∂w_S, then ∂L/∂Θ_S = (q rᵀ − ŵ (A_S q)ᵀ) X_train
    let bv_r = b.t_matvec(&r_val);
    let g_w: Vec<f64> = s.iter().map(|&j| -bv_r[j] / nv).collect();
    let q = crate::linalg::cholesky_solve(&chol, &g_w);
    let a_s = a.select_cols(s);
    let aq = a_s.matvec(&q);
    let r_tr: Vec<f64> = train.y.iter().zip(a.matvec(&p.w)).map(|(y, v)| y - v).collect();
    let xt_r = train.x.t_matvec(&r_tr);
    let xt_aq = train.x.t_matvec(&aq);
    for (i, &a_idx) in s.iter().enumerate() {
        let wa = p.w[a_idx];
        let qa = q[i];
        for ((g, u), v) in grad.row_mut(a_idx).iter_mut().zip(&xt_r).zip(&xt_aq) {
            *g += qa * u - wa * v;
        }
    }
    Ok(Hypergradient {
        grad,
        outer_loss: loss,
        support: p.support,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Mean outer loss over the tasks used, before the update.
    pub outer_loss: f64,
    /// Mean `|S| / m` of the inner solutions.
    pub inner_sparsity: f64,
    pub tasks_used: usize,
    pub tasks_skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.outer_loss).collect()
    }
}

/// Supplies the task for `(step, index)`; must be deterministic so that runs
/// do not depend on scheduling.
pub trait TaskSource: Sync {
    fn task(&self, step: usize, index: usize) -> Result<TaskDataset>;
}

impl<F> TaskSource for F
where
    F: Fn(usize, usize) -> Result<TaskDataset> + Sync,
{
    fn task(&self, step: usize, index: usize) -> Result<TaskDataset> {
        self(step, index)
    }
}

/// Projected gradient descent on `Θ`, one step at a time. Keeps the trace
/// when a step fails, including on divergence.
pub struct Trainer {
    cfg: BilevelConfig,
    rep: LinearRepresentation,
    trace: TrainTrace,
    initial_loss: Option<f64>,
}

impl Trainer {
    pub fn new(cfg: BilevelConfig, init: LinearRepresentation) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            cfg,
            rep: init,
            trace: TrainTrace::default(),
            initial_loss: None,
        })
    }

    pub fn rep(&self) -> &LinearRepresentation {
        &self.rep
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (LinearRepresentation, TrainTrace) {
        (self.rep, self.trace)
    }

    /// One outer step on the given tasks. Tasks whose inner problem fails
    /// (singular restricted Gram, no convergence) are skipped.
    pub fn step(&mut self, tasks: &[TaskDataset]) -> Result<&StepRecord> {
        let settings = self.cfg.inner_settings();
        let rep = &self.rep;
        let cfg = &self.cfg;
        let results: Vec<Result<Hypergradient>> = tasks
            .par_iter()
            .map(|t| {
                let (train, val) = t.split(cfg.split);
                hypergradient(rep, &train, &val, cfg.lambda, cfg.kind, &settings)
            })
            .collect();
        let (m, d) = (self.rep.m(), self.rep.d());
        let mut grad = Matrix::zeros(m, d);
        let mut loss = 0.0;
        let mut sparsity = 0.0;
        let mut used = 0usize;
        let mut skipped = 0usize;
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(h) => {
                    grad = grad.add(&h.grad);
                    loss += h.outer_loss;
                    sparsity += h.support.len() as f64 / m as f64;
                    used += 1;
                }
                Err(e) => {
                    log::debug!("step {}: task {i} skipped: {e}", self.trace.steps.len());
                    skipped += 1;
                }
            }
        }
        let step = self.trace.steps.len();
        let record = StepRecord {
            step,
            outer_loss: if used > 0 { loss / used as f64 } else { f64::NAN },
            inner_sparsity: if used > 0 { sparsity / used as f64 } else { f64::NAN },
            tasks_used: used,
            tasks_skipped: skipped,
        };
        if used > 0 {
            let initial = *self.initial_loss.get_or_insert(record.outer_loss);
            let limit = self.cfg.divergence_factor * initial;
            let diverged = !record.outer_loss.is_finite() || (initial > 0.0 && record.outer_loss > limit);
            self.trace.steps.push(record);
            if diverged {
                let loss = self.trace.steps[step].outer_loss;
                return Err(Error::Diverged { step, loss, limit });
            }
            let scale = -self.cfg.outer_lr / used as f64;
            self.rep.theta = self.rep.theta.add(&grad.scaled(scale));
            self.rep.project();
        } else {
            self.trace.steps.push(record);
        }
        Ok(&self.trace.steps[step])
    }
}

/// Runs `cfg.outer_steps` steps with `cfg.tasks_per_step` fresh tasks each.
pub fn train(
    cfg: &BilevelConfig,
    init: LinearRepresentation,
    source: &dyn TaskSource,
) -> Result<(LinearRepresentation, TrainTrace)> {
    let mut trainer = Trainer::new(cfg.clone(), init)?;
    for step in 0..cfg.outer_steps {
        let tasks: Vec<TaskDataset> = (0..cfg.tasks_per_step)
            .into_par_iter()
            .map(|i| source.task(step, i))
            .collect::<Result<_>>()?;
        trainer.step(&tasks)?;
    }
    Ok(trainer.into_parts())
}

pub const CHECKPOINT_FORMAT: &str = "spardis-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub m: usize,
    pub d: usize,
    pub step: usize,
    pub config_hash: String,
    pub row_norm_constraint: bool,
}

/// One JSON header line, then `m` comma-separated rows of `Θ`.
pub fn write_checkpoint(path: &Path, rep: &LinearRepresentation, step: usize, cfg: &BilevelConfig) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        m: rep.m(),
        d: rep.d(),
        step,
        config_hash: cfg.hash(),
        row_norm_constraint: rep.row_norm_constraint,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for i in 0..rep.m() {
        let row: Vec<String> = rep.theta.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(LinearRepresentation, CheckpointHeader)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let first = lines
        .next()
        .ok_or_else(|| bad("empty checkpoint".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(&first)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown format {:?}", header.format)));
    }
    let mut data = Vec::with_capacity(header.m * header.d);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        for field in line.split(',') {
            data.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("not a number: {field:?}")))?,
            );
        }
    }
    if data.len() != header.m * header.d {
        return Err(bad(format!("expected {} entries, found {}", header.m * header.d, data.len())));
    }
    let theta = Matrix::from_vec(header.m, header.d, data)?;
    let rep = LinearRepresentation {
        theta,
        row_norm_constraint: header.row_norm_constraint,
    };
    Ok((rep, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{make_task, task_with_weight, LatentSampler, LatentSpec, SupportSpec};

    fn sampler(m: usize, seed: u64) -> LatentSampler {
        LatentSampler::new(&LatentSpec::equicorrelated(m, 0.0), &mut RngStream::new(seed)).unwrap()
    }

    fn tight() -> SolverSettings {
        SolverSettings {
            max_iters: 100_000,
            tol: 1e-12,
            warm_start: None,
        }
    }

    #[test]
    fn rows_normalized_on_construction() {
        let rep = LinearRepresentation::new(Matrix::from_diag(&[3.0, -0.5]), true).unwrap();
        assert_eq!(rep.theta, Matrix::from_diag(&[1.0, -1.0]));
        assert!(LinearRepresentation::new(Matrix::zeros(2, 2), true).is_err());
    }

    #[test]
    fn lambda_zero_inner_is_ols() {
        let s = sampler(3, 1);
        let mut rng = RngStream::new(2);
        let t = make_task(&s, &SupportSpec::Full, 40, 0.3, &mut rng).unwrap();
        let rep = LinearRepresentation::new(Matrix::identity(3), false).unwrap();
        let w = inner_solve(&rep, &t, 0.0, InnerKind::Ridge, &tight()).unwrap();
        let ols = crate::linalg::lstsq(&t.x, &t.y).unwrap();
        for (a, b) in w.vector().iter().zip(&ols) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_support_gives_zero_gradient() {
        let s = sampler(3, 3);
        let mut rng = RngStream::new(4);
        let t = make_task(&s, &SupportSpec::Full, 40, 0.1, &mut rng).unwrap();
        let (tr, va) = t.split(0.5);
        let rep = LinearRepresentation::new(Matrix::identity(3), true).unwrap();
        let h = hypergradient(&rep, &tr, &va, 1e6, InnerKind::Lasso, &tight()).unwrap();
        assert!(h.support.is_empty());
        assert_eq!(h.grad, Matrix::zeros(3, 3));
    }

    #[test]
    fn scalar_chain_rule() {
        // m = d = 1: a = θx, w = (aᵀy − nλ)/aᵀa for w > 0, outer loss
        // (1/2n_v)‖y_v − θ x_v w‖². Differentiate by hand.
        let train = TaskDataset {
            f_true: Matrix::from_vec(3, 1, vec![1.0, 2.0, -1.0]).unwrap(),
            x: Matrix::from_vec(3, 1, vec![1.0, 2.0, -1.0]).unwrap(),
            y: vec![1.2, 2.1, -0.8],
            w_true: vec![1.0],
            support_true: vec![0],
            noise_sigma: 0.1,
        };
        let val = TaskDataset {
            x: Matrix::from_vec(2, 1, vec![0.5, -1.5]).unwrap(),
            f_true: Matrix::from_vec(2, 1, vec![0.5, -1.5]).unwrap(),
            y: vec![0.4, -1.6],
            ..train.clone()
        };
        let theta = 0.7;
        let lambda = 0.05;
        let (sxx, sxy, n): (f64, f64, f64) = (6.0, 1.2 + 4.2 + 0.8, 3.0);
        let w = (theta * sxy - n * lambda) / (theta * theta * sxx);
        let dw = (sxy * theta * theta * sxx - (theta * sxy - n * lambda) * 2.0 * theta * sxx)
            / (theta * theta * sxx).powi(2);
        let (svx, svxy, nv) = (0.25 + 2.25, 0.2 + 2.4, 2.0);
        // L = (1/2nv) Σ (y − θ w x)²,  dL/dθ = −(1/nv) Σ (y − θwx) x (w + θ dw)
        let u = theta * w;
        let du = w + theta * dw;
        let expected = -(svxy - u * svx) * du / nv;
        let rep = LinearRepresentation::new(Matrix::from_vec(1, 1, vec![theta]).unwrap(), false).unwrap();
        let h = hypergradient(&rep, &train, &val, lambda, InnerKind::Lasso, &tight()).unwrap();
        assert!((h.grad[(0, 0)] - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn ground_truth_is_at_noise_floor() {
        let m = 4;
        let s = sampler(m, 5);
        let sigma: f64 = 0.1;
        let source = move |step: usize, i: usize| {
            let mut rng = RngStream::new(6).child(step as u64).child(i as u64);
            make_task(&s, &SupportSpec::Bernoulli { p: 0.5 }, 400, sigma, &mut rng)
        };
        let cfg = BilevelConfig {
            lambda: 1e-4,
            kind: InnerKind::Ridge,
            outer_steps: 1,
            ..Default::default()
        };
        let p = crate::assignment::Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let theta = Matrix::from_diag(&[2.0, -1.0, 0.5, 3.0]).matmul(&p.to_matrix());
        let rep = LinearRepresentation::new(theta, true).unwrap();
        let (_, trace) = train(&cfg, rep, &source).unwrap();
        let floor = sigma * sigma / 2.0;
        assert!((trace.steps[0].outer_loss - floor).abs() < 0.3 * floor);
    }

    #[test]
    fn divergence_is_reported_with_trace() {
        let s = sampler(2, 7);
        let mut rng = RngStream::new(8);
        let tasks: Vec<TaskDataset> = (0..4)
            .map(|_| make_task(&s, &SupportSpec::Full, 20, 0.1, &mut rng).unwrap())
            .collect();
        let cfg = BilevelConfig {
            lambda: 1e-3,
            kind: InnerKind::Ridge,
            divergence_factor: 1.0 + 1e-12,
            ..Default::default()
        };
        let rep = LinearRepresentation::new(Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, -0.9]]).unwrap(), false).unwrap();
        let mut trainer = Trainer::new(cfg, rep).unwrap();
        trainer.step(&tasks).unwrap();
        let mut worse = tasks.clone();
        for t in &mut worse {
            t.y.iter_mut().for_each(|v| *v *= 10.0);
        }
        assert!(matches!(trainer.step(&worse), Err(Error::Diverged { step: 1, .. })));
        assert_eq!(trainer.trace().steps.len(), 2);
    }

    #[test]
    fn singular_task_is_skipped() {
        let s = sampler(2, 9);
        let mut rng = RngStream::new(10);
        let good = make_task(&s, &SupportSpec::Full, 20, 0.1, &mut rng).unwrap();
        // duplicated feature column: restricted Gram of the Ridge-free Lasso
        // fit cannot be inverted when both features are active
        let mut bad = task_with_weight(&s, vec![1.0, 1.0], vec![0, 1], 20, 0.0, &mut rng);
        let c = bad.x.col(0);
        bad.x.set_col(1, &c);
        let cfg = BilevelConfig {
            lambda: 0.0,
            kind: InnerKind::Ridge,
            ..Default::default()
        };
        let rep = LinearRepresentation::new(Matrix::identity(2), true).unwrap();
        let mut trainer = Trainer::new(cfg, rep).unwrap();
        let rec = trainer.step(&[good, bad]).unwrap();
        assert_eq!((rec.tasks_used, rec.tasks_skipped), (1, 1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = RngStream::new(11);
        let rep = LinearRepresentation::random(3, 5, true, &mut rng);
        let cfg = BilevelConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.ckpt");
        write_checkpoint(&path, &rep, 17, &cfg).unwrap();
        let (back, header) = read_checkpoint(&path).unwrap();
        assert_eq!(back, rep);
        assert_eq!(header.step, 17);
        assert_eq!(header.config_hash, cfg.hash());
        assert_eq!(header.config_hash.len(), 64);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BilevelConfig::default();
        cfg.split = 1.0;
        assert!(cfg.validate().is_err());
        cfg.split = 0.5;
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
    }
}
