//! Proximal operators and coordinate-descent solvers for the Lasso, Ridge and
//! multi-target group Lasso.
//!
//! All regression objectives share one normalization:
//!
//! ```text
//! (1/2n) ‖Y − F Wᵀ‖² + λ ‖W‖₂,₁ + (λ₂/2) ‖W‖²
//! ```
//!
//! with `F` the `n×m` design, `Y` the `n×k` targets and `W` the `k×m`
//! coefficients. A block is a column of `W` (one feature across all targets),
//! so for `k = 1` the `L2,1` penalty is the plain `L1` norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, solve_psd, Matrix};

#[derive(Clone, Debug)]
pub struct RegressionProblem {
    pub features: Matrix,
    pub targets: Matrix,
    pub lambda: f64,
    pub l2_lambda: f64,
}

impl RegressionProblem {
    pub fn new(features: Matrix, targets: Matrix, lambda: f64, l2_lambda: f64) -> Result<Self> {
        if features.rows() != targets.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} target rows",
                features.rows(),
                targets.rows()
            )));
        }
        if features.rows() == 0 || features.cols() == 0 || targets.cols() == 0 {
            return Err(Error::Shape("empty regression problem".into()));
        }
        if !(lambda >= 0.0 && l2_lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "penalties must be nonnegative, got lambda={lambda} l2={l2_lambda}"
            )));
        }
        Ok(RegressionProblem {
            features,
            targets,
            lambda,
            l2_lambda,
        })
    }

    /// Single-target Lasso problem.
    pub fn lasso(features: Matrix, y: &[f64], lambda: f64) -> Result<Self> {
        let targets = Matrix::from_vec(y.len(), 1, y.to_vec())?;
        RegressionProblem::new(features, targets, lambda, 0.0)
    }

    /// Single-target Ridge problem with penalty `(λ/2)‖w‖²`.
    pub fn ridge(features: Matrix, y: &[f64], lambda: f64) -> Result<Self> {
        let targets = Matrix::from_vec(y.len(), 1, y.to_vec())?;
        RegressionProblem::new(features, targets, 0.0, lambda)
    }

    pub fn n_samples(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.cols()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        RegressionProblem {
            lambda,
            ..self.clone()
        }
    }
}

/// Coefficients `W` (`k×m`) and the exact set of nonzero columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalWeights {
    w: Matrix,
    support: Vec<usize>,
}

impl PrimalWeights {
    pub fn from_matrix(w: Matrix) -> Self {
        let support = (0..w.cols())
            .filter(|&j| (0..w.rows()).any(|l| w[(l, j)] != 0.0))
            .collect();
        PrimalWeights { w, support }
    }

    pub fn from_vector(w: &[f64]) -> Self {
        PrimalWeights::from_matrix(Matrix::from_fn(1, w.len(), |_, j| w[j]))
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        PrimalWeights::from_matrix(Matrix::zeros(k, m))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn into_matrix(self) -> Matrix {
        self.w
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// First row of `W`; the coefficient vector for single-target problems.
    pub fn vector(&self) -> &[f64] {
        self.w.row(0)
    }

    /// Number of nonzero columns, `‖W‖₂,₀`.
    pub fn l20(&self) -> usize {
        self.support.len()
    }

    /// Sum of column norms, `‖W‖₂,₁`.
    pub fn l21(&self) -> f64 {
        (0..self.w.cols()).map(|j| self.w.col_norm(j)).sum()
    }

    pub fn k(&self) -> usize {
        self.w.rows()
    }

    pub fn m(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub warm_start: Option<PrimalWeights>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iters: 10_000,
            tol: 1e-8,
            warm_start: None,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(tol: f64) -> Self {
        SolverSettings {
            tol,
            ..Default::default()
        }
    }

    pub fn warm(mut self, w: PrimalWeights) -> Self {
        self.warm_start = Some(w);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Lasso,
    Group,
    Ridge,
}

/// Per-solve diagnostics.
#[derive(Clone, Debug, Default)]
pub struct SolveTrace {
    /// Objective after each full sweep (index 0 is the starting point).
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

/// Block soft-thresholding `(1 − τ/‖a‖)₊ a`, the proximal operator of `τ‖·‖`.
/// Returns exact zeros when `‖a‖ <= τ`.
pub fn bst(a: &[f64], tau: f64) -> Vec<f64> {
    if a.len() == 1 {
        // scalar soft-thresholding; same map, no norm round-off
        let x = a[0];
        return vec![if x > tau {
            x - tau
        } else if x < -tau {
            x + tau
        } else {
            0.0
        }];
    }
    let nrm = norm(a);
    if nrm <= tau {
        return vec![0.0; a.len()];
    }
    let scale = 1.0 - tau / nrm;
    a.iter().map(|v| v * scale).collect()
}

/// [`bst`] overwriting its argument.
fn bst_in_place(a: &mut [f64], tau: f64) {
    if a.len() == 1 {
        let x = a[0];
        a[0] = if x > tau {
            x - tau
        } else if x < -tau {
            x + tau
        } else {
            0.0
        };
        return;
    }
    let nrm = norm(a);
    if nrm <= tau {
        a.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let scale = 1.0 - tau / nrm;
        a.iter_mut().for_each(|v| *v *= scale);
    }
}

/// `(1/2n)‖Y − F Wᵀ‖² + λ‖W‖₂,₁ + (λ₂/2)‖W‖²`.
pub fn objective(p: &RegressionProblem, w: &Matrix) -> f64 {
    let n = p.n_samples() as f64;
    let pred = p.features.matmul_t(w);
    let fit = p.targets.sub(&pred).frobenius_norm_sq() / (2.0 * n);
    let l21: f64 = (0..w.cols()).map(|j| w.col_norm(j)).sum();
    fit + p.lambda * l21 + 0.5 * p.l2_lambda * w.frobenius_norm_sq()
}

/// Largest block violation of the optimality conditions at `w`.
pub fn kkt_residual(p: &RegressionProblem, w: &Matrix) -> f64 {
    let n = p.n_samples() as f64;
    let resid = p.targets.sub(&p.features.matmul_t(w));
    // G = Rᵀ F / n, k×m
    let g = resid.t_matmul(&p.features).scaled(1.0 / n);
    let (k, m) = (w.rows(), w.cols());
    let mut worst: f64 = 0.0;
    let mut block = vec![0.0; k];
    let mut wj = vec![0.0; k];
    for j in 0..m {
        for l in 0..k {
            wj[l] = w[(l, j)];
            block[l] = g[(l, j)] - p.l2_lambda * wj[l];
        }
        worst = worst.max(block_violation(&block, &wj, p.lambda));
    }
    worst
}

fn block_violation(neg_grad: &[f64], wj: &[f64], lambda: f64) -> f64 {
    let wn = norm(wj);
    if wn == 0.0 {
        (norm(neg_grad) - lambda).max(0.0)
    } else {
        neg_grad
            .iter()
            .zip(wj)
            .map(|(g, w)| {
                let d = g - lambda * w / wn;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Lasso `(1/2n)‖y − Fw‖² + λ‖w‖₁` by cyclic coordinate descent.
pub fn lasso_cd(p: &RegressionProblem, s: &SolverSettings) -> Result<PrimalWeights> {
    if p.n_targets() != 1 {
        return Err(Error::Shape(format!(
            "lasso_cd expects a single target, got {}",
            p.n_targets()
        )));
    }
    BlockCd::run(p, s, false).map(|(w, _)| w)
}

/// Multi-target group Lasso by cyclic block coordinate descent, one block per
/// feature. Coincides with [`lasso_cd`] when there is a single target.
pub fn group_lasso_cd(p: &RegressionProblem, s: &SolverSettings) -> Result<PrimalWeights> {
    BlockCd::run(p, s, false).map(|(w, _)| w)
}

/// [`group_lasso_cd`] that also records the objective after every sweep.
pub fn group_lasso_cd_traced(
    p: &RegressionProblem,
    s: &SolverSettings,
) -> Result<(PrimalWeights, SolveTrace)> {
    BlockCd::run(p, s, true)
}

struct BlockCd<'a> {
    p: &'a RegressionProblem,
    /// Fᵀ, so feature columns are contiguous.
    ft: Matrix,
    /// ‖F_j‖² / n
    col_sq: Vec<f64>,
    /// Wᵀ stored m×k so blocks are contiguous.
    wt: Matrix,
    /// R = Y − F Wᵀ, n×k.
    resid: Matrix,
}

impl<'a> BlockCd<'a> {
    fn run(
        p: &'a RegressionProblem,
        s: &SolverSettings,
        traced: bool,
    ) -> Result<(PrimalWeights, SolveTrace)> {
        s.validate()?;
        let (n, m, k) = (p.n_samples(), p.n_features(), p.n_targets());
        let ft = p.features.transpose();
        let col_sq: Vec<f64> = (0..m)
            .map(|j| ft.row(j).iter().map(|v| v * v).sum::<f64>() / n as f64)
            .collect();
        let wt = match &s.warm_start {
            Some(w0) => {
                if w0.matrix().shape() != (k, m) {
                    return Err(Error::Shape(format!(
                        "warm start is {:?}, problem needs ({k}, {m})",
                        w0.matrix().shape()
                    )));
                }
                let mut wt = w0.matrix().transpose();
                for j in 0..m {
                    if col_sq[j] == 0.0 {
                        wt.row_mut(j).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                wt
            }
            None => Matrix::zeros(m, k),
        };
        let mut cd = BlockCd {
            p,
            ft,
            col_sq,
            wt,
            resid: Matrix::zeros(n, k),
        };
        cd.refresh_residual();

        let mut trace = SolveTrace::default();
        if traced {
            trace.objective.push(cd.objective());
        }
        let all: Vec<usize> = (0..m).filter(|&j| cd.col_sq[j] != 0.0).collect();
        let mut kkt = cd.kkt(&all);
        while kkt > s.tol {
            if trace.sweeps >= s.max_iters {
                return Err(Error::NotConverged {
                    iters: trace.sweeps,
                    residual: kkt,
                });
            }
            cd.sweep(&all);
            trace.sweeps += 1;
            if traced {
                trace.objective.push(cd.objective());
            }
            // Cycle over the nonzero blocks until they settle, then go back
            // to a full sweep; only full-set KKT checks end the solve.
            let active: Vec<usize> = all.iter().copied().filter(|&j| cd.wt.row(j).iter().any(|&v| v != 0.0)).collect();
            let solved = k == 1 && cd.try_sign_solve(&active);
            if !solved && active.len() < all.len() {
                while trace.sweeps < s.max_iters {
                    let moved = cd.sweep(&active);
                    trace.sweeps += 1;
                    if traced {
                        trace.objective.push(cd.objective());
                    }
                    if moved <= 0.1 * s.tol {
                        break;
                    }
                }
            }
            kkt = cd.kkt(&all);
            if kkt <= s.tol {
                // confirm against a residual free of accumulated update error
                cd.refresh_residual();
                kkt = cd.kkt(&all);
            }
        }
        trace.kkt_residual = kkt;
        Ok((PrimalWeights::from_matrix(cd.wt.transpose()), trace))
    }

    fn refresh_residual(&mut self) {
        let pred = self.p.features.matmul(&self.wt);
        self.resid = self.p.targets.sub(&pred);
    }

    /// Rᵀ F_j / n for block j.
    fn block_grad(&self, j: usize, out: &mut [f64]) {
        let n = self.p.n_samples();
        out.iter_mut().for_each(|v| *v = 0.0);
        let k = out.len();
        if k == 1 {
            out[0] = dot(self.ft.row(j), self.resid.data());
        } else {
            for (i, &fij) in self.ft.row(j).iter().enumerate() {
                if fij == 0.0 {
                    continue;
                }
                for (o, r) in out.iter_mut().zip(self.resid.row(i)) {
                    *o += fij * r;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv_n);
    }

    /// One pass over `blocks`; returns the largest `‖F_j‖²/n · ‖Δw_j‖`.
    fn sweep(&mut self, blocks: &[usize]) -> f64 {
        let k = self.p.n_targets();
        let (lambda, l2) = (self.p.lambda, self.p.l2_lambda);
        let mut grad = vec![0.0; k];
        let mut delta = vec![0.0; k];
        let mut moved: f64 = 0.0;
        for &j in blocks {
            let cj = self.col_sq[j];
            self.block_grad(j, &mut grad);
            // a = grad + cj·w_j, shrunk in place
            for (g, w) in grad.iter_mut().zip(self.wt.row(j)) {
                *g += cj * w;
            }
            bst_in_place(&mut grad, lambda);
            let denom = cj + l2;
            let mut changed = false;
            {
                let row = self.wt.row_mut(j);
                for l in 0..k {
                    let new = grad[l] / denom;
                    delta[l] = new - row[l];
                    changed |= delta[l] != 0.0;
                    row[l] = new;
                }
            }
            if !changed {
                continue;
            }
            moved = moved.max(cj * norm(&delta));
            if k == 1 {
                axpy(-delta[0], self.ft.row(j), self.resid.data_mut());
            } else {
                for (i, &fij) in self.ft.row(j).iter().enumerate() {
                    if fij == 0.0 {
                        continue;
                    }
                    for (r, d) in self.resid.row_mut(i).iter_mut().zip(&delta) {
                        *r -= fij * d;
                    }
                }
            }
        }
        moved
    }

    /// Single target: minimizes over the current support with signs fixed.
    /// When a sign would flip, moves to the first zero crossing, drops that
    /// coordinate and solves again. Every move lowers the objective. Returns
    /// whether `w` changed.
    fn try_sign_solve(&mut self, active: &[usize]) -> bool {
        let n = self.p.n_samples();
        if active.is_empty() || active.len() > n {
            return false;
        }
        let y = self.p.targets.data();
        let mut support = active.to_vec();
        let mut changed = false;
        while !support.is_empty() {
            let fa = self.p.features.select_cols(&support);
            let mut g = fa.gram().scaled(1.0 / n as f64);
            let mut b = fa.t_matvec(y);
            for (i, &j) in support.iter().enumerate() {
                g[(i, i)] += self.p.l2_lambda;
                b[i] = b[i] / n as f64 - self.p.lambda * self.wt[(j, 0)].signum();
            }
            let Ok(target) = solve_psd(&g, &b) else {
                break;
            };
            // largest step along the segment that keeps every sign
            let mut t = 1.0;
            let mut hit = None;
            for (i, &j) in support.iter().enumerate() {
                let (w0, w1) = (self.wt[(j, 0)], target[i]);
                if w1 * w0.signum() <= 0.0 {
                    let ti = w0 / (w0 - w1);
                    if ti < t {
                        t = ti;
                        hit = Some(i);
                    }
                }
            }
            for (i, &j) in support.iter().enumerate() {
                let w0 = self.wt[(j, 0)];
                self.wt[(j, 0)] = w0 + t * (target[i] - w0);
            }
            changed = true;
            match hit {
                None => break,
                Some(i) => {
                    self.wt[(support[i], 0)] = 0.0;
                    support.remove(i);
                }
            }
        }
        if changed {
            self.refresh_residual();
        }
        changed
    }

    fn kkt(&self, blocks: &[usize]) -> f64 {
        let k = self.p.n_targets();
        let mut grad = vec![0.0; k];
        let mut worst: f64 = 0.0;
        for &j in blocks {
            self.block_grad(j, &mut grad);
            let wj = self.wt.row(j);
            for (g, w) in grad.iter_mut().zip(wj) {
                *g -= self.p.l2_lambda * w;
            }
            worst = worst.max(block_violation(&grad, wj, self.p.lambda));
        }
        worst
    }

    fn objective(&self) -> f64 {
        let n = self.p.n_samples() as f64;
        let fit = self.resid.frobenius_norm_sq() / (2.0 * n);
        let l21: f64 = (0..self.wt.rows()).map(|j| norm(self.wt.row(j))).sum();
        fit + self.p.lambda * l21 + 0.5 * self.p.l2_lambda * self.wt.frobenius_norm_sq()
    }
}

/// Single-target Ridge solutions for every `λ₂` in `lambdas` from one
/// eigendecomposition of `FᵀF/n`. Every `λ₂` must be positive.
pub fn ridge_path(features: &Matrix, y: &[f64], lambdas: &[f64]) -> Result<Vec<Vec<f64>>> {
    if features.rows() != y.len() || features.rows() == 0 {
        return Err(Error::Shape(format!("{} feature rows but {} targets", features.rows(), y.len())));
    }
    if let Some(bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument(format!("ridge path needs positive penalties, got {bad}")));
    }
    let n = features.rows() as f64;
    let (d, v) = features.gram().scaled(1.0 / n).symmetric_eigen()?;
    let b: Vec<f64> = features.t_matvec(y).iter().map(|x| x / n).collect();
    let vb = v.t_matvec(&b);
    Ok(lambdas
        .iter()
        .map(|&l| {
            // clamp round-off negatives of the PSD spectrum
            let c: Vec<f64> = vb.iter().zip(&d).map(|(x, e)| x / (e.max(0.0) + l)).collect();
            v.matvec(&c)
        })
        .collect())
}

/// Ridge `(1/2n)‖Y − F Wᵀ‖² + (λ₂/2)‖W‖²` in closed form:
/// `w = (FᵀF/n + λ₂ I)⁻¹ Fᵀy / n` per target.
pub fn ridge_solve(p: &RegressionProblem) -> Result<PrimalWeights> {
    let n = p.n_samples() as f64;
    let m = p.n_features();
    let mut a = p.features.gram().scaled(1.0 / n);
    for j in 0..m {
        a[(j, j)] += p.l2_lambda;
    }
    let rhs = p.features.t_matmul(&p.targets).scaled(1.0 / n);
    let l = a.cholesky().map_err(|e| match e {
        Error::NotPositiveDefinite { minor, .. } => Error::Singular(format!(
            "ridge system with l2_lambda={} fails at leading minor {minor}",
            p.l2_lambda
        )),
        other => other,
    })?;
    let mut w = Matrix::zeros(p.n_targets(), m);
    for t in 0..p.n_targets() {
        let b = rhs.col(t);
        let mut x = crate::linalg::cholesky_solve(&l, &b);
        // one refinement step, as in solve_psd
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = crate::linalg::cholesky_solve(&l, &r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        w.row_mut(t).copy_from_slice(&x);
    }
    Ok(PrimalWeights::from_matrix(w))
}

/// Smallest penalty with an all-zero solution (Lasso, group Lasso), or the
/// Ridge scale `‖F‖²_F / n`.
pub fn lambda_max(p: &RegressionProblem, kind: PenaltyKind) -> f64 {
    let n = p.n_samples() as f64;
    match kind {
        PenaltyKind::Lasso => {
            let g = p.features.t_matmul(&p.targets);
            g.max_abs() / n
        }
        PenaltyKind::Group => {
            let g = p.features.t_matmul(&p.targets);
            (0..g.rows()).map(|j| norm(g.row(j))).fold(0.0, f64::max) / n
        }
        PenaltyKind::Ridge => p.features.frobenius_norm_sq() / n,
    }
}

/// Plain least squares on the given support, used to polish or debias.
pub fn least_squares_on_support(
    features: &Matrix,
    y: &[f64],
    support: &[usize],
) -> Result<Vec<f64>> {
    let m = features.cols();
    let mut w = vec![0.0; m];
    if support.is_empty() {
        return Ok(w);
    }
    let fs = features.select_cols(support);
    let coef = solve_psd(&fs.gram(), &fs.t_matvec(y))?;
    for (&j, c) in support.iter().zip(coef) {
        w[j] = c;
    }
    Ok(w)
}
