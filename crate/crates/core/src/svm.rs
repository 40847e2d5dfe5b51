//! Group-Lasso penalized multiclass (Crammer–Singer) SVM, solved in the dual.
//!
//! Primal, with `W` the `k×m` class-by-feature weights:
//!
//! ```text
//! Σᵢ maxₗ (1 − Y[i,l] + (W[l,:] − W[yᵢ,:])·F[i,:]) + λ₁‖W‖₂,₁ + (λ₂/2)‖W‖²
//! ```
//!
//! Dual, over row-stochastic `Λ` (`n×k`):
//!
//! ```text
//! Σⱼ g*((Y − Λ)ᵀF[:,j]) + ⟨Y, Λ⟩,     g*(v) = ‖BST(v, λ₁)‖² / (2λ₂)
//! ```
//!
//! The Lagrangian constant `ΣᵢΣₗ Λ[i,l] = n` is kept out of the dual objective,
//! so at optimum `primal = n − dual`. Primal and dual are linked column-wise by
//! `W[:,j] = BST((Y − Λ)ᵀF[:,j], λ₁) / λ₂`.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::prox::{bst, PrimalWeights, SolverSettings};
use crate::simplex::project_simplex;

const SIMPLEX_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SvmProblem {
    features: Matrix,
    onehot: Matrix,
    labels: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl SvmProblem {
    pub fn new(features: Matrix, onehot: Matrix, lambda1: f64, lambda2: f64) -> Result<Self> {
        let (n, k) = onehot.shape();
        if features.rows() != n {
            return Err(Error::Shape(format!(
                "{} feature rows but {n} label rows",
                features.rows()
            )));
        }
        if n < 2 || k < 2 {
            return Err(Error::InvalidArgument(format!("need n, k >= 2, got n={n} k={k}")));
        }
        if !(lambda2 > 0.0) || !(lambda1 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need lambda1 >= 0 and lambda2 > 0, got {lambda1}, {lambda2}"
            )));
        }
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let row = onehot.row(i);
            let ones: Vec<usize> = (0..k).filter(|&l| row[l] == 1.0).collect();
            if ones.len() != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument(format!("label row {i} is not one-hot")));
            }
            labels.push(ones[0]);
        }
        Ok(SvmProblem {
            features,
            onehot,
            labels,
            lambda1,
            lambda2,
        })
    }

    pub fn from_labels(
        features: Matrix,
        labels: &[usize],
        k: usize,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for k={k}")));
        }
        let onehot = Matrix::from_fn(labels.len(), k, |i, l| f64::from(u8::from(labels[i] == l)));
        SvmProblem::new(features, onehot, lambda1, lambda2)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn onehot(&self) -> &Matrix {
        &self.onehot
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn m(&self) -> usize {
        self.features.cols()
    }

    pub fn k(&self) -> usize {
        self.onehot.cols()
    }

    pub fn with_lambda1(&self, lambda1: f64) -> Self {
        SvmProblem {
            lambda1,
            ..self.clone()
        }
    }
}

/// Dual matrix `Λ` whose rows lie on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVariables {
    lambda: Matrix,
}

impl DualVariables {
    pub fn new(lambda: Matrix) -> Result<Self> {
        for i in 0..lambda.rows() {
            let row = lambda.row(i);
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "dual row {i} is off the simplex (sum {s})"
                )));
            }
        }
        Ok(DualVariables { lambda })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.lambda
    }
}

/// Solver output: both iterates plus the certificate.
#[derive(Clone, Debug)]
pub struct SvmSolution {
    pub dual: DualVariables,
    pub primal: PrimalWeights,
    /// `primal − (n − dual)` at the returned pair.
    pub gap: f64,
    pub sweeps: usize,
    /// Whether `gap` reached the requested tolerance.
    pub converged: bool,
    /// Dual objective at the start and after every sweep.
    pub dual_trace: Vec<f64>,
}

/// Fenchel conjugate of `u ↦ λ₁‖u‖ + (λ₂/2)‖u‖²`.
pub fn g_conj(v: &[f64], lambda1: f64, lambda2: f64) -> f64 {
    let b = bst(v, lambda1);
    dot(&b, &b) / (2.0 * lambda2)
}

/// Crammer–Singer hinge plus group-Lasso and ridge penalties.
pub fn primal_objective(w: &Matrix, prob: &SvmProblem) -> f64 {
    assert_eq!(w.shape(), (prob.k(), prob.m()), "weights shape mismatch");
    // scores[i, l] = W[l,:]·F[i,:]
    let scores = prob.features.matmul_t(w);
    let mut hinge = 0.0;
    for i in 0..prob.n() {
        let yi = prob.labels[i];
        let s = scores.row(i);
        let worst = (0..prob.k())
            .map(|l| 1.0 - prob.onehot[(i, l)] + s[l] - s[yi])
            .fold(f64::NEG_INFINITY, f64::max);
        hinge += worst;
    }
    let l21: f64 = (0..w.cols()).map(|j| w.col_norm(j)).sum();
    hinge + prob.lambda1 * l21 + 0.5 * prob.lambda2 * w.frobenius_norm_sq()
}

/// `Σⱼ g*((Y − Λ)ᵀF[:,j]) + ⟨Y, Λ⟩`.
pub fn dual_objective(dual: &DualVariables, prob: &SvmProblem) -> Result<f64> {
    check_dual_shape(dual, prob)?;
    let u = link_matrix(dual.matrix(), prob);
    let conj: f64 = (0..prob.m())
        .map(|j| g_conj(u.row(j), prob.lambda1, prob.lambda2))
        .sum();
    let inner = dot(prob.onehot.data(), dual.matrix().data());
    Ok(conj + inner)
}

/// `W[:,j] = BST((Y − Λ)ᵀF[:,j], λ₁) / λ₂`.
pub fn primal_from_dual(dual: &DualVariables, prob: &SvmProblem) -> PrimalWeights {
    let u = link_matrix(dual.matrix(), prob);
    PrimalWeights::from_matrix(weights_from_link(&u, prob).transpose())
}

/// `primal(W(Λ)) − (n − dual(Λ))`; nonnegative up to round-off.
pub fn duality_gap(dual: &DualVariables, prob: &SvmProblem) -> Result<f64> {
    let w = primal_from_dual(dual, prob);
    let d = dual_objective(dual, prob)?;
    Ok(primal_objective(w.matrix(), prob) - (prob.n() as f64 - d))
}

fn check_dual_shape(dual: &DualVariables, prob: &SvmProblem) -> Result<()> {
    if dual.matrix().shape() != (prob.n(), prob.k()) {
        return Err(Error::Shape(format!(
            "dual is {:?}, problem needs ({}, {})",
            dual.matrix().shape(),
            prob.n(),
            prob.k()
        )));
    }
    Ok(())
}

/// `(Y − Λ)ᵀF` stored transposed, m×k: row j is the link vector of feature j.
fn link_matrix(lambda: &Matrix, prob: &SvmProblem) -> Matrix {
    prob.features.t_matmul(&prob.onehot.sub(lambda))
}

/// Wᵀ (m×k) from the link vectors.
fn weights_from_link(u: &Matrix, prob: &SvmProblem) -> Matrix {
    let mut wt = Matrix::zeros(u.rows(), u.cols());
    for j in 0..u.rows() {
        let b = bst(u.row(j), prob.lambda1);
        for (dst, v) in wt.row_mut(j).iter_mut().zip(b) {
            *dst = v / prob.lambda2;
        }
    }
    wt
}

/// Cyclic block proximal gradient over the rows of `Λ`, starting at `Λ = Y`.
///
/// Row `i` moves along `−(Y[i,:] − W F[i,:])` and is projected back onto the
/// simplex. The step is `1/L` with `L = Σⱼ F[i,j]² / λ₂` over the columns that
/// are active or become active along the step, at most `‖F[i,:]‖² / λ₂`.
/// Stops when the duality gap drops below `tol · max(1, n)`.
pub fn solve_dual(prob: &SvmProblem, s: &SolverSettings) -> Result<SvmSolution> {
    solve_dual_from(prob, s, DualVariables { lambda: prob.onehot.clone() })
}

/// [`solve_dual`] from a given feasible `Λ`. Fails with the final gap when
/// `max_iters` sweeps are not enough.
pub fn solve_dual_from(
    prob: &SvmProblem,
    s: &SolverSettings,
    init: DualVariables,
) -> Result<SvmSolution> {
    let sol = solve_dual_capped(prob, s, init)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            iters: sol.sweeps,
            residual: sol.gap,
        });
    }
    Ok(sol)
}

/// Like [`solve_dual_from`], but returns the last iterate (with
/// `converged == false`) when the sweep budget runs out.
pub fn solve_dual_capped(
    prob: &SvmProblem,
    s: &SolverSettings,
    init: DualVariables,
) -> Result<SvmSolution> {
    check_dual_shape(&init, prob)?;
    if !(s.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {}", s.tol)));
    }
    let (n, k, m) = (prob.n(), prob.k(), prob.m());
    let target = s.tol * (n as f64).max(1.0);
    let mut lambda = init.lambda;
    let row_lip: Vec<f64> = (0..n)
        .map(|i| dot(prob.features.row(i), prob.features.row(i)) / prob.lambda2)
        .collect();

    // Samples with an all-zero feature row never enter W; any Λ row with no
    // mass on the true class is optimal for them.
    for i in 0..n {
        if row_lip[i] == 0.0 {
            let yi = prob.labels[i];
            let row = lambda.row_mut(i);
            for (l, v) in row.iter_mut().enumerate() {
                *v = if l == yi { 0.0 } else { 1.0 / (k - 1) as f64 };
            }
        }
    }

    let mut sweeps = 0;
    let mut u = link_matrix(&lambda, prob);
    let mut wt = weights_from_link(&u, prob);
    let (mut gap, d0) = gap_at(&lambda, prob);
    let mut dual_trace = vec![d0];
    let mut grad = vec![0.0; k];
    let mut step = vec![0.0; k];
    while gap > target {
        if sweeps >= s.max_iters {
            break;
        }
        for i in 0..n {
            if row_lip[i] == 0.0 {
                continue;
            }
            let fi = prob.features.row(i);
            // grad = Y[i,:] − W F[i,:]
            for l in 0..k {
                grad[l] = prob.onehot[(i, l)];
            }
            for (j, &fij) in fi.iter().enumerate() {
                if fij == 0.0 {
                    continue;
                }
                for (g, w) in grad.iter_mut().zip(wt.row(j)) {
                    *g -= w * fij;
                }
            }
            let old = lambda.row(i).to_vec();
            // Curvature bound over the columns that are active or become
            // active along the step; columns that stay inside the BST dead
            // zone contribute nothing, so the step is a valid descent step.
            let fi2: Vec<f64> = fi.iter().map(|f| f * f / prob.lambda2).collect();
            let mut counted: Vec<bool> = (0..m).map(|j| fi[j] != 0.0 && norm(u.row(j)) > prob.lambda1).collect();
            let mut lip: f64 = (0..m).filter(|&j| counted[j]).map(|j| fi2[j]).sum();
            let (new, delta) = loop {
                let l_eff = lip.max(row_lip[i] * 1e-12);
                for l in 0..k {
                    step[l] = old[l] - grad[l] / l_eff;
                }
                let new = project_simplex(&step);
                let delta: Vec<f64> = new.iter().zip(&old).map(|(a, b)| a - b).collect();
                let mut grew = false;
                for j in 0..m {
                    if counted[j] || fi[j] == 0.0 {
                        continue;
                    }
                    let moved: f64 = u.row(j).iter().zip(&delta).map(|(uv, d)| (uv - fi[j] * d).powi(2)).sum();
                    if moved.sqrt() > prob.lambda1 {
                        counted[j] = true;
                        lip += fi2[j];
                        grew = true;
                    }
                }
                if !grew {
                    break (new, delta);
                }
            };
            if delta.iter().all(|&d| d == 0.0) {
                continue;
            }
            lambda.row_mut(i).copy_from_slice(&new);
            // U[j,:] -= F[i,j] · δ, then refresh the touched columns of W
            for (j, &fij) in fi.iter().enumerate() {
                if fij == 0.0 {
                    continue;
                }
                let urow = u.row_mut(j);
                for (uv, d) in urow.iter_mut().zip(&delta) {
                    *uv -= fij * d;
                }
                let b = bst(u.row(j), prob.lambda1);
                for (dst, v) in wt.row_mut(j).iter_mut().zip(b) {
                    *dst = v / prob.lambda2;
                }
            }
        }
        sweeps += 1;
        // resynchronize the incremental link with a fresh product
        u = link_matrix(&lambda, prob);
        wt = weights_from_link(&u, prob);
        let (g, d) = gap_at(&lambda, prob);
        gap = g;
        dual_trace.push(d);
    }

    let dual = DualVariables { lambda };
    let primal = primal_from_dual(&dual, prob);
    log::trace!("svm dual solved in {sweeps} sweeps, gap {gap:e}, m={m}");
    Ok(SvmSolution {
        dual,
        primal,
        gap,
        sweeps,
        converged: gap <= target,
        dual_trace,
    })
}

/// (gap, dual objective) at `lambda`.
fn gap_at(lambda: &Matrix, prob: &SvmProblem) -> (f64, f64) {
    let u = link_matrix(lambda, prob);
    let wt = weights_from_link(&u, prob);
    let conj: f64 = (0..prob.m())
        .map(|j| g_conj(u.row(j), prob.lambda1, prob.lambda2))
        .sum();
    let dual = conj + dot(prob.onehot.data(), lambda.data());
    let primal = primal_objective(&wt.transpose(), prob);
    (primal - (prob.n() as f64 - dual), dual)
}

/// Fraction of weight columns that are exactly zero, `1 − ‖W‖₂,₀ / m`.
pub fn sparsity(w: &PrimalWeights) -> f64 {
    1.0 - w.l20() as f64 / w.m() as f64
}

/// Norm of each link vector `‖(Y − Λ)ᵀF[:,j]‖`; features above `λ₁` are active.
pub fn link_norms(dual: &DualVariables, prob: &SvmProblem) -> Vec<f64> {
    let u = link_matrix(dual.matrix(), prob);
    (0..prob.m()).map(|j| norm(u.row(j))).collect()
}
