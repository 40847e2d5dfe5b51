//! Finite checks of the support and task-variability conditions, plus small
//! exact oracles for the invariance results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{best_assignment, Permutation};
use crate::error::{Error, Result};
use crate::linalg::{lstsq, sample_orthogonal, Matrix};
use crate::prox::{least_squares_on_support, ridge_solve, PrimalWeights, RegressionProblem};
use crate::rng::RngStream;
use crate::taskgen::TaskDataset;

/// Distribution over supports: distinct index sets over `0..m` with
/// positive probabilities summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportFamily {
    m: usize,
    sets: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl SupportFamily {
    pub fn new(m: usize, sets: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if sets.len() != weights.len() || sets.is_empty() {
            return Err(Error::InvalidArgument(
                "support family needs one positive weight per set".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("support weights must be > 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("support weights sum to {total}")));
        }
        let mut norm_sets = Vec::with_capacity(sets.len());
        for s in sets {
            let mut s = s;
            s.sort_unstable();
            s.dedup();
            if s.iter().any(|&j| j >= m) {
                return Err(Error::InvalidArgument(format!("support index out of 0..{m}")));
            }
            if norm_sets.contains(&s) {
                return Err(Error::InvalidArgument(format!("support {s:?} listed twice")));
            }
            norm_sets.push(s);
        }
        Ok(SupportFamily {
            m,
            sets: norm_sets,
            weights,
        })
    }

    /// Equal weights over the given distinct sets.
    pub fn uniform(m: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let w = vec![1.0 / sets.len().max(1) as f64; sets.len()];
        Self::new(m, sets, w)
    }

    /// Empirical family of observed supports, weighted by frequency.
    pub fn from_observed<'a>(m: usize, supports: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut total = 0usize;
        for s in supports {
            let mut s = s.to_vec();
            s.sort_unstable();
            s.dedup();
            *counts.entry(s).or_default() += 1;
            total += 1;
        }
        let (sets, weights) = counts
            .into_iter()
            .map(|(s, c)| (s, c as f64 / total as f64))
            .unzip();
        Self::new(m, sets, weights)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SupportCheck {
    Holds,
    /// `feature` is the first `j` whose complement is not covered by the
    /// supports avoiding `j`; `missing` lists the uncovered indices.
    Violated { feature: usize, missing: Vec<usize> },
}

impl SupportCheck {
    pub fn holds(&self) -> bool {
        matches!(self, SupportCheck::Holds)
    }
}

/// For every `j`, the union of supports not containing `j` must be
/// `{0..m} \ {j}`.
pub fn check_sufficient_support(fam: &SupportFamily) -> SupportCheck {
    let m = fam.m;
    for j in 0..m {
        let mut covered = vec![false; m];
        for s in fam.sets.iter().filter(|s| !s.contains(&j)) {
            for &a in s {
                covered[a] = true;
            }
        }
        let missing: Vec<usize> = (0..m).filter(|&a| a != j && !covered[a]).collect();
        if !missing.is_empty() {
            return SupportCheck::Violated { feature: j, missing };
        }
    }
    SupportCheck::Holds
}

/// Samples of task weight matrices, all `k×m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEnsemble {
    matrices: Vec<Matrix>,
}

impl WeightEnsemble {
    pub fn new(matrices: Vec<Matrix>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidArgument("weight ensemble is empty".into()))?;
        let shape = first.shape();
        if matrices.iter().any(|w| w.shape() != shape) {
            return Err(Error::Shape("weight matrices differ in shape".into()));
        }
        Ok(WeightEnsemble { matrices })
    }

    /// One `1×m` matrix per weight vector.
    pub fn from_vectors(ws: &[Vec<f64>]) -> Result<Self> {
        let ms = ws
            .iter()
            .map(|w| Matrix::from_vec(1, w.len(), w.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ms)
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn m(&self) -> usize {
        self.matrices[0].cols()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskVariability {
    /// `(matrix, row)` pairs of `m` linearly independent rows.
    Holds { rows_used: Vec<(usize, usize)> },
    Violated { rank: usize },
}

impl TaskVariability {
    pub fn holds(&self) -> bool {
        matches!(self, TaskVariability::Holds { .. })
    }
}

/// Greedily collects pooled rows of the ensemble until `m` of them are
/// linearly independent. Rank is decided by elimination with a pivot
/// tolerance of `1e-10` times the largest entry.
pub fn check_task_variability(ens: &WeightEnsemble) -> TaskVariability {
    let m = ens.m();
    let scale = ens.matrices.iter().map(Matrix::max_abs).fold(0.0, f64::max);
    let tol = 1e-10 * scale;
    // reduced basis rows with their pivot columns
    let mut basis: Vec<(Vec<f64>, usize)> = Vec::with_capacity(m);
    let mut used = Vec::with_capacity(m);
    'outer: for (t, w) in ens.matrices.iter().enumerate() {
        for r in 0..w.rows() {
            let mut v = w.row(r).to_vec();
            for (b, p) in &basis {
                let f = v[*p] / b[*p];
                if f != 0.0 {
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= f * y);
                }
            }
            let (p, &piv) = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("m >= 1");
            if piv.abs() > tol && tol > 0.0 {
                basis.push((v, p));
                used.push((t, r));
                if basis.len() == m {
                    break 'outer;
                }
            }
        }
    }
    if basis.len() == m {
        TaskVariability::Holds { rows_used: used }
    } else {
        TaskVariability::Violated { rank: basis.len() }
    }
}

/// Per distinct support `S` (nonzero columns), the smallest singular value of
/// the stacked `W[:, S]` over all matrices with that support. A finite-sample
/// surrogate for intra-support variability: it should exceed `1e-6`.
pub fn intra_support_surrogate(ens: &WeightEnsemble) -> Vec<(Vec<usize>, f64)> {
    let mut groups: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for w in &ens.matrices {
        let s: Vec<usize> = (0..w.cols()).filter(|&j| w.col_norm(j) > 0.0).collect();
        let entry = groups.entry(s.clone()).or_default();
        for r in 0..w.rows() {
            entry.extend(s.iter().map(|&j| w[(r, j)]));
        }
    }
    groups
        .into_iter()
        .map(|(s, flat)| {
            if s.is_empty() {
                return (s, 0.0);
            }
            let rows = flat.len() / s.len();
            let smin = if rows < s.len() {
                0.0
            } else {
                let stack = Matrix::from_vec(rows, s.len(), flat).expect("consistent stacking");
                stack.singular_values().last().copied().unwrap_or(0.0)
            };
            (s, smin)
        })
        .collect()
}

/// A permutation `σ` with `L[i, σ(i)] ≠ 0` for every `i`, which exists for
/// any invertible `L`. Chosen to maximize `Σ log|L[i, σ(i)]|`.
pub fn extract_permutation(l: &Matrix) -> Result<Permutation> {
    if !l.is_square() {
        return Err(Error::Shape("extract_permutation needs a square matrix".into()));
    }
    let det = l.determinant()?;
    if !(det.abs() > 1e-10) {
        return Err(Error::Singular(format!("|det L| = {:e}", det.abs())));
    }
    const ZERO_SCORE: f64 = -1e12;
    let scores = Matrix::from_fn(l.rows(), l.cols(), |i, j| {
        let v = l[(i, j)].abs();
        if v > 0.0 {
            v.ln()
        } else {
            ZERO_SCORE
        }
    });
    let (perm, _) = best_assignment(&scores)?;
    if (0..l.rows()).any(|i| l[(i, perm.apply(i))] == 0.0) {
        return Err(Error::Singular("no permutation avoids the zero pattern".into()));
    }
    Ok(perm)
}

/// If `L = D P` (one nonzero per row and column), returns `σ` and the
/// diagonal `d` with `L[i, σ(i)] = d[i]`; otherwise `None`.
pub fn diagonal_permutation_readout(l: &Matrix) -> Option<(Permutation, Vec<f64>)> {
    let perm = extract_permutation(l).ok()?;
    let d: Vec<f64> = (0..l.rows()).map(|i| l[(i, perm.apply(i))]).collect();
    let rebuilt = Matrix::from_fn(l.rows(), l.cols(), |i, j| if perm.apply(i) == j { d[i] } else { 0.0 });
    (rebuilt == *l).then_some((perm, d))
}

/// Exhaustive `‖w‖₀ ≤ budget` least squares on the task's observations:
/// the support with the smallest residual, ties going to the
/// lexicographically smallest support.
pub fn l20_mle_oracle(task: &TaskDataset, budget: usize) -> Result<PrimalWeights> {
    let x = &task.x;
    let m = x.cols();
    if m > 20 {
        return Err(Error::InvalidArgument(format!("exhaustive oracle limited to m <= 20, got {m}")));
    }
    if budget > m {
        return Err(Error::InvalidArgument(format!("budget {budget} exceeds m={m}")));
    }
    let g = x.gram();
    let b = x.t_matvec(&task.y);
    let yy: f64 = task.y.iter().map(|v| v * v).sum();
    let tie = 1e-12 * yy.max(f64::MIN_POSITIVE);

    let rss_of = |s: &[usize]| -> Option<f64> {
        if s.is_empty() {
            return Some(yy);
        }
        let gs = Matrix::from_fn(s.len(), s.len(), |a, c| g[(s[a], s[c])]);
        let bs: Vec<f64> = s.iter().map(|&j| b[j]).collect();
        let coef = crate::linalg::solve_psd(&gs, &bs).ok()?;
        Some(yy - coef.iter().zip(&bs).map(|(c, v)| c * v).sum::<f64>())
    };

    // depth-first enumeration visits supports in lexicographic order
    let mut best: (f64, Vec<usize>) = (yy, Vec::new());
    let mut stack: Vec<usize> = Vec::with_capacity(budget);
    fn visit(
        start: usize,
        m: usize,
        budget: usize,
        stack: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
        tie: f64,
        rss_of: &dyn Fn(&[usize]) -> Option<f64>,
    ) {
        for j in start..m {
            stack.push(j);
            if let Some(r) = rss_of(stack) {
                if r < best.0 - tie {
                    *best = (r, stack.clone());
                }
            }
            if stack.len() < budget {
                visit(j + 1, m, budget, stack, best, tie, rss_of);
            }
            stack.pop();
        }
    }
    if budget > 0 {
        visit(0, m, budget, &mut stack, &mut best, tie, &rss_of);
    }
    let w = least_squares_on_support(x, &task.y, &best.1)?;
    Ok(PrimalWeights::from_vector(&w))
}

/// Largest absolute difference between OLS predictions on `F` and on
/// `F Lᵀ`, both over the task's ground-truth features.
pub fn verify_mle_invariance(task: &TaskDataset, l: &Matrix) -> Result<f64> {
    let f = &task.f_true;
    if l.shape() != (f.cols(), f.cols()) {
        return Err(Error::Shape(format!(
            "mixing {}x{} for m={}",
            l.rows(),
            l.cols(),
            f.cols()
        )));
    }
    let fl = f.matmul_t(l);
    let w1 = lstsq(f, &task.y)?;
    let w2 = lstsq(&fl, &task.y)?;
    let p1 = f.matvec(&w1);
    let p2 = fl.matvec(&w2);
    Ok(p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationCheck {
    /// `‖Ŵ − W L⁻¹‖_F`
    pub deviation: f64,
    /// `‖W‖_F`
    pub w_norm: f64,
    pub w_hat: Matrix,
}

/// Fits near-unregularized Ridge on `X = F Lᵀ` for each task and compares the
/// stacked estimates with `W L⁻¹`, `W` stacking the true task weights.
pub fn population_mle_check(tasks: &[TaskDataset], l: &Matrix, ridge: f64) -> Result<PopulationCheck> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("no tasks".into()));
    }
    let m = l.rows();
    let mut w_hat = Matrix::zeros(tasks.len(), m);
    let mut w = Matrix::zeros(tasks.len(), m);
    for (t, task) in tasks.iter().enumerate() {
        let x = task.f_true.matmul_t(l);
        let p = RegressionProblem::ridge(x, &task.y, ridge)?;
        let fit = ridge_solve(&p)?;
        w_hat.row_mut(t).copy_from_slice(fit.vector());
        w.row_mut(t).copy_from_slice(&task.w_true);
    }
    let target = w.matmul(&l.inverse()?);
    Ok(PopulationCheck {
        deviation: w_hat.sub(&target).frobenius_norm(),
        w_norm: w.frobenius_norm(),
        w_hat,
    })
}

/// `U diag(s) Vᵀ` with Haar-random `U, V` and singular values log-spaced
/// from 1 down to `1/cond`.
pub fn conditioned_matrix(m: usize, cond: f64, rng: &mut RngStream) -> Matrix {
    let u = sample_orthogonal(m, rng);
    let v = sample_orthogonal(m, rng);
    let s: Vec<f64> = if m == 1 {
        vec![1.0]
    } else {
        crate::linalg::logspace(1.0 / cond, 1.0, m)
    };
    u.matmul(&Matrix::from_diag(&s)).matmul_t(&v)
}
