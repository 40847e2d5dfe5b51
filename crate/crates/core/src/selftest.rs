//! Fast internal consistency checks, run by `spardis selftest` and the
//! `unit_oracles` experiment.

use serde::{Deserialize, Serialize};

use crate::bilevel::{hypergradient, outer_loss, InnerKind, LinearRepresentation};
use crate::identifiability::{conditioned_matrix, l20_mle_oracle, verify_mle_invariance};
use crate::linalg::{norm, Matrix};
use crate::metrics::{dci_from_importance, mcc};
use crate::prox::{bst, group_lasso_cd, kkt_residual, lambda_max, lasso_cd, PenaltyKind, RegressionProblem, SolverSettings};
use crate::rng::RngStream;
use crate::svm::{g_conj, primal_from_dual, solve_dual, SvmProblem};
use crate::taskgen::{make_task, LatentSampler, LatentSpec, SupportSpec};
use crate::{best_assignment, project_simplex};

/// One check: `passed` iff `value <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
        }
    }
}

fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a: f64, v| if v.is_nan() { f64::INFINITY } else { a.max(v) })
}

fn lambda_max_zeros(rng: &mut RngStream) -> f64 {
    worst((0..20).map(|t| {
        let (n, m, k) = (10 + rng.below(20), 2 + rng.below(10), 1 + (t % 3));
        let f = Matrix::gaussian(n, m, rng);
        let y = Matrix::gaussian(n, k, rng);
        let p = RegressionProblem::new(f, y, 0.0, 0.0).expect("valid shapes");
        let kind = if k == 1 { PenaltyKind::Lasso } else { PenaltyKind::Group };
        let p = p.with_lambda(lambda_max(&p, kind));
        let w = if k == 1 {
            lasso_cd(&p, &SolverSettings::default())
        } else {
            group_lasso_cd(&p, &SolverSettings::default())
        };
        w.map(|w| w.l20() as f64).unwrap_or(f64::INFINITY)
    }))
}

fn cd_kkt(rng: &mut RngStream) -> f64 {
    worst((0..20).map(|_| {
        let (n, m, k) = (20 + rng.below(20), 2 + rng.below(15), 1 + rng.below(3));
        let f = Matrix::gaussian(n, m, rng);
        let y = Matrix::gaussian(n, k, rng);
        let p = RegressionProblem::new(f, y, 0.0, 0.0).expect("valid shapes");
        let p = p.with_lambda(0.3 * lambda_max(&p, PenaltyKind::Group));
        match group_lasso_cd(&p, &SolverSettings::with_tol(1e-10)) {
            Ok(w) => kkt_residual(&p, w.matrix()),
            Err(_) => f64::INFINITY,
        }
    }))
}

fn svm_gap(rng: &mut RngStream) -> f64 {
    worst((0..10).map(|_| {
        let (n, k, m) = (4 + rng.below(16), 2 + rng.below(4), 1 + rng.below(20));
        let f = Matrix::gaussian(n, m, rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let l1 = rng.uniform_range(0.0, 2.0);
        let l2 = rng.uniform_range(0.1, 2.0);
        let prob = SvmProblem::from_labels(f, &labels, k, l1, l2).expect("valid problem");
        let settings = SolverSettings {
            max_iters: 200_000,
            tol: 1e-8,
            warm_start: None,
        };
        match solve_dual(&prob, &settings) {
            Ok(sol) => {
                let relinked = primal_from_dual(&sol.dual, &prob);
                if relinked.matrix() != sol.primal.matrix() {
                    f64::INFINITY
                } else {
                    sol.gap.abs() / n as f64
                }
            }
            Err(_) => f64::INFINITY,
        }
    }))
}

/// `g*(v)` against `sup_u ⟨u, v⟩ − λ₁‖u‖ − (λ₂/2)‖u‖²` along the ray `u ∥ v`,
/// where the supremum is attained.
fn conjugate_ray(rng: &mut RngStream) -> f64 {
    worst((0..20).map(|_| {
        let v: Vec<f64> = (0..3).map(|_| 2.0 * rng.normal()).collect();
        let (l1, l2) = (rng.uniform_range(0.0, 1.5), rng.uniform_range(0.2, 2.0));
        let nv = norm(&v);
        let best = (0..=20_000)
            .map(|i| {
                let t = i as f64 * (nv / l2) / 20_000.0;
                t * nv - l1 * t - 0.5 * l2 * t * t
            })
            .fold(0.0, f64::max);
        (g_conj(&v, l1, l2) - best).abs()
    }))
}

fn simplex_projection(rng: &mut RngStream) -> f64 {
    worst((0..50).map(|_| {
        let v: Vec<f64> = (0..1 + rng.below(8)).map(|_| 3.0 * rng.normal()).collect();
        let p = project_simplex(&v);
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&x| x < 0.0) {
            f64::INFINITY
        } else {
            (sum - 1.0).abs()
        }
    }))
}

fn assignment_brute_force(rng: &mut RngStream) -> f64 {
    fn best(scores: &Matrix, used: &mut Vec<bool>, row: usize) -> f64 {
        if row == scores.rows() {
            return 0.0;
        }
        let mut b = f64::NEG_INFINITY;
        for j in 0..scores.cols() {
            if !used[j] {
                used[j] = true;
                b = b.max(scores[(row, j)] + best(scores, used, row + 1));
                used[j] = false;
            }
        }
        b
    }
    worst((0..30).map(|_| {
        let m = 1 + rng.below(6);
        let s = Matrix::from_fn(m, m, |_, _| rng.uniform());
        match best_assignment(&s) {
            Ok((_, v)) => (v - best(&s, &mut vec![false; m], 0)).abs(),
            Err(_) => f64::INFINITY,
        }
    }))
}

fn mcc_signed_permutation(rng: &mut RngStream) -> f64 {
    let z = Matrix::gaussian(200, 5, rng);
    let perm = [3, 0, 4, 1, 2];
    let scale = [2.0, -0.5, 3.0, -1.0, 0.1];
    let learned = Matrix::from_fn(200, 5, |i, j| scale[j] * z[(i, perm[j])]);
    match mcc(&z, &learned) {
        Ok((v, _)) => (1.0 - v).abs(),
        Err(_) => f64::INFINITY,
    }
}

fn dci_extremes() -> f64 {
    let (d, c) = dci_from_importance(&Matrix::identity(4));
    let (du, cu) = dci_from_importance(&Matrix::from_fn(4, 4, |_, _| 1.0));
    worst([(1.0 - d).abs(), (1.0 - c).abs(), du.abs(), cu.abs()])
}

fn invariance(rng: &mut RngStream) -> f64 {
    let sampler = LatentSampler::new(&LatentSpec::equicorrelated(10, 0.3), rng).expect("valid spec");
    worst((0..10).map(|_| {
        let task = make_task(&sampler, &SupportSpec::Bernoulli { p: 0.5 }, 100, 0.1, rng).expect("valid task");
        let l = conditioned_matrix(10, 100.0, rng);
        let scale = task.y.iter().map(|v| v.abs()).fold(1.0, f64::max);
        verify_mle_invariance(&task, &l).map(|e| e / scale).unwrap_or(f64::INFINITY)
    }))
}

fn l20_recovery(rng: &mut RngStream) -> f64 {
    let sampler = LatentSampler::new(&LatentSpec::equicorrelated(6, 0.0), rng).expect("valid spec");
    let mut task = make_task(&sampler, &SupportSpec::FixedSize { count: 2 }, 500, 0.1, rng).expect("valid task");
    task.x = task.f_true.clone();
    match l20_mle_oracle(&task, 2) {
        Ok(w) if w.support() == task.support_true.as_slice() => 0.0,
        _ => 1.0,
    }
}

/// Worst relative error of the hypergradient against central differences.
fn hypergradient_fd(rng: &mut RngStream) -> f64 {
    let sampler = LatentSampler::new(&LatentSpec::equicorrelated(4, 0.0), rng).expect("valid spec");
    let settings = SolverSettings::with_tol(1e-12);
    worst((0..3).map(|_| {
        let mut task = make_task(&sampler, &SupportSpec::Bernoulli { p: 0.5 }, 60, 0.1, rng).expect("valid task");
        task.x = task.f_true.clone();
        let (train, val) = task.split(0.5);
        let rep = LinearRepresentation::random(4, 4, false, rng);
        let lam = 0.02;
        let Ok(h) = hypergradient(&rep, &train, &val, lam, InnerKind::Lasso, &settings) else {
            return f64::INFINITY;
        };
        let eps = 1e-6;
        let mut fd = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut plus = rep.theta.clone();
                plus[(i, j)] += eps;
                let mut minus = rep.theta.clone();
                minus[(i, j)] -= eps;
                let lp = LinearRepresentation::new(plus, false).and_then(|r| outer_loss(&r, &train, &val, lam, InnerKind::Lasso, &settings));
                let lm = LinearRepresentation::new(minus, false).and_then(|r| outer_loss(&r, &train, &val, lam, InnerKind::Lasso, &settings));
                match (lp, lm) {
                    (Ok(a), Ok(b)) => fd[(i, j)] = (a - b) / (2.0 * eps),
                    _ => return f64::INFINITY,
                }
            }
        }
        h.grad.sub(&fd).frobenius_norm() / fd.frobenius_norm().max(1e-12)
    }))
}

fn bst_zeroing(rng: &mut RngStream) -> f64 {
    worst((0..50).map(|_| {
        let v: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let out = bst(&v, norm(&v));
        norm(&out)
    }))
}

/// All checks, deterministic in `seed`.
pub fn run_checks(seed: u64) -> Vec<Check> {
    let root = RngStream::new(seed);
    let r = |name: &str| root.child_named(name);
    vec![
        Check::new("bst_zero_at_threshold", bst_zeroing(&mut r("bst")), 0.0),
        Check::new("lambda_max_exact_zeros", lambda_max_zeros(&mut r("lambda-max")), 0.0),
        Check::new("group_cd_kkt", cd_kkt(&mut r("kkt")), 1e-9),
        Check::new("svm_duality_gap_per_sample", svm_gap(&mut r("svm")), 1e-6),
        Check::new("fenchel_conjugate_ray", conjugate_ray(&mut r("conj")), 1e-6),
        Check::new("simplex_projection_sum", simplex_projection(&mut r("simplex")), 1e-12),
        Check::new("hungarian_vs_brute_force", assignment_brute_force(&mut r("assign")), 1e-12),
        Check::new("mcc_signed_permutation", mcc_signed_permutation(&mut r("mcc")), 0.0),
        Check::new("dci_identity_uniform", dci_extremes(), 0.0),
        Check::new("mle_invariance", invariance(&mut r("invariance")), 1e-8),
        Check::new("l20_support_recovery", l20_recovery(&mut r("l20")), 0.0),
        Check::new("hypergradient_fd", hypergradient_fd(&mut r("hypergrad")), 1e-4),
    ]
}
