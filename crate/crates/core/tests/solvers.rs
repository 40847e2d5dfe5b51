//! Coordinate-descent solvers against the independent proximal-gradient
//! reference, plus λ_max and Ridge path checks.

use spardis::prox::{
    group_lasso_cd, kkt_residual, lambda_max, lasso_cd, objective, ridge_path, ridge_solve, PenaltyKind,
    RegressionProblem, SolverSettings,
};
use spardis::{Matrix, RngStream};
use spardis_oracles::{group_objective, prox_grad_group_lasso, Rows};

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn random_problem(rng: &mut RngStream, k: usize) -> RegressionProblem {
    let (n, m) = (10 + rng.below(30), 2 + rng.below(12));
    let f = Matrix::gaussian(n, m, rng);
    let y = Matrix::gaussian(n, k, rng);
    let l2 = if rng.bernoulli(0.3) { rng.uniform_range(0.0, 0.5) } else { 0.0 };
    let p = RegressionProblem::new(f, y, 0.0, l2).unwrap();
    let frac = rng.uniform_range(0.05, 0.9);
    p.with_lambda(frac * lambda_max(&p, PenaltyKind::Group))
}

#[test]
fn cd_matches_proximal_gradient_objective() {
    let mut rng = RngStream::new(11);
    for t in 0..40 {
        let k = 1 + t % 3;
        let p = random_problem(&mut rng, k);
        let w = group_lasso_cd(&p, &SolverSettings::with_tol(1e-12)).unwrap();
        let (f, y) = (rows(&p.features), rows(&p.targets));
        let w_ref = prox_grad_group_lasso(&f, &y, p.lambda, p.l2_lambda, 1e-14, 200_000);
        let ours = group_objective(&f, &y, &rows(w.matrix()), p.lambda, p.l2_lambda);
        let theirs = group_objective(&f, &y, &w_ref, p.lambda, p.l2_lambda);
        assert!((ours - theirs).abs() <= 1e-9, "instance {t}: {ours} vs {theirs}");
        assert!((objective(&p, w.matrix()) - ours).abs() <= 1e-12 * ours.max(1.0));
    }
}

#[test]
fn lasso_and_group_solvers_agree_for_one_target() {
    let mut rng = RngStream::new(12);
    for _ in 0..20 {
        let p = random_problem(&mut rng, 1);
        let s = SolverSettings::with_tol(1e-12);
        let a = lasso_cd(&p, &s).unwrap();
        let b = group_lasso_cd(&p, &s).unwrap();
        assert!((objective(&p, a.matrix()) - objective(&p, b.matrix())).abs() <= 1e-10);
        assert!(kkt_residual(&p, a.matrix()) <= 1e-12);
    }
}

#[test]
fn lambda_max_gives_exact_zeros_and_just_below_does_not() {
    let mut rng = RngStream::new(13);
    for t in 0..50 {
        let k = 1 + t % 3;
        let mut p = random_problem(&mut rng, k);
        p.l2_lambda = 0.0;
        let lmax = lambda_max(&p, PenaltyKind::Group);
        let at = group_lasso_cd(&p.with_lambda(lmax), &SolverSettings::default()).unwrap();
        assert!(at.matrix().data().iter().all(|&v| v == 0.0));
        let above = group_lasso_cd(&p.with_lambda(2.0 * lmax), &SolverSettings::default()).unwrap();
        assert_eq!(above.l20(), 0);
        let below = group_lasso_cd(&p.with_lambda(0.99 * lmax), &SolverSettings::with_tol(1e-12)).unwrap();
        assert!(below.l20() >= 1);
    }
}

#[test]
fn ridge_path_matches_single_solves() {
    let mut rng = RngStream::new(14);
    let f = Matrix::gaussian(30, 8, &mut rng);
    let y: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
    let lams = [1e-3, 0.1, 2.0];
    let path = ridge_path(&f, &y, &lams).unwrap();
    for (lam, w) in lams.iter().zip(&path) {
        let direct = ridge_solve(&RegressionProblem::ridge(f.clone(), &y, *lam).unwrap()).unwrap();
        for (a, b) in w.iter().zip(direct.vector()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}
