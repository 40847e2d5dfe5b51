//! Property tests for invariants that hold on every input.

use proptest::prelude::*;
use spardis::prox::{bst, group_lasso_cd, kkt_residual, lambda_max, objective, PenaltyKind, RegressionProblem, SolverSettings};
use spardis::svm::{duality_gap, DualVariables, SvmProblem};
use spardis::{project_simplex, Matrix, RngStream};
use spardis_oracles::simplex_bisection;

fn vec_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_projection_is_feasible_and_matches_bisection(v in vec_strategy(12)) {
        let p = project_simplex(&v);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (a, b) in p.iter().zip(simplex_bisection(&v)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn bst_is_nonexpansive(a in vec_strategy(4), shift in vec_strategy(4), tau in 0.0f64..3.0) {
        let b: Vec<f64> = a.iter().zip(shift.iter().cycle()).map(|(x, s)| x + 0.1 * s).collect();
        let (pa, pb) = (bst(&a, tau), bst(&b, tau));
        let d_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d_out <= d_in + 1e-12);
    }

    #[test]
    fn cd_solution_satisfies_kkt_and_beats_zero(seed in any::<u64>(), k in 1usize..4, frac in 0.01f64..1.5) {
        let mut rng = RngStream::new(seed);
        let (n, m) = (5 + rng.below(25), 1 + rng.below(10));
        let p = RegressionProblem::new(Matrix::gaussian(n, m, &mut rng), Matrix::gaussian(n, k, &mut rng), 0.0, 0.0).unwrap();
        let p = p.with_lambda(frac * lambda_max(&p, PenaltyKind::Group));
        let w = group_lasso_cd(&p, &SolverSettings::with_tol(1e-10)).unwrap();
        prop_assert!(kkt_residual(&p, w.matrix()) <= 1e-9);
        prop_assert!(objective(&p, w.matrix()) <= objective(&p, &Matrix::zeros(k, m)) + 1e-12);
        if frac >= 1.0 {
            prop_assert_eq!(w.l20(), 0);
        }
    }

    #[test]
    fn any_feasible_dual_bounds_the_primal(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let (n, k, m) = (2 + rng.below(10), 2 + rng.below(3), 1 + rng.below(8));
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let prob = SvmProblem::from_labels(
            Matrix::gaussian(n, m, &mut rng),
            &labels,
            k,
            rng.uniform_range(0.0, 1.0),
            rng.uniform_range(0.1, 2.0),
        )
        .unwrap();
        let lam = Matrix::from_fn(n, k, |_, _| rng.uniform());
        let rows: Vec<Vec<f64>> = (0..n).map(|i| project_simplex(lam.row(i))).collect();
        let dual = DualVariables::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        prop_assert!(duality_gap(&dual, &prob).unwrap() >= -1e-9);
    }

    #[test]
    fn child_streams_are_reproducible(seed in any::<u64>(), idx in any::<u64>()) {
        let a: Vec<u64> = { let mut r = RngStream::new(seed).child(idx); (0..4).map(|_| r.next_u64()).collect() };
        let b: Vec<u64> = { let mut r = RngStream::new(seed).child(idx); (0..4).map(|_| r.next_u64()).collect() };
        prop_assert_eq!(a, b);
    }
}
