//! Disentanglement and prediction metrics.

use serde::{Deserialize, Serialize};

use crate::assignment::{best_assignment, Permutation};
use crate::error::{Error, Result};
use crate::linalg::{dot, lstsq, solve_psd, Matrix};

/// Correlations this close to ±1 are reported as exactly ±1, so that MCC is
/// exactly 1 for learned features equal to the truth up to scaling and
/// permutation.
const UNIT_SNAP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mcc: f64,
    pub r_score: f64,
    pub dci_d: f64,
    pub dci_c: f64,
    /// Mean over true factors of the R² of the linear probe behind `r_score`.
    pub r2: f64,
    pub permutation: Permutation,
}

/// All metrics of `z_learned` against `z_true`.
pub fn evaluate(z_true: &Matrix, z_learned: &Matrix) -> Result<MetricsReport> {
    let (mcc, permutation) = mcc(z_true, z_learned)?;
    let r2s = probe_r2(z_true, z_learned)?;
    let r_score = r2s.iter().map(|r| r.max(0.0).sqrt()).sum::<f64>() / r2s.len() as f64;
    let (dci_d, dci_c) = dci(z_true, z_learned)?;
    Ok(MetricsReport {
        mcc,
        r_score,
        dci_d,
        dci_c,
        r2: r2s.iter().sum::<f64>() / r2s.len() as f64,
        permutation,
    })
}

fn check_pair(z_true: &Matrix, z_learned: &Matrix) -> Result<()> {
    if z_true.rows() != z_learned.rows() {
        return Err(Error::Shape(format!(
            "{} true samples vs {} learned samples",
            z_true.rows(),
            z_learned.rows()
        )));
    }
    if z_true.rows() < 3 {
        return Err(Error::InvalidArgument("metrics need at least 3 samples".into()));
    }
    if z_true.cols() == 0 || z_learned.cols() == 0 {
        return Err(Error::Shape("metrics need at least one feature".into()));
    }
    Ok(())
}

/// Column-centered copy plus column norms of the centered data.
fn centered(z: &Matrix) -> (Matrix, Vec<f64>) {
    let (n, m) = z.shape();
    let mut c = z.clone();
    let mut norms = vec![0.0; m];
    for j in 0..m {
        let col = z.col(j);
        let mu = col.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = col.iter().map(|v| v - mu).collect();
        norms[j] = dot(&centered, &centered).sqrt();
        c.set_col(j, &centered);
    }
    (c, norms)
}

/// Pearson correlations `C[i, j] = corr(z_true[:, i], z_learned[:, j])`.
/// A constant column correlates 0 with everything.
pub fn pearson_matrix(z_true: &Matrix, z_learned: &Matrix) -> Result<Matrix> {
    check_pair(z_true, z_learned)?;
    let (a, na) = centered(z_true);
    let (b, nb) = centered(z_learned);
    let cross = a.t_matmul(&b);
    Ok(Matrix::from_fn(z_true.cols(), z_learned.cols(), |i, j| {
        // a column whose spread is round-off relative to its magnitude is constant
        let tiny_a = na[i] <= 1e-14 * z_true.max_abs() * (z_true.rows() as f64).sqrt();
        let tiny_b = nb[j] <= 1e-14 * z_learned.max_abs() * (z_learned.rows() as f64).sqrt();
        if tiny_a || tiny_b || na[i] == 0.0 || nb[j] == 0.0 {
            return 0.0;
        }
        let c = (cross[(i, j)] / (na[i] * nb[j])).clamp(-1.0, 1.0);
        if 1.0 - c.abs() <= UNIT_SNAP {
            c.signum()
        } else {
            c
        }
    }))
}

/// Mean absolute correlation under the best matching of true to learned
/// features. `perm.apply(i)` is the learned column matched to true factor `i`.
pub fn mcc(z_true: &Matrix, z_learned: &Matrix) -> Result<(f64, Permutation)> {
    if z_true.cols() != z_learned.cols() {
        return Err(Error::Shape(format!(
            "mcc needs equal widths, got {} and {}",
            z_true.cols(),
            z_learned.cols()
        )));
    }
    let c = pearson_matrix(z_true, z_learned)?;
    let abs = Matrix::from_fn(c.rows(), c.cols(), |i, j| c[(i, j)].abs());
    let (perm, total) = best_assignment(&abs)?;
    Ok((total / c.rows() as f64, perm))
}

/// R² of each true factor regressed (with intercept) on all learned features.
fn probe_r2(z_true: &Matrix, z_learned: &Matrix) -> Result<Vec<f64>> {
    check_pair(z_true, z_learned)?;
    let (x, _) = centered(z_learned);
    let (t, tn) = centered(z_true);
    let coefs = regress_columns(&x, &t)?;
    let pred = x.matmul_t(&coefs);
    Ok((0..t.cols())
        .map(|i| {
            let ss_tot = tn[i] * tn[i];
            if ss_tot == 0.0 {
                return 0.0;
            }
            let ss_res: f64 = (0..t.rows()).map(|r| (t[(r, i)] - pred[(r, i)]).powi(2)).sum();
            (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
        })
        .collect())
}

/// Least squares `targets ≈ x · coefᵀ`, one row of `coef` per target column.
/// QR first; if `x` is rank deficient, normal equations with a `1e-10`
/// relative ridge.
fn regress_columns(x: &Matrix, targets: &Matrix) -> Result<Matrix> {
    let mut coef = Matrix::zeros(targets.cols(), x.cols());
    let qr_ok = x.rows() >= x.cols()
        && (0..targets.cols()).try_for_each(|i| -> Result<()> {
            let c = lstsq(x, &targets.col(i))?;
            coef.row_mut(i).copy_from_slice(&c);
            Ok(())
        })
        .is_ok();
    if qr_ok {
        return Ok(coef);
    }
    let mut g = x.gram();
    let scale = (0..g.rows()).map(|j| g[(j, j)]).fold(0.0, f64::max).max(1.0);
    for j in 0..g.rows() {
        g[(j, j)] += 1e-10 * scale;
    }
    for i in 0..targets.cols() {
        let c = solve_psd(&g, &x.t_matvec(&targets.col(i)))?;
        coef.row_mut(i).copy_from_slice(&c);
    }
    Ok(coef)
}

/// Mean multiple correlation `R = √R²` of each true factor on the learned
/// features. Always at least the MCC.
pub fn r_score(z_true: &Matrix, z_learned: &Matrix) -> Result<f64> {
    let r2s = probe_r2(z_true, z_learned)?;
    Ok(r2s.iter().map(|r| r.sqrt()).sum::<f64>() / r2s.len() as f64)
}

/// Standardizes columns to mean 0, variance 1; constant columns become 0.
fn standardized(z: &Matrix) -> Matrix {
    let (mut c, norms) = centered(z);
    let n = z.rows() as f64;
    for j in 0..c.cols() {
        let sd = norms[j] / n.sqrt();
        let col: Vec<f64> = c.col(j).iter().map(|v| if sd > 0.0 { v / sd } else { 0.0 }).collect();
        c.set_col(j, &col);
    }
    c
}

/// Importance matrix `I = |W|` of the linear regression from standardized
/// learned features to standardized true factors; `I[i, j]` is the weight of
/// learned feature `j` for true factor `i`.
pub fn importance_matrix(z_true: &Matrix, z_learned: &Matrix) -> Result<Matrix> {
    check_pair(z_true, z_learned)?;
    let x = standardized(z_learned);
    let t = standardized(z_true);
    let n = x.rows() as f64;
    let mut g = x.gram().scaled(1.0 / n);
    for j in 0..g.rows() {
        g[(j, j)] += 1e-10;
    }
    let mut imp = Matrix::zeros(t.cols(), x.cols());
    for i in 0..t.cols() {
        let rhs: Vec<f64> = x.t_matvec(&t.col(i)).iter().map(|v| v / n).collect();
        let c = solve_psd(&g, &rhs)?;
        for (j, v) in c.iter().enumerate() {
            imp[(i, j)] = v.abs();
        }
    }
    Ok(imp)
}

/// `1 − H(p)` with `p = v / Σv` and the entropy in base `len(v)`; an all-zero
/// vector scores 0.
fn one_minus_entropy(v: &[f64]) -> f64 {
    let total: f64 = v.iter().sum();
    if v.len() < 2 {
        return if total > 0.0 { 1.0 } else { 0.0 };
    }
    if !(total > 0.0) {
        log::debug!("dci: all-zero importance vector scores 0");
        return 0.0;
    }
    let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if lo == hi {
        return 0.0;
    }
    let h: f64 = v
        .iter()
        .map(|&x| x / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        / (v.len() as f64).ln();
    (1.0 - h).clamp(0.0, 1.0)
}

/// DCI disentanglement (rows) and completeness (columns) of an importance
/// matrix.
pub fn dci_from_importance(imp: &Matrix) -> (f64, f64) {
    let (r, c) = imp.shape();
    let d = (0..r).map(|i| one_minus_entropy(imp.row(i))).sum::<f64>() / r as f64;
    let comp = (0..c).map(|j| one_minus_entropy(&imp.col(j))).sum::<f64>() / c as f64;
    (d, comp)
}

pub fn dci(z_true: &Matrix, z_learned: &Matrix) -> Result<(f64, f64)> {
    Ok(dci_from_importance(&importance_matrix(z_true, z_learned)?))
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::InvalidArgument("r2 needs at least 2 samples".into()));
    }
    let mu = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mu).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument("r2 is undefined for constant targets".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_orthogonal;
    use crate::rng::RngStream;

    #[test]
    fn identity_scores_one() {
        let mut rng = RngStream::new(1);
        let z = Matrix::gaussian(200, 4, &mut rng);
        let (v, p) = mcc(&z, &z).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(p, Permutation::identity(4));
        assert!((r_score(&z, &z).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_permutation_scores_one() {
        let mut rng = RngStream::new(2);
        let z = Matrix::gaussian(300, 5, &mut rng);
        let perm = Permutation::new(vec![3, 0, 4, 1, 2]).unwrap();
        let d = [2.5, -0.1, 7.0, -3.0, 1e-3];
        let mut zl = Matrix::zeros(300, 5);
        for i in 0..5 {
            let col: Vec<f64> = z.col(i).iter().map(|v| d[i] * v).collect();
            zl.set_col(perm.apply(i), &col);
        }
        let (v, p) = mcc(&z, &zl).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(p, perm);
    }

    #[test]
    fn constant_column_correlates_zero() {
        let mut rng = RngStream::new(3);
        let z = Matrix::gaussian(50, 2, &mut rng);
        let mut zl = z.clone();
        zl.set_col(1, &[4.0; 50]);
        let c = pearson_matrix(&z, &zl).unwrap();
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 1)], 0.0);
        let (v, _) = mcc(&z, &zl).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn r_score_linear_equivalence() {
        let mut rng = RngStream::new(4);
        let z = Matrix::gaussian(500, 4, &mut rng);
        let l = sample_orthogonal(4, &mut rng);
        let zl = z.matmul_t(&l);
        assert!((r_score(&z, &zl).unwrap() - 1.0).abs() < 1e-10);
        let (m, _) = mcc(&z, &zl).unwrap();
        assert!(m < 1.0);
    }

    #[test]
    fn r_score_independent_is_small() {
        let mut rng = RngStream::new(5);
        let a = Matrix::gaussian(10_000, 3, &mut rng);
        let b = Matrix::gaussian(10_000, 3, &mut rng);
        assert!(r_score(&a, &b).unwrap() <= 0.1);
    }

    #[test]
    fn r_score_rank_deficient_learned() {
        let mut rng = RngStream::new(6);
        let z = Matrix::gaussian(100, 3, &mut rng);
        let mut zl = z.clone();
        zl.set_col(2, &z.col(0));
        let r = r_score(&z, &zl).unwrap();
        assert!(r.is_finite() && r > 0.6 && r < 1.0);
    }

    #[test]
    fn dci_reference_cases() {
        assert_eq!(dci_from_importance(&Matrix::identity(4)), (1.0, 1.0));
        let uniform = Matrix::from_fn(4, 4, |_, _| 0.25);
        assert_eq!(dci_from_importance(&uniform), (0.0, 0.0));
        let perm = Permutation::new(vec![2, 0, 1]).unwrap().to_matrix();
        let scaled = perm.matmul(&Matrix::from_diag(&[3.0, 0.2, 9.0]));
        assert_eq!(dci_from_importance(&scaled), (1.0, 1.0));
    }

    #[test]
    fn dci_zero_row_contributes_zero() {
        let mut imp = Matrix::identity(2);
        imp[(1, 1)] = 0.0;
        let (d, c) = dci_from_importance(&imp);
        assert_eq!(d, 0.5);
        assert_eq!(c, 0.5);
    }

    #[test]
    fn dci_of_identical_features_near_one() {
        let mut rng = RngStream::new(7);
        let z = Matrix::gaussian(400, 3, &mut rng);
        let (d, c) = dci(&z, &z).unwrap();
        assert!(d > 1.0 - 1e-6 && c > 1.0 - 1e-6);
    }

    #[test]
    fn r2_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[2.5; 4]).unwrap(), 0.0);
        assert!(r2(&y, &[4.0, 3.0, 2.0, 1.0]).unwrap() < 0.0);
        assert!(r2(&[1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(mcc(&Matrix::zeros(5, 2), &Matrix::zeros(4, 2)).is_err());
        assert!(mcc(&Matrix::zeros(5, 2), &Matrix::zeros(5, 3)).is_err());
    }
}
