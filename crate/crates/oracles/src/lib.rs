//! Slow, self-contained reference computations for testing `spardis`.
//!
//! Everything here works on plain nested vectors and shares no code with the
//! library under test.

pub type Rows = Vec<Vec<f64>>;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Every permutation of `0..m`, by Heap's algorithm.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..m).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; m];
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Maximum of `Σᵢ scores[i][σ(i)]` over all permutations (summed in row
/// order) and one maximizer.
pub fn brute_force_assignment(scores: &Rows) -> (Vec<usize>, f64) {
    let m = scores.len();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for p in permutations(m) {
        let s: f64 = (0..m).map(|i| scores[i][p[i]]).sum();
        if s > best.1 {
            best = (p, s);
        }
    }
    best
}

/// Pearson correlation by the textbook two-pass formula; 0 if either input
/// is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// MCC by enumerating every matching of columns.
pub fn brute_force_mcc(z_true_cols: &Rows, z_learned_cols: &Rows) -> f64 {
    let m = z_true_cols.len();
    let c: Rows = z_true_cols
        .iter()
        .map(|a| z_learned_cols.iter().map(|b| pearson(a, b).abs()).collect())
        .collect();
    brute_force_assignment(&c).1 / m as f64
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn gauss_solve(a: &Rows, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Rows = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 {
            return None;
        }
        m.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            for c in col..=n {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    Some(x)
}

/// Ordinary least squares via the normal equations.
pub fn ols(x_rows: &Rows, y: &[f64]) -> Option<Vec<f64>> {
    let m = x_rows[0].len();
    let mut g = vec![vec![0.0; m]; m];
    let mut b = vec![0.0; m];
    for (row, &yi) in x_rows.iter().zip(y) {
        for a in 0..m {
            b[a] += row[a] * yi;
            for c in 0..m {
                g[a][c] += row[a] * row[c];
            }
        }
    }
    gauss_solve(&g, &b)
}

/// `(1/2n)‖Y − F Wᵀ‖² + λ Σⱼ ‖W[:, j]‖ + (l2/2)‖W‖²` with `F` given by rows
/// (`n×m`), `Y` by rows (`n×k`) and `W` by rows (`k×m`).
pub fn group_objective(f: &Rows, y: &Rows, w: &Rows, lambda: f64, l2: f64) -> f64 {
    let n = f.len() as f64;
    let k = w.len();
    let m = f[0].len();
    let mut fit = 0.0;
    for (fi, yi) in f.iter().zip(y) {
        for t in 0..k {
            let r = yi[t] - dot(fi, &w[t]);
            fit += r * r;
        }
    }
    let mut pen = 0.0;
    let mut sq = 0.0;
    for j in 0..m {
        let col: Vec<f64> = (0..k).map(|t| w[t][j]).collect();
        pen += norm(&col);
        sq += dot(&col, &col);
    }
    fit / (2.0 * n) + lambda * pen + 0.5 * l2 * sq
}

/// Power iteration for the largest eigenvalue of `FᵀF / n`.
fn lipschitz(f: &Rows) -> f64 {
    let n = f.len() as f64;
    let m = f[0].len();
    let mut v = vec![1.0 / (m as f64).sqrt(); m];
    let mut lam = 0.0;
    for _ in 0..500 {
        let fv: Vec<f64> = f.iter().map(|r| dot(r, &v)).collect();
        let mut g = vec![0.0; m];
        for (r, &s) in f.iter().zip(&fv) {
            for j in 0..m {
                g[j] += r[j] * s / n;
            }
        }
        let nrm = norm(&g);
        if nrm == 0.0 {
            return 0.0;
        }
        lam = nrm;
        v = g.iter().map(|x| x / nrm).collect();
    }
    lam
}

/// FISTA with gradient-based restarts for the group objective above. Runs
/// until the proximal-gradient step moves less than `tol` or `max_iters`.
/// Returns `W` by rows (`k×m`).
pub fn prox_grad_group_lasso(f: &Rows, y: &Rows, lambda: f64, l2: f64, tol: f64, max_iters: usize) -> Rows {
    let n = f.len() as f64;
    let m = f[0].len();
    let k = y[0].len();
    let lip = lipschitz(f) * 1.0001 + l2 + 1e-12;
    let step = 1.0 / lip;
    let grad = |w: &Rows| -> Rows {
        let mut g = vec![vec![0.0; m]; k];
        for (fi, yi) in f.iter().zip(y) {
            for t in 0..k {
                let r = dot(fi, &w[t]) - yi[t];
                for j in 0..m {
                    g[t][j] += r * fi[j] / n;
                }
            }
        }
        for t in 0..k {
            for j in 0..m {
                g[t][j] += l2 * w[t][j];
            }
        }
        g
    };
    let prox = |v: &Rows| -> Rows {
        let mut out = vec![vec![0.0; m]; k];
        for j in 0..m {
            let col: Vec<f64> = (0..k).map(|t| v[t][j]).collect();
            let nrm = norm(&col);
            let shrink = if nrm > step * lambda { 1.0 - step * lambda / nrm } else { 0.0 };
            for t in 0..k {
                out[t][j] = col[t] * shrink;
            }
        }
        out
    };
    let mut x = vec![vec![0.0; m]; k];
    let mut z = x.clone();
    let mut theta = 1.0f64;
    for _ in 0..max_iters {
        let g = grad(&z);
        let v: Rows = (0..k)
            .map(|t| (0..m).map(|j| z[t][j] - step * g[t][j]).collect())
            .collect();
        let x_new = prox(&v);
        let mut moved = 0.0f64;
        let mut restart = 0.0;
        for t in 0..k {
            for j in 0..m {
                moved = moved.max((x_new[t][j] - x[t][j]).abs());
                restart += (z[t][j] - x_new[t][j]) * (x_new[t][j] - x[t][j]);
            }
        }
        let theta_new = (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0;
        if restart > 0.0 {
            theta = 1.0;
            z = x_new.clone();
        } else {
            let beta = (theta - 1.0) / theta_new;
            theta = theta_new;
            z = (0..k)
                .map(|t| (0..m).map(|j| x_new[t][j] + beta * (x_new[t][j] - x[t][j])).collect())
                .collect();
        }
        x = x_new;
        if moved < tol {
            break;
        }
    }
    x
}

/// Sup of `v·w − λ₁‖w‖ − (λ₂/2)‖w‖²` by nested grid search (`k ≤ 3`): a
/// `points^k` grid over a box containing the maximizer, re-centered and
/// shrunk around the best point each round.
pub fn grid_sup_conjugate(v: &[f64], lambda1: f64, lambda2: f64, points: usize, rounds: usize) -> f64 {
    let k = v.len();
    assert!((1..=3).contains(&k), "grid search supports k <= 3");
    let f = |w: &[f64]| dot(v, w) - lambda1 * norm(w) - 0.5 * lambda2 * dot(w, w);
    let mut center = vec![0.0; k];
    let mut half = norm(v) / lambda2 + 1.0;
    let mut best = f(&center);
    let total = points.pow(k as u32);
    let mut w = vec![0.0; k];
    for _ in 0..rounds {
        let mut best_w = center.clone();
        for idx in 0..total {
            let mut r = idx;
            for a in 0..k {
                let i = r % points;
                r /= points;
                w[a] = center[a] - half + 2.0 * half * i as f64 / (points - 1) as f64;
            }
            let val = f(&w);
            if val > best {
                best = val;
                best_w.copy_from_slice(&w);
            }
        }
        center = best_w;
        half *= 4.0 / (points - 1) as f64;
    }
    best
}

/// Crammer–Singer primal `Σᵢ maxₗ (1 − Yᵢₗ + (Wₗ − W_yᵢ)·Fᵢ) + λ₁‖W‖₂,₁ +
/// (λ₂/2)‖W‖²` with `W` by rows (`k×m`).
pub fn svm_primal(f: &Rows, labels: &[usize], w: &Rows, lambda1: f64, lambda2: f64) -> f64 {
    let k = w.len();
    let m = f[0].len();
    let mut loss = 0.0;
    for (fi, &yi) in f.iter().zip(labels) {
        let own = dot(&w[yi], fi);
        let mut worst = f64::NEG_INFINITY;
        for l in 0..k {
            let margin = if l == yi { 0.0 } else { 1.0 };
            worst = worst.max(margin + dot(&w[l], fi) - own);
        }
        loss += worst;
    }
    let mut pen = 0.0;
    let mut sq = 0.0;
    for j in 0..m {
        let col: Vec<f64> = (0..k).map(|t| w[t][j]).collect();
        pen += norm(&col);
        sq += dot(&col, &col);
    }
    loss + lambda1 * pen + 0.5 * lambda2 * sq
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Simplex projection by bisection on the threshold.
pub fn simplex_bisection(v: &[f64]) -> Vec<f64> {
    let excess = |t: f64| v.iter().map(|x| (x - t).max(0.0)).sum::<f64>() - 1.0;
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).max(0.0)).collect()
}

/// `1 − H(p)` per row, base-`len` entropy, averaged.
pub fn dci_rows(imp: &Rows) -> f64 {
    let mut acc = 0.0;
    for row in imp {
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            continue;
        }
        let h: f64 = row
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| {
                let p = x / s;
                -p * p.ln()
            })
            .sum();
        acc += 1.0 - h / (row.len() as f64).ln();
    }
    acc / imp.len() as f64
}

/// `n choose k`, exact for the small values used in tests.
pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}
