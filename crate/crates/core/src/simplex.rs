/// Euclidean projection onto the probability simplex `{u >= 0, sum(u) = 1}`.
///
/// Sort-and-threshold: the projection is `max(v - theta, 0)` where `theta` is
/// fixed by the largest `rho` such that `v_(rho) > (sum_{i<=rho} v_(i) - 1) / rho`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector onto the simplex");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s > t {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points_and_corners() {
        let v = [0.2, 0.3, 0.5];
        let p = project_simplex(&v);
        for (a, b) in p.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(project_simplex(&[10.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[0.2, 0.2]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[-3.0]), vec![1.0]);
    }

    proptest! {
        #[test]
        fn kkt_holds(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let p = project_simplex(&v);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            // every active coordinate is shifted by the same theta, inactive ones lie below it
            let active: Vec<usize> = (0..v.len()).filter(|&i| p[i] > 0.0).collect();
            let theta = v[active[0]] - p[active[0]];
            for i in 0..v.len() {
                if p[i] > 0.0 {
                    prop_assert!((v[i] - p[i] - theta).abs() <= 1e-12);
                } else {
                    prop_assert!(v[i] <= theta + 1e-12);
                }
            }
        }

        #[test]
        fn idempotent(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let p = project_simplex(&v);
            let q = project_simplex(&p);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
