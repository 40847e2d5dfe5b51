//! Linear assignment on dense square score matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A bijection on `0..m`; `map[i]` is the image of `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(m: usize) -> Self {
        Permutation {
            map: (0..m).collect(),
        }
    }

    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || seen[j] {
                return Err(Error::InvalidArgument(format!("{map:?} is not a permutation")));
            }
            seen[j] = true;
        }
        Ok(Permutation { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &j) in self.map.iter().enumerate() {
            inv[j] = i;
        }
        Permutation { map: inv }
    }

    /// Permutation matrix `P` with `P[i, map[i]] = 1`.
    pub fn to_matrix(&self) -> Matrix {
        let m = self.map.len();
        let mut p = Matrix::zeros(m, m);
        for (i, &j) in self.map.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    }
}

/// Finds the permutation maximizing `sum_i scores[i, perm(i)]`.
///
/// Hungarian method with row/column potentials (shortest augmenting paths),
/// O(m^3). Returns the permutation and its total score, summed in row order.
pub fn best_assignment(scores: &Matrix) -> Result<(Permutation, f64)> {
    if !scores.is_square() {
        return Err(Error::Shape(format!(
            "assignment needs a square score matrix, got {}x{}",
            scores.rows(),
            scores.cols()
        )));
    }
    let m = scores.rows();
    if m == 0 {
        return Ok((Permutation::identity(0), 0.0));
    }
    // minimize cost = -score; 1-based arrays with a virtual column 0
    let cost = |i: usize, j: usize| -scores[(i - 1, j - 1)];
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut map = vec![0usize; m];
    for j in 1..=m {
        map[p[j] - 1] = j - 1;
    }
    let total = (0..m).map(|i| scores[(i, map[i])]).sum();
    Ok((Permutation { map }, total))
}
