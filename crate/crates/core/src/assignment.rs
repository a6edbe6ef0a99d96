//! Linear assignment (Hungarian / Kuhn-Munkres).
//!
//! Dense O(n^3) shortest-augmenting-path variant with row and column
//! potentials. Rectangular inputs are padded with zero-cost cells to a
//! square; pairs that touch padding are dropped from the result. Among
//! equal-cost optima the lexicographically smallest matching (by row, then
//! column) is returned.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("cost matrix has no rows or no columns")]
    EmptyMatrix,
    #[error("cost matrix rows have inconsistent lengths")]
    Ragged,
    #[error("cost at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self, AssignmentError> {
        if rows == 0 || cols == 0 {
            return Err(AssignmentError::EmptyMatrix);
        }
        if costs.len() != rows * cols {
            return Err(AssignmentError::Ragged);
        }
        if let Some(i) = costs.iter().position(|c| !c.is_finite()) {
            return Err(AssignmentError::NonFinite { row: i / cols, col: i % cols });
        }
        Ok(Self { rows, cols, costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(AssignmentError::Ragged);
        }
        Self::new(n, m, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, AssignmentError> {
        let costs = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self::new(rows, cols, costs)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.cols + col]
    }

    /// Sum of the matched cells, accumulated in the order given.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Minimum-cost matching of `min(rows, cols)` pairs, sorted by row.
pub fn solve_assignment(m: &CostMatrix) -> Vec<(usize, usize)> {
    let n = m.rows.max(m.cols);
    let square: Vec<Vec<f64>> = (0..n)
        .map(|r| (0..n).map(|c| if r < m.rows && c < m.cols { m.get(r, c) } else { 0.0 }).collect())
        .collect();

    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..n).collect();
    let mut best = hungarian(&square, &all_rows, &all_cols);
    let mut best_cost = canonical_cost(&square, &best);

    // Fix rows one at a time to the smallest column that still admits an
    // optimal completion.
    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(n);
    for row in 0..n {
        let used: Vec<usize> = fixed.iter().map(|&(_, c)| c).collect();
        let current = best[row];
        for col in (0..n).filter(|c| !used.contains(c)) {
            if col == current {
                break;
            }
            let rest_rows: Vec<usize> = (row + 1..n).collect();
            let rest_cols: Vec<usize> = (0..n).filter(|c| *c != col && !used.contains(c)).collect();
            let rest = hungarian(&square, &rest_rows, &rest_cols);
            let mut candidate = best.clone();
            for &(r, c) in &fixed {
                candidate[r] = c;
            }
            candidate[row] = col;
            for &r in &rest_rows {
                candidate[r] = rest[r];
            }
            let cost = canonical_cost(&square, &candidate);
            if cost <= best_cost {
                best = candidate;
                best_cost = cost;
                break;
            }
        }
        fixed.push((row, best[row]));
    }

    (0..m.rows).map(|r| (r, best[r])).filter(|&(_, c)| c < m.cols).collect()
}

fn canonical_cost(square: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| square[r][c]).sum()
}

/// Solves the square sub-problem on the given row and column subsets
/// (equal length). Returns a vector indexed by global row holding the global
/// column; rows outside the subset hold `usize::MAX`.
fn hungarian(costs: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    let mut out = vec![usize::MAX; costs.len()];
    if n == 0 {
        return out;
    }
    let cost = |i: usize, j: usize| costs[rows[i - 1]][cols[j - 1]];

    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
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
            for j in 0..=n {
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

    for j in 1..=n {
        if p[j] > 0 {
            out[rows[p[j] - 1]] = cols[j - 1];
        }
    }
    out
}
