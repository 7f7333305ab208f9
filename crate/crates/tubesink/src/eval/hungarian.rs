//! Optimal one-to-one assignment (Kuhn-Munkres with potentials, O(n²m)).

use crate::tensor::Tensor;

/// Minimum-cost assignment of rows to columns for an `n x m` cost matrix.
///
/// Returns, for each row, the column it is matched to, or `None` when there
/// are more rows than columns and the row stays unmatched. Every column is
/// used at most once.
pub fn assign_min(cost: &Tensor) -> Vec<Option<usize>> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n <= m {
        assign_min_wide(cost)
    } else {
        // Transpose, solve, and invert the matching.
        let t = cost.transpose();
        let col_to_row = assign_min_wide(&t);
        let mut out = vec![None; n];
        for (col, row) in col_to_row.into_iter().enumerate() {
            if let Some(r) = row {
                out[r] = Some(col);
            }
        }
        out
    }
}

/// Maximum-total-score assignment; scores may be any finite values.
pub fn assign_max(score: &Tensor) -> Vec<Option<usize>> {
    assign_min(&score.scale(-1.0))
}

/// Total cost of an assignment under the given matrix.
pub fn assignment_cost(cost: &Tensor, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost.get(i, j)))
        .sum()
}

// Potential-based shortest augmenting path; requires n <= m.
fn assign_min_wide(cost: &Tensor) -> Vec<Option<usize>> {
    let (n, m) = cost.shape();
    debug_assert!(n <= m);
    // 1-indexed working arrays; p[j] = row matched to column j (0 = none).
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
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
        // Unwind augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        }
    }

    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}
