//! Minimum-cost bipartite assignment (Hungarian algorithm).

/// Optimal matching of targets (rows) to candidates (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(target, candidate)` pairs sorted by target index.
    pub assignment: Vec<(usize, usize)>,
    pub unmatched_candidates: Vec<usize>,
    pub total_cost: f64,
}

impl MatchResult {
    /// Candidate matched to `target`, if any.
    pub fn candidate_of(&self, target: usize) -> Option<usize> {
        self.assignment.iter().find(|(t, _)| *t == target).map(|(_, c)| *c)
    }
}

/// Solves the rectangular assignment problem on a row-major cost matrix
/// with `n_targets` rows. Every row is matched when there are at least as
/// many columns as rows, otherwise every column is.
///
/// Uses the shortest-augmenting-path formulation with row/column
/// potentials, `O(n² k)`.
///
/// # Panics
/// If any row length differs from the first or an entry is not finite.
pub fn hungarian(costs: &[Vec<f64>]) -> MatchResult {
    let n = costs.len();
    let k = costs.first().map_or(0, Vec::len);
    assert!(costs.iter().all(|r| r.len() == k), "ragged cost matrix");
    assert!(costs.iter().flatten().all(|v| v.is_finite()), "non-finite cost");
    if n == 0 || k == 0 {
        return MatchResult {
            assignment: Vec::new(),
            unmatched_candidates: (0..k).collect(),
            total_cost: 0.0,
        };
    }
    let mut pairs = if n <= k {
        solve(n, k, |i, j| costs[i][j])
    } else {
        solve(k, n, |i, j| costs[j][i]).into_iter().map(|(c, t)| (t, c)).collect()
    };
    pairs.sort_unstable();
    let mut used = vec![false; k];
    for &(_, c) in &pairs {
        used[c] = true;
    }
    let total_cost = pairs.iter().map(|&(t, c)| costs[t][c]).sum();
    MatchResult {
        assignment: pairs,
        unmatched_candidates: (0..k).filter(|&c| !used[c]).collect(),
        total_cost,
    }
}

/// Core solver for `rows ≤ cols`; returns `(row, col)` pairs.
fn solve(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based arrays; column 0 is a virtual column.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=cols)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let r = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(r.assignment, vec![(0, 0), (1, 1)]);
        assert_eq!(r.total_cost, 2.0);
        let r = hungarian(&[vec![5.0, 1.0, 3.0]]);
        assert_eq!(r.assignment, vec![(0, 1)]);
        assert_eq!(r.unmatched_candidates, vec![0, 2]);
        assert_eq!(r.total_cost, 1.0);
    }

    #[test]
    fn more_targets_than_candidates() {
        let r = hungarian(&[vec![4.0], vec![1.0], vec![3.0]]);
        assert_eq!(r.assignment, vec![(1, 0)]);
        assert!(r.unmatched_candidates.is_empty());
        assert_eq!(r.total_cost, 1.0);
    }

    #[test]
    fn empty() {
        let r = hungarian(&[]);
        assert!(r.assignment.is_empty());
        assert_eq!(r.total_cost, 0.0);
    }
}
