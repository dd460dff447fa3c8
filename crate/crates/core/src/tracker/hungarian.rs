//! Minimum-cost rectangular assignment (shortest augmenting paths with
//! dual potentials, `O(n² m)` for `n <= m`).

/// Optimal assignment of the rows of an `n×m` cost matrix.
///
/// Returns, for every row, the assigned column. When `n > m` the surplus
/// rows stay unassigned; otherwise every row gets a distinct column.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    if m == 0 {
        return vec![None; n];
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = hungarian(&t);
        let mut rows = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return rows;
    }

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut rows = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            rows[owner[j] - 1] = Some(j - 1);
        }
    }
    rows
}

/// Assignment where no pair may cost more than `thresh`.
///
/// Each side is padded with dummy partners costing `thresh / 2`, so leaving a
/// row and a column unmatched costs exactly `thresh`; pairs above the
/// threshold are never preferred and are dropped if tied.
pub fn assign_with_threshold(cost: &[Vec<f64>], thresh: f64) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let size = n + m;
    let big = thresh + 1e6;
    let mut ext = vec![vec![thresh / 2.0; size]; size];
    for (i, row) in ext.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            if i < n && j < m {
                let v = cost[i][j];
                *c = if v.is_finite() && v <= thresh { v } else { big };
            } else if i >= n && j >= m {
                *c = 0.0;
            }
        }
    }
    hungarian(&ext)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let j = j?;
            (i < n && j < m && cost[i][j] <= thresh).then_some((i, j))
        })
        .collect()
}

/// Total cost of a row assignment.
pub fn assignment_cost(cost: &[Vec<f64>], rows: &[Option<usize>]) -> f64 {
    rows.iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost[i][j]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Cheapest matching of size `min(n, m)` by enumeration.
    fn brute(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, left: usize) -> f64 {
            if left == 0 {
                return 0.0;
            }
            if i == cost.len() {
                return f64::INFINITY;
            }
            let rows_left = cost.len() - i;
            let mut best = if rows_left > left { go(cost, i + 1, used, left) } else { f64::INFINITY };
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[i][j] + go(cost, i + 1, used, left - 1));
                    used[j] = false;
                }
            }
            best
        }
        let m = cost[0].len();
        go(cost, 0, &mut vec![false; m], cost.len().min(m))
    }

    #[test]
    fn crossed_pairs() {
        let iou = [[0.8, 0.6], [0.5, 0.9]];
        let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
        assert_eq!(hungarian(&cost), vec![Some(0), Some(1)]);
    }

    #[test]
    fn degenerate_shapes() {
        assert!(hungarian(&[]).is_empty());
        assert_eq!(hungarian(&[vec![], vec![]]), vec![None, None]);
        assert_eq!(hungarian(&[vec![3.0], vec![1.0], vec![2.0]]), vec![None, Some(0), None]);
    }

    #[test]
    fn threshold_rejects_expensive_pairs() {
        let cost = vec![vec![0.1, 0.95], vec![0.9, 0.99]];
        assert_eq!(assign_with_threshold(&cost, 0.8), vec![(0, 0)]);
        assert!(assign_with_threshold(&[vec![0.85]], 0.8).is_empty());
        assert!(assign_with_threshold(&[], 0.8).is_empty());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            n in 1usize..=5,
            m in 1usize..=5,
            vals in proptest::collection::vec(0.0..1.0f64, 25),
        ) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| vals[i * 5 + j]).collect()).collect();
            let rows = hungarian(&cost);
            let assigned: Vec<usize> = rows.iter().flatten().copied().collect();
            prop_assert_eq!(assigned.len(), n.min(m));
            let mut uniq = assigned.clone();
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), assigned.len());
            prop_assert!((assignment_cost(&cost, &rows) - brute(&cost)).abs() < 1e-9);
        }

        #[test]
        fn thresholded_assignment_is_a_valid_matching(
            n in 1usize..=5,
            m in 1usize..=5,
            vals in proptest::collection::vec(0.0..1.0f64, 25),
        ) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| vals[i * 5 + j]).collect()).collect();
            let pairs = assign_with_threshold(&cost, 0.5);
            let mut rs: Vec<_> = pairs.iter().map(|p| p.0).collect();
            let mut cs: Vec<_> = pairs.iter().map(|p| p.1).collect();
            rs.sort();
            rs.dedup();
            cs.sort();
            cs.dedup();
            prop_assert_eq!(rs.len(), pairs.len());
            prop_assert_eq!(cs.len(), pairs.len());
            prop_assert!(pairs.iter().all(|&(i, j)| cost[i][j] <= 0.5));
        }
    }
}
