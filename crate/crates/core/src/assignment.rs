//! Optimal assignment (Hungarian / Kuhn–Munkres).

/// Minimum-cost perfect assignment on a square matrix; `result[row] = col`.
///
/// O(n³) shortest-augmenting-path formulation with row/column potentials.
pub fn solve_square(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(cost.iter().all(|r| r.len() == n), "cost matrix must be square");
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
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
    let mut result = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}

/// Maximum-weight partial matching on an `n × m` weight matrix.
///
/// `None` entries can never be paired and non-positive weights are never
/// worth pairing. Solved exactly by padding to an `(n + m)` square
/// assignment in which every row and column may instead take a zero-cost
/// dummy partner. Returns `(row, col)` pairs sorted by row.
pub fn max_weight_matching(weights: &[Vec<Option<f64>>]) -> Vec<(usize, usize)> {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let size = n + m;
    let forbidden: f64 = 1.0
        + weights
            .iter()
            .flatten()
            .flatten()
            .map(|w| w.abs())
            .sum::<f64>();
    let mut cost = vec![vec![0.0; size]; size];
    for (i, row) in weights.iter().enumerate() {
        assert_eq!(row.len(), m, "ragged weight matrix");
        for (j, w) in row.iter().enumerate() {
            cost[i][j] = match w {
                Some(w) if *w > 0.0 => -w,
                Some(_) => 0.0,
                None => forbidden,
            };
        }
    }
    // Dummy-to-dummy pairs are free; real rows and columns can always fall
    // back to a dummy at zero cost, so `forbidden` entries are never chosen.
    let assignment = solve_square(&cost);
    assignment
        .iter()
        .enumerate()
        .take(n)
        .filter(|&(i, &j)| j < m && matches!(weights[i][j], Some(w) if w > 0.0))
        .map(|(i, &j)| (i, j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Best total over all partial matchings, by enumerating injections of
    /// rows into columns-plus-"unmatched".
    fn brute_force_best(weights: &[Vec<Option<f64>>]) -> f64 {
        let m = weights.first().map_or(0, Vec::len);
        fn rec(i: usize, used: &mut Vec<bool>, w: &[Vec<Option<f64>>], m: usize) -> f64 {
            if i == w.len() {
                return 0.0;
            }
            let mut best = rec(i + 1, used, w, m);
            for j in 0..m {
                if !used[j] {
                    if let Some(x) = w[i][j] {
                        if x > 0.0 {
                            used[j] = true;
                            best = best.max(x + rec(i + 1, used, w, m));
                            used[j] = false;
                        }
                    }
                }
            }
            best
        }
        rec(0, &mut vec![false; m], weights, m)
    }

    #[test]
    fn square_matches_brute_force() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = solve_square(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        let best = permutations(3)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(total, best);
        assert_eq!(total, 5.0);
    }

    #[test]
    fn greedy_trap() {
        let w = [[0.6, 0.4, 0.0], [0.4, 0.1, 0.0], [0.0, 0.0, 0.7]];
        let weights: Vec<Vec<Option<f64>>> = w.iter().map(|r| r.iter().map(|&x| Some(x)).collect()).collect();
        let m = max_weight_matching(&weights);
        let total: f64 = m.iter().map(|&(i, j)| w[i][j]).sum();
        assert!((total - 1.5).abs() < 1e-12);
        assert_eq!(m, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn forbidden_pairs_never_used() {
        let weights = vec![vec![None, Some(0.2)], vec![None, Some(0.9)]];
        assert_eq!(max_weight_matching(&weights), vec![(1, 1)]);
        assert!(max_weight_matching(&[vec![None]]).is_empty());
        assert!(max_weight_matching(&[]).is_empty());
    }

    proptest! {
        #[test]
        fn partial_matching_is_optimal(
            n in 1usize..6,
            m in 1usize..6,
            raw in proptest::collection::vec((0.0f64..1.0, 0u8..5), 36),
        ) {
            let weights: Vec<Vec<Option<f64>>> = (0..n)
                .map(|i| (0..m).map(|j| {
                    let (w, tag) = raw[i * 6 + j];
                    match tag { 0 => None, 1 => Some(0.0), _ => Some(w) }
                }).collect())
                .collect();
            let matching = max_weight_matching(&weights);
            let mut rows = std::collections::HashSet::new();
            let mut cols = std::collections::HashSet::new();
            let mut total = 0.0;
            for &(i, j) in &matching {
                prop_assert!(rows.insert(i) && cols.insert(j));
                total += weights[i][j].unwrap();
            }
            prop_assert!((total - brute_force_best(&weights)).abs() < 1e-9);
        }
    }
}
