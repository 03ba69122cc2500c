//! Optimal assignment on dense rate/cost matrices.
//!
//! Shortest-augmenting-path Hungarian method with potentials, O(n^2 m) for an
//! n x m matrix with n <= m. Forbidden pairs are passed as infinite cost; an
//! instance with no finite perfect matching returns `None`.

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
/// Returns the column per row and the total cost.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Option<(Vec<usize>, f64)> {
    let n = cost.len();
    if n == 0 {
        return Some((vec![], 0.0));
    }
    let m = cost[0].len();
    if m < n || cost.iter().any(|row| row.len() != m) {
        return None;
    }
    const INF: f64 = f64::INFINITY;
    // 1-based potentials over rows (u) and columns (v); way[j] backtracks the
    // augmenting path, p[j] is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
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
            if !delta.is_finite() {
                return None; // no finite augmenting path
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
    let mut result = vec![usize::MAX; n];
    let mut total = 0.0;
    for j in 1..=m {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
            total += cost[p[j] - 1][j - 1];
        }
    }
    if result.iter().any(|&c| c == usize::MAX) || !total.is_finite() {
        return None;
    }
    Some((result, total))
}

/// Maximum-weight assignment; `NEG_INFINITY` marks forbidden pairs.
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> Option<(Vec<usize>, f64)> {
    let cost: Vec<Vec<f64>> = weight
        .iter()
        .map(|row| row.iter().map(|&w| if w == f64::NEG_INFINITY { f64::INFINITY } else { -w }).collect())
        .collect();
    let (cols, total) = min_cost_assignment(&cost)?;
    Some((cols, -total))
}

/// Brute-force oracle over all row-to-column injections (test sizes only).
pub fn enumerate_max_weight(weight: &[Vec<f64>]) -> Option<(Vec<usize>, f64)> {
    let n = weight.len();
    if n == 0 {
        return Some((vec![], 0.0));
    }
    let m = weight[0].len();
    if m < n {
        return None;
    }
    assert!(m <= 8, "enumeration oracle is for micro instances");
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut cols: Vec<usize> = Vec::with_capacity(n);
    let mut used = vec![false; m];
    fn recurse(
        weight: &[Vec<f64>],
        row: usize,
        used: &mut [bool],
        cols: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if row == weight.len() {
            let total: f64 = cols.iter().enumerate().map(|(i, &j)| weight[i][j]).sum();
            if total.is_finite() && best.as_ref().is_none_or(|(_, b)| total > *b) {
                *best = Some((cols.clone(), total));
            }
            return;
        }
        for j in 0..used.len() {
            if !used[j] && weight[row][j] != f64::NEG_INFINITY {
                used[j] = true;
                cols.push(j);
                recurse(weight, row + 1, used, cols, best);
                cols.pop();
                used[j] = false;
            }
        }
    }
    recurse(weight, 0, &mut used, &mut cols, &mut best);
    best
}
