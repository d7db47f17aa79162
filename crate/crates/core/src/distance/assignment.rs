//! Exact min-cost perfect matching on a dense square cost matrix.

/// Shortest augmenting path (Jonker-Volgenant style) with dual potentials.
/// Returns the optimal total cost and `row_to_col`. `O(n^3)`.
pub fn solve(n: usize, cost: impl Fn(usize, usize) -> f64) -> (f64, Vec<usize>) {
    if n == 0 {
        return (0.0, Vec::new());
    }
    // 1-based arrays with a dummy column 0, as in the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
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
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    let total = row_to_col.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    (total, row_to_col)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
        fn rec(i: usize, n: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, cost: &dyn Fn(usize, usize) -> f64) {
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(i + 1, n, used, acc + cost(i, j), best, cost);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, n, &mut vec![false; n], 0.0, &mut best, cost);
        best
    }

    #[test]
    fn small_matrix() {
        let c = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let (total, perm) = solve(3, |i, j| c[i][j]);
        assert_eq!(total, 5.0);
        assert_eq!(perm, vec![1, 0, 2]);
    }

    #[test]
    fn matches_enumeration_on_pseudo_random_matrices() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for n in 1..=7 {
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| next()).collect()).collect();
            let (total, _) = solve(n, |i, j| m[i][j]);
            assert!((total - brute(n, &|i, j| m[i][j])).abs() < 1e-12);
        }
    }
}
