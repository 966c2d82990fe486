//! Exact rectangular linear sum assignment (shortest augmenting paths with
//! row/column potentials, in the Jonker–Volgenant family).

use crate::error::{Error, Result};

/// Assigns each of `rows` rows to a distinct column of a row-major
/// `rows × cols` cost matrix (`rows <= cols`) minimizing the total cost.
/// `f64::INFINITY` marks a forbidden pair. Returns the column of every row.
pub fn linear_sum_assignment(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if cost.len() != rows * cols {
        return Err(Error::InvalidInput(format!(
            "cost matrix has {} entries, expected {rows}x{cols}",
            cost.len()
        )));
    }
    if rows > cols {
        return Err(Error::InvalidInput("more rows than columns".into()));
    }
    if cost.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
        return Err(Error::InvalidInput("cost matrix contains NaN or -inf".into()));
    }
    // 1-based arrays; column 0 is the virtual root of each augmenting tree.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = usize::MAX;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let c = cost[(i0 - 1) * cols + (j - 1)];
                if c.is_finite() {
                    let cur = c - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == usize::MAX {
                return Err(Error::InvalidInput(format!("row {} has no feasible column", i - 1)));
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
    let mut out = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

/// Total cost of an assignment, summed in row order.
pub fn assignment_cost(cost: &[f64], cols: usize, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum()
}

/// Exhaustive minimum over all injective row→column maps; for testing small instances.
pub fn brute_force_assignment(cost: &[f64], rows: usize, cols: usize) -> Option<(Vec<usize>, f64)> {
    fn go(
        cost: &[f64],
        rows: usize,
        cols: usize,
        i: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<usize>,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        if i == rows {
            let c = assignment_cost(cost, cols, cur);
            if c.is_finite() && best.as_ref().is_none_or(|b| c < b.1) {
                *best = Some((cur.clone(), c));
            }
            return;
        }
        for j in 0..cols {
            if used[j] || !cost[i * cols + j].is_finite() {
                continue;
            }
            used[j] = true;
            cur.push(j);
            go(cost, rows, cols, i + 1, used, cur, best);
            cur.pop();
            used[j] = false;
        }
    }
    let mut best = None;
    go(cost, rows, cols, 0, &mut vec![false; cols], &mut Vec::new(), &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classic_three_by_three() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = linear_sum_assignment(&c, 3, 3).unwrap();
        assert_eq!(a, vec![1, 0, 2]);
        assert_eq!(assignment_cost(&c, 3, &a), 5.0);
    }

    #[test]
    fn forbidden_pairs_are_avoided() {
        let inf = f64::INFINITY;
        let c = [inf, 1.0, 1.0, inf];
        assert_eq!(linear_sum_assignment(&c, 2, 2).unwrap(), vec![1, 0]);
        let c = [inf, inf, 1.0, 2.0];
        assert!(linear_sum_assignment(&c, 2, 2).is_err());
    }

    #[test]
    fn rectangular_picks_cheapest_columns() {
        let c = [5.0, 1.0, 9.0, 7.0, 8.0, 2.0];
        let a = linear_sum_assignment(&c, 2, 3).unwrap();
        assert_eq!(a, vec![1, 2]);
    }

    #[test]
    fn shape_errors() {
        assert!(linear_sum_assignment(&[1.0; 6], 3, 2).is_err());
        assert!(linear_sum_assignment(&[1.0; 5], 2, 3).is_err());
        assert_eq!(linear_sum_assignment(&[], 0, 0).unwrap(), Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            rows in 1usize..=6, extra in 0usize..=2,
            seed in proptest::collection::vec(0u32..50, 64)
        ) {
            let cols = (rows + extra).min(7);
            let cost: Vec<f64> = (0..rows * cols).map(|k| seed[k % seed.len()] as f64 + (k / seed.len()) as f64).collect();
            let a = linear_sum_assignment(&cost, rows, cols).unwrap();
            let mut seen = vec![false; cols];
            for &j in &a {
                prop_assert!(!seen[j]);
                seen[j] = true;
            }
            let (_, best) = brute_force_assignment(&cost, rows, cols).unwrap();
            prop_assert_eq!(assignment_cost(&cost, cols, &a), best);
        }
    }
}
