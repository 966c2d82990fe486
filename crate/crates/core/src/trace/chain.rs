//! Joining trace fragments into chains by minimum-cost endpoint matching.

use super::assign::linear_sum_assignment;
use super::components::Component;
use crate::error::{Error, Result};

pub const W_X: f64 = 1.0;
pub const W_Y: f64 = 2.0;
pub const BACKWARD_FACTOR: f64 = 2.0;

/// Cost of continuing from a right endpoint to a left endpoint: weighted
/// Manhattan distance, doubled when the continuation starts further left.
pub fn link_cost(from: (usize, usize), to: (usize, usize)) -> f64 {
    let c = W_X * from.0.abs_diff(to.0) as f64 + W_Y * from.1.abs_diff(to.1) as f64;
    if to.0 < from.0 {
        BACKWARD_FACTOR * c
    } else {
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    /// Component indices in link order.
    pub members: Vec<usize>,
    /// Index of the nearest row anchor.
    pub row: usize,
    pub mean_y: f64,
    pub mass: f64,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Successor of each component after solving the matching. Each group of
/// mutually reachable components is solved on its own `2m × 2m` matrix whose
/// extra rows and columns let any fragment start or end a chain at cost
/// `max_link_cost / 2`; links dearer than `max_link_cost` and self-links are
/// forbidden.
fn successors(components: &[Component], max_link_cost: f64) -> Result<Vec<Option<usize>>> {
    let n = components.len();
    let mut links = Vec::new();
    for (i, a) in components.iter().enumerate() {
        for (j, b) in components.iter().enumerate() {
            if i == j {
                continue;
            }
            let c = link_cost(a.right_end, b.left_end);
            if c <= max_link_cost {
                links.push((i, j, c));
            }
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j, _) in &links {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if group_of[r] == usize::MAX {
            group_of[r] = groups.len();
            groups.push(Vec::new());
        }
        let g = group_of[r];
        group_of[i] = g;
        groups[g].push(i);
    }
    let mut local = vec![0usize; n];
    for g in &groups {
        for (k, &i) in g.iter().enumerate() {
            local[i] = k;
        }
    }
    let mut group_links: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); groups.len()];
    for &(i, j, c) in &links {
        group_links[group_of[i]].push((local[i], local[j], c));
    }
    let half = max_link_cost / 2.0;
    let mut succ = vec![None; n];
    for (g, members) in groups.iter().enumerate() {
        let m = members.len();
        if m == 1 {
            continue;
        }
        let size = 2 * m;
        let mut cost = vec![f64::INFINITY; size * size];
        for &(i, j, c) in &group_links[g] {
            cost[i * size + j] = c;
        }
        for k in 0..m {
            cost[k * size + m + k] = half;
            cost[(m + k) * size + k] = half;
            for l in 0..m {
                cost[(m + k) * size + m + l] = 0.0;
            }
        }
        let assignment = linear_sum_assignment(&cost, size, size)?;
        for (i, &j) in assignment.iter().enumerate().take(m) {
            if j < m {
                succ[members[i]] = Some(members[j]);
            }
        }
    }
    Ok(succ)
}

/// Orders components into chains following matched links; cycles are opened
/// at their dearest link.
pub fn chain_components(components: &[Component], max_link_cost: f64) -> Result<Vec<Vec<usize>>> {
    let n = components.len();
    let mut succ = successors(components, max_link_cost)?;
    let mut has_pred = vec![false; n];
    for s in succ.iter().flatten() {
        has_pred[*s] = true;
    }
    let mut visited = vec![false; n];
    let mut chains = Vec::new();
    let walk = |start: usize, succ: &[Option<usize>], visited: &mut [bool]| {
        let mut chain = vec![start];
        visited[start] = true;
        let mut cur = start;
        while let Some(next) = succ[cur] {
            if visited[next] {
                break;
            }
            visited[next] = true;
            chain.push(next);
            cur = next;
        }
        chain
    };
    for i in 0..n {
        if !has_pred[i] {
            chains.push(walk(i, &succ, &mut visited));
        }
    }
    for i in 0..n {
        if visited[i] {
            continue;
        }
        // `i` lies on a cycle: cut the dearest link.
        let mut cycle = vec![i];
        let mut cur = succ[i].expect("cycle member has a successor");
        while cur != i {
            cycle.push(cur);
            cur = succ[cur].expect("cycle member has a successor");
        }
        let (cut, _) = cycle
            .iter()
            .map(|&a| {
                let b = succ[a].unwrap();
                (a, link_cost(components[a].right_end, components[b].left_end))
            })
            .fold((cycle[0], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let start = succ[cut].unwrap();
        succ[cut] = None;
        chains.push(walk(start, &succ, &mut visited));
    }
    chains.sort_by_key(|c| *c.iter().min().unwrap());
    Ok(chains)
}

/// Chains the components and anchors each chain to the row whose anchor is
/// nearest its mass-weighted mean row.
pub fn merge_components(components: &[Component], row_anchors: &[f64], max_link_cost: f64) -> Result<Vec<Chain>> {
    if components.is_empty() {
        return Err(Error::Trace("no components to merge".into()));
    }
    if row_anchors.is_empty() {
        return Err(Error::InvalidInput("no row anchors".into()));
    }
    let chains = chain_components(components, max_link_cost)?;
    Ok(chains
        .into_iter()
        .map(|members| {
            let mass: f64 = members.iter().map(|&i| components[i].mass()).sum();
            let mean_y = members.iter().map(|&i| components[i].mean_y() * components[i].mass()).sum::<f64>() / mass.max(f64::MIN_POSITIVE);
            let row = row_anchors
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - mean_y).abs().total_cmp(&(b.1 - mean_y).abs()))
                .unwrap()
                .0;
            Chain {
                members,
                row,
                mean_y,
                mass,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke(id: usize, x0: usize, x1: usize, y: usize) -> Component {
        Component::new(id, (x0..=x1).map(|x| (x, y, 1.0)).collect())
    }

    #[test]
    fn backward_costs_double() {
        assert_eq!(link_cost((20, 5), (15, 5)), 10.0);
        assert_eq!(link_cost((20, 5), (28, 5)), 8.0);
        assert_eq!(link_cost((20, 5), (21, 8)), 7.0);
    }

    #[test]
    fn forward_continuation_beats_backward() {
        let comps = vec![stroke(0, 0, 20, 5), stroke(1, 15, 100, 5), stroke(2, 28, 60, 5)];
        let succ = successors(&comps, 30.0).unwrap();
        assert_eq!(succ[0], Some(2));
    }

    #[test]
    fn gap_is_bridged() {
        let comps = vec![stroke(0, 0, 30, 10), stroke(1, 34, 60, 10), stroke(2, 0, 60, 50)];
        let chains = merge_components(&comps, &[10.0, 50.0], 20.0).unwrap();
        assert_eq!(chains.len(), 2);
        assert_eq!(chains[0].members, vec![0, 1]);
        assert_eq!(chains[0].row, 0);
        assert_eq!(chains[1].members, vec![2]);
        assert_eq!(chains[1].row, 1);
    }

    #[test]
    fn distant_fragments_stay_apart() {
        let comps = vec![stroke(0, 0, 30, 10), stroke(1, 80, 100, 10)];
        assert_eq!(chain_components(&comps, 20.0).unwrap(), vec![vec![0], vec![1]]);
    }

    #[test]
    fn cycles_are_opened() {
        // Overlapping strokes whose ends nearly meet both ways.
        let comps = vec![stroke(0, 10, 20, 5), stroke(1, 19, 30, 5)];
        let chains = chain_components(&comps, 100.0).unwrap();
        let total: usize = chains.iter().map(|c| c.len()).sum();
        assert_eq!(total, 2);
        assert_eq!(chains[0], vec![0, 1]);
    }
}
