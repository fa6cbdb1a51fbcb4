//! Exact transportation problem solver: primal network simplex on the
//! bipartite transport polytope with Bland's rule over the lexicographic
//! arc order, which makes the returned vertex deterministic and rules out
//! cycling under degeneracy.

use alloc::vec;
use alloc::vec::Vec;

use super::SolveError;

/// Reduced costs at least this negative trigger a pivot.
const PIVOT_TOL: f64 = 1e-12;

/// Solves `min sum c_ij x_ij` over the transportation polytope with row
/// masses `mu` and column masses `nu` (equal totals). Returns the dense
/// `m x s` optimal vertex.
pub fn solve_transport(cost: &[f64], mu: &[f64], nu: &[f64]) -> Result<Vec<f64>, SolveError> {
    let m = mu.len();
    let s = nu.len();
    debug_assert_eq!(cost.len(), m * s);

    // Basis arcs as a spanning tree over m row nodes and s column nodes.
    // `basis[i * s + j]` marks membership; flows stored densely.
    let mut in_basis = vec![false; m * s];
    let mut flow = vec![0.0; m * s];

    northwest_basis(mu, nu, &mut in_basis, &mut flow);

    let max_pivots = 50 * (m + s) * (m + s) + 1000;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; s];

    for _ in 0..max_pivots {
        compute_duals(cost, &in_basis, m, s, &mut u, &mut v)?;

        // Bland: first arc (lexicographic) with strictly negative reduced cost
        let mut entering = None;
        'search: for i in 0..m {
            for j in 0..s {
                let id = i * s + j;
                if !in_basis[id] && cost[id] - u[i] - v[j] < -PIVOT_TOL {
                    entering = Some((i, j));
                    break 'search;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            // optimal: recompute flows exactly from the final tree
            recompute_flows(&in_basis, mu, nu, m, s, &mut flow)?;
            return Ok(flow);
        };

        // cycle created by the entering arc: path from column ej back to
        // row ei inside the tree
        let path = tree_path(&in_basis, m, s, ei, ej)?;
        // orientation: entering arc (ei,ej) gains flow; alternate signs
        // along the path. Path arcs alternate col->row, row->col starting
        // from ej.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &arc) in path.iter().enumerate() {
            if pos % 2 == 0 {
                // arc loses flow; min ratio with Bland tie-break
                if flow[arc] < theta || (flow[arc] == theta && arc < leaving) {
                    theta = flow[arc];
                    leaving = arc;
                }
            }
        }
        if leaving == usize::MAX {
            return Err(SolveError::Numerical);
        }
        for (pos, &arc) in path.iter().enumerate() {
            if pos % 2 == 0 {
                flow[arc] -= theta;
            } else {
                flow[arc] += theta;
            }
        }
        flow[ei * s + ej] = theta;
        in_basis[ei * s + ej] = true;
        in_basis[leaving] = false;
        flow[leaving] = 0.0;
    }
    Err(SolveError::PivotLimit)
}

/// Northwest-corner initial basis. On simultaneous exhaustion only the row
/// is crossed out, keeping exactly `m + s - 1` basis arcs.
fn northwest_basis(mu: &[f64], nu: &[f64], in_basis: &mut [bool], flow: &mut [f64]) {
    let m = mu.len();
    let s = nu.len();
    let mut ri = 0usize;
    let mut cj = 0usize;
    let mut rem_r = mu[0];
    let mut rem_c = nu[0];
    loop {
        let id = ri * s + cj;
        let t = rem_r.min(rem_c);
        in_basis[id] = true;
        flow[id] = t;
        rem_r -= t;
        rem_c -= t;
        if ri == m - 1 && cj == s - 1 {
            break;
        }
        if rem_r <= rem_c && ri < m - 1 {
            ri += 1;
            rem_r = mu[ri];
        } else if cj < s - 1 {
            cj += 1;
            rem_c = nu[cj];
        } else {
            ri += 1;
            rem_r = mu[ri];
        }
    }
}

/// Dual potentials on the basis tree (u_0 = 0).
fn compute_duals(
    cost: &[f64],
    in_basis: &[bool],
    m: usize,
    s: usize,
    u: &mut [f64],
    v: &mut [f64],
) -> Result<(), SolveError> {
    let mut u_set = vec![false; m];
    let mut v_set = vec![false; s];
    u[0] = 0.0;
    u_set[0] = true;
    // adjacency by scanning; sizes here are small
    let mut stack: Vec<(bool, usize)> = vec![(true, 0)]; // (is_row, idx)
    while let Some((is_row, idx)) = stack.pop() {
        if is_row {
            for j in 0..s {
                if in_basis[idx * s + j] && !v_set[j] {
                    v[j] = cost[idx * s + j] - u[idx];
                    v_set[j] = true;
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if in_basis[i * s + idx] && !u_set[i] {
                    u[i] = cost[i * s + idx] - v[idx];
                    u_set[i] = true;
                    stack.push((true, i));
                }
            }
        }
    }
    if u_set.iter().all(|&b| b) && v_set.iter().all(|&b| b) {
        Ok(())
    } else {
        Err(SolveError::Numerical)
    }
}

/// Unique tree path from column `ej` to row `ei`, returned as the arc
/// sequence (alternating: first arc is the one matched against `ej`).
fn tree_path(
    in_basis: &[bool],
    m: usize,
    s: usize,
    ei: usize,
    ej: usize,
) -> Result<Vec<usize>, SolveError> {
    // BFS over tree nodes from row ei to column ej, then read back.
    // node ids: rows 0..m, cols m..m+s
    let total = m + s;
    let mut prev = vec![usize::MAX; total];
    let mut prev_arc = vec![usize::MAX; total];
    let mut visited = vec![false; total];
    let start = ei;
    let goal = m + ej;
    visited[start] = true;
    let mut queue = vec![start];
    let mut qi = 0;
    while qi < queue.len() {
        let node = queue[qi];
        qi += 1;
        if node == goal {
            break;
        }
        if node < m {
            let i = node;
            for j in 0..s {
                if in_basis[i * s + j] && !visited[m + j] {
                    visited[m + j] = true;
                    prev[m + j] = node;
                    prev_arc[m + j] = i * s + j;
                    queue.push(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if in_basis[i * s + j] && !visited[i] {
                    visited[i] = true;
                    prev[i] = node;
                    prev_arc[i] = i * s + j;
                    queue.push(i);
                }
            }
        }
    }
    if !visited[goal] {
        return Err(SolveError::Numerical);
    }
    let mut path = Vec::new();
    let mut node = goal;
    while node != start {
        path.push(prev_arc[node]);
        node = prev[node];
    }
    Ok(path)
}

/// Exact flow recomputation on the final basis tree by leaf elimination.
fn recompute_flows(
    in_basis: &[bool],
    mu: &[f64],
    nu: &[f64],
    m: usize,
    s: usize,
    flow: &mut [f64],
) -> Result<(), SolveError> {
    let total = m + s;
    let mut degree = vec![0usize; total];
    let mut supply: Vec<f64> = mu.iter().cloned().chain(nu.iter().cloned()).collect();
    for i in 0..m {
        for j in 0..s {
            if in_basis[i * s + j] {
                degree[i] += 1;
                degree[m + j] += 1;
            }
        }
    }
    for f in flow.iter_mut() {
        *f = 0.0;
    }
    let mut active: Vec<bool> = in_basis.to_vec();
    let mut leaves: Vec<usize> = (0..total).filter(|&n| degree[n] == 1).collect();
    let mut done = vec![false; total];
    while let Some(node) = leaves.pop() {
        if done[node] || degree[node] == 0 {
            continue;
        }
        // find its unique active arc
        let mut found = None;
        if node < m {
            for j in 0..s {
                if active[node * s + j] {
                    found = Some((node * s + j, m + j));
                    break;
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if active[i * s + j] {
                    found = Some((i * s + j, i));
                    break;
                }
            }
        }
        let Some((arc, other)) = found else {
            continue;
        };
        flow[arc] = supply[node];
        supply[other] -= supply[node];
        supply[node] = 0.0;
        active[arc] = false;
        done[node] = true;
        degree[node] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }
    // negative round-off clamped; genuine negatives mean a broken basis
    for f in flow.iter_mut() {
        if *f < 0.0 {
            if *f < -1e-9 {
                return Err(SolveError::Numerical);
            }
            *f = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_antidiagonal() {
        // cost favouring the antidiagonal
        let cost = [1.0, 0.0, 0.0, 1.0];
        let mu = [0.5, 0.5];
        let nu = [0.5, 0.5];
        let f = solve_transport(&cost, &mu, &nu).unwrap();
        assert!((f[1] - 0.5).abs() < 1e-12 && (f[2] - 0.5).abs() < 1e-12);
        assert!(f[0].abs() < 1e-12 && f[3].abs() < 1e-12);
    }

    #[test]
    fn degenerate_equal_costs_deterministic() {
        let cost = [1.0; 4];
        let mu = [0.3, 0.7];
        let nu = [0.6, 0.4];
        let f1 = solve_transport(&cost, &mu, &nu).unwrap();
        let f2 = solve_transport(&cost, &mu, &nu).unwrap();
        assert_eq!(f1, f2);
        // northwest start is already optimal here
        assert!((f1[0] - 0.3).abs() < 1e-15);
        assert!((f1[2] - 0.3).abs() < 1e-15);
        assert!((f1[3] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn marginals_respected() {
        let m = 5;
        let s = 7;
        // deterministic pseudo-random cost
        let mut seed = 12345u64;
        let mut rnd = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let cost: Vec<f64> = (0..m * s).map(|_| rnd()).collect();
        let mu: Vec<f64> = (0..m).map(|_| 0.1 + rnd()).collect();
        let total_mu: f64 = mu.iter().sum();
        let mut nu: Vec<f64> = (0..s).map(|_| 0.1 + rnd()).collect();
        let total_nu: f64 = nu.iter().sum();
        for w in nu.iter_mut() {
            *w *= total_mu / total_nu;
        }
        let f = solve_transport(&cost, &mu, &nu).unwrap();
        for i in 0..m {
            let r: f64 = (0..s).map(|j| f[i * s + j]).sum();
            assert!((r - mu[i]).abs() < 1e-12);
        }
        for j in 0..s {
            let c: f64 = (0..m).map(|i| f[i * s + j]).sum();
            assert!((c - nu[j]).abs() < 1e-12);
        }
    }
}
