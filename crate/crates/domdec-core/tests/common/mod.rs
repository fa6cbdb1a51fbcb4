//! Shared helpers for the integration tests: small scenario couplings and
//! the brute-force vertex-enumeration oracle.

#![allow(dead_code)]

use domdec_core::coupling::Coupling;
use domdec_core::partition::GridPartition;

/// Uniform 1d atom grid at the basic-cell centers.
pub fn uniform_atoms_1d(n: usize) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let coords: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let weights = vec![1.0 / n as f64; n];
    let cells = (0..n).collect();
    (coords, weights, cells)
}

/// Flipped initialization: atom `i` coupled to the mirrored center.
pub fn flipped_coupling_1d(n: usize) -> Coupling {
    let (coords, weights, cells) = uniform_atoms_1d(n);
    let rows = (0..n)
        .map(|i| vec![((n - 1 - i) as u32, weights[i])])
        .collect();
    Coupling::from_rows(1, 1, coords.clone(), cells, n, coords, rows).unwrap()
}

/// Identity (diagonal) coupling, the optimum for convex costs.
pub fn diagonal_coupling_1d(n: usize) -> Coupling {
    let (coords, weights, cells) = uniform_atoms_1d(n);
    let rows = (0..n).map(|i| vec![(i as u32, weights[i])]).collect();
    Coupling::from_rows(1, 1, coords.clone(), cells, n, coords, rows).unwrap()
}

/// Product initialization over the uniform grid.
pub fn product_coupling_1d(n: usize) -> Coupling {
    let (coords, weights, cells) = uniform_atoms_1d(n);
    let nu = weights.clone();
    Coupling::product(1, 1, coords.clone(), weights, cells, n, coords, &nu).unwrap()
}

/// Uniform 2d atoms at basic-cell centers of the layout.
pub fn uniform_atoms_2d(layout: &GridPartition) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let count = layout.basic_count();
    let mut coords = Vec::with_capacity(2 * count);
    let mut cells = Vec::with_capacity(count);
    for flat in 0..count {
        coords.extend_from_slice(&layout.basic_center(flat));
        cells.push(flat);
    }
    let weights = vec![1.0 / count as f64; count];
    (coords, weights, cells)
}

/// Minimum transport cost by brute-force vertex enumeration: for generic
/// (nondegenerate) masses every vertex of the transportation polytope is
/// supported on a spanning tree of the complete bipartite graph, its flows
/// determined by leaf peeling. All spanning trees with nonnegative flows
/// are enumerated via include/skip backtracking over the lexicographic
/// edge order.
pub fn oracle_min_cost(cost: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    let m = mu.len();
    let s = nu.len();
    let nodes = m + s;
    let need = nodes - 1;
    let total_edges = m * s;
    let mut state = TreeSearch {
        m,
        s,
        cost,
        mu,
        nu,
        parent: (0..nodes).collect(),
        chosen: Vec::with_capacity(need),
        best: f64::INFINITY,
    };
    state.recurse(0, need, total_edges);
    state.best
}

struct TreeSearch<'a> {
    m: usize,
    s: usize,
    cost: &'a [f64],
    mu: &'a [f64],
    nu: &'a [f64],
    parent: Vec<usize>,
    chosen: Vec<usize>,
    best: f64,
}

impl TreeSearch<'_> {
    fn find(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    fn recurse(&mut self, next_edge: usize, still_needed: usize, total_edges: usize) {
        if still_needed == 0 {
            self.evaluate();
            return;
        }
        if total_edges - next_edge < still_needed {
            return;
        }
        let (i, j) = (next_edge / self.s, next_edge % self.s);
        let (ri, cj) = (self.find(i), self.find(self.m + j));
        if ri != cj {
            // include branch
            self.parent[ri] = cj;
            self.chosen.push(next_edge);
            self.recurse(next_edge + 1, still_needed - 1, total_edges);
            self.chosen.pop();
            self.parent[ri] = ri;
        }
        // skip branch
        self.recurse(next_edge + 1, still_needed, total_edges);
    }

    /// Flows on the completed tree by leaf peeling; update the best
    /// objective when all flows are nonnegative.
    fn evaluate(&mut self) {
        let nodes = self.m + self.s;
        let mut degree = vec![0u8; nodes];
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for (e, &arc) in self.chosen.iter().enumerate() {
            let (i, j) = (arc / self.s, self.m + arc % self.s);
            degree[i] += 1;
            degree[j] += 1;
            incident[i].push(e);
            incident[j].push(e);
        }
        let mut supply: Vec<f64> = self
            .mu
            .iter()
            .cloned()
            .chain(self.nu.iter().cloned())
            .collect();
        let mut flow = vec![f64::NAN; self.chosen.len()];
        let mut used = vec![false; self.chosen.len()];
        let mut stack: Vec<usize> = (0..nodes).filter(|&v| degree[v] == 1).collect();
        let mut obj = 0.0;
        while let Some(v) = stack.pop() {
            if degree[v] != 1 {
                continue;
            }
            let e = match incident[v].iter().find(|&&e| !used[e]) {
                Some(&e) => e,
                None => continue,
            };
            let arc = self.chosen[e];
            let (i, j) = (arc / self.s, self.m + arc % self.s);
            let other = if i == v { j } else { i };
            let f = supply[v];
            if f < -1e-12 {
                return; // infeasible tree
            }
            flow[e] = f;
            obj += f.max(0.0) * self.cost[arc];
            used[e] = true;
            supply[other] -= f;
            supply[v] = 0.0;
            degree[v] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                stack.push(other);
            }
        }
        if flow.iter().any(|f| f.is_nan() || *f < -1e-12) {
            return;
        }
        if obj < self.best {
            self.best = obj;
        }
    }
}
