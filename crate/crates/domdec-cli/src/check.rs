//! Built-in verification battery behind the `check` subcommand: solver
//! oracles, run invariants, fiber equivalences and the block-approximation
//! bounds. Each item prints one pass/fail line.

use std::fmt::Write as _;

use domdec_core::coupling::{block_approximation, Coupling};
use domdec_core::engine::{Engine, RunOptions};
use domdec_core::fiber::verify_equivalence;
use domdec_core::metrics::{momentum_density_max, w1_exact, wtvb, wtvb_bound_1d};
use domdec_core::partition::GridPartition;
use domdec_core::solver::{plan_objective, CellProblem, SolveParams};
use domdec_core::{CostSpec, Eta};

pub struct CheckItem {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Deterministic generator for the randomized oracle instances (the sweep
/// itself never consumes randomness).
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo + 1)
    }
}

/// Minimum transport cost by exhaustive vertex enumeration: every
/// nondegenerate vertex of the transportation polytope is supported on a
/// spanning tree of the bipartite graph; trees are enumerated by
/// include/skip backtracking and their flows resolved by leaf peeling.
pub fn vertex_enumeration_min(cost: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    struct Search<'a> {
        m: usize,
        s: usize,
        cost: &'a [f64],
        mu: &'a [f64],
        nu: &'a [f64],
        parent: Vec<usize>,
        chosen: Vec<usize>,
        best: f64,
    }
    impl Search<'_> {
        fn find(&self, mut x: usize) -> usize {
            while self.parent[x] != x {
                x = self.parent[x];
            }
            x
        }
        fn recurse(&mut self, edge: usize, needed: usize) {
            if needed == 0 {
                self.evaluate();
                return;
            }
            if self.m * self.s - edge < needed {
                return;
            }
            let (i, j) = (edge / self.s, edge % self.s);
            let (ri, cj) = (self.find(i), self.find(self.m + j));
            if ri != cj {
                self.parent[ri] = cj;
                self.chosen.push(edge);
                self.recurse(edge + 1, needed - 1);
                self.chosen.pop();
                self.parent[ri] = ri;
            }
            self.recurse(edge + 1, needed);
        }
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
            let mut used = vec![false; self.chosen.len()];
            let mut stack: Vec<usize> = (0..nodes).filter(|&v| degree[v] == 1).collect();
            let mut obj = 0.0;
            let mut placed = 0usize;
            while let Some(v) = stack.pop() {
                if degree[v] != 1 {
                    continue;
                }
                let Some(&e) = incident[v].iter().find(|&&e| !used[e]) else {
                    continue;
                };
                let arc = self.chosen[e];
                let (i, j) = (arc / self.s, self.m + arc % self.s);
                let other = if i == v { j } else { i };
                let f = supply[v];
                if f < -1e-12 {
                    return;
                }
                obj += f.max(0.0) * self.cost[arc];
                used[e] = true;
                placed += 1;
                supply[other] -= f;
                supply[v] = 0.0;
                degree[v] -= 1;
                degree[other] -= 1;
                if degree[other] == 1 {
                    stack.push(other);
                }
            }
            if placed == self.chosen.len() && obj < self.best {
                self.best = obj;
            }
        }
    }
    let mut search = Search {
        m: mu.len(),
        s: nu.len(),
        cost,
        mu,
        nu,
        parent: (0..mu.len() + nu.len()).collect(),
        chosen: Vec::new(),
        best: f64::INFINITY,
    };
    search.recurse(0, mu.len() + nu.len() - 1);
    search.best
}

pub fn random_cell_problem(rng: &mut SplitMix64, m: usize, s: usize, eps: f64) -> CellProblem {
    let cost: Vec<f64> = (0..m * s).map(|_| rng.uniform()).collect();
    let mu: Vec<f64> = (0..m).map(|_| rng.range(0.1, 1.0)).collect();
    let mut nu: Vec<f64> = (0..s).map(|_| rng.range(0.1, 1.0)).collect();
    let (tm, tn): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    for w in nu.iter_mut() {
        *w *= tm / tn;
    }
    CellProblem::new(cost, mu, nu, eps)
}

/// Dense scan plus ternary refinement of a 2x2 entropic problem (the
/// feasible set is an interval and the objective is strictly convex).
pub fn scan_2x2_entropic(p: &CellProblem) -> f64 {
    let lo = (p.nu[0] - p.mu[1]).max(0.0);
    let hi = p.mu[0].min(p.nu[0]);
    let objective = |t: f64| {
        let pair = |w0: f64, w1: f64| {
            let mut row = Vec::new();
            if w0 > 0.0 {
                row.push((0u32, w0));
            }
            if w1 > 0.0 {
                row.push((1u32, w1));
            }
            row
        };
        let rows = vec![
            pair(t, p.mu[0] - t),
            pair(p.nu[0] - t, p.mu[1] - p.nu[0] + t),
        ];
        plan_objective(p, &rows)
    };
    let grid = 4000usize;
    let mut best = f64::INFINITY;
    let mut best_k = 0usize;
    for k in 0..=grid {
        let t = lo + (hi - lo) * k as f64 / grid as f64;
        let o = objective(t);
        if o < best {
            best = o;
            best_k = k;
        }
    }
    let step = (hi - lo) / grid as f64;
    let mut a = lo + step * best_k.saturating_sub(1) as f64;
    let mut b = (lo + step * (best_k + 1) as f64).min(hi);
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if objective(m1) <= objective(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    best.min(objective(0.5 * (a + b)))
}

fn flipped_coupling(n: usize) -> Coupling {
    let coords: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let cells: Vec<usize> = (0..n).collect();
    let rows = (0..n)
        .map(|i| vec![((n - 1 - i) as u32, 1.0 / n as f64)])
        .collect();
    Coupling::from_rows(1, 1, coords.clone(), cells, n, coords, rows).unwrap()
}

/// Runs the battery; `quick` trims the randomized instance counts.
pub fn run_checks(seed: u64, quick: bool) -> Vec<CheckItem> {
    let mut items = Vec::new();
    let mut rng = SplitMix64::new(seed);

    // exact solver vs vertex enumeration
    {
        let trials = if quick { 10 } else { 30 };
        let mut worst: f64 = 0.0;
        let mut pass = true;
        for _ in 0..trials {
            let m = rng.int(1, 5);
            let s = rng.int(1, 5);
            let p = random_cell_problem(&mut rng, m, s, 0.0);
            match p.solve() {
                Ok(plan) => {
                    let oracle = vertex_enumeration_min(&p.cost, &p.mu, &p.nu);
                    worst = worst.max((plan.objective - oracle).abs());
                }
                Err(e) => {
                    pass = false;
                    worst = f64::INFINITY;
                    let _ = e;
                }
            }
        }
        items.push(CheckItem {
            name: "solver/exact-vs-vertex-enumeration",
            pass: pass && worst <= 1e-9,
            detail: format!("max objective gap {worst:.3e} over {trials} instances"),
        });
    }

    // entropic solver vs dense scans at both regularizations
    {
        let trials = if quick { 6 } else { 15 };
        let mut worst: f64 = 0.0;
        for eps in [0.1, 1.0] {
            for _ in 0..trials {
                let p = random_cell_problem(&mut rng, 2, 2, eps);
                let plan = p.solve().expect("entropic solve");
                worst = worst.max((plan.objective - scan_2x2_entropic(&p)).abs());
            }
        }
        items.push(CheckItem {
            name: "solver/entropic-vs-feasible-scan",
            pass: worst <= 1e-8,
            detail: format!("max objective gap {worst:.3e}"),
        });
    }

    // flipped run invariants
    {
        let n = 16;
        let layout = GridPartition::build(1, n).unwrap();
        let mut engine = Engine::new(
            layout.clone(),
            CostSpec::quadratic(),
            0.0,
            flipped_coupling(n),
            SolveParams::default(),
        )
        .unwrap();
        let record = engine
            .run(RunOptions {
                t_max: 2.0,
                keep_iterates: true,
            })
            .unwrap();
        let mut detail = String::new();
        let mut pass = true;
        let mut prev = f64::INFINITY;
        for s in &record.stats {
            if s.objective > prev + 1e-9 {
                pass = false;
            }
            prev = s.objective;
        }
        let terminal = record.final_stats().unwrap().transport;
        if terminal.abs() > 1e-9 {
            pass = false;
        }
        let _ = write!(detail, "terminal cost {terminal:.3e}");
        let bound = wtvb_bound_1d(1.0, 1.0);
        for iterate in &record.iterates {
            let v = wtvb(&layout, iterate).unwrap();
            if v > bound + 1e-12 {
                pass = false;
            }
        }
        for snap in &record.snapshots {
            if momentum_density_max(snap) > 1.0 + 1e-12 {
                pass = false;
            }
        }
        items.push(CheckItem {
            name: "run/flipped-invariants",
            pass,
            detail,
        });
    }

    // fiber equivalence on the flipped run
    {
        let n = 8;
        let layout = GridPartition::build(1, n).unwrap();
        let mut engine = Engine::new(
            layout.clone(),
            CostSpec::quadratic(),
            0.0,
            flipped_coupling(n),
            SolveParams::default(),
        )
        .unwrap();
        let record = engine
            .run(RunOptions {
                t_max: 0.75,
                keep_iterates: true,
            })
            .unwrap();
        let mut worst: f64 = 0.0;
        for &(t, x) in &[(1.0 / 8.0, 0.35), (2.0 / 8.0, 0.7), (4.0 / 8.0, 0.2)] {
            let k = (t * n as f64).floor() as usize;
            let check = verify_equivalence(
                &layout,
                &CostSpec::quadratic(),
                0.0,
                Eta::Zero,
                &record.iterates[k],
                t,
                &[x],
                SolveParams::default(),
            )
            .unwrap();
            worst = worst.max(check.objective_gap).max(check.momentum_gap);
        }
        items.push(CheckItem {
            name: "fiber/equivalence-and-momentum",
            pass: worst <= 1e-8,
            detail: format!("max gap {worst:.3e}"),
        });
    }

    // block approximation bounds
    {
        let trials = if quick { 4 } else { 10 };
        let mut pass = true;
        let mut detail = String::new();
        for _ in 0..trials {
            let n_atoms = rng.int(4, 10);
            let coords: Vec<f64> = (0..n_atoms).map(|_| rng.uniform()).collect();
            let rows: Vec<Vec<(u32, f64)>> = (0..n_atoms)
                .map(|_| {
                    let j = rng.int(0, n_atoms - 1) as u32;
                    vec![(j, rng.range(0.05, 1.0))]
                })
                .collect();
            let total: f64 = rows.iter().flat_map(|r| r.iter().map(|e| e.1)).sum();
            let rows = rows
                .into_iter()
                .map(|r| r.into_iter().map(|(j, w)| (j, w / total)).collect())
                .collect();
            let gamma = Coupling::from_rows(
                1,
                1,
                coords.clone(),
                vec![0; n_atoms],
                1,
                coords.clone(),
                rows,
            )
            .unwrap();
            let scale = rng.range(0.15, 0.5);
            let (approx, report) = block_approximation(&gamma, scale).unwrap();
            let w = w1_exact(&gamma.as_point_cloud(), &approx.as_point_cloud()).unwrap();
            let bound = scale * 2.0f64.sqrt();
            if w > bound + 1e-9 {
                pass = false;
                let _ = write!(detail, "W drift {w:.3e} > {bound:.3e}; ");
            }
            let kl = approx.kl_to_product(&gamma.marginal_x(), &gamma.marginal_y());
            if kl > report.entropy_constant() + 1e-12 {
                pass = false;
                let _ = write!(detail, "KL {kl:.3e} above the block constant; ");
            }
        }
        if detail.is_empty() {
            detail = format!("{trials} random couplings within bounds");
        }
        items.push(CheckItem {
            name: "measure/block-approximation-bounds",
            pass,
            detail,
        });
    }

    items
}
