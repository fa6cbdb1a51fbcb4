//! The alternating sweep over the two staggered composite partitions:
//! per-cell marginal extraction, cell solves, deterministic merge, and the
//! composite-cell-averaged trajectory/momentum snapshots.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cost::CostSpec;
use crate::coupling::{Coupling, SparseVec};
use crate::math;
use crate::partition::{GridPartition, Phase};
use crate::solver::{CellProblem, MonotoneHint, SolveError, SolveParams};
use crate::CostKind;

/// Full-sweep total-variation change below which the iterate counts as a
/// fixed point (two consecutive quiet sweeps stop the run).
pub const FIXED_POINT_TV: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum EngineError {
    /// A basic cell carries no atoms or no mass; the basic partition
    /// construction requires positive mass everywhere.
    EmptyBasicCell(usize),
    DimensionMismatch,
    /// A cell solve failed; carries the phase, cell index and cause.
    Cell {
        phase: Phase,
        cell: usize,
        source: SolveError,
    },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::EmptyBasicCell(c) => write!(f, "basic cell {c} carries no mass"),
            EngineError::DimensionMismatch => write!(f, "coupling does not match the layout"),
            EngineError::Cell {
                phase,
                cell,
                source,
            } => write!(
                f,
                "cell solve failed in phase {phase}, cell {cell}: {source}"
            ),
        }
    }
}

impl core::error::Error for EngineError {}

/// Composite-cell-averaged state at one iteration: normalized fibers
/// `rho_J` and the momentum fibers (one signed sparse vector per axis,
/// normalized by the cell mass). Boundary `B` cells sum over their existing
/// offset cells only.
#[derive(Clone, Debug)]
pub struct TrajectorySnapshot {
    pub k: usize,
    pub t: f64,
    pub phase: Phase,
    pub cell_mass: Vec<f64>,
    pub fibers: Vec<SparseVec>,
    pub momenta: Vec<Vec<SparseVec>>,
}

/// Per-iteration bookkeeping emitted by the engine.
#[derive(Clone, Debug)]
pub struct IterStats {
    pub k: usize,
    pub t: f64,
    pub phase: Phase,
    /// `<c^n, pi>`.
    pub transport: f64,
    /// Monitored objective: transport plus `eps^n KL(pi | mu^n (x) nu^n)`
    /// when `eps^n > 0`.
    pub objective: f64,
    pub marginal_err_x: f64,
    pub marginal_err_y: f64,
    /// Total variation distance to the previous iterate.
    pub tv_change: f64,
    pub solver_iterations: usize,
    pub max_cell_marginal_error: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    HorizonReached,
    /// Two consecutive full sweeps each changed the iterate by less than
    /// [`FIXED_POINT_TV`]; carries the iteration count at detection.
    FixedPoint {
        at_iteration: usize,
    },
}

/// Output of a run: snapshots at every iteration (including `k = 0`),
/// per-iteration stats, and optionally the raw iterates.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub n: usize,
    pub eps: f64,
    pub snapshots: Vec<TrajectorySnapshot>,
    pub stats: Vec<IterStats>,
    pub stop: StopReason,
    /// Iterates `pi^{n,k}` for `k = 0..` when retained.
    pub iterates: Vec<Coupling>,
}

impl RunRecord {
    pub fn final_stats(&self) -> Option<&IterStats> {
        self.stats.last()
    }

    pub fn snapshot_at(&self, k: usize) -> &TrajectorySnapshot {
        &self.snapshots[k]
    }
}

/// Options for [`Engine::run`].
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub t_max: f64,
    pub keep_iterates: bool,
}

impl RunOptions {
    pub fn horizon(t_max: f64) -> Self {
        RunOptions {
            t_max,
            keep_iterates: false,
        }
    }
}

struct WarmCache {
    f: Vec<f64>,
    g_by_global: BTreeMap<u32, f64>,
}

/// Runs the alternating cell sweeps on one scale.
pub struct Engine {
    layout: GridPartition,
    cost: CostSpec,
    eps: f64,
    nu_ref: Vec<f64>,
    mu_nominal: Vec<f64>,
    iterate: Coupling,
    k: usize,
    params: SolveParams,
    warm: BTreeMap<(u8, usize), WarmCache>,
}

impl Engine {
    pub fn new(
        layout: GridPartition,
        cost: CostSpec,
        eps: f64,
        init: Coupling,
        params: SolveParams,
    ) -> Result<Self, EngineError> {
        let mut init = init;
        init.retag_cells(&layout)
            .map_err(|_| EngineError::DimensionMismatch)?;
        for c in 0..layout.basic_count() {
            let atoms = init.atoms_in_cell(c);
            if atoms.is_empty() {
                return Err(EngineError::EmptyBasicCell(c));
            }
            let mass: f64 = atoms.iter().map(|&a| init.x_weight(a as usize)).sum();
            if mass <= 0.0 {
                return Err(EngineError::EmptyBasicCell(c));
            }
        }
        let nu_ref = init.marginal_y();
        let mu_nominal = init.x_weights().to_vec();
        Ok(Engine {
            layout,
            cost,
            eps,
            nu_ref,
            mu_nominal,
            iterate: init,
            k: 0,
            params,
            warm: BTreeMap::new(),
        })
    }

    pub fn layout(&self) -> &GridPartition {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn iterate(&self) -> &Coupling {
        &self.iterate
    }

    pub fn nu_ref(&self) -> &[f64] {
        &self.nu_ref
    }

    /// Basic-cell masses of the first marginal.
    pub fn mu_basic(&self) -> Vec<f64> {
        (0..self.layout.basic_count())
            .map(|c| {
                self.iterate
                    .atoms_in_cell(c)
                    .iter()
                    .map(|&a| self.iterate.x_weight(a as usize))
                    .sum()
            })
            .collect()
    }

    /// Sweeps every composite cell of `phase`: extracts the cell's
    /// Y-marginal, re-optimizes the block, merges in lexicographic cell
    /// order. Returns `(solver iterations, max cell marginal error)`.
    pub fn half_iteration(&mut self, phase: Phase) -> Result<(usize, f64), EngineError> {
        let cells = self.layout.cells(phase).len();
        let mut total_iters = 0usize;
        let mut max_err = 0.0f64;
        for ci in 0..cells {
            let (atoms, support, problem) = self.cell_problem(phase, ci);
            if problem.nu.len() == 1 {
                // single support point: the row masses are the unique plan
                let rows: Vec<SparseVec> = atoms
                    .iter()
                    .map(|&a| vec![(support[0], self.row_mass(a))])
                    .collect();
                self.iterate.replace_rows(&atoms, rows);
                continue;
            }
            let warm_key = (phase as u8, ci);
            let warm_data = self.warm.get(&warm_key).map(|c| {
                let g: Vec<f64> = support
                    .iter()
                    .map(|j| c.g_by_global.get(j).copied().unwrap_or(0.0))
                    .collect();
                (c.f.clone(), g)
            });
            let solved = if self.eps > 0.0 {
                problem
                    .solve_entropic(
                        warm_data
                            .as_ref()
                            .map(|(f, g)| (f.as_slice(), g.as_slice())),
                    )
                    .map(|(plan, f, g)| {
                        let g_by_global =
                            support.iter().copied().zip(g).collect::<BTreeMap<_, _>>();
                        self.warm.insert(warm_key, WarmCache { f, g_by_global });
                        plan
                    })
            } else {
                problem.solve_exact()
            };
            let plan = solved.map_err(|source| EngineError::Cell {
                phase,
                cell: ci,
                source,
            })?;
            total_iters += plan.iterations;
            max_err = max_err.max(plan.marginal_error);
            // map local support indices back to the global Y support
            let rows: Vec<SparseVec> = plan
                .rows
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|(lj, w)| (support[lj as usize], w))
                        .collect()
                })
                .collect();
            self.iterate.replace_rows(&atoms, rows);
        }
        Ok((total_iters, max_err))
    }

    fn row_mass(&self, atom: u32) -> f64 {
        self.iterate
            .row(atom as usize)
            .iter()
            .map(|&(_, w)| w)
            .sum()
    }

    /// Assembles the cell problem for one composite cell: atoms in
    /// ascending order, sparse support of the cell's Y-marginal, `c^n`
    /// cost matrix and the monotone hint when it applies.
    fn cell_problem(&self, phase: Phase, ci: usize) -> (Vec<u32>, Vec<u32>, CellProblem) {
        let n = self.layout.n();
        let cell = &self.layout.cells(phase)[ci];
        let mut atoms: Vec<u32> = cell
            .members
            .iter()
            .flat_map(|&c| self.iterate.atoms_in_cell(c).iter().copied())
            .collect();
        atoms.sort_unstable();
        let nu_j = self.iterate.y_marginal_on_cells(&cell.members);
        let support: Vec<u32> = nu_j.iter().map(|&(j, _)| j).collect();
        let nu: Vec<f64> = nu_j.iter().map(|&(_, w)| w).collect();
        let mu: Vec<f64> = atoms.iter().map(|&a| self.row_mass(a)).collect();
        let mut cost = Vec::with_capacity(mu.len() * nu.len());
        for &a in &atoms {
            let x = self.iterate.x_point(a as usize);
            for &j in &support {
                cost.push(self.cost.at_scale(n, x, self.iterate.y_point(j as usize)));
            }
        }
        let monotone = if self.eps == 0.0
            && self.iterate.x_dim() == 1
            && self.iterate.y_dim() == 1
            && self.monotone_cost()
        {
            Some(MonotoneHint {
                x_pos: atoms
                    .iter()
                    .map(|&a| self.iterate.x_point(a as usize)[0])
                    .collect(),
                y_pos: support
                    .iter()
                    .map(|&j| self.iterate.y_point(j as usize)[0])
                    .collect(),
            })
        } else {
            None
        };
        let mut problem = CellProblem::new(cost, mu, nu, self.eps);
        problem.monotone = monotone;
        problem.params = self.params;
        (atoms, support, problem)
    }

    /// Whether the base cost is of the strictly convex `h(x - y)` form that
    /// makes the sorted plan optimal in one dimension. Perturbed costs
    /// (`f^n != 0`) fall back to the simplex.
    fn monotone_cost(&self) -> bool {
        matches!(
            (&self.cost.kind, &self.cost.perturbation),
            (
                CostKind::SquaredEuclidean | CostKind::ConvexH(_),
                crate::cost::Perturbation::None
            )
        )
    }

    /// Advances one iteration (`k -> k+1`), sweeping the partition given by
    /// the parity of the new `k`.
    pub fn step(&mut self) -> Result<(usize, f64), EngineError> {
        self.k += 1;
        let phase = Phase::of_iteration(self.k);
        self.half_iteration(phase)
    }

    /// Snapshot of the composite-cell-averaged state at the current `k`.
    pub fn snapshot(&self) -> TrajectorySnapshot {
        snapshot_at(&self.layout, &self.iterate, self.k)
    }

    /// Runs up to `ceil(t_max n)` iterations, recording a snapshot at every
    /// `k` (including the initialization) and stopping early when two
    /// consecutive full sweeps each change the iterate by less than
    /// [`FIXED_POINT_TV`] in total variation.
    pub fn run(&mut self, options: RunOptions) -> Result<RunRecord, EngineError> {
        let n = self.layout.n();
        let k_max = math::ceil(options.t_max * n as f64) as usize;
        let mut snapshots = vec![self.snapshot()];
        let mut stats = Vec::new();
        let mut iterates = Vec::new();
        if options.keep_iterates {
            iterates.push(self.iterate.clone());
        }
        let mut stop = StopReason::HorizonReached;
        let mut sweep_tv = 0.0f64;
        let mut quiet_sweeps = 0usize;
        for k in 1..=k_max {
            let prev = self.iterate.clone();
            let (iters, cell_err) = self.step()?;
            let tv = self
                .iterate
                .tv_distance(&prev)
                .expect("iterate shapes agree");
            sweep_tv += tv;
            let transport = self
                .iterate
                .transport_cost(|x, y| self.cost.at_scale(n, x, y));
            let objective = if self.eps > 0.0 {
                transport + self.eps * self.iterate.kl_to_product(&self.mu_nominal, &self.nu_ref)
            } else {
                transport
            };
            let marg_x: f64 = self
                .iterate
                .marginal_x()
                .iter()
                .zip(&self.mu_nominal)
                .map(|(a, b)| math::abs(a - b))
                .sum();
            let marg_y: f64 = self
                .iterate
                .marginal_y()
                .iter()
                .zip(&self.nu_ref)
                .map(|(a, b)| math::abs(a - b))
                .sum();
            stats.push(IterStats {
                k,
                t: k as f64 / n as f64,
                phase: Phase::of_iteration(k),
                transport,
                objective,
                marginal_err_x: marg_x,
                marginal_err_y: marg_y,
                tv_change: tv,
                solver_iterations: iters,
                max_cell_marginal_error: cell_err,
            });
            snapshots.push(self.snapshot());
            if options.keep_iterates {
                iterates.push(self.iterate.clone());
            }
            if k % 2 == 0 {
                if sweep_tv < FIXED_POINT_TV {
                    quiet_sweeps += 1;
                } else {
                    quiet_sweeps = 0;
                }
                sweep_tv = 0.0;
                if quiet_sweeps >= 2 {
                    stop = StopReason::FixedPoint { at_iteration: k };
                    break;
                }
            }
        }
        Ok(RunRecord {
            n,
            eps: self.eps,
            snapshots,
            stats,
            stop,
            iterates,
        })
    }
}

/// Builds the snapshot of `pi^{n,k}` averaged over the composite cells of
/// the partition used at iteration `k`.
pub fn snapshot_at(layout: &GridPartition, iterate: &Coupling, k: usize) -> TrajectorySnapshot {
    let phase = Phase::of_iteration(k);
    let n = layout.n();
    let cells = layout.cells(phase);
    let mut cell_mass = Vec::with_capacity(cells.len());
    let mut fibers = Vec::with_capacity(cells.len());
    let mut momenta = Vec::with_capacity(cells.len());
    for (ci, cell) in cells.iter().enumerate() {
        let nu_j = iterate.y_marginal_on_cells(&cell.members);
        let mass: f64 = nu_j.iter().map(|&(_, w)| w).sum();
        let fiber: SparseVec = nu_j.iter().map(|&(j, w)| (j, w / mass)).collect();
        cell_mass.push(mass);
        fibers.push(fiber);
        momenta.push(momentum_fiber(layout, iterate, phase, ci, mass));
    }
    TrajectorySnapshot {
        k,
        t: k as f64 / n as f64,
        phase,
        cell_mass,
        fibers,
        momenta,
    }
}

/// Momentum fiber of one composite cell: per axis the signed combination
/// `sum_b b_l nu_{i(J,b)} / m_J` over the existing offset cells.
fn momentum_fiber(
    layout: &GridPartition,
    iterate: &Coupling,
    phase: Phase,
    ci: usize,
    cell_mass: f64,
) -> Vec<SparseVec> {
    let d = layout.dim();
    let mut acc: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); d];
    for b in layout.sign_vectors() {
        if let Some(i) = layout.offset_member(phase, ci, &b) {
            let nu_i = iterate.y_marginal_on_cells(&[i]);
            for (axis, &sign) in b.iter().enumerate() {
                let map = &mut acc[axis];
                for &(j, w) in &nu_i {
                    *map.entry(j).or_insert(0.0) += sign as f64 * w;
                }
            }
        }
    }
    acc.into_iter()
        .map(|map| map.into_iter().map(|(j, w)| (j, w / cell_mass)).collect())
        .collect()
}

/// Momentum fibers through the neighbour form
/// `sum_{Jhat in N(J)} nu_{i(J,Jhat)} (x_Jhat - x_J) n / m_J`; cross-checks
/// the offset-cell form.
pub fn momentum_via_neighbors(
    layout: &GridPartition,
    iterate: &Coupling,
    phase: Phase,
    ci: usize,
) -> Vec<SparseVec> {
    let d = layout.dim();
    let n = layout.n() as f64;
    let cell = &layout.cells(phase)[ci];
    let mass: f64 = cell
        .members
        .iter()
        .flat_map(|&c| iterate.atoms_in_cell(c).iter())
        .map(|&a| iterate.row(a as usize).iter().map(|&(_, w)| w).sum::<f64>())
        .sum();
    let mut acc: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); d];
    for (other, shared) in layout.neighbors(phase, ci) {
        let x_other = &layout.cells(phase.other())[other].center;
        let nu_i = iterate.y_marginal_on_cells(&[shared]);
        for axis in 0..d {
            let factor = (x_other[axis] - cell.center[axis]) * n;
            if factor == 0.0 {
                continue;
            }
            let map = &mut acc[axis];
            for &(j, w) in &nu_i {
                *map.entry(j).or_insert(0.0) += factor * w;
            }
        }
    }
    acc.into_iter()
        .map(|map| {
            map.into_iter()
                .filter(|&(_, w)| w != 0.0)
                .map(|(j, w)| (j, w / mass))
                .collect()
        })
        .collect()
}

/// Normalized basic-cell fibers `rho_i` of an iterate.
pub fn basic_fibers(layout: &GridPartition, iterate: &Coupling) -> Vec<SparseVec> {
    (0..layout.basic_count())
        .map(|c| {
            let nu = iterate.y_marginal_on_cells(&[c]);
            let mass: f64 = nu.iter().map(|&(_, w)| w).sum();
            nu.into_iter().map(|(j, w)| (j, w / mass)).collect()
        })
        .collect()
}
