//! Rescaled cell problems on the reference cell `Z = [-1,1]^d` and their
//! limits: building the fiber marginals and linearized costs, solving the
//! fiber problems, verifying equivalence with the sweep's cell plans, and
//! reconstructing momenta from fiber plans.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::cost::{CostError, CostSpec, Eta};
use crate::coupling::{Coupling, SparseVec};
use crate::engine::{snapshot_at, TrajectorySnapshot};
use crate::math;
use crate::measure::{DiscreteMeasure, MeasureError};
use crate::partition::{GridPartition, PartitionError, Phase};
use crate::quad::gauss_legendre;
use crate::solver::{CellProblem, SolveError, SolveParams};

#[derive(Clone, Debug)]
pub enum FiberError {
    Partition(PartitionError),
    Cost(CostError),
    Measure(MeasureError),
    Solve(SolveError),
    /// `t` maps to an iteration without a recorded state.
    OutOfRange,
}

impl fmt::Display for FiberError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FiberError::Partition(e) => write!(f, "{e}"),
            FiberError::Cost(e) => write!(f, "{e}"),
            FiberError::Measure(e) => write!(f, "{e}"),
            FiberError::Solve(e) => write!(f, "{e}"),
            FiberError::OutOfRange => write!(f, "(t, x) outside the recorded run"),
        }
    }
}

impl core::error::Error for FiberError {}

impl From<PartitionError> for FiberError {
    fn from(e: PartitionError) -> Self {
        FiberError::Partition(e)
    }
}

impl From<CostError> for FiberError {
    fn from(e: CostError) -> Self {
        FiberError::Cost(e)
    }
}

impl From<MeasureError> for FiberError {
    fn from(e: MeasureError) -> Self {
        FiberError::Measure(e)
    }
}

impl From<SolveError> for FiberError {
    fn from(e: SolveError) -> Self {
        FiberError::Solve(e)
    }
}

/// How the first marginal is discretized, fixing the limit of the rescaled
/// cell marginals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// All mass of a basic cell collapsed to a Dirac at its center.
    DiracCenters,
    /// The continuous marginal kept as is, realized by per-basic-cell
    /// Gauss-Legendre atoms of the given order per axis.
    LebesgueQuadrature { order: usize },
    /// A sub-grid of `points` per axis inside every basic cell.
    SubGrid { points: usize },
}

/// Objective form of a fiber problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FiberForm {
    /// `int L dl + weight KL(l | sigma (x) pi)`; `weight = 0` gives the
    /// pure linear problem.
    CostLeading { weight: f64 },
    /// `KL(l | sigma (x) pi) + (int L dl)/n_eps`, the normalization used
    /// when the entropic term dominates.
    KlLeading { n_eps: f64 },
    /// Limit with dominating entropy: the product marginal plan is the
    /// unique minimizer.
    Frozen,
}

/// A fiber problem: marginals on `Z` and `Y`, the linear(ized) cost matrix
/// and the objective form.
#[derive(Clone, Debug)]
pub struct FiberProblem {
    pub z_marginal: DiscreteMeasure,
    pub y_marginal: DiscreteMeasure,
    /// Row-major `|Z| x |Y|`.
    pub cost: Vec<f64>,
    pub form: FiberForm,
    pub params: SolveParams,
}

/// A solved fiber plan over the problem's atom enumerations.
#[derive(Clone, Debug)]
pub struct FiberPlan {
    pub rows: Vec<SparseVec>,
    pub objective: f64,
}

/// `sigma_J^n`: pushforward of the cell's first marginal under
/// `z = n (x - x_J)`, normalized to a probability measure.
pub fn scale_to_reference(
    layout: &GridPartition,
    phase: Phase,
    cell: usize,
    coupling: &Coupling,
) -> DiscreteMeasure {
    let n = layout.n() as f64;
    let cell_ref = &layout.cells(phase)[cell];
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut mass = 0.0;
    for &c in &cell_ref.members {
        for &a in coupling.atoms_in_cell(c) {
            let x = coupling.x_point(a as usize);
            for (axis, &xa) in x.iter().enumerate() {
                coords.push(n * (xa - cell_ref.center[axis]));
            }
            let w = coupling.x_weight(a as usize);
            weights.push(w);
            mass += w;
        }
    }
    for w in weights.iter_mut() {
        *w /= mass;
    }
    DiscreteMeasure::new(layout.dim(), coords, weights).expect("cell has atoms")
}

/// The limit of the rescaled marginals for a discretization scheme:
/// Diracs at the quadrant midpoints for the center scheme, the normalized
/// volume measure (as a quadrature proxy) otherwise.
pub fn sigma_limit(scheme: Scheme, dim: usize, quad_order: usize) -> DiscreteMeasure {
    match scheme {
        Scheme::DiracCenters => {
            let count = 1usize << dim;
            let mut coords = Vec::with_capacity(count * dim);
            let mut weights = Vec::with_capacity(count);
            for mask in 0..count {
                for axis in 0..dim {
                    let sign = if mask >> (dim - 1 - axis) & 1 == 1 {
                        1.0
                    } else {
                        -1.0
                    };
                    coords.push(0.5 * sign);
                }
                weights.push(1.0 / count as f64);
            }
            DiscreteMeasure::new(dim, coords, weights).expect("valid quadrant atoms")
        }
        Scheme::LebesgueQuadrature { .. } | Scheme::SubGrid { .. } => {
            // 2^{-d} L restricted to Z, realized by an even-order product
            // Gauss-Legendre rule (no atoms on the coordinate hyperplanes)
            let order = if quad_order.is_multiple_of(2) {
                quad_order.max(2)
            } else {
                quad_order + 1
            };
            let (nodes, w1) = gauss_legendre(order);
            let mut coords = Vec::new();
            let mut weights = Vec::new();
            let mut idx = vec![0usize; dim];
            loop {
                let mut w = 1.0;
                for axis in 0..dim {
                    coords.push(nodes[idx[axis]]);
                    w *= w1[idx[axis]] / 2.0;
                }
                weights.push(w);
                let mut axis = dim;
                loop {
                    if axis == 0 {
                        break;
                    }
                    axis -= 1;
                    idx[axis] += 1;
                    if idx[axis] < order {
                        break;
                    }
                    idx[axis] = 0;
                }
                if idx.iter().all(|&i| i == 0) {
                    break;
                }
            }
            DiscreteMeasure::new(dim, coords, weights).expect("valid quadrature atoms")
        }
    }
}

/// Mass of each closed sign-quadrant `Z_b`; atoms on a coordinate
/// hyperplane split their mass evenly between the adjacent quadrants.
pub fn quadrant_masses(sigma: &DiscreteMeasure) -> BTreeMap<Vec<i8>, f64> {
    let mut out: BTreeMap<Vec<i8>, f64> = BTreeMap::new();
    for i in 0..sigma.len() {
        let z = sigma.point(i);
        let w = sigma.weight(i);
        // collect the sign choices per axis (two on a hyperplane)
        let mut assignments: Vec<Vec<i8>> = vec![Vec::new()];
        for &c in z {
            let choices: &[i8] = if c > 0.0 {
                &[1]
            } else if c < 0.0 {
                &[-1]
            } else {
                &[-1, 1]
            };
            let mut next = Vec::new();
            for base in &assignments {
                for &ch in choices {
                    let mut b = base.clone();
                    b.push(ch);
                    next.push(b);
                }
            }
            assignments = next;
        }
        let share = w / assignments.len() as f64;
        for b in assignments {
            *out.entry(b).or_insert(0.0) += share;
        }
    }
    out
}

/// Builds the rescaled fiber problem at `(t, x)` from the iterate
/// `pi^{n,k}` with `k = floor(t n)`: marginals `(sigma^n_{t,x},
/// pi^n_{t,x})` and cost `<grad_X c(xbar, y), z> + Delta^n(xbar, z, y)`,
/// with the objective form fixed by the schedule's `eta`.
#[allow(clippy::too_many_arguments)]
pub fn build_discrete_fiber(
    layout: &GridPartition,
    cost: &CostSpec,
    eps_n: f64,
    eta: Eta,
    iterate: &Coupling,
    t: f64,
    x: &[f64],
    params: SolveParams,
) -> Result<(FiberProblem, usize, Vec<u32>), FiberError> {
    let n = layout.n();
    let k = math::floor(t * n as f64) as usize;
    let phase = Phase::of_iteration(k);
    let cell = layout.composite_of(x, phase)?;
    let cell_ref = &layout.cells(phase)[cell];
    let x_bar = &cell_ref.center;

    let sigma = scale_to_reference(layout, phase, cell, iterate);
    let nu_j = iterate.y_marginal_on_cells(&cell_ref.members);
    let mass: f64 = nu_j.iter().map(|&(_, w)| w).sum();
    let support: Vec<u32> = nu_j.iter().map(|&(j, _)| j).collect();
    let mut y_coords = Vec::with_capacity(support.len() * iterate.y_dim());
    let mut y_weights = Vec::with_capacity(support.len());
    for &(j, w) in &nu_j {
        y_coords.extend_from_slice(iterate.y_point(j as usize));
        y_weights.push(w / mass);
    }
    let y_marginal = DiscreteMeasure::new(iterate.y_dim(), y_coords, y_weights)?;

    let mut grad = vec![0.0; layout.dim()];
    let mut cost_matrix = Vec::with_capacity(sigma.len() * y_marginal.len());
    for zi in 0..sigma.len() {
        let z = sigma.point(zi);
        for yj in 0..y_marginal.len() {
            let y = y_marginal.point(yj);
            cost.grad_x(x_bar, y, &mut grad);
            let lin: f64 = grad.iter().zip(z).map(|(g, zc)| g * zc).sum();
            let delta = cost.delta_n(n, x_bar, z, y)?;
            cost_matrix.push(lin + delta);
        }
    }

    let form = match eta {
        Eta::Infinite => FiberForm::KlLeading {
            n_eps: n as f64 * eps_n,
        },
        _ => FiberForm::CostLeading {
            weight: n as f64 * eps_n,
        },
    };
    Ok((
        FiberProblem {
            z_marginal: sigma,
            y_marginal,
            cost: cost_matrix,
            form,
            params,
        },
        cell,
        support,
    ))
}

/// The limiting fiber problem at a point `x`: linear cost
/// `<grad_X c(x, y), z>` with entropic weight `eta` (or the frozen form at
/// `eta = inf`).
pub fn build_limit_fiber(
    cost: &CostSpec,
    x: &[f64],
    sigma: DiscreteMeasure,
    pi_fiber: DiscreteMeasure,
    eta: Eta,
    params: SolveParams,
) -> FiberProblem {
    let dim = sigma.dim();
    let mut grad = vec![0.0; dim];
    let mut cost_matrix = Vec::with_capacity(sigma.len() * pi_fiber.len());
    for zi in 0..sigma.len() {
        let z = sigma.point(zi);
        for yj in 0..pi_fiber.len() {
            cost.grad_x(x, pi_fiber.point(yj), &mut grad);
            cost_matrix.push(grad.iter().zip(z).map(|(g, zc)| g * zc).sum());
        }
    }
    let form = match eta {
        Eta::Zero => FiberForm::CostLeading { weight: 0.0 },
        Eta::Finite(v) => FiberForm::CostLeading { weight: v },
        Eta::Infinite => FiberForm::Frozen,
    };
    FiberProblem {
        z_marginal: sigma,
        y_marginal: pi_fiber,
        cost: cost_matrix,
        form,
        params,
    }
}

/// Objective of an explicit plan under the fiber problem's form.
pub fn fiber_objective(p: &FiberProblem, rows: &[SparseVec]) -> f64 {
    let s = p.y_marginal.len();
    let mut transport = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            transport += w * p.cost[i * s + j as usize];
        }
    }
    let kl =
        crate::solver::plan_kl_to_product(rows, p.z_marginal.weights(), p.y_marginal.weights());
    match p.form {
        FiberForm::CostLeading { weight } => {
            if weight > 0.0 {
                transport + weight * kl
            } else {
                transport
            }
        }
        FiberForm::KlLeading { n_eps } => kl + transport / n_eps,
        FiberForm::Frozen => kl,
    }
}

/// Minimizes the fiber problem. The frozen form returns the product plan
/// directly; the others delegate to the cell solvers.
pub fn solve_fiber(p: &FiberProblem) -> Result<FiberPlan, FiberError> {
    let mu = p.z_marginal.weights().to_vec();
    let nu = p.y_marginal.weights().to_vec();
    match p.form {
        FiberForm::Frozen => {
            let rows: Vec<SparseVec> = mu
                .iter()
                .map(|&wa| {
                    nu.iter()
                        .enumerate()
                        .map(|(j, &wy)| (j as u32, wa * wy))
                        .collect()
                })
                .collect();
            Ok(FiberPlan {
                objective: 0.0,
                rows,
            })
        }
        FiberForm::CostLeading { weight } => {
            let mut problem = CellProblem::new(p.cost.clone(), mu, nu, weight);
            problem.params = p.params;
            let plan = problem.solve()?;
            Ok(FiberPlan {
                objective: plan.objective,
                rows: plan.rows,
            })
        }
        FiberForm::KlLeading { n_eps } => {
            let scaled: Vec<f64> = p.cost.iter().map(|c| c / n_eps).collect();
            let mut problem = CellProblem::new(scaled, mu, nu, 1.0);
            problem.params = p.params;
            let (plan, _, _) = problem.solve_entropic(None)?;
            Ok(FiberPlan {
                objective: plan.objective,
                rows: plan.rows,
            })
        }
    }
}

/// Momentum components reconstructed from a fiber plan:
/// `(omega)_l = P_Y(l restricted to z_l > 0) - P_Y(l restricted to
/// z_l < 0)`, atoms exactly on the hyperplane splitting half-half.
pub fn momentum_from_fiber(
    z_marginal: &DiscreteMeasure,
    rows: &[SparseVec],
    n_y: usize,
) -> Vec<Vec<f64>> {
    let dim = z_marginal.dim();
    let mut out = vec![vec![0.0; n_y]; dim];
    for (zi, row) in rows.iter().enumerate() {
        let z = z_marginal.point(zi);
        for axis in 0..dim {
            let sign = if z[axis] > 0.0 {
                1.0
            } else if z[axis] < 0.0 {
                -1.0
            } else {
                0.0
            };
            if sign == 0.0 {
                continue;
            }
            for &(j, w) in row {
                out[axis][j as usize] += sign * w;
            }
        }
    }
    out
}

/// Equivalence report between the sweep's cell plan and the direct fiber
/// minimization at one `(t, x)`.
#[derive(Clone, Debug)]
pub struct FiberCheck {
    pub t: f64,
    pub x: Vec<f64>,
    pub k: usize,
    pub phase: Phase,
    pub cell: usize,
    /// Fiber objective of the transformed sweep plan.
    pub objective_transformed: f64,
    /// Objective of the direct minimization.
    pub objective_direct: f64,
    /// `|transformed - direct| / (1 + |direct|)`.
    pub objective_gap: f64,
    /// Plan TV distance, only meaningful when the minimizer is unique
    /// (positive entropic weight).
    pub plan_tv: Option<f64>,
    /// Max abs difference between the sweep momentum and the fiber
    /// reconstruction.
    pub momentum_gap: f64,
}

/// Transforms the iterate's plan on the cell containing `x` at
/// `k = floor(t n)` to the reference cell, compares its fiber objective
/// with an independent direct minimization, and cross-checks the momentum
/// reconstruction.
#[allow(clippy::too_many_arguments)]
pub fn verify_equivalence(
    layout: &GridPartition,
    cost: &CostSpec,
    eps_n: f64,
    eta: Eta,
    iterate: &Coupling,
    t: f64,
    x: &[f64],
    params: SolveParams,
) -> Result<FiberCheck, FiberError> {
    let n = layout.n();
    let k = math::floor(t * n as f64) as usize;
    if k == 0 {
        return Err(FiberError::OutOfRange);
    }
    let (problem, cell, support) =
        build_discrete_fiber(layout, cost, eps_n, eta, iterate, t, x, params)?;
    let phase = Phase::of_iteration(k);
    let cell_ref = &layout.cells(phase)[cell];

    // transform the sweep's plan on this cell: rows in atom order over the
    // fiber support, normalized by the cell mass
    let mut atoms: Vec<u32> = cell_ref
        .members
        .iter()
        .flat_map(|&c| iterate.atoms_in_cell(c).iter().copied())
        .collect();
    atoms.sort_unstable();
    let local: BTreeMap<u32, u32> = support
        .iter()
        .enumerate()
        .map(|(lj, &j)| (j, lj as u32))
        .collect();
    let m_j: f64 = atoms
        .iter()
        .map(|&a| iterate.row(a as usize).iter().map(|&(_, w)| w).sum::<f64>())
        .sum();
    let transformed: Vec<SparseVec> = atoms
        .iter()
        .map(|&a| {
            iterate
                .row(a as usize)
                .iter()
                .map(|&(j, w)| (local[&j], w / m_j))
                .collect()
        })
        .collect();

    let objective_transformed = fiber_objective(&problem, &transformed);
    let direct = solve_fiber(&problem)?;
    let objective_gap =
        math::abs(objective_transformed - direct.objective) / (1.0 + math::abs(direct.objective));

    let entropic = match problem.form {
        FiberForm::CostLeading { weight } => weight > 0.0,
        FiberForm::KlLeading { .. } => true,
        FiberForm::Frozen => true,
    };
    let plan_tv = entropic.then(|| {
        let mut tv = 0.0;
        for (ra, rb) in transformed.iter().zip(&direct.rows) {
            let mut dense_a = vec![0.0; problem.y_marginal.len()];
            for &(j, w) in ra {
                dense_a[j as usize] += w;
            }
            for &(j, w) in rb {
                dense_a[j as usize] -= w;
            }
            tv += dense_a.iter().map(|v| math::abs(*v)).sum::<f64>();
        }
        tv
    });

    // momentum reconstruction vs the sweep's offset-cell form
    let snapshot = snapshot_at(layout, iterate, k);
    let reconstructed = momentum_from_fiber(&problem.z_marginal, &transformed, support.len());
    let momentum_gap = momentum_difference(&snapshot, cell, &support, &reconstructed);

    Ok(FiberCheck {
        t,
        x: x.to_vec(),
        k,
        phase,
        cell,
        objective_transformed,
        objective_direct: direct.objective,
        objective_gap,
        plan_tv,
        momentum_gap,
    })
}

fn momentum_difference(
    snapshot: &TrajectorySnapshot,
    cell: usize,
    support: &[u32],
    reconstructed: &[Vec<f64>],
) -> f64 {
    let mut worst = 0.0f64;
    for (axis, axis_rec) in reconstructed.iter().enumerate() {
        let engine_fiber = &snapshot.momenta[cell][axis];
        let mut dense = axis_rec.clone();
        for &(j, w) in engine_fiber {
            if let Ok(pos) = support.binary_search(&j) {
                dense[pos] -= w;
            } else if w != 0.0 {
                worst = worst.max(math::abs(w));
            }
        }
        for v in dense {
            worst = worst.max(math::abs(v));
        }
    }
    worst
}
