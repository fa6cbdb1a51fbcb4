//! Metrics and inequality checks: Wasserstein-1 on the second marginal,
//! the vertical transport metric, the composite- and basic-cell total
//! variations, the mass-balance defect and the continuity-equation
//! residual.

use alloc::vec::Vec;
use core::fmt;

use crate::coupling::{Coupling, SparseVec};
use crate::engine::{basic_fibers, TrajectorySnapshot};
use crate::math;
use crate::measure::{DensitySpec, DiscreteMeasure};
use crate::partition::{GridPartition, Phase};
use crate::solver::solve_transport;
use crate::testfn::SeparableTestFn;

/// Mass mismatch rejected beyond this tolerance by `w1`.
pub const W1_MASS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsError {
    MassMismatch {
        a: f64,
        b: f64,
    },
    MarginalMismatch,
    EmptyMeasure,
    DimensionMismatch,
    /// Snapshots do not cover the support of the test function.
    IncompleteTrajectory,
    Solver,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::MassMismatch { a, b } => write!(f, "masses differ: {a} vs {b}"),
            MetricsError::MarginalMismatch => write!(f, "first marginals differ"),
            MetricsError::EmptyMeasure => write!(f, "empty measure"),
            MetricsError::DimensionMismatch => write!(f, "dimension mismatch"),
            MetricsError::IncompleteTrajectory => {
                write!(f, "snapshots do not cover the test function support")
            }
            MetricsError::Solver => write!(f, "exact transport solve failed"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Wasserstein-1 distance between equal-mass measures on the line: the L1
/// distance of their cumulative distribution functions, exact.
pub fn w1_1d(pos_a: &[f64], w_a: &[f64], pos_b: &[f64], w_b: &[f64]) -> Result<f64, MetricsError> {
    let ma: f64 = w_a.iter().sum();
    let mb: f64 = w_b.iter().sum();
    if math::abs(ma - mb) > W1_MASS_TOL * ma.abs().max(1.0) {
        return Err(MetricsError::MassMismatch { a: ma, b: mb });
    }
    if pos_a.is_empty() || pos_b.is_empty() {
        return Err(MetricsError::EmptyMeasure);
    }
    // merge the two supports into one sorted event list
    let mut events: Vec<(f64, f64, f64)> = pos_a
        .iter()
        .zip(w_a)
        .map(|(&p, &w)| (p, w, 0.0))
        .chain(pos_b.iter().zip(w_b).map(|(&p, &w)| (p, 0.0, w)))
        .collect();
    events.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut dist = 0.0;
    let mut fa = 0.0;
    let mut fb = 0.0;
    for win in 0..events.len() {
        fa += events[win].1;
        fb += events[win].2;
        if win + 1 < events.len() {
            dist += math::abs(fa - fb) * (events[win + 1].0 - events[win].0);
        }
    }
    Ok(dist)
}

/// Exact Wasserstein-1 between equal-mass point clouds in any dimension via
/// the transportation simplex with Euclidean ground cost.
pub fn w1_exact(
    points_a: &DiscreteMeasure,
    points_b: &DiscreteMeasure,
) -> Result<f64, MetricsError> {
    if points_a.dim() != points_b.dim() {
        return Err(MetricsError::DimensionMismatch);
    }
    let ma = points_a.total_mass();
    let mb = points_b.total_mass();
    if math::abs(ma - mb) > W1_MASS_TOL * ma.abs().max(1.0) {
        return Err(MetricsError::MassMismatch { a: ma, b: mb });
    }
    // drop zero-weight atoms; the simplex wants positive marginals
    let (mut pa, mut wa) = (Vec::new(), Vec::new());
    for i in 0..points_a.len() {
        if points_a.weight(i) > 0.0 {
            pa.push(i);
            wa.push(points_a.weight(i));
        }
    }
    let (mut pb, mut wb) = (Vec::new(), Vec::new());
    for i in 0..points_b.len() {
        if points_b.weight(i) > 0.0 {
            pb.push(i);
            wb.push(points_b.weight(i));
        }
    }
    if pa.is_empty() || pb.is_empty() {
        return Err(MetricsError::EmptyMeasure);
    }
    // exact marginal match for the solver
    let sa: f64 = wa.iter().sum();
    let sb: f64 = wb.iter().sum();
    let scale = sa / sb;
    for w in wb.iter_mut() {
        *w *= scale;
    }
    let mut cost = Vec::with_capacity(pa.len() * pb.len());
    for &i in &pa {
        for &j in &pb {
            cost.push(math::dist(points_a.point(i), points_b.point(j)));
        }
    }
    let flow = solve_transport(&cost, &wa, &wb).map_err(|_| MetricsError::Solver)?;
    Ok(flow.iter().zip(&cost).map(|(&f, &c)| f * c).sum())
}

/// `W_1` on the second marginal, dispatching on the dimension: CDF form on
/// the line, exact transportation simplex otherwise.
pub fn w1_y(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::DimensionMismatch);
    }
    if a.dim() == 1 {
        w1_1d(a.coords(), a.weights(), b.coords(), b.weights())
    } else {
        w1_exact(a, b)
    }
}

/// `W_1` between sparse fibers over a shared Y support.
pub fn w1_sparse(
    fiber_a: &SparseVec,
    fiber_b: &SparseVec,
    y_coords: &[f64],
    y_dim: usize,
) -> Result<f64, MetricsError> {
    if y_dim == 1 {
        let (pa, wa): (Vec<f64>, Vec<f64>) = fiber_a
            .iter()
            .map(|&(j, w)| (y_coords[j as usize], w))
            .unzip();
        let (pb, wb): (Vec<f64>, Vec<f64>) = fiber_b
            .iter()
            .map(|&(j, w)| (y_coords[j as usize], w))
            .unzip();
        w1_1d(&pa, &wa, &pb, &wb)
    } else {
        let to_measure = |fiber: &SparseVec| {
            let mut coords = Vec::with_capacity(fiber.len() * y_dim);
            let mut weights = Vec::with_capacity(fiber.len());
            for &(j, w) in fiber {
                coords.extend_from_slice(&y_coords[j as usize * y_dim..(j as usize + 1) * y_dim]);
                weights.push(w);
            }
            DiscreteMeasure::new(y_dim, coords, weights).expect("fiber weights nonnegative")
        };
        w1_exact(&to_measure(fiber_a), &to_measure(fiber_b))
    }
}

/// Vertical transport metric between couplings over identical X atoms:
/// the mu-average of the fiberwise `W_1` distances.
pub fn vertical_metric(pi_a: &Coupling, pi_b: &Coupling) -> Result<f64, MetricsError> {
    if pi_a.n_atoms() != pi_b.n_atoms() || pi_a.y_dim() != pi_b.y_dim() {
        return Err(MetricsError::MarginalMismatch);
    }
    let mut total = 0.0;
    for a in 0..pi_a.n_atoms() {
        let wa = pi_a.x_weight(a);
        let wb = pi_b.x_weight(a);
        if math::abs(wa - wb) > W1_MASS_TOL {
            return Err(MetricsError::MarginalMismatch);
        }
        if wa == 0.0 {
            continue;
        }
        let fa: SparseVec = pi_a.row(a).iter().map(|&(j, w)| (j, w / wa)).collect();
        let fb: SparseVec = pi_b.row(a).iter().map(|&(j, w)| (j, w / wb)).collect();
        total += wa * w1_sparse(&fa, &fb, pi_a.y_coords(), pi_a.y_dim())?;
    }
    Ok(total)
}

/// Vertical metric between two composite-cell-averaged snapshots (possibly
/// on different partitions), refined over basic cells:
/// `sum_i m_i W_1(rho_{J(i)}, rho_{J'(i)})`.
pub fn vertical_metric_snapshots(
    layout: &GridPartition,
    mu_basic: &[f64],
    snap_a: &TrajectorySnapshot,
    snap_b: &TrajectorySnapshot,
    y_coords: &[f64],
    y_dim: usize,
) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for i in 0..layout.basic_count() {
        let ca = layout.composite_of_basic(i, snap_a.phase);
        let cb = layout.composite_of_basic(i, snap_b.phase);
        let d = w1_sparse(&snap_a.fibers[ca], &snap_b.fibers[cb], y_coords, y_dim)?;
        total += mu_basic[i] * d;
    }
    Ok(total)
}

/// Vertical metric between two piecewise-constant fiber maps on possibly
/// different scales, integrated against the uniform volume on `[0,1]^d`:
/// `int W_1(fiber_a(x), fiber_b(x)) dx` over the union refinement of the
/// two composite partitions. This compares trajectories across scales.
#[allow(clippy::too_many_arguments)]
pub fn vertical_metric_across_scales(
    layout_a: &GridPartition,
    snap_a: &TrajectorySnapshot,
    y_coords_a: &[f64],
    layout_b: &GridPartition,
    snap_b: &TrajectorySnapshot,
    y_coords_b: &[f64],
    y_dim: usize,
) -> Result<f64, MetricsError> {
    if layout_a.dim() != layout_b.dim() {
        return Err(MetricsError::DimensionMismatch);
    }
    let cells_a = layout_a.cells(snap_a.phase);
    let cells_b = layout_b.cells(snap_b.phase);
    let mut total = 0.0;
    for (ca, cell_a) in cells_a.iter().enumerate() {
        let ext_a = layout_a.composite_extent(snap_a.phase, ca);
        for (cb, _cell_b) in cells_b.iter().enumerate() {
            let ext_b = layout_b.composite_extent(snap_b.phase, cb);
            let mut volume = 1.0;
            for axis in 0..layout_a.dim() {
                let lo = ext_a[axis].0.max(ext_b[axis].0);
                let hi = ext_a[axis].1.min(ext_b[axis].1);
                volume *= (hi - lo).max(0.0);
            }
            if volume == 0.0 {
                continue;
            }
            let pa: Vec<f64> = snap_a.fibers[ca]
                .iter()
                .flat_map(|&(j, _)| {
                    y_coords_a[j as usize * y_dim..(j as usize + 1) * y_dim].to_vec()
                })
                .collect();
            let wa: Vec<f64> = snap_a.fibers[ca].iter().map(|&(_, w)| w).collect();
            let pb: Vec<f64> = snap_b.fibers[cb]
                .iter()
                .flat_map(|&(j, _)| {
                    y_coords_b[j as usize * y_dim..(j as usize + 1) * y_dim].to_vec()
                })
                .collect();
            let wb: Vec<f64> = snap_b.fibers[cb].iter().map(|&(_, w)| w).collect();
            let dist = if y_dim == 1 {
                w1_1d(&pa, &wa, &pb, &wb)?
            } else {
                let ma =
                    DiscreteMeasure::new(y_dim, pa, wa).map_err(|_| MetricsError::EmptyMeasure)?;
                let mb =
                    DiscreteMeasure::new(y_dim, pb, wb).map_err(|_| MetricsError::EmptyMeasure)?;
                w1_exact(&ma, &mb)?
            };
            total += volume * dist;
        }
        let _ = cell_a;
    }
    Ok(total)
}

/// Wasserstein total variation of a snapshot: interface-area-weighted sum
/// of `W_1` jumps between adjacent composite cells of its partition.
pub fn wtv(
    layout: &GridPartition,
    snapshot: &TrajectorySnapshot,
    y_coords: &[f64],
    y_dim: usize,
) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for (a, b, face) in layout.adjacent_pairs(snapshot.phase) {
        total += face * w1_sparse(&snapshot.fibers[a], &snapshot.fibers[b], y_coords, y_dim)?;
    }
    Ok(total)
}

/// Basic-cell "skip one" total variation of an iterate:
/// `n^{1-d} sum W_1(rho_i, rho_{i+2e_l})` over all in-range pairs.
pub fn wtvb(layout: &GridPartition, iterate: &Coupling) -> Result<f64, MetricsError> {
    let fibers = basic_fibers(layout, iterate);
    let n = layout.n();
    let d = layout.dim();
    let mut total = 0.0;
    for flat in 0..layout.basic_count() {
        let multi = layout.basic_multi(flat);
        for axis in 0..d {
            if multi[axis] + 2 < n {
                let other = flat + 2 * n.pow((d - 1 - axis) as u32);
                total += w1_sparse(
                    &fibers[flat],
                    &fibers[other],
                    iterate.y_coords(),
                    iterate.y_dim(),
                )?;
            }
        }
    }
    Ok(total / math::powi(n as f64, d as i32 - 1))
}

/// Mass-balance defect of one composite partition:
/// `n^{1-d} sum_J sum_{i in J} |m_i/m_J - 2^{-d}|`.
pub fn mass_balance_defect(layout: &GridPartition, mu_basic: &[f64], phase: Phase) -> f64 {
    let n = layout.n();
    let d = layout.dim();
    let inv = 1.0 / (1u64 << d) as f64;
    let mut total = 0.0;
    for cell in layout.cells(phase) {
        let m_j: f64 = cell.members.iter().map(|&i| mu_basic[i]).sum();
        for &i in &cell.members {
            total += math::abs(mu_basic[i] / m_j - inv);
        }
    }
    total / math::powi(n as f64, d as i32 - 1)
}

/// Right-hand side of the `WTV <= WTVB/2 + ...` inequality, given the
/// density bounds.
pub fn wtv_bound_from_wtvb(wtvb: f64, dim: usize, diam_y: f64, density: &DensitySpec) -> f64 {
    let d = dim as f64;
    let pow2d = (1u64 << dim) as f64;
    let tv_term = density
        .mass_balance_bound(dim)
        .map(|b| pow2d * b)
        .unwrap_or(0.0);
    0.5 * wtvb + d * diam_y * (pow2d * pow2d + tv_term)
}

/// Right-hand side of the one-step equicontinuity bound
/// `W(pi_{k/n}, pi_{(k+1)/n}) <= M_u/n [C WTVB + ...]`; `c_dim` is the
/// path-count constant (1 in one dimension).
pub fn w_step_bound(
    wtvb: f64,
    dim: usize,
    n: usize,
    diam_y: f64,
    density: &DensitySpec,
    c_dim: f64,
) -> f64 {
    let d = dim as f64;
    let tv_term = density
        .mass_balance_bound(dim)
        .map(|b| (2u64 << dim) as f64 * diam_y * b)
        .unwrap_or(0.0);
    density.m_upper / n as f64 * (c_dim * wtvb + tv_term + 2.0 * d * diam_y)
}

/// The uniform one-dimensional oscillation bound
/// `WTVB(pi^{n,k}) <= 2 WTV(pi_init) + 4 diam Y`.
pub fn wtvb_bound_1d(wtv_init: f64, diam_y: f64) -> f64 {
    2.0 * wtv_init + 4.0 * diam_y
}

/// Largest componentwise momentum density `|d omega / d pi|` over a
/// snapshot; bounded by one for plans produced by the sweep.
pub fn momentum_density_max(snapshot: &TrajectorySnapshot) -> f64 {
    let mut worst = 0.0f64;
    for (fiber, momentum) in snapshot.fibers.iter().zip(&snapshot.momenta) {
        for axis_fiber in momentum {
            let mut fi = 0usize;
            for &(j, w) in axis_fiber {
                while fi < fiber.len() && fiber[fi].0 < j {
                    fi += 1;
                }
                if fi < fiber.len() && fiber[fi].0 == j {
                    let rho = fiber[fi].1;
                    if rho > 0.0 {
                        worst = worst.max(math::abs(w) / rho);
                    } else if w != 0.0 {
                        return f64::INFINITY;
                    }
                } else if w != 0.0 {
                    return f64::INFINITY;
                }
            }
        }
    }
    worst
}

/// Continuity-equation residual of a run against a separable test function:
/// time-exact sums over the piecewise-constant snapshot intervals, spatial
/// sums at composite centers.
pub fn ce_residual(
    layout: &GridPartition,
    snapshots: &[TrajectorySnapshot],
    y_coords: &[f64],
    y_dim: usize,
    test_fn: &SeparableTestFn,
) -> Result<f64, MetricsError> {
    let n = layout.n();
    let steps = math::ceil(test_fn.t_cutoff * n as f64) as usize;
    if snapshots.len() < steps + 1 || snapshots[0].k != 0 {
        return Err(MetricsError::IncompleteTrajectory);
    }
    let mut residual = 0.0;
    for snap in snapshots.iter().take(steps) {
        let k = snap.k;
        let t0 = k as f64 / n as f64;
        let t1 = (k + 1) as f64 / n as f64;
        let psi0 = test_fn.time_value(t0);
        let psi1 = test_fn.time_value(t1);
        let psi_int = test_fn.time_integral(t0, t1);
        let cells = layout.cells(snap.phase);
        for (ci, cell) in cells.iter().enumerate() {
            let x_j = &cell.center;
            let gx = test_fn.space_x_value(x_j);
            let grad = test_fn.space_x_gradient(x_j);
            let m_j = snap.cell_mass[ci];
            // d/dt term: exact time integral of the difference
            let mut h_mass = 0.0;
            for &(j, w) in &snap.fibers[ci] {
                h_mass += w * test_fn.space_y_value(point(y_coords, y_dim, j));
            }
            residual += (psi1 - psi0) * gx * h_mass * m_j;
            // momentum term: exact time integral of psi
            for (axis, axis_fiber) in snap.momenta[ci].iter().enumerate() {
                if grad[axis] == 0.0 {
                    continue;
                }
                let mut h_omega = 0.0;
                for &(j, w) in axis_fiber {
                    h_omega += w * test_fn.space_y_value(point(y_coords, y_dim, j));
                }
                residual += psi_int * grad[axis] * h_omega * m_j;
            }
        }
    }
    // initial term at the k = 0 averaging of the initialization
    let snap0 = &snapshots[0];
    let cells = layout.cells(snap0.phase);
    for (ci, cell) in cells.iter().enumerate() {
        let gx = test_fn.space_x_value(&cell.center);
        let mut h_mass = 0.0;
        for &(j, w) in &snap0.fibers[ci] {
            h_mass += w * test_fn.space_y_value(point(y_coords, y_dim, j));
        }
        residual += test_fn.time_value(0.0) * gx * h_mass * snap0.cell_mass[ci];
    }
    Ok(residual)
}

fn point(coords: &[f64], dim: usize, j: u32) -> &[f64] {
    &coords[j as usize * dim..(j as usize + 1) * dim]
}
