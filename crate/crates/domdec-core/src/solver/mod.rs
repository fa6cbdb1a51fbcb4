//! Per-cell transport problems: linear cost plus optional entropic penalty
//! between small discrete marginals, solved exactly (transportation
//! simplex, or the monotone plan in one dimension) or by log-domain
//! Sinkhorn.

mod monotone;
mod simplex;
mod sinkhorn;

pub use monotone::monotone_plan;
pub use simplex::solve_transport;
pub use sinkhorn::{solve_entropic, SinkhornOutput};

use alloc::vec::Vec;
use core::fmt;

use crate::coupling::SparseVec;
use crate::math;

/// Mass mismatch tolerance between the two cell marginals.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum SolveError {
    NegativeEps,
    Shape,
    /// Marginal masses differ beyond `MASS_TOL` (relative).
    MassMismatch {
        mu: f64,
        nu: f64,
    },
    /// A marginal weight is zero or negative.
    DegenerateMarginal,
    NonFiniteCost,
    /// Sinkhorn hit the iteration cap; carries the achieved marginal error.
    NonConvergence {
        achieved: f64,
        iterations: usize,
    },
    /// Simplex pivot cap exceeded.
    PivotLimit,
    /// Basis bookkeeping failed (should not happen on valid input).
    Numerical,
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::NegativeEps => write!(f, "entropic weight must be nonnegative"),
            SolveError::Shape => write!(f, "cost matrix shape mismatch"),
            SolveError::MassMismatch { mu, nu } => {
                write!(f, "marginal masses differ: {mu} vs {nu}")
            }
            SolveError::DegenerateMarginal => write!(f, "marginal weight not positive"),
            SolveError::NonFiniteCost => write!(f, "cost matrix has non-finite entries"),
            SolveError::NonConvergence {
                achieved,
                iterations,
            } => write!(
                f,
                "no convergence after {iterations} iterations (marginal error {achieved:.3e})"
            ),
            SolveError::PivotLimit => write!(f, "simplex pivot limit exceeded"),
            SolveError::Numerical => write!(f, "numerical failure in basis bookkeeping"),
        }
    }
}

impl core::error::Error for SolveError {}

/// Solver tolerances; `tol` is the L1 marginal error of the entropic path.
#[derive(Clone, Copy, Debug)]
pub struct SolveParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

/// Positions enabling the sorted-plan shortcut: one-dimensional marginals
/// under a strictly convex `h(x - y)` cost.
#[derive(Clone, Debug)]
pub struct MonotoneHint {
    pub x_pos: Vec<f64>,
    pub y_pos: Vec<f64>,
}

/// One cell problem: cost matrix, marginals of equal mass, entropic weight.
///
/// The entropic reference is the product of the problem's own marginals;
/// the reference used by the sweep (`mu_J (x) nu`) differs from it by an
/// additive constant only, see [`reference_shift`].
#[derive(Clone, Debug)]
pub struct CellProblem {
    /// Row-major `mu.len() x nu.len()` cost matrix.
    pub cost: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub eps: f64,
    pub monotone: Option<MonotoneHint>,
    pub params: SolveParams,
}

/// Solved cell plan with sparse rows over the problem's nu-support.
#[derive(Clone, Debug)]
pub struct CellPlan {
    pub rows: Vec<SparseVec>,
    /// Transport part `<C, pi>`.
    pub transport: f64,
    /// Full objective: transport plus `eps KL(pi | mu (x) nu)` for
    /// `eps > 0`.
    pub objective: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

impl CellProblem {
    pub fn new(cost: Vec<f64>, mu: Vec<f64>, nu: Vec<f64>, eps: f64) -> Self {
        CellProblem {
            cost,
            mu,
            nu,
            eps,
            monotone: None,
            params: SolveParams::default(),
        }
    }

    fn validate(&self) -> Result<(), SolveError> {
        if self.eps < 0.0 {
            return Err(SolveError::NegativeEps);
        }
        if self.cost.len() != self.mu.len() * self.nu.len() || self.mu.is_empty() {
            return Err(SolveError::Shape);
        }
        if self.cost.iter().any(|c| !c.is_finite()) {
            return Err(SolveError::NonFiniteCost);
        }
        if self
            .mu
            .iter()
            .chain(self.nu.iter())
            .any(|&w| w <= 0.0 || !w.is_finite())
        {
            return Err(SolveError::DegenerateMarginal);
        }
        let (tm, tn) = (self.mu.iter().sum::<f64>(), self.nu.iter().sum::<f64>());
        if math::abs(tm - tn) > MASS_TOL * tm.max(1.0) {
            return Err(SolveError::MassMismatch { mu: tm, nu: tn });
        }
        Ok(())
    }

    /// Dispatches on the entropic weight.
    pub fn solve(&self) -> Result<CellPlan, SolveError> {
        self.solve_warm(None)
    }

    /// Like [`solve`](Self::solve) with warm-start potentials for the
    /// entropic path.
    pub fn solve_warm(&self, warm: Option<(&[f64], &[f64])>) -> Result<CellPlan, SolveError> {
        self.validate()?;
        if self.eps == 0.0 {
            self.solve_exact()
        } else {
            self.solve_entropic(warm).map(|(plan, _, _)| plan)
        }
    }

    /// Exact path (`eps = 0`): monotone plan when the hint applies,
    /// transportation simplex otherwise.
    pub fn solve_exact(&self) -> Result<CellPlan, SolveError> {
        self.validate()?;
        let s = self.nu.len();
        let flow = if let Some(hint) = &self.monotone {
            monotone_plan(&hint.x_pos, &self.mu, &hint.y_pos, &self.nu)
        } else {
            solve_transport(&self.cost, &self.mu, &self.nu)?
        };
        let transport: f64 = flow.iter().zip(&self.cost).map(|(&w, &c)| w * c).sum();
        Ok(CellPlan {
            rows: dense_to_rows(&flow, self.mu.len(), s),
            transport,
            objective: transport,
            iterations: 0,
            marginal_error: 0.0,
        })
    }

    /// Entropic path (`eps > 0`), returning the plan and final potentials.
    pub fn solve_entropic(
        &self,
        warm: Option<(&[f64], &[f64])>,
    ) -> Result<(CellPlan, Vec<f64>, Vec<f64>), SolveError> {
        self.validate()?;
        if self.eps == 0.0 {
            return Err(SolveError::NegativeEps);
        }
        let out = solve_entropic(&self.cost, &self.mu, &self.nu, self.eps, &self.params, warm)?;
        let m = self.mu.len();
        let s = self.nu.len();
        let transport: f64 = out.flow.iter().zip(&self.cost).map(|(&w, &c)| w * c).sum();
        let mut kl = 0.0;
        let mut mass = 0.0;
        for i in 0..m {
            for j in 0..s {
                let w = out.flow[i * s + j];
                if w > 0.0 {
                    kl += w * math::ln(w / (self.mu[i] * self.nu[j]));
                    mass += w;
                }
            }
        }
        let mu_mass: f64 = self.mu.iter().sum();
        let nu_mass: f64 = self.nu.iter().sum();
        kl += mu_mass * nu_mass - mass;
        Ok((
            CellPlan {
                rows: dense_to_rows(&out.flow, m, s),
                transport,
                objective: transport + self.eps * kl,
                iterations: out.iterations,
                marginal_error: out.marginal_error,
            },
            out.f,
            out.g,
        ))
    }
}

/// Additive constant relating the canonical objective (reference: product
/// of the problem's own marginals) to the sweep's reference `mu_J (x) nu`:
/// `KL(pi | mu_J (x) nu) = KL(pi | mu_J (x) nu_J) + shift`, independent of
/// the feasible plan. `nu_global_on_support` holds the global nu weights at
/// the cell's support points, `nu_total` its full mass.
pub fn reference_shift(nu_cell: &[f64], nu_global_on_support: &[f64], nu_total: f64) -> f64 {
    let m_j: f64 = nu_cell.iter().sum();
    let mut kl_marg = 0.0;
    for (&a, &b) in nu_cell.iter().zip(nu_global_on_support) {
        if a > 0.0 {
            kl_marg += a * math::ln(a / b);
        }
    }
    // references have masses m_J * |nu| and m_J^2; feasible plans mass m_J
    kl_marg + m_j * nu_total - m_j * m_j
}

fn dense_to_rows(flow: &[f64], m: usize, s: usize) -> Vec<SparseVec> {
    (0..m)
        .map(|i| {
            (0..s)
                .filter_map(|j| {
                    let w = flow[i * s + j];
                    (w > 0.0).then_some((j as u32, w))
                })
                .collect()
        })
        .collect()
}

/// Checks that `kl_weights` and the plan objective agree on the measure
/// level (exposed for the diagnostics crate-level tests).
pub fn plan_kl_to_product(rows: &[SparseVec], mu: &[f64], nu: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut mass = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            if w > 0.0 {
                sum += w * math::ln(w / (mu[i] * nu[j as usize]));
                mass += w;
            }
        }
    }
    let mu_mass: f64 = mu.iter().sum();
    let nu_mass: f64 = nu.iter().sum();
    sum + mu_mass * nu_mass - mass
}

/// Convenience: dense objective of a plan against a problem.
pub fn plan_objective(p: &CellProblem, rows: &[SparseVec]) -> f64 {
    let s = p.nu.len();
    let mut transport = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            transport += w * p.cost[i * s + j as usize];
        }
    }
    if p.eps > 0.0 {
        transport + p.eps * plan_kl_to_product(rows, &p.mu, &p.nu)
    } else {
        transport
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn dispatch_and_validation() {
        let p = CellProblem::new(vec![0.0], vec![1.0], vec![1.0], -1.0);
        assert_eq!(p.solve().unwrap_err(), SolveError::NegativeEps);
        let p = CellProblem::new(vec![0.0], vec![1.0], vec![0.5], 0.0);
        assert!(matches!(
            p.solve().unwrap_err(),
            SolveError::MassMismatch { .. }
        ));
        // eps = 0 routes to the exact path (zero iterations)
        let p = CellProblem::new(vec![1.0], vec![0.7], vec![0.7], 0.0);
        assert_eq!(p.solve().unwrap().iterations, 0);
        // eps > 0 routes to Sinkhorn
        let p = CellProblem::new(vec![1.0], vec![0.7], vec![0.7], 0.1);
        assert!(p.solve().unwrap().iterations > 0);
    }

    #[test]
    fn singleton_cell() {
        let p = CellProblem::new(vec![3.0], vec![0.25], vec![0.25], 0.5);
        let plan = p.solve().unwrap();
        assert_eq!(plan.rows.len(), 1);
        let (j, w) = plan.rows[0][0];
        assert_eq!(j, 0);
        assert!((w - 0.25).abs() < 1e-12);
    }

    #[test]
    fn monotone_pairing_example() {
        // mu atoms {0, 0.5}, nu atoms {0.2, 0.9}, h = s^2
        let x = vec![0.0, 0.5];
        let y = vec![0.2, 0.9];
        let mut cost = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                cost[i * 2 + j] = (x[i] - y[j]) * (x[i] - y[j]);
            }
        }
        let mut p = CellProblem::new(cost, vec![0.5, 0.5], vec![0.5, 0.5], 0.0);
        p.monotone = Some(MonotoneHint { x_pos: x, y_pos: y });
        let plan = p.solve().unwrap();
        assert_eq!(plan.rows[0], vec![(0u32, 0.5)]);
        assert_eq!(plan.rows[1], vec![(1u32, 0.5)]);
    }

    #[test]
    fn antidiagonal_matches_enumeration() {
        let cost = vec![1.0, 0.0, 0.0, 1.0];
        let mu = vec![0.5, 0.5];
        let nu = vec![0.5, 0.5];
        let p = CellProblem::new(cost.clone(), mu.clone(), nu.clone(), 0.0);
        let plan = p.solve().unwrap();
        // both matchings enumerated: diagonal costs 1, antidiagonal 0
        assert!((plan.objective - 0.0).abs() < 1e-12);
        assert_eq!(plan.rows[0], vec![(1u32, 0.5)]);
    }

    #[test]
    fn scaling_invariance() {
        // joint rescaling of both marginals scales the optimal plan
        let cost = vec![0.3, 0.9, 0.2, 0.7, 0.1, 0.5];
        let mu = vec![0.4, 0.6];
        let nu = vec![0.3, 0.3, 0.4];
        for eps in [0.0, 0.25] {
            let p1 = CellProblem::new(cost.clone(), mu.clone(), nu.clone(), eps);
            let s = 3.7;
            let p2 = CellProblem::new(
                cost.clone(),
                mu.iter().map(|w| w * s).collect(),
                nu.iter().map(|w| w * s).collect(),
                eps,
            );
            let a = p1.solve().unwrap();
            let b = p2.solve().unwrap();
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                for (&(ja, wa), &(jb, wb)) in ra.iter().zip(rb) {
                    assert_eq!(ja, jb);
                    assert!((wa * s - wb).abs() < 1e-7, "{} {}", wa * s, wb);
                }
            }
        }
    }

    #[test]
    fn entropic_2x2_matches_feasible_family_scan() {
        // feasible set of a 2x2 transport polytope is an interval; scan it
        let cost = vec![0.2, 0.8, 0.7, 0.1];
        let mu = vec![0.6, 0.4];
        let nu = vec![0.5, 0.5];
        let eps = 0.1;
        let p = CellProblem::new(cost.clone(), mu.clone(), nu.clone(), eps);
        let plan = p.solve().unwrap();

        let objective = |t: f64| -> f64 {
            // pi = [[t, mu0 - t], [nu0 - t, mu1 - nu0 + t]]
            let pi = [t, mu[0] - t, nu[0] - t, mu[1] - nu[0] + t];
            let mut obj = 0.0;
            for (k, &w) in pi.iter().enumerate() {
                let r = mu[k / 2] * nu[k % 2];
                obj += w * cost[k];
                if w > 0.0 {
                    obj += eps * (w * (w / r).ln() - w + r);
                } else {
                    obj += eps * r;
                }
            }
            obj
        };
        let lo = 0.0f64.max(nu[0] - mu[1]);
        let hi = mu[0].min(nu[0]);
        let mut best = f64::INFINITY;
        let grid = 200_000;
        for k in 0..=grid {
            let t = lo + (hi - lo) * k as f64 / grid as f64;
            best = best.min(objective(t));
        }
        assert!(
            (plan.objective - best).abs() < 1e-8,
            "{} vs {}",
            plan.objective,
            best
        );
    }

    #[test]
    fn reference_shift_is_plan_independent() {
        // shift equals KL(pi|mu x nu_global) - KL(pi|mu x nu_cell) for any
        // feasible plan
        let mu = vec![0.25, 0.25];
        let nu_cell = vec![0.3, 0.2];
        let nu_global = vec![0.6, 0.4];
        let shift = reference_shift(&nu_cell, &nu_global, 1.0);
        for rows in [
            vec![
                vec![(0u32, 0.15), (1u32, 0.1)],
                vec![(0u32, 0.15), (1u32, 0.1)],
            ],
            vec![vec![(0u32, 0.25)], vec![(0u32, 0.05), (1u32, 0.2)]],
        ] {
            let a = plan_kl_to_product(&rows, &mu, &nu_global);
            let b = plan_kl_to_product(&rows, &mu, &nu_cell);
            assert!((a - b - shift).abs() < 1e-12);
        }
    }
}
