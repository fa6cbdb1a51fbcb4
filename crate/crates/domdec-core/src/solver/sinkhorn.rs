//! Log-domain Sinkhorn iteration for the entropic cell problems, with
//! epsilon scaling. Stable down to the `eps^n ~ 1/n^2` schedules where the
//! regularization at the working scales is far below naive-scaling
//! underflow.

use alloc::vec;
use alloc::vec::Vec;

use super::{SolveError, SolveParams};
use crate::math;

/// Result of a Sinkhorn solve: dense plan, convergence data and the final
/// dual potentials (useful as warm starts for the next solve of the same
/// cell).
pub struct SinkhornOutput {
    pub flow: Vec<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Minimizes `<C, pi> + eps KL(pi | mu (x) nu)` over couplings of `mu` and
/// `nu`. Potentials may be warm-started through `warm` (row then column
/// potentials; shorter slices fill the leading entries).
pub fn solve_entropic(
    cost: &[f64],
    mu: &[f64],
    nu: &[f64],
    eps: f64,
    params: &SolveParams,
    warm: Option<(&[f64], &[f64])>,
) -> Result<SinkhornOutput, SolveError> {
    let m = mu.len();
    let s = nu.len();
    debug_assert!(eps > 0.0);

    let log_mu: Vec<f64> = mu.iter().map(|&w| math::ln(w)).collect();
    let log_nu: Vec<f64> = nu.iter().map(|&w| math::ln(w)).collect();
    let mass: f64 = mu.iter().sum();

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; s];
    if let Some((wf, wg)) = warm {
        for (t, &w) in f.iter_mut().zip(wf) {
            *t = w;
        }
        for (t, &w) in g.iter_mut().zip(wg) {
            *t = w;
        }
    }

    // epsilon scaling: start near the cost spread, shrink geometrically.
    // Warm-started solves go straight to the target regularization.
    let mut levels = Vec::new();
    if warm.is_none() {
        let cmin = cost.iter().cloned().fold(f64::INFINITY, f64::min);
        let cmax = cost.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut level = (cmax - cmin).max(eps);
        while level > eps * 4.0 {
            levels.push(level);
            level *= 0.25;
        }
    }
    levels.push(eps);

    // Feasibility beyond this is delivered by the terminal rounding step;
    // Sinkhorn itself only needs the plan close enough that rounding stays
    // within the duality-gap bound tol (1 + |cost|_inf / eps).
    let cmin_all = cost.iter().cloned().fold(f64::INFINITY, f64::min);
    let cmax_all = cost.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gap_tol = params.tol * (1.0 + (cmax_all - cmin_all).max(0.0) / eps);

    let mut total_iters = 0usize;
    let mut err = f64::INFINITY;
    let last = levels.len() - 1;
    for (li, &e) in levels.iter().enumerate() {
        let tol = if li == last {
            params.tol
        } else {
            // intermediate levels only hand over decent potentials
            (params.tol * 1e3).max(1e-7 * mass)
        };
        let mut window_start = f64::INFINITY;
        loop {
            if total_iters >= params.max_iter {
                if li == last && err <= gap_tol {
                    break;
                }
                return Err(SolveError::NonConvergence {
                    achieved: err,
                    iterations: total_iters,
                });
            }
            total_iters += 1;
            // y-update makes the column marginal exact
            for j in 0..s {
                let mut max_arg = f64::NEG_INFINITY;
                for i in 0..m {
                    let a = (f[i] - cost[i * s + j]) / e + log_mu[i];
                    if a > max_arg {
                        max_arg = a;
                    }
                }
                let mut sum = 0.0;
                for i in 0..m {
                    sum += math::exp((f[i] - cost[i * s + j]) / e + log_mu[i] - max_arg);
                }
                g[j] = -e * (math::ln(sum) + max_arg);
            }
            // x-update makes the row marginal exact
            for i in 0..m {
                let mut max_arg = f64::NEG_INFINITY;
                for j in 0..s {
                    let a = (g[j] - cost[i * s + j]) / e + log_nu[j];
                    if a > max_arg {
                        max_arg = a;
                    }
                }
                let mut sum = 0.0;
                for j in 0..s {
                    sum += math::exp((g[j] - cost[i * s + j]) / e + log_nu[j] - max_arg);
                }
                f[i] = -e * (math::ln(sum) + max_arg);
            }
            // rows are now exact; measure the column error
            err = 0.0;
            for j in 0..s {
                let mut col = 0.0;
                for i in 0..m {
                    col += plan_entry(&f, &g, cost, &log_mu, &log_nu, e, s, i, j);
                }
                err += math::abs(col - nu[j]);
            }
            if err <= tol {
                break;
            }
            // windowed progress check: near-degenerate duals at small eps
            // converge linearly with rate close to one; once the error sits
            // within the duality-gap tolerance, grinding further buys
            // nothing that the terminal rounding does not already give
            if total_iters.is_multiple_of(1000) {
                if err > 0.5 * window_start {
                    if li != last {
                        break;
                    }
                    if err <= gap_tol {
                        break;
                    }
                }
                window_start = err;
            }
        }
    }

    let mut flow = vec![0.0; m * s];
    for i in 0..m {
        for j in 0..s {
            flow[i * s + j] = plan_entry(&f, &g, cost, &log_mu, &log_nu, eps, s, i, j);
        }
    }
    let residual = round_to_feasible(&mut flow, mu, nu);
    Ok(SinkhornOutput {
        flow,
        iterations: total_iters,
        marginal_error: residual,
        f,
        g,
    })
}

/// Projects an approximately feasible plan onto the transport polytope:
/// rows and columns are scaled down to their targets and the missing mass
/// is re-inserted as a product correction. Returns the remaining L1
/// marginal error (floating-point roundoff).
fn round_to_feasible(flow: &mut [f64], mu: &[f64], nu: &[f64]) -> f64 {
    let m = mu.len();
    let s = nu.len();
    for i in 0..m {
        let row: f64 = flow[i * s..(i + 1) * s].iter().sum();
        if row > mu[i] && row > 0.0 {
            let scale = mu[i] / row;
            for j in 0..s {
                flow[i * s + j] *= scale;
            }
        }
    }
    for j in 0..s {
        let col: f64 = (0..m).map(|i| flow[i * s + j]).sum();
        if col > nu[j] && col > 0.0 {
            let scale = nu[j] / col;
            for i in 0..m {
                flow[i * s + j] *= scale;
            }
        }
    }
    let row_def: Vec<f64> = (0..m)
        .map(|i| (mu[i] - flow[i * s..(i + 1) * s].iter().sum::<f64>()).max(0.0))
        .collect();
    let col_def: Vec<f64> = (0..s)
        .map(|j| (nu[j] - (0..m).map(|i| flow[i * s + j]).sum::<f64>()).max(0.0))
        .collect();
    let deficit: f64 = row_def.iter().sum();
    if deficit > 0.0 {
        for i in 0..m {
            if row_def[i] == 0.0 {
                continue;
            }
            for j in 0..s {
                flow[i * s + j] += row_def[i] * col_def[j] / deficit;
            }
        }
    }
    let mut err = 0.0;
    for i in 0..m {
        let row: f64 = flow[i * s..(i + 1) * s].iter().sum();
        err += math::abs(row - mu[i]);
    }
    for j in 0..s {
        let col: f64 = (0..m).map(|i| flow[i * s + j]).sum();
        err += math::abs(col - nu[j]);
    }
    err
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn plan_entry(
    f: &[f64],
    g: &[f64],
    cost: &[f64],
    log_mu: &[f64],
    log_nu: &[f64],
    eps: f64,
    s: usize,
    i: usize,
    j: usize,
) -> f64 {
    math::exp((f[i] + g[j] - cost[i * s + j]) / eps + log_mu[i] + log_nu[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SolveParams {
        SolveParams::default()
    }

    #[test]
    fn zero_cost_gives_product() {
        let mu = [0.3, 0.7];
        let nu = [0.5, 0.5];
        let out = solve_entropic(&[0.0; 4], &mu, &nu, 0.5, &params(), None).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((out.flow[i * 2 + j] - mu[i] * nu[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singleton_is_trivial() {
        let out = solve_entropic(&[2.0], &[0.4], &[0.4], 0.1, &params(), None).unwrap();
        assert!((out.flow[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn marginals_converge_at_small_eps() {
        let cost = [0.0, 1.0, 1.0, 0.0];
        let mu = [0.5, 0.5];
        let nu = [0.5, 0.5];
        let out = solve_entropic(&cost, &mu, &nu, 5e-4, &params(), None).unwrap();
        let r0 = out.flow[0] + out.flow[1];
        let c0 = out.flow[0] + out.flow[2];
        assert!((r0 - 0.5).abs() < 1e-9);
        assert!((c0 - 0.5).abs() < 1e-9);
        // at tiny eps the plan is essentially the identity pairing
        assert!(out.flow[0] > 0.499);
    }

    #[test]
    fn warm_start_reuses_potentials() {
        let cost = [0.0, 0.7, 0.3, 0.1];
        let mu = [0.6, 0.4];
        let nu = [0.5, 0.5];
        let cold = solve_entropic(&cost, &mu, &nu, 0.05, &params(), None).unwrap();
        let warm =
            solve_entropic(&cost, &mu, &nu, 0.05, &params(), Some((&cold.f, &cold.g))).unwrap();
        assert!(warm.iterations <= cold.iterations);
        for (a, b) in cold.flow.iter().zip(&warm.flow) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
