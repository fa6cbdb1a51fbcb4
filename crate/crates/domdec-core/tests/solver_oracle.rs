//! Cell solver against independent oracles: vertex enumeration for the
//! exact path, dense feasible-family scans for the entropic path, and
//! property tests for feasibility and monotone support.

mod common;

use common::oracle_min_cost;
use domdec_core::solver::{plan_objective, CellProblem, MonotoneHint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(rng: &mut ChaCha8Rng, m: usize, s: usize, eps: f64) -> CellProblem {
    let cost: Vec<f64> = (0..m * s).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
    let mut nu: Vec<f64> = (0..s).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total_mu: f64 = mu.iter().sum();
    let total_nu: f64 = nu.iter().sum();
    for w in nu.iter_mut() {
        *w *= total_mu / total_nu;
    }
    CellProblem::new(cost, mu, nu, eps)
}

#[test]
fn exact_path_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for it in 0..40 {
        // one larger instance, the rest small enough to enumerate quickly
        let (m, s) = if it == 0 {
            (6, 5)
        } else {
            (rng.gen_range(1..=5), rng.gen_range(1..=5))
        };
        let p = random_problem(&mut rng, m, s, 0.0);
        let plan = p.solve().unwrap();
        let oracle = oracle_min_cost(&p.cost, &p.mu, &p.nu);
        assert!(
            (plan.objective - oracle).abs() <= 1e-9,
            "{m}x{s}: {} vs {}",
            plan.objective,
            oracle
        );
    }
}

#[test]
fn monotone_shortcut_agrees_with_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let m = rng.gen_range(1..=6);
        let s = rng.gen_range(1..=6);
        let x_pos: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y_pos: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut nu: Vec<f64> = (0..s).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total_mu: f64 = mu.iter().sum();
        let total_nu: f64 = nu.iter().sum();
        for w in nu.iter_mut() {
            *w *= total_mu / total_nu;
        }
        let mut cost = vec![0.0; m * s];
        for i in 0..m {
            for j in 0..s {
                let d = x_pos[i] - y_pos[j];
                cost[i * s + j] = d * d;
            }
        }
        let simplex = CellProblem::new(cost.clone(), mu.clone(), nu.clone(), 0.0)
            .solve()
            .unwrap();
        let mut hinted = CellProblem::new(cost, mu, nu, 0.0);
        hinted.monotone = Some(MonotoneHint { x_pos, y_pos });
        let fast = hinted.solve().unwrap();
        assert!(
            (simplex.objective - fast.objective).abs() < 1e-10,
            "{} vs {}",
            simplex.objective,
            fast.objective
        );
    }
}

#[test]
fn entropic_matches_2x2_scan_at_both_regularizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for eps in [0.1, 1.0] {
        for _ in 0..25 {
            let p = random_problem(&mut rng, 2, 2, eps);
            let plan = p.solve().unwrap();
            // dense scan of the one-parameter feasible interval, refined by
            // ternary search (the entropic objective is strictly convex)
            let lo = (p.nu[0] - p.mu[1]).max(0.0);
            let hi = p.mu[0].min(p.nu[0]);
            let objective = |t: f64| {
                let rows = vec![
                    sparse_pair(t, p.mu[0] - t),
                    sparse_pair(p.nu[0] - t, p.mu[1] - p.nu[0] + t),
                ];
                plan_objective(&p, &rows)
            };
            let grid = 4000usize;
            let mut best_k = 0usize;
            let mut best = f64::INFINITY;
            for k in 0..=grid {
                let t = lo + (hi - lo) * k as f64 / grid as f64;
                let obj = objective(t);
                if obj < best {
                    best = obj;
                    best_k = k;
                }
            }
            let step = (hi - lo) / grid as f64;
            let mut a = lo + step * (best_k.saturating_sub(1)) as f64;
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
            let best = best.min(objective(0.5 * (a + b)));
            assert!(
                (plan.objective - best).abs() < 1e-8,
                "eps {eps}: {} vs {}",
                plan.objective,
                best
            );
        }
    }
}

fn sparse_pair(w0: f64, w1: f64) -> Vec<(u32, f64)> {
    let mut row = Vec::new();
    if w0 > 0.0 {
        row.push((0u32, w0));
    }
    if w1 > 0.0 {
        row.push((1u32, w1));
    }
    row
}

#[test]
fn entropic_feasibility_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let m = rng.gen_range(2..=5);
        let s = rng.gen_range(2..=5);
        let p = random_problem(&mut rng, m, s, 0.05);
        let plan = p.solve().unwrap();
        assert!(plan.marginal_error <= p.params.tol);
        // row sums match mu up to the configured tolerance
        for (i, row) in plan.rows.iter().enumerate() {
            let mass: f64 = row.iter().map(|&(_, w)| w).sum();
            assert!((mass - p.mu[i]).abs() <= p.params.tol);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Exact plans are feasible vertices: marginals match to 1e-12.
    #[test]
    fn exact_plan_feasible(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..=5);
        let s = rng.gen_range(1..=5);
        let p = random_problem(&mut rng, m, s, 0.0);
        let plan = p.solve().unwrap();
        for (i, row) in plan.rows.iter().enumerate() {
            let mass: f64 = row.iter().map(|&(_, w)| w).sum();
            prop_assert!((mass - p.mu[i]).abs() < 1e-12);
        }
        let mut col = vec![0.0; s];
        for row in &plan.rows {
            for &(j, w) in row {
                col[j as usize] += w;
            }
        }
        for (j, &c) in col.iter().enumerate() {
            prop_assert!((c - p.nu[j]).abs() < 1e-12);
        }
    }

    /// One-dimensional exact plans under convex h have monotone support:
    /// no crossing pair.
    #[test]
    fn monotone_support_no_crossings(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(2..=5);
        let s = rng.gen_range(2..=5);
        let x_pos: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y_pos: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
        let mut nu: Vec<f64> = (0..s).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total_mu: f64 = mu.iter().sum();
        let total_nu: f64 = nu.iter().sum();
        for w in nu.iter_mut() {
            *w *= total_mu / total_nu;
        }
        let mut cost = vec![0.0; m * s];
        for i in 0..m {
            for j in 0..s {
                let d: f64 = x_pos[i] - y_pos[j];
                cost[i * s + j] = (1.0 + d * d).sqrt() - 1.0;
            }
        }
        let mut p = CellProblem::new(cost, mu, nu, 0.0);
        p.monotone = Some(MonotoneHint { x_pos: x_pos.clone(), y_pos: y_pos.clone() });
        let plan = p.solve().unwrap();
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for (i, row) in plan.rows.iter().enumerate() {
            for &(j, w) in row {
                if w > 1e-14 {
                    pairs.push((x_pos[i], y_pos[j as usize]));
                }
            }
        }
        for a in 0..pairs.len() {
            for b in 0..pairs.len() {
                if pairs[a].0 < pairs[b].0 {
                    prop_assert!(pairs[a].1 <= pairs[b].1 + 1e-12);
                }
            }
        }
    }
}
