//! Engine-level invariants: fixed points, per-cell oracle agreement,
//! marginal conservation, composite-marginal preservation, monotone
//! objective, momentum identities and determinism.

mod common;

use common::{diagonal_coupling_1d, flipped_coupling_1d, product_coupling_1d, uniform_atoms_1d};
use domdec_core::coupling::Coupling;
use domdec_core::engine::{momentum_via_neighbors, snapshot_at, Engine, RunOptions, StopReason};
use domdec_core::measure::DiscreteMeasure;
use domdec_core::metrics::w1_exact;
use domdec_core::partition::{GridPartition, Phase};
use domdec_core::solver::{monotone_plan, SolveParams};
use domdec_core::{CostSpec, EpsRule, EpsSchedule};

fn engine_1d(n: usize, eps: f64, init: Coupling) -> Engine {
    Engine::new(
        GridPartition::build(1, n).unwrap(),
        CostSpec::quadratic(),
        eps,
        init,
        SolveParams::default(),
    )
    .unwrap()
}

#[test]
fn optimal_plan_is_fixed_point() {
    let mut engine = engine_1d(8, 0.0, diagonal_coupling_1d(8));
    let before = engine.iterate().clone();
    engine.step().unwrap();
    engine.step().unwrap();
    let tv = engine.iterate().tv_distance(&before).unwrap();
    assert!(tv < 1e-12, "full sweep moved an optimal plan by {tv}");
}

#[test]
fn flipped_n2_single_a_step_resorts_mass() {
    // one composite cell holds both atoms; the 2x2 cell problem re-sorts
    // the flipped pairing into the diagonal
    let mut engine = engine_1d(2, 0.0, flipped_coupling_1d(2));
    engine.step().unwrap();
    let it = engine.iterate();
    assert_eq!(it.row(0), &vec![(0u32, 0.5)]);
    assert_eq!(it.row(1), &vec![(1u32, 0.5)]);
}

#[test]
fn product_init_yields_monotone_cell_plans() {
    let n = 8;
    let mut engine = engine_1d(n, 0.0, product_coupling_1d(n));
    engine.step().unwrap();
    let layout = GridPartition::build(1, n).unwrap();
    let (coords, weights, _) = uniform_atoms_1d(n);
    // per-cell oracle: monotone plan between mu_J and the product marginal
    for cell in layout.cells(Phase::A) {
        let atoms: Vec<usize> = cell.members.clone();
        let x_pos: Vec<f64> = atoms.iter().map(|&a| coords[a]).collect();
        let mu: Vec<f64> = atoms.iter().map(|&a| weights[a]).collect();
        // cell Y-marginal of the product plan: m_J * nu
        let m_j: f64 = mu.iter().sum();
        let nu: Vec<f64> = weights.iter().map(|w| w * m_j).collect();
        let expect = monotone_plan(&x_pos, &mu, &coords, &nu);
        for (local, &a) in atoms.iter().enumerate() {
            let row = engine.iterate().row(a);
            for &(j, w) in row {
                let e = expect[local * n + j as usize];
                assert!((w - e).abs() < 1e-13, "atom {a} entry {j}: {w} vs {e}");
            }
        }
    }
}

#[test]
fn composite_marginals_preserved_per_half_iteration() {
    for eps in [0.0, 0.01] {
        let n = 8;
        let mut engine = engine_1d(n, eps, flipped_coupling_1d(n));
        let layout = engine.layout().clone();
        engine.step().unwrap(); // k = 1, phase A
        let before: Vec<Vec<(u32, f64)>> = layout
            .cells(Phase::B)
            .iter()
            .map(|c| engine.iterate().y_marginal_on_cells(&c.members))
            .collect();
        engine.step().unwrap(); // k = 2, phase B
        let after: Vec<Vec<(u32, f64)>> = layout
            .cells(Phase::B)
            .iter()
            .map(|c| engine.iterate().y_marginal_on_cells(&c.members))
            .collect();
        let tol = if eps == 0.0 { 1e-14 } else { 1e-9 };
        for (b, a) in before.iter().zip(&after) {
            let mut dense_b = vec![0.0; n];
            let mut dense_a = vec![0.0; n];
            for &(j, w) in b {
                dense_b[j as usize] = w;
            }
            for &(j, w) in a {
                dense_a[j as usize] = w;
            }
            for (x, y) in dense_b.iter().zip(&dense_a) {
                assert!((x - y).abs() <= tol, "eps {eps}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn run_respects_horizon_and_detects_fixed_points() {
    // ceil(T n) iterations exactly
    let mut engine = engine_1d(2, 0.0, flipped_coupling_1d(2));
    let record = engine.run(RunOptions::horizon(0.5)).unwrap();
    assert_eq!(record.stats.len(), 1);
    assert_eq!(record.snapshots.len(), 2);

    // a stationary plan stops after two quiet sweeps
    let mut engine = engine_1d(8, 0.0, diagonal_coupling_1d(8));
    let record = engine.run(RunOptions::horizon(10.0)).unwrap();
    assert_eq!(record.stop, StopReason::FixedPoint { at_iteration: 4 });
}

#[test]
fn flipped_run_monotone_objective_and_sorted_optimum() {
    let n = 16;
    let mut engine = engine_1d(n, 0.0, flipped_coupling_1d(n));
    let record = engine.run(RunOptions::horizon(2.0)).unwrap();
    let mut prev = f64::INFINITY;
    for s in &record.stats {
        assert!(
            s.objective <= prev + 1e-9,
            "objective increased at k={}: {} -> {}",
            s.k,
            prev,
            s.objective
        );
        prev = s.objective;
    }
    // sorting oracle: mu = nu on the same atoms, so the sorted optimum is
    // the diagonal with zero cost
    let terminal = record.final_stats().unwrap().transport;
    assert!(terminal.abs() <= 1e-9, "terminal cost {terminal}");
    // marginal conservation along the run
    let last = record.final_stats().unwrap();
    let budget = record.stats.len() as f64 * 1e-9;
    assert!(last.marginal_err_x <= budget);
    assert!(last.marginal_err_y <= budget);
}

#[test]
fn entropic_run_monotone_objective() {
    // well-conditioned regularization: cell solves reach the target
    // tolerance, so the per-step decrease holds up to the solve accuracy
    let n = 8;
    let eps = EpsSchedule::new(EpsRule::Constant { a: 0.02 }).eps(n);
    let mut engine = engine_1d(n, eps, flipped_coupling_1d(n));
    let record = engine.run(RunOptions::horizon(1.5)).unwrap();
    let mut prev = f64::INFINITY;
    for s in &record.stats {
        assert!(
            s.objective <= prev + 1e-8,
            "entropic objective increased at k={}: {} -> {}",
            s.k,
            prev,
            s.objective
        );
        prev = s.objective;
    }
}

#[test]
fn small_eps_schedule_run_completes_with_exact_feasibility() {
    // the 2/(64 n) schedule at n = 8 produces near-degenerate cell duals;
    // the configured tolerance plus terminal rounding keeps the iterate
    // feasible to machine precision
    let n = 8;
    let eps = EpsSchedule::new(EpsRule::Inverse { a: 2.0 / 64.0 }).eps(n);
    let params = SolveParams {
        tol: 1e-6,
        max_iter: 2_000_000,
    };
    let mut engine = Engine::new(
        GridPartition::build(1, n).unwrap(),
        CostSpec::quadratic(),
        eps,
        flipped_coupling_1d(n),
        params,
    )
    .unwrap();
    let record = engine.run(RunOptions::horizon(1.0)).unwrap();
    for s in &record.stats {
        assert!(s.marginal_err_x < 1e-12);
        assert!(s.marginal_err_y < 1e-12);
        assert!(s.max_cell_marginal_error < 1e-12);
    }
}

#[test]
fn momentum_examples() {
    let n = 8;
    // product/uniform state: offset-cell marginals coincide, momentum zero
    let snap = snapshot_at(
        &GridPartition::build(1, n).unwrap(),
        &product_coupling_1d(n),
        1,
    );
    for cell in &snap.momenta {
        for axis in cell {
            for &(_, w) in axis {
                assert!(w.abs() < 1e-15);
            }
        }
    }
    // stationary optimal plan: momentum does not vanish
    let snap = snapshot_at(
        &GridPartition::build(1, n).unwrap(),
        &diagonal_coupling_1d(n),
        1,
    );
    let nonzero = snap
        .momenta
        .iter()
        .flat_map(|c| c.iter())
        .flat_map(|a| a.iter())
        .any(|&(_, w)| w.abs() > 1e-12);
    assert!(nonzero, "converged-plan momentum should not vanish");
}

#[test]
fn momentum_forms_agree() {
    let layout = GridPartition::build(1, 8).unwrap();
    let pi = flipped_coupling_1d(8);
    for k in [1usize, 2] {
        let snap = snapshot_at(&layout, &pi, k);
        for ci in 0..layout.cells(snap.phase).len() {
            let via_neighbors = momentum_via_neighbors(&layout, &pi, snap.phase, ci);
            for (engine_axis, neighbor_axis) in snap.momenta[ci].iter().zip(&via_neighbors) {
                let mut dense = vec![0.0; 8];
                for &(j, w) in engine_axis {
                    dense[j as usize] += w;
                }
                for &(j, w) in neighbor_axis {
                    dense[j as usize] -= w;
                }
                for v in dense {
                    assert!(v.abs() < 1e-14);
                }
            }
        }
    }
}

#[test]
fn momentum_two_dimensional_cell() {
    // hand-built n=2, d=2 state: four atoms, one A cell; each momentum
    // component is a signed measure of total variation at most one after
    // normalization
    let layout = GridPartition::build(2, 2).unwrap();
    let coords = vec![0.25, 0.25, 0.25, 0.75, 0.75, 0.25, 0.75, 0.75];
    let cells = vec![0usize, 1, 2, 3];
    let y_coords = vec![0.0, 0.0, 1.0, 1.0];
    let rows = vec![
        vec![(0u32, 0.25)],
        vec![(0u32, 0.10), (1u32, 0.15)],
        vec![(1u32, 0.25)],
        vec![(0u32, 0.05), (1u32, 0.20)],
    ];
    let pi = Coupling::from_rows(2, 2, coords, cells, 4, y_coords, rows).unwrap();
    let snap = snapshot_at(&layout, &pi, 1);
    assert_eq!(snap.momenta.len(), 1);
    assert_eq!(snap.momenta[0].len(), 2);
    for axis in &snap.momenta[0] {
        let tv: f64 = axis.iter().map(|&(_, w)| w.abs()).sum();
        assert!(tv <= 1.0 + 1e-12, "momentum TV {tv}");
    }
    // explicit first component: (nu_{(+1,b2)} - nu_{(-1,b2)}) summed
    let mut dense = [0.0; 2];
    for &(j, w) in &snap.momenta[0][0] {
        dense[j as usize] = w;
    }
    // atoms 2,3 sit at x1 = 0.75 (positive side), atoms 0,1 at 0.25
    let expect0 = (0.0 + 0.05 - 0.25 - 0.10) / 1.0;
    let expect1 = (0.25 + 0.20 - 0.0 - 0.15) / 1.0;
    assert!((dense[0] - expect0).abs() < 1e-15);
    assert!((dense[1] - expect1).abs() < 1e-15);
}

#[test]
fn averaged_snapshot_stays_close_in_product_metric() {
    // W_{X x Y}(pi^n_t, pi^{n, floor(nt)}) <= 2 sqrt(d)/n via the exact
    // transport oracle on a small scale
    for n in [4usize, 8] {
        let layout = GridPartition::build(1, n).unwrap();
        let pi = flipped_coupling_1d(n);
        let snap = snapshot_at(&layout, &pi, 1);
        // assemble the averaged coupling as a point cloud on X x Y
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        let (atom_coords, atom_weights, _) = uniform_atoms_1d(n);
        for (ci, cell) in layout.cells(snap.phase).iter().enumerate() {
            for &b in &cell.members {
                for &(j, w) in &snap.fibers[ci] {
                    coords.push(atom_coords[b]);
                    coords.push(pi.y_point(j as usize)[0]);
                    weights.push(atom_weights[b] * w);
                }
            }
        }
        let averaged = DiscreteMeasure::new(2, coords, weights).unwrap();
        let raw = pi.as_point_cloud();
        let dist = w1_exact(&averaged, &raw).unwrap();
        let bound = 2.0 * 1.0f64.sqrt() / n as f64;
        assert!(dist <= bound + 1e-12, "n={n}: {dist} > {bound}");
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = |eps: f64| {
        let mut params = SolveParams::default();
        if eps > 0.0 && eps < 0.01 {
            params = SolveParams {
                tol: 1e-6,
                ..params
            };
        }
        let mut engine = Engine::new(
            GridPartition::build(1, 8).unwrap(),
            CostSpec::quadratic(),
            eps,
            flipped_coupling_1d(8),
            params,
        )
        .unwrap();
        engine.run(RunOptions::horizon(1.0)).unwrap()
    };
    for eps in [0.0, 0.002] {
        let a = run(eps);
        let b = run(eps);
        assert_eq!(a.stats.len(), b.stats.len());
        for (sa, sb) in a.stats.iter().zip(&b.stats) {
            assert_eq!(sa.objective.to_bits(), sb.objective.to_bits());
            assert_eq!(sa.tv_change.to_bits(), sb.tv_change.to_bits());
        }
        for (pa, pb) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(pa.fibers, pb.fibers);
            assert_eq!(pa.momenta, pb.momenta);
        }
    }
}
