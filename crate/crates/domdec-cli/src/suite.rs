//! Suite execution: runs a scenario across its scales, attaches the
//! requested diagnostics, verifies fiber equivalences, writes the report
//! bundle and collects invariant violations.

use anyhow::{bail, Result};
use serde::Serialize;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use domdec_core::engine::{Engine, RunOptions, RunRecord, StopReason};
use domdec_core::fiber::{verify_equivalence, FiberCheck};
use domdec_core::metrics::{
    ce_residual, mass_balance_defect, momentum_density_max, vertical_metric_snapshots, wtv,
    wtv_bound_from_wtvb, wtvb,
};
use domdec_core::partition::{GridPartition, Phase};
use domdec_core::testfn::{SeparableTestFn, Wave};

use crate::config::{ScenarioKind, SuiteConfig};
use crate::report::{write_coupling_csv, write_manifest, write_run_csv, CouplingHeader, DiagRow};
use crate::scenario::{build_scenario, HessianCertificate, ScenarioInstance};

/// Everything produced for one scale, kept in memory for inspection.
pub struct ScaleOutcome {
    pub n: usize,
    pub eps: f64,
    pub layout: GridPartition,
    pub mu_basic: Vec<f64>,
    pub record: RunRecord,
    pub rows: Vec<DiagRow>,
    pub fiber: Vec<FiberCheck>,
    pub ce_residual: Option<f64>,
    pub wtvb_max: Option<f64>,
    pub hessian: Option<HessianCertificate>,
    pub violations: Vec<String>,
}

pub struct SuiteOutcome {
    pub out_dir: Option<PathBuf>,
    pub scales: Vec<ScaleOutcome>,
    pub violations: Vec<String>,
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct FiberCheckSummary {
    t: f64,
    x: Vec<f64>,
    k: usize,
    cell: usize,
    objective_transformed: f64,
    objective_direct: f64,
    objective_gap: f64,
    plan_tv: Option<f64>,
    momentum_gap: f64,
}

impl From<&FiberCheck> for FiberCheckSummary {
    fn from(c: &FiberCheck) -> Self {
        FiberCheckSummary {
            t: c.t,
            x: c.x.clone(),
            k: c.k,
            cell: c.cell,
            objective_transformed: c.objective_transformed,
            objective_direct: c.objective_direct,
            objective_gap: c.objective_gap,
            plan_tv: c.plan_tv,
            momentum_gap: c.momentum_gap,
        }
    }
}

#[derive(Serialize)]
struct ScaleSummary<'a> {
    n: usize,
    eps: f64,
    eta: String,
    stop: String,
    iterations_run: usize,
    fixed_point_at: Option<usize>,
    terminal_transport: Option<f64>,
    terminal_objective: Option<f64>,
    wtvb_max: Option<f64>,
    ce_residual: Option<f64>,
    fiber_checks: Vec<FiberCheckSummary>,
    hessian_certificate: &'a Option<HessianCertificate>,
    violations: &'a [String],
}

/// Runs one scale and assembles its diagnostics.
pub fn run_scale(cfg: &SuiteConfig, n: usize) -> Result<ScaleOutcome> {
    let instance = build_scenario(cfg, n)?;
    let ScenarioInstance {
        layout,
        cost,
        eps,
        init,
        density,
        y_diameter,
        solver,
        hessian,
    } = instance;
    let mut engine = Engine::new(layout.clone(), cost.clone(), eps, init, solver)
        .map_err(|e| anyhow::anyhow!("engine init failed: {e}"))?;
    let mu_basic = engine.mu_basic();
    let record = engine
        .run(RunOptions {
            t_max: cfg.t_max,
            keep_iterates: true,
        })
        .map_err(|e| anyhow::anyhow!("run failed at n = {n}: {e}"))?;

    let diag = &cfg.diagnostics;
    let y_coords = record.iterates[0].y_coords().to_vec();
    let y_dim = record.iterates[0].y_dim();
    let mut rows: Vec<DiagRow> = Vec::with_capacity(record.stats.len() + 1);
    let mut violations = Vec::new();
    let mut wtvb_max: Option<f64> = None;

    for k in 0..record.snapshots.len() {
        let mut row = if k == 0 {
            let init = &record.iterates[0];
            let transport = init.transport_cost(|x, y| cost.at_scale(n, x, y));
            let objective = if eps > 0.0 {
                transport + eps * init.kl_to_product(init.x_weights(), &init.marginal_y())
            } else {
                transport
            };
            DiagRow {
                k: 0,
                t: 0.0,
                phase: record.snapshots[0].phase.to_string(),
                transport,
                objective,
                ..DiagRow::default()
            }
        } else {
            DiagRow::from_stats(&record.stats[k - 1])
        };
        let snap = &record.snapshots[k];
        let iterate = &record.iterates[k];
        let mut wtvb_k = None;
        if diag.wtvb {
            let v = wtvb(&layout, iterate).map_err(|e| anyhow::anyhow!("wtvb failed: {e}"))?;
            wtvb_k = Some(v);
            row.wtvb = Some(v);
            wtvb_max = Some(wtvb_max.map_or(v, |m: f64| m.max(v)));
        }
        if diag.wtv {
            let v = wtv(&layout, snap, &y_coords, y_dim)
                .map_err(|e| anyhow::anyhow!("wtv failed: {e}"))?;
            row.wtv = Some(v);
            if let (Some(b), Some(_)) = (wtvb_k, density.tv) {
                let rhs = wtv_bound_from_wtvb(b, layout.dim(), y_diameter, &density);
                if v > rhs + 1e-12 {
                    violations.push(format!(
                        "n={n} k={k}: WTV {v} exceeds the basic-cell bound {rhs}"
                    ));
                }
            }
        }
        if diag.w_step && k + 1 < record.snapshots.len() {
            let step = vertical_metric_snapshots(
                &layout,
                &mu_basic,
                snap,
                &record.snapshots[k + 1],
                &y_coords,
                y_dim,
            )
            .map_err(|e| anyhow::anyhow!("vertical metric failed: {e}"))?;
            row.w_step = Some(step);
        }
        if diag.mass_balance {
            row.mass_balance = Some(mass_balance_defect(&layout, &mu_basic, snap.phase));
        }
        if diag.momentum_density {
            let m = momentum_density_max(snap);
            row.momentum_density_max = Some(m);
            if m > 1.0 + 1e-12 {
                violations.push(format!("n={n} k={k}: momentum density {m} exceeds one"));
            }
        }
        rows.push(row);
    }

    // the unregularized sweep must never increase the transport cost
    if eps == 0.0 {
        let mut prev = f64::INFINITY;
        for s in &record.stats {
            if s.objective > prev + 1e-9 {
                violations.push(format!(
                    "n={n} k={}: objective increased {prev} -> {}",
                    s.k, s.objective
                ));
            }
            prev = s.objective;
        }
    }

    let ce = if diag.ce_residual && cfg.d >= 1 {
        if cfg.t_max < diag.ce_cutoff {
            bail!("ce_residual needs t_max >= ce_cutoff");
        }
        // the y factor uses the doubled frequency: under the mirror
        // symmetry of the uniform scenarios cos(pi y) is odd and its
        // residual cancels identically, leaving only rounding noise
        let phi = SeparableTestFn::new(
            diag.ce_cutoff,
            vec![Wave::Sin(PI); cfg.d],
            vec![Wave::Cos(2.0 * PI); y_dim],
        );
        Some(
            ce_residual(&layout, &record.snapshots, &y_coords, y_dim, &phi)
                .map_err(|e| anyhow::anyhow!("ce residual failed: {e}"))?,
        )
    } else {
        None
    };

    let eta = cfg.eps.schedule()?.eta();
    let mut fiber = Vec::new();
    for sample in &cfg.fiber_samples {
        let k = (sample.t * n as f64).floor() as usize;
        if k == 0 || k >= record.iterates.len() {
            bail!("fiber sample at t = {} maps outside the run", sample.t);
        }
        let check = verify_equivalence(
            &layout,
            &cost,
            eps,
            eta,
            &record.iterates[k],
            sample.t,
            sample.point(),
            solver,
        )
        .map_err(|e| anyhow::anyhow!("fiber verification failed: {e}"))?;
        if check.objective_gap > 1e-8 {
            violations.push(format!(
                "n={n} fiber (t={}, x={:?}): objective gap {}",
                sample.t,
                sample.point(),
                check.objective_gap
            ));
        }
        if let Some(tv) = check.plan_tv {
            if eps > 0.0 && tv > 1e-6 {
                violations.push(format!(
                    "n={n} fiber (t={}, x={:?}): plan tv {tv}",
                    sample.t,
                    sample.point()
                ));
            }
        }
        if check.momentum_gap > 1e-12 {
            violations.push(format!(
                "n={n} fiber (t={}, x={:?}): momentum reconstruction gap {}",
                sample.t,
                sample.point(),
                check.momentum_gap
            ));
        }
        fiber.push(check);
    }

    Ok(ScaleOutcome {
        n,
        eps,
        layout,
        mu_basic,
        record,
        rows,
        fiber,
        ce_residual: ce,
        wtvb_max,
        hessian,
        violations,
    })
}

/// Runs every scale of the suite and, when an output directory is
/// configured, writes the report bundle with its manifest.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let mut scales = Vec::new();
    let mut violations = Vec::new();
    for &n in &cfg.n {
        let outcome = run_scale(cfg, n)?;
        violations.extend(outcome.violations.iter().cloned());
        scales.push(outcome);
    }

    let mut manifest = None;
    if let Some(out_dir) = &cfg.out_dir {
        let mut files = Vec::new();
        for outcome in &scales {
            files.extend(write_scale(cfg, out_dir, outcome)?);
        }
        manifest = Some(write_manifest(out_dir, cfg, files)?);
    }
    Ok(SuiteOutcome {
        out_dir: cfg.out_dir.clone(),
        scales,
        violations,
        manifest,
    })
}

fn write_scale(cfg: &SuiteConfig, out_dir: &Path, outcome: &ScaleOutcome) -> Result<Vec<PathBuf>> {
    let scale_dir = out_dir.join(format!("{}-n{:04}", cfg.scenario, outcome.n));
    let mut files = Vec::new();

    let run_csv = scale_dir.join("run.csv");
    write_run_csv(&run_csv, &outcome.rows)?;
    files.push(run_csv);

    let summary = ScaleSummary {
        n: outcome.n,
        eps: outcome.eps,
        eta: cfg.eps.schedule()?.eta().to_string(),
        stop: match outcome.record.stop {
            StopReason::HorizonReached => "horizon".to_string(),
            StopReason::FixedPoint { at_iteration } => format!("fixed-point@{at_iteration}"),
        },
        iterations_run: outcome.record.stats.len(),
        fixed_point_at: match outcome.record.stop {
            StopReason::FixedPoint { at_iteration } => Some(at_iteration),
            StopReason::HorizonReached => None,
        },
        terminal_transport: outcome.record.final_stats().map(|s| s.transport),
        terminal_objective: outcome.record.final_stats().map(|s| s.objective),
        wtvb_max: outcome.wtvb_max,
        ce_residual: outcome.ce_residual,
        fiber_checks: outcome.fiber.iter().map(FiberCheckSummary::from).collect(),
        hessian_certificate: &outcome.hessian,
        violations: &outcome.violations,
    };
    let summary_path = scale_dir.join("summary.json");
    crate::report::write_file(
        &summary_path,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    files.push(summary_path);

    if cfg.diagnostics.snapshots {
        for (k, iterate) in outcome.record.iterates.iter().enumerate() {
            let path = scale_dir.join(format!("snapshots/iter_{k:04}.csv"));
            write_coupling_csv(
                &path,
                iterate,
                &CouplingHeader {
                    n: outcome.n,
                    d: cfg.d,
                    iteration: k,
                    eps_n: outcome.eps,
                    x_dim: iterate.x_dim(),
                    y_dim: iterate.y_dim(),
                },
            )?;
            files.push(path.with_extension("json"));
            files.push(path);
        }
    }
    Ok(files)
}

/// Vertical-metric distance between two same-scale runs at a common
/// iteration (used by the schedule comparisons).
pub fn w_distance_between_runs(
    layout: &GridPartition,
    mu_basic: &[f64],
    a: &RunRecord,
    b: &RunRecord,
    k: usize,
) -> Result<f64> {
    let y_coords = a.iterates[0].y_coords();
    let y_dim = a.iterates[0].y_dim();
    vertical_metric_snapshots(
        layout,
        mu_basic,
        a.snapshot_at(k),
        b.snapshot_at(k),
        y_coords,
        y_dim,
    )
    .map_err(|e| anyhow::anyhow!("vertical metric failed: {e}"))
}

/// Sweeps one full A+B pass over a copy of the scenario's initialization
/// and reports the total-variation change (fixed-point certificate input).
pub fn full_sweep_tv(cfg: &SuiteConfig, n: usize) -> Result<(f64, ScenarioInstance)> {
    let instance = build_scenario(cfg, n)?;
    let mut engine = Engine::new(
        instance.layout.clone(),
        instance.cost.clone(),
        instance.eps,
        instance.init.clone(),
        instance.solver,
    )
    .map_err(|e| anyhow::anyhow!("engine init failed: {e}"))?;
    let before = engine.iterate().clone();
    engine
        .step()
        .and_then(|_| engine.step())
        .map_err(|e| anyhow::anyhow!("sweep failed: {e}"))?;
    let tv = engine
        .iterate()
        .tv_distance(&before)
        .map_err(|e| anyhow::anyhow!("tv distance failed: {e}"))?;
    Ok((tv, instance))
}

/// Certifies the stationarity/suboptimality pair of the indefinite-Hessian
/// example: the full sweep leaves the initialization unchanged while the
/// global exact optimum is strictly cheaper.
#[derive(Debug, Serialize)]
pub struct FixedPointCertificate {
    pub sweep_tv: f64,
    pub init_cost: f64,
    pub global_optimum: f64,
    pub gap: f64,
}

pub fn hessian_fixed_point_certificate(
    cfg: &SuiteConfig,
    n: usize,
) -> Result<FixedPointCertificate> {
    if cfg.scenario != ScenarioKind::Hessian {
        bail!("fixed-point certificate applies to the hessian scenario");
    }
    let (sweep_tv, instance) = full_sweep_tv(cfg, n)?;
    let init = &instance.init;
    let cost_fn = |x: &[f64], y: &[f64]| instance.cost.at_scale(n, x, y);
    let init_cost = init.transport_cost(cost_fn);
    // global exact optimum on the same atoms via the transportation simplex
    let mu: Vec<f64> = (0..init.n_atoms()).map(|a| init.x_weight(a)).collect();
    let nu = init.marginal_y();
    let (nu_idx, nu_w): (Vec<usize>, Vec<f64>) = nu
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| (j, w))
        .unzip();
    let mut cost = Vec::with_capacity(init.n_atoms() * nu_idx.len());
    for a in 0..init.n_atoms() {
        for &j in &nu_idx {
            cost.push(cost_fn(init.x_point(a), init.y_point(j)));
        }
    }
    let flow = domdec_core::solver::solve_transport(&cost, &mu, &nu_w)
        .map_err(|e| anyhow::anyhow!("global solve failed: {e}"))?;
    let global_optimum: f64 = flow.iter().zip(&cost).map(|(&f, &c)| f * c).sum();
    Ok(FixedPointCertificate {
        sweep_tv,
        init_cost,
        global_optimum,
        gap: init_cost - global_optimum,
    })
}

/// Iterations until fixed-point detection for the semidiscrete trend.
pub fn iterations_to_fixed_point(cfg: &SuiteConfig, n: usize) -> Result<usize> {
    let outcome = run_scale(cfg, n)?;
    Ok(match outcome.record.stop {
        StopReason::FixedPoint { at_iteration } => at_iteration,
        StopReason::HorizonReached => outcome.record.stats.len(),
    })
}

/// Phase used at iteration `k` (re-exported convenience for reports).
pub fn phase_of(k: usize) -> Phase {
    Phase::of_iteration(k)
}
