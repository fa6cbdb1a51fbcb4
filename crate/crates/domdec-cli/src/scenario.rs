//! Scenario construction: atom grids per discretization scheme, the
//! initial couplings of the numerical experiments, and the admissibility
//! certificate for the indefinite-Hessian example.

use anyhow::{bail, Result};
use serde::Serialize;

use domdec_core::coupling::{block_approximation, Coupling};
use domdec_core::fiber::Scheme;
use domdec_core::measure::{DensitySpec, DiscreteMeasure};
use domdec_core::partition::{GridPartition, Phase};
use domdec_core::quad::gauss_legendre;
use domdec_core::solver::SolveParams;
use domdec_core::CostSpec;

use crate::config::{DensityConfig, ScenarioKind, SuiteConfig};

/// Everything the engine needs for one scale of a scenario.
pub struct ScenarioInstance {
    pub layout: GridPartition,
    pub cost: CostSpec,
    pub eps: f64,
    pub init: Coupling,
    pub density: DensitySpec,
    pub y_diameter: f64,
    pub solver: SolveParams,
    pub hessian: Option<HessianCertificate>,
}

/// Atom cloud of the first marginal, grouped by basic cell.
pub struct AtomGrid {
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
    pub cells: Vec<usize>,
}

/// Per-composite-cell optimality certificate for the indefinite-Hessian
/// map: the smallest value of `(x1 - x2)^T H (x1 - x2)` over atom pairs
/// within one composite cell, checked over both partitions.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HessianCertificate {
    pub theta: f64,
    pub alpha: f64,
    pub min_pair_form: f64,
    pub pairs_checked: usize,
}

fn density_from_config(cfg: &SuiteConfig) -> Result<DensitySpec> {
    match &cfg.mu {
        None => Ok(DensitySpec::uniform()),
        Some(DensityConfig::Uniform) => Ok(DensitySpec::uniform()),
        Some(DensityConfig::Piecewise { breaks, values }) => {
            if cfg.d != 1 {
                bail!("piecewise densities are one-dimensional");
            }
            DensitySpec::piecewise_1d(breaks.clone(), values.clone())
                .map_err(|e| anyhow::anyhow!("invalid density: {e}"))
        }
        Some(DensityConfig::Sampled { values }) => {
            if cfg.d != 1 {
                bail!("sampled densities are one-dimensional");
            }
            DensitySpec::sampled_1d(values.clone())
                .map_err(|e| anyhow::anyhow!("invalid density: {e}"))
        }
    }
}

/// Atoms of `mu^n` for a scheme: cell centers, per-cell Gauss-Legendre
/// nodes, or a regular sub-grid. Masses integrate the density exactly for
/// the center and sub-grid schemes.
pub fn build_atoms(
    layout: &GridPartition,
    scheme: Scheme,
    density: &DensitySpec,
) -> Result<AtomGrid> {
    let d = layout.dim();
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    let mut cells = Vec::new();
    match scheme {
        Scheme::DiracCenters => {
            for flat in 0..layout.basic_count() {
                let ext = layout.basic_extent(flat);
                let (lo, hi): (Vec<f64>, Vec<f64>) = ext.iter().cloned().unzip();
                coords.extend_from_slice(&layout.basic_center(flat));
                weights.push(density.box_mass(&lo, &hi));
                cells.push(flat);
            }
        }
        Scheme::LebesgueQuadrature { order } => {
            if !matches!(density.kind, domdec_core::measure::DensityKind::Uniform) {
                bail!("quadrature atoms require the uniform density");
            }
            let (nodes, ws) = gauss_legendre(order.max(1));
            let cell_vol = 1.0 / layout.basic_count() as f64;
            for flat in 0..layout.basic_count() {
                let ext = layout.basic_extent(flat);
                // product rule over the cell
                let mut idx = vec![0usize; d];
                loop {
                    let mut w = cell_vol;
                    for axis in 0..d {
                        let (lo, hi) = ext[axis];
                        let mid = 0.5 * (lo + hi);
                        let half = 0.5 * (hi - lo);
                        coords.push(mid + half * nodes[idx[axis]]);
                        w *= ws[idx[axis]] / 2.0;
                    }
                    weights.push(w);
                    cells.push(flat);
                    if !advance(&mut idx, nodes.len()) {
                        break;
                    }
                }
            }
        }
        Scheme::SubGrid { points } => {
            if points == 0 {
                bail!("sub-grid scheme needs at least one point per axis");
            }
            for flat in 0..layout.basic_count() {
                let ext = layout.basic_extent(flat);
                let mut idx = vec![0usize; d];
                loop {
                    let mut lo = Vec::with_capacity(d);
                    let mut hi = Vec::with_capacity(d);
                    for axis in 0..d {
                        let (a, b) = ext[axis];
                        let step = (b - a) / points as f64;
                        lo.push(a + step * idx[axis] as f64);
                        hi.push(a + step * (idx[axis] + 1) as f64);
                        coords.push(a + step * (idx[axis] as f64 + 0.5));
                    }
                    weights.push(density.box_mass(&lo, &hi));
                    cells.push(flat);
                    if !advance(&mut idx, points) {
                        break;
                    }
                }
            }
        }
    }
    Ok(AtomGrid {
        coords,
        weights,
        cells,
    })
}

fn advance(idx: &mut [usize], limit: usize) -> bool {
    for axis in (0..idx.len()).rev() {
        idx[axis] += 1;
        if idx[axis] < limit {
            return true;
        }
        idx[axis] = 0;
    }
    false
}

/// Builds the initialized state for one scale.
pub fn build_scenario(cfg: &SuiteConfig, n: usize) -> Result<ScenarioInstance> {
    let layout = GridPartition::build(cfg.d, n)
        .map_err(|e| anyhow::anyhow!("layout construction failed: {e}"))?;
    let cost = cfg.cost.cost_spec();
    let eps = cfg.eps.schedule()?.eps(n);
    let solver = cfg.solver.params();
    let scheme = cfg.scheme.scheme();

    let (density, init, y_diameter, hessian) = match cfg.scenario {
        ScenarioKind::Flipped => {
            let density = density_from_config(cfg)?;
            let atoms = build_atoms(&layout, scheme, &density)?;
            let init = flipped_coupling(&layout, &atoms)?;
            (density, init, cfg.y_diameter.unwrap_or(1.0), None)
        }
        ScenarioKind::Product => {
            let density = density_from_config(cfg)?;
            let atoms = build_atoms(&layout, scheme, &density)?;
            let init = product_with_uniform_targets(&layout, &atoms, n)?;
            (density, init, cfg.y_diameter.unwrap_or(1.0), None)
        }
        ScenarioKind::Bottleneck => {
            let density = match &cfg.mu {
                Some(_) => density_from_config(cfg)?,
                None => {
                    let w = cfg.params.dip_width;
                    DensitySpec::piecewise_1d(
                        vec![0.5 - w / 2.0, 0.5 + w / 2.0],
                        vec![1.0, cfg.params.dip_depth, 1.0],
                    )
                    .map_err(|e| anyhow::anyhow!("invalid dip density: {e}"))?
                }
            };
            let atoms = build_atoms(&layout, scheme, &density)?;
            let init = product_with_uniform_targets(&layout, &atoms, n)?;
            (density, init, cfg.y_diameter.unwrap_or(1.0), None)
        }
        ScenarioKind::Semidiscrete => {
            let density = DensitySpec::uniform();
            let atoms = build_atoms(&layout, scheme, &density)?;
            let init = semidiscrete_coupling(&layout, &atoms, cfg.params.tilt)?;
            (density, init, cfg.y_diameter.unwrap_or(2.0), None)
        }
        ScenarioKind::Hessian => {
            let density = DensitySpec::uniform();
            let atoms = build_atoms(&layout, scheme, &density)?;
            let (init, cert) =
                hessian_coupling(&layout, &atoms, cfg.params.theta, cfg.params.alpha)?;
            let diam = cfg.y_diameter.unwrap_or_else(|| {
                let m = init_y_measure(&init);
                m.support_diameter()
            });
            (density, init, diam, Some(cert))
        }
        ScenarioKind::WtvbGrowth => {
            let density = DensitySpec::uniform();
            let atoms = build_atoms(&layout, scheme, &density)?;
            let y_coords = vec![-1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0];
            let nu = vec![0.25; 4];
            let init = Coupling::product(
                2,
                2,
                atoms.coords.clone(),
                atoms.weights.clone(),
                atoms.cells.clone(),
                layout.basic_count(),
                y_coords,
                &nu,
            )
            .map_err(|e| anyhow::anyhow!("product init failed: {e}"))?;
            (density, init, cfg.y_diameter.unwrap_or(2.0), None)
        }
        ScenarioKind::Custom => {
            let density = density_from_config(cfg)?;
            let init = match &cfg.init {
                crate::config::InitConfig::Product => {
                    let atoms = build_atoms(&layout, scheme, &density)?;
                    let nu_cfg = cfg.nu.as_ref().expect("validated");
                    let total: f64 = nu_cfg.weights.iter().sum();
                    let nu: Vec<f64> = nu_cfg.weights.iter().map(|w| w / total).collect();
                    Coupling::product(
                        cfg.d,
                        cfg.d,
                        atoms.coords.clone(),
                        atoms.weights.clone(),
                        atoms.cells.clone(),
                        layout.basic_count(),
                        nu_cfg.points.clone(),
                        &nu,
                    )
                    .map_err(|e| anyhow::anyhow!("product init failed: {e}"))?
                }
                crate::config::InitConfig::BlockApprox { path, scale } => {
                    // the provided coupling defines both marginals; its
                    // block approximation is the feasible initialization
                    let provided = crate::report::load_coupling_csv(path, &layout, cfg.d)?;
                    let (approx, _) = block_approximation(&provided, *scale)
                        .map_err(|e| anyhow::anyhow!("block approximation failed: {e}"))?;
                    approx
                }
            };
            let diam = cfg
                .y_diameter
                .unwrap_or_else(|| init_y_measure(&init).support_diameter());
            (density, init, diam, None)
        }
    };

    Ok(ScenarioInstance {
        layout,
        cost,
        eps,
        init,
        density,
        y_diameter,
        solver,
        hessian,
    })
}

fn init_y_measure(init: &Coupling) -> DiscreteMeasure {
    let weights = init.marginal_y();
    DiscreteMeasure::new(init.y_dim(), init.y_coords().to_vec(), weights)
        .expect("marginal weights are nonnegative")
}

/// `pi_init = (id, x -> 1 - x)# mu^n`: each atom is coupled to its mirror
/// image; the second marginal is the pushforward of the atoms.
fn flipped_coupling(layout: &GridPartition, atoms: &AtomGrid) -> Result<Coupling> {
    let count = atoms.weights.len();
    let y_coords: Vec<f64> = atoms.coords.iter().map(|&x| 1.0 - x).collect();
    let rows = (0..count)
        .map(|a| vec![(a as u32, atoms.weights[a])])
        .collect();
    Coupling::from_rows(
        1,
        1,
        atoms.coords.clone(),
        atoms.cells.clone(),
        layout.basic_count(),
        y_coords,
        rows,
    )
    .map_err(|e| anyhow::anyhow!("flipped init failed: {e}"))
}

/// Product initialization against the discretized uniform target on `n`
/// cell centers.
fn product_with_uniform_targets(
    layout: &GridPartition,
    atoms: &AtomGrid,
    n: usize,
) -> Result<Coupling> {
    let y_coords: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) / n as f64).collect();
    let nu = vec![1.0 / n as f64; n];
    Coupling::product(
        1,
        1,
        atoms.coords.clone(),
        atoms.weights.clone(),
        atoms.cells.clone(),
        layout.basic_count(),
        y_coords,
        &nu,
    )
    .map_err(|e| anyhow::anyhow!("product init failed: {e}"))
}

/// Semidiscrete example: uniform square onto two Diracs at `(-1, 0)` and
/// `(1, 0)`; the initial plan splits X along a line through the center
/// tilted by `tilt` radians from vertical.
fn semidiscrete_coupling(layout: &GridPartition, atoms: &AtomGrid, tilt: f64) -> Result<Coupling> {
    let count = atoms.weights.len();
    let y_coords = vec![-1.0, 0.0, 1.0, 0.0];
    let normal = [tilt.cos(), -tilt.sin()];
    let mut rows = Vec::with_capacity(count);
    let mut left = 0.0;
    let mut right = 0.0;
    for a in 0..count {
        let x = &atoms.coords[2 * a..2 * a + 2];
        let side = (x[0] - 0.5) * normal[0] + (x[1] - 0.5) * normal[1];
        if side == 0.0 {
            bail!("an atom lies exactly on the interface; adjust the tilt");
        }
        let target = if side < 0.0 {
            left += atoms.weights[a];
            0u32
        } else {
            right += atoms.weights[a];
            1u32
        };
        rows.push(vec![(target, atoms.weights[a])]);
    }
    if (left - right).abs() > 1e-12 {
        bail!("interface splits mass {left} vs {right}; the two Diracs need equal mass");
    }
    Coupling::from_rows(
        2,
        2,
        atoms.coords.clone(),
        atoms.cells.clone(),
        layout.basic_count(),
        y_coords,
        rows,
    )
    .map_err(|e| anyhow::anyhow!("semidiscrete init failed: {e}"))
}

/// Indefinite-Hessian example: `S = grad V`, `V(x) = x^T H x / 2` with
/// `H = R_theta^T diag(-tan^2 alpha, 1) R_theta`; the initialization is
/// `(id, S)# mu^n` and admissibility (cell-wise optimality of `S`) is
/// certified by checking the quadratic form on all atom pairs within each
/// composite cell.
fn hessian_coupling(
    layout: &GridPartition,
    atoms: &AtomGrid,
    theta: f64,
    alpha: f64,
) -> Result<(Coupling, HessianCertificate)> {
    let h = hessian_matrix(theta, alpha);
    let count = atoms.weights.len();
    let mut y_coords = Vec::with_capacity(2 * count);
    for a in 0..count {
        let x = &atoms.coords[2 * a..2 * a + 2];
        y_coords.push(h[0] * x[0] + h[1] * x[1]);
        y_coords.push(h[2] * x[0] + h[3] * x[1]);
    }
    let rows = (0..count)
        .map(|a| vec![(a as u32, atoms.weights[a])])
        .collect();

    let mut min_form = f64::INFINITY;
    let mut pairs = 0usize;
    for phase in [Phase::A, Phase::B] {
        for cell in layout.cells(phase) {
            let cell_atoms: Vec<usize> = cell
                .members
                .iter()
                .flat_map(|&c| {
                    atoms
                        .cells
                        .iter()
                        .enumerate()
                        .filter(move |&(_, &cc)| cc == c)
                        .map(|(a, _)| a)
                })
                .collect();
            for (i, &a) in cell_atoms.iter().enumerate() {
                for &b in cell_atoms.iter().skip(i + 1) {
                    let dx = [
                        atoms.coords[2 * a] - atoms.coords[2 * b],
                        atoms.coords[2 * a + 1] - atoms.coords[2 * b + 1],
                    ];
                    let form = dx[0] * (h[0] * dx[0] + h[1] * dx[1])
                        + dx[1] * (h[2] * dx[0] + h[3] * dx[1]);
                    pairs += 1;
                    if form < min_form {
                        min_form = form;
                    }
                }
            }
        }
    }
    if min_form < 0.0 {
        bail!(
            "theta/alpha not admissible: pair form {min_form:.3e} negative inside a composite cell"
        );
    }
    let init = Coupling::from_rows(
        2,
        2,
        atoms.coords.clone(),
        atoms.cells.clone(),
        layout.basic_count(),
        y_coords,
        rows,
    )
    .map_err(|e| anyhow::anyhow!("hessian init failed: {e}"))?;
    Ok((
        init,
        HessianCertificate {
            theta,
            alpha,
            min_pair_form: min_form,
            pairs_checked: pairs,
        },
    ))
}

/// `H = R_theta^T diag(-tan^2 alpha, 1) R_theta`, row-major.
pub fn hessian_matrix(theta: f64, alpha: f64) -> [f64; 4] {
    let t = alpha.tan();
    let neg = -t * t;
    let (s, c) = theta.sin_cos();
    // R^T D R with R = [[c, s], [-s, c]]
    [
        c * c * neg + s * s,
        c * s * neg - s * c,
        s * c * neg - c * s,
        s * s * neg + c * c,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ScenarioKind, SuiteConfig};

    fn cfg(scenario: ScenarioKind, d: usize, n: usize) -> SuiteConfig {
        serde_json::from_value(serde_json::json!({
            "version": 1,
            "scenario": serde_json::to_value(scenario).unwrap(),
            "d": d,
            "n": [n],
            "t_max": 1.0
        }))
        .unwrap()
    }

    #[test]
    fn flipped_atoms_couple_to_mirror() {
        let instance = build_scenario(&cfg(ScenarioKind::Flipped, 1, 8), 8).unwrap();
        assert_eq!(instance.init.n_atoms(), 8);
        // atom at 1/16 is coupled to 15/16
        let row = instance.init.row(0);
        assert_eq!(row.len(), 1);
        let y = instance.init.y_point(row[0].0 as usize)[0];
        assert!((instance.init.x_point(0)[0] - 1.0 / 16.0).abs() < 1e-15);
        assert!((y - 15.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn bottleneck_dip_zero_reduces_to_product() {
        let mut with_dip = cfg(ScenarioKind::Bottleneck, 1, 8);
        with_dip.params.dip_depth = 1.0; // no dip at all
        let a = build_scenario(&with_dip, 8).unwrap();
        let b = build_scenario(&cfg(ScenarioKind::Product, 1, 8), 8).unwrap();
        assert!(a.init.tv_distance(&b.init).unwrap() < 1e-12);
    }

    #[test]
    fn hessian_flat_cone_is_globally_optimal_map() {
        // alpha -> 0 makes H positive semidefinite: admissible with
        // nonnegative pair forms everywhere
        let mut c = cfg(ScenarioKind::Hessian, 2, 4);
        c.params.theta = 0.0;
        c.params.alpha = 0.0;
        let instance = build_scenario(&c, 4).unwrap();
        let cert = instance.hessian.unwrap();
        assert!(cert.min_pair_form >= 0.0);
        let h = hessian_matrix(0.0, 0.0);
        assert!((h[0] - 0.0).abs() < 1e-15 && (h[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hessian_default_angles_certified() {
        let instance = build_scenario(&cfg(ScenarioKind::Hessian, 2, 4), 4).unwrap();
        let cert = instance.hessian.unwrap();
        assert!(cert.min_pair_form > 0.0, "form {}", cert.min_pair_form);
        // a cross-cell pair along direction (2, 1) violates monotonicity
        let h = hessian_matrix(
            instance.hessian.unwrap().theta,
            instance.hessian.unwrap().alpha,
        );
        let d = [2.0 / 4.0, 1.0 / 4.0];
        let form = d[0] * (h[0] * d[0] + h[1] * d[1]) + d[1] * (h[2] * d[0] + h[3] * d[1]);
        assert!(form < 0.0, "cross-cell form {form} should be negative");
    }

    #[test]
    fn hessian_rejects_wide_cone() {
        let mut c = cfg(ScenarioKind::Hessian, 2, 4);
        c.params.alpha = 1.2; // nearly the whole quadrant
        assert!(build_scenario(&c, 4).is_err());
    }

    #[test]
    fn semidiscrete_splits_mass_evenly() {
        let instance = build_scenario(&cfg(ScenarioKind::Semidiscrete, 2, 8), 8).unwrap();
        let nu = instance.init.marginal_y();
        assert!((nu[0] - 0.5).abs() < 1e-12);
        assert!((nu[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quadrature_atoms_integrate_to_one() {
        let mut c = cfg(ScenarioKind::Flipped, 1, 8);
        c.scheme = serde_json::from_value(serde_json::json!({
            "kind": "lebesgue_quadrature",
            "order": 4
        }))
        .unwrap();
        let instance = build_scenario(&c, 8).unwrap();
        assert_eq!(instance.init.n_atoms(), 32);
        let total: f64 = instance.init.x_weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
