//! Versioned JSON configuration for scenario suites.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use domdec_core::cost::{CostKind, CostSpec, EpsRule, EpsSchedule, HKind, Perturbation};
use domdec_core::fiber::Scheme;
use domdec_core::solver::SolveParams;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub version: u32,
    pub scenario: ScenarioKind,
    pub d: usize,
    /// Scales to run; all entries must be even.
    pub n: Vec<usize>,
    pub t_max: f64,
    #[serde(default)]
    pub eps: EpsConfig,
    #[serde(default)]
    pub cost: CostConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    /// First-marginal density (defaults to the scenario's own choice).
    #[serde(default)]
    pub mu: Option<DensityConfig>,
    /// Second-marginal support for the custom scenario.
    #[serde(default)]
    pub nu: Option<NuConfig>,
    /// Initialization of the custom scenario.
    #[serde(default)]
    pub init: InitConfig,
    /// Ambient diameter of Y; defaults to the support diameter.
    #[serde(default)]
    pub y_diameter: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub fiber_samples: Vec<FiberSample>,
    #[serde(default)]
    pub params: ScenarioParams,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Seeds only randomized test instances; the sweep itself is
    /// deterministic.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Flipped,
    Bottleneck,
    Product,
    Semidiscrete,
    Hessian,
    WtvbGrowth,
    Custom,
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ScenarioKind::Flipped => "flipped",
            ScenarioKind::Bottleneck => "bottleneck",
            ScenarioKind::Product => "product",
            ScenarioKind::Semidiscrete => "semidiscrete",
            ScenarioKind::Hessian => "hessian",
            ScenarioKind::WtvbGrowth => "wtvb-growth",
            ScenarioKind::Custom => "custom",
        };
        write!(f, "{name}")
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsConfig {
    pub rule: EpsRuleKind,
    #[serde(default)]
    pub coefficient: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsRuleKind {
    Zero,
    InverseSquare,
    Inverse,
    Constant,
}

impl Default for EpsConfig {
    fn default() -> Self {
        EpsConfig {
            rule: EpsRuleKind::Zero,
            coefficient: 0.0,
        }
    }
}

impl EpsConfig {
    pub fn schedule(&self) -> Result<EpsSchedule> {
        let rule = match self.rule {
            EpsRuleKind::Zero => EpsRule::Zero,
            EpsRuleKind::InverseSquare => EpsRule::InverseSquare {
                a: self.coefficient,
            },
            EpsRuleKind::Inverse => EpsRule::Inverse {
                a: self.coefficient,
            },
            EpsRuleKind::Constant => EpsRule::Constant {
                a: self.coefficient,
            },
        };
        if !matches!(rule, EpsRule::Zero) && self.coefficient <= 0.0 {
            bail!("eps.coefficient must be positive for rule {:?}", self.rule);
        }
        Ok(EpsSchedule::new(rule))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub kind: CostKindConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKindConfig {
    Quadratic,
    ConvexSquare,
    ConvexSqrt,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerturbationConfig {
    #[default]
    None,
    Sine {
        amplitude: f64,
    },
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            kind: CostKindConfig::Quadratic,
            perturbation: PerturbationConfig::None,
        }
    }
}

impl CostConfig {
    pub fn cost_spec(&self) -> CostSpec {
        let kind = match self.kind {
            CostKindConfig::Quadratic => CostKind::SquaredEuclidean,
            CostKindConfig::ConvexSquare => CostKind::ConvexH(HKind::Square),
            CostKindConfig::ConvexSqrt => CostKind::ConvexH(HKind::SqrtOnePlusSquare),
        };
        let perturbation = match self.perturbation {
            PerturbationConfig::None => Perturbation::None,
            PerturbationConfig::Sine { amplitude } => Perturbation::Sine { amplitude },
        };
        CostSpec { kind, perturbation }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SchemeConfig {
    #[default]
    DiracCenters,
    LebesgueQuadrature {
        #[serde(default = "default_quad_order")]
        order: usize,
    },
    Subgrid {
        points: usize,
    },
}

fn default_quad_order() -> usize {
    4
}

impl SchemeConfig {
    pub fn scheme(&self) -> Scheme {
        match *self {
            SchemeConfig::DiracCenters => Scheme::DiracCenters,
            SchemeConfig::LebesgueQuadrature { order } => Scheme::LebesgueQuadrature { order },
            SchemeConfig::Subgrid { points } => Scheme::SubGrid { points },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DensityConfig {
    Uniform,
    Piecewise { breaks: Vec<f64>, values: Vec<f64> },
    Sampled { values: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuConfig {
    /// Flattened support coordinates (row-major, `dim` entries per point).
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Initialization of the custom scenario: the product plan against the
/// configured nu, or the block approximation of a coupling read from a
/// previously serialized CSV (its marginals then define `mu^n`/`nu^n`).
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitConfig {
    #[default]
    Product,
    BlockApprox {
        path: PathBuf,
        scale: f64,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = SolveParams::default();
        SolverConfig {
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl SolverConfig {
    pub fn params(&self) -> SolveParams {
        SolveParams {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub wtv: bool,
    pub wtvb: bool,
    pub w_step: bool,
    pub mass_balance: bool,
    pub momentum_density: bool,
    /// Serialize every iterate to `snapshots/iter_*.csv`.
    pub snapshots: bool,
    pub ce_residual: bool,
    /// Cutoff time of the residual test function.
    pub ce_cutoff: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            wtv: true,
            wtvb: true,
            w_step: true,
            mass_balance: true,
            momentum_density: true,
            snapshots: false,
            ce_residual: false,
            ce_cutoff: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSample {
    pub t: f64,
    /// Point in X (length d).
    pub x: [f64; 2],
    /// How many leading entries of `x` are used.
    #[serde(default = "default_dim_used")]
    pub dim: usize,
}

fn default_dim_used() -> usize {
    1
}

impl FiberSample {
    pub fn point(&self) -> &[f64] {
        &self.x[..self.dim]
    }
}

/// Scenario-specific knobs with the documented defaults.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    /// Bottleneck: density factor inside the dip.
    pub dip_depth: f64,
    /// Bottleneck: dip width as a fraction of the domain.
    pub dip_width: f64,
    /// Hessian example: rotation of the negative cone.
    pub theta: f64,
    /// Hessian example: half-width of the negative cone.
    pub alpha: f64,
    /// Semidiscrete: interface tilt from vertical (radians).
    pub tilt: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            dip_depth: 0.2,
            dip_width: 0.1,
            theta: std::f64::consts::PI / 8.0,
            alpha: std::f64::consts::PI / 18.0,
            tilt: 0.2,
        }
    }
}

impl SuiteConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: SuiteConfig = serde_json::from_str(&text).context("parsing config JSON")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "unsupported config version {} (expected {})",
                self.version,
                CONFIG_VERSION
            );
        }
        if self.n.is_empty() {
            bail!("at least one scale n is required");
        }
        for &n in &self.n {
            if n < 2 || n % 2 != 0 {
                bail!("scales must be even and at least 2, got {n}");
            }
        }
        if !self.t_max.is_finite() || self.t_max <= 0.0 {
            bail!("t_max must be positive");
        }
        let expected_d = match self.scenario {
            ScenarioKind::Flipped | ScenarioKind::Bottleneck | ScenarioKind::Product => Some(1),
            ScenarioKind::Semidiscrete | ScenarioKind::Hessian | ScenarioKind::WtvbGrowth => {
                Some(2)
            }
            ScenarioKind::Custom => None,
        };
        if let Some(d) = expected_d {
            if self.d != d {
                bail!("scenario {} runs in d = {d}", self.scenario);
            }
        }
        if self.scenario == ScenarioKind::Custom
            && self.nu.is_none()
            && matches!(self.init, InitConfig::Product)
        {
            bail!("custom scenario needs a nu support (or a block_approx init)");
        }
        if let InitConfig::BlockApprox { scale, .. } = &self.init {
            if !scale.is_finite() || *scale <= 0.0 {
                bail!("block_approx scale must be positive");
            }
        }
        if let Some(nu) = &self.nu {
            if nu.points.len() != nu.weights.len() * self.d {
                bail!("nu.points must hold d coordinates per weight");
            }
        }
        self.eps.schedule()?;
        if !(0.0..=1.0).contains(&self.params.dip_depth) {
            bail!("dip_depth must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.params.dip_width) {
            bail!("dip_width must lie in [0, 1)");
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.params.alpha) {
            bail!("alpha must lie in [0, pi/2)");
        }
        for s in &self.fiber_samples {
            if s.dim != self.d {
                bail!("fiber sample dimension {} does not match d", s.dim);
            }
            if s.t <= 0.0 || s.t > self.t_max {
                bail!("fiber sample time {} outside (0, t_max]", s.t);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SuiteConfig {
        serde_json::from_value(serde_json::json!({
            "version": 1,
            "scenario": "flipped",
            "d": 1,
            "n": [8, 16],
            "t_max": 2.0
        }))
        .unwrap()
    }

    #[test]
    fn defaults_validate() {
        base().validate().unwrap();
    }

    #[test]
    fn rejects_odd_scale() {
        let mut cfg = base();
        cfg.n = vec![7];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_wrong_dimension() {
        let mut cfg = base();
        cfg.d = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_unknown_fields() {
        let r: Result<SuiteConfig, _> = serde_json::from_value(serde_json::json!({
            "version": 1,
            "scenario": "flipped",
            "d": 1,
            "n": [8],
            "t_max": 1.0,
            "no_such_key": true
        }));
        assert!(r.is_err());
    }

    #[test]
    fn eps_config_round_trip() {
        let cfg: EpsConfig = serde_json::from_value(serde_json::json!({
            "rule": "inverse_square",
            "coefficient": 2.0
        }))
        .unwrap();
        let schedule = cfg.schedule().unwrap();
        assert!((schedule.eps(8) - 2.0 / 64.0).abs() < 1e-15);
    }
}
