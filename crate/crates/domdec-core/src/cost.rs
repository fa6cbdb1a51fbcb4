//! Cost functions, their scale-`n` perturbations `c^n = c + f^n/n`, the
//! Taylor remainder of the rescaled cell problems, and regularization
//! schedules with their asymptotic classification.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use crate::math;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CostError {
    /// `x + z/n` left the domain in the remainder evaluation.
    PointOutsideDomain,
    BadGrid,
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::PointOutsideDomain => write!(f, "shifted point outside [0,1]^d"),
            CostError::BadGrid => write!(f, "invalid cost grid"),
        }
    }
}

impl core::error::Error for CostError {}

/// Strictly convex one-dimensional profiles `h(s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HKind {
    /// `h(s) = s^2`
    Square,
    /// `h(s) = sqrt(1 + s^2) - 1`
    SqrtOnePlusSquare,
}

impl HKind {
    pub fn value(self, s: f64) -> f64 {
        match self {
            HKind::Square => s * s,
            HKind::SqrtOnePlusSquare => math::sqrt(1.0 + s * s) - 1.0,
        }
    }

    pub fn derivative(self, s: f64) -> f64 {
        match self {
            HKind::Square => 2.0 * s,
            HKind::SqrtOnePlusSquare => s / math::sqrt(1.0 + s * s),
        }
    }
}

/// Cost sampled on a uniform grid over `[x_lo,x_hi] x [y_lo,y_hi]`
/// (one-dimensional sides), evaluated by bilinear interpolation.
#[derive(Clone, Debug)]
pub struct GridCost {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major `nx x ny` samples.
    pub values: Vec<f64>,
}

impl GridCost {
    /// Samples a closed-form cost on a uniform grid.
    pub fn sample<F>(
        bounds: (f64, f64, f64, f64),
        nx: usize,
        ny: usize,
        f: F,
    ) -> Result<Self, CostError>
    where
        F: Fn(f64, f64) -> f64,
    {
        if nx < 2 || ny < 2 {
            return Err(CostError::BadGrid);
        }
        let (x_lo, x_hi, y_lo, y_hi) = bounds;
        let mut values = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            let x = x_lo + (x_hi - x_lo) * i as f64 / (nx - 1) as f64;
            for j in 0..ny {
                let y = y_lo + (y_hi - y_lo) * j as f64 / (ny - 1) as f64;
                values.push(f(x, y));
            }
        }
        Ok(GridCost {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
            nx,
            ny,
            values,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let tx = ((x - self.x_lo) / (self.x_hi - self.x_lo) * (self.nx - 1) as f64)
            .clamp(0.0, (self.nx - 1) as f64);
        let ty = ((y - self.y_lo) / (self.y_hi - self.y_lo) * (self.ny - 1) as f64)
            .clamp(0.0, (self.ny - 1) as f64);
        let i = (math::floor(tx) as usize).min(self.nx - 2);
        let j = (math::floor(ty) as usize).min(self.ny - 2);
        let fx = tx - i as f64;
        let fy = ty - j as f64;
        let v = |i: usize, j: usize| self.values[i * self.ny + j];
        v(i, j) * (1.0 - fx) * (1.0 - fy)
            + v(i + 1, j) * fx * (1.0 - fy)
            + v(i, j + 1) * (1.0 - fx) * fy
            + v(i + 1, j + 1) * fx * fy
    }
}

/// Base cost families on `X x Y`.
#[derive(Clone, Debug)]
pub enum CostKind {
    /// `|x - y|^2` in any dimension.
    SquaredEuclidean,
    /// `h(x - y)` for a strictly convex profile (one-dimensional sides).
    ConvexH(HKind),
    /// Sampled cost grid (one-dimensional sides); gradients by central
    /// differences.
    Grid(GridCost),
}

/// Optional bounded perturbation family entering `c^n = c + f^n/n`.
///
/// The sine family has `sup |f^n| = amplitude/(1 + sqrt(n))`, decaying as
/// the scale is refined.
#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation {
    None,
    Sine { amplitude: f64 },
}

impl Perturbation {
    pub fn eval(&self, n: usize, x: &[f64], _y: &[f64]) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::Sine { amplitude } => {
                amplitude * math::sin(2.0 * PI * n as f64 * x[0]) / (1.0 + math::sqrt(n as f64))
            }
        }
    }

    pub fn sup_norm(&self, n: usize) -> f64 {
        match self {
            Perturbation::None => 0.0,
            Perturbation::Sine { amplitude } => {
                math::abs(*amplitude) / (1.0 + math::sqrt(n as f64))
            }
        }
    }
}

/// A cost function together with its perturbation family.
#[derive(Clone, Debug)]
pub struct CostSpec {
    pub kind: CostKind,
    pub perturbation: Perturbation,
}

/// Central-difference step for grid-cost gradients.
const FD_STEP: f64 = 1e-6;

impl CostSpec {
    pub fn quadratic() -> Self {
        CostSpec {
            kind: CostKind::SquaredEuclidean,
            perturbation: Perturbation::None,
        }
    }

    pub fn convex_h(h: HKind) -> Self {
        CostSpec {
            kind: CostKind::ConvexH(h),
            perturbation: Perturbation::None,
        }
    }

    /// Base cost `c(x, y)`.
    pub fn base(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.kind {
            CostKind::SquaredEuclidean => math::dist_sq(x, y),
            CostKind::ConvexH(h) => h.value(x[0] - y[0]),
            CostKind::Grid(g) => g.eval(x[0], y[0]),
        }
    }

    /// Perturbed cost `c^n(x, y) = c(x, y) + f^n(x, y)/n`.
    pub fn at_scale(&self, n: usize, x: &[f64], y: &[f64]) -> f64 {
        self.base(x, y) + self.perturbation.eval(n, x, y) / n as f64
    }

    /// `grad_X c(x, y)`, exact for closed forms, central differences for
    /// grid costs.
    pub fn grad_x(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match &self.kind {
            CostKind::SquaredEuclidean => {
                for (o, (xi, yi)) in out.iter_mut().zip(x.iter().zip(y)) {
                    *o = 2.0 * (xi - yi);
                }
            }
            CostKind::ConvexH(h) => {
                out[0] = h.derivative(x[0] - y[0]);
            }
            CostKind::Grid(g) => {
                out[0] =
                    (g.eval(x[0] + FD_STEP, y[0]) - g.eval(x[0] - FD_STEP, y[0])) / (2.0 * FD_STEP);
            }
        }
    }

    /// Taylor remainder of the rescaled cell cost,
    /// `Delta^n(x, z, y) = n [c^n(x + z/n, y) - c(x, y) - <grad_X c(x, y), z/n>]`.
    ///
    /// `x` must stay in `[0,1]^d` after the shift by `z/n`.
    pub fn delta_n(&self, n: usize, x: &[f64], z: &[f64], y: &[f64]) -> Result<f64, CostError> {
        let nf = n as f64;
        let shifted: Vec<f64> = x.iter().zip(z).map(|(xi, zi)| xi + zi / nf).collect();
        const EDGE_TOL: f64 = 1e-12;
        if shifted
            .iter()
            .any(|&c| !(-EDGE_TOL..=1.0 + EDGE_TOL).contains(&c))
        {
            return Err(CostError::PointOutsideDomain);
        }
        let mut grad = alloc::vec![0.0; x.len()];
        self.grad_x(x, y, &mut grad);
        let lin: f64 = grad.iter().zip(z).map(|(g, zi)| g * zi / nf).sum();
        Ok(nf * (self.at_scale(n, &shifted, y) - self.base(x, y) - lin))
    }
}

/// Limit of `n eps^n`, classifying the asymptotic regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eta {
    Zero,
    Finite(f64),
    Infinite,
}

impl fmt::Display for Eta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eta::Zero => write!(f, "0"),
            Eta::Finite(v) => write!(f, "{v}"),
            Eta::Infinite => write!(f, "inf"),
        }
    }
}

/// Regularization schedule `eps^n` as a function of the scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsRule {
    Zero,
    /// `a / n^2`
    InverseSquare {
        a: f64,
    },
    /// `a / n`
    Inverse {
        a: f64,
    },
    /// constant `a > 0`
    Constant {
        a: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsSchedule {
    pub rule: EpsRule,
}

impl EpsSchedule {
    pub fn new(rule: EpsRule) -> Self {
        EpsSchedule { rule }
    }

    pub fn zero() -> Self {
        EpsSchedule {
            rule: EpsRule::Zero,
        }
    }

    pub fn eps(&self, n: usize) -> f64 {
        let nf = n as f64;
        match self.rule {
            EpsRule::Zero => 0.0,
            EpsRule::InverseSquare { a } => a / (nf * nf),
            EpsRule::Inverse { a } => a / nf,
            EpsRule::Constant { a } => a,
        }
    }

    /// Symbolic `eta = lim n eps^n`.
    pub fn eta(&self) -> Eta {
        match self.rule {
            EpsRule::Zero => Eta::Zero,
            EpsRule::InverseSquare { .. } => Eta::Zero,
            EpsRule::Inverse { a } => {
                if a == 0.0 {
                    Eta::Zero
                } else {
                    Eta::Finite(a)
                }
            }
            EpsRule::Constant { a } => {
                if a == 0.0 {
                    Eta::Zero
                } else {
                    Eta::Infinite
                }
            }
        }
    }
}
