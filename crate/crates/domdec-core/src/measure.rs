//! Discrete measures, marginal densities and the Kullback-Leibler divergence.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Tolerance under which a measure counts as a probability measure.
pub const PROBABILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MeasureError {
    NegativeWeight,
    ZeroMass,
    DimensionMismatch,
    /// KL between measures on different support enumerations.
    SupportMismatch,
}

impl fmt::Display for MeasureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureError::NegativeWeight => write!(f, "negative weight"),
            MeasureError::ZeroMass => write!(f, "measure has zero mass"),
            MeasureError::DimensionMismatch => write!(f, "coordinate dimension mismatch"),
            MeasureError::SupportMismatch => write!(f, "measures share no support enumeration"),
        }
    }
}

impl core::error::Error for MeasureError {}

/// Weighted point cloud on `X`, `Y` or the reference cell `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 || coords.len() != weights.len() * dim {
            return Err(MeasureError::DimensionMismatch);
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(MeasureError::NegativeWeight);
        }
        let total = weights.iter().sum();
        Ok(DiscreteMeasure {
            dim,
            coords,
            weights,
            total,
        })
    }

    pub fn from_points<'a, I>(dim: usize, atoms: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in atoms {
            if p.len() != dim {
                return Err(MeasureError::DimensionMismatch);
            }
            coords.extend_from_slice(p);
            weights.push(w);
        }
        Self::new(dim, coords, weights)
    }

    pub fn dirac(point: &[f64], mass: f64) -> Result<Self, MeasureError> {
        Self::new(point.len(), point.to_vec(), vec![mass])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn is_probability(&self) -> bool {
        math::abs(self.total - 1.0) <= PROBABILITY_TOL
    }

    /// Rescale to unit mass on the same support.
    pub fn normalize(&self) -> Result<Self, MeasureError> {
        if self.total <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        let weights = self.weights.iter().map(|w| w / self.total).collect();
        Self::new(self.dim, self.coords.clone(), weights)
    }

    pub fn scale(&self, s: f64) -> Result<Self, MeasureError> {
        let weights = self.weights.iter().map(|w| w * s).collect();
        Self::new(self.dim, self.coords.clone(), weights)
    }

    /// Diameter of the support under the Euclidean metric.
    pub fn support_diameter(&self) -> f64 {
        let mut d = 0.0;
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let dd = math::dist(self.point(i), self.point(j));
                if dd > d {
                    d = dd;
                }
            }
        }
        d
    }
}

/// `phi(s) = s log s - s + 1` with `phi(0) = 1`, the KL integrand.
pub fn phi(s: f64) -> f64 {
    if s < 0.0 {
        f64::INFINITY
    } else if s == 0.0 {
        1.0
    } else {
        s * math::ln(s) - s + 1.0
    }
}

/// KL divergence between two weight vectors over a shared support
/// enumeration: `sum phi(a_i/b_i) b_i`, `+inf` when `a` charges a point
/// where `b` vanishes.
pub fn kl_weights(a: &[f64], b: &[f64]) -> Result<f64, MeasureError> {
    if a.len() != b.len() {
        return Err(MeasureError::SupportMismatch);
    }
    if a.iter().chain(b.iter()).any(|&w| w < 0.0) {
        return Err(MeasureError::NegativeWeight);
    }
    let mut kl = 0.0;
    for (&ai, &bi) in a.iter().zip(b) {
        if bi == 0.0 {
            if ai > 0.0 {
                return Ok(f64::INFINITY);
            }
        } else {
            kl += phi(ai / bi) * bi;
        }
    }
    Ok(kl)
}

/// KL divergence between discrete measures over identical support points.
pub fn kl_divergence(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64, MeasureError> {
    if a.dim != b.dim || a.len() != b.len() || a.coords != b.coords {
        return Err(MeasureError::SupportMismatch);
    }
    kl_weights(&a.weights, &b.weights)
}

/// Marginal density classes on `[0,1]^d` with the bounds needed by the
/// oscillation inequalities.
#[derive(Clone, Debug)]
pub enum DensityKind {
    Uniform,
    /// One-dimensional piecewise constant density: `values[j]` on the
    /// interval between consecutive breakpoints (`breaks` strictly inside
    /// `(0,1)`, ascending; `values.len() == breaks.len() + 1`).
    PiecewiseConstant1d {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    /// One-dimensional density sampled on a uniform grid of equal bins.
    SampledGrid1d {
        values: Vec<f64>,
    },
}

/// A density together with the constants entering the mass-balance and
/// oscillation bounds: `0 < M_l <= d mu / d L <= M_u` and, when available,
/// the total variation of the density.
#[derive(Clone, Debug)]
pub struct DensitySpec {
    pub kind: DensityKind,
    pub m_lower: f64,
    pub m_upper: f64,
    pub tv: Option<f64>,
}

impl DensitySpec {
    pub fn uniform() -> Self {
        DensitySpec {
            kind: DensityKind::Uniform,
            m_lower: 1.0,
            m_upper: 1.0,
            tv: Some(0.0),
        }
    }

    /// Normalizes the given 1d piecewise-constant profile to unit mass and
    /// computes its bounds and total variation.
    pub fn piecewise_1d(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self, MeasureError> {
        if values.len() != breaks.len() + 1 || values.iter().any(|&v| v < 0.0) {
            return Err(MeasureError::DimensionMismatch);
        }
        let mut edges = vec![0.0];
        edges.extend_from_slice(&breaks);
        edges.push(1.0);
        let mut mass = 0.0;
        for (j, v) in values.iter().enumerate() {
            mass += v * (edges[j + 1] - edges[j]);
        }
        if mass <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        let values: Vec<f64> = values.iter().map(|v| v / mass).collect();
        let m_lower = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let m_upper = values.iter().cloned().fold(0.0, f64::max);
        let tv = values.windows(2).map(|w| math::abs(w[1] - w[0])).sum();
        Ok(DensitySpec {
            kind: DensityKind::PiecewiseConstant1d { breaks, values },
            m_lower,
            m_upper,
            tv: Some(tv),
        })
    }

    pub fn sampled_1d(values: Vec<f64>) -> Result<Self, MeasureError> {
        if values.is_empty() || values.iter().any(|&v| v < 0.0) {
            return Err(MeasureError::DimensionMismatch);
        }
        let k = values.len();
        let mass: f64 = values.iter().sum::<f64>() / k as f64;
        if mass <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        let values: Vec<f64> = values.iter().map(|v| v / mass).collect();
        let m_lower = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let m_upper = values.iter().cloned().fold(0.0, f64::max);
        let tv = values.windows(2).map(|w| math::abs(w[1] - w[0])).sum();
        Ok(DensitySpec {
            kind: DensityKind::SampledGrid1d { values },
            m_lower,
            m_upper,
            tv: Some(tv),
        })
    }

    /// Exact integral of the density over the box `prod [lo_i, hi_i]`.
    pub fn box_mass(&self, lo: &[f64], hi: &[f64]) -> f64 {
        match &self.kind {
            DensityKind::Uniform => lo.iter().zip(hi).map(|(l, h)| (h - l).max(0.0)).product(),
            DensityKind::PiecewiseConstant1d { breaks, values } => {
                let mut edges = vec![0.0];
                edges.extend_from_slice(breaks);
                edges.push(1.0);
                segment_mass(&edges, values, lo[0], hi[0])
            }
            DensityKind::SampledGrid1d { values } => {
                let k = values.len();
                let edges: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
                segment_mass(&edges, values, lo[0], hi[0])
            }
        }
    }

    /// Mass-balance bound `sqrt(d)/M_l * TV` from the density regularity,
    /// when the total variation is known.
    pub fn mass_balance_bound(&self, dim: usize) -> Option<f64> {
        self.tv.map(|tv| math::sqrt(dim as f64) / self.m_lower * tv)
    }
}

fn segment_mass(edges: &[f64], values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut mass = 0.0;
    for (j, v) in values.iter().enumerate() {
        let l = edges[j].max(lo);
        let h = edges[j + 1].min(hi);
        if h > l {
            mass += v * (h - l);
        }
    }
    mass
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let m = DiscreteMeasure::new(1, vec![0.0, 0.25, 0.5, 0.75], vec![0.5; 4]).unwrap();
        let n = m.normalize().unwrap();
        assert!(n.weights().iter().all(|&w| (w - 0.25).abs() < 1e-15));

        let d = DiscreteMeasure::dirac(&[0.3], 0.3).unwrap();
        let n = d.normalize().unwrap();
        assert!((n.weight(0) - 1.0).abs() < 1e-15);

        let z = DiscreteMeasure::new(1, vec![0.1], vec![0.0]).unwrap();
        assert_eq!(z.normalize().unwrap_err(), MeasureError::ZeroMass);
    }

    #[test]
    fn kl_basics() {
        let y = vec![0.0, 1.0];
        let a = DiscreteMeasure::new(1, y.clone(), vec![1.0, 0.0]).unwrap();
        let b = DiscreteMeasure::new(1, y.clone(), vec![0.5, 0.5]).unwrap();
        assert_eq!(kl_divergence(&a, &a).unwrap(), 0.0);
        // dirac against the even mixture: 1/2 phi(2) + 1/2 phi(0) = log 2
        let kl = kl_divergence(&a, &b).unwrap();
        assert!((kl - core::f64::consts::LN_2).abs() < 1e-15);
        // absolute continuity failure
        let c = DiscreteMeasure::new(1, y, vec![0.0, 1.0]).unwrap();
        let a_on_c = kl_divergence(&a, &c).unwrap();
        assert!(a_on_c.is_infinite());
    }

    #[test]
    fn kl_rejects_negative() {
        assert_eq!(
            kl_weights(&[-0.1, 1.1], &[0.5, 0.5]).unwrap_err(),
            MeasureError::NegativeWeight
        );
    }

    #[test]
    fn negative_weights_rejected_on_construction() {
        assert_eq!(
            DiscreteMeasure::new(1, vec![0.0], vec![-1.0]).unwrap_err(),
            MeasureError::NegativeWeight
        );
    }

    #[test]
    fn piecewise_density_masses() {
        // bottleneck-like dip: value 0.2 on the middle tenth
        let spec = DensitySpec::piecewise_1d(vec![0.45, 0.55], vec![1.0, 0.2, 1.0]).unwrap();
        let total = spec.box_mass(&[0.0], &[1.0]);
        assert!((total - 1.0).abs() < 1e-12);
        assert!(spec.m_lower < spec.m_upper);
        // non-aligned cell boundaries integrate exactly
        let m = spec.box_mass(&[0.4], &[0.5]);
        let expect = (0.05 * 1.0 + 0.05 * 0.2) / (0.9 + 0.1 * 0.2);
        assert!((m - expect).abs() < 1e-12);
        let tv = spec.tv.unwrap();
        assert!((tv - 2.0 * 0.8 / (0.9 + 0.02)).abs() < 1e-12);
    }
}
