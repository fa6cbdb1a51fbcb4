//! Block-sparse transport plans: per X-atom weight rows over a shared Y
//! support, grouped by basic cell, plus the marginal-preserving block
//! approximation.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::measure::{DiscreteMeasure, MeasureError};
use crate::partition::GridPartition;

/// Sparse weight vector over the Y support, sorted by index.
pub type SparseVec = Vec<(u32, f64)>;

/// Weights this far below the row mass are pruned after a cell solve.
pub const PRUNE_REL: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CouplingError {
    Shape,
    NegativeWeight,
    /// Marginals of the two couplings differ where they must agree.
    MarginalMismatch,
    BadBlockScale,
}

impl fmt::Display for CouplingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingError::Shape => write!(f, "inconsistent coupling shape"),
            CouplingError::NegativeWeight => write!(f, "negative weight"),
            CouplingError::MarginalMismatch => write!(f, "marginal mismatch"),
            CouplingError::BadBlockScale => write!(f, "block scale must be positive"),
        }
    }
}

impl core::error::Error for CouplingError {}

/// A transport plan between a fixed set of X atoms (tagged with their basic
/// cell) and a shared Y support.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    x_dim: usize,
    y_dim: usize,
    x_coords: Vec<f64>,
    /// Nominal first-marginal masses; every row sums to its entry (up to the
    /// cell solver tolerance).
    x_weights: Vec<f64>,
    x_cell: Vec<usize>,
    y_coords: Vec<f64>,
    rows: Vec<SparseVec>,
    /// Basic cell id -> atom indices, ascending.
    cell_atoms: Vec<Vec<u32>>,
}

impl Coupling {
    /// Assembles a coupling from explicit rows. `x_cell` tags each atom with
    /// its flat basic-cell id; `basic_count` sizes the cell index.
    #[allow(clippy::too_many_arguments)]
    pub fn from_rows(
        x_dim: usize,
        y_dim: usize,
        x_coords: Vec<f64>,
        x_cell: Vec<usize>,
        basic_count: usize,
        y_coords: Vec<f64>,
        rows: Vec<SparseVec>,
    ) -> Result<Self, CouplingError> {
        let n_atoms = x_cell.len();
        let n_y = y_coords.len() / y_dim;
        if x_coords.len() != n_atoms * x_dim
            || rows.len() != n_atoms
            || !y_coords.len().is_multiple_of(y_dim)
        {
            return Err(CouplingError::Shape);
        }
        let mut x_weights = Vec::with_capacity(n_atoms);
        for row in &rows {
            let mut sum = 0.0;
            let mut prev: Option<u32> = None;
            for &(j, w) in row {
                if w < 0.0 || !w.is_finite() {
                    return Err(CouplingError::NegativeWeight);
                }
                if j as usize >= n_y || prev.is_some_and(|p| p >= j) {
                    return Err(CouplingError::Shape);
                }
                prev = Some(j);
                sum += w;
            }
            x_weights.push(sum);
        }
        let mut cell_atoms = vec![Vec::new(); basic_count];
        for (a, &c) in x_cell.iter().enumerate() {
            if c >= basic_count {
                return Err(CouplingError::Shape);
            }
            cell_atoms[c].push(a as u32);
        }
        Ok(Coupling {
            x_dim,
            y_dim,
            x_coords,
            x_weights,
            x_cell,
            y_coords,
            rows,
            cell_atoms,
        })
    }

    /// Product plan `mu (x) nu` over the given supports.
    #[allow(clippy::too_many_arguments)]
    pub fn product(
        x_dim: usize,
        y_dim: usize,
        x_coords: Vec<f64>,
        x_weights: Vec<f64>,
        x_cell: Vec<usize>,
        basic_count: usize,
        y_coords: Vec<f64>,
        y_weights: &[f64],
    ) -> Result<Self, CouplingError> {
        let nu_total: f64 = y_weights.iter().sum();
        let rows = x_weights
            .iter()
            .map(|&wa| {
                y_weights
                    .iter()
                    .enumerate()
                    .filter(|(_, &wy)| wy > 0.0)
                    .map(|(j, &wy)| (j as u32, wa * wy / nu_total))
                    .collect()
            })
            .collect();
        Self::from_rows(x_dim, y_dim, x_coords, x_cell, basic_count, y_coords, rows)
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn n_atoms(&self) -> usize {
        self.x_weights.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_coords.len() / self.y_dim
    }

    pub fn x_point(&self, a: usize) -> &[f64] {
        &self.x_coords[a * self.x_dim..(a + 1) * self.x_dim]
    }

    pub fn x_weight(&self, a: usize) -> f64 {
        self.x_weights[a]
    }

    pub fn x_weights(&self) -> &[f64] {
        &self.x_weights
    }

    pub fn x_cell(&self, a: usize) -> usize {
        self.x_cell[a]
    }

    pub fn y_point(&self, j: usize) -> &[f64] {
        &self.y_coords[j * self.y_dim..(j + 1) * self.y_dim]
    }

    pub fn y_coords(&self) -> &[f64] {
        &self.y_coords
    }

    pub fn row(&self, a: usize) -> &SparseVec {
        &self.rows[a]
    }

    pub fn atoms_in_cell(&self, cell: usize) -> &[u32] {
        &self.cell_atoms[cell]
    }

    pub fn total_mass(&self) -> f64 {
        self.x_weights.iter().sum()
    }

    /// Row sums (first marginal per atom).
    pub fn marginal_x(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    /// Column sums (second marginal over the shared Y support).
    pub fn marginal_y(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_y()];
        for row in &self.rows {
            for &(j, w) in row {
                out[j as usize] += w;
            }
        }
        out
    }

    /// Y-marginal restricted to a set of basic cells, as a sparse vector.
    pub fn y_marginal_on_cells(&self, cells: &[usize]) -> SparseVec {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for &c in cells {
            for &a in &self.cell_atoms[c] {
                for &(j, w) in &self.rows[a as usize] {
                    *acc.entry(j).or_insert(0.0) += w;
                }
            }
        }
        acc.into_iter().collect()
    }

    /// `nu_i` or `nu_J` as a measure on the Y support; its mass equals the
    /// plan mass on the cell.
    pub fn y_marginal_measure(&self, cells: &[usize]) -> Result<DiscreteMeasure, MeasureError> {
        let sv = self.y_marginal_on_cells(cells);
        let mut coords = Vec::with_capacity(sv.len() * self.y_dim);
        let mut weights = Vec::with_capacity(sv.len());
        for &(j, w) in &sv {
            coords.extend_from_slice(self.y_point(j as usize));
            weights.push(w);
        }
        DiscreteMeasure::new(self.y_dim, coords, weights)
    }

    /// Replaces the rows of the atoms listed in `atoms` (pruning weights
    /// below `PRUNE_REL` of the row mass and renormalizing each row to keep
    /// its marginal mass).
    pub fn replace_rows(&mut self, atoms: &[u32], new_rows: Vec<SparseVec>) {
        debug_assert_eq!(atoms.len(), new_rows.len());
        for (&a, mut row) in atoms.iter().zip(new_rows) {
            let mass: f64 = row.iter().map(|&(_, w)| w).sum();
            let cut = mass * PRUNE_REL;
            row.retain(|&(_, w)| w > cut);
            let kept: f64 = row.iter().map(|&(_, w)| w).sum();
            if kept > 0.0 && kept != mass {
                let s = mass / kept;
                for e in row.iter_mut() {
                    e.1 *= s;
                }
            }
            self.rows[a as usize] = row;
        }
    }

    /// Total-variation distance to a coupling over the same atoms/support.
    pub fn tv_distance(&self, other: &Coupling) -> Result<f64, CouplingError> {
        if self.n_atoms() != other.n_atoms() || self.n_y() != other.n_y() {
            return Err(CouplingError::Shape);
        }
        let mut tv = 0.0;
        for (ra, rb) in self.rows.iter().zip(&other.rows) {
            let mut ia = 0;
            let mut ib = 0;
            while ia < ra.len() || ib < rb.len() {
                let ja = ra.get(ia).map(|e| e.0);
                let jb = rb.get(ib).map(|e| e.0);
                match (ja, jb) {
                    (Some(a), Some(b)) if a == b => {
                        tv += math::abs(ra[ia].1 - rb[ib].1);
                        ia += 1;
                        ib += 1;
                    }
                    (Some(a), Some(b)) if a < b => {
                        tv += ra[ia].1;
                        ia += 1;
                    }
                    (Some(_), Some(_)) => {
                        tv += rb[ib].1;
                        ib += 1;
                    }
                    (Some(_), None) => {
                        tv += ra[ia].1;
                        ia += 1;
                    }
                    (None, Some(_)) => {
                        tv += rb[ib].1;
                        ib += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
        }
        Ok(tv)
    }

    /// Transport cost `sum w c(x, y)` for a cost evaluated on atom pairs.
    pub fn transport_cost<F>(&self, mut cost: F) -> f64
    where
        F: FnMut(&[f64], &[f64]) -> f64,
    {
        let mut total = 0.0;
        for (a, row) in self.rows.iter().enumerate() {
            let x = self.x_point(a);
            for &(j, w) in row {
                total += w * cost(x, self.y_point(j as usize));
            }
        }
        total
    }

    /// `KL(pi | mu (x) nu)` against product reference weights on the same
    /// atoms and support points.
    pub fn kl_to_product(&self, mu: &[f64], nu: &[f64]) -> f64 {
        let mu_total: f64 = mu.iter().sum();
        let nu_total: f64 = nu.iter().sum();
        let mut sum = 0.0;
        let mut mass = 0.0;
        for (a, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                if w == 0.0 {
                    continue;
                }
                let r = mu[a] * nu[j as usize];
                if r == 0.0 {
                    return f64::INFINITY;
                }
                sum += w * math::ln(w / r);
                mass += w;
            }
        }
        sum - mass + mu_total * nu_total
    }

    /// KL divergence against another coupling over the same atoms and
    /// support enumeration; `+inf` when this plan charges an entry the
    /// reference misses.
    pub fn kl_to(&self, reference: &Coupling) -> Result<f64, CouplingError> {
        if self.n_atoms() != reference.n_atoms() || self.n_y() != reference.n_y() {
            return Err(CouplingError::Shape);
        }
        let mut sum = 0.0;
        let mut mass = 0.0;
        for (ra, rb) in self.rows.iter().zip(&reference.rows) {
            let mut ib = 0usize;
            for &(j, w) in ra {
                if w == 0.0 {
                    continue;
                }
                while ib < rb.len() && rb[ib].0 < j {
                    ib += 1;
                }
                if ib >= rb.len() || rb[ib].0 != j || rb[ib].1 == 0.0 {
                    return Ok(f64::INFINITY);
                }
                sum += w * math::ln(w / rb[ib].1);
                mass += w;
            }
        }
        Ok(sum - mass + reference.total_mass())
    }

    /// The plan as a weighted point cloud on the product space.
    pub fn as_point_cloud(&self) -> DiscreteMeasure {
        let dim = self.x_dim + self.y_dim;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (a, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                if w > 0.0 {
                    coords.extend_from_slice(self.x_point(a));
                    coords.extend_from_slice(self.y_point(j as usize));
                    weights.push(w);
                }
            }
        }
        DiscreteMeasure::new(dim, coords, weights).expect("plan weights are nonnegative")
    }

    /// Re-tags every atom with its basic cell in `layout`.
    pub fn retag_cells(&mut self, layout: &GridPartition) -> Result<(), CouplingError> {
        let mut cell_atoms = vec![Vec::new(); layout.basic_count()];
        for a in 0..self.n_atoms() {
            let c = layout
                .basic_cell_of(self.x_point(a))
                .map_err(|_| CouplingError::Shape)?;
            self.x_cell[a] = c;
            cell_atoms[c].push(a as u32);
        }
        self.cell_atoms = cell_atoms;
        Ok(())
    }
}

/// Occupied-block counts of a block approximation, fixing the constant in
/// its entropy bound `KL(gamma_L | mu (x) nu) <= 2 log N - 2d log L`.
#[derive(Clone, Copy, Debug)]
pub struct BlockReport {
    pub occupied_x: usize,
    pub occupied_y: usize,
}

impl BlockReport {
    /// `2 log(max(N_x, N_y))`, the computed constant of the entropy bound.
    pub fn entropy_constant(&self) -> f64 {
        2.0 * math::ln(self.occupied_x.max(self.occupied_y) as f64)
    }
}

/// Block approximation at scale `L`: within every product block
/// `Q_j x Q_k` the plan is replaced by the correspondingly scaled product
/// of its restricted marginals. Marginals are preserved exactly and the
/// plan moves by at most `L sqrt(2d)` in `W_1`.
pub fn block_approximation(
    gamma: &Coupling,
    scale: f64,
) -> Result<(Coupling, BlockReport), CouplingError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(CouplingError::BadBlockScale);
    }
    let block_of =
        |p: &[f64]| -> Vec<i64> { p.iter().map(|&c| math::floor(c / scale) as i64).collect() };

    let mu = gamma.marginal_x();
    let nu = gamma.marginal_y();

    let mut x_block: Vec<Vec<i64>> = Vec::with_capacity(gamma.n_atoms());
    let mut mu_block: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for a in 0..gamma.n_atoms() {
        let b = block_of(gamma.x_point(a));
        *mu_block.entry(b.clone()).or_insert(0.0) += mu[a];
        x_block.push(b);
    }
    let mut y_block: Vec<Vec<i64>> = Vec::with_capacity(gamma.n_y());
    let mut nu_block: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for j in 0..gamma.n_y() {
        let b = block_of(gamma.y_point(j));
        *nu_block.entry(b.clone()).or_insert(0.0) += nu[j];
        y_block.push(b);
    }

    // mass of gamma on each occupied product block
    let mut pair_mass: BTreeMap<(Vec<i64>, Vec<i64>), f64> = BTreeMap::new();
    for (a, row) in (0..gamma.n_atoms()).map(|a| (a, gamma.row(a))) {
        for &(j, w) in row {
            if w > 0.0 {
                *pair_mass
                    .entry((x_block[a].clone(), y_block[j as usize].clone()))
                    .or_insert(0.0) += w;
            }
        }
    }

    // y atoms grouped by block for row assembly
    let mut y_in_block: BTreeMap<Vec<i64>, Vec<u32>> = BTreeMap::new();
    for (j, b) in y_block.iter().enumerate() {
        y_in_block.entry(b.clone()).or_default().push(j as u32);
    }

    let mut rows: Vec<SparseVec> = Vec::with_capacity(gamma.n_atoms());
    for a in 0..gamma.n_atoms() {
        let bx = &x_block[a];
        let mj = mu_block[bx];
        let mut row: SparseVec = Vec::new();
        if mu[a] > 0.0 {
            for ((pbx, pby), &mass) in pair_mass.range((bx.clone(), Vec::new())..) {
                if pbx != bx {
                    break;
                }
                let nk = nu_block[pby];
                for &j in &y_in_block[pby] {
                    let w = mass * mu[a] * nu[j as usize] / (mj * nk);
                    if w > 0.0 {
                        row.push((j, w));
                    }
                }
            }
            row.sort_unstable_by_key(|&(j, _)| j);
        }
        rows.push(row);
    }

    let approx = Coupling::from_rows(
        gamma.x_dim,
        gamma.y_dim,
        gamma.x_coords.clone(),
        gamma.x_cell.clone(),
        gamma.cell_atoms.len(),
        gamma.y_coords.clone(),
        rows,
    )?;
    let occupied_x = mu_block.values().filter(|&&m| m > 0.0).count();
    let occupied_y = nu_block.values().filter(|&&m| m > 0.0).count();
    Ok((
        approx,
        BlockReport {
            occupied_x,
            occupied_y,
        },
    ))
}
