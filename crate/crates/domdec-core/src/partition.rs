//! Staggered basic/composite cell structure of `X = [0,1]^d` at an even scale `n`.
//!
//! Basic cells are the closed cubes `X_i = i/n + [0,1/n]^d` for multi-indices
//! `i` in `{0,..,n-1}^d`. The composite partition `A` groups `2^d` adjacent
//! basic cells with centers on the grid `{1/n, 3/n, ..}^d`; partition `B` is
//! offset by one basic cell per axis with centers on `{0, 2/n, .., 1}^d`, so
//! its boundary cells hold fewer basic cells. Multi-indices are flattened
//! row-major; all iteration is in that lexicographic order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Which of the two staggered composite partitions an operation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
}

impl Phase {
    /// Partition used during iteration `k`: odd iterations sweep `A`,
    /// even ones (including `k = 0`) `B`.
    pub fn of_iteration(k: usize) -> Phase {
        if k % 2 == 1 {
            Phase::A
        } else {
            Phase::B
        }
    }

    pub fn other(self) -> Phase {
        match self {
            Phase::A => Phase::B,
            Phase::B => Phase::A,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::A => write!(f, "A"),
            Phase::B => write!(f, "B"),
        }
    }
}

/// One composite cell: its member basic cells (flat ids, ascending), grid
/// center and whether it holds the full `2^d` basic cells.
#[derive(Clone, Debug)]
pub struct CompositeCell {
    pub members: Vec<usize>,
    pub center: Vec<f64>,
    pub interior: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PartitionError {
    /// The staggering construction needs an even cell count.
    OddCellCount(usize),
    /// Fewer than two cells per axis.
    TooCoarse(usize),
    ZeroDimension,
    /// Query point outside `[0,1]^d` or with wrong dimension.
    PointOutOfRange,
}

impl fmt::Display for PartitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionError::OddCellCount(n) => {
                write!(f, "cell count {n} is odd; staggered partitions need even n")
            }
            PartitionError::TooCoarse(n) => write!(f, "cell count {n} < 2"),
            PartitionError::ZeroDimension => write!(f, "dimension must be at least 1"),
            PartitionError::PointOutOfRange => write!(f, "point outside [0,1]^d"),
        }
    }
}

impl core::error::Error for PartitionError {}

/// Basic and composite cell structure of `[0,1]^d` at scale `n`.
///
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct GridPartition {
    dim: usize,
    n: usize,
    cells_a: Vec<CompositeCell>,
    cells_b: Vec<CompositeCell>,
}

impl GridPartition {
    pub fn build(dim: usize, n: usize) -> Result<Self, PartitionError> {
        if dim == 0 {
            return Err(PartitionError::ZeroDimension);
        }
        if n < 2 {
            return Err(PartitionError::TooCoarse(n));
        }
        if !n.is_multiple_of(2) {
            return Err(PartitionError::OddCellCount(n));
        }
        let cells_a = Self::build_phase(dim, n, Phase::A);
        let cells_b = Self::build_phase(dim, n, Phase::B);
        Ok(GridPartition {
            dim,
            n,
            cells_a,
            cells_b,
        })
    }

    fn build_phase(dim: usize, n: usize, phase: Phase) -> Vec<CompositeCell> {
        let per_axis = match phase {
            Phase::A => n / 2,
            Phase::B => n / 2 + 1,
        };
        let count = per_axis.pow(dim as u32);
        let mut cells = Vec::with_capacity(count);
        let mut grid = vec![0usize; dim];
        for _ in 0..count {
            // basic index ranges along each axis
            let mut ranges: Vec<Vec<usize>> = Vec::with_capacity(dim);
            let mut center = Vec::with_capacity(dim);
            let mut interior = true;
            for (axis, &g) in grid.iter().enumerate() {
                let _ = axis;
                match phase {
                    Phase::A => {
                        ranges.push(vec![2 * g, 2 * g + 1]);
                        center.push((2 * g + 1) as f64 / n as f64);
                    }
                    Phase::B => {
                        let mut r = Vec::with_capacity(2);
                        if 2 * g >= 1 {
                            r.push(2 * g - 1);
                        } else {
                            interior = false;
                        }
                        if 2 * g < n {
                            r.push(2 * g);
                        } else {
                            interior = false;
                        }
                        ranges.push(r);
                        center.push(2.0 * g as f64 / n as f64);
                    }
                }
            }
            let mut members = Vec::new();
            cartesian_flat(&ranges, n, &mut members);
            members.sort_unstable();
            cells.push(CompositeCell {
                members,
                center,
                interior,
            });
            // advance grid multi-index lexicographically (last axis fastest)
            for axis in (0..dim).rev() {
                grid[axis] += 1;
                if grid[axis] < per_axis {
                    break;
                }
                grid[axis] = 0;
            }
        }
        cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of basic cells, `n^d`.
    pub fn basic_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn cells(&self, phase: Phase) -> &[CompositeCell] {
        match phase {
            Phase::A => &self.cells_a,
            Phase::B => &self.cells_b,
        }
    }

    /// Decode a flat basic-cell id into its multi-index.
    pub fn basic_multi(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.dim];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn basic_flat(&self, multi: &[usize]) -> usize {
        let mut flat = 0;
        for &m in multi {
            flat = flat * self.n + m;
        }
        flat
    }

    /// Center `x_i = (i + 1/2)/n` of a basic cell.
    pub fn basic_center(&self, flat: usize) -> Vec<f64> {
        self.basic_multi(flat)
            .iter()
            .map(|&i| (i as f64 + 0.5) / self.n as f64)
            .collect()
    }

    /// Extent of a basic cell as per-axis `(lo, hi)`.
    pub fn basic_extent(&self, flat: usize) -> Vec<(f64, f64)> {
        self.basic_multi(flat)
            .iter()
            .map(|&i| (i as f64 / self.n as f64, (i + 1) as f64 / self.n as f64))
            .collect()
    }

    /// Basic cell containing `x`; points on shared boundaries go to the
    /// lexicographically smallest cell (such overlaps carry no mass).
    pub fn basic_cell_of(&self, x: &[f64]) -> Result<usize, PartitionError> {
        if x.len() != self.dim {
            return Err(PartitionError::PointOutOfRange);
        }
        let mut flat = 0usize;
        for &c in x {
            if !(0.0..=1.0).contains(&c) {
                return Err(PartitionError::PointOutOfRange);
            }
            let scaled = c * self.n as f64;
            let mut i = math::floor(scaled) as usize;
            if i > 0 && (i as f64) == scaled {
                i -= 1;
            }
            if i > self.n - 1 {
                i = self.n - 1;
            }
            flat = flat * self.n + i;
        }
        Ok(flat)
    }

    /// Composite cell (index into `cells(phase)`) containing `x`; boundary
    /// ties break toward the lexicographically smallest cell.
    pub fn composite_of(&self, x: &[f64], phase: Phase) -> Result<usize, PartitionError> {
        if x.len() != self.dim {
            return Err(PartitionError::PointOutOfRange);
        }
        let per_axis = self.per_axis(phase);
        let mut flat = 0usize;
        for &c in x {
            if !(0.0..=1.0).contains(&c) {
                return Err(PartitionError::PointOutOfRange);
            }
            let g = match phase {
                Phase::A => {
                    // X_a spans [2a, 2a+2]/n per axis
                    let scaled = c * self.n as f64 / 2.0;
                    let mut a = math::floor(scaled) as usize;
                    if a > 0 && (a as f64) == scaled {
                        a -= 1;
                    }
                    if a > per_axis - 1 {
                        a = per_axis - 1;
                    }
                    a
                }
                Phase::B => {
                    // X_q spans [2q-1, 2q+1]/n per axis (clipped to [0,1])
                    let scaled = (c * self.n as f64 + 1.0) / 2.0;
                    let mut q = math::floor(scaled) as usize;
                    if q > 0 && (q as f64) == scaled {
                        q -= 1;
                    }
                    if q > per_axis - 1 {
                        q = per_axis - 1;
                    }
                    q
                }
            };
            flat = flat * per_axis + g;
        }
        Ok(flat)
    }

    fn per_axis(&self, phase: Phase) -> usize {
        match phase {
            Phase::A => self.n / 2,
            Phase::B => self.n / 2 + 1,
        }
    }

    /// Composite cell of `phase` containing the basic cell `flat`.
    pub fn composite_of_basic(&self, flat: usize, phase: Phase) -> usize {
        let multi = self.basic_multi(flat);
        let per_axis = self.per_axis(phase);
        let mut out = 0;
        for &i in &multi {
            let g = match phase {
                Phase::A => i / 2,
                Phase::B => i.div_ceil(2),
            };
            out = out * per_axis + g;
        }
        out
    }

    /// Neighbouring composite cells of the other partition, each with the
    /// (unique) shared basic cell. One neighbour per member basic cell.
    pub fn neighbors(&self, phase: Phase, cell: usize) -> Vec<(usize, usize)> {
        self.cells(phase)[cell]
            .members
            .iter()
            .map(|&i| (self.composite_of_basic(i, phase.other()), i))
            .collect()
    }

    /// Basic cell `i(J, b)` of the composite cell whose center sits at
    /// `x_J + b/(2n)`, if it exists (boundary `B` cells miss some).
    pub fn offset_member(&self, phase: Phase, cell: usize, b: &[i8]) -> Option<usize> {
        debug_assert_eq!(b.len(), self.dim);
        let per_axis = self.per_axis(phase);
        let mut grid = vec![0usize; self.dim];
        let mut rest = cell;
        for axis in (0..self.dim).rev() {
            grid[axis] = rest % per_axis;
            rest /= per_axis;
        }
        let mut flat = 0usize;
        for (axis, &g) in grid.iter().enumerate() {
            let step = (b[axis] as isize + 1) / 2; // 0 for b=-1, 1 for b=+1
            let i = match phase {
                Phase::A => 2 * g as isize + step,
                Phase::B => 2 * g as isize - 1 + step,
            };
            if i < 0 || i > self.n as isize - 1 {
                return None;
            }
            flat = flat * self.n + i as usize;
        }
        Some(flat)
    }

    /// All sign vectors `b` in `{-1,+1}^d`, lexicographic with `-1 < +1`.
    pub fn sign_vectors(&self) -> Vec<Vec<i8>> {
        let mut out = Vec::with_capacity(1 << self.dim);
        for mask in 0..(1usize << self.dim) {
            let b: Vec<i8> = (0..self.dim)
                .map(|axis| {
                    if mask >> (self.dim - 1 - axis) & 1 == 1 {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            out.push(b);
        }
        out
    }

    /// Extent of a composite cell as per-axis `(lo, hi)`.
    pub fn composite_extent(&self, phase: Phase, cell: usize) -> Vec<(f64, f64)> {
        let members = &self.cells(phase)[cell].members;
        let mut ext = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for &m in members {
            for (axis, (lo, hi)) in self.basic_extent(m).into_iter().enumerate() {
                if lo < ext[axis].0 {
                    ext[axis].0 = lo;
                }
                if hi > ext[axis].1 {
                    ext[axis].1 = hi;
                }
            }
        }
        ext
    }

    /// Pairs of adjacent composite cells of one partition together with the
    /// `(d-1)`-measure of their shared face (`1` for `d = 1`). Each unordered
    /// pair appears once, lower index first.
    pub fn adjacent_pairs(&self, phase: Phase) -> Vec<(usize, usize, f64)> {
        let per_axis = self.per_axis(phase);
        let count = self.cells(phase).len();
        let mut out = Vec::new();
        let mut grid = vec![0usize; self.dim];
        for cell in 0..count {
            for axis in 0..self.dim {
                if grid[axis] + 1 < per_axis {
                    let other = cell + per_axis.pow((self.dim - 1 - axis) as u32);
                    let ext_a = self.composite_extent(phase, cell);
                    let mut face = 1.0;
                    for (m, (lo, hi)) in ext_a.iter().enumerate() {
                        if m != axis {
                            face *= hi - lo;
                        }
                    }
                    out.push((cell, other, face));
                }
            }
            for axis in (0..self.dim).rev() {
                grid[axis] += 1;
                if grid[axis] < per_axis {
                    break;
                }
                grid[axis] = 0;
            }
        }
        out
    }
}

fn cartesian_flat(ranges: &[Vec<usize>], n: usize, out: &mut Vec<usize>) {
    fn rec(ranges: &[Vec<usize>], n: usize, acc: usize, out: &mut Vec<usize>) {
        if ranges.is_empty() {
            out.push(acc);
            return;
        }
        for &i in &ranges[0] {
            rec(&ranges[1..], n, acc * n + i, out);
        }
    }
    rec(ranges, n, 0, out);
}
