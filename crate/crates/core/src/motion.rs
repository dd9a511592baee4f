//! Per-cell displacement fields over a BEV grid.

use serde::{Deserialize, Serialize};

use crate::config::GridSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    /// Frame offset sign relative to the current frame.
    pub fn sign(self) -> isize {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }
}

/// A stack of `T'` displacement fields sharing one validity mask.
///
/// Only masked cells carry storage, so cells outside the mask are zero by
/// construction. Valid cells are kept in ascending row-major order; values
/// for step `k` (0-based, i.e. horizon `t = k + 1`) are indexed by the
/// cell's slot in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionStack<T = f64> {
    grid: GridSpec,
    direction: Direction,
    cells: Vec<usize>,
    steps: Vec<Vec<[T; 2]>>,
}

impl<T: Scalar> MotionStack<T> {
    /// Zero stack over the given flat cell indices (any order, duplicates
    /// removed).
    pub fn zeros(grid: GridSpec, direction: Direction, cells: impl IntoIterator<Item = usize>, num_steps: usize) -> Result<Self> {
        let mut cells: Vec<usize> = cells.into_iter().collect();
        cells.sort_unstable();
        cells.dedup();
        if let Some(&last) = cells.last() {
            if last >= grid.num_cells() {
                return Err(Error::ShapeMismatch(format!("cell {last} outside {}-cell grid", grid.num_cells())));
            }
        }
        let n = cells.len();
        Ok(Self { grid, direction, cells, steps: vec![vec![[T::zero(); 2]; n]; num_steps] })
    }

    /// Zero stack with the same grid, mask and step count.
    pub fn zeros_like(&self) -> Self {
        Self {
            grid: self.grid,
            direction: self.direction,
            cells: self.cells.clone(),
            steps: vec![vec![[T::zero(); 2]; self.cells.len()]; self.steps.len()],
        }
    }

    /// Builds from dense row-major step fields. Nonzero values outside the
    /// mask are rejected.
    pub fn from_dense(grid: GridSpec, direction: Direction, mask: &[bool], dense: &[Vec<[T; 2]>]) -> Result<Self> {
        if mask.len() != grid.num_cells() {
            return Err(Error::ShapeMismatch(format!("mask has {} cells, grid {}", mask.len(), grid.num_cells())));
        }
        let cells: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        let mut steps = Vec::with_capacity(dense.len());
        for (k, field) in dense.iter().enumerate() {
            if field.len() != grid.num_cells() {
                return Err(Error::ShapeMismatch(format!("step {k} has {} cells", field.len())));
            }
            for (i, v) in field.iter().enumerate() {
                if !mask[i] && (v[0] != T::zero() || v[1] != T::zero()) {
                    return Err(Error::InvalidScene(format!("step {k} has motion at masked-out cell {i}")));
                }
            }
            steps.push(cells.iter().map(|&c| field[c]).collect());
        }
        Ok(Self { grid, direction, cells, steps })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn direction(&self) -> Direction {
        self.direction
    }
    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
    /// Number of valid cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
    /// Flat row-major indices of valid cells, ascending.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid.num_cells()];
        for &c in &self.cells {
            m[c] = true;
        }
        m
    }

    /// Slot of a flat cell index, if valid.
    pub fn slot(&self, flat: usize) -> Option<usize> {
        self.cells.binary_search(&flat).ok()
    }

    pub fn slot_of(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.grid.rows() || col >= self.grid.cols() {
            return None;
        }
        self.slot(self.grid.flat(row, col))
    }

    pub fn step(&self, k: usize) -> &[[T; 2]] {
        &self.steps[k]
    }
    pub fn step_mut(&mut self, k: usize) -> &mut [[T; 2]] {
        &mut self.steps[k]
    }
    pub fn steps(&self) -> &[Vec<[T; 2]>] {
        &self.steps
    }

    /// Displacement at `(row, col)` for step `k`; zero outside the mask.
    pub fn at(&self, k: usize, row: usize, col: usize) -> [T; 2] {
        self.slot_of(row, col).map_or([T::zero(); 2], |s| self.steps[k][s])
    }

    /// Dense row-major field of step `k`.
    pub fn dense(&self, k: usize) -> Vec<[T; 2]> {
        let mut out = vec![[T::zero(); 2]; self.grid.num_cells()];
        for (s, &c) in self.cells.iter().enumerate() {
            out[c] = self.steps[k][s];
        }
        out
    }

    /// Same grid and mask.
    pub fn same_layout<U>(&self, other: &MotionStack<U>) -> bool {
        self.grid == other.grid && self.cells == other.cells
    }

    pub fn check_layout<U>(&self, other: &MotionStack<U>, what: &str) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::ShapeMismatch(format!("{what}: grid or validity mask differs")));
        }
        if self.num_steps() != other.steps.len() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {} vs {} steps",
                self.num_steps(),
                other.steps.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.steps.iter().flatten().all(|v| v[0].is_finite() && v[1].is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> MotionStack<U> {
        MotionStack {
            grid: self.grid,
            direction: self.direction,
            cells: self.cells.clone(),
            steps: self
                .steps
                .iter()
                .map(|s| s.iter().map(|v| [U::lit(v[0].as_f64()), U::lit(v[1].as_f64())]).collect())
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in self.steps.iter_mut().flatten() {
            v[0] = v[0] * factor;
            v[1] = v[1] * factor;
        }
    }

    /// `self += factor * other`; layouts must match.
    pub fn add_scaled(&mut self, other: &Self, factor: T) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.steps.iter_mut().flatten().zip(other.steps.iter().flatten()) {
            a[0] = a[0] + factor * b[0];
            a[1] = a[1] + factor * b[1];
        }
    }

    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.scale(-T::one());
        out
    }

    /// Mean Euclidean norm of the displacement over valid cells and steps.
    pub fn mean_magnitude(&self) -> f64 {
        let n = self.len() * self.num_steps();
        if n == 0 {
            return 0.0;
        }
        let s: f64 = self.steps.iter().flatten().map(|v| v[0].as_f64().hypot(v[1].as_f64())).sum();
        s / n as f64
    }
}
