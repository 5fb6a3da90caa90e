//! Partially observed outcome tensors and the index-set algebra over their
//! observation mask.
//!
//! Rows index actions, columns index contexts, and each cell holds a fiber of
//! `depth` outcome coordinates. The mask is two dimensional: a cell is either
//! observed as a whole fiber or missing as a whole fiber.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-major boolean observation mask (`true` = observed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        Mask { rows, cols, bits }
    }

    pub fn from_vec(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::InvalidTensor(format!(
                "mask has {} cells, expected {rows}x{cols}",
                bits.len()
            )));
        }
        Ok(Mask { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, observed: bool) {
        self.bits[i * self.cols + j] = observed;
    }

    pub fn count_observed(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn row_count(&self, i: usize) -> usize {
        (0..self.cols).filter(|&j| self.get(i, j)).count()
    }

    pub fn col_count(&self, j: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, j)).count()
    }

    /// Cells that are not observed, in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn complement(&self) -> Mask {
        Mask {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn transpose(&self) -> Mask {
        Mask::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// True when every row and every column has at least one observed cell.
    pub fn has_no_empty_lines(&self) -> bool {
        (0..self.rows).all(|i| self.row_count(i) > 0) && (0..self.cols).all(|j| self.col_count(j) > 0)
    }
}

/// Observed-column sets per row and observed-row sets per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    pub cols_of_row: Vec<Vec<usize>>,
    pub rows_of_col: Vec<Vec<usize>>,
}

impl IndexSets {
    pub fn from_mask(mask: &Mask) -> Self {
        let cols_of_row = (0..mask.rows())
            .map(|i| (0..mask.cols()).filter(|&j| mask.get(i, j)).collect())
            .collect();
        let rows_of_col = (0..mask.cols())
            .map(|j| (0..mask.rows()).filter(|&i| mask.get(i, j)).collect())
            .collect();
        IndexSets {
            cols_of_row,
            rows_of_col,
        }
    }
}

/// An `rows x cols x depth` outcome array with a cell-level observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTensor {
    rows: usize,
    cols: usize,
    depth: usize,
    values: Vec<f64>,
    mask: Mask,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

fn default_labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

impl PartialTensor {
    /// `values` is laid out as `(i * cols + j) * depth + k`. Values in
    /// unobserved cells are kept but never read through the observed API.
    pub fn new(depth: usize, values: Vec<f64>, mask: Mask) -> Result<Self> {
        let (rows, cols) = mask.shape();
        if rows == 0 || cols == 0 || depth == 0 {
            return Err(Error::InvalidTensor(format!(
                "dimensions must be positive, got {rows}x{cols}x{depth}"
            )));
        }
        if values.len() != rows * cols * depth {
            return Err(Error::InvalidTensor(format!(
                "expected {} values for {rows}x{cols}x{depth}, got {}",
                rows * cols * depth,
                values.len()
            )));
        }
        for i in 0..rows {
            for j in 0..cols {
                if !mask.get(i, j) {
                    continue;
                }
                let start = (i * cols + j) * depth;
                if values[start..start + depth].iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidTensor(format!(
                        "observed cell ({i}, {j}) holds a non-finite value"
                    )));
                }
            }
        }
        Ok(PartialTensor {
            rows,
            cols,
            depth,
            values,
            mask,
            row_labels: default_labels("r", rows),
            col_labels: default_labels("c", cols),
        })
    }

    pub fn dense(rows: usize, cols: usize, depth: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(depth, values, Mask::full(rows, cols))
    }

    pub fn from_matrix(matrix: &DMatrix<f64>, mask: Mask) -> Result<Self> {
        if mask.shape() != matrix.shape() {
            return Err(Error::ShapeMismatch {
                expected: matrix.shape(),
                got: mask.shape(),
            });
        }
        let (rows, cols) = matrix.shape();
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(matrix[(i, j)]);
            }
        }
        Self::new(1, values, mask)
    }

    pub fn from_dense_matrix(matrix: &DMatrix<f64>) -> Result<Self> {
        Self::from_matrix(matrix, Mask::full(matrix.nrows(), matrix.ncols()))
    }

    /// Stacks equally shaped matrices as outcome coordinates.
    pub fn from_coordinates(slices: &[DMatrix<f64>], mask: Mask) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidTensor("no outcome coordinates".into()))?;
        let (rows, cols) = first.shape();
        if mask.shape() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                expected: (rows, cols),
                got: mask.shape(),
            });
        }
        let depth = slices.len();
        let mut values = vec![0.0; rows * cols * depth];
        for (k, s) in slices.iter().enumerate() {
            if s.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch {
                    expected: (rows, cols),
                    got: s.shape(),
                });
            }
            for i in 0..rows {
                for j in 0..cols {
                    values[(i * cols + j) * depth + k] = s[(i, j)];
                }
            }
        }
        Self::new(depth, values, mask)
    }

    pub fn with_labels(mut self, row_labels: Vec<String>, col_labels: Vec<String>) -> Result<Self> {
        if row_labels.len() != self.rows || col_labels.len() != self.cols {
            return Err(Error::InvalidTensor(format!(
                "label counts {}x{} do not match shape {}x{}",
                row_labels.len(),
                col_labels.len(),
                self.rows,
                self.cols
            )));
        }
        self.row_labels = row_labels;
        self.col_labels = col_labels;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.depth)
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.get(i, j)
    }

    /// The outcome fiber of an observed cell, `None` when the cell is missing.
    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> Option<&[f64]> {
        if self.mask.get(i, j) {
            Some(self.fiber(i, j))
        } else {
            None
        }
    }

    /// Single coordinate of an observed cell.
    #[inline]
    pub fn observed_at(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        self.observed(i, j).map(|f| f[k])
    }

    /// Raw fiber regardless of the mask. Completion code must go through
    /// [`PartialTensor::observed`]; this is for ground-truth tensors.
    #[inline]
    pub fn fiber(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.cols + j) * self.depth;
        &self.values[start..start + self.depth]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coordinate `k` as a matrix, ignoring the mask.
    pub fn coordinate(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.fiber(i, j)[k])
    }

    /// Stacks the coordinate matrices vertically into a `(depth * rows) x cols`
    /// matrix (row `k * rows + i`), ignoring the mask.
    pub fn unfold(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.depth * self.rows, self.cols, |r, j| {
            let (k, i) = (r / self.rows, r % self.rows);
            self.fiber(i, j)[k]
        })
    }

    /// Coordinate `k` as a single-depth partial tensor with the same mask.
    pub fn coordinate_tensor(&self, k: usize) -> PartialTensor {
        let values = (0..self.rows * self.cols)
            .map(|c| self.values[c * self.depth + k])
            .collect();
        PartialTensor {
            rows: self.rows,
            cols: self.cols,
            depth: 1,
            values,
            mask: self.mask.clone(),
            row_labels: self.row_labels.clone(),
            col_labels: self.col_labels.clone(),
        }
    }

    pub fn index_sets(&self) -> IndexSets {
        IndexSets::from_mask(&self.mask)
    }

    /// Columns observed in every one of `rows`.
    pub fn observed_cols(&self, rows: &[usize]) -> Result<Vec<usize>> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("row set must be nonempty".into()));
        }
        for &i in rows {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
        }
        Ok((0..self.cols)
            .filter(|&j| rows.iter().all(|&i| self.mask.get(i, j)))
            .collect())
    }

    /// Rows observed in every one of `cols`.
    pub fn observed_rows(&self, cols: &[usize]) -> Result<Vec<usize>> {
        if cols.is_empty() {
            return Err(Error::InvalidParameter("column set must be nonempty".into()));
        }
        for &j in cols {
            if j >= self.cols {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    len: self.cols,
                });
            }
        }
        Ok((0..self.rows)
            .filter(|&i| cols.iter().all(|&j| self.mask.get(i, j)))
            .collect())
    }

    /// Zeroes `full` outside the observed set.
    pub fn project_omega(&self, full: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if full.shape() != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, self.cols),
                got: full.shape(),
            });
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            if self.mask.get(i, j) {
                full[(i, j)]
            } else {
                0.0
            }
        }))
    }

    /// Swaps the action and context axes.
    pub fn transpose(&self) -> PartialTensor {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let src = (i * self.cols + j) * self.depth;
                let dst = (j * self.rows + i) * self.depth;
                values[dst..dst + self.depth].copy_from_slice(&self.values[src..src + self.depth]);
            }
        }
        PartialTensor {
            rows: self.cols,
            cols: self.rows,
            depth: self.depth,
            values,
            mask: self.mask.transpose(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
        }
    }

    /// Same values under a different observation mask.
    pub fn with_mask(&self, mask: Mask) -> Result<PartialTensor> {
        if mask.shape() != (self.rows, self.cols) {
            return Err(Error::ShapeMismatch {
                expected: (self.rows, self.cols),
                got: mask.shape(),
            });
        }
        PartialTensor::new(self.depth, self.values.clone(), mask).and_then(|t| {
            t.with_labels(self.row_labels.clone(), self.col_labels.clone())
        })
    }

    /// Copy with every unobserved value overwritten by `sentinel`.
    pub fn poisoned(&self, sentinel: f64) -> PartialTensor {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !self.mask.get(i, j) {
                    let start = (i * self.cols + j) * self.depth;
                    out.values[start..start + self.depth].fill(sentinel);
                }
            }
        }
        out
    }

    /// Sub-tensor made of the listed rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<PartialTensor> {
        for &i in rows {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
        }
        for &j in cols {
            if j >= self.cols {
                return Err(Error::IndexOutOfRange {
                    index: j,
                    len: self.cols,
                });
            }
        }
        let mut values = Vec::with_capacity(rows.len() * cols.len() * self.depth);
        for &i in rows {
            for &j in cols {
                values.extend_from_slice(self.fiber(i, j));
            }
        }
        let mask = Mask::from_fn(rows.len(), cols.len(), |a, b| self.mask.get(rows[a], cols[b]));
        let row_labels = rows.iter().map(|&i| self.row_labels[i].clone()).collect();
        let col_labels = cols.iter().map(|&j| self.col_labels[j].clone()).collect();
        PartialTensor::new(self.depth, values, mask)?.with_labels(row_labels, col_labels)
    }
}
