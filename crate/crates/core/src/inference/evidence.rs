use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A batch of partial assignments to the data variables of a circuit.
///
/// Row `i`, column `j` refers to the `j`-th data variable (in data order).
/// Values at missing positions are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Evidence<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    observed: Vec<bool>,
}

impl<T: Scalar> Evidence<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols || observed.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "evidence",
                lhs: vec![rows, cols],
                rhs: vec![values.len(), observed.len()],
            });
        }
        Ok(Self {
            rows,
            cols,
            values,
            observed,
        })
    }

    /// Fully observed rows from a row-major matrix.
    pub fn observed_rows(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        Self::new(rows, cols, values, vec![true; rows * cols])
    }

    pub fn all_missing(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
            observed: vec![false; rows * cols],
        }
    }

    /// One row, `None` marking a missing variable.
    pub fn from_options(row: &[Option<f64>]) -> Self {
        Self {
            rows: 1,
            cols: row.len(),
            values: row.iter().map(|v| T::c(v.unwrap_or(0.0))).collect(),
            observed: row.iter().map(Option::is_some).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.cols + col]
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    /// `Some(value)` when observed.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        let k = row * self.cols + col;
        self.observed[k].then(|| self.values[k])
    }

    pub fn set(&mut self, row: usize, col: usize, value: Option<T>) {
        let k = row * self.cols + col;
        self.observed[k] = value.is_some();
        self.values[k] = value.unwrap_or(T::zero());
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn num_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Copy of the rows in `range`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Self {
        let r = start * self.cols..(start + len) * self.cols;
        Self {
            rows: len,
            cols: self.cols,
            values: self.values[r.clone()].to_vec(),
            observed: self.observed[r].to_vec(),
        }
    }

    /// Copy of the listed rows, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        let mut observed = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            let r = i * self.cols..(i + 1) * self.cols;
            values.extend_from_slice(&self.values[r.clone()]);
            observed.extend_from_slice(&self.observed[r]);
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            values,
            observed,
        }
    }
}
