//! Minimal dense row-major matrix used for feature tables and windows.

use crate::{Error, Result, Scalar};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from a flat row-major buffer.
    ///
    /// Errors with [`Error::LengthMismatch`] when `data.len() != rows * cols`.
    pub fn from_flat(data: Vec<T>, rows: usize, cols: usize) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Self { data, rows, cols })
    }

    /// Zero-filled matrix.
    #[must_use]
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![T::zero(); rows * cols],
            rows,
            cols,
        }
    }

    #[must_use]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[must_use]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[must_use]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[must_use]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    /// Appends one row; the length must match the column count.
    pub fn push_row(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::LengthMismatch {
                left: row.len(),
                right: self.cols,
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// Copies the listed rows into a new matrix, in the given order.
    #[must_use]
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self {
            data: Vec::with_capacity(indices.len() * self.cols),
            rows: indices.len(),
            cols: self.cols,
        };
        for &i in indices {
            out.data.extend_from_slice(self.row(i));
        }
        out
    }

    #[must_use]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_flat_rejects_wrong_length() {
        let err = Matrix::from_flat(vec![1.0f64, 2.0, 3.0], 2, 2).unwrap_err();
        assert_eq!(
            err,
            Error::LengthMismatch {
                left: 3,
                right: 4
            }
        );
    }

    #[test]
    fn row_access_is_row_major() {
        let m = Matrix::from_flat(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 3).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.get(1, 2), 6.0);
    }

    #[test]
    fn select_rows_copies_in_order() {
        let m = Matrix::from_flat(vec![1.0f64, 2.0, 3.0, 4.0], 4, 1).unwrap();
        let s = m.select_rows(&[3, 0]);
        assert_eq!(s.as_slice(), &[4.0, 1.0]);
    }
}
