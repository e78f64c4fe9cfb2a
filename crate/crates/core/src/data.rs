use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Regression data: inputs as an `m x n` matrix, one target per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Data {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Data {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        check_dim(x.nrows(), y.len(), "targets vs input rows")?;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        Ok(Self { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let n = rows.first().map_or(0, |r| r.len());
        for r in rows {
            check_dim(n, r.len(), "input row")?;
        }
        let x = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Data {
        let n = n.min(self.len());
        Data {
            x: self.x.rows(0, n).into_owned(),
            y: self.y.rows(0, n).into_owned(),
        }
    }

    /// Rows `start..len`.
    pub fn tail_from(&self, start: usize) -> Data {
        let start = start.min(self.len());
        let n = self.len() - start;
        Data {
            x: self.x.rows(start, n).into_owned(),
            y: self.y.rows(start, n).into_owned(),
        }
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if self.len() > 0 {
            check_dim(self.dim(), x.len(), "appended row")?;
        }
        let m = self.len();
        let n = x.len();
        let mut nx = DMatrix::zeros(m + 1, n);
        if m > 0 {
            nx.rows_mut(0, m).copy_from(&self.x);
        }
        for (j, &v) in x.iter().enumerate() {
            nx[(m, j)] = v;
        }
        self.x = nx;
        self.y = self.y.clone().push(y);
        Ok(())
    }
}
