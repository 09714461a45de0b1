//! Dense row-major storage for Q-tables, policies and transition kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows x cols` table of reals.
///
/// Serialized as nested arrays (one inner array per row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} entries for a {rows}x{cols} table, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).take(self.rows).collect()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Largest entry of a row.
    #[inline]
    pub fn row_max(&self, row: usize) -> f64 {
        self.row(row).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_x |t(x)|`; zero for an empty table.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm distance; the tables must have equal shape.
    pub fn sup_distance(&self, other: &Table) -> f64 {
        assert_eq!(self.shape(), other.shape(), "sup_distance on mismatched tables");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Table {
        Table {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Table, f: impl Fn(f64, f64) -> f64) -> Table {
        assert_eq!(self.shape(), other.shape(), "zip_map on mismatched tables");
        Table {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Table {
        self.map(|v| c * v)
    }

    pub(crate) fn expect_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.shape() == (rows, cols) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                self.rows, self.cols
            )))
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for Table {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Table::from_rows(rows)
    }
}

impl From<Table> for Vec<Vec<f64>> {
    fn from(t: Table) -> Self {
        t.to_rows()
    }
}

/// A conditional probability kernel `K[from][action][to]`.
///
/// Used for the flat transition tensor and for the composed high-level and
/// low-level dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct Kernel {
    from: usize,
    actions: usize,
    to: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn zeros(from: usize, actions: usize, to: usize) -> Self {
        Self {
            from,
            actions,
            to,
            data: vec![0.0; from * actions * to],
        }
    }

    pub fn from_fn(
        from: usize,
        actions: usize,
        to: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut k = Self::zeros(from, actions, to);
        for s in 0..from {
            for a in 0..actions {
                for n in 0..to {
                    k.data[(s * actions + a) * to + n] = f(s, a, n);
                }
            }
        }
        k
    }

    pub fn num_from(&self) -> usize {
        self.from
    }

    pub fn num_actions(&self) -> usize {
        self.actions
    }

    pub fn num_to(&self) -> usize {
        self.to
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, next: usize) -> f64 {
        self.data[(s * self.actions + a) * self.to + next]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, next: usize, p: f64) {
        self.data[(s * self.actions + a) * self.to + next] = p;
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.actions + a) * self.to;
        &self.data[start..start + self.to]
    }

    #[inline]
    pub fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.actions + a) * self.to;
        &mut self.data[start..start + self.to]
    }

    /// Largest `|sum(row) - 1|` over all rows.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for s in 0..self.from {
            for a in 0..self.actions {
                let sum: f64 = self.row(s, a).iter().sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
        worst
    }

    /// Largest absolute entrywise difference.
    pub fn sup_distance(&self, other: &Kernel) -> f64 {
        assert_eq!(
            (self.from, self.actions, self.to),
            (other.from, other.actions, other.to),
            "sup_distance on mismatched kernels"
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for Kernel {
    type Error = Error;

    fn try_from(nested: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let from = nested.len();
        let actions = nested.first().map_or(0, Vec::len);
        let to = nested
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len);
        let mut data = Vec::with_capacity(from * actions * to);
        for (s, per_action) in nested.into_iter().enumerate() {
            if per_action.len() != actions {
                return Err(Error::Shape(format!(
                    "transition[{s}] has {} actions, expected {actions}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.into_iter().enumerate() {
                if row.len() != to {
                    return Err(Error::Shape(format!(
                        "transition[{s}][{a}] has {} entries, expected {to}",
                        row.len()
                    )));
                }
                data.extend(row);
            }
        }
        Ok(Self {
            from,
            actions,
            to,
            data,
        })
    }
}

impl From<Kernel> for Vec<Vec<Vec<f64>>> {
    fn from(k: Kernel) -> Self {
        (0..k.from)
            .map(|s| (0..k.actions).map(|a| k.row(s, a).to_vec()).collect())
            .collect()
    }
}
