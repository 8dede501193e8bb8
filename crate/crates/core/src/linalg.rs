//! Minimal row-major dense matrix used by the preprocessing and network code.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps a row-major buffer. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer has wrong length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally sized rows. Returns `None` when the rows
    /// are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Option<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return None;
            }
            data.extend_from_slice(r);
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so handle the degenerate width separately
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    /// Selects rows by position, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `out = x · selfᵀ + bias` where `self` is `out × in` and `x` is `n × in`.
    pub fn affine_rows(&self, x: &Matrix, bias: &[f64]) -> Matrix {
        debug_assert_eq!(x.cols, self.cols);
        debug_assert_eq!(bias.len(), self.rows);
        let mut out = Matrix::zeros(x.rows, self.rows);
        for (i, xr) in x.iter_rows().enumerate() {
            let orow = out.row_mut(i);
            for (o, (slot, b)) in orow.iter_mut().zip(bias).enumerate() {
                *slot = dot(self.row(o), xr) + b;
            }
        }
        out
    }

    /// `x · self` for `x` of shape `n × rows`, i.e. back-propagation through
    /// a weight matrix.
    pub fn left_mul_rows(&self, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols, self.rows);
        let mut out = Matrix::zeros(x.rows, self.cols);
        for (i, xr) in x.iter_rows().enumerate() {
            let orow = out.row_mut(i);
            for (o, &g) in xr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (acc, w) in orow.iter_mut().zip(self.row(o)) {
                    *acc += g * w;
                }
            }
        }
        out
    }

    /// `Σ_n gₙ ⊗ xₙ`: the weight gradient for a batch of upstream gradients.
    pub fn outer_sum(g: &Matrix, x: &Matrix) -> Matrix {
        debug_assert_eq!(g.rows, x.rows);
        let mut out = Matrix::zeros(g.cols, x.cols);
        for (gr, xr) in g.iter_rows().zip(x.iter_rows()) {
            for (o, &gv) in gr.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                for (acc, xv) in out.row_mut(o).iter_mut().zip(xr) {
                    *acc += gv * xv;
                }
            }
        }
        out
    }

    /// Column sums.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rounds to the nearest value representable as `f32`.
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_computation() {
        let w = Matrix::from_vec(2, 3, vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.5]);
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 4.0]);
        let y = w.affine_rows(&x, &[0.5, -1.0]);
        assert_eq!(y.as_slice(), &[1.0 - 4.0 + 0.5, 2.0 + 2.0 + 2.0 - 1.0]);
    }

    #[test]
    fn transpose_products_agree() {
        let w = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]);
        let back = w.left_mul_rows(&g);
        assert_eq!(back.row(0), &[1.0 - 4.0, 2.0 - 5.0, 3.0 - 6.0]);
        let x = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let gw = Matrix::outer_sum(&g, &x);
        assert_eq!(gw.row(0), &[1.0, 0.5, 1.0]);
        assert_eq!(gw.row(1), &[-1.0, 2.0, -1.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_none());
    }
}
