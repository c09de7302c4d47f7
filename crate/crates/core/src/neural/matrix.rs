use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
///
/// Layers that read raw inputs keep their bias in the last column; the
/// `affine*` methods treat the input as `[x; 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`; a bias column, if any,
    /// starts at zero.
    pub fn glorot<R: Rng>(rows: usize, inputs: usize, bias: bool, rng: &mut R) -> Self {
        let cols = inputs + usize::from(bias);
        let limit = (6.0 / (inputs + rows) as f64).sqrt();
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..inputs {
                m.data[r * cols + c] = rng.random_range(-limit..limit);
            }
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        Matrix::zeros(self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `W x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `W [x; 1]`, skipping zero inputs (occupancy grids are mostly empty).
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len() + 1, self.cols);
        let nz: Vec<(usize, f64)> = x
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        let bias = self.cols - 1;
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                nz.iter().map(|&(c, v)| row[c] * v).sum::<f64>() + row[bias]
            })
            .collect()
    }

    /// `W^T d`, restricted to the first `n` columns.
    pub fn tmul_vec(&self, d: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(d.len(), self.rows);
        let mut out = vec![0.0; n];
        for (r, &dr) in d.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.row(r)[..n]) {
                *o += dr * w;
            }
        }
        out
    }

    /// `self += d x^T`.
    pub fn add_outer(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(x.len(), self.cols);
        self.add_outer_impl(d, x, false);
    }

    /// `self += d [x; 1]^T`.
    pub fn add_outer_affine(&mut self, d: &[f64], x: &[f64]) {
        debug_assert_eq!(x.len() + 1, self.cols);
        self.add_outer_impl(d, x, true);
    }

    fn add_outer_impl(&mut self, d: &[f64], x: &[f64], bias: bool) {
        let nz: Vec<(usize, f64)> = x
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        let cols = self.cols;
        for (r, &dr) in d.iter().enumerate() {
            if dr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * cols..(r + 1) * cols];
            for &(c, v) in &nz {
                row[c] += dr * v;
            }
            if bias {
                row[cols - 1] += dr;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Backprop through ReLU given its output; the derivative at 0 is 0.
pub(crate) fn relu_backward(d: &mut [f64], out: &[f64]) {
    for (g, &o) in d.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
