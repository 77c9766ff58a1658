//! Dense row-major matrix and vector kernels.
//!
//! Everything here is `f64` and allocation-light: owning [`Matrix`] for
//! construction and tests, borrowed [`MatRef`]/[`MatMut`] views for running
//! kernels against slices of a flat parameter store. Reductions use a fixed
//! four-accumulator order (SIMD-friendly but deterministic: the same input
//! always reduces in the same order, independent of batch size or thread
//! count).
//!
//! Dimension mismatches are programmer errors and panic with a message; they
//! are never data-dependent.

use alloc::vec;
use alloc::vec::Vec;

use wide::f64x4;

/// An owned row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zeros matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Build from row-major data; panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix { rows, cols, data }
    }

    /// Build entrywise from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry at `(r, c)`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Set entry at `(r, c)`.
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Flat row-major data.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat row-major data.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Borrow as an immutable view.
    pub fn as_ref(&self) -> MatRef<'_> {
        MatRef { rows: self.rows, cols: self.cols, data: &self.data }
    }

    /// Borrow as a mutable view.
    pub fn as_mut(&mut self) -> MatMut<'_> {
        MatMut { rows: self.rows, cols: self.cols, data: &mut self.data }
    }
}

/// Borrowed immutable row-major matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    /// Number of rows.
    pub rows: usize,
    /// Number of columns.
    pub cols: usize,
    data: &'a [f64],
}

impl<'a> MatRef<'a> {
    /// View over a flat slice; panics if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: &'a [f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "view length {} does not match {}x{}", data.len(), rows, cols);
        MatRef { rows, cols, data }
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &'a [f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Entry at `(r, c)`.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Flat row-major data.
    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    /// `out = self . x` (matrix-vector product).
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input length {} != cols {}", x.len(), self.cols);
        assert_eq!(out.len(), self.rows, "matvec output length {} != rows {}", out.len(), self.rows);
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = dot(self.row(r), x);
        }
    }

    /// Allocating `self . x`.
    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec(x, &mut out);
        out
    }

    /// `out += self^T . x` (transposed matrix-vector product, accumulated).
    ///
    /// Iterates rows of `self` so memory access stays contiguous.
    pub fn matvec_t_add(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.rows, "matvec_t input length {} != rows {}", x.len(), self.rows);
        assert_eq!(out.len(), self.cols, "matvec_t output length {} != cols {}", out.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            axpy(xr, self.row(r), out);
        }
    }
}

/// Borrowed mutable row-major matrix view.
#[derive(Debug)]
pub struct MatMut<'a> {
    /// Number of rows.
    pub rows: usize,
    /// Number of columns.
    pub cols: usize,
    data: &'a mut [f64],
}

impl<'a> MatMut<'a> {
    /// View over a flat slice; panics if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: &'a mut [f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "view length {} does not match {}x{}", data.len(), rows, cols);
        MatMut { rows, cols, data }
    }

    /// Mutable row `r`.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reborrow immutably.
    pub fn as_ref(&self) -> MatRef<'_> {
        MatRef { rows: self.rows, cols: self.cols, data: self.data }
    }

    /// Rank-one update `self += a (outer) b`.
    pub fn outer_add(&mut self, a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), self.rows, "outer_add left length {} != rows {}", a.len(), self.rows);
        assert_eq!(b.len(), self.cols, "outer_add right length {} != cols {}", b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            axpy(ar, b, self.row_mut(r));
        }
    }
}

/// Dot product with a fixed four-lane reduction order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch {} vs {}", a.len(), b.len());
    let n = a.len();
    let mut acc = f64x4::splat(0.0);
    let mut i = 0;
    while i + 4 <= n {
        let av = f64x4::from([a[i], a[i + 1], a[i + 2], a[i + 3]]);
        let bv = f64x4::from([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        acc += av * bv;
        i += 4;
    }
    let lanes: [f64; 4] = acc.into();
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    while i < n {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy length mismatch {} vs {}", x.len(), y.len());
    let n = x.len();
    let av = f64x4::splat(alpha);
    let mut i = 0;
    while i + 4 <= n {
        let xv = f64x4::from([x[i], x[i + 1], x[i + 2], x[i + 3]]);
        let yv = f64x4::from([y[i], y[i + 1], y[i + 2], y[i + 3]]);
        let r: [f64; 4] = (yv + av * xv).into();
        y[i] = r[0];
        y[i + 1] = r[1];
        y[i + 2] = r[2];
        y[i + 3] = r[3];
        i += 4;
    }
    while i < n {
        y[i] += alpha * x[i];
        i += 1;
    }
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    crate::math::sqrt(dot(a, a))
}

/// In-place numerically-stable softmax (max-subtracted).
pub fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let mut m = f64::NEG_INFINITY;
    for &x in row.iter() {
        if x > m {
            m = x;
        }
    }
    let mut z = 0.0;
    for x in row.iter_mut() {
        let e = crate::math::exp(*x - m);
        *x = e;
        z += e;
    }
    let inv = 1.0 / z;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// ReLU applied in place.
pub fn relu_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero the gradient of ReLU where the forward activation was clamped.
///
/// `activated` must be the post-ReLU values from the forward pass.
pub fn relu_backward_in_place(activated: &[f64], grad: &mut [f64]) {
    assert_eq!(activated.len(), grad.len(), "relu_backward length mismatch");
    for (g, &a) in grad.iter_mut().zip(activated.iter()) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
