//! Dense row-major `f64` matrices and trainable parameters.
//!
//! Everything at desk scale fits in a flat `Vec<f64>`; there are no sparse
//! paths and no broadcasting beyond the row-bias case handled by the tape.

use crate::error::{Error, Result};

/// Dense real matrix with an optional gradient accumulator of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            grad: None,
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::parameter(format!(
                "value buffer of length {} does not fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Tensor2D {
            rows,
            cols,
            values,
            grad: None,
        })
    }

    /// Row-major construction from nested slices; rows must be equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::parameter("ragged rows in matrix literal"));
            }
            values.extend_from_slice(row);
        }
        Tensor2D::from_values(r, c, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2D::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill(&mut self, value: f64) {
        self.values.fill(value);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Gradient buffer, if one has been accumulated.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocating zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let len = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.values.len());
        let g = self.grad_mut();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    /// grad += factor * values; the weight-decay contribution.
    pub fn add_scaled_values_to_grad(&mut self, factor: f64) {
        let len = self.values.len();
        let grad = self.grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, v) in grad.iter_mut().zip(&self.values) {
            *g += factor * v;
        }
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }
}

/// C = A . B with the usual inner-dimension requirement.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            context: "matmul",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = &a.values[i * a.cols..(i + 1) * a.cols];
        let out_row = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.values[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// C = A . B^T; used by the shared classifier whose weight is stored [K x c].
pub fn matmul_nt(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch {
            context: "matmul_nt",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = Tensor2D::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = &a.values[i * a.cols..(i + 1) * a.cols];
        for j in 0..b.rows {
            let b_row = &b.values[j * b.cols..(j + 1) * b.cols];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out.values[i * b.rows + j] = acc;
        }
    }
    Ok(out)
}

/// Elementwise max(0, x).
pub fn relu(a: &Tensor2D) -> Tensor2D {
    let mut out = a.clone();
    out.grad = None;
    for v in &mut out.values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Elementwise sum of two same-shape matrices.
pub fn add(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "add",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = a.clone();
    out.grad = None;
    for (o, v) in out.values.iter_mut().zip(&b.values) {
        *o += v;
    }
    Ok(out)
}

/// Trainable tensor plus its momentum buffer.
///
/// The buffer is allocated lazily at the first optimizer step so that a
/// freshly initialized model serializes without optimizer state.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub tensor: Tensor2D,
    momentum: Option<Vec<f64>>,
}

impl Parameter {
    pub fn new(tensor: Tensor2D) -> Self {
        Parameter {
            tensor,
            momentum: None,
        }
    }

    pub fn momentum_buffer(&self) -> Option<&[f64]> {
        self.momentum.as_deref()
    }
}

/// One SGD-with-momentum step over the given parameters:
/// v <- momentum * v + g; p <- p - lr * v. Gradients are zeroed afterwards.
///
/// Parameters whose gradient was never touched this step are treated as
/// having zero gradient (their velocity still decays).
pub fn sgd_step(params: &mut [&mut Parameter], lr: f64, momentum: f64) {
    for param in params.iter_mut() {
        let n = param.tensor.len();
        let buf = param.momentum.get_or_insert_with(|| vec![0.0; n]);
        match param.tensor.grad() {
            Some(grad) => {
                for (v, g) in buf.iter_mut().zip(grad) {
                    *v = momentum * *v + g;
                }
            }
            None => {
                for v in buf.iter_mut() {
                    *v *= momentum;
                }
            }
        }
        for (p, v) in param.tensor.values_mut().iter_mut().zip(param.momentum.as_ref().unwrap()) {
            *p -= lr * v;
        }
        param.tensor.zero_grad();
    }
}
