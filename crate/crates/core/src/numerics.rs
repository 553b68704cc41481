//! Dense linear algebra, activations and a central-difference gradient checker.
//!
//! Everything here is 64-bit and row-major. The slice-level helpers
//! (`gemv`, `gemv_t`, `add_outer`, ...) assume shapes were validated when the
//! owning parameter set was built; the `DenseMatrix`/`DenseVector` methods
//! check shapes and return [`ShapeError`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ShapeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self {
            values: vec![value; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64, ShapeError> {
        if self.dim() != other.dim() {
            return Err(ShapeError::new(
                "dot",
                format!("[{}]", self.dim()),
                format!("[{}]", other.dim()),
            ));
        }
        Ok(dot(&self.values, &other.values))
    }

    pub fn hadamard(&self, other: &DenseVector) -> Result<DenseVector, ShapeError> {
        if self.dim() != other.dim() {
            return Err(ShapeError::new(
                "hadamard",
                format!("[{}]", self.dim()),
                format!("[{}]", other.dim()),
            ));
        }
        Ok(DenseVector::from_vec(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        ))
    }

    pub fn squared_norm(&self) -> f64 {
        dot(&self.values, &self.values)
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        Self::from_vec(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ShapeError> {
        if values.len() != rows * cols {
            return Err(ShapeError::new(
                "DenseMatrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(ShapeError::new(
                    "DenseMatrix::from_rows",
                    format!("row of {cols}"),
                    format!("row of {}", r.len()),
                ));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.values[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `M · v`.
    pub fn matvec(&self, v: &DenseVector) -> Result<DenseVector, ShapeError> {
        matvec(self, v)
    }

    /// `Mᵀ · v`.
    pub fn matvec_transposed(&self, v: &DenseVector) -> Result<DenseVector, ShapeError> {
        if self.rows != v.dim() {
            return Err(ShapeError::new(
                "matvec_transposed",
                format!("{}x{} (transposed)", self.rows, self.cols),
                format!("[{}]", v.dim()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        gemv_t(self, v.as_slice(), &mut out);
        Ok(DenseVector::from_vec(out))
    }
}

/// Standard matrix-vector product.
pub fn matvec(m: &DenseMatrix, v: &DenseVector) -> Result<DenseVector, ShapeError> {
    if m.cols != v.dim() {
        return Err(ShapeError::new(
            "matvec",
            format!("{}x{}", m.rows, m.cols),
            format!("[{}]", v.dim()),
        ));
    }
    let mut out = vec![0.0; m.rows];
    gemv(m, v.as_slice(), &mut out);
    Ok(DenseVector::from_vec(out))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = M · x`.
#[inline]
pub fn gemv(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(r), x);
    }
}

/// `out += M · x`.
#[inline]
pub fn gemv_acc(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, x.len());
    debug_assert_eq!(m.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(m.row(r), x);
    }
}

/// `out = Mᵀ · x`.
#[inline]
pub fn gemv_t(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    gemv_t_acc(m, x, out);
}

/// `out += Mᵀ · x`.
#[inline]
pub fn gemv_t_acc(m: &DenseMatrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, x.len());
    debug_assert_eq!(m.cols, out.len());
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(m.row(r)) {
            *o += w * xr;
        }
    }
}

/// `M += scale · a bᵀ`.
#[inline]
pub fn add_outer(m: &mut DenseMatrix, scale: f64, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    let cols = m.cols;
    for (r, &ar) in a.iter().enumerate() {
        let s = scale * ar;
        if s == 0.0 {
            continue;
        }
        for (w, bc) in m.values[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *w += s * bc;
        }
    }
}

/// `y += scale · x`.
#[inline]
pub fn axpy(scale: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `log σ(x)` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Max-subtracted softmax.
pub fn softmax(v: &DenseVector) -> Result<DenseVector, ShapeError> {
    if v.dim() == 0 {
        return Err(ShapeError::new("softmax", "[0]", "nonempty vector"));
    }
    let mut out = vec![0.0; v.dim()];
    softmax_into(v.as_slice(), &mut out);
    Ok(DenseVector::from_vec(out))
}

/// Max-subtracted log-softmax.
pub fn log_softmax(v: &DenseVector) -> Result<DenseVector, ShapeError> {
    if v.dim() == 0 {
        return Err(ShapeError::new("log_softmax", "[0]", "nonempty vector"));
    }
    let logits = v.as_slice();
    let lse = log_sum_exp(logits);
    Ok(DenseVector::from_vec(
        logits.iter().map(|x| x - lse).collect(),
    ))
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Central-difference gradient `(f(x+ε) − f(x−ε)) / 2ε`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &DenseVector, epsilon: f64) -> Result<DenseVector>
where
    F: FnMut(&DenseVector) -> f64,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::Numerical(format!(
            "finite-difference step {epsilon} outside (0, 1e-3]"
        )));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.dim());
    for i in 0..params.dim() {
        let orig = probe.values[i];
        probe.values[i] = orig + epsilon;
        let plus = loss_fn(&probe);
        probe.values[i] = orig - epsilon;
        let minus = loss_fn(&probe);
        probe.values[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while perturbing coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(DenseVector::from_vec(grad))
}

/// Relative disagreement `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both norms fall below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    let scale = na.max(nb);
    if scale < floor {
        0.0
    } else {
        diff / scale
    }
}
