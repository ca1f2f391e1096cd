//! Minimal dense f64 kernel: forward/backward for the handful of layers the
//! model needs, a gradient-descent step, finite-difference checking, and
//! flat-binary checkpoints.
//!
//! The model graph is small and fixed, so gradients are explicit per-layer
//! formulas rather than a general tape. Everything is double precision and
//! single-threaded for bit reproducibility.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BCE_EPS: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    /// Glorot uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let out_row = i * other.cols;
                let other_row = k * other.cols;
                for j in 0..other.cols {
                    out.data[out_row + j] += a * other.data[other_row + j];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *out.at_mut(c, r) = self.at(r, c);
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &Matrix, factor: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

/// A trainable array with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows, value.cols);
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Plain gradient descent with optional momentum; velocity is keyed by
/// parameter name and grows on first sight of a parameter.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub step: u64,
    velocity: BTreeMap<String, Matrix>,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        OptimState {
            learning_rate,
            momentum,
            step: 0,
            velocity: BTreeMap::new(),
        }
    }
}

/// Apply one descent step to every parameter and zero the gradients.
pub fn opt_step(params: &mut [&mut Parameter], state: &mut OptimState) {
    for p in params.iter_mut() {
        if state.momentum == 0.0 {
            p.value.add_scaled(&p.grad, -state.learning_rate);
        } else {
            let v = state
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| Matrix::zeros(p.grad.rows, p.grad.cols));
            assert!(v.same_shape(&p.grad), "velocity shape drift for {}", p.name);
            for (vi, gi) in v.data.iter_mut().zip(&p.grad.data) {
                *vi = state.momentum * *vi + gi;
            }
            p.value.add_scaled(v, -state.learning_rate);
        }
        p.zero_grad();
    }
    state.step += 1;
}

/// y = x W + B with B broadcast over rows.
pub fn affine(x: &Matrix, w: &Parameter, b: &Parameter) -> Result<Matrix> {
    if x.cols != w.value.rows || b.value.cols != w.value.cols || b.value.rows != 1 {
        return Err(Error::ShapeMismatch {
            op: "affine".to_string(),
            message: format!(
                "x {}x{}, W {}x{}, B {}x{}",
                x.rows, x.cols, w.value.rows, w.value.cols, b.value.rows, b.value.cols
            ),
        });
    }
    let mut y = x.matmul(&w.value);
    for r in 0..y.rows {
        for c in 0..y.cols {
            *y.at_mut(r, c) += b.value.at(0, c);
        }
    }
    Ok(y)
}

/// Accumulates dW = x^T dy and dB = column-sum(dy); returns dx = dy W^T.
pub fn affine_backward(x: &Matrix, w: &mut Parameter, b: &mut Parameter, dy: &Matrix) -> Matrix {
    w.grad.add_scaled(&x.transpose().matmul(dy), 1.0);
    for r in 0..dy.rows {
        for c in 0..dy.cols {
            *b.grad.at_mut(0, c) += dy.at(r, c);
        }
    }
    dy.matmul(&w.value.transpose())
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0;
        }
    });
    y
}

/// `y` is the relu output.
pub fn relu_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, out) in dx.data.iter_mut().zip(&y.data) {
        if *out <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
    y
}

/// `y` is the sigmoid output.
pub fn sigmoid_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, s) in dx.data.iter_mut().zip(&y.data) {
        *d *= s * (1.0 - s);
    }
    dx
}

/// Row-wise softmax, stabilized by subtracting the row max.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for r in 0..y.rows {
        let row = y.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    y
}

/// `y` is the softmax output; dx_r = y_r ∘ (dy_r − dot(dy_r, y_r)).
pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows, y.cols);
    for r in 0..y.rows {
        let dot: f64 = y.row(r).iter().zip(dy.row(r)).map(|(a, b)| a * b).sum();
        for c in 0..y.cols {
            *dx.at_mut(r, c) = y.at(r, c) * (dy.at(r, c) - dot);
        }
    }
    dx
}

/// Mean binary cross-entropy with predictions clamped to [eps, 1-eps].
/// Returns the loss and its exact gradient w.r.t. the (clamped) predictions.
pub fn bce_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch {
            op: "bce_loss".to_string(),
            message: format!(
                "pred {}x{} vs target {}x{}",
                pred.rows, pred.cols, target.rows, target.cols
            ),
        });
    }
    let n = pred.data.len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(pred.rows, pred.cols);
    for (k, (&p, &t)) in pred.data.iter().zip(&target.data).enumerate() {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.data[k] = (p - t) / (p * (1.0 - p)) / n;
    }
    Ok((loss / n, grad))
}

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Compare analytic gradients against central differences.
///
/// `loss_fn` must zero the gradients it owns, run the model, and accumulate
/// fresh gradients, returning the loss; it is called repeatedly at perturbed
/// parameter values (those gradients are ignored). Up to 50 evenly spaced
/// coordinates are sampled per parameter.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &mut [Parameter],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut [Parameter]) -> Result<f64>,
{
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss { value: base });
    }
    let analytic: Vec<Matrix> = params.iter().map(|p| p.grad.clone()).collect();

    let mut max_rel_err = 0.0f64;
    let mut worst_param = String::new();
    let mut coords_checked = 0usize;
    for pi in 0..params.len() {
        let len = analytic[pi].data.len();
        let sample: Vec<usize> = if len <= 50 {
            (0..len).collect()
        } else {
            (0..50).map(|k| k * len / 50).collect()
        };
        for &ci in &sample {
            let original = params[pi].value.data[ci];
            params[pi].value.data[ci] = original + h;
            let plus = loss_fn(params)?;
            params[pi].value.data[ci] = original - h;
            let minus = loss_fn(params)?;
            params[pi].value.data[ci] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: if plus.is_finite() { minus } else { plus },
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data[ci];
            let rel = if a.abs() < 1e-8 && numeric.abs() < 1e-8 {
                0.0
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            coords_checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_param = params[pi].name.clone();
            }
        }
    }
    // Restore the analytic gradients for the unperturbed point.
    for (p, g) in params.iter_mut().zip(analytic) {
        p.grad = g;
    }
    Ok(GradCheckReport {
        pass: max_rel_err < tol,
        max_rel_err,
        worst_param,
        coords_checked,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ShapeEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Write `<stem>.bin` (little-endian f64, parameters concatenated in order)
/// and `<stem>.json` (shape manifest).
pub fn save_checkpoint(dir: &Path, stem: &str, params: &[&Parameter]) -> Result<()> {
    let manifest: Vec<ShapeEntry> = params
        .iter()
        .map(|p| ShapeEntry {
            name: p.name.clone(),
            rows: p.value.rows,
            cols: p.value.cols,
        })
        .collect();
    let json_path = dir.join(format!("{stem}.json"));
    let bin_path = dir.join(format!("{stem}.bin"));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let mut bytes = Vec::new();
    for p in params {
        for v in &p.value.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&bin_path, bytes).map_err(|e| Error::io(bin_path.display().to_string(), e))
}

/// Load a checkpoint written by [`save_checkpoint`], validating names and
/// shapes against the provided parameters.
pub fn load_checkpoint(dir: &Path, stem: &str, params: &mut [&mut Parameter]) -> Result<()> {
    let json_path = dir.join(format!("{stem}.json"));
    let bin_path = dir.join(format!("{stem}.bin"));
    let json = fs::read_to_string(&json_path)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let manifest: Vec<ShapeEntry> =
        serde_json::from_str(&json).map_err(|e| Error::MalformedHeader {
            message: format!("checkpoint manifest: {e}"),
        })?;
    if manifest.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "load_checkpoint".to_string(),
            message: format!(
                "manifest has {} parameters, expected {}",
                manifest.len(),
                params.len()
            ),
        });
    }
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let mut offset = 0usize;
    for (entry, p) in manifest.iter().zip(params.iter_mut()) {
        if entry.name != p.name || entry.rows != p.value.rows || entry.cols != p.value.cols {
            return Err(Error::ShapeMismatch {
                op: "load_checkpoint".to_string(),
                message: format!(
                    "expected {} {}x{}, manifest has {} {}x{}",
                    p.name, p.value.rows, p.value.cols, entry.name, entry.rows, entry.cols
                ),
            });
        }
        let n = entry.rows * entry.cols;
        let need = n * 8;
        if offset + need > bytes.len() {
            return Err(Error::ShapeMismatch {
                op: "load_checkpoint".to_string(),
                message: "binary file shorter than manifest".to_string(),
            });
        }
        for k in 0..n {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&bytes[offset + k * 8..offset + k * 8 + 8]);
            p.value.data[k] = f64::from_le_bytes(buf);
        }
        offset += need;
    }
    if offset != bytes.len() {
        return Err(Error::ShapeMismatch {
            op: "load_checkpoint".to_string(),
            message: "binary file longer than manifest".to_string(),
        });
    }
    Ok(())
}
