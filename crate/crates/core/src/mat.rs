//! Dense row-major `f64` matrix kernel with hand-written backward passes.
//!
//! The model is a fixed DAG, so each block carries an explicit
//! forward/backward pair instead of a general autodiff tape; the
//! finite-difference checker in [`grad_check`] verifies every analytic
//! gradient against central differences.
//!
//! Shape mismatches are programming errors and panic. Non-finite entries are
//! rejected at construction so NaN/Inf cannot propagate silently.
//!
//! Reductions along a token axis go through [`canonical_sum`], which sorts
//! addends before folding. That makes pooled vectors and fused bilinear
//! features bit-identical under any permutation of input token rows, not
//! just equal up to rounding.

use thiserror::Error;

use crate::rng::{mix, unit_f64, SplitMix64};

#[derive(Debug, Error)]
pub enum MatError {
    #[error("loss is not finite at the probe point")]
    NonFiniteLoss,
}

/// Sum that is invariant under permutation of the addends: sorts by total
/// order first, then folds left. Cost is O(n log n); only used on token-axis
/// reductions where permutation invariance must hold bit-exactly.
pub fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Build from a row-major vector. Panics on length mismatch or
    /// non-finite entries; every op funnels through here.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix must be at least 1x1, got {rows}x{cols}");
        assert_eq!(data.len(), rows * cols, "data length {} != {rows}x{cols}", data.len());
        assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite entry in {rows}x{cols} matrix"
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix must be at least 1x1, got {rows}x{cols}");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data)
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
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // rows, cols >= 1 by construction
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Standard product; contraction runs over the fixed feature axis.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = vec![0.0; self.rows * other.cols];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Mat::from_vec(self.rows, other.cols, out)
    }

    pub fn transpose(&self) -> Mat {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Mat::from_vec(self.cols, self.rows, out)
    }

    pub fn add(&self, other: &Mat) -> Mat {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Mat) -> Mat {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    fn zip_with(&self, other: &Mat, op: &str, f: impl Fn(f64, f64) -> f64) -> Mat {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op} shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Mat::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `self += other * s` without reallocating.
    pub fn add_scaled_assign(&mut self, other: &Mat, s: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn relu(&self) -> Mat {
        self.map(|v| v.max(0.0))
    }

    /// Elementwise ReLU Jacobian applied to an upstream gradient:
    /// passes `d` where the pre-activation was strictly positive.
    pub fn relu_backward(pre_activation: &Mat, d: &Mat) -> Mat {
        pre_activation.zip_with(d, "relu_backward", |p, g| if p > 0.0 { g } else { 0.0 })
    }

    /// Row-wise softmax of `scale * x`, stabilized by max subtraction.
    /// Denominators use [`canonical_sum`] so each output row is exactly
    /// invariant under permutation of that row's entries.
    pub fn softmax_rows(&self, scale: f64) -> Mat {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            let row = self.row(i);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(scale * v));
            let mut exps: Vec<f64> = row.iter().map(|&v| (scale * v - m).exp()).collect();
            let mut addends = exps.clone();
            let denom = canonical_sum(&mut addends);
            for e in &mut exps {
                *e /= denom;
            }
            out[i * self.cols..(i + 1) * self.cols].copy_from_slice(&exps);
        }
        Mat::from_vec(self.rows, self.cols, out)
    }

    /// Softmax over all entries at once (single normalization), used by the
    /// auditing `flat` attention axis.
    pub fn softmax_flat(&self, scale: f64) -> Mat {
        let m = self.data.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(scale * v));
        let mut exps: Vec<f64> = self.data.iter().map(|&v| (scale * v - m).exp()).collect();
        let mut addends = exps.clone();
        let denom = canonical_sum(&mut addends);
        for e in &mut exps {
            *e /= denom;
        }
        Mat::from_vec(self.rows, self.cols, exps)
    }

    /// Backward of [`Mat::softmax_rows`]: given the softmax output `y` and
    /// upstream `d`, returns the gradient with respect to the raw input.
    pub fn softmax_rows_backward(y: &Mat, d: &Mat, scale: f64) -> Mat {
        assert_eq!(y.shape(), d.shape(), "softmax backward shape mismatch");
        let mut out = vec![0.0; y.data.len()];
        for i in 0..y.rows {
            let y_row = y.row(i);
            let d_row = d.row(i);
            let dot: f64 = y_row.iter().zip(d_row).map(|(&a, &b)| a * b).sum();
            for j in 0..y.cols {
                out[i * y.cols + j] = scale * y_row[j] * (d_row[j] - dot);
            }
        }
        Mat::from_vec(y.rows, y.cols, out)
    }

    /// Backward of [`Mat::softmax_flat`].
    pub fn softmax_flat_backward(y: &Mat, d: &Mat, scale: f64) -> Mat {
        assert_eq!(y.shape(), d.shape(), "softmax backward shape mismatch");
        let dot: f64 = y.data.iter().zip(&d.data).map(|(&a, &b)| a * b).sum();
        let data = y
            .data
            .iter()
            .zip(&d.data)
            .map(|(&yv, &dv)| scale * yv * (dv - dot))
            .collect();
        Mat::from_vec(y.rows, y.cols, data)
    }

    /// Weighted sum of rows, `w * self` for a 1-by-rows weight vector, with
    /// the token-axis reduction done canonically per output component.
    pub fn weighted_row_sum(&self, weights: &[f64]) -> Mat {
        assert_eq!(weights.len(), self.rows, "weighted_row_sum length mismatch");
        let mut out = vec![0.0; self.cols];
        let mut addends = vec![0.0; self.rows];
        for (j, o) in out.iter_mut().enumerate() {
            for (i, slot) in addends.iter_mut().enumerate() {
                *slot = weights[i] * self.at(i, j);
            }
            *o = canonical_sum(&mut addends);
        }
        Mat::from_vec(1, self.cols, out)
    }

    /// Column-wise mean over rows with a canonical token-axis reduction.
    pub fn mean_rows(&self) -> Mat {
        let inv = 1.0 / self.rows as f64;
        let mut out = vec![0.0; self.cols];
        let mut addends = vec![0.0; self.rows];
        for (j, o) in out.iter_mut().enumerate() {
            for (i, slot) in addends.iter_mut().enumerate() {
                *slot = self.at(i, j);
            }
            *o = canonical_sum(&mut addends) * inv;
        }
        Mat::from_vec(1, self.cols, out)
    }

    /// Stack 1-by-d rows into an n-by-d matrix.
    pub fn vstack(rows: &[Mat]) -> Mat {
        assert!(!rows.is_empty(), "vstack of no rows");
        let cols = rows[0].cols;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.rows, 1, "vstack expects 1-row matrices");
            assert_eq!(r.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&r.data);
        }
        Mat::from_vec(rows.len(), cols, data)
    }
}

/// A learnable tensor paired with its gradient buffer.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Mat,
    pub grad: Mat,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Mat) -> Self {
        let grad = Mat::zeros(value.rows(), value.cols());
        Self { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Xavier-uniform initialization for a fan_in x fan_out weight matrix.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut SplitMix64) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.next_range(-limit, limit))
}

/// Zero-mean Gaussian initialization with the given standard deviation.
pub fn gaussian_init(rows: usize, cols: usize, std: f64, rng: &mut SplitMix64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| std * rng.next_gaussian())
}

/// Inverted dropout driven by a counter-based RNG: the mask for a given
/// (seed, step, site, index) key is a pure function, so the backward pass
/// recomputes the identical mask without storing it. Disabled during
/// evaluation and gradient checks.
#[derive(Debug, Clone, Copy)]
pub enum Dropout {
    Off,
    On { seed: u64, step: u64, rate: f64 },
}

impl Dropout {
    #[inline]
    fn keep_scale(&self, site: u64, idx: u64) -> f64 {
        match *self {
            Dropout::Off => 1.0,
            Dropout::On { seed, step, rate } => {
                if unit_f64(mix(&[seed, step, site, idx])) < rate {
                    0.0
                } else {
                    1.0 / (1.0 - rate)
                }
            }
        }
    }

    /// Apply the mask for `site` elementwise. Identical between the forward
    /// and backward calls of the same step.
    pub fn apply(&self, m: &Mat, site: u64) -> Mat {
        match self {
            Dropout::Off => m.clone(),
            Dropout::On { .. } => {
                let data = m
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(idx, &v)| v * self.keep_scale(site, idx as u64))
                    .collect();
                Mat::from_vec(m.rows(), m.cols(), data)
            }
        }
    }
}

/// Dense layer `y = x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    pub fn init(name: &str, input: usize, output: usize, rng: &mut SplitMix64) -> Self {
        Self {
            weight: ParamTensor::new(format!("{name}.weight"), xavier_uniform(input, output, rng)),
            bias: ParamTensor::new(format!("{name}.bias"), Mat::zeros(1, output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.matmul(&self.weight.value);
        for i in 0..y.rows() {
            for j in 0..y.cols() {
                let v = y.at(i, j) + self.bias.value.at(0, j);
                y.set(i, j, v);
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Mat, d_out: &Mat) -> Mat {
        let d_w = x.transpose().matmul(d_out);
        self.weight.grad.add_scaled_assign(&d_w, 1.0);
        for j in 0..d_out.cols() {
            let mut s = 0.0;
            for i in 0..d_out.rows() {
                s += d_out.at(i, j);
            }
            let v = self.bias.grad.at(0, j) + s;
            self.bias.grad.set(0, j, v);
        }
        d_out.matmul(&self.weight.value.transpose())
    }
}

/// Two-layer feed-forward block, `Linear -> ReLU -> Linear`, with dropout on
/// the hidden activation during training.
#[derive(Debug, Clone)]
pub struct Ffn {
    pub lin1: Linear,
    pub lin2: Linear,
}

/// Intermediate activations needed by [`Ffn::backward`].
pub struct FfnCache {
    x: Mat,
    hidden_pre: Mat,
    hidden_dropped: Mat,
}

impl Ffn {
    pub fn init(name: &str, dim: usize, hidden: usize, out: usize, rng: &mut SplitMix64) -> Self {
        Self {
            lin1: Linear::init(&format!("{name}.lin1"), dim, hidden, rng),
            lin2: Linear::init(&format!("{name}.lin2"), hidden, out, rng),
        }
    }

    pub fn forward(&self, x: &Mat, dropout: &Dropout, site: u64) -> (Mat, FfnCache) {
        let hidden_pre = self.lin1.forward(x);
        let hidden = hidden_pre.relu();
        let hidden_dropped = dropout.apply(&hidden, site);
        let out = self.lin2.forward(&hidden_dropped);
        (out, FfnCache { x: x.clone(), hidden_pre, hidden_dropped })
    }

    pub fn backward(&mut self, cache: &FfnCache, d_out: &Mat, dropout: &Dropout, site: u64) -> Mat {
        let d_hidden_dropped = self.lin2.backward(&cache.hidden_dropped, d_out);
        let d_hidden = dropout.apply(&d_hidden_dropped, site);
        let d_pre = Mat::relu_backward(&cache.hidden_pre, &d_hidden);
        self.lin1.backward(&cache.x, &d_pre)
    }
}

/// A scalar-valued problem whose analytic gradients can be checked against
/// central finite differences. `loss` must be a pure forward evaluation;
/// `loss_and_grad` additionally fills every parameter's gradient buffer.
pub trait Differentiable: Clone {
    fn loss(&self) -> f64;
    fn loss_and_grad(&mut self) -> f64;
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;
}

/// Result of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: (String, usize),
    pub probes: usize,
}

/// Compare analytic gradients with central finite differences.
///
/// For each parameter tensor, probes `probes_per_tensor` coordinates (all of
/// them when the tensor is small) and reports the maximum of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<D: Differentiable>(
    subject: &D,
    probes_per_tensor: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, MatError> {
    let mut analytic = subject.clone();
    let loss0 = analytic.loss_and_grad();
    if !loss0.is_finite() {
        return Err(MatError::NonFiniteLoss);
    }

    let mut rng = SplitMix64::new(seed);
    let mut max_rel_err = 0.0;
    let mut worst = (String::new(), 0usize);
    let mut probes = 0usize;

    let n_tensors = subject.params().len();
    for t in 0..n_tensors {
        let len = subject.params()[t].value.len();
        let coords: Vec<usize> = if len <= probes_per_tensor {
            (0..len).collect()
        } else {
            // Sample distinct coordinates.
            let mut all: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut all);
            all.truncate(probes_per_tensor);
            all
        };
        for k in coords {
            let eval = |delta: f64| -> f64 {
                let mut probe = subject.clone();
                probe.params_mut()[t].value.data_mut()[k] += delta;
                probe.loss()
            };
            let lp = eval(h);
            let lm = eval(-h);
            if !lp.is_finite() || !lm.is_finite() {
                return Err(MatError::NonFiniteLoss);
            }
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.params()[t].grad.data()[k];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            probes += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = (analytic.params()[t].name.clone(), k);
            }
        }
    }
    Ok(GradCheckReport { max_rel_err, worst, probes })
}
