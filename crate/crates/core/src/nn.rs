//! Small dense-network toolkit shared by the encoder and the matcher:
//! parameter traversal, optimizers, layer norm, GELU, initialization and a
//! finite-difference gradient checker.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_f64s, encode_f64s};
use crate::error::{Error, Result};

/// A fixed, ordered collection of parameter tensors. Gradients use the same
/// type, so the i-th slice of a gradient matches the i-th slice of the model.
pub trait Params: Clone {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, k: f64) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x *= k;
            }
        }
    }

    fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    /// Base64 blobs, one per tensor, in traversal order.
    fn to_blobs(&self) -> Vec<String> {
        self.slices().iter().map(|s| encode_f64s(s)).collect()
    }

    /// Overwrites the tensors from blobs produced by [`Params::to_blobs`] on
    /// an identically shaped value.
    fn load_blobs(&mut self, blobs: &[String]) -> Result<()> {
        let mut slices = self.slices_mut();
        if slices.len() != blobs.len() {
            return Err(Error::Corrupt(format!(
                "expected {} parameter tensors, found {}",
                slices.len(),
                blobs.len()
            )));
        }
        for (s, b) in slices.iter_mut().zip(blobs) {
            let v = decode_f64s(b, s.len())?;
            s.copy_from_slice(&v);
        }
        Ok(())
    }
}

pub(crate) fn sl1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn sl2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

pub(crate) fn sl1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn sl2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Momentum,
    Adam,
    AdaBelief,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Momentum coefficient, or the first-moment decay for Adam/AdaBelief.
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

pub struct Optimizer {
    config: OptimConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<P: Params>(config: OptimConfig, params: &P) -> Self {
        let shapes: Vec<Vec<f64>> = params.slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Optimizer {
            config,
            step: 0,
            v: shapes.clone(),
            m: shapes,
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        let c = self.config;
        self.step += 1;
        let clip = match c.clip_norm {
            Some(max) => {
                let n = grads.norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let g = g[i] * clip;
                match c.kind {
                    OptimizerKind::Momentum => {
                        m[i] = c.beta1 * m[i] + g;
                        p[i] -= c.lr * m[i];
                    }
                    OptimizerKind::Adam => {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                        p[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                    }
                    OptimizerKind::AdaBelief => {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                        let d = g - m[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * d * d + c.eps;
                        p[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                    }
                }
            }
        }
    }
}

/// Uniform Glorot initialization.
pub fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

pub fn uniform<R: Rng>(rows: usize, cols: usize, a: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer normalization with gain `g` and bias `b`.
pub fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * g + b;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dg, db)`.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    g: &Array1<f64>,
    cache: &LayerNormCache,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dg = (dy * &cache.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let dxhat = dy * g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let xh = cache.xhat.row(i);
        let dh = dxhat.row(i);
        let mean_dh = dh.sum() / d;
        let mean_dh_xh = dh.dot(&xh) / d;
        let s = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = s * (dh[j] - mean_dh - xh[j] * mean_dh_xh);
        }
    }
    (dx, dg, db)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// `x · w + b` for a batch of rows.
pub fn affine(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Per-tensor relative error between an analytic and a numeric gradient:
/// `max_i |a_i - n_i| / max(max|a|, max|n|, 1e-6)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-6f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central finite differences of `loss` for every parameter, compared with
/// `analytic`. Returns one relative error per tensor.
pub fn check_gradients<P: Params>(params: &P, analytic: &P, h: f64, mut loss: impl FnMut(&P) -> f64) -> Vec<f64> {
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
    let mut errors = Vec::with_capacity(sizes.len());
    for (t, &n) in sizes.iter().enumerate() {
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.slices()[t][i];
            probe.slices_mut()[t][i] = orig + h;
            let up = loss(&probe);
            probe.slices_mut()[t][i] = orig - h;
            let down = loss(&probe);
            probe.slices_mut()[t][i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        errors.push(relative_error(analytic.slices()[t], &numeric));
    }
    errors
}
