//! Minimal feed-forward network machinery: a row-major matrix type, an MLP
//! with ReLU hidden layers and a linear output layer, reverse-mode gradients
//! through an explicit forward tape, and an Adam optimizer.
//!
//! There is no general autodiff graph. The topology is fixed at construction
//! and `forward` records exactly the intermediate values `backward` needs.
//! Everything is `f64` and evaluation order is fixed, so identical inputs
//! produce bit-identical outputs across runs.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// out = self * x. Panics on shape mismatch; callers validate shapes at
    /// the API boundary.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out[i] = acc;
        }
    }

    /// out = self^T * x.
    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let xi = x[i];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * xi;
            }
        }
    }
}

/// Multi-layer perceptron with ReLU hidden activations and identity output.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Intermediate values recorded by [`Mlp::forward`]: the input, and per layer
/// the pre-activation and post-activation vectors.
#[derive(Debug, Clone)]
pub struct Tape {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

/// Per-parameter gradients with the same shapes as the owning [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds a network with the given layer sizes `[input, hidden.., output]`.
    /// Weights and biases use the uniform fan-in bound `1/sqrt(fan_in)` (the
    /// He-style scaling that dense-layer stacks default to); with it, a
    /// constant-input softmax head starts close to uniform instead of nearly
    /// one-hot, which matters for exploration-free training loops.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "mlp needs at least input and output sizes, got {:?}",
                sizes
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("zero-width layer in {:?}", sizes)));
        }
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let mut w = Matrix::zeros(fan_out, fan_in);
            for v in w.data.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            let mut b = vec![0.0; fan_out];
            for v in b.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp { sizes: sizes.to_vec(), weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Forward pass recording a tape for a later backward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.sizes[0] {
            return Err(Error::Contract(format!(
                "input has {} components, network expects {}",
                input.len(),
                self.sizes[0]
            )));
        }
        let layers = self.weights.len();
        let mut pre = Vec::with_capacity(layers);
        let mut act = Vec::with_capacity(layers);
        let mut cur = input.to_vec();
        for l in 0..layers {
            let mut z = vec![0.0; self.sizes[l + 1]];
            self.weights[l].matvec(&cur, &mut z);
            for (zi, bi) in z.iter_mut().zip(&self.biases[l]) {
                *zi += bi;
            }
            let a = if l + 1 < layers {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect::<Vec<_>>()
            } else {
                z.clone()
            };
            pre.push(z);
            cur = a.clone();
            act.push(a);
        }
        Ok((cur, Tape { input: input.to_vec(), pre, act }))
    }

    /// Forward pass without recording a tape.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Reverse pass. `out_grad` is the gradient of the scalar objective with
    /// respect to the network output; returns parameter gradients and the
    /// gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape, out_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let layers = self.weights.len();
        if tape.pre.len() != layers
            || tape.input.len() != self.sizes[0]
            || tape.pre.iter().zip(&self.sizes[1..]).any(|(p, &s)| p.len() != s)
        {
            return Err(Error::Internal(
                "tape does not match network topology".to_string(),
            ));
        }
        if out_grad.len() != self.output_dim() {
            return Err(Error::Contract(format!(
                "output gradient has {} components, network produces {}",
                out_grad.len(),
                self.output_dim()
            )));
        }
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = out_grad.to_vec();
        for l in (0..layers).rev() {
            if l + 1 < layers {
                for (d, z) in delta.iter_mut().zip(&tape.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let below = if l == 0 { &tape.input } else { &tape.act[l - 1] };
            let gw = &mut grads.weights[l];
            for i in 0..gw.rows {
                let di = delta[i];
                let row = &mut gw.data[i * gw.cols..(i + 1) * gw.cols];
                for (g, x) in row.iter_mut().zip(below) {
                    *g += di * x;
                }
            }
            for (g, d) in grads.biases[l].iter_mut().zip(&delta) {
                *g += d;
            }
            let mut next = vec![0.0; self.sizes[l]];
            self.weights[l].matvec_transpose(&delta, &mut next);
            delta = next;
        }
        Ok((grads, delta))
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Flat view of parameters: weights then bias per layer, row-major.
    pub fn param(&self, mut idx: usize) -> f64 {
        for l in 0..self.weights.len() {
            let wl = self.weights[l].data.len();
            if idx < wl {
                return self.weights[l].data[idx];
            }
            idx -= wl;
            let bl = self.biases[l].len();
            if idx < bl {
                return self.biases[l][idx];
            }
            idx -= bl;
        }
        panic!("parameter index out of range");
    }

    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in 0..self.weights.len() {
            let wl = self.weights[l].data.len();
            if idx < wl {
                return &mut self.weights[l].data[idx];
            }
            idx -= wl;
            let bl = self.biases[l].len();
            if idx < bl {
                return &mut self.biases[l][idx];
            }
            idx -= bl;
        }
        panic!("parameter index out of range");
    }
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in self.weights.iter_mut() {
            for x in w.data.iter_mut() {
                *x *= s;
            }
        }
        for b in self.biases.iter_mut() {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
    }

    /// Flattened in the same order as [`Mlp::param`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.data.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Adam configuration; defaults match the common `(0.9, 0.999, 1e-8)` setting.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimizer state for one [`Mlp`]. `step` applies a descent update, so
/// callers minimizing a loss pass the loss gradient directly and callers
/// maximizing an objective pass its negation.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    t: u64,
    m: MlpGrads,
    v: MlpGrads,
}

impl AdamState {
    pub fn new(net: &Mlp, cfg: AdamConfig) -> Self {
        AdamState { cfg, t: 0, m: MlpGrads::zeros_like(net), v: MlpGrads::zeros_like(net) }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `net` in place. Rejects non-finite
    /// gradients before touching any parameter.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if grads.weights.len() != net.weights.len()
            || grads
                .weights
                .iter()
                .zip(&net.weights)
                .any(|(g, w)| g.rows != w.rows || g.cols != w.cols)
        {
            return Err(Error::Internal("gradient shapes do not match network".to_string()));
        }
        if !grads.is_finite() {
            return Err(Error::Diverged("non-finite gradient passed to adam".to_string()));
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let scale = self.cfg.lr / bc1;
        for l in 0..net.weights.len() {
            for i in 0..net.weights[l].data.len() {
                let g = grads.weights[l].data[i];
                let m = &mut self.m.weights[l].data[i];
                let v = &mut self.v.weights[l].data[i];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                net.weights[l].data[i] -= scale * *m / ((*v / bc2).sqrt() + self.cfg.eps);
            }
            for i in 0..net.biases[l].len() {
                let g = grads.biases[l][i];
                let m = &mut self.m.biases[l][i];
                let v = &mut self.v.biases[l][i];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                net.biases[l][i] -= scale * *m / ((*v / bc2).sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

/// Polyak average `target <- tau * source + (1 - tau) * target`.
pub fn polyak_blend(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if target.sizes != source.sizes {
        return Err(Error::Internal("polyak blend across different topologies".to_string()));
    }
    for (tw, sw) in target.weights.iter_mut().zip(&source.weights) {
        for (t, s) in tw.data.iter_mut().zip(&sw.data) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
    for (tb, sb) in target.biases.iter_mut().zip(&source.biases) {
        for (t, s) in tb.iter_mut().zip(sb) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

/// Central finite difference of a scalar function at `x`, used by tests to
/// cross-check analytic gradients.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest relative error between analytic and finite-difference gradients,
/// ignoring coordinates where both are below `floor`.
pub fn max_rel_err(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &d)| {
            let denom = a.abs().max(d.abs());
            if denom < floor {
                0.0
            } else {
                (a - d).abs() / denom
            }
        })
        .fold(0.0, f64::max)
    }
