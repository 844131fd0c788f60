//! Small two-layer perceptrons with hand-written backward passes.
//!
//! [`DecoderMLP`] maps a compact per-Gaussian feature to a distribution over
//! codebook indices; [`SmoothingMLP`] maps a Gaussian position to a smoothed
//! compact feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

pub const HIDDEN_WIDTH: usize = 64;
/// Octaves of the sinusoidal position encoding.
pub const POSITION_FREQUENCIES: usize = 4;
/// 3 raw coordinates plus a sin/cos pair per axis and octave.
pub const POSITION_ENCODING_DIM: usize = 3 + 3 * 2 * POSITION_FREQUENCIES;

/// Fully connected layer, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// writes the input gradient into `grad_in`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut Dense, grad_in: Option<&mut [f64]>) {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(grad_in) = grad_in {
            grad_in.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in grad_out.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                for (gi, w) in grad_in.iter_mut().zip(row) {
                    *gi += g * w;
                }
            }
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    fn load_from(&mut self, src: &mut &[f64]) {
        let (w, rest) = src.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        let (b, rest) = rest.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        *src = rest;
    }

    fn axpy(&mut self, alpha: f64, other: &Dense) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += alpha * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += alpha * b;
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// `input → ReLU hidden → linear output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayer {
    pub hidden: Dense,
    pub output: Dense,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct TwoLayerTrace {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl TwoLayer {
    fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            hidden: Dense::zeros(inputs, hidden),
            output: Dense::zeros(hidden, outputs),
        }
    }

    fn random(inputs: usize, hidden: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Dense::glorot(inputs, hidden, rng),
            output: Dense::glorot(hidden, outputs, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> TwoLayerTrace {
        let mut pre_hidden = vec![0.0; self.hidden.outputs];
        self.hidden.forward(x, &mut pre_hidden);
        let hidden: Vec<f64> = pre_hidden.iter().map(|&v| v.max(0.0)).collect();
        let mut output = vec![0.0; self.output.outputs];
        self.output.forward(&hidden, &mut output);
        TwoLayerTrace {
            pre_hidden,
            hidden,
            output,
        }
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the linear output).
    pub fn backward(
        &self,
        x: &[f64],
        trace: &TwoLayerTrace,
        grad_out: &[f64],
        grad: &mut TwoLayer,
        grad_in: Option<&mut [f64]>,
    ) {
        let mut grad_hidden = vec![0.0; self.hidden.outputs];
        self.output
            .backward(&trace.hidden, grad_out, &mut grad.output, Some(&mut grad_hidden));
        for (g, &pre) in grad_hidden.iter_mut().zip(&trace.pre_hidden) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        self.hidden.backward(x, &grad_hidden, &mut grad.hidden, grad_in);
    }

    fn param_count(&self) -> usize {
        self.hidden.param_count() + self.output.param_count()
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        self.hidden.flatten_into(out);
        self.output.flatten_into(out);
    }

    fn load_from(&mut self, src: &mut &[f64]) {
        self.hidden.load_from(src);
        self.output.load_from(src);
    }

    fn axpy(&mut self, alpha: f64, other: &TwoLayer) {
        self.hidden.axpy(alpha, &other.hidden);
        self.output.axpy(alpha, &other.output);
    }

    fn is_finite(&self) -> bool {
        self.hidden.is_finite() && self.output.is_finite()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient w.r.t. the logits given the gradient w.r.t. `probs = softmax(logits)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Compact feature → softmax over `K` codebook indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderMLP {
    pub net: TwoLayer,
}

impl DecoderMLP {
    pub fn zeros(feature_dim: usize, codebook_size: usize) -> Self {
        Self {
            net: TwoLayer::zeros(feature_dim, HIDDEN_WIDTH, codebook_size),
        }
    }

    pub fn random(feature_dim: usize, codebook_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: TwoLayer::random(feature_dim, HIDDEN_WIDTH, codebook_size, &mut rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.net.hidden.inputs
    }

    pub fn codebook_size(&self) -> usize {
        self.net.output.outputs
    }

    pub fn logits(&self, s: &[f64]) -> Vec<f64> {
        self.net.forward(s).output
    }

    pub fn decode(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.feature_dim(), s.len())?;
        Ok(softmax(&self.logits(s)))
    }

    pub fn decode_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|s| self.decode(s)).collect()
    }

    /// Arg-max decoded index; ties resolve to the lowest index.
    pub fn predict(&self, s: &[f64]) -> Result<usize> {
        let p = self.decode(s)?;
        Ok(argmax(&p))
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.net.flatten_into(out)
    }

    pub fn load_from(&mut self, src: &mut &[f64]) {
        self.net.load_from(src)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim(), self.codebook_size())
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.net.axpy(alpha, &other.net)
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `[x, y, z, sin(2^k π x), cos(2^k π x), ...]` for k in 0..4.
pub fn encode_position(p: &[f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(POSITION_ENCODING_DIM);
    out.extend_from_slice(p);
    for k in 0..POSITION_FREQUENCIES {
        let freq = (1u32 << k) as f64 * std::f64::consts::PI;
        for &c in p {
            out.push((freq * c).sin());
            out.push((freq * c).cos());
        }
    }
    out
}

/// Position → smoothed compact semantic feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingMLP {
    pub net: TwoLayer,
}

impl SmoothingMLP {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            net: TwoLayer::zeros(POSITION_ENCODING_DIM, HIDDEN_WIDTH, feature_dim),
        }
    }

    pub fn random(feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: TwoLayer::random(POSITION_ENCODING_DIM, HIDDEN_WIDTH, feature_dim, &mut rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.net.output.outputs
    }

    pub fn smooth(&self, position: &[f64; 3]) -> Vec<f64> {
        self.net.forward(&encode_position(position)).output
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        self.net.flatten_into(out)
    }

    pub fn load_from(&mut self, src: &mut &[f64]) {
        self.net.load_from(src)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim())
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.net.axpy(alpha, &other.net)
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
    }
}
