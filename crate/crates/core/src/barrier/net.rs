//! Multi-layer barrier network: `[Linear -> LayerNorm -> GELU]* -> Linear(1)`.
//!
//! Everything is stored and evaluated in `f64`. The forward pass can record a
//! [`Tape`] that the reverse pass consumes to produce the input gradient and,
//! during training, parameter gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Full-width hidden sizes of the reference architecture.
pub const FULL_HIDDEN_DIMS: [usize; 4] = [2048, 1024, 512, 256];
/// Desk-scale default, the reference shape at 1/32 width.
pub const DESK_HIDDEN_DIMS: [usize; 3] = [64, 32, 16];

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Dense layer followed by layer normalization and GELU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

impl DenseBlock {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            gain: vec![0.0; out_dim],
            shift: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierNet {
    pub input_dim: usize,
    pub blocks: Vec<DenseBlock>,
    pub head_weight: Vec<f64>,
    pub head_bias: f64,
}

#[derive(Debug, Clone)]
struct BlockTape {
    normalized: Vec<f64>,
    inv_std: f64,
    /// Layer-norm output, i.e. GELU input.
    pre_activation: Vec<f64>,
}

/// Intermediate values recorded by [`BarrierNet::forward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the input, `activations[i + 1]` the output of block `i`.
    activations: Vec<Vec<f64>>,
    blocks: Vec<BlockTape>,
    pub value: f64,
}

impl BarrierNet {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and biases;
    /// unit gains, zero shifts.
    pub fn init<R: Rng>(input_dim: usize, hidden_dims: &[usize], rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(hidden_dims.len());
        let mut fan_in = input_dim;
        for &out_dim in hidden_dims {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = (0..out_dim * fan_in).map(|_| rng.gen_range(-bound..=bound)).collect();
            let bias = (0..out_dim).map(|_| rng.gen_range(-bound..=bound)).collect();
            blocks.push(DenseBlock {
                in_dim: fan_in,
                out_dim,
                weight,
                bias,
                gain: vec![1.0; out_dim],
                shift: vec![0.0; out_dim],
            });
            fan_in = out_dim;
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let head_weight = (0..fan_in).map(|_| rng.gen_range(-bound..=bound)).collect();
        let head_bias = rng.gen_range(-bound..=bound);
        Self {
            input_dim,
            blocks,
            head_weight,
            head_bias,
        }
    }

    /// Same shape, all parameters zero. Used for gradient and moment buffers.
    pub fn zeros_like(&self) -> Self {
        Self {
            input_dim: self.input_dim,
            blocks: self
                .blocks
                .iter()
                .map(|b| DenseBlock::zeros(b.in_dim, b.out_dim))
                .collect(),
            head_weight: vec![0.0; self.head_weight.len()],
            head_bias: 0.0,
        }
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out_dim).collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.weight.len() + 3 * b.out_dim)
            .sum::<usize>()
            + self.head_weight.len()
            + 1
    }

    /// Visit every parameter slice in a fixed order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for b in &mut self.blocks {
            f(&mut b.weight);
            f(&mut b.bias);
            f(&mut b.gain);
            f(&mut b.shift);
        }
        f(&mut self.head_weight);
        f(std::slice::from_mut(&mut self.head_bias));
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2);
        for b in &self.blocks {
            out.push(b.weight.as_slice());
            out.push(b.bias.as_slice());
            out.push(b.gain.as_slice());
            out.push(b.shift.as_slice());
        }
        out.push(self.head_weight.as_slice());
        out.push(std::slice::from_ref(&self.head_bias));
        out
    }

    /// Check internal shape consistency (used after deserialization).
    pub fn validate(&self) -> Result<(), String> {
        let mut fan_in = self.input_dim;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.in_dim != fan_in
                || b.weight.len() != b.in_dim * b.out_dim
                || b.bias.len() != b.out_dim
                || b.gain.len() != b.out_dim
                || b.shift.len() != b.out_dim
            {
                return Err(format!("block {i} has inconsistent shapes"));
            }
            fan_in = b.out_dim;
        }
        if self.head_weight.len() != fan_in {
            return Err("head width does not match last hidden layer".into());
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        let mut x = input.to_vec();
        for block in &self.blocks {
            let mut z = affine(block, &x);
            normalize_in_place(&mut z);
            for ((zi, g), s) in z.iter_mut().zip(&block.gain).zip(&block.shift) {
                *zi = gelu(*zi * g + s);
            }
            x = z;
        }
        dot(&self.head_weight, &x) + self.head_bias
    }

    pub fn forward_tape(&self, input: &[f64]) -> Tape {
        let mut activations = Vec::with_capacity(self.blocks.len() + 1);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        activations.push(input.to_vec());
        for block in &self.blocks {
            let x = activations.last().expect("input recorded");
            let mut normalized = affine(block, x);
            let (_, inv_std) = normalize_in_place(&mut normalized);
            let pre_activation: Vec<f64> = normalized
                .iter()
                .zip(&block.gain)
                .zip(&block.shift)
                .map(|((n, g), s)| n * g + s)
                .collect();
            let out = pre_activation.iter().map(|&y| gelu(y)).collect();
            blocks.push(BlockTape {
                normalized,
                inv_std,
                pre_activation,
            });
            activations.push(out);
        }
        let value = dot(&self.head_weight, activations.last().expect("nonempty")) + self.head_bias;
        Tape {
            activations,
            blocks,
            value,
        }
    }

    /// Reverse pass. Adds `seed * d(output)/d(input)` into `input_grad`, and
    /// `seed * d(output)/d(params)` into `param_grad` when given.
    pub fn backward(
        &self,
        tape: &Tape,
        seed: f64,
        input_grad: Option<&mut [f64]>,
        mut param_grad: Option<&mut BarrierNet>,
    ) {
        let last = tape.activations.last().expect("nonempty");
        if let Some(g) = param_grad.as_deref_mut() {
            for (gw, a) in g.head_weight.iter_mut().zip(last) {
                *gw += seed * a;
            }
            g.head_bias += seed;
        }
        let mut upstream: Vec<f64> = self.head_weight.iter().map(|w| seed * w).collect();
        let need_input = input_grad.is_some();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let bt = &tape.blocks[i];
            let n = block.out_dim as f64;
            // through GELU and the layer-norm affine
            let mut dnorm = vec![0.0; block.out_dim];
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for j in 0..block.out_dim {
                let dy = upstream[j] * gelu_derivative(bt.pre_activation[j]);
                if let Some(g) = param_grad.as_deref_mut() {
                    g.blocks[i].gain[j] += dy * bt.normalized[j];
                    g.blocks[i].shift[j] += dy;
                }
                let dn = dy * block.gain[j];
                dnorm[j] = dn;
                mean_d += dn;
                mean_dx += dn * bt.normalized[j];
            }
            mean_d /= n;
            mean_dx /= n;
            // through the normalization
            let dz: Vec<f64> = dnorm
                .iter()
                .zip(&bt.normalized)
                .map(|(dn, xh)| bt.inv_std * (dn - mean_d - xh * mean_dx))
                .collect();
            let x = &tape.activations[i];
            if let Some(g) = param_grad.as_deref_mut() {
                let gb = &mut g.blocks[i];
                for (r, &dzr) in dz.iter().enumerate() {
                    gb.bias[r] += dzr;
                    let row = &mut gb.weight[r * block.in_dim..(r + 1) * block.in_dim];
                    for (w, xv) in row.iter_mut().zip(x) {
                        *w += dzr * xv;
                    }
                }
            }
            if i == 0 && !need_input {
                break;
            }
            let mut dx = vec![0.0; block.in_dim];
            for (r, &dzr) in dz.iter().enumerate() {
                let row = &block.weight[r * block.in_dim..(r + 1) * block.in_dim];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += dzr * w;
                }
            }
            upstream = dx;
        }
        if let Some(out) = input_grad {
            if self.blocks.is_empty() {
                for (o, w) in out.iter_mut().zip(&self.head_weight) {
                    *o += seed * w;
                }
            } else {
                for (o, u) in out.iter_mut().zip(&upstream) {
                    *o += u;
                }
            }
        }
    }
}

fn affine(block: &DenseBlock, x: &[f64]) -> Vec<f64> {
    block
        .weight
        .chunks_exact(block.in_dim)
        .zip(&block.bias)
        .map(|(row, b)| dot(row, x) + b)
        .collect()
}

/// Normalize to zero mean and unit (biased) variance; returns `(mean, 1/std)`.
fn normalize_in_place(z: &mut [f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for v in z.iter_mut() {
        *v = (*v - mean) * inv_std;
    }
    (mean, inv_std)
}
