//! Joint training of a barrier bank with the safe/unsafe hinge losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{safe_hinge, unsafe_hinge};
use super::net::{BarrierNet, Tape};
use super::{Barrier, BarrierBank};
use crate::dataio::SafetyDataset;
use crate::error::{Error, Result};
use crate::types::SafetyLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdaptiveMoments,
    PlainSgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_unsafe: f64,
    pub epsilon_margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_unsafe: 1.0,
            epsilon_margin: 0.1,
            learning_rate: 1e-2,
            batch_size: 512,
            epochs: 200,
            seed: 0,
            optimizer: OptimizerKind::AdaptiveMoments,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_unsafe", self.lambda_unsafe),
            ("epsilon_margin", self.epsilon_margin),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Total loss on the training set before the first update.
    pub initial_loss: f64,
    /// Total loss on the training set after each epoch.
    pub loss_history: Vec<f64>,
    pub train_accuracy: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct HeadState {
    first: BarrierNet,
    second: BarrierNet,
}

fn dataset_loss(bank: &BarrierBank, data: &SafetyDataset, cfg: &TrainConfig) -> f64 {
    let terms: Vec<f64> = data
        .records()
        .par_iter()
        .map(|s| {
            let v = bank.values_raw(s.state.as_slice());
            match s.label {
                SafetyLabel::Safe => safe_hinge(&v),
                SafetyLabel::Unsafe => cfg.lambda_unsafe * unsafe_hinge(&v, cfg.epsilon_margin),
            }
        })
        .collect();
    // fixed-order reduction
    terms.iter().sum()
}

/// Train the neural heads of `bank` on `dataset`. Closed-form heads are held fixed.
pub fn train(
    mut bank: BarrierBank,
    dataset: &SafetyDataset,
    config: &TrainConfig,
) -> Result<(BarrierBank, TrainReport)> {
    config.validate()?;
    if dataset.d_h() != bank.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.input_dim(),
            got: dataset.d_h(),
        });
    }
    let (n_safe, n_unsafe) = dataset.class_counts();
    if n_safe == 0 || n_unsafe == 0 {
        return Err(Error::SingleClass);
    }

    let records = dataset.records();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut moments: Vec<Option<HeadState>> = bank
        .barriers()
        .iter()
        .map(|b| match b {
            Barrier::Neural(net) => Some(HeadState {
                first: net.zeros_like(),
                second: net.zeros_like(),
            }),
            _ => None,
        })
        .collect();

    let initial_loss = dataset_loss(&bank, dataset, config);
    if !initial_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    let k = bank.len();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            // forward every head over the batch
            let forwards: Vec<(Vec<f64>, Option<Vec<Tape>>)> = bank
                .barriers()
                .par_iter()
                .map(|b| match b {
                    Barrier::Neural(net) => {
                        let tapes: Vec<Tape> = chunk
                            .iter()
                            .map(|&i| net.forward_tape(records[i].state.as_slice()))
                            .collect();
                        (tapes.iter().map(|t| t.value).collect(), Some(tapes))
                    }
                    other => (
                        chunk
                            .iter()
                            .map(|&i| other.value_raw(records[i].state.as_slice()))
                            .collect(),
                        None,
                    ),
                })
                .collect();

            // dL/db_k for each sample
            let mut coef = vec![vec![0.0; chunk.len()]; k];
            for (j, &i) in chunk.iter().enumerate() {
                match records[i].label {
                    SafetyLabel::Safe => {
                        for (h, c) in coef.iter_mut().enumerate() {
                            if forwards[h].0[j] < 0.0 {
                                c[j] = -1.0;
                            }
                        }
                    }
                    SafetyLabel::Unsafe => {
                        // lowest-index argmin
                        let mut arg = 0;
                        for h in 1..k {
                            if forwards[h].0[j] < forwards[arg].0[j] {
                                arg = h;
                            }
                        }
                        if forwards[arg].0[j] + config.epsilon_margin > 0.0 {
                            coef[arg][j] = config.lambda_unsafe;
                        }
                    }
                }
            }

            let lr = config.learning_rate;
            let optimizer = config.optimizer;
            bank.barriers_mut()
                .par_iter_mut()
                .zip(moments.par_iter_mut())
                .zip(forwards.par_iter())
                .zip(coef.par_iter())
                .for_each(|(((barrier, state), (_, tapes)), c)| {
                    let (Barrier::Neural(net), Some(state), Some(tapes)) = (barrier, state, tapes) else {
                        return;
                    };
                    let mut grad = net.zeros_like();
                    for (tape, &cj) in tapes.iter().zip(c) {
                        if cj != 0.0 {
                            net.backward(tape, cj, None, Some(&mut grad));
                        }
                    }
                    apply_update(net, &grad, state, optimizer, lr, step);
                });
        }
        let loss = dataset_loss(&bank, dataset, config);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1 });
        }
        history.push(loss);
    }

    let train_accuracy = bank.accuracy(records)?;
    Ok((
        bank,
        TrainReport {
            initial_loss,
            loss_history: history,
            train_accuracy,
        },
    ))
}

fn apply_update(
    net: &mut BarrierNet,
    grad: &BarrierNet,
    state: &mut HeadState,
    optimizer: OptimizerKind,
    lr: f64,
    step: u64,
) {
    let grads = grad.params();
    let mut idx = 0;
    match optimizer {
        OptimizerKind::PlainSgd => net.for_each_param_mut(|p| {
            for (w, g) in p.iter_mut().zip(grads[idx]) {
                *w -= lr * g;
            }
            idx += 1;
        }),
        OptimizerKind::AdaptiveMoments => {
            let bc1 = 1.0 - BETA1.powi(step as i32);
            let bc2 = 1.0 - BETA2.powi(step as i32);
            let mut m_slices: Vec<&mut [f64]> = Vec::new();
            let mut v_slices: Vec<&mut [f64]> = Vec::new();
            collect_mut(&mut state.first, &mut m_slices);
            collect_mut(&mut state.second, &mut v_slices);
            net.for_each_param_mut(|p| {
                let g = grads[idx];
                let m = &mut *m_slices[idx];
                let v = &mut *v_slices[idx];
                for j in 0..p.len() {
                    m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                    v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
                idx += 1;
            });
        }
    }
}

fn collect_mut<'a>(net: &'a mut BarrierNet, out: &mut Vec<&'a mut [f64]>) {
    for b in &mut net.blocks {
        out.push(&mut b.weight);
        out.push(&mut b.bias);
        out.push(&mut b.gain);
        out.push(&mut b.shift);
    }
    out.push(&mut net.head_weight);
    out.push(std::slice::from_mut(&mut net.head_bias));
}
