//! Log-sum-exp merge of all heads into one smooth barrier
//!
//! ```text
//! B(h) = -(1/kappa) ln sum_k exp(-kappa (b_k(h) - delta))
//! ```
//!
//! `B <= min_k (b_k - delta) <= B + ln(K)/kappa`, so `B >= 0` certifies every
//! head. The gradient is the softmin-weighted sum of head gradients.

use super::top2::single_row;
use super::Correction;
use crate::barrier::BarrierBank;
use crate::error::Result;
use crate::linalg::{dot, norm};
use crate::types::{LatentState, SteeringConfig};

/// Composed barrier value, evaluated with a max-shift so it never overflows.
pub fn compose_lse(values: &[f64], delta: f64, kappa: f64) -> f64 {
    let min = values.iter().map(|b| b - delta).fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|b| (-kappa * (b - delta - min)).exp()).sum();
    min - sum.ln() / kappa
}

/// Softmin weights `exp(-kappa (b_k - delta)) / sum_j exp(-kappa (b_j - delta))`.
pub fn lse_weights(values: &[f64], delta: f64, kappa: f64) -> Vec<f64> {
    let min = values.iter().map(|b| b - delta).fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = values.iter().map(|b| (-kappa * (b - delta - min)).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Composed value, gradient and head values at a raw point.
///
/// One pass over the heads: each head's reverse pass runs right after its
/// forward pass, seeded with its weight relative to the running minimum, and
/// the accumulator is rescaled whenever a new minimum appears. This keeps
/// a single gradient buffer and touches each head's weights once while they
/// are still cached.
pub(crate) fn lse_value_gradient_raw(
    bank: &BarrierBank,
    h: &[f64],
    delta: f64,
    kappa: f64,
) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut grad = vec![0.0; h.len()];
    let mut values = Vec::with_capacity(bank.len());
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for b in bank.barriers() {
        let e = b.eval_raw(h);
        let m = e.value() - delta;
        values.push(e.value());
        let seed = if m < min {
            if sum > 0.0 {
                let shrink = (-kappa * (min - m)).exp();
                sum *= shrink;
                for g in &mut grad {
                    *g *= shrink;
                }
            }
            min = m;
            1.0
        } else {
            (-kappa * (m - min)).exp()
        };
        sum += seed;
        if seed > 0.0 {
            e.accumulate_gradient(seed, &mut grad);
        }
    }
    for g in &mut grad {
        *g /= sum;
    }
    let weights = lse_weights(&values, delta, kappa);
    (compose_lse(&values, delta, kappa), grad, values, weights)
}

/// Gradient of `B` at `h`.
pub fn lse_gradient(bank: &BarrierBank, h: &LatentState, delta: f64, kappa: f64) -> Result<Vec<f64>> {
    h.check_dim(bank.input_dim())?;
    Ok(lse_value_gradient_raw(bank, h.as_slice(), delta, kappa).1)
}

/// Single-constraint filter on the composed barrier:
/// `u = u_nom + [-(grad B . u_nom + alpha B)]+ / |grad B|^2 grad B`.
pub(crate) fn steer_lse_raw(
    bank: &BarrierBank,
    h_prev: &[f64],
    u_nom: &[f64],
    config: &SteeringConfig,
) -> (Correction, Vec<f64>) {
    let k = bank.len();
    let (b, grad, values, weights) = lse_value_gradient_raw(bank, h_prev, config.delta, config.kappa);
    let lhs = dot(&grad, u_nom) + config.alpha * b;
    if lhs >= 0.0 {
        return (Correction::passthrough(u_nom, k), values);
    }
    if norm(&grad) < config.grad_floor {
        return (
            Correction {
                fallback: true,
                ..Correction::passthrough(u_nom, k)
            },
            values,
        );
    }
    let mut u = vec![0.0; u_nom.len()];
    let mu = single_row(&grad, b, u_nom, config.alpha, &mut u);
    // the composed row acts through every head in proportion to its weight
    let multipliers: Vec<f64> = weights.iter().map(|w| mu * w).collect();
    let active = (0..k).filter(|&i| weights[i] > 1e-6).collect();
    (
        Correction {
            u,
            multipliers,
            active,
            fallback: false,
            infeasible: false,
        },
        values,
    )
}

pub fn steer_lse(
    bank: &BarrierBank,
    h_prev: &LatentState,
    u_nom: &[f64],
    config: &SteeringConfig,
) -> Result<Correction> {
    h_prev.check_dim(bank.input_dim())?;
    Ok(steer_lse_raw(bank, h_prev.as_slice(), u_nom, config).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term_is_exact() {
        assert_eq!(compose_lse(&[0.7], 0.0, 10.0), 0.7);
        assert_eq!(compose_lse(&[0.7], 0.2, 3.0), 0.7 - 0.2);
    }

    #[test]
    fn equal_values_shift_by_ln2() {
        let c = 0.4;
        let b = compose_lse(&[c, c], 0.0, 10.0);
        assert!((b - (c - 2f64.ln() / 10.0)).abs() < 1e-15);
        assert_eq!(lse_weights(&[c, c], 0.0, 10.0), vec![0.5, 0.5]);
    }

    #[test]
    fn streaming_gradient_matches_weighted_sum() {
        use crate::barrier::Barrier;
        // heads in an order that moves the running minimum several times
        let bank = BarrierBank::new(vec![
            Barrier::half_space(vec![1.0, 0.0], 0.9),
            Barrier::sphere(vec![0.3, -0.2], 1.0),
            Barrier::half_space(vec![0.0, -1.0], 0.1),
            Barrier::half_space(vec![-2.0, 1.0], 5.0),
            Barrier::sphere(vec![0.0, 0.0], 0.5),
        ])
        .unwrap();
        let h = [0.2, 0.15];
        for kappa in [1.0, 10.0, 50.0] {
            let (b, grad, values, weights) = lse_value_gradient_raw(&bank, &h, 0.05, kappa);
            assert_eq!(b, compose_lse(&values, 0.05, kappa));
            let mut expect = [0.0; 2];
            for (barrier, w) in bank.barriers().iter().zip(&weights) {
                barrier.eval_raw(&h).accumulate_gradient(*w, &mut expect);
            }
            for (g, e) in grad.iter().zip(&expect) {
                assert!((g - e).abs() < 1e-14 * (1.0 + e.abs()), "{g} vs {e}");
            }
        }
    }

    #[test]
    fn no_overflow_for_extreme_values() {
        let b = compose_lse(&[-1e6, 1e6], 0.0, 100.0);
        assert_eq!(b, -1e6);
        let w = lse_weights(&[-1e6, 1e6], 0.0, 100.0);
        assert_eq!(w, vec![1.0, 0.0]);
    }
}
