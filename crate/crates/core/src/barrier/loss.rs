//! Hinge losses that shape the safe region of a barrier bank.
//!
//! Safe states should satisfy every head (`b_k >= 0`); unsafe states should
//! violate at least one head by the margin `epsilon` (`min_k b_k <= -epsilon`).

use super::BarrierBank;
use crate::error::{Error, Result};
use crate::types::{LabeledState, SafetyLabel};

/// `sum_k [-b_k]_+` for one safe state.
pub fn safe_hinge(values: &[f64]) -> f64 {
    values.iter().map(|&b| (-b).max(0.0)).sum()
}

/// `[min_k b_k + epsilon]_+` for one unsafe state.
pub fn unsafe_hinge(values: &[f64], epsilon: f64) -> f64 {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (min + epsilon).max(0.0)
}

fn check_labels(batch: &[LabeledState], expected: SafetyLabel) -> Result<()> {
    if let Some(bad) = batch.iter().find(|s| s.label != expected) {
        return Err(Error::WrongLabel {
            expected: expected.name(),
            found: bad.label.name(),
        });
    }
    Ok(())
}

pub fn loss_safe(bank: &BarrierBank, batch: &[LabeledState]) -> Result<f64> {
    check_labels(batch, SafetyLabel::Safe)?;
    let mut total = 0.0;
    for s in batch {
        total += safe_hinge(&bank.values(&s.state)?);
    }
    Ok(total)
}

pub fn loss_unsafe(bank: &BarrierBank, batch: &[LabeledState], epsilon: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")));
    }
    check_labels(batch, SafetyLabel::Unsafe)?;
    let mut total = 0.0;
    for s in batch {
        total += unsafe_hinge(&bank.values(&s.state)?, epsilon);
    }
    Ok(total)
}

/// `L_safe + lambda_unsafe * L_unsafe`
pub fn total_loss(
    bank: &BarrierBank,
    safe_batch: &[LabeledState],
    unsafe_batch: &[LabeledState],
    config: &super::TrainConfig,
) -> Result<f64> {
    config.validate()?;
    let ls = loss_safe(bank, safe_batch)?;
    let lu = loss_unsafe(bank, unsafe_batch, config.epsilon_margin)?;
    Ok(ls + config.lambda_unsafe * lu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{Barrier, TrainConfig};
    use crate::types::LatentState;

    /// A bank of constant barriers whose head `k` returns `x[k]`: feeding
    /// the desired head values as the state reproduces them exactly.
    fn probe_bank(k: usize) -> BarrierBank {
        BarrierBank::new(
            (0..k)
                .map(|i| {
                    let mut n = vec![0.0; k];
                    n[i] = 1.0;
                    Barrier::half_space(n, 0.0)
                })
                .collect(),
        )
        .unwrap()
    }

    fn labeled(values: &[f64], label: SafetyLabel) -> LabeledState {
        LabeledState {
            state: LatentState::new(values.to_vec()).unwrap(),
            label,
            source_id: "t".into(),
        }
    }

    #[test]
    fn safe_loss_examples() {
        let bank = probe_bank(4);
        let one = [labeled(&[0.5, -0.2, 1.0, 0.0], SafetyLabel::Safe)];
        assert!((loss_safe(&bank, &one).unwrap() - 0.2).abs() < 1e-15);
        let pos = [labeled(&[0.5, 0.2, 1.0, 3.0], SafetyLabel::Safe)];
        assert_eq!(loss_safe(&bank, &pos).unwrap(), 0.0);
        let two = [
            labeled(&[-1.0, -1.0, -1.0, -1.0], SafetyLabel::Safe),
            labeled(&[-0.5, 0.0, 0.0, 0.0], SafetyLabel::Safe),
        ];
        assert_eq!(loss_safe(&bank, &two).unwrap(), 4.5);
    }

    #[test]
    fn safe_loss_rejects_unsafe_label() {
        let bank = probe_bank(2);
        let b = [labeled(&[1.0, 1.0], SafetyLabel::Unsafe)];
        assert!(matches!(loss_safe(&bank, &b), Err(Error::WrongLabel { .. })));
    }

    #[test]
    fn unsafe_loss_examples() {
        let bank = probe_bank(4);
        let a = [labeled(&[0.5, -0.2, 1.0, 0.0], SafetyLabel::Unsafe)];
        assert_eq!(loss_unsafe(&bank, &a, 0.1).unwrap(), 0.0);
        let b = [labeled(&[0.3, 0.4, 0.9, 0.5], SafetyLabel::Unsafe)];
        assert!((loss_unsafe(&bank, &b, 0.1).unwrap() - 0.4).abs() < 1e-15);
        let c = [labeled(&[-0.1; 4], SafetyLabel::Unsafe)];
        assert_eq!(loss_unsafe(&bank, &c, 0.1).unwrap(), 0.0);
        let s = [labeled(&[1.0; 4], SafetyLabel::Safe)];
        assert!(loss_unsafe(&bank, &s, 0.1).is_err());
    }

    #[test]
    fn total_loss_weighting_and_empty_batches() {
        let bank = probe_bank(4);
        let safe = [labeled(&[0.5, -0.2, 1.0, 0.0], SafetyLabel::Safe)];
        let unsafe_ = [labeled(&[0.3, 0.4, 0.9, 0.5], SafetyLabel::Unsafe)];
        let cfg = TrainConfig {
            lambda_unsafe: 2.0,
            epsilon_margin: 0.1,
            ..TrainConfig::default()
        };
        assert!((total_loss(&bank, &safe, &unsafe_, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!((total_loss(&bank, &safe, &[], &cfg).unwrap() - 0.2).abs() < 1e-15);
        assert!((total_loss(&bank, &[], &unsafe_, &cfg).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_iff_constraints_hold() {
        // loss_safe = 0 <=> all heads >= 0; loss_unsafe = 0 <=> min <= -eps
        for v in [[0.0, 0.0], [1.0, 2.0], [-1e-9, 1.0], [0.3, -0.3]] {
            let safe_ok = v.iter().all(|&b| b >= 0.0);
            assert_eq!(safe_hinge(&v) == 0.0, safe_ok);
            let unsafe_ok = v.iter().copied().fold(f64::INFINITY, f64::min) <= -0.25;
            assert_eq!(unsafe_hinge(&v, 0.25) == 0.0, unsafe_ok);
        }
    }
}
