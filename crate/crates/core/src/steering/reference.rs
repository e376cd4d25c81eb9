//! Iterative projection reference used for latency comparison.
//!
//! Runs a fixed number of gradient steps on the state, minimising
//! `0.5 |h - h_nom|^2 + penalty * sum_k [delta - b_k(h)]_+` starting from the
//! nominal next state. It never exits early, matching iterative steering
//! schemes that run a fixed optimisation budget per token.

use crate::barrier::BarrierBank;
use crate::error::Result;
use crate::types::{ControlInput, LatentState, SteeringConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub penalty: f64,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            iterations: 100,
            learning_rate: 1e-2,
            penalty: 10.0,
        }
    }
}

pub fn iterative_projection(
    bank: &BarrierBank,
    h_prev: &LatentState,
    u_nom: &ControlInput,
    config: &SteeringConfig,
    settings: &ProjectionSettings,
) -> Result<LatentState> {
    h_prev.check_dim(bank.input_dim())?;
    u_nom
        .as_slice()
        .len()
        .eq(&h_prev.dim())
        .then_some(())
        .ok_or(crate::Error::DimensionMismatch {
            expected: h_prev.dim(),
            got: u_nom.dim(),
        })?;
    let target = h_prev.advance(u_nom, config.dt).into_inner();
    let mut h = target.clone();
    let mut grad = vec![0.0; h.len()];
    for _ in 0..settings.iterations {
        for ((g, x), t) in grad.iter_mut().zip(&h).zip(&target) {
            *g = x - t;
        }
        for b in bank.barriers() {
            let e = b.eval_raw(&h);
            if e.value() < config.delta {
                e.accumulate_gradient(-settings.penalty, &mut grad);
            }
        }
        for (x, g) in h.iter_mut().zip(&grad) {
            *x -= settings.learning_rate * g;
        }
    }
    LatentState::new(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::Barrier;

    #[test]
    fn pushes_toward_safe_side() {
        let bank = BarrierBank::new(vec![Barrier::half_space(vec![0.0, 1.0], 0.0)]).unwrap();
        let h = LatentState::new(vec![0.0, 0.1]).unwrap();
        let u = ControlInput::new(vec![0.0, -1.1]).unwrap();
        let cfg = SteeringConfig::default();
        let out = iterative_projection(&bank, &h, &u, &cfg, &ProjectionSettings::default()).unwrap();
        assert!(out.as_slice()[1] > -1.0);
    }
}
