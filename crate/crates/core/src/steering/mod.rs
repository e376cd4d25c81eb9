//! Inference-time safety filter on the latent velocity.
//!
//! Each head contributes one linearized condition at the previous state,
//!
//! ```text
//! grad b_k(h_prev) . u + alpha (b_k(h_prev) - delta) >= 0,
//! ```
//!
//! and the filter picks the control closest to the nominal one,
//! `u_nom = (h_t - h_prev) / dt`. Three modes differ in how the rows are
//! combined: all of them ([`qp`]), the two most violated ([`top2`]), or one
//! smooth log-sum-exp merge ([`lse`]).

pub mod baseline;
pub mod lse;
pub mod qp;
pub mod reference;
pub mod top2;

use serde::Serialize;

pub use baseline::{
    baseline_activation_addition, baseline_directional_ablation, steering_direction_from_data, SteeringDirection,
};
pub use lse::{compose_lse, lse_gradient, lse_weights, steer_lse};
pub use qp::{steer_qp, ENUMERATION_LIMIT};
pub use reference::{iterative_projection, ProjectionSettings};
pub use top2::{select_top2, steer_top2, two_row_closed_form, ClosedFormIntermediates};

use crate::barrier::BarrierBank;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, dot};
use crate::types::{nominal_control, ControlInput, LatentState, SteeringConfig, SteeringMode, SteeringOutcome};

/// One linearized barrier condition at `h_prev`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRow {
    pub gradient: Vec<f64>,
    pub value: f64,
    pub threshold: f64,
}

impl ConstraintRow {
    /// `b - delta`
    pub fn margin(&self) -> f64 {
        self.value - self.threshold
    }

    /// `grad . u + alpha (b - delta)`; the row holds when this is `>= 0`.
    pub fn lhs(&self, u: &[f64], alpha: f64) -> f64 {
        dot(&self.gradient, u) + alpha * self.margin()
    }
}

/// Solver output before it is turned into a [`SteeringOutcome`].
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub u: Vec<f64>,
    /// `u = u_nom + sum_k multipliers[k] grad b_k`, all `>= 0`.
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub fallback: bool,
    /// No control satisfies every row; `u` is the least-violating candidate.
    pub infeasible: bool,
}

impl Correction {
    pub fn passthrough(u_nom: &[f64], k: usize) -> Self {
        Self {
            u: u_nom.to_vec(),
            multipliers: vec![0.0; k],
            active: Vec::new(),
            fallback: false,
            infeasible: false,
        }
    }

    pub fn from_multipliers(u: Vec<f64>, multipliers: Vec<f64>, fallback: bool) -> Self {
        let active = (0..multipliers.len()).filter(|&i| multipliers[i] > 0.0).collect();
        Self {
            u,
            multipliers,
            active,
            fallback,
            infeasible: false,
        }
    }
}

/// Rows for every head of `bank`, in head order.
pub fn build_constraints(
    bank: &BarrierBank,
    h_prev: &LatentState,
    config: &SteeringConfig,
) -> Result<Vec<ConstraintRow>> {
    h_prev.check_dim(bank.input_dim())?;
    Ok(build_constraints_raw(bank, h_prev.as_slice(), config.delta))
}

pub(crate) fn build_constraints_raw(bank: &BarrierBank, h: &[f64], delta: f64) -> Vec<ConstraintRow> {
    bank.barriers()
        .iter()
        .map(|b| {
            let e = b.eval_raw(h);
            ConstraintRow {
                gradient: e.gradient(),
                value: e.value(),
                threshold: delta,
            }
        })
        .collect()
}

/// A bank paired with a validated filter configuration. Immutable, so one
/// session can be shared across threads.
#[derive(Debug, Clone)]
pub struct SteeringSession {
    bank: BarrierBank,
    config: SteeringConfig,
}

impl SteeringSession {
    pub fn new(bank: BarrierBank, config: SteeringConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { bank, config })
    }

    pub fn bank(&self) -> &BarrierBank {
        &self.bank
    }

    pub fn config(&self) -> &SteeringConfig {
        &self.config
    }

    /// Same bank under another mode.
    pub fn with_mode(&self, mode: SteeringMode) -> Self {
        Self {
            bank: self.bank.clone(),
            config: self.config.clone().with_mode(mode),
        }
    }

    /// Filtered control and the head values at `h_prev`, on raw slices of
    /// matching length.
    pub fn correction_raw(&self, h_prev: &[f64], u_nom: &[f64]) -> (Correction, Vec<f64>) {
        match self.config.mode {
            SteeringMode::Lse => lse::steer_lse_raw(&self.bank, h_prev, u_nom, &self.config),
            mode => {
                let rows = build_constraints_raw(&self.bank, h_prev, self.config.delta);
                let c = match mode {
                    SteeringMode::Qp => steer_qp(&rows, u_nom, &self.config),
                    _ => steer_top2(&rows, u_nom, &self.config),
                };
                (c, rows.into_iter().map(|r| r.value).collect())
            }
        }
    }

    /// Filter a nominal control applied at `h_prev`.
    pub fn steer_control(&self, h_prev: &LatentState, u_nom: &ControlInput) -> Result<SteeringOutcome> {
        h_prev.check_dim(self.bank.input_dim())?;
        if u_nom.dim() != h_prev.dim() {
            return Err(Error::DimensionMismatch {
                expected: h_prev.dim(),
                got: u_nom.dim(),
            });
        }
        let (c, before) = self.correction_raw(h_prev.as_slice(), u_nom.as_slice());
        if !all_finite(&c.u) {
            return Err(Error::NonFinite("steered control"));
        }
        let u_star = ControlInput::new(c.u)?;
        let corrected_state = h_prev.advance(&u_star, self.config.dt);
        if !all_finite(corrected_state.as_slice()) {
            return Err(Error::NonFinite("corrected state"));
        }
        let after = self.bank.values_raw(corrected_state.as_slice());
        Ok(SteeringOutcome {
            u_star,
            corrected_state,
            barrier_values_before: before,
            barrier_values_after: after,
            active_constraints: c.active,
            mode_used: self.config.mode,
            fallback_triggered: c.fallback,
        })
    }

    /// Filter the transition `h_prev -> h_t`.
    pub fn steer(&self, h_prev: &LatentState, h_t: &LatentState) -> Result<SteeringOutcome> {
        let u_nom = nominal_control(h_prev, h_t, self.config.dt)?;
        self.steer_control(h_prev, &u_nom)
    }

    /// Baseline: `h_t + coefficient * r`, reported in the same outcome shape.
    pub fn activation_addition(
        &self,
        h_prev: &LatentState,
        h_t: &LatentState,
        r: &SteeringDirection,
        coefficient: f64,
    ) -> Result<SteeringOutcome> {
        let out = baseline_activation_addition(h_t, r, coefficient)?;
        self.baseline_outcome(h_prev, out)
    }

    /// Baseline: `h_t` with its component along `r` removed.
    pub fn directional_ablation(
        &self,
        h_prev: &LatentState,
        h_t: &LatentState,
        r: &SteeringDirection,
    ) -> Result<SteeringOutcome> {
        let out = baseline_directional_ablation(h_t, r, self.config.grad_floor)?;
        self.baseline_outcome(h_prev, out)
    }

    fn baseline_outcome(&self, h_prev: &LatentState, out: LatentState) -> Result<SteeringOutcome> {
        h_prev.check_dim(self.bank.input_dim())?;
        let u_star = nominal_control(h_prev, &out, self.config.dt)?;
        Ok(SteeringOutcome {
            u_star,
            barrier_values_before: self.bank.values_raw(h_prev.as_slice()),
            barrier_values_after: self.bank.values_raw(out.as_slice()),
            corrected_state: out,
            active_constraints: Vec::new(),
            mode_used: self.config.mode,
            fallback_triggered: false,
        })
    }
}
