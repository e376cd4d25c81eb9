//! Discrete latent rollouts with the safety filter in the loop, and numerical
//! checks of the forward-invariance and exponential-stabilization guarantees.
//!
//! The guarantees are continuous-time. In discrete time the linearized
//! condition leaves an overshoot of order `dt^2` per step, so invariance is
//! checked against a tolerance rather than exactly.

mod export;
mod suite;

use serde::{Deserialize, Serialize};

pub use export::{
    read_trajectory_jsonl, read_trajectory_sequences, write_trajectory_jsonl, write_trajectory_records,
    TrajectoryRecord,
};
pub use suite::{
    draw_scenario, draw_scenario_on_bank, run_suite, run_suite_on_bank, ModeSummary, Scenario, ScenarioKind,
    SuiteConfig, SuiteReport,
};

use crate::barrier::BarrierBank;
use crate::error::{Error, Result};
use crate::linalg::all_finite;
use crate::steering::{compose_lse, SteeringSession};
use crate::types::{ControlInput, LatentState, SteeringConfig, SteeringMode};

/// A rollout `h_0 .. h_T` with the controls that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentTrajectory {
    pub states: Vec<LatentState>,
    /// `controls[t]` moves `states[t]` to `states[t + 1]`.
    pub controls: Vec<ControlInput>,
    pub dt: f64,
    /// Head values at every state.
    pub barrier_trace: Vec<Vec<f64>>,
    /// Log-sum-exp merge of `barrier_trace` at every state.
    pub composed_trace: Vec<f64>,
    /// `None` for an unfiltered rollout.
    pub mode: Option<SteeringMode>,
    /// Steps on which the filter reported a fallback.
    pub fallback_steps: usize,
}

impl LatentTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Minimum head margin `min_k (b_k - delta)` at every state.
    pub fn min_margins(&self, delta: f64) -> Vec<f64> {
        self.barrier_trace
            .iter()
            .map(|v| v.iter().fold(f64::INFINITY, |m, b| m.min(b - delta)))
            .collect()
    }
}

/// Source of the unfiltered latent velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NominalDynamics {
    /// `u = A h`, with `A` row-major `d x d`.
    Linear { matrix: Vec<f64> },
    /// `u = gain (target - h)`
    DriftToTarget { target: Vec<f64>, gain: f64 },
    /// `u_t = controls[t]`, independent of the state.
    Replay { controls: Vec<Vec<f64>> },
}

impl NominalDynamics {
    /// Replay of the finite differences of a recorded state sequence.
    pub fn replay_states(states: &[LatentState], dt: f64) -> Result<Self> {
        let controls = states
            .windows(2)
            .map(|w| crate::types::nominal_control(&w[0], &w[1], dt).map(ControlInput::into_inner))
            .collect::<Result<_>>()?;
        Ok(NominalDynamics::Replay { controls })
    }

    fn validate(&self, dim: usize, steps: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            NominalDynamics::Linear { matrix } => {
                if matrix.len() != dim * dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim * dim,
                        got: matrix.len(),
                    });
                }
                if !all_finite(matrix) {
                    return Err(Error::NonFinite("linear dynamics matrix"));
                }
            }
            NominalDynamics::DriftToTarget { target, gain } => {
                if target.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: target.len(),
                    });
                }
                if !all_finite(target) || !gain.is_finite() {
                    return Err(Error::NonFinite("drift target"));
                }
            }
            NominalDynamics::Replay { controls } => {
                if controls.len() < steps {
                    return bad(format!(
                        "replay has {} controls but {steps} steps were requested",
                        controls.len()
                    ));
                }
                for c in controls {
                    if c.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: c.len(),
                        });
                    }
                    if !all_finite(c) {
                        return Err(Error::NonFinite("replayed control"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Nominal control at step `t` from state `h`.
    pub fn control(&self, t: usize, h: &[f64]) -> Vec<f64> {
        match self {
            NominalDynamics::Linear { matrix } => {
                let d = h.len();
                (0..d)
                    .map(|i| crate::linalg::dot(&matrix[i * d..(i + 1) * d], h))
                    .collect()
            }
            NominalDynamics::DriftToTarget { target, gain } => {
                target.iter().zip(h).map(|(g, x)| gain * (g - x)).collect()
            }
            NominalDynamics::Replay { controls } => controls[t].clone(),
        }
    }
}

fn record(
    bank: &BarrierBank,
    config: &SteeringConfig,
    h: &[f64],
    barrier_trace: &mut Vec<Vec<f64>>,
    composed_trace: &mut Vec<f64>,
) {
    let values = bank.values_raw(h);
    composed_trace.push(compose_lse(&values, config.delta, config.kappa));
    barrier_trace.push(values);
}

/// Roll `steps` transitions from `start`, filtering every nominal control.
pub fn rollout(
    start: &LatentState,
    nominal: &NominalDynamics,
    bank: &BarrierBank,
    config: &SteeringConfig,
    steps: usize,
) -> Result<LatentTrajectory> {
    let session = SteeringSession::new(bank.clone(), config.clone())?;
    rollout_with(start, nominal, &session, steps)
}

/// [`rollout`] with an existing session.
pub fn rollout_with(
    start: &LatentState,
    nominal: &NominalDynamics,
    session: &SteeringSession,
    steps: usize,
) -> Result<LatentTrajectory> {
    run(start, nominal, session.bank(), session.config(), steps, Some(session))
}

/// Rollout without the filter; the nominal dynamics act unchanged.
pub fn rollout_unsteered(
    start: &LatentState,
    nominal: &NominalDynamics,
    bank: &BarrierBank,
    config: &SteeringConfig,
    steps: usize,
) -> Result<LatentTrajectory> {
    config.validate()?;
    run(start, nominal, bank, config, steps, None)
}

fn run(
    start: &LatentState,
    nominal: &NominalDynamics,
    bank: &BarrierBank,
    config: &SteeringConfig,
    steps: usize,
    session: Option<&SteeringSession>,
) -> Result<LatentTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidConfig("a rollout needs at least one step".into()));
    }
    start.check_dim(bank.input_dim())?;
    nominal.validate(start.dim(), steps)?;

    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut barrier_trace = Vec::with_capacity(steps + 1);
    let mut composed_trace = Vec::with_capacity(steps + 1);
    let mut fallback_steps = 0;
    record(bank, config, start.as_slice(), &mut barrier_trace, &mut composed_trace);
    states.push(start.clone());

    for t in 0..steps {
        let h = states[t].as_slice();
        let u_nom = nominal.control(t, h);
        if !all_finite(&u_nom) {
            return Err(Error::NonFiniteState { step: t });
        }
        let u = match session {
            Some(s) => {
                let (c, _) = s.correction_raw(h, &u_nom);
                fallback_steps += usize::from(c.fallback);
                c.u
            }
            None => u_nom,
        };
        let u = ControlInput::new(u).map_err(|_| Error::NonFiniteState { step: t })?;
        let next = states[t].advance(&u, config.dt);
        if !all_finite(next.as_slice()) {
            return Err(Error::NonFiniteState { step: t + 1 });
        }
        record(bank, config, next.as_slice(), &mut barrier_trace, &mut composed_trace);
        states.push(next);
        controls.push(u);
    }
    Ok(LatentTrajectory {
        states,
        controls,
        dt: config.dt,
        barrier_trace,
        composed_trace,
        mode: session.map(|s| s.config().mode),
        fallback_steps,
    })
}

/// Outcome of an invariance or stabilization check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Steps with `min_k (b_k - delta) < -tol`.
    pub invariance_violations: usize,
    /// Smallest `min_k (b_k - delta)` seen.
    pub worst_margin: f64,
    /// Always true for an invariance check.
    pub stabilization_bound_holds: bool,
    /// `max_t V(h_t) / (V(h_0) exp(-alpha t dt))`; zero for an invariance check.
    pub worst_ratio: f64,
    pub steps: usize,
    pub tolerance_used: f64,
}

/// Barrier values along a trajectory, recomputed under `bank`.
fn values_along(traj: &LatentTrajectory, bank: &BarrierBank) -> Result<Vec<Vec<f64>>> {
    traj.states.iter().map(|h| bank.values(h)).collect()
}

fn min_margin(values: &[f64], delta: f64) -> f64 {
    values.iter().fold(f64::INFINITY, |m, b| m.min(b - delta))
}

/// Counts states whose worst head margin drops below `-tol`. The trajectory
/// must start in the safe set.
pub fn verify_invariance(
    traj: &LatentTrajectory,
    bank: &BarrierBank,
    delta: f64,
    tol: f64,
) -> Result<VerificationReport> {
    if traj.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let values = values_along(traj, bank)?;
    if min_margin(&values[0], delta) < 0.0 {
        return Err(Error::WrongStart {
            required: "safe",
            found: "unsafe",
        });
    }
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for v in &values {
        let m = min_margin(v, delta);
        worst = worst.min(m);
        violations += usize::from(m < -tol);
    }
    Ok(VerificationReport {
        invariance_violations: violations,
        worst_margin: worst,
        stabilization_bound_holds: true,
        worst_ratio: 0.0,
        steps: traj.len() - 1,
        tolerance_used: tol,
    })
}

/// Absolute slack of the stabilization bound: the per-step Euler overshoot.
pub fn stabilization_abs_tolerance(dt: f64) -> f64 {
    10.0 * dt * dt
}

/// Checks `V(h_t) <= V(h_0) exp(-alpha t dt) (1 + tol) + 10 dt^2` with
/// `V = -B`, from the start until the trajectory first reaches `V <= 0`.
/// The trajectory must start outside (or on the boundary of) the composed
/// safe set.
pub fn verify_stabilization(
    traj: &LatentTrajectory,
    bank: &BarrierBank,
    config: &SteeringConfig,
    tol: f64,
) -> Result<VerificationReport> {
    if traj.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let values = values_along(traj, bank)?;
    let v: Vec<f64> = values
        .iter()
        .map(|b| -compose_lse(b, config.delta, config.kappa))
        .collect();
    if v[0] < 0.0 {
        return Err(Error::WrongStart {
            required: "unsafe",
            found: "safe",
        });
    }
    let tol_abs = stabilization_abs_tolerance(traj.dt);
    let mut holds = true;
    let mut worst_ratio: f64 = 0.0;
    let mut worst_margin = f64::INFINITY;
    if v[0] > 0.0 {
        for (t, &vt) in v.iter().enumerate() {
            worst_margin = worst_margin.min(min_margin(&values[t], config.delta));
            if vt <= 0.0 {
                break;
            }
            let envelope = v[0] * (-config.alpha * t as f64 * traj.dt).exp();
            worst_ratio = worst_ratio.max(vt / envelope);
            if vt > envelope * (1.0 + tol) + tol_abs {
                holds = false;
            }
        }
    } else {
        worst_margin = min_margin(&values[0], config.delta);
    }
    Ok(VerificationReport {
        invariance_violations: 0,
        worst_margin,
        stabilization_bound_holds: holds,
        worst_ratio,
        steps: traj.len() - 1,
        tolerance_used: tol,
    })
}
