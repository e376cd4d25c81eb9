//! Composition of independently trained banks and violation accounting on a
//! shared test set.

use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::BarrierBank;
use crate::dynamics::{rollout_with, NominalDynamics};
use crate::error::{Error, Result};
use crate::steering::SteeringSession;
use crate::types::{LatentState, SteeringConfig, SteeringMode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryViolations {
    pub name: String,
    pub violating_sequences: usize,
    pub rate: f64,
}

/// Violations of one way of producing the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeViolations {
    /// `original` for the recorded sequences, otherwise the steering mode.
    pub name: String,
    /// Sequences with a state below `-tolerance` margin on any head.
    pub violating_sequences: usize,
    pub rate: f64,
    pub per_category: Vec<CategoryViolations>,
    pub fallback_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposeReport {
    pub categories: Vec<String>,
    pub heads: usize,
    pub sequences: usize,
    pub tolerance: f64,
    pub original: ModeViolations,
    pub modes: Vec<ModeViolations>,
}

/// Per-category violation flags of one trajectory.
fn category_flags(
    bank: &BarrierBank,
    groups: &[Vec<usize>],
    states: &[LatentState],
    delta: f64,
    tol: f64,
) -> Vec<bool> {
    let mut flags = vec![false; groups.len()];
    for s in states {
        let v = bank.values_raw(s.as_slice());
        for (f, heads) in flags.iter_mut().zip(groups) {
            *f |= heads.iter().any(|&k| v[k] - delta < -tol);
        }
    }
    flags
}

fn summarize(name: String, categories: &[String], flags: &[(Vec<bool>, usize)]) -> ModeViolations {
    let n = flags.len().max(1) as f64;
    let violating = flags.iter().filter(|(f, _)| f.iter().any(|&x| x)).count();
    ModeViolations {
        name,
        violating_sequences: violating,
        rate: violating as f64 / n,
        per_category: categories
            .iter()
            .enumerate()
            .map(|(c, cat)| {
                let v = flags.iter().filter(|(f, _)| f[c]).count();
                CategoryViolations {
                    name: cat.clone(),
                    violating_sequences: v,
                    rate: v as f64 / n,
                }
            })
            .collect(),
        fallback_steps: flags.iter().map(|(_, fb)| fb).sum(),
    }
}

/// Merge `banks` (named by category) and count violating sequences for the
/// recorded data and for each mode. Every sequence is re-driven from its first
/// state by replaying its recorded finite differences through the filter.
pub fn compose_report(
    banks: Vec<(String, BarrierBank)>,
    sequences: &[Vec<LatentState>],
    modes: &[SteeringMode],
    config: &SteeringConfig,
    tolerance: f64,
) -> Result<(BarrierBank, ComposeReport)> {
    if banks.is_empty() {
        return Err(Error::EmptyBank);
    }
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::InvalidConfig("tolerance must be non-negative".into()));
    }
    let mut categories = Vec::new();
    let mut groups = Vec::new();
    let mut head_names = Vec::new();
    let mut next = 0;
    let mut parts = Vec::new();
    for (name, bank) in banks {
        let k = bank.len();
        groups.push((next..next + k).collect::<Vec<_>>());
        next += k;
        if k == 1 {
            head_names.push(name.clone());
        } else {
            head_names.extend((0..k).map(|j| format!("{name}.{j}")));
        }
        categories.push(name);
        parts.push(bank);
    }
    let merged = BarrierBank::compose(parts)?.with_category_names(head_names)?;
    for s in sequences.iter().flatten() {
        s.check_dim(merged.input_dim())?;
    }

    let delta = config.delta;
    let original: Vec<(Vec<bool>, usize)> = sequences
        .par_iter()
        .map(|seq| (category_flags(&merged, &groups, seq, delta, tolerance), 0))
        .collect();
    let original = summarize("original".into(), &categories, &original);

    let mut per_mode = Vec::new();
    for &mode in modes {
        let session = SteeringSession::new(merged.clone(), config.clone().with_mode(mode))?;
        let flags = sequences
            .par_iter()
            .map(|seq| {
                if seq.len() < 2 {
                    return Ok((category_flags(&merged, &groups, seq, delta, tolerance), 0));
                }
                let nominal = NominalDynamics::replay_states(seq, config.dt)?;
                let traj = rollout_with(&seq[0], &nominal, &session, seq.len() - 1)?;
                Ok((
                    category_flags(&merged, &groups, &traj.states, delta, tolerance),
                    traj.fallback_steps,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        per_mode.push(summarize(mode.name().into(), &categories, &flags));
    }
    let report = ComposeReport {
        heads: merged.len(),
        categories,
        sequences: sequences.len(),
        tolerance,
        original,
        modes: per_mode,
    };
    Ok((merged, report))
}
