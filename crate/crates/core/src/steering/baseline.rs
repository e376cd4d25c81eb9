//! Difference-in-means baselines: activation addition and directional ablation.

use serde::{Deserialize, Serialize};

use crate::dataio::SafetyDataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::types::{LatentState, SafetyLabel};

/// `r = mean(safe) - mean(unsafe)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDirection {
    pub r: Vec<f64>,
}

pub fn steering_direction_from_data(dataset: &SafetyDataset) -> Result<SteeringDirection> {
    let d = dataset.d_h();
    let mut sums = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for rec in dataset.records() {
        let c = match rec.label {
            SafetyLabel::Safe => 0,
            SafetyLabel::Unsafe => 1,
        };
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(rec.state.as_slice()) {
            *s += v;
        }
    }
    if counts[0] == 0 {
        return Err(Error::EmptyClass("safe"));
    }
    if counts[1] == 0 {
        return Err(Error::EmptyClass("unsafe"));
    }
    let r = sums[0]
        .iter()
        .zip(&sums[1])
        .map(|(s, u)| s / counts[0] as f64 - u / counts[1] as f64)
        .collect();
    Ok(SteeringDirection { r })
}

/// `h + coefficient * r`
pub fn baseline_activation_addition(h: &LatentState, r: &SteeringDirection, coefficient: f64) -> Result<LatentState> {
    h.check_dim(r.r.len())?;
    LatentState::new(
        h.as_slice()
            .iter()
            .zip(&r.r)
            .map(|(a, b)| a + coefficient * b)
            .collect(),
    )
}

/// Projection of `h` onto the orthogonal complement of `r`.
pub fn baseline_directional_ablation(h: &LatentState, r: &SteeringDirection, grad_floor: f64) -> Result<LatentState> {
    h.check_dim(r.r.len())?;
    let n = norm(&r.r);
    if n < grad_floor {
        return Err(Error::DegenerateDirection { norm: n });
    }
    let coef = dot(&r.r, h.as_slice()) / dot(&r.r, &r.r);
    LatentState::new(h.as_slice().iter().zip(&r.r).map(|(a, b)| a - coef * b).collect())
}
