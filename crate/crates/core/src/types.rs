//! Domain types shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::all_finite;

/// One latent (hidden) state. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentState(Vec<f64>);

impl LatentState {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFinite("latent state"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.0.len(),
            });
        }
        Ok(())
    }

    /// `self + control * dt`, the latent update rule.
    pub fn advance(&self, control: &ControlInput, dt: f64) -> Self {
        Self(self.0.iter().zip(control.as_slice()).map(|(h, u)| h + u * dt).collect())
    }
}

impl<'de> Deserialize<'de> for LatentState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        LatentState::new(v).map_err(serde::de::Error::custom)
    }
}

/// Latent-space velocity `u`, in units of state per `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput(Vec<f64>);

impl ControlInput {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFinite("control input"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Safe / unsafe label, serialized as `+1` / `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SafetyLabel {
    Safe,
    Unsafe,
}

impl SafetyLabel {
    pub fn as_i8(self) -> i8 {
        match self {
            SafetyLabel::Safe => 1,
            SafetyLabel::Unsafe => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(SafetyLabel::Safe),
            -1 => Some(SafetyLabel::Unsafe),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SafetyLabel::Safe => "safe",
            SafetyLabel::Unsafe => "unsafe",
        }
    }
}

impl Serialize for SafetyLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for SafetyLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        i8::try_from(v)
            .ok()
            .and_then(SafetyLabel::from_i8)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be +1 or -1, got {v}")))
    }
}

/// A latent state with its label and provenance (sequence / token id).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub state: LatentState,
    pub label: SafetyLabel,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteeringMode {
    Qp,
    Top2,
    Lse,
}

impl SteeringMode {
    pub const ALL: [SteeringMode; 3] = [SteeringMode::Qp, SteeringMode::Top2, SteeringMode::Lse];

    pub fn name(self) -> &'static str {
        match self {
            SteeringMode::Qp => "qp",
            SteeringMode::Top2 => "top2",
            SteeringMode::Lse => "lse",
        }
    }
}

impl fmt::Display for SteeringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SteeringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qp" => Ok(SteeringMode::Qp),
            "top2" | "top-2" => Ok(SteeringMode::Top2),
            "lse" => Ok(SteeringMode::Lse),
            other => Err(Error::InvalidConfig(format!("unknown steering mode '{other}'"))),
        }
    }
}

/// Parameters of the safety filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteeringConfig {
    /// Slope of the linear class-K function.
    pub alpha: f64,
    /// Safety threshold; the safe set is `b_k(h) >= delta` for all `k`.
    pub delta: f64,
    /// Log-sum-exp sharpness.
    pub kappa: f64,
    pub dt: f64,
    pub mode: SteeringMode,
    /// Gradients (and Gram determinants) below this are treated as degenerate.
    pub grad_floor: f64,
    pub qp_tol: f64,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            delta: 0.0,
            kappa: 10.0,
            dt: 1.0,
            mode: SteeringMode::Qp,
            grad_floor: 1e-12,
            qp_tol: 1e-9,
        }
    }
}

impl SteeringConfig {
    pub fn with_mode(mut self, mode: SteeringMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("kappa", self.kappa),
            ("dt", self.dt),
            ("grad_floor", self.grad_floor),
            ("qp_tol", self.qp_tol),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.delta.is_finite() {
            return Err(Error::InvalidConfig("delta must be finite".into()));
        }
        Ok(())
    }
}

/// Result of one steering call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteeringOutcome {
    pub u_star: ControlInput,
    pub corrected_state: LatentState,
    pub barrier_values_before: Vec<f64>,
    pub barrier_values_after: Vec<f64>,
    /// Zero-based head indices whose constraint shaped `u_star`.
    pub active_constraints: Vec<usize>,
    pub mode_used: SteeringMode,
    pub fallback_triggered: bool,
}

/// Finite-difference estimate of the latent velocity, `(h_t - h_prev) / dt`.
pub fn nominal_control(h_prev: &LatentState, h_t: &LatentState, dt: f64) -> Result<ControlInput> {
    h_t.check_dim(h_prev.dim())?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let u: Vec<f64> = h_t
        .as_slice()
        .iter()
        .zip(h_prev.as_slice())
        .map(|(a, b)| (a - b) / dt)
        .collect();
    ControlInput::new(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(v: &[f64]) -> LatentState {
        LatentState::new(v.to_vec()).unwrap()
    }

    #[test]
    fn nominal_control_examples() {
        let u = nominal_control(&st(&[0.0, 0.0]), &st(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(u.as_slice(), &[0.0, 0.0]);
        let u = nominal_control(&st(&[1.0, 2.0]), &st(&[3.0, 2.0]), 1.0).unwrap();
        assert_eq!(u.as_slice(), &[2.0, 0.0]);
        let u = nominal_control(&st(&[1.0, 0.0]), &st(&[0.0, 0.0]), 0.5).unwrap();
        assert_eq!(u.as_slice(), &[-2.0, 0.0]);
    }

    #[test]
    fn nominal_control_errors() {
        assert!(matches!(
            nominal_control(&st(&[1.0]), &st(&[1.0, 2.0]), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(nominal_control(&st(&[1.0]), &st(&[2.0]), 0.0).is_err());
        assert!(nominal_control(&st(&[1.0]), &st(&[2.0]), -1.0).is_err());
    }

    #[test]
    fn latent_state_rejects_nan() {
        assert!(LatentState::new(vec![0.0, f64::NAN]).is_err());
        assert!(LatentState::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn label_serializes_as_sign() {
        assert_eq!(serde_json::to_string(&SafetyLabel::Safe).unwrap(), "1");
        assert_eq!(serde_json::to_string(&SafetyLabel::Unsafe).unwrap(), "-1");
        assert!(serde_json::from_str::<SafetyLabel>("0").is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let c = SteeringConfig::default();
        c.validate().unwrap();
        assert_eq!(c.alpha, 0.3);
        assert_eq!(c.delta, 0.0);
        assert_eq!(c.kappa, 10.0);
        assert_eq!(c.dt, 1.0);
        let bad = SteeringConfig { kappa: 0.0, ..c };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn nominal_control_inverts_update(
            h in prop::collection::vec(-10.0f64..10.0, 1..8),
            seed in prop::collection::vec(-5.0f64..5.0, 8),
            dt in 0.01f64..4.0,
        ) {
            let u: Vec<f64> = seed[..h.len()].to_vec();
            let h0 = LatentState::new(h).unwrap();
            let ctrl = ControlInput::new(u.clone()).unwrap();
            let h1 = h0.advance(&ctrl, dt);
            let back = nominal_control(&h0, &h1, dt).unwrap();
            for (a, b) in back.as_slice().iter().zip(&u) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()) / dt.min(1.0));
            }
        }
    }
}
