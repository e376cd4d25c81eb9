//! Barrier functions `b_k(h)`: the safe region of head `k` is `b_k(h) >= 0`.
//!
//! A [`Barrier`] is either a trained [`BarrierNet`] or one of two closed-form
//! shapes (half-space, ball) whose values and gradients are exact. The
//! closed-form shapes give steering and invariance checks an exact ground
//! truth independent of network training.

mod io;
mod loss;
pub mod net;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_bank, read_sidecar, write_bank, BankSidecar, BANK_FORMAT_VERSION, BANK_MAGIC};
pub use loss::{loss_safe, loss_unsafe, safe_hinge, total_loss, unsafe_hinge};
pub use net::{BarrierNet, Tape, DESK_HIDDEN_DIMS, FULL_HIDDEN_DIMS};
pub use train::{train, OptimizerKind, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::types::{LatentState, SafetyLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Barrier {
    Neural(BarrierNet),
    /// `b(h) = normal . h + offset`
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// `b(h) = radius^2 - |h - center|^2`
    Sphere {
        center: Vec<f64>,
        radius: f64,
    },
}

/// A barrier evaluated at one point; keeps what the reverse pass needs.
pub struct Evaluation<'a> {
    barrier: &'a Barrier,
    input: &'a [f64],
    tape: Option<Tape>,
    value: f64,
}

impl Evaluation<'_> {
    pub fn value(&self) -> f64 {
        self.value
    }

    /// `out += weight * grad b(h)`
    pub fn accumulate_gradient(&self, weight: f64, out: &mut [f64]) {
        match self.barrier {
            Barrier::Neural(net) => {
                let tape = self.tape.as_ref().expect("neural evaluation records a tape");
                net.backward(tape, weight, Some(out), None);
            }
            Barrier::HalfSpace { normal, .. } => {
                for (o, n) in out.iter_mut().zip(normal) {
                    *o += weight * n;
                }
            }
            Barrier::Sphere { center, .. } => {
                for ((o, h), c) in out.iter_mut().zip(self.input).zip(center) {
                    *o -= 2.0 * weight * (h - c);
                }
            }
        }
    }

    pub fn gradient(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.input.len()];
        self.accumulate_gradient(1.0, &mut g);
        g
    }
}

impl Barrier {
    pub fn half_space(normal: Vec<f64>, offset: f64) -> Self {
        Barrier::HalfSpace { normal, offset }
    }

    pub fn sphere(center: Vec<f64>, radius: f64) -> Self {
        Barrier::Sphere { center, radius }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Barrier::Neural(net) => net.input_dim,
            Barrier::HalfSpace { normal, .. } => normal.len(),
            Barrier::Sphere { center, .. } => center.len(),
        }
    }

    /// Unchecked evaluation on a raw slice of the right length.
    pub fn value_raw(&self, h: &[f64]) -> f64 {
        match self {
            Barrier::Neural(net) => net.forward(h),
            Barrier::HalfSpace { normal, offset } => dot(normal, h) + offset,
            Barrier::Sphere { center, radius } => {
                let d2: f64 = h.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                radius * radius - d2
            }
        }
    }

    /// Unchecked evaluation that keeps the reverse-pass state.
    pub fn eval_raw<'a>(&'a self, h: &'a [f64]) -> Evaluation<'a> {
        match self {
            Barrier::Neural(net) => {
                let tape = net.forward_tape(h);
                let value = tape.value;
                Evaluation {
                    barrier: self,
                    input: h,
                    tape: Some(tape),
                    value,
                }
            }
            _ => Evaluation {
                barrier: self,
                input: h,
                tape: None,
                value: self.value_raw(h),
            },
        }
    }

    pub fn evaluate(&self, h: &LatentState) -> Result<f64> {
        h.check_dim(self.input_dim())?;
        Ok(self.value_raw(h.as_slice()))
    }

    /// Exact gradient of `b` with respect to the input.
    pub fn input_gradient(&self, h: &LatentState) -> Result<Vec<f64>> {
        h.check_dim(self.input_dim())?;
        Ok(self.eval_raw(h.as_slice()).gradient())
    }

    fn validate(&self) -> Result<()> {
        match self {
            Barrier::Neural(net) => net.validate().map_err(Error::ModelFormat),
            Barrier::HalfSpace { normal, offset } => {
                if normal.iter().chain(std::iter::once(offset)).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("half-space barrier"))
                }
            }
            Barrier::Sphere { center, radius } => {
                if center.iter().chain(std::iter::once(radius)).all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("sphere barrier"))
                }
            }
        }
    }
}

/// `K >= 1` barriers over a common input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierBank {
    barriers: Vec<Barrier>,
    category_names: Option<Vec<String>>,
}

impl BarrierBank {
    pub fn new(barriers: Vec<Barrier>) -> Result<Self> {
        let first = barriers.first().ok_or(Error::EmptyBank)?;
        let dim = first.input_dim();
        for b in &barriers {
            if b.input_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: b.input_dim(),
                });
            }
            b.validate()?;
        }
        Ok(Self {
            barriers,
            category_names: None,
        })
    }

    /// `heads` freshly initialised networks sharing `hidden_dims`.
    pub fn neural(heads: usize, input_dim: usize, hidden_dims: &[usize], seed: u64) -> Result<Self> {
        if heads == 0 {
            return Err(Error::EmptyBank);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(
            (0..heads)
                .map(|_| Barrier::Neural(BarrierNet::init(input_dim, hidden_dims, &mut rng)))
                .collect(),
        )
    }

    pub fn with_category_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.barriers.len() {
            return Err(Error::InvalidConfig(format!(
                "{} category names for {} barriers",
                names.len(),
                self.barriers.len()
            )));
        }
        self.category_names = Some(names);
        Ok(self)
    }

    /// Concatenate independently trained banks into one.
    pub fn compose(banks: Vec<BarrierBank>) -> Result<Self> {
        let mut barriers = Vec::new();
        let mut names = Vec::new();
        let mut any_named = false;
        for (i, bank) in banks.into_iter().enumerate() {
            let k = bank.len();
            match bank.category_names {
                Some(n) => {
                    any_named = true;
                    names.extend(n);
                }
                None if k == 1 => names.push(format!("bank{i}")),
                None => names.extend((0..k).map(|j| format!("bank{i}.{j}"))),
            }
            barriers.extend(bank.barriers);
        }
        let out = Self::new(barriers)?;
        if any_named || names.len() > 1 {
            out.with_category_names(names)
        } else {
            Ok(out)
        }
    }

    pub fn len(&self) -> usize {
        self.barriers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.barriers.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.barriers[0].input_dim()
    }

    pub fn barriers(&self) -> &[Barrier] {
        &self.barriers
    }

    pub(crate) fn barriers_mut(&mut self) -> &mut [Barrier] {
        &mut self.barriers
    }

    pub fn category_names(&self) -> Option<&[String]> {
        self.category_names.as_deref()
    }

    pub fn values(&self, h: &LatentState) -> Result<Vec<f64>> {
        h.check_dim(self.input_dim())?;
        Ok(self.values_raw(h.as_slice()))
    }

    pub fn values_raw(&self, h: &[f64]) -> Vec<f64> {
        self.barriers.iter().map(|b| b.value_raw(h)).collect()
    }

    /// Decision rule: safe iff `min_k b_k(h) >= threshold`.
    pub fn classify(&self, h: &LatentState, threshold: f64) -> Result<SafetyLabel> {
        let min = self.values(h)?.into_iter().fold(f64::INFINITY, f64::min);
        Ok(if min >= threshold {
            SafetyLabel::Safe
        } else {
            SafetyLabel::Unsafe
        })
    }

    /// Fraction of states classified correctly at threshold 0.
    pub fn accuracy<'a, I>(&self, states: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a crate::types::LabeledState>,
    {
        let mut n = 0usize;
        let mut ok = 0usize;
        for s in states {
            n += 1;
            if self.classify(&s.state, 0.0)? == s.label {
                ok += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { ok as f64 / n as f64 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(v: &[f64]) -> LatentState {
        LatentState::new(v.to_vec()).unwrap()
    }

    fn unit_disk() -> Barrier {
        Barrier::sphere(vec![0.0, 0.0], 1.0)
    }

    #[test]
    fn analytic_disk_values() {
        assert_eq!(unit_disk().evaluate(&st(&[0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(unit_disk().evaluate(&st(&[1.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn analytic_disk_gradient() {
        let g = unit_disk().input_gradient(&st(&[0.5, 0.0])).unwrap();
        assert_eq!(g, vec![-1.0, 0.0]);
    }

    #[test]
    fn affine_gradient_is_normal_everywhere() {
        let b = Barrier::half_space(vec![0.3, -2.0, 1.5], 0.7);
        for h in [[0.0, 0.0, 0.0], [5.0, -3.0, 1.0], [-1e3, 2.0, 0.25]] {
            assert_eq!(b.input_gradient(&st(&h)).unwrap(), vec![0.3, -2.0, 1.5]);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(matches!(
            unit_disk().evaluate(&st(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(unit_disk().input_gradient(&st(&[1.0])).is_err());
    }

    #[test]
    fn bank_rejects_mixed_dims_and_empty() {
        assert!(matches!(BarrierBank::new(vec![]), Err(Error::EmptyBank)));
        let r = BarrierBank::new(vec![unit_disk(), Barrier::half_space(vec![1.0], 0.0)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn repeated_evaluation_is_bitwise_stable() {
        let bank = BarrierBank::neural(3, 4, &DESK_HIDDEN_DIMS, 9).unwrap();
        let h = st(&[0.2, -0.1, 0.7, 1.1]);
        let a = bank.values(&h).unwrap();
        for _ in 0..5 {
            assert_eq!(bank.values(&h).unwrap(), a);
        }
    }

    #[test]
    fn compose_concatenates_in_order() {
        let a = BarrierBank::new(vec![Barrier::half_space(vec![1.0, 0.0], 0.0)]).unwrap();
        let b = BarrierBank::new(vec![Barrier::half_space(vec![0.0, 1.0], 0.0), unit_disk()]).unwrap();
        let c = BarrierBank::compose(vec![a, b]).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.values(&st(&[2.0, 3.0])).unwrap(), vec![2.0, 3.0, -12.0]);
        assert_eq!(c.category_names().unwrap(), &["bank0", "bank1.0", "bank1.1"]);
    }
}
