//! Seeded synthetic datasets standing in for extracted activations.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SafetyDataset;
use crate::barrier::{Barrier, BarrierBank};
use crate::error::{Error, Result};
use crate::types::{LabeledState, LatentState, SafetyLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Safe: upper arc; unsafe: the interleaved lower arc.
    TwoMoons2D,
    /// Safe: one cluster at the origin; unsafe: clusters on the +-x1 axes.
    GaussianClusters,
    /// Safe: disk of radius 1; unsafe: annulus of radii 2..3.
    AnnulusVsCore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_per_class: usize,
    /// Gaussian noise standard deviation (also used for the dimensions past the second).
    pub noise: f64,
    pub d_h: usize,
    pub seed: u64,
}

/// Center of the two-moons layout, subtracted so the data sits around the origin.
const MOONS_CENTER: [f64; 2] = [0.5, 0.25];

fn moon_point(label: SafetyLabel, t: f64) -> [f64; 2] {
    match label {
        SafetyLabel::Safe => [t.cos() - MOONS_CENTER[0], t.sin() - MOONS_CENTER[1]],
        SafetyLabel::Unsafe => [1.0 - t.cos() - MOONS_CENTER[0], 0.5 - t.sin() - MOONS_CENTER[1]],
    }
}

/// Balanced dataset: `n_per_class` safe records followed by `n_per_class`
/// unsafe records, each with a unique source id.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SafetyDataset> {
    if spec.d_h < 2 {
        return Err(Error::InvalidConfig(format!("d_h must be >= 2, got {}", spec.d_h)));
    }
    if spec.n_per_class == 0 {
        return Err(Error::InvalidConfig("n_per_class must be >= 1".into()));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::InvalidConfig("noise must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).expect("validated std");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let tag = match spec.kind {
        SyntheticKind::TwoMoons2D => "moons",
        SyntheticKind::GaussianClusters => "clusters",
        SyntheticKind::AnnulusVsCore => "annulus",
    };
    let mut records = Vec::with_capacity(2 * spec.n_per_class);
    for label in [SafetyLabel::Safe, SafetyLabel::Unsafe] {
        for i in 0..spec.n_per_class {
            let base: [f64; 2] = match spec.kind {
                SyntheticKind::TwoMoons2D => moon_point(label, rng.gen_range(0.0..=PI)),
                SyntheticKind::GaussianClusters => match label {
                    SafetyLabel::Safe => [0.5 * unit.sample(&mut rng), 0.5 * unit.sample(&mut rng)],
                    SafetyLabel::Unsafe => {
                        let side = if rng.gen_bool(0.5) { 2.5 } else { -2.5 };
                        [side + 0.5 * unit.sample(&mut rng), 0.5 * unit.sample(&mut rng)]
                    }
                },
                SyntheticKind::AnnulusVsCore => {
                    let theta = rng.gen_range(0.0..2.0 * PI);
                    let r = match label {
                        // uniform over the area
                        SafetyLabel::Safe => rng.gen_range(0.0f64..1.0).sqrt(),
                        SafetyLabel::Unsafe => rng.gen_range(4.0f64..9.0).sqrt(),
                    };
                    [r * theta.cos(), r * theta.sin()]
                }
            };
            let mut v = Vec::with_capacity(spec.d_h);
            v.push(base[0] + noise.sample(&mut rng));
            v.push(base[1] + noise.sample(&mut rng));
            for _ in 2..spec.d_h {
                v.push(noise.sample(&mut rng));
            }
            records.push(LabeledState {
                state: LatentState::new(v)?,
                label,
                source_id: format!("{tag}-{}-{i}", label.name()),
            });
        }
    }
    SafetyDataset::new(spec.d_h, 0, records)
}

/// Trajectory fixture for composing several per-category barriers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiConstraintSpec {
    /// Number of categories; category `k` is unsafe once `h_k > 1`.
    pub categories: usize,
    /// At least `categories`; the remaining coordinates are unconstrained.
    pub d_h: usize,
    pub sequences: usize,
    /// Transitions per sequence.
    pub steps: usize,
    pub seed: u64,
}

/// One closed-form barrier `b_k(h) = 1 - h_k` per category, and straight-line
/// sequences from inside the safe box toward targets that leave it through
/// 0..=`categories` faces at once. A sequence is labeled unsafe when any of
/// its states is outside the box.
pub fn multi_constraint_fixture(spec: &MultiConstraintSpec) -> Result<(Vec<BarrierBank>, SafetyDataset)> {
    if spec.categories == 0 || spec.d_h < spec.categories.max(2) {
        return Err(Error::InvalidConfig(format!(
            "need 1 <= categories <= d_h and d_h >= 2, got {} and {}",
            spec.categories, spec.d_h
        )));
    }
    if spec.sequences == 0 || spec.steps == 0 {
        return Err(Error::InvalidConfig("sequences and steps must be >= 1".into()));
    }
    let banks = (0..spec.categories)
        .map(|k| {
            let mut normal = vec![0.0; spec.d_h];
            normal[k] = -1.0;
            BarrierBank::new(vec![Barrier::half_space(normal, 1.0)])
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.sequences * (spec.steps + 1));
    for i in 0..spec.sequences {
        let start: Vec<f64> = (0..spec.d_h).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let crossing = rng.gen_range(0..=spec.categories);
        let mut order: Vec<usize> = (0..spec.categories).collect();
        order.shuffle(&mut rng);
        let mut target: Vec<f64> = (0..spec.d_h).map(|_| rng.gen_range(-0.5..0.5)).collect();
        for &k in &order[..crossing] {
            target[k] = rng.gen_range(3.0..5.0);
        }
        let path: Vec<Vec<f64>> = (0..=spec.steps)
            .map(|t| {
                let f = t as f64 / spec.steps as f64;
                start.iter().zip(&target).map(|(a, b)| a + f * (b - a)).collect()
            })
            .collect();
        let unsafe_path = path.iter().any(|h| h[..spec.categories].iter().any(|&x| x > 1.0));
        let label = if unsafe_path {
            SafetyLabel::Unsafe
        } else {
            SafetyLabel::Safe
        };
        for h in path {
            records.push(LabeledState {
                state: LatentState::new(h)?,
                label,
                source_id: format!("mc-{i}"),
            });
        }
    }
    Ok((banks, SafetyDataset::new(spec.d_h, 0, records)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moons(n: usize, noise: f64, seed: u64) -> SafetyDataset {
        generate_synthetic(&SyntheticSpec {
            kind: SyntheticKind::TwoMoons2D,
            n_per_class: n,
            noise,
            d_h: 2,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        for r in moons(200, 0.0, 3).records() {
            let [x, y] = [r.state.as_slice()[0], r.state.as_slice()[1]];
            let (cx, cy) = match r.label {
                SafetyLabel::Safe => (-MOONS_CENTER[0], -MOONS_CENTER[1]),
                SafetyLabel::Unsafe => (1.0 - MOONS_CENTER[0], 0.5 - MOONS_CENTER[1]),
            };
            let rad = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            assert!((rad - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_record_dataset() {
        let ds = moons(1, 0.1, 0);
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.class_counts(), (1, 1));
    }

    #[test]
    fn fixed_seed_is_bitwise_identical() {
        assert_eq!(moons(50, 0.1, 9), moons(50, 0.1, 9));
        assert_ne!(moons(50, 0.1, 9), moons(50, 0.1, 10));
    }

    #[test]
    fn extra_dimensions_and_bad_dims() {
        let ds = generate_synthetic(&SyntheticSpec {
            kind: SyntheticKind::AnnulusVsCore,
            n_per_class: 10,
            noise: 0.0,
            d_h: 5,
            seed: 0,
        })
        .unwrap();
        assert_eq!(ds.d_h(), 5);
        for r in ds.records() {
            let n = r.state.as_slice()[..2].iter().map(|v| v * v).sum::<f64>().sqrt();
            match r.label {
                SafetyLabel::Safe => assert!(n <= 1.0),
                SafetyLabel::Unsafe => assert!((2.0..=3.0).contains(&n)),
            }
        }
        let bad = SyntheticSpec {
            kind: SyntheticKind::GaussianClusters,
            n_per_class: 10,
            noise: 0.1,
            d_h: 1,
            seed: 0,
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn fixture_has_one_box_face_per_category() {
        let spec = MultiConstraintSpec {
            categories: 4,
            d_h: 6,
            sequences: 50,
            steps: 8,
            seed: 1,
        };
        let (banks, ds) = multi_constraint_fixture(&spec).unwrap();
        assert_eq!(banks.len(), 4);
        assert_eq!(ds.len(), 50 * 9);
        assert_eq!(ds.sequences().len(), 50);
        let probe = LatentState::new(vec![1.5, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(banks[0].values(&probe).unwrap(), vec![-0.5]);
        assert_eq!(banks[1].values(&probe).unwrap(), vec![1.0]);
        let (safe, unsafe_) = ds.class_counts();
        assert!(safe > 0 && unsafe_ > 0);
        assert_eq!(multi_constraint_fixture(&spec).unwrap().1, ds);
    }
}
