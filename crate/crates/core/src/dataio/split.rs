use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SafetyDataset;
use crate::error::{Error, Result};

/// Split by source id so no sequence contributes to both sides.
///
/// `round(train_fraction * n_ids)` ids go to the training side, clamped so
/// both sides keep at least one id.
pub fn split(dataset: &SafetyDataset, train_fraction: f64, seed: u64) -> Result<(SafetyDataset, SafetyDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut ids: Vec<&str> = dataset.source_ids().into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::TooFewSources(ids.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: BTreeSet<&str> = ids[..n_train].iter().copied().collect();
    let (train, test): (Vec<_>, Vec<_>) = dataset
        .records()
        .iter()
        .cloned()
        .partition(|r| train_ids.contains(r.source_id.as_str()));
    Ok((
        SafetyDataset::new(dataset.d_h(), dataset.layer_index(), train)?,
        SafetyDataset::new(dataset.d_h(), dataset.layer_index(), test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LabeledState, LatentState, SafetyLabel};

    fn with_ids(n: usize, per_id: usize) -> SafetyDataset {
        let mut recs = Vec::new();
        for i in 0..n {
            for t in 0..per_id {
                recs.push(LabeledState {
                    state: LatentState::new(vec![i as f64, t as f64]).unwrap(),
                    label: if i % 2 == 0 {
                        SafetyLabel::Safe
                    } else {
                        SafetyLabel::Unsafe
                    },
                    source_id: format!("behavior-{i}"),
                });
            }
        }
        SafetyDataset::new(2, 0, recs).unwrap()
    }

    #[test]
    fn behavior_level_320_80() {
        let ds = with_ids(400, 3);
        let (tr, te) = split(&ds, 0.8, 7).unwrap();
        assert_eq!(tr.source_ids().len(), 320);
        assert_eq!(te.source_ids().len(), 80);
        assert!(tr.source_ids().is_disjoint(&te.source_ids()));
        assert_eq!(tr.len() + te.len(), ds.len());
    }

    #[test]
    fn two_ids_half() {
        let (tr, te) = split(&with_ids(2, 4), 0.5, 1).unwrap();
        assert_eq!(tr.source_ids().len(), 1);
        assert_eq!(te.source_ids().len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = with_ids(50, 2);
        assert_eq!(split(&ds, 0.7, 3).unwrap(), split(&ds, 0.7, 3).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(split(&with_ids(1, 5), 0.5, 0), Err(Error::TooFewSources(1))));
        assert!(split(&with_ids(4, 1), 1.0, 0).is_err());
        assert!(split(&with_ids(4, 1), 0.0, 0).is_err());
    }
}
