use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    /// `None` for classes absent from both maps.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that are present.
    pub mean: f64,
}

/// Per-class Dice `2|P∩T| / (|P| + |T|)`.
pub fn dice_score(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<DiceScore, ModelError> {
    if pred.len() != truth.len() {
        return Err(ModelError::Shape {
            what: "label maps",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut pred_count = vec![0u64; num_classes];
    let mut truth_count = vec![0u64; num_classes];
    let mut overlap = vec![0u64; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for label in [p, t] {
            if label >= num_classes {
                return Err(ModelError::LabelOutOfRange { label, num_classes });
            }
        }
        pred_count[p] += 1;
        truth_count[t] += 1;
        if p == t {
            overlap[p] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let denom = pred_count[c] + truth_count[c];
            (denom > 0).then(|| 2.0 * overlap[c] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(DiceScore { per_class, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_maps_score_one() {
        let map = [0, 1, 2, 2, 1, 0, 3];
        let d = dice_score(&map, &map, 5).unwrap();
        assert_eq!(d.mean, 1.0);
        assert_eq!(d.per_class[4], None);
        assert!(d.per_class[..4].iter().all(|&c| c == Some(1.0)));
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let truth = [1, 1, 0, 0];
        let pred = [0, 0, 1, 1];
        assert_eq!(dice_score(&pred, &truth, 2).unwrap().per_class[1], Some(0.0));
    }

    #[test]
    fn hand_counted_four_pixel_case() {
        let d = dice_score(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(d.per_class, vec![Some(2.0 / 3.0), Some(4.0 / 5.0)]);
        assert!((d.mean - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_error() {
        assert!(matches!(dice_score(&[0], &[0, 1], 2), Err(ModelError::Shape { .. })));
    }

    #[test]
    fn out_of_range_label_is_error() {
        assert!(dice_score(&[2], &[0], 2).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..64)) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let ab = dice_score(&a, &b, 5).unwrap();
            let ba = dice_score(&b, &a, 5).unwrap();
            prop_assert_eq!(&ab.per_class, &ba.per_class);
            for v in ab.per_class.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(v));
            }
            prop_assert!((0.0..=1.0).contains(&ab.mean));
        }
    }
}
