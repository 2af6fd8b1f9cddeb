use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step_in_place, AdamConfig, OptimizerState};
use super::dice::dice_score;
use super::mlp::Network;
use super::spec::{ModelSpec, ModelWeights};
use super::ModelError;
use crate::data::{DatasetShard, SegImage};

/// Number of own updates between learning-rate halvings.
pub const LR_HALVING_INTERVAL: u64 = 4;

/// `base_lr * 0.5^floor(update_round / 4)`, where `update_round` counts the
/// client's own completed fine-tunes.
pub fn lr_schedule(update_round: u64, base_lr: f64) -> f64 {
    let halvings = (update_round / LR_HALVING_INTERVAL).min(i32::MAX as u64) as i32;
    base_lr * 0.5f64.powi(halvings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneParams {
    pub epochs: usize,
    pub lr: f64,
    /// Pixels per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl FineTuneParams {
    pub fn new(epochs: usize, lr: f64, batch_size: usize, seed: u64) -> Self {
        Self {
            epochs,
            lr,
            batch_size,
            seed,
            adam: AdamConfig::default(),
        }
    }
}

/// Runs `epochs` passes over every pixel of the shard in seeded random
/// mini-batches, starting from `weights` with a fresh Adam state.
pub fn fine_tune(
    spec: &ModelSpec,
    weights: &ModelWeights,
    shard: &DatasetShard,
    params: &FineTuneParams,
) -> Result<(ModelWeights, OptimizerState), ModelError> {
    spec.check(weights)?;
    if shard.is_empty() || shard.pixel_count() == 0 {
        return Err(ModelError::EmptyShard);
    }
    if params.epochs == 0 || params.batch_size == 0 {
        return Err(ModelError::InvalidArgument("epochs and batch_size must be at least 1".into()));
    }
    check_images(spec, &shard.images)?;

    let mut order: Vec<(u32, u32)> = shard
        .images
        .iter()
        .enumerate()
        .flat_map(|(i, img)| (0..img.pixel_count() as u32).map(move |p| (i as u32, p)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut net = Network::new(spec);
    let mut out = weights.clone();
    let mut state = OptimizerState::new(out.len());
    let mut grad = vec![0.0; out.len()];

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(params.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &(i, p) in chunk {
                let img = &shard.images[i as usize];
                let p = p as usize;
                net.accumulate(&out.params, img.pixel(p), img.labels[p], scale, &mut grad);
            }
            adam_step_in_place(&mut out.params, &grad, &mut state, params.lr, &params.adam)?;
        }
    }
    if !out.is_finite() {
        return Err(ModelError::NonFinite("parameters after fine-tune"));
    }
    Ok((out, state))
}

fn check_images(spec: &ModelSpec, images: &[SegImage]) -> Result<(), ModelError> {
    for img in images {
        if img.channels != spec.input_dim {
            return Err(ModelError::Shape {
                what: "image channels",
                expected: spec.input_dim,
                actual: img.channels,
            });
        }
        if let Some(&bad) = img.labels.iter().find(|&&l| l >= spec.num_classes) {
            return Err(ModelError::LabelOutOfRange {
                label: bad,
                num_classes: spec.num_classes,
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy over every pixel of `images`.
pub fn mean_loss(spec: &ModelSpec, weights: &ModelWeights, images: &[SegImage]) -> Result<f64, ModelError> {
    spec.check(weights)?;
    check_images(spec, images)?;
    let mut net = Network::new(spec);
    let mut scratch = vec![0.0; weights.len()];
    let mut total = 0.0;
    let mut count = 0usize;
    for img in images {
        for p in 0..img.pixel_count() {
            total += net.accumulate(&weights.params, img.pixel(p), img.labels[p], 0.0, &mut scratch);
            count += 1;
        }
    }
    if count == 0 {
        return Err(ModelError::EmptyBatch);
    }
    Ok(total / count as f64)
}

/// Arg-max label map for one image.
pub fn predict_image(spec: &ModelSpec, weights: &ModelWeights, image: &SegImage) -> Result<Vec<usize>, ModelError> {
    spec.check(weights)?;
    check_images(spec, std::slice::from_ref(image))?;
    let mut net = Network::new(spec);
    Ok((0..image.pixel_count())
        .map(|p| net.predict(&weights.params, image.pixel(p)))
        .collect())
}

/// Mean over images of each image's mean class Dice.
pub fn evaluate_dice(spec: &ModelSpec, weights: &ModelWeights, images: &[SegImage]) -> Result<f64, ModelError> {
    if images.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for img in images {
        let pred = predict_image(spec, weights, img)?;
        total += dice_score(&pred, &img.labels, spec.num_classes)?.mean;
    }
    Ok(total / images.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel_image(features: Vec<f64>, label: usize) -> SegImage {
        SegImage {
            height: 1,
            width: 1,
            channels: features.len(),
            features,
            labels: vec![label],
            cohort: 0.0,
        }
    }

    fn toy_shard() -> DatasetShard {
        // Two classes separated by the sign of the first feature.
        let images = (0..12)
            .map(|i| {
                let x = (i as f64 - 5.5) / 3.0;
                pixel_image(vec![x, 0.3 * (i % 3) as f64], usize::from(x > 0.0))
            })
            .collect();
        DatasetShard::new(0, images)
    }

    #[test]
    fn schedule_halves_every_four_updates() {
        assert_eq!(lr_schedule(0, 0.001), 0.001);
        assert_eq!(lr_schedule(3, 0.001), 0.001);
        assert_eq!(lr_schedule(4, 0.001), 0.0005);
        assert_eq!(lr_schedule(9, 0.001), 0.00025);
        let mut prev = f64::INFINITY;
        for r in 0..100 {
            let lr = lr_schedule(r, 0.01);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn step_count_is_epochs_times_batches() {
        let spec = ModelSpec::new(2, vec![], 2);
        let shard = DatasetShard::new(
            0,
            vec![
                pixel_image(vec![1.0, 0.0], 0),
                pixel_image(vec![0.0, 1.0], 1),
                pixel_image(vec![1.0, 1.0], 0),
            ],
        );
        let (_, st) = fine_tune(&spec, &spec.init(0).unwrap(), &shard, &FineTuneParams::new(2, 1e-3, 1, 9)).unwrap();
        assert_eq!(st.step_count, 6);
        let (_, st) = fine_tune(&spec, &spec.init(0).unwrap(), &shard, &FineTuneParams::new(2, 1e-3, 2, 9)).unwrap();
        assert_eq!(st.step_count, 4);
    }

    #[test]
    fn fine_tune_is_deterministic() {
        let spec = ModelSpec::new(2, vec![4], 2);
        let w = spec.init(1).unwrap();
        let p = FineTuneParams::new(2, 1e-2, 4, 5);
        let a = fine_tune(&spec, &w, &toy_shard(), &p).unwrap();
        let b = fine_tune(&spec, &w, &toy_shard(), &p).unwrap();
        assert!(a.0.bitwise_eq(&b.0));
        let c = fine_tune(&spec, &w, &toy_shard(), &FineTuneParams { seed: 6, ..p }).unwrap();
        assert!(!a.0.bitwise_eq(&c.0));
    }

    #[test]
    fn fine_tune_reduces_training_loss() {
        let spec = ModelSpec::new(2, vec![4], 2);
        let shard = toy_shard();
        let w = spec.init(3).unwrap();
        let before = mean_loss(&spec, &w, &shard.images).unwrap();
        let (tuned, _) = fine_tune(&spec, &w, &shard, &FineTuneParams::new(2, 0.05, 2, 0)).unwrap();
        let after = mean_loss(&spec, &tuned, &shard.images).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn empty_shard_is_error() {
        let spec = ModelSpec::new(2, vec![], 2);
        let err = fine_tune(&spec, &spec.zeros(), &DatasetShard::new(0, vec![]), &FineTuneParams::new(2, 1e-3, 1, 0));
        assert!(matches!(err, Err(ModelError::EmptyShard)));
    }

    #[test]
    fn channel_mismatch_is_error() {
        let spec = ModelSpec::new(3, vec![], 2);
        let err = fine_tune(&spec, &spec.zeros(), &toy_shard(), &FineTuneParams::new(1, 1e-3, 1, 0));
        assert!(matches!(err, Err(ModelError::Shape { .. })));
    }

    #[test]
    fn mean_loss_of_zero_model_is_ln_c() {
        let spec = ModelSpec::new(2, vec![], 2);
        let loss = mean_loss(&spec, &spec.zeros(), &toy_shard().images).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }
}
