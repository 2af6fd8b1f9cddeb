use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, SegImage};
use crate::seed::derive_seed;

/// Intensity, centred x, centred y, pure-noise channel.
pub const FEATURE_CHANNELS: usize = 4;

const MAX_COHORT: f64 = 100.0;
const OUTER_RADIUS: f64 = 0.44;

/// Forces the training cohorts to fall into fixed buckets in fixed amounts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortStrata {
    pub boundaries: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub noise_std: f64,
    /// Strength of the cohort effect on region size and intensity. At 1.0
    /// the class intensity bands of all cohorts are still disjoint.
    pub cohort_shift: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_strata: Option<CohortStrata>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_train: 20,
            num_test: 10,
            height: 32,
            width: 32,
            num_classes: 4,
            noise_std: 0.1,
            cohort_shift: 1.0,
            seed: 0,
            cohort_strata: None,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidConfig(msg));
        if self.num_train == 0 || self.num_test == 0 {
            return bad("num_train and num_test must be at least 1".into());
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!("images must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if !(self.cohort_shift >= 0.0 && self.cohort_shift.is_finite()) {
            return bad(format!("cohort_shift must be finite and >= 0, got {}", self.cohort_shift));
        }
        if let Some(strata) = &self.cohort_strata {
            super::split::check_boundaries(&strata.boundaries)?;
            if strata.counts.len() != strata.boundaries.len() + 1 {
                return bad(format!(
                    "{} boundaries need {} counts, got {}",
                    strata.boundaries.len(),
                    strata.boundaries.len() + 1,
                    strata.counts.len()
                ));
            }
            if strata.boundaries.iter().any(|&b| b <= 0.0 || b >= MAX_COHORT) {
                return bad("cohort boundaries must lie strictly inside (0, 100)".into());
            }
            let total: usize = strata.counts.iter().sum();
            if total != self.num_train {
                return bad(format!("strata counts sum to {total}, num_train is {}", self.num_train));
            }
        }
        Ok(())
    }
}

/// Deterministic in `cfg`. Train and test images come from disjoint seed
/// streams.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0xC0_4027]));
    let train_cohorts: Vec<f64> = match &cfg.cohort_strata {
        None => (0..cfg.num_train).map(|_| uniform_cohort(&mut rng)).collect(),
        Some(strata) => {
            let mut buckets: Vec<usize> = strata
                .counts
                .iter()
                .enumerate()
                .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
                .collect();
            buckets.shuffle(&mut rng);
            buckets
                .into_iter()
                .map(|b| {
                    let lo = if b == 0 { 0.0 } else { strata.boundaries[b - 1] };
                    let hi = strata.boundaries.get(b).copied().unwrap_or(MAX_COHORT);
                    // (lo, hi]: bucket membership is upper-inclusive
                    hi - (hi - lo) * rng.random::<f64>()
                })
                .collect()
        }
    };
    let test_cohorts: Vec<f64> = (0..cfg.num_test).map(|_| uniform_cohort(&mut rng)).collect();

    let train = train_cohorts
        .iter()
        .enumerate()
        .map(|(i, &c)| render_image(cfg, c, derive_seed(cfg.seed, &[1, i as u64])))
        .collect();
    let test = test_cohorts
        .iter()
        .enumerate()
        .map(|(i, &c)| render_image(cfg, c, derive_seed(cfg.seed, &[2, i as u64])))
        .collect();
    Ok(Dataset {
        num_classes: cfg.num_classes,
        train,
        test,
    })
}

fn uniform_cohort(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.0..=MAX_COHORT)
}

fn render_image(cfg: &GenConfig, cohort: f64, seed: u64) -> SegImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = cfg.num_classes;
    let gap = 1.0 / (classes - 1) as f64;
    // t in [-0.5, 0.5]
    let t = cohort / MAX_COHORT - 0.5;

    let cx = 0.5 + rng.random_range(-0.06..0.06);
    let cy = 0.5 + rng.random_range(-0.06..0.06);
    let aspect = 1.0 + rng.random_range(-0.1..0.1);
    let size = (1.0 + 0.6 * cfg.cohort_shift * t) * (1.0 + rng.random_range(-0.05..0.05));
    let radii: Vec<f64> = (1..classes)
        .map(|k| OUTER_RADIUS * (classes - k) as f64 / (classes - 1) as f64 * size)
        .collect();
    let offset = cfg.cohort_shift * 0.9 * t * gap;

    let (h, w) = (cfg.height, cfg.width);
    let mut features = Vec::with_capacity(h * w * FEATURE_CHANNELS);
    let mut labels = Vec::with_capacity(h * w);
    for row in 0..h {
        let y = (row as f64 + 0.5) / h as f64;
        for col in 0..w {
            let x = (col as f64 + 0.5) / w as f64;
            let d = ((x - cx).powi(2) + ((y - cy) / aspect).powi(2)).sqrt();
            let label = radii.iter().take_while(|&&r| d < r).count();
            let n1: f64 = StandardNormal.sample(&mut rng);
            let n2: f64 = StandardNormal.sample(&mut rng);
            let level = label as f64 * gap + offset;
            features.extend_from_slice(&[level + cfg.noise_std * n1, x - 0.5, y - 0.5, cfg.noise_std * n2]);
            labels.push(label);
        }
    }
    SegImage {
        height: h,
        width: w,
        channels: FEATURE_CHANNELS,
        features,
        labels,
        cohort,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cohort_bucket;
    use crate::model::dice_score;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::default();
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = GenConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn twenty_train_ten_test() {
        let ds = generate_dataset(&GenConfig::default()).unwrap();
        assert_eq!(ds.train.len(), 20);
        assert_eq!(ds.test.len(), 10);
        for img in ds.train.iter().chain(&ds.test) {
            assert_eq!(img.labels.len(), 32 * 32);
            assert_eq!(img.features.len(), 32 * 32 * FEATURE_CHANNELS);
            assert!(img.features.iter().all(|f| f.is_finite()));
            assert!((0.0..=100.0).contains(&img.cohort));
        }
    }

    #[test]
    fn every_class_present_in_train_set() {
        for classes in [2, 4, 8] {
            let cfg = GenConfig {
                num_classes: classes,
                num_train: 3,
                ..GenConfig::default()
            };
            let ds = generate_dataset(&cfg).unwrap();
            let mut seen = vec![false; classes];
            ds.train.iter().flat_map(|i| &i.labels).for_each(|&l| seen[l] = true);
            assert!(seen.iter().all(|&s| s), "classes={classes}: {seen:?}");
        }
    }

    #[test]
    fn noiseless_labels_follow_from_intensity() {
        let cfg = GenConfig {
            noise_std: 0.0,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let gap = 1.0 / 3.0;
        for img in ds.train.iter().chain(&ds.test) {
            let pred: Vec<usize> = (0..img.pixel_count())
                .map(|p| (img.pixel(p)[0] / gap).round() as usize)
                .collect();
            let dice = dice_score(&pred, &img.labels, 4).unwrap();
            assert_eq!(dice.mean, 1.0);
        }
    }

    #[test]
    fn strata_produce_requested_counts() {
        let cfg = GenConfig {
            cohort_strata: Some(CohortStrata {
                boundaries: vec![20.0, 30.0, 40.0, 50.0],
                counts: vec![5, 9, 2, 1, 3],
            }),
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let mut counts = [0usize; 5];
        for img in &ds.train {
            counts[cohort_bucket(img.cohort, &[20.0, 30.0, 40.0, 50.0])] += 1;
        }
        assert_eq!(counts, [5, 9, 2, 1, 3]);
    }

    #[test]
    fn bad_strata_rejected() {
        let cfg = GenConfig {
            cohort_strata: Some(CohortStrata {
                boundaries: vec![20.0, 30.0],
                counts: vec![5, 9, 2],
            }),
            ..GenConfig::default()
        };
        assert!(matches!(generate_dataset(&cfg), Err(DataError::InvalidConfig(_))));
    }

    #[test]
    fn empty_split_rejected() {
        let cfg = GenConfig {
            num_test: 0,
            ..GenConfig::default()
        };
        assert!(generate_dataset(&cfg).is_err());
    }
}
