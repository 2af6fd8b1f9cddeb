//! Synthetic segmentation data and the two sharding strategies.
//!
//! Every image is a stack of nested elliptical regions, one per foreground
//! class, on a background. Region radii and intensities drift with the
//! image's `cohort` (an age-like covariate in `[0, 100]`), so splitting by
//! cohort yields clients with genuinely different data distributions.

mod generate;
mod io;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_dataset, CohortStrata, GenConfig, FEATURE_CHANNELS};
pub use io::{read_dataset, write_dataset, DATASET_FORMAT_VERSION, DATASET_MAGIC};
pub use split::{cohort_bucket, split_by_cohort, split_uniform};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("cannot split {images} images across {clients} clients")]
    TooManyClients { clients: usize, images: usize },
    #[error("cohort bucket {bucket} ({range}) is empty")]
    EmptyBucket { bucket: usize, range: String },
    #[error("cohort bucket {bucket} holds {actual} images, expected {expected}")]
    CountMismatch {
        bucket: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid cohort boundaries: {0}")]
    InvalidBoundaries(String),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One synthetic scan: per-pixel features, per-pixel labels and a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Pixel-major: features of pixel `p` live at `p * channels..(p + 1) * channels`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub cohort: f64,
}

impl SegImage {
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.features[p * self.channels..(p + 1) * self.channels]
    }
}

/// One client's local training data. `sample_count` is the number of images.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub client_index: usize,
    pub images: Vec<SegImage>,
}

impl DatasetShard {
    pub fn new(client_index: usize, images: Vec<SegImage>) -> Self {
        Self { client_index, images }
    }

    pub fn sample_count(&self) -> usize {
        self.images.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.images.iter().map(SegImage::pixel_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub train: Vec<SegImage>,
    pub test: Vec<SegImage>,
}
