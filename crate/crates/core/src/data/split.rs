use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetShard, SegImage};

/// Random near-equal split: sizes differ by at most one and the larger
/// shards go to the lowest client indices.
pub fn split_uniform(train: &[SegImage], n_clients: usize, seed: u64) -> Result<Vec<DatasetShard>, DataError> {
    if n_clients == 0 || n_clients > train.len() {
        return Err(DataError::TooManyClients {
            clients: n_clients,
            images: train.len(),
        });
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = train.len() / n_clients;
    let extra = train.len() % n_clients;
    let mut cursor = 0;
    Ok((0..n_clients)
        .map(|client| {
            let size = base + usize::from(client < extra);
            let images = order[cursor..cursor + size].iter().map(|&i| train[i].clone()).collect();
            cursor += size;
            DatasetShard::new(client, images)
        })
        .collect())
}

pub(crate) fn check_boundaries(boundaries: &[f64]) -> Result<(), DataError> {
    if boundaries.iter().any(|b| !b.is_finite()) {
        return Err(DataError::InvalidBoundaries("boundaries must be finite".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DataError::InvalidBoundaries("boundaries must be strictly increasing".into()));
    }
    Ok(())
}

/// Bucket `0` is `cohort <= b[0]`, bucket `i` is `b[i-1] < cohort <= b[i]`,
/// the last bucket is `cohort > b[last]`.
pub fn cohort_bucket(cohort: f64, boundaries: &[f64]) -> usize {
    boundaries.iter().take_while(|&&b| cohort > b).count()
}

fn bucket_range(bucket: usize, boundaries: &[f64]) -> String {
    match (bucket.checked_sub(1).map(|i| boundaries[i]), boundaries.get(bucket)) {
        (None, Some(hi)) => format!("<= {hi}"),
        (Some(lo), Some(hi)) => format!("({lo}, {hi}]"),
        (Some(lo), None) => format!("> {lo}"),
        (None, None) => "all cohorts".into(),
    }
}

/// Shard `i` holds exactly the images of cohort bucket `i`, in input order.
pub fn split_by_cohort(
    train: &[SegImage],
    boundaries: &[f64],
    expected_counts: Option<&[usize]>,
) -> Result<Vec<DatasetShard>, DataError> {
    check_boundaries(boundaries)?;
    let n_buckets = boundaries.len() + 1;
    if let Some(expected) = expected_counts {
        if expected.len() != n_buckets {
            return Err(DataError::InvalidBoundaries(format!(
                "{} boundaries define {n_buckets} buckets but {} counts were given",
                boundaries.len(),
                expected.len()
            )));
        }
    }
    let mut buckets: Vec<Vec<SegImage>> = vec![Vec::new(); n_buckets];
    for img in train {
        buckets[cohort_bucket(img.cohort, boundaries)].push(img.clone());
    }
    for (bucket, images) in buckets.iter().enumerate() {
        if images.is_empty() {
            return Err(DataError::EmptyBucket {
                bucket,
                range: bucket_range(bucket, boundaries),
            });
        }
        if let Some(expected) = expected_counts {
            if images.len() != expected[bucket] {
                return Err(DataError::CountMismatch {
                    bucket,
                    expected: expected[bucket],
                    actual: images.len(),
                });
            }
        }
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(client, images)| DatasetShard::new(client, images))
        .collect())
}
