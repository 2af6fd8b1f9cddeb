use super::{AggregateMode, ClientState, FederationError};
use crate::model::ModelWeights;

/// Sample-count weighted average, normalised over the given entries.
///
/// Summation runs entry by entry in the order given (callers pass ascending
/// client index), and each coordinate starts from the first entry's term
/// rather than from `0.0`, so a single entry comes back bit for bit.
pub fn weighted_average(entries: &[(&ModelWeights, u64)]) -> Result<ModelWeights, FederationError> {
    let total: u64 = entries.iter().map(|(_, a)| a).sum();
    weighted_sum(entries, total)
}

/// `sum_k (a_k / denominator) * w_k`.
pub fn weighted_sum(entries: &[(&ModelWeights, u64)], denominator: u64) -> Result<ModelWeights, FederationError> {
    let (first, _) = entries.first().ok_or(FederationError::EmptyAggregate)?;
    if entries.iter().any(|(_, a)| *a == 0) || denominator == 0 {
        return Err(FederationError::ZeroCount);
    }
    if entries
        .iter()
        .any(|(w, _)| w.spec_fingerprint != first.spec_fingerprint || w.len() != first.len())
    {
        return Err(FederationError::FingerprintMismatch);
    }
    let denom = denominator as f64;
    let mut out = vec![0.0; first.len()];
    for (k, (w, a)) in entries.iter().enumerate() {
        let coef = *a as f64 / denom;
        if k == 0 {
            out.iter_mut().zip(&w.params).for_each(|(o, p)| *o = coef * p);
        } else {
            out.iter_mut().zip(&w.params).for_each(|(o, p)| *o += coef * p);
        }
    }
    Ok(ModelWeights {
        spec_fingerprint: first.spec_fingerprint,
        params: out,
    })
}

/// The model handed to a newly joining client: an average over every client.
pub fn aggregate_all_clients(clients: &[ClientState], mode: AggregateMode) -> Result<ModelWeights, FederationError> {
    let entries: Vec<(&ModelWeights, u64)> = clients
        .iter()
        .map(|c| {
            let count = match mode {
                AggregateMode::Weighted => c.sample_count(),
                AggregateMode::Unweighted => 1,
            };
            (&c.weights, count)
        })
        .collect();
    weighted_average(&entries)
}
