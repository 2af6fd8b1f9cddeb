use rayon::prelude::*;

use super::{ClientState, FederationError, ProtocolConfig};
use crate::model::ModelWeights;

/// One server round: every client fine-tunes the current server model on its
/// shard, the server averages the results weighted by sample count over all
/// clients, and every client receives the average. Returns the new server
/// model. On error no client is modified.
pub fn fls_round(
    clients: &mut [ClientState],
    server_weights: &ModelWeights,
    cfg: &ProtocolConfig,
) -> Result<ModelWeights, FederationError> {
    if clients.is_empty() {
        return Err(FederationError::EmptyAggregate);
    }
    for (position, c) in clients.iter().enumerate() {
        if c.client_index != position {
            return Err(FederationError::ClientOrder {
                position,
                index: c.client_index,
            });
        }
    }
    let tuned: Vec<ModelWeights> = clients
        .par_iter()
        .map(|c| c.tune(server_weights, cfg))
        .collect::<Result<_, _>>()?;
    let entries: Vec<(&ModelWeights, u64)> = tuned.iter().zip(clients.iter()).map(|(w, c)| (w, c.sample_count())).collect();
    let aggregate = super::weighted_average(&entries)?;
    for c in clients.iter_mut() {
        c.complete_update(aggregate.clone());
    }
    Ok(aggregate)
}
