use rand::seq::index;
use rand::Rng;

use super::{DataError, Domain, Result};
use crate::autodiff::Tensor;

/// `P` identities times `Q` instances drawn from one domain, grouped by
/// identity in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub domain_id: usize,
    pub p: usize,
    pub q: usize,
}

impl EpisodeBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draws `p` identities without replacement, then `q` of each identity's
/// samples without replacement.
pub fn sample_pk_batch<R: Rng + ?Sized>(domain: &Domain, p: usize, q: usize, rng: &mut R) -> Result<EpisodeBatch> {
    if p < 2 || q < 2 {
        return Err(DataError::BatchShape { p, q });
    }
    let groups = domain.by_identity();
    if groups.len() < p {
        return Err(DataError::InsufficientIdentities {
            domain: domain.domain_id,
            need: p,
            have: groups.len(),
        });
    }
    if let Some((identity, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < q) {
        return Err(DataError::InsufficientInstances {
            domain: domain.domain_id,
            identity,
            need: q,
            have: g.len(),
        });
    }
    let mut rows = Vec::with_capacity(p * q);
    let mut labels = Vec::with_capacity(p * q);
    for identity in index::sample(rng, groups.len(), p) {
        let group = &groups[identity];
        for i in index::sample(rng, group.len(), q) {
            rows.push(group[i]);
            labels.push(identity);
        }
    }
    Ok(EpisodeBatch {
        inputs: domain.rows_tensor(&rows),
        labels,
        domain_id: domain.domain_id,
        p,
        q,
    })
}
