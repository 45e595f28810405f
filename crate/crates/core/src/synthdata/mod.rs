//! Synthetic identity-structured multi-domain data.
//!
//! A single pool of latent identity anchors is drawn once. Each domain takes
//! its own disjoint slice of the pool, adds isotropic within-identity noise
//! in latent space and renders the result through its [`DomainShift`]. Since
//! every domain shares the same latent geometry, how close two domains are is
//! controlled entirely by how close their shifts are, which gives the
//! relevance scores a measurable ground truth.

mod batch;
mod config;
mod io;
mod shift;

pub use batch::{sample_pk_batch, EpisodeBatch};
pub use config::{SynthBundle, SynthConfig, TargetConfig};
pub use io::{load_dataset, parse_dataset, save_dataset, write_dataset};
pub use shift::DomainShift;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

/// Largest tolerated `max |R^T R - I|` for a domain rotation.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("domain {domain}: samples_per_identity must be at least 2, got {got}")]
    TooFewSamples { domain: usize, got: usize },
    #[error("domain {domain}: needs at least one identity")]
    NoIdentities { domain: usize },
    #[error("domain {domain}: shift rotation is not orthogonal (error {error:e})")]
    NonOrthogonal { domain: usize, error: f64 },
    #[error("domain {domain}: shift has dimension {got}, expected {expected}")]
    DimMismatch { domain: usize, expected: usize, got: usize },
    #[error("domain {domain}: noise_sigma must be non-negative and finite, got {got}")]
    BadNoise { domain: usize, got: f64 },
    #[error("domain {domain}: need {need} identities for the batch, have {have}")]
    InsufficientIdentities { domain: usize, need: usize, have: usize },
    #[error("domain {domain}: identity {identity} has {have} samples, batch needs {need}")]
    InsufficientInstances {
        domain: usize,
        identity: usize,
        need: usize,
        have: usize,
    },
    #[error("batch needs P >= 2 and Q >= 2, got P={p} Q={q}")]
    BatchShape { p: usize, q: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity { line: usize, expected: usize, found: usize },
    #[error("domain {0} has no samples")]
    EmptyDomain(usize),
    #[error("domain {domain} not found")]
    UnknownDomain { domain: usize },
    #[error("domain {domain}: {msg}")]
    Invalid { domain: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Generation recipe for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain_id: usize,
    pub num_identities: usize,
    pub samples_per_identity: usize,
    pub shift: DomainShift,
    pub noise_sigma: f64,
}

impl DomainSpec {
    fn validate(&self, d_in: usize) -> Result<()> {
        let domain = self.domain_id;
        if self.samples_per_identity < 2 {
            return Err(DataError::TooFewSamples {
                domain,
                got: self.samples_per_identity,
            });
        }
        if self.num_identities == 0 {
            return Err(DataError::NoIdentities { domain });
        }
        if self.shift.dim() != d_in || self.shift.rotation.len() != d_in * d_in || self.shift.bias.len() != d_in {
            return Err(DataError::DimMismatch {
                domain,
                expected: d_in,
                got: self.shift.dim(),
            });
        }
        let error = self.shift.orthogonality_error();
        if error > ORTHOGONALITY_TOL {
            return Err(DataError::NonOrthogonal { domain, error });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(DataError::BadNoise {
                domain,
                got: self.noise_sigma,
            });
        }
        Ok(())
    }
}

/// Latent identity structure shared by every domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorModel {
    /// Number of latent coordinates that carry identity information.
    pub identity_rank: usize,
    /// Standard deviation of anchors along those coordinates.
    pub anchor_scale: f64,
}

/// Labeled samples of one domain; rows are `d_in` wide, labels are dense
/// `0..num_identities`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub domain_id: usize,
    pub d_in: usize,
    pub samples: Vec<f64>,
    pub labels: Vec<usize>,
    pub num_identities: usize,
}

impl Domain {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.d_in..(i + 1) * self.d_in]
    }

    /// Selected rows as an untracked `[len(idx), d_in]` tensor.
    pub fn rows_tensor(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.d_in);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), self.d_in, data).expect("rows match d_in")
    }

    pub fn all_rows(&self) -> Tensor {
        Tensor::matrix(self.len(), self.d_in, self.samples.clone()).expect("rows match d_in")
    }

    /// Sample indices grouped by identity label.
    pub fn by_identity(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_identities];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.d_in];
        for i in 0..self.len() {
            for (cj, v) in c.iter_mut().zip(self.row(i)) {
                *cj += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= self.len() as f64);
        c
    }
}

/// The labeled source domains available for training.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    pub d_in: usize,
    pub domains: Vec<Domain>,
}

impl MultiDomainDataset {
    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn identity_counts(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.num_identities).collect()
    }

    pub fn domain(&self, domain_id: usize) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.domain_id == domain_id)
            .ok_or(DataError::UnknownDomain { domain: domain_id })
    }
}

/// An unseen domain split into query and gallery rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub domain: Domain,
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

impl TargetSet {
    /// The first `floor(n / 3)` rows of each identity (at least one) become
    /// queries, the rest gallery, so every query has a gallery positive.
    pub fn split(domain: Domain) -> Result<Self> {
        Self::split_with(domain, 1.0 / 3.0)
    }

    /// Like [`TargetSet::split`] with `floor(n * query_fraction)` queries per
    /// identity, clamped to `1..=n-1`.
    pub fn split_with(domain: Domain, query_fraction: f64) -> Result<Self> {
        if !(query_fraction > 0.0 && query_fraction < 1.0) {
            return Err(DataError::Invalid {
                domain: domain.domain_id,
                msg: format!("query fraction {query_fraction} outside (0, 1)"),
            });
        }
        let mut query = Vec::new();
        let mut gallery = Vec::new();
        for (l, rows) in domain.by_identity().into_iter().enumerate() {
            if rows.len() < 2 {
                return Err(DataError::InsufficientInstances {
                    domain: domain.domain_id,
                    identity: l,
                    need: 2,
                    have: rows.len(),
                });
            }
            let nq = ((rows.len() as f64 * query_fraction + 1e-9).floor() as usize).clamp(1, rows.len() - 1);
            query.extend_from_slice(&rows[..nq]);
            gallery.extend_from_slice(&rows[nq..]);
        }
        query.sort_unstable();
        gallery.sort_unstable();
        Ok(Self { domain, query, gallery })
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|&i| self.domain.labels[i]).collect()
    }

    pub fn gallery_labels(&self) -> Vec<usize> {
        self.gallery.iter().map(|&i| self.domain.labels[i]).collect()
    }
}

impl Default for AnchorModel {
    fn default() -> Self {
        Self {
            identity_rank: 16,
            anchor_scale: 1.0,
        }
    }
}

/// Generates source domains and target sets with the default [`AnchorModel`].
pub fn generate(specs: &[DomainSpec], target_specs: &[DomainSpec], seed: u64) -> Result<(MultiDomainDataset, Vec<TargetSet>)> {
    generate_with(&AnchorModel::default(), specs, target_specs, seed)
}

pub fn generate_with(
    anchors: &AnchorModel,
    specs: &[DomainSpec],
    target_specs: &[DomainSpec],
    seed: u64,
) -> Result<(MultiDomainDataset, Vec<TargetSet>)> {
    let d_in = specs
        .first()
        .or(target_specs.first())
        .map(|s| s.shift.dim())
        .unwrap_or(0);
    for s in specs.iter().chain(target_specs) {
        s.validate(d_in)?;
    }
    if anchors.identity_rank == 0 || anchors.identity_rank > d_in {
        return Err(DataError::Invalid {
            domain: 0,
            msg: format!("identity_rank {} must lie in 1..={d_in}", anchors.identity_rank),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = specs.iter().chain(target_specs).map(|s| s.num_identities).sum();
    let pool: Vec<Vec<f64>> = (0..total)
        .map(|_| {
            (0..d_in)
                .map(|j| {
                    if j < anchors.identity_rank {
                        anchors.anchor_scale * gauss(&mut rng)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut offset = 0;
    let mut render = |spec: &DomainSpec| -> Domain {
        let mut samples = Vec::with_capacity(spec.num_identities * spec.samples_per_identity * d_in);
        let mut labels = Vec::with_capacity(spec.num_identities * spec.samples_per_identity);
        for l in 0..spec.num_identities {
            let anchor = &pool[offset + l];
            for _ in 0..spec.samples_per_identity {
                let z: Vec<f64> = anchor
                    .iter()
                    .map(|a| a + spec.noise_sigma * gauss(&mut rng))
                    .collect();
                samples.extend(spec.shift.apply(&z));
                labels.push(l);
            }
        }
        offset += spec.num_identities;
        Domain {
            domain_id: spec.domain_id,
            d_in,
            samples,
            labels,
            num_identities: spec.num_identities,
        }
    };
    let domains: Vec<Domain> = specs.iter().map(&mut render).collect();
    let targets = target_specs
        .iter()
        .map(|s| TargetSet::split(render(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok((MultiDomainDataset { d_in, domains }, targets))
}

fn gauss<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests;
