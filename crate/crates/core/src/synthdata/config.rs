use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_with, AnchorModel, DataError, DomainShift, DomainSpec, MultiDomainDataset, Result, TargetSet};

const SHIFT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// One held-out domain: a fresh random shift moved a fraction `t` toward the
/// shift of source domain `toward`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub name: String,
    pub toward: usize,
    pub t: f64,
    pub identities: usize,
    pub samples_per_identity: usize,
}

/// Parameters of the default benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_domains: usize,
    pub identities_per_domain: usize,
    pub samples_per_identity: usize,
    pub d_in: usize,
    pub identity_rank: usize,
    pub anchor_scale: f64,
    pub noise_sigma: f64,
    pub bias_scale: f64,
    pub scale_spread: f64,
    pub seed: u64,
    pub targets: Vec<TargetConfig>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_domains: 4,
            identities_per_domain: 32,
            samples_per_identity: 8,
            d_in: 64,
            identity_rank: 16,
            anchor_scale: 1.0,
            noise_sigma: 0.5,
            bias_scale: 0.5,
            scale_spread: 0.3,
            seed: 7,
            targets: vec![
                TargetConfig {
                    name: "test".into(),
                    toward: 1,
                    t: 0.75,
                    identities: 32,
                    samples_per_identity: 8,
                },
                TargetConfig {
                    name: "val".into(),
                    toward: 2,
                    t: 0.5,
                    identities: 32,
                    samples_per_identity: 8,
                },
            ],
        }
    }
}

/// Everything [`SynthConfig::build`] derives from the seed.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub sources: MultiDomainDataset,
    pub targets: Vec<TargetSet>,
    pub source_specs: Vec<DomainSpec>,
    pub target_specs: Vec<DomainSpec>,
}

impl SynthBundle {
    pub fn target(&self, cfg: &SynthConfig, name: &str) -> Option<&TargetSet> {
        cfg.targets.iter().position(|t| t.name == name).map(|i| &self.targets[i])
    }
}

impl SynthConfig {
    pub fn anchor_model(&self) -> AnchorModel {
        AnchorModel {
            identity_rank: self.identity_rank,
            anchor_scale: self.anchor_scale,
        }
    }

    /// Domain specs for sources (ids `1..=K`) and targets (ids `K+1..`).
    /// Shifts come from a stream separate from the sample stream.
    pub fn specs(&self) -> Result<(Vec<DomainSpec>, Vec<DomainSpec>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ SHIFT_STREAM);
        let sources: Vec<DomainSpec> = (1..=self.num_domains)
            .map(|domain_id| DomainSpec {
                domain_id,
                num_identities: self.identities_per_domain,
                samples_per_identity: self.samples_per_identity,
                shift: DomainShift::random(self.d_in, self.bias_scale, self.scale_spread, &mut rng),
                noise_sigma: self.noise_sigma,
            })
            .collect();
        let mut targets = Vec::with_capacity(self.targets.len());
        for (i, t) in self.targets.iter().enumerate() {
            let domain_id = self.num_domains + 1 + i;
            let anchor = sources.get(t.toward.wrapping_sub(1)).ok_or(DataError::Invalid {
                domain: domain_id,
                msg: format!("target '{}' points toward unknown source {}", t.name, t.toward),
            })?;
            if !(0.0..=1.0).contains(&t.t) {
                return Err(DataError::Invalid {
                    domain: domain_id,
                    msg: format!("interpolation t={} outside [0, 1]", t.t),
                });
            }
            let base = DomainShift::random(self.d_in, self.bias_scale, self.scale_spread, &mut rng);
            targets.push(DomainSpec {
                domain_id,
                num_identities: t.identities,
                samples_per_identity: t.samples_per_identity,
                shift: base.interpolate(&anchor.shift, t.t),
                noise_sigma: self.noise_sigma,
            });
        }
        Ok((sources, targets))
    }

    pub fn build(&self) -> Result<SynthBundle> {
        let (source_specs, target_specs) = self.specs()?;
        let (sources, targets) = generate_with(&self.anchor_model(), &source_specs, &target_specs, self.seed)?;
        Ok(SynthBundle {
            sources,
            targets,
            source_specs,
            target_specs,
        })
    }
}
