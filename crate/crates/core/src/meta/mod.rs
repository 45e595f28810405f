//! Episodic meta-learning of the experts and the voting network.
//!
//! Every iteration holds one source domain out as a simulated unseen target.
//! Backbone, experts and prototypes follow the domain losses. The voting
//! network takes one plain gradient step on the meta-train relation loss and
//! is then updated with a gradient that differentiates the meta-test relation
//! loss through that step.

mod episode;
mod optim;
mod schedule;
mod train;

pub use episode::{
    episodic_split, meta_test_step, meta_train_step, sample_episode, with_voting, DomainPass, Episode, MetaTest, MetaTrain,
};
pub use optim::{GradSet, Optimizer, OptimizerKind};
pub use schedule::lr_factor;
pub use train::{
    meta_gradient, meta_test_objective, train, train_with, EpochRecord, IterRecord, LogLine, StepLrs, StepOutcome, TrainLog,
    TrainOptions, TrainOutcome, Trainer,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::losses::LossError;
use crate::model::{HyperParams, ModelError};
use crate::synthdata::DataError;

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("meta-learning needs at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("stale gradients: computed at iteration {got}, optimizer is at iteration {expected}")]
    StaleGradient { expected: u64, got: u64 },
    #[error("gradient set for {group} has {got} tensors, expected {expected}")]
    GradientArity { group: String, expected: usize, got: usize },
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch} iteration {iter}: {source}")]
    Step {
        epoch: usize,
        iter: usize,
        #[source]
        source: Box<MetaError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MetaError {
    /// Innermost error, past any step context.
    pub fn root(&self) -> &MetaError {
        match self {
            MetaError::Step { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, MetaError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub optimizer: OptimizerKind,
    pub warmup_epochs: usize,
    pub lr_decay_epochs: Vec<usize>,
    pub seed: u64,
    /// Identities per batch (P).
    pub identities_per_batch: usize,
    /// Instances per identity (Q).
    pub instances_per_identity: usize,
    /// Adds the decorrelation term to the domain loss.
    pub decorrelation: bool,
    /// Lets decorrelation gradients reach the peer experts, not only the
    /// expert of the batch's own domain.
    pub decor_peer_grad: bool,
    /// Lets the relation losses reach the backbone through the voting input.
    pub relation_backbone_grad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            optimizer: OptimizerKind::Adam,
            warmup_epochs: 3,
            lr_decay_epochs: vec![10, 20],
            seed: 1,
            identities_per_batch: 16,
            instances_per_identity: 4,
            decorrelation: true,
            decor_peer_grad: true,
            relation_backbone_grad: false,
        }
    }
}

impl TrainConfig {
    pub fn max_epochs(&self) -> usize {
        self.hp.epochs
    }

    pub fn iters_per_epoch(&self) -> usize {
        self.hp.iters_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate().map_err(MetaError::Config)?;
        if self.hp.epochs == 0 || self.hp.iters_per_epoch == 0 {
            return Err(MetaError::Config("epochs and iters_per_epoch must be at least 1".into()));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetaError::Config("lr_decay_epochs must be strictly increasing".into()));
        }
        if self.lr_decay_epochs.last().is_some_and(|&e| e >= self.hp.epochs) {
            return Err(MetaError::Config("lr_decay_epochs must be below epochs".into()));
        }
        if self.identities_per_batch < 2 || self.instances_per_identity < 2 {
            return Err(MetaError::Config("batches need at least 2 identities and 2 instances".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
