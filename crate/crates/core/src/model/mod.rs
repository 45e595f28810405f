//! Parameters and forward passes: shared backbone, per-domain experts and
//! prototypes, and the voting network.
//!
//! [`ModelParams`] stores plain tensors. [`ModelParams::bind`] copies it onto
//! a [`Tape`] with every trainable tensor turned into a leaf; forward passes
//! then record onto that tape and gradients can be taken with respect to the
//! bound leaves. Running statistics of the normalization layers are ordinary
//! vectors and never require grad.

mod checkpoint;
mod forward;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{ExpertOutput, Mode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, BatchStats, Tape, Tensor};

/// Added to the variance inside every normalization layer.
pub const NORM_EPS: f64 = 1e-5;
/// Weight of the newest batch in the running statistics.
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("expert index {index} out of range for {count} experts")]
    ExpertOutOfRange { index: usize, count: usize },
    #[error("width '{name}' must be positive")]
    InvalidWidth { name: &'static str },
    #[error("input has {got} features, backbone expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
    #[error("checkpoint version mismatch: found '{0}'")]
    Version(String),
    #[error("checkpoint is missing parameter '{0}'")]
    MissingKey(String),
    #[error("checkpoint has unknown parameter '{0}'")]
    UnknownKey(String),
    #[error("parameter '{name}' has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// How relevance scores become aggregation weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaFn {
    Softmax,
    Sigmoid,
}

/// How weighted expert features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegrateFn {
    Concat,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Center-loss weight.
    pub lambda: f64,
    /// Inner (voting network) step size.
    pub alpha: f64,
    /// Backbone, expert and prototype learning rate.
    pub beta: f64,
    /// Voting network meta learning rate.
    pub gamma: f64,
    /// Weight of the meta-test relation loss in the voting update.
    pub eta: f64,
    pub margin: f64,
    pub hidden: usize,
    pub d_feat: usize,
    pub d_emb: usize,
    pub sigma_fn: SigmaFn,
    pub integrate_fn: IntegrateFn,
    pub epochs: usize,
    pub iters_per_epoch: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda: 5e-4,
            alpha: 3.5e-4,
            beta: 3.5e-4,
            gamma: 3.5e-4,
            eta: 0.5,
            margin: 0.3,
            hidden: 128,
            d_feat: 64,
            d_emb: 32,
            sigma_fn: SigmaFn::Softmax,
            integrate_fn: IntegrateFn::Concat,
            epochs: 30,
            iters_per_epoch: 20,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(format!("eta {} outside [0, 1]", self.eta));
        }
        for (name, lr) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(format!("margin must be non-negative, got {}", self.margin));
        }
        for (name, w) in [("hidden", self.hidden), ("d_feat", self.d_feat), ("d_emb", self.d_emb)] {
            if w == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// `y = x w + b` with `w: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect::<Vec<f64>>();
        let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).expect("positive widths");
        let b = Tensor::vector(draw(fan_out)).expect("positive widths");
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Batch normalization: affine parameters plus running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl Norm {
    fn new(d: usize) -> Self {
        Self {
            scale: Tensor::ones(&[d]),
            shift: Tensor::zeros(&[d]),
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
        }
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for (r, m) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - NORM_MOMENTUM) * *r + NORM_MOMENTUM * v * correction;
        }
    }
}

/// Embedding -> normalization -> classifier branch of one source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub domain_id: usize,
    pub embed: Linear,
    pub norm: Norm,
    pub cls: Linear,
}

impl Expert {
    pub fn num_classes(&self) -> usize {
        self.cls.fan_out()
    }
}

/// FC -> ReLU -> normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Voting {
    pub fc: Linear,
    pub norm: Norm,
}

/// Disjoint subsets of the trainable tensors, each updated by its own
/// optimizer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Backbone,
    /// Expert at the given index (domain id minus one).
    Expert(usize),
    /// Prototypes of the given expert index.
    Prototype(usize),
    Voting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub backbone: Vec<Linear>,
    pub experts: Vec<Expert>,
    /// One `[L_k, d_emb]` matrix per expert.
    pub prototypes: Vec<Tensor>,
    pub voting: Voting,
}

impl ModelParams {
    /// Fan-in uniform weights, unit/zero normalization affine, zero
    /// prototypes. Expert `k` serves domain `k + 1` with
    /// `identity_counts[k]` classes.
    pub fn init(d_in: usize, identity_counts: &[usize], hp: &HyperParams, seed: u64) -> Result<Self> {
        for (name, w) in [("d_in", d_in), ("hidden", hp.hidden), ("d_feat", hp.d_feat), ("d_emb", hp.d_emb)] {
            if w == 0 {
                return Err(ModelError::InvalidWidth { name });
            }
        }
        if identity_counts.is_empty() || identity_counts.contains(&0) {
            return Err(ModelError::InvalidWidth { name: "identity count" });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = vec![Linear::init(d_in, hp.hidden, &mut rng), Linear::init(hp.hidden, hp.d_feat, &mut rng)];
        let experts = identity_counts
            .iter()
            .enumerate()
            .map(|(k, &l)| Expert {
                domain_id: k + 1,
                embed: Linear::init(hp.d_feat, hp.d_emb, &mut rng),
                norm: Norm::new(hp.d_emb),
                cls: Linear::init(hp.d_emb, l, &mut rng),
            })
            .collect();
        let prototypes = identity_counts.iter().map(|&l| Tensor::zeros(&[l, hp.d_emb])).collect();
        let voting = Voting {
            fc: Linear::init(hp.d_feat, hp.d_emb, &mut rng),
            norm: Norm::new(hp.d_emb),
        };
        Ok(Self {
            backbone,
            experts,
            prototypes,
            voting,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn d_in(&self) -> usize {
        self.backbone[0].fan_in()
    }

    pub fn d_emb(&self) -> usize {
        self.voting.fc.fan_out()
    }

    pub fn expert(&self, index: usize) -> Result<&Expert> {
        self.experts.get(index).ok_or(ModelError::ExpertOutOfRange {
            index,
            count: self.experts.len(),
        })
    }

    /// Every parameter group, in a fixed order.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let k = self.num_experts();
        let mut g = vec![ParamGroup::Backbone];
        g.extend((0..k).map(ParamGroup::Expert));
        g.extend((0..k).map(ParamGroup::Prototype));
        g.push(ParamGroup::Voting);
        g
    }

    pub fn group(&self, g: ParamGroup) -> Vec<&Tensor> {
        match g {
            ParamGroup::Backbone => self.backbone.iter().flat_map(|l| [&l.w, &l.b]).collect(),
            ParamGroup::Expert(k) => {
                let e = &self.experts[k];
                vec![&e.embed.w, &e.embed.b, &e.norm.scale, &e.norm.shift, &e.cls.w, &e.cls.b]
            }
            ParamGroup::Prototype(k) => vec![&self.prototypes[k]],
            ParamGroup::Voting => {
                let v = &self.voting;
                vec![&v.fc.w, &v.fc.b, &v.norm.scale, &v.norm.shift]
            }
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> Vec<&mut Tensor> {
        match g {
            ParamGroup::Backbone => self.backbone.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect(),
            ParamGroup::Expert(k) => {
                let e = &mut self.experts[k];
                vec![
                    &mut e.embed.w,
                    &mut e.embed.b,
                    &mut e.norm.scale,
                    &mut e.norm.shift,
                    &mut e.cls.w,
                    &mut e.cls.b,
                ]
            }
            ParamGroup::Prototype(k) => vec![&mut self.prototypes[k]],
            ParamGroup::Voting => {
                let v = &mut self.voting;
                vec![&mut v.fc.w, &mut v.fc.b, &mut v.norm.scale, &mut v.norm.shift]
            }
        }
    }

    /// Stable names of the tensors of a group, parallel to [`Self::group`].
    pub fn group_names(&self, g: ParamGroup) -> Vec<String> {
        let linear = |p: &str| [format!("{p}.w"), format!("{p}.b")];
        match g {
            ParamGroup::Backbone => (0..self.backbone.len()).flat_map(|i| linear(&format!("backbone.layer{i}"))).collect(),
            ParamGroup::Expert(k) => {
                let p = format!("expert{}", self.experts[k].domain_id);
                let mut v = linear(&format!("{p}.embed")).to_vec();
                v.extend([format!("{p}.norm.scale"), format!("{p}.norm.shift")]);
                v.extend(linear(&format!("{p}.cls")));
                v
            }
            ParamGroup::Prototype(k) => vec![format!("proto{}", self.experts[k].domain_id)],
            ParamGroup::Voting => {
                let mut v = linear("voting.fc").to_vec();
                v.extend(["voting.norm.scale".to_string(), "voting.norm.shift".to_string()]);
                v
            }
        }
    }

    /// All trainable tensors with their names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.groups()
            .into_iter()
            .flat_map(|g| self.group_names(g).into_iter().zip(self.group(g)))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Copy whose trainable tensors are fresh leaves on `tape`.
    pub fn bind(&self, tape: &Tape) -> ModelParams {
        let mut out = self.clone();
        for g in out.groups() {
            for t in out.group_mut(g) {
                *t = tape.leaf(t);
            }
        }
        out
    }

    /// Copy cut off from any tape.
    pub fn detached(&self) -> ModelParams {
        let mut out = self.clone();
        for g in out.groups() {
            for t in out.group_mut(g) {
                *t = t.detach();
            }
        }
        out
    }

    /// Shape fingerprint of the prototype set, used to pair relevance
    /// reports with the model that produced them.
    pub fn prototype_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.prototypes {
            for &e in p.shape() {
                h = (h ^ e as u64).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests;
