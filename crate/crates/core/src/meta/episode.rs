use rand::Rng;

use super::{MetaError, Result, TrainConfig};
use crate::autodiff::{backward, BatchStats, Tensor};
use crate::losses::{
    aggregate, center_loss, classification_loss, decorrelation_loss, relation_alignment_loss, relevance_matrix,
    softmax_triplet_relation, triplet_batch_hard, DomainTerms, LossBundle,
};
use crate::model::{ExpertOutput, Mode, ModelParams, ParamGroup};
use crate::synthdata::{sample_pk_batch, EpisodeBatch, MultiDomainDataset};

/// Held-out domain chosen uniformly; the rest are meta-train. Indices are
/// expert indices `0..k`.
pub fn episodic_split<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<(Vec<usize>, usize)> {
    if k < 2 {
        return Err(MetaError::TooFewDomains(k));
    }
    let test = rng.random_range(0..k);
    Ok(((0..k).filter(|&j| j != test).collect(), test))
}

/// One iteration's split and batches.
#[derive(Debug, Clone)]
pub struct Episode {
    pub meta_train: Vec<usize>,
    pub meta_test: usize,
    /// One batch per domain, indexed by expert index.
    pub batches: Vec<EpisodeBatch>,
}

pub fn sample_episode<R: Rng + ?Sized>(data: &MultiDomainDataset, p: usize, q: usize, rng: &mut R) -> Result<Episode> {
    let (meta_train, meta_test) = episodic_split(data.num_domains(), rng)?;
    let batches = data
        .domains
        .iter()
        .map(|d| sample_pk_batch(d, p, q, rng))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Episode {
        meta_train,
        meta_test,
        batches,
    })
}

/// Forward pass of one domain's batch through the backbone and every expert.
#[derive(Debug, Clone)]
pub struct DomainPass {
    pub domain: usize,
    pub f: Tensor,
    pub outputs: Vec<ExpertOutput>,
    pub terms: DomainTerms,
}

impl DomainPass {
    /// Batch statistics of the batch's own expert.
    pub fn own_stats(&self) -> Option<&BatchStats> {
        self.outputs[self.domain].stats.as_ref()
    }
}

fn domain_pass(params: &ModelParams, k: usize, batch: &EpisodeBatch, cfg: &TrainConfig) -> Result<DomainPass> {
    let f = params.backbone_forward(&batch.inputs)?;
    let outputs = (0..params.num_experts())
        .map(|j| params.expert_forward(j, &f, Mode::Train))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let own = &outputs[k];
    let labels = &batch.labels;
    let decor = if cfg.decorrelation {
        let others: Vec<Tensor> = (0..outputs.len())
            .filter(|&j| j != k)
            .map(|j| if cfg.decor_peer_grad { outputs[j].m.clone() } else { outputs[j].m.detach() })
            .collect();
        Some(decorrelation_loss(&own.m, &others)?)
    } else {
        None
    };
    let terms = DomainTerms {
        cls: classification_loss(&own.logits, labels)?,
        tri: triplet_batch_hard(&own.m, labels, cfg.hp.margin)?,
        cent: center_loss(&own.m, labels, &params.prototypes[k])?,
        decor,
    };
    Ok(DomainPass {
        domain: k,
        f,
        outputs,
        terms,
    })
}

struct RelationPass {
    loss: Tensor,
    stats: Option<BatchStats>,
    /// Batch-mean relevance to each peer.
    relevance: Vec<f64>,
}

/// Relation alignment of `pass` against the experts in `peers`, with the
/// voting network of `voter`. Expert features and prototypes are constants
/// here, so the loss reaches only the voting parameters (and the backbone
/// when configured).
fn relation_pass(voter: &ModelParams, pass: &DomainPass, peers: &[usize], labels: &[usize], cfg: &TrainConfig) -> Result<RelationPass> {
    let input = if cfg.relation_backbone_grad { pass.f.clone() } else { pass.f.detach() };
    let (q, stats) = voter.voting_forward(&input, Mode::Train)?;
    let protos: Vec<Tensor> = peers.iter().map(|&j| voter.prototypes[j].detach()).collect();
    let refs: Vec<&Tensor> = protos.iter().collect();
    let scores = relevance_matrix(&q, &refs)?;
    let feats: Vec<Tensor> = peers.iter().map(|&j| pass.outputs[j].m.detach()).collect();
    let v = aggregate(&feats, &scores, cfg.hp.sigma_fn, cfg.hp.integrate_fn)?;
    let r_v = softmax_triplet_relation(&v, labels)?;
    let r_m = softmax_triplet_relation(&pass.outputs[pass.domain].m, labels)?;
    let loss = relation_alignment_loss(&r_v, &r_m)?;
    let n = scores.rows() as f64;
    let relevance = (0..peers.len())
        .map(|j| (0..scores.rows()).map(|r| scores.row(r)[j]).sum::<f64>() / n)
        .collect();
    Ok(RelationPass { loss, stats, relevance })
}

/// Copy of `params` whose voting network is `theta` (in group order).
pub fn with_voting(params: &ModelParams, theta: &[Tensor]) -> ModelParams {
    let mut out = params.clone();
    for (slot, t) in out.group_mut(ParamGroup::Voting).into_iter().zip(theta) {
        *slot = t.clone();
    }
    out
}

fn sum_opt(acc: Option<Tensor>, t: Tensor) -> Result<Option<Tensor>> {
    Ok(Some(match acc {
        None => t,
        Some(a) => a.add(&t)?,
    }))
}

fn finite(t: &Tensor, what: &str) -> Result<()> {
    if t.values().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MetaError::NonFinite { what: what.to_string() })
    }
}

#[derive(Debug, Clone)]
pub struct MetaTrain {
    pub passes: Vec<DomainPass>,
    /// `L_d^s`, summed over meta-train domains.
    pub domain_loss: Tensor,
    /// `L_r^s`; `None` when there is a single meta-train domain.
    pub relation_loss: Option<Tensor>,
    /// `grad_theta L_r^s`, recorded so it can be differentiated again.
    pub theta_grad: Vec<Tensor>,
    /// `theta - alpha * theta_grad`.
    pub theta_prime: Vec<Tensor>,
    pub bundle: LossBundle,
    pub voting_stats: Vec<BatchStats>,
}

/// Domain losses of the meta-train domains, their relation loss against the
/// other meta-train experts, and the inner voting step.
pub fn meta_train_step(bound: &ModelParams, episode: &Episode, cfg: &TrainConfig, alpha: f64) -> Result<MetaTrain> {
    let lambda = cfg.hp.lambda;
    let mut passes = Vec::with_capacity(episode.meta_train.len());
    let mut domain_loss = None;
    let mut relation_loss = None;
    let mut bundle = LossBundle::default();
    let mut voting_stats = Vec::new();
    for &k in &episode.meta_train {
        let batch = &episode.batches[k];
        let pass = domain_pass(bound, k, batch, cfg)?;
        domain_loss = sum_opt(domain_loss, pass.terms.total(lambda)?)?;
        let peers: Vec<usize> = episode.meta_train.iter().copied().filter(|&j| j != k).collect();
        let mut rel = 0.0;
        if !peers.is_empty() {
            let r = relation_pass(bound, &pass, &peers, &batch.labels, cfg)?;
            rel = r.loss.item();
            relation_loss = sum_opt(relation_loss, r.loss)?;
            voting_stats.extend(r.stats);
        }
        bundle = bundle.accumulate(&pass.terms.bundle(lambda, rel), lambda);
        passes.push(pass);
    }
    let domain_loss = domain_loss.ok_or(MetaError::TooFewDomains(1))?;
    finite(&domain_loss, "meta-train domain loss")?;
    let theta: Vec<&Tensor> = bound.group(ParamGroup::Voting);
    let (theta_grad, theta_prime) = match &relation_loss {
        Some(l) => {
            finite(l, "meta-train relation loss")?;
            let g = backward(l, &theta, true)?;
            let prime = theta
                .iter()
                .zip(&g)
                .map(|(t, gi)| t.sub(&gi.scale(alpha)?))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (g, prime)
        }
        None => (
            theta.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            theta.iter().map(|&t| t.clone()).collect(),
        ),
    };
    Ok(MetaTrain {
        passes,
        domain_loss,
        relation_loss,
        theta_grad,
        theta_prime,
        bundle,
        voting_stats,
    })
}

#[derive(Debug, Clone)]
pub struct MetaTest {
    pub pass: DomainPass,
    /// `L_d^u`.
    pub domain_loss: Tensor,
    /// `L_r^u` evaluated with the inner-stepped voting network.
    pub relation_loss: Tensor,
    pub bundle: LossBundle,
    /// Batch-mean relevance of the held-out batch to each meta-train domain.
    pub relevance: Vec<(usize, f64)>,
    pub voting_stats: Option<BatchStats>,
}

/// Domain loss of the held-out domain and its relation loss under
/// `theta_prime`, aggregating over the meta-train experts.
pub fn meta_test_step(bound: &ModelParams, theta_prime: &[Tensor], episode: &Episode, cfg: &TrainConfig) -> Result<MetaTest> {
    let u = episode.meta_test;
    let batch = &episode.batches[u];
    let pass = domain_pass(bound, u, batch, cfg)?;
    let domain_loss = pass.terms.total(cfg.hp.lambda)?;
    let voter = with_voting(bound, theta_prime);
    let r = relation_pass(&voter, &pass, &episode.meta_train, &batch.labels, cfg)?;
    finite(&domain_loss, "meta-test domain loss")?;
    finite(&r.loss, "meta-test relation loss")?;
    let bundle = pass.terms.bundle(cfg.hp.lambda, r.loss.item());
    let relevance = episode.meta_train.iter().copied().zip(r.relevance).collect();
    Ok(MetaTest {
        pass,
        domain_loss,
        relation_loss: r.loss,
        bundle,
        relevance,
        voting_stats: r.stats,
    })
}
