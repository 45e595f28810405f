use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::episode::{meta_test_step, meta_train_step, sample_episode, Episode};
use super::optim::{GradSet, Optimizer};
use super::schedule::lr_factor;
use super::{MetaError, Result, TrainConfig};
use crate::autodiff::{backward, Tape, Tensor};
use crate::inference::{evaluate_target, RelevanceMode};
use crate::losses::LossBundle;
use crate::model::{ModelParams, ParamGroup};
use crate::synthdata::{MultiDomainDataset, TargetSet};

/// Keeps the episode stream independent of the initialization stream.
const EPISODE_STREAM: u64 = 0xa076_1d64_78bd_642f;

/// Learning rates of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLrs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub meta_train: LossBundle,
    pub meta_test: LossBundle,
    pub relevance: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub epoch: usize,
    pub iter: usize,
    /// Domain id held out in this iteration.
    pub meta_test_domain: usize,
    pub lr: f64,
    pub meta_train: LossBundle,
    pub meta_test: LossBundle,
    /// Batch-mean relevance of the held-out batch, keyed by domain id.
    pub relevance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_map: Option<f64>,
    pub val_rank1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Iter(IterRecord),
    Epoch(EpochRecord),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub iterations: Vec<IterRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// One JSON object per line, epoch summaries after their iterations.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut it = self.iterations.iter().peekable();
        for e in &self.epochs {
            while let Some(r) = it.next_if(|r| r.epoch <= e.epoch) {
                writeln!(out, "{}", serde_json::to_string(&LogLine::Iter(r.clone()))?)?;
            }
            writeln!(out, "{}", serde_json::to_string(&LogLine::Epoch(e.clone()))?)?;
        }
        for r in it {
            writeln!(out, "{}", serde_json::to_string(&LogLine::Iter(r.clone()))?)?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let mut log = TrainLog::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                LogLine::Iter(r) => log.iterations.push(r),
                LogLine::Epoch(e) => log.epochs.push(e),
            }
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    /// Held-out set scored after every epoch to pick the best checkpoint.
    pub validation: Option<&'a TargetSet>,
    /// Receives `epoch_XXX.ckpt`, `best.ckpt` and `final.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Writes only `best.ckpt` and `final.ckpt`.
    pub skip_epoch_checkpoints: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Epoch, validation mAP and parameters of the best validation epoch.
    pub best: Option<(usize, f64, ModelParams)>,
    pub log: TrainLog,
}

/// Owns the parameters, optimizer state and episode stream of one run.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a MultiDomainDataset,
    params: ModelParams,
    opt: Optimizer,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a MultiDomainDataset) -> Result<Self> {
        cfg.validate()?;
        let k = data.num_domains();
        if k < 2 {
            return Err(MetaError::TooFewDomains(k));
        }
        if data.domains.iter().enumerate().any(|(i, d)| d.domain_id != i + 1) {
            return Err(MetaError::Config("source domain ids must be 1..K in order".into()));
        }
        let params = ModelParams::init(data.d_in, &data.identity_counts(), &cfg.hp, cfg.seed)?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ EPISODE_STREAM),
            opt: Optimizer::new(cfg.optimizer),
            cfg,
            data,
            params,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn lrs(&self, epoch: usize) -> StepLrs {
        let f = lr_factor(epoch, self.cfg.warmup_epochs, &self.cfg.lr_decay_epochs);
        StepLrs {
            alpha: self.cfg.hp.alpha * f,
            beta: self.cfg.hp.beta * f,
            gamma: self.cfg.hp.gamma * f,
        }
    }

    pub fn next_episode(&mut self) -> Result<Episode> {
        sample_episode(
            self.data,
            self.cfg.identities_per_batch,
            self.cfg.instances_per_identity,
            &mut self.rng,
        )
    }

    /// One full iteration on a given episode.
    pub fn step(&mut self, episode: &Episode, lrs: StepLrs) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let eta = cfg.hp.eta;
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let mt = meta_train_step(&bound, episode, cfg, lrs.alpha)?;
        let mu = meta_test_step(&bound, &mt.theta_prime, episode, cfg)?;

        self.iteration += 1;
        self.opt.begin_iteration(self.iteration);
        let u = episode.meta_test;
        let mut groups_s = vec![ParamGroup::Backbone];
        for &k in &episode.meta_train {
            groups_s.extend([ParamGroup::Expert(k), ParamGroup::Prototype(k)]);
        }
        let groups_u = vec![ParamGroup::Backbone, ParamGroup::Expert(u), ParamGroup::Prototype(u)];
        let grads_s = split_grads(&bound, &groups_s, &mt.domain_loss)?;
        let grads_u = split_grads(&bound, &groups_u, &mu.domain_loss)?;

        let mut updates: BTreeMap<ParamGroup, Vec<Tensor>> = BTreeMap::new();
        for (g, t) in grads_s.into_iter().chain(grads_u) {
            match updates.get_mut(&g) {
                Some(acc) => add_into(acc, &t)?,
                None => {
                    updates.insert(g, t);
                }
            }
        }
        let backbone = bound.group(ParamGroup::Backbone);
        if cfg.relation_backbone_grad {
            let mut mix = mu.relation_loss.scale(eta)?;
            if let Some(ls) = &mt.relation_loss {
                mix = mix.add(&ls.scale(1.0 - eta)?)?;
            }
            let extra = backward(&mix, &backbone, false)?;
            add_into(updates.get_mut(&ParamGroup::Backbone).expect("backbone present"), &extra)?;
        }
        let theta = bound.group(ParamGroup::Voting);
        let g_u = backward(&mu.relation_loss, &theta, false)?;
        let meta: Vec<Tensor> = mt
            .theta_grad
            .iter()
            .zip(&g_u)
            .map(|(gs, gu)| gs.detach().scale(1.0 - eta)?.add(&gu.scale(eta)?))
            .collect::<std::result::Result<_, _>>()?;
        updates.insert(ParamGroup::Voting, meta);

        for (group, grads) in updates {
            if grads.iter().any(|g| g.values().iter().any(|v| !v.is_finite())) {
                return Err(MetaError::NonFinite {
                    what: format!("gradient of {group:?}"),
                });
            }
            let lr = if group == ParamGroup::Voting { lrs.gamma } else { lrs.beta };
            let set = GradSet {
                iteration: self.iteration,
                group,
                grads,
            };
            self.opt.step(&mut self.params, &set, lr)?;
        }

        for pass in mt.passes.iter().chain(std::iter::once(&mu.pass)) {
            if let Some(s) = pass.own_stats() {
                self.params.experts[pass.domain].norm.update_running(s);
            }
        }
        for s in mt.voting_stats.iter().chain(mu.voting_stats.as_ref()) {
            self.params.voting.norm.update_running(s);
        }
        Ok(StepOutcome {
            meta_train: mt.bundle,
            meta_test: mu.bundle,
            relevance: mu.relevance,
        })
    }

    /// Samples an episode and steps with the scheduled learning rates.
    pub fn iterate(&mut self, epoch: usize, iter: usize) -> Result<IterRecord> {
        let wrap = |e: MetaError| MetaError::Step {
            epoch,
            iter,
            source: Box::new(e),
        };
        let episode = self.next_episode().map_err(wrap)?;
        let lrs = self.lrs(epoch);
        let out = self.step(&episode, lrs).map_err(wrap)?;
        if !out.meta_train.is_finite() || !out.meta_test.is_finite() {
            return Err(wrap(MetaError::NonFinite { what: "logged loss".into() }));
        }
        Ok(IterRecord {
            epoch,
            iter,
            meta_test_domain: episode.meta_test + 1,
            lr: lrs.beta,
            meta_train: out.meta_train,
            meta_test: out.meta_test,
            relevance: out.relevance.into_iter().map(|(k, s)| ((k + 1).to_string(), s)).collect(),
        })
    }
}

fn add_into(acc: &mut [Tensor], more: &[Tensor]) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(more) {
        *a = a.add(b)?;
    }
    Ok(())
}

/// Gradients of `loss` for each group's tensors, grouped.
fn split_grads(bound: &ModelParams, groups: &[ParamGroup], loss: &Tensor) -> Result<Vec<(ParamGroup, Vec<Tensor>)>> {
    let targets: Vec<&Tensor> = groups.iter().flat_map(|&g| bound.group(g)).collect();
    let mut grads = backward(loss, &targets, false)?.into_iter();
    Ok(groups
        .iter()
        .map(|&g| (g, grads.by_ref().take(bound.group(g).len()).collect()))
        .collect())
}

/// `L_r^u(theta')` for a fixed episode, as a function of the parameters.
pub fn meta_test_objective(params: &ModelParams, episode: &Episode, cfg: &TrainConfig, alpha: f64) -> Result<f64> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let mt = meta_train_step(&bound, episode, cfg, alpha)?;
    Ok(meta_test_step(&bound, &mt.theta_prime, episode, cfg)?.relation_loss.item())
}

/// `grad_theta L_r^u(theta - alpha grad_theta L_r^s(theta))`, through the
/// inner step.
pub fn meta_gradient(params: &ModelParams, episode: &Episode, cfg: &TrainConfig, alpha: f64) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let mt = meta_train_step(&bound, episode, cfg, alpha)?;
    let mu = meta_test_step(&bound, &mt.theta_prime, episode, cfg)?;
    Ok(backward(&mu.relation_loss, &bound.group(ParamGroup::Voting), false)?)
}

pub fn train(cfg: &TrainConfig, data: &MultiDomainDataset) -> Result<(ModelParams, TrainLog)> {
    let out = train_with(cfg, data, &TrainOptions::default())?;
    Ok((out.params, out.log))
}

pub fn train_with(cfg: &TrainConfig, data: &MultiDomainDataset, opts: &TrainOptions<'_>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    for epoch in 0..cfg.max_epochs() {
        for iter in 0..cfg.iters_per_epoch() {
            log.iterations.push(trainer.iterate(epoch, iter)?);
        }
        let mut record = EpochRecord {
            epoch,
            val_map: None,
            val_rank1: None,
        };
        if let Some(val) = opts.validation {
            let snapshot = trainer.params().detached();
            let r = evaluate_target(&snapshot, val, cfg.hp.sigma_fn, cfg.hp.integrate_fn, RelevanceMode::AllSamples)
                .map_err(|e| MetaError::Config(format!("validation failed: {e}")))?;
            record.val_map = Some(r.map);
            record.val_rank1 = r.cmc.first().copied();
            if best.as_ref().is_none_or(|(_, m, _)| r.map > *m) {
                best = Some((epoch, r.map, snapshot));
                if let Some(dir) = &opts.checkpoint_dir {
                    trainer.params().save(&dir.join("best.ckpt"))?;
                }
            }
        }
        log::info!(
            "epoch {epoch}: meta-train domain loss {:.4}, val mAP {:?}",
            log.iterations.last().map_or(f64::NAN, |r| r.meta_train.domain),
            record.val_map
        );
        if let Some(dir) = opts.checkpoint_dir.as_ref().filter(|_| !opts.skip_epoch_checkpoints) {
            trainer.params().save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
        log.epochs.push(record);
    }
    let params = trainer.params().clone();
    if let Some(dir) = &opts.checkpoint_dir {
        params.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome { params, best, log })
}
