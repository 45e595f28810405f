use super::*;
use crate::autodiff::Tensor;
use crate::model::ParamGroup;
use crate::synthdata::{MultiDomainDataset, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_data(k: usize) -> MultiDomainDataset {
    SynthConfig {
        num_domains: k,
        d_in: 10,
        identity_rank: 5,
        identities_per_domain: 6,
        samples_per_identity: 4,
        targets: vec![],
        ..SynthConfig::default()
    }
    .build()
    .unwrap()
    .sources
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        hp: crate::model::HyperParams {
            hidden: 12,
            d_feat: 8,
            d_emb: 6,
            epochs: 2,
            iters_per_epoch: 3,
            alpha: 0.05,
            beta: 1e-2,
            gamma: 1e-2,
            ..Default::default()
        },
        warmup_epochs: 1,
        lr_decay_epochs: vec![1],
        identities_per_batch: 3,
        instances_per_identity: 2,
        ..TrainConfig::default()
    }
}

/// Prototypes start at zero, where relevance carries no gradient; a few
/// steps move them off the origin.
fn warmed<'a>(cfg: &TrainConfig, data: &'a MultiDomainDataset) -> Trainer<'a> {
    let mut t = Trainer::new(cfg.clone(), data).unwrap();
    for e in 0..2 {
        let ep = t.next_episode().unwrap();
        t.step(&ep, t.lrs(e)).unwrap();
    }
    t
}

#[test]
fn split_is_a_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (train, test) = episodic_split(4, &mut rng).unwrap();
    assert_eq!(train.len(), 3);
    assert!(!train.contains(&test));
    let (train, test) = episodic_split(2, &mut rng).unwrap();
    assert_eq!(train.len(), 1);
    assert_ne!(train[0], test);
    assert!(matches!(episodic_split(1, &mut rng), Err(MetaError::TooFewDomains(1))));
}

#[test]
fn split_frequency_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        counts[episodic_split(4, &mut rng).unwrap().1] += 1;
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02, "{counts:?}");
    }
}

#[test]
fn schedule_matches_table() {
    let table = [(0, 1.0 / 3.0), (1, 2.0 / 3.0), (2, 1.0), (9, 1.0), (10, 0.1), (19, 0.1), (20, 0.01), (29, 0.01)];
    for (e, want) in table {
        let got = lr_factor(e, 3, &[10, 20]);
        assert!((got - want).abs() < 1e-15, "epoch {e}: {got}");
    }
    assert_eq!(lr_factor(0, 0, &[]), 1.0);
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::default();
    assert!(c.validate().is_ok());
    c.lr_decay_epochs = vec![20, 10];
    assert!(c.validate().is_err());
    c.lr_decay_epochs = vec![30];
    assert!(c.validate().is_err());
    let c = TrainConfig {
        hp: crate::model::HyperParams { eta: 1.5, ..Default::default() },
        ..TrainConfig::default()
    };
    assert!(c.validate().is_err());
}

#[test]
fn zero_alpha_leaves_theta_unchanged() {
    // With K = 3 each meta-train domain has a single peer, whose softmax
    // weight is 1 whatever theta is; K = 4 gives the inner step a gradient.
    let data = tiny_data(4);
    let cfg = tiny_cfg();
    let mut t = warmed(&cfg, &data);
    let ep = t.next_episode().unwrap();
    let tape = crate::autodiff::Tape::new();
    let bound = t.params().bind(&tape);
    let mt = meta_train_step(&bound, &ep, &cfg, 0.0).unwrap();
    assert!(mt.relation_loss.is_some());
    for (a, b) in mt.theta_prime.iter().zip(bound.group(ParamGroup::Voting)) {
        assert_eq!(a.values(), b.values());
    }
    let mt = meta_train_step(&bound, &ep, &cfg, 0.5).unwrap();
    assert!(mt.theta_prime.iter().zip(bound.group(ParamGroup::Voting)).any(|(a, b)| a.values() != b.values()));
}

#[test]
fn two_domains_degenerate_episode() {
    let data = tiny_data(2);
    let cfg = tiny_cfg();
    let mut t = Trainer::new(cfg.clone(), &data).unwrap();
    let ep = t.next_episode().unwrap();
    let tape = crate::autodiff::Tape::new();
    let bound = t.params().bind(&tape);
    let mt = meta_train_step(&bound, &ep, &cfg, 0.5).unwrap();
    assert!(mt.relation_loss.is_none());
    assert_eq!(mt.bundle.relation, 0.0);
    for (a, b) in mt.theta_prime.iter().zip(bound.group(ParamGroup::Voting)) {
        assert_eq!(a.values(), b.values());
    }
    let mu = meta_test_step(&bound, &mt.theta_prime, &ep, &cfg).unwrap();
    assert!(mu.relation_loss.item() > 0.0);
}

#[test]
fn smoke_run_logs_every_iteration() {
    let data = tiny_data(2);
    let mut cfg = tiny_cfg();
    cfg.hp.epochs = 1;
    cfg.hp.iters_per_epoch = 2;
    cfg.lr_decay_epochs.clear();
    let (_, log) = train(&cfg, &data).unwrap();
    assert_eq!(log.iterations.len(), 2);
    assert_eq!(log.epochs.len(), 1);
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(TrainLog::read_jsonl(&text).unwrap(), log);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = tiny_data(3);
    let cfg = tiny_cfg();
    let (pa, la) = train(&cfg, &data).unwrap();
    let (pb, lb) = train(&cfg, &data).unwrap();
    assert_eq!(la, lb);
    let bits = |p: &crate::model::ModelParams| {
        p.named_params().iter().flat_map(|(_, t)| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    assert_eq!(bits(&pa), bits(&pb));
    for r in &la.iterations {
        assert!(r.meta_train.identities_hold(cfg.hp.lambda));
        assert!(r.meta_test.identities_hold(cfg.hp.lambda));
    }
}

fn snapshot(t: &Trainer<'_>) -> Vec<(ParamGroup, Vec<Tensor>)> {
    let p = t.params();
    p.groups().into_iter().map(|g| (g, p.group(g).into_iter().cloned().collect())).collect()
}

#[test]
fn learning_rates_isolate_parameter_groups() {
    let data = tiny_data(3);
    let cfg = tiny_cfg();
    for (beta, gamma) in [(0.0, 1e-2), (1e-2, 0.0)] {
        let mut t = warmed(&cfg, &data);
        let ep = t.next_episode().unwrap();
        let before = snapshot(&t);
        t.step(&ep, StepLrs { alpha: 0.05, beta, gamma }).unwrap();
        for ((g, a), (_, b)) in before.iter().zip(snapshot(&t)) {
            let changed = a.iter().zip(&b).any(|(x, y)| x.values() != y.values());
            let should = if *g == ParamGroup::Voting { gamma > 0.0 } else { beta > 0.0 };
            if !should {
                assert!(!changed, "{g:?} moved with beta={beta} gamma={gamma}");
            }
        }
        let voting_moved = before.last().unwrap().1.iter().zip(t.params().group(ParamGroup::Voting)).any(|(x, y)| x.values() != y.values());
        assert_eq!(voting_moved, gamma > 0.0);
    }
}

#[test]
fn stale_gradients_are_rejected() {
    let data = tiny_data(2);
    let mut t = Trainer::new(tiny_cfg(), &data).unwrap();
    let ep = t.next_episode().unwrap();
    t.step(&ep, t.lrs(0)).unwrap();
    let mut opt = t.optimizer().clone();
    let mut params = t.params().clone();
    let grads = params.group(ParamGroup::Voting).iter().map(|x| Tensor::zeros(x.shape())).collect();
    let set = GradSet {
        iteration: t.iteration() - 1,
        group: ParamGroup::Voting,
        grads,
    };
    assert!(matches!(opt.step(&mut params, &set, 0.1), Err(MetaError::StaleGradient { expected: 1, got: 0 })));
}

#[test]
fn meta_gradient_matches_finite_differences() {
    let data = tiny_data(3);
    let cfg = tiny_cfg();
    let mut t = warmed(&cfg, &data);
    let ep = t.next_episode().unwrap();
    let alpha = 0.5;
    let params = t.params().clone();
    let grads = meta_gradient(&params, &ep, &cfg, alpha).unwrap();
    let h = 1e-5;
    for (ti, ci) in [(0, 0), (0, 7), (0, 20), (1, 2), (2, 1), (3, 4), (0, 33), (1, 5)] {
        let probe = |delta: f64| {
            let mut p = params.clone();
            let slot = &mut p.group_mut(ParamGroup::Voting)[ti];
            let mut v = slot.to_vec();
            v[ci] += delta;
            **slot = Tensor::new(slot.shape().to_vec(), v).unwrap();
            meta_test_objective(&p, &ep, &cfg, alpha).unwrap()
        };
        let fd = (probe(h) - probe(-h)) / (2.0 * h);
        let an = grads[ti].values()[ci];
        let rel = (an - fd).abs() / (an.abs() + fd.abs() + 1e-6);
        assert!(rel < 1e-3, "theta[{ti}][{ci}]: analytic {an} vs fd {fd}");
    }
}
