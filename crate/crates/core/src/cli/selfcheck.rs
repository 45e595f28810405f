use serde::Serialize;

use super::Result;
use crate::autodiff::{backward, Tape, Tensor};
use crate::losses::gradient_suite;
use crate::meta::{meta_gradient, meta_test_objective, TrainConfig, Trainer};
use crate::model::{HyperParams, ParamGroup};
use crate::synthdata::SynthConfig;

pub const LOSS_INSTANCES: usize = 20;
pub const META_GRAD_TOL: f64 = 1e-3;
pub const META_GRAD_COORDS: usize = 8;
pub const CLOSED_FORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckRow {
    pub name: String,
    pub instances: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SelfCheckRow {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

/// Every loss against central differences, the meta-gradient through the
/// inner step on a small four-domain problem, and the scalar quadratic
/// surrogate against its closed form.
pub fn run_self_checks(seed: u64) -> Result<Vec<SelfCheckRow>> {
    let mut rows: Vec<SelfCheckRow> = gradient_suite(seed, LOSS_INSTANCES)?
        .into_iter()
        .map(|r| SelfCheckRow {
            name: r.name.to_string(),
            instances: r.instances,
            max_error: r.max_rel_error,
            tolerance: crate::losses::GRADCHECK_TOL,
        })
        .collect();
    rows.push(meta_gradient_row(seed)?);
    rows.push(quadratic_row()?);
    Ok(rows)
}

fn meta_gradient_row(seed: u64) -> Result<SelfCheckRow> {
    let data = SynthConfig {
        num_domains: 4,
        d_in: 10,
        identity_rank: 5,
        identities_per_domain: 6,
        samples_per_identity: 4,
        seed,
        targets: vec![],
        ..SynthConfig::default()
    }
    .build()?
    .sources;
    let cfg = TrainConfig {
        hp: HyperParams {
            hidden: 12,
            d_feat: 8,
            d_emb: 6,
            epochs: 2,
            iters_per_epoch: 3,
            beta: 1e-2,
            gamma: 1e-2,
            ..HyperParams::default()
        },
        warmup_epochs: 1,
        lr_decay_epochs: vec![1],
        identities_per_batch: 3,
        instances_per_identity: 2,
        seed,
        ..TrainConfig::default()
    };
    let alpha = 0.5;
    let mut trainer = Trainer::new(cfg.clone(), &data)?;
    // Prototypes start at zero; two steps give the relevance a gradient.
    for e in 0..2 {
        let ep = trainer.next_episode()?;
        trainer.step(&ep, trainer.lrs(e))?;
    }
    let episode = trainer.next_episode()?;
    let params = trainer.params().clone();
    let grads = meta_gradient(&params, &episode, &cfg, alpha)?;
    let sizes: Vec<usize> = params.group(ParamGroup::Voting).iter().map(|t| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for c in 0..META_GRAD_COORDS {
        let mut flat = (c * 7919 + seed as usize) % total;
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let probe = |delta: f64| -> Result<f64> {
            let mut p = params.clone();
            let slot = &mut p.group_mut(ParamGroup::Voting)[ti];
            let mut v = slot.to_vec();
            v[flat] += delta;
            **slot = Tensor::new(slot.shape().to_vec(), v)?;
            Ok(meta_test_objective(&p, &episode, &cfg, alpha)?)
        };
        let fd = (probe(h)? - probe(-h)?) / (2.0 * h);
        let an = grads[ti].values()[flat];
        worst = worst.max((an - fd).abs() / (an.abs() + fd.abs() + 1e-6));
    }
    Ok(SelfCheckRow {
        name: "meta_gradient".into(),
        instances: META_GRAD_COORDS,
        max_error: worst,
        tolerance: META_GRAD_TOL,
    })
}

/// `L(t) = a t^2`, one inner step `t' = t - alpha L'(t)`, outer `L(t')`:
/// the derivative is `2a (1 - 2a alpha)^2 t`.
fn quadratic_row() -> Result<SelfCheckRow> {
    let cases = [(1.0, 0.25, 1.0), (0.5, 0.1, -2.0), (3.0, 0.01, 0.7), (2.0, 0.3, 1.5)];
    let mut worst = 0.0_f64;
    for (a, alpha, theta0) in cases {
        let tape = Tape::new();
        let theta = tape.leaf(&Tensor::scalar(theta0));
        let inner = theta.mul(&theta)?.scale(a)?;
        let g = backward(&inner, &[&theta], true)?.remove(0);
        let theta_prime = theta.sub(&g.scale(alpha)?)?;
        let outer = theta_prime.mul(&theta_prime)?.scale(a)?;
        let got = backward(&outer, &[&theta], false)?[0].item();
        let want = 2.0 * a * (1.0 - 2.0 * a * alpha) * (1.0 - 2.0 * a * alpha) * theta0;
        worst = worst.max((got - want).abs());
    }
    Ok(SelfCheckRow {
        name: "second_order_quadratic".into(),
        instances: cases.len(),
        max_error: worst,
        tolerance: CLOSED_FORM_TOL,
    })
}
