//! Meta-trains the model on the default benchmark and scores the test target.
//!
//! `cargo run --release --example train_ramoe -- [epochs] [checkpoint path]`

use std::path::PathBuf;

use ramoe::inference::{evaluate_target, RelevanceMode};
use ramoe::meta::{train_with, TrainConfig, TrainOptions};
use ramoe::model::{HyperParams, ModelParams};
use ramoe::synthdata::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(8);
    let ckpt = args.next().map(PathBuf::from);

    let synth = SynthConfig::default();
    let bundle = synth.build()?;
    let val = bundle.target(&synth, "val").ok_or("no val target")?;
    let test = bundle.target(&synth, "test").ok_or("no test target")?;
    let cfg = TrainConfig {
        hp: HyperParams {
            epochs,
            ..HyperParams::default()
        },
        lr_decay_epochs: vec![epochs * 2 / 3],
        ..TrainConfig::default()
    };
    let opts = TrainOptions {
        validation: Some(val),
        ..TrainOptions::default()
    };
    let out = train_with(&cfg, &bundle.sources, &opts)?;

    for e in &out.log.epochs {
        let last = out.log.iterations.iter().rev().find(|r| r.epoch == e.epoch);
        println!(
            "epoch {:>2}  domain loss {:.4}  relation {:.4}  val mAP {:.2}",
            e.epoch,
            last.map_or(f64::NAN, |r| r.meta_train.domain),
            last.map_or(f64::NAN, |r| r.meta_test.relation),
            100.0 * e.val_map.unwrap_or(f64::NAN)
        );
    }
    let (sigma, integrate) = (cfg.hp.sigma_fn, cfg.hp.integrate_fn);
    let test_map = |p: &ModelParams| evaluate_target(p, test, sigma, integrate, RelevanceMode::AllSamples).map(|r| r.map);
    println!("test mAP, final params: {:.2}", 100.0 * test_map(&out.params)?);
    if let Some((epoch, val_map, best)) = &out.best {
        println!("test mAP, best epoch {epoch} (val {:.2}): {:.2}", 100.0 * val_map, 100.0 * test_map(best)?);
    }
    if let Some(path) = ckpt {
        out.params.save(&path)?;
        println!("saved {}", path.display());
    }
    Ok(())
}
