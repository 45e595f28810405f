//! Single experts, their uniform ensemble, the model without decorrelation,
//! and the full model on the test target.
//!
//! `cargo run --release --example ablation_table -- [epochs]`

use ramoe::inference::{ablation_suite, write_table_csv, CMC_RANKS};
use ramoe::meta::{train, TrainConfig};
use ramoe::model::HyperParams;
use ramoe::synthdata::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(10);
    let synth = SynthConfig::default();
    let bundle = synth.build()?;
    let test = bundle.target(&synth, "test").ok_or("no test target")?;
    let cfg = TrainConfig {
        hp: HyperParams {
            epochs,
            ..HyperParams::default()
        },
        warmup_epochs: 1,
        lr_decay_epochs: vec![epochs * 2 / 3],
        ..TrainConfig::default()
    };
    let no_decor = TrainConfig {
        decorrelation: false,
        ..cfg.clone()
    };
    let (full, _) = train(&cfg, &bundle.sources)?;
    let (nd, _) = train(&no_decor, &bundle.sources)?;
    let table = ablation_suite(&full, Some(&nd), test, cfg.hp.sigma_fn, cfg.hp.integrate_fn)?;
    print!("{}", write_table_csv(&table, &CMC_RANKS));
    Ok(())
}
