//! Softmax or sigmoid weights, combined by concatenation or by sum.
//!
//! `cargo run --release --example integration_study -- [epochs]`

use ramoe::inference::{integration_study, write_table_csv};
use ramoe::meta::{train, TrainConfig};
use ramoe::model::HyperParams;
use ramoe::synthdata::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(6);
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
    let (params, _) = train(&cfg, &bundle.sources)?;
    let table = integration_study(&params, test)?;
    print!("{}", write_table_csv(&table, &[1, 5]));
    Ok(())
}
