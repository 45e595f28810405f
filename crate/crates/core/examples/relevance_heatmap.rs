//! Relevance of targets placed near each source domain, as a heatmap CSV.
//!
//! `cargo run --release --example relevance_heatmap -- [epochs]`

use ramoe::inference::{compute_relevance, heatmap_csv, RelevanceMode};
use ramoe::meta::{train, TrainConfig};
use ramoe::model::HyperParams;
use ramoe::synthdata::{SynthConfig, TargetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(6);
    let base = SynthConfig::default();
    let synth = SynthConfig {
        targets: (1..=base.num_domains)
            .map(|k| TargetConfig {
                name: format!("near{k}"),
                toward: k,
                t: 0.9,
                identities: 16,
                samples_per_identity: 6,
            })
            .collect(),
        ..base
    };
    let bundle = synth.build()?;
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

    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (tc, target) in synth.targets.iter().zip(&bundle.targets) {
        let report = compute_relevance(&params, target, RelevanceMode::AllSamples, cfg.hp.sigma_fn)?;
        println!("{}: argmax domain {} weights {:.4?}", tc.name, report.argmax_domain(), report.weights);
        names.push(tc.name.clone());
        rows.push(report.per_domain);
        ids = report.domain_ids;
    }
    print!("{}", heatmap_csv(&names, &ids, &rows));
    Ok(())
}
