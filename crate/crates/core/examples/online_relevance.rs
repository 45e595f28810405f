//! Relevance estimated from a stream of target rows, compared with the
//! all-samples and gallery-only reports.

use ramoe::inference::{compute_relevance, domain_weights, relevance_per_sample, RelevanceMode};
use ramoe::meta::{train, TrainConfig};
use ramoe::model::HyperParams;
use ramoe::synthdata::SynthConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = 4;
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
    let sigma = cfg.hp.sigma_fn;

    let k = params.num_experts();
    let mut sum = vec![0.0; k];
    let mut seen = 0usize;
    let order: Vec<usize> = (0..test.domain.len()).collect();
    for chunk in order.chunks(32) {
        let s = relevance_per_sample(&params, &test.domain.rows_tensor(chunk))?;
        for r in 0..s.rows() {
            for (acc, v) in sum.iter_mut().zip(s.row(r)) {
                *acc += v;
            }
        }
        seen += chunk.len();
        let mean: Vec<f64> = sum.iter().map(|v| v / seen as f64).collect();
        println!("{seen:>4} rows  weights {:.5?}", domain_weights(&mean, sigma)?);
    }
    for mode in [RelevanceMode::AllSamples, RelevanceMode::GalleryOnly] {
        let report = compute_relevance(&params, test, mode, sigma)?;
        println!("{mode:?}: weights {:.5?}", report.weights);
    }
    Ok(())
}
