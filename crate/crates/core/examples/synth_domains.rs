//! Generates the default benchmark and shows how far each target sits from
//! each source domain.

use ramoe::synthdata::{euclidean, write_dataset, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig::default();
    let bundle = cfg.build()?;
    for d in &bundle.sources.domains {
        println!(
            "source {}: {} rows, {} identities, d_in {}",
            d.domain_id,
            d.len(),
            d.num_identities,
            d.d_in
        );
    }
    let centroids: Vec<Vec<f64>> = bundle.sources.domains.iter().map(|d| d.centroid()).collect();
    for (tc, target) in cfg.targets.iter().zip(&bundle.targets) {
        let c = target.domain.centroid();
        let dists: Vec<String> = centroids.iter().map(|s| format!("{:.2}", euclidean(&c, s))).collect();
        println!(
            "target {:>4} (toward {}, t={}): {} queries, {} gallery, centroid distance to sources [{}]",
            tc.name,
            tc.toward,
            tc.t,
            target.query.len(),
            target.gallery.len(),
            dists.join(", ")
        );
    }
    let mut buf = Vec::new();
    write_dataset(&bundle.sources, &mut buf)?;
    println!("serialized sources: {} bytes", buf.len());
    Ok(())
}
