use super::*;
use crate::model::HyperParams;
use crate::synthdata::SynthConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> (ModelParams, TargetSet) {
    let cfg = SynthConfig {
        d_in: 12,
        identity_rank: 6,
        identities_per_domain: 5,
        samples_per_identity: 4,
        num_domains: 3,
        ..SynthConfig::default()
    };
    let b = cfg.build().unwrap();
    let hp = HyperParams {
        hidden: 10,
        d_feat: 8,
        d_emb: 6,
        ..HyperParams::default()
    };
    let mut p = ModelParams::init(12, &b.sources.identity_counts(), &hp, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in p.prototypes.iter_mut() {
        *c = Tensor::new(c.shape().to_vec(), (0..c.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    }
    (p, b.targets[0].clone())
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn evaluate_two_item_cases() {
    let q = m(&[&[1.0, 0.0]]);
    let g = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let r = evaluate(&q, &g, &[7], &[7, 3]).unwrap();
    assert_eq!((r.map, r.cmc[0]), (1.0, 1.0));
    let r = evaluate(&q, &g, &[3], &[7, 3]).unwrap();
    assert_eq!((r.map, r.cmc[0], r.cmc[1]), (0.5, 0.0, 1.0));
    assert!(matches!(evaluate(&q, &g, &[9], &[7, 3]), Err(InferenceError::NoPositive { query: 0, label: 9 })));
}

#[test]
fn ties_resolve_by_gallery_index() {
    let q = m(&[&[1.0, 0.0]]);
    let g = m(&[&[0.5, 0.0], &[0.5, 0.0]]);
    assert_eq!(evaluate(&q, &g, &[1], &[0, 1]).unwrap().map, 0.5);
    assert_eq!(evaluate(&q, &g, &[0], &[0, 1]).unwrap().map, 1.0);
}

#[test]
fn cmc_is_monotone_and_map_is_mean_ap() {
    let (p, t) = small();
    let r = evaluate_target(&p, &t, SigmaFn::Softmax, IntegrateFn::Concat, RelevanceMode::AllSamples).unwrap();
    assert!(r.cmc.windows(2).all(|w| w[0] <= w[1]));
    let mean = r.per_query_ap.iter().sum::<f64>() / r.per_query_ap.len() as f64;
    assert_eq!(r.map, mean);
    assert!(r.map > 0.0 && r.map <= 1.0);
}

#[test]
fn report_means_and_weights() {
    let (p, t) = small();
    let rep = compute_relevance(&p, &t, RelevanceMode::GalleryOnly, SigmaFn::Softmax).unwrap();
    assert_eq!(rep.per_sample.len(), t.gallery.len());
    for j in 0..3 {
        let mean = rep.per_sample.iter().map(|r| r[j]).sum::<f64>() / rep.per_sample.len() as f64;
        assert_eq!(rep.per_domain[j], mean);
    }
    assert!((rep.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(rep.domain_ids, vec![1, 2, 3]);
}

#[test]
fn softmax_weights_are_shift_invariant() {
    let s = [0.3, -0.2, 0.9, 0.1];
    let a = domain_weights(&s, SigmaFn::Softmax).unwrap();
    let shifted: Vec<f64> = s.iter().map(|v| v + 0.25).collect();
    let b = domain_weights(&shifted, SigmaFn::Softmax).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn gallery_only_equals_all_samples_without_queries() {
    let (p, mut t) = small();
    t.gallery = (0..t.domain.len()).collect();
    t.query.clear();
    let a = compute_relevance(&p, &t, RelevanceMode::AllSamples, SigmaFn::Softmax).unwrap();
    let g = compute_relevance(&p, &t, RelevanceMode::GalleryOnly, SigmaFn::Softmax).unwrap();
    assert_eq!(a.per_domain, g.per_domain);
    assert_eq!(a.weights, g.weights);
}

#[test]
fn aggregated_rows_are_unit_and_checked() {
    let (p, t) = small();
    let rep = compute_relevance(&p, &t, RelevanceMode::AllSamples, SigmaFn::Softmax).unwrap();
    let x = t.domain.all_rows();
    let v = extract_aggregated(&p, &x, &rep, IntegrateFn::Concat).unwrap();
    assert_eq!(v.cols(), 3 * 6);
    for r in 0..v.rows() {
        assert!((v.row(r).iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
    }
    let mut other = p.clone();
    other.prototypes.pop();
    other.experts.pop();
    assert!(matches!(extract_aggregated(&other, &x, &rep, IntegrateFn::Concat), Err(InferenceError::ChecksumMismatch { .. })));
}

#[test]
fn equal_scores_scale_each_segment_by_a_quarter() {
    let hp = HyperParams {
        hidden: 6,
        d_feat: 5,
        d_emb: 3,
        ..HyperParams::default()
    };
    let p = ModelParams::init(4, &[2; 4], &hp, 1).unwrap();
    let x = m(&[&[0.1, 0.2, -0.3, 0.4], &[1.0, 0.0, 0.5, -0.5]]);
    let w = domain_weights(&[0.2; 4], SigmaFn::Softmax).unwrap();
    assert!(w.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    let v = aggregate_with_weights(&p, &x, &w, IntegrateFn::Concat).unwrap();
    let f = p.backbone_forward(&x).unwrap();
    let raw = Tensor::concat_cols(&p.expert_embeddings(&f).unwrap()).unwrap().scale(0.25).unwrap().l2_normalize().unwrap();
    for (a, b) in v.values().iter().zip(raw.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_expert_aggregation_is_its_normalized_embedding() {
    let hp = HyperParams {
        hidden: 6,
        d_feat: 5,
        d_emb: 3,
        ..HyperParams::default()
    };
    let p = ModelParams::init(4, &[2], &hp, 1).unwrap();
    let x = m(&[&[0.1, 0.2, -0.3, 0.4]]);
    let w = domain_weights(&[0.7], SigmaFn::Softmax).unwrap();
    assert_eq!(w, vec![1.0]);
    let v = aggregate_with_weights(&p, &x, &w, IntegrateFn::Concat).unwrap();
    assert_eq!(v, expert_features(&p, 0, &x).unwrap());
}

#[test]
fn ablation_rows_match_their_definitions() {
    let (p, t) = small();
    let table = ablation_suite(&p, Some(&p), &t, SigmaFn::Softmax, IntegrateFn::Concat).unwrap();
    assert_eq!(table.rows.len(), 3 + 3);
    assert_eq!(table.get("expert2").unwrap(), &evaluate_expert(&p, 1, &t).unwrap());
    let uniform = RelevanceReport {
        weights: vec![1.0 / 3.0; 3],
        ..compute_relevance(&p, &t, RelevanceMode::AllSamples, SigmaFn::Softmax).unwrap()
    };
    let qf = extract_aggregated(&p, &t.domain.rows_tensor(&t.query), &uniform, IntegrateFn::Concat).unwrap();
    let gf = extract_aggregated(&p, &t.domain.rows_tensor(&t.gallery), &uniform, IntegrateFn::Concat).unwrap();
    let want = evaluate(&qf, &gf, &t.query_labels(), &t.gallery_labels()).unwrap();
    assert_eq!(table.get("experts-ensemble").unwrap(), &want);
    let csv = write_table_csv(&table, &CMC_RANKS);
    assert!(csv.starts_with("name,map,rank1,rank5,rank10\nexpert1,"));
    assert_eq!(integration_study(&p, &t).unwrap().rows.len(), 4);
}
