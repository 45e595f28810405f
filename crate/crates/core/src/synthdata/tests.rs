use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> SynthConfig {
    SynthConfig {
        d_in: 16,
        identity_rank: 8,
        identities_per_domain: 6,
        samples_per_identity: 4,
        targets: vec![],
        ..SynthConfig::default()
    }
}

#[test]
fn default_scale_has_256_samples_per_domain() {
    let b = SynthConfig::default().build().unwrap();
    assert_eq!(b.sources.num_domains(), 4);
    assert_eq!(b.sources.d_in, 64);
    for d in &b.sources.domains {
        assert_eq!(d.len(), 256);
        assert_eq!(d.num_identities, 32);
        let mut seen = d.labels.clone();
        seen.dedup();
        assert_eq!(seen, (0..32).collect::<Vec<_>>());
    }
    assert_eq!(b.sources.identity_counts().iter().sum::<usize>(), 128);
}

#[test]
fn target_with_source_shift_is_nearest_to_that_source() {
    let cfg = small_config();
    let (sources, _) = cfg.specs().unwrap();
    let mut target = sources[2].clone();
    target.domain_id = 9;
    let (ds, targets) = generate(&sources, &[target], 11).unwrap();
    let c = targets[0].domain.centroid();
    let dists: Vec<f64> = ds.domains.iter().map(|d| euclidean(&c, &d.centroid())).collect();
    let best = (0..dists.len()).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
    assert_eq!(best, 2, "{dists:?}");
}

#[test]
fn zero_noise_collapses_identities() {
    let cfg = SynthConfig {
        noise_sigma: 0.0,
        ..small_config()
    };
    let b = cfg.build().unwrap();
    let d = &b.sources.domains[0];
    for group in d.by_identity() {
        for &i in &group[1..] {
            assert_eq!(d.row(i), d.row(group[0]));
        }
    }
}

#[test]
fn centroid_distance_shrinks_as_target_moves_toward_source() {
    let cfg = small_config();
    let (sources, _) = cfg.specs().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let base = DomainShift::random(cfg.d_in, cfg.bias_scale, cfg.scale_spread, &mut rng);
    let targets: Vec<DomainSpec> = [0.0, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &t)| DomainSpec {
            domain_id: 10 + i,
            num_identities: 40,
            samples_per_identity: 4,
            shift: base.interpolate(&sources[0].shift, t),
            noise_sigma: cfg.noise_sigma,
        })
        .collect();
    let (ds, sets) = generate(&sources, &targets, 5).unwrap();
    let a = ds.domains[0].centroid();
    let d: Vec<f64> = sets.iter().map(|s| euclidean(&s.domain.centroid(), &a)).collect();
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
}

#[test]
fn generation_rejects_bad_specs() {
    let (mut sources, _) = small_config().specs().unwrap();
    sources[1].samples_per_identity = 1;
    assert!(matches!(generate(&sources, &[], 1), Err(DataError::TooFewSamples { domain: 2, got: 1 })));
    let (mut sources, _) = small_config().specs().unwrap();
    sources[0].shift.rotation[0] += 1e-3;
    assert!(matches!(generate(&sources, &[], 1), Err(DataError::NonOrthogonal { domain: 1, .. })));
}

#[test]
fn generation_is_deterministic() {
    let a = small_config().build().unwrap();
    let b = small_config().build().unwrap();
    assert_eq!(a.sources, b.sources);
}

#[test]
fn pk_batch_is_balanced() {
    let b = SynthConfig::default().build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_pk_batch(&b.sources.domains[0], 16, 4, &mut rng).unwrap();
    assert_eq!(batch.inputs.shape(), &[64, 64]);
    let mut hist = std::collections::BTreeMap::new();
    for &l in &batch.labels {
        *hist.entry(l).or_insert(0) += 1;
    }
    assert_eq!(hist.len(), 16);
    assert!(hist.values().all(|&c| c == 4));
}

#[test]
fn pk_batch_covers_two_by_two_domain() {
    let cfg = SynthConfig {
        identities_per_domain: 2,
        samples_per_identity: 2,
        ..small_config()
    };
    let b = cfg.build().unwrap();
    let d = &b.sources.domains[0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = sample_pk_batch(d, 2, 2, &mut rng).unwrap();
    let mut rows: Vec<Vec<u64>> = (0..4).map(|i| batch.inputs.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    let mut all: Vec<Vec<u64>> = (0..4).map(|i| d.row(i).iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    all.sort();
    assert_eq!(rows, all);
}

#[test]
fn pk_batch_is_deterministic_and_reports_shortfall() {
    let b = small_config().build().unwrap();
    let d = &b.sources.domains[0];
    let draw = |s| sample_pk_batch(d, 3, 2, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
    assert_eq!(draw(8), draw(8));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sample_pk_batch(d, 7, 2, &mut rng),
        Err(DataError::InsufficientIdentities { need: 7, have: 6, .. })
    ));
    assert!(matches!(
        sample_pk_batch(d, 2, 5, &mut rng),
        Err(DataError::InsufficientInstances { need: 5, have: 4, .. })
    ));
    assert!(matches!(sample_pk_batch(d, 1, 2, &mut rng), Err(DataError::BatchShape { .. })));
}

#[test]
fn target_split_keeps_a_gallery_positive_for_every_query() {
    let b = SynthConfig::default().build().unwrap();
    let t = &b.targets[0];
    assert_eq!(t.query.len(), 32 * 2);
    assert_eq!(t.gallery.len(), 32 * 6);
    let g: std::collections::BTreeSet<_> = t.gallery_labels().into_iter().collect();
    assert!(t.query_labels().iter().all(|l| g.contains(l)));
}

#[test]
fn dataset_text_round_trip_is_exact() {
    let b = SynthConfig::default().build().unwrap();
    let mut buf = Vec::new();
    write_dataset(&b.sources, &mut buf).unwrap();
    let back = parse_dataset(std::str::from_utf8(&buf).unwrap()).unwrap();
    let worst = b
        .sources
        .domains
        .iter()
        .zip(&back.domains)
        .flat_map(|(a, b)| a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-12);
    assert_eq!(back, b.sources);
}

#[test]
fn dataset_parse_errors_carry_line_numbers() {
    let ok = "# ramoe-dataset v1\nd_in 2\ndomains 1\ndomain 1 identities 1 samples 2\n1,0,0.5,1\n1,0,2,3\n";
    assert!(parse_dataset(ok).is_ok());
    let short = ok.replace("1,0,2,3", "1,0,2");
    assert!(matches!(parse_dataset(&short), Err(DataError::Arity { line: 6, expected: 4, found: 3 })));
    let word = ok.replace("1,0,2,3", "1,0,x,3");
    assert!(matches!(parse_dataset(&word), Err(DataError::Parse { line: 6, .. })));
    let header = ok.replace("domains 1", "domains one");
    assert!(matches!(parse_dataset(&header), Err(DataError::Parse { line: 3, .. })));
    let empty = "# ramoe-dataset v1\nd_in 2\ndomains 2\ndomain 1 identities 1 samples 2\ndomain 4 identities 1 samples 0\n1,0,0.5,1\n1,0,2,3\n";
    let err = parse_dataset(empty).unwrap_err();
    assert!(matches!(err, DataError::EmptyDomain(4)));
    assert!(err.to_string().contains("domain 4"));
}
