use super::*;
use crate::autodiff::backward;

fn small_hp() -> HyperParams {
    HyperParams {
        hidden: 12,
        d_feat: 8,
        d_emb: 6,
        ..HyperParams::default()
    }
}

fn input(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn init_is_deterministic_with_zero_prototypes() {
    let a = ModelParams::init(10, &[5, 7], &small_hp(), 3).unwrap();
    let b = ModelParams::init(10, &[5, 7], &small_hp(), 3).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.named_params().iter().zip(b.named_params()) {
        let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x.1), bits(y.1));
    }
    assert!(a.prototypes.iter().all(|p| p.values().iter().all(|&v| v == 0.0)));
    assert_eq!(a.prototypes[1].shape(), &[7, 6]);
    assert_ne!(a, ModelParams::init(10, &[5, 7], &small_hp(), 4).unwrap());
}

#[test]
fn classifier_shape_follows_widths() {
    let hp = HyperParams {
        d_feat: 32,
        d_emb: 16,
        ..HyperParams::default()
    };
    let p = ModelParams::init(64, &[32; 4], &hp, 0).unwrap();
    assert_eq!(p.experts[0].cls.w.shape(), &[16, 32]);
    let f = p.backbone_forward(&input(8, 64, 1)).unwrap();
    let out = p.expert_forward(0, &f, Mode::Train).unwrap();
    assert_eq!(out.logits.shape(), &[8, 32]);
    assert_eq!(p.backbone_forward(&input(64, 64, 2)).unwrap().shape(), &[64, 32]);
    assert!(matches!(p.expert_forward(4, &f, Mode::Eval), Err(ModelError::ExpertOutOfRange { index: 4, count: 4 })));
    assert!(matches!(ModelParams::init(64, &[3], &HyperParams { d_emb: 0, ..hp }, 0), Err(ModelError::InvalidWidth { name: "d_emb" })));
}

#[test]
fn zero_backbone_gives_zero_features() {
    let mut p = ModelParams::init(5, &[3], &small_hp(), 0).unwrap();
    for t in p.group_mut(ParamGroup::Backbone) {
        *t = Tensor::zeros(t.shape());
    }
    let f = p.backbone_forward(&input(4, 5, 0)).unwrap();
    assert!(f.values().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_backbone_passes_nonnegative_inputs() {
    let hp = HyperParams {
        hidden: 4,
        d_feat: 4,
        ..small_hp()
    };
    let mut p = ModelParams::init(4, &[2], &hp, 0).unwrap();
    let eye = Tensor::matrix(4, 4, (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
    for l in p.backbone.iter_mut() {
        l.w = eye.clone();
        l.b = Tensor::zeros(&[4]);
    }
    let x = Tensor::matrix(2, 4, vec![0.0, 1.0, 2.5, 0.3, 4.0, 0.0, 0.1, 9.0]).unwrap();
    assert_eq!(p.backbone_forward(&x).unwrap().values(), x.values());
}

#[test]
fn train_mode_embedding_is_standardized_by_affine() {
    let mut p = ModelParams::init(5, &[3], &small_hp(), 1).unwrap();
    let scale = vec![0.5, 1.0, 2.0, 1.5, 0.7, 3.0];
    let shift = vec![1.0, -1.0, 0.0, 2.0, 0.5, -0.25];
    p.experts[0].norm.scale = Tensor::vector(scale.clone()).unwrap();
    p.experts[0].norm.shift = Tensor::vector(shift.clone()).unwrap();
    let f = p.backbone_forward(&input(32, 5, 2)).unwrap();
    let out = p.expert_forward(0, &f, Mode::Train).unwrap();
    let (m, var) = (out.m, out.stats.unwrap().var);
    for c in 0..6 {
        let col: Vec<f64> = (0..32).map(|r| m.row(r)[c]).collect();
        let mean = col.iter().sum::<f64>() / 32.0;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0).sqrt();
        assert!((mean - shift[c]).abs() < 1e-9);
        let shrink = (var[c] / (var[c] + NORM_EPS)).sqrt();
        assert!((std - scale[c] * shrink).abs() < 1e-9, "{std} vs {}", scale[c]);
    }
}

#[test]
fn zero_classifier_gives_uniform_softmax() {
    let mut p = ModelParams::init(5, &[4], &small_hp(), 1).unwrap();
    p.experts[0].cls.w = Tensor::zeros(&[6, 4]);
    p.experts[0].cls.b = Tensor::zeros(&[4]);
    let f = p.backbone_forward(&input(3, 5, 2)).unwrap();
    let probs = p.expert_forward(0, &f, Mode::Train).unwrap().logits.softmax().unwrap();
    assert!(probs.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn zero_voting_weights_give_shift_rows() {
    let mut p = ModelParams::init(5, &[4], &small_hp(), 1).unwrap();
    p.voting.fc.w = Tensor::zeros(&[8, 6]);
    let f = p.backbone_forward(&input(7, 5, 2)).unwrap();
    // Constant columns normalize to zero, leaving the shift.
    let (q, _) = p.voting_forward(&f, Mode::Train).unwrap();
    assert_eq!(q.shape(), &[7, 6]);
    assert!(q.values().iter().all(|&v| v == 0.0));
    let shift = vec![0.5, -1.0, 0.0, 2.0, 1.0, 3.0];
    p.voting.norm.shift = Tensor::vector(shift.clone()).unwrap();
    let (q, _) = p.voting_forward(&f, Mode::Train).unwrap();
    for r in 0..7 {
        assert_eq!(q.row(r), shift.as_slice());
    }
}

#[test]
fn eval_mode_is_deterministic_and_uses_running_stats() {
    let mut p = ModelParams::init(5, &[4], &small_hp(), 1).unwrap();
    let f = p.backbone_forward(&input(16, 5, 2)).unwrap();
    let (a, sa) = p.voting_forward(&f, Mode::Eval).unwrap();
    let (b, _) = p.voting_forward(&f, Mode::Eval).unwrap();
    assert!(sa.is_none());
    assert_eq!(a, b);
    let (_, stats) = p.voting_forward(&f, Mode::Train).unwrap();
    let stats = stats.unwrap();
    p.voting.norm.update_running(&stats);
    let want = 0.1 * stats.var[0] * 16.0 / 15.0 + 0.9;
    assert!((p.voting.norm.running_var[0] - want).abs() < 1e-15);
    assert!((p.voting.norm.running_mean[0] - 0.1 * stats.mean[0]).abs() < 1e-15);
}

#[test]
fn groups_partition_the_trainable_tensors() {
    let p = ModelParams::init(5, &[3, 4, 2], &small_hp(), 0).unwrap();
    let names: Vec<String> = p.named_params().into_iter().map(|(n, _)| n).collect();
    let unique: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
    assert_eq!(names.len(), 4 + 3 * 6 + 3 + 4);
    assert!(names.contains(&"expert3.cls.b".to_string()));
    assert!(names.contains(&"proto2".to_string()));
}

#[test]
fn bound_params_carry_gradients() {
    let p = ModelParams::init(5, &[3], &small_hp(), 0).unwrap();
    let tape = Tape::new();
    let b = p.bind(&tape);
    assert!(b.named_params().iter().all(|(_, t)| t.requires_grad()));
    let f = b.backbone_forward(&input(4, 5, 1)).unwrap();
    let (q, _) = b.voting_forward(&f, Mode::Train).unwrap();
    let loss = q.mul(&q).unwrap().sum_all().unwrap();
    let g = backward(&loss, &b.group(ParamGroup::Voting), false).unwrap();
    assert!(g[0].values().iter().any(|&v| v != 0.0));
    assert!(!p.detached().voting.fc.w.requires_grad());
}

#[test]
fn checkpoint_round_trip_and_strictness() {
    let mut p = ModelParams::init(5, &[3, 4], &small_hp(), 9).unwrap();
    p.experts[1].norm.running_var[2] = 0.123456789012345;
    let mut buf = Vec::new();
    write_checkpoint(&p, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, p);

    let text = String::from_utf8(buf).unwrap();
    let missing: String = text.lines().filter(|l| !l.starts_with("proto2 ")).map(|l| format!("{l}\n")).collect();
    assert!(matches!(read_checkpoint(missing.as_bytes()), Err(ModelError::MissingKey(k)) if k == "proto2"));
    let extra = format!("{text}bogus.w 1 0.5\n");
    assert!(matches!(read_checkpoint(extra.as_bytes()), Err(ModelError::UnknownKey(k)) if k == "bogus.w"));
    let version = text.replacen("v1", "v0", 1);
    assert!(matches!(read_checkpoint(version.as_bytes()), Err(ModelError::Version(_))));
}
