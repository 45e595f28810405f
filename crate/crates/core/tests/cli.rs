use std::fs;
use std::path::Path;

use ramoe::cli::{main_with, RunConfig};
use ramoe::meta::TrainLog;

const TINY: &str = r#"
[data]
num_domains = 3
identities_per_domain = 8
samples_per_identity = 4
d_in = 12
identity_rank = 6
seed = 11

[[data.targets]]
name = "test"
toward = 1
t = 0.75
identities = 6
samples_per_identity = 4

[[data.targets]]
name = "val"
toward = 2
t = 0.5
identities = 6
samples_per_identity = 4

[train]
warmup_epochs = 1
lr_decay_epochs = [1]
identities_per_batch = 4
instances_per_identity = 2
seed = 11

[train.hp]
hidden = 16
d_feat = 8
d_emb = 8
epochs = 2
iters_per_epoch = 3
"#;

fn ramoe(args: &[&str]) -> i32 {
    main_with(std::iter::once("ramoe").chain(args.iter().copied()))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_run(dir: &Path, config: &Path) {
    assert_eq!(ramoe(&["train", "--config", path(config), "--out", path(dir)]), 0);
}

#[test]
fn train_ablate_eval_relevance_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let run = tmp.path().join("run");
    train_run(&run, &config);

    for rel in [
        "config.snapshot",
        "data/sources.txt",
        "data/test.txt",
        "checkpoints/epoch_000.ckpt",
        "checkpoints/best.ckpt",
        "checkpoints/final.ckpt",
        "checkpoints/no_decor.ckpt",
        "logs/trainlog.jsonl",
        "results/validation.csv",
    ] {
        assert!(run.join(rel).is_file(), "missing {rel}");
    }

    let snapshot = RunConfig::load(&run.join("config.snapshot")).unwrap();
    let mut original = RunConfig::from_toml(TINY).unwrap();
    original.output.dir = run.clone();
    assert_eq!(snapshot, original);

    let log = TrainLog::read_jsonl(&fs::read_to_string(run.join("logs/trainlog.jsonl")).unwrap()).unwrap();
    assert_eq!(log.iterations.len(), 6);
    assert_eq!(log.epochs.len(), 2);

    assert_eq!(ramoe(&["ablate", "--run", path(&run), "--out", path(&run)]), 0);
    let ablation = fs::read_to_string(run.join("results/ablation.csv")).unwrap();
    assert!(ablation.starts_with("name,map,rank1,rank5,rank10\n"));
    for line in ablation.lines().skip(1) {
        let map: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(map > 0.0 && map <= 100.0, "{line}");
    }
    assert!(run.join("results/integration.csv").is_file());
    assert!(run.join("results/gallery_only.csv").is_file());

    let ckpt = run.join("checkpoints/final.ckpt");
    let test = run.join("data/test.txt");
    let eval_out = tmp.path().join("eval");
    assert_eq!(
        ramoe(&["eval", "--checkpoint", path(&ckpt), "--data", path(&test), "--out", path(&eval_out)]),
        0
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_out.join("results/retrieval.json")).unwrap()).unwrap();
    let map = metrics["map"].as_f64().unwrap();
    assert!(map > 0.0 && map <= 1.0);

    let val = run.join("data/val.txt");
    assert_eq!(
        ramoe(&[
            "relevance",
            "--checkpoint",
            path(&ckpt),
            "--data",
            path(&test),
            "--data",
            path(&val),
            "--mode",
            "gallery-only",
            "--out",
            path(&eval_out),
        ]),
        0
    );
    let heatmap = fs::read_to_string(eval_out.join("results/relevance_heatmap.csv")).unwrap();
    assert_eq!(heatmap.lines().next(), Some("target,domain1,domain2,domain3"));
    assert_eq!(heatmap.lines().count(), 3);
}

#[test]
fn same_seed_runs_write_identical_logs_and_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY.replace("\n[train]", "\n[output]\nablation_model = false\n\n[train]")).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train_run(&a, &config);
    train_run(&b, &config);
    for rel in ["logs/trainlog.jsonl", "checkpoints/final.ckpt", "data/sources.txt"] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel} differs");
    }
    assert!(!a.join("checkpoints/no_decor.ckpt").exists());

    let c = tmp.path().join("c");
    assert_eq!(ramoe(&["train", "--config", path(&config), "--seed", "12", "--out", path(&c)]), 0);
    assert_ne!(fs::read(a.join("logs/trainlog.jsonl")).unwrap(), fs::read(c.join("logs/trainlog.jsonl")).unwrap());
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path());
    assert_eq!(ramoe(&["no-such-command"]), 1);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[train]\nnot_a_key = 1\n").unwrap();
    assert_eq!(ramoe(&["generate", "--config", path(&bad), "--out", out]), 1);
    let missing = tmp.path().join("missing.ckpt");
    assert_eq!(ramoe(&["eval", "--checkpoint", path(&missing), "--data", path(&missing), "--out", out]), 2);
    let garbage = tmp.path().join("garbage.txt");
    fs::write(&garbage, "not a dataset\n").unwrap();
    assert_eq!(
        ramoe(&["relevance", "--checkpoint", path(&missing), "--data", path(&garbage), "--out", out]),
        2
    );
}

#[test]
fn gradcheck_command_passes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ramoe(&["gradcheck", "--out", path(tmp.path())]), 0);
    let csv = fs::read_to_string(tmp.path().join("results/gradcheck.csv")).unwrap();
    assert!(csv.lines().count() >= 9);
}
