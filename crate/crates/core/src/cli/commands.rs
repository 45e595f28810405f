use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{run_self_checks, CliError, Result, RunConfig};
use crate::inference::{
    ablation_suite, compute_relevance, evaluate_target, heatmap_csv, integration_study, write_table_csv, RelevanceMode,
    RelevanceReport, RetrievalResult,
};
use crate::meta::{train_with, TrainConfig, TrainOptions};
use crate::model::ModelParams;
use crate::synthdata::{load_dataset, save_dataset, Domain, MultiDomainDataset, SynthBundle, TargetSet};

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn sources(&self) -> PathBuf {
        self.data().join("sources.txt")
    }

    pub fn target(&self, name: &str) -> PathBuf {
        self.data().join(format!("{name}.txt"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }

    pub fn no_decor_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("no_decor.ckpt")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    written.push(path.to_path_buf());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, written: &mut Vec<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
    write_file(path, &(text + "\n"), written)
}

fn single_domain(d_in: usize, domain: Domain) -> MultiDomainDataset {
    MultiDomainDataset {
        d_in,
        domains: vec![domain],
    }
}

fn build(cfg: &RunConfig) -> Result<SynthBundle> {
    let mut bundle = cfg.data.build()?;
    for t in &mut bundle.targets {
        *t = TargetSet::split_with(t.domain.clone(), cfg.eval.query_fraction)?;
    }
    Ok(bundle)
}

fn load_params(path: &Path) -> Result<ModelParams> {
    ModelParams::load(path).map_err(|e| CliError::from(e).prefixed(path))
}

fn load_targets(path: &Path, query_fraction: f64) -> Result<Vec<TargetSet>> {
    let data = load_dataset(path).map_err(|e| CliError::from(e).prefixed(path))?;
    data.domains
        .into_iter()
        .map(|d| TargetSet::split_with(d, query_fraction).map_err(|e| CliError::from(e).prefixed(path)))
        .collect()
}

impl CliError {
    fn prefixed(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn write_snapshot(cfg: &RunConfig, layout: &RunLayout, written: &mut Vec<PathBuf>) -> Result<()> {
    write_file(&layout.snapshot(), &cfg.to_toml(), written)
}

/// Writes the source domains and every target as dataset files.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let layout = RunLayout::new(out);
    let mut written = Vec::new();
    write_snapshot(cfg, &layout, &mut written)?;
    let bundle = build(cfg)?;
    write_datasets(cfg, &bundle, &layout, &mut written)?;
    Ok(written)
}

fn write_datasets(cfg: &RunConfig, bundle: &SynthBundle, layout: &RunLayout, written: &mut Vec<PathBuf>) -> Result<()> {
    create_dir(&layout.data())?;
    save_dataset(&bundle.sources, &layout.sources())?;
    written.push(layout.sources());
    for (tc, t) in cfg.data.targets.iter().zip(&bundle.targets) {
        let path = layout.target(&tc.name);
        save_dataset(&single_domain(bundle.sources.d_in, t.domain.clone()), &path)?;
        written.push(path);
    }
    Ok(())
}

/// Generates the data, trains the full model (and the no-decorrelation
/// variant when enabled), and writes checkpoints, logs and the validation
/// curve.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let layout = RunLayout::new(out);
    let mut written = Vec::new();
    write_snapshot(cfg, &layout, &mut written)?;
    let bundle = build(cfg)?;
    write_datasets(cfg, &bundle, &layout, &mut written)?;
    let validation = (!cfg.eval.validation.is_empty())
        .then(|| bundle.target(&cfg.data, &cfg.eval.validation))
        .flatten();

    log::info!("training full model into {}", layout.root.display());
    let opts = TrainOptions {
        validation,
        checkpoint_dir: Some(layout.checkpoints()),
        skip_epoch_checkpoints: !cfg.output.epoch_checkpoints,
    };
    let outcome = train_with(&cfg.train, &bundle.sources, &opts)?;
    written.push(layout.final_checkpoint());
    write_log(&outcome.log, &layout.logs().join("trainlog.jsonl"), &mut written)?;

    let mut curve = String::from("epoch,map,rank1\n");
    for e in &outcome.log.epochs {
        if let (Some(m), Some(r1)) = (e.val_map, e.val_rank1) {
            writeln!(curve, "{},{:.6},{:.6}", e.epoch, m, r1).ok();
        }
    }
    write_file(&layout.results().join("validation.csv"), &curve, &mut written)?;

    if cfg.output.ablation_model {
        log::info!("training no-decorrelation variant");
        let nd_cfg = TrainConfig {
            decorrelation: false,
            ..cfg.train.clone()
        };
        let nd = train_with(&nd_cfg, &bundle.sources, &TrainOptions::default())?;
        nd.params.save(&layout.no_decor_checkpoint())?;
        written.push(layout.no_decor_checkpoint());
        write_log(&nd.log, &layout.logs().join("trainlog_no_decor.jsonl"), &mut written)?;
    }
    Ok(written)
}

fn write_log(log: &crate::meta::TrainLog, path: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut buf = Vec::new();
    log.write_jsonl(&mut buf)?;
    write_file(path, &String::from_utf8(buf).expect("json is utf-8"), written)
}

fn metrics_csv(result: &RetrievalResult, ranks: &[usize]) -> String {
    let mut out = String::from("metric,value\n");
    writeln!(out, "map,{:.6}", result.map).ok();
    for &k in ranks {
        writeln!(out, "rank{k},{:.6}", result.cmc_at(k)).ok();
    }
    out
}

fn pick_target(targets: Vec<TargetSet>, domain: Option<usize>, path: &Path) -> Result<TargetSet> {
    match domain {
        Some(id) => targets
            .into_iter()
            .find(|t| t.domain.domain_id == id)
            .ok_or_else(|| CliError::data(format!("{}: no domain {id}", path.display()))),
        None if targets.len() == 1 => Ok(targets.into_iter().next().expect("one target")),
        None => Err(CliError::usage(format!(
            "{} holds {} domains; pass --domain",
            path.display(),
            targets.len()
        ))),
    }
}

/// Scores a checkpoint on one domain of a dataset file.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, domain: Option<usize>, out: &Path) -> Result<Vec<PathBuf>> {
    let params = load_params(checkpoint)?;
    let target = pick_target(load_targets(data, cfg.eval.query_fraction)?, domain, data)?;
    let hp = &cfg.train.hp;
    let result = evaluate_target(&params, &target, hp.sigma_fn, hp.integrate_fn, cfg.eval.relevance_mode)?;
    let layout = RunLayout::new(out);
    let mut written = Vec::new();
    write_json(&layout.results().join("retrieval.json"), &result, &mut written)?;
    write_file(
        &layout.results().join("retrieval.csv"),
        &metrics_csv(&result, &cfg.eval.ranks),
        &mut written,
    )?;
    Ok(written)
}

/// Ablation table, integration study and the gallery-only comparison for
/// the run in `run_dir`, written to `out`.
pub fn cmd_ablate(cfg: &RunConfig, run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let run = RunLayout::new(run_dir);
    let full = load_params(&run.final_checkpoint())?;
    let nd_path = run.no_decor_checkpoint();
    let no_decor = if nd_path.exists() { Some(load_params(&nd_path)?) } else { None };
    let target_path = run.target(&cfg.eval.target);
    let target = pick_target(load_targets(&target_path, cfg.eval.query_fraction)?, None, &target_path)?;
    let hp = &cfg.train.hp;
    let ranks = &cfg.eval.ranks;

    let layout = RunLayout::new(out);
    let mut written = Vec::new();
    let table = ablation_suite(&full, no_decor.as_ref(), &target, hp.sigma_fn, hp.integrate_fn)?;
    write_file(&layout.results().join("ablation.csv"), &write_table_csv(&table, ranks), &mut written)?;
    let study = integration_study(&full, &target)?;
    write_file(&layout.results().join("integration.csv"), &write_table_csv(&study, ranks), &mut written)?;

    let mut online = String::from("mode");
    for e in &full.experts {
        write!(online, ",weight{}", e.domain_id).ok();
    }
    online.push_str(",map");
    for k in ranks {
        write!(online, ",rank{k}").ok();
    }
    online.push('\n');
    for mode in [RelevanceMode::AllSamples, RelevanceMode::GalleryOnly] {
        let report = compute_relevance(&full, &target, mode, hp.sigma_fn)?;
        let r = evaluate_target(&full, &target, hp.sigma_fn, hp.integrate_fn, mode)?;
        online.push_str(mode_name(mode));
        for w in &report.weights {
            write!(online, ",{w:.6}").ok();
        }
        write!(online, ",{:.4}", 100.0 * r.map).ok();
        for &k in ranks {
            write!(online, ",{:.4}", 100.0 * r.cmc_at(k)).ok();
        }
        online.push('\n');
    }
    write_file(&layout.results().join("gallery_only.csv"), &online, &mut written)?;
    Ok(written)
}

fn mode_name(mode: RelevanceMode) -> &'static str {
    match mode {
        RelevanceMode::AllSamples => "all_samples",
        RelevanceMode::GalleryOnly => "gallery_only",
    }
}

/// Relevance reports for every domain of every file, plus the
/// targets-by-sources heatmap of mean scores.
pub fn cmd_relevance(cfg: &RunConfig, checkpoint: &Path, data: &[PathBuf], mode: RelevanceMode, out: &Path) -> Result<Vec<PathBuf>> {
    let params = load_params(checkpoint)?;
    let mut reports: BTreeMap<String, RelevanceReport> = BTreeMap::new();
    let mut names = Vec::new();
    let mut matrix = Vec::new();
    for path in data {
        let stem = path.file_stem().map_or_else(|| "target".to_string(), |s| s.to_string_lossy().into_owned());
        let targets = load_targets(path, cfg.eval.query_fraction)?;
        let several = targets.len() > 1;
        for t in targets {
            let name = if several {
                format!("{stem}_domain{}", t.domain.domain_id)
            } else {
                stem.clone()
            };
            if reports.contains_key(&name) {
                return Err(CliError::usage(format!("duplicate target name '{name}'")));
            }
            let report = compute_relevance(&params, &t, mode, cfg.train.hp.sigma_fn)?;
            names.push(name.clone());
            matrix.push(report.per_domain.clone());
            reports.insert(name, report);
        }
    }
    let domain_ids: Vec<usize> = params.experts.iter().map(|e| e.domain_id).collect();
    let layout = RunLayout::new(out);
    let mut written = Vec::new();
    write_json(&layout.results().join("relevance.json"), &reports, &mut written)?;
    write_file(
        &layout.results().join("relevance_heatmap.csv"),
        &heatmap_csv(&names, &domain_ids, &matrix),
        &mut written,
    )?;
    Ok(written)
}

/// Runs the finite-difference self checks; fails with a numerical error if
/// any row exceeds its tolerance.
pub fn cmd_gradcheck(seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let rows = run_self_checks(seed)?;
    let mut csv = String::from("check,instances,max_error,tolerance,passed\n");
    for r in &rows {
        writeln!(csv, "{},{},{:e},{:e},{}", r.name, r.instances, r.max_error, r.tolerance, r.passed()).ok();
        println!(
            "{:<28} instances={:<3} max_error={:.3e} tolerance={:.0e} {}",
            r.name,
            r.instances,
            r.max_error,
            r.tolerance,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    let mut written = Vec::new();
    write_file(&RunLayout::new(out).results().join("gradcheck.csv"), &csv, &mut written)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::numerical(format!("gradient checks failed: {}", failed.join(", "))));
    }
    Ok(written)
}
