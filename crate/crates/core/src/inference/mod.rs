//! Test-time relevance, aggregated features and retrieval metrics.
//!
//! At test time the voting network scores every target sample against each
//! source domain's prototypes. The dataset-level mean score of a domain sets
//! one weight per expert, shared by all samples, and each sample's feature is
//! the weighted combination of all expert embeddings, L2-normalized.

mod eval;
mod report;

pub use eval::{evaluate, RetrievalResult, CMC_RANKS};
pub use report::{heatmap_csv, write_table_csv, AblationRow, AblationTable};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tensor};
use crate::losses::{combine, relevance_matrix, weights, LossError};
use crate::model::{IntegrateFn, Mode, ModelError, ModelParams, SigmaFn};
use crate::synthdata::TargetSet;

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("target set is empty")]
    EmptyTarget,
    #[error("relevance report was computed for a different model (prototype checksum {report:x} vs {model:x})")]
    ChecksumMismatch { report: u64, model: u64 },
    #[error("query {query} (identity {label}) has no positive in the gallery")]
    NoPositive { query: usize, label: usize },
    #[error("{0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    AllSamples,
    GalleryOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub mode: RelevanceMode,
    pub sigma_fn: SigmaFn,
    /// Source domain ids, the column order of every per-domain field.
    pub domain_ids: Vec<usize>,
    /// `N x K` scores of the rows the report was computed from.
    pub per_sample: Vec<Vec<f64>>,
    /// Column means of `per_sample`.
    pub per_domain: Vec<f64>,
    /// Aggregation weights derived from `per_domain`.
    pub weights: Vec<f64>,
    pub prototype_checksum: u64,
}

impl RelevanceReport {
    pub fn argmax_domain(&self) -> usize {
        let best = (0..self.per_domain.len())
            .max_by(|&a, &b| self.per_domain[a].total_cmp(&self.per_domain[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        self.domain_ids[best]
    }
}

/// Per-domain weights from per-domain scores.
pub fn domain_weights(per_domain: &[f64], sigma: SigmaFn) -> Result<Vec<f64>> {
    let s = Tensor::vector(per_domain.to_vec())?;
    Ok(weights(&s, sigma)?.to_vec())
}

/// `[n, K]` relevance of each row to each source domain, in eval mode.
pub fn relevance_per_sample(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let params = params.detached();
    let f = params.backbone_forward(x)?;
    let (q, _) = params.voting_forward(&f, Mode::Eval)?;
    let protos: Vec<&Tensor> = params.prototypes.iter().collect();
    Ok(relevance_matrix(&q, &protos)?)
}

/// Relevance report over the rows of `x`.
pub fn relevance_of_rows(params: &ModelParams, x: &Tensor, sigma: SigmaFn, mode: RelevanceMode) -> Result<RelevanceReport> {
    let s = relevance_per_sample(params, x)?;
    let k = s.cols();
    let n = s.rows();
    let per_sample: Vec<Vec<f64>> = (0..n).map(|r| s.row(r).to_vec()).collect();
    let per_domain: Vec<f64> = (0..k).map(|j| per_sample.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    Ok(RelevanceReport {
        mode,
        sigma_fn: sigma,
        domain_ids: params.experts.iter().map(|e| e.domain_id).collect(),
        weights: domain_weights(&per_domain, sigma)?,
        per_domain,
        per_sample,
        prototype_checksum: params.prototype_checksum(),
    })
}

/// Rows of the target set that the given mode averages over.
pub fn mode_rows(target: &TargetSet, mode: RelevanceMode) -> Vec<usize> {
    match mode {
        RelevanceMode::AllSamples => (0..target.domain.len()).collect(),
        RelevanceMode::GalleryOnly => target.gallery.clone(),
    }
}

pub fn compute_relevance(params: &ModelParams, target: &TargetSet, mode: RelevanceMode, sigma: SigmaFn) -> Result<RelevanceReport> {
    let rows = mode_rows(target, mode);
    if rows.is_empty() {
        return Err(InferenceError::EmptyTarget);
    }
    relevance_of_rows(params, &target.domain.rows_tensor(&rows), sigma, mode)
}

/// Combines every expert's eval-mode embedding with fixed per-domain
/// weights, then L2-normalizes each row.
pub fn aggregate_with_weights(params: &ModelParams, x: &Tensor, domain_weights: &[f64], integrate: IntegrateFn) -> Result<Tensor> {
    let k = params.num_experts();
    if domain_weights.len() != k {
        return Err(InferenceError::Shape(format!("{} weights for {k} experts", domain_weights.len())));
    }
    let params = params.detached();
    let f = params.backbone_forward(x)?;
    let feats = params.expert_embeddings(&f)?;
    let n = x.rows();
    let w = Tensor::matrix(n, k, (0..n).flat_map(|_| domain_weights.iter().copied()).collect())?;
    Ok(combine(&feats, &w, integrate)?.l2_normalize()?)
}

pub fn extract_aggregated(params: &ModelParams, x: &Tensor, report: &RelevanceReport, integrate: IntegrateFn) -> Result<Tensor> {
    let model = params.prototype_checksum();
    if report.prototype_checksum != model || report.weights.len() != params.num_experts() {
        return Err(InferenceError::ChecksumMismatch {
            report: report.prototype_checksum,
            model,
        });
    }
    aggregate_with_weights(params, x, &report.weights, integrate)
}

/// L2-normalized embedding of a single expert.
pub fn expert_features(params: &ModelParams, k: usize, x: &Tensor) -> Result<Tensor> {
    let params = params.detached();
    let f = params.backbone_forward(x)?;
    Ok(params.expert_forward(k, &f, Mode::Eval)?.m.l2_normalize()?)
}

fn evaluate_features(target: &TargetSet, features: impl Fn(&Tensor) -> Result<Tensor>) -> Result<RetrievalResult> {
    let qf = features(&target.domain.rows_tensor(&target.query))?;
    let gf = features(&target.domain.rows_tensor(&target.gallery))?;
    evaluate(&qf, &gf, &target.query_labels(), &target.gallery_labels())
}

/// Full pipeline on a target: relevance in the given mode, aggregated
/// features, retrieval metrics.
pub fn evaluate_target(
    params: &ModelParams,
    target: &TargetSet,
    sigma: SigmaFn,
    integrate: IntegrateFn,
    mode: RelevanceMode,
) -> Result<RetrievalResult> {
    let report = compute_relevance(params, target, mode, sigma)?;
    evaluate_features(target, |x| extract_aggregated(params, x, &report, integrate))
}

pub fn evaluate_expert(params: &ModelParams, k: usize, target: &TargetSet) -> Result<RetrievalResult> {
    evaluate_features(target, |x| expert_features(params, k, x))
}

/// Uniform weights, concatenated.
pub fn evaluate_ensemble(params: &ModelParams, target: &TargetSet) -> Result<RetrievalResult> {
    let k = params.num_experts();
    let w = vec![1.0 / k as f64; k];
    evaluate_features(target, |x| aggregate_with_weights(params, x, &w, IntegrateFn::Concat))
}

/// Single experts, the uniform ensemble, the model trained without
/// decorrelation, and the full model.
pub fn ablation_suite(
    full: &ModelParams,
    no_decor: Option<&ModelParams>,
    target: &TargetSet,
    sigma: SigmaFn,
    integrate: IntegrateFn,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for k in 0..full.num_experts() {
        rows.push(AblationRow::new(&format!("expert{}", full.experts[k].domain_id), evaluate_expert(full, k, target)?));
    }
    rows.push(AblationRow::new("experts-ensemble", evaluate_ensemble(full, target)?));
    if let Some(nd) = no_decor {
        rows.push(AblationRow::new(
            "w/o-decorrelation",
            evaluate_target(nd, target, sigma, integrate, RelevanceMode::AllSamples)?,
        ));
    }
    rows.push(AblationRow::new(
        "ramoe",
        evaluate_target(full, target, sigma, integrate, RelevanceMode::AllSamples)?,
    ));
    Ok(AblationTable { rows })
}

/// Every combination of weighting and integration function.
pub fn integration_study(params: &ModelParams, target: &TargetSet) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for sigma in [SigmaFn::Softmax, SigmaFn::Sigmoid] {
        for integrate in [IntegrateFn::Concat, IntegrateFn::Sum] {
            let name = format!("{}+{}", format!("{sigma:?}").to_lowercase(), format!("{integrate:?}").to_lowercase());
            rows.push(AblationRow::new(
                &name,
                evaluate_target(params, target, sigma, integrate, RelevanceMode::AllSamples)?,
            ));
        }
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests;
