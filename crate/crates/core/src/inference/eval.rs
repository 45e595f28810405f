use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{InferenceError, Result};
use crate::autodiff::Tensor;

/// Ranks reported in [`RetrievalResult::cmc`].
pub const CMC_RANKS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub map: f64,
    /// Rank-1/5/10 matching rates.
    pub cmc: Vec<f64>,
    pub per_query_ap: Vec<f64>,
    /// 1-based rank of each query's first positive.
    pub first_match: Vec<usize>,
}

impl RetrievalResult {
    /// Fraction of queries whose first positive is within the top `k`.
    pub fn cmc_at(&self, k: usize) -> f64 {
        let hits = self.first_match.iter().filter(|&&r| r <= k).count();
        hits as f64 / self.first_match.len() as f64
    }
}

/// Gallery ordering for one query: descending inner product, ties by index.
pub(crate) fn ranking(query: &[f64], gallery: &Tensor) -> Vec<usize> {
    let sims: Vec<f64> = (0..gallery.rows())
        .map(|j| query.iter().zip(gallery.row(j)).map(|(a, b)| a * b).sum())
        .collect();
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// mAP (mean over queries of the mean precision at each positive's rank)
/// and CMC for inner-product retrieval.
pub fn evaluate(query: &Tensor, gallery: &Tensor, query_labels: &[usize], gallery_labels: &[usize]) -> Result<RetrievalResult> {
    if query.cols() != gallery.cols() || query.rows() != query_labels.len() || gallery.rows() != gallery_labels.len() {
        return Err(InferenceError::Shape(format!(
            "query {:?} ({} labels) vs gallery {:?} ({} labels)",
            query.shape(),
            query_labels.len(),
            gallery.shape(),
            gallery_labels.len()
        )));
    }
    if query_labels.is_empty() {
        return Err(InferenceError::EmptyTarget);
    }
    let mut per_query_ap = Vec::with_capacity(query_labels.len());
    let mut first_match = Vec::with_capacity(query_labels.len());
    for (qi, &label) in query_labels.iter().enumerate() {
        let order = ranking(query.row(qi), gallery);
        let mut found = 0usize;
        let mut precision_sum = 0.0;
        let mut first = None;
        for (rank, &g) in order.iter().enumerate() {
            if gallery_labels[g] == label {
                found += 1;
                precision_sum += found as f64 / (rank + 1) as f64;
                first.get_or_insert(rank + 1);
            }
        }
        let first = first.ok_or(InferenceError::NoPositive { query: qi, label })?;
        per_query_ap.push(precision_sum / found as f64);
        first_match.push(first);
    }
    let mut result = RetrievalResult {
        map: per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64,
        cmc: Vec::new(),
        per_query_ap,
        first_match,
    };
    result.cmc = CMC_RANKS.iter().map(|&k| result.cmc_at(k)).collect();
    Ok(result)
}
