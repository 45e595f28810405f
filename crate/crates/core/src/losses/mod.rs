//! Training objectives.
//!
//! Every function takes tensors that may live on a tape and returns a tensor
//! recorded on the same tape, so gradients flow to whichever inputs are
//! tracked. Hard-example selection (triplet and relation) is done on plain
//! values and enters the graph only through row indexing.

mod gradcheck;

pub use gradcheck::{gradient_suite, GradCheckRow, GRADCHECK_STEP, GRADCHECK_TOL, SUITE_LOSSES};

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tensor};
use crate::model::{IntegrateFn, SigmaFn};

/// Lower clamp of both arguments of the relation alignment loss.
pub const BCE_CLAMP: f64 = 1e-7;
/// Pre-normalization norm below which decorrelation inputs are flagged.
pub const ZERO_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
    #[error("anchor {anchor} has no {missing} in the batch")]
    BatchStructure { anchor: usize, missing: &'static str },
    #[error("decorrelation needs at least one other expert")]
    NoPeers,
    #[error("{features} feature sets but {scores} score columns")]
    FeatureMismatch { features: usize, scores: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(LossError::LabelCount(labels.len(), rows));
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(LossError::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Mean negative log-softmax at the true class.
pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, c) = (logits.rows(), logits.cols());
    check_labels(labels, n, c)?;
    let mut onehot = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    let picked = logits.log_softmax()?.mul(&Tensor::matrix(n, c, onehot)?)?;
    Ok(picked.sum_all()?.scale(-1.0 / n as f64)?)
}

/// Index of the farthest same-label row (self excluded) and of the nearest
/// other-label row for every anchor. Ties go to the lowest index.
pub fn hardest_pairs(x: &Tensor, labels: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = x.rows();
    if labels.len() != n {
        return Err(LossError::LabelCount(labels.len(), n));
    }
    let sq = |i: usize, j: usize| -> f64 { x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut pos = Vec::with_capacity(n);
    let mut neg = Vec::with_capacity(n);
    for i in 0..n {
        let mut best_pos: Option<(usize, f64)> = None;
        let mut best_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = sq(i, j);
            if labels[j] == labels[i] {
                if best_pos.is_none_or(|(_, b)| d > b) {
                    best_pos = Some((j, d));
                }
            } else if best_neg.is_none_or(|(_, b)| d < b) {
                best_neg = Some((j, d));
            }
        }
        pos.push(best_pos.ok_or(LossError::BatchStructure { anchor: i, missing: "positive" })?.0);
        neg.push(best_neg.ok_or(LossError::BatchStructure { anchor: i, missing: "negative" })?.0);
    }
    Ok((pos, neg))
}

/// Euclidean distances to the hardest positive and hardest negative.
fn hard_distances(x: &Tensor, labels: &[usize]) -> Result<(Tensor, Tensor)> {
    let (pos, neg) = hardest_pairs(x, labels)?;
    let d_pos = x.row_distance(&x.index_rows(&pos)?)?;
    let d_neg = x.row_distance(&x.index_rows(&neg)?)?;
    Ok((d_pos, d_neg))
}

/// Batch-hard triplet loss: mean of `max(0, margin + d+ - d-)`.
pub fn triplet_batch_hard(embeddings: &Tensor, labels: &[usize], margin: f64) -> Result<Tensor> {
    let (d_pos, d_neg) = hard_distances(embeddings, labels)?;
    Ok(d_pos.sub(&d_neg)?.add_scalar(margin)?.relu()?.mean_all()?)
}

/// Half the mean squared distance between each embedding and its class
/// prototype.
pub fn center_loss(embeddings: &Tensor, labels: &[usize], prototypes: &Tensor) -> Result<Tensor> {
    check_labels(labels, embeddings.rows(), prototypes.rows())?;
    if prototypes.cols() != embeddings.cols() {
        return Err(LossError::Shape(format!(
            "embeddings {:?} vs prototypes {:?}",
            embeddings.shape(),
            prototypes.shape()
        )));
    }
    let diff = embeddings.sub(&prototypes.index_rows(labels)?)?;
    Ok(diff.mul(&diff)?.sum_all()?.scale(0.5 / embeddings.rows() as f64)?)
}

/// Mean over rows of `1/(K-1) * sum_j ||m_k (.) m_j||` on L2-normalized rows.
pub fn decorrelation_loss(m_k: &Tensor, others: &[Tensor]) -> Result<Tensor> {
    if others.is_empty() {
        return Err(LossError::NoPeers);
    }
    for (j, t) in std::iter::once(m_k).chain(others).enumerate() {
        if t.shape() != m_k.shape() {
            return Err(LossError::Shape(format!("expert {j} embedding {:?} vs {:?}", t.shape(), m_k.shape())));
        }
        if (0..t.rows()).any(|r| t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt() < ZERO_NORM) {
            log::warn!("decorrelation input {j} has a near-zero row");
        }
    }
    let base = m_k.l2_normalize()?;
    let mut total: Option<Tensor> = None;
    for m_j in others {
        let term = base.mul(&m_j.l2_normalize()?)?.l2_norm_last_exact()?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term)?,
        });
    }
    let per_row = total.expect("others is non-empty").scale(1.0 / others.len() as f64)?;
    Ok(per_row.mean_all()?)
}

/// `s_n = mean_l <q_n, c_l>` on L2-normalized queries and prototypes.
pub fn relevance_scores(q: &Tensor, prototypes: &Tensor) -> Result<Tensor> {
    if q.cols() != prototypes.cols() || prototypes.ndim() != 2 {
        return Err(LossError::Shape(format!("queries {:?} vs prototypes {:?}", q.shape(), prototypes.shape())));
    }
    let sims = q.l2_normalize()?.matmul(&prototypes.l2_normalize()?.transpose()?)?;
    Ok(sims.sum_last()?.scale(1.0 / prototypes.rows() as f64)?)
}

/// Relevance of every row of `q` to each prototype set, as `[n, J]`.
pub fn relevance_matrix(q: &Tensor, prototypes: &[&Tensor]) -> Result<Tensor> {
    let cols = prototypes
        .iter()
        .map(|c| relevance_scores(q, c)?.reshape(&[q.rows(), 1]).map_err(LossError::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat_cols(&cols)?)
}

/// Turns `[n, J]` scores into weights.
pub fn weights(scores: &Tensor, sigma: SigmaFn) -> Result<Tensor> {
    Ok(match sigma {
        SigmaFn::Softmax => scores.softmax()?,
        SigmaFn::Sigmoid => scores.sigmoid()?,
    })
}

/// Weighted combination of `J` feature sets by `[n, J]` weights.
pub fn combine(features: &[Tensor], weights: &Tensor, integrate: IntegrateFn) -> Result<Tensor> {
    if features.is_empty() || weights.cols() != features.len() || weights.ndim() != 2 {
        return Err(LossError::FeatureMismatch {
            features: features.len(),
            scores: weights.cols(),
        });
    }
    let scaled = features
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let w = weights.slice_cols(j, 1)?.reshape(&[weights.rows()])?;
            m.scale_rows(&w)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(match integrate {
        IntegrateFn::Concat => Tensor::concat_cols(&scaled)?,
        IntegrateFn::Sum => {
            let mut acc = scaled[0].clone();
            for t in &scaled[1..] {
                acc = acc.add(t)?;
            }
            acc
        }
    })
}

/// Scores to weights to a combined feature.
pub fn aggregate(features: &[Tensor], scores: &Tensor, sigma: SigmaFn, integrate: IntegrateFn) -> Result<Tensor> {
    if scores.ndim() != 2 || scores.cols() != features.len() {
        return Err(LossError::FeatureMismatch {
            features: features.len(),
            scores: scores.cols(),
        });
    }
    combine(features, &weights(scores, sigma)?, integrate)
}

/// `R = exp(d+) / (exp(d+) + exp(d-))` per anchor, computed as the
/// numerically stable `sigmoid(d+ - d-)`.
pub fn softmax_triplet_relation(v: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (d_pos, d_neg) = hard_distances(v, labels)?;
    relation_of_distances(&d_pos, &d_neg)
}

/// `exp(a) / (exp(a) + exp(b))` elementwise.
pub fn relation_of_distances(d_pos: &Tensor, d_neg: &Tensor) -> Result<Tensor> {
    Ok(d_pos.sub(d_neg)?.sigmoid()?)
}

/// Binary cross-entropy of the prediction `r_v` against the detached target
/// `r_m`, both clamped to `[1e-7, 1 - 1e-7]`.
pub fn relation_alignment_loss(r_v: &Tensor, r_m: &Tensor) -> Result<Tensor> {
    if r_v.shape() != r_m.shape() {
        return Err(LossError::Shape(format!("{:?} vs {:?}", r_v.shape(), r_m.shape())));
    }
    let (lo, hi) = (BCE_CLAMP, 1.0 - BCE_CLAMP);
    if r_v.values().iter().chain(r_m.values()).any(|&v| v < lo || v > hi) {
        log::debug!("relation alignment clamp active");
    }
    let p = r_v.clamp(lo, hi)?;
    let target = r_m.detach().clamp(lo, hi)?;
    let one_minus_t = target.scale(-1.0)?.add_scalar(1.0)?;
    let pos = target.mul(&p.ln()?)?;
    let neg = one_minus_t.mul(&p.scale(-1.0)?.add_scalar(1.0)?.ln()?)?;
    Ok(pos.add(&neg)?.mean_all()?.scale(-1.0)?)
}

/// Scalar values of every loss term for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub cls: f64,
    pub tri: f64,
    pub cent: f64,
    pub metric: f64,
    pub decor: f64,
    pub domain: f64,
    pub relation: f64,
}

impl LossBundle {
    pub fn new(cls: f64, tri: f64, cent: f64, decor: f64, relation: f64, lambda: f64) -> Self {
        let metric = cls + tri + lambda * cent;
        Self {
            cls,
            tri,
            cent,
            metric,
            decor,
            domain: metric + decor,
            relation,
        }
    }

    /// Whether the metric and domain sums hold exactly.
    pub fn identities_hold(&self, lambda: f64) -> bool {
        self.metric == self.cls + self.tri + lambda * self.cent && self.domain == self.metric + self.decor
    }

    pub fn is_finite(&self) -> bool {
        [self.cls, self.tri, self.cent, self.metric, self.decor, self.domain, self.relation]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Term-wise sum; the identities are recomputed from the summed terms.
    pub fn accumulate(&self, other: &LossBundle, lambda: f64) -> LossBundle {
        LossBundle::new(
            self.cls + other.cls,
            self.tri + other.tri,
            self.cent + other.cent,
            self.decor + other.decor,
            self.relation + other.relation,
            lambda,
        )
    }
}

/// Tensor-valued terms of the domain loss of one batch.
#[derive(Debug, Clone)]
pub struct DomainTerms {
    pub cls: Tensor,
    pub tri: Tensor,
    pub cent: Tensor,
    /// `None` when decorrelation is disabled.
    pub decor: Option<Tensor>,
}

impl DomainTerms {
    /// `cls + tri + lambda * cent (+ decor)`, summed in the same order as
    /// [`LossBundle::new`].
    pub fn total(&self, lambda: f64) -> Result<Tensor> {
        let metric = self.cls.add(&self.tri)?.add(&self.cent.scale(lambda)?)?;
        Ok(match &self.decor {
            Some(d) => metric.add(d)?,
            None => metric,
        })
    }

    pub fn bundle(&self, lambda: f64, relation: f64) -> LossBundle {
        let decor = self.decor.as_ref().map_or(0.0, Tensor::item);
        LossBundle::new(self.cls.item(), self.tri.item(), self.cent.item(), decor, relation, lambda)
    }
}
