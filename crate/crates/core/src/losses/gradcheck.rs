use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    center_loss, classification_loss, decorrelation_loss, relation_alignment_loss, softmax_triplet_relation, triplet_batch_hard,
    Result,
};
use crate::autodiff::{finite_difference_check, AutodiffError, Tensor};

/// Largest accepted relative error between analytic and central-difference
/// gradients.
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Worst relative error of one loss over its random instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
    pub worst_instance: usize,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

pub const SUITE_LOSSES: [&str; 6] = [
    "classification",
    "triplet_batch_hard",
    "center",
    "decorrelation",
    "softmax_triplet_relation",
    "relation_alignment",
];

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).expect("positive shape")
}

/// `p` identities with `q` consecutive rows each.
fn pk_labels(p: usize, q: usize) -> Vec<usize> {
    (0..p * q).map(|i| i / q).collect()
}

/// Checks one loss on a freshly drawn instance; multi-input losses take
/// their inputs stacked by rows so a single point covers all of them.
fn check_instance(name: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    let p = rng.random_range(2..=4);
    let q = rng.random_range(2..=3);
    let d = rng.random_range(3..=6);
    let n = p * q;
    let r = match name {
        "classification" => {
            let classes = rng.random_range(2..=7);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let x = uniform(rng, n, classes, -2.0, 2.0);
            finite_difference_check(|t| Ok(classification_loss(t, &labels).map_err(as_autodiff)?), &x, GRADCHECK_STEP)?
        }
        "triplet_batch_hard" => {
            let labels = pk_labels(p, q);
            let x = uniform(rng, n, d, -1.0, 1.0);
            finite_difference_check(|t| Ok(triplet_batch_hard(t, &labels, 0.3).map_err(as_autodiff)?), &x, GRADCHECK_STEP)?
        }
        "center" => {
            let classes = rng.random_range(2..=5);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let x = uniform(rng, n + classes, d, -1.0, 1.0);
            let emb: Vec<usize> = (0..n).collect();
            let protos: Vec<usize> = (n..n + classes).collect();
            finite_difference_check(
                |t| Ok(center_loss(&t.index_rows(&emb)?, &labels, &t.index_rows(&protos)?).map_err(as_autodiff)?),
                &x,
                GRADCHECK_STEP,
            )?
        }
        "decorrelation" => {
            let k = rng.random_range(2..=4);
            let x = uniform(rng, n * k, d, -1.0, 1.0);
            let block = |j: usize| -> Vec<usize> { (j * n..(j + 1) * n).collect() };
            finite_difference_check(
                |t| {
                    let others = (1..k).map(|j| t.index_rows(&block(j))).collect::<std::result::Result<Vec<_>, _>>()?;
                    Ok(decorrelation_loss(&t.index_rows(&block(0))?, &others).map_err(as_autodiff)?)
                },
                &x,
                GRADCHECK_STEP,
            )?
        }
        "softmax_triplet_relation" => {
            let labels = pk_labels(p, q);
            let x = uniform(rng, n, d, -1.0, 1.0);
            finite_difference_check(
                |t| Ok(softmax_triplet_relation(t, &labels).map_err(as_autodiff)?.mean_all()?),
                &x,
                GRADCHECK_STEP,
            )?
        }
        "relation_alignment" => {
            let r_v = uniform(rng, n, 1, 0.05, 0.95).reshape(&[n])?;
            let r_m = uniform(rng, n, 1, 0.05, 0.95).reshape(&[n])?;
            finite_difference_check(|t| Ok(relation_alignment_loss(t, &r_m).map_err(as_autodiff)?), &r_v, GRADCHECK_STEP)?
        }
        other => unreachable!("unknown suite loss {other}"),
    };
    Ok(r.max_rel_error)
}

fn as_autodiff(e: super::LossError) -> AutodiffError {
    match e {
        super::LossError::Autodiff(a) => a,
        _ => AutodiffError::InvalidShape {
            op: "gradient suite",
            shape: Vec::new(),
            reason: "loss rejected the generated instance",
        },
    }
}

/// Central-difference check of every loss on `instances` random instances.
pub fn gradient_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(SUITE_LOSSES.len());
    for name in SUITE_LOSSES {
        let mut row = GradCheckRow {
            name,
            instances,
            max_rel_error: 0.0,
            worst_instance: 0,
        };
        for i in 0..instances {
            let err = check_instance(name, &mut rng)?;
            if err > row.max_rel_error || err.is_nan() {
                row.max_rel_error = err;
                row.worst_instance = i;
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
