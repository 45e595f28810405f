use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetaError, Result};
use crate::autodiff::Tensor;
use crate::model::{ModelParams, ParamGroup};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Gradients for one parameter group, tagged with the iteration that
/// produced them.
#[derive(Debug, Clone)]
pub struct GradSet {
    pub iteration: u64,
    pub group: ParamGroup,
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone, Default)]
struct Moments {
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Per-group optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    iteration: u64,
    state: BTreeMap<ParamGroup, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            iteration: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn begin_iteration(&mut self, iteration: u64) {
        self.iteration = iteration;
    }

    /// Number of updates applied to a group so far.
    pub fn steps(&self, group: ParamGroup) -> i32 {
        self.state.get(&group).map_or(0, |s| s.t)
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &GradSet, lr: f64) -> Result<()> {
        if grads.iteration != self.iteration {
            return Err(MetaError::StaleGradient {
                expected: self.iteration,
                got: grads.iteration,
            });
        }
        let tensors = params.group_mut(grads.group);
        if tensors.len() != grads.grads.len() {
            return Err(MetaError::GradientArity {
                group: format!("{:?}", grads.group),
                expected: tensors.len(),
                got: grads.grads.len(),
            });
        }
        let st = self.state.entry(grads.group).or_default();
        if st.m.is_empty() {
            st.m = grads.grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            st.v = st.m.clone();
        }
        st.t += 1;
        let c1 = 1.0 - BETA1.powi(st.t);
        let c2 = 1.0 - BETA2.powi(st.t);
        for (i, (p, g)) in tensors.into_iter().zip(&grads.grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(MetaError::GradientArity {
                    group: format!("{:?}[{i}]", grads.group),
                    expected: p.numel(),
                    got: g.numel(),
                });
            }
            let mut next = p.to_vec();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, gv) in next.iter_mut().zip(g.values()) {
                        *x -= lr * gv;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut st.m[i], &mut st.v[i]);
                    for (j, (x, &gv)) in next.iter_mut().zip(g.values()).enumerate() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * gv;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * gv * gv;
                        *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(MetaError::NonFinite {
                    what: format!("parameter update of {:?}", grads.group),
                });
            }
            *p = Tensor::new(p.shape().to_vec(), next)?;
        }
        Ok(())
    }
}
