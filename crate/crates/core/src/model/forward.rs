use super::{Linear, ModelError, ModelParams, Norm, Result, NORM_EPS};
use crate::autodiff::{BatchStats, Tensor};

/// Normalization layers use batch statistics in `Train` and running
/// statistics in `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct ExpertOutput {
    /// Post-normalization embedding, not L2-normalized.
    pub m: Tensor,
    pub logits: Tensor,
    /// Batch statistics when run in [`Mode::Train`].
    pub stats: Option<BatchStats>,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.w)?.add(&self.b.broadcast_rows(x.rows())?)?)
    }
}

impl Norm {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchStats>)> {
        match mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm(&self.scale, &self.shift, NORM_EPS)?;
                Ok((y, Some(stats)))
            }
            Mode::Eval => {
                let mean = Tensor::vector(self.running_mean.clone())?;
                let var = Tensor::vector(self.running_var.clone())?;
                Ok((x.batch_norm_fixed(&self.scale, &self.shift, &mean, &var, NORM_EPS)?, None))
            }
        }
    }
}

impl ModelParams {
    /// `x: [n, d_in] -> f: [n, d_feat]`, ReLU between layers.
    pub fn backbone_forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 2 || x.cols() != self.d_in() {
            return Err(ModelError::InputWidth {
                expected: self.d_in(),
                got: x.cols(),
            });
        }
        let mut h = x.clone();
        for (i, layer) in self.backbone.iter().enumerate() {
            if i > 0 {
                h = h.relu()?;
            }
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn expert_forward(&self, index: usize, f: &Tensor, mode: Mode) -> Result<ExpertOutput> {
        let e = self.expert(index)?;
        let (m, stats) = e.norm.forward(&e.embed.forward(f)?, mode)?;
        let logits = e.cls.forward(&m)?;
        Ok(ExpertOutput { m, logits, stats })
    }

    /// `f: [n, d_feat] -> q: [n, d_emb]`.
    pub fn voting_forward(&self, f: &Tensor, mode: Mode) -> Result<(Tensor, Option<BatchStats>)> {
        let h = self.voting.fc.forward(f)?.relu()?;
        self.voting.norm.forward(&h, mode)
    }

    /// Every expert's embedding of the same inputs, in eval mode.
    pub fn expert_embeddings(&self, f: &Tensor) -> Result<Vec<Tensor>> {
        (0..self.num_experts())
            .map(|k| Ok(self.expert_forward(k, f, Mode::Eval)?.m))
            .collect()
    }
}
