use super::tensor::Tensor;
use super::Result;

/// Added under the square root of every L2 norm.
pub const L2_EPS: f64 = 1e-12;

/// Per-feature mean and biased variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl Tensor {
    pub fn mean_all(&self) -> Result<Tensor> {
        self.sum_all()?.scale(1.0 / self.numel() as f64)
    }

    /// Mean over the leading axis: `[n, d] -> [d]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let n = self.rows();
        self.sum_rows()?.scale(1.0 / n as f64)
    }

    /// `sqrt(sum(x^2) + L2_EPS)` over the last axis.
    pub fn l2_norm_last(&self) -> Result<Tensor> {
        self.mul(self)?.sum_last()?.add_scalar(L2_EPS)?.sqrt()
    }

    /// Exact `sqrt(sum(x^2))` over the last axis. Rows that are exactly zero
    /// give 0 with a zero gradient instead of a singular one.
    pub fn l2_norm_last_exact(&self) -> Result<Tensor> {
        let sq = self.mul(self)?.sum_last()?;
        let zero_mask: Vec<f64> = sq.values().iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
        let mask = Tensor::new(sq.shape().to_vec(), zero_mask)?;
        let keep = mask.scale(-1.0)?.add_scalar(1.0)?;
        sq.add(&mask)?.sqrt()?.mul(&keep)
    }

    /// Divides every row (last axis) by its L2 norm.
    pub fn l2_normalize(&self) -> Result<Tensor> {
        let norm = self.l2_norm_last()?;
        let spread = if self.ndim() == 1 {
            norm.expand(self.shape())?
        } else {
            norm.broadcast_cols(self.cols())?
        };
        self.div(&spread)
    }

    /// Euclidean distance between matching rows of two `[n, d]` tensors.
    pub fn row_distance(&self, other: &Tensor) -> Result<Tensor> {
        let diff = self.sub(other)?;
        diff.mul(&diff)?.sum_last()?.add_scalar(L2_EPS)?.sqrt()
    }

    /// Scales row `i` by `w[i]` for a `[n]` weight vector.
    pub fn scale_rows(&self, w: &Tensor) -> Result<Tensor> {
        self.mul(&w.broadcast_cols(self.cols())?)
    }

    /// Standardizes each column with the batch's own statistics, then applies
    /// the per-feature affine `scale * x_hat + shift`.
    pub fn batch_norm(&self, scale: &Tensor, shift: &Tensor, eps: f64) -> Result<(Tensor, BatchStats)> {
        let n = self.rows();
        let mean = self.mean_rows()?;
        let centered = self.sub(&mean.broadcast_rows(n)?)?;
        let var = centered.mul(&centered)?.mean_rows()?;
        let std = var.add_scalar(eps)?.sqrt()?;
        let x_hat = centered.div(&std.broadcast_rows(n)?)?;
        let y = x_hat
            .mul(&scale.broadcast_rows(n)?)?
            .add(&shift.broadcast_rows(n)?)?;
        let stats = BatchStats {
            mean: mean.to_vec(),
            var: var.to_vec(),
            count: n,
        };
        Ok((y, stats))
    }

    /// Normalization with fixed (running) statistics.
    pub fn batch_norm_fixed(
        &self,
        scale: &Tensor,
        shift: &Tensor,
        mean: &Tensor,
        var: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        let n = self.rows();
        let std = var.add_scalar(eps)?.sqrt()?;
        self.sub(&mean.broadcast_rows(n)?)?
            .div(&std.broadcast_rows(n)?)?
            .mul(&scale.broadcast_rows(n)?)?
            .add(&shift.broadcast_rows(n)?)
    }
}
