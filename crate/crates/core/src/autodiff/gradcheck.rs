use super::backward::backward;
use super::tape::Tape;
use super::tensor::Tensor;
use super::{AutodiffError, Result};

/// Floor added to the denominator of the relative error.
pub const FD_DENOM_EPS: f64 = 1e-6;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coords: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Checks every coordinate of `point`. See [`finite_difference_check_at`].
pub fn finite_difference_check<F>(f: F, point: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    finite_difference_check_at(f, point, step, &coords)
}

/// Compares the analytic gradient of the scalar function `f` at `point`
/// with central differences on the chosen coordinates.
///
/// The error per coordinate is `|a - c| / (|a| + |c| + FD_DENOM_EPS)`.
/// `f` is called once on a tape leaf and then on untracked perturbed copies.
pub fn finite_difference_check_at<F>(f: F, point: &Tensor, step: f64, coords: &[usize]) -> Result<GradCheck>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(1e-7..=1e-3).contains(&step) {
        return Err(AutodiffError::InvalidStep(step));
    }
    let tape = Tape::new();
    let x = tape.leaf(point);
    let y = f(&x)?;
    let grad = backward(&y, &[&x], false)?.remove(0);

    let base = point.to_vec();
    let probe = |i: usize, delta: f64| -> Result<f64> {
        let mut v = base.clone();
        v[i] += delta;
        let t = Tensor::new(point.shape().to_vec(), v)?;
        let out = f(&t).map_err(|e| match e {
            AutodiffError::NonFinite { .. } => AutodiffError::NonFiniteProbe { index: i },
            other => other,
        })?;
        let val = out.item();
        if !val.is_finite() {
            return Err(AutodiffError::NonFiniteProbe { index: i });
        }
        Ok(val)
    };

    let mut analytic = Vec::with_capacity(coords.len());
    let mut numeric = Vec::with_capacity(coords.len());
    let mut max_rel_error = 0.0_f64;
    let mut worst_index = coords.first().copied().unwrap_or(0);
    for &i in coords {
        let c = (probe(i, step)? - probe(i, -step)?) / (2.0 * step);
        let a = grad.values()[i];
        let err = (a - c).abs() / (a.abs() + c.abs() + FD_DENOM_EPS);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        analytic.push(a);
        numeric.push(c);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        coords: coords.to_vec(),
        analytic,
        numeric,
    })
}
