use std::rc::Rc;

use super::tape::{Op, Saved, Tape};
use super::tensor::{NodeRef, Tensor};
use super::{AutodiffError, Result};

/// Finishes a primitive: validates the output, then records it on the tape
/// shared by the inputs (if any input is tracked and recording is on).
fn record(op: Op, inputs: &[&Tensor], shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
    let name = op.name();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(AutodiffError::NonFinite { op: name });
    }
    let mut tape: Option<&Tape> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match tape {
                None => tape = Some(&n.tape),
                Some(tp) if !tp.same(&n.tape) => return Err(AutodiffError::MixedTapes { op: name }),
                Some(_) => {}
            }
        }
    }
    let data = Rc::new(data);
    let node = match tape {
        Some(tp) if tp.is_recording() => {
            let out = Saved {
                shape: shape.clone(),
                data: data.clone(),
                id: None,
            };
            let id = tp.push(op, inputs.iter().map(|t| t.saved()).collect(), out);
            Some(NodeRef { tape: tp.clone(), id })
        }
        _ => None,
    };
    Ok(Tensor::from_parts(shape, data, node))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(AutodiffError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected a 2-d tensor",
        }),
    }
}

fn rows_shape(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [d] => Ok((1, *d)),
        [r, c] => Ok((*r, *c)),
        s => Err(AutodiffError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected a 1-d or 2-d tensor",
        }),
    }
}

impl Tensor {
    fn zip_with(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op.name(), self, other)?;
        let data = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(&a, &b)| f(a, b))
            .collect();
        record(op, &[self, other], self.shape().to_vec(), data)
    }

    fn map_unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.values().iter().map(|&a| f(a)).collect();
        record(op, &[self], self.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Sub, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, Op::Div, |a, b| a / b)
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map_unary(Op::Scale(c), |a| a * c)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.map_unary(Op::AddScalar, |a| a + c)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = matrix_dims("matmul", self)?;
        let (k2, n) = matrix_dims("matmul", other)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let a = self.values();
        let b = other.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        record(Op::MatMul, &[self, other], vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = matrix_dims("transpose", self)?;
        let a = self.values();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        record(Op::Transpose, &[self], vec![c, r], out)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.iter().any(|&e| e == 0) {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        record(Op::Reshape, &[self], shape.to_vec(), self.to_vec())
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.map_unary(Op::Relu, |a| a.max(0.0))
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.map_unary(Op::Exp, f64::exp)
    }

    /// Natural logarithm; non-positive inputs are a `NonFinite` error.
    pub fn ln(&self) -> Result<Tensor> {
        self.map_unary(Op::Log, f64::ln)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.map_unary(Op::Sqrt, f64::sqrt)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map_unary(Op::Sigmoid, |a| {
            if a >= 0.0 {
                1.0 / (1.0 + (-a).exp())
            } else {
                let e = a.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.map_unary(Op::Clamp { lo, hi }, |a| a.clamp(lo, hi))
    }

    fn rowwise(&self, op: Op, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor> {
        let (r, c) = rows_shape(op.name(), self)?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            f(&self.values()[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        record(op, &[self], self.shape().to_vec(), out)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        self.rowwise(Op::Softmax, |x, y| {
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = (xi - m).exp();
                z += *yi;
            }
            y.iter_mut().for_each(|v| *v /= z);
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        self.rowwise(Op::LogSoftmax, |x, y| {
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = xi - lse;
            }
        })
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let s = self.values().iter().sum();
        record(Op::SumAll, &[self], Vec::new(), vec![s])
    }

    /// Sum over the last axis: `[n, d] -> [n]`, `[d] -> []`.
    pub fn sum_last(&self) -> Result<Tensor> {
        let (r, c) = rows_shape("sum_last", self)?;
        let out: Vec<f64> = (0..r)
            .map(|i| self.values()[i * c..(i + 1) * c].iter().sum())
            .collect();
        let shape = if self.ndim() == 1 { Vec::new() } else { vec![r] };
        record(Op::SumLast, &[self], shape, out)
    }

    /// Sum over the leading axis: `[n, d] -> [d]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (r, c) = matrix_dims("sum_rows", self)?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(&self.values()[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        record(Op::SumRows, &[self], vec![c], out)
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        if self.numel() != 1 {
            return Err(AutodiffError::InvalidShape {
                op: "expand",
                shape: self.shape().to_vec(),
                reason: "only single-element tensors can be expanded",
            });
        }
        let n = shape.iter().product();
        record(Op::Expand, &[self], shape.to_vec(), vec![self.values()[0]; n])
    }

    /// Repeats a `[d]` vector as `n` rows: `[n, d]`.
    pub fn broadcast_rows(&self, n: usize) -> Result<Tensor> {
        let d = match self.shape() {
            [d] => *d,
            s => {
                return Err(AutodiffError::InvalidShape {
                    op: "broadcast_rows",
                    shape: s.to_vec(),
                    reason: "expected a 1-d tensor",
                })
            }
        };
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            out.extend_from_slice(self.values());
        }
        record(Op::BroadcastRows, &[self], vec![n, d], out)
    }

    /// Repeats each entry of an `[n]` vector across `d` columns: `[n, d]`.
    pub fn broadcast_cols(&self, d: usize) -> Result<Tensor> {
        let n = match self.shape() {
            [n] => *n,
            s => {
                return Err(AutodiffError::InvalidShape {
                    op: "broadcast_cols",
                    shape: s.to_vec(),
                    reason: "expected a 1-d tensor",
                })
            }
        };
        let mut out = Vec::with_capacity(n * d);
        for &v in self.values() {
            out.extend(std::iter::repeat_n(v, d));
        }
        record(Op::BroadcastCols, &[self], vec![n, d], out)
    }

    /// Concatenation of 2-d tensors along the last axis.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(AutodiffError::InvalidShape {
            op: "concat_cols",
            shape: Vec::new(),
            reason: "nothing to concatenate",
        })?;
        let (r, _) = matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = matrix_dims("concat_cols", p)?;
            if pr != r {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.values()[i * w..(i + 1) * w]);
            }
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        record(Op::ConcatCols, &refs, vec![r, total], out)
    }

    /// Columns `start..start + len` of a 2-d tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = matrix_dims("slice_cols", self)?;
        if len == 0 || start + len > c {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&self.values()[i * c + start..i * c + start + len]);
        }
        record(Op::SliceCols { start }, &[self], vec![r, len], out)
    }

    /// Gathers leading-axis slices: `out[i] = self[idx[i]]`.
    pub fn index_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let n = *self.shape().first().ok_or(AutodiffError::InvalidShape {
            op: "index_rows",
            shape: Vec::new(),
            reason: "cannot index a scalar",
        })?;
        let w = self.numel() / n;
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= n {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "index_rows",
                    index: i,
                    bound: n,
                });
            }
            out.extend_from_slice(&self.values()[i * w..(i + 1) * w]);
        }
        if idx.is_empty() {
            return Err(AutodiffError::InvalidShape {
                op: "index_rows",
                shape: self.shape().to_vec(),
                reason: "empty index list",
            });
        }
        let mut shape = self.shape().to_vec();
        shape[0] = idx.len();
        record(Op::IndexRows(idx.into()), &[self], shape, out)
    }

    /// Adjoint of [`Tensor::index_rows`]: `out[idx[i]] += self[i]`, `n` rows.
    pub fn scatter_rows(&self, idx: &[usize], n: usize) -> Result<Tensor> {
        let m = *self.shape().first().unwrap_or(&1);
        if m != idx.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "scatter_rows",
                lhs: self.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let w = self.numel() / m.max(1);
        let mut out = vec![0.0; n * w];
        for (i, &j) in idx.iter().enumerate() {
            if j >= n {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "scatter_rows",
                    index: j,
                    bound: n,
                });
            }
            for (o, &v) in out[j * w..(j + 1) * w]
                .iter_mut()
                .zip(&self.values()[i * w..(i + 1) * w])
            {
                *o += v;
            }
        }
        let mut shape = self.shape().to_vec();
        shape[0] = n;
        record(Op::ScatterRows(idx.into()), &[self], shape, out)
    }

    /// Squared Euclidean distances between rows: `[n, d] x [m, d] -> [n, m]`.
    pub fn pairwise_sq_dist(&self, other: &Tensor) -> Result<Tensor> {
        let (n, d) = matrix_dims("pairwise_sq_dist", self)?;
        let (m, d2) = matrix_dims("pairwise_sq_dist", other)?;
        if d != d2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "pairwise_sq_dist",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let a = self.values();
        let b = other.values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let ai = &a[i * d..(i + 1) * d];
            for j in 0..m {
                let bj = &b[j * d..(j + 1) * d];
                out[i * m + j] = ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum();
            }
        }
        record(Op::PairwiseSqDist, &[self, other], vec![n, m], out)
    }
}
