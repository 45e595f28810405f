use super::tape::{Op, Saved, Tape};
use super::tensor::Tensor;
use super::{AutodiffError, Result};

/// Reverse-mode gradients of a scalar `loss` with respect to `targets`.
///
/// Walks the loss tape from the loss node down to node 0, visiting each node
/// on a path to some target exactly once. With `create_graph` the gradient
/// computation is recorded on the same tape (one generation up), so the
/// returned tensors can be differentiated again. Targets the loss does not
/// depend on receive zeros.
pub fn backward(loss: &Tensor, targets: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if loss.numel() != 1 {
        return Err(AutodiffError::NonScalarLoss(loss.shape().to_vec()));
    }
    let root = loss.node.as_ref().ok_or(AutodiffError::LossNotOnTape)?;
    let tape = root.tape.clone();
    let root_id = root.id;

    let mut target_ids = Vec::with_capacity(targets.len());
    for (i, t) in targets.iter().enumerate() {
        match &t.node {
            Some(n) if n.tape.same(&tape) => target_ids.push(n.id),
            _ => return Err(AutodiffError::TargetNotOnTape(i)),
        }
    }

    let mut is_target = vec![false; root_id + 1];
    for &id in &target_ids {
        if id <= root_id {
            is_target[id] = true;
        }
    }
    // A node needs a gradient if some target is reachable from it.
    let needed = tape.with_nodes(|nodes| {
        let mut needed = is_target.clone();
        for id in 0..=root_id {
            if !needed[id] {
                needed[id] = nodes[id]
                    .inputs
                    .iter()
                    .any(|s| s.id.is_some_and(|j| needed[j]));
            }
        }
        needed
    });

    let _guard = if create_graph {
        tape.next_generation()
    } else {
        tape.pause()
    };

    let mut grads: Vec<Option<Tensor>> = vec![None; root_id + 1];
    let mut found: Vec<Option<Tensor>> = vec![None; root_id + 1];
    grads[root_id] = Some(Tensor::ones(loss.shape()));

    for id in (0..=root_id).rev() {
        if !needed[id] {
            continue;
        }
        let Some(g) = grads[id].take() else {
            continue;
        };
        if is_target[id] {
            found[id] = Some(g.clone());
        }
        let (op, inputs, output) = tape.node_parts(id);
        if matches!(op, Op::Leaf) {
            continue;
        }
        let input_grads = vjp(&tape, &op, &inputs, &output, &g)?;
        for (saved, ig) in inputs.iter().zip(input_grads) {
            let (Some(j), Some(ig)) = (saved.id, ig) else {
                continue;
            };
            if !needed[j] {
                continue;
            }
            grads[j] = Some(match grads[j].take() {
                Some(acc) => acc.add(&ig)?,
                None => ig,
            });
        }
    }

    Ok(target_ids
        .iter()
        .zip(targets)
        .map(|(&id, t)| {
            found
                .get(id)
                .and_then(Clone::clone)
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}

fn mask(t: &Tensor, keep: impl Fn(f64) -> bool) -> Tensor {
    let data = t.values().iter().map(|&v| if keep(v) { 1.0 } else { 0.0 }).collect();
    Tensor::new(t.shape().to_vec(), data).expect("mask shape matches its source")
}

/// Gradient contributions for each input of one node.
fn vjp(tape: &Tape, op: &Op, inputs: &[Saved], output: &Saved, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
    let x: Vec<Tensor> = inputs.iter().map(|s| s.rebind(tape)).collect();
    let y = output.rebind(tape);
    let one = |t: Tensor| Ok(vec![Some(t)]);
    match op {
        Op::Leaf => Ok(Vec::new()),
        Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        Op::Sub => Ok(vec![Some(g.clone()), Some(g.neg()?)]),
        Op::Mul => Ok(vec![Some(g.mul(&x[1])?), Some(g.mul(&x[0])?)]),
        Op::Div => {
            let ga = g.div(&x[1])?;
            let gb = ga.mul(&y)?.neg()?;
            Ok(vec![Some(ga), Some(gb)])
        }
        Op::Scale(c) => one(g.scale(*c)?),
        Op::AddScalar => one(g.clone()),
        Op::MatMul => {
            let ga = g.matmul(&x[1].transpose()?)?;
            let gb = x[0].transpose()?.matmul(g)?;
            Ok(vec![Some(ga), Some(gb)])
        }
        Op::Transpose => one(g.transpose()?),
        Op::Reshape => one(g.reshape(x[0].shape())?),
        Op::Relu => one(g.mul(&mask(&x[0], |v| v > 0.0))?),
        Op::Exp => one(g.mul(&y)?),
        Op::Log => one(g.div(&x[0])?),
        Op::Sqrt => one(g.div(&y)?.scale(0.5)?),
        Op::Sigmoid => {
            let dy = y.sub(&y.mul(&y)?)?;
            one(g.mul(&dy)?)
        }
        Op::Clamp { lo, hi } => one(g.mul(&mask(&x[0], |v| v >= *lo && v <= *hi))?),
        Op::Softmax => {
            let gy = g.mul(&y)?;
            let s = spread_last(&gy.sum_last()?, &y)?;
            one(y.mul(&g.sub(&s)?)?)
        }
        Op::LogSoftmax => {
            let p = y.exp()?;
            let s = spread_last(&g.sum_last()?, &y)?;
            one(g.sub(&p.mul(&s)?)?)
        }
        Op::SumAll => one(reshape_like(&g.expand(x[0].shape())?, &x[0])?),
        Op::SumLast => one(spread_last(g, &x[0])?),
        Op::SumRows => one(g.broadcast_rows(x[0].shape()[0])?),
        Op::Expand => one(reshape_like(&g.sum_all()?, &x[0])?),
        Op::BroadcastRows => one(g.sum_rows()?),
        Op::BroadcastCols => one(g.sum_last()?),
        Op::ConcatCols => {
            let mut start = 0;
            let mut out = Vec::with_capacity(x.len());
            for part in &x {
                let w = part.cols();
                out.push(Some(g.slice_cols(start, w)?));
                start += w;
            }
            Ok(out)
        }
        Op::SliceCols { start } => {
            let total = x[0].cols();
            let rows = x[0].rows();
            let len = g.cols();
            let mut parts = Vec::with_capacity(3);
            if *start > 0 {
                parts.push(Tensor::zeros(&[rows, *start]));
            }
            parts.push(g.clone());
            if start + len < total {
                parts.push(Tensor::zeros(&[rows, total - start - len]));
            }
            one(Tensor::concat_cols(&parts)?)
        }
        Op::IndexRows(idx) => one(g.scatter_rows(idx, x[0].shape()[0])?),
        Op::ScatterRows(idx) => one(g.index_rows(idx)?),
        Op::PairwiseSqDist => {
            let (a, b) = (&x[0], &x[1]);
            let d = a.cols();
            let row_w = g.sum_last()?.broadcast_cols(d)?;
            let ga = row_w.mul(a)?.sub(&g.matmul(b)?)?.scale(2.0)?;
            let gt = g.transpose()?;
            let col_w = gt.sum_last()?.broadcast_cols(d)?;
            let gb = col_w.mul(b)?.sub(&gt.matmul(a)?)?.scale(2.0)?;
            Ok(vec![Some(ga), Some(gb)])
        }
    }
}

/// Spreads a per-row quantity (output of `sum_last` on `like`) back over
/// the last axis of `like`.
fn spread_last(per_row: &Tensor, like: &Tensor) -> Result<Tensor> {
    if like.ndim() == 1 {
        per_row.expand(like.shape())
    } else {
        per_row.broadcast_cols(like.cols())
    }
}

fn reshape_like(t: &Tensor, like: &Tensor) -> Result<Tensor> {
    if t.shape() == like.shape() {
        Ok(t.clone())
    } else {
        t.reshape(like.shape())
    }
}
