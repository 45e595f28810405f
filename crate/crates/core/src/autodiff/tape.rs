use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::tensor::{NodeRef, Tensor};

/// A tensor value as captured by a tape node.
///
/// Holds the shape, the shared value buffer and the id of the node that
/// produced it, but never a handle to the tape itself, so nodes cannot keep
/// their own tape alive.
#[derive(Clone, Debug)]
pub(crate) struct Saved {
    pub shape: Vec<usize>,
    pub data: Rc<Vec<f64>>,
    pub id: Option<usize>,
}

impl Saved {
    pub fn rebind(&self, tape: &Tape) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.clone(),
            self.id.map(|id| NodeRef {
                tape: tape.clone(),
                id,
            }),
        )
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    Reshape,
    Relu,
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Clamp { lo: f64, hi: f64 },
    Softmax,
    LogSoftmax,
    SumAll,
    SumLast,
    SumRows,
    Expand,
    BroadcastRows,
    BroadcastCols,
    ConcatCols,
    SliceCols { start: usize },
    IndexRows(Rc<[usize]>),
    ScatterRows(Rc<[usize]>),
    PairwiseSqDist,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::Clamp { .. } => "clamp",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::SumAll => "sum_all",
            Op::SumLast => "sum_last",
            Op::SumRows => "sum_rows",
            Op::Expand => "expand",
            Op::BroadcastRows => "broadcast_rows",
            Op::BroadcastCols => "broadcast_cols",
            Op::ConcatCols => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::IndexRows(_) => "index_rows",
            Op::ScatterRows(_) => "scatter_rows",
            Op::PairwiseSqDist => "pairwise_sq_dist",
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<Saved>,
    pub output: Saved,
    pub generation: u32,
}

struct TapeInner {
    nodes: RefCell<Vec<Node>>,
    recording: Cell<bool>,
    generation: Cell<u32>,
}

/// Define-by-run record of primitive operations.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it. A fresh tape is built for every training iteration. Gradients
/// computed with `create_graph` are appended to the same tape under a higher
/// generation number, which is what makes a second backward pass through an
/// inner update possible.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("generation", &self.generation())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                recording: Cell::new(true),
                generation: Cell::new(0),
            }),
        }
    }

    /// Registers a copy of `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let saved = Saved {
            shape: value.shape().to_vec(),
            data: value.data_rc(),
            id: None,
        };
        let id = self.push(Op::Leaf, Vec::new(), saved.clone());
        Tensor::from_parts(
            saved.shape,
            saved.data,
            Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        )
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generation new nodes are stamped with; 0 for the forward graph.
    pub fn generation(&self) -> u32 {
        self.inner.generation.get()
    }

    pub(crate) fn node_generation(&self, id: usize) -> u32 {
        self.inner.nodes.borrow()[id].generation
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn is_recording(&self) -> bool {
        self.inner.recording.get()
    }

    pub(crate) fn push(&self, op: Op, inputs: Vec<Saved>, mut output: Saved) -> usize {
        let mut nodes = self.inner.nodes.borrow_mut();
        let id = nodes.len();
        output.id = Some(id);
        nodes.push(Node {
            op,
            inputs,
            output,
            generation: self.inner.generation.get(),
        });
        id
    }

    pub(crate) fn with_nodes<R>(&self, f: impl FnOnce(&[Node]) -> R) -> R {
        f(&self.inner.nodes.borrow())
    }

    pub(crate) fn node_parts(&self, id: usize) -> (Op, Vec<Saved>, Saved) {
        let nodes = self.inner.nodes.borrow();
        let n = &nodes[id];
        (n.op.clone(), n.inputs.clone(), n.output.clone())
    }

    pub(crate) fn pause(&self) -> RecordingGuard {
        let prev = self.inner.recording.replace(false);
        RecordingGuard {
            tape: self.clone(),
            prev_recording: prev,
            prev_generation: self.inner.generation.get(),
        }
    }

    pub(crate) fn next_generation(&self) -> RecordingGuard {
        let prev_generation = self.inner.generation.get();
        self.inner.generation.set(prev_generation + 1);
        RecordingGuard {
            tape: self.clone(),
            prev_recording: self.inner.recording.get(),
            prev_generation,
        }
    }
}

pub(crate) struct RecordingGuard {
    tape: Tape,
    prev_recording: bool,
    prev_generation: u32,
}

impl Drop for RecordingGuard {
    fn drop(&mut self) {
        self.tape.inner.recording.set(self.prev_recording);
        self.tape.inner.generation.set(self.prev_generation);
    }
}
