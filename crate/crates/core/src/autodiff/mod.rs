//! Dense-tensor reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tensor`] that has a tape node is appended to that
//! node's [`Tape`]. [`backward`] walks the tape in reverse; with
//! `create_graph = true` the gradient computation is itself recorded, so an
//! expression built from the returned gradients can be differentiated again.
//! That is all the meta-learning loop needs to differentiate through one
//! gradient step of the voting network.
//!
//! ```
//! use ramoe::autodiff::{backward, Tape, Tensor};
//!
//! let tape = Tape::new();
//! let theta = tape.leaf(&Tensor::scalar(3.0));
//! let loss = theta.mul(&theta).unwrap();
//! let grads = backward(&loss, &[&theta], false).unwrap();
//! assert_eq!(grads[0].item(), 6.0);
//! ```

mod backward;
mod composite;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use backward::backward;
pub use composite::{BatchStats, L2_EPS};
pub use gradcheck::{finite_difference_check, finite_difference_check_at, GradCheck, FD_DENOM_EPS};
pub use tape::Tape;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid operand shape {shape:?} for {op}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{len} values cannot fill shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for extent {bound} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("operands of {op} are recorded on different tapes")]
    MixedTapes { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not recorded on a tape")]
    LossNotOnTape,
    #[error("target #{0} is not recorded on the loss tape")]
    TargetNotOnTape(usize),
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    InvalidStep(f64),
    #[error("finite-difference probe at coordinate {index} evaluated to a non-finite value")]
    NonFiniteProbe { index: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
