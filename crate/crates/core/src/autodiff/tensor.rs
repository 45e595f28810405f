use std::fmt;
use std::rc::Rc;

use super::tape::{Saved, Tape};
use super::{AutodiffError, Result};

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub tape: Tape,
    pub id: usize,
}

/// Dense row-major `f64` array, optionally recorded on a [`Tape`].
///
/// Values are immutable once created; cloning is cheap. A tensor with a tape
/// node requires grad, one without is a constant.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    pub(crate) node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= 16 {
            s.field("values", &self.data);
        }
        s.field("requires_grad", &self.requires_grad()).finish()
    }
}

impl PartialEq for Tensor {
    /// Value equality; tape membership is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || expected != data.len() {
            return Err(AutodiffError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::from_parts(shape, Rc::new(data), None))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Rc<Vec<f64>>, node: Option<NodeRef>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, node }
    }

    /// Builds a `rows x cols` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), Rc::new(vec![value]), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), Rc::new(vec![value; n]), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AutodiffError::DataLength {
                    len: r.len(),
                    shape: vec![rows.len(), cols],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        self.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Leading extent (1 for scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Trailing extent (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().map(|n| &n.tape)
    }

    /// Generation of the tape node that produced this tensor.
    pub fn generation(&self) -> Option<u32> {
        self.node.as_ref().map(|n| n.tape.node_generation(n.id))
    }

    /// Same values, cut off from any tape.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.clone(), None)
    }

    /// Whether both tensors share the same value buffer.
    pub fn shares_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.data, &other.data)
    }

    pub(crate) fn saved(&self) -> Saved {
        Saved {
            shape: self.shape.clone(),
            data: self.data.clone(),
            id: self.node.as_ref().map(|n| n.id),
        }
    }
}
