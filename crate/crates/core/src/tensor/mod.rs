//! Reverse-mode automatic differentiation engine.
//!
//! Tensors are n-dimensional float arrays that record the operations applied
//! to them. Calling [`Tensor::backward`] on a scalar result walks the recorded
//! graph in reverse topological order and accumulates gradients into every
//! tensor that requires them.
//!
//! The element type is generic over [`Scalar`]: training uses `f32`, gradient
//! checking instantiates the same kernels with `f64` so finite-difference
//! comparisons stay meaningful.
//!
//! Once a forward graph is built the participating tensors are treated as
//! immutable; parameter data is only rewritten between steps (by the
//! optimizer) when no live graph references it.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

mod adam;
mod conv;
mod gradcheck;
pub mod init;
mod norm;
pub mod ops;
mod pool;

pub use adam::{Adam, AdamState};
pub use conv::{conv2d, conv_transpose2d};
pub use gradcheck::{check_gradients, finite_difference_grads, max_relative_error};
pub use norm::{batchnorm2d, BatchNormMode, BatchNormState};
pub use pool::{
    adaptive_avg_pool2d, avg_pool2d_2x2, global_max_pool2d, pooling, resize_bilinear, PoolKind,
};

/// Element type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Backward closure: receives the output gradient and output data, and is
/// responsible for accumulating gradients into the node's parents.
type BackwardFn<T> = Box<dyn Fn(&[T], &[T], &[Tensor<T>])>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// N-dimensional tensor with an optional gradient slot.
///
/// Cloning is cheap: clones share the same storage and graph node.
pub struct Tensor<T: Scalar> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn check_shape_len<T>(shape: &[usize], data: &[T]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::Dimension(format!(
            "shape {:?} contains a zero-sized dimension",
            shape
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::Dimension(format!(
            "shape {:?} implies {} elements but data has {}",
            shape,
            numel,
            data.len()
        )));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        check_shape_len(&shape, &data)?;
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        })
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::new(shape, data, false)
    }

    /// Learnable leaf tensor.
    pub fn param(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::new(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![T::zero(); numel], false).expect("zero tensor")
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel], false).expect("full tensor")
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: T) -> Self {
        Self::full(vec![1], value)
    }

    /// Internal constructor for op results.
    pub(crate) fn node(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Tensor {
                inner: Rc::new(Inner {
                    id: fresh_id(),
                    shape,
                    data: RefCell::new(data),
                    grad: RefCell::new(None),
                    requires_grad: true,
                    parents,
                    backward: Some(backward),
                }),
            }
        } else {
            // No grad consumers upstream: drop the graph edges so eval-mode
            // forwards do not accumulate history.
            Tensor {
                inner: Rc::new(Inner {
                    id: fresh_id(),
                    shape,
                    data: RefCell::new(data),
                    grad: RefCell::new(None),
                    requires_grad: false,
                    parents: Vec::new(),
                    backward: None,
                }),
            }
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the underlying data. Keep the borrow short-lived.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let data = self.inner.data.borrow();
        assert_eq!(data.len(), 1, "item() on tensor with {} elements", data.len());
        data[0]
    }

    /// Replace the stored values. Only valid between steps on leaf tensors.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::Dimension(format!(
                "set_data: expected {} elements, got {}",
                self.numel(),
                data.len()
            )));
        }
        *self.inner.data.borrow_mut() = data;
        Ok(())
    }

    /// Apply `f` to the stored values in place. Used by the optimizer.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Copy of this tensor's data as a fresh constant leaf.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(self.inner.shape.clone(), self.to_vec()).expect("detach")
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, &v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Error if any stored value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        let data = self.inner.data.borrow();
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{context}: non-finite value {v} at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    /// Run reverse-mode differentiation from this scalar.
    ///
    /// Gradients accumulate (add) into every reachable tensor with
    /// `requires_grad`, so callers clear leaf gradients between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage(
                "backward() on a tensor with no gradient-requiring inputs".into(),
            ));
        }

        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);

        // Reverse topological order: every node's gradient is complete before
        // its backward fires.
        for node in order.iter().rev() {
            let inner = &node.inner;
            if let Some(backward) = &inner.backward {
                let grad = inner.grad.borrow().clone();
                if let Some(grad) = grad {
                    let out_data = inner.data.borrow();
                    backward(&grad, &out_data, &inner.parents);
                }
            }
        }
        Ok(())
    }

    /// Post-order DFS over parents; result lists parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // (tensor, children_pushed)
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.inner.id) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.inner.parents.iter().rev() {
                if p.requires_grad() && !visited.contains(&p.inner.id) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
