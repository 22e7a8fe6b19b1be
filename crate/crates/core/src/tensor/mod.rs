//! Dense `f64` tensors with a reverse-mode differentiation tape.
//!
//! A [`Tensor`] is an immutable value plus, when it participates in
//! differentiation, a reference to the operation that produced it. Gradients
//! flow back through these references by [`Tensor::backward`] (accumulating
//! into leaf buffers) or [`grad`] (returning gradients as tensors).
//!
//! Every operation's backward rule is itself written in terms of
//! differentiable operations, so `grad(.., create_graph = true)` yields
//! gradients that can be differentiated again. Gradient matching relies on
//! this: it differentiates a distance between parameter gradients with
//! respect to input pixels.
//!
//! Graphs are reference counted and single-threaded (`Rc`). Independent
//! graphs may be built on different threads; share plain data, not tensors.

mod engine;
pub(crate) mod kernels;
pub mod ops;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use engine::grad;
pub use ops::SampleMap;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

struct ModeGuard(bool);

impl Drop for ModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

fn with_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    let _guard = ModeGuard(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

/// Runs `f` without recording operations on the tape.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_mode(false, f)
}

/// Runs `f` with recording switched on, even inside [`no_grad`]. Used by
/// computations that need gradients internally.
pub fn enable_grad<R>(f: impl FnOnce() -> R) -> R {
    with_mode(true, f)
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Backward rule of one recorded operation.
///
/// `backward` receives the operation's inputs, its output and the gradient
/// flowing into the output, and returns one optional gradient per input
/// (`None` for inputs that do not need one).
pub(crate) trait GradFn {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Option<Tensor>>>;
}

pub(crate) struct Node {
    pub(crate) op: Box<dyn GradFn>,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// A constant tensor. Fails if `shape` has a zero extent or does not match
    /// `data.len()`.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A leaf that accumulates gradients during [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.iter().product()])
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Records the result of an operation. The node is attached only when
    /// recording is enabled and some input requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        op: impl GradFn + 'static,
        inputs: Vec<Tensor>,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        let node = track.then(|| Node {
            op: Box::new(op),
            inputs,
        });
        Self::build(shape, data, track, node)
    }

    pub(crate) fn constant(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self::build(shape, data, false, None)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("expected one element, got {:?}", self.shape())));
        }
        Ok(self.0.data[0])
    }

    /// A constant copy cut off from the tape.
    pub fn detach(&self) -> Tensor {
        Self::constant(self.0.shape.clone(), self.0.data.clone())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Backpropagates from this scalar into every reachable leaf created with
    /// [`Tensor::param`]. Repeated calls add to the existing leaf gradients;
    /// call [`Tensor::zero_grad`] to reset.
    pub fn backward(&self) -> Result<()> {
        engine::backward(self)
    }

    pub fn sum_value(&self) -> f64 {
        self.0.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("tensor", format!("invalid extents {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} holds {n} values, data has {len}"),
        ));
    }
    Ok(())
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if let Some(node) = &self.0.node {
            d.field("op", &node.op.name());
        }
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.finish()
    }
}
