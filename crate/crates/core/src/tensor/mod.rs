//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted array. Operations that
//! consume tensors requiring gradients record a backward closure together
//! with their parents; [`Tensor::backward`] walks that graph in reverse
//! topological order and accumulates gradients into the leaves.
//!
//! Element precision is chosen by the type parameter: `f64` for gradient
//! verification, `f32` for training runs.

mod autograd;
pub(crate) mod branch;
pub mod ops;
mod rng;
mod shape;

use std::fmt;
use std::iter::Sum;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{bail, Error, Result};

pub use autograd::{grad_enabled, no_grad, NoGradGuard};
pub use branch::trace_branches;
pub use ops::{BatchNormMode, PoolIndices, RunningStats};
pub use rng::RngState;
pub use shape::{numel, Shape};

/// Floating point element type.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

type BackwardFn<F> = Box<dyn Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>> + Send + Sync>;

pub(crate) struct GradFn<F: Real> {
    parents: Vec<Tensor<F>>,
    apply: BackwardFn<F>,
}

struct Node<F: Real> {
    id: u64,
    shape: Shape,
    data: Vec<F>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<F>>>,
    grad_fn: Option<GradFn<F>>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone)]
pub struct Tensor<F: Real> {
    node: Arc<Node<F>>,
}

impl<F: Real> Tensor<F> {
    /// Builds a leaf tensor. Fails if `data` does not fill `shape`.
    pub fn from_vec(shape: impl Into<Shape>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            bail!(
                Dimension,
                "shape {} needs {} elements, got {}",
                shape,
                shape.numel(),
                data.len()
            );
        }
        Ok(Self::leaf(shape, data, false))
    }

    pub fn from_f64(shape: impl Into<Shape>, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| F::lit(v)).collect())
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: impl Into<Shape>, value: F) -> Self {
        let shape = shape.into();
        let data = vec![value; shape.numel()];
        Self::leaf(shape, data, false)
    }

    pub fn scalar(value: F) -> Self {
        Self::leaf(Shape::scalar(), vec![value], false)
    }

    pub(crate) fn leaf(shape: Shape, data: Vec<F>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            node: Arc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn: None,
            }),
        }
    }

    /// Output of an operation. Records `apply` only when some parent needs a
    /// gradient and recording is enabled. Rejects non-finite results.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Shape,
        data: Vec<F>,
        parents: Vec<Tensor<F>>,
        apply: impl Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>> + Send + Sync + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(shape.numel(), data.len());
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let grad_fn = track.then(|| GradFn {
            parents,
            apply: Box::new(apply),
        });
        Ok(Tensor {
            node: Arc::new(Node {
                id: next_id(),
                shape,
                data,
                requires_grad: track,
                grad: Mutex::new(None),
                grad_fn,
            }),
        })
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Leaf copy of this tensor with the given gradient flag.
    pub fn with_grad(self, requires_grad: bool) -> Self {
        let data = match Arc::try_unwrap(self.node) {
            Ok(node) => (node.shape, node.data),
            Err(shared) => (shared.shape.clone(), shared.data.clone()),
        };
        Self::leaf(data.0, data.1, requires_grad)
    }

    /// Copy with no graph history.
    pub fn detach(&self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), false)
    }

    pub fn shape(&self) -> &Shape {
        &self.node.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.node.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.node.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.node.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.node.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.numel() != 1 {
            bail!(Contract, "item() on tensor of shape {}", self.shape());
        }
        Ok(self.node.data[0])
    }

    /// Accumulated gradient, if any has been propagated into this leaf.
    pub fn grad(&self) -> Option<Tensor<F>> {
        let guard = self.node.grad.lock().expect("grad lock poisoned");
        guard
            .as_ref()
            .map(|g| Self::leaf(self.node.shape.clone(), g.clone(), false))
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values in another element precision; drops graph history.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        let data = self
            .node
            .data
            .iter()
            .map(|v| G::lit(v.as_f64()))
            .collect();
        Tensor::leaf(self.node.shape.clone(), data, self.node.requires_grad)
    }

    /// Rewrites the values of a leaf in place when it is not shared,
    /// otherwise replaces it with a fresh leaf. Clears the gradient.
    pub fn update_data(&mut self, f: impl FnOnce(&mut [F])) {
        if let Some(node) = Arc::get_mut(&mut self.node) {
            if node.grad_fn.is_none() {
                f(&mut node.data);
                *node.grad.get_mut().expect("grad lock poisoned") = None;
                return;
            }
        }
        let mut data = self.node.data.clone();
        f(&mut data);
        *self = Self::leaf(self.node.shape.clone(), data, self.node.requires_grad);
    }

    pub(crate) fn id(&self) -> u64 {
        self.node.id
    }

    pub(crate) fn grad_fn(&self) -> Option<&GradFn<F>> {
        self.node.grad_fn.as_ref()
    }

    pub(crate) fn accumulate_grad(&self, g: &[F]) {
        let mut guard = self.node.grad.lock().expect("grad lock poisoned");
        match guard.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *guard = Some(g.to_vec()),
        }
    }

    pub(crate) fn ensure_shape(&self, expected: &[usize], what: &str) -> Result<()> {
        if self.dims() != expected {
            bail!(
                Dimension,
                "{what}: expected shape {}, got {}",
                Shape::from(expected),
                self.shape()
            );
        }
        Ok(())
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.node.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}
