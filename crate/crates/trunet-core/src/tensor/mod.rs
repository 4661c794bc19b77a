//! Dense tensors with define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tensor`] owns a contiguous row-major buffer (last axis fastest).
//! Operations on tensors that require gradients record a tape node holding
//! the input handles and a backward rule; [`Tensor::backward`] walks the
//! recorded graph once in reverse topological order, accumulates gradients
//! into every `requires_grad` leaf, and frees the tape.
//!
//! Tensors are generic over the element type: models train in `f32`, the
//! finite-difference harness re-runs everything in `f64`.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use num_traits::Float;
use rand::Rng;

use crate::error::{usage_err, Result};

mod conv;
mod elementwise;
pub mod gradcheck;
mod matmul;
mod norm;
mod pool;
mod reduce;
mod shape_ops;
mod softmax;
mod upsample;

/// Scalar types the engine computes with.
pub trait Element:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_val(self) -> f64;
    fn sample_standard_normal<R: Rng>(rng: &mut R) -> Self;
    fn sample_uniform<R: Rng>(rng: &mut R, lo: Self, hi: Self) -> Self;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_val(self) -> f64 {
        self as f64
    }
    fn sample_standard_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
    fn sample_uniform<R: Rng>(rng: &mut R, lo: Self, hi: Self) -> Self {
        rng.gen_range(lo..hi)
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_val(self) -> f64 {
        self
    }
    fn sample_standard_normal<R: Rng>(rng: &mut R) -> Self {
        rng.sample(rand_distr::StandardNormal)
    }
    fn sample_uniform<R: Rng>(rng: &mut R, lo: Self, hi: Self) -> Self {
        rng.gen_range(lo..hi)
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with tape recording disabled (inference / metric paths).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// One recorded operation: the tensors it consumed and the rule that maps
/// the output gradient onto them.
struct Node<T: Element> {
    parents: Vec<Tensor<T>>,
    backward: Box<dyn Fn(&[T])>,
}

struct TensorInner<T: Element> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    node: RefCell<Option<Node<T>>>,
}

/// Dense N-dimensional array, cheaply clonable (shared buffer).
pub struct Tensor<T: Element = f32> {
    inner: Rc<TensorInner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor from raw data. Panics if `data.len()` does not match
    /// the shape product; that is a programming error, not a runtime input.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} wants {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor {
            inner: Rc::new(TensorInner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                node: RefCell::new(None),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; numel])
    }

    /// Single-element tensor (shape `[1]`).
    pub fn scalar(value: T) -> Self {
        Self::from_vec(&[1], vec![value])
    }

    /// I.i.d. normal samples with the given standard deviation.
    pub fn randn<R: Rng>(shape: &[usize], std: T, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::sample_standard_normal(rng) * std)
            .collect();
        Self::from_vec(shape, data)
    }

    /// I.i.d. uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: T, hi: T, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| T::sample_uniform(rng, lo, hi)).collect();
        Self::from_vec(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Marks this tensor as a differentiable leaf (builder style).
    pub fn with_grad(self) -> Self {
        self.inner.requires_grad.set(true);
        self
    }

    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.inner.data.borrow(), |v| v.as_slice())
    }

    /// Mutable access to the buffer. Only sound for leaves between steps
    /// (optimizer updates, parameter loading); mutating a tensor that sits
    /// on a live tape invalidates saved activations.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    /// Accumulated gradient, if any. `None` means "never touched by a
    /// backward pass", which callers treat as all zeros.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrites every element with `value` (leaves only; see `data_mut`).
    pub fn fill(&self, value: T) {
        for v in self.inner.data.borrow_mut().iter_mut() {
            *v = value;
        }
    }

    /// Same data, detached from the tape.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(&self.inner.shape, self.to_vec())
    }

    /// Element-type conversion (used to move test fixtures between f32/f64).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|&v| U::from_f64(v.to_f64_val()))
            .collect();
        Tensor::from_vec(self.shape(), data)
    }

    pub(crate) fn has_node(&self) -> bool {
        self.inner.node.borrow().is_some()
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, &di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Records the result of an operation. The returned tensor requires a
    /// gradient (and carries a tape node) only when recording is enabled and
    /// at least one parent participates in differentiation.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T]) + 'static,
    ) -> Tensor<T> {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let out = Tensor::from_vec(&shape, data);
        if track {
            out.inner.requires_grad.set(true);
            *out.inner.node.borrow_mut() = Some(Node {
                parents: parents.iter().map(|p| (*p).clone()).collect(),
                backward: Box::new(backward),
            });
        }
        out
    }

    /// Reverse-mode gradient propagation from a scalar loss. Visits each
    /// recorded operation exactly once in reverse topological order, sums
    /// gradients over all paths into each leaf, and consumes the tape.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(usage_err!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            ));
        }
        // Iterative post-order DFS over tensors that carry tape nodes.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<*const TensorInner<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = Vec::new();
        if self.has_node() && visited.insert(Rc::as_ptr(&self.inner)) {
            stack.push((self.clone(), 0));
        }
        while let Some((t, child)) = stack.pop() {
            let next = {
                let node = t.inner.node.borrow();
                let node = node.as_ref().expect("node taken during traversal");
                node.parents.get(child).cloned()
            };
            match next {
                Some(p) => {
                    stack.push((t, child + 1));
                    if p.has_node() && visited.insert(Rc::as_ptr(&p.inner)) {
                        stack.push((p, 0));
                    }
                }
                None => order.push(t),
            }
        }

        self.accumulate_grad(&[T::one()]);
        for t in order.iter().rev() {
            let node = t
                .inner
                .node
                .borrow_mut()
                .take()
                .expect("tape node consumed twice");
            let grad = t.inner.grad.borrow();
            if let Some(g) = grad.as_ref() {
                (node.backward)(g);
            }
            // Dropping the node here releases the saved activations.
        }
        Ok(())
    }
}

pub(crate) fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(usage_err!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_invariant_enforced() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]);
        assert_eq!(t.numel(), 6);
    }

    #[test]
    #[should_panic]
    fn bad_length_panics() {
        let _ = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let x = Tensor::<f32>::from_vec(&[2, 2, 2], vec![3.0; 8]).with_grad();
        let loss = x.sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 8]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let x = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]).with_grad();
        let loss = x.mul(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn disconnected_leaf_has_no_grad() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).with_grad();
        let y = Tensor::<f32>::from_vec(&[2], vec![5.0, 6.0]).with_grad();
        let loss = x.sum_all();
        loss.backward().unwrap();
        // None reads as all zeros.
        assert!(y.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn non_scalar_backward_is_usage_error() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).with_grad();
        let y = x.relu();
        assert!(y.backward().is_err());
    }

    #[test]
    fn tape_is_freed_after_backward() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).with_grad();
        let y = x.mul(&x).unwrap();
        let loss = y.sum_all();
        loss.backward().unwrap();
        assert!(!loss.has_node());
        assert!(!y.has_node());
    }

    #[test]
    fn no_grad_suppresses_taping() {
        let x = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).with_grad();
        let y = no_grad(|| x.mul(&x).unwrap());
        assert!(!y.has_node());
        assert!(!y.requires_grad());
    }

    #[test]
    fn grad_accumulates_over_paths() {
        // loss = sum(x + x) -> dl/dx = 2.
        let x = Tensor::<f32>::from_vec(&[3], vec![1.0, 2.0, 3.0]).with_grad();
        let loss = x.add(&x).unwrap().sum_all();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0, 2.0]);
    }
}
