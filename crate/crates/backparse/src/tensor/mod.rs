//! Dense f64 tensors with a recording tape for reverse-mode gradients.
//!
//! A [`Tensor`] is a shared handle (cheap to clone) to shape + data +
//! a persistent gradient accumulator. All differentiable operations
//! live on [`Tape`]; running [`Tape::backward`] propagates adjoints in
//! reverse execution order and folds them into the `grad` buffers of
//! every tensor with `requires_grad` set. Adjoints are per-run scratch,
//! so calling `backward` twice without resetting grads exactly doubles
//! them.

mod checkpoint;
mod gradcheck;
mod ops;
mod rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use gradcheck::grad_check;
pub use rng::{RngState, RNG_ALGORITHM};

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Persistent gradient accumulator (same length as `data`).
    grad: Vec<f64>,
    /// Per-backward-run adjoint scratch.
    adj: Vec<f64>,
    requires_grad: bool,
}

/// Shared handle to a dense array. Cloning aliases the storage.
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        let n = data.len();
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data,
                grad: vec![0.0; n],
                adj: vec![0.0; n],
                requires_grad: false,
            })),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(&[], vec![v])
    }

    /// A learnable tensor: gradients accumulate into it on `backward`.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        let t = Tensor::new(shape, data);
        t.inner.borrow_mut().requires_grad = true;
        t
    }

    pub fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn ndim(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    pub fn data(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Replace the values in place; shape must be preserved.
    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data = data;
    }

    pub fn grad(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Mutate data and gradient together (optimizer steps, clipping).
    pub fn update<R>(&self, f: impl FnOnce(&mut [f64], &mut [f64]) -> R) -> R {
        let mut inner = self.inner.borrow_mut();
        let Inner { data, grad, .. } = &mut *inner;
        f(data, grad)
    }

    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    fn zero_adj(&self) {
        self.inner.borrow_mut().adj.iter_mut().for_each(|a| *a = 0.0);
    }

    fn adj_clone(&self) -> Vec<f64> {
        self.inner.borrow().adj.clone()
    }

    fn with_adj_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.borrow_mut().adj)
    }

    fn fold_adj_into_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        let Inner { grad, adj, .. } = &mut *inner;
        for (g, a) in grad.iter_mut().zip(adj.iter()) {
            *g += *a;
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(f, "Tensor(shape={:?}", inner.shape)?;
        if inner.data.len() <= 8 {
            write!(f, ", data={:?}", inner.data)?;
        }
        write!(f, ")")
    }
}

type BackwardFn = Box<dyn Fn()>;

/// Records executed operations so gradients can be replayed in reverse.
pub struct Tape {
    records: RefCell<Vec<BackwardFn>>,
    touched: RefCell<Vec<Tensor>>,
    seen: RefCell<HashSet<u64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            records: RefCell::new(Vec::new()),
            touched: RefCell::new(Vec::new()),
            seen: RefCell::new(HashSet::new()),
        }
    }

    fn touch(&self, t: &Tensor) {
        if self.seen.borrow_mut().insert(t.id()) {
            self.touched.borrow_mut().push(t.clone());
        }
    }

    pub(crate) fn record(&self, inputs: &[&Tensor], output: &Tensor, back: BackwardFn) {
        for t in inputs {
            self.touch(t);
        }
        self.touch(output);
        self.records.borrow_mut().push(back);
    }

    pub fn num_records(&self) -> usize {
        self.records.borrow().len()
    }

    /// Propagate d(loss)/d(tensor) to every recorded tensor and
    /// accumulate into the persistent grads of learnable leaves.
    pub fn backward(&self, loss: &Tensor) {
        assert_eq!(loss.len(), 1, "backward requires a scalar loss");
        for t in self.touched.borrow().iter() {
            t.zero_adj();
        }
        loss.with_adj_mut(|a| a[0] = 1.0);
        for rec in self.records.borrow().iter().rev() {
            rec();
        }
        for t in self.touched.borrow().iter() {
            if t.requires_grad() {
                t.fold_adj_into_grad();
            }
        }
    }
}

fn assert_finite(op: &str, data: &[f64]) {
    for &v in data {
        if !v.is_finite() {
            panic!("{op}: produced a non-finite value ({v})");
        }
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
