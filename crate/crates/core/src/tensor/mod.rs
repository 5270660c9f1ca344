//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: row-major buffers, rank 1-4 shapes
//! (the batch/channel/row/col layout is the common case), and a dynamic
//! graph built by each operation. `backward` walks the graph once in
//! reverse topological order and accumulates gradients additively, so
//! tensors used along several paths receive the sum of the path gradients.
//!
//! Graph construction and `backward` are single-threaded per model
//! instance; individual operations may parallelize over the batch
//! dimension internally with a deterministic reduction order, so results
//! are bit-identical regardless of thread count.

mod conv;
mod matmul;
mod ops;
mod optim;
mod pool;
mod spatial;

pub use conv::conv2d;
pub use optim::{AdamW, OptimConfig, ParamGroup};
pub use pool::{adaptive_avg_pool2d, max_pool2d};
pub use spatial::{affine_grid, grid_sample, lattice_coord};

pub(crate) use ops::sigmoid_scalar;

use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);
static FINITE_CHECKS: AtomicBool = AtomicBool::new(false);

/// Enable or disable non-finite detection on op outputs. When enabled,
/// any op producing NaN/Inf returns [`Error::NonFinite`].
pub fn set_finite_checks(on: bool) {
    FINITE_CHECKS.store(on, Ordering::Relaxed);
}

pub(crate) fn finite_checks_enabled() -> bool {
    FINITE_CHECKS.load(Ordering::Relaxed)
}

type BackwardFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Dense tensor handle. Clones share the same storage and graph node.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if numel_of(&shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                numel_of(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node: None,
            }),
        })
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf tensor: participates in `backward` and optimizer steps.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; numel_of(shape)], false).unwrap()
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![value; numel_of(shape)], false).unwrap()
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::full(&[1], value)
    }

    /// Internal constructor for op outputs.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
        op_name: &str,
    ) -> Result<Tensor> {
        debug_assert_eq!(numel_of(&shape), data.len());
        if finite_checks_enabled() && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op_name.to_string()));
        }
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = if requires_grad {
            Some(Node { parents, backward })
        } else {
            None
        };
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the value buffer (row-major).
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    /// Copy of the value buffer.
    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.inner.data.borrow()[0]
    }

    /// Copy of the gradient buffer, if populated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Populate an all-zero gradient if none accumulated (parameters whose
    /// branch did not contribute to the loss this step).
    pub fn ensure_zero_grad(&self) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![0.0; self.numel()]);
        }
    }

    /// Overwrite values in place (optimizer updates, parameter loading).
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(format!(
                "set_data: expected {} values, got {}",
                self.numel(),
                values.len()
            )));
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// Interpret a rank-4 tensor as (n, c, h, w).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.inner.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(Error::shape(format!("expected rank-4 tensor, got {:?}", s))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.inner.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            s => Err(Error::shape(format!("expected rank-2 tensor, got {:?}", s))),
        }
    }

    pub(crate) fn accumulate_grad(&self, delta: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    fn grad_for_backward(&self) -> Vec<f64> {
        self.inner
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    /// Reverse-mode backward pass from a scalar tensor. Populates `grad` on
    /// every tensor with `requires_grad` reachable from `self`; accumulation
    /// over fan-out is additive.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "backward() requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        self.accumulate_grad(&[1.0]);

        // Iterative post-order DFS; reverse gives the evaluation order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: std::collections::HashSet<u64> = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.inner.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.inner.node {
                for p in &node.parents {
                    if p.inner.requires_grad && !visited.contains(&p.inner.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        for t in order.iter().rev() {
            if let Some(node) = &t.inner.node {
                let out_grad = t.grad_for_backward();
                (node.backward)(&out_grad);
            }
        }
        Ok(())
    }
}

/// Uniform tensor in [lo, hi), optionally trainable.
pub fn uniform_tensor(rng: &mut crate::rng::Rng, shape: &[usize], lo: f64, hi: f64, param: bool) -> Tensor {
    let data: Vec<f64> = (0..numel_of(shape)).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::leaf(shape.to_vec(), data, param).unwrap()
}

/// He-style fan-in uniform initialization for conv / linear weights.
pub fn he_uniform(rng: &mut crate::rng::Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform_tensor(rng, shape, -bound, bound, true)
}
