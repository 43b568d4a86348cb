//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle to row-major f64 storage.
//! Forward operations that involve at least one gradient-requiring input
//! record a tape node (operation name, parent handles, backward rule);
//! [`Tensor::backward`] replays the recorded nodes in reverse creation
//! order — a topological order of the DAG, since consumers are always
//! created after their inputs — and accumulates gradients into every
//! tensor on a path to the loss.
//!
//! All computation is in 64-bit floats. Every forward operation checks
//! its output for NaN/Inf and fails rather than propagate poison; log-space
//! dynamic programs that legitimately need -inf (CTC, masked attention)
//! are implemented as dedicated operations whose internal scratch is not
//! tensor data.

mod gradcheck;
mod ops;

pub use gradcheck::finite_difference_check;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Global creation counter; its only purpose is ordering nodes of one
/// graph, so cross-thread interleaving is harmless.
static NEXT_SEQ: AtomicU64 = AtomicU64::new(0);

pub struct BackwardArgs<'a> {
    pub out_data: &'a [f64],
    pub out_grad: &'a [f64],
}

type BackwardFn = Box<dyn Fn(&BackwardArgs) -> Vec<Option<Vec<f64>>>>;

/// Tape record for one recorded operation.
struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
    seq: u64,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field(
                "op",
                &self.inner.node.as_ref().map(|n| n.op).unwrap_or("leaf"),
            )
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    // ── Construction ───────────────────────────────────────────────────

    fn new_inner(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        node: Option<Node>,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                node,
                seq: NEXT_SEQ.fetch_add(1, Ordering::Relaxed),
            }),
        }
    }

    /// Leaf tensor that does not require gradients.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel_of(shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Tensor::new_inner(shape.to_vec(), data, false, None))
    }

    /// Leaf parameter: requires gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(Tensor::new_inner(
            t.inner.shape.clone(),
            t.data_vec(),
            true,
            None,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new_inner(shape.to_vec(), vec![0.0; numel_of(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::new_inner(shape.to_vec(), vec![value; numel_of(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new_inner(vec![1], vec![value], false, None)
    }

    /// Parameter initialized uniform(-bound, bound) from `rng`.
    pub fn init_uniform(shape: &[usize], bound: f64, rng: &mut SplitRng) -> Tensor {
        let data = (0..numel_of(shape))
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        Tensor::new_inner(shape.to_vec(), data, true, None)
    }

    /// Zero-initialized parameter (biases).
    pub fn init_zeros(shape: &[usize]) -> Tensor {
        Tensor::new_inner(shape.to_vec(), vec![0.0; numel_of(shape)], true, None)
    }

    /// Records the output of a forward operation. The node is only kept
    /// when some parent requires gradients; inference on frozen weights
    /// therefore records nothing.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        debug_assert_eq!(numel_of(&shape), data.len(), "bad output shape in {op}");
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let node = if requires_grad {
            Some(Node {
                op,
                parents,
                backward,
            })
        } else {
            None
        };
        Ok(Tensor::new_inner(shape, data, requires_grad, node))
    }

    // ── Accessors ──────────────────────────────────────────────────────

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn data_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Mutate the underlying storage in place (optimizer updates,
    /// checkpoint loading). Shape is fixed; only values change.
    pub fn with_data_mut<F: FnOnce(&mut [f64])>(&self, f: F) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// Leaf copy of this tensor's current values, detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new_inner(self.inner.shape.clone(), self.data_vec(), false, None)
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn accumulate_stored_grad(&self, delta: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    // ── Backward engine ────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Gradients are accumulated
    /// into the stored `grad` buffer of every gradient-requiring tensor
    /// reachable from the loss; repeated calls without `zero_grad`
    /// therefore accumulate. Propagation itself uses a per-call scratch
    /// map so earlier sweeps never contaminate later ones.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::contract(
                "backward on a tensor that was not produced by a taped forward pass",
            ));
        }

        // Collect the reachable recorded subgraph.
        let mut seen: HashMap<usize, Tensor> = HashMap::new();
        let mut recorded: Vec<Tensor> = Vec::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.contains_key(&t.ptr()) {
                continue;
            }
            seen.insert(t.ptr(), t.clone());
            if let Some(node) = &t.inner.node {
                recorded.push(t.clone());
                for p in &node.parents {
                    if p.requires_grad() && !seen.contains_key(&p.ptr()) {
                        stack.push(p.clone());
                    }
                }
            }
        }
        // Reverse creation order is a topological order: every consumer
        // has a larger seq than its inputs.
        recorded.sort_by(|a, b| b.inner.seq.cmp(&a.inner.seq));

        let mut flow: HashMap<usize, Vec<f64>> = HashMap::new();
        flow.insert(self.ptr(), vec![1.0]);

        for t in &recorded {
            let Some(grad) = flow.remove(&t.ptr()) else {
                continue;
            };
            t.accumulate_stored_grad(&grad);
            let node = t.inner.node.as_ref().expect("recorded node");
            let out_data = t.inner.data.borrow();
            let partials = (node.backward)(&BackwardArgs {
                out_data: &out_data,
                out_grad: &grad,
            });
            drop(out_data);
            assert_eq!(
                partials.len(),
                node.parents.len(),
                "backward rule of {} returned {} partials for {} parents",
                node.op,
                partials.len(),
                node.parents.len()
            );
            for (parent, partial) in node.parents.iter().zip(partials) {
                let Some(partial) = partial else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                debug_assert_eq!(partial.len(), parent.numel(), "partial size in {}", node.op);
                match flow.get_mut(&parent.ptr()) {
                    Some(buf) => {
                        for (b, d) in buf.iter_mut().zip(&partial) {
                            *b += d;
                        }
                    }
                    None => {
                        flow.insert(parent.ptr(), partial);
                    }
                }
            }
        }

        // Whatever remains in the scratch map targets leaves.
        for (ptr, grad) in flow {
            if let Some(t) = seen.get(&ptr) {
                t.accumulate_stored_grad(&grad);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_shape_and_finiteness() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2], vec![1.0, f64::NAN]).is_err());
        let t = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.relu().unwrap();
        assert!(y.backward().is_err());
    }

    #[test]
    fn square_gradient() {
        // loss = x^2 at x = 3 -> dloss/dx = 6
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient_path() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let c = Tensor::scalar(5.0);
        // loss depends on x with coefficient zero: x*0 + c
        let y = x.scale(0.0).unwrap().add(&c).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![12.0]);
    }

    #[test]
    fn gradient_linearity() {
        // backward(l1 + l2) == backward(l1) then backward(l2), elementwise.
        let build = || {
            let x = Tensor::param(&[2], vec![0.3, -1.2]).unwrap();
            let l1 = x.mul(&x).unwrap().sum_all().unwrap();
            let l2 = x.relu().unwrap().sum_all().unwrap();
            (x, l1, l2)
        };
        let (xa, l1a, l2a) = build();
        l1a.add(&l2a).unwrap().backward().unwrap();
        let (xb, l1b, l2b) = build();
        l1b.backward().unwrap();
        l2b.backward().unwrap();
        let ga = xa.grad_vec().unwrap();
        let gb = xb.grad_vec().unwrap();
        for (a, b) in ga.iter().zip(&gb) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_subexpression_accumulates_through_fanout() {
        // loss = sum(x + x) -> grad = 2 per element.
        let x = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = x.add(&x).unwrap().sum_all().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad_vec().unwrap(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn detach_blocks_gradients() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        let d = x.detach();
        assert!(!d.requires_grad());
        let y = d.mul(&d).unwrap();
        assert!(!y.requires_grad());
    }
}
