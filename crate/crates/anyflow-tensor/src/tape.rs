use std::cell::RefCell;
use std::sync::Arc;

use crate::data::TensorData;
use crate::error::{Result, TensorError};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Gradient accumulator passed to backward closures.
///
/// `buf` lazily allocates a zeroed gradient buffer for the requested
/// variable; closures scatter their vector-Jacobian products into it.
pub struct GradSink<'a, T> {
    numel: &'a [usize],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> GradSink<'_, T> {
    pub fn buf(&mut self, v: Var) -> &mut [T] {
        self.grads[v.0].get_or_insert_with(|| vec![T::zero(); self.numel[v.0]])
    }
}

type BackFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    /// True when a gradient must flow through this node.
    needs_grad: bool,
    /// True only for leaves created with `requires_grad`.
    grad_leaf: bool,
    back: Option<BackFn<T>>,
    /// Accumulated gradient; populated on leaves by `backward`.
    grad: Option<Vec<T>>,
}

/// Append-only record of a forward computation.
///
/// Insertion order is a topological order, so `backward` is a single reverse
/// sweep. A tape is confined to one thread; run independent tapes for
/// parallel work.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    param_bindings: RefCell<Vec<(ParamId, Var)>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: true, param_bindings: RefCell::new(Vec::new()) }
    }

    /// A tape that records values only; no backward closures are kept.
    pub fn no_grad() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: false, param_bindings: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn leaf(&self, data: TensorData<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push_node(Node {
            shape: data.shape().to_vec(),
            data: data.shared(),
            needs_grad: rg,
            grad_leaf: rg,
            back: None,
            grad: None,
        })
    }

    pub fn constant(&self, data: TensorData<T>) -> Var {
        self.leaf(data, false)
    }

    pub fn scalar(&self, value: T) -> Var {
        self.constant(TensorData::scalar(value))
    }

    /// Registers a parameter from `store` as a differentiable leaf and
    /// remembers the binding so the caller can route gradients back.
    pub fn bind_param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.leaf(store.get(id).clone(), true);
        self.param_bindings.borrow_mut().push((id, v));
        v
    }

    /// The `(ParamId, Var)` pairs registered through `bind_param`.
    pub fn param_bindings(&self) -> Vec<(ParamId, Var)> {
        self.param_bindings.borrow().clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].data.len()
    }

    /// The forward value of a node (shared, zero-copy).
    pub fn value(&self, v: Var) -> TensorData<T> {
        let nodes = self.nodes.borrow();
        TensorData::from_shared(nodes[v.0].shape.clone(), Arc::clone(&nodes[v.0].data))
    }

    /// Accumulated gradient of a `requires_grad` leaf, if backward has run.
    pub fn leaf_grad(&self, v: Var) -> Option<TensorData<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad.as_ref().map(|g| {
            TensorData::new(node.shape.clone(), g.clone()).expect("grad shape matches node")
        })
    }

    pub fn zero_leaf_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Overwrites the stored value of a leaf (used by finite differencing).
    pub fn set_leaf_value(&self, v: Var, data: TensorData<T>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[v.0];
        if node.back.is_some() {
            return Err(TensorError::arg("set_leaf_value", "not a leaf".to_string()));
        }
        if node.shape != data.shape() {
            return Err(TensorError::shape(
                "set_leaf_value",
                format!("leaf shape {:?} vs new {:?}", node.shape, data.shape()),
            ));
        }
        node.data = data.shared();
        Ok(())
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub(crate) fn data(&self, v: Var) -> Arc<Vec<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].data)
    }

    fn push_node(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// Records an op result. `back` is dropped when no input needs a
    /// gradient or the tape is in no-grad mode.
    pub(crate) fn push_op(
        &self,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[Var],
        back: impl FnOnce() -> BackFn<T>,
    ) -> Var {
        let needs = self.grad_enabled && inputs.iter().any(|&v| self.needs_grad(v));
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push_node(Node {
            shape,
            data: Arc::new(data),
            needs_grad: needs,
            grad_leaf: false,
            back: if needs { Some(back()) } else { None },
            grad: None,
        })
    }

    /// Records an op that reuses the input buffer (reshape-style).
    pub(crate) fn push_view(
        &self,
        shape: Vec<usize>,
        data: Arc<Vec<T>>,
        input: Var,
        back: impl FnOnce() -> BackFn<T>,
    ) -> Var {
        let needs = self.grad_enabled && self.needs_grad(input);
        self.push_node(Node {
            shape,
            data,
            needs_grad: needs,
            grad_leaf: false,
            back: if needs { Some(back()) } else { None },
            grad: None,
        })
    }

    /// Reverse sweep from `loss`. Gradients accumulate (`+=`) into every
    /// `requires_grad` leaf; leaves off the path get zero-filled buffers.
    pub fn backward(&self, loss: Var) -> Result<()> {
        {
            let nodes = self.nodes.borrow();
            let n = nodes[loss.0].data.len();
            if n != 1 {
                return Err(TensorError::NonScalarLoss { numel: n });
            }
            if !nodes[loss.0].needs_grad {
                return Err(TensorError::NoGradPath);
            }
        }

        let nodes = self.nodes.borrow();
        let numel: Vec<usize> = nodes.iter().map(|n| n.data.len()).collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = nodes[id].back.as_ref() {
                let mut sink = GradSink { numel: &numel, grads: &mut grads };
                back(&g, &mut sink);
            } else if nodes[id].grad_leaf {
                grads[id] = Some(g);
            }
        }
        drop(nodes);

        let mut nodes = self.nodes.borrow_mut();
        for (id, node) in nodes.iter_mut().enumerate() {
            if !node.grad_leaf {
                continue;
            }
            let contribution = grads[id].take();
            match (&mut node.grad, contribution) {
                (Some(acc), Some(c)) => {
                    for (a, b) in acc.iter_mut().zip(&c) {
                        *a = *a + *b;
                    }
                }
                (slot @ None, Some(c)) => *slot = Some(c),
                (Some(_), None) => {}
                (slot @ None, None) => *slot = Some(vec![T::zero(); node.data.len()]),
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}
