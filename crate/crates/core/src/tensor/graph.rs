use std::cell::RefCell;
use std::sync::Arc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Inputs handed to a backward closure: upstream gradient, the op's own
/// output value and the values of its parents in recording order.
pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a [T],
    pub out: &'a [T],
    pub inputs: Vec<&'a [T]>,
}

/// Returns one gradient per parent; `None` means "no contribution".
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Append-only tape of recorded operations. Node ids are a topological order.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Graph`].
pub struct Var<'g, T: Real> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. `requires_grad` leaves receive gradients in [`Graph::backward`].
    pub fn leaf(&self, t: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let shape = t.shape().to_vec();
        self.push_node(Node {
            shape,
            value: Arc::new(t.into_data()),
            parents: vec![],
            backward: None,
            requires_grad,
        })
    }

    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.leaf(t, false)
    }

    /// Leaf sharing storage with a parameter buffer (no copy).
    pub(crate) fn shared_leaf(&self, shape: &[usize], value: Arc<Vec<T>>) -> Var<'_, T> {
        self.push_node(Node {
            shape: shape.to_vec(),
            value,
            parents: vec![],
            backward: None,
            requires_grad: true,
        })
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { graph: self, id: nodes.len() - 1 }
    }

    pub(crate) fn record(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(Node {
            shape,
            value: Arc::new(value),
            parents: ids,
            backward: requires_grad.then_some(backward),
            requires_grad,
        })
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Vec<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let n = loss.id + 1;
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        let mut visited = 0;
        for id in (0..n).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            visited += 1;
            if let Some(bw) = &node.backward {
                let ctx = BackwardCtx {
                    grad: &grad,
                    out: &node.value,
                    inputs: node.parents.iter().map(|&p| nodes[p].value.as_slice()).collect(),
                };
                let parent_grads = bw(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.len(), nodes[p].value.len());
                    match &mut grads[p] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Ok(Gradients { grads, visited })
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Number of nodes the sweep processed; each reachable node counts once.
    pub fn visited(&self) -> usize {
        self.visited
    }

    pub(crate) fn take(&mut self, id: usize) -> Option<Vec<T>> {
        self.grads.get_mut(id).and_then(Option::take)
    }
}

impl<'g, T: Real> Var<'g, T> {
    /// The graph this var was recorded on.
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Tensor<T> {
        Tensor::new(&self.shape(), self.graph.value_of(self.id).to_vec()).expect("node shape")
    }

    pub(crate) fn raw(&self) -> Arc<Vec<T>> {
        self.graph.value_of(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> T {
        self.raw()[0]
    }
}
