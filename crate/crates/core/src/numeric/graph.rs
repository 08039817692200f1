//! Reverse-mode tape.
//!
//! Every operation records its output value together with a hand-derived
//! backward rule. `backward` walks the tape once in reverse insertion order,
//! which is a valid topological order because inputs always precede outputs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward rule sees.
pub struct BackCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub output: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    /// Whether each input needs a gradient; rules may skip work when false.
    pub needs: Vec<bool>,
}

pub type BackwardFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Graph<T> {
    values: Vec<Tensor<T>>,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { values: Vec::new(), nodes: Vec::new(), params: HashMap::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.values.push(value);
        self.nodes.push(Node { parents: Vec::new(), backward: None, requires_grad: false });
        Var(self.values.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.values.push(store.value(id).clone());
        self.nodes.push(Node { parents: Vec::new(), backward: None, requires_grad: true });
        let v = Var(self.values.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Leaf that is differentiated but not tied to a parameter (used for
    /// input-gradient checks).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.values.push(value);
        self.nodes.push(Node { parents: Vec::new(), backward: None, requires_grad: true });
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    /// Scalar value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        self.values[v.0].data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.values.push(value);
        self.nodes.push(Node {
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.values.len() - 1)
    }

    /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        if !self.values[loss.0].is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        self.grads = vec![None; self.values.len()];
        self.grads[loss.0] = Some(Tensor::full(self.values[loss.0].shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(rule) = &node.backward {
                let ctx = BackCtx {
                    grad: &grad,
                    output: &self.values[i],
                    inputs: node.parents.iter().map(|&p| &self.values[p]).collect(),
                    needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
                };
                let parent_grads = rule(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.shape(), self.values[p].shape(), "grad shape for node {p}");
                    match &mut self.grads[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds leaf gradients into the matching parameters.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (&id, &var) in &self.params {
            if let Some(g) = self.grad(var) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
