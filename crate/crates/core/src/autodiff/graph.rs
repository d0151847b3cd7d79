use std::collections::{BTreeMap, HashMap};

use crate::autodiff::ops::Op;
use crate::error::{invalid, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub requires_grad: bool,
}

/// Per-step computation tape.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it and a single reverse sweep visits each node once. A graph borrows the
/// parameter registry it reads from; frozen parameters enter as constants
/// and can never receive a gradient entry.
pub struct Graph<'s, T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    store: Option<&'s ParamStore<T>>,
    bound: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            bound: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A graph with no parameter registry (leaves only).
    pub fn detached() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            bound: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// Disables gradient tracking for everything recorded afterwards.
    pub fn no_grad(mut self) -> Self {
        self.grad_enabled = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Bytes held by recorded node values.
    pub fn value_bytes(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum::<usize>() * std::mem::size_of::<T>()
    }

    pub fn store(&self) -> Option<&'s ParamStore<T>> {
        self.store
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.grad_enabled;
        self.push_node(value, Op::Leaf, Vec::new(), rg)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a registered parameter; trainable ones become gradient leaves.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let p = store.get(id);
        let v = self.leaf(p.tensor.clone(), !p.frozen);
        self.bound.insert(id, v);
        v
    }

    /// Routes later [`Graph::param`] calls for `id` to `v`, which lets a
    /// module run on a detached graph with its parameters as plain leaves.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound.insert(id, v);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let ids = inputs.iter().map(|v| v.0).collect();
        self.push_node(value, op, ids, rg)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op, inputs: Vec<usize>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Var(id)
    }

    /// The earliest node holding a NaN/Inf. Inputs precede their node, so
    /// this node's inputs are all finite.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (i, n.op.name()))
    }

    pub fn non_finite_error(&self) -> Error {
        match self.first_non_finite() {
            Some((node, op)) => Error::NonFinite { op, node },
            None => Error::NonFinite { op: "unknown", node: 0 },
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients::empty());
        }
        grads[loss.0] = Some(Tensor::from_parts(
            self.nodes[loss.0].value.shape().to_vec(),
            vec![T::one()],
        ));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let need: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let gin = node.op.backward(&inputs, &node.value, &gout, &need)?;
            for ((&j, g), n) in node.inputs.iter().zip(gin).zip(need) {
                let Some(g) = g else { continue };
                if !n {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[j].value.shape(), "grad shape for {}", node.op.name());
                match grads[j].as_mut() {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                    None => grads[j] = Some(g),
                }
            }
            // leaves keep their gradient; intermediates are consumed
        }
        let mut out = Gradients::empty();
        for (id, &v) in &self.bound {
            if let Some(g) = grads.get(v.0).and_then(|g| g.as_ref()) {
                out.params.insert(*id, g.clone());
            }
        }
        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad {
                    out.leaves.insert(i, g);
                }
            }
        }
        Ok(out)
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    params: BTreeMap<ParamId, Tensor<T>>,
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    fn empty() -> Self {
        Self {
            params: BTreeMap::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient of a leaf created with [`Graph::leaf`].
    pub fn leaf(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Gradients keyed by parameter name.
    pub fn named<'a>(&'a self, store: &'a ParamStore<T>) -> BTreeMap<&'a str, &'a Tensor<T>> {
        self.params
            .iter()
            .map(|(&id, g)| (store.get(id).name.as_str(), g))
            .collect()
    }
}
