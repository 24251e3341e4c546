//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its value and, when any input needs
//! a gradient, a closure mapping the output gradient to input gradients.
//! Nodes are stored in creation order, which is a topological order, so the
//! backward sweep simply walks the list in reverse.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Maps the output gradient to one optional gradient per parent. The flags say
/// which parents actually need one.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that records no backward rules; parameters enter as constants.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            param: None,
        })
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad: self.grad_enabled,
            parents: Vec::new(),
            backward: None,
            param: None,
        })
    }

    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(Node {
            value: Rc::clone(&store.params[id.0].value),
            requires_grad: self.grad_enabled,
            parents: Vec::new(),
            backward: None,
            param: Some(id),
        })
    }

    pub(crate) fn op(&self, value: Tensor, parents: &[Var<'_>], backward: BackwardFn) -> Var<'_> {
        let nodes = self.nodes.borrow();
        let requires_grad = self.grad_enabled && parents.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then_some(backward),
            param: None,
        })
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must hold one value, has shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));
        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                Some(rule) => {
                    let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
                    let parent_grads = rule(&g, &needs);
                    for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                        if let (Some(pg), true) = (pg, need) {
                            match &mut grads[p] {
                                Some(acc) => acc.add_assign(&pg),
                                slot => *slot = Some(pg),
                            }
                        }
                    }
                }
                None => {
                    if let Some(pid) = node.param {
                        out.params.push((pid, g.clone()));
                    }
                    out.leaves.insert(id, g);
                }
            }
        }
        Ok(out)
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Gradients produced by one backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(&var.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Rc<Tensor>,
    pub grad: Tensor,
}

/// Named trainable tensors with accumulated gradients.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            grad: Tensor::zeros(value.shape().to_vec()),
            name,
            value: Rc::new(value),
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.params {
            self.params[id.0].grad.add_assign(g);
        }
    }

    /// Splits into values (mutable) and gradients for an optimizer step.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &Tensor)> {
        self.params.iter_mut().map(|p| (Rc::make_mut(&mut p.value), &p.grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;

    #[test]
    fn backward_reaches_params_and_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new([2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert!(store.add("w", Tensor::zeros([1])).is_err());
        let tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::new([2], vec![3.0, 4.0]).unwrap());
        let loss = ops::dot_const(ops::add(wv, x).unwrap(), &Tensor::new([2], vec![1.0, -1.0]).unwrap()).unwrap();
        let g = tape.backward(loss).unwrap();
        store.accumulate(&g);
        assert_eq!(store.get(w).grad.data(), &[1.0, -1.0]);
        let g2 = tape.backward(loss).unwrap();
        store.accumulate(&g2);
        assert_eq!(store.get(w).grad.data(), &[2.0, -2.0]);
        store.zero_grad();
        assert_eq!(store.get(w).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn inference_tape_records_no_rules() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::ones([3])).unwrap();
        let tape = Tape::inference();
        let v = tape.param(&store, w);
        assert!(!v.requires_grad());
        let y = ops::add(v, v).unwrap();
        assert!(!y.requires_grad());
        assert_eq!(y.value().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones([2]));
        assert!(tape.backward(x).is_err());
    }
}
