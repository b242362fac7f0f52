use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Backward rule of a recorded operation. Receives the gradient of the
/// operation's output and, per parent, whether that parent needs a gradient.
/// Returns one optional gradient per parent, each shaped like the parent.
pub type BackwardFn = Box<dyn FnOnce(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Ordered record of executed operations.
///
/// Leaves are registered with [`Tape::leaf`]; every op appends a node holding
/// its output and a backward closure over the inputs it saved. [`Tape::backward`]
/// replays the record in reverse exactly once and then releases it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    released: bool,
}

/// Result of a backward pass: gradient per recorded value (where one exists).
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Node indices whose backward rule ran, in execution order of the replay.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. It participates in differentiation iff
    /// `tensor.requires_grad()` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: Rc::new(tensor),
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_grad())
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(crate) fn rc(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends an operation result. Fails if the value is not finite.
    pub fn push(
        &mut self,
        op: &str,
        value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if self.released {
            return Err(Error::TapeReleased);
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode pass from a scalar `loss`. Releases the tape afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.released {
            return Err(Error::TapeReleased);
        }
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut visited = Vec::new();

        for id in (0..=loss.0).rev() {
            let Some(backward) = self.nodes[id].backward.take() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            visited.push(id);
            let parents = self.nodes[id].parents.clone();
            let needs: Vec<bool> = parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((&p, pg), need) in parents.iter().zip(parent_grads).zip(needs) {
                let (Some(pg), true) = (pg, need) else { continue };
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }

        self.released = true;
        for node in &mut self.nodes {
            node.backward = None;
        }
        Ok(Gradients { grads, visited })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn([3, 2], |i| i as f64));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn disjoint_uses_accumulate() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new([2], vec![0.5, -1.0]).unwrap());
        let a = tape.scale(x, 3.0).unwrap();
        let b = tape.scale(x, -0.5).unwrap();
        let sa = tape.sum(a).unwrap();
        let sb = tape.sum(b).unwrap();
        let total = tape.add(sa, sb).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.5, 2.5]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full([2], 1.0));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::TapeReleased)));
        assert!(matches!(tape.sum(x), Err(Error::TapeReleased)));
    }

    #[test]
    fn replay_visits_each_op_once_in_reverse() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full([4], 0.3));
        let a = tape.sigmoid(x).unwrap();
        let b = tape.mul(a, x).unwrap();
        let c = tape.relu(b).unwrap();
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.visit_order(), &[s.0, c.0, b.0, a.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full([2], 1.0));
        let k = tape.constant(Tensor::full([2], 2.0));
        let p = tape.mul(x, k).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(k).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full([2], 1.0));
        assert!(tape.backward(x).is_err());
    }
}
