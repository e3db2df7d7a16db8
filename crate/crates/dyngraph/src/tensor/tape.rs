//! Reverse-mode autodiff over a Wengert list.
//!
//! A [`Tape`] owns every intermediate [`Tensor`] of one forward pass plus, per
//! node, a closure that maps the output gradient to input-gradient
//! contributions. [`Tape::backward`] replays the list in reverse, accumulating
//! contributions where values fan out. Tapes are built per training step and
//! dropped afterwards; trainable leaves are registered by name so gradients
//! come back keyed the same way as the parameter store.

use std::collections::BTreeMap;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape. Plain index; cheap to copy.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Maps the gradient w.r.t. a node's output to `(input_node, contribution)`
/// pairs. Closures capture Arc-shared clones of whatever forward values they
/// need, so they stay valid however the tape grows afterwards.
pub(crate) type GradFn<S> = Box<dyn Fn(&Tensor<S>) -> Vec<(usize, Tensor<S>)> + Send>;

struct Node<S> {
    value: Tensor<S>,
    needs_grad: bool,
    grad_fn: Option<GradFn<S>>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    params: BTreeMap<String, usize>,
    grad_enabled: bool,
    spent: bool,
}

/// Named gradients produced by one backward pass.
pub struct Gradients<S> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: BTreeMap::new(), grad_enabled: true, spent: false }
    }

    /// Tape that records values only — no gradient bookkeeping. Used for
    /// evaluation forward passes.
    pub fn no_grad() -> Self {
        Tape { grad_enabled: false, ..Tape::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// True when gradient bookkeeping is required for an op over these inputs.
    pub(crate) fn wants_grad(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|&v| self.needs_grad(v))
    }

    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<S>,
        grad_fn: Option<GradFn<S>>,
    ) -> Result<Var> {
        value.check_finite(op)?;
        let needs_grad = grad_fn.is_some();
        self.nodes.push(Node { value, needs_grad, grad_fn });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf with no gradient (input data, masks, precomputed constants).
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        value.check_finite("constant")?;
        self.nodes.push(Node { value, needs_grad: false, grad_fn: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Named trainable leaf. Registering the same name twice returns the
    /// original node, so each parameter appears exactly once per tape.
    pub fn param(&mut self, name: &str, value: &Tensor<S>) -> Result<Var> {
        if let Some(&id) = self.params.get(name) {
            return Ok(Var(id));
        }
        value.check_finite("param")?;
        let needs_grad = self.grad_enabled;
        self.nodes.push(Node { value: value.clone(), needs_grad, grad_fn: None });
        let id = self.nodes.len() - 1;
        self.params.insert(name.to_string(), id);
        Ok(Var(id))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Reverse sweep from a scalar `loss`. Returns gradients for every
    /// registered parameter (zeros where a parameter did not influence the
    /// loss). Consumes the tape's backward capacity: a second call errors.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        if self.spent {
            return Err(Error::invalid("backward", "tape already consumed by a previous backward"));
        }
        if !self.grad_enabled {
            return Err(Error::invalid("backward", "tape was created in no-grad mode"));
        }
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss_shape),
            ));
        }
        self.spent = true;

        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&loss_shape, S::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(grad_fn) = &node.grad_fn else { continue };
            let Some(gout) = &grads[id] else { continue };
            for (pid, contrib) in grad_fn(gout) {
                debug_assert!(pid < id, "gradient flowing forward on the tape");
                if !self.nodes[pid].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    contrib.shape(),
                    self.nodes[pid].value.shape(),
                    "gradient shape mismatch into node {pid}"
                );
                match &mut grads[pid] {
                    slot @ None => *slot = Some(contrib),
                    Some(acc) => {
                        let dst = acc.data_mut();
                        for (d, s) in dst.iter_mut().zip(contrib.data()) {
                            *d += *s;
                        }
                    }
                }
            }
        }

        let mut map = BTreeMap::new();
        for (name, &id) in &self.params {
            let g = match grads[id].take() {
                Some(g) => g,
                None => Tensor::zeros(self.nodes[id].value.shape()),
            };
            g.check_finite("backward")?;
            map.insert(name.clone(), g);
        }
        Ok(Gradients { map })
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}
