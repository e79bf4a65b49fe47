use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::Tensor;

/// Computes parent gradients from the output gradient. The flag slice marks
/// which parents need a gradient; others may be returned as `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// Records operations in evaluation order for reverse-mode differentiation.
///
/// A tape is built per forward pass and dropped afterwards. Values that do
/// not depend on any gradient-requiring leaf carry no backward closure, so a
/// tape with only constants behaves like plain inference.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable input: gradients are accumulated for it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.insert(Rc::new(value), Vec::new(), None, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.insert(Rc::new(value), Vec::new(), None, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert(
        &self,
        value: Rc<Tensor>,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        parents: &[Var<'t>],
        backward: impl Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    ) -> Var<'t> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| {
                assert!(std::ptr::eq(p.tape, self), "mixing vars from different tapes");
                nodes[p.id].requires_grad
            })
        };
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.insert(
            Rc::new(value),
            parents.iter().map(|p| p.id).collect(),
            backward,
            requires_grad,
        )
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from a single-element `root`.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.id].value.len(),
            1,
            "backward root must hold a single element"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let (Some(backward), Some(grad)) = (node.backward.as_ref(), grads[id].as_ref()) else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&parent, pg), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[parent].value.shape());
                match grads[parent].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[parent] = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if any path reached it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but materializes zeros for unreached vars.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a single-element var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value())
            .finish()
    }
}
