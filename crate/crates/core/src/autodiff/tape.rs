use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::tensor::{Scalar, Tensor};
use crate::error::{contract, Error, Result};

type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<'_, T>)>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so every node's parents have
/// smaller ids and a single reverse sweep visits them in a valid order.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient is tracked (a trainable parameter or a checked input).
    pub fn param(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        value.ensure_finite("parameter")?;
        Ok(self.leaf(value, true))
    }

    /// Leaf without gradient tracking.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        value.ensure_finite("constant")?;
        Ok(self.leaf(value, false))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: &[usize],
        backward: impl Fn(&[T], &mut GradSink<'_, T>) + 'static,
    ) -> Var<'_, T> {
        self.push_shared(Rc::new(value), parents, backward)
    }

    /// Like `push`, for ops whose backward needs the output value itself.
    pub(crate) fn push_shared(
        &self,
        value: Rc<Tensor<T>>,
        parents: &[usize],
        backward: impl Fn(&[T], &mut GradSink<'_, T>) + 'static,
    ) -> Var<'_, T> {
        debug_assert!(value.is_finite(), "op produced non-finite output");
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value,
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>> {
        contract!(
            std::ptr::eq(output.tape, self),
            "variable belongs to another tape"
        );
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        contract!(
            out.value.numel() == 1,
            "backward needs a scalar output, got shape {:?}",
            out.value.shape()
        );
        let meta: Vec<(usize, bool)> = nodes
            .iter()
            .map(|n| (n.value.numel(), n.requires_grad))
            .collect();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        if out.requires_grad {
            grads[output.id] = Some(vec![T::ONE]);
        }
        for id in (0..=output.id).rev() {
            let Some(backward) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let (lower, _) = grads.split_at_mut(id);
            let mut sink = GradSink {
                grads: lower,
                meta: &meta,
            };
            backward(&g, &mut sink);
            grads[id] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Accumulator handed to backward closures; only parents that track
/// gradients receive a buffer.
pub struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Vec<T>>],
    meta: &'a [(usize, bool)],
}

impl<T: Scalar> GradSink<'_, T> {
    /// Mutable gradient buffer for `id`, zero-initialized on first use, or
    /// `None` when that node does not track gradients.
    pub fn buf(&mut self, id: usize) -> Option<&mut [T]> {
        let (numel, requires) = self.meta[id];
        if !requires {
            return None;
        }
        Some(
            self.grads[id]
                .get_or_insert_with(|| vec![T::ZERO; numel])
                .as_mut_slice(),
        )
    }

    pub fn wants(&self, id: usize) -> bool {
        self.meta[id].1
    }

    pub fn add(&mut self, id: usize, g: &[T]) {
        if let Some(buf) = self.buf(id) {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
    }
}

/// Gradients collected by [`Tape::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `var`, zeros if the output did not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Tensor<T> {
        let shape = self.shapes[var.id].clone();
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Tensor<T> {
        let shape = self.shapes[var.id].clone();
        match self.grads[var.id].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a single-element variable.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.numel(), 1, "item() on non-scalar {:?}", v.shape());
        v.data()[0]
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        contract!(
            std::ptr::eq(self.tape, other.tape),
            "variables recorded on different tapes"
        );
        Ok(())
    }
}
