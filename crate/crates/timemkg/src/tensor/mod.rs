//! Dense row-major f64 tensors with reverse-mode gradients.
//!
//! A [`Tape`] records every differentiable operation whose inputs are
//! attached to it; [`Tape::backward`] replays the records in reverse and
//! accumulates gradients into each participating tensor. Tensors hold a
//! weak reference to their tape, so dropping the tape detaches them
//! without leaking the recorded graph.

mod ops;

pub mod gradcheck;


pub use ops::linear;

use std::cell::RefCell;
use std::fmt;
use std::rc::{Rc, Weak};

use crate::error::{Error, Result};

type BackwardStep = Box<dyn Fn()>;
type TapeEntries = RefCell<Vec<BackwardStep>>;

/// Records operations for reverse-mode differentiation.
#[derive(Clone, Default)]
pub struct Tape {
    entries: Rc<TapeEntries>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all recorded operations. Parameter tensors stay attached and
    /// keep their gradients; call [`Tensor::zero_grad`] per parameter to
    /// clear those.
    pub fn reset(&self) {
        self.entries.borrow_mut().clear();
    }

    /// Reverse sweep from a scalar loss. Each recorded operation is
    /// visited exactly once, in reverse recording order (a valid
    /// topological order of the forward graph).
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape()),
            ));
        }
        loss.accumulate_grad(&[1.0]);
        let entries = self.entries.borrow();
        for step in entries.iter().rev() {
            step();
        }
        Ok(())
    }

    fn push(&self, step: BackwardStep) {
        self.entries.borrow_mut().push(step);
    }

    fn downgrade(&self) -> Weak<TapeEntries> {
        Rc::downgrade(&self.entries)
    }

    fn ptr_eq(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.entries, &other.entries)
    }
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    tape: Option<Weak<TapeEntries>>,
}

/// Dense row-major tensor of 64-bit floats. Cloning is cheap: clones share
/// the same storage and gradient buffer.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl Tensor {
    /// Untracked constant tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(
                "new",
                format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Self(Rc::new(Inner {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            requires_grad: false,
            grad: RefCell::new(None),
            tape: None,
        })))
    }

    /// Trainable leaf attached to `tape`; gradients accumulate into it
    /// during [`Tape::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>, tape: &Tape) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self(Rc::new(Inner {
            shape: t.0.shape.clone(),
            data: RefCell::new(t.to_vec()),
            requires_grad: true,
            grad: RefCell::new(None),
            tape: Some(tape.downgrade()),
        })))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel]).expect("zeros: shape/product always consistent")
    }

    pub fn scalar(value: f64) -> Self {
        Self::new(&[1], vec![value]).expect("scalar tensor")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::new(&[n, d], rows.concat())
    }

    fn traced(shape: Vec<usize>, data: Vec<f64>, tape: Option<&Tape>) -> Self {
        Self(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            requires_grad: false,
            grad: RefCell::new(None),
            tape: tape.map(Tape::downgrade),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data.borrow()[0]
    }

    /// Replace the stored values. Shape stays fixed.
    pub fn set_data(&self, data: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_data length mismatch");
        d.copy_from_slice(data);
    }

    /// Value at a flat index.
    pub fn at(&self, idx: usize) -> f64 {
        self.0.data.borrow()[idx]
    }

    /// Nudge a single element (used by finite-difference checks and the
    /// optimizer).
    pub fn nudge(&self, idx: usize, delta: f64) {
        self.0.data.borrow_mut()[idx] += delta;
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Accumulated gradient, if any has flowed into this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Untracked copy of the current values.
    pub fn detach(&self) -> Tensor {
        Tensor::new(&self.0.shape, self.to_vec()).expect("detach preserves shape")
    }

    pub fn is_tracked(&self) -> bool {
        self.live_tape().is_some()
    }

    fn live_tape(&self) -> Option<Tape> {
        self.0
            .tape
            .as_ref()
            .and_then(Weak::upgrade)
            .map(|entries| Tape { entries })
    }

    fn accumulate_grad(&self, contrib: &[f64]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    /// Gradient buffer read for backward closures; zeros-shaped `None`
    /// means no gradient reached the output and the closure is a no-op.
    fn grad_ref(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    fn borrow_data(&self) -> std::cell::Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("data", &self.0.data.borrow())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// The tape shared by all tracked inputs, if any. Panics when two inputs
/// are attached to different tapes: that is a wiring bug, not a runtime
/// condition.
fn joint_tape(inputs: &[&Tensor]) -> Option<Tape> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some(tape) = t.live_tape() {
            match &found {
                Some(existing) => {
                    assert!(existing.ptr_eq(&tape), "inputs recorded on different tapes");
                }
                None => found = Some(tape),
            }
        }
    }
    found
}

/// Accumulate into `t` only when it participates in a tape.
fn accum_if_tracked(t: &Tensor, contrib: &[f64]) {
    if t.0.tape.is_some() {
        t.accumulate_grad(contrib);
    }
}
