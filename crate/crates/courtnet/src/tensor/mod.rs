//! Tape-based reverse-mode automatic differentiation over dense
//! n-dimensional arrays (row-major, up to 4 axes).
//!
//! A [`Tape`] records every differentiable operation whose inputs are
//! tracked on it. Calling [`Tensor::backward`] on a scalar result walks
//! the record in reverse and accumulates gradients for every tracked
//! tensor, retrievable through [`Gradients`].
//!
//! Tensors are immutable after creation; a tape and its tensors are
//! confined to one thread (`Rc` internally, so the compiler enforces
//! this). Shape mismatches and tape misuse are contract violations and
//! panic with a description of the offending shapes.

mod conv;
mod gradcheck;
mod matmul;
mod ops;

pub use gradcheck::{grad_check, random_tensor};

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::rc::Rc;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable as tensor element: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Sum + Display + Debug + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

type BackFn<T> = Box<dyn Fn(&[T], &mut GradStore<T>)>;

struct Node<T: Scalar> {
    len: usize,
    back: Option<BackFn<T>>,
}

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

/// Execution-ordered record of differentiable operations.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                spent: false,
            })),
        }
    }

    fn same_as(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn push(&self, len: usize, back: Option<BackFn<T>>) -> usize {
        let mut inner = self.inner.borrow_mut();
        assert!(
            !inner.spent,
            "tape already consumed by backward; build a new tape"
        );
        let id = inner.nodes.len();
        inner.nodes.push(Node { len, back });
        id
    }

    /// Registers `t` as a tracked leaf and returns the tracked handle.
    pub fn var(&self, t: &Tensor<T>) -> Tensor<T> {
        let id = self.push(t.len(), None);
        Tensor {
            data: Rc::clone(&t.data),
            shape: t.shape.clone(),
            track: Some((self.clone(), id)),
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-node gradient buffers, indexed by tape node id.
pub struct GradStore<T: Scalar> {
    bufs: Vec<Option<Vec<T>>>,
    lens: Vec<usize>,
}

impl<T: Scalar> GradStore<T> {
    fn new(lens: Vec<usize>) -> Self {
        GradStore {
            bufs: vec![None; lens.len()],
            lens,
        }
    }

    /// Mutable zero-initialized gradient buffer for node `id`.
    pub fn buf_mut(&mut self, id: usize) -> &mut [T] {
        if self.bufs[id].is_none() {
            self.bufs[id] = Some(vec![T::zero(); self.lens[id]]);
        }
        self.bufs[id].as_mut().unwrap()
    }
}

/// Result of a backward pass: gradients keyed by tracked tensor.
pub struct Gradients<T: Scalar> {
    store: GradStore<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `t`, shaped like `t`. `None` if `t` was
    /// untracked or unreachable from the loss.
    pub fn wrt(&self, t: &Tensor<T>) -> Option<Tensor<T>> {
        let (_, id) = t.track.as_ref()?;
        let buf = self.store.bufs[*id].as_ref()?;
        Some(Tensor::from_vec(buf.clone(), t.shape.clone()))
    }
}

/// Dense n-dimensional array handle, optionally tracked on a tape.
pub struct Tensor<T: Scalar> {
    data: Rc<Vec<T>>,
    shape: Vec<usize>,
    track: Option<(Tape<T>, usize)>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            data: Rc::clone(&self.data),
            shape: self.shape.clone(),
            track: self.track.as_ref().map(|(t, i)| (t.clone(), *i)),
        }
    }
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor(shape={:?}, tracked={})", self.shape, self.track.is_some())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(data: Vec<T>, shape: Vec<usize>) -> Self {
        assert!(
            shape.len() <= 4 && !shape.is_empty(),
            "tensor rank must be 1..=4, got {:?}",
            shape
        );
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {:?}", shape);
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            data: Rc::new(data),
            shape,
            track: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor::from_vec(vec![T::zero(); n], shape)
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = numel(&shape);
        Tensor::from_vec(vec![v; n], shape)
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(vec![v], vec![1])
    }

    pub fn eye(n: usize) -> Self {
        let mut d = vec![T::zero(); n * n];
        for i in 0..n {
            d[i * n + i] = T::one();
        }
        Tensor::from_vec(d, vec![n, n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn is_tracked(&self) -> bool {
        self.track.is_some()
    }

    /// Same data, no tape participation.
    pub fn detach(&self) -> Tensor<T> {
        Tensor {
            data: Rc::clone(&self.data),
            shape: self.shape.clone(),
            track: None,
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| !v.is_finite())
    }

    /// Reverse pass from a scalar result. Consumes the tape: a second
    /// backward on the same tape panics.
    pub fn backward(&self) -> Gradients<T> {
        let (tape, id) = self
            .track
            .as_ref()
            .expect("backward on untracked tensor");
        assert_eq!(self.len(), 1, "backward requires a scalar, got {:?}", self.shape);
        let inner = tape.inner.borrow();
        assert!(!inner.spent, "tape already consumed by backward");
        drop(inner);
        tape.inner.borrow_mut().spent = true;

        let inner = tape.inner.borrow();
        let lens: Vec<usize> = inner.nodes.iter().map(|n| n.len).collect();
        let mut store = GradStore::new(lens);
        store.bufs[*id] = Some(vec![T::one()]);
        for nid in (0..=*id).rev() {
            if let Some(g) = store.bufs[nid].take() {
                if let Some(back) = &inner.nodes[nid].back {
                    back(&g, &mut store);
                }
                store.bufs[nid] = Some(g);
            }
        }
        Gradients { store }
    }

    /// Tape handle and node id shared by `inputs` (None if all untracked).
    fn join_tapes(inputs: &[&Tensor<T>]) -> Option<Tape<T>> {
        let mut found: Option<Tape<T>> = None;
        for t in inputs {
            if let Some((tape, _)) = &t.track {
                match &found {
                    None => found = Some(tape.clone()),
                    Some(f) => assert!(f.same_as(tape), "operands recorded on different tapes"),
                }
            }
        }
        found
    }

    /// Registers `data` as the result of an op over `inputs`; `back` is
    /// only retained when some input is tracked.
    pub(crate) fn from_op(
        inputs: &[&Tensor<T>],
        data: Vec<T>,
        shape: Vec<usize>,
        back: impl Fn(&[T], &mut GradStore<T>) + 'static,
    ) -> Tensor<T> {
        let mut out = Tensor::from_vec(data, shape);
        if let Some(tape) = Self::join_tapes(inputs) {
            let id = tape.push(out.len(), Some(Box::new(back)));
            out.track = Some((tape, id));
        }
        out
    }

    /// Like [`Tensor::from_op`] but shares an existing allocation (used
    /// when the backward rule needs the forward output).
    pub(crate) fn from_op_shared(
        inputs: &[&Tensor<T>],
        data: Rc<Vec<T>>,
        shape: Vec<usize>,
        back: impl Fn(&[T], &mut GradStore<T>) + 'static,
    ) -> Tensor<T> {
        assert_eq!(numel(&shape), data.len());
        let mut out = Tensor {
            data,
            shape,
            track: None,
        };
        if let Some(tape) = Self::join_tapes(inputs) {
            let id = tape.push(out.len(), Some(Box::new(back)));
            out.track = Some((tape, id));
        }
        out
    }

    pub(crate) fn track_id(&self) -> Option<usize> {
        self.track.as_ref().map(|(_, id)| *id)
    }
}
