//! Dense arrays with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] owns every array produced during a forward pass. [`DiffArray`]
//! is a cheap `Copy` handle into the tape. Each primitive stores its output
//! together with a vector-Jacobian product closure; [`Tape::backward`] walks
//! the tape in reverse recording order, which is a topological order by
//! construction.
//!
//! All reductions run in a fixed order (ascending flat index), so a forward
//! pass repeated with the same inputs is bit-identical.

mod gradcheck;
mod kernels;
mod ops;

use std::cell::{Cell, RefCell};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_many, GradCheckConfig, GradCheckReport};
pub use kernels::{gemm_nn, gemm_nt, gemm_tn};
pub use ops::{BnConfig, BnStats, Mode};

/// Floating-point element type. `f64` is the default everywhere; `f32` is
/// supported for throughput measurements.
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
}

/// Plain row-major array without gradient tracking.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.numel() / self.shape[0].max(1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape("Tensor::reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// Vector-Jacobian product: given the output gradient and which parents need
/// a gradient, return one optional gradient buffer per parent.
pub type Vjp<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    vjp: Option<Vjp<T>>,
}

/// Ordered record of primitive applications.
pub struct Tape<T: Real = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Vec<T>>>>,
    backward_done: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input.
    pub fn param(&self, t: Tensor<T>) -> DiffArray<'_, T> {
        self.leaf(t, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> DiffArray<'_, T> {
        self.leaf(t, false)
    }

    pub fn leaf(&self, t: Tensor<T>, requires_grad: bool) -> DiffArray<'_, T> {
        self.push(t.shape, Arc::new(t.data), requires_grad, Vec::new(), None)
    }

    /// Records a primitive. `vjp` is dropped when no parent requires a
    /// gradient, so constant sub-graphs carry no backward state.
    pub fn record(
        &self,
        shape: Vec<usize>,
        value: Vec<T>,
        parents: &[DiffArray<'_, T>],
        vjp: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> DiffArray<'_, T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&p| nodes[p].requires_grad)
        };
        let vjp: Option<Vjp<T>> = if requires_grad {
            Some(Box::new(vjp))
        } else {
            None
        };
        self.push(shape, Arc::new(value), requires_grad, ids, vjp)
    }

    /// Records an array that aliases `value` without copying.
    pub(crate) fn record_shared(
        &self,
        shape: Vec<usize>,
        value: Arc<Vec<T>>,
        parents: &[DiffArray<'_, T>],
        vjp: impl Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> DiffArray<'_, T> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&p| nodes[p].requires_grad)
        };
        let vjp: Option<Vjp<T>> = if requires_grad {
            Some(Box::new(vjp))
        } else {
            None
        };
        self.push(shape, value, requires_grad, ids, vjp)
    }

    fn push(
        &self,
        shape: Vec<usize>,
        value: Arc<Vec<T>>,
        requires_grad: bool,
        parents: Vec<usize>,
        vjp: Option<Vjp<T>>,
    ) -> DiffArray<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            parents,
            vjp,
        });
        DiffArray { tape: self, id }
    }

    /// Propagates gradients from a scalar `loss` to every reachable array
    /// that requires a gradient.
    pub fn backward(&self, loss: DiffArray<'_, T>) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Rank {
                op: "backward",
                shape: root.shape.clone(),
            });
        }
        if !root.requires_grad {
            return Err(Error::Unreachable);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(vjp) = node.vjp.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = vjp(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(pg), true) = (pg, need) else {
                    continue;
                };
                debug_assert_eq!(pg.len(), nodes[p].value.len());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }
        *self.grads.borrow_mut() = grads;
        self.backward_done.set(true);
        Ok(())
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
        self.backward_done.set(false);
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn value_of(&self, id: usize) -> Arc<Vec<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }
}

/// Handle to an array recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct DiffArray<'t, T: Real = f64> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Debug for DiffArray<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffArray")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Real> DiffArray<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Arc<Vec<T>> {
        self.tape.value_of(self.id)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape(),
            data: self.value().as_ref().clone(),
        }
    }

    /// The single element of a one-element array.
    pub fn item(&self) -> T {
        self.value()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient after [`Tape::backward`]. `None` when the array
    /// was not reached.
    pub fn grad(&self) -> Option<Tensor<T>> {
        let grads = self.tape.grads.borrow();
        grads
            .get(self.id)
            .and_then(|g| g.clone())
            .map(|data| Tensor {
                shape: self.shape(),
                data,
            })
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape();
        match s.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Shape {
                op,
                lhs: s.clone(),
                rhs: vec![0, 0],
            }),
        }
    }

    /// Rows and flattened trailing width for arrays of rank >= 1.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        let s = self.shape();
        let rows = s.first().copied().unwrap_or(1);
        let numel: usize = s.iter().product();
        (rows, if rows == 0 { 0 } else { numel / rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_bad_shape() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 4.0]).unwrap());
        let loss = x.sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let loss = x.mul(x).unwrap().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = x.mul(x).unwrap().sum();
        loss.backward().unwrap();
        assert!(matches!(loss.backward(), Err(Error::BackwardTwice)));
        tape.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_scalar_and_detached_losses() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(x.relu().backward(), Err(Error::Rank { .. })));
        let c = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(c.sum().backward(), Err(Error::Unreachable)));
    }

    #[test]
    fn unreachable_arrays_have_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0));
        let y = tape.param(Tensor::scalar(2.0));
        let _unused = y.scale(3.0);
        x.scale(2.0).sum().backward().unwrap();
        assert!(y
            .grad()
            .map_or(true, |g| g.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn repeated_forward_is_bit_identical() {
        let run = || {
            let tape = Tape::<f64>::new();
            let a = tape.constant(Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.37).sin()));
            let b = tape.constant(Tensor::from_fn(&[5, 3], |i| (i as f64 * 1.3).cos()));
            a.matmul(b).unwrap().softmax_lastdim().unwrap().to_tensor()
        };
        let (r1, r2) = (run(), run());
        assert!(r1
            .data()
            .iter()
            .zip(r2.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
