//! Scalar reverse-mode differentiation on an append-only tape.
//!
//! Every operation appends one node holding its value and the local partial
//! derivative with respect to each parent. Parents always precede their
//! children, so a single reverse sweep over the node list accumulates exact
//! adjoints. N-ary nodes ([`Tape::sum`], [`Real::affine`]) keep dense layers
//! to one node per output.
//!
//! The [`Real`] trait abstracts over plain `f64` and taped [`Var`]s so model
//! code can be written once and evaluated either way.
//!
//! ```
//! use trajsens_core::autodiff::{Real, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = tape.var(4.0);
//! let loss = x * y + x.tanh();
//! let g = tape.backward(loss).unwrap();
//! assert_eq!(loss.value(), 12.0 + 3f64.tanh());
//! assert_eq!(g.wrt(y), 3.0);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Input,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Relu,
    Square,
    Sqrt,
    Sum,
    Affine,
    Scale,
    Offset,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Ln => "log",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Sum => "sum",
            Op::Affine => "affine",
            Op::Scale => "scale",
            Op::Offset => "offset",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    value: f64,
    op: Op,
    start: u32,
    len: u32,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    /// `(parent index, local partial)` for every node, packed contiguously.
    edges: Vec<(u32, f64)>,
}

/// Append-only computation record. Single owner; not `Sync`.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to one node of a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::with_capacity(nodes),
                edges: Vec::with_capacity(nodes * 2),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, op: Op, parents: impl IntoIterator<Item = (usize, f64)>) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let start = inner.edges.len();
        let index = inner.nodes.len();
        for (p, d) in parents {
            debug_assert!(p < index, "parent must precede child");
            inner.edges.push((p as u32, d));
        }
        let len = inner.edges.len() - start;
        inner.nodes.push(Node {
            value,
            op,
            start: start as u32,
            len: len as u32,
        });
        Var { tape: self, index }
    }

    /// Lifts a real into a new leaf node.
    pub fn var(&self, x: f64) -> Var<'_> {
        self.push(x, Op::Input, [])
    }

    pub fn vars(&self, xs: &[f64]) -> Vec<Var<'_>> {
        xs.iter().map(|&x| self.var(x)).collect()
    }

    fn value_of(&self, index: usize) -> f64 {
        self.inner.borrow().nodes[index].value
    }

    /// Sum of any number of variables; the empty sum is a zero leaf.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        let total = {
            let inner = self.inner.borrow();
            xs.iter().map(|v| inner.nodes[v.index].value).sum()
        };
        self.push(total, Op::Sum, xs.iter().map(|v| (v.index, 1.0)))
    }

    /// Reverse sweep from `loss`. Fails if any adjoint becomes non-finite.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        debug_assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let inner = self.inner.borrow();
        let mut adjoints = vec![0.0f64; loss.index + 1];
        adjoints[loss.index] = 1.0;
        for k in (0..=loss.index).rev() {
            let a = adjoints[k];
            let node = inner.nodes[k];
            if !a.is_finite() {
                return Err(Error::Overflow {
                    node: k,
                    op: node.op.name(),
                });
            }
            if a == 0.0 {
                continue;
            }
            let s = node.start as usize;
            for &(p, d) in &inner.edges[s..s + node.len as usize] {
                adjoints[p as usize] += a * d;
            }
        }
        Ok(Gradients { adjoints })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// d loss / d var. Nodes created after the loss have zero gradient.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints.get(v.index).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: f64, op: Op, d: f64) -> Self {
        self.tape.push(value, op, [(self.index, d)])
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        let v = self.value() + rhs.value();
        self.tape.push(v, Op::Add, [(self.index, 1.0), (rhs.index, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        let v = self.value() - rhs.value();
        self.tape.push(v, Op::Sub, [(self.index, 1.0), (rhs.index, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value(), rhs.value());
        self.tape.push(a * b, Op::Mul, [(self.index, b), (rhs.index, a)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value(), Op::Neg, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value() + rhs, Op::Offset, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value() - rhs, Op::Offset, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value() * rhs, Op::Scale, rhs)
    }
}

/// Scalar arithmetic shared by `f64` and [`Var`].
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant on the same tape as `self` (plain value for `f64`).
    fn constant(&self, x: f64) -> Self;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    /// Subgradient 0 at the kink.
    fn relu(self) -> Self;
    fn square(self) -> Self;
    fn ln(self) -> Result<Self>;
    fn sqrt(self) -> Result<Self>;
    fn div(self, rhs: Self) -> Result<Self>;
    /// # Panics
    /// On an empty slice.
    fn sum(xs: &[Self]) -> Self;
    /// `bias + sum_i weights[i] * inputs[i]`.
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self;
}

fn check_positive(op: &'static str, x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { op, value: x })
    }
}

fn check_nonzero(x: f64) -> Result<()> {
    if x != 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain { op: "div", value: x })
    }
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn constant(&self, x: f64) -> Self {
        x
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn square(self) -> Self {
        self * self
    }
    fn ln(self) -> Result<Self> {
        check_positive("log", self)?;
        Ok(f64::ln(self))
    }
    fn sqrt(self) -> Result<Self> {
        check_positive("sqrt", self)?;
        Ok(f64::sqrt(self))
    }
    fn div(self, rhs: Self) -> Result<Self> {
        check_nonzero(rhs)?;
        Ok(self / rhs)
    }
    fn sum(xs: &[Self]) -> Self {
        assert!(!xs.is_empty(), "sum of an empty slice");
        xs.iter().sum()
    }
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        weights.iter().zip(inputs).fold(bias, |acc, (w, x)| acc + w * x)
    }
}

impl<'t> Real for Var<'t> {
    fn value(&self) -> f64 {
        self.tape.value_of(self.index)
    }
    fn constant(&self, x: f64) -> Self {
        self.tape.var(x)
    }
    fn exp(self) -> Self {
        let e = self.value().exp();
        self.unary(e, Op::Exp, e)
    }
    fn tanh(self) -> Self {
        let t = self.value().tanh();
        self.unary(t, Op::Tanh, 1.0 - t * t)
    }
    fn relu(self) -> Self {
        let x = self.value();
        if x > 0.0 {
            self.unary(x, Op::Relu, 1.0)
        } else {
            self.unary(0.0, Op::Relu, 0.0)
        }
    }
    fn square(self) -> Self {
        let x = self.value();
        self.unary(x * x, Op::Square, 2.0 * x)
    }
    fn ln(self) -> Result<Self> {
        let x = self.value();
        check_positive("log", x)?;
        Ok(self.unary(x.ln(), Op::Ln, 1.0 / x))
    }
    fn sqrt(self) -> Result<Self> {
        let x = self.value();
        check_positive("sqrt", x)?;
        let r = x.sqrt();
        Ok(self.unary(r, Op::Sqrt, 0.5 / r))
    }
    fn div(self, rhs: Self) -> Result<Self> {
        let (a, b) = (self.value(), rhs.value());
        check_nonzero(b)?;
        Ok(self
            .tape
            .push(a / b, Op::Div, [(self.index, 1.0 / b), (rhs.index, -a / (b * b))]))
    }
    fn sum(xs: &[Self]) -> Self {
        assert!(!xs.is_empty(), "sum of an empty slice");
        xs[0].tape.sum(xs)
    }
    fn affine(weights: &[Self], inputs: &[Self], bias: Self) -> Self {
        debug_assert_eq!(weights.len(), inputs.len());
        let tape = bias.tape;
        let (value, parents) = {
            let inner = tape.inner.borrow();
            let val = |v: &Var<'_>| inner.nodes[v.index].value;
            let mut value = val(&bias);
            let mut parents = Vec::with_capacity(2 * weights.len() + 1);
            parents.push((bias.index, 1.0));
            for (w, x) in weights.iter().zip(inputs) {
                let (wv, xv) = (val(w), val(x));
                value += wv * xv;
                parents.push((w.index, xv));
                parents.push((x.index, wv));
            }
            (value, parents)
        };
        tape.push(value, Op::Affine, parents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arithmetic_values() {
        let t = Tape::new();
        assert_eq!((t.var(3.0) * t.var(4.0)).value(), 12.0);
        assert_eq!(t.var(0.0).tanh().value(), 0.0);
        assert_eq!((t.var(1.5) - t.var(0.5)).value(), 1.0);
        assert_eq!(t.var(2.0).div(t.var(4.0)).unwrap().value(), 0.5);
        assert_eq!(t.var(-2.0).relu().value(), 0.0);
    }

    #[test]
    fn domain_errors_name_the_op() {
        let t = Tape::new();
        assert!(matches!(t.var(0.0).ln(), Err(Error::Domain { op: "log", .. })));
        assert!(matches!(t.var(-1.0).sqrt(), Err(Error::Domain { op: "sqrt", .. })));
        assert!(matches!(
            t.var(1.0).div(t.var(0.0)),
            Err(Error::Domain { op: "div", .. })
        ));
        assert!(matches!(Real::ln(0.0f64), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn product_rule() {
        let t = Tape::new();
        let (x, y) = (t.var(3.0), t.var(4.0));
        let g = t.backward(x * y).unwrap();
        assert_eq!(g.wrt(x), 4.0);
        assert_eq!(g.wrt(y), 3.0);
    }

    #[test]
    fn tanh_slope_at_zero() {
        let t = Tape::new();
        let x = t.var(0.0);
        assert_eq!(t.backward(x.tanh()).unwrap().wrt(x), 1.0);
    }

    #[test]
    fn relu_kink_uses_zero_subgradient() {
        let t = Tape::new();
        let x = t.var(0.0);
        assert_eq!(t.backward(x.relu()).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn affine_matches_expanded_form() {
        let t = Tape::new();
        let w = t.vars(&[0.5, -1.5, 2.0]);
        let x = t.vars(&[1.0, 2.0, -0.25]);
        let b = t.var(0.1);
        let y = Var::affine(&w, &x, b);
        assert!((y.value() - (0.5 - 3.0 - 0.5 + 0.1)).abs() < 1e-15);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt_all(&w), vec![1.0, 2.0, -0.25]);
        assert_eq!(g.wrt_all(&x), vec![0.5, -1.5, 2.0]);
        assert_eq!(g.wrt(b), 1.0);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let t = Tape::new();
        let x = t.var(2.0);
        let y = x * x + x; // 2x + 1 = 5
        assert_eq!(t.backward(y).unwrap().wrt(x), 5.0);
    }

    #[test]
    fn overflow_is_reported_with_provenance() {
        let t = Tape::new();
        let x = t.var(800.0);
        let y = x.exp(); // value overflows to inf
                         // d(exp x)/dx = inf lands on the input node.
        match t.backward(y * 1.0) {
            Err(Error::Overflow { node, op }) => {
                assert_eq!(node, x.index());
                assert_eq!(op, "input");
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    /// Random expression over `n` inputs built from a seeded op stream,
    /// generic so the same expression evaluates on f64 (for finite
    /// differences) and on the tape.
    pub(crate) fn random_expr<R: Real>(inputs: &[R], seed: u64, nodes: usize) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool: Vec<R> = inputs.to_vec();
        for _ in 0..nodes {
            let a = pool[rng.random_range(0..pool.len())];
            let b = pool[rng.random_range(0..pool.len())];
            let c: f64 = rng.random_range(-1.5..1.5);
            let next = match rng.random_range(0..9) {
                0 => a + b,
                1 => a - b,
                2 => a * b,
                3 => (a * 0.5).tanh(),
                4 => (a * 0.3).exp(),
                5 => (a.square() + 1.0).ln().unwrap(),
                6 => (b.square() + 0.5).sqrt().unwrap(),
                7 => a.div(b.square() + 1.0).unwrap(),
                _ => a * c + 0.25,
            };
            pool.push(next);
        }
        let tail = &pool[pool.len() - 4..];
        R::sum(tail)
    }

    fn fd_check(seed: u64, n_inputs: usize, nodes: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let x0: Vec<f64> = (0..n_inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = Tape::new();
        let xs = tape.vars(&x0);
        let y = random_expr(&xs, seed, nodes);
        let g = tape.backward(y).unwrap();
        let h = 1e-5;
        for i in 0..n_inputs {
            let mut p = x0.clone();
            p[i] += h;
            let mut m = x0.clone();
            m[i] -= h;
            let fd = (random_expr(&p, seed, nodes) - random_expr(&m, seed, nodes)) / (2.0 * h);
            let an = g.wrt(xs[i]);
            let err = (an - fd).abs();
            assert!(
                err < 1e-7 || err / fd.abs().max(an.abs()) < 1e-4,
                "seed {seed} input {i}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn matches_finite_differences_on_random_expressions() {
        for seed in 0..120 {
            fd_check(seed, 5, 20);
        }
    }

    #[test]
    fn tape_is_deterministic() {
        let run = || {
            let t = Tape::new();
            let xs = t.vars(&[0.3, -0.7, 1.1]);
            let y = random_expr(&xs, 9, 30);
            let g = t.backward(y).unwrap();
            (
                y.value().to_bits(),
                g.wrt_all(&xs).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn gradients_are_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..500) {
            let x0 = [0.2, -0.4, 0.9];
            let grads = |ca: f64, cb: f64| {
                let t = Tape::new();
                let xs = t.vars(&x0);
                let f = random_expr(&xs, seed, 12);
                let g = random_expr(&xs, seed + 1000, 12);
                let y = f * ca + g * cb;
                t.backward(y).unwrap().wrt_all(&xs)
            };
            let combined = grads(a, b);
            let (gf, gg) = (grads(1.0, 0.0), grads(0.0, 1.0));
            for i in 0..3 {
                let expect = a * gf[i] + b * gg[i];
                prop_assert!((combined[i] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
            }
        }
    }
}
