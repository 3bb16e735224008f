//! Reverse-mode gradient tape over real-valued buffers.
//!
//! Nodes hold whole buffers (audio, spectra, weight matrices) rather than
//! scalars, and every primitive carries a hand-written backward rule. Complex
//! data lives in interleaved `[re, im, re, im, ..]` buffers so the FFT and its
//! adjoint are single tape entries. The sequential one-pole smoother is a
//! first-class primitive with a reverse-time backward scan, which keeps tapes
//! short for long audio.
//!
//! A tape is confined to one thread; recorded values are immutable once
//! written. Independent tapes may run concurrently.

use crate::error::{Error, Result};
use crate::fft::transform_interleaved;
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
enum UnaryKind {
    Neg,
    Abs,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Sigmoid,
    Sin,
    Cos,
    Recip,
    /// Clamp into [lo, hi]; zero gradient outside the open interval.
    Clamp(f64, f64),
    /// Multiply by a constant.
    Scale(f64),
    /// Add a constant.
    AddC(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    Const,
    Unary {
        kind: UnaryKind,
        a: usize,
    },
    Binary {
        kind: BinaryKind,
        a: usize,
        b: usize,
    },
    Sum {
        a: usize,
    },
    MaxAbs {
        a: usize,
        argmax: usize,
    },
    Slice {
        a: usize,
        offset: usize,
    },
    Pad {
        a: usize,
        offset: usize,
    },
    Fft {
        a: usize,
        inverse: bool,
    },
    Interleave {
        re: usize,
        im: usize,
    },
    RePart {
        a: usize,
    },
    ImPart {
        a: usize,
    },
    CMul {
        a: usize,
        b: usize,
    },
    ComplexAbs {
        a: usize,
    },
    HermitianExtend {
        re: usize,
        im: usize,
    },
    OnePole {
        u: usize,
        alpha: usize,
    },
    Dense {
        w: usize,
        bias: usize,
        x: usize,
        rows: usize,
        cols: usize,
    },
    MatConst {
        m: Arc<Vec<f64>>,
        rows: usize,
        cols: usize,
        a: usize,
    },
    ConvCausal {
        x: usize,
        w: usize,
        dilation: usize,
    },
}

#[derive(Default)]
struct TapeInner {
    values: Vec<Rc<Vec<f64>>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

/// Records buffer operations for later backpropagation.
pub struct Tape {
    inner: RefCell<TapeInner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one recorded buffer on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
    len: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(TapeInner::default()),
        }
    }

    fn push(&self, value: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        let len = value.len();
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.values.push(Rc::new(value));
        inner.ops.push(op);
        inner.needs_grad.push(needs_grad);
        Var { tape: self, id, len }
    }

    /// A differentiable input; gradients accumulate here.
    pub fn leaf(&self, value: Vec<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiated input; backward never descends into constants.
    pub fn constant(&self, value: Vec<f64>) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    pub fn scalar_leaf(&self, value: f64) -> Var<'_> {
        self.leaf(vec![value])
    }

    pub fn scalar_const(&self, value: f64) -> Var<'_> {
        self.constant(vec![value])
    }

    fn value(&self, id: usize) -> Rc<Vec<f64>> {
        Rc::clone(&self.inner.borrow().values[id])
    }

    fn needs(&self, id: usize) -> bool {
        self.inner.borrow().needs_grad[id]
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().values.len()
    }

    /// Runs backpropagation from a scalar output node.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if output.len != 1 {
            return Err(Error::LengthMismatch {
                expected: 1,
                got: output.len,
            });
        }
        let inner = self.inner.borrow();
        let n = inner.values.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[output.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            if grads[id].is_none() || !inner.needs_grad[id] {
                continue;
            }
            let g = grads[id].take().unwrap();
            backward_step(&inner, id, &g, &mut grads);
            // Leaves keep their accumulated gradient.
            if matches!(inner.ops[id], Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of one backward pass, queried per leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v` (zeros when the output never depended on it).
    pub fn wrt(&self, v: Var<'_>) -> Vec<f64> {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => vec![0.0; v.len],
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = grads[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn backward_step(inner: &TapeInner, id: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
    let val = |i: usize| -> &Vec<f64> { &inner.values[i] };
    let out = val(id);
    match &inner.ops[id] {
        Op::Leaf | Op::Const => {}
        Op::Unary { kind, a } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let av = val(*a);
            accumulate(grads, *a, av.len(), |ga| match kind {
                UnaryKind::Neg => {
                    for i in 0..g.len() {
                        ga[i] -= g[i];
                    }
                }
                UnaryKind::Abs => {
                    for i in 0..g.len() {
                        ga[i] += g[i] * sign(av[i]);
                    }
                }
                UnaryKind::Tanh => {
                    for i in 0..g.len() {
                        ga[i] += g[i] * (1.0 - out[i] * out[i]);
                    }
                }
                UnaryKind::Exp => {
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i];
                    }
                }
                UnaryKind::Ln => {
                    for i in 0..g.len() {
                        ga[i] += g[i] / av[i];
                    }
                }
                UnaryKind::Sqrt => {
                    for i in 0..g.len() {
                        ga[i] += g[i] / (2.0 * out[i]);
                    }
                }
                UnaryKind::Sigmoid => {
                    for i in 0..g.len() {
                        ga[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
                UnaryKind::Sin => {
                    for i in 0..g.len() {
                        ga[i] += g[i] * av[i].cos();
                    }
                }
                UnaryKind::Cos => {
                    for i in 0..g.len() {
                        ga[i] -= g[i] * av[i].sin();
                    }
                }
                UnaryKind::Recip => {
                    for i in 0..g.len() {
                        ga[i] -= g[i] * out[i] * out[i];
                    }
                }
                UnaryKind::Clamp(lo, hi) => {
                    for i in 0..g.len() {
                        if av[i] > *lo && av[i] < *hi {
                            ga[i] += g[i];
                        }
                    }
                }
                UnaryKind::Scale(c) => {
                    for i in 0..g.len() {
                        ga[i] += g[i] * c;
                    }
                }
                UnaryKind::AddC(_) => {
                    for i in 0..g.len() {
                        ga[i] += g[i];
                    }
                }
            });
        }
        Op::Binary { kind, a, b } => {
            let av = val(*a);
            let bv = val(*b);
            let (la, lb) = (av.len(), bv.len());
            let ia = |i: usize| if la == 1 { 0 } else { i };
            let ib = |i: usize| if lb == 1 { 0 } else { i };
            if inner.needs_grad[*a] {
                accumulate(grads, *a, la, |ga| {
                    for i in 0..g.len() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[i],
                            BinaryKind::Mul => g[i] * bv[ib(i)],
                            BinaryKind::Div => g[i] / bv[ib(i)],
                        };
                        ga[ia(i)] += d;
                    }
                });
            }
            if inner.needs_grad[*b] {
                accumulate(grads, *b, lb, |gb| {
                    for i in 0..g.len() {
                        let d = match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * av[ia(i)],
                            BinaryKind::Div => -g[i] * out[i] / bv[ib(i)],
                        };
                        gb[ib(i)] += d;
                    }
                });
            }
        }
        Op::Sum { a } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let la = val(*a).len();
            accumulate(grads, *a, la, |ga| {
                for slot in ga.iter_mut() {
                    *slot += g[0];
                }
            });
        }
        Op::MaxAbs { a, argmax } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let av = val(*a);
            let la = av.len();
            let s = sign(av[*argmax]);
            accumulate(grads, *a, la, |ga| {
                ga[*argmax] += g[0] * s;
            });
        }
        Op::Slice { a, offset } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let la = val(*a).len();
            accumulate(grads, *a, la, |ga| {
                for i in 0..g.len() {
                    ga[offset + i] += g[i];
                }
            });
        }
        Op::Pad { a, offset } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let la = val(*a).len();
            accumulate(grads, *a, la, |ga| {
                for i in 0..la {
                    ga[i] += g[offset + i];
                }
            });
        }
        Op::Fft { a, inverse } => {
            if !inner.needs_grad[*a] {
                return;
            }
            // The DFT matrix is symmetric, so the adjoint of either direction
            // is the unnormalized transform in the opposite direction.
            let mut gd = g.to_vec();
            transform_interleaved(&mut gd, !inverse);
            let la = val(*a).len();
            accumulate(grads, *a, la, |ga| {
                for i in 0..la {
                    ga[i] += gd[i];
                }
            });
        }
        Op::Interleave { re, im } => {
            let n = g.len() / 2;
            if inner.needs_grad[*re] {
                accumulate(grads, *re, n, |gr| {
                    for k in 0..n {
                        gr[k] += g[2 * k];
                    }
                });
            }
            if inner.needs_grad[*im] {
                accumulate(grads, *im, n, |gi| {
                    for k in 0..n {
                        gi[k] += g[2 * k + 1];
                    }
                });
            }
        }
        Op::RePart { a } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let la = val(*a).len();
            accumulate(grads, *a, la, |ga| {
                for k in 0..g.len() {
                    ga[2 * k] += g[k];
                }
            });
        }
        Op::ImPart { a } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let la = val(*a).len();
            accumulate(grads, *a, la, |ga| {
                for k in 0..g.len() {
                    ga[2 * k + 1] += g[k];
                }
            });
        }
        Op::CMul { a, b } => {
            let av = val(*a);
            let bv = val(*b);
            let n = g.len() / 2;
            if inner.needs_grad[*a] {
                accumulate(grads, *a, av.len(), |ga| {
                    for k in 0..n {
                        let (gr, gi) = (g[2 * k], g[2 * k + 1]);
                        let (br, bi) = (bv[2 * k], bv[2 * k + 1]);
                        // ḡ · conj(b)
                        ga[2 * k] += gr * br + gi * bi;
                        ga[2 * k + 1] += gi * br - gr * bi;
                    }
                });
            }
            if inner.needs_grad[*b] {
                accumulate(grads, *b, bv.len(), |gb| {
                    for k in 0..n {
                        let (gr, gi) = (g[2 * k], g[2 * k + 1]);
                        let (ar, ai) = (av[2 * k], av[2 * k + 1]);
                        gb[2 * k] += gr * ar + gi * ai;
                        gb[2 * k + 1] += gi * ar - gr * ai;
                    }
                });
            }
        }
        Op::ComplexAbs { a } => {
            if !inner.needs_grad[*a] {
                return;
            }
            let av = val(*a);
            accumulate(grads, *a, av.len(), |ga| {
                for k in 0..g.len() {
                    let mag = out[k].max(1e-30);
                    ga[2 * k] += g[k] * av[2 * k] / mag;
                    ga[2 * k + 1] += g[k] * av[2 * k + 1] / mag;
                }
            });
        }
        Op::HermitianExtend { re, im } => {
            let n = g.len() / 2;
            let m = n / 2 + 1;
            if inner.needs_grad[*re] {
                accumulate(grads, *re, m, |gr| {
                    for k in 0..m {
                        gr[k] += g[2 * k];
                    }
                    for k in (n / 2 + 1)..n {
                        gr[n - k] += g[2 * k];
                    }
                });
            }
            if inner.needs_grad[*im] {
                accumulate(grads, *im, m, |gi| {
                    for k in 0..m {
                        gi[k] += g[2 * k + 1];
                    }
                    for k in (n / 2 + 1)..n {
                        gi[n - k] -= g[2 * k + 1];
                    }
                });
            }
        }
        Op::OnePole { u, alpha } => {
            let uv = val(*u);
            let alpha_v = val(*alpha)[0];
            let n = g.len();
            // c[n] = dL/ds[n] including the recurrence path.
            let mut c = vec![0.0; n];
            let mut carry = 0.0;
            for t in (0..n).rev() {
                carry = g[t] + alpha_v * carry;
                c[t] = carry;
                if t > 0 {
                    // nothing else; carry already folds in alpha per step
                }
            }
            if inner.needs_grad[*u] {
                accumulate(grads, *u, n, |gu| {
                    for t in 0..n {
                        gu[t] += (1.0 - alpha_v) * c[t];
                    }
                });
            }
            if inner.needs_grad[*alpha] {
                let mut ga = 0.0;
                for t in 0..n {
                    let prev = if t == 0 { 0.0 } else { out[t - 1] };
                    ga += c[t] * (prev - uv[t]);
                }
                accumulate(grads, *alpha, 1, |slot| slot[0] += ga);
            }
        }
        Op::Dense {
            w,
            bias,
            x,
            rows,
            cols,
        } => {
            let wv = val(*w);
            let xv = val(*x);
            if inner.needs_grad[*w] {
                accumulate(grads, *w, rows * cols, |gw| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gw[r * cols + c] += g[r] * xv[c];
                        }
                    }
                });
            }
            if inner.needs_grad[*bias] {
                accumulate(grads, *bias, *rows, |gb| {
                    for r in 0..*rows {
                        gb[r] += g[r];
                    }
                });
            }
            if inner.needs_grad[*x] {
                accumulate(grads, *x, *cols, |gx| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gx[c] += g[r] * wv[r * cols + c];
                        }
                    }
                });
            }
        }
        Op::MatConst { m, rows, cols, a } => {
            if !inner.needs_grad[*a] {
                return;
            }
            accumulate(grads, *a, *cols, |ga| {
                for r in 0..*rows {
                    let grad_r = g[r];
                    if grad_r == 0.0 {
                        continue;
                    }
                    let row = &m[r * cols..(r + 1) * cols];
                    for c in 0..*cols {
                        ga[c] += grad_r * row[c];
                    }
                }
            });
        }
        Op::ConvCausal { x, w, dilation } => {
            let xv = val(*x);
            let wv = val(*w);
            let n = g.len();
            if inner.needs_grad[*x] {
                accumulate(grads, *x, n, |gx| {
                    for (k, &wk) in wv.iter().enumerate() {
                        let shift = k * dilation;
                        for t in shift..n {
                            gx[t - shift] += wk * g[t];
                        }
                    }
                });
            }
            if inner.needs_grad[*w] {
                accumulate(grads, *w, wv.len(), |gw| {
                    for (k, slot) in gw.iter_mut().enumerate() {
                        let shift = k * dilation;
                        let mut acc = 0.0;
                        for t in shift..n {
                            acc += g[t] * xv[t - shift];
                        }
                        *slot += acc;
                    }
                });
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Vec<f64>> {
        self.tape.value(self.id)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Value of a length-1 node.
    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.len, 1, "scalar() on a buffer of length {}", self.len);
        self.value()[0]
    }

    fn unary(self, kind: UnaryKind, f: impl Fn(f64) -> f64) -> Var<'t> {
        let a = self.value();
        let out = a.iter().map(|&x| f(x)).collect();
        let needs = self.tape.needs(self.id);
        self.tape.push(out, Op::Unary { kind, a: self.id }, needs)
    }

    fn binary(self, rhs: Var<'t>, kind: BinaryKind) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let a = self.value();
        let b = rhs.value();
        assert!(
            a.len() == b.len() || a.len() == 1 || b.len() == 1,
            "shape mismatch: {} vs {}",
            a.len(),
            b.len()
        );
        let n = a.len().max(b.len());
        let ia = |i: usize| if a.len() == 1 { 0 } else { i };
        let ib = |i: usize| if b.len() == 1 { 0 } else { i };
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (a[ia(i)], b[ib(i)]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let needs = self.tape.needs(self.id) || self.tape.needs(rhs.id);
        self.tape.push(
            out,
            Op::Binary {
                kind,
                a: self.id,
                b: rhs.id,
            },
            needs,
        )
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryKind::Abs, f64::abs)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryKind::Tanh, f64::tanh)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryKind::Exp, f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(UnaryKind::Ln, f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(UnaryKind::Sqrt, f64::sqrt)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryKind::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(UnaryKind::Sin, f64::sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(UnaryKind::Cos, f64::cos)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(UnaryKind::Recip, |x| 1.0 / x)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(UnaryKind::Clamp(lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.clamp(lo, f64::INFINITY)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::Scale(c), |x| x * c)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(UnaryKind::AddC(c), |x| x + c)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn sum(self) -> Var<'t> {
        let a = self.value();
        let total: f64 = a.iter().sum();
        let needs = self.tape.needs(self.id);
        self.tape.push(vec![total], Op::Sum { a: self.id }, needs)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.len as f64;
        self.sum().scale(1.0 / n)
    }

    /// Largest absolute value, as a length-1 node. The gradient flows to the
    /// element that attains the maximum.
    pub fn max_abs(self) -> Var<'t> {
        let a = self.value();
        let (argmax, peak) = a
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bv), (i, &x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            });
        let needs = self.tape.needs(self.id);
        self.tape
            .push(vec![peak], Op::MaxAbs { a: self.id, argmax }, needs)
    }

    pub fn slice(self, offset: usize, len: usize) -> Var<'t> {
        assert!(offset + len <= self.len);
        let a = self.value();
        let out = a[offset..offset + len].to_vec();
        let needs = self.tape.needs(self.id);
        self.tape.push(
            out,
            Op::Slice {
                a: self.id,
                offset,
            },
            needs,
        )
    }

    /// Zero-extends to `total` samples, placing this buffer at `offset`.
    pub fn pad(self, offset: usize, total: usize) -> Var<'t> {
        assert!(offset + self.len <= total);
        let a = self.value();
        let mut out = vec![0.0; total];
        out[offset..offset + a.len()].copy_from_slice(&a);
        let needs = self.tape.needs(self.id);
        self.tape.push(
            out,
            Op::Pad {
                a: self.id,
                offset,
            },
            needs,
        )
    }

    /// Unnormalized forward FFT of an interleaved complex buffer.
    pub fn fft(self) -> Var<'t> {
        self.fft_dir(false)
    }

    /// Unnormalized inverse FFT of an interleaved complex buffer.
    pub fn ifft(self) -> Var<'t> {
        self.fft_dir(true)
    }

    fn fft_dir(self, inverse: bool) -> Var<'t> {
        assert!(self.len % 2 == 0);
        let mut out = self.value().as_ref().clone();
        transform_interleaved(&mut out, inverse);
        let needs = self.tape.needs(self.id);
        self.tape.push(
            out,
            Op::Fft {
                a: self.id,
                inverse,
            },
            needs,
        )
    }

    /// Packs real and imaginary buffers into interleaved complex form.
    pub fn interleave(self, im: Var<'t>) -> Var<'t> {
        assert_eq!(self.len, im.len);
        let re = self.value();
        let imv = im.value();
        let mut out = vec![0.0; 2 * self.len];
        for k in 0..self.len {
            out[2 * k] = re[k];
            out[2 * k + 1] = imv[k];
        }
        let needs = self.tape.needs(self.id) || self.tape.needs(im.id);
        self.tape.push(
            out,
            Op::Interleave {
                re: self.id,
                im: im.id,
            },
            needs,
        )
    }

    pub fn re_part(self) -> Var<'t> {
        assert!(self.len % 2 == 0);
        let a = self.value();
        let out = (0..self.len / 2).map(|k| a[2 * k]).collect();
        let needs = self.tape.needs(self.id);
        self.tape.push(out, Op::RePart { a: self.id }, needs)
    }

    pub fn im_part(self) -> Var<'t> {
        assert!(self.len % 2 == 0);
        let a = self.value();
        let out = (0..self.len / 2).map(|k| a[2 * k + 1]).collect();
        let needs = self.tape.needs(self.id);
        self.tape.push(out, Op::ImPart { a: self.id }, needs)
    }

    /// Elementwise complex multiply of two interleaved buffers.
    pub fn cmul(self, rhs: Var<'t>) -> Var<'t> {
        assert_eq!(self.len, rhs.len);
        let a = self.value();
        let b = rhs.value();
        let n = self.len / 2;
        let mut out = vec![0.0; self.len];
        for k in 0..n {
            let (ar, ai) = (a[2 * k], a[2 * k + 1]);
            let (br, bi) = (b[2 * k], b[2 * k + 1]);
            out[2 * k] = ar * br - ai * bi;
            out[2 * k + 1] = ar * bi + ai * br;
        }
        let needs = self.tape.needs(self.id) || self.tape.needs(rhs.id);
        self.tape.push(
            out,
            Op::CMul {
                a: self.id,
                b: rhs.id,
            },
            needs,
        )
    }

    /// Per-bin magnitude of an interleaved complex buffer.
    pub fn complex_abs(self) -> Var<'t> {
        assert!(self.len % 2 == 0);
        let a = self.value();
        let out = (0..self.len / 2)
            .map(|k| (a[2 * k].powi(2) + a[2 * k + 1].powi(2)).sqrt())
            .collect();
        let needs = self.tape.needs(self.id);
        self.tape.push(out, Op::ComplexAbs { a: self.id }, needs)
    }

    /// Builds a full conjugate-symmetric spectrum (interleaved, length 2n)
    /// from half-spectrum re/im buffers of length n/2 + 1.
    pub fn hermitian_extend(self, im: Var<'t>, n: usize) -> Var<'t> {
        let m = n / 2 + 1;
        assert_eq!(self.len, m);
        assert_eq!(im.len, m);
        let re = self.value();
        let imv = im.value();
        let mut out = vec![0.0; 2 * n];
        for k in 0..m {
            out[2 * k] = re[k];
            out[2 * k + 1] = imv[k];
        }
        for k in (n / 2 + 1)..n {
            out[2 * k] = re[n - k];
            out[2 * k + 1] = -imv[n - k];
        }
        let needs = self.tape.needs(self.id) || self.tape.needs(im.id);
        self.tape.push(
            out,
            Op::HermitianExtend {
                re: self.id,
                im: im.id,
            },
            needs,
        )
    }

    /// Sequential smoother s[n] = α·s[n−1] + (1−α)·u[n] with zero initial
    /// state. `alpha` must be a length-1 node; gradients flow through both
    /// the input and the coefficient.
    pub fn one_pole(self, alpha: Var<'t>) -> Var<'t> {
        assert_eq!(alpha.len, 1);
        let u = self.value();
        let a = alpha.value()[0];
        let mut out = Vec::with_capacity(u.len());
        let mut state = 0.0;
        for &x in u.iter() {
            state = a * state + (1.0 - a) * x;
            out.push(state);
        }
        let needs = self.tape.needs(self.id) || self.tape.needs(alpha.id);
        self.tape.push(
            out,
            Op::OnePole {
                u: self.id,
                alpha: alpha.id,
            },
            needs,
        )
    }

    /// Affine map y = W·x + b with W stored row-major as a flat buffer.
    pub fn dense(self, w: Var<'t>, bias: Var<'t>, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(w.len, rows * cols);
        assert_eq!(bias.len, rows);
        assert_eq!(self.len, cols);
        let wv = w.value();
        let bv = bias.value();
        let xv = self.value();
        let out = (0..rows)
            .map(|r| {
                let row = &wv[r * cols..(r + 1) * cols];
                row.iter().zip(xv.iter()).map(|(a, b)| a * b).sum::<f64>() + bv[r]
            })
            .collect();
        let needs = self.tape.needs(self.id) || self.tape.needs(w.id) || self.tape.needs(bias.id);
        self.tape.push(
            out,
            Op::Dense {
                w: w.id,
                bias: bias.id,
                x: self.id,
                rows,
                cols,
            },
            needs,
        )
    }

    /// Multiplication by a constant matrix (row-major rows×cols).
    pub fn mat_const(self, m: Arc<Vec<f64>>, rows: usize) -> Var<'t> {
        let cols = self.len;
        assert_eq!(m.len(), rows * cols);
        let xv = self.value();
        let out = (0..rows)
            .map(|r| {
                m[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xv.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let needs = self.tape.needs(self.id);
        self.tape.push(
            out,
            Op::MatConst {
                m,
                rows,
                cols,
                a: self.id,
            },
            needs,
        )
    }

    /// Causal dilated convolution: y[t] = Σ_k w[k] · x[t − k·dilation].
    pub fn conv1d_causal(self, w: Var<'t>, dilation: usize) -> Var<'t> {
        assert!(dilation >= 1);
        let xv = self.value();
        let wv = w.value();
        let n = xv.len();
        let mut out = vec![0.0; n];
        for (k, &wk) in wv.iter().enumerate() {
            let shift = k * dilation;
            if wk == 0.0 {
                continue;
            }
            for t in shift..n {
                out[t] += wk * xv[t - shift];
            }
        }
        let needs = self.tape.needs(self.id) || self.tape.needs(w.id);
        self.tape.push(
            out,
            Op::ConvCausal {
                x: self.id,
                w: w.id,
                dilation,
            },
            needs,
        )
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(UnaryKind::Neg, |x| -x)
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $kind:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, $kind)
            }
        }
    };
}

var_binop!(Add, add, BinaryKind::Add);
var_binop!(Sub, sub, BinaryKind::Sub);
var_binop!(Mul, mul, BinaryKind::Mul);
var_binop!(Div, div, BinaryKind::Div);

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.offset(c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.offset(-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.scale(c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.scale(1.0 / c)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v.offset(self)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        (-v).offset(self)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v.scale(self)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        v.recip().scale(self)
    }
}

/// Evaluates a scalar loss at `q` and returns (value, ∂loss/∂q).
pub fn gradient_of<F>(f: F, q: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape, Var<'t>) -> Var<'t>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(q.to_vec());
    let loss = f(&tape, leaf);
    if loss.len() != 1 {
        return Err(Error::LengthMismatch {
            expected: 1,
            got: loss.len(),
        });
    }
    let value = loss.scalar();
    let grads = tape.backward(loss)?;
    Ok((value, grads.wrt(leaf)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    /// Central finite difference of a scalar function of a vector.
    fn fd_grad(f: &dyn Fn(&[f64]) -> f64, q: &[f64], eps: f64) -> Vec<f64> {
        (0..q.len())
            .map(|c| {
                let mut hi = q.to_vec();
                let mut lo = q.to_vec();
                hi[c] += eps;
                lo[c] -= eps;
                (f(&hi) - f(&lo)) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let denom = x.abs().max(y.abs()).max(1e-8);
            assert!(
                (x - y).abs() / denom < tol,
                "{what}[{i}]: {x} vs {y} (rel {})",
                (x - y).abs() / denom
            );
        }
    }

    #[test]
    fn sum_of_squares_gradient_is_two_q() {
        let (value, grad) = gradient_of(|_, q| q.square().sum(), &[0.5, 0.25]).unwrap();
        assert!((value - 0.3125).abs() < 1e-12);
        assert_eq!(grad, vec![1.0, 0.5]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (value, grad) = gradient_of(
            |t, q| {
                let c = t.scalar_const(3.0);
                // q participates but the result only depends on the constant
                (q.sum() * 0.0) + c
            },
            &[0.1, 0.9],
        )
        .unwrap();
        assert_eq!(value, 3.0);
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    #[test]
    fn elementwise_chain_matches_finite_differences() {
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let y = ((v.tanh() * 2.0 + 0.3).exp() + v.sigmoid()).sqrt().sum();
            y.scalar()
        };
        let q = vec![0.3, -0.4, 0.9, 0.05];
        let (_, grad) = gradient_of(
            |_, v| ((v.tanh() * 2.0 + 0.3).exp() + v.sigmoid()).sqrt().sum(),
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "elementwise");
    }

    #[test]
    fn broadcast_scalar_gradients_match_fd() {
        // loss = sum((x * s + s^2) / (s + 2)), x buffer, s scalar leaf packed last
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let x = v.slice(0, 3);
            let s = v.slice(3, 1);
            ((x * s + s.square()) / (s + 2.0)).sum().scalar()
        };
        let q = vec![0.2, -0.7, 1.1, 0.4];
        let (_, grad) = gradient_of(
            |_, v| {
                let x = v.slice(0, 3);
                let s = v.slice(3, 1);
                ((x * s + s.square()) / (s + 2.0)).sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "broadcast");
    }

    #[test]
    fn fft_adjoint_satisfies_dot_product_identity() {
        // <F v, w> == <v, F^H w> must hold exactly up to rounding for the
        // forward/backward pair. Randomized probe over interleaved buffers.
        let mut rng = stream_rng(5, 0);
        let n = 16;
        let v: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let t = Tape::new();
        let leaf = t.leaf(v.clone());
        let y = leaf.fft();
        let wc = t.constant(w.clone());
        let loss = (y * wc).sum();
        let lhs = loss.scalar();
        let grads = t.backward(loss).unwrap();
        let gv = grads.wrt(leaf);
        let rhs: f64 = gv.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn fft_roundtrip_gradient_matches_fd() {
        let n = 8;
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let zeros = t.constant(vec![0.0; n]);
            let spec = v.interleave(zeros).fft();
            let back = spec.ifft().scale(1.0 / n as f64).re_part();
            (back.square()).sum().scalar()
        };
        let mut rng = stream_rng(7, 0);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = gradient_of(
            |t, v| {
                let zeros = t.constant(vec![0.0; n]);
                let spec = v.interleave(zeros).fft();
                let back = spec.ifft().scale(1.0 / n as f64).re_part();
                (back.square()).sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "fft roundtrip");
    }

    #[test]
    fn complex_ops_match_fd() {
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let a = v.slice(0, 4);
            let b = v.slice(4, 4);
            a.cmul(b).complex_abs().sum().scalar()
        };
        let q = vec![0.3, -0.2, 0.8, 0.5, -0.6, 0.9, 0.1, 0.7];
        let (_, grad) = gradient_of(
            |_, v| {
                let a = v.slice(0, 4);
                let b = v.slice(4, 4);
                a.cmul(b).complex_abs().sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "cmul/abs");
    }

    #[test]
    fn hermitian_extend_gradient_matches_fd() {
        let n = 8;
        let m = n / 2 + 1;
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let re = v.slice(0, m);
            let im = v.slice(m, m);
            let full = re.hermitian_extend(im, n);
            // weight asymmetrically so mirrored bins matter
            let w = t.constant((0..2 * n).map(|i| 0.1 + 0.05 * i as f64).collect());
            (full * w).sum().scalar()
        };
        let mut rng = stream_rng(11, 0);
        let q: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = gradient_of(
            |t, v| {
                let re = v.slice(0, m);
                let im = v.slice(m, m);
                let full = re.hermitian_extend(im, n);
                let w = t.constant((0..2 * n).map(|i| 0.1 + 0.05 * i as f64).collect());
                (full * w).sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "hermitian");
    }

    #[test]
    fn one_pole_gradient_matches_fd() {
        let n = 12;
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let u = v.slice(0, n);
            let alpha = v.slice(n, 1).sigmoid(); // keep alpha in (0,1)
            let w = t.constant((0..n).map(|i| (i as f64 * 0.37).sin()).collect());
            (u.one_pole(alpha) * w).sum().scalar()
        };
        let mut rng = stream_rng(13, 0);
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        q.push(1.2); // pre-sigmoid alpha
        let (_, grad) = gradient_of(
            |t, v| {
                let u = v.slice(0, n);
                let alpha = v.slice(n, 1).sigmoid();
                let w = t.constant((0..n).map(|i| (i as f64 * 0.37).sin()).collect());
                (u.one_pole(alpha) * w).sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "one pole");
    }

    #[test]
    fn dense_gradient_matches_fd() {
        let (rows, cols) = (3, 4);
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let w = v.slice(0, rows * cols);
            let b = v.slice(rows * cols, rows);
            let x = v.slice(rows * cols + rows, cols);
            x.dense(w, b, rows, cols).tanh().sum().scalar()
        };
        let mut rng = stream_rng(17, 0);
        let q: Vec<f64> = (0..rows * cols + rows + cols)
            .map(|_| rng.gen_range(-0.8..0.8))
            .collect();
        let (_, grad) = gradient_of(
            |_, v| {
                let w = v.slice(0, rows * cols);
                let b = v.slice(rows * cols, rows);
                let x = v.slice(rows * cols + rows, cols);
                x.dense(w, b, rows, cols).tanh().sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "dense");
    }

    #[test]
    fn conv_gradient_matches_fd() {
        let n = 10;
        let k = 3;
        let dilation = 2;
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let x = v.slice(0, n);
            let w = v.slice(n, k);
            let probe = t.constant((0..n).map(|i| ((i * i) % 5) as f64 * 0.2 - 0.3).collect());
            (x.conv1d_causal(w, dilation) * probe).sum().scalar()
        };
        let mut rng = stream_rng(19, 0);
        let q: Vec<f64> = (0..n + k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grad) = gradient_of(
            |t, v| {
                let x = v.slice(0, n);
                let w = v.slice(n, k);
                let probe = t.constant((0..n).map(|i| ((i * i) % 5) as f64 * 0.2 - 0.3).collect());
                (x.conv1d_causal(w, dilation) * probe).sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-6, "conv");
    }

    #[test]
    fn max_abs_and_pad_gradients_match_fd() {
        let f = |q: &[f64]| -> f64 {
            let t = Tape::new();
            let v = t.leaf(q.to_vec());
            let peak = v.max_abs();
            let normed = v / peak;
            normed.pad(1, 8).square().sum().scalar()
        };
        let q = vec![0.4, -0.9, 0.2, 0.6];
        let (_, grad) = gradient_of(
            |_, v| {
                let peak = v.max_abs();
                (v / peak).pad(1, 8).square().sum()
            },
            &q,
        )
        .unwrap();
        let fd = fd_grad(&f, &q, 1e-6);
        assert_close(&grad, &fd, 1e-5, "max_abs/pad");
    }

    #[test]
    fn gradients_are_deterministic() {
        let q = vec![0.37, 0.61, 0.12];
        let run = || {
            gradient_of(|_, v| (v.tanh().square() + v.exp()).sum(), &q)
                .unwrap()
                .1
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let err = gradient_of(|_, v| v.tanh(), &[0.1, 0.2]).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }
}
