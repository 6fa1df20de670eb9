//! Dense row-major matrices and a reverse-mode tape over them.
//!
//! Everything is two dimensional: a vector is a `1 x c` matrix and a scalar
//! is `1 x 1`. The tape records each op eagerly together with whatever it
//! needs for its backward rule; [`Tape::backward`] walks the records in
//! reverse and accumulates gradients into every node that depends on a
//! parameter.

use std::collections::HashMap;
use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::util::Rng;

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;

pub trait Scalar:
    Float + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + std::iter::Sum
{
    const BITS: u32;

    fn of(v: f64) -> Self;

    fn f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided storage.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor[{}x{}] {:?}", self.rows, self.cols, self.data)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(T::one(), self, false, other, false, T::zero(), &mut out);
        Ok(out)
    }

    fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, with `op` an optional transpose.
pub fn gemm<T: Scalar>(alpha: T, a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool, beta: T, c: &mut Tensor<T>) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides above describe the row-major buffers exactly and
    // `c` is borrowed mutably, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Running statistics of a non-affine batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> BnState<T> {
    pub fn new(c: usize) -> Self {
        BnState { mean: vec![T::zero(); c], var: vec![T::one(); c] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Param,
    Linear(Var, Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var, T),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    MeanRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<T>, rstd: Vec<T> },
    Glu(Var),
    Softmax(Var, T),
    LogSoftmax(Var, T),
    Diag(Var),
    Sum(Var),
    Mean(Var),
    BatchNorm { x: Var, xhat: Tensor<T>, rstd: Vec<T>, batch: bool },
    Dropout(Var, Tensor<T>),
    Tanh(Var),
    Sigmoid(Var),
    L2Rows(Var, Vec<T>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Eager computation record. Build the forward pass through the methods
/// below, then call [`Tape::backward`] once on a scalar.
const L2_EPS: f64 = 1e-12;

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<usize, Var>,
    done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), params: HashMap::new(), done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data[0]
    }

    /// A constant input: never receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Binds parameter `pid`. Binding the same id twice returns the same node.
    pub fn param(&mut self, pid: usize, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(&pid) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param, true);
        self.params.insert(pid, v);
        v
    }

    /// `x W + b` with `W: i x o` and `b: 1 x o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.1 != ws.0 || bs != (1, ws.1) {
            return Err(Error::Shape(format!(
                "linear: x {}x{}, W {}x{}, b {}x{}",
                xs.0, xs.1, ws.0, ws.1, bs.0, bs.1
            )));
        }
        let mut out = Tensor::zeros(xs.0, ws.1);
        for r in 0..xs.0 {
            out.row_mut(r).copy_from_slice(self.value(b).row(0));
        }
        gemm(T::one(), self.value(x), false, self.value(w), false, T::one(), &mut out);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(out, Op::Linear(x, w, b), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `alpha * a b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var, alpha: f64) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_err("matmul_nt", sa, sb));
        }
        let mut out = Tensor::zeros(sa.0, sb.0);
        gemm(T::of(alpha), self.value(a), false, self.value(b), true, T::zero(), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMulNt(a, b, T::of(alpha)), ng))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(what, va.shape(), vb.shape()));
        }
        Ok(Tensor {
            rows: va.rows,
            cols: va.cols,
            data: va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect(),
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let out = self.value(a).map(|v| v * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Adds the `1 x c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(r));
        if sr != (1, sa.1) {
            return Err(shape_err("add_row", sa, sr));
        }
        let mut out = self.value(a).clone();
        let row = self.value(r).row(0).to_vec();
        for chunk in out.data.chunks_mut(sa.1.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(&row) {
                *o += b;
            }
        }
        let ng = self.ng(a) || self.ng(r);
        Ok(self.push(out, Op::AddRow(a, r), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(shape_err("concat_cols", (rows, 0), self.shape(p)));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols].copy_from_slice(v.row(r));
            }
            off += v.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p).1).ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(shape_err("concat_rows", (0, cols), self.shape(p)));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.value(p).data);
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor { rows, cols, data };
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::Shape(format!("slice {start}..{} of {c} columns", start + len)));
        }
        let v = self.value(a);
        let out = Tensor::from_fn(r, len, |i, j| v.get(i, start + j));
        let ng = self.ng(a);
        Ok(self.push(out, Op::SliceCols(a, start), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Mean over rows (the token axis): `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.rows == 0 {
            return Err(Error::Shape("mean over zero rows".into()));
        }
        let inv = T::one() / T::of(v.rows as f64);
        let mut out = Tensor::zeros(1, v.cols);
        for r in 0..v.rows {
            for (o, &x) in out.data.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        out.data.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(a);
        Ok(self.push(out, Op::MeanRows(a), ng))
    }

    /// Per-row normalization followed by `gain`/`bias` (`1 x c` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.shape(x);
        if self.shape(gain) != (1, c) || self.shape(bias) != (1, c) {
            return Err(shape_err("layer_norm", (n, c), self.shape(gain)));
        }
        let eps = T::of(LN_EPS);
        let inv_c = T::one() / T::of(c as f64);
        let v = self.value(x);
        let mut xhat = Tensor::zeros(n, c);
        let mut rstd = Vec::with_capacity(n);
        for r in 0..n {
            let row = v.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() * inv_c;
            let rs = T::one() / (var + eps).sqrt();
            for (h, &a) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (a - mean) * rs;
            }
            rstd.push(rs);
        }
        let (g, b) = (self.value(gain).row(0), self.value(bias).row(0));
        let mut out = xhat.clone();
        for r in 0..n {
            for ((o, &gi), &bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng))
    }

    /// `value * sigmoid(gate)` where the input is `value | gate`.
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let (n, w) = self.shape(a);
        if w % 2 != 0 {
            return Err(Error::Shape(format!("glu needs an even width, got {w}")));
        }
        let c = w / 2;
        let v = self.value(a);
        let out = Tensor::from_fn(n, c, |r, j| v.get(r, j) * sigmoid(v.get(r, c + j)));
        let ng = self.ng(a);
        Ok(self.push(out, Op::Glu(a), ng))
    }

    fn softmax_value(v: &Tensor<T>, tau: T, log: bool) -> Tensor<T> {
        let mut out = v.clone();
        for r in 0..v.rows {
            let row = out.row_mut(r);
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max) / tau;
                sum += x.exp();
            }
            let lse = sum.ln();
            for x in row.iter_mut() {
                *x = if log { *x - lse } else { (*x - lse).exp() };
            }
        }
        out
    }

    /// Row-wise `softmax(a / tau)`.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
        }
        let out = Self::softmax_value(self.value(a), T::of(tau), false);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Softmax(a, T::of(tau)), ng))
    }

    /// Row-wise `log softmax(a / tau)`.
    pub fn log_softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
        }
        let out = Self::softmax_value(self.value(a), T::of(tau), true);
        let ng = self.ng(a);
        Ok(self.push(out, Op::LogSoftmax(a, T::of(tau)), ng))
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r != c {
            return Err(shape_err("diag", (r, c), (r, r)));
        }
        let v = self.value(a);
        let out = Tensor::from_fn(r, 1, |i, _| v.get(i, i));
        let ng = self.ng(a);
        Ok(self.push(out, Op::Diag(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::filled(1, 1, s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
        let ng = self.ng(a);
        self.push(Tensor::filled(1, 1, s), Op::Mean(a), ng)
    }

    /// Non-affine batch norm over the row axis. In train mode the batch
    /// statistics normalize the output and update `state` with `momentum`;
    /// in eval mode `state` is used as is.
    pub fn batch_norm(&mut self, x: Var, state: &mut BnState<T>, momentum: f64, mode: Mode) -> Result<Var> {
        let (n, c) = self.shape(x);
        if state.mean.len() != c || state.var.len() != c {
            return Err(Error::Shape(format!("batch norm over {c} columns with {} running stats", state.mean.len())));
        }
        let eps = T::of(BN_EPS);
        let v = self.value(x);
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::TooFewPoints { need: 2, got: n });
                }
                let inv = T::one() / T::of(n as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for r in 0..n {
                    for (m, &a) in mean.iter_mut().zip(v.row(r)) {
                        *m += a;
                    }
                }
                mean.iter_mut().for_each(|m| *m *= inv);
                for r in 0..n {
                    for ((s, &a), &m) in var.iter_mut().zip(v.row(r)).zip(&mean) {
                        *s += (a - m) * (a - m);
                    }
                }
                var.iter_mut().for_each(|s| *s *= inv);
                let mo = T::of(momentum);
                for j in 0..c {
                    state.mean[j] = (T::one() - mo) * state.mean[j] + mo * mean[j];
                    state.var[j] = (T::one() - mo) * state.var[j] + mo * var[j];
                }
                (mean, var)
            }
            Mode::Eval => (state.mean.clone(), state.var.clone()),
        };
        let rstd: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let xhat = Tensor::from_fn(n, c, |r, j| (v.get(r, j) - mean[j]) * rstd[j]);
        let ng = self.ng(x);
        Ok(self.push(
            xhat.clone(),
            Op::BatchNorm { x, xhat, rstd, batch: mode == Mode::Train },
            ng,
        ))
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `a` unchanged.
    pub fn dropout(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let (r, c) = self.shape(a);
        let mask = Tensor::from_fn(r, c, |_, _| if rng.random::<f64>() < rate { T::zero() } else { keep });
        let out = self.zip_with(a, &mask, |x, m| x * m);
        let ng = self.ng(a);
        Ok(self.push(out, Op::Dropout(a, mask), ng))
    }

    fn zip_with(&self, a: Var, t: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let v = self.value(a);
        Tensor { rows: v.rows, cols: v.cols, data: v.data.iter().zip(&t.data).map(|(&x, &y)| f(x, y)).collect() }
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Each row divided by `sqrt(|row|^2 + 1e-12)`.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let norms: Vec<T> = (0..v.rows)
            .map(|r| (v.row(r).iter().fold(T::zero(), |s, &x| s + x * x) + T::of(L2_EPS)).sqrt())
            .collect();
        let out = Tensor::from_fn(v.rows, v.cols, |r, c| v.get(r, c) / norms[r]);
        let ng = self.ng(a);
        self.push(out, Op::L2Rows(a, norms), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Reverse sweep from a `1 x 1` loss. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(vec![shape.0, shape.1]));
        }
        self.backward_from(loss, Tensor::filled(1, 1, T::one()))
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient.
    pub fn backward_from(&mut self, out: Var, seed: Tensor<T>) -> Result<()> {
        if self.done {
            return Err(Error::BackwardTwice);
        }
        if seed.shape() != self.shape(out) {
            return Err(shape_err("backward seed", seed.shape(), self.shape(out)));
        }
        self.done = true;
        self.grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Param | Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Tensor<T>) {
        // Split borrows: `nodes` is read, `grads` is written.
        let nodes = std::mem::take(&mut self.nodes);
        let node = &nodes[i];
        let val = |v: Var| &nodes[v.0].value;
        let ngf = |v: Var| nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut Tensor<T>)| {
            if !ngf(v) {
                return;
            }
            let (r, c) = nodes[v.0].value.shape();
            f(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)));
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear(x, w, b) => {
                acc(*x, &|gx| gemm(T::one(), g, false, val(*w), true, T::one(), gx));
                acc(*w, &|gw| gemm(T::one(), val(*x), true, g, false, T::one(), gw));
                acc(*b, &|gb| {
                    for r in 0..g.rows {
                        for (o, &d) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                acc(*a, &|ga| gemm(T::one(), g, false, val(*b), true, T::one(), ga));
                acc(*b, &|gb| gemm(T::one(), val(*a), true, g, false, T::one(), gb));
            }
            Op::MatMulNt(a, b, alpha) => {
                acc(*a, &|ga| gemm(*alpha, g, false, val(*b), false, T::one(), ga));
                acc(*b, &|gb| gemm(*alpha, g, true, val(*a), false, T::one(), gb));
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| ga.add_assign(g));
                acc(*b, &|gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| ga.add_assign(g));
                acc(*b, &|gb| {
                    for (o, &d) in gb.data.iter_mut().zip(&g.data) {
                        *o -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                acc(*a, &|ga| {
                    for ((o, &d), &y) in ga.data.iter_mut().zip(&g.data).zip(&val(*b).data) {
                        *o += d * y;
                    }
                });
                acc(*b, &|gb| {
                    for ((o, &d), &x) in gb.data.iter_mut().zip(&g.data).zip(&val(*a).data) {
                        *o += d * x;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &|ga| {
                for (o, &d) in ga.data.iter_mut().zip(&g.data) {
                    *o += d * *s;
                }
            }),
            Op::AddRow(a, r) => {
                acc(*a, &|ga| ga.add_assign(g));
                acc(*r, &|gr| {
                    for row in 0..g.rows {
                        for (o, &d) in gr.data.iter_mut().zip(g.row(row)) {
                            *o += d;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols;
                    acc(p, &|gp| {
                        for r in 0..g.rows {
                            for (o, &d) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += d;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).len();
                    acc(p, &|gp| {
                        for (o, &d) in gp.data.iter_mut().zip(&g.data[off..off + len]) {
                            *o += d;
                        }
                    });
                    off += len;
                }
            }
            Op::SliceCols(a, start) => acc(*a, &|ga| {
                for r in 0..g.rows {
                    for (o, &d) in ga.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                        *o += d;
                    }
                }
            }),
            Op::Transpose(a) => acc(*a, &|ga| ga.add_assign(&g.transpose())),
            Op::MeanRows(a) => acc(*a, &|ga| {
                let inv = T::one() / T::of(ga.rows as f64);
                for r in 0..ga.rows {
                    for (o, &d) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o += d * inv;
                    }
                }
            }),
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gn = val(*gain).row(0);
                acc(*x, &|gx| {
                    let c = xhat.cols;
                    let inv_c = T::one() / T::of(c as f64);
                    let mut dxh = vec![T::zero(); c];
                    for r in 0..xhat.rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            dxh[j] = gr[j] * gn[j];
                            m1 += dxh[j];
                            m2 += dxh[j] * hr[j];
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += rstd[r] * (dxh[j] - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(*gain, &|gg| {
                    for r in 0..g.rows {
                        for ((o, &d), &h) in gg.data.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += d * h;
                        }
                    }
                });
                acc(*bias, &|gb| {
                    for r in 0..g.rows {
                        for (o, &d) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += d;
                        }
                    }
                });
            }
            Op::Glu(a) => acc(*a, &|ga| {
                let x = val(*a);
                let c = g.cols;
                for r in 0..g.rows {
                    for j in 0..c {
                        let (v, gate) = (x.get(r, j), x.get(r, c + j));
                        let s = sigmoid(gate);
                        let d = g.get(r, j);
                        ga.data[r * 2 * c + j] += d * s;
                        ga.data[r * 2 * c + c + j] += d * v * s * (T::one() - s);
                    }
                }
            }),
            Op::Softmax(a, tau) => acc(*a, &|ga| {
                let y = &node.value;
                for r in 0..y.rows {
                    let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&d, &p)| d * p).sum();
                    for ((o, &d), &p) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o += p * (d - dot) / *tau;
                    }
                }
            }),
            Op::LogSoftmax(a, tau) => acc(*a, &|ga| {
                let y = &node.value;
                for r in 0..y.rows {
                    let total: T = g.row(r).iter().copied().sum();
                    for ((o, &d), &ly) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o += (d - ly.exp() * total) / *tau;
                    }
                }
            }),
            Op::Diag(a) => acc(*a, &|ga| {
                for r in 0..g.rows {
                    let c = ga.cols;
                    ga.data[r * c + r] += g.data[r];
                }
            }),
            Op::Sum(a) => acc(*a, &|ga| {
                let d = g.data[0];
                ga.data.iter_mut().for_each(|o| *o += d);
            }),
            Op::Mean(a) => acc(*a, &|ga| {
                let d = g.data[0] / T::of(ga.len().max(1) as f64);
                ga.data.iter_mut().for_each(|o| *o += d);
            }),
            Op::BatchNorm { x, xhat, rstd, batch } => acc(*x, &|gx| {
                let (n, c) = xhat.shape();
                if !*batch {
                    for r in 0..n {
                        for ((o, &d), &s) in gx.row_mut(r).iter_mut().zip(g.row(r)).zip(rstd) {
                            *o += d * s;
                        }
                    }
                    return;
                }
                let inv = T::one() / T::of(n as f64);
                let mut m1 = vec![T::zero(); c];
                let mut m2 = vec![T::zero(); c];
                for r in 0..n {
                    for j in 0..c {
                        m1[j] += g.get(r, j);
                        m2[j] += g.get(r, j) * xhat.get(r, j);
                    }
                }
                for r in 0..n {
                    for j in 0..c {
                        let d = g.get(r, j) - m1[j] * inv - xhat.get(r, j) * m2[j] * inv;
                        gx.data[r * c + j] += rstd[j] * d;
                    }
                }
            }),
            Op::Dropout(a, mask) => acc(*a, &|ga| {
                for ((o, &d), &m) in ga.data.iter_mut().zip(&g.data).zip(&mask.data) {
                    *o += d * m;
                }
            }),
            Op::Tanh(a) => acc(*a, &|ga| {
                for ((o, &d), &y) in ga.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                    *o += d * (T::one() - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &|ga| {
                for ((o, &d), &y) in ga.data.iter_mut().zip(&g.data).zip(&node.value.data) {
                    *o += d * y * (T::one() - y);
                }
            }),
            Op::L2Rows(a, norms) => acc(*a, &|ga| {
                let y = &node.value;
                for (r, &n) in norms.iter().enumerate() {
                    let gy = g.row(r).iter().zip(y.row(r)).fold(T::zero(), |s, (&d, &v)| s + d * v);
                    for ((o, &d), &v) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o += (d - v * gy) / n;
                    }
                }
            }),
        }
        self.nodes = nodes;
    }

    /// Gradient of a bound parameter after [`Tape::backward`]; `None` when
    /// the parameter was never bound or did not reach the loss.
    pub fn param_grad(&self, pid: usize) -> Option<&Tensor<T>> {
        self.params.get(&pid).and_then(|v| self.grads[v.0].as_ref())
    }

    /// Gradient of an arbitrary node after the sweep, if one reached it.
    /// Only parameters and leaves keep theirs; interior gradients are
    /// consumed during the sweep.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is (numerically) zero are judged by absolute error instead.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `f` with central differences of step `h` for
/// every entry of every parameter. `f` receives the parameters bound as
/// pids `0..params.len()` and must be deterministic.
pub fn gradcheck(
    params: &[Tensor<f64>],
    h: f64,
    floor: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut out = GradCheck { max_rel: 0.0, max_abs: 0.0, checked: 0 };
    for (pid, p) in params.iter().enumerate() {
        let zeros = Tensor::zeros(p.rows, p.cols);
        let analytic = tape.param_grad(pid).unwrap_or(&zeros).clone();
        for e in 0..p.len() {
            let orig = p.data[e];
            work[pid].data[e] = orig + h;
            let up = eval(&work)?;
            work[pid].data[e] = orig - h;
            let down = eval(&work)?;
            work[pid].data[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data[e];
            out.max_abs = out.max_abs.max((a - numeric).abs());
            out.max_rel = out.max_rel.max(rel_error(a, numeric, floor));
            out.checked += 1;
        }
    }
    Ok(out)
}
