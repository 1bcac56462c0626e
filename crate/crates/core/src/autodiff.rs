//! Tape-based reverse-mode automatic differentiation over dense `f64`
//! matrices.
//!
//! Backward rules are themselves expressed as tape operations, so gradients
//! computed with `create_graph = true` can be differentiated again. The
//! energy-based training loss needs exactly this: it regresses noise onto the
//! input-gradient of the energy, and its parameter gradient is a gradient of
//! a gradient.
//!
//! Tensors are treated as matrices: the last dimension is the column count and
//! all leading dimensions are folded into rows. A rank-1 tensor of length `n`
//! is a `1 x n` row.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch { expected: shape, got: vec![data.len()] });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Tensor { shape: vec![rows, cols], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers, where `a` is
/// stored `a_rows x a_cols` and `op` transposes when the flag is set.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    a: &[f64],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[f64],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
    alpha: f64,
    beta: f64,
    c: &mut [f64],
) {
    let (m, k) = if ta { (a_cols, a_rows) } else { (a_rows, a_cols) };
    let (k2, n) = if tb { (b_cols, b_rows) } else { (b_rows, b_cols) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a_cols as isize) } else { (a_cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b_cols as isize) } else { (b_cols as isize, 1) };
    // SAFETY: the asserts above guarantee every index matrixmultiply touches
    // (given these strides and dimensions) is inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Row-segment layout: segment `s` spans rows `offsets[s]..offsets[s + 1]`,
/// and every row it produces or consumes is scaled by `weights[s]`.
#[derive(Debug)]
pub struct Segments {
    pub offsets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Segments {
    /// Segments of equal size with mean weights.
    pub fn uniform_mean(n_segments: usize, size: usize) -> Self {
        Segments {
            offsets: (0..=n_segments).map(|s| s * size).collect(),
            weights: vec![1.0 / size as f64; n_segments],
        }
    }

    /// Segments from explicit sizes with mean weights; empty segments get weight 0.
    pub fn mean_from_sizes(sizes: &[usize]) -> Self {
        let mut offsets = vec![0];
        for s in sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let weights = sizes.iter().map(|&s| if s == 0 { 0.0 } else { 1.0 / s as f64 }).collect();
        Segments { offsets, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n_rows(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    SumRows(usize),
    BroadcastRows(usize),
    Sum(usize),
    Expand(usize),
    Tanh(usize),
    OneMinusSq(usize),
    SegmentSum(usize, Rc<Segments>),
    SegmentExpand(usize, Rc<Segments>),
    SegmentMax(usize, Rc<Vec<usize>>),
    ScatterMax(usize, Rc<Vec<usize>>),
    GatherMax(usize, Rc<Vec<usize>>),
    GatherRows(usize, Rc<Vec<Option<usize>>>),
    ScatterRows(usize, Rc<Vec<Option<usize>>>),
}

impl Op {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => [Some(a), Some(b)],
            Scale(a, _) | SumRows(a) | BroadcastRows(a) | Sum(a) | Expand(a) | Tanh(a) | OneMinusSq(a) => {
                [Some(a), None]
            }
            SegmentSum(a, _) | SegmentExpand(a, _) | SegmentMax(a, _) | ScatterMax(a, _) | GatherMax(a, _) => {
                [Some(a), None]
            }
            GatherRows(a, _) | ScatterRows(a, _) => [Some(a), None],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. Create one per forward/backward evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    no_grad: Cell<bool>,
    non_finite: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), no_grad: Cell::new(false), non_finite: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that gradients may be taken with respect to.
    pub fn var(&self, t: Tensor) -> Var<'_> {
        let rg = !self.no_grad.get();
        self.push(t, Op::Leaf, rg)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// Whether any recorded value contained NaN or infinity.
    pub fn saw_non_finite(&self) -> bool {
        self.non_finite.get()
    }

    fn push(&self, t: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        if !t.is_finite() {
            self.non_finite.set(true);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(t), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn record(&self, t: Tensor, op: Op) -> Var<'_> {
        let rg = !self.no_grad.get() && op.parents().iter().flatten().any(|&p| self.requires(p));
        self.push(t, op, rg)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    /// `op(self) * op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(self, other: Var<'t>, ta: bool, tb: bool) -> Var<'t> {
        let a = self.value();
        let b = other.value();
        let m = if ta { a.cols() } else { a.rows() };
        let n = if tb { b.rows() } else { b.cols() };
        let mut out = vec![0.0; m * n];
        gemm(&a.data, a.rows(), a.cols(), ta, &b.data, b.rows(), b.cols(), tb, 1.0, 0.0, &mut out);
        self.tape.record(Tensor::matrix(m, n, out), Op::MatMul { a: self.id, b: other.id, ta, tb })
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.matmul_t(other, false, false)
    }

    fn same_shape(&self, other: &Var<'t>, what: &str) {
        let (a, b) = (self.value(), other.value());
        assert!(a.rows() == b.rows() && a.cols() == b.cols(), "{what}: shapes {:?} vs {:?}", a.shape, b.shape);
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.tape.record(v, Op::Scale(self.id, c))
    }

    /// Adds a `1 x n` row to every row of `self`.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let a = self.value();
        let r = row.value();
        assert_eq!(r.len(), a.cols(), "add_row width");
        let mut out = a.as_ref().clone();
        for chunk in out.data.chunks_mut(r.len()) {
            chunk.iter_mut().zip(&r.data).for_each(|(x, b)| *x += b);
        }
        self.tape.record(out, Op::AddRow(self.id, row.id))
    }

    /// Column sums, shaped like a bias of width `cols`.
    pub fn sum_rows(self) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut out = vec![0.0; c];
        for chunk in a.data.chunks(c) {
            out.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
        }
        self.tape.record(Tensor { shape: vec![c], data: out }, Op::SumRows(self.id))
    }

    fn broadcast_rows(self, rows: usize) -> Var<'t> {
        let a = self.value();
        let mut data = Vec::with_capacity(rows * a.len());
        for _ in 0..rows {
            data.extend_from_slice(&a.data);
        }
        self.tape.record(Tensor::matrix(rows, a.len(), data), Op::BroadcastRows(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data.iter().sum();
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id))
    }

    fn expand(self, shape: &[usize]) -> Var<'t> {
        let v = self.item();
        self.tape.record(Tensor::full(shape, v), Op::Expand(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.tape.record(v, Op::Tanh(self.id))
    }

    /// Elementwise `1 - x^2`.
    pub fn one_minus_sq(self) -> Var<'t> {
        let v = self.value().map(|x| 1.0 - x * x);
        self.tape.record(v, Op::OneMinusSq(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn segment_sum(self, seg: Rc<Segments>) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        assert_eq!(seg.n_rows(), a.rows(), "segment rows");
        let mut out = vec![0.0; seg.len() * c];
        // Values are summed in sorted order so the result does not depend on
        // row order within a segment.
        let mut col = Vec::new();
        for s in 0..seg.len() {
            let w = seg.weights[s];
            for j in 0..c {
                col.clear();
                col.extend((seg.offsets[s]..seg.offsets[s + 1]).map(|r| a.data[r * c + j]));
                col.sort_unstable_by(f64::total_cmp);
                out[s * c + j] = w * col.iter().sum::<f64>();
            }
        }
        self.tape.record(Tensor::matrix(seg.len(), c, out), Op::SegmentSum(self.id, seg))
    }

    fn segment_expand(self, seg: Rc<Segments>) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut out = vec![0.0; seg.n_rows() * c];
        for s in 0..seg.len() {
            let w = seg.weights[s];
            for r in seg.offsets[s]..seg.offsets[s + 1] {
                out[r * c..(r + 1) * c].iter_mut().zip(&a.data[s * c..(s + 1) * c]).for_each(|(o, x)| *o = w * x);
            }
        }
        self.tape.record(Tensor::matrix(seg.n_rows(), c, out), Op::SegmentExpand(self.id, seg))
    }

    /// Columnwise maximum within each segment (ties to the first row).
    /// Segments must be non-empty; weights are ignored.
    pub fn segment_max(self, seg: &Segments) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut out = vec![f64::NEG_INFINITY; seg.len() * c];
        let mut arg = vec![0usize; seg.len() * c];
        for s in 0..seg.len() {
            assert!(seg.offsets[s + 1] > seg.offsets[s], "segment_max over empty segment");
            for r in seg.offsets[s]..seg.offsets[s + 1] {
                for j in 0..c {
                    let x = a.data[r * c + j];
                    if x > out[s * c + j] {
                        out[s * c + j] = x;
                        arg[s * c + j] = r;
                    }
                }
            }
        }
        self.tape.record(Tensor::matrix(seg.len(), c, out), Op::SegmentMax(self.id, Rc::new(arg)))
    }

    fn scatter_max(self, arg: Rc<Vec<usize>>, rows: usize) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut out = vec![0.0; rows * c];
        for (i, &r) in arg.iter().enumerate() {
            out[r * c + i % c] += a.data[i];
        }
        self.tape.record(Tensor::matrix(rows, c, out), Op::ScatterMax(self.id, arg))
    }

    fn gather_max(self, arg: Rc<Vec<usize>>) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let out: Vec<f64> = arg.iter().enumerate().map(|(i, &r)| a.data[r * c + i % c]).collect();
        let rows = arg.len() / c;
        self.tape.record(Tensor::matrix(rows, c, out), Op::GatherMax(self.id, arg))
    }

    /// `out[i] = self[idx[i]]`, or a zero row for `None`.
    pub fn gather_rows(self, idx: Rc<Vec<Option<usize>>>) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut out = vec![0.0; idx.len() * c];
        for (i, r) in idx.iter().enumerate() {
            if let Some(r) = *r {
                out[i * c..(i + 1) * c].copy_from_slice(&a.data[r * c..(r + 1) * c]);
            }
        }
        self.tape.record(Tensor::matrix(idx.len(), c, out), Op::GatherRows(self.id, idx))
    }

    fn scatter_rows(self, idx: Rc<Vec<Option<usize>>>, rows: usize) -> Var<'t> {
        let a = self.value();
        let c = a.cols();
        let mut out = vec![0.0; rows * c];
        for (i, r) in idx.iter().enumerate() {
            if let Some(r) = *r {
                out[r * c..(r + 1) * c].iter_mut().zip(&a.data[i * c..(i + 1) * c]).for_each(|(o, x)| *o += x);
            }
        }
        self.tape.record(Tensor::matrix(rows, c, out), Op::ScatterRows(self.id, idx))
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.same_shape(&rhs, "add");
        let v = self.value().zip(&rhs.value(), |a, b| a + b);
        self.tape.record(v, Op::Add(self.id, rhs.id))
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.same_shape(&rhs, "sub");
        let v = self.value().zip(&rhs.value(), |a, b| a - b);
        self.tape.record(v, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_shape(&rhs, "mul");
        let v = self.value().zip(&rhs.value(), |a, b| a * b);
        self.tape.record(v, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

/// Gradients of the scalar `output` with respect to each of `wrt`.
///
/// Inputs that `output` does not depend on get a zero gradient. With
/// `create_graph` the returned values are recorded on the tape and can be
/// differentiated again; otherwise they are detached constants.
pub fn grad<'t>(output: Var<'t>, wrt: &[Var<'t>], create_graph: bool) -> Result<Vec<Var<'t>>> {
    let tape = output.tape;
    if output.value().len() != 1 {
        return Err(Error::ShapeMismatch { expected: vec![1], got: output.shape() });
    }
    if tape.saw_non_finite() {
        return Err(Error::NonFinite("autodiff forward pass".into()));
    }
    let n = output.id + 1;
    let (ops, req): (Vec<Op>, Vec<bool>) = {
        let nodes = tape.nodes.borrow();
        nodes[..n].iter().map(|nd| (nd.op.clone(), nd.requires_grad)).unzip()
    };
    let mut reach = vec![false; n];
    reach[output.id] = true;
    for id in (0..n).rev() {
        if reach[id] && req[id] {
            for p in ops[id].parents().into_iter().flatten() {
                reach[p] = true;
            }
        }
    }
    let live = |id: usize| reach[id] && req[id];

    let prev = tape.no_grad.replace(!create_graph);
    let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
    grads[output.id] = Some(tape.constant(Tensor::full(&output.shape(), 1.0)));

    let accumulate = |grads: &mut Vec<Option<Var<'t>>>, id: usize, g: Var<'t>| {
        grads[id] = Some(match grads[id] {
            Some(prev) => prev + g,
            None => g,
        });
    };

    for id in (0..n).rev() {
        let Some(g) = grads[id] else { continue };
        if !live(id) {
            continue;
        }
        let v = |i: usize| Var { tape, id: i };
        match &ops[id] {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                if live(a) {
                    let ga = if ta { v(b).matmul_t(g, tb, true) } else { g.matmul_t(v(b), false, !tb) };
                    accumulate(&mut grads, a, ga);
                }
                if live(b) {
                    let gb = if tb { g.matmul_t(v(a), true, ta) } else { v(a).matmul_t(g, !ta, false) };
                    accumulate(&mut grads, b, gb);
                }
            }
            &Op::Add(a, b) => {
                if live(a) {
                    accumulate(&mut grads, a, g);
                }
                if live(b) {
                    accumulate(&mut grads, b, g);
                }
            }
            &Op::Sub(a, b) => {
                if live(a) {
                    accumulate(&mut grads, a, g);
                }
                if live(b) {
                    accumulate(&mut grads, b, -g);
                }
            }
            &Op::Mul(a, b) => {
                if live(a) {
                    accumulate(&mut grads, a, g * v(b));
                }
                if live(b) {
                    accumulate(&mut grads, b, g * v(a));
                }
            }
            &Op::Scale(a, c) => accumulate(&mut grads, a, g.scale(c)),
            &Op::AddRow(a, r) => {
                if live(a) {
                    accumulate(&mut grads, a, g);
                }
                if live(r) {
                    let gr = g.sum_rows();
                    let gr = reshape_like(tape, gr, &v(r).shape());
                    accumulate(&mut grads, r, gr);
                }
            }
            &Op::SumRows(a) => {
                let rows = v(a).value().rows();
                accumulate(&mut grads, a, g.broadcast_rows(rows));
            }
            &Op::BroadcastRows(a) => {
                let gr = g.sum_rows();
                let gr = reshape_like(tape, gr, &v(a).shape());
                accumulate(&mut grads, a, gr);
            }
            &Op::Sum(a) => {
                let shape = v(a).shape();
                accumulate(&mut grads, a, g.expand(&shape));
            }
            &Op::Expand(a) => {
                let s = g.sum();
                accumulate(&mut grads, a, reshape_like(tape, s, &v(a).shape()));
            }
            &Op::Tanh(a) => accumulate(&mut grads, a, g * v(id).one_minus_sq()),
            &Op::OneMinusSq(a) => accumulate(&mut grads, a, g * v(a).scale(-2.0)),
            Op::SegmentSum(a, seg) => accumulate(&mut grads, *a, g.segment_expand(seg.clone())),
            Op::SegmentExpand(a, seg) => accumulate(&mut grads, *a, g.segment_sum(seg.clone())),
            Op::SegmentMax(a, arg) => {
                let rows = v(*a).value().rows();
                accumulate(&mut grads, *a, g.scatter_max(arg.clone(), rows));
            }
            Op::ScatterMax(a, arg) => accumulate(&mut grads, *a, g.gather_max(arg.clone())),
            Op::GatherMax(a, arg) => {
                let rows = v(*a).value().rows();
                accumulate(&mut grads, *a, g.scatter_max(arg.clone(), rows));
            }
            Op::GatherRows(a, idx) => {
                let rows = v(*a).value().rows();
                accumulate(&mut grads, *a, g.scatter_rows(idx.clone(), rows));
            }
            Op::ScatterRows(a, idx) => accumulate(&mut grads, *a, g.gather_rows(idx.clone())),
        }
    }
    tape.no_grad.set(prev);
    if tape.saw_non_finite() {
        return Err(Error::NonFinite("autodiff backward pass".into()));
    }
    Ok(wrt
        .iter()
        .map(|w| match grads.get(w.id).copied().flatten() {
            Some(g) if live(w.id) => g,
            _ => tape.constant(Tensor::zeros(&w.shape())),
        })
        .collect())
}

/// Gives `x` the target shape when element counts agree. Reshaping is a
/// no-op for differentiation, so it is recorded as a scale by one.
fn reshape_like<'t>(tape: &'t Tape, x: Var<'t>, shape: &[usize]) -> Var<'t> {
    if x.shape() == shape {
        return x;
    }
    let mut t = x.value().as_ref().clone();
    assert_eq!(t.len(), shape.iter().product::<usize>(), "reshape size");
    t.shape = shape.to_vec();
    let rg = !tape.no_grad.get() && tape.requires(x.id);
    tape.push(t, Op::Scale(x.id, 1.0), rg)
}
