//! Reverse-mode gradient accumulation over an explicitly recorded operation sequence.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding its
//! value. [`Tape::backward`] then walks the nodes in reverse and pushes
//! vector-Jacobian products to the inputs, finally accumulating into the
//! [`ParamStore`] gradients of every parameter node reached from the loss.

use std::sync::Arc;

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Contiguous row ranges: segment `s` covers rows `offsets[s]..offsets[s + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    /// Panics unless offsets start at 0 and are non-decreasing.
    pub fn from_offsets(offsets: Vec<usize>) -> Self {
        assert!(!offsets.is_empty() && offsets[0] == 0, "offsets must start at 0");
        assert!(
            offsets.windows(2).all(|w| w[0] <= w[1]),
            "offsets must be non-decreasing"
        );
        Self { offsets }
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        Self { offsets }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    ScaleRows(Var, Var),
    SegmentSoftmax(Var, Arc<Segments>),
    SegmentSum(Var, Arc<Segments>),
    Mse(Var, Arc<Matrix>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 x cols` bias to every row of `x`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a single row");
        assert_eq!(b.cols(), self.value(x).cols(), "bias width mismatch");
        let b = b.data().to_vec();
        let mut value = self.value(x).clone();
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&b) {
                *v += bb;
            }
        }
        self.push(value, Op::AddRowBias(x, bias))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self
            .value(a)
            .map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p);
                assert_eq!(src.rows(), rows, "concat row mismatch");
                let w = src.cols();
                value.row_mut(r)[offset..offset + w].copy_from_slice(src.row(r));
                offset += w;
            }
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Arc<Vec<usize>>) -> Var {
        let value = self.value(a).select_rows(&indices);
        self.push(value, Op::GatherRows(a, indices))
    }

    /// Multiplies row `r` of `x` by the scalar `w[r, 0]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Var {
        let wv = self.value(w);
        let xv = self.value(x);
        assert_eq!(wv.shape(), (xv.rows(), 1), "scale_rows weight shape");
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let s = wv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        self.push(value, Op::ScaleRows(x, w))
    }

    /// Softmax of a column vector within each segment.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<Segments>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.cols(), 1, "segment_softmax expects a column vector");
        assert_eq!(x.rows(), segments.total(), "segment total mismatch");
        let mut value = Matrix::zeros(x.rows(), 1);
        for s in 0..segments.count() {
            let range = segments.range(s);
            if range.is_empty() {
                continue;
            }
            let xs = &x.data()[range.clone()];
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut value.data_mut()[range];
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(xs) {
                *o = (v - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        self.push(value, Op::SegmentSoftmax(logits, segments))
    }

    /// Sums the rows of each segment into one output row per segment.
    pub fn segment_sum(&mut self, x: Var, segments: Arc<Segments>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), segments.total(), "segment total mismatch");
        let mut value = Matrix::zeros(segments.count(), xv.cols());
        for s in 0..segments.count() {
            for r in segments.range(s) {
                for (o, v) in value.row_mut(s).iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
        }
        self.push(value, Op::SegmentSum(x, segments))
    }

    /// Mean of squared differences against a constant target; a `1 x 1` node.
    pub fn mse(&mut self, pred: Var, target: Arc<Matrix>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape mismatch");
        let n = p.data().len().max(1) as f64;
        let sse: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(Matrix::scalar(sse / n), Op::Mse(pred, target))
    }

    /// Back-propagates from the scalar node `loss` and adds the resulting
    /// parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRowBias(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, g.scale(*factor)),
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::GatherRows(a, indices) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ScaleRows(x, w) => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut gw = Matrix::zeros(wv.rows(), 1);
                    let mut gx = g.clone();
                    for r in 0..g.rows() {
                        gw.set(r, 0, super::matrix::dot(g.row(r), xv.row(r)));
                        let s = wv.get(r, 0);
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::SegmentSoftmax(logits, segments) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), 1);
                    for s in 0..segments.count() {
                        let range = segments.range(s);
                        let inner: f64 = range.clone().map(|k| y.get(k, 0) * g.get(k, 0)).sum();
                        for k in range {
                            gx.set(k, 0, y.get(k, 0) * (g.get(k, 0) - inner));
                        }
                    }
                    accumulate(&mut grads, *logits, gx);
                }
                Op::SegmentSum(x, segments) => {
                    let mut gx = Matrix::zeros(segments.total(), g.cols());
                    for s in 0..segments.count() {
                        for r in segments.range(s) {
                            gx.row_mut(r).copy_from_slice(g.row(s));
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mse(pred, target) => {
                    let p = self.value(*pred);
                    let n = p.data().len().max(1) as f64;
                    let upstream = g.get(0, 0);
                    let data = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| 2.0 * (a - b) / n * upstream)
                        .collect();
                    accumulate(&mut grads, *pred, Matrix::from_vec(p.rows(), p.cols(), data));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
