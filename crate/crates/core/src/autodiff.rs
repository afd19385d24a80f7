//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node appended after its inputs, so
//! node order is a topological order. [`Graph::backward`] walks the nodes once
//! in reverse and accumulates (sums) gradient contributions, which makes
//! tensors used several times behave correctly.
//!
//! Parameters are registered by reference with [`Graph::param`]; a graph never
//! mutates them. One graph per sentence keeps graphs independent, so separate
//! graphs may be built on separate threads.

#![allow(clippy::needless_range_loop)]

use std::borrow::Cow;

use rand::Rng;

use crate::tensor::{gemm, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols {
        input: Var,
        start: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    Mask {
        input: Var,
        mask: Tensor,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Unfold {
        input: Var,
        segments: Vec<(usize, usize)>,
        width: usize,
    },
    SegmentMax {
        input: Var,
        argmax: Vec<usize>,
    },
    Bilinear {
        left: Var,
        weight: Var,
        right: Var,
    },
    PairwiseBilinear {
        start: Var,
        weight: Var,
        end: Var,
        projected: Vec<f64>,
    },
    PairwiseSum(Var, Var),
    Lstm {
        input: Var,
        recurrent: Var,
        reverse: bool,
        mask: Option<Tensor>,
        gates: Vec<f64>,
        cells: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation record.
#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    grads: Vec<Option<Vec<f64>>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, t: &Tensor, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape {
        op,
        shape: t.shape().to_vec(),
        reason: reason.into(),
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate {} not in [0, 1)", rate);
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(shape);
    for v in mask.data_mut() {
        *v = if rng.gen::<f64>() < rate { 0.0 } else { keep };
    }
    mask
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, requires_grad)
    }

    /// Register a trainable tensor by reference.
    pub fn param(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, true)
    }

    /// Register an owned trainable tensor.
    pub fn param_owned(&mut self, tensor: Tensor) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, true)
    }

    /// Register a tensor that receives no gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(Cow::Owned(tensor), Op::Leaf, false)
    }

    /// Register a borrowed tensor that receives no gradient.
    pub fn constant_ref(&mut self, tensor: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(tensor), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v` after [`Graph::backward`], if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Move the gradient of `v` out of the graph.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, ta.data(), false, tb.data(), false, out.data_mut(), 0.0);
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let mut out = ta.clone();
        out.data_mut()
            .iter_mut()
            .zip(tb.data())
            .for_each(|(o, &y)| *o += y);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rank() != 1 || tb.len() != tx.last_dim() {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let n = tb.len();
        for row in out.data_mut().chunks_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(o, &b)| *o += b);
        }
        Ok(self.push_op(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let mut out = ta.clone();
        out.data_mut()
            .iter_mut()
            .zip(tb.data())
            .for_each(|(o, &y)| *o *= y);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push_op(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push_op(out, Op::Sigmoid(x), &[x])
    }

    /// Concatenation along the last axis. All leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = match parts.first() {
            Some(&v) => self.value(v),
            None => {
                return Err(TensorError::InvalidShape {
                    op: "concat",
                    shape: vec![],
                    reason: "no inputs".into(),
                })
            }
        };
        if first.rank() == 0 {
            return Err(invalid("concat", first, "scalars cannot be concatenated"));
        }
        let lead = first.shape()[..first.rank() - 1].to_vec();
        let rows = first.outer_len();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != first.rank() || t.shape()[..t.rank() - 1] != lead[..] {
                return Err(mismatch("concat", first, t));
            }
            total += t.last_dim();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        Ok(self.push_op(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Concatenation along the first axis of row blocks with a common width;
    /// produces a rank-2 tensor.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = match parts.first() {
            Some(&v) => self.value(v).last_dim(),
            None => {
                return Err(TensorError::InvalidShape {
                    op: "stack_rows",
                    shape: vec![],
                    reason: "no inputs".into(),
                })
            }
        };
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.last_dim() != cols || t.rank() == 0 {
                return Err(mismatch("stack_rows", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push_op(out, Op::StackRows(parts.to_vec()), parts))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        let n = t.last_dim();
        if t.rank() == 0 || start >= end || end > n {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                size: n,
            });
        }
        let width = end - start;
        let mut data = Vec::with_capacity(t.outer_len() * width);
        for row in t.data().chunks(n) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let out = Tensor::new(shape, data)?;
        Ok(self.push_op(out, Op::SliceCols { input: x, start }, &[x]))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(invalid("slice_rows", t, "expected rank 2"));
        }
        let rows = t.shape()[0];
        if start >= end || end > rows {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                size: rows,
            });
        }
        let cols = t.shape()[1];
        let out = Tensor::new(vec![end - start, cols], t.data()[start * cols..end * cols].to_vec())?;
        Ok(self.push_op(out, Op::SliceRows { input: x, start }, &[x]))
    }

    /// Multiplies by a constant mask of the same shape, or by a rank-1 mask
    /// broadcast over every row of the last axis.
    pub fn apply_mask(&mut self, x: Var, mask: Tensor) -> Result<Var, TensorError> {
        let t = self.value(x);
        let broadcast = mask.rank() == 1 && mask.len() == t.last_dim();
        if mask.shape() != t.shape() && !broadcast {
            return Err(mismatch("apply_mask", t, &mask));
        }
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(mask.len()) {
            row.iter_mut().zip(mask.data()).for_each(|(o, &m)| *o *= m);
        }
        Ok(self.push_op(out, Op::Mask { input: x, mask }, &[x]))
    }

    /// Inverted dropout with an independent mask entry per element. A rate of
    /// zero returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).shape(), rate, rng);
        self.apply_mask(x, mask)
    }

    /// Inverted dropout with one mask shared by every row (every time step).
    pub fn shared_dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(&[self.value(x).last_dim()], rate, rng);
        self.apply_mask(x, mask)
    }

    /// Rows of a rank-2 table, one per index.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(invalid("gather", t, "expected rank-2 table"));
        }
        if indices.is_empty() {
            return Err(invalid("gather", t, "no indices"));
        }
        let (rows, cols) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    size: rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), cols], data)?;
        Ok(self.push_op(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    /// Convolution windows over row segments.
    ///
    /// For every segment `(start, len)` of the rank-2 input and every position
    /// `p < len`, emits the concatenation of rows `start + p .. start + p + width`.
    /// Rows past the end of the segment are read as zeros, so each segment
    /// yields exactly `len` windows.
    pub fn unfold(
        &mut self,
        x: Var,
        segments: &[(usize, usize)],
        width: usize,
    ) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() != 2 || width == 0 {
            return Err(invalid("unfold", t, "expected rank 2 and positive width"));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let total: usize = segments.iter().map(|s| s.1).sum();
        if total == 0 {
            return Err(invalid("unfold", t, "empty segments"));
        }
        for &(start, len) in segments {
            if len == 0 || start + len > rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "unfold",
                    index: start + len,
                    size: rows,
                });
            }
        }
        let mut out = Tensor::zeros(&[total, width * d]);
        let od = out.data_mut();
        let mut r = 0;
        for &(start, len) in segments {
            for p in 0..len {
                let base = r * width * d;
                for j in 0..width.min(len - p) {
                    od[base + j * d..base + (j + 1) * d].copy_from_slice(t.row(start + p + j));
                }
                r += 1;
            }
        }
        Ok(self.push_op(
            out,
            Op::Unfold {
                input: x,
                segments: segments.to_vec(),
                width,
            },
            &[x],
        ))
    }

    /// Column-wise maximum over consecutive row segments of the given lengths.
    /// Ties resolve to the earliest row.
    pub fn segment_max(&mut self, x: Var, lengths: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(invalid("segment_max", t, "expected rank 2"));
        }
        let (rows, k) = (t.shape()[0], t.shape()[1]);
        if lengths.is_empty() || lengths.contains(&0) || lengths.iter().sum::<usize>() != rows {
            return Err(invalid(
                "segment_max",
                t,
                format!("segment lengths {:?} do not tile the rows", lengths),
            ));
        }
        let mut out = Vec::with_capacity(lengths.len() * k);
        let mut argmax = Vec::with_capacity(lengths.len() * k);
        let mut start = 0;
        for &len in lengths {
            for col in 0..k {
                let mut best = start;
                for r in start + 1..start + len {
                    if t.data()[r * k + col] > t.data()[best * k + col] {
                        best = r;
                    }
                }
                out.push(t.data()[best * k + col]);
                argmax.push(best);
            }
            start += len;
        }
        let out = Tensor::new(vec![lengths.len(), k], out)?;
        Ok(self.push_op(out, Op::SegmentMax { input: x, argmax }, &[x]))
    }

    /// `out[k] = Σ_{p,q} left[p] · weight[p,k,q] · right[q]` for vectors
    /// `left`, `right` of size `d` and a `d×c×d` weight.
    pub fn bilinear(&mut self, left: Var, weight: Var, right: Var) -> Result<Var, TensorError> {
        let (tl, tw, tr) = (self.value(left), self.value(weight), self.value(right));
        if tl.rank() != 1 || tr.rank() != 1 || tw.rank() != 3 {
            return Err(mismatch("bilinear", tl, tw));
        }
        let (d, c) = (tl.len(), tw.shape()[1]);
        if tw.shape()[0] != d || tw.shape()[2] != tr.len() {
            return Err(mismatch("bilinear", tw, tr));
        }
        let e = tr.len();
        let mut out = vec![0.0; c];
        for p in 0..d {
            for (k, o) in out.iter_mut().enumerate() {
                let w = &tw.data()[(p * c + k) * e..(p * c + k + 1) * e];
                let inner: f64 = w.iter().zip(tr.data()).map(|(a, b)| a * b).sum();
                *o += tl.data()[p] * inner;
            }
        }
        let out = Tensor::new(vec![c], out)?;
        Ok(self.push_op(
            out,
            Op::Bilinear {
                left,
                weight,
                right,
            },
            &[left, weight, right],
        ))
    }

    /// The bilinear form applied to every (start row, end row) pair:
    /// `out[s,e,k] = Σ_{p,q} start[s,p] · weight[p,k,q] · end[e,q]`, giving an
    /// `l×l×c` tensor.
    pub fn pairwise_bilinear(
        &mut self,
        start: Var,
        weight: Var,
        end: Var,
    ) -> Result<Var, TensorError> {
        let (ts, tw, te) = (self.value(start), self.value(weight), self.value(end));
        if ts.rank() != 2 || te.rank() != 2 || tw.rank() != 3 || ts.shape() != te.shape() {
            return Err(mismatch("pairwise_bilinear", ts, te));
        }
        let (l, d) = (ts.shape()[0], ts.shape()[1]);
        let c = tw.shape()[1];
        if tw.shape()[0] != d || tw.shape()[2] != d {
            return Err(mismatch("pairwise_bilinear", ts, tw));
        }
        // projected[s,k,q] = Σ_p start[s,p] weight[p,k,q]
        let mut projected = vec![0.0; l * c * d];
        gemm(l, d, c * d, ts.data(), false, tw.data(), false, &mut projected, 0.0);
        // ske[s,k,e] = Σ_q projected[s,k,q] end[e,q]
        let mut ske = vec![0.0; l * c * l];
        gemm(l * c, d, l, &projected, false, te.data(), true, &mut ske, 0.0);
        let mut out = vec![0.0; l * l * c];
        for s in 0..l {
            for k in 0..c {
                for e in 0..l {
                    out[(s * l + e) * c + k] = ske[(s * c + k) * l + e];
                }
            }
        }
        let out = Tensor::new(vec![l, l, c], out)?;
        Ok(self.push_op(
            out,
            Op::PairwiseBilinear {
                start,
                weight,
                end,
                projected,
            },
            &[start, weight, end],
        ))
    }

    /// One LSTM direction over a whole sequence.
    ///
    /// `input` holds the precomputed `x·W + b` pre-activations (`l×4h`, gate
    /// blocks in the order input, forget, output, candidate) and `recurrent`
    /// is the `h×4h` hidden-to-hidden matrix. The state starts at zero. With
    /// `reverse` the sequence is read from the last row to the first; row `t`
    /// of the `l×h` output is always the hidden state at position `t`. An
    /// optional `mask` of length `h` multiplies the hidden state before it is
    /// fed back.
    pub fn lstm(
        &mut self,
        input: Var,
        recurrent: Var,
        reverse: bool,
        mask: Option<Tensor>,
    ) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(input), self.value(recurrent));
        if tx.rank() != 2 || tw.rank() != 2 {
            return Err(mismatch("lstm", tx, tw));
        }
        let h = tw.shape()[0];
        let (l, four) = (tx.shape()[0], tx.shape()[1]);
        if four != 4 * h || tw.shape()[1] != 4 * h {
            return Err(mismatch("lstm", tx, tw));
        }
        if let Some(m) = &mask {
            if m.len() != h {
                return Err(invalid("lstm", m, format!("mask must have {} entries", h)));
            }
        }
        let mut gates = vec![0.0; l * 4 * h];
        let mut cells = vec![0.0; l * h];
        let mut out = Tensor::zeros(&[l, h]);
        let mut prev_h = vec![0.0; h];
        let mut prev_c = vec![0.0; h];
        for step in 0..l {
            let t = if reverse { l - 1 - step } else { step };
            let pre = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            pre.copy_from_slice(&tx.data()[t * 4 * h..(t + 1) * 4 * h]);
            if step > 0 {
                if let Some(m) = &mask {
                    prev_h.iter_mut().zip(m.data()).for_each(|(a, b)| *a *= b);
                }
                gemm(1, h, 4 * h, &prev_h, false, tw.data(), false, pre, 1.0);
            }
            pre[..3 * h].iter_mut().for_each(|v| *v = sigmoid(*v));
            pre[3 * h..].iter_mut().for_each(|v| *v = v.tanh());
            let row = &mut out.data_mut()[t * h..(t + 1) * h];
            for j in 0..h {
                let c = pre[h + j] * prev_c[j] + pre[j] * pre[3 * h + j];
                cells[t * h + j] = c;
                row[j] = pre[2 * h + j] * c.tanh();
                prev_c[j] = c;
            }
            prev_h.copy_from_slice(row);
        }
        Ok(self.push_op(
            out,
            Op::Lstm {
                input,
                recurrent,
                reverse,
                mask,
                gates,
                cells,
            },
            &[input, recurrent],
        ))
    }

    /// `out[s,e,k] = a[s,k] + b[e,k]` for `a`, `b` of shape `l×c`.
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || ta.shape() != tb.shape() {
            return Err(mismatch("pairwise_sum", ta, tb));
        }
        let (l, c) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; l * l * c];
        for s in 0..l {
            for e in 0..l {
                let cell = &mut out[(s * l + e) * c..(s * l + e + 1) * c];
                let (ra, rb) = (&ta.data()[s * c..(s + 1) * c], &tb.data()[e * c..(e + 1) * c]);
                for ((o, a), b) in cell.iter_mut().zip(ra).zip(rb) {
                    *o = a + b;
                }
            }
        }
        let out = Tensor::new(vec![l, l, c], out)?;
        Ok(self.push_op(out, Op::PairwiseSum(a, b), &[a, b]))
    }

    /// Summed softmax cross-entropy over selected rows of `logits` (rows are
    /// all leading axes flattened; classes are the last axis). Each target is
    /// `(row, gold class)`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[(usize, usize)],
    ) -> Result<Var, TensorError> {
        let t = self.value(logits);
        let (rows, c) = (t.outer_len(), t.last_dim());
        let mut probs = Vec::with_capacity(targets.len() * c);
        let mut loss = 0.0;
        for &(row, gold) in targets {
            if row >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: row,
                    size: rows,
                });
            }
            if gold >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: gold,
                    size: c,
                });
            }
            let r = t.row(row);
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = r.iter().map(|v| (v - max).exp()).sum();
            loss += max + z.ln() - r[gold];
            probs.extend(r.iter().map(|v| (v - max).exp() / z));
        }
        let out = Tensor::scalar(loss);
        Ok(self.push_op(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// `−log softmax(logits)[gold]` for a rank-1 logit vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var, TensorError> {
        let t = self.value(logits);
        if t.rank() != 1 {
            return Err(invalid("softmax_cross_entropy", t, "expected rank 1 logits"));
        }
        self.cross_entropy(logits, &[(0, gold)])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Backpropagate from a single-element `root`, seeding its gradient with 1.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).len() != 1 {
            return Err(invalid("backward", self.value(root), "root must be a single element"));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        let Graph { nodes, grads } = self;
        for i in (0..=root.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            propagate(nodes, grads, i, &g);
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` for nodes that do
/// not require gradients.
fn buf<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let out = &nodes[i].value;
    let val = |v: Var| -> &Tensor { &nodes[v.0].value };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            if let Some(ga) = buf(nodes, grads, *a) {
                // dA = G · Bᵀ
                gemm(m, n, k, g, false, tb.data(), true, ga, 1.0);
            }
            if let Some(gb) = buf(nodes, grads, *b) {
                // dB = Aᵀ · G
                gemm(k, m, n, ta.data(), true, g, false, gb, 1.0);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = buf(nodes, grads, *v) {
                    gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
        }
        Op::AddBias(x, bias) => {
            if let Some(gx) = buf(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let n = val(*bias).len();
            if let Some(gb) = buf(nodes, grads, *bias) {
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            if let Some(ga) = buf(nodes, grads, *a) {
                for ((o, gi), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                    *o += gi * y;
                }
            }
            if let Some(gb) = buf(nodes, grads, *b) {
                for ((o, gi), x) in gb.iter_mut().zip(g).zip(ta.data()) {
                    *o += gi * x;
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(gx) = buf(nodes, grads, *x) {
                for ((o, gi), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *o += gi * (1.0 - y * y);
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(gx) = buf(nodes, grads, *x) {
                for ((o, gi), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *o += gi * y * (1.0 - y);
                }
            }
        }
        Op::Concat(parts) => {
            let total = out.last_dim();
            let rows = out.outer_len();
            let mut offset = 0;
            for p in parts {
                let w = val(*p).last_dim();
                if let Some(gp) = buf(nodes, grads, *p) {
                    for r in 0..rows {
                        let src = &g[r * total + offset..r * total + offset + w];
                        gp[r * w..(r + 1) * w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                offset += w;
            }
        }
        Op::StackRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = val(*p).len();
                if let Some(gp) = buf(nodes, grads, *p) {
                    gp.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(a, b)| *a += b);
                }
                offset += n;
            }
        }
        Op::SliceCols { input, start } => {
            let n = val(*input).last_dim();
            let w = out.last_dim();
            if let Some(gx) = buf(nodes, grads, *input) {
                for (row, grow) in gx.chunks_mut(n).zip(g.chunks(w)) {
                    row[*start..start + w]
                        .iter_mut()
                        .zip(grow)
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::SliceRows { input, start } => {
            let cols = out.last_dim();
            if let Some(gx) = buf(nodes, grads, *input) {
                gx[start * cols..start * cols + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
        }
        Op::Mask { input, mask } => {
            if let Some(gx) = buf(nodes, grads, *input) {
                for (row, grow) in gx.chunks_mut(mask.len()).zip(g.chunks(mask.len())) {
                    for ((a, b), m) in row.iter_mut().zip(grow).zip(mask.data()) {
                        *a += b * m;
                    }
                }
            }
        }
        Op::Gather { table, indices } => {
            let cols = out.last_dim();
            if let Some(gt) = buf(nodes, grads, *table) {
                for (r, &idx) in indices.iter().enumerate() {
                    gt[idx * cols..(idx + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
        Op::Unfold {
            input,
            segments,
            width,
        } => {
            let d = val(*input).last_dim();
            if let Some(gx) = buf(nodes, grads, *input) {
                let mut r = 0;
                for &(start, len) in segments {
                    for p in 0..len {
                        let base = r * width * d;
                        for j in 0..(*width).min(len - p) {
                            let dst = (start + p + j) * d;
                            gx[dst..dst + d]
                                .iter_mut()
                                .zip(&g[base + j * d..base + (j + 1) * d])
                                .for_each(|(a, b)| *a += b);
                        }
                        r += 1;
                    }
                }
            }
        }
        Op::SegmentMax { input, argmax } => {
            let k = out.last_dim();
            if let Some(gx) = buf(nodes, grads, *input) {
                for (idx, &row) in argmax.iter().enumerate() {
                    gx[row * k + idx % k] += g[idx];
                }
            }
        }
        Op::Bilinear {
            left,
            weight,
            right,
        } => {
            let (tl, tw, tr) = (val(*left), val(*weight), val(*right));
            let (d, c, e) = (tl.len(), tw.shape()[1], tr.len());
            if let Some(gl) = buf(nodes, grads, *left) {
                for p in 0..d {
                    for k in 0..c {
                        let w = &tw.data()[(p * c + k) * e..(p * c + k + 1) * e];
                        let inner: f64 = w.iter().zip(tr.data()).map(|(a, b)| a * b).sum();
                        gl[p] += g[k] * inner;
                    }
                }
            }
            if let Some(gw) = buf(nodes, grads, *weight) {
                for p in 0..d {
                    for k in 0..c {
                        let scale = g[k] * tl.data()[p];
                        for q in 0..e {
                            gw[(p * c + k) * e + q] += scale * tr.data()[q];
                        }
                    }
                }
            }
            if let Some(gr) = buf(nodes, grads, *right) {
                for p in 0..d {
                    for k in 0..c {
                        let scale = g[k] * tl.data()[p];
                        for q in 0..e {
                            gr[q] += scale * tw.data()[(p * c + k) * e + q];
                        }
                    }
                }
            }
        }
        Op::PairwiseBilinear {
            start,
            weight,
            end,
            projected,
        } => {
            let (ts, tw, te) = (val(*start), val(*weight), val(*end));
            let (l, d) = (ts.shape()[0], ts.shape()[1]);
            let c = tw.shape()[1];
            let mut gske = vec![0.0; l * c * l];
            for s in 0..l {
                for e in 0..l {
                    for k in 0..c {
                        gske[(s * c + k) * l + e] = g[(s * l + e) * c + k];
                    }
                }
            }
            if let Some(ge) = buf(nodes, grads, *end) {
                // dEnd = gskeᵀ · projected
                gemm(l, l * c, d, &gske, true, projected, false, ge, 1.0);
            }
            let needs_proj_grad = nodes[start.0].requires_grad || nodes[weight.0].requires_grad;
            if needs_proj_grad {
                let mut gproj = vec![0.0; l * c * d];
                gemm(l * c, l, d, &gske, false, te.data(), false, &mut gproj, 0.0);
                if let Some(gw) = buf(nodes, grads, *weight) {
                    gemm(d, l, c * d, ts.data(), true, &gproj, false, gw, 1.0);
                }
                if let Some(gs) = buf(nodes, grads, *start) {
                    gemm(l, c * d, d, &gproj, false, tw.data(), true, gs, 1.0);
                }
            }
        }
        Op::PairwiseSum(a, b) => {
            let (l, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            if let Some(ga) = buf(nodes, grads, *a) {
                for s in 0..l {
                    for e in 0..l {
                        for k in 0..c {
                            ga[s * c + k] += g[(s * l + e) * c + k];
                        }
                    }
                }
            }
            if let Some(gb) = buf(nodes, grads, *b) {
                for s in 0..l {
                    for e in 0..l {
                        for k in 0..c {
                            gb[e * c + k] += g[(s * l + e) * c + k];
                        }
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let c = val(*logits).last_dim();
            if let Some(gl) = buf(nodes, grads, *logits) {
                for (t, &(row, gold)) in targets.iter().enumerate() {
                    let p = &probs[t * c..(t + 1) * c];
                    let dst = &mut gl[row * c..(row + 1) * c];
                    for k in 0..c {
                        let onehot = if k == gold { 1.0 } else { 0.0 };
                        dst[k] += g[0] * (p[k] - onehot);
                    }
                }
            }
        }
        Op::Lstm {
            input,
            recurrent,
            reverse,
            mask,
            gates,
            cells,
        } => {
            let tw = val(*recurrent);
            let h = tw.shape()[0];
            let l = out.shape()[0];
            let hs = out.data();
            // Hidden state fed into each step (zero for the first one).
            let mut fed = vec![0.0; l * h];
            for step in 1..l {
                let (t, p) = if *reverse {
                    (l - 1 - step, l - step)
                } else {
                    (step, step - 1)
                };
                let dst = &mut fed[t * h..(t + 1) * h];
                dst.copy_from_slice(&hs[p * h..(p + 1) * h]);
                if let Some(m) = mask {
                    dst.iter_mut().zip(m.data()).for_each(|(a, b)| *a *= b);
                }
            }
            let mut dpre = vec![0.0; l * 4 * h];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            for step in (0..l).rev() {
                let t = if *reverse { l - 1 - step } else { step };
                let gt = &gates[t * 4 * h..(t + 1) * 4 * h];
                let prev_c = if step == 0 {
                    None
                } else {
                    let p = if *reverse { t + 1 } else { t - 1 };
                    Some(&cells[p * h..(p + 1) * h])
                };
                let dp = &mut dpre[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    let (i, f, o, cand) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                    let tc = cells[t * h + j].tanh();
                    let dh = g[t * h + j] + dh_next[j];
                    let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                    let cp = prev_c.map_or(0.0, |c| c[j]);
                    dp[j] = dc * cand * i * (1.0 - i);
                    dp[h + j] = dc * cp * f * (1.0 - f);
                    dp[2 * h + j] = dh * tc * o * (1.0 - o);
                    dp[3 * h + j] = dc * i * (1.0 - cand * cand);
                    dc_next[j] = dc * f;
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                if step > 0 {
                    gemm(1, 4 * h, h, dp, false, tw.data(), true, &mut dh_next, 0.0);
                    if let Some(m) = mask {
                        dh_next.iter_mut().zip(m.data()).for_each(|(a, b)| *a *= b);
                    }
                }
            }
            if let Some(gx) = buf(nodes, grads, *input) {
                gx.iter_mut().zip(&dpre).for_each(|(a, b)| *a += b);
            }
            if let Some(gw) = buf(nodes, grads, *recurrent) {
                gemm(h, l, 4 * h, &fed, true, &dpre, false, gw, 1.0);
            }
        }
        Op::Sum(x) => {
            if let Some(gx) = buf(nodes, grads, *x) {
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        t
    }

    /// Checks every input of a scalar-valued function built from `f`, which
    /// receives the graph and the registered inputs and returns a tensor that
    /// is reduced with a fixed random readout.
    fn assert_grads<F>(inputs: Vec<Tensor>, seed: u64, f: F) -> f64
    where
        F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Var,
    {
        let readout_seed = seed ^ 0x5eed;
        let loss = |ts: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.param(t)).collect();
            let y = f(&mut g, &vars);
            let mut rng = ChaCha8Rng::seed_from_u64(readout_seed);
            let shape = g.value(y).shape().to_vec();
            let w = random(&shape.iter().map(|&d| d.max(1)).collect::<Vec<_>>(), &mut rng);
            let w = g.constant(w.reshape(shape).unwrap());
            let prod = g.mul(y, w).unwrap();
            let out = g.sum(prod);
            g.backward(out).unwrap();
            let grads = vars
                .iter()
                .map(|&v| {
                    g.grad(v)
                        .map(|s| s.to_vec())
                        .unwrap_or_else(|| vec![0.0; g.value(v).len()])
                })
                .collect();
            (g.value(out).item(), grads)
        };
        let report = check_gradients(&inputs, 1e-5, |ts| loss(ts));
        report.iter().map(|r| r.relative_error).fold(0.0, f64::max)
    }

    #[test]
    fn matmul_examples() {
        let a = Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = Tensor::matrix(&[vec![3.0], vec![4.0]]);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let c = g.matmul(va, vb).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0]);

        let x = g.constant(Tensor::matrix(&[vec![2.0]]));
        let y = g.constant(Tensor::matrix(&[vec![3.0]]));
        let z = g.matmul(x, y).unwrap();
        assert_eq!(g.value(z).data(), &[6.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{}", msg);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)];
        let err = assert_grads(inputs, 1, |g, v| g.matmul(v[0], v[1]).unwrap());
        assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn bilinear_examples() {
        let mut g = Graph::new();
        let h1 = g.constant(Tensor::vector(vec![2.0]));
        let u = g.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let h2 = g.constant(Tensor::vector(vec![3.0]));
        let out = g.bilinear(h1, u, h2).unwrap();
        assert_eq!(g.value(out).data(), &[6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h1 = g.constant(random(&[4], &mut rng));
        let h2 = g.constant(random(&[4], &mut rng));
        let u = g.constant(Tensor::zeros(&[4, 3, 4]));
        let out = g.bilinear(h1, u, h2).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 3]);
    }

    #[test]
    fn bilinear_rejects_inconsistent_dims() {
        let mut g = Graph::new();
        let h1 = g.constant(Tensor::zeros(&[3]));
        let u = g.constant(Tensor::zeros(&[4, 2, 4]));
        let h2 = g.constant(Tensor::zeros(&[4]));
        assert!(g.bilinear(h1, u, h2).is_err());
    }

    #[test]
    fn bilinear_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs = vec![
            random(&[4], &mut rng),
            random(&[4, 3, 4], &mut rng),
            random(&[4], &mut rng),
        ];
        let err = assert_grads(inputs, 4, |g, v| g.bilinear(v[0], v[1], v[2]).unwrap());
        assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn pairwise_bilinear_agrees_with_single_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hs = random(&[3, 4], &mut rng);
        let he = random(&[3, 4], &mut rng);
        let u = random(&[4, 2, 4], &mut rng);
        let mut g = Graph::new();
        let (vs, vu, ve) = (g.constant(hs.clone()), g.constant(u), g.constant(he.clone()));
        let all = g.pairwise_bilinear(vs, vu, ve).unwrap();
        for s in 0..3 {
            for e in 0..3 {
                let a = g.constant(Tensor::vector(hs.row(s).to_vec()));
                let b = g.constant(Tensor::vector(he.row(e).to_vec()));
                let one = g.bilinear(a, vu, b).unwrap();
                for k in 0..2 {
                    let diff = g.value(all).get(&[s, e, k]) - g.value(one).data()[k];
                    assert!(diff.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_cross_entropy_examples() {
        let mut g = Graph::new();
        let cases = [
            (vec![0.0, 0.0], 0, std::f64::consts::LN_2),
            (vec![1000.0, 0.0], 0, 0.0),
            (vec![1.0, 2.0, 3.0], 2, 0.40760596444437),
        ];
        for (logits, gold, expected) in cases {
            let x = g.constant(Tensor::vector(logits));
            let loss = g.softmax_cross_entropy(x, gold).unwrap();
            let v = g.value(loss).item();
            assert!(v.is_finite());
            assert!((v - expected).abs() < 1e-9, "{} vs {}", v, expected);
        }
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(g.softmax_cross_entropy(x, 2).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_probability_minus_one_hot() {
        let mut g = Graph::new();
        let x = g.param_owned(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let loss = g.softmax_cross_entropy(x, 2).unwrap();
        g.backward(loss).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expected = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z - 1.0];
        for (a, b) in g.grad(x).unwrap().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reused_tensor_accumulates_both_contributions() {
        // y = sum(x * x) => dy/dx = 2x
        let mut g = Graph::new();
        let x = g.param_owned(Tensor::vector(vec![1.5, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let y = g.sum(sq);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3.0, -4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0]));
        let p = g.param_owned(Tensor::vector(vec![2.0]));
        let prod = g.mul(c, p).unwrap();
        let y = g.sum(prod);
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(p).unwrap(), &[1.0]);
    }

    #[test]
    fn dropout_is_deterministic_under_seed_and_identity_at_rate_zero() {
        let x = Tensor::filled(&[4, 6], 1.0);
        let run = |rate: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let y = g.dropout(v, rate, &mut rng).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(0.5), run(0.5));
        assert_eq!(run(0.0), x);
        assert!(run(0.5).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn shared_dropout_uses_one_mask_per_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let v = g.constant(Tensor::filled(&[5, 8], 1.0));
        let y = g.shared_dropout(v, 0.4, &mut rng).unwrap();
        let t = g.value(y);
        for r in 1..5 {
            assert_eq!(t.row(r), t.row(0));
        }
    }

    #[test]
    fn unfold_pads_segment_ends_with_zeros() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(&[vec![1.0], vec![2.0], vec![3.0]]));
        // segments: [1,2] and [3]
        let u = g.unfold(x, &[(0, 2), (2, 1)], 3).unwrap();
        assert_eq!(g.value(u).shape(), &[3, 3]);
        assert_eq!(
            g.value(u).data(),
            &[1.0, 2.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0]
        );
    }

    #[test]
    fn segment_max_picks_column_maxima() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(&[
            vec![1.0, 5.0],
            vec![4.0, 2.0],
            vec![-1.0, -3.0],
        ]));
        let m = g.segment_max(x, &[2, 1]).unwrap();
        assert_eq!(g.value(m).data(), &[4.0, 5.0, -1.0, -3.0]);
        assert!(g.segment_max(x, &[2, 2]).is_err());
    }

    /// Builds a random instance of primitive `which` and returns the maximum
    /// per-input relative error.
    fn primitive_error(which: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.gen_range(1..4);
        let cols = rng.gen_range(1..5);
        match which {
            0 => {
                let k = rng.gen_range(1..4);
                let inputs = vec![random(&[rows, k], &mut rng), random(&[k, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.matmul(v[0], v[1]).unwrap())
            }
            1 => {
                let inputs = vec![random(&[rows, cols], &mut rng), random(&[rows, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.add(v[0], v[1]).unwrap())
            }
            2 => {
                let inputs = vec![random(&[rows, cols], &mut rng), random(&[cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.add_bias(v[0], v[1]).unwrap())
            }
            3 => {
                let inputs = vec![random(&[rows, cols], &mut rng), random(&[rows, 2], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.concat(&[v[0], v[1], v[0]]).unwrap())
            }
            4 => {
                let inputs = vec![random(&[rows, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.tanh(v[0]))
            }
            5 => {
                let inputs = vec![random(&[rows, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.sigmoid(v[0]))
            }
            6 => {
                let inputs = vec![random(&[rows, cols], &mut rng)];
                let mask = dropout_mask(&[rows, cols], 0.3, &mut rng);
                assert_grads(inputs, seed, move |g, v| g.apply_mask(v[0], mask.clone()).unwrap())
            }
            7 => {
                let inputs = vec![random(&[5, cols], &mut rng)];
                let idx: Vec<usize> = (0..rows + 2).map(|_| rng.gen_range(0..5)).collect();
                assert_grads(inputs, seed, move |g, v| g.gather(v[0], &idx).unwrap())
            }
            8 => {
                let inputs = vec![random(&[rows + 3, cols], &mut rng)];
                let lengths = vec![2, rows + 1];
                assert_grads(inputs, seed, move |g, v| g.segment_max(v[0], &lengths).unwrap())
            }
            9 => {
                let inputs = vec![random(&[rows + 3, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| {
                    g.unfold(v[0], &[(0, 2), (2, 2)], 3).unwrap()
                })
            }
            10 => {
                let d = rng.gen_range(1..4);
                let c = rng.gen_range(1..4);
                let inputs = vec![
                    random(&[rows, d], &mut rng),
                    random(&[d, c, d], &mut rng),
                    random(&[rows, d], &mut rng),
                ];
                assert_grads(inputs, seed, |g, v| {
                    g.pairwise_bilinear(v[0], v[1], v[2]).unwrap()
                })
            }
            11 => {
                let inputs = vec![random(&[rows, cols], &mut rng), random(&[rows, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.pairwise_sum(v[0], v[1]).unwrap())
            }
            12 => {
                let c = cols + 1;
                let inputs = vec![random(&[rows, c], &mut rng)];
                let targets: Vec<(usize, usize)> =
                    (0..rows).map(|r| (r, rng.gen_range(0..c))).collect();
                assert_grads(inputs, seed, move |g, v| g.cross_entropy(v[0], &targets).unwrap())
            }
            13 => {
                let inputs = vec![random(&[rows + 2, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| {
                    let a = g.slice_rows(v[0], 1, 3).unwrap();
                    let b = g.slice_rows(v[0], 0, 2).unwrap();
                    let s = g.stack_rows(&[a, b, a]).unwrap();
                    g.slice_cols(s, 0, 1).unwrap()
                })
            }
            14 => {
                let inputs = vec![random(&[rows, cols], &mut rng), random(&[rows, cols], &mut rng)];
                assert_grads(inputs, seed, |g, v| g.mul(v[0], v[1]).unwrap())
            }
            _ => {
                let h = rng.gen_range(1..4);
                let l = rng.gen_range(1..5);
                let reverse = rng.gen_bool(0.5);
                let mask = rng.gen_bool(0.5).then(|| dropout_mask(&[h], 0.3, &mut rng));
                let inputs = vec![random(&[l, 4 * h], &mut rng), random(&[h, 4 * h], &mut rng)];
                assert_grads(inputs, seed, move |g, v| {
                    g.lstm(v[0], v[1], reverse, mask.clone()).unwrap()
                })
            }
        }
    }

    /// Step-by-step evaluation with scalar arithmetic.
    fn lstm_reference(x: &Tensor, w: &Tensor, reverse: bool) -> Vec<f64> {
        let h = w.shape()[0];
        let l = x.shape()[0];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut out = vec![0.0; l * h];
        let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
        let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
        for t in order {
            let pre: Vec<f64> = (0..4 * h)
                .map(|k| x.get(&[t, k]) + (0..h).map(|j| hp[j] * w.get(&[j, k])).sum::<f64>())
                .collect();
            for j in 0..h {
                let c = sig(pre[h + j]) * cp[j] + sig(pre[j]) * pre[3 * h + j].tanh();
                let hv = sig(pre[2 * h + j]) * c.tanh();
                out[t * h + j] = hv;
                cp[j] = c;
                hp[j] = hv;
            }
        }
        out
    }

    #[test]
    fn lstm_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[5, 12], &mut rng);
        let w = random(&[3, 12], &mut rng);
        for reverse in [false, true] {
            let mut g = Graph::new();
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let y = g.lstm(xv, wv, reverse, None).unwrap();
            let expect = lstm_reference(&x, &w, reverse);
            for (a, b) in g.value(y).data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_primitive_passes_gradient_check_on_random_instances() {
        for which in 0..16 {
            for seed in 0..100 {
                let err = primitive_error(which, seed * 31 + which as u64);
                assert!(
                    err < 1e-4,
                    "primitive {} seed {}: relative error {}",
                    which,
                    seed,
                    err
                );
            }
        }
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.0, 1e-6]) - 1e-6).abs() < 1e-12);
    }
}
