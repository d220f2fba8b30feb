//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already topologically sorted and [`Graph::backward`] walks it in reverse
//! exactly once. Values produced by [`Graph::detach`] pass forward unchanged
//! and block all upstream gradient.

use std::collections::VecDeque;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Clamp applied to the inputs of `log` so that `log(0)` stays finite.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Detach,
    MatMul(Var, Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulColumn(Var, Var),
    Affine {
        input: Var,
        scale: f64,
    },
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log {
        input: Var,
        eps: f64,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    TopKMean {
        input: Var,
        k: usize,
        selected: Vec<usize>,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Resample(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// A single-threaded compute graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    detached: Vec<Tensor>,
    replay: Option<VecDeque<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose `detach` calls return the given values in order instead
    /// of their live inputs. Used by the finite-difference checker so that
    /// stop-gradient values stay fixed under perturbation.
    pub fn replaying(detached: Vec<Tensor>) -> Self {
        Graph {
            replay: Some(detached.into()),
            ..Self::default()
        }
    }

    /// Values produced by every `detach` call so far, in call order.
    pub fn detached_values(&self) -> &[Tensor] {
        &self.detached
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable: true,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// Stop-gradient: identical forward value, zero upstream gradient.
    pub fn detach(&mut self, input: Var) -> Result<Var> {
        let value = match self.replay.as_mut() {
            Some(queue) => {
                let frozen = queue
                    .pop_front()
                    .ok_or_else(|| Error::InvalidInput("detach replay exhausted".into()))?;
                if frozen.shape() != self.value(input).shape() {
                    return Err(Error::shape(
                        "detach",
                        format!(
                            "replayed {:?} vs live {:?}",
                            frozen.shape(),
                            self.value(input).shape()
                        ),
                    ));
                }
                frozen
            }
            None => self.value(input).clone(),
        };
        self.detached.push(value.clone());
        Ok(self.push(value, Op::Detach, &[]))
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::shape(
                op,
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        }
        Ok((t.rows(), t.cols()))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &w) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * w;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Same-length temporal convolution with zero padding.
    ///
    /// `input` is `[T, Din]`, `weight` is `[K, Din, Dout]` with odd `K`, and
    /// `bias` holds `Dout` values. Output is `[T, Dout]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (t_len, d_in) = self.matrix("conv1d", input)?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 3 || ws[1] != d_in || ws[0].is_multiple_of(2) {
            return Err(Error::shape(
                "conv1d",
                format!("input [{t_len}, {d_in}] with kernel {ws:?}"),
            ));
        }
        let (k_len, d_out) = (ws[0], ws[2]);
        if self.value(bias).len() != d_out {
            return Err(Error::shape(
                "conv1d",
                format!("bias {:?} for {d_out} outputs", self.shape(bias)),
            ));
        }
        let pad = k_len / 2;
        let (x, w, b) = (
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; t_len * d_out];
        for t in 0..t_len {
            let row = &mut out[t * d_out..(t + 1) * d_out];
            row.copy_from_slice(b);
            for k in 0..k_len {
                let Some(src) = (t + k).checked_sub(pad).filter(|&s| s < t_len) else {
                    continue;
                };
                for i in 0..d_in {
                    let xv = x[src * d_in + i];
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &w[(k * d_in + i) * d_out..(k * d_in + i + 1) * d_out];
                    for (o, &wv) in row.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let value = Tensor::new(vec![t_len, d_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Scales each row of `a: [R, C]` by the matching entry of `col: [R, 1]`.
    pub fn mul_column(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.matrix("mul_column", a)?;
        let (r2, c2) = self.matrix("mul_column", col)?;
        if r != r2 || c2 != 1 {
            return Err(Error::shape(
                "mul_column",
                format!("[{r}, {c}] by [{r2}, {c2}]"),
            ));
        }
        let (av, cv) = (self.value(a).data(), self.value(col).data());
        let data = (0..r * c).map(|i| av[i] * cv[i / c]).collect();
        let v = Tensor::new(vec![r, c], data)?;
        Ok(self.push(v, Op::MulColumn(a, col), &[a, col]))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(input).map(|x| scale * x + shift);
        self.push(v, Op::Affine { input, scale }, &[input])
    }

    pub fn scale(&mut self, input: Var, scale: f64) -> Var {
        self.affine(input, scale, 0.0)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input).map(|x| x.max(0.0));
        self.push(v, Op::Relu(input), &[input])
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let v = self.value(input).map(sigmoid);
        self.push(v, Op::Sigmoid(input), &[input])
    }

    pub fn exp(&mut self, input: Var) -> Var {
        let v = self.value(input).map(f64::exp);
        self.push(v, Op::Exp(input), &[input])
    }

    /// Natural log of `max(x, eps)`.
    pub fn log(&mut self, input: Var, eps: f64) -> Var {
        let v = self.value(input).map(|x| x.max(eps).ln());
        self.push(v, Op::Log { input, eps }, &[input])
    }

    /// Softmax over the last axis of a matrix.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let (r, c) = self.matrix("softmax", input)?;
        let mut v = self.value(input).clone();
        for i in 0..r {
            softmax_in_place(&mut v.data_mut()[i * c..(i + 1) * c]);
        }
        Ok(self.push(v, Op::Softmax(input), &[input]))
    }

    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        let (r, c) = self.matrix("log_softmax", input)?;
        let mut v = self.value(input).clone();
        for i in 0..r {
            let row = &mut v.data_mut()[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.push(v, Op::LogSoftmax(input), &[input]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let v = Tensor::scalar(self.value(input).sum());
        self.push(v, Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let v = Tensor::scalar(t.sum() / t.len().max(1) as f64);
        self.push(v, Op::Mean(input), &[input])
    }

    /// Per-column mean of the `k` largest entries over the rows of `[T, C]`,
    /// giving `[1, C]`. Ties are resolved toward the lower row index.
    pub fn topk_mean(&mut self, input: Var, k: usize) -> Result<Var> {
        let (r, c) = self.matrix("topk_mean", input)?;
        if k == 0 || k > r {
            return Err(Error::shape("topk_mean", format!("k = {k} over {r} rows")));
        }
        let t = self.value(input);
        let mut selected = Vec::with_capacity(k * c);
        let mut out = Vec::with_capacity(c);
        let mut order: Vec<usize> = Vec::with_capacity(r);
        for col in 0..c {
            order.clear();
            order.extend(0..r);
            order.sort_by(|&i, &j| t.at(j, col).total_cmp(&t.at(i, col)).then(i.cmp(&j)));
            let top = &order[..k];
            out.push(top.iter().map(|&i| t.at(i, col)).sum::<f64>() / k as f64);
            selected.extend_from_slice(top);
        }
        let v = Tensor::new(vec![1, c], out)?;
        Ok(self.push(v, Op::TopKMean { input, k, selected }, &[input]))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix("slice_cols", input)?;
        if start >= end || end > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {c} columns"),
            ));
        }
        let t = self.value(input);
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let v = Tensor::new(vec![r, w], data)?;
        Ok(self.push(v, Op::SliceCols { input, start }, &[input]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.matrix("slice_rows", input)?;
        if start >= end || end > r {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {r} rows"),
            ));
        }
        let data = self.value(input).data()[start * c..end * c].to_vec();
        let v = Tensor::new(vec![end - start, c], data)?;
        Ok(self.push(v, Op::SliceRows { input, start }, &[input]))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let (r, _) = self.matrix("concat_cols", first)?;
        let mut total = 0;
        for &v in inputs {
            let (ri, ci) = self.matrix("concat_cols", v)?;
            if ri != r {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {r} vs {ri}"),
                ));
            }
            total += ci;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &v in inputs {
                data.extend_from_slice(self.value(v).row(i));
            }
        }
        let v = Tensor::new(vec![r, total], data)?;
        Ok(self.push(v, Op::ConcatCols(inputs.to_vec()), inputs))
    }

    /// Linear resampling along the time (row) axis to `len` rows.
    pub fn resample(&mut self, input: Var, len: usize) -> Result<Var> {
        let (r, c) = self.matrix("resample", input)?;
        if len == 0 || r == 0 {
            return Err(Error::shape("resample", format!("{r} rows to {len}")));
        }
        let src = self.value(input);
        let mut data = vec![0.0; len * c];
        for (i, row) in data.chunks_mut(c).enumerate() {
            for (src_row, w) in resample_taps(r, len, i) {
                for (o, &x) in row.iter_mut().zip(src.row(src_row)) {
                    *o += w * x;
                }
            }
        }
        let v = Tensor::new(vec![len, c], data)?;
        Ok(self.push(v, Op::Resample(input), &[input]))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every trainable leaf receives a gradient (zeros when it does not
    /// influence the loss).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match g {
                Some(g) => Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape")),
                None if node.trainable => Some(Tensor::zeros(node.value.shape())),
                None => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot =
            grads[target.0].get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += g[i * n..(i + 1) * n]
                                .iter()
                                .zip(brow)
                                .map(|(x, y)| x * y)
                                .sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for (o, &gv) in gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(&g[i * n..(i + 1) * n])
                            {
                                *o += x * gv;
                            }
                        }
                    }
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let (t_len, d_in) = (x.rows(), x.cols());
                let ws = self.shape(*weight);
                let (k_len, d_out) = (ws[0], ws[2]);
                let pad = k_len / 2;
                let (xv, wv) = (x.data(), self.value(*weight).data());
                let taps = |t: usize, k: usize| (t + k).checked_sub(pad).filter(|&s| s < t_len);
                self.accumulate(grads, *input, |gx| {
                    for t in 0..t_len {
                        let grow = &g[t * d_out..(t + 1) * d_out];
                        for k in 0..k_len {
                            let Some(src) = taps(t, k) else { continue };
                            for i in 0..d_in {
                                let wrow = &wv[(k * d_in + i) * d_out..(k * d_in + i + 1) * d_out];
                                gx[src * d_in + i] +=
                                    grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                });
                self.accumulate(grads, *weight, |gw| {
                    for t in 0..t_len {
                        let grow = &g[t * d_out..(t + 1) * d_out];
                        for k in 0..k_len {
                            let Some(src) = taps(t, k) else { continue };
                            for i in 0..d_in {
                                let xval = xv[src * d_in + i];
                                if xval == 0.0 {
                                    continue;
                                }
                                let wslot =
                                    &mut gw[(k * d_in + i) * d_out..(k * d_in + i + 1) * d_out];
                                for (o, &gv) in wslot.iter_mut().zip(grow) {
                                    *o += xval * gv;
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for grow in g.chunks(d_out) {
                        for (o, &gv) in gb.iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut()
                        .zip(g.iter().zip(bv))
                        .for_each(|(o, (gv, y))| *o += gv * y)
                });
                self.accumulate(grads, *b, |gb| {
                    gb.iter_mut()
                        .zip(g.iter().zip(av))
                        .for_each(|(o, (gv, x))| *o += gv * x)
                });
            }
            Op::MulColumn(a, col) => {
                let c = self.value(*a).cols();
                let (av, cv) = (self.value(*a).data(), self.value(*col).data());
                self.accumulate(grads, *a, |ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        *o += g[i] * cv[i / c];
                    }
                });
                self.accumulate(grads, *col, |gc| {
                    for (i, (&gv, &x)) in g.iter().zip(av).enumerate() {
                        gc[i / c] += gv * x;
                    }
                });
            }
            Op::Affine { input, scale } => {
                self.accumulate(grads, *input, |gi| {
                    gi.iter_mut().zip(g).for_each(|(o, &v)| *o += scale * v)
                });
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                self.accumulate(grads, *input, |gi| {
                    for ((o, &gv), &xv) in gi.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(input) => {
                self.accumulate(grads, *input, |gi| {
                    for ((o, &gv), &y) in gi.iter_mut().zip(g).zip(out) {
                        *o += gv * y * (1.0 - y);
                    }
                });
            }
            Op::Exp(input) => {
                self.accumulate(grads, *input, |gi| {
                    for ((o, &gv), &y) in gi.iter_mut().zip(g).zip(out) {
                        *o += gv * y;
                    }
                });
            }
            Op::Log { input, eps } => {
                let x = self.value(*input).data();
                self.accumulate(grads, *input, |gi| {
                    for ((o, &gv), &xv) in gi.iter_mut().zip(g).zip(x) {
                        if xv >= *eps {
                            *o += gv / xv;
                        }
                    }
                });
            }
            Op::Softmax(input) => {
                let c = node.value.cols();
                self.accumulate(grads, *input, |gi| {
                    for ((gi_row, g_row), y_row) in
                        gi.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c))
                    {
                        let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &y) in gi_row.iter_mut().zip(g_row).zip(y_row) {
                            *o += y * (gv - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(input) => {
                let c = node.value.cols();
                self.accumulate(grads, *input, |gi| {
                    for ((gi_row, g_row), y_row) in
                        gi.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c))
                    {
                        let total: f64 = g_row.iter().sum();
                        for ((o, &gv), &y) in gi_row.iter_mut().zip(g_row).zip(y_row) {
                            *o += gv - y.exp() * total;
                        }
                    }
                });
            }
            Op::Sum(input) => {
                self.accumulate(grads, *input, |gi| gi.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean(input) => {
                let n = self.value(*input).len().max(1) as f64;
                self.accumulate(grads, *input, |gi| {
                    gi.iter_mut().for_each(|o| *o += g[0] / n)
                });
            }
            Op::TopKMean { input, k, selected } => {
                let c = self.value(*input).cols();
                self.accumulate(grads, *input, |gi| {
                    for (col, rows) in selected.chunks(*k).enumerate() {
                        for &r in rows {
                            gi[r * c + col] += g[col] / *k as f64;
                        }
                    }
                });
            }
            Op::SliceCols { input, start } => {
                let c = self.value(*input).cols();
                let w = node.value.cols();
                self.accumulate(grads, *input, |gi| {
                    for (r, g_row) in g.chunks(w).enumerate() {
                        add_into(&mut gi[r * c + start..r * c + start + w], g_row);
                    }
                });
            }
            Op::SliceRows { input, start } => {
                let c = node.value.cols();
                self.accumulate(grads, *input, |gi| {
                    add_into(&mut gi[start * c..start * c + g.len()], g)
                });
            }
            Op::ConcatCols(inputs) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &v in inputs {
                    let w = self.value(v).cols();
                    self.accumulate(grads, v, |gi| {
                        for (r, gi_row) in gi.chunks_mut(w).enumerate() {
                            add_into(gi_row, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Resample(input) => {
                let r = self.value(*input).rows();
                let c = node.value.cols();
                let len = node.value.rows();
                self.accumulate(grads, *input, |gi| {
                    for (i, g_row) in g.chunks(c).enumerate() {
                        for (src_row, w) in resample_taps(r, len, i) {
                            for (o, &gv) in gi[src_row * c..(src_row + 1) * c].iter_mut().zip(g_row)
                            {
                                *o += w * gv;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, &v)| *o += v);
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
}

/// Source rows and weights contributing to output row `i` when resampling
/// `src_len` rows to `len` rows.
///
/// Output row `i` samples source coordinate `i * (src_len - 1) / (len - 1)`
/// with linear interpolation; a single output row takes the mean of all
/// source rows.
pub fn resample_taps(src_len: usize, len: usize, i: usize) -> Vec<(usize, f64)> {
    if len == 1 {
        let w = 1.0 / src_len as f64;
        return (0..src_len).map(|r| (r, w)).collect();
    }
    if src_len == 1 {
        return vec![(0, 1.0)];
    }
    let pos = i as f64 * (src_len - 1) as f64 / (len - 1) as f64;
    let lo = (pos.floor() as usize).min(src_len - 1);
    let frac = pos - lo as f64;
    if lo + 1 >= src_len || frac == 0.0 {
        vec![(lo, 1.0)]
    } else {
        vec![(lo, 1.0 - frac), (lo + 1, frac)]
    }
}
