//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Nodes live in an arena and are created in topological order, so the
//! backward pass is a single reverse sweep. Values are computed eagerly
//! at op creation; gradients are computed on demand by
//! [`Graph::backward`] and accumulate until the graph is dropped (and,
//! for parameters, until [`ParamStore::zero_grads`]).

use std::rc::Rc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Abs(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Scale(usize, f64),
    AddScalar(usize),
    SumAll(usize),
    MeanAll(usize),
    Reshape(usize),
    Concat { parts: Vec<usize>, axis: usize },
    SliceAxis { a: usize, axis: usize, start: usize },
    Transpose2(usize),
    TransposeLast2(usize),
    Linear { x: usize, w: usize },
    AddBiasLast { x: usize, b: usize },
    Softmax { a: usize, axis: usize },
    MaskedSoftmaxRows { a: usize, mask: Rc<Vec<f64>> },
    RowNormalizeLast(usize),
    RowMaxRescale(usize),
    AttnScores { q: usize, k: usize },
    AttnApply { w: usize, v: usize },
    AttnApplyStatic { w: usize, v: usize },
    CausalConv1d { x: usize, f: usize, dilation: usize },
    Dropout { a: usize, mask: Rc<Vec<f64>> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// One forward/backward episode. Training mode enables dropout, driven
/// by a seeded stream so runs are reproducible.
pub struct Graph {
    nodes: Vec<Node>,
    train: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// Evaluation-mode graph (dropout is the identity).
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Training-mode graph; `seed` drives every dropout mask.
    pub fn new_train(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone()).unwrap()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad_of(&self, v: Var) -> Option<Tensor> {
        self.nodes[v.0]
            .grad
            .as_ref()
            .map(|g| Tensor::new(self.nodes[v.0].shape.clone(), g.clone()).unwrap())
    }

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    /// Input that participates in differentiation (for gradient checks).
    pub fn input_grad(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)
    }

    /// Mounts a parameter; backward adds its gradient to the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(
            p.value.shape().to_vec(),
            p.value.data().to_vec(),
            true,
            Op::Param(id),
        )
    }

    // ---- elementwise ----

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(
                op_name,
                format!("{:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Mul(a.0, b.0)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b)?;
        let data = zip_map(&self.nodes[a.0].data, &self.nodes[b.0].data, |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a.0].shape.clone(), data, rg, Op::Div(a.0, b.0)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| f(*x)).collect();
        let rg = self.rg(a);
        self.push(self.nodes[a.0].shape.clone(), data, rg, op)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], rg, Op::SumAll(a.0))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len() as f64;
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s / n], rg, Op::MeanAll(a.0))
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.nodes[a.0].data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.nodes[a.0].shape),
            ));
        }
        let data = self.nodes[a.0].data.clone();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), data, rg, Op::Reshape(a.0)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "empty part list".into()))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut axis_total = 0;
        for p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, d)| i != axis && *d != base[i])
            {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![0.0; shape.iter().product()];
        let mut offset = 0;
        for p in parts {
            let pa = self.nodes[p.0].shape[axis];
            let src = &self.nodes[p.0].data;
            for o in 0..outer {
                let dst_base = o * axis_total * inner + offset * inner;
                let src_base = o * pa * inner;
                data[dst_base..dst_base + pa * inner]
                    .copy_from_slice(&src[src_base..src_base + pa * inner]);
            }
            offset += pa;
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            shape,
            data,
            rg,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
        ))
    }

    pub fn slice_axis(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("axis {axis} range {start}..{} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut shape = s.clone();
        shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        let src = &self.nodes[a.0].data;
        for o in 0..outer {
            let src_base = o * s[axis] * inner + start * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let rg = self.rg(a);
        Ok(self.push(shape, data, rg, Op::SliceAxis { a: a.0, axis, start }))
    }

    pub fn transpose2(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("{s:?} is not 2-D")));
        }
        let (r, c) = (s[0], s[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], data, rg, Op::Transpose2(a.0)))
    }

    /// Swaps the last two axes of a 3-D tensor.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 3 {
            return Err(Error::shape("transpose_last2", format!("{s:?} is not 3-D")));
        }
        let (b, r, c) = (s[0], s[1], s[2]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; b * r * c];
        for t in 0..b {
            for i in 0..r {
                for j in 0..c {
                    data[t * r * c + j * r + i] = src[t * r * c + i * c + j];
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![b, c, r], data, rg, Op::TransposeLast2(a.0)))
    }

    // ---- contractions ----

    /// Contracts the last axis of `x` with the rows of 2-D `w`; this is
    /// plain matrix multiplication when `x` is 2-D.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let ws = self.nodes[w.0].shape.clone();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(Error::shape("matmul", format!("{xs:?} x {ws:?}")));
        }
        let c = ws[0];
        let d = ws[1];
        let m: usize = xs[..xs.len() - 1].iter().product();
        let xv = &self.nodes[x.0].data;
        let wv = &self.nodes[w.0].data;
        let mut data = vec![0.0; m * d];
        for i in 0..m {
            let xrow = &xv[i * c..(i + 1) * c];
            let out = &mut data[i * d..(i + 1) * d];
            for (kk, &xk) in xrow.iter().enumerate() {
                if xk == 0.0 {
                    continue;
                }
                let wrow = &wv[kk * d..(kk + 1) * d];
                for (o, wv_) in out.iter_mut().zip(wrow) {
                    *o += xk * wv_;
                }
            }
        }
        let mut shape = xs[..xs.len() - 1].to_vec();
        shape.push(d);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(shape, data, rg, Op::Linear { x: x.0, w: w.0 }))
    }

    /// Adds a length-C bias along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let bs = self.nodes[b.0].shape.clone();
        if bs.len() != 1 || xs.last() != bs.first() {
            return Err(Error::shape("add_bias", format!("{xs:?} + {bs:?}")));
        }
        let c = bs[0];
        let xv = &self.nodes[x.0].data;
        let bv = &self.nodes[b.0].data;
        let mut data = Vec::with_capacity(xv.len());
        for chunk in xv.chunks_exact(c) {
            for (v, bb) in chunk.iter().zip(bv) {
                data.push(v + bb);
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(xs, data, rg, Op::AddBiasLast { x: x.0, b: b.0 }))
    }

    // ---- normalizations ----

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        if axis >= s.len() {
            return Err(Error::shape("softmax", format!("axis {axis} of {s:?}")));
        }
        let (outer, lanes, inner) = lane_dims(&s, axis);
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| o * lanes * inner + l * inner + i;
                let mut m = f64::NEG_INFINITY;
                for l in 0..lanes {
                    m = m.max(src[idx(l)]);
                }
                let mut denom = 0.0;
                for l in 0..lanes {
                    denom += (src[idx(l)] - m).exp();
                }
                for l in 0..lanes {
                    data[idx(l)] = (src[idx(l)] - m).exp() / denom;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(s, data, rg, Op::Softmax { a: a.0, axis }))
    }

    /// Row-wise softmax over the masked support of the last axis.
    /// Entries off the mask are exactly zero; a row with empty support
    /// yields all zeros. `a` is [N,N] or [B,N,N]; the N×N mask applies
    /// to every leading batch element.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        let s = self.nodes[a.0].shape.clone();
        let (batch, n) = match s.len() {
            2 => (1, s[1]),
            3 => (s[0], s[2]),
            _ => return Err(Error::shape("masked_softmax", format!("{s:?}"))),
        };
        let rows = s[s.len() - 2];
        if rows != n || mask.len() != n * n {
            return Err(Error::shape(
                "masked_softmax",
                format!("{s:?} with mask of {} entries", mask.len()),
            ));
        }
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for t in 0..batch {
            for i in 0..n {
                let base = t * n * n + i * n;
                let mrow = &mask[i * n..(i + 1) * n];
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    if mrow[j] > 0.0 {
                        m = m.max(src[base + j]);
                    }
                }
                if m == f64::NEG_INFINITY {
                    continue; // empty support: all zeros
                }
                let mut denom = 0.0;
                for j in 0..n {
                    if mrow[j] > 0.0 {
                        denom += (src[base + j] - m).exp();
                    }
                }
                for j in 0..n {
                    if mrow[j] > 0.0 {
                        data[base + j] = (src[base + j] - m).exp() / denom;
                    }
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(s, data, rg, Op::MaskedSoftmaxRows { a: a.0, mask }))
    }

    /// Divides each lane of the last axis by its sum (zero-sum lanes
    /// stay zero).
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].shape.clone();
        let lanes = *s.last().unwrap();
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for (o, chunk) in src.chunks_exact(lanes).enumerate() {
            let sum: f64 = chunk.iter().sum();
            if sum != 0.0 {
                for (j, v) in chunk.iter().enumerate() {
                    data[o * lanes + j] = v / sum;
                }
            }
        }
        let rg = self.rg(a);
        self.push(s, data, rg, Op::RowNormalizeLast(a.0))
    }

    /// Clamps each lane of the last axis into [0, max(lane) <= 1] by
    /// dividing by the lane maximum when it exceeds 1.
    pub fn row_max_rescale(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].shape.clone();
        let lanes = *s.last().unwrap();
        let src = &self.nodes[a.0].data;
        let mut data = vec![0.0; src.len()];
        for (o, chunk) in src.chunks_exact(lanes).enumerate() {
            let m = chunk.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let d = if m > 1.0 { m } else { 1.0 };
            for (j, v) in chunk.iter().enumerate() {
                data[o * lanes + j] = v / d;
            }
        }
        let rg = self.rg(a);
        self.push(s, data, rg, Op::RowMaxRescale(a.0))
    }

    // ---- attention ----

    /// Scaled dot-product scores per time step: `q`, `k` are [N,L,C];
    /// output [L,N,N] with entry (t,i,j) = q_i(t)·k_j(t) / sqrt(C).
    pub fn attn_scores(&mut self, q: Var, k: Var) -> Result<Var> {
        let qs = self.nodes[q.0].shape.clone();
        let ks = self.nodes[k.0].shape.clone();
        if qs.len() != 3 || qs != ks {
            return Err(Error::shape("attn_scores", format!("{qs:?} vs {ks:?}")));
        }
        let (n, l, c) = (qs[0], qs[1], qs[2]);
        let scale = 1.0 / (c as f64).sqrt();
        let qv = &self.nodes[q.0].data;
        let kv = &self.nodes[k.0].data;
        let mut data = vec![0.0; l * n * n];
        for t in 0..l {
            for i in 0..n {
                let qrow = &qv[(i * l + t) * c..(i * l + t + 1) * c];
                let out = &mut data[t * n * n + i * n..t * n * n + (i + 1) * n];
                for (j, o) in out.iter_mut().enumerate() {
                    let krow = &kv[(j * l + t) * c..(j * l + t + 1) * c];
                    let mut acc = 0.0;
                    for (a, b) in qrow.iter().zip(krow) {
                        acc += a * b;
                    }
                    *o = acc * scale;
                }
            }
        }
        let rg = self.rg(q) || self.rg(k);
        Ok(self.push(vec![l, n, n], data, rg, Op::AttnScores { q: q.0, k: k.0 }))
    }

    /// Applies per-step weights [L,N,N] to values [N,L,C]:
    /// out(i,t,·) = sum_j w(t,i,j) · v(j,t,·).
    pub fn attn_apply(&mut self, w: Var, v: Var) -> Result<Var> {
        let ws = self.nodes[w.0].shape.clone();
        let vs = self.nodes[v.0].shape.clone();
        if ws.len() != 3 || vs.len() != 3 || ws[1] != ws[2] || ws[1] != vs[0] || ws[0] != vs[1] {
            return Err(Error::shape("attn_apply", format!("{ws:?} on {vs:?}")));
        }
        let (l, n, c) = (ws[0], ws[1], vs[2]);
        let wv = &self.nodes[w.0].data;
        let vv = &self.nodes[v.0].data;
        let mut data = vec![0.0; n * l * c];
        for t in 0..l {
            for i in 0..n {
                let wrow = &wv[t * n * n + i * n..t * n * n + (i + 1) * n];
                let out = &mut data[(i * l + t) * c..(i * l + t + 1) * c];
                for (j, &wij) in wrow.iter().enumerate() {
                    if wij == 0.0 {
                        continue;
                    }
                    let vrow = &vv[(j * l + t) * c..(j * l + t + 1) * c];
                    for (o, vc) in out.iter_mut().zip(vrow) {
                        *o += wij * vc;
                    }
                }
            }
        }
        let rg = self.rg(w) || self.rg(v);
        Ok(self.push(vec![n, l, c], data, rg, Op::AttnApply { w: w.0, v: v.0 }))
    }

    /// Applies one [N,N] weight matrix at every time step:
    /// out(i,t,·) = sum_j w(i,j) · v(j,t,·).
    pub fn attn_apply_static(&mut self, w: Var, v: Var) -> Result<Var> {
        let ws = self.nodes[w.0].shape.clone();
        let vs = self.nodes[v.0].shape.clone();
        if ws.len() != 2 || vs.len() != 3 || ws[0] != ws[1] || ws[0] != vs[0] {
            return Err(Error::shape("attn_apply_static", format!("{ws:?} on {vs:?}")));
        }
        let (n, l, c) = (vs[0], vs[1], vs[2]);
        let wv = &self.nodes[w.0].data;
        let vv = &self.nodes[v.0].data;
        let mut data = vec![0.0; n * l * c];
        for i in 0..n {
            let wrow = &wv[i * n..(i + 1) * n];
            for (j, &wij) in wrow.iter().enumerate() {
                if wij == 0.0 {
                    continue;
                }
                let vbase = &vv[j * l * c..(j + 1) * l * c];
                let obase = &mut data[i * l * c..(i + 1) * l * c];
                for (o, vc) in obase.iter_mut().zip(vbase) {
                    *o += wij * vc;
                }
            }
        }
        let rg = self.rg(w) || self.rg(v);
        Ok(self.push(vec![n, l, c], data, rg, Op::AttnApplyStatic { w: w.0, v: v.0 }))
    }

    // ---- convolution ----

    /// Causal dilated 1-D convolution over the time axis.
    ///
    /// `x` is [N,L,Cin], `f` is [Cout,Cin,K]; output [N,L,Cout] with
    /// out(n,t,·) = sum_{s<K} f(·,·,s) · x(n, t - d·s, ·), zero-padded
    /// on the left so the sequence length is preserved.
    pub fn causal_conv1d(&mut self, x: Var, f: Var, dilation: usize) -> Result<Var> {
        let xs = self.nodes[x.0].shape.clone();
        let fs = self.nodes[f.0].shape.clone();
        if xs.len() != 3 || fs.len() != 3 || xs[2] != fs[1] || dilation == 0 {
            return Err(Error::shape(
                "causal_conv1d",
                format!("input {xs:?}, filter {fs:?}, dilation {dilation}"),
            ));
        }
        let (n, l, cin) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (fs[0], fs[2]);
        let xv = &self.nodes[x.0].data;
        let fv = &self.nodes[f.0].data;
        let mut data = vec![0.0; n * l * cout];
        for nn in 0..n {
            for t in 0..l {
                let out = &mut data[(nn * l + t) * cout..(nn * l + t + 1) * cout];
                for s in 0..k {
                    let off = dilation * s;
                    if off > t {
                        break;
                    }
                    let xrow = &xv[(nn * l + t - off) * cin..(nn * l + t - off + 1) * cin];
                    for (co, o) in out.iter_mut().enumerate() {
                        let fbase = co * cin * k + s;
                        let mut acc = 0.0;
                        for (ci, xc) in xrow.iter().enumerate() {
                            acc += fv[fbase + ci * k] * xc;
                        }
                        *o += acc;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(f);
        Ok(self.push(
            vec![n, l, cout],
            data,
            rg,
            Op::CausalConv1d {
                x: x.0,
                f: f.0,
                dilation,
            },
        ))
    }

    // ---- dropout ----

    /// Inverted dropout: in training mode each element is kept with
    /// probability 1-rate and scaled by 1/(1-rate); in eval mode (or at
    /// rate 0) this is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate must be in [0,1), got {rate}")));
        }
        if !self.train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let len = self.nodes[a.0].data.len();
        let mask: Vec<f64> = (0..len)
            .map(|_| if self.rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mask = Rc::new(mask);
        let data = zip_map(&self.nodes[a.0].data, &mask, |x, m| x * m);
        let rg = self.rg(a);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, data, rg, Op::Dropout { a: a.0, mask }))
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar `loss`. Parameter gradients are
    /// accumulated into `store` (when given); node gradients accumulate
    /// across repeated calls.
    pub fn backward(&mut self, loss: Var, mut store: Option<&mut ParamStore>) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.nodes[loss.0].shape),
            ));
        }
        let n_nodes = self.nodes.len();
        let mut local: Vec<Option<Vec<f64>>> = (0..n_nodes).map(|_| None).collect();
        local[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if local[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let go = local[id].take().unwrap();
            self.propagate(id, &go, &mut local);
            // fold into the persistent node gradient
            let node = &mut self.nodes[id];
            let slot = node.grad.get_or_insert_with(|| vec![0.0; go.len()]);
            for (s, g) in slot.iter_mut().zip(&go) {
                *s += g;
            }
            if let Op::Param(pid) = node.op {
                if let Some(st) = store.as_deref_mut() {
                    st.accumulate_grad(pid, &go);
                }
            }
        }
        Ok(())
    }

    fn add_into(local: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
        local[idx].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, id: usize, go: &[f64], local: &mut [Option<Vec<f64>>]) {
        let wants = |i: usize| self.nodes[i].requires_grad;
        match &self.nodes[id].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for (&src, _) in [(*a, 0), (*b, 1)].iter() {
                    if wants(src) {
                        let g = Self::add_into(local, src, go.len());
                        for (x, y) in g.iter_mut().zip(go) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for (x, y) in g.iter_mut().zip(go) {
                        *x += y;
                    }
                }
                if wants(*b) {
                    let g = Self::add_into(local, *b, go.len());
                    for (x, y) in g.iter_mut().zip(go) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = &self.nodes[*b].data;
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let av = &self.nodes[*a].data;
                    let g = Self::add_into(local, *b, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] * av[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let av = &self.nodes[*a].data;
                let bv = &self.nodes[*b].data;
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] / bv[i];
                    }
                }
                if wants(*b) {
                    let g = Self::add_into(local, *b, go.len());
                    for i in 0..go.len() {
                        g[i] -= go[i] * av[i] / (bv[i] * bv[i]);
                    }
                }
            }
            Op::Neg(a) => {
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for (x, y) in g.iter_mut().zip(go) {
                        *x -= y;
                    }
                }
            }
            Op::Abs(a) => {
                if wants(*a) {
                    let av = &self.nodes[*a].data;
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] * if av[i] >= 0.0 { 1.0 } else { -1.0 };
                    }
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let av = &self.nodes[*a].data;
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        if av[i] > 0.0 {
                            g[i] += go[i];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let yv = &self.nodes[id].data;
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] * (1.0 - yv[i] * yv[i]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let yv = &self.nodes[id].data;
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] * yv[i] * (1.0 - yv[i]);
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for (x, y) in g.iter_mut().zip(go) {
                        *x += c * y;
                    }
                }
            }
            Op::AddScalar(a) => {
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for (x, y) in g.iter_mut().zip(go) {
                        *x += y;
                    }
                }
            }
            Op::SumAll(a) => {
                if wants(*a) {
                    let len = self.nodes[*a].data.len();
                    let g = Self::add_into(local, *a, len);
                    for x in g.iter_mut() {
                        *x += go[0];
                    }
                }
            }
            Op::MeanAll(a) => {
                if wants(*a) {
                    let len = self.nodes[*a].data.len();
                    let g = Self::add_into(local, *a, len);
                    let v = go[0] / len as f64;
                    for x in g.iter_mut() {
                        *x += v;
                    }
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for (x, y) in g.iter_mut().zip(go) {
                        *x += y;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = &self.nodes[id].shape;
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let pa = self.nodes[p].shape[*axis];
                    if wants(p) {
                        let len = self.nodes[p].data.len();
                        let g = Self::add_into(local, p, len);
                        for o in 0..outer {
                            let src_base = o * total * inner + offset * inner;
                            let dst_base = o * pa * inner;
                            for q in 0..pa * inner {
                                g[dst_base + q] += go[src_base + q];
                            }
                        }
                    }
                    offset += pa;
                }
            }
            Op::SliceAxis { a, axis, start } => {
                if wants(*a) {
                    let src_shape = &self.nodes[*a].shape;
                    let outer: usize = src_shape[..*axis].iter().product();
                    let inner: usize = src_shape[*axis + 1..].iter().product();
                    let src_axis = src_shape[*axis];
                    let out_axis = self.nodes[id].shape[*axis];
                    let len = self.nodes[*a].data.len();
                    let g = Self::add_into(local, *a, len);
                    for o in 0..outer {
                        let dst_base = o * src_axis * inner + start * inner;
                        let src_base = o * out_axis * inner;
                        for q in 0..out_axis * inner {
                            g[dst_base + q] += go[src_base + q];
                        }
                    }
                }
            }
            Op::Transpose2(a) => {
                if wants(*a) {
                    let s = &self.nodes[*a].shape;
                    let (r, c) = (s[0], s[1]);
                    let g = Self::add_into(local, *a, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += go[j * r + i];
                        }
                    }
                }
            }
            Op::TransposeLast2(a) => {
                if wants(*a) {
                    let s = &self.nodes[*a].shape;
                    let (b, r, c) = (s[0], s[1], s[2]);
                    let g = Self::add_into(local, *a, b * r * c);
                    for t in 0..b {
                        for i in 0..r {
                            for j in 0..c {
                                g[t * r * c + i * c + j] += go[t * r * c + j * r + i];
                            }
                        }
                    }
                }
            }
            Op::Linear { x, w } => {
                let xs = &self.nodes[*x].shape;
                let ws = &self.nodes[*w].shape;
                let c = ws[0];
                let d = ws[1];
                let m: usize = xs[..xs.len() - 1].iter().product();
                if wants(*x) {
                    let wv = &self.nodes[*w].data;
                    let g = Self::add_into(local, *x, m * c);
                    for i in 0..m {
                        let grow = &go[i * d..(i + 1) * d];
                        let xg = &mut g[i * c..(i + 1) * c];
                        for (kk, xgk) in xg.iter_mut().enumerate() {
                            let wrow = &wv[kk * d..(kk + 1) * d];
                            let mut acc = 0.0;
                            for (gv, wv_) in grow.iter().zip(wrow) {
                                acc += gv * wv_;
                            }
                            *xgk += acc;
                        }
                    }
                }
                if wants(*w) {
                    let xv = &self.nodes[*x].data;
                    let g = Self::add_into(local, *w, c * d);
                    for i in 0..m {
                        let grow = &go[i * d..(i + 1) * d];
                        let xrow = &xv[i * c..(i + 1) * c];
                        for (kk, &xk) in xrow.iter().enumerate() {
                            if xk == 0.0 {
                                continue;
                            }
                            let wg = &mut g[kk * d..(kk + 1) * d];
                            for (wgv, gv) in wg.iter_mut().zip(grow) {
                                *wgv += xk * gv;
                            }
                        }
                    }
                }
            }
            Op::AddBiasLast { x, b } => {
                let c = self.nodes[*b].data.len();
                if wants(*x) {
                    let g = Self::add_into(local, *x, go.len());
                    for (gv, ov) in g.iter_mut().zip(go) {
                        *gv += ov;
                    }
                }
                if wants(*b) {
                    let g = Self::add_into(local, *b, c);
                    for chunk in go.chunks_exact(c) {
                        for (gv, ov) in g.iter_mut().zip(chunk) {
                            *gv += ov;
                        }
                    }
                }
            }
            Op::Softmax { a, axis } => {
                if wants(*a) {
                    let s = &self.nodes[id].shape;
                    let (outer, lanes, inner) = lane_dims(s, *axis);
                    let yv = &self.nodes[id].data;
                    let g = Self::add_into(local, *a, yv.len());
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |l: usize| o * lanes * inner + l * inner + i;
                            let mut dot = 0.0;
                            for l in 0..lanes {
                                dot += go[idx(l)] * yv[idx(l)];
                            }
                            for l in 0..lanes {
                                g[idx(l)] += yv[idx(l)] * (go[idx(l)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmaxRows { a, mask } => {
                if wants(*a) {
                    let s = &self.nodes[id].shape;
                    let n = s[s.len() - 1];
                    let batch: usize = s[..s.len() - 2].iter().product();
                    let yv = &self.nodes[id].data;
                    let g = Self::add_into(local, *a, yv.len());
                    for t in 0..batch {
                        for i in 0..n {
                            let base = t * n * n + i * n;
                            let mrow = &mask[i * n..(i + 1) * n];
                            let mut dot = 0.0;
                            for j in 0..n {
                                if mrow[j] > 0.0 {
                                    dot += go[base + j] * yv[base + j];
                                }
                            }
                            for j in 0..n {
                                if mrow[j] > 0.0 {
                                    g[base + j] += yv[base + j] * (go[base + j] - dot);
                                }
                            }
                        }
                    }
                }
            }
            Op::RowNormalizeLast(a) => {
                if wants(*a) {
                    let lanes = *self.nodes[id].shape.last().unwrap();
                    let av = &self.nodes[*a].data;
                    let yv = &self.nodes[id].data;
                    let g = Self::add_into(local, *a, av.len());
                    for o in 0..av.len() / lanes {
                        let base = o * lanes;
                        let sum: f64 = av[base..base + lanes].iter().sum();
                        if sum == 0.0 {
                            continue;
                        }
                        let mut dot = 0.0;
                        for j in 0..lanes {
                            dot += go[base + j] * yv[base + j];
                        }
                        for j in 0..lanes {
                            g[base + j] += (go[base + j] - dot) / sum;
                        }
                    }
                }
            }
            Op::RowMaxRescale(a) => {
                if wants(*a) {
                    let lanes = *self.nodes[id].shape.last().unwrap();
                    let av = &self.nodes[*a].data;
                    let yv = &self.nodes[id].data;
                    let g = Self::add_into(local, *a, av.len());
                    for o in 0..av.len() / lanes {
                        let base = o * lanes;
                        let lane = &av[base..base + lanes];
                        let mut arg = 0;
                        let mut m = f64::NEG_INFINITY;
                        for (j, v) in lane.iter().enumerate() {
                            if *v > m {
                                m = *v;
                                arg = j;
                            }
                        }
                        if m <= 1.0 {
                            for j in 0..lanes {
                                g[base + j] += go[base + j];
                            }
                        } else {
                            let mut dot = 0.0;
                            for j in 0..lanes {
                                dot += go[base + j] * yv[base + j];
                            }
                            for j in 0..lanes {
                                g[base + j] += go[base + j] / m;
                            }
                            g[base + arg] -= dot / m;
                        }
                    }
                }
            }
            Op::AttnScores { q, k } => {
                let qs = &self.nodes[*q].shape;
                let (n, l, c) = (qs[0], qs[1], qs[2]);
                let scale = 1.0 / (c as f64).sqrt();
                let qv = &self.nodes[*q].data;
                let kv = &self.nodes[*k].data;
                if wants(*q) {
                    let g = Self::add_into(local, *q, n * l * c);
                    for t in 0..l {
                        for i in 0..n {
                            let grow = &go[t * n * n + i * n..t * n * n + (i + 1) * n];
                            let qg = &mut g[(i * l + t) * c..(i * l + t + 1) * c];
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij == 0.0 {
                                    continue;
                                }
                                let krow = &kv[(j * l + t) * c..(j * l + t + 1) * c];
                                for (qq, kk2) in qg.iter_mut().zip(krow) {
                                    *qq += gij * scale * kk2;
                                }
                            }
                        }
                    }
                }
                if wants(*k) {
                    let g = Self::add_into(local, *k, n * l * c);
                    for t in 0..l {
                        for i in 0..n {
                            let grow = &go[t * n * n + i * n..t * n * n + (i + 1) * n];
                            let qrow = &qv[(i * l + t) * c..(i * l + t + 1) * c];
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij == 0.0 {
                                    continue;
                                }
                                let kg = &mut g[(j * l + t) * c..(j * l + t + 1) * c];
                                for (kk2, qq) in kg.iter_mut().zip(qrow) {
                                    *kk2 += gij * scale * qq;
                                }
                            }
                        }
                    }
                }
            }
            Op::AttnApply { w, v } => {
                let ws = &self.nodes[*w].shape;
                let vs = &self.nodes[*v].shape;
                let (l, n, c) = (ws[0], ws[1], vs[2]);
                let wv = &self.nodes[*w].data;
                let vv = &self.nodes[*v].data;
                if wants(*w) {
                    let g = Self::add_into(local, *w, l * n * n);
                    for t in 0..l {
                        for i in 0..n {
                            let grow = &go[(i * l + t) * c..(i * l + t + 1) * c];
                            let wg = &mut g[t * n * n + i * n..t * n * n + (i + 1) * n];
                            for (j, wgj) in wg.iter_mut().enumerate() {
                                let vrow = &vv[(j * l + t) * c..(j * l + t + 1) * c];
                                let mut acc = 0.0;
                                for (gv, vc) in grow.iter().zip(vrow) {
                                    acc += gv * vc;
                                }
                                *wgj += acc;
                            }
                        }
                    }
                }
                if wants(*v) {
                    let g = Self::add_into(local, *v, n * l * c);
                    for t in 0..l {
                        for i in 0..n {
                            let grow = &go[(i * l + t) * c..(i * l + t + 1) * c];
                            let wrow = &wv[t * n * n + i * n..t * n * n + (i + 1) * n];
                            for (j, &wij) in wrow.iter().enumerate() {
                                if wij == 0.0 {
                                    continue;
                                }
                                let vg = &mut g[(j * l + t) * c..(j * l + t + 1) * c];
                                for (vgc, gv) in vg.iter_mut().zip(grow) {
                                    *vgc += wij * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::AttnApplyStatic { w, v } => {
                let vs = &self.nodes[*v].shape;
                let (n, l, c) = (vs[0], vs[1], vs[2]);
                let wv = &self.nodes[*w].data;
                let vv = &self.nodes[*v].data;
                if wants(*w) {
                    let g = Self::add_into(local, *w, n * n);
                    for i in 0..n {
                        let gbase = &go[i * l * c..(i + 1) * l * c];
                        for j in 0..n {
                            let vbase = &vv[j * l * c..(j + 1) * l * c];
                            let mut acc = 0.0;
                            for (gv, vc) in gbase.iter().zip(vbase) {
                                acc += gv * vc;
                            }
                            g[i * n + j] += acc;
                        }
                    }
                }
                if wants(*v) {
                    let g = Self::add_into(local, *v, n * l * c);
                    for i in 0..n {
                        let gbase = &go[i * l * c..(i + 1) * l * c];
                        let wrow = &wv[i * n..(i + 1) * n];
                        for (j, &wij) in wrow.iter().enumerate() {
                            if wij == 0.0 {
                                continue;
                            }
                            let vg = &mut g[j * l * c..(j + 1) * l * c];
                            for (vgc, gv) in vg.iter_mut().zip(gbase) {
                                *vgc += wij * gv;
                            }
                        }
                    }
                }
            }
            Op::CausalConv1d { x, f, dilation } => {
                let xs = &self.nodes[*x].shape;
                let fs = &self.nodes[*f].shape;
                let (n, l, cin) = (xs[0], xs[1], xs[2]);
                let (cout, k) = (fs[0], fs[2]);
                let xv = &self.nodes[*x].data;
                let fv = &self.nodes[*f].data;
                if wants(*f) {
                    let g = Self::add_into(local, *f, cout * cin * k);
                    for nn in 0..n {
                        for t in 0..l {
                            let grow = &go[(nn * l + t) * cout..(nn * l + t + 1) * cout];
                            for s in 0..k {
                                let off = dilation * s;
                                if off > t {
                                    break;
                                }
                                let xrow =
                                    &xv[(nn * l + t - off) * cin..(nn * l + t - off + 1) * cin];
                                for (co, &gc) in grow.iter().enumerate() {
                                    if gc == 0.0 {
                                        continue;
                                    }
                                    let fbase = co * cin * k + s;
                                    for (ci, xc) in xrow.iter().enumerate() {
                                        g[fbase + ci * k] += gc * xc;
                                    }
                                }
                            }
                        }
                    }
                }
                if wants(*x) {
                    let g = Self::add_into(local, *x, n * l * cin);
                    for nn in 0..n {
                        for t in 0..l {
                            let grow = &go[(nn * l + t) * cout..(nn * l + t + 1) * cout];
                            for s in 0..k {
                                let off = dilation * s;
                                if off > t {
                                    break;
                                }
                                let xg =
                                    &mut g[(nn * l + t - off) * cin..(nn * l + t - off + 1) * cin];
                                for (co, &gc) in grow.iter().enumerate() {
                                    if gc == 0.0 {
                                        continue;
                                    }
                                    let fbase = co * cin * k + s;
                                    for (ci, xgc) in xg.iter_mut().enumerate() {
                                        *xgc += gc * fv[fbase + ci * k];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if wants(*a) {
                    let g = Self::add_into(local, *a, go.len());
                    for i in 0..go.len() {
                        g[i] += go[i] * mask[i];
                    }
                }
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let lanes = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, lanes, inner)
}
