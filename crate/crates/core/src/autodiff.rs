//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node. Sequences of tokens are laid
//! out as stacked rows: a batch of `B` sequences of `S` tokens with width `D`
//! is a `(B·S) × D` matrix, sequence-major.
//!
//! Parameters enter the graph through [`Graph::param`], which creates a fresh
//! leaf per use. Gradients of every use are summed back onto the owning
//! [`ParamId`] by [`Gradients::param_grads`]; the per-use leaves stay available
//! so callers can attribute gradient to a particular stage via tags.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Matrix};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    Reshape(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    MaskRows {
        x: Var,
        keep: Vec<bool>,
    },
    MaskedMse {
        pred: Var,
        target: Matrix,
        frame_mask: Vec<bool>,
        cols: (usize, usize),
    },
    WeightedSum {
        x: Var,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    tag: u32,
}

/// A recorded computation.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    tag: u32,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            tag: 0,
        }
    }

    /// A graph that only evaluates; nothing is kept for a backward pass.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
            tag: 0,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Tag attached to every node created from now on.
    pub fn set_tag(&mut self, tag: u32) {
        self.tag = tag;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn tag_of(&self, v: Var) -> u32 {
        self.nodes[v.0].tag
    }

    /// Parameter leaves created so far, with their tags.
    pub fn param_uses(&self) -> impl Iterator<Item = (Var, ParamId, u32)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id, n.tag)),
            _ => None,
        })
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let op = if self.grad_enabled {
            op
        } else {
            match op {
                Op::Param(id) => Op::Param(id),
                _ => Op::Constant,
            }
        };
        self.nodes.push(Node {
            value,
            op,
            tag: self.tag,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `x + bias`, with a `1 × m` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        let mut out = self.value(x).clone();
        assert_eq!(out.cols(), b.cols(), "bias width");
        let bias_row = b.data().to_vec();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&bias_row) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(s);
        self.push(out, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both `1 × m`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.shape();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Matrix::zeros(n, m);
        let mut out = Matrix::zeros(n, m);
        let mut rstd = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let rs = 1.0 / libm::sqrt(var + LN_EPS);
            rstd.push(rs);
            let xh = xhat.row_mut(r);
            for c in 0..m {
                xh[c] = (row[c] - mean) * rs;
            }
            let o = out.row_mut(r);
            for c in 0..m {
                o[c] = xh[c] * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Scaled dot-product attention over `heads` heads.
    ///
    /// `q` is `(batch·sq) × d`, `k` and `v` are `(batch·sk) × d`. With `causal`,
    /// query `i` only sees keys `j ≤ i` (requires `sq == sk`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, heads: usize, causal: bool) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(kv.cols(), d);
        assert_eq!(vv.shape(), kv.shape());
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        assert!(batch > 0 && qv.rows() % batch == 0 && kv.rows() % batch == 0);
        let sq = qv.rows() / batch;
        let sk = kv.rows() / batch;
        assert!(!causal || sq == sk, "causal attention needs square scores");
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut probs = vec![0.0; batch * heads * sq * sk];
        let mut out = Matrix::zeros(qv.rows(), d);
        let mut scores = vec![0.0; sk];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..sq {
                    let qrow = &qv.row(b * sq + i)[c0..c0 + dh];
                    let visible = if causal { i + 1 } else { sk };
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate().take(visible) {
                        let krow = &kv.row(b * sk + j)[c0..c0 + dh];
                        *s = dot(qrow, krow) * scale;
                        max = max.max(*s);
                    }
                    let mut denom = 0.0;
                    for s in scores.iter_mut().take(visible) {
                        *s = libm::exp(*s - max);
                        denom += *s;
                    }
                    let p = &mut probs[((b * heads + h) * sq + i) * sk..][..sk];
                    for j in 0..visible {
                        p[j] = scores[j] / denom;
                    }
                    let orow = &mut out.row_mut(b * sq + i)[c0..c0 + dh];
                    for j in 0..visible {
                        let vrow = &vv.row(b * sk + j)[c0..c0 + dh];
                        let pj = p[j];
                        for (o, vx) in orow.iter_mut().zip(vrow) {
                            *o += pj * vx;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            },
        )
    }

    /// Same buffer, new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshaped(rows, cols);
        self.push(out, Op::Reshape(x))
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(idx.len(), xv.cols());
        for (r, &src) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(src));
        }
        self.push(out, Op::Gather { x, idx })
    }

    /// Each row of `x` repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let n = self.value(x).rows();
        let idx = (0..n).flat_map(|r| std::iter::repeat_n(r, times)).collect();
        self.gather_rows(x, idx)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat widths differ");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Zeroes every row `r` with `keep[r] == false`.
    pub fn mask_rows(&mut self, x: Var, keep: Vec<bool>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(keep.len(), out.rows());
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(r).fill(0.0);
            }
        }
        self.push(out, Op::MaskRows { x, keep })
    }

    /// Per-sequence mean squared error.
    ///
    /// `pred` holds `B` sequences of `frame_mask.len()` frames. For each
    /// sequence the squared error is averaged over the frames with
    /// `frame_mask[t]` set and over columns `cols.0..cols.1`. Result is `B × 1`.
    pub fn masked_mse(&mut self, pred: Var, target: Matrix, frame_mask: Vec<bool>, cols: (usize, usize)) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape());
        let t = frame_mask.len();
        assert!(t > 0 && pv.rows().is_multiple_of(t));
        let frames = frame_mask.iter().filter(|m| **m).count();
        assert!(frames > 0 && cols.1 > cols.0 && cols.1 <= pv.cols());
        let count = (frames * (cols.1 - cols.0)) as f64;
        let batch = pv.rows() / t;
        let mut out = Matrix::zeros(batch, 1);
        for b in 0..batch {
            let mut acc = 0.0;
            for (f, _) in frame_mask.iter().enumerate().filter(|(_, m)| **m) {
                let r = b * t + f;
                let (pr, tr) = (pv.row(r), target.row(r));
                for c in cols.0..cols.1 {
                    let e = pr[c] - tr[c];
                    acc += e * e;
                }
            }
            out[(b, 0)] = acc / count;
        }
        self.push(
            out,
            Op::MaskedMse {
                pred,
                target,
                frame_mask,
                cols,
            },
        )
    }

    /// `Σ weights[i] · x[i]` over all entries of `x`, as a `1 × 1` value.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len());
        let s = xv.data().iter().zip(&weights).map(|(a, w)| a * w).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::WeightedSum { x, weights })
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert!(self.grad_enabled, "backward on an inference graph");
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                gemm(false, g, true, bv, 0.0, &mut ga);
                accumulate(grads, *a, ga);
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                gemm(true, av, false, g, 0.0, &mut gb);
                accumulate(grads, *b, gb);
            }
            Op::AddBias(x, bias) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (a, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *a += v;
                    }
                }
                accumulate(grads, *x, g.clone());
                accumulate(grads, *bias, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Scale(x, s) => {
                let mut gx = g.clone();
                gx.scale_assign(*s);
                accumulate(grads, *x, gx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut gx = g.clone();
                for (gv, &xx) in gx.data_mut().iter_mut().zip(xv.data()) {
                    *gv *= gelu_grad(xx);
                }
                accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                let (n, m) = xhat.shape();
                let mut gg = Matrix::zeros(1, m);
                let mut gbeta = Matrix::zeros(1, m);
                let mut gx = Matrix::zeros(n, m);
                let mut dxhat = vec![0.0; m];
                for r in 0..n {
                    let (gr, xh) = (g.row(r), xhat.row(r));
                    for c in 0..m {
                        gg.data_mut()[c] += gr[c] * xh[c];
                        gbeta.data_mut()[c] += gr[c];
                        dxhat[c] = gr[c] * gam[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / m as f64;
                    let mean_dx = dxhat.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / m as f64;
                    let out = gx.row_mut(r);
                    for c in 0..m {
                        out[c] = rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, gg);
                accumulate(grads, *beta, gbeta);
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.cols();
                let (sq, sk) = (qv.rows() / batch, kv.rows() / batch);
                let dh = d / heads;
                let scale = 1.0 / libm::sqrt(dh as f64);
                let mut gq = Matrix::zeros(qv.rows(), d);
                let mut gk = Matrix::zeros(kv.rows(), d);
                let mut gv = Matrix::zeros(vv.rows(), d);
                let mut dp = vec![0.0; sk];
                for b in 0..*batch {
                    for h in 0..*heads {
                        let c0 = h * dh;
                        for i in 0..sq {
                            let p = &probs[((b * heads + h) * sq + i) * sk..][..sk];
                            let go = &g.row(b * sq + i)[c0..c0 + dh];
                            for j in 0..sk {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let vrow = &vv.row(b * sk + j)[c0..c0 + dh];
                                dp[j] = dot(go, vrow);
                                let gvrow = &mut gv.row_mut(b * sk + j)[c0..c0 + dh];
                                for (a, o) in gvrow.iter_mut().zip(go) {
                                    *a += p[j] * o;
                                }
                            }
                            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            let qrow = &qv.row(b * sq + i)[c0..c0 + dh];
                            for j in 0..sk {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - inner) * scale;
                                let krow = &kv.row(b * sk + j)[c0..c0 + dh];
                                let gqrow = &mut gq.row_mut(b * sq + i)[c0..c0 + dh];
                                for (a, kx) in gqrow.iter_mut().zip(krow) {
                                    *a += ds * kx;
                                }
                                let gkrow = &mut gk.row_mut(b * sk + j)[c0..c0 + dh];
                                for (a, qx) in gkrow.iter_mut().zip(qrow) {
                                    *a += ds * qx;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *q, gq);
                accumulate(grads, *k, gk);
                accumulate(grads, *v, gv);
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                accumulate(grads, *x, g.clone().reshaped(r, c));
            }
            Op::Gather { x, idx } => {
                let (r, c) = self.value(*x).shape();
                let mut gx = Matrix::zeros(r, c);
                for (o, &src) in idx.iter().enumerate() {
                    for (a, v) in gx.row_mut(src).iter_mut().zip(g.row(o)) {
                        *a += v;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                    accumulate(grads, p, Matrix::from_vec(r, c, slice));
                    offset += r;
                }
            }
            Op::MaskRows { x, keep } => {
                let mut gx = g.clone();
                for (r, &k) in keep.iter().enumerate() {
                    if !k {
                        gx.row_mut(r).fill(0.0);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::MaskedMse {
                pred,
                target,
                frame_mask,
                cols,
            } => {
                let pv = self.value(*pred);
                let t = frame_mask.len();
                let frames = frame_mask.iter().filter(|m| **m).count();
                let count = (frames * (cols.1 - cols.0)) as f64;
                let mut gp = Matrix::zeros(pv.rows(), pv.cols());
                for b in 0..pv.rows() / t {
                    let gb = g[(b, 0)] * 2.0 / count;
                    for (f, _) in frame_mask.iter().enumerate().filter(|(_, m)| **m) {
                        let r = b * t + f;
                        for c in cols.0..cols.1 {
                            gp[(r, c)] = gb * (pv[(r, c)] - target[(r, c)]);
                        }
                    }
                }
                accumulate(grads, *pred, gp);
            }
            Op::WeightedSum { x, weights } => {
                let (r, c) = self.value(*x).shape();
                let s = g[(0, 0)];
                let data = weights.iter().map(|w| w * s).collect();
                accumulate(grads, *x, Matrix::from_vec(r, c, data));
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

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient per parameter, summed over all of its uses in `graph`.
    /// Parameters that were not used get `None`.
    pub fn param_grads(&self, graph: &Graph, n_params: usize) -> Vec<Option<Matrix>> {
        let mut out: Vec<Option<Matrix>> = (0..n_params).map(|_| None).collect();
        for (var, id, _) in graph.param_uses() {
            if let Some(g) = self.of(var) {
                match &mut out[id.index()] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}
