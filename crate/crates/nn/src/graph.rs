//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every op applied during a forward pass. Parameters
//! are read from a borrowed [`ParamStore`] and are not copied onto the tape;
//! their gradients are accumulated by [`ParamId`] during [`Graph::backward`].

use crate::ops::{col2im, gemm, im2col, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Conv2d {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        geom: ConvGeom,
        cout: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        // geometry of the equivalent forward conv, whose input is our output
        geom: ConvGeom,
        cin: usize,
    },
    GroupNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        groups: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass.
pub struct Grads {
    params: Vec<Option<Vec<f64>>>,
    vars: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].as_deref()
    }

    pub fn var(&self, v: Var) -> Option<&Tensor> {
        self.vars[v.0].as_ref()
    }

    /// Drop every parameter gradient for which `keep` is false.
    pub fn retain_params(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        for (i, g) in self.params.iter_mut().enumerate() {
            if !keep(ParamId(i)) {
                *g = None;
            }
        }
    }

    pub(crate) fn param_slots(&self) -> &[Option<Vec<f64>>] {
        &self.params
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn param_value(&self, id: ParamId) -> &'s [f64] {
        &self.store.get(id).value
    }

    /// A constant leaf; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A leaf whose gradient is reported by [`Grads::var`].
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let ws = &self.store.get(w).shape;
        assert_eq!(ws.len(), 4, "conv weight must be [cout, cin, k, k]");
        let (cout, cin, k) = (ws[0], ws[1], ws[2]);
        let xv = &self.nodes[x.0].value;
        let [n, c, h, wd] = xv.shape();
        assert_eq!(c, cin, "conv2d: input has {c} channels, weight expects {cin}");
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: input smaller than kernel");
        let geom = ConvGeom {
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let wv = self.param_value(w);
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
        for i in 0..n {
            im2col(&geom, xv.sample(i), &mut cols);
            let y = out.sample_mut(i);
            gemm(cout, geom.col_rows(), oh * ow, wv, false, &cols, false, y, false);
            if let Some(b) = b {
                for (co, &bv) in self.store.get(b).value.iter().enumerate() {
                    y[co * oh * ow..(co + 1) * oh * ow]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cout,
            },
            true,
        )
    }

    /// Transposed convolution with weight `[cin, cout, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let ws = &self.store.get(w).shape;
        assert_eq!(ws.len(), 4, "conv_transpose weight must be [cin, cout, k, k]");
        let (cin, cout, k) = (ws[0], ws[1], ws[2]);
        let xv = &self.nodes[x.0].value;
        let [n, c, h, wd] = xv.shape();
        assert_eq!(c, cin, "conv_transpose2d: input has {c} channels, weight expects {cin}");
        let oh = (h - 1) * stride + k - 2 * pad;
        let ow = (wd - 1) * stride + k - 2 * pad;
        let geom = ConvGeom {
            channels: cout,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!((geom.out_height(), geom.out_width()), (h, wd));
        let wv = self.param_value(w);
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        let mut cols = vec![0.0; geom.col_rows() * h * wd];
        for i in 0..n {
            gemm(geom.col_rows(), cin, h * wd, wv, true, xv.sample(i), false, &mut cols, false);
            let y = out.sample_mut(i);
            col2im(&geom, &cols, y);
            if let Some(b) = b {
                for (co, &bv) in self.store.get(b).value.iter().enumerate() {
                    y[co * oh * ow..(co + 1) * oh * ow]
                        .iter_mut()
                        .for_each(|v| *v += bv);
                }
            }
        }
        self.push(
            out,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                cin,
            },
            true,
        )
    }

    /// Group normalization with per-channel affine `gamma`, `beta`.
    /// `groups` must divide the channel count.
    pub fn group_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, groups: usize) -> Var {
        const EPS: f64 = 1e-5;
        let xv = &self.nodes[x.0].value;
        let [n, c, h, w] = xv.shape();
        assert!(groups > 0 && c % groups == 0, "groups must divide channels");
        let gs = (c / groups) * h * w;
        let gv = self.param_value(gamma);
        let bv = self.param_value(beta);
        let mut out = Tensor::zeros(xv.shape());
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; n * groups];
        for i in 0..n {
            let xs = xv.sample(i);
            for g in 0..groups {
                let seg = &xs[g * gs..(g + 1) * gs];
                let mean = seg.iter().sum::<f64>() / gs as f64;
                let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gs as f64;
                let r = 1.0 / (var + EPS).sqrt();
                rstd[i * groups + g] = r;
                let base = i * c * h * w + g * gs;
                for (j, &v) in seg.iter().enumerate() {
                    xhat[base + j] = (v - mean) * r;
                }
            }
            let ys = out.sample_mut(i);
            for ch in 0..c {
                for p in 0..h * w {
                    let idx = ch * h * w + p;
                    ys[idx] = gv[ch] * xhat[i * c * h * w + idx] + bv[ch];
                }
            }
        }
        self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            },
            true,
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Channel-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let [n, ca, h, w] = av.shape();
        let [nb, cb, hb, wb] = bv.shape();
        assert_eq!((n, h, w), (nb, hb, wb), "concat: mismatched batch/spatial dims");
        let mut out = Tensor::zeros([n, ca + cb, h, w]);
        for i in 0..n {
            let o = out.sample_mut(i);
            o[..ca * h * w].copy_from_slice(av.sample(i));
            o[ca * h * w..].copy_from_slice(bv.sample(i));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Concat { a, b }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let hw = (h * w) as f64;
        let mut out = Tensor::zeros([n, c, 1, 1]);
        for i in 0..n {
            let xs = xv.sample(i);
            for ch in 0..c {
                out.data_mut()[i * c + ch] = xs[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::GlobalAvgPool { x }, rg)
    }

    /// Fully connected layer, weight `[out, in]`. The input's non-batch dims
    /// are flattened.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Var {
        let ws = &self.store.get(w).shape;
        let (dout, din) = (ws[0], ws[1]);
        let xv = self.value(x);
        let n = xv.batch();
        assert_eq!(xv.sample_len(), din, "linear: input width mismatch");
        let mut out = Tensor::zeros([n, dout, 1, 1]);
        gemm(n, din, dout, xv.data(), false, self.param_value(w), true, out.data_mut(), false);
        if let Some(b) = b {
            let bv = self.param_value(b);
            for row in out.data_mut().chunks_mut(dout) {
                row.iter_mut().zip(bv).for_each(|(v, b)| *v += b);
            }
        }
        self.push(out, Op::Linear { x, w, b }, true)
    }

    /// Reverse pass from one or more `(output, d loss / d output)` seeds.
    pub fn backward(&self, seeds: &[(Var, &Tensor)]) -> Grads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut pgrads: Vec<Option<Vec<f64>>> = vec![None; self.store.len()];
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            accumulate(&mut grads[v.0], (*g).clone());
        }
        let store = self.store;
        
        for idx in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(gy);
                continue;
            }
            match &node.op {
                Op::Input => {
                    grads[idx] = Some(gy);
                }
                &Op::Conv2d {
                    x,
                    w,
                    b,
                    geom,
                    cout,
                } => {
                    let xv = self.value(x);
                    let n = xv.batch();
                    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                    let wv = self.param_value(w);
                    let mut cols = vec![0.0; rows * ncols];
                    let mut gx = self.rg(x).then(|| Tensor::zeros(xv.shape()));
                    let dw = slot(&mut pgrads, store, w);
                    for i in 0..n {
                        let gys = gy.sample(i);
                        im2col(&geom, xv.sample(i), &mut cols);
                        gemm(cout, ncols, rows, gys, false, &cols, true, dw, true);
                        if let Some(gx) = gx.as_mut() {
                            gemm(rows, cout, ncols, wv, true, gys, false, &mut cols, false);
                            col2im(&geom, &cols, gx.sample_mut(i));
                        }
                    }
                    if let Some(b) = b {
                        let db = slot(&mut pgrads, store, b);
                        for i in 0..n {
                            for (co, d) in db.iter_mut().enumerate() {
                                *d += gy.sample(i)[co * ncols..(co + 1) * ncols].iter().sum::<f64>();
                            }
                        }
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                &Op::ConvTranspose2d { x, w, b, geom, cin } => {
                    let xv = self.value(x);
                    let [n, _, h, wd] = xv.shape();
                    let rows = geom.col_rows();
                    let wv = self.param_value(w);
                    let mut gcols = vec![0.0; rows * h * wd];
                    let mut gx = self.rg(x).then(|| Tensor::zeros(xv.shape()));
                    let dw = slot(&mut pgrads, store, w);
                    for i in 0..n {
                        im2col(&geom, gy.sample(i), &mut gcols);
                        gemm(cin, h * wd, rows, xv.sample(i), false, &gcols, true, dw, true);
                        if let Some(gx) = gx.as_mut() {
                            gemm(cin, rows, h * wd, wv, false, &gcols, false, gx.sample_mut(i), false);
                        }
                    }
                    if let Some(b) = b {
                        let plane = geom.height * geom.width;
                        let db = slot(&mut pgrads, store, b);
                        for i in 0..n {
                            for (co, d) in db.iter_mut().enumerate() {
                                *d += gy.sample(i)[co * plane..(co + 1) * plane].iter().sum::<f64>();
                            }
                        }
                    }
                    if let Some(gx) = gx {
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    xhat,
                    rstd,
                } => {
                    let (x, gamma, beta, groups) = (*x, *gamma, *beta, *groups);
                    let [n, c, h, w] = gy.shape();
                    let hw = h * w;
                    let gs = (c / groups) * hw;
                    let gv = self.param_value(gamma);
                    {
                        let mut dg = vec![0.0; c];
                        let mut db = vec![0.0; c];
                        for i in 0..n {
                            let gys = gy.sample(i);
                            for ch in 0..c {
                                let off = i * c * hw + ch * hw;
                                for p in 0..hw {
                                    dg[ch] += gys[ch * hw + p] * xhat[off + p];
                                    db[ch] += gys[ch * hw + p];
                                }
                            }
                        }
                        add_into(slot(&mut pgrads, store, gamma), &dg);
                        add_into(slot(&mut pgrads, store, beta), &db);
                    }
                    if self.rg(x) {
                        let mut gx = Tensor::zeros(gy.shape());
                        for i in 0..n {
                            let gys = gy.sample(i);
                            let gxs = gx.sample_mut(i);
                            for g in 0..groups {
                                let base = g * gs;
                                let r = rstd[i * groups + g];
                                let mut sum_d = 0.0;
                                let mut sum_dx = 0.0;
                                for j in 0..gs {
                                    let ch = (base + j) / hw;
                                    let d = gys[base + j] * gv[ch];
                                    sum_d += d;
                                    sum_dx += d * xhat[i * c * hw + base + j];
                                }
                                let m = gs as f64;
                                for j in 0..gs {
                                    let ch = (base + j) / hw;
                                    let d = gys[base + j] * gv[ch];
                                    let xh = xhat[i * c * hw + base + j];
                                    gxs[base + j] = r / m * (m * d - sum_d - xh * sum_dx);
                                }
                            }
                        }
                        accumulate(&mut grads[x.0], gx);
                    }
                }
                &Op::LeakyRelu { x, slope } => {
                    let xv = self.value(x);
                    let mut gx = gy;
                    for (g, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *g *= slope;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                &Op::Tanh { x } => {
                    let mut gx = gy;
                    for (g, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= 1.0 - y * y;
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                &Op::Sigmoid { x } => {
                    let mut gx = gy;
                    for (g, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= y * (1.0 - y);
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                &Op::Concat { a, b } => {
                    let [n, _, h, w] = gy.shape();
                    let ca = self.value(a).channels();
                    let cb = self.value(b).channels();
                    if self.rg(a) {
                        let mut ga = Tensor::zeros([n, ca, h, w]);
                        for i in 0..n {
                            ga.sample_mut(i).copy_from_slice(&gy.sample(i)[..ca * h * w]);
                        }
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.rg(b) {
                        let mut gb = Tensor::zeros([n, cb, h, w]);
                        for i in 0..n {
                            gb.sample_mut(i).copy_from_slice(&gy.sample(i)[ca * h * w..]);
                        }
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                &Op::GlobalAvgPool { x } => {
                    let shape = self.value(x).shape();
                    let [n, c, h, w] = shape;
                    let hw = h * w;
                    let mut gx = Tensor::zeros(shape);
                    for i in 0..n {
                        let gxs = gx.sample_mut(i);
                        for ch in 0..c {
                            let g = gy.data()[i * c + ch] / hw as f64;
                            gxs[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v = g);
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                &Op::Linear { x, w, b } => {
                    let xv = self.value(x);
                    let n = xv.batch();
                    let din = xv.sample_len();
                    let dout = gy.channels();
                    let dw = slot(&mut pgrads, store, w);
                    gemm(dout, n, din, gy.data(), true, xv.data(), false, dw, true);
                    if let Some(b) = b {
                        let db = slot(&mut pgrads, store, b);
                        for row in gy.data().chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    }
                    if self.rg(x) {
                        let mut gx = Tensor::zeros(xv.shape());
                        gemm(n, dout, din, gy.data(), false, self.param_value(w), false, gx.data_mut(), false);
                        accumulate(&mut grads[x.0], gx);
                    }
                }
            }
        }
        Grads {
            params: pgrads,
            vars: grads,
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn slot<'a>(pgrads: &'a mut [Option<Vec<f64>>], store: &ParamStore, id: ParamId) -> &'a mut Vec<f64> {
    let len = store.get(id).numel();
    pgrads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
