use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{matmul_into, matmul_nt_acc, matmul_tn_acc};
use super::{gelu_grad_scalar, gelu_scalar, sigmoid_scalar, Tensor};
use crate::error::{HktError, Result};
use crate::numkit::Prng;

const LAYERNORM_EPS: f64 = 1e-8;

enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    SumAll(usize),
    MeanRows(usize),
    PrefixMeanRows(usize),
    SoftmaxRows {
        x: usize,
        mask: Option<Rc<Vec<bool>>>,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        // (xhat, inv_std) saved during forward
        cache: Rc<(Vec<f64>, Vec<f64>)>,
    },
    Gelu(usize),
    Sigmoid(usize),
    Ln(usize),
    Relu(usize),
    ConvDepthwise {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
    },
    Embedding {
        table: usize,
        ids: Rc<Vec<usize>>,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    UpsampleRows {
        x: usize,
        factor: usize,
    },
    FuseScores {
        scores: Vec<usize>,
        lambda: usize,
        stride: usize,
        causal: bool,
    },
    RowwiseWeightedSum {
        mats: Vec<usize>,
        weights: usize,
    },
    CrossEntropyLogits {
        logits: usize,
        target: usize,
    },
    Dropout {
        x: usize,
        mask: Rc<Vec<f64>>,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Records a single forward pass; topological order is the insertion order.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a recorded tensor. Copyable; tied to its tape's lifetime.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Differentiable leaf (model parameter or probed input).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    /// Reverse pass from a scalar loss. Populates grads on every
    /// differentiable leaf; a second call without a fresh tape errors.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(self, loss.tape), "var from a different tape");
        let inner = &mut *self.inner.borrow_mut();
        if inner.consumed {
            return Err(HktError::GraphConsumed);
        }
        if !inner.nodes[loss.id].value.is_scalar() {
            return Err(HktError::NonScalarLoss(
                inner.nodes[loss.id].value.shape().to_vec(),
            ));
        }
        if !inner
            .nodes
            .iter()
            .any(|n| n.requires_grad && matches!(n.op, Op::Leaf))
        {
            return Err(HktError::DetachedGraph);
        }
        inner.consumed = true;

        let n = inner.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for i in (0..=loss.id).rev() {
            if !inner.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let g = match (matches!(inner.nodes[i].op, Op::Leaf), grads[i].take()) {
                (true, Some(g)) => {
                    grads[i] = Some(g);
                    continue;
                }
                (true, None) | (false, None) => continue,
                (false, Some(g)) => g,
            };
            propagate(&inner.nodes, &mut grads, i, &g);
        }

        for (node, g) in inner.nodes.iter_mut().zip(grads.into_iter()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                let buf = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                node.grad = Some(buf);
            }
        }
        Ok(())
    }

    /// Clears gradients and re-arms the tape for another backward pass.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.consumed = false;
        for n in inner.nodes.iter_mut() {
            n.grad = None;
        }
    }
}

fn need(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn acc_into<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'a mut [f64] {
    let len = nodes[id].value.len();
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k) = (nodes[*a].value.rows(), nodes[*a].value.cols());
            let nn = nodes[*b].value.cols();
            if need(nodes, *a) {
                let bval = nodes[*b].value.data().to_vec();
                let ga = acc_into(grads, nodes, *a);
                matmul_nt_acc(g, &bval, ga, m, nn, k);
            }
            if need(nodes, *b) {
                let aval = nodes[*a].value.data().to_vec();
                let gb = acc_into(grads, nodes, *b);
                matmul_tn_acc(&aval, g, gb, m, k, nn);
            }
        }
        Op::Transpose(a) => {
            if need(nodes, *a) {
                let (m, nn) = (nodes[*a].value.rows(), nodes[*a].value.cols());
                let ga = acc_into(grads, nodes, *a);
                for r in 0..nn {
                    for c in 0..m {
                        ga[c * nn + r] += g[r * m + c];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for id in [*a, *b] {
                if need(nodes, id) {
                    let gx = acc_into(grads, nodes, id);
                    for (o, gv) in gx.iter_mut().zip(g.iter()) {
                        *o += gv;
                    }
                }
            }
        }
        Op::AddBias(x, b) => {
            let cols = nodes[*b].value.len();
            if need(nodes, *x) {
                let gx = acc_into(grads, nodes, *x);
                for (o, gv) in gx.iter_mut().zip(g.iter()) {
                    *o += gv;
                }
            }
            if need(nodes, *b) {
                let gb = acc_into(grads, nodes, *b);
                for (idx, gv) in g.iter().enumerate() {
                    gb[idx % cols] += gv;
                }
            }
        }
        Op::Mul(a, b) => {
            if need(nodes, *a) {
                let bval = nodes[*b].value.data().to_vec();
                let ga = acc_into(grads, nodes, *a);
                for ((o, gv), bv) in ga.iter_mut().zip(g.iter()).zip(bval.iter()) {
                    *o += gv * bv;
                }
            }
            if need(nodes, *b) {
                let aval = nodes[*a].value.data().to_vec();
                let gb = acc_into(grads, nodes, *b);
                for ((o, gv), av) in gb.iter_mut().zip(g.iter()).zip(aval.iter()) {
                    *o += gv * av;
                }
            }
        }
        Op::Scale(a, c) => {
            if need(nodes, *a) {
                let ga = acc_into(grads, nodes, *a);
                for (o, gv) in ga.iter_mut().zip(g.iter()) {
                    *o += c * gv;
                }
            }
        }
        Op::AddScalar(a) => {
            if need(nodes, *a) {
                let ga = acc_into(grads, nodes, *a);
                for (o, gv) in ga.iter_mut().zip(g.iter()) {
                    *o += gv;
                }
            }
        }
        Op::SumAll(a) => {
            if need(nodes, *a) {
                let ga = acc_into(grads, nodes, *a);
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }
        }
        Op::MeanRows(a) => {
            if need(nodes, *a) {
                let (m, nn) = (nodes[*a].value.rows(), nodes[*a].value.cols());
                let ga = acc_into(grads, nodes, *a);
                let inv = 1.0 / m as f64;
                for r in 0..m {
                    for c in 0..nn {
                        ga[r * nn + c] += g[c] * inv;
                    }
                }
            }
        }
        Op::PrefixMeanRows(a) => {
            if need(nodes, *a) {
                let (m, nn) = (nodes[*a].value.rows(), nodes[*a].value.cols());
                let ga = acc_into(grads, nodes, *a);
                // ga[r] += sum_{t >= r} g[t] / (t+1), via a suffix sweep.
                let mut suffix = vec![0.0; nn];
                for t in (0..m).rev() {
                    let inv = 1.0 / (t + 1) as f64;
                    for c in 0..nn {
                        suffix[c] += g[t * nn + c] * inv;
                        ga[t * nn + c] += suffix[c];
                    }
                }
            }
        }
        Op::SoftmaxRows { x, mask } => {
            if need(nodes, *x) {
                let y = nodes[i].value.data().to_vec();
                let (m, nn) = (nodes[*x].value.rows(), nodes[*x].value.cols());
                let gx = acc_into(grads, nodes, *x);
                for r in 0..m {
                    let base = r * nn;
                    let mut dot = 0.0;
                    for c in 0..nn {
                        if masked(mask, base + c) {
                            continue;
                        }
                        dot += g[base + c] * y[base + c];
                    }
                    for c in 0..nn {
                        if masked(mask, base + c) {
                            continue;
                        }
                        gx[base + c] += y[base + c] * (g[base + c] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            cache,
        } => {
            let (m, nn) = (nodes[*x].value.rows(), nodes[*x].value.cols());
            let (xhat, inv_std) = (&cache.0, &cache.1);
            let gainv = nodes[*gain].value.data().to_vec();
            if need(nodes, *gain) {
                let gg = acc_into(grads, nodes, *gain);
                for r in 0..m {
                    for c in 0..nn {
                        gg[c] += g[r * nn + c] * xhat[r * nn + c];
                    }
                }
            }
            if need(nodes, *bias) {
                let gb = acc_into(grads, nodes, *bias);
                for r in 0..m {
                    for c in 0..nn {
                        gb[c] += g[r * nn + c];
                    }
                }
            }
            if need(nodes, *x) {
                let gx = acc_into(grads, nodes, *x);
                for r in 0..m {
                    let base = r * nn;
                    let mut mean_gh = 0.0;
                    let mut mean_ghx = 0.0;
                    for c in 0..nn {
                        let gh = g[base + c] * gainv[c];
                        mean_gh += gh;
                        mean_ghx += gh * xhat[base + c];
                    }
                    mean_gh /= nn as f64;
                    mean_ghx /= nn as f64;
                    for c in 0..nn {
                        let gh = g[base + c] * gainv[c];
                        gx[base + c] +=
                            inv_std[r] * (gh - mean_gh - xhat[base + c] * mean_ghx);
                    }
                }
            }
        }
        Op::Gelu(a) => {
            if need(nodes, *a) {
                let xv = nodes[*a].value.data().to_vec();
                let ga = acc_into(grads, nodes, *a);
                for ((o, gv), xv) in ga.iter_mut().zip(g.iter()).zip(xv.iter()) {
                    *o += gv * gelu_grad_scalar(*xv);
                }
            }
        }
        Op::Sigmoid(a) => {
            if need(nodes, *a) {
                let y = nodes[i].value.data().to_vec();
                let ga = acc_into(grads, nodes, *a);
                for ((o, gv), yv) in ga.iter_mut().zip(g.iter()).zip(y.iter()) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
        }
        Op::Ln(a) => {
            if need(nodes, *a) {
                let xv = nodes[*a].value.data().to_vec();
                let ga = acc_into(grads, nodes, *a);
                for ((o, gv), xv) in ga.iter_mut().zip(g.iter()).zip(xv.iter()) {
                    *o += gv / xv;
                }
            }
        }
        Op::Relu(a) => {
            if need(nodes, *a) {
                let xv = nodes[*a].value.data().to_vec();
                let ga = acc_into(grads, nodes, *a);
                for ((o, gv), xv) in ga.iter_mut().zip(g.iter()).zip(xv.iter()) {
                    if *xv > 0.0 {
                        *o += gv;
                    }
                }
            }
        }
        Op::ConvDepthwise { x, w, bias, stride } => {
            let (t_in, ch) = (nodes[*x].value.rows(), nodes[*x].value.cols());
            let k = nodes[*w].value.rows();
            let t_out = nodes[i].value.rows();
            if need(nodes, *w) {
                let xv = nodes[*x].value.data().to_vec();
                let gw = acc_into(grads, nodes, *w);
                for m in 0..t_out {
                    let anchor = m * stride;
                    for j in 0..k {
                        let src = anchor as isize - (k as isize - 1) + j as isize;
                        if src < 0 || src as usize >= t_in {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..ch {
                            gw[j * ch + c] += g[m * ch + c] * xv[src * ch + c];
                        }
                    }
                }
            }
            if need(nodes, *x) {
                let wv = nodes[*w].value.data().to_vec();
                let gx = acc_into(grads, nodes, *x);
                for m in 0..t_out {
                    let anchor = m * stride;
                    for j in 0..k {
                        let src = anchor as isize - (k as isize - 1) + j as isize;
                        if src < 0 || src as usize >= t_in {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..ch {
                            gx[src * ch + c] += g[m * ch + c] * wv[j * ch + c];
                        }
                    }
                }
            }
            if let Some(b) = bias {
                if need(nodes, *b) {
                    let gb = acc_into(grads, nodes, *b);
                    for m in 0..t_out {
                        for c in 0..ch {
                            gb[c] += g[m * ch + c];
                        }
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            if need(nodes, *table) {
                let d = nodes[*table].value.cols();
                let gt = acc_into(grads, nodes, *table);
                for (t, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        gt[id * d + c] += g[t * d + c];
                    }
                }
            }
        }
        Op::SliceCols { x, start } => {
            if need(nodes, *x) {
                let (m, full) = (nodes[*x].value.rows(), nodes[*x].value.cols());
                let len = nodes[i].value.cols();
                let gx = acc_into(grads, nodes, *x);
                for r in 0..m {
                    for c in 0..len {
                        gx[r * full + start + c] += g[r * len + c];
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let m = nodes[i].value.rows();
            let total = nodes[i].value.cols();
            let mut offset = 0;
            for p in parts.clone() {
                let w = nodes[p].value.cols();
                if need(nodes, p) {
                    let gp = acc_into(grads, nodes, p);
                    for r in 0..m {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + offset + c];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::UpsampleRows { x, factor } => {
            if need(nodes, *x) {
                let (src_rows, d) = (nodes[*x].value.rows(), nodes[*x].value.cols());
                let t = nodes[i].value.rows();
                let gx = acc_into(grads, nodes, *x);
                for r in 0..t {
                    let m = (r / factor).min(src_rows - 1);
                    for c in 0..d {
                        gx[m * d + c] += g[r * d + c];
                    }
                }
            }
        }
        Op::FuseScores {
            scores,
            lambda,
            stride,
            causal,
        } => {
            let t = nodes[i].value.rows();
            let lam = nodes[*lambda].value.data().to_vec();
            let svals: Vec<Vec<f64>> = scores
                .iter()
                .map(|&s| nodes[s].value.data().to_vec())
                .collect();
            let sdims: Vec<usize> = scores.iter().map(|&s| nodes[s].value.rows()).collect();
            for (l, &sid) in scores.iter().enumerate() {
                let f = stride.pow(l as u32);
                let tl = sdims[l];
                let mut glam = 0.0;
                let need_s = need(nodes, sid);
                let need_l = need(nodes, *lambda);
                if !need_s && !need_l {
                    continue;
                }
                if need_s {
                    let gs = acc_into(grads, nodes, sid);
                    for ii in 0..t {
                        let mi = (ii / f).min(tl - 1);
                        let jmax = if *causal { ii + 1 } else { t };
                        for jj in 0..jmax {
                            let mj = (jj / f).min(tl - 1);
                            gs[mi * tl + mj] += lam[l] * g[ii * t + jj];
                            glam += g[ii * t + jj] * svals[l][mi * tl + mj];
                        }
                    }
                } else {
                    for ii in 0..t {
                        let mi = (ii / f).min(tl - 1);
                        let jmax = if *causal { ii + 1 } else { t };
                        for jj in 0..jmax {
                            let mj = (jj / f).min(tl - 1);
                            glam += g[ii * t + jj] * svals[l][mi * tl + mj];
                        }
                    }
                }
                if need_l {
                    let gl = acc_into(grads, nodes, *lambda);
                    gl[l] += glam;
                }
            }
        }
        Op::RowwiseWeightedSum { mats, weights } => {
            let (t, d) = (nodes[i].value.rows(), nodes[i].value.cols());
            let nl = mats.len();
            let wv = nodes[*weights].value.data().to_vec();
            let broadcast = nodes[*weights].value.rows() == 1;
            for (l, &mid) in mats.iter().enumerate() {
                if need(nodes, mid) {
                    let gm = acc_into(grads, nodes, mid);
                    for r in 0..t {
                        let w = if broadcast { wv[l] } else { wv[r * nl + l] };
                        for c in 0..d {
                            gm[r * d + c] += w * g[r * d + c];
                        }
                    }
                }
            }
            if need(nodes, *weights) {
                let mvals: Vec<Vec<f64>> = mats
                    .iter()
                    .map(|&m| nodes[m].value.data().to_vec())
                    .collect();
                let gw = acc_into(grads, nodes, *weights);
                for r in 0..t {
                    for (l, mv) in mvals.iter().enumerate() {
                        let mut dot = 0.0;
                        for c in 0..d {
                            dot += g[r * d + c] * mv[r * d + c];
                        }
                        if broadcast {
                            gw[l] += dot;
                        } else {
                            gw[r * nl + l] += dot;
                        }
                    }
                }
            }
        }
        Op::CrossEntropyLogits { logits, target } => {
            if need(nodes, *logits) {
                let z = nodes[*logits].value.data().to_vec();
                let gl = acc_into(grads, nodes, *logits);
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = z.iter().map(|v| (v - max).exp()).sum();
                for (c, zv) in z.iter().enumerate() {
                    let p = (zv - max).exp() / denom;
                    gl[c] += g[0] * (p - if c == *target { 1.0 } else { 0.0 });
                }
            }
        }
        Op::Dropout { x, mask } => {
            if need(nodes, *x) {
                let gx = acc_into(grads, nodes, *x);
                for ((o, gv), mv) in gx.iter_mut().zip(g.iter()).zip(mask.iter()) {
                    *o += gv * mv;
                }
            }
        }
    }
}

#[inline]
fn masked(mask: &Option<Rc<Vec<bool>>>, idx: usize) -> bool {
    mask.as_ref().map_or(false, |m| m[idx])
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    pub fn grad(&self) -> Option<Tensor> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    fn binary_shapes(&self, other: &Var<'t>) -> (Vec<usize>, Vec<usize>) {
        let inner = self.tape.inner.borrow();
        (
            inner.nodes[self.id].value.shape().to_vec(),
            inner.nodes[other.id].value.shape().to_vec(),
        )
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (sa, sb) = self.binary_shapes(other);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(HktError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        {
            let inner = self.tape.inner.borrow();
            matmul_into(
                inner.nodes[self.id].value.data(),
                inner.nodes[other.id].value.data(),
                &mut out,
                m,
                k,
                n,
            );
        }
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(
            Tensor::new(vec![m, n], out)?,
            rg,
            Op::Matmul(self.id, other.id),
        ))
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn transpose(&self) -> Var<'t> {
        let v = self.with_value(|t| t.transpose());
        self.tape.push(v, self.requires_grad(), Op::Transpose(self.id))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (sa, sb) = self.binary_shapes(other);
        if sa != sb {
            return Err(HktError::ShapeMismatch {
                op: "add",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[other.id].value;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::new(sa, data)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(v, rg, Op::Add(self.id, other.id)))
    }

    /// Matrix plus broadcast row vector.
    pub fn add_bias(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias);
        let (sa, sb) = self.binary_shapes(bias);
        let cols = *sa.last().unwrap();
        if sb.iter().product::<usize>() != cols {
            return Err(HktError::ShapeMismatch {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = inner.nodes[bias.id].value.data();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + b[i % cols])
                .collect();
            Tensor::new(sa, data)?
        };
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(v, rg, Op::AddBias(self.id, bias.id)))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (sa, sb) = self.binary_shapes(other);
        if sa != sb {
            return Err(HktError::ShapeMismatch {
                op: "mul",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[other.id].value;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Tensor::new(sa, data)?
        };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(v, rg, Op::Mul(self.id, other.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.with_value(|t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| c * x).collect()).unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::Scale(self.id, c))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let v = self.with_value(|t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| c + x).collect()).unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::AddScalar(self.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.add(&other.scale(-1.0))
    }

    pub fn sum_all(&self) -> Var<'t> {
        let v = self.with_value(|t| Tensor::scalar(t.data().iter().sum()));
        self.tape.push(v, self.requires_grad(), Op::SumAll(self.id))
    }

    /// Mean over rows (time axis): [m x n] -> [1 x n].
    pub fn mean_rows(&self) -> Var<'t> {
        let v = self.with_value(|t| {
            let (m, n) = (t.rows(), t.cols());
            let mut out = vec![0.0; n];
            for r in 0..m {
                for c in 0..n {
                    out[c] += t.at(r, c);
                }
            }
            for o in out.iter_mut() {
                *o /= m as f64;
            }
            Tensor::new(vec![1, n], out).unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::MeanRows(self.id))
    }

    /// Causal running mean: row t of the output is the mean of rows 0..=t.
    pub fn prefix_mean_rows(&self) -> Var<'t> {
        let v = self.with_value(|t| {
            let (m, n) = (t.rows(), t.cols());
            let mut out = vec![0.0; m * n];
            let mut acc = vec![0.0; n];
            for r in 0..m {
                for c in 0..n {
                    acc[c] += t.at(r, c);
                    out[r * n + c] = acc[c] / (r + 1) as f64;
                }
            }
            Tensor::new(vec![m, n], out).unwrap()
        });
        self.tape
            .push(v, self.requires_grad(), Op::PrefixMeanRows(self.id))
    }

    /// Row-wise softmax with optional boolean mask (true = excluded).
    /// Masked entries are exactly zero in the output; each row must keep
    /// at least one unmasked entry.
    pub fn softmax_rows(&self, mask: Option<Rc<Vec<bool>>>) -> Result<Var<'t>> {
        let v = {
            let inner = self.tape.inner.borrow();
            let t = &inner.nodes[self.id].value;
            let (m, n) = (t.rows(), t.cols());
            if let Some(mk) = &mask {
                if mk.len() != m * n {
                    return Err(HktError::Dimension(format!(
                        "mask length {} vs tensor {}x{}",
                        mk.len(),
                        m,
                        n
                    )));
                }
            }
            let mut out = vec![0.0; m * n];
            for r in 0..m {
                let base = r * n;
                let mut max = f64::NEG_INFINITY;
                for c in 0..n {
                    if !masked(&mask, base + c) {
                        max = max.max(t.data()[base + c]);
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(HktError::DegenerateRow { row: r });
                }
                let mut denom = 0.0;
                for c in 0..n {
                    if !masked(&mask, base + c) {
                        let e = (t.data()[base + c] - max).exp();
                        out[base + c] = e;
                        denom += e;
                    }
                }
                for c in 0..n {
                    if !masked(&mask, base + c) {
                        out[base + c] /= denom;
                    }
                }
            }
            Tensor::new(vec![m, n], out)?
        };
        Ok(self.tape.push(
            v,
            self.requires_grad(),
            Op::SoftmaxRows {
                x: self.id,
                mask,
            },
        ))
    }

    /// Per-row layer normalisation with affine gain and bias.
    pub fn layernorm(&self, gain: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(gain);
        self.same_tape(bias);
        let (v, cache) = {
            let inner = self.tape.inner.borrow();
            let t = &inner.nodes[self.id].value;
            let (m, n) = (t.rows(), t.cols());
            let gv = inner.nodes[gain.id].value.data();
            let bv = inner.nodes[bias.id].value.data();
            if gv.len() != n || bv.len() != n {
                return Err(HktError::ShapeMismatch {
                    op: "layernorm",
                    lhs: t.shape().to_vec(),
                    rhs: inner.nodes[gain.id].value.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            let mut xhat = vec![0.0; m * n];
            let mut inv_std = vec![0.0; m];
            for r in 0..m {
                let base = r * n;
                let row = &t.data()[base..base + n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
                inv_std[r] = is;
                for c in 0..n {
                    let xh = (row[c] - mean) * is;
                    xhat[base + c] = xh;
                    out[base + c] = gv[c] * xh + bv[c];
                }
            }
            (Tensor::new(vec![m, n], out)?, Rc::new((xhat, inv_std)))
        };
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            v,
            rg,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                cache,
            },
        ))
    }

    pub fn gelu(&self) -> Var<'t> {
        let v = self.with_value(|t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|&x| gelu_scalar(x)).collect(),
            )
            .unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::Gelu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.with_value(|t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|&x| sigmoid_scalar(x)).collect(),
            )
            .unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::Sigmoid(self.id))
    }

    /// Natural log, elementwise; caller guarantees positive inputs.
    pub fn ln(&self) -> Var<'t> {
        let v = self.with_value(|t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|&x| x.ln()).collect(),
            )
            .unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::Ln(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.with_value(|t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().map(|&x| x.max(0.0)).collect(),
            )
            .unwrap()
        });
        self.tape.push(v, self.requires_grad(), Op::Relu(self.id))
    }

    /// Causal depthwise convolution. Input [T x C], kernel [k x C];
    /// left-padded with k-1 zeros so output index m sees inputs <= m*stride.
    /// Output length floor(T / stride).
    pub fn conv1d_causal_depthwise(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: usize,
    ) -> Result<Var<'t>> {
        self.same_tape(weight);
        if stride < 1 {
            return Err(HktError::Config("conv stride must be >= 1".into()));
        }
        let (v, k) = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            let w = &inner.nodes[weight.id].value;
            let (t_in, ch) = (x.rows(), x.cols());
            let k = w.rows();
            if k < 1 {
                return Err(HktError::Config("conv kernel must be >= 1".into()));
            }
            if w.cols() != ch {
                return Err(HktError::ShapeMismatch {
                    op: "conv1d_causal_depthwise",
                    lhs: x.shape().to_vec(),
                    rhs: w.shape().to_vec(),
                });
            }
            let bv = match bias {
                Some(b) => {
                    let bt = &inner.nodes[b.id].value;
                    if bt.len() != ch {
                        return Err(HktError::ShapeMismatch {
                            op: "conv bias",
                            lhs: x.shape().to_vec(),
                            rhs: bt.shape().to_vec(),
                        });
                    }
                    Some(bt.data().to_vec())
                }
                None => None,
            };
            let t_out = t_in / stride;
            let mut out = vec![0.0; t_out * ch];
            for m in 0..t_out {
                let anchor = m * stride;
                for j in 0..k {
                    let src = anchor as isize - (k as isize - 1) + j as isize;
                    if src < 0 || src as usize >= t_in {
                        continue;
                    }
                    let src = src as usize;
                    for c in 0..ch {
                        out[m * ch + c] += w.at(j, c) * x.at(src, c);
                    }
                }
                if let Some(bv) = &bv {
                    for c in 0..ch {
                        out[m * ch + c] += bv[c];
                    }
                }
            }
            (Tensor::new(vec![t_out, ch], out)?, k)
        };
        let _ = k;
        let rg = self.requires_grad()
            || weight.requires_grad()
            || bias.map_or(false, |b| b.requires_grad());
        Ok(self.tape.push(
            v,
            rg,
            Op::ConvDepthwise {
                x: self.id,
                w: weight.id,
                bias: bias.map(|b| b.id),
                stride,
            },
        ))
    }

    /// Embedding lookup: `self` is the [V x d] table.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Var<'t>> {
        let v = {
            let inner = self.tape.inner.borrow();
            let table = &inner.nodes[self.id].value;
            let (vocab, d) = (table.rows(), table.cols());
            let mut out = vec![0.0; ids.len() * d];
            for (t, &id) in ids.iter().enumerate() {
                if id >= vocab {
                    return Err(HktError::OutOfVocab { id, vocab });
                }
                out[t * d..(t + 1) * d].copy_from_slice(table.row(id));
            }
            Tensor::new(vec![ids.len(), d], out)?
        };
        Ok(self.tape.push(
            v,
            self.requires_grad(),
            Op::Embedding {
                table: self.id,
                ids: Rc::new(ids.to_vec()),
            },
        ))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Var<'t> {
        let v = self.with_value(|t| {
            let m = t.rows();
            let mut out = vec![0.0; m * len];
            for r in 0..m {
                out[r * len..(r + 1) * len].copy_from_slice(&t.row(r)[start..start + len]);
            }
            Tensor::new(vec![m, len], out).unwrap()
        });
        self.tape
            .push(v, self.requires_grad(), Op::SliceCols { x: self.id, start })
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let tape = parts[0].tape;
        let v = {
            let inner = tape.inner.borrow();
            let m = inner.nodes[parts[0].id].value.rows();
            let total: usize = parts.iter().map(|p| inner.nodes[p.id].value.cols()).sum();
            let mut out = vec![0.0; m * total];
            let mut offset = 0;
            for p in parts {
                let t = &inner.nodes[p.id].value;
                let w = t.cols();
                for r in 0..m {
                    out[r * total + offset..r * total + offset + w].copy_from_slice(t.row(r));
                }
                offset += w;
            }
            Tensor::new(vec![m, total], out).unwrap()
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        tape.push(v, rg, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// Block-nearest upsampling by floor index: output row i copies input
    /// row min(i/factor, rows-1).
    pub fn upsample_rows(&self, factor: usize, out_rows: usize) -> Var<'t> {
        let v = self.with_value(|t| {
            let (m, d) = (t.rows(), t.cols());
            let mut out = vec![0.0; out_rows * d];
            for r in 0..out_rows {
                let src = (r / factor).min(m - 1);
                out[r * d..(r + 1) * d].copy_from_slice(t.row(src));
            }
            Tensor::new(vec![out_rows, d], out).unwrap()
        });
        self.tape.push(
            v,
            self.requires_grad(),
            Op::UpsampleRows {
                x: self.id,
                factor,
            },
        )
    }

    /// Convex fusion of per-level score matrices, block-upsampled by floor
    /// index. Causally masked entries (strict upper triangle) are left at
    /// zero; the consumer's softmax mask excludes them.
    pub fn fuse_scores(
        scores: &[Var<'t>],
        lambda: &Var<'t>,
        stride: usize,
        out_len: usize,
        causal: bool,
    ) -> Result<Var<'t>> {
        let tape = scores[0].tape;
        let v = {
            let inner = tape.inner.borrow();
            let lam = inner.nodes[lambda.id].value.data();
            if lam.len() != scores.len() {
                return Err(HktError::Dimension(format!(
                    "lambda length {} vs {} levels",
                    lam.len(),
                    scores.len()
                )));
            }
            let t = out_len;
            let mut out = vec![0.0; t * t];
            for (l, s) in scores.iter().enumerate() {
                let sv = &inner.nodes[s.id].value;
                let tl = sv.rows();
                let f = stride.pow(l as u32);
                for i in 0..t {
                    let mi = (i / f).min(tl - 1);
                    let jmax = if causal { i + 1 } else { t };
                    for j in 0..jmax {
                        let mj = (j / f).min(tl - 1);
                        out[i * t + j] += lam[l] * sv.at(mi, mj);
                    }
                }
            }
            Tensor::new(vec![t, t], out)?
        };
        let rg = scores.iter().any(|s| s.requires_grad()) || lambda.requires_grad();
        Ok(tape.push(
            v,
            rg,
            Op::FuseScores {
                scores: scores.iter().map(|s| s.id).collect(),
                lambda: lambda.id,
                stride,
                causal,
            },
        ))
    }

    /// out[t] = sum_l weights[t][l] * mats[l][t]; weights may be [1 x L]
    /// (broadcast over rows) or [T x L].
    pub fn rowwise_weighted_sum(mats: &[Var<'t>], weights: &Var<'t>) -> Result<Var<'t>> {
        let tape = mats[0].tape;
        let v = {
            let inner = tape.inner.borrow();
            let (t, d) = (
                inner.nodes[mats[0].id].value.rows(),
                inner.nodes[mats[0].id].value.cols(),
            );
            let wv = &inner.nodes[weights.id].value;
            let nl = mats.len();
            if wv.cols() != nl || (wv.rows() != 1 && wv.rows() != t) {
                return Err(HktError::Dimension(format!(
                    "weights shape {:?} vs {} mats of {} rows",
                    wv.shape(),
                    nl,
                    t
                )));
            }
            let broadcast = wv.rows() == 1;
            let mut out = vec![0.0; t * d];
            for (l, m) in mats.iter().enumerate() {
                let mv = &inner.nodes[m.id].value;
                for r in 0..t {
                    let w = if broadcast { wv.at(0, l) } else { wv.at(r, l) };
                    for c in 0..d {
                        out[r * d + c] += w * mv.at(r, c);
                    }
                }
            }
            Tensor::new(vec![t, d], out)?
        };
        let rg = mats.iter().any(|m| m.requires_grad()) || weights.requires_grad();
        Ok(tape.push(
            v,
            rg,
            Op::RowwiseWeightedSum {
                mats: mats.iter().map(|m| m.id).collect(),
                weights: weights.id,
            },
        ))
    }

    /// Cross-entropy of a single logit vector against an integer class.
    pub fn cross_entropy_logits(&self, target: usize) -> Result<Var<'t>> {
        let v = {
            let inner = self.tape.inner.borrow();
            let z = inner.nodes[self.id].value.data();
            if target >= z.len() {
                return Err(HktError::Dimension(format!(
                    "target class {} vs {} logits",
                    target,
                    z.len()
                )));
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            Tensor::scalar(lse - z[target])
        };
        Ok(self.tape.push(
            v,
            self.requires_grad(),
            Op::CrossEntropyLogits {
                logits: self.id,
                target,
            },
        ))
    }

    /// Training-mode dropout; a no-op when p == 0.
    pub fn dropout(&self, p: f64, prng: &mut Prng) -> Var<'t> {
        if p <= 0.0 {
            return *self;
        }
        let keep = 1.0 - p;
        let mask: Rc<Vec<f64>> = {
            let inner = self.tape.inner.borrow();
            let n = inner.nodes[self.id].value.len();
            Rc::new(
                (0..n)
                    .map(|_| if prng.next_f64() < keep { 1.0 / keep } else { 0.0 })
                    .collect(),
            )
        };
        let v = self.with_value(|t| {
            Tensor::new(
                t.shape().to_vec(),
                t.data().iter().zip(mask.iter()).map(|(x, m)| x * m).collect(),
            )
            .unwrap()
        });
        self.tape.push(
            v,
            self.requires_grad(),
            Op::Dropout {
                x: self.id,
                mask,
            },
        )
    }
}
