use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, ConvGeom, GroupNormStats};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::wavelet;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScalePerSample(usize, Vec<f64>),
    Silu(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
        batch: usize,
        fin: usize,
        fout: usize,
    },
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        stats: GroupNormStats,
    },
    Dropout(usize, Vec<f64>),
    Down2x(usize),
    Up2x(usize),
    Concat(usize, usize),
    AddChannelBias(usize, usize),
    Dwt2d(usize),
    Idwt2d(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records every op executed through a [`Var`] so that [`Tape::backward`]
/// can replay them in exact reverse order.
///
/// Leaves created with [`Tape::param`] accumulate gradients across backward
/// calls until [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a constant (no gradient).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf whose gradient is kept after `backward`.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.nodes.borrow()[var.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Back-propagates from a scalar `loss`, adding `d loss / d leaf` into the
    /// gradient of every trainable leaf recorded before it.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let leaf_grads = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.numel() != 1 {
                return Err(Error::Backward(format!(
                    "loss must be a scalar, got shape {:?}",
                    root.value.shape()
                )));
            }
            if !root.requires_grad {
                return Err(Error::Backward(
                    "loss does not depend on any trainable leaf (detached graph)".into(),
                ));
            }
            let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
            grads[loss.id] = Some(vec![1.0]);
            let mut leaf_grads = Vec::new();
            for id in (0..=loss.id).rev() {
                let Some(g) = grads[id].take() else { continue };
                backprop_node(&nodes, id, g, &mut grads, &mut leaf_grads);
            }
            leaf_grads
        };

        let mut nodes = self.nodes.borrow_mut();
        let mut reached = vec![None; loss.id + 1];
        for (id, g) in leaf_grads {
            reached[id] = Some(g);
        }
        for (id, node) in nodes.iter_mut().enumerate().take(loss.id + 1) {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let shape = node.value.shape().to_vec();
            let contribution = reached[id].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
            match node.grad.as_mut() {
                Some(acc) => {
                    for (a, c) in acc.data_mut().iter_mut().zip(&contribution) {
                        *a += c;
                    }
                }
                None => node.grad = Some(Tensor::new(&shape, contribution)?),
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match grads[id].as_mut() {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        None => grads[id] = Some(g),
    }
}

fn backprop_node(
    nodes: &[Node],
    id: usize,
    g: Vec<f64>,
    grads: &mut [Option<Vec<f64>>],
    leaf_grads: &mut Vec<(usize, Vec<f64>)>,
) {
    let val = |i: usize| nodes[i].value.data();
    let needs = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => leaf_grads.push((id, g)),
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, g.clone());
            }
            accumulate(nodes, grads, *b, g);
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(nodes, grads, *a, g.clone());
            }
            accumulate(nodes, grads, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if needs(*a) {
                let ga = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                accumulate(nodes, grads, *a, ga);
            }
            if needs(*b) {
                let gb = g.iter().zip(av).map(|(g, a)| g * a).collect();
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.iter().map(|v| v * s).collect()),
        Op::ScalePerSample(a, coeffs) => {
            let per = g.len() / coeffs.len();
            let ga = g.iter().enumerate().map(|(i, v)| v * coeffs[i / per]).collect();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Silu(a) => {
            let ga = g
                .iter()
                .zip(val(*a))
                .map(|(g, &x)| {
                    let s = kernels::sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                })
                .collect();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Abs(a) => {
            let ga = g
                .iter()
                .zip(val(*a))
                .map(|(g, &x)| {
                    if x > 0.0 {
                        *g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(nodes, grads, *a, ga);
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, vec![g[0]; val(*a).len()]),
        Op::Mean(a) => {
            let n = val(*a).len();
            accumulate(nodes, grads, *a, vec![g[0] / n as f64; n]);
        }
        Op::Conv2d { x, w, b, geom } => {
            let r = kernels::conv2d_backward(val(*x), val(*w), &g, geom, [needs(*x), needs(*w), needs(*b)]);
            if let Some(dx) = r.dx {
                accumulate(nodes, grads, *x, dx);
            }
            if let Some(dw) = r.dw {
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(db) = r.db {
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Linear {
            x,
            w,
            b,
            batch,
            fin,
            fout,
        } => {
            let (xv, wv) = (val(*x), val(*w));
            if needs(*x) {
                let mut dx = vec![0.0; batch * fin];
                for bi in 0..*batch {
                    for o in 0..*fout {
                        let gv = g[bi * fout + o];
                        for f in 0..*fin {
                            dx[bi * fin + f] += gv * wv[o * fin + f];
                        }
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
            if needs(*w) {
                let mut dw = vec![0.0; fout * fin];
                for bi in 0..*batch {
                    for o in 0..*fout {
                        let gv = g[bi * fout + o];
                        for f in 0..*fin {
                            dw[o * fin + f] += gv * xv[bi * fin + f];
                        }
                    }
                }
                accumulate(nodes, grads, *w, dw);
            }
            if needs(*b) {
                let mut db = vec![0.0; *fout];
                for bi in 0..*batch {
                    for o in 0..*fout {
                        db[o] += g[bi * fout + o];
                    }
                }
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::GroupNorm {
            x,
            gamma,
            beta,
            groups,
            stats,
        } => {
            let dims = nodes[*x].value.dims4("group_norm").expect("checked in forward");
            let (dx, dg, db) = kernels::group_norm_backward(val(*x), val(*gamma), &g, stats, dims, *groups);
            accumulate(nodes, grads, *x, dx);
            accumulate(nodes, grads, *gamma, dg);
            accumulate(nodes, grads, *beta, db);
        }
        Op::Dropout(a, mask) => {
            accumulate(nodes, grads, *a, g.iter().zip(mask).map(|(g, m)| g * m).collect());
        }
        Op::Down2x(a) => {
            let [b, c, h, w] = nodes[*a].value.dims4("down2x").expect("checked in forward");
            let up = kernels::up2x(&g, b * c, h / 2, w / 2);
            accumulate(nodes, grads, *a, up.into_iter().map(|v| v * 0.25).collect());
        }
        Op::Up2x(a) => {
            let [b, c, h, w] = nodes[*a].value.dims4("up2x").expect("checked in forward");
            accumulate(nodes, grads, *a, kernels::sum_pool2x(&g, b * c, 2 * h, 2 * w));
        }
        Op::Concat(a, b) => {
            let [batch, ca, h, w] = nodes[*a].value.dims4("concat").expect("checked in forward");
            let cb = nodes[*b].value.shape()[1];
            let hw = h * w;
            let (mut ga, mut gb) = (Vec::with_capacity(batch * ca * hw), Vec::with_capacity(batch * cb * hw));
            for bi in 0..batch {
                let base = bi * (ca + cb) * hw;
                ga.extend_from_slice(&g[base..base + ca * hw]);
                gb.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
            }
            if needs(*a) {
                accumulate(nodes, grads, *a, ga);
            }
            accumulate(nodes, grads, *b, gb);
        }
        Op::AddChannelBias(a, bias) => {
            let [batch, c, h, w] = nodes[*a].value.dims4("add_channel_bias").expect("checked in forward");
            let hw = h * w;
            if needs(*bias) {
                let gb = (0..batch * c).map(|i| g[i * hw..(i + 1) * hw].iter().sum()).collect();
                accumulate(nodes, grads, *bias, gb);
            }
            accumulate(nodes, grads, *a, g);
        }
        // Orthonormal Haar: each transform's adjoint is the other one.
        Op::Dwt2d(a) => {
            let [b, c, h, w] = nodes[*a].value.dims4("dwt2d").expect("checked in forward");
            accumulate(nodes, grads, *a, wavelet::haar_synthesis(&g, [b, 4 * c, h / 2, w / 2]));
        }
        Op::Idwt2d(a) => {
            let dims = nodes[*a].value.dims4("idwt2d").expect("checked in forward");
            accumulate(
                nodes,
                grads,
                *a,
                wavelet::haar_analysis(&g, [dims[0], dims[1] / 4, dims[2] * 2, dims[3] * 2]),
            );
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(&[self.id])
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = self.tape.requires(inputs);
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (a, b) = (self.value(), other.value());
        a.expect_same_shape(&b, name)?;
        a.zip_map(&b, f)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.binary(other, "add", |a, b| a + b)?;
        Ok(self.record(out, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.binary(other, "sub", |a, b| a - b)?;
        Ok(self.record(out, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.binary(other, "mul", |a, b| a * b)?;
        Ok(self.record(out, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        let out = self.value().scale(s);
        self.record(out, Op::Scale(self.id, s), &[self.id])
    }

    /// Multiplies batch element `i` (leading axis) by `coeffs[i]`.
    pub fn scale_per_sample(&self, coeffs: &[f64]) -> Result<Var<'t>> {
        let v = self.value();
        if v.shape()[0] != coeffs.len() {
            return Err(Error::ShapeMismatch {
                op: "scale_per_sample",
                dim: "batch",
                expected: v.shape()[0],
                got: coeffs.len(),
            });
        }
        let per = v.numel() / coeffs.len();
        let data = v.data().iter().enumerate().map(|(i, x)| x * coeffs[i / per]).collect();
        let out = Tensor::new(v.shape(), data)?;
        Ok(self.record(out, Op::ScalePerSample(self.id, coeffs.to_vec()), &[self.id]))
    }

    pub fn silu(&self) -> Var<'t> {
        let out = self.value().map(|x| x * kernels::sigmoid(x));
        self.record(out, Op::Silu(self.id), &[self.id])
    }

    pub fn abs(&self) -> Var<'t> {
        let out = self.value().map(f64::abs);
        self.record(out, Op::Abs(self.id), &[self.id])
    }

    pub fn sum(&self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.record(out, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.value();
        let out = Tensor::scalar(v.sum() / v.numel() as f64);
        self.record(out, Op::Mean(self.id), &[self.id])
    }

    /// Same-size or valid cross-correlation; `weight` is `[cout, cin, k, k]`, `bias` is `[cout]`.
    pub fn conv2d(&self, weight: Var<'t>, bias: Var<'t>, padding: usize) -> Result<Var<'t>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let [batch, cin, h, wd] = x.dims4("conv2d")?;
        let [cout, wcin, kh, kw] = w.dims4("conv2d")?;
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "input channels",
                expected: wcin,
                got: cin,
            });
        }
        if kh != kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "kernel width",
                expected: kh,
                got: kw,
            });
        }
        if kh % 2 == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("kernel size {kh} must be odd"),
            });
        }
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                dim: "bias length",
                expected: cout,
                got: b.numel(),
            });
        }
        if h + 2 * padding < kh || wd + 2 * padding < kh {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("{h}x{wd} input with padding {padding} is smaller than kernel {kh}"),
            });
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            pad: padding,
            ho: h + 2 * padding - kh + 1,
            wo: wd + 2 * padding - kh + 1,
        };
        let data = kernels::conv2d_forward(x.data(), w.data(), b.data(), &geom);
        let out = Tensor::new(&[batch, cout, geom.ho, geom.wo], data)?;
        Ok(self.record(
            out,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                geom,
            },
            &[self.id, weight.id, bias.id],
        ))
    }

    /// `input [B, F] · weightᵀ [F, G] + bias [G]`.
    pub fn linear(&self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let (batch, fin) = match x.shape() {
            &[batch, fin] => (batch, fin),
            s => {
                return Err(Error::InvalidShape {
                    op: "linear",
                    msg: format!("input must be [batch, features], got {s:?}"),
                })
            }
        };
        let (fout, wfin) = match w.shape() {
            &[o, i] => (o, i),
            s => {
                return Err(Error::InvalidShape {
                    op: "linear",
                    msg: format!("weight must be 2-D, got {s:?}"),
                })
            }
        };
        if wfin != fin {
            return Err(Error::ShapeMismatch {
                op: "linear",
                dim: "input features",
                expected: wfin,
                got: fin,
            });
        }
        if b.shape() != [fout] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                dim: "bias length",
                expected: fout,
                got: b.numel(),
            });
        }
        let data = kernels::linear_forward(x.data(), w.data(), b.data(), batch, fin, fout);
        let out = Tensor::new(&[batch, fout], data)?;
        Ok(self.record(
            out,
            Op::Linear {
                x: self.id,
                w: weight.id,
                b: bias.id,
                batch,
                fin,
                fout,
            },
            &[self.id, weight.id, bias.id],
        ))
    }

    pub fn group_norm(&self, gamma: Var<'t>, beta: Var<'t>, groups: usize) -> Result<Var<'t>> {
        let (x, ga, be) = (self.value(), gamma.value(), beta.value());
        let dims = x.dims4("group_norm")?;
        let c = dims[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::InvalidShape {
                op: "group_norm",
                msg: format!("{c} channels not divisible into {groups} groups"),
            });
        }
        for (t, name) in [(&ga, "gamma length"), (&be, "beta length")] {
            if t.shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: "group_norm",
                    dim: name,
                    expected: c,
                    got: t.numel(),
                });
            }
        }
        let (data, stats) = kernels::group_norm_forward(x.data(), ga.data(), be.data(), dims, groups);
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(
            out,
            Op::GroupNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                groups,
                stats,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. The mask is drawn from `rng` in row-major order.
    pub fn dropout(&self, p: f64, rng: &mut Rng) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, Op::Dropout(self.id, mask), &[self.id]))
    }

    /// 2x2 mean pooling.
    pub fn down2x(&self) -> Result<Var<'t>> {
        let x = self.value();
        let [b, c, h, w] = x.dims4("down2x")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "down2x",
                msg: format!("spatial size {h}x{w} must be even"),
            });
        }
        let out = Tensor::new(&[b, c, h / 2, w / 2], kernels::down2x(x.data(), b * c, h, w))?;
        Ok(self.record(out, Op::Down2x(self.id), &[self.id]))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn up2x(&self) -> Result<Var<'t>> {
        let x = self.value();
        let [b, c, h, w] = x.dims4("up2x")?;
        let out = Tensor::new(&[b, c, 2 * h, 2 * w], kernels::up2x(x.data(), b * c, h, w))?;
        Ok(self.record(out, Op::Up2x(self.id), &[self.id]))
    }

    /// Channel-wise concatenation `[self, other]`.
    pub fn concat_channels(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let [ba, ca, ha, wa] = a.dims4("concat")?;
        let [bb, cb, hb, wb] = b.dims4("concat")?;
        for (dim, e, g) in [("batch", ba, bb), ("height", ha, hb), ("width", wa, wb)] {
            if e != g {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    dim,
                    expected: e,
                    got: g,
                });
            }
        }
        let hw = ha * wa;
        let mut data = Vec::with_capacity(ba * (ca + cb) * hw);
        for bi in 0..ba {
            data.extend_from_slice(&a.data()[bi * ca * hw..(bi + 1) * ca * hw]);
            data.extend_from_slice(&b.data()[bi * cb * hw..(bi + 1) * cb * hw]);
        }
        let out = Tensor::new(&[ba, ca + cb, ha, wa], data)?;
        Ok(self.record(out, Op::Concat(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds `bias[b, c]` to every pixel of channel `c` in batch element `b`.
    pub fn add_channel_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, bv) = (self.value(), bias.value());
        let [b, c, h, w] = x.dims4("add_channel_bias")?;
        if bv.shape() != [b, c] {
            return Err(Error::InvalidShape {
                op: "add_channel_bias",
                msg: format!("bias shape {:?} should be [{b}, {c}]", bv.shape()),
            });
        }
        let hw = h * w;
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv.data()[i / hw])
            .collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.record(out, Op::AddChannelBias(self.id, bias.id), &[self.id, bias.id]))
    }

    /// Haar analysis, `[B, C, h, w] -> [B, 4C, h/2, w/2]`; see [`crate::wavelet::dwt2d`].
    pub fn dwt2d(&self) -> Result<Var<'t>> {
        let out = wavelet::dwt2d(&self.value())?;
        Ok(self.record(out, Op::Dwt2d(self.id), &[self.id]))
    }

    /// Haar synthesis, `[B, 4C, h/2, w/2] -> [B, C, h, w]`.
    pub fn idwt2d(&self) -> Result<Var<'t>> {
        let out = wavelet::idwt2d(&self.value())?;
        Ok(self.record(out, Op::Idwt2d(self.id), &[self.id]))
    }
}
