use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{col2im, gemm, im2col, sigmoid, ConvGeom, MatRef};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`]'s tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        out_channels: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        // geometry of the equivalent forward convolution over the output
        geom: ConvGeom,
        in_channels: usize,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Define-by-run tape. Every primitive evaluates immediately and records
/// its inputs so that [`Graph::backward`] can apply the adjoint rules in
/// reverse order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like it if the loss did not depend on it.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Shared-storage leaf that receives a gradient; avoids copying large
    /// weight tensors onto every fresh tape.
    pub fn param_shared(&mut self, t: &Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Shared-storage leaf that is treated as a constant.
    pub fn constant_shared(&mut self, t: &Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value: Arc::clone(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        let ng = self.ng(&[a]);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        let ng = self.ng(&[a]);
        self.push(v, Op::AddScalar(a), ng)
    }

    /// `x + b` where `b` is broadcast along every leading axis of `x`
    /// (`b.len()` must equal the trailing extent of `x`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(Error::shape("add_bias", xs, bs));
        }
        let f = bs[0];
        let mut v = self.value(x).clone();
        let bias = self.value(b).data();
        for row in v.data_mut().chunks_mut(f) {
            for (o, bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let ng = self.ng(&[x, b]);
        Ok(self.push(v, Op::AddBias(x, b), ng))
    }

    /// `[m, k] · [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            &mut out,
            0.0,
        );
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_vec(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    /// 2-D convolution. `x: [N, Cin, H, W]`, `w: [Cout, Cin, K, K]`,
    /// `b: [Cout]`; output `[N, Cout, Ho, Wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[1] != sx[1] || sw[2] != sw[3] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if sb != [sw[0]] {
            return Err(Error::shape("conv2d bias", sw, sb));
        }
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let cout = sw[0];
        let geom = ConvGeom::new(cin, h, wd, sw[2], stride, pad)
            .ok_or_else(|| Error::shape("conv2d geometry", sx, sw))?;
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut buf = vec![0.0; rows * cols];
        let mut out = vec![0.0; n * cout * cols];
        let xd = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), cout, rows);
        let bias = self.value(b).data();
        for i in 0..n {
            im2col(&xd[i * geom.image_len()..(i + 1) * geom.image_len()], &geom, &mut buf);
            let o = &mut out[i * cout * cols..(i + 1) * cout * cols];
            for (c, &bv) in bias.iter().enumerate() {
                o[c * cols..(c + 1) * cols].fill(bv);
            }
            gemm(wm, MatRef::new(&buf, rows, cols), o, 1.0);
        }
        let value = Tensor::from_vec(vec![n, cout, geom.out_h, geom.out_w], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels: cout,
            },
            ng,
        ))
    }

    /// Transposed 2-D convolution (the adjoint of [`Graph::conv2d`] in its
    /// input). `x: [N, Cin, H, W]`, `w: [Cin, Cout, K, K]`, `b: [Cout]`;
    /// output `[N, Cout, (H-1)·s - 2p + K, (W-1)·s - 2p + K]`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 4 || sw.len() != 4 || sw[0] != sx[1] || sw[2] != sw[3] || stride == 0 {
            return Err(Error::shape("conv2d_transpose", sx, sw));
        }
        if sb != [sw[1]] {
            return Err(Error::shape("conv2d_transpose bias", sw, sb));
        }
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, k) = (sw[1], sw[2]);
        let oh = ((h - 1) * stride + k).checked_sub(2 * pad);
        let ow = ((wd - 1) * stride + k).checked_sub(2 * pad);
        let geom = match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => ConvGeom::new(cout, oh, ow, k, stride, pad),
            _ => None,
        }
        .filter(|g| g.out_h == h && g.out_w == wd)
        .ok_or_else(|| Error::shape("conv2d_transpose geometry", sx, sw))?;
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let mut buf = vec![0.0; rows * cols];
        let img = geom.image_len();
        let mut out = vec![0.0; n * img];
        let xd = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), cin, rows);
        let bias = self.value(b).data();
        let plane = geom.height * geom.width;
        for i in 0..n {
            let xi = MatRef::new(&xd[i * cin * cols..(i + 1) * cin * cols], cin, cols);
            gemm(wm.t(), xi, &mut buf, 0.0);
            let o = &mut out[i * img..(i + 1) * img];
            for (c, &bv) in bias.iter().enumerate() {
                o[c * plane..(c + 1) * plane].fill(bv);
            }
            col2im(&buf, &geom, o);
        }
        let value = Tensor::from_vec(vec![n, cout, geom.height, geom.width], out)?;
        let ng = self.ng(&[x, w, b]);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                in_channels: cin,
            },
            ng,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).map(f);
        let ng = self.ng(&[a]);
        self.push(v, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean of all entries, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let (outer, ax, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ax + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let ng = self.ng(&[x]);
        Ok(self.push(
            Tensor::from_vec(new_shape, out)?,
            Op::Slice { x, axis, start },
            ng,
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(Error::Contract("concat of zero tensors".into())),
        };
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let ax = t.shape()[axis];
                out.extend_from_slice(&t.data()[o * ax * inner..(o + 1) * ax * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = self.ng(xs);
        Ok(self.push(
            Tensor::from_vec(shape, out)?,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(v, Op::Reshape(x), ng))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.adjoint(idx, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn adjoint(&self, idx: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.map(|g| -g));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, gout.zip_map(self.value(*b), |g, y| g * y));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, gout.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, gout.map(|g| g * k));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, gout.clone()),
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, gout.clone());
                if self.wants(*b) {
                    let f = self.shape(*b)[0];
                    let mut gb = Tensor::zeros(&[f]);
                    for row in gout.data().chunks(f) {
                        for (acc, g) in gb.data_mut().iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let go = MatRef::new(gout.data(), m, n);
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(go, MatRef::new(self.value(*b).data(), k, n).t(), &mut ga, 0.0);
                    self.accumulate(grads, *a, Tensor::from_vec(vec![m, k], ga)?);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(MatRef::new(self.value(*a).data(), m, k).t(), go, &mut gb, 0.0);
                    self.accumulate(grads, *b, Tensor::from_vec(vec![k, n], gb)?);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                out_channels,
            } => {
                let n = self.shape(*x)[0];
                let cout = *out_channels;
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let img = geom.image_len();
                let xd = self.value(*x).data();
                let wm = MatRef::new(self.value(*w).data(), cout, rows);
                let mut buf = vec![0.0; rows * cols];
                let mut gw = vec![0.0; cout * rows];
                let mut gx = self.wants(*x).then(|| vec![0.0; n * img]);
                let want_w = self.wants(*w);
                for i in 0..n {
                    let go = MatRef::new(&gout.data()[i * cout * cols..(i + 1) * cout * cols], cout, cols);
                    if want_w {
                        im2col(&xd[i * img..(i + 1) * img], geom, &mut buf);
                        gemm(go, MatRef::new(&buf, rows, cols).t(), &mut gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(wm.t(), go, &mut buf, 0.0);
                        col2im(&buf, geom, &mut gx[i * img..(i + 1) * img]);
                    }
                }
                if want_w {
                    self.accumulate(grads, *w, Tensor::from_vec(self.shape(*w).to_vec(), gw)?);
                }
                if self.wants(*b) {
                    let gb = channel_sums(gout.data(), n, cout, cols);
                    self.accumulate(grads, *b, Tensor::from_vec(vec![cout], gb)?);
                }
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, Tensor::from_vec(self.shape(*x).to_vec(), gx)?);
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                geom,
                in_channels,
            } => {
                let n = self.shape(*x)[0];
                let cin = *in_channels;
                let cout = geom.channels;
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let img = geom.image_len();
                let xd = self.value(*x).data();
                let wm = MatRef::new(self.value(*w).data(), cin, rows);
                let mut buf = vec![0.0; rows * cols];
                let mut gw = vec![0.0; cin * rows];
                let mut gx = self.wants(*x).then(|| vec![0.0; n * cin * cols]);
                let want_w = self.wants(*w);
                for i in 0..n {
                    im2col(&gout.data()[i * img..(i + 1) * img], geom, &mut buf);
                    let dcols = MatRef::new(&buf, rows, cols);
                    if want_w {
                        let xi = MatRef::new(&xd[i * cin * cols..(i + 1) * cin * cols], cin, cols);
                        gemm(xi, dcols.t(), &mut gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(wm, dcols, &mut gx[i * cin * cols..(i + 1) * cin * cols], 0.0);
                    }
                }
                if want_w {
                    self.accumulate(grads, *w, Tensor::from_vec(self.shape(*w).to_vec(), gw)?);
                }
                if self.wants(*b) {
                    let gb = channel_sums(gout.data(), n, cout, geom.height * geom.width);
                    self.accumulate(grads, *b, Tensor::from_vec(vec![cout], gb)?);
                }
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, Tensor::from_vec(self.shape(*x).to_vec(), gx)?);
                }
            }
            Op::Relu(a) => {
                let g = gout.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *a, g);
            }
            Op::Tanh(a) => self.accumulate(grads, *a, gout.zip_map(out, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, gout.zip_map(out, |g, y| g * y * (1.0 - y)))
            }
            Op::Exp(a) => self.accumulate(grads, *a, gout.zip_map(out, |g, y| g * y)),
            Op::Log(a) => self.accumulate(grads, *a, gout.zip_map(self.value(*a), |g, x| g / x)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let g = gout.zip_map(self.value(*a), |g, x| if x < lo || x > hi { 0.0 } else { g });
                self.accumulate(grads, *a, g);
            }
            Op::Sum(a) => {
                let g = gout.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), g));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let g = gout.data()[0] / n;
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), g));
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, ax, inner) = split_axis(shape, *axis);
                let len = out.shape()[*axis];
                let mut g = Tensor::zeros(shape);
                let gd = g.data_mut();
                for o in 0..outer {
                    let base = (o * ax + start) * inner;
                    gd[base..base + len * inner]
                        .copy_from_slice(&gout.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let shape = self.shape(v);
                    let ax = shape[*axis];
                    if self.wants(v) {
                        let mut g = Vec::with_capacity(outer * ax * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            g.extend_from_slice(&gout.data()[base..base + ax * inner]);
                        }
                        self.accumulate(grads, v, Tensor::from_vec(shape.to_vec(), g)?);
                    }
                    offset += ax;
                }
            }
            Op::Reshape(x) => {
                let g = gout.clone().reshaped(self.shape(*x))?;
                self.accumulate(grads, *x, g);
            }
        }
        Ok(())
    }
}

fn channel_sums(data: &[f64], n: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for i in 0..n {
        for (c, acc) in out.iter_mut().enumerate() {
            let base = (i * channels + c) * plane;
            *acc += data[base..base + plane].iter().sum::<f64>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3));
        let a_data: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let a = g.constant(t(&[3, 2], &a_data));
        let y = g.matmul(i, a).unwrap();
        assert_eq!(g.value(y).data(), &a_data[..]);
    }

    #[test]
    fn averaging_conv_gives_block_means() {
        let mut g = Graph::new();
        let input: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = g.constant(t(&[1, 1, 4, 4], &input));
        let w = g.constant(Tensor::full(&[1, 1, 2, 2], 0.25));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 2, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
        // blocks {0,1,4,5} {2,3,6,7} {8,9,12,13} {10,11,14,15}
        assert_eq!(g.value(y).data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[5], &[0.3, -1.0, 2.0, 4.0, 0.0]));
        let l = g.sum(x);
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let l = g.sum(sq);
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let l = g.sigmoid(x);
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[3]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
        let c = g.constant(Tensor::zeros(&[3]));
        assert!(matches!(g.add(a, c), Err(Error::Shape { .. })));
    }

    #[test]
    fn transpose_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for the same weights.
        let mut g = Graph::new();
        let xs: Vec<f64> = (0..2 * 6 * 6).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let ws: Vec<f64> = (0..3 * 2 * 16).map(|i| ((i * 5) % 9) as f64 * 0.1 - 0.4).collect();
        let x = g.constant(t(&[1, 2, 6, 6], &xs));
        let w = g.constant(t(&[3, 2, 4, 4], &ws));
        let zb3 = g.constant(Tensor::zeros(&[3]));
        let zb2 = g.constant(Tensor::zeros(&[2]));
        let cx = g.conv2d(x, w, zb3, 2, 1).unwrap();
        assert_eq!(g.value(cx).shape(), &[1, 3, 3, 3]);
        let ys: Vec<f64> = (0..27).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let y = g.constant(t(&[1, 3, 3, 3], &ys));
        // conv_t expects weights [Cin=3, Cout=2, K, K]: same memory layout as conv's [3, 2, 4, 4]
        let ty = g.conv2d_transpose(y, w, zb2, 2, 1).unwrap();
        assert_eq!(g.value(ty).shape(), &[1, 2, 6, 6]);
        let lhs: f64 = g.value(cx).data().iter().zip(&ys).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.value(ty).data().iter().zip(&xs).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn inputs_not_mutated() {
        let mut g = Graph::new();
        let x0 = t(&[2, 2], &[1.0, -2.0, 3.0, -4.0]);
        let x = g.param(x0.clone());
        let y = g.tanh(x);
        let z = g.mul(y, x).unwrap();
        let l = g.sum(z);
        g.backward(l).unwrap();
        assert_eq!(g.value(x), &x0);
    }
}
