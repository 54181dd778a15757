//! Tape-recorded computation graph with reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and enough bookkeeping
//! to replay the chain rule. Nodes are only ever appended, so a node's
//! inputs always have smaller indices and the tape is a topological order.

use crate::error::{Result, TensorError};
use crate::kernels::conv::{self, ConvDims, ConvGeom};
use crate::kernels::{correlation, resize, sample};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, dims: ConvDims },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, dims: ConvDims, cin: usize },
    GridSample { x: Var, flow: Var },
    AffineSample { x: Var, theta: Var },
    Correlation { a: Var, b: Var, max_disp: usize },
    Resize { x: Var, gain: f64 },
    LeakyRelu { x: Var, slope: T },
    ConcatChannels { parts: Vec<Var> },
    ConcatBatch { parts: Vec<Var> },
    SliceBatch { x: Var, start: usize },
    Crop { x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { x: Var, k: T },
    Sum(Var),
    Mean(Var),
    AbsMean(Var),
    Epe(Var, Var),
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
}

#[derive(Debug, Clone)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A single forward/backward episode. Build a fresh graph per step.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(TensorError::dim(op, format!("operand shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: &[usize], data: Vec<T>, inputs: &[Var], op: Op<T>) -> Var {
        let rg = inputs.iter().any(|v| self.requires_grad(*v));
        let t = Tensor::new(shape, data).expect("op produced inconsistent buffer").with_requires_grad(rg);
        self.push(t, op)
    }

    /// Inserts a leaf; gradients are tracked when `t.requires_grad`.
    pub fn leaf(&mut self, mut t: Tensor<T>) -> Var {
        t.zero_grad();
        self.push(t, Op::Leaf)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Leaf that receives gradient.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    // ---------------------------------------------------------------- conv

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let [batch, cin, h, wd] = self.value(x).dims4("conv2d")?;
        let [cout, wcin, kh, kw] = self.value(w).dims4("conv2d weight")?;
        if wcin != cin {
            return Err(TensorError::dim("conv2d", format!("input channels (axis 1) = {cin} but weight in-channels (axis 1) = {wcin}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(TensorError::dim(
                    "conv2d",
                    format!("bias shape {:?} but weight out-channels (axis 0) = {cout}", self.shape(b)),
                ));
            }
        }
        let (Some(oh), Some(ow)) = (geom.out_len(h, kh), geom.out_len(wd, kw)) else {
            return Err(TensorError::dim(
                "conv2d",
                format!("kernel {kh}x{kw} (dilation {}) does not fit input height/width {h}x{wd} with padding {}", geom.dilation, geom.pad),
            ));
        };
        let dims = ConvDims { channels: cin, height: h, width: wd, kh, kw, out_h: oh, out_w: ow, geom };
        let mut out = vec![T::zero(); batch * cout * oh * ow];
        conv::conv2d_forward(self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()), batch, cout, &dims, &mut out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(&[batch, cout, oh, ow], out, &inputs, Op::Conv2d { x, w, b, dims }))
    }

    /// Transposed convolution with weight `[cin, cout, k, k]`. The output must
    /// be exactly `stride`× the input extent.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [batch, cin, h, wd] = self.value(x).dims4("conv_transpose2d")?;
        let [wcin, cout, kh, kw] = self.value(w).dims4("conv_transpose2d weight")?;
        if wcin != cin {
            return Err(TensorError::dim(
                "conv_transpose2d",
                format!("input channels (axis 1) = {cin} but weight in-channels (axis 0) = {wcin}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(TensorError::dim(
                    "conv_transpose2d",
                    format!("bias shape {:?} but weight out-channels (axis 1) = {cout}", self.shape(b)),
                ));
            }
        }
        let full = |len: usize, k: usize| ((len.max(1) - 1) * stride + k).checked_sub(2 * pad);
        let (oh, ow) = match (full(h, kh), full(wd, kw)) {
            (Some(oh), Some(ow)) if oh == stride * h && ow == stride * wd && stride > 0 => (oh, ow),
            _ => {
                return Err(TensorError::config(
                    "conv_transpose2d",
                    format!(
                        "kernel {kh}x{kw}, stride {stride}, padding {pad} does not map {h}x{wd} to exactly {}x{}",
                        stride * h,
                        stride * wd
                    ),
                ))
            }
        };
        let dims = ConvDims { channels: cout, height: oh, width: ow, kh, kw, out_h: h, out_w: wd, geom: ConvGeom::new(stride, pad) };
        let mut out = vec![T::zero(); batch * cout * oh * ow];
        conv::conv_transpose2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            batch,
            cin,
            &dims,
            &mut out,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(&[batch, cout, oh, ow], out, &inputs, Op::ConvTranspose2d { x, w, b, dims, cin }))
    }

    // ------------------------------------------------------------ sampling

    /// Backward warp: output `(x, y)` samples `input` at `(x + u, y + v)`
    /// with bilinear weights and border replication. `flow` is
    /// `[B, 2, H, W]` in pixels, x component first.
    pub fn grid_sample(&mut self, x: Var, flow: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("grid_sample")?;
        let [fb, fc, fh, fw] = self.value(flow).dims4("grid_sample flow")?;
        if fc != 2 {
            return Err(TensorError::dim("grid_sample", format!("flow channels (axis 1) = {fc}, expected 2")));
        }
        if (fb, fh, fw) != (b, h, w) {
            return Err(TensorError::dim(
                "grid_sample",
                format!("flow batch/height/width (axes 0,2,3) = {fb}x{fh}x{fw} but input = {b}x{h}x{w}"),
            ));
        }
        let plane = h * w;
        let mut out = vec![T::zero(); b * c * plane];
        {
            let xd = self.value(x).data();
            let fd = self.value(flow).data();
            for bi in 0..b {
                let taps = sample::flow_taps(&fd[bi * 2 * plane..(bi + 1) * 2 * plane], h, w);
                sample::gather(&xd[bi * c * plane..(bi + 1) * c * plane], c, h, w, &taps, &mut out[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        Ok(self.derived(&[b, c, h, w], out, &[x, flow], Op::GridSample { x, flow }))
    }

    /// Samples `input` on the affine grid `theta` (`[B, 6]`, row-major 2×3,
    /// normalized output → normalized input coordinates).
    pub fn affine_grid_sample(&mut self, x: Var, theta: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("affine_grid_sample")?;
        if self.shape(theta) != [b, 6] {
            return Err(TensorError::dim("affine_grid_sample", format!("theta shape {:?}, expected [{b}, 6]", self.shape(theta))));
        }
        let plane = h * w;
        let mut out = vec![T::zero(); b * c * plane];
        {
            let xd = self.value(x).data();
            let td = self.value(theta).data();
            for bi in 0..b {
                let taps = sample::affine_taps(&td[bi * 6..bi * 6 + 6], h, w);
                sample::gather(&xd[bi * c * plane..(bi + 1) * c * plane], c, h, w, &taps, &mut out[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        Ok(self.derived(&[b, c, h, w], out, &[x, theta], Op::AffineSample { x, theta }))
    }

    /// Cost volume with `(2·max_disp + 1)²` displacement channels.
    pub fn correlation(&mut self, a: Var, b: Var, max_disp: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4("correlation")?;
        same_shape("correlation", self.shape(a), self.shape(b))?;
        let side = 2 * max_disp + 1;
        let plane = h * w;
        let mut out = vec![T::zero(); n * side * side * plane];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            let per_in = c * plane;
            let per_out = side * side * plane;
            for i in 0..n {
                correlation::forward(
                    &ad[i * per_in..(i + 1) * per_in],
                    &bd[i * per_in..(i + 1) * per_in],
                    c,
                    h,
                    w,
                    max_disp,
                    &mut out[i * per_out..(i + 1) * per_out],
                );
            }
        }
        Ok(self.derived(&[n, side * side, h, w], out, &[a, b], Op::Correlation { a, b, max_disp }))
    }

    /// Bilinear resize (half-pixel centers) with values multiplied by `gain`.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize, gain: f64) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("resize")?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(TensorError::dim("resize", "zero spatial extent"));
        }
        let mut out = vec![T::zero(); b * c * out_h * out_w];
        resize::forward(self.value(x).data(), b * c, h, w, out_h, out_w, gain, &mut out);
        Ok(self.derived(&[b, c, out_h, out_w], out, &[x], Op::Resize { x, gain }))
    }

    /// Bilinear 2× upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(x).dims4("upsample2x")?;
        self.resize(x, 2 * h, 2 * w, 1.0)
    }

    /// Bilinear 2× upsampling of a flow field; displacements double so they
    /// stay in pixels of the finer level.
    pub fn upsample_flow2x(&mut self, flow: Var) -> Result<Var> {
        let [_, c, h, w] = self.value(flow).dims4("upsample_flow2x")?;
        if c != 2 {
            return Err(TensorError::dim("upsample_flow2x", format!("flow channels (axis 1) = {c}, expected 2")));
        }
        self.resize(flow, 2 * h, 2 * w, 2.0)
    }

    // ---------------------------------------------------------- elementwise

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        let out = self.value(x).data().iter().map(|&v| if v > T::zero() { v } else { v * s }).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.derived(&shape, out, &[x], Op::LeakyRelu { x, slope: s }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(&shape, out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.shape(a), self.shape(b))?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x - *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(&shape, out, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(&shape, out, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let k = T::from_f64(k);
        let out = self.value(x).data().iter().map(|v| *v * k).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.derived(&shape, out, &[x], Op::Scale { x, k }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        Ok(self.derived(&[1], vec![s], &[x], Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::dim("mean", "empty tensor"));
        }
        let s = self.value(x).sum() / T::from_f64(n as f64);
        Ok(self.derived(&[1], vec![s], &[x], Op::Mean(x)))
    }

    /// Mean absolute value (ℓ1 averaged over all elements).
    pub fn abs_mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TensorError::dim("abs_mean", "empty tensor"));
        }
        let s = self.value(x).data().iter().map(|v| v.abs()).sum::<T>() / T::from_f64(n as f64);
        Ok(self.derived(&[1], vec![s], &[x], Op::AbsMean(x)))
    }

    /// Endpoint error: mean over batch and pixels of the Euclidean distance
    /// between two `[B, 2, H, W]` flow fields.
    pub fn epe(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(a).dims4("epe")?;
        if c != 2 {
            return Err(TensorError::dim("epe", format!("flow channels (axis 1) = {c}, expected 2")));
        }
        same_shape("epe", self.shape(a), self.shape(b))?;
        let plane = h * w;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut acc = T::zero();
        for i in 0..n {
            let o = i * 2 * plane;
            for p in 0..plane {
                let du = ad[o + p] - bd[o + p];
                let dv = ad[o + plane + p] - bd[o + plane + p];
                acc += (du * du + dv * dv).sqrt();
            }
        }
        let m = acc / T::from_f64((n * plane).max(1) as f64);
        Ok(self.derived(&[1], vec![m], &[a, b], Op::Epe(a, b)))
    }

    // ------------------------------------------------------------ layout

    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| TensorError::Contract("concat_channels of zero tensors".into()))?;
        let [b, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut total = 0;
        for p in parts {
            let [pb, pc, ph, pw] = self.value(*p).dims4("concat_channels")?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(TensorError::dim(
                    "concat_channels",
                    format!("batch/height/width (axes 0,2,3) = {pb}x{ph}x{pw} vs {b}x{h}x{w}"),
                ));
            }
            total += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for p in parts {
                let t = self.value(*p);
                let pc = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * pc * plane..(bi + 1) * pc * plane]);
            }
        }
        Ok(self.derived(&[b, total, h, w], out, parts, Op::ConcatChannels { parts: parts.to_vec() }))
    }

    /// Concatenates along the batch axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(*p)).collect();
        let t = Tensor::stack_batch(&refs)?;
        let shape = t.shape().to_vec();
        Ok(self.derived(&shape, t.into_data(), parts, Op::ConcatBatch { parts: parts.to_vec() }))
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).batch_slice(start, len)?;
        let shape = t.shape().to_vec();
        Ok(self.derived(&shape, t.into_data(), &[x], Op::SliceBatch { x, start }))
    }

    /// Keeps the top-left `h × w` window of a rank-4 tensor.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let [b, c, ih, iw] = self.value(x).dims4("crop")?;
        if h > ih || w > iw {
            return Err(TensorError::dim("crop", format!("window {h}x{w} exceeds height/width {ih}x{iw}")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * c * h * w);
        for p in 0..b * c {
            for y in 0..h {
                let row = p * ih * iw + y * iw;
                out.extend_from_slice(&src[row..row + w]);
            }
        }
        Ok(self.derived(&[b, c, h, w], out, &[x], Op::Crop { x }))
    }

    /// `[B, C, H, W] → [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let out = self.value(x).data().chunks(plane).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        Ok(self.derived(&[b, c], out, &[x], Op::GlobalAvgPool(x)))
    }

    /// `x · wᵀ + b` with `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (&[n, fin], &[fout, win]) = (self.shape(x), self.shape(w)) else {
            return Err(TensorError::dim(
                "linear",
                format!("expected x [B, in] and w [out, in], got {:?} and {:?}", self.shape(x), self.shape(w)),
            ));
        };
        if fin != win {
            return Err(TensorError::dim("linear", format!("x features (axis 1) = {fin} but weight in-features (axis 1) = {win}")));
        }
        let mut out = vec![T::zero(); n * fout];
        T::gemm(n, fin, fout, self.value(x).data(), false, self.value(w).data(), true, T::zero(), &mut out);
        if let Some(b) = b {
            if self.shape(b) != [fout] {
                return Err(TensorError::dim("linear", format!("bias shape {:?}, expected [{fout}]", self.shape(b))));
            }
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                for (o, bv) in row.iter_mut().zip(bd) {
                    *o += *bv;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(&[n, fout], out, &inputs, Op::Linear { x, w, b }))
    }

    // ------------------------------------------------------------ backward

    /// Reverse sweep from a scalar `loss`, accumulating into every node that
    /// requires grad. Gradients from earlier sweeps are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.set_grad(vec![T::one()])?;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].value.take_grad() else {
                continue;
            };
            if let Op::SliceBatch { x, start } = self.nodes[i].op {
                let per = self.nodes[i].value.numel() / self.nodes[i].value.shape()[0].max(1);
                if self.requires_grad(x) {
                    self.nodes[x.0].value.accumulate_grad_at(start * per, &g);
                }
                self.nodes[i].value.set_grad(g)?;
                continue;
            }
            let contributions = self.node_vjp(i, &g);
            self.nodes[i].value.set_grad(g)?;
            for (v, d) in contributions {
                self.nodes[v.0].value.accumulate_grad_owned(d);
            }
        }
        Ok(())
    }

    fn zeros_for(&self, v: Var) -> Option<Vec<T>> {
        self.requires_grad(v).then(|| vec![T::zero(); self.value(v).numel()])
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn node_vjp(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Vec<T>)> = Vec::new();
        let mut emit = |v: Var, d: Option<Vec<T>>| {
            if let Some(d) = d {
                out.push((v, d));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let batch = self.shape(*x)[0];
                let cout = self.shape(*w)[0];
                let mut dx = self.zeros_for(*x);
                let mut dw = self.zeros_for(*w);
                let mut db = b.and_then(|b| self.zeros_for(b));
                conv::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    batch,
                    cout,
                    dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                emit(*x, dx);
                emit(*w, dw);
                if let Some(b) = b {
                    emit(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, dims, cin } => {
                let batch = self.shape(*x)[0];
                let mut dx = self.zeros_for(*x);
                let mut dw = self.zeros_for(*w);
                let mut db = b.and_then(|b| self.zeros_for(b));
                conv::conv_transpose2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    batch,
                    *cin,
                    dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                emit(*x, dx);
                emit(*w, dw);
                if let Some(b) = b {
                    emit(*b, db);
                }
            }
            Op::GridSample { x, flow } => {
                let [b, c, h, w] = self.value(*x).dims4("grid_sample").expect("checked in forward");
                let plane = h * w;
                let mut dx = self.zeros_for(*x);
                let mut df = self.zeros_for(*flow);
                let xd = self.value(*x).data();
                let fd = self.value(*flow).data();
                let mut coords = vec![(T::zero(), T::zero()); plane];
                for bi in 0..b {
                    let taps = sample::flow_taps(&fd[bi * 2 * plane..(bi + 1) * 2 * plane], h, w);
                    coords.fill((T::zero(), T::zero()));
                    sample::gather_backward(
                        &xd[bi * c * plane..(bi + 1) * c * plane],
                        c,
                        h,
                        w,
                        &taps,
                        &g[bi * c * plane..(bi + 1) * c * plane],
                        dx.as_deref_mut().map(|d| &mut d[bi * c * plane..(bi + 1) * c * plane]),
                        df.is_some().then_some(&mut coords[..]),
                    );
                    if let Some(df) = df.as_deref_mut() {
                        let o = bi * 2 * plane;
                        for (p, (gx, gy)) in coords.iter().enumerate() {
                            df[o + p] += *gx;
                            df[o + plane + p] += *gy;
                        }
                    }
                }
                emit(*x, dx);
                emit(*flow, df);
            }
            Op::AffineSample { x, theta } => {
                let [b, c, h, w] = self.value(*x).dims4("affine_grid_sample").expect("checked in forward");
                let plane = h * w;
                let mut dx = self.zeros_for(*x);
                let mut dt = self.zeros_for(*theta);
                let xd = self.value(*x).data();
                let td = self.value(*theta).data();
                let (hx, hy) = (T::from_f64(sample::half_extent(w)), T::from_f64(sample::half_extent(h)));
                let mut coords = vec![(T::zero(), T::zero()); plane];
                for bi in 0..b {
                    let taps = sample::affine_taps(&td[bi * 6..bi * 6 + 6], h, w);
                    coords.fill((T::zero(), T::zero()));
                    sample::gather_backward(
                        &xd[bi * c * plane..(bi + 1) * c * plane],
                        c,
                        h,
                        w,
                        &taps,
                        &g[bi * c * plane..(bi + 1) * c * plane],
                        dx.as_deref_mut().map(|d| &mut d[bi * c * plane..(bi + 1) * c * plane]),
                        dt.is_some().then_some(&mut coords[..]),
                    );
                    if let Some(dt) = dt.as_deref_mut() {
                        let t = &mut dt[bi * 6..bi * 6 + 6];
                        for y in 0..h {
                            let yn = T::from_f64(sample::to_normalized(y, h));
                            for xx in 0..w {
                                let xn = T::from_f64(sample::to_normalized(xx, w));
                                let (gx, gy) = coords[y * w + xx];
                                let (gu, gv) = (gx * hx, gy * hy);
                                t[0] += gu * xn;
                                t[1] += gu * yn;
                                t[2] += gu;
                                t[3] += gv * xn;
                                t[4] += gv * yn;
                                t[5] += gv;
                            }
                        }
                    }
                }
                emit(*x, dx);
                emit(*theta, dt);
            }
            Op::Correlation { a, b, max_disp } => {
                let [n, c, h, w] = self.value(*a).dims4("correlation").expect("checked in forward");
                let side = 2 * max_disp + 1;
                let per_in = c * h * w;
                let per_out = side * side * h * w;
                let mut da = self.zeros_for(*a);
                let mut db = self.zeros_for(*b);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                for i in 0..n {
                    correlation::backward(
                        &ad[i * per_in..(i + 1) * per_in],
                        &bd[i * per_in..(i + 1) * per_in],
                        c,
                        h,
                        w,
                        *max_disp,
                        &g[i * per_out..(i + 1) * per_out],
                        da.as_deref_mut().map(|d| &mut d[i * per_in..(i + 1) * per_in]),
                        db.as_deref_mut().map(|d| &mut d[i * per_in..(i + 1) * per_in]),
                    );
                }
                emit(*a, da);
                emit(*b, db);
            }
            Op::Resize { x, gain } => {
                let [b, c, h, w] = self.value(*x).dims4("resize").expect("checked in forward");
                let [_, _, oh, ow] = node.value.dims4("resize").expect("rank 4");
                let mut dx = vec![T::zero(); b * c * h * w];
                resize::backward(g, b * c, h, w, oh, ow, *gain, &mut dx);
                emit(*x, Some(dx));
            }
            Op::LeakyRelu { x, slope } => {
                let d = self.value(*x).data().iter().zip(g).map(|(v, go)| if *v > T::zero() { *go } else { *go * *slope }).collect();
                emit(*x, Some(d));
            }
            Op::ConcatChannels { parts } => {
                let [b, _, h, w] = node.value.dims4("concat_channels").expect("rank 4");
                let total = node.value.shape()[1];
                let plane = h * w;
                let mut offset = 0;
                for p in parts {
                    let pc = self.shape(*p)[1];
                    if self.requires_grad(*p) {
                        let mut d = Vec::with_capacity(b * pc * plane);
                        for bi in 0..b {
                            let start = (bi * total + offset) * plane;
                            d.extend_from_slice(&g[start..start + pc * plane]);
                        }
                        emit(*p, Some(d));
                    }
                    offset += pc;
                }
            }
            Op::ConcatBatch { parts } => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.requires_grad(*p) {
                        emit(*p, Some(g[start..start + n].to_vec()));
                    }
                    start += n;
                }
            }
            Op::SliceBatch { x, start } => {
                let per = node.value.numel() / node.value.shape()[0].max(1);
                let mut d = vec![T::zero(); self.value(*x).numel()];
                d[start * per..start * per + g.len()].copy_from_slice(g);
                emit(*x, Some(d));
            }
            Op::Crop { x } => {
                let [b, c, ih, iw] = self.value(*x).dims4("crop").expect("checked in forward");
                let [_, _, h, w] = node.value.dims4("crop").expect("rank 4");
                let mut d = vec![T::zero(); b * c * ih * iw];
                for p in 0..b * c {
                    for y in 0..h {
                        let dst = p * ih * iw + y * iw;
                        let src = (p * h + y) * w;
                        d[dst..dst + w].copy_from_slice(&g[src..src + w]);
                    }
                }
                emit(*x, Some(d));
            }
            Op::Add(a, b) => {
                emit(*a, self.requires_grad(*a).then(|| g.to_vec()));
                emit(*b, self.requires_grad(*b).then(|| g.to_vec()));
            }
            Op::Sub(a, b) => {
                emit(*a, self.requires_grad(*a).then(|| g.to_vec()));
                emit(*b, self.requires_grad(*b).then(|| g.iter().map(|v| -*v).collect()));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                emit(*a, self.requires_grad(*a).then(|| g.iter().zip(bd).map(|(go, v)| *go * *v).collect()));
                emit(*b, self.requires_grad(*b).then(|| g.iter().zip(ad).map(|(go, v)| *go * *v).collect()));
            }
            Op::Scale { x, k } => {
                emit(*x, Some(g.iter().map(|v| *v * *k).collect()));
            }
            Op::Sum(x) => {
                emit(*x, Some(vec![g[0]; self.value(*x).numel()]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                emit(*x, Some(vec![g[0] / T::from_f64(n as f64); n]));
            }
            Op::AbsMean(x) => {
                let n = self.value(*x).numel();
                let k = g[0] / T::from_f64(n as f64);
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .map(|v| {
                        if *v > T::zero() {
                            k
                        } else if *v < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                emit(*x, Some(d));
            }
            Op::Epe(a, b) => {
                let [n, _, h, w] = self.value(*a).dims4("epe").expect("checked in forward");
                let plane = h * w;
                let k = g[0] / T::from_f64((n * plane).max(1) as f64);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let mut d = vec![T::zero(); ad.len()];
                for i in 0..n {
                    let o = i * 2 * plane;
                    for p in 0..plane {
                        let du = ad[o + p] - bd[o + p];
                        let dv = ad[o + plane + p] - bd[o + plane + p];
                        let r = (du * du + dv * dv).sqrt();
                        if r > T::zero() {
                            d[o + p] = k * du / r;
                            d[o + plane + p] = k * dv / r;
                        }
                    }
                }
                emit(*b, self.requires_grad(*b).then(|| d.iter().map(|v| -*v).collect()));
                emit(*a, self.requires_grad(*a).then_some(d));
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4("global_avg_pool").expect("checked in forward");
                let plane = h * w;
                let inv = T::one() / T::from_f64(plane as f64);
                let mut d = Vec::with_capacity(self.value(*x).numel());
                for go in g {
                    d.extend(std::iter::repeat_n(*go * inv, plane));
                }
                emit(*x, Some(d));
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.requires_grad(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, g, false, self.value(*w).data(), false, T::zero(), &mut dx);
                    emit(*x, Some(dx));
                }
                if self.requires_grad(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, g, true, self.value(*x).data(), false, T::zero(), &mut dw);
                    emit(*w, Some(dw));
                }
                if let Some(b) = b {
                    if self.requires_grad(*b) {
                        let mut db = vec![T::zero(); fout];
                        for row in g.chunks(fout) {
                            for (d, go) in db.iter_mut().zip(row) {
                                *d += *go;
                            }
                        }
                        emit(*b, Some(db));
                    }
                }
            }
        }
        out
    }
}
