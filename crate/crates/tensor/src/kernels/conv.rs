//! im2col convolution and its adjoints.

use crate::scalar::Scalar;

/// Spatial geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad, dilation: 1 }
    }

    pub fn dilated(dilation: usize) -> Self {
        Self { stride: 1, pad: dilation, dilation }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_len(&self, len: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = len + 2 * self.pad;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// Problem sizes of one convolution, seen from the "conv input" side.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub geom: ConvGeom,
}

impl ConvDims {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output index `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let v = (o * self.geom.stride + k * self.geom.dilation) as isize - self.geom.pad as isize;
        (v >= 0 && (v as usize) < len).then_some(v as usize)
    }

    /// Output indices `lo..hi` whose tap `k` lands inside `0..len`, and the
    /// input coordinate of output `lo`.
    #[inline]
    fn valid(&self, out: usize, k: usize, len: usize) -> (usize, usize, usize) {
        let s = self.geom.stride as isize;
        let off = (k * self.geom.dilation) as isize - self.geom.pad as isize;
        // smallest o with o*s + off >= 0, and first o with o*s + off >= len
        let lo = if off >= 0 { 0 } else { ((-off + s - 1) / s) as usize };
        let hi = (((len as isize - off + s - 1) / s).max(0) as usize).min(out);
        let lo = lo.min(hi);
        (lo, hi, (lo as isize * s + off).max(0) as usize)
    }
}

/// Unfolds one image `[C, H, W]` into `[C·kh·kw, outH·outW]`.
pub fn im2col<T: Scalar>(img: &[T], d: &ConvDims, cols: &mut [T]) {
    let n = d.cols();
    let stride = d.geom.stride;
    debug_assert_eq!(cols.len(), d.rows() * n);
    for c in 0..d.channels {
        let plane = &img[c * d.height * d.width..(c + 1) * d.height * d.width];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi, ix0) = d.valid(d.out_w, kj, d.width);
                for oy in 0..d.out_h {
                    let line = &mut dst[oy * d.out_w..(oy + 1) * d.out_w];
                    match d.src(oy, ki, d.height) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let src = &plane[iy * d.width..(iy + 1) * d.width];
                            line[..lo].fill(T::zero());
                            line[hi..].fill(T::zero());
                            if stride == 1 {
                                line[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                            } else {
                                for (j, v) in line[lo..hi].iter_mut().enumerate() {
                                    *v = src[ix0 + j * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds columns back, accumulating into `img`.
pub fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, img: &mut [T]) {
    let n = d.cols();
    let stride = d.geom.stride;
    for c in 0..d.channels {
        let plane = &mut img[c * d.height * d.width..(c + 1) * d.height * d.width];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * n..(row + 1) * n];
                let (lo, hi, ix0) = d.valid(d.out_w, kj, d.width);
                for oy in 0..d.out_h {
                    let Some(iy) = d.src(oy, ki, d.height) else {
                        continue;
                    };
                    let line = &src[oy * d.out_w + lo..oy * d.out_w + hi];
                    let dst = &mut plane[iy * d.width..(iy + 1) * d.width];
                    if stride == 1 {
                        for (o, v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(line) {
                            *o += *v;
                        }
                    } else {
                        for (j, v) in line.iter().enumerate() {
                            dst[ix0 + j * stride] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// `out[b] = W · im2col(x[b]) + bias`.
pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, batch: usize, cout: usize, d: &ConvDims, out: &mut [T]) {
    let in_sz = d.channels * d.height * d.width;
    let out_sz = cout * d.cols();
    let mut cols = vec![T::zero(); d.rows() * d.cols()];
    for b in 0..batch {
        im2col(&x[b * in_sz..(b + 1) * in_sz], d, &mut cols);
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        T::gemm(cout, d.rows(), d.cols(), w, false, &cols, false, T::zero(), ob);
        if let Some(bias) = bias {
            add_bias(ob, bias, d.cols());
        }
    }
}

/// Gradients of [`conv2d_forward`]; each target is accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    cout: usize,
    d: &ConvDims,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let in_sz = d.channels * d.height * d.width;
    let out_sz = cout * d.cols();
    let mut cols = vec![T::zero(); d.rows() * d.cols()];
    for b in 0..batch {
        let dyb = &dy[b * out_sz..(b + 1) * out_sz];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[b * in_sz..(b + 1) * in_sz], d, &mut cols);
            T::gemm(cout, d.cols(), d.rows(), dyb, false, &cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(d.rows(), cout, d.cols(), w, true, dyb, false, T::zero(), &mut cols);
            col2im(&cols, d, &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
        if let Some(db) = dbias.as_deref_mut() {
            bias_grad(dyb, db, d.cols());
        }
    }
}

/// Transposed convolution. `d` describes the *adjoint* convolution: its input
/// is this op's output (`d.channels` = output channels) and its output
/// extent is this op's input extent. Weight layout is `[cin, cout, kh, kw]`.
pub fn conv_transpose2d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, batch: usize, cin: usize, d: &ConvDims, out: &mut [T]) {
    let in_sz = cin * d.cols();
    let out_sz = d.channels * d.height * d.width;
    let mut cols = vec![T::zero(); d.rows() * d.cols()];
    for b in 0..batch {
        T::gemm(d.rows(), cin, d.cols(), w, true, &x[b * in_sz..(b + 1) * in_sz], false, T::zero(), &mut cols);
        let ob = &mut out[b * out_sz..(b + 1) * out_sz];
        ob.fill(T::zero());
        col2im(&cols, d, ob);
        if let Some(bias) = bias {
            add_bias(ob, bias, d.height * d.width);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    cin: usize,
    d: &ConvDims,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut dbias: Option<&mut [T]>,
) {
    let in_sz = cin * d.cols();
    let out_sz = d.channels * d.height * d.width;
    let mut cols = vec![T::zero(); d.rows() * d.cols()];
    for b in 0..batch {
        let dyb = &dy[b * out_sz..(b + 1) * out_sz];
        im2col(dyb, d, &mut cols);
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(cin, d.rows(), d.cols(), w, false, &cols, false, T::one(), &mut dx[b * in_sz..(b + 1) * in_sz]);
        }
        if let Some(dw) = dw.as_deref_mut() {
            T::gemm(cin, d.cols(), d.rows(), &x[b * in_sz..(b + 1) * in_sz], false, &cols, true, T::one(), dw);
        }
        if let Some(db) = dbias.as_deref_mut() {
            bias_grad(dyb, db, d.height * d.width);
        }
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, bv) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += *bv;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], db: &mut [T], plane: usize) {
    for (c, g) in db.iter_mut().enumerate() {
        *g += dy[c * plane..(c + 1) * plane].iter().copied().sum::<T>();
    }
}
