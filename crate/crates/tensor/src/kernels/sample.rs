//! Bilinear sampling at arbitrary (pixel-unit) coordinates with border
//! replication. Pixel centers sit at integer coordinates.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct Tap<T> {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub fx: T,
    pub fy: T,
    /// Whether the coordinate was inside the image along each axis; a
    /// clamped coordinate has zero derivative.
    pub live_x: bool,
    pub live_y: bool,
}

#[inline]
fn axis<T: Scalar>(s: T, len: usize) -> (usize, usize, T, bool) {
    let hi = T::from_f64((len - 1) as f64);
    let live = s >= T::zero() && s <= hi;
    let c = s.max(T::zero()).min(hi);
    let i0 = c.floor().as_f64() as usize;
    let i0 = i0.min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, c - T::from_f64(i0 as f64), live)
}

#[inline]
pub fn tap<T: Scalar>(sx: T, sy: T, width: usize, height: usize) -> Tap<T> {
    let (x0, x1, fx, live_x) = axis(sx, width);
    let (y0, y1, fy, live_y) = axis(sy, height);
    Tap { x0, x1, y0, y1, fx, fy, live_x, live_y }
}

#[inline]
pub fn read<T: Scalar>(plane: &[T], width: usize, t: &Tap<T>) -> T {
    let one = T::one();
    let v00 = plane[t.y0 * width + t.x0];
    let v01 = plane[t.y0 * width + t.x1];
    let v10 = plane[t.y1 * width + t.x0];
    let v11 = plane[t.y1 * width + t.x1];
    (one - t.fy) * ((one - t.fx) * v00 + t.fx * v01) + t.fy * ((one - t.fx) * v10 + t.fx * v11)
}

/// Samples every channel of `input` (`[C, H, W]`, one batch element) at the
/// given taps, writing `[C, taps.len()]`.
pub fn gather<T: Scalar>(input: &[T], channels: usize, height: usize, width: usize, taps: &[Tap<T>], out: &mut [T]) {
    let plane = height * width;
    let n = taps.len();
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        let dst = &mut out[c * n..(c + 1) * n];
        for (o, t) in dst.iter_mut().zip(taps) {
            *o = read(src, width, t);
        }
    }
}

/// Backward of [`gather`]. Accumulates into `d_input` when given and writes
/// the per-tap coordinate derivatives (summed over channels) into
/// `d_coords` as `(d/dx, d/dy)` pairs.
#[allow(clippy::too_many_arguments)]
pub fn gather_backward<T: Scalar>(
    input: &[T],
    channels: usize,
    height: usize,
    width: usize,
    taps: &[Tap<T>],
    d_out: &[T],
    mut d_input: Option<&mut [T]>,
    mut d_coords: Option<&mut [(T, T)]>,
) {
    let one = T::one();
    let plane = height * width;
    let n = taps.len();
    for c in 0..channels {
        let src = &input[c * plane..(c + 1) * plane];
        let g = &d_out[c * n..(c + 1) * n];
        if let Some(di) = d_input.as_deref_mut() {
            let dst = &mut di[c * plane..(c + 1) * plane];
            for (t, &go) in taps.iter().zip(g) {
                let (wx0, wx1) = (one - t.fx, t.fx);
                let (wy0, wy1) = (one - t.fy, t.fy);
                dst[t.y0 * width + t.x0] += go * wy0 * wx0;
                dst[t.y0 * width + t.x1] += go * wy0 * wx1;
                dst[t.y1 * width + t.x0] += go * wy1 * wx0;
                dst[t.y1 * width + t.x1] += go * wy1 * wx1;
            }
        }
        if let Some(dc) = d_coords.as_deref_mut() {
            for ((t, &go), acc) in taps.iter().zip(g).zip(dc.iter_mut()) {
                let v00 = src[t.y0 * width + t.x0];
                let v01 = src[t.y0 * width + t.x1];
                let v10 = src[t.y1 * width + t.x0];
                let v11 = src[t.y1 * width + t.x1];
                if t.live_x {
                    acc.0 += go * ((one - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
                }
                if t.live_y {
                    acc.1 += go * ((one - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
                }
            }
        }
    }
}

/// Taps for flow warping: output `(x, y)` reads `(x + u, y + v)`.
/// `flow` is one batch element `[2, H, W]`.
pub fn flow_taps<T: Scalar>(flow: &[T], height: usize, width: usize) -> Vec<Tap<T>> {
    let plane = height * width;
    let mut taps = Vec::with_capacity(plane);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let sx = T::from_f64(x as f64) + flow[i];
            let sy = T::from_f64(y as f64) + flow[plane + i];
            taps.push(tap(sx, sy, width, height));
        }
    }
    taps
}

/// Normalized coordinate of pixel `i` on an axis of `len` pixels, with the
/// first and last pixel centers at -1 and +1.
#[inline]
pub fn to_normalized(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (len - 1) as f64 - 1.0
    }
}

#[inline]
pub fn half_extent(len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        (len - 1) as f64 / 2.0
    }
}

/// Taps for an affine grid: normalized output coordinates `(xn, yn)` map to
/// `theta · (xn, yn, 1)` in normalized input coordinates.
pub fn affine_taps<T: Scalar>(theta: &[T], height: usize, width: usize) -> Vec<Tap<T>> {
    let (hx, hy) = (T::from_f64(half_extent(width)), T::from_f64(half_extent(height)));
    let mut taps = Vec::with_capacity(height * width);
    for y in 0..height {
        let yn = T::from_f64(to_normalized(y, height));
        for x in 0..width {
            let xn = T::from_f64(to_normalized(x, width));
            // (u + 1) * hx rewritten around the pixel index, so the
            // identity transform reproduces it without rounding.
            let (xf, yf) = (T::from_f64(x as f64), T::from_f64(y as f64));
            let one = T::one();
            let sx = xf + (theta[0] - one) * xf + hx * (theta[1] * yn + theta[2] + one - theta[0]);
            let sy = yf + (theta[4] - one) * yf + hy * (theta[3] * xn + theta[5] + one - theta[4]);
            taps.push(tap(sx, sy, width, height));
        }
    }
    taps
}
