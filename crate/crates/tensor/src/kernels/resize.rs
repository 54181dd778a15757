//! Separable bilinear resizing with half-pixel centers and edge clamping.

use crate::scalar::Scalar;

/// `(lo, hi, weight_hi)` for every output index along one axis.
pub fn axis_weights(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = (s.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Resizes `planes` stacked `[H, W]` planes to `[oh, ow]`, scaling values by
/// `gain`.
pub fn forward<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize, gain: f64, out: &mut [T]) {
    let ys = axis_weights(oh, h);
    let xs = axis_weights(ow, w);
    let one = T::one();
    let g = T::from_f64(gain);
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let wy = T::from_f64(wy);
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let wx = T::from_f64(wx);
                let top = (one - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1];
                let bot = (one - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1];
                dst[oy * ow + ox] = g * ((one - wy) * top + wy * bot);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(d_out: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize, gain: f64, d_in: &mut [T]) {
    let ys = axis_weights(oh, h);
    let xs = axis_weights(ow, w);
    let one = T::one();
    let g = T::from_f64(gain);
    for p in 0..planes {
        let go = &d_out[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut d_in[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            let wy = T::from_f64(wy);
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let wx = T::from_f64(wx);
                let v = g * go[oy * ow + ox];
                dst[y0 * w + x0] += v * (one - wy) * (one - wx);
                dst[y0 * w + x1] += v * (one - wy) * wx;
                dst[y1 * w + x0] += v * wy * (one - wx);
                dst[y1 * w + x1] += v * wy * wx;
            }
        }
    }
}
