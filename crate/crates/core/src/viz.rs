//! Optical-flow color coding on the standard Middlebury color wheel.

use blurwarp_tensor::Tensor;

use crate::error::{Error, Result};

/// Hue segment lengths: red-yellow, yellow-green, green-cyan, cyan-blue,
/// blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55 wheel colors, components in `[0, 1]`.
pub fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    let [ry, yg, gc, cb, bm, mr] = SEGMENTS.map(|s| s as f64);
    for i in 0..SEGMENTS[0] {
        wheel.push([1.0, i as f64 / ry, 0.0]);
    }
    for i in 0..SEGMENTS[1] {
        wheel.push([1.0 - i as f64 / yg, 1.0, 0.0]);
    }
    for i in 0..SEGMENTS[2] {
        wheel.push([0.0, 1.0, i as f64 / gc]);
    }
    for i in 0..SEGMENTS[3] {
        wheel.push([0.0, 1.0 - i as f64 / cb, 1.0]);
    }
    for i in 0..SEGMENTS[4] {
        wheel.push([i as f64 / bm, 0.0, 1.0]);
    }
    for i in 0..SEGMENTS[5] {
        wheel.push([1.0, 0.0, 1.0 - i as f64 / mr]);
    }
    wheel
}

/// Color of one flow vector already divided by the normalization radius.
fn encode(wheel: &[[f64; 3]], u: f64, v: f64) -> [f64; 3] {
    let rad = u.hypot(v);
    let ncols = wheel.len();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
    let k0 = fk.floor() as usize % ncols;
    let k1 = (k0 + 1) % ncols;
    let f = fk - fk.floor();
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        *o = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
    }
    out
}

/// `[1, 3, H, W]` color image of a `[1, 2, H, W]` flow. Vectors are scaled
/// by `max_radius` (the largest magnitude present when `None`); zero flow
/// is white.
pub fn flow_to_color(flow: &Tensor, max_radius: Option<f64>) -> Result<Tensor> {
    let [b, c, h, w] = flow.dims4("flow_to_color")?;
    if b != 1 || c != 2 {
        return Err(Error::Contract(format!("flow_to_color takes [1, 2, H, W], got {:?}", flow.shape())));
    }
    let plane = h * w;
    let (us, vs) = flow.data().split_at(plane);
    let radius = max_radius.unwrap_or_else(|| us.iter().zip(vs).map(|(u, v)| (*u as f64).hypot(*v as f64)).fold(0.0, f64::max));
    let scale = if radius > 0.0 && radius.is_finite() { 1.0 / radius } else { 0.0 };
    let wheel = color_wheel();
    let mut out = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        let rgb = encode(&wheel, us[p] as f64 * scale, vs[p] as f64 * scale);
        for (ch, v) in rgb.into_iter().enumerate() {
            out[ch * plane + p] = v as f32;
        }
    }
    Ok(Tensor::new(&[1, 3, h, w], out)?)
}
