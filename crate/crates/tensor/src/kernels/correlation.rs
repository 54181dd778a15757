//! Cost volume between two feature maps.

use crate::scalar::Scalar;

/// Channel index of displacement `(dx, dy)` (each in `-d..=d`). Channels are
/// ordered x-displacement major.
#[inline]
pub fn channel_of(dx: isize, dy: isize, max_disp: usize) -> usize {
    let side = 2 * max_disp + 1;
    (dx + max_disp as isize) as usize * side + (dy + max_disp as isize) as usize
}

/// Valid output x-range for a displacement: `x + dx` must stay in `0..len`.
#[inline]
fn span(disp: isize, len: usize) -> (usize, usize) {
    let lo = (-disp).max(0) as usize;
    let hi = (len as isize - disp.max(0)).max(0) as usize;
    (lo.min(len), hi.max(lo.min(len)))
}

/// One batch element: `f1`, `f2` are `[C, H, W]`; `out` is
/// `[(2d+1)², H, W]` holding channel means of `f1(x, y) · f2(x+dx, y+dy)`.
pub fn forward<T: Scalar>(f1: &[T], f2: &[T], c: usize, h: usize, w: usize, d: usize, out: &mut [T]) {
    let plane = h * w;
    let inv = T::one() / T::from_f64(c as f64);
    out.fill(T::zero());
    let di = d as isize;
    for dx in -di..=di {
        let (x0, x1) = span(dx, w);
        for dy in -di..=di {
            let (y0, y1) = span(dy, h);
            if x0 == x1 || y0 == y1 {
                continue;
            }
            let o = &mut out[channel_of(dx, dy, d) * plane..][..plane];
            for ch in 0..c {
                let a = &f1[ch * plane..(ch + 1) * plane];
                let b = &f2[ch * plane..(ch + 1) * plane];
                for y in y0..y1 {
                    let yb = (y as isize + dy) as usize;
                    let xb0 = (x0 as isize + dx) as usize;
                    let ra = &a[y * w + x0..y * w + x1];
                    let rb = &b[yb * w + xb0..yb * w + xb0 + (x1 - x0)];
                    let ro = &mut o[y * w + x0..y * w + x1];
                    for ((o, p), q) in ro.iter_mut().zip(ra).zip(rb) {
                        *o += *p * *q;
                    }
                }
            }
            for v in o.iter_mut() {
                *v *= inv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn backward<T: Scalar>(
    f1: &[T],
    f2: &[T],
    c: usize,
    h: usize,
    w: usize,
    d: usize,
    d_out: &[T],
    mut d1: Option<&mut [T]>,
    mut d2: Option<&mut [T]>,
) {
    let plane = h * w;
    let inv = T::one() / T::from_f64(c as f64);
    let di = d as isize;
    for dx in -di..=di {
        let (x0, x1) = span(dx, w);
        for dy in -di..=di {
            let (y0, y1) = span(dy, h);
            if x0 == x1 || y0 == y1 {
                continue;
            }
            let g = &d_out[channel_of(dx, dy, d) * plane..][..plane];
            let gs: Vec<T> = g.iter().map(|v| *v * inv).collect();
            let n = x1 - x0;
            for ch in 0..c {
                let off = ch * plane;
                for y in y0..y1 {
                    let yb = (y as isize + dy) as usize;
                    let xb0 = (x0 as isize + dx) as usize;
                    let gr = &gs[y * w + x0..y * w + x1];
                    let (ia, ib) = (off + y * w + x0, off + yb * w + xb0);
                    if let Some(d1) = d1.as_deref_mut() {
                        for ((o, go), q) in d1[ia..ia + n].iter_mut().zip(gr).zip(&f2[ib..ib + n]) {
                            *o += *go * *q;
                        }
                    }
                    if let Some(d2) = d2.as_deref_mut() {
                        for ((o, go), p) in d2[ib..ib + n].iter_mut().zip(gr).zip(&f1[ia..ia + n]) {
                            *o += *go * *p;
                        }
                    }
                }
            }
        }
    }
}
