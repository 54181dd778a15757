use blurwarp_tensor::{ConvGeom, Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Straightforward 6-loop cross-correlation used as an independent oracle.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.dims4("x").unwrap();
    let [cout, _, kh, kw] = w.dims4("w").unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let xd = x.data();
    let wdat = w.data();
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((bi * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * wdat[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_identity_kernel_returns_input() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::uniform(&[1, 1, 3, 3], -1.0, 1.0, &mut rng(1)));
    let w = g.constant(Tensor::ones(&[1, 1, 1, 1]));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(x, w, Some(b), ConvGeom::new(1, 0)).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn conv_of_ones_sums_each_window() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 4, 4]));
    let w = g.constant(Tensor::ones(&[1, 1, 2, 2]));
    let y = g.conv2d(x, w, None, ConvGeom::new(2, 0)).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &[4.0; 4]);
}

#[test]
fn conv_matches_naive_oracle() {
    let mut r = rng(7);
    let x = Tensor::<f64>::uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
    let w = Tensor::<f64>::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
    let b = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut r);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let want = naive_conv(&x, &w, b.data(), stride, pad);
        let mut g = Graph::<f32>::new();
        let (xv, wv, bv) = (g.constant(x.cast()), g.constant(w.cast()), g.constant(b.cast()));
        let y = g.conv2d(xv, wv, Some(bv), ConvGeom::new(stride, pad)).unwrap();
        assert_eq!(g.shape(y), want.shape());
        for (a, e) in g.value(y).data().iter().zip(want.data()) {
            assert!((*a as f64 - e).abs() < 1e-5, "stride {stride}: {a} vs {e}");
        }
    }
}

#[test]
fn conv_rejects_channel_mismatch_naming_axes() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let msg = g.conv2d(x, w, None, ConvGeom::new(1, 1)).unwrap_err().to_string();
    assert!(msg.contains("axis 1"), "{msg}");
}

#[test]
fn conv_transpose_doubles_spatial_dims() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 2, 2]));
    let mut k = Tensor::zeros(&[1, 1, 4, 4]);
    k.data_mut()[5] = 1.0;
    let w = g.constant(k);
    let y = g.conv_transpose2d(x, w, None, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 4, 4]);
}

#[test]
fn conv_transpose_of_zero_is_bias() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let w = g.constant(Tensor::uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng(3)));
    let b = g.constant(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
    let y = g.conv_transpose2d(x, w, Some(b), 2, 1).unwrap();
    let out = g.value(y).data();
    for c in 0..3 {
        assert!(out[c * 36..(c + 1) * 36].iter().all(|v| *v == [0.5, -1.0, 2.0][c]));
    }
}

#[test]
fn conv_transpose_equals_conv_input_gradient() {
    // The transposed conv of y must equal d/dx <conv2d(x, w), y>.
    let mut r = rng(11);
    let w = Tensor::<f32>::uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut r);
    let x = Tensor::<f32>::uniform(&[1, 2, 8, 8], -1.0, 1.0, &mut r);
    let y = Tensor::<f32>::uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut r);

    let mut g = Graph::<f32>::new();
    let xv = g.variable(x);
    let wv = g.constant(w.clone());
    let conv = g.conv2d(xv, wv, None, ConvGeom::new(2, 1)).unwrap();
    let yv = g.constant(y.clone());
    let prod = g.mul(conv, yv).unwrap();
    let s = g.sum(prod).unwrap();
    g.backward(s).unwrap();
    let grad_x = g.grad(xv).unwrap().to_vec();

    let mut h = Graph::<f32>::new();
    let yv = h.constant(y);
    let wv = h.constant(w);
    let t = h.conv_transpose2d(yv, wv, None, 2, 1).unwrap();
    for (a, b) in h.value(t).data().iter().zip(&grad_x) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn grid_sample_zero_flow_is_bit_identity() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::uniform(&[2, 3, 5, 7], -3.0, 3.0, &mut rng(5)));
    let f = g.constant(Tensor::zeros(&[2, 2, 5, 7]));
    let y = g.grid_sample(x, f).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn grid_sample_undoes_integer_shift() {
    let (h, w) = (4, 6);
    let orig: Vec<f32> = (0..h * w).map(|i| ((i * 37) % 11) as f32).collect();
    // Content moved one pixel to the right: shifted(x) = orig(x - 1).
    let mut shifted = vec![0.0; h * w];
    for y in 0..h {
        for x in 1..w {
            shifted[y * w + x] = orig[y * w + x - 1];
        }
    }
    let mut flow = vec![0.0f32; 2 * h * w];
    flow[..h * w].fill(1.0);
    let mut g = Graph::<f32>::new();
    let s = g.constant(Tensor::new(&[1, 1, h, w], shifted).unwrap());
    let f = g.constant(Tensor::new(&[1, 2, h, w], flow).unwrap());
    let out = g.grid_sample(s, f).unwrap();
    let o = g.value(out).data();
    for y in 0..h {
        for x in 0..w - 1 {
            assert!((o[y * w + x] - orig[y * w + x]).abs() < 1e-6);
        }
    }
}

#[test]
fn grid_sample_flow_gradient_on_ramp_is_slope() {
    let (h, w) = (5, 8);
    let slope = 0.75f64;
    let img: Vec<f64> = (0..h * w).map(|i| slope * (i % w) as f64 + 0.1 * (i / w) as f64).collect();
    let mut flow = vec![0.0; 2 * h * w];
    flow[..h * w].fill(0.3);
    flow[h * w..].fill(-0.2);
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::new(&[1, 1, h, w], img).unwrap());
    let f = g.variable(Tensor::new(&[1, 2, h, w], flow).unwrap());
    let y = g.grid_sample(x, f).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    let gr = g.grad(f).unwrap();
    for yy in 1..h - 1 {
        for xx in 1..w - 1 {
            assert!((gr[yy * w + xx] - slope).abs() < 1e-4);
            assert!((gr[h * w + yy * w + xx] - 0.1).abs() < 1e-4);
        }
    }
}

fn distinct_features(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    Tensor::uniform(&[1, c, h, w], -1.0, 1.0, &mut rng(seed))
}

fn argmax_channel(t: &Tensor<f32>, y: usize, x: usize) -> usize {
    let [_, c, h, w] = t.dims4("t").unwrap();
    (0..c).max_by(|a, b| t.data()[(a * h + y) * w + x].total_cmp(&t.data()[(b * h + y) * w + x])).unwrap()
}

#[test]
fn self_correlation_peaks_at_zero_displacement() {
    let f = distinct_features(16, 9, 9, 21);
    let mut g = Graph::<f32>::new();
    let a = g.constant(f.clone());
    let b = g.constant(f);
    let cv = g.correlation(a, b, 4).unwrap();
    assert_eq!(g.shape(cv), &[1, 81, 9, 9]);
    let zero = blurwarp_tensor::kernels::correlation::channel_of(0, 0, 4);
    for y in 0..9 {
        for x in 0..9 {
            assert_eq!(argmax_channel(g.value(cv), y, x), zero);
        }
    }
}

#[test]
fn shifted_correlation_peaks_at_shift() {
    let (c, h, w) = (16, 9, 9);
    let f = distinct_features(c, h, w, 22);
    // f2(x + 1, y) = f1(x, y)
    let mut f2 = Tensor::uniform(&[1, c, h, w], -1.0, 1.0, &mut rng(23));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w - 1 {
                f2.data_mut()[(ch * h + y) * w + x + 1] = f.data()[(ch * h + y) * w + x];
            }
        }
    }
    let mut g = Graph::<f32>::new();
    let a = g.constant(f);
    let b = g.constant(f2);
    let cv = g.correlation(a, b, 4).unwrap();
    let want = blurwarp_tensor::kernels::correlation::channel_of(1, 0, 4);
    for y in 1..h - 1 {
        for x in 1..w - 2 {
            assert_eq!(argmax_channel(g.value(cv), y, x), want);
        }
    }
}

#[test]
fn correlation_with_zero_is_zero() {
    let mut g = Graph::<f32>::new();
    let a = g.constant(distinct_features(4, 5, 5, 2));
    let b = g.constant(Tensor::zeros(&[1, 4, 5, 5]));
    let cv = g.correlation(a, b, 4).unwrap();
    assert!(g.value(cv).data().iter().all(|v| *v == 0.0));
}

fn identity_theta(b: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(&[b, 6]);
    for i in 0..b {
        t.data_mut()[i * 6] = 1.0;
        t.data_mut()[i * 6 + 4] = 1.0;
    }
    t
}

#[test]
fn affine_identity_is_bit_identity() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::uniform(&[2, 3, 6, 5], -1.0, 1.0, &mut rng(4)));
    let th = g.constant(identity_theta(2));
    let y = g.affine_grid_sample(x, th).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn affine_translation_matches_constant_flow() {
    let (h, w) = (6, 9);
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::uniform(&[1, 2, h, w], -1.0, 1.0, &mut rng(8)));
    let mut theta = identity_theta(1);
    // One pixel in normalized units along x.
    theta.data_mut()[2] = 2.0 / (w - 1) as f32;
    let th = g.constant(theta);
    let a = g.affine_grid_sample(x, th).unwrap();
    let mut flow = Tensor::zeros(&[1, 2, h, w]);
    flow.data_mut()[..h * w].fill(1.0);
    let f = g.constant(flow);
    let b = g.grid_sample(x, f).unwrap();
    for (p, q) in g.value(a).data().iter().zip(g.value(b).data()) {
        assert!((p - q).abs() < 1e-5);
    }
}

#[test]
fn affine_zoom_keeps_constant_image() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[1, 1, 7, 7], 0.42));
    let mut theta = identity_theta(1);
    theta.data_mut()[0] = 0.5;
    theta.data_mut()[4] = 0.5;
    let th = g.constant(theta);
    let y = g.affine_grid_sample(x, th).unwrap();
    assert!(g.value(y).data().iter().all(|v| (*v - 0.42).abs() < 1e-7));
}

#[test]
fn upsample_constant_and_flow_scaling() {
    let mut g = Graph::<f32>::new();
    let c = g.constant(Tensor::full(&[1, 3, 4, 5], 0.3));
    let up = g.upsample2x(c).unwrap();
    assert_eq!(g.shape(up), &[1, 3, 8, 10]);
    assert!(g.value(up).data().iter().all(|v| (*v - 0.3).abs() < 1e-7));

    let f = g.constant(Tensor::ones(&[1, 2, 3, 3]));
    let uf = g.upsample_flow2x(f).unwrap();
    assert_eq!(g.shape(uf), &[1, 2, 6, 6]);
    assert!(g.value(uf).data().iter().all(|v| *v == 2.0));
}

#[test]
fn upsample_keeps_ramp_linear_in_interior() {
    let w = 6;
    let ramp: Vec<f64> = (0..w).map(|x| 2.0 * x as f64 + 1.0).collect();
    let mut g = Graph::<f64>::new();
    let r = g.constant(Tensor::new(&[1, 1, 1, w], ramp).unwrap());
    let up = g.upsample2x(r).unwrap();
    let o = &g.value(up).data()[..2 * w];
    // Fine-grid pixel X sits at coarse coordinate X/2 - 0.25.
    for (x, v) in o.iter().enumerate().take(2 * w - 1).skip(1) {
        let want = 2.0 * (x as f64 / 2.0 - 0.25) + 1.0;
        assert!((v - want).abs() < 1e-6);
    }
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut r = rng(99);
        let mut g = Graph::<f32>::new();
        let x = g.variable(Tensor::uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r));
        let w = g.variable(Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r));
        let f = g.variable(Tensor::uniform(&[2, 2, 6, 6], -1.0, 1.0, &mut r));
        let y = g.conv2d(x, w, None, ConvGeom::new(1, 1)).unwrap();
        let y = g.leaky_relu(y, 0.1).unwrap();
        let z = g.grid_sample(y, f).unwrap();
        let c = g.correlation(z, y, 2).unwrap();
        let l = g.abs_mean(c).unwrap();
        g.backward(l).unwrap();
        [x, w, f].map(|v| g.grad(v).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn every_reachable_variable_gets_grad() {
    let mut g = Graph::<f32>::new();
    let a = g.variable(Tensor::ones(&[1, 1, 2, 2]));
    let b = g.leaky_relu(a, 0.1).unwrap();
    let c = g.scale(b, 3.0).unwrap();
    let l = g.mean(c).unwrap();
    g.backward(l).unwrap();
    for v in [a, b, c, l] {
        assert!(g.grad(v).is_some());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_transpose_is_adjoint_of_conv(seed in any::<u64>(), cin in 1usize..4, cout in 1usize..4, hw in 1usize..5) {
        let mut r = rng(seed);
        let x = Tensor::<f32>::uniform(&[1, cin, 2 * hw, 2 * hw], -1.0, 1.0, &mut r);
        let y = Tensor::<f32>::uniform(&[1, cout, hw, hw], -1.0, 1.0, &mut r);
        let w = Tensor::<f32>::uniform(&[cout, cin, 4, 4], -1.0, 1.0, &mut r);
        let mut g = Graph::<f32>::new();
        let (xv, yv, wv) = (g.constant(x.clone()), g.constant(y.clone()), g.constant(w));
        let cx = g.conv2d(xv, wv, None, ConvGeom::new(2, 1)).unwrap();
        let ty = g.conv_transpose2d(yv, wv, None, 2, 1).unwrap();
        let lhs: f64 = g.value(cx).data().iter().zip(y.data()).map(|(a, b)| (*a * *b) as f64).sum();
        let rhs: f64 = x.data().iter().zip(g.value(ty).data()).map(|(a, b)| (*a * *b) as f64).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-4 * (1.0 + lhs.abs()));
    }

    #[test]
    fn zero_flow_warp_is_exact(seed in any::<u64>(), c in 1usize..4, h in 1usize..7, w in 1usize..7) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::uniform(&[1, c, h, w], -10.0, 10.0, &mut rng(seed)));
        let f = g.constant(Tensor::zeros(&[1, 2, h, w]));
        let y = g.grid_sample(x, f).unwrap();
        prop_assert_eq!(g.value(y).data(), g.value(x).data());
    }
}
