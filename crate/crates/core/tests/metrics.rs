use blurwarp::metrics::{epe, mse, psnr, ssim, PSNR_CAP};
use blurwarp_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct SSIM: full 2-D Gaussian window at every valid position, window
/// statistics summed explicitly.
fn ssim_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut kernel = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *k = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *k;
        }
    }
    let (c1, c2) = (0.0001, 0.0009);
    let mut acc = 0.0;
    for p in 0..planes {
        let pa = &a.data()[p * h * w..(p + 1) * h * w];
        let pb = &b.data()[p * h * w..(p + 1) * h * w];
        let mut plane_sum = 0.0;
        let mut count = 0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = kernel[i][j] / total;
                        ma += k * pa[(y + i) * w + x + j] as f64;
                        mb += k * pb[(y + i) * w + x + j] as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = kernel[i][j] / total;
                        let da = pa[(y + i) * w + x + j] as f64 - ma;
                        let db = pb[(y + i) * w + x + j] as f64 - mb;
                        va += k * da * da;
                        vb += k * db * db;
                        cov += k * da * db;
                    }
                }
                plane_sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += plane_sum / count as f64;
    }
    acc / planes as f64
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor {
    Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, rng)
}

#[test]
fn psnr_closed_forms_are_exact() {
    let a = Tensor::full(&[1, 3, 8, 8], 0.5f32);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    // Dyadic values: the squared error is exact in binary.
    for (v, mse_want) in [(0.625f32, 1.0 / 64.0), (0.75, 1.0 / 16.0), (0.0, 0.25), (0.5 + 1.0 / 1024.0, 1.0 / 1048576.0)] {
        let b = Tensor::full(&[1, 3, 8, 8], v);
        assert_eq!(mse(&a, &b).unwrap(), mse_want);
        let want = 10.0 * (1.0 / mse_want).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() <= 1e-9, "{v}");
    }
    // Half the pixels off by 0.25, half exact.
    let mut c = a.clone();
    c.data_mut()[..96].fill(0.75);
    assert!((psnr(&a, &c).unwrap() - 10.0 * 32f64.log10()).abs() <= 1e-9);
    let b = Tensor::full(&[1, 3, 8, 8], 0.6f32);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
}

#[test]
fn ssim_matches_direct_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..10 {
        let (h, w) = (rng.gen_range(11..24), rng.gen_range(11..24));
        let a = random_image(&mut rng, h, w);
        // Correlated partner: noisy, scaled copy.
        let noise = random_image(&mut rng, h, w);
        let mix: f32 = rng.gen_range(0.0..1.0);
        let b = Tensor::new(a.shape(), a.data().iter().zip(noise.data()).map(|(x, n)| (1.0 - mix) * x + mix * n).collect()).unwrap();
        let (got, want) = (ssim(&a, &b).unwrap(), ssim_oracle(&a, &b));
        assert!((got - want).abs() <= 1e-4, "pair {i}: {got} vs {want}");
    }
}

#[test]
fn ssim_of_negative_is_below_one_and_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Symmetric mean: a and 1 - a share the mean 0.5 in expectation.
    let a = random_image(&mut rng, 16, 16);
    let neg = Tensor::new(a.shape(), a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let s = ssim(&a, &neg).unwrap();
    assert!(s < 1.0);
    assert!((s - ssim_oracle(&a, &neg)).abs() <= 1e-4);
}

#[test]
fn ssim_identity_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_image(&mut rng, 13, 17);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = Tensor::uniform(&[1, 3, 16, 16], 0.2, 0.8, &mut rng);
    let base = Tensor::uniform(&[1, 3, 16, 16], -1.0, 1.0, &mut rng);
    let noisy = |amp: f32| Tensor::new(img.shape(), img.data().iter().zip(base.data()).map(|(x, n)| x + amp * n).collect()).unwrap();
    let scores: Vec<f64> = [0.01, 0.05, 0.15].iter().map(|amp| psnr(&img, &noisy(*amp)).unwrap()).collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn epe_closed_form() {
    let mut a = Tensor::zeros(&[2, 2, 3, 3]);
    // Batch 0 off by (3, 4), batch 1 exact.
    a.data_mut()[..9].fill(3.0);
    a.data_mut()[9..18].fill(4.0);
    assert_eq!(epe(&a, &Tensor::zeros(&[2, 2, 3, 3])).unwrap(), 2.5);
}

#[test]
fn metrics_reject_shape_mismatch() {
    let (a, b) = (Tensor::zeros(&[1, 3, 12, 12]), Tensor::zeros(&[1, 3, 12, 13]));
    assert!(psnr(&a, &b).is_err());
    assert!(ssim(&a, &b).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_symmetric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_image(&mut rng, 12, 14), random_image(&mut rng, 12, 14));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
