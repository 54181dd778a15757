use blurwarp::io;
use blurwarp::synth::{
    analytic_flow, average, build_dataset, make_sample, render_sequence, synthesize_blur, DatasetManifest, SceneSampler, SceneSpec, Split,
    Sprite, MANIFEST_FILE,
};
use blurwarp_tensor::{Graph, Tensor};
use proptest::prelude::*;

fn one_sprite(velocity: [f64; 2], camera: [f64; 2], length: usize) -> SceneSpec {
    SceneSpec {
        height: 32,
        width: 48,
        background_seed: 11,
        sprites: vec![Sprite { texture_seed: 5, size: [10.0, 10.0], position: [16.25, 14.25], velocity, rotation: 0.0 }],
        camera,
        length,
    }
}

fn at(t: &Tensor, c: usize, y: usize, x: usize) -> f32 {
    let s = t.shape();
    t.data()[(c * s[2] + y) * s[3] + x]
}

#[test]
fn static_scene_renders_identical_frames() {
    let spec = one_sprite([0.0, 0.0], [0.0, 0.0], 5);
    let frames = render_sequence(&spec).unwrap();
    assert_eq!(frames.len(), 5);
    assert!(frames.iter().all(|f| f == &frames[0]));
    assert!(frames[0].data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn rendering_is_deterministic() {
    let spec = SceneSampler::default().sample(4, 17).unwrap();
    assert_eq!(render_sequence(&spec).unwrap(), render_sequence(&spec).unwrap());
}

#[test]
fn oversize_sprite_is_rejected() {
    let mut spec = one_sprite([0.0, 0.0], [0.0, 0.0], 4);
    spec.sprites[0].size = [40.0, 10.0];
    assert!(render_sequence(&spec).unwrap_err().is_config());
}

#[test]
fn translated_sprite_matches_warped_first_frame() {
    let spec = one_sprite([2.0, 0.0], [0.0, 0.0], 6);
    let frames = render_sequence(&spec).unwrap();
    for k in 1..6 {
        let flow = analytic_flow(&spec, k, 0);
        let mut g = Graph::<f32>::new();
        let src = g.constant(frames[0].clone());
        let f = g.constant(flow);
        let warped = g.grid_sample(src, f).unwrap();
        let warped = g.value(warped).clone();
        // Pixels at least one pixel inside the sprite at frame k.
        let cx = 16.25 + 2.0 * k as f64;
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..48 {
                let inside = (x as f64 - cx).abs() < 4.0 && (y as f64 - 14.25).abs() < 4.0;
                if !inside {
                    continue;
                }
                for c in 0..3 {
                    let (a, b) = (at(&frames[k], c, y, x), at(&warped, c, y, x));
                    assert!((a - b).abs() <= 1e-3, "k={k} ({y},{x}) c={c}: {a} vs {b}");
                }
                checked += 1;
            }
        }
        assert!(checked >= 49);
    }
}

#[test]
fn sprite_flow_follows_source_mask() {
    let spec = one_sprite([1.5, -0.5], [0.0, 0.0], 8);
    for (from, to) in [(0, 3), (2, 7), (5, 1)] {
        let flow = analytic_flow(&spec, from, to);
        let gap = to as f64 - from as f64;
        let (cx, cy) = (16.25 + 1.5 * from as f64, 14.25 - 0.5 * from as f64);
        for y in 0..32 {
            for x in 0..48 {
                let inside = (x as f64 - cx).abs() < 5.0 && (y as f64 - cy).abs() < 5.0;
                let want = if inside { [(1.5 * gap) as f32, (-0.5 * gap) as f32] } else { [0.0, 0.0] };
                assert_eq!([at(&flow, 0, y, x), at(&flow, 1, y, x)], want, "({y},{x}) {from}->{to}");
            }
        }
    }
}

#[test]
fn equal_indices_give_zero_flow() {
    let spec = one_sprite([2.0, 1.0], [0.5, 0.25], 6);
    assert!(analytic_flow(&spec, 3, 3).data().iter().all(|v| *v == 0.0));
}

#[test]
fn blur_examples() {
    let f = |v: f32| Tensor::full(&[1, 3, 4, 4], v);
    let same = vec![f(0.7); 5];
    assert_eq!(synthesize_blur(&same, 2, 5).unwrap(), f(0.7));
    let ramp = vec![f(0.0), f(0.3), f(0.6)];
    let b = synthesize_blur(&ramp, 1, 3).unwrap();
    assert!(b.data().iter().all(|v| (*v - 0.3).abs() < 1e-7));
    assert!(synthesize_blur(&ramp, 0, 3).is_err());
    assert!(synthesize_blur(&ramp, 1, 2).unwrap_err().is_config());
}

#[test]
fn generated_samples_satisfy_the_blur_identity() {
    let sampler = SceneSampler { height: 32, width: 32, sprite_size: [6.0, 12.0], ..SceneSampler::default() };
    for i in 0..12 {
        let s = make_sample(&sampler.sample(1, i).unwrap(), 7).unwrap();
        assert!(s.blur_residual().unwrap() <= 1e-6);
        for w in 0..2 {
            let mut window = s.latents[w * 7..(w + 1) * 7].to_vec();
            window.reverse();
            assert_eq!(average(&window).unwrap().data(), s.blur[w].data(), "reversed window {w} of sample {i}");
        }
        assert_eq!(s.flows.as_ref().unwrap().len(), 24);
        assert_eq!(s.t1(), s.t0 + 7);
    }
}

#[test]
fn manifest_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sampler =
        SceneSampler { height: 16, width: 16, n: 3, sprites: [1, 2], sprite_size: [4.0, 6.0], speed: [0.5, 1.0], ..Default::default() };
    let specs: Vec<_> = (0..3).map(|i| sampler.sample(2, i).unwrap()).collect();
    build_dataset(&specs, dir.path(), 3, Split::Train).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let first = std::fs::read(&path).unwrap();
    let m = DatasetManifest::read(&path).unwrap();
    m.write(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);

    let (_, samples) = DatasetManifest::open(&path).unwrap();
    for (s, rec) in samples.iter().zip(&m.samples) {
        assert!(s.blur_residual().unwrap() <= 1e-6);
        // The blur PNGs are 8-bit copies of the same means.
        for w in 0..2 {
            let stored = io::read_png(&dir.path().join(&rec.blur[w])).unwrap();
            let worst = stored.data().iter().zip(s.blur[w].data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(worst <= 0.5 / 255.0 + 1e-6);
        }
        let want = make_sample(rec.scene.as_ref().unwrap(), 3).unwrap();
        assert_eq!(s.flows, want.flows);
    }
}

#[test]
fn manifest_with_missing_file_fails_as_io() {
    let dir = tempfile::tempdir().unwrap();
    let sampler =
        SceneSampler { height: 16, width: 16, n: 3, sprites: [1, 1], sprite_size: [4.0, 6.0], speed: [0.5, 1.0], ..Default::default() };
    let m = build_dataset(&[sampler.sample(0, 0).unwrap()], dir.path(), 3, Split::Test).unwrap();
    std::fs::remove_file(dir.path().join(&m.samples[0].latents[2])).unwrap();
    assert!(DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap_err().is_io());
}

#[test]
fn scene_specs_survive_json_exactly() {
    let sampler = SceneSampler::default();
    for i in 0..300 {
        let spec = sampler.sample(17, i).unwrap();
        let back: SceneSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec, "scene {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn camera_flow_is_additive(vx in -192i32..192, vy in -192i32..192, a in 0usize..10, b in 0usize..10, c in 0usize..10) {
        let camera = [vx as f64 / 64.0, vy as f64 / 64.0];
        let spec = SceneSpec { sprites: vec![], ..one_sprite([0.0, 0.0], camera, 10) };
        let (ab, bc, ac) = (analytic_flow(&spec, a, b), analytic_flow(&spec, b, c), analytic_flow(&spec, a, c));
        for i in 0..ac.numel() {
            prop_assert_eq!(ab.data()[i] + bc.data()[i], ac.data()[i]);
        }
        let gap = c as f64 - a as f64;
        prop_assert!(ac.data()[..32 * 48].iter().all(|v| *v == (camera[0] * gap) as f32));
    }

    #[test]
    fn reversed_windows_average_identically(seed in 0u64..1000, n in prop::sample::select(vec![3usize, 5, 7, 9])) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Tensor> = (0..n).map(|_| Tensor::uniform(&[1, 3, 5, 6], 0.0, 1.0, &mut rng)).collect();
        let mut rev = frames.clone();
        rev.reverse();
        prop_assert_eq!(average(&frames).unwrap(), average(&rev).unwrap());
    }
}
