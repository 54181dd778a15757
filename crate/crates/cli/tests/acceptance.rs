//! Acceptance run: one PASS/FAIL line per criterion, then a summary.
//!
//! The training criteria run the full 30-epoch schedule on the 64x64
//! synthetic set and take most of an hour on one core.
//! `BLURWARP_ACCEPTANCE_EPOCHS=<e>` shortens them for a dry run; the
//! thresholds are unchanged.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use blurwarp::eval::{analytic_order_check, evaluate, evaluate_copy_blur, model_order_check, EvalReport};
use blurwarp::indexing::FrameIndexing;
use blurwarp::metrics::{psnr, ssim};
use blurwarp::model::{forward, init_params, ModelConfig, Variant};
use blurwarp::synth::{average, make_sample, DatasetSpec, SceneSampler, SequenceSample, Split};
use blurwarp::train::{sample_objective, Targets, TrainConfig, Trainer};
use blurwarp_tensor::gradcheck::{relative_error, run_suite};
use blurwarp_tensor::{Binder, Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) -> String {
    format!("{} {:>2}  {:<28} {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title, o.detail)
}

fn report(all: &mut Vec<Outcome>, id: u32, title: &'static str, pass: bool, detail: String) {
    let o = Outcome { id, title, pass, detail };
    println!("{}", line(&o));
    all.push(o);
}

fn tiny(n: usize) -> ModelConfig {
    ModelConfig {
        levels: 3,
        channels: vec![4, 6, 8],
        n,
        max_disp: 2,
        stn_width: 4,
        synth_width: 4,
        flow_widths: [6, 4],
        context_width: 4,
        ..ModelConfig::default()
    }
}

fn tiny_train() -> TrainConfig {
    TrainConfig { frame_weights: vec![0.005, 0.01, 0.02], flow_weights: vec![0.005, 0.01, 0.02], crop: 0, ..TrainConfig::default() }
}

/// Reduced channel and head widths; layout, depth and schedule are the defaults.
fn desk_model() -> ModelConfig {
    ModelConfig {
        channels: vec![8, 16, 16, 32, 32, 48],
        flow_widths: [8, 8],
        context_width: 8,
        synth_width: 8,
        stn_width: 8,
        ..ModelConfig::default()
    }
}

fn end_to_end_gradient_error() -> f64 {
    let model = tiny(3);
    let train = tiny_train();
    let sampler = SceneSampler {
        height: 16,
        width: 16,
        n: 3,
        sprites: [1, 2],
        sprite_size: [4.0, 6.0],
        speed: [0.5, 1.0],
        ..SceneSampler::default()
    };
    let sample = make_sample(&sampler.sample(5, 0).unwrap(), 3).unwrap();
    let targets = Targets::new(&sample, model.levels).unwrap();
    let mut params = init_params(&model).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ids: Vec<_> = params.ids().collect();
    for id in &ids {
        for v in params.get_mut(*id).data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let loss_at = |p: &ParamStore<f64>| -> f64 {
        let (g, _, parts) = sample_objective(&model, &train, p, &sample, &targets, (1.0, 1.0)).unwrap();
        g.item(parts.total)
    };
    let (mut g, binder, parts) = sample_objective(&model, &train, &params, &sample, &targets, (1.0, 1.0)).unwrap();
    g.backward(parts.total).unwrap();
    let mut with_grads = params.clone();
    binder.harvest(&g, &mut with_grads);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let eps = 1e-6;
    for _ in 0..48 {
        let id = ids[rng.gen_range(0..ids.len())];
        let i = rng.gen_range(0..params.get(id).numel());
        analytic.push(with_grads.get(id).grad().map_or(0.0, |g| g[i]));
        let mut plus = params.clone();
        plus.get_mut(id).data_mut()[i] += eps;
        let mut minus = params.clone();
        minus.get_mut(id).data_mut()[i] -= eps;
        numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * eps));
    }
    relative_error(&analytic, &numeric)
}

fn criterion_gradients(all: &mut Vec<Outcome>) {
    let start = Instant::now();
    let ops = run_suite(5, 1e-4, 2024).unwrap();
    let failed: Vec<_> = ops.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let worst = ops.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let e2e = end_to_end_gradient_error();
    let secs = start.elapsed().as_secs_f64();
    report(
        all,
        1,
        "gradient integrity",
        failed.is_empty() && e2e <= 1e-3 && secs < 120.0,
        format!(
            "{} ops x5, worst rel err {worst:.2e} (tol 1e-4), failed {failed:?}; end-to-end {e2e:.2e} (tol 1e-3); {secs:.0}s (< 120s)",
            ops.len()
        ),
    );
}

fn criterion_blur(all: &mut Vec<Outcome>, samples: &[&SequenceSample]) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut reversed_equal = 0;
    for s in samples {
        worst = worst.max(s.blur_residual().unwrap());
        let n = s.indexing.n;
        let same = (0..2).all(|w| {
            let rev: Vec<Tensor> = s.latents[w * n..(w + 1) * n].iter().rev().cloned().collect();
            average(&rev).unwrap().data() == s.blur[w].data()
        });
        reversed_equal += same as usize;
    }
    report(
        all,
        2,
        "blur-model identity",
        worst <= 1e-6 && reversed_equal == samples.len(),
        format!(
            "{} samples, max |mean - blur| {worst:.1e} (<= 1e-6), reversed windows bit-identical {reversed_equal}/{}; {:.1}s",
            samples.len(),
            samples.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

fn criterion_count(all: &mut Vec<Outcome>) {
    let cfg = ModelConfig::default();
    let ix = FrameIndexing::new(cfg.n).unwrap();
    let params = init_params(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Tensor::uniform(&[1, 3, 64, 64], 0.0, 1.0, &mut rng);
    let b = Tensor::uniform(&[1, 3, 64, 64], 0.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let out = forward(&cfg, &params, &mut g, &mut binder, &a, &b).unwrap();
    let counts: Vec<(usize, usize)> =
        (0..out.levels()).map(|l| (g.shape(out.ref_frames[l])[0] + g.shape(out.nonmid_frames[l])[0], g.shape(out.flows[l])[0])).collect();
    let pass =
        counts.len() == cfg.levels && counts.iter().all(|c| *c == (2 * ix.n, 4 * ix.n - 4)) && ix.total() == 14 && ix.num_flows() == 24;
    report(all, 3, "count law", pass, format!("N=7, frames/flows per level {counts:?} (want (14, 24) at all {} levels)", cfg.levels));
}

fn criterion_metrics(all: &mut Vec<Outcome>) {
    let a = Tensor::full(&[1, 3, 8, 8], 0.5f32);
    let mut worst_psnr = 0.0f64;
    for (v, mse) in [(0.625f32, 1.0 / 64.0), (0.75, 1.0 / 16.0), (0.0, 0.25), (0.5 + 1.0 / 1024.0, 1.0 / 1048576.0)] {
        let b = Tensor::full(&[1, 3, 8, 8], v);
        worst_psnr = worst_psnr.max((psnr(&a, &b).unwrap() - 10.0 * (1.0f64 / mse).log10()).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_ssim = 0.0f64;
    for _ in 0..10 {
        let (h, w) = (rng.gen_range(11..24), rng.gen_range(11..24));
        let x = Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
        let noise = Tensor::uniform(&[1, 3, h, w], 0.0, 1.0, &mut rng);
        let mix: f32 = rng.gen_range(0.0..1.0);
        let y = Tensor::new(x.shape(), x.data().iter().zip(noise.data()).map(|(p, q)| (1.0 - mix) * p + mix * q).collect()).unwrap();
        worst_ssim = worst_ssim.max((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs());
    }
    report(
        all,
        8,
        "metric oracles",
        worst_psnr <= 1e-9 && worst_ssim <= 1e-4,
        format!(
            "PSNR closed forms max err {worst_psnr:.1e} (<= 1e-9); SSIM vs direct oracle on 10 pairs max err {worst_ssim:.1e} (<= 1e-4)"
        ),
    );
}

/// Direct SSIM: 11x11 Gaussian window (sigma 1.5) at every valid position.
fn ssim_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut k = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    for p in 0..planes {
        let (pa, pb) = (&a.data()[p * h * w..(p + 1) * h * w], &b.data()[p * h * w..(p + 1) * h * w]);
        let (mut sum, mut count) = (0.0, 0);
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let at = |img: &[f32], i: usize, j: usize| img[(y + i) * w + x + j] as f64;
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        ma += k[i][j] / total * at(pa, i, j);
                        mb += k[i][j] / total * at(pb, i, j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let (da, db) = (at(pa, i, j) - ma, at(pb, i, j) - mb);
                        va += k[i][j] / total * da * da;
                        vb += k[i][j] / total * db * db;
                        cov += k[i][j] / total * da * db;
                    }
                }
                sum += (2.0 * ma * mb + 1e-4) * (2.0 * cov + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / planes as f64
}

fn blurwarp(args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_blurwarp")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("blurwarp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let other = fs::read_dir(b).unwrap().count();
    names.len() == other
        && names.iter().all(|n| {
            let (pa, pb) = (a.join(n), b.join(n));
            if pa.is_dir() {
                same_tree(&pa, &pb)
            } else {
                fs::read(&pa).ok() == fs::read(&pb).ok()
            }
        })
}

fn criterion_determinism(all: &mut Vec<Outcome>) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    fs::write(
        dir.join("spec.toml"),
        "train = 4\ntest = 1\nseed = 9\n[sampler]\nheight = 24\nwidth = 24\nn = 7\nsprite_size = [6.0, 9.0]\n",
    )
    .unwrap();
    let cfg = "train_manifest = \"data/train/manifest.json\"\nseed = 5\n[model]\nlevels = 3\nchannels = [4, 6, 8]\nmax_disp = 2\nstn_width = 4\nsynth_width = 4\nflow_widths = [6, 4]\ncontext_width = 4\n[train]\nepochs = 2\nwarmup_epochs = 1\nbatch_size = 2\ncrop = 16\nframe_weights = [0.005, 0.01, 0.02]\nflow_weights = [0.005, 0.01, 0.02]\n[dataset.sampler]\nheight = 24\nwidth = 24\n";
    fs::write(dir.join("run.toml"), cfg).unwrap();
    let mut ok = blurwarp(&["synth-data", "--spec", &s(&dir.join("spec.toml")), "--out", &s(&dir.join("data"))]);
    for r in ["run1", "run2"] {
        ok &= blurwarp(&["train", "--config", &s(&dir.join("run.toml")), "--out", &s(&dir.join(r))]);
    }
    let logs_equal = ok && fs::read(dir.join("run1/log.jsonl")).ok() == fs::read(dir.join("run2/log.jsonl")).ok();
    let ckpts_equal = ok && fs::read(dir.join("run1/ckpt_epoch1.bwck")).ok() == fs::read(dir.join("run2/ckpt_epoch1.bwck")).ok();
    let (a, b) = (s(&dir.join("data/test/sample_0000/blur_0.png")), s(&dir.join("data/test/sample_0000/blur_1.png")));
    for o in ["infer1", "infer2"] {
        ok &= blurwarp(&[
            "infer",
            "--ckpt",
            &s(&dir.join("run1/ckpt_epoch1.bwck")),
            "--input-a",
            &a,
            "--input-b",
            &b,
            "--out",
            &s(&dir.join(o)),
        ]);
    }
    let infer_equal = ok && same_tree(&dir.join("infer1"), &dir.join("infer2"));
    report(
        all,
        9,
        "determinism",
        ok && logs_equal && ckpts_equal && infer_equal,
        format!("commands ok {ok}; train logs identical {logs_equal}; checkpoints identical {ckpts_equal}; infer outputs identical {infer_equal}"),
    );
}

struct Run {
    report: EvalReport,
    secs: f64,
    /// Synthesis parameters bit-unchanged through every warm-up epoch.
    warmup_frozen: bool,
    /// ... and changed once warm-up ended.
    synth_moved: bool,
}

fn train_run(name: &str, model: ModelConfig, cfg: TrainConfig, train: &[SequenceSample], test: &[SequenceSample], mask: &[bool]) -> Run {
    let start = Instant::now();
    let mut t = Trainer::new(model, cfg).unwrap();
    let ids = t.pipeline.synthesis_ids();
    let snapshot = |t: &Trainer| -> Vec<Vec<f32>> { ids.iter().map(|id| t.pipeline.params.get(*id).data().to_vec()).collect() };
    let initial = snapshot(&t);
    let (mut warmup_frozen, mut synth_moved) = (true, false);
    while t.epoch < t.config.epochs {
        let (mut total, mut steps) = (0.0, 0);
        t.run_epoch(train, |s| {
            total += s.total;
            steps += 1;
            Ok(())
        })
        .unwrap();
        let now = snapshot(&t);
        if t.epoch <= t.config.warmup_epochs {
            warmup_frozen &= now == initial;
        } else {
            synth_moved |= now != initial;
        }
        eprintln!(
            "  {name} epoch {}/{} mean loss {:.5} ({:.0}s)",
            t.epoch,
            t.config.epochs,
            total / steps.max(1) as f64,
            start.elapsed().as_secs_f64()
        );
    }
    let secs = start.elapsed().as_secs_f64();
    let report = evaluate(&t.pipeline, test, mask).unwrap();
    eprintln!(
        "  {name}: psnr {:.3} ssim {:.4} deblur {:.3} epe {:?} epe_translation {:?} order {:?}",
        report.psnr, report.ssim, report.deblur_psnr, report.epe, report.epe_translation, report.order_accuracy
    );
    Run { report, secs, warmup_frozen, synth_moved }
}

fn main() {
    let started = Instant::now();
    let mut all = Vec::new();
    criterion_gradients(&mut all);

    let spec = DatasetSpec::default();
    let load = |split| {
        let scenes = spec.scenes(split).unwrap();
        let samples: Vec<SequenceSample> = scenes.iter().map(|s| make_sample(s, spec.sampler.n).unwrap()).collect();
        let mask: Vec<bool> = scenes.iter().map(|s| s.is_constant_translation()).collect();
        (samples, mask)
    };
    let (train, _) = load(Split::Train);
    let (test, mask) = load(Split::Test);
    criterion_blur(&mut all, &train.iter().chain(&test).collect::<Vec<_>>());
    criterion_count(&mut all);

    let analytic = analytic_order_check(&train).unwrap();
    let min_speed = spec.sampler.speed[0];
    eprintln!(
        "  ordering rule on analytic flows: {}/{} ({} pairs, speeds >= {min_speed} px/frame)",
        analytic.correct,
        analytic.decisions,
        train.len()
    );

    criterion_metrics(&mut all);
    criterion_determinism(&mut all);

    let mut cfg = TrainConfig::default();
    if let Some(e) = std::env::var("BLURWARP_ACCEPTANCE_EPOCHS").ok().and_then(|v| v.parse::<usize>().ok()) {
        eprintln!("  dry run: {e} epochs instead of {}", cfg.epochs);
        cfg.lr_milestones = cfg.lr_milestones.iter().map(|m| m * e / cfg.epochs).collect();
        cfg.warmup_epochs = cfg.warmup_epochs.min(e.saturating_sub(1));
        cfg.epochs = e;
    }
    let baseline = evaluate_copy_blur(&test).unwrap();
    eprintln!("  copy-blur baseline: psnr {:.3} ssim {:.4}", baseline.psnr, baseline.ssim);

    let full = train_run("full", desk_model(), cfg.clone(), &train, &test, &mask);
    let model_order = model_order_check(&full.report);
    report(
        &mut all,
        4,
        "ordering rule",
        analytic.accuracy == 1.0 && train.len() >= 200 && model_order.accuracy >= 0.95 && full.secs < 600.0,
        format!(
            "analytic flows {}/{} on {} pairs (want 100%); model flows {:.1}% ({} ties) (want >= 95%); training + check {:.0}s (< 600s)",
            analytic.correct,
            analytic.decisions,
            train.len(),
            100.0 * model_order.accuracy,
            model_order.ties,
            full.secs
        ),
    );
    let gain = full.report.psnr - baseline.psnr;
    let epe = full.report.epe_translation.unwrap_or(f64::INFINITY);
    report(
        &mut all,
        5,
        "desk-scale training",
        gain >= 2.0 && epe < 0.5 && full.secs <= 3600.0,
        format!(
            "{} epochs: psnr {:.3} vs copy-blur {:.3} ({gain:+.3} dB, want >= 2.0); translation EPE {epe:.3} px (want < 0.5); {:.0}s (<= 3600s)",
            cfg.epochs, full.report.psnr, baseline.psnr, full.secs
        ),
    );
    report(
        &mut all,
        7,
        "warm-up freeze",
        full.warmup_frozen && (full.synth_moved || cfg.epochs <= cfg.warmup_epochs),
        format!(
            "synthesis heads bit-unchanged over {} warm-up epochs: {}; updated afterwards: {}",
            cfg.warmup_epochs, full.warmup_frozen, full.synth_moved
        ),
    );

    let no_stn = train_run("no-stn", desk_model().variant(Variant::NoStn), cfg.clone(), &train, &test, &mask);
    let no_flow = train_run("no-flow", desk_model().variant(Variant::NoFlow), cfg.clone(), &train, &test, &mask);
    let (a, b, c) = (full.report.psnr, no_stn.report.psnr, no_flow.report.psnr);
    report(
        &mut all,
        6,
        "ablation ranking",
        a > b && b > c,
        format!("full {a:.6} > no-stn {b:.6} > no-flow {c:.6} dB (gaps {:+.2e}, {:+.2e})", a - b, b - c),
    );

    all.sort_by_key(|o| o.id);
    let passed = all.iter().filter(|o| o.pass).count();
    println!("\nsummary ({:.0}s):", started.elapsed().as_secs_f64());
    for o in &all {
        println!("{}", line(o));
    }
    println!("{passed}/{} criteria pass", all.len());
}
