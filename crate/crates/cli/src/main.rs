//! `blurwarp`: data synthesis, training, inference, evaluation and checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blurwarp::config::RunConfig;
use blurwarp::eval::{analytic_order_check, evaluate, evaluate_copy_blur, model_order_check};
use blurwarp::indexing::FrameIndexing;
use blurwarp::io::{read_png, write_flo, write_png};
use blurwarp::model::{ModelConfig, Pipeline, Prediction};
use blurwarp::order::{apply_order, apply_order_flows, decide_from_flows};
use blurwarp::synth::{ingest_frames, DatasetManifest, DatasetSpec, Split, MANIFEST_FILE};
use blurwarp::train::{train, Trainer};
use blurwarp::viz::flow_to_color;
use blurwarp::Error;
use blurwarp_tensor::{gradcheck, Checkpoint, Tensor};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "blurwarp", version, about = "Deblur, interpolate and extrapolate frames from blurry pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset, or ingest a directory of sharp frames.
    SynthData {
        /// Dataset spec (TOML, or JSON by extension); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Sharp frames to group into blurry pairs instead of synthesizing.
        #[arg(long)]
        ingest: Option<PathBuf>,
        /// Frames per blur when ingesting.
        #[arg(long, default_value_t = 7)]
        n: usize,
    },
    /// Train a model; writes checkpoints and a JSON-lines log to the run dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `section.key=value` overrides, e.g. `train.epochs=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restore 2N ordered frames and their flows from one pair or a manifest.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Run config; defaults to config.json beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "input_b")]
        input_a: Option<PathBuf>,
        #[arg(long, requires = "input_a")]
        input_b: Option<PathBuf>,
        #[arg(long, conflicts_with = "input_a")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint (or the copy-blur baseline) on a manifest.
    Eval {
        #[arg(long, required_unless_present = "baseline")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the copy-blur baseline instead of a model.
        #[arg(long)]
        baseline: bool,
        /// Also write per-frame scores as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Ordering-rule decisions and accuracy on a manifest.
    OrderCheck {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable op.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

enum Failure {
    Core(Error),
    Gradcheck(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<blurwarp_tensor::TensorError> for Failure {
    fn from(e: blurwarp_tensor::TensorError) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn kind_and_code(&self) -> (&'static str, u8) {
        match self {
            Failure::Gradcheck(_) => ("gradcheck", 5),
            Failure::Core(Error::Numeric(_)) => ("numeric", 4),
            Failure::Core(e) if e.is_io() => ("io", 3),
            Failure::Core(Error::Data(_)) => ("data", 3),
            Failure::Core(Error::Tensor(blurwarp_tensor::TensorError::Checkpoint(_))) => ("data", 3),
            Failure::Core(e) if e.is_config() => ("config", 2),
            Failure::Core(_) => ("contract", 2),
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Gradcheck(m) => m.clone(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), Error> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn cmd_synth_data(spec: Option<PathBuf>, out: PathBuf, seed: Option<u64>, ingest: Option<PathBuf>, n: usize) -> CmdResult {
    if let Some(frames) = ingest {
        let m = ingest_frames(&frames, &out, n, Split::Test)?;
        println!("{}", json!({"samples": m.samples.len(), "manifest": out.join(MANIFEST_FILE)}));
        return Ok(());
    }
    let mut spec = match spec {
        // A full run config works too: its `dataset` table is used.
        Some(p) => match DatasetSpec::load(&p) {
            Err(e) if e.is_config() => RunConfig::load(&p, &[]).map(|c| c.dataset).map_err(|_| e)?,
            other => other?,
        },
        None => DatasetSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (train, test) = spec.generate(&out)?;
    println!(
        "{}",
        json!({
            "train": {"samples": train.samples.len(), "manifest": out.join("train").join(MANIFEST_FILE)},
            "test": {"samples": test.samples.len(), "manifest": out.join("test").join(MANIFEST_FILE)},
        })
    );
    Ok(())
}

fn cmd_train(
    config: PathBuf,
    out: PathBuf,
    mut overrides: Vec<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    resume: Option<PathBuf>,
) -> CmdResult {
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(e) = epochs {
        overrides.push(format!("train.epochs={e}"));
    }
    let cfg = RunConfig::load(&config, &overrides)?;
    let manifest = cfg.train_manifest.clone().ok_or_else(|| Error::Config("config sets no train_manifest".into()))?;
    let (m, data) = DatasetManifest::open(&manifest)?;
    if m.n != cfg.model.n {
        return Err(Error::Config(format!("manifest N={} differs from model N={}", m.n, cfg.model.n)).into());
    }
    create_dir(&out)?;
    write_text(&out.join("config.json"), &cfg.to_json())?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(cfg.model.clone(), cfg.train.clone(), &Checkpoint::load(&path)?)?,
        None => Trainer::new(cfg.model.clone(), cfg.train.clone())?,
    };
    let logs = train(&mut trainer, &data, &out)?;
    let last = logs.last();
    println!(
        "{}",
        json!({
            "epochs": trainer.epoch,
            "steps": trainer.step,
            "final_total": last.map(|l| l.total),
            "run_dir": out,
        })
    );
    Ok(())
}

/// The model config for a checkpoint: `--config`, else the run dir's
/// `config.json`.
fn model_config(ckpt: &Path, config: Option<&Path>) -> Result<ModelConfig, Error> {
    let path = match config {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join("config.json"),
    };
    if !path.is_file() {
        return Err(Error::Io(format!("{}: run config not found (pass --config)", path.display())));
    }
    Ok(RunConfig::load(&path, &[])?.model)
}

fn load_pipeline(ckpt: &Path, config: Option<&Path>) -> Result<Pipeline, Error> {
    let model = model_config(ckpt, config)?;
    let c = Checkpoint::load(ckpt)?;
    Pipeline::from_params(model, &c.params()?)
}

fn write_prediction(ix: &FrameIndexing, pred: Prediction, dir: &Path) -> Result<serde_json::Value, Error> {
    let (frames, flows, decisions) = if pred.flows.is_empty() {
        (pred.frames, Vec::new(), None)
    } else {
        let d = decide_from_flows(ix, &pred.flows)?;
        (apply_order(ix, &pred.frames, &d)?, apply_order_flows(ix, &pred.flows, &d)?, Some(d))
    };
    let frame_dir = dir.join("frames");
    create_dir(&frame_dir)?;
    for (i, f) in frames.iter().enumerate() {
        let clamped = Tensor::new(f.shape(), f.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
        write_png(&frame_dir.join(format!("frame_{i:03}.png")), &clamped)?;
    }
    if !flows.is_empty() {
        let flow_dir = dir.join("flows");
        create_dir(&flow_dir)?;
        let radius = flows.iter().flat_map(|f| {
            let (u, v) = f.data().split_at(f.numel() / 2);
            u.iter().zip(v).map(|(a, b)| (*a as f64).hypot(*b as f64)).collect::<Vec<_>>()
        });
        let radius = radius.fold(0.0, f64::max);
        for (f, (s, r)) in flows.iter().zip(ix.flow_pairs()) {
            let stem = format!("flow_{s:02}_to_{:02}", ix.ref_slot(r));
            write_flo(&flow_dir.join(format!("{stem}.flo")), f)?;
            write_png(&flow_dir.join(format!("{stem}.png")), &flow_to_color(f, Some(radius))?)?;
        }
    }
    Ok(json!({ "frames": frames.len(), "flows": flows.len(), "decisions": decisions }))
}

fn cmd_infer(
    ckpt: PathBuf,
    config: Option<PathBuf>,
    input_a: Option<PathBuf>,
    input_b: Option<PathBuf>,
    manifest: Option<PathBuf>,
    out: PathBuf,
) -> CmdResult {
    let pipeline = load_pipeline(&ckpt, config.as_deref())?;
    let ix = pipeline.config.indexing()?;
    create_dir(&out)?;
    let summary = match (input_a, input_b, manifest) {
        (Some(a), Some(b), None) => {
            let (ta, tb) = (read_png(&a)?, read_png(&b)?);
            if ta.shape() != tb.shape() {
                return Err(Error::Data(format!("inputs differ in size: {:?} vs {:?}", ta.shape(), tb.shape())).into());
            }
            let pred = pipeline.predict(&ta, &tb)?.remove(0);
            let s = write_prediction(&ix, pred, &out)?;
            write_text(&out.join("order.json"), &(serde_json::to_string_pretty(&s["decisions"]).expect("json") + "\n"))?;
            s
        }
        (None, None, Some(m)) => {
            let (_, samples) = DatasetManifest::open(&m)?;
            let mut all = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let pred = pipeline.predict(&s.blur[0], &s.blur[1])?.remove(0);
                let dir = out.join(format!("sample_{i:04}"));
                let summary = write_prediction(&ix, pred, &dir)?;
                write_text(&dir.join("order.json"), &(serde_json::to_string_pretty(&summary["decisions"]).expect("json") + "\n"))?;
                all.push(summary);
            }
            json!({ "samples": all.len() })
        }
        _ => return Err(Error::Config("infer needs --input-a and --input-b, or --manifest".into()).into()),
    };
    println!("{}", json!({ "out": out, "summary": summary }));
    Ok(())
}

fn cmd_eval(
    ckpt: Option<PathBuf>,
    config: Option<PathBuf>,
    manifest: PathBuf,
    out: PathBuf,
    baseline: bool,
    csv: Option<PathBuf>,
) -> CmdResult {
    let (m, samples) = DatasetManifest::open(&manifest)?;
    let report = if baseline {
        evaluate_copy_blur(&samples)?
    } else {
        let ckpt = ckpt.ok_or_else(|| Error::Config("eval needs --ckpt or --baseline".into()))?;
        evaluate(&load_pipeline(&ckpt, config.as_deref())?, &samples, &m.translation_mask())?
    };
    write_text(&out, &report.to_json())?;
    if let Some(c) = csv {
        write_text(&c, &report.frame_csv())?;
    }
    println!(
        "{}",
        json!({
            "samples": report.samples,
            "psnr": report.psnr,
            "ssim": report.ssim,
            "deblur_psnr": report.deblur_psnr,
            "deblur_ssim": report.deblur_ssim,
            "epe": report.epe,
            "epe_translation": report.epe_translation,
            "order_accuracy": report.order_accuracy,
        })
    );
    Ok(())
}

fn cmd_order_check(ckpt: Option<PathBuf>, config: Option<PathBuf>, manifest: PathBuf, out: Option<PathBuf>) -> CmdResult {
    let (m, samples) = DatasetManifest::open(&manifest)?;
    let analytic = if samples.iter().all(|s| s.flows.is_some()) { Some(analytic_order_check(&samples)?) } else { None };
    let model = match ckpt {
        Some(c) => Some(model_order_check(&evaluate(&load_pipeline(&c, config.as_deref())?, &samples, &m.translation_mask())?)),
        None => None,
    };
    if analytic.is_none() && model.is_none() {
        return Err(Error::Data("manifest has no ground-truth flows and no checkpoint was given".into()).into());
    }
    let text = serde_json::to_string_pretty(&json!({ "analytic": analytic, "model": model })).expect("json") + "\n";
    match out {
        Some(p) => {
            write_text(&p, &text)?;
            println!(
                "{}",
                json!({
                    "analytic_accuracy": analytic.as_ref().map(|r| r.accuracy),
                    "model_accuracy": model.as_ref().map(|r| r.accuracy),
                })
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_gradcheck(instances: usize, tolerance: f64, seed: u64) -> CmdResult {
    let reports = gradcheck::run_suite(instances, tolerance, seed)?;
    println!("{:<28} {:>9} {:>12} {:>10}  result", "op", "instances", "max rel err", "tolerance");
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passed();
        println!("{:<28} {:>9} {:>12.3e} {:>10.1e}  {}", r.name, r.instances, r.max_rel_err, r.tolerance, if ok { "pass" } else { "FAIL" });
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gradcheck(format!("{} op(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::SynthData { spec, out, seed, ingest, n } => cmd_synth_data(spec, out, seed, ingest, n),
        Command::Train { config, out, overrides, seed, epochs, resume } => cmd_train(config, out, overrides, seed, epochs, resume),
        Command::Infer { ckpt, config, input_a, input_b, manifest, out } => cmd_infer(ckpt, config, input_a, input_b, manifest, out),
        Command::Eval { ckpt, config, manifest, out, baseline, csv } => cmd_eval(ckpt, config, manifest, out, baseline, csv),
        Command::OrderCheck { ckpt, config, manifest, out } => cmd_order_check(ckpt, config, manifest, out),
        Command::Gradcheck { instances, tolerance, seed } => cmd_gradcheck(instances, tolerance, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, code) = f.kind_and_code();
            let msg = f.message().replace('\n', " ");
            eprintln!("error[{kind}]: {msg}");
            ExitCode::from(code)
        }
    }
}
