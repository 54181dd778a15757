//! Losses, schedule, checkpointing and the training loop.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use blurwarp_tensor::kernels::resize;
use blurwarp_tensor::{AdamConfig, AdamState, Binder, Checkpoint, Graph, ParamStore, Scalar, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexing::FrameIndexing;
use crate::model::{forward, is_synthesis_param, ForwardOutput, ModelConfig, Pipeline};
use crate::synth::SequenceSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Frame loss weight per level, level 1 first.
    pub frame_weights: Vec<f64>,
    /// Flow loss weight per level, level 1 first.
    pub flow_weights: Vec<f64>,
    pub epochs: usize,
    /// Epochs `0..warmup_epochs` train the flow path only.
    pub warmup_epochs: usize,
    pub lr: f64,
    /// 0-based epochs at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Square training crop; 0 trains on whole frames.
    pub crop: usize,
    pub seed: u64,
    /// Score each window against both temporal orders and keep the better.
    pub order_agnostic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = vec![0.005, 0.01, 0.02, 0.04, 0.08, 0.32];
        Self {
            frame_weights: w.clone(),
            flow_weights: w,
            epochs: 30,
            warmup_epochs: 4,
            lr: 1e-4,
            lr_milestones: vec![15, 20, 25],
            lr_decay: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 4e-4,
            batch_size: 4,
            crop: 32,
            seed: 0,
            order_agnostic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.frame_weights.len() != model.levels || self.flow_weights.len() != model.levels {
            return Err(Error::Config(format!(
                "loss weights need {} levels, got {} frame and {} flow",
                model.levels,
                self.frame_weights.len(),
                self.flow_weights.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.crop != 0 && !self.crop.is_multiple_of(model.granularity()) {
            return Err(Error::Config(format!("crop {} is not a multiple of {}", self.crop, model.granularity())));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    /// `(α1, α2)` for a 0-based epoch.
    pub fn alphas(&self, epoch: usize, has_flow: bool) -> (f64, f64) {
        if !has_flow {
            (1.0, 0.0)
        } else if epoch < self.warmup_epochs {
            (0.0, 1.0)
        } else {
            (1.0, 1.0)
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_milestones.iter().filter(|m| **m <= epoch).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

// ------------------------------------------------------------------ losses

/// `Σ_n Σ_l w_l · mean|pred − gt|`; `pred[n][l]` against `gt[n][l]`.
pub fn frame_loss<T: Scalar>(g: &mut Graph<T>, pred: &[Vec<Var>], gt: &[Vec<Var>], weights: &[f64]) -> Result<Var> {
    weighted_sum(g, pred, gt, weights, |g, p, t| {
        let d = g.sub(p, t)?;
        g.abs_mean(d)
    })
}

/// `Σ_m Σ_l ŵ_l · EPE(pred, gt)`.
pub fn flow_loss<T: Scalar>(g: &mut Graph<T>, pred: &[Vec<Var>], gt: &[Vec<Var>], weights: &[f64]) -> Result<Var> {
    weighted_sum(g, pred, gt, weights, |g, p, t| g.epe(p, t))
}

fn weighted_sum<T: Scalar>(
    g: &mut Graph<T>,
    pred: &[Vec<Var>],
    gt: &[Vec<Var>],
    weights: &[f64],
    term: impl Fn(&mut Graph<T>, Var, Var) -> blurwarp_tensor::Result<Var>,
) -> Result<Var> {
    if pred.len() != gt.len() {
        return Err(Error::Contract(format!("{} predictions for {} targets", pred.len(), gt.len())));
    }
    let mut acc: Option<Var> = None;
    for (p, t) in pred.iter().zip(gt) {
        if p.len() != t.len() || p.len() > weights.len() {
            return Err(Error::Contract(format!("{} predicted levels, {} target levels, {} weights", p.len(), t.len(), weights.len())));
        }
        for (l, (pv, tv)) in p.iter().zip(t).enumerate() {
            let e = term(g, *pv, *tv)?;
            let e = g.scale(e, weights[l])?;
            acc = Some(match acc {
                Some(a) => g.add(a, e)?,
                None => e,
            });
        }
    }
    Ok(match acc {
        Some(a) => a,
        None => g.constant(Tensor::zeros(&[1])),
    })
}

/// `α1·L_frame + α2·L_flow`; an absent term contributes nothing.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, frame: Option<Var>, flow: Option<Var>, alpha1: f64, alpha2: f64) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (term, alpha) in [(frame, alpha1), (flow, alpha2)] {
        if let (Some(t), true) = (term, alpha != 0.0) {
            let s = g.scale(t, alpha)?;
            acc = Some(match acc {
                Some(a) => g.add(a, s)?,
                None => s,
            });
        }
    }
    Ok(match acc {
        Some(a) => a,
        None => g.constant(Tensor::zeros(&[1])),
    })
}

// ----------------------------------------------------------------- targets

/// Successive 2× bilinear reductions; values scaled by `gain` per step.
pub fn pyramid(t: &Tensor, levels: usize, gain: f64) -> Result<Vec<Tensor>> {
    let mut out = vec![t.clone()];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty");
        let [b, c, h, w] = prev.dims4("pyramid")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!("cannot halve {h}x{w}")));
        }
        let mut data = vec![0.0f32; b * c * (h / 2) * (w / 2)];
        resize::forward(prev.data(), b * c, h, w, h / 2, w / 2, gain, &mut data);
        out.push(Tensor::new(&[b, c, h / 2, w / 2], data)?);
    }
    Ok(out)
}

/// Per-level ground truth of one sample.
#[derive(Debug, Clone)]
pub struct Targets {
    /// `frames[slot][level]`.
    pub frames: Vec<Vec<Tensor>>,
    /// `flows[index][level]`, when known.
    pub flows: Option<Vec<Vec<Tensor>>>,
}

impl Targets {
    pub fn new(sample: &SequenceSample, levels: usize) -> Result<Self> {
        let frames = sample.latents.iter().map(|f| pyramid(f, levels, 1.0)).collect::<Result<_>>()?;
        let flows = match &sample.flows {
            Some(fs) => Some(fs.iter().map(|f| pyramid(f, levels, 0.5)).collect::<Result<_>>()?),
            None => None,
        };
        Ok(Self { frames, flows })
    }
}

/// Loss terms of one sample under the chosen window orders.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub frame: Var,
    pub flow: Option<Var>,
    pub total: Var,
    /// Whether each window was scored against the reversed order.
    pub reversed: [bool; 2],
}

/// Loss for a single-pair forward pass.
///
/// Each window's frame and flow terms are scored against the ground truth
/// in its recorded order and, when `order_agnostic`, in reversed order;
/// the cheaper order (by total) is kept. The two windows choose
/// independently.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss<T: Scalar>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    ix: &FrameIndexing,
    targets: &Targets,
    cfg: &TrainConfig,
    alpha1: f64,
    alpha2: f64,
) -> Result<LossParts> {
    if out.batch != 1 {
        return Err(Error::Contract(format!("sample_loss takes one pair, got batch {}", out.batch)));
    }
    let levels = out.levels();
    let has_flow = !out.flows.is_empty();
    let mut frame_pred = vec![Vec::with_capacity(levels); ix.total()];
    for l in 0..levels {
        for (slot, fp) in frame_pred.iter_mut().enumerate() {
            fp.push(out.frame(g, ix, l, slot)?);
        }
    }
    let mut flow_pred = vec![Vec::new(); if has_flow { ix.num_flows() } else { 0 }];
    for l in 0..levels.min(if has_flow { levels } else { 0 }) {
        for (m, fp) in flow_pred.iter_mut().enumerate() {
            fp.push(out.flow(g, l, m)?);
        }
    }
    let mut gt_frames: Vec<Vec<Var>> = Vec::with_capacity(ix.total());
    for levels_of in &targets.frames {
        gt_frames.push(levels_of.iter().map(|t| g.constant(t.cast())).collect());
    }
    let gt_flows: Option<Vec<Vec<Var>>> = match (&targets.flows, has_flow) {
        (Some(fs), true) => Some(fs.iter().map(|lv| lv.iter().map(|t| g.constant(t.cast())).collect()).collect()),
        _ => None,
    };

    let pairs = ix.flow_pairs();
    let mut frame_total: Option<Var> = None;
    let mut flow_total: Option<Var> = None;
    let mut reversed = [false; 2];
    for w in 0..2 {
        let slots: Vec<usize> = (w * ix.n..(w + 1) * ix.n).collect();
        let mut best: Option<(f64, Var, Option<Var>, bool)> = None;
        let orders: &[bool] = if cfg.order_agnostic { &[false, true] } else { &[false] };
        for &rev in orders {
            let map = |s: usize| if rev { ix.mirror(s) } else { s };
            let fp: Vec<Vec<Var>> = slots.iter().map(|s| frame_pred[*s].clone()).collect();
            let ft: Vec<Vec<Var>> = slots.iter().map(|s| gt_frames[map(*s)].clone()).collect();
            let fr = frame_loss(g, &fp, &ft, &cfg.frame_weights)?;
            let fl = match &gt_flows {
                Some(gf) => {
                    let (mut pp, mut tt) = (Vec::new(), Vec::new());
                    for (m, &(s, r)) in pairs.iter().enumerate() {
                        if ix.window_of(s) == w {
                            pp.push(flow_pred[m].clone());
                            tt.push(gf[ix.flow_index(map(s), r)].clone());
                        }
                    }
                    Some(flow_loss(g, &pp, &tt, &cfg.flow_weights)?)
                }
                None => None,
            };
            let score = alpha1 * g.item(fr).as_f64() + fl.map_or(0.0, |f| alpha2 * g.item(f).as_f64());
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, fr, fl, rev));
            }
        }
        let (_, fr, fl, rev) = best.expect("at least one order");
        reversed[w] = rev;
        frame_total = Some(match frame_total {
            Some(a) => g.add(a, fr)?,
            None => fr,
        });
        if let Some(f) = fl {
            flow_total = Some(match flow_total {
                Some(a) => g.add(a, f)?,
                None => f,
            });
        }
    }
    let frame = frame_total.expect("two windows");
    let total = total_loss(g, Some(frame), flow_total, alpha1, alpha2)?;
    Ok(LossParts { frame, flow: flow_total, total, reversed })
}

/// Graph, bindings and loss of one pair, usable at any precision.
pub fn sample_objective<T: Scalar>(
    model: &ModelConfig,
    cfg: &TrainConfig,
    params: &ParamStore<T>,
    sample: &SequenceSample,
    targets: &Targets,
    alphas: (f64, f64),
) -> Result<(Graph<T>, Binder, LossParts)> {
    let ix = model.indexing()?;
    let mut g = Graph::new();
    let mut binder = Binder::new();
    let (a, b) = (sample.blur[0].cast(), sample.blur[1].cast());
    let out = forward(model, params, &mut g, &mut binder, &a, &b)?;
    let parts = sample_loss(&mut g, &out, &ix, targets, cfg, alphas.0, alphas.1)?;
    Ok((g, binder, parts))
}

// -------------------------------------------------------------------- loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: u64,
    pub frame_loss: f64,
    pub flow_loss: Option<f64>,
    pub total: f64,
    pub lr: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// What training saw when the loss stopped being finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanDump {
    pub epoch: usize,
    pub step: u64,
    /// Batch position within the epoch.
    pub batch: usize,
    /// Dataset indices of the batch.
    pub samples: Vec<usize>,
    pub message: String,
    pub param_norms: Vec<(String, f64)>,
}

pub const NAN_DUMP_FILE: &str = "nan_dump.json";

pub const CHECKPOINT_EPOCH: &str = "train/epoch";
pub const CHECKPOINT_STEP: &str = "train/step";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.bwck")
}

/// Model, optimizer and position in the schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub pipeline: Pipeline,
    pub config: TrainConfig,
    pub optimizer: AdamState,
    /// Next epoch to run.
    pub epoch: usize,
    pub step: u64,
    /// Set when an epoch aborts on a non-finite loss.
    pub failure: Option<NanDump>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate(&model)?;
        let pipeline = Pipeline::new(model)?;
        let optimizer = AdamState::new(config.adam(), &pipeline.params);
        Ok(Self { pipeline, config, optimizer, epoch: 0, step: 0, failure: None })
    }

    /// Restores the state saved by [`Trainer::checkpoint`].
    pub fn resume(model: ModelConfig, config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        config.validate(&model)?;
        let pipeline = Pipeline::from_params(model, &ckpt.params()?)?;
        let mut optimizer = ckpt.optimizer(&pipeline.params)?;
        optimizer.config = config.adam();
        let scalar = |name: &str| -> Result<f64> {
            let t = ckpt.get(name).ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
            Ok(t.data().first().copied().unwrap_or(0.0) as f64)
        };
        let epoch = scalar(CHECKPOINT_EPOCH)? as usize;
        let step = scalar(CHECKPOINT_STEP)? as u64;
        Ok(Self { pipeline, config, optimizer, epoch, step, failure: None })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_params(&self.pipeline.params);
        c.add_optimizer(&self.optimizer, &self.pipeline.params);
        c.push(CHECKPOINT_EPOCH, Tensor::scalar(self.epoch as f32));
        c.push(CHECKPOINT_STEP, Tensor::scalar(self.step as f32));
        c
    }

    fn has_flow(&self) -> bool {
        self.pipeline.config.use_flow
    }

    /// Crop offsets and batches for `epoch`, drawn from the epoch's own
    /// stream: one shuffle, then one `(y, x)` pair per sample in order.
    pub fn epoch_plan(&self, epoch: usize, data: &[SequenceSample]) -> Result<Vec<Vec<(usize, usize, usize)>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let crop = self.config.crop;
        let mut plan = Vec::with_capacity(order.len());
        for i in order {
            let (h, w) = data[i].dims();
            if crop == 0 {
                plan.push((i, 0, 0));
                continue;
            }
            if crop > h || crop > w {
                return Err(Error::Config(format!("crop {crop} exceeds {h}x{w} sample")));
            }
            plan.push((i, rng.gen_range(0..=h - crop), rng.gen_range(0..=w - crop)));
        }
        Ok(plan.chunks(self.config.batch_size).map(<[_]>::to_vec).collect())
    }

    fn crop(&self, s: &SequenceSample, y: usize, x: usize) -> Result<SequenceSample> {
        if self.config.crop == 0 {
            Ok(s.clone())
        } else {
            s.crop(y, x, self.config.crop, self.config.crop)
        }
    }

    /// Mean total loss over `data` without updating anything.
    pub fn mean_loss(&self, data: &[SequenceSample], epoch: usize) -> Result<f64> {
        let (a1, a2) = self.config.alphas(epoch, self.has_flow());
        let mut acc = 0.0;
        for s in data {
            let targets = Targets::new(s, self.pipeline.config.levels)?;
            let (g, _, parts) = sample_objective(&self.pipeline.config, &self.config, &self.pipeline.params, s, &targets, (a1, a2))?;
            acc += g.item(parts.total) as f64;
        }
        Ok(acc / data.len().max(1) as f64)
    }

    /// One optimizer step on `batch` (already cropped).
    pub fn train_step(&mut self, batch: &[SequenceSample]) -> Result<StepLog> {
        let epoch = self.epoch;
        let (a1, a2) = self.config.alphas(epoch, self.has_flow());
        let inv = 1.0 / batch.len() as f64;
        let (mut fr, mut fl, mut tot) = (0.0, None::<f64>, 0.0);
        for s in batch {
            let targets = Targets::new(s, self.pipeline.config.levels)?;
            let (mut g, binder, parts) =
                sample_objective(&self.pipeline.config, &self.config, &self.pipeline.params, s, &targets, (a1, a2))?;
            let total = g.item(parts.total) as f64;
            if !total.is_finite() {
                return Err(Error::Numeric(format!("loss {total} at epoch {epoch}, step {}", self.step)));
            }
            let scaled = g.scale(parts.total, inv)?;
            g.backward(scaled)?;
            binder.harvest(&g, &mut self.pipeline.params);
            fr += g.item(parts.frame) as f64 * inv;
            if let Some(f) = parts.flow {
                fl = Some(fl.unwrap_or(0.0) + g.item(f) as f64 * inv);
            }
            tot += total * inv;
        }
        let lr = self.config.lr_at(epoch);
        self.optimizer.config.lr = lr;
        let warm = a1 == 0.0;
        let params = &self.pipeline.params;
        let frozen: Vec<bool> = params.iter().map(|(_, name, _)| warm && is_synthesis_param(name)).collect();
        self.optimizer.step(&mut self.pipeline.params, |id| !frozen[id.index()])?;
        let log = StepLog { epoch, step: self.step, frame_loss: fr, flow_loss: fl, total: tot, lr, alpha1: a1, alpha2: a2 };
        self.step += 1;
        Ok(log)
    }

    /// Runs epoch `self.epoch` and advances to the next.
    pub fn run_epoch(&mut self, data: &[SequenceSample], mut on_step: impl FnMut(&StepLog) -> Result<()>) -> Result<()> {
        let plan = self.epoch_plan(self.epoch, data)?;
        for (bi, batch) in plan.iter().enumerate() {
            let crops = batch.iter().map(|&(i, y, x)| self.crop(&data[i], y, x)).collect::<Result<Vec<_>>>()?;
            let log = match self.train_step(&crops) {
                Err(Error::Numeric(msg)) => {
                    let dump = NanDump {
                        epoch: self.epoch,
                        step: self.step,
                        batch: bi,
                        samples: batch.iter().map(|b| b.0).collect(),
                        message: msg.clone(),
                        param_norms: self.param_norms(),
                    };
                    self.failure = Some(dump);
                    return Err(Error::Numeric(format!("{msg}; batch {bi} of epoch {}", self.epoch)));
                }
                other => other?,
            };
            on_step(&log)?;
        }
        self.epoch += 1;
        Ok(())
    }

    /// L2 norm of every parameter, in store order.
    pub fn param_norms(&self) -> Vec<(String, f64)> {
        self.pipeline.params.iter().map(|(_, n, t)| (n.to_string(), t.l2_norm())).collect()
    }
}

/// Trains until `trainer.config.epochs`, writing `ckpt_epoch{e}.bwck` and
/// appending to `log.jsonl` under `out_dir`.
pub fn train(trainer: &mut Trainer, data: &[SequenceSample], out_dir: &Path) -> Result<Vec<StepLog>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;
    let log_path = out_dir.join("log.jsonl");
    let file = fs::OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| Error::io_at(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut all = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        let run = trainer.run_epoch(data, |s| {
            let line = serde_json::to_string(s).expect("log serializes");
            writeln!(log, "{line}").map_err(|e| Error::io_at(&log_path, e))?;
            all.push(s.clone());
            Ok(())
        });
        if let Err(e) = run {
            log.flush().map_err(|e| Error::io_at(&log_path, e))?;
            if let Some(dump) = &trainer.failure {
                let path = out_dir.join(NAN_DUMP_FILE);
                let text = serde_json::to_string_pretty(dump).expect("dump serializes");
                fs::write(&path, text + "\n").map_err(|e| Error::io_at(&path, e))?;
            }
            return Err(e);
        }
        log.flush().map_err(|e| Error::io_at(&log_path, e))?;
        let path: PathBuf = out_dir.join(checkpoint_name(trainer.epoch - 1));
        trainer.checkpoint().save(&path)?;
    }
    Ok(all)
}

/// Writes a checkpoint at an arbitrary path, creating parent directories.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io_at(p, e))?;
    }
    Ok(trainer.checkpoint().save(path)?)
}
