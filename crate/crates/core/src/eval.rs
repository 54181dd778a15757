//! Interpolation and deblurring protocols, flow accuracy and ordering
//! accuracy over a test set.

use blurwarp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexing::FrameIndexing;
use crate::metrics::{epe, psnr, ssim};
use crate::model::Pipeline;
use crate::order::{apply_order, apply_order_flows, decide_from_flows, OrderDecision};
use crate::synth::SequenceSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    /// Per output slot.
    pub frame_psnr: Vec<f64>,
    pub frame_ssim: Vec<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub deblur_psnr: f64,
    pub deblur_ssim: f64,
    /// Per flow in pair order, when both prediction and truth exist.
    pub flow_epe: Option<Vec<f64>>,
    pub epe: Option<f64>,
    pub constant_translation: bool,
    pub decisions: Option<[OrderDecision; 2]>,
    /// Whether each decoded window matched the reversed ground truth better.
    pub decoded_reversed: [bool; 2],
}

impl SampleReport {
    /// Decisions that agree with the decoded orientation.
    pub fn correct_decisions(&self) -> Option<usize> {
        self.decisions.map(|d| (0..2).filter(|w| d[*w].is_reversed() == self.decoded_reversed[*w]).count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Interpolation protocol: all output frames.
    pub psnr: f64,
    pub ssim: f64,
    /// Deblurring protocol: the two reference frames.
    pub deblur_psnr: f64,
    pub deblur_ssim: f64,
    pub epe: Option<f64>,
    /// Mean EPE over scenes whose every pixel moves with the camera.
    pub epe_translation: Option<f64>,
    /// Mean EPE per flow index.
    pub flow_epe: Option<Vec<f64>>,
    /// Fraction of window decisions agreeing with the decoded orientation.
    pub order_accuracy: Option<f64>,
    pub order_ties: usize,
    pub per_sample: Vec<SampleReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `slot,psnr,ssim` rows per sample.
    pub fn frame_csv(&self) -> String {
        let mut s = String::from("sample,slot,psnr,ssim\n");
        for r in &self.per_sample {
            for (slot, (p, q)) in r.frame_psnr.iter().zip(&r.frame_ssim).enumerate() {
                s.push_str(&format!("{},{slot},{p:.6},{q:.6}\n", r.index));
            }
        }
        s
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn window_l1(ix: &FrameIndexing, frames: &[Tensor], gt: &[Tensor], w: usize, reversed: bool) -> f64 {
    (w * ix.n..(w + 1) * ix.n)
        .map(|s| {
            let t = &gt[if reversed { ix.mirror(s) } else { s }];
            frames[s].data().iter().zip(t.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>()
        })
        .sum()
}

/// Whether each window of `frames` sits closer to the mirrored truth.
pub fn decoded_orientation(ix: &FrameIndexing, frames: &[Tensor], gt: &[Tensor]) -> [bool; 2] {
    [0, 1].map(|w| window_l1(ix, frames, gt, w, true) < window_l1(ix, frames, gt, w, false))
}

/// Scores already-ordered frames (and flows) of one sample.
pub fn score(
    index: usize,
    ix: &FrameIndexing,
    frames: &[Tensor],
    flows: Option<&[Tensor]>,
    sample: &SequenceSample,
    constant_translation: bool,
) -> Result<SampleReport> {
    if frames.len() != ix.total() || sample.latents.len() != ix.total() {
        return Err(Error::Contract(format!(
            "expected {} frames, got {} predicted and {} ground truth",
            ix.total(),
            frames.len(),
            sample.latents.len()
        )));
    }
    let mut frame_psnr = Vec::with_capacity(frames.len());
    let mut frame_ssim = Vec::with_capacity(frames.len());
    for (p, t) in frames.iter().zip(&sample.latents) {
        frame_psnr.push(psnr(p, t)?);
        frame_ssim.push(ssim(p, t)?);
    }
    let refs = [ix.ref_slot(0), ix.ref_slot(1)];
    let flow_epe = match (flows, &sample.flows) {
        (Some(p), Some(t)) => {
            if p.len() != t.len() {
                return Err(Error::Contract(format!("{} predicted flows for {} ground-truth flows", p.len(), t.len())));
            }
            Some(p.iter().zip(t).map(|(a, b)| epe(a, b)).collect::<Result<Vec<_>>>()?)
        }
        _ => None,
    };
    Ok(SampleReport {
        index,
        psnr: mean(frame_psnr.iter().copied()).unwrap_or(0.0),
        ssim: mean(frame_ssim.iter().copied()).unwrap_or(0.0),
        deblur_psnr: mean(refs.iter().map(|s| frame_psnr[*s])).unwrap_or(0.0),
        deblur_ssim: mean(refs.iter().map(|s| frame_ssim[*s])).unwrap_or(0.0),
        epe: flow_epe.as_ref().and_then(|v| mean(v.iter().copied())),
        flow_epe,
        frame_psnr,
        frame_ssim,
        constant_translation,
        decisions: None,
        decoded_reversed: [false, false],
    })
}

/// Aggregates per-sample reports: means over samples.
pub fn aggregate(per_sample: Vec<SampleReport>) -> EvalReport {
    let epes: Vec<f64> = per_sample.iter().filter_map(|r| r.epe).collect();
    let flow_epe = per_sample
        .first()
        .and_then(|r| r.flow_epe.as_ref())
        .map(|f| (0..f.len()).map(|m| mean(per_sample.iter().filter_map(|r| r.flow_epe.as_ref().map(|v| v[m]))).unwrap_or(0.0)).collect());
    let decided: Vec<&SampleReport> = per_sample.iter().filter(|r| r.decisions.is_some()).collect();
    let correct: usize = decided.iter().filter_map(|r| r.correct_decisions()).sum();
    EvalReport {
        samples: per_sample.len(),
        psnr: mean(per_sample.iter().map(|r| r.psnr)).unwrap_or(0.0),
        ssim: mean(per_sample.iter().map(|r| r.ssim)).unwrap_or(0.0),
        deblur_psnr: mean(per_sample.iter().map(|r| r.deblur_psnr)).unwrap_or(0.0),
        deblur_ssim: mean(per_sample.iter().map(|r| r.deblur_ssim)).unwrap_or(0.0),
        epe: mean(epes.iter().copied()),
        epe_translation: mean(per_sample.iter().filter(|r| r.constant_translation).filter_map(|r| r.epe)),
        flow_epe,
        order_accuracy: (!decided.is_empty()).then(|| correct as f64 / (2 * decided.len()) as f64),
        order_ties: decided.iter().flat_map(|r| r.decisions.unwrap()).filter(|d| d.tie).count(),
        per_sample,
    }
}

/// Runs the model pair by pair, orders each output with the flow rule and
/// scores it. `constant_translation[i]` marks scenes for the translation
/// EPE; an empty slice marks none.
pub fn evaluate(pipeline: &Pipeline, samples: &[SequenceSample], constant_translation: &[bool]) -> Result<EvalReport> {
    let ix = pipeline.config.indexing()?;
    let mut reports = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.indexing != ix {
            return Err(Error::Contract(format!("sample {i} has N={}, model expects N={}", s.indexing.n, ix.n)));
        }
        let pred = pipeline.predict(&s.blur[0], &s.blur[1])?.remove(0);
        let decoded = decoded_orientation(&ix, &pred.frames, &s.latents);
        let (frames, flows, decisions) = if pred.flows.is_empty() {
            (pred.frames, None, None)
        } else {
            let d = decide_from_flows(&ix, &pred.flows)?;
            (apply_order(&ix, &pred.frames, &d)?, Some(apply_order_flows(&ix, &pred.flows, &d)?), Some(d))
        };
        let translation = constant_translation.get(i).copied().unwrap_or(false);
        let mut r = score(i, &ix, &frames, flows.as_deref(), s, translation)?;
        r.decisions = decisions;
        r.decoded_reversed = decoded;
        reports.push(r);
    }
    Ok(aggregate(reports))
}

/// Every slot of a window predicted as that window's blurry input.
pub fn baseline_copy_blur(sample: &SequenceSample) -> Vec<Tensor> {
    let ix = sample.indexing;
    (0..ix.total()).map(|s| sample.blur[ix.window_of(s)].clone()).collect()
}

pub fn evaluate_copy_blur(samples: &[SequenceSample]) -> Result<EvalReport> {
    let reports = samples
        .iter()
        .enumerate()
        .map(|(i, s)| score(i, &s.indexing, &baseline_copy_blur(s), None, s, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCheckEntry {
    pub sample: usize,
    /// Orientation presented to the rule, per window.
    pub truth_reversed: [bool; 2],
    pub decisions: [OrderDecision; 2],
    pub correct: [bool; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderCheckReport {
    pub source: String,
    pub decisions: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ties: usize,
    pub entries: Vec<OrderCheckEntry>,
}

impl OrderCheckReport {
    fn from_entries(source: &str, entries: Vec<OrderCheckEntry>) -> Self {
        let decisions = 2 * entries.len();
        let correct = entries.iter().flat_map(|e| e.correct).filter(|c| *c).count();
        let ties = entries.iter().flat_map(|e| e.decisions).filter(|d| d.tie).count();
        Self {
            source: source.into(),
            decisions,
            correct,
            accuracy: if decisions == 0 { 0.0 } else { correct as f64 / decisions as f64 },
            ties,
            entries,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// The rule on ground-truth flows under all four window orientations.
pub fn analytic_order_check(samples: &[SequenceSample]) -> Result<OrderCheckReport> {
    let mut entries = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let ix = s.indexing;
        let flows = s.flows.as_ref().ok_or_else(|| Error::Data(format!("sample {i} has no ground-truth flows")))?;
        for truth in [[false, false], [true, false], [false, true], [true, true]] {
            let as_decision = |rev: bool| OrderDecision {
                direction: if rev { crate::order::Direction::Reversed } else { crate::order::Direction::Forward },
                earliest: 0.0,
                latest: 0.0,
                margin: 0.0,
                tie: false,
            };
            let presented = apply_order_flows(&ix, flows, &truth.map(as_decision))?;
            let decisions = decide_from_flows(&ix, &presented)?;
            let correct = [0, 1].map(|w| decisions[w].is_reversed() == truth[w]);
            entries.push(OrderCheckEntry { sample: i, truth_reversed: truth, decisions, correct });
        }
    }
    Ok(OrderCheckReport::from_entries("analytic", entries))
}

/// The rule on model flows, judged against each window's decoded orientation.
pub fn model_order_check(report: &EvalReport) -> OrderCheckReport {
    let entries = report
        .per_sample
        .iter()
        .filter_map(|r| {
            r.decisions.map(|d| OrderCheckEntry {
                sample: r.index,
                truth_reversed: r.decoded_reversed,
                decisions: d,
                correct: [0, 1].map(|w| d[w].is_reversed() == r.decoded_reversed[w]),
            })
        })
        .collect();
    OrderCheckReport::from_entries("model", entries)
}
