//! The restoration network: shared encoder, reference and motion decoders,
//! coarse-to-fine flow estimation with context refinement, and multi-scale
//! frame synthesis.
//!
//! Level `l` (1-based) runs at `1 / 2^(l-1)` of the input size. Vectors
//! indexed by level store level 1 at index 0.

use blurwarp_tensor::param::kaiming_uniform;
use blurwarp_tensor::{Binder, ConvGeom, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexing::FrameIndexing;

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Pyramid levels `K`.
    pub levels: usize,
    /// Feature channels per level, level 1 first.
    pub channels: Vec<usize>,
    /// Frames per blur.
    pub n: usize,
    pub max_disp: usize,
    pub use_stn: bool,
    pub use_motion_decoder: bool,
    pub use_flow: bool,
    pub stn_width: usize,
    pub synth_width: usize,
    /// Hidden widths of the flow head; its output layer has 2 channels.
    pub flow_widths: [usize; 2],
    pub context_width: usize,
    /// One STN and motion decoder per level for all offsets.
    pub share_offsets: bool,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 6,
            channels: vec![16, 32, 32, 64, 64, 96],
            n: 7,
            max_disp: 4,
            use_stn: true,
            use_motion_decoder: true,
            use_flow: true,
            stn_width: 16,
            synth_width: 32,
            flow_widths: [64, 32],
            context_width: 32,
            share_offsets: false,
            seed: 0,
        }
    }
}

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoStn,
    NoMotionDecoder,
    NoFlow,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        FrameIndexing::new(self.n)?;
        if self.levels < 2 {
            return Err(Error::Config(format!("levels must be >= 2, got {}", self.levels)));
        }
        if self.channels.len() != self.levels {
            return Err(Error::Config(format!("{} channel widths given for {} levels", self.channels.len(), self.levels)));
        }
        let widths = self.channels.iter().chain(&self.flow_widths).chain([&self.stn_width, &self.synth_width, &self.context_width]);
        if widths.into_iter().any(|c| *c == 0) {
            return Err(Error::Config("all widths must be positive".into()));
        }
        if self.use_flow && !(self.use_stn || self.use_motion_decoder) {
            return Err(Error::Config("flow estimation needs an STN or a motion decoder".into()));
        }
        Ok(())
    }

    pub fn variant(mut self, v: Variant) -> Self {
        match v {
            Variant::Full => {}
            Variant::NoStn => self.use_stn = false,
            Variant::NoMotionDecoder => self.use_motion_decoder = false,
            Variant::NoFlow => self.use_flow = false,
        }
        self
    }

    pub fn indexing(&self) -> Result<FrameIndexing> {
        FrameIndexing::new(self.n)
    }

    /// Inputs are padded to a multiple of this.
    pub fn granularity(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn offset_keys(&self) -> Vec<String> {
        if self.share_offsets {
            return vec!["offsetall".into()];
        }
        let ix = FrameIndexing { n: self.n };
        ix.offsets().into_iter().map(|o| format!("offset{o}")).collect()
    }

    fn offset_key(&self, offset: i32) -> String {
        if self.share_offsets {
            "offsetall".into()
        } else {
            format!("offset{offset}")
        }
    }
}

// ------------------------------------------------------------ parameters

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

enum Init {
    Kaiming(usize),
    Zero,
    Identity,
}

fn conv_specs(out: &mut Vec<Spec>, prefix: &str, cin: usize, cout: usize, k: usize, zero: bool) {
    out.push(Spec {
        name: format!("{prefix}/weight"),
        shape: vec![cout, cin, k, k],
        init: if zero { Init::Zero } else { Init::Kaiming(cin * k * k) },
    });
    out.push(Spec { name: format!("{prefix}/bias"), shape: vec![cout], init: Init::Zero });
}

fn deconv_specs(out: &mut Vec<Spec>, prefix: &str, cin: usize, cout: usize) {
    out.push(Spec { name: format!("{prefix}/weight"), shape: vec![cin, cout, 4, 4], init: Init::Kaiming(cin * 4) });
    out.push(Spec { name: format!("{prefix}/bias"), shape: vec![cout], init: Init::Zero });
}

fn param_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let k = cfg.levels;
    let ch = &cfg.channels;
    let mut s = Vec::new();
    for l in 0..k {
        let cin = if l == 0 { 3 } else { ch[l - 1] };
        conv_specs(&mut s, &format!("encoder/level{}/layer0", l + 1), cin, ch[l], 3, false);
        conv_specs(&mut s, &format!("encoder/level{}/layer1", l + 1), ch[l], ch[l], 3, false);
    }
    for l in 0..k {
        let p = format!("refdec/level{}", l + 1);
        let cin = if l + 1 < k {
            deconv_specs(&mut s, &format!("{p}/up"), ch[l + 1], ch[l]);
            2 * ch[l]
        } else {
            ch[l]
        };
        conv_specs(&mut s, &format!("{p}/layer0"), cin, ch[l], 3, false);
        conv_specs(&mut s, &format!("{p}/layer1"), ch[l], ch[l], 3, false);
    }
    for key in cfg.offset_keys() {
        for l in 0..k {
            if cfg.use_stn {
                let p = format!("stn/level{}/{key}", l + 1);
                conv_specs(&mut s, &format!("{p}/layer0"), ch[l], cfg.stn_width, 3, false);
                conv_specs(&mut s, &format!("{p}/layer1"), cfg.stn_width, cfg.stn_width, 3, false);
                s.push(Spec { name: format!("{p}/layer2/weight"), shape: vec![6, cfg.stn_width], init: Init::Zero });
                s.push(Spec { name: format!("{p}/layer2/bias"), shape: vec![6], init: Init::Identity });
            }
            if cfg.use_motion_decoder {
                let p = format!("motiondec/level{}/{key}", l + 1);
                let cin = if l + 1 < k {
                    deconv_specs(&mut s, &format!("{p}/up"), ch[l + 1], ch[l]);
                    3 * ch[l]
                } else {
                    2 * ch[l]
                };
                conv_specs(&mut s, &format!("{p}/layer0"), cin, ch[l], 3, false);
                conv_specs(&mut s, &format!("{p}/layer1"), ch[l], ch[l], 3, false);
            }
        }
    }
    if cfg.use_flow {
        let cost = (2 * cfg.max_disp + 1).pow(2);
        let [w1, w2] = cfg.flow_widths;
        for l in 0..k {
            let p = format!("flow/level{}", l + 1);
            conv_specs(&mut s, &format!("{p}/layer0"), cost + ch[l] + 2, w1, 3, false);
            conv_specs(&mut s, &format!("{p}/layer1"), w1, w2, 3, false);
            conv_specs(&mut s, &format!("{p}/layer2"), w2, 2, 3, true);
        }
        let cw = cfg.context_width;
        conv_specs(&mut s, "context/layer0", 2 + ch[0], cw, 3, false);
        conv_specs(&mut s, "context/layer1", cw, cw, 3, false);
        conv_specs(&mut s, "context/layer2", cw, cw, 3, false);
        conv_specs(&mut s, "context/layer3", cw, 2, 3, true);
    }
    for l in 0..k {
        let p = format!("synth_ref/level{}", l + 1);
        conv_specs(&mut s, &format!("{p}/layer0"), ch[l] + 3, cfg.synth_width, 3, false);
        conv_specs(&mut s, &format!("{p}/layer1"), cfg.synth_width, 3, 3, true);
        let p = format!("synth_nonmid/level{}", l + 1);
        let cin = if cfg.use_flow { 3 * ch[l] + 3 } else { ch[l] + 3 };
        conv_specs(&mut s, &format!("{p}/layer0"), cin, cfg.synth_width, 3, false);
        conv_specs(&mut s, &format!("{p}/layer1"), cfg.synth_width, 3, 3, true);
    }
    s
}

/// Freshly initialized parameters for `cfg`.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let t = match spec.init {
            Init::Kaiming(fan_in) => kaiming_uniform(&spec.shape, fan_in, LEAKY_SLOPE, &mut rng),
            Init::Zero => Tensor::zeros(&spec.shape),
            Init::Identity => Tensor::new(&spec.shape, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0])?,
        };
        store.insert(spec.name, t)?;
    }
    Ok(store)
}

/// Synthesis heads, the parameters frozen during the flow-only phase.
pub fn is_synthesis_param(name: &str) -> bool {
    name.starts_with("synth_")
}

// ---------------------------------------------------------------- forward

/// Graph handles for every output of one forward pass over `B` pairs.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub batch: usize,
    /// Unpadded input size; level-1 outputs are cropped to it.
    pub height: usize,
    pub width: usize,
    /// Encoded pyramid per level, `[2B, C, h, w]`, window-major.
    pub encoded: Vec<Var>,
    /// Decoded reference features per level, `[2B, C, h, w]`.
    pub reference: Vec<Var>,
    /// Decoded non-middle features per level, `[(2N-2)B, C, h, w]` in
    /// `FrameIndexing::nonmid_slots` order.
    pub nonmid: Vec<Var>,
    /// Reference frames per level, `[2B, 3, h, w]`.
    pub ref_frames: Vec<Var>,
    /// Non-middle frames per level, `[(2N-2)B, 3, h, w]`.
    pub nonmid_frames: Vec<Var>,
    /// Flows per level, `[(4N-4)B, 2, h, w]` in `FrameIndexing::flow_pairs`
    /// order; the level-1 entry is context-refined. Empty without flow.
    pub flows: Vec<Var>,
    /// Level-1 flows before context refinement.
    pub unrefined: Option<Var>,
}

impl ForwardOutput {
    pub fn levels(&self) -> usize {
        self.ref_frames.len()
    }

    /// Frame `slot` of all `B` pairs at `level` (0-based), `[B, 3, h, w]`.
    pub fn frame<T: Scalar>(&self, g: &mut Graph<T>, ix: &FrameIndexing, level: usize, slot: usize) -> Result<Var> {
        let b = self.batch;
        if ix.is_ref(slot) {
            Ok(g.slice_batch(self.ref_frames[level], ix.window_of(slot) * b, b)?)
        } else {
            let pos = ix.nonmid_slots().iter().position(|s| *s == slot).expect("non-middle slot");
            Ok(g.slice_batch(self.nonmid_frames[level], pos * b, b)?)
        }
    }

    /// Flow `index` of all `B` pairs at `level`, `[B, 2, h, w]`.
    pub fn flow<T: Scalar>(&self, g: &mut Graph<T>, level: usize, index: usize) -> Result<Var> {
        let f = *self.flows.get(level).ok_or_else(|| Error::Contract("model has no flow estimator".into()))?;
        Ok(g.slice_batch(f, index * self.batch, self.batch)?)
    }
}

/// Edge-replicating pad on the bottom and right.
fn pad_to<T: Scalar>(t: &Tensor<T>, ph: usize, pw: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = t.dims4("pad")?;
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let mut out = Vec::with_capacity(b * c * ph * pw);
    for p in 0..b * c {
        for y in 0..ph {
            let row = (p * h + y.min(h - 1)) * w;
            out.extend((0..pw).map(|x| t.data()[row + x.min(w - 1)]));
        }
    }
    Ok(Tensor::new(&[b, c, ph, pw], out)?)
}

struct Net<'a, T: Scalar> {
    cfg: &'a ModelConfig,
    params: &'a ParamStore<T>,
    g: &'a mut Graph<T>,
    binder: &'a mut Binder,
}

impl<'a, T: Scalar> Net<'a, T> {
    fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name).ok_or_else(|| Error::Contract(format!("missing parameter {name}")))?;
        Ok(self.binder.var(self.g, self.params, id))
    }

    fn conv(&mut self, prefix: &str, x: Var, geom: ConvGeom) -> Result<Var> {
        let w = self.param(&format!("{prefix}/weight"))?;
        let b = self.param(&format!("{prefix}/bias"))?;
        Ok(self.g.conv2d(x, w, Some(b), geom)?)
    }

    fn conv_act(&mut self, prefix: &str, x: Var, geom: ConvGeom) -> Result<Var> {
        let y = self.conv(prefix, x, geom)?;
        Ok(self.g.leaky_relu(y, LEAKY_SLOPE)?)
    }

    /// Two 3×3 convolutions, each followed by leaky ReLU.
    fn block(&mut self, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let y = self.conv_act(&format!("{prefix}/layer0"), x, ConvGeom::new(stride, 1))?;
        self.conv_act(&format!("{prefix}/layer1"), y, ConvGeom::new(1, 1))
    }

    fn up(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}/up/weight"))?;
        let b = self.param(&format!("{prefix}/up/bias"))?;
        let y = self.g.conv_transpose2d(x, w, Some(b), 2, 1)?;
        Ok(self.g.leaky_relu(y, LEAKY_SLOPE)?)
    }

    fn stn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let y = self.conv_act(&format!("{prefix}/layer0"), x, ConvGeom::new(2, 1))?;
        let y = self.conv_act(&format!("{prefix}/layer1"), y, ConvGeom::new(2, 1))?;
        let pooled = self.g.global_avg_pool(y)?;
        let w = self.param(&format!("{prefix}/layer2/weight"))?;
        let b = self.param(&format!("{prefix}/layer2/bias"))?;
        let theta = self.g.linear(pooled, w, Some(b))?;
        Ok(self.g.affine_grid_sample(x, theta)?)
    }

    /// Two-conv image head predicting a residual over `base`.
    fn image_head(&mut self, prefix: &str, parts: &[Var], base: Var) -> Result<Var> {
        let x = self.g.concat_channels(parts)?;
        let y = self.conv_act(&format!("{prefix}/layer0"), x, ConvGeom::new(1, 1))?;
        let y = self.conv(&format!("{prefix}/layer1"), y, ConvGeom::new(1, 1))?;
        Ok(self.g.add(base, y)?)
    }

    fn zeros(&mut self, shape: &[usize]) -> Var {
        self.g.constant(Tensor::zeros(shape))
    }

    fn run(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<ForwardOutput> {
        let cfg = self.cfg;
        cfg.validate()?;
        let ix = cfg.indexing()?;
        let [bsz, c, h, w] = a.dims4("forward")?;
        if c != 3 || b.shape() != a.shape() {
            return Err(Error::Contract(format!(
                "forward expects two [B, 3, H, W] inputs of equal shape, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let gran = cfg.granularity();
        let (ph, pw) = (h.div_ceil(gran) * gran, w.div_ceil(gran) * gran);
        let input = Tensor::stack_batch(&[&pad_to(a, ph, pw)?, &pad_to(b, ph, pw)?])?;
        let k = cfg.levels;
        let dims: Vec<(usize, usize)> = (0..k).map(|l| (ph >> l, pw >> l)).collect();

        let mut encoded = Vec::with_capacity(k);
        let input_const = self.g.constant(input);
        let mut x = input_const;
        for l in 0..k {
            x = self.block(&format!("encoder/level{}", l + 1), x, if l == 0 { 1 } else { 2 })?;
            encoded.push(x);
        }

        let mut reference = vec![encoded[0]; k];
        for l in (0..k).rev() {
            let p = format!("refdec/level{}", l + 1);
            let inp = if l + 1 < k {
                let up = self.up(&p, reference[l + 1])?;
                self.g.concat_channels(&[up, encoded[l]])?
            } else {
                encoded[l]
            };
            reference[l] = self.block(&p, inp, 1)?;
        }

        // Decoded features per offset and level, each [2B, C, h, w].
        let offsets = ix.offsets();
        let mut motion: Vec<Vec<Var>> = Vec::with_capacity(offsets.len());
        for &o in &offsets {
            let key = cfg.offset_key(o);
            let mut per_level = vec![encoded[0]; k];
            for l in (0..k).rev() {
                let u = encoded[l];
                let t = if cfg.use_stn { self.stn(&format!("stn/level{}/{key}", l + 1), u)? } else { u };
                per_level[l] = if cfg.use_motion_decoder {
                    let p = format!("motiondec/level{}/{key}", l + 1);
                    let mut parts = vec![t];
                    if l + 1 < k {
                        parts.push(self.up(&p, per_level[l + 1])?);
                    }
                    parts.push(u);
                    let inp = self.g.concat_channels(&parts)?;
                    self.block(&p, inp, 1)?
                } else {
                    t
                };
            }
            motion.push(per_level);
        }

        let nonmid_slots = ix.nonmid_slots();
        let pairs = ix.flow_pairs();
        let mut nonmid = Vec::with_capacity(k);
        let mut ref_per_flow = Vec::with_capacity(k);
        let mut src_per_flow = Vec::with_capacity(k);
        for l in 0..k {
            let mut parts = Vec::with_capacity(nonmid_slots.len());
            for &s in &nonmid_slots {
                let oi = offsets.iter().position(|o| *o == ix.offset_of(s)).expect("offset");
                parts.push(self.g.slice_batch(motion[oi][l], ix.window_of(s) * bsz, bsz)?);
            }
            let nm = self.g.concat_batch(&parts)?;
            nonmid.push(nm);
            if cfg.use_flow {
                let mut refs = Vec::with_capacity(pairs.len());
                for &(_, r) in &pairs {
                    refs.push(self.g.slice_batch(reference[l], r * bsz, bsz)?);
                }
                ref_per_flow.push(self.g.concat_batch(&refs)?);
                src_per_flow.push(self.g.concat_batch(&[nm, nm])?);
            }
        }

        let nflow = pairs.len() * bsz;
        let mut flows = Vec::new();
        let mut unrefined = None;
        if cfg.use_flow {
            flows = vec![encoded[0]; k];
            for l in (0..k).rev() {
                let (lh, lw) = dims[l];
                let up = if l + 1 < k { self.g.upsample_flow2x(flows[l + 1])? } else { self.zeros(&[nflow, 2, lh, lw]) };
                let warped = self.g.grid_sample(ref_per_flow[l], up)?;
                let cost = self.g.correlation(src_per_flow[l], warped, cfg.max_disp)?;
                let inp = self.g.concat_channels(&[cost, src_per_flow[l], up])?;
                let p = format!("flow/level{}", l + 1);
                let y = self.conv_act(&format!("{p}/layer0"), inp, ConvGeom::new(1, 1))?;
                let y = self.conv_act(&format!("{p}/layer1"), y, ConvGeom::new(1, 1))?;
                let res = self.conv(&format!("{p}/layer2"), y, ConvGeom::new(1, 1))?;
                flows[l] = self.g.add(up, res)?;
            }
            let coarse = flows[0];
            let inp = self.g.concat_channels(&[coarse, src_per_flow[0]])?;
            let mut y = inp;
            for (i, d) in [1, 2, 4].into_iter().enumerate() {
                y = self.conv_act(&format!("context/layer{i}"), y, ConvGeom::dilated(d))?;
            }
            let res = self.conv("context/layer3", y, ConvGeom::new(1, 1))?;
            flows[0] = self.g.add(coarse, res)?;
            unrefined = Some(coarse);
        }

        // Each output is its window's blur plus a deviation refined coarse
        // to fine.
        let nnm = nonmid_slots.len() * bsz;
        let mut blur_ref = Vec::with_capacity(k);
        let mut blur_nonmid = Vec::with_capacity(k);
        let mut level_in = input_const;
        for l in 0..k {
            if l > 0 {
                let (lh, lw) = dims[l];
                level_in = self.g.resize(level_in, lh, lw, 1.0)?;
            }
            let per_slot = nonmid_slots
                .iter()
                .map(|s| self.g.slice_batch(level_in, ix.window_of(*s) * bsz, bsz))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            blur_ref.push(level_in);
            blur_nonmid.push(self.g.concat_batch(&per_slot)?);
        }
        let mut ref_frames = vec![encoded[0]; k];
        let mut nonmid_frames = vec![encoded[0]; k];
        for l in (0..k).rev() {
            let (up_r, up_n) = if l + 1 < k {
                let dr = self.g.sub(ref_frames[l + 1], blur_ref[l + 1])?;
                let dn = self.g.sub(nonmid_frames[l + 1], blur_nonmid[l + 1])?;
                let (ur, un) = (self.g.upsample2x(dr)?, self.g.upsample2x(dn)?);
                (self.g.add(blur_ref[l], ur)?, self.g.add(blur_nonmid[l], un)?)
            } else {
                (blur_ref[l], blur_nonmid[l])
            };
            ref_frames[l] = self.image_head(&format!("synth_ref/level{}", l + 1), &[reference[l], up_r], up_r)?;
            let parts = if cfg.use_flow {
                let warped = self.g.grid_sample(ref_per_flow[l], flows[l])?;
                let to_t0 = self.g.slice_batch(warped, 0, nnm)?;
                let to_t1 = self.g.slice_batch(warped, nnm, nnm)?;
                vec![to_t0, to_t1, nonmid[l], up_n]
            } else {
                vec![nonmid[l], up_n]
            };
            nonmid_frames[l] = self.image_head(&format!("synth_nonmid/level{}", l + 1), &parts, up_n)?;
        }

        if (ph, pw) != (h, w) {
            ref_frames[0] = self.g.crop(ref_frames[0], h, w)?;
            nonmid_frames[0] = self.g.crop(nonmid_frames[0], h, w)?;
            if cfg.use_flow {
                flows[0] = self.g.crop(flows[0], h, w)?;
                unrefined = Some(self.g.crop(unrefined.expect("flow"), h, w)?);
            }
        }

        Ok(ForwardOutput { batch: bsz, height: h, width: w, encoded, reference, nonmid, ref_frames, nonmid_frames, flows, unrefined })
    }
}

/// Runs the network on `B` pairs `(a[i], b[i])`, binding parameters
/// through `binder`.
pub fn forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamStore<T>,
    g: &mut Graph<T>,
    binder: &mut Binder,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<ForwardOutput> {
    Net { cfg, params, g, binder }.run(a, b)
}

/// Restored frames and flows for one pair, in output-slot and
/// flow-pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub frames: Vec<Tensor>,
    pub flows: Vec<Tensor>,
}

/// Configuration plus trained parameters.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Pipeline {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params })
    }

    /// Loads parameters, failing with the names of any missing tensors.
    pub fn from_params(config: ModelConfig, loaded: &ParamStore) -> Result<Self> {
        let mut p = Self::new(config)?;
        let missing = p.params.load_from(loaded)?;
        if !missing.is_empty() {
            return Err(Error::Data(format!("checkpoint lacks {} tensors: {}", missing.len(), missing.join(", "))));
        }
        Ok(p)
    }

    pub fn synthesis_ids(&self) -> Vec<ParamId> {
        self.params.ids().filter(|id| is_synthesis_param(self.params.name(*id))).collect()
    }

    /// Full-resolution frames and flows for each of the `B` pairs.
    pub fn predict(&self, a: &Tensor, b: &Tensor) -> Result<Vec<Prediction>> {
        let ix = self.config.indexing()?;
        let mut g = Graph::new();
        let mut binder = Binder::new();
        let out = forward(&self.config, &self.params, &mut g, &mut binder, a, b)?;
        let bsz = out.batch;
        let mut preds = Vec::with_capacity(bsz);
        for i in 0..bsz {
            let mut frames = Vec::with_capacity(ix.total());
            for slot in 0..ix.total() {
                let v = out.frame(&mut g, &ix, 0, slot)?;
                frames.push(g.value(v).batch_slice(i, 1)?);
            }
            let flows = match out.flows.first() {
                Some(&f) => {
                    (0..ix.num_flows()).map(|m| g.value(f).batch_slice(m * bsz + i, 1)).collect::<std::result::Result<Vec<_>, _>>()?
                }
                None => Vec::new(),
            };
            preds.push(Prediction { frames, flows });
        }
        Ok(preds)
    }
}
