//! Synthetic high-speed sequences with known motion, frame-averaged blur,
//! analytic flows, and on-disk datasets.

use std::fs;
use std::path::{Path, PathBuf};

use blurwarp_tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexing::FrameIndexing;
use crate::io;

// ------------------------------------------------------------------ texture

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = mix64(seed ^ mix64((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1]` with lattice spacing `cell` pixels.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (fx0, fy0) = (gx.floor(), gy.floor());
    let (ix, iy) = (fx0 as i64, fy0 as i64);
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (smooth(gx - fx0), smooth(gy - fy0));
    let top = lattice(seed, ix, iy) * (1.0 - tx) + lattice(seed, ix + 1, iy) * tx;
    let bot = lattice(seed, ix, iy + 1) * (1.0 - tx) + lattice(seed, ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Two-octave RGB texture at continuous coordinates.
fn texture(seed: u64, x: f64, y: f64) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, v) in rgb.iter_mut().enumerate() {
        let s = mix64(seed.wrapping_add(c as u64 * 0x51));
        *v = 0.6 * value_noise(s, x, y, 6.0) + 0.4 * value_noise(s ^ 0xabc, x, y, 2.5);
    }
    rgb
}

// -------------------------------------------------------------------- scene

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sprite {
    pub texture_seed: u64,
    /// `[height, width]` in pixels.
    pub size: [f64; 2],
    /// Center at frame 0, `[x, y]`.
    pub position: [f64; 2],
    /// Motion relative to the background, px/frame.
    pub velocity: [f64; 2],
    /// Degrees per frame.
    #[serde(default)]
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background_seed: u64,
    /// Back to front.
    pub sprites: Vec<Sprite>,
    /// Background translation, px/frame; sprites move with it.
    pub camera: [f64; 2],
    pub length: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene canvas must be non-empty".into()));
        }
        if self.length < 2 {
            return Err(Error::Config(format!("scene length {} < 2", self.length)));
        }
        if !self.camera.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("camera velocity must be finite".into()));
        }
        for (i, s) in self.sprites.iter().enumerate() {
            let finite = s.size.iter().chain(&s.position).chain(&s.velocity).all(|v| v.is_finite()) && s.rotation.is_finite();
            if !finite {
                return Err(Error::Config(format!("sprite {i} has non-finite parameters")));
            }
            if s.size[0] <= 0.0 || s.size[1] <= 0.0 || s.size[0] > self.height as f64 || s.size[1] > self.width as f64 {
                return Err(Error::Config(format!("sprite {i} of size {:?} does not fit a {}x{} canvas", s.size, self.height, self.width)));
            }
        }
        Ok(())
    }

    /// True when every pixel moves with the camera: no relative sprite motion.
    pub fn is_constant_translation(&self) -> bool {
        self.sprites.iter().all(|s| s.velocity == [0.0, 0.0] && s.rotation == 0.0)
    }
}

struct Pose {
    center: [f64; 2],
    cos: f64,
    sin: f64,
    half: [f64; 2],
}

impl Pose {
    fn of(sprite: &Sprite, camera: [f64; 2], k: f64) -> Self {
        let theta = (sprite.rotation * k).to_radians();
        Pose {
            center: [sprite.position[0] + (sprite.velocity[0] + camera[0]) * k, sprite.position[1] + (sprite.velocity[1] + camera[1]) * k],
            cos: theta.cos(),
            sin: theta.sin(),
            half: [sprite.size[1] / 2.0, sprite.size[0] / 2.0],
        }
    }

    /// Sprite-local coordinates of screen point `(x, y)`.
    fn local(&self, x: f64, y: f64) -> [f64; 2] {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        [self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy]
    }

    fn screen(&self, u: [f64; 2]) -> [f64; 2] {
        [self.center[0] + self.cos * u[0] - self.sin * u[1], self.center[1] + self.sin * u[0] + self.cos * u[1]]
    }

    /// Anti-aliased box coverage in `[0, 1]`.
    fn coverage(&self, u: [f64; 2]) -> f64 {
        (0.5 + (self.half[0] - u[0].abs()).min(self.half[1] - u[1].abs())).clamp(0.0, 1.0)
    }
}

fn render_frame(spec: &SceneSpec, k: usize) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let kf = k as f64;
    let poses: Vec<Pose> = spec.sprites.iter().map(|s| Pose::of(s, spec.camera, kf)).collect();
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut rgb = texture(spec.background_seed, xf - spec.camera[0] * kf, yf - spec.camera[1] * kf);
            for (sprite, pose) in spec.sprites.iter().zip(&poses) {
                let u = pose.local(xf, yf);
                let a = pose.coverage(u);
                if a > 0.0 {
                    let tex = texture(sprite.texture_seed, u[0], u[1]);
                    for c in 0..3 {
                        rgb[c] = rgb[c] * (1.0 - a) + tex[c] * a;
                    }
                }
            }
            for c in 0..3 {
                data[c * plane + y * w + x] = rgb[c] as f32;
            }
        }
    }
    Tensor::new(&[1, 3, h, w], data).expect("sized buffer")
}

/// Renders all `spec.length` frames as `[1, 3, H, W]` tensors in `[0, 1]`.
pub fn render_sequence(spec: &SceneSpec) -> Result<Vec<Tensor>> {
    spec.validate()?;
    Ok((0..spec.length).map(|k| render_frame(spec, k)).collect())
}

/// Mean of the `n` frames centered at `center`.
pub fn synthesize_blur(frames: &[Tensor], center: usize, n: usize) -> Result<Tensor> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::Config(format!("blur window must be odd, got {n}")));
    }
    let half = n / 2;
    if center < half || center + half >= frames.len() {
        return Err(Error::Data(format!(
            "blur window {}..={} outside sequence of {} frames",
            center as i64 - half as i64,
            center + half,
            frames.len()
        )));
    }
    average(&frames[center - half..=center + half])
}

/// Arithmetic mean accumulated in 64 bits. Each pixel's samples are summed
/// in sorted order, so the result is bitwise independent of frame order.
pub fn average(frames: &[Tensor]) -> Result<Tensor> {
    let first = frames.first().ok_or_else(|| Error::Data("average of zero frames".into()))?;
    if let Some(f) = frames.iter().find(|f| f.shape() != first.shape()) {
        return Err(Error::Data(format!("frame shape {:?} differs from {:?}", f.shape(), first.shape())));
    }
    let n = frames.len() as f64;
    let mut vals = vec![0.0f32; frames.len()];
    let out = (0..first.numel())
        .map(|i| {
            for (v, f) in vals.iter_mut().zip(frames) {
                *v = f.data()[i];
            }
            vals.sort_unstable_by(f32::total_cmp);
            (vals.iter().map(|v| *v as f64).sum::<f64>() / n) as f32
        })
        .collect();
    Ok(Tensor::new(first.shape(), out)?)
}

/// Per-pixel displacement of frame `from`'s content into frame `to`.
///
/// Pixels whose center lies inside a sprite take the front-most sprite's
/// motion; all others take the camera motion. Disoccluded background is
/// not modeled.
pub fn analytic_flow(spec: &SceneSpec, from: usize, to: usize) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let gap = to as f64 - from as f64;
    let bg = [(spec.camera[0] * gap) as f32, (spec.camera[1] * gap) as f32];
    let src: Vec<Pose> = spec.sprites.iter().map(|s| Pose::of(s, spec.camera, from as f64)).collect();
    let dst: Vec<Pose> = spec.sprites.iter().map(|s| Pose::of(s, spec.camera, to as f64)).collect();
    let plane = h * w;
    let mut data = vec![0.0f32; 2 * plane];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut f = bg;
            for (ps, pd) in src.iter().zip(&dst).rev() {
                let u = ps.local(xf, yf);
                if ps.coverage(u) >= 0.5 {
                    let p = pd.screen(u);
                    f = [(p[0] - xf) as f32, (p[1] - yf) as f32];
                    break;
                }
            }
            data[y * w + x] = f[0];
            data[plane + y * w + x] = f[1];
        }
    }
    Tensor::new(&[1, 2, h, w], data).expect("sized buffer")
}

// ------------------------------------------------------------------- sample

/// Two blurry inputs with every latent frame and flow of their windows.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub indexing: FrameIndexing,
    /// Latent index of the first reference frame.
    pub t0: usize,
    pub blur: [Tensor; 2],
    /// `2N` frames in output-slot order.
    pub latents: Vec<Tensor>,
    /// Flows in `FrameIndexing::flow_pairs` order, when known.
    pub flows: Option<Vec<Tensor>>,
}

impl SequenceSample {
    pub fn t1(&self) -> usize {
        self.t0 + self.indexing.n
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.blur[0].shape();
        (s[2], s[3])
    }

    /// Builds the pair from latent frames, recomputing both blurs.
    pub fn from_latents(indexing: FrameIndexing, t0: usize, latents: Vec<Tensor>, flows: Option<Vec<Tensor>>) -> Result<Self> {
        if latents.len() != indexing.total() {
            return Err(Error::Data(format!("expected {} latent frames, got {}", indexing.total(), latents.len())));
        }
        if let Some(f) = &flows {
            if f.len() != indexing.num_flows() {
                return Err(Error::Data(format!("expected {} flows, got {}", indexing.num_flows(), f.len())));
            }
        }
        let n = indexing.n;
        let blur = [average(&latents[..n])?, average(&latents[n..])?];
        Ok(Self { indexing, t0, blur, latents, flows })
    }

    /// Largest deviation between each blur and the mean of its window.
    pub fn blur_residual(&self) -> Result<f64> {
        let n = self.indexing.n;
        let mut worst = 0.0f64;
        for w in 0..2 {
            let mean = average(&self.latents[w * n..(w + 1) * n])?;
            for (a, b) in mean.data().iter().zip(self.blur[w].data()) {
                worst = worst.max((*a as f64 - *b as f64).abs());
            }
        }
        Ok(worst)
    }

    /// Same spatial window `[y, y+h) x [x, x+w)` of every image and flow.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        let c = |t: &Tensor| crop_tensor(t, y, x, h, w);
        Ok(Self {
            indexing: self.indexing,
            t0: self.t0,
            blur: [c(&self.blur[0])?, c(&self.blur[1])?],
            latents: self.latents.iter().map(c).collect::<Result<_>>()?,
            flows: self.flows.as_ref().map(|fs| fs.iter().map(c).collect::<Result<_>>()).transpose()?,
        })
    }
}

/// Spatial crop of a rank-4 tensor.
pub fn crop_tensor(t: &Tensor, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
    let [b, c, th, tw] = t.dims4("crop")?;
    if y + h > th || x + w > tw {
        return Err(Error::Data(format!("crop {h}x{w} at ({y},{x}) exceeds {th}x{tw}")));
    }
    let mut data = Vec::with_capacity(b * c * h * w);
    for p in 0..b * c {
        for r in y..y + h {
            let row = (p * th + r) * tw;
            data.extend_from_slice(&t.data()[row + x..row + x + w]);
        }
    }
    Ok(Tensor::new(&[b, c, h, w], data)?)
}

/// Renders `spec` and builds the pair whose first reference is frame `N/2`.
pub fn make_sample(spec: &SceneSpec, n: usize) -> Result<SequenceSample> {
    let ix = FrameIndexing::new(n)?;
    if spec.length < ix.total() {
        return Err(Error::Config(format!("scene length {} < 2N = {}", spec.length, ix.total())));
    }
    let frames = render_sequence(spec)?;
    let t0 = ix.half();
    let blur = [synthesize_blur(&frames, t0, n)?, synthesize_blur(&frames, t0 + n, n)?];
    let flows = ix
        .flow_pairs()
        .into_iter()
        .map(|(s, r)| analytic_flow(spec, ix.latent_index(t0, s), ix.latent_index(t0, ix.ref_slot(r))))
        .collect();
    Ok(SequenceSample { indexing: ix, t0, blur, latents: frames[..ix.total()].to_vec(), flows: Some(flows) })
}

// ------------------------------------------------------------------ sampler

/// Random scene generator. Velocities are multiples of 1/64 px so flow
/// arithmetic over short gaps is exact in `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSampler {
    pub height: usize,
    pub width: usize,
    pub n: usize,
    pub sprites: [usize; 2],
    pub sprite_size: [f64; 2],
    pub speed: [f64; 2],
    /// Probability that a scene is a pure camera translation.
    pub translation_fraction: f64,
    /// Largest rotation rate, degrees per frame.
    pub max_rotation: f64,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            n: 7,
            sprites: [2, 4],
            sprite_size: [8.0, 16.0],
            speed: [0.5, 3.0],
            translation_fraction: 0.5,
            max_rotation: 0.0,
        }
    }
}

const VELOCITY_QUANTUM: f64 = 1.0 / 64.0;

impl SceneSampler {
    pub fn validate(&self) -> Result<()> {
        FrameIndexing::new(self.n)?;
        let ok = self.height > 0
            && self.width > 0
            && self.sprites[0] <= self.sprites[1]
            && 0.0 < self.sprite_size[0]
            && self.sprite_size[0] <= self.sprite_size[1]
            && self.sprite_size[1] <= self.height.min(self.width) as f64
            && 0.0 <= self.speed[0]
            && self.speed[0] <= self.speed[1]
            && (0.0..=1.0).contains(&self.translation_fraction)
            && self.max_rotation >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid scene sampler {self:?}")))
        }
    }

    fn velocity(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let speed = rng.gen_range(self.speed[0]..=self.speed[1]);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let q = |v: f64| (v / VELOCITY_QUANTUM).round() * VELOCITY_QUANTUM;
        let mut v = [q(speed * angle.cos()), q(speed * angle.sin())];
        while v[0].hypot(v[1]) < self.speed[0] {
            let i = usize::from(v[1].abs() > v[0].abs());
            v[i] += VELOCITY_QUANTUM.copysign(if v[i] == 0.0 { 1.0 } else { v[i] });
        }
        v
    }

    /// Scene `index` of the dataset seeded by `seed`; each index owns its
    /// own random stream.
    pub fn sample(&self, seed: u64, index: u64) -> Result<SceneSpec> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let length = 2 * self.n;
        let steps = (length - 1) as f64;
        let (hf, wf) = (self.height as f64, self.width as f64);
        let background_seed = rng.gen();
        let translation = rng.gen_bool(self.translation_fraction);
        let camera = if translation { self.velocity(&mut rng) } else { [0.0, 0.0] };
        let count = rng.gen_range(self.sprites[0]..=self.sprites[1]);
        let mut sprites = Vec::with_capacity(count);
        for _ in 0..count {
            let size = [rng.gen_range(self.sprite_size[0]..=self.sprite_size[1]), rng.gen_range(self.sprite_size[0]..=self.sprite_size[1])];
            let texture_seed = rng.gen();
            if translation {
                let position = [rng.gen_range(0.0..wf), rng.gen_range(0.0..hf)];
                sprites.push(Sprite { texture_seed, size, position, velocity: [0.0, 0.0], rotation: 0.0 });
                continue;
            }
            let rotation = if self.max_rotation > 0.0 { rng.gen_range(-self.max_rotation..=self.max_rotation) } else { 0.0 };
            let extent = if rotation != 0.0 { 0.5 * size[0].hypot(size[1]) } else { 0.0 };
            let (ex, ey) = if rotation != 0.0 { (extent, extent) } else { (size[1] / 2.0, size[0] / 2.0) };
            let mut velocity = self.velocity(&mut rng);
            // Shrink the motion until the whole trajectory stays on canvas.
            let range = |v: [f64; 2]| {
                let lo = [ex + (-v[0] * steps).max(0.0), ey + (-v[1] * steps).max(0.0)];
                let hi = [wf - 1.0 - ex - (v[0] * steps).max(0.0), hf - 1.0 - ey - (v[1] * steps).max(0.0)];
                (lo[0] <= hi[0] && lo[1] <= hi[1]).then_some((lo, hi))
            };
            let (lo, hi) = loop {
                if let Some(r) = range(velocity) {
                    break r;
                }
                if velocity[0].hypot(velocity[1]) <= self.speed[0] {
                    return Err(Error::Config(format!(
                        "sprite of size {size:?} cannot move {} px/frame for {steps} frames on a {}x{} canvas",
                        self.speed[0], self.height, self.width
                    )));
                }
                velocity = [
                    (velocity[0] * 0.75 / VELOCITY_QUANTUM).round() * VELOCITY_QUANTUM,
                    (velocity[1] * 0.75 / VELOCITY_QUANTUM).round() * VELOCITY_QUANTUM,
                ];
                if velocity[0].hypot(velocity[1]) < self.speed[0] {
                    let s = self.speed[0] / velocity[0].hypot(velocity[1]).max(1e-9);
                    velocity = velocity.map(|v| (v * s / VELOCITY_QUANTUM).abs().ceil().copysign(v) * VELOCITY_QUANTUM);
                }
            };
            let position = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
            sprites.push(Sprite { texture_seed, size, position, velocity, rotation });
        }
        Ok(SceneSpec { height: self.height, width: self.width, background_seed, sprites, camera, length })
    }
}

// ----------------------------------------------------------------- manifest

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    /// Output slot of the source frame.
    pub source: usize,
    /// Reference window, 0 or 1.
    pub reference: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub t0: usize,
    pub blur: [String; 2],
    pub latents: Vec<String>,
    #[serde(default)]
    pub flows: Vec<FlowRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

/// Paths are relative to the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub split: Split,
    pub samples: Vec<SampleRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn indexing(&self) -> Result<FrameIndexing> {
        FrameIndexing::new(self.n)
    }

    /// Structural checks that need no filesystem access.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA {
            return Err(Error::Data(format!("unsupported manifest schema {}", self.schema_version)));
        }
        let ix = self.indexing()?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::Data("manifest image size must be non-empty".into()));
        }
        for rec in &self.samples {
            if rec.latents.len() != ix.total() {
                return Err(Error::Data(format!("sample {}: {} latents, expected {}", rec.id, rec.latents.len(), ix.total())));
            }
            if rec.t0 < ix.half() {
                return Err(Error::Data(format!("sample {}: t0 {} < N/2", rec.id, rec.t0)));
            }
            if !rec.flows.is_empty() {
                let mut pairs: Vec<_> = rec.flows.iter().map(|f| (f.source, f.reference)).collect();
                pairs.sort_unstable();
                let mut want = ix.flow_pairs();
                want.sort_unstable();
                if pairs != want {
                    return Err(Error::Data(format!("sample {}: flow set does not cover every (source, reference) pair", rec.id)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io_at(path, e))
    }

    /// Reads and validates a manifest, including that every path exists.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let m = Self::from_json(&text)?;
        let root = path.parent().unwrap_or(Path::new("."));
        for rec in &m.samples {
            let all = rec.blur.iter().chain(&rec.latents).chain(rec.flows.iter().map(|f| &f.path));
            for p in all {
                if !root.join(p).is_file() {
                    return Err(Error::Io(format!("manifest {}: missing {}", path.display(), p)));
                }
            }
        }
        Ok(m)
    }

    /// Loads sample `i`, with blurs recomputed from the stored latents.
    pub fn load_sample(&self, root: &Path, i: usize) -> Result<SequenceSample> {
        let rec = self.samples.get(i).ok_or_else(|| Error::Data(format!("no sample {i}")))?;
        let ix = self.indexing()?;
        let latents = rec.latents.iter().map(|p| io::read_png(&root.join(p))).collect::<Result<Vec<_>>>()?;
        for l in &latents {
            if l.shape()[2..] != [self.height, self.width] {
                return Err(Error::Data(format!("sample {}: frame size {:?} differs from manifest", rec.id, &l.shape()[2..])));
            }
        }
        let flows = if rec.flows.is_empty() {
            None
        } else {
            let mut slots: Vec<Option<Tensor>> = vec![None; ix.num_flows()];
            for f in &rec.flows {
                slots[ix.flow_index(f.source, f.reference)] = Some(io::read_flo(&root.join(&f.path))?);
            }
            Some(slots.into_iter().map(|s| s.expect("validated flow set")).collect())
        };
        SequenceSample::from_latents(ix, rec.t0, latents, flows)
    }

    pub fn load_all(&self, root: &Path) -> Result<Vec<SequenceSample>> {
        (0..self.samples.len()).map(|i| self.load_sample(root, i)).collect()
    }

    /// Reads a manifest file and every sample it lists.
    pub fn open(path: &Path) -> Result<(Self, Vec<SequenceSample>)> {
        let m = Self::read(path)?;
        let samples = m.load_all(path.parent().unwrap_or(Path::new(".")))?;
        Ok((m, samples))
    }

    /// Whether each sample records a constant-translation scene.
    pub fn translation_mask(&self) -> Vec<bool> {
        self.samples.iter().map(|r| r.scene.as_ref().is_some_and(SceneSpec::is_constant_translation)).collect()
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io_at(path, e))
}

/// Writes one sample's frames (and flows, if any) under `root/id`.
fn write_sample(root: &Path, id: &str, sample: &SequenceSample, scene: Option<SceneSpec>) -> Result<SampleRecord> {
    let dir = root.join(id);
    create_dir(&dir)?;
    let ix = sample.indexing;
    let mut latents = Vec::with_capacity(ix.total());
    let mut quantized = Vec::with_capacity(ix.total());
    for (slot, frame) in sample.latents.iter().enumerate() {
        let rel = format!("{id}/latent_{slot:02}.png");
        io::write_png(&root.join(&rel), frame)?;
        latents.push(rel);
        quantized.push(io::quantize(frame));
    }
    let stored = SequenceSample::from_latents(ix, sample.t0, quantized, None)?;
    let mut blur = [String::new(), String::new()];
    for (w, b) in blur.iter_mut().enumerate() {
        *b = format!("{id}/blur_{w}.png");
        io::write_png(&root.join(&*b), &stored.blur[w])?;
    }
    let mut flows = Vec::new();
    if let Some(fs) = &sample.flows {
        for ((source, reference), f) in ix.flow_pairs().into_iter().zip(fs) {
            let rel = format!("{id}/flow_{source:02}_to_{reference}.flo");
            io::write_flo(&root.join(&rel), f)?;
            flows.push(FlowRecord { source, reference, path: rel });
        }
    }
    Ok(SampleRecord { id: id.to_string(), t0: sample.t0, blur, latents, flows, scene })
}

/// Renders every scene, writes frames, flows and `manifest.json` into
/// `out_dir`, and returns the manifest.
pub fn build_dataset(specs: &[SceneSpec], out_dir: &Path, n: usize, split: Split) -> Result<DatasetManifest> {
    let first = specs.first().ok_or_else(|| Error::Config("dataset needs at least one scene".into()))?;
    create_dir(out_dir)?;
    let mut samples = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        if (spec.height, spec.width) != (first.height, first.width) {
            return Err(Error::Config(format!("scene {i} canvas differs from scene 0")));
        }
        let sample = make_sample(spec, n)?;
        samples.push(write_sample(out_dir, &format!("sample_{i:04}"), &sample, Some(spec.clone()))?);
    }
    let m = DatasetManifest { schema_version: MANIFEST_SCHEMA, n, height: first.height, width: first.width, split, samples };
    m.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(m)
}

/// Builds a dataset from a directory of sharp frames.
///
/// Frames are taken in lexicographic order and grouped into disjoint runs
/// of `2N`. Flows are read from `frames_dir/flows/{a:05}_{b:05}.flo`
/// (frame positions in sorted order); a run lacking any of its flows is
/// kept for frame supervision only.
pub fn ingest_frames(frames_dir: &Path, out_dir: &Path, n: usize, split: Split) -> Result<DatasetManifest> {
    let ix = FrameIndexing::new(n)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(frames_dir)
        .map_err(|e| Error::io_at(frames_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.len() < ix.total() {
        return Err(Error::Data(format!("{} frames found, need at least {}", paths.len(), ix.total())));
    }
    let frames = paths.iter().map(|p| io::read_png(p)).collect::<Result<Vec<_>>>()?;
    let dims = frames[0].shape().to_vec();
    if let Some((p, f)) = paths.iter().zip(&frames).find(|(_, f)| f.shape() != dims.as_slice()) {
        return Err(Error::Data(format!(
            "ingestion: {} is {}x{}, expected {}x{}",
            p.display(),
            f.shape()[2],
            f.shape()[3],
            dims[2],
            dims[3]
        )));
    }
    create_dir(out_dir)?;
    let flow_dir = frames_dir.join("flows");
    let mut samples = Vec::new();
    for (i, run) in frames.chunks_exact(ix.total()).enumerate() {
        let base = i * ix.total();
        let t0 = base + ix.half();
        let mut flows = Vec::with_capacity(ix.num_flows());
        for (s, r) in ix.flow_pairs() {
            let p = flow_dir.join(format!("{:05}_{:05}.flo", base + s, base + ix.ref_slot(r)));
            if !p.is_file() {
                break;
            }
            let f = io::read_flo(&p)?;
            if f.shape()[2..] != dims[2..] {
                return Err(Error::Data(format!("ingestion: {} does not match frame size", p.display())));
            }
            flows.push(f);
        }
        let flows = (flows.len() == ix.num_flows()).then_some(flows);
        let sample = SequenceSample::from_latents(ix, t0, run.to_vec(), flows)?;
        samples.push(write_sample(out_dir, &format!("sample_{i:04}"), &sample, None)?);
    }
    let m = DatasetManifest { schema_version: MANIFEST_SCHEMA, n, height: dims[2], width: dims[3], split, samples };
    m.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(m)
}

/// Train and test splits drawn from one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub sampler: SceneSampler,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { sampler: SceneSampler::default(), train: 200, test: 20, seed: 0 }
    }
}

impl DatasetSpec {
    pub fn scenes(&self, split: Split) -> Result<Vec<SceneSpec>> {
        let (offset, count) = match split {
            Split::Train => (0, self.train),
            Split::Val | Split::Test => (self.train as u64, self.test),
        };
        (0..count as u64).map(|i| self.sampler.sample(self.seed, offset + i)).collect()
    }

    /// Reads a TOML spec (JSON when the extension says so).
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let spec: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
        };
        spec.sampler.validate()?;
        Ok(spec)
    }

    /// Writes `out_dir/train` and `out_dir/test`.
    pub fn generate(&self, out_dir: &Path) -> Result<(DatasetManifest, DatasetManifest)> {
        let n = self.sampler.n;
        let train = build_dataset(&self.scenes(Split::Train)?, &out_dir.join("train"), n, Split::Train)?;
        let test = build_dataset(&self.scenes(Split::Test)?, &out_dir.join("test"), n, Split::Test)?;
        Ok((train, test))
    }
}
