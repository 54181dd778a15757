//! Central finite-difference gradient checks.
//!
//! Analytic gradients come from the `f32` graph; the numeric side re-runs the
//! same op in `f64` with a small step so rounding does not swamp the
//! difference quotient. Each case projects the op output onto a fixed random
//! tensor so every output element contributes to the scalar being checked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::conv::ConvGeom;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One differentiable operation under test.
pub trait GradCase {
    fn name(&self) -> String;

    /// Fresh random inputs for one instance.
    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>>;

    /// Applies the op to bound input leaves.
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub instances: usize,
    /// Worst `‖analytic − numeric‖∞ / ‖numeric‖∞` over instances and inputs.
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tolerance
    }
}

/// Relative error between two gradient vectors, scaled by the numeric one.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn round_to_f32(t: &Tensor<f64>) -> Tensor<f64> {
    t.cast::<f32>().cast::<f64>()
}

fn projected<T: Scalar>(case: &impl GradCase, g: &mut Graph<T>, vars: &[Var], proj: &Tensor<f64>) -> Result<Var> {
    let out = case.apply(g, vars)?;
    let p = g.constant(if g.shape(out) == proj.shape() { proj.cast() } else { Tensor::full(g.shape(out), T::from_f64(proj.data()[0])) });
    let m = g.mul(out, p)?;
    g.sum(m)
}

fn projection_for(case: &impl GradCase, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = case.apply(&mut g, &vars)?;
    Ok(Tensor::uniform(g.shape(out), -1.0, 1.0, rng))
}

fn loss_f64(case: &impl GradCase, inputs: &[Tensor<f64>], proj: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let l = projected(case, &mut g, &vars, proj)?;
    Ok(g.item(l))
}

/// Runs `instances` random checks of `case` at the given tolerance.
pub fn check(case: &impl GradCase, instances: usize, tolerance: f64, seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let inputs: Vec<Tensor<f64>> = case.inputs(&mut rng).iter().map(round_to_f32).collect();
        let proj = round_to_f32(&projection_for(case, &inputs, &mut rng)?);

        let mut g = Graph::<f32>::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.cast())).collect();
        let l = projected(case, &mut g, &vars, &proj)?;
        g.backward(l)?;

        for (k, var) in vars.iter().enumerate() {
            let analytic: Vec<f64> = match g.grad(*var) {
                Some(gr) => gr.iter().map(|v| *v as f64).collect(),
                None => vec![0.0; inputs[k].numel()],
            };
            let mut numeric = vec![0.0; inputs[k].numel()];
            for (i, slot) in numeric.iter_mut().enumerate() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += eps;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= eps;
                *slot = (loss_f64(case, &plus, &proj)? - loss_f64(case, &minus, &proj)?) / (2.0 * eps);
            }
            worst = worst.max(relative_error(&analytic, &numeric));
        }
    }
    Ok(GradReport { name: case.name(), instances, max_rel_err: worst, tolerance })
}

fn rand4(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(&shape, lo, hi, rng)
}

/// Small random batch/channel/spatial sizes, at most `2×4×6×6`.
fn small_dims(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(3..=6), rng.gen_range(3..=6)]
}

#[derive(Debug, Clone, Copy)]
pub enum Case {
    Conv2d { stride: usize, dilation: usize },
    ConvTranspose2d,
    GridSample,
    AffineGridSample,
    Correlation,
    Upsample2x,
    UpsampleFlow2x,
    ResizeDown,
    LeakyRelu,
    ConcatChannels,
    BatchConcatSlice,
    Crop,
    AddSub,
    Mul,
    Scale,
    Sum,
    Mean,
    AbsMean,
    Epe,
    GlobalAvgPool,
    Linear,
}

impl Case {
    /// Every differentiable op of the engine.
    pub fn all() -> Vec<Case> {
        use Case::*;
        vec![
            Conv2d { stride: 1, dilation: 1 },
            Conv2d { stride: 2, dilation: 1 },
            Conv2d { stride: 1, dilation: 2 },
            ConvTranspose2d,
            GridSample,
            AffineGridSample,
            Correlation,
            Upsample2x,
            UpsampleFlow2x,
            ResizeDown,
            LeakyRelu,
            ConcatChannels,
            BatchConcatSlice,
            Crop,
            AddSub,
            Mul,
            Scale,
            Sum,
            Mean,
            AbsMean,
            Epe,
            GlobalAvgPool,
            Linear,
        ]
    }
}

impl GradCase for Case {
    fn name(&self) -> String {
        match self {
            Case::Conv2d { stride, dilation } => format!("conv2d(stride={stride}, dilation={dilation})"),
            other => {
                let s = format!("{other:?}");
                let mut out = String::new();
                for (i, ch) in s.chars().enumerate() {
                    if ch.is_uppercase() && i > 0 {
                        out.push('_');
                    }
                    out.push(ch.to_ascii_lowercase());
                }
                out
            }
        }
    }

    fn inputs(&self, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
        let [b, c, h, w] = small_dims(rng);
        match self {
            Case::Conv2d { .. } => {
                let cout = rng.gen_range(1..=3);
                vec![rand4(rng, [b, c, h, w], -1.0, 1.0), rand4(rng, [cout, c, 3, 3], -1.0, 1.0), Tensor::uniform(&[cout], -1.0, 1.0, rng)]
            }
            Case::ConvTranspose2d => {
                let cout = rng.gen_range(1..=3);
                let (h, w) = (h.min(3), w.min(3));
                vec![rand4(rng, [b, c, h, w], -1.0, 1.0), rand4(rng, [c, cout, 4, 4], -1.0, 1.0), Tensor::uniform(&[cout], -1.0, 1.0, rng)]
            }
            Case::GridSample => vec![rand4(rng, [b, c, h, w], -1.0, 1.0), rand4(rng, [b, 2, h, w], -1.6, 1.6)],
            Case::AffineGridSample => {
                let mut theta = Tensor::uniform(&[b, 6], -0.3, 0.3, rng);
                for bi in 0..b {
                    theta.data_mut()[bi * 6] += 0.9;
                    theta.data_mut()[bi * 6 + 4] += 0.9;
                }
                vec![rand4(rng, [b, c, h, w], -1.0, 1.0), theta]
            }
            Case::Correlation => vec![rand4(rng, [b, c, h, w], -1.0, 1.0), rand4(rng, [b, c, h, w], -1.0, 1.0)],
            Case::Upsample2x
            | Case::LeakyRelu
            | Case::Crop
            | Case::Scale
            | Case::Sum
            | Case::Mean
            | Case::AbsMean
            | Case::GlobalAvgPool => {
                vec![rand4(rng, [b, c, h, w], -1.0, 1.0)]
            }
            Case::UpsampleFlow2x => vec![rand4(rng, [b, 2, h, w], -2.0, 2.0)],
            Case::ResizeDown => vec![rand4(rng, [b, c, 2 * h, 2 * w], -1.0, 1.0)],
            Case::ConcatChannels => {
                let c2 = rng.gen_range(1..=3);
                vec![rand4(rng, [b, c, h, w], -1.0, 1.0), rand4(rng, [b, c2, h, w], -1.0, 1.0)]
            }
            Case::BatchConcatSlice | Case::AddSub | Case::Mul => {
                vec![rand4(rng, [b, c, h, w], -1.0, 1.0), rand4(rng, [b, c, h, w], -1.0, 1.0)]
            }
            Case::Epe => vec![rand4(rng, [b, 2, h, w], -2.0, 2.0), rand4(rng, [b, 2, h, w], -2.0, 2.0)],
            Case::Linear => {
                let fin = rng.gen_range(1..=6);
                let fout = rng.gen_range(1..=6);
                vec![
                    Tensor::uniform(&[b, fin], -1.0, 1.0, rng),
                    Tensor::uniform(&[fout, fin], -1.0, 1.0, rng),
                    Tensor::uniform(&[fout], -1.0, 1.0, rng),
                ]
            }
        }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var> {
        match *self {
            Case::Conv2d { stride, dilation } => {
                let geom = if dilation > 1 { ConvGeom::dilated(dilation) } else { ConvGeom::new(stride, 1) };
                g.conv2d(v[0], v[1], Some(v[2]), geom)
            }
            Case::ConvTranspose2d => g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1),
            Case::GridSample => g.grid_sample(v[0], v[1]),
            Case::AffineGridSample => g.affine_grid_sample(v[0], v[1]),
            Case::Correlation => g.correlation(v[0], v[1], 2),
            Case::Upsample2x => g.upsample2x(v[0]),
            Case::UpsampleFlow2x => g.upsample_flow2x(v[0]),
            Case::ResizeDown => {
                let [_, _, h, w] = g.value(v[0]).dims4("resize")?;
                g.resize(v[0], h / 2, w / 2, 0.5)
            }
            Case::LeakyRelu => g.leaky_relu(v[0], 0.1),
            Case::ConcatChannels => g.concat_channels(&[v[0], v[1]]),
            Case::BatchConcatSlice => {
                let b = g.shape(v[0])[0];
                let cat = g.concat_batch(&[v[0], v[1]])?;
                g.slice_batch(cat, b / 2, b + 1 - b / 2)
            }
            Case::Crop => {
                let [_, _, h, w] = g.value(v[0]).dims4("crop")?;
                g.crop(v[0], h - 1, w - 2)
            }
            Case::AddSub => {
                let s = g.add(v[0], v[1])?;
                g.sub(s, v[1]).and_then(|d| g.sub(d, v[1]))
            }
            Case::Mul => g.mul(v[0], v[1]),
            Case::Scale => g.scale(v[0], -1.7),
            Case::Sum => g.sum(v[0]),
            Case::Mean => g.mean(v[0]),
            Case::AbsMean => g.abs_mean(v[0]),
            Case::Epe => g.epe(v[0], v[1]),
            Case::GlobalAvgPool => g.global_avg_pool(v[0]),
            Case::Linear => g.linear(v[0], v[1], Some(v[2])),
        }
    }
}

/// Checks every op with `instances` random instances each.
pub fn run_suite(instances: usize, tolerance: f64, seed: u64) -> Result<Vec<GradReport>> {
    Case::all().iter().enumerate().map(|(i, c)| check(c, instances, tolerance, seed.wrapping_add(i as u64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[2.0, 4.0], &[2.0, 4.0]), 0.0);
        assert!((relative_error(&[2.0, 4.2], &[2.0, 4.0]) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // abs_mean checked against a sign-flipped copy must fail.
        let analytic = [1.0, -1.0];
        let numeric = [-1.0, 1.0];
        assert!(relative_error(&analytic, &numeric) > 1.0);
    }
}
