//! Per-pixel optimization of softmax-parameterized kernel and blend fields.

use crate::error::{Error, Result};
use crate::field::{Field, ImageField};
use crate::metrics::{l1, LossReport, DEFAULT_FEATURE_WEIGHT};
use crate::tkernel::{blend_backward_params, blend_forward, BlendField, PanSpec, TKernelField};

use super::scene::SceneOracle;

/// Per-pixel softmax over the channels of a logit field.
pub fn softmax_channels(logits: &ImageField) -> ImageField {
    let ch = logits.channels();
    Field::from_rows(logits.height(), logits.width(), ch, |y, row| {
        for (dst, src) in row.chunks_mut(ch).zip(logits.row(y).chunks(ch)) {
            let m = src.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
            let mut sum = 0.0f64;
            for (d, &s) in dst.iter_mut().zip(src) {
                let e = (s as f64 - m).exp();
                *d = e as f32;
                sum += e;
            }
            for d in dst.iter_mut() {
                *d = (*d as f64 / sum) as f32;
            }
        }
    })
}

/// Pulls a gradient on softmax outputs back onto the logits:
/// `dz_t = s_t * (g_t - sum_u s_u g_u)`.
fn softmax_backward(probs: &ImageField, grad: &ImageField) -> Vec<f64> {
    let ch = probs.channels();
    let mut out = vec![0.0f64; probs.data().len()];
    for ((o, s), g) in out
        .chunks_mut(ch)
        .zip(probs.data().chunks(ch))
        .zip(grad.data().chunks(ch))
    {
        let dot: f64 = s.iter().zip(g).map(|(&s, &g)| s as f64 * g as f64).sum();
        for ((o, &s), &g) in o.iter_mut().zip(s).zip(g) {
            *o = s as f64 * (g as f64 - dot);
        }
    }
    out
}

/// Update rule applied to the logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    GradientDescent,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub step_size: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 500,
            step_size: 0.5,
            optimizer: Optimizer::GradientDescent,
        }
    }
}

/// One entry of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    /// Number of updates applied before this loss was measured.
    pub iter: usize,
    pub report: LossReport,
    /// Lowest total seen up to and including this entry.
    pub best_total: f64,
}

#[derive(Clone, Debug, Default)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Kernel and blend logits with their optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub kernel_logits: ImageField,
    pub blend_logits: ImageField,
    pub spec: PanSpec,
    pub step: usize,
    pub history: Vec<TrainRecord>,
    moments: Option<Moments>,
}

impl TrainState {
    /// All logits zero, i.e. uniform kernels and uniform blend weights.
    pub fn uniform(height: usize, width: usize, spec: PanSpec) -> Self {
        TrainState {
            kernel_logits: ImageField::zeros(height, width, spec.layout().channels()),
            blend_logits: ImageField::zeros(height, width, spec.n_dilations),
            spec,
            step: 0,
            history: Vec::new(),
            moments: None,
        }
    }

    pub fn kernels(&self) -> TKernelField {
        TKernelField::new(softmax_channels(&self.kernel_logits), self.spec.layout())
            .expect("logit field has the layout's channel count")
    }

    pub fn weights(&self) -> BlendField {
        BlendField::new(softmax_channels(&self.blend_logits))
    }

    /// Synthesizes the panned view of `center` with the current fields.
    pub fn predict(&self, center: &ImageField) -> Result<ImageField> {
        blend_forward(center, &self.kernels(), &self.weights(), &self.spec)
    }
}

/// The single-resolution loss: the low-resolution term repeats the
/// full-resolution one.
fn toy_loss(pred: &ImageField, target: &ImageField) -> Result<LossReport> {
    let l = l1(pred, target)?;
    Ok(LossReport::new(l, l, None, DEFAULT_FEATURE_WEIGHT))
}

fn check_scene(scene: &SceneOracle, spec: &PanSpec) -> Result<()> {
    spec.validate()?;
    if spec.pan_amount != scene.reference_pan {
        return Err(Error::precondition(format!(
            "pan amount {} differs from the scene's pan {}",
            spec.pan_amount, scene.reference_pan
        )));
    }
    Ok(())
}

fn apply_update(
    params: &mut [f32],
    grad: &[f64],
    offset: usize,
    cfg: &TrainConfig,
    moments: &mut Option<Moments>,
    step: usize,
) {
    match cfg.optimizer {
        Optimizer::GradientDescent => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p = (*p as f64 - cfg.step_size * g) as f32;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let m = moments.as_mut().expect("moments allocated for adam");
            let t = step as i32;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
                let (m1, m2) = (&mut m.first[offset + i], &mut m.second[offset + i]);
                *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                let update = (*m1 / c1) / ((*m2 / c2).sqrt() + eps);
                *p = (*p as f64 - cfg.step_size * update) as f32;
            }
        }
    }
}

/// Fits per-pixel kernel and blend logits so that blending the scene's center
/// view reproduces its panned view.
///
/// The loss is the mean absolute error (reported twice, for the full and the
/// degenerate half resolution term). Updates use its gradient scaled by the
/// pixel count, so each pixel's parameters see the gradient of their own
/// pixel's error. The history holds the initial loss followed by the loss
/// after every update.
pub fn train_toy(scene: &SceneOracle, spec: PanSpec, cfg: &TrainConfig) -> Result<TrainState> {
    check_scene(scene, &spec)?;
    let (h, w) = (scene.center.height(), scene.center.width());
    let mut state = TrainState::uniform(h, w, spec);
    resume(&mut state, scene, cfg)?;
    Ok(state)
}

/// Runs `cfg.iters` further updates on an existing state.
pub fn resume(state: &mut TrainState, scene: &SceneOracle, cfg: &TrainConfig) -> Result<()> {
    check_scene(scene, &state.spec)?;
    if !(cfg.step_size.is_finite() && cfg.step_size > 0.0) {
        return Err(Error::precondition("step size must be positive"));
    }
    if matches!(cfg.optimizer, Optimizer::Adam { .. }) && state.moments.is_none() {
        let n = state.kernel_logits.data().len() + state.blend_logits.data().len();
        state.moments = Some(Moments {
            first: vec![0.0; n],
            second: vec![0.0; n],
        });
    }
    let target = &scene.panned;
    let channels = target.channels() as f64;
    let mut best = state.history.last().map_or(f64::INFINITY, |r| r.best_total);
    let mut record = |state: &mut TrainState, report: LossReport| -> Result<()> {
        if !report.total.is_finite() {
            return Err(Error::Diverged { step: state.step });
        }
        best = best.min(report.total);
        state.history.push(TrainRecord {
            iter: state.step,
            report,
            best_total: best,
        });
        Ok(())
    };

    let mut pred = state.predict(&scene.center)?;
    if state.history.is_empty() {
        record(state, toy_loss(&pred, target)?)?;
    }
    for _ in 0..cfg.iters {
        let kernels = state.kernels();
        let weights = state.weights();
        // d(l1_hr + l1_lr)/d(pred) scaled by the pixel count.
        let grad_out = Field::<f32>::from_rows(pred.height(), pred.width(), pred.channels(), |y, row| {
            for ((g, &p), &t) in row.iter_mut().zip(pred.row(y)).zip(target.row(y)) {
                let r = p as f64 - t as f64;
                *g = if r > 0.0 {
                    (2.0 / channels) as f32
                } else if r < 0.0 {
                    (-2.0 / channels) as f32
                } else {
                    0.0
                };
            }
        });
        let grads = blend_backward_params(&scene.center, &kernels, &weights, &state.spec, &grad_out)?;
        let dk = softmax_backward(kernels.field(), grads.kernels.field());
        let dw = softmax_backward(weights.field(), grads.weights.field());
        state.step += 1;
        let kernel_len = dk.len();
        apply_update(state.kernel_logits.data_mut(), &dk, 0, cfg, &mut state.moments, state.step);
        apply_update(state.blend_logits.data_mut(), &dw, kernel_len, cfg, &mut state.moments, state.step);
        pred = state.predict(&scene.center)?;
        record(state, toy_loss(&pred, target)?)?;
    }
    Ok(())
}
