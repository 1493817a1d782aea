//! Finite-difference verification of the t-kernel gradients.
//!
//! A random double-precision instance is scored with `L = sum(out^2) / 2`,
//! whose upstream gradient is `out` itself. Since `L` is quadratic in every
//! single parameter, central differences are exact up to rounding.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::metrics::fmt_sig;
use crate::tkernel::{blend_backward, blend_forward, BlendField, PanSpec, TKernelField};

/// Smallest admissible height and width.
pub const MIN_SIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub pan_amount: f64,
    pub channels: usize,
    /// Central-difference step.
    pub step: f64,
    /// Entries checked per gradient group; smaller groups are checked fully.
    pub samples: usize,
}

impl GradcheckConfig {
    pub fn new(seed: u64, height: usize, width: usize) -> Self {
        GradcheckConfig {
            seed,
            height,
            width,
            pan_amount: PanSpec::REFERENCE_PAN,
            channels: 3,
            step: 1e-3,
            samples: 64,
        }
    }
}

/// Largest relative error per gradient group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    pub kernels: f64,
    pub weights: f64,
    pub image: f64,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.kernels.max(self.weights).max(self.image)
    }

    /// Every group strictly below `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max() < tol
    }

    pub fn to_kv(&self) -> String {
        format!(
            "grad_kernels={} grad_weights={} grad_img={}",
            fmt_sig(self.kernels),
            fmt_sig(self.weights),
            fmt_sig(self.image)
        )
    }
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

struct Instance {
    img: Field<f64>,
    kernels: TKernelField<f64>,
    weights: BlendField<f64>,
    spec: PanSpec,
}

fn simplex_field(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Field<f64> {
    let mut data: Vec<f64> = (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
    for px in data.chunks_mut(c) {
        let s: f64 = px.iter().sum();
        px.iter_mut().for_each(|v| *v /= s);
    }
    Field::new(h, w, c, data).expect("generated field is well formed")
}

fn instance(cfg: &GradcheckConfig) -> Result<Instance> {
    if cfg.height < MIN_SIDE || cfg.width < MIN_SIDE {
        return Err(Error::precondition(format!(
            "gradient check needs at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
            cfg.height, cfg.width
        )));
    }
    if cfg.channels == 0 || !(cfg.step.is_finite() && cfg.step > 0.0) {
        return Err(Error::precondition("channels and step must be positive"));
    }
    let spec = PanSpec::new(cfg.pan_amount);
    spec.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let img_data = (0..h * w * cfg.channels).map(|_| rng.gen_range(0.0..1.0)).collect();
    let img = Field::new(h, w, cfg.channels, img_data)?;
    let layout = spec.layout();
    let kernels = TKernelField::new(simplex_field(&mut rng, h, w, layout.channels()), layout)?;
    let weights = BlendField::new(simplex_field(&mut rng, h, w, spec.n_dilations));
    Ok(Instance {
        img,
        kernels,
        weights,
        spec,
    })
}

fn loss(inst: &Instance, img: &Field<f64>, kernels: &TKernelField<f64>, weights: &BlendField<f64>) -> f64 {
    let out = blend_forward(img, kernels, weights, &inst.spec).expect("validated instance");
    out.data().iter().map(|v| v * v).sum::<f64>() / 2.0
}

/// Compares `analytic` against central differences of `eval` on a sample of
/// entries of `base`.
fn check_group(
    base: &Field<f64>,
    analytic: &Field<f64>,
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
    eval: impl Fn(&Field<f64>) -> f64,
) -> f64 {
    let len = base.data().len();
    let indices: Vec<usize> = if len <= cfg.samples {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, cfg.samples).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut probe = base.clone();
    let mut worst = 0.0f64;
    for i in indices {
        let orig = base.data()[i];
        probe.data_mut()[i] = orig + cfg.step;
        let plus = eval(&probe);
        probe.data_mut()[i] = orig - cfg.step;
        let minus = eval(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}

/// Runs the check for one random instance.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let inst = instance(cfg)?;
    let out = blend_forward(&inst.img, &inst.kernels, &inst.weights, &inst.spec)?;
    let grads = blend_backward(&inst.img, &inst.kernels, &inst.weights, &inst.spec, &out)?;
    let grad_img = grads.image.expect("image gradient requested");
    let layout = inst.kernels.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    let kernels = check_group(inst.kernels.field(), grads.kernels.field(), cfg, &mut rng, |k| {
        let k = TKernelField::new(k.clone(), layout).expect("same layout");
        loss(&inst, &inst.img, &k, &inst.weights)
    });
    let weights = check_group(inst.weights.field(), grads.weights.field(), cfg, &mut rng, |w| {
        loss(&inst, &inst.img, &inst.kernels, &BlendField::new(w.clone()))
    });
    let image = check_group(&inst.img, &grad_img, cfg, &mut rng, |img| {
        loss(&inst, img, &inst.kernels, &inst.weights)
    });
    Ok(GradcheckReport {
        kernels,
        weights,
        image,
    })
}
