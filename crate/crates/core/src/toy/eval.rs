//! Scoring a trained state against the scene oracle.

use crate::error::{Error, Result};
use crate::field::ImageField;
use crate::geometry::primitive_disparity;
use crate::metrics::{depth_metrics, fmt_sig, image_metrics, DepthMetrics, ImageMetrics};
use crate::tkernel::PanSpec;

use super::scene::{border_margin, SceneOracle};
use super::train::TrainState;

/// Smallest predicted disparity fed to the depth metrics, which need
/// positive values.
const DISPARITY_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ToyEval {
    /// Reconstruction quality on the interior columns.
    pub image: ImageMetrics,
    /// Depth metrics on valid pixels with positive true disparity, if any.
    pub depth: Option<DepthMetrics>,
    /// Mean absolute error of the normalized disparity on valid pixels.
    pub disparity_mae: f64,
    pub valid_pixels: usize,
    /// Border columns excluded on each side.
    pub margin: usize,
    pub reconstruction: ImageField,
    pub disparity: ImageField,
}

impl ToyEval {
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "{} disp_mae={} valid={}",
            self.image.to_kv(),
            fmt_sig(self.disparity_mae),
            self.valid_pixels
        );
        if let Some(d) = &self.depth {
            s.push(' ');
            s.push_str(&d.to_kv());
        }
        s
    }
}

fn crop_columns(img: &ImageField, margin: usize) -> ImageField {
    let w = img.width() - 2 * margin;
    ImageField::from_fn(img.height(), w, img.channels(), |y, x, c| {
        img.get(y, x + margin, c) as f64
    })
}

/// Reconstruction and disparity accuracy of `state` on `scene`.
///
/// The kernels live in the panned frame, so the extracted disparity is
/// compared with the oracle's panned-frame disparity divided by `|P_a|`.
/// Valid pixels are away from the left and right borders and not
/// disoccluded.
pub fn eval_toy(state: &TrainState, scene: &SceneOracle, spec: &PanSpec) -> Result<ToyEval> {
    let (h, w) = (scene.center.height(), scene.center.width());
    if state.kernel_logits.height() != h || state.kernel_logits.width() != w {
        return Err(Error::shape(
            "trained state",
            format!("{h}x{w}"),
            format!("{}x{}", state.kernel_logits.height(), state.kernel_logits.width()),
        ));
    }
    let margin = border_margin(scene, spec.pan_amount);
    if 2 * margin >= w {
        return Err(Error::precondition(format!(
            "scene width {w} leaves no interior beyond a {margin} px border"
        )));
    }
    let kernels = state.kernels();
    let reconstruction =
        crate::tkernel::blend_forward(&scene.center, &kernels, &state.weights(), spec)?;
    let image = image_metrics(
        &crop_columns(&reconstruction, margin),
        &crop_columns(&scene.panned, margin),
        1.0,
    )?;

    let disparity = primitive_disparity(&kernels)?;
    let pan = spec.pan_amount.abs();
    let valid = |y: usize, x: usize| {
        x >= margin && x < w - margin && scene.disocclusion.get(y, x, 0) == 0.0
    };
    let mut abs_err = 0.0f64;
    let mut valid_pixels = 0usize;
    for y in 0..h {
        for x in 0..w {
            if valid(y, x) {
                let truth = scene.panned_disparity.get(y, x, 0) as f64 / pan;
                abs_err += (disparity.get(y, x, 0) as f64 - truth).abs();
                valid_pixels += 1;
            }
        }
    }
    let disparity_mae = abs_err / valid_pixels.max(1) as f64;

    let truth = scene.panned_disparity.map(|v| (v as f64 / pan) as f32);
    let mask = ImageField::from_fn(h, w, 1, |y, x, _| {
        if valid(y, x) && truth.get(y, x, 0) > 0.0 {
            1.0
        } else {
            0.0
        }
    });
    let depth = if mask.data().iter().any(|&m| m > 0.0) {
        let pred = disparity.map(|v| (v as f64).max(DISPARITY_FLOOR) as f32);
        Some(depth_metrics(&pred, &truth, &mask)?)
    } else {
        None
    };

    Ok(ToyEval {
        image,
        depth,
        disparity_mae,
        valid_pixels,
        margin,
        reconstruction,
        disparity,
    })
}
