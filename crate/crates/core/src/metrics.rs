//! Reconstruction losses and evaluation metrics.
//!
//! All reductions accumulate in `f64` and run sequentially in index order, so
//! results are independent of the thread count.

use crate::error::{Error, Result};
use crate::field::ImageField;
use crate::sample::downscale_bilinear_2x;

/// Weight of the feature-space term in the total loss.
pub const DEFAULT_FEATURE_WEIGHT: f64 = 0.01;

/// Components of the view-synthesis loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub l1_hr: f64,
    pub l1_lr: f64,
    pub feature_term: Option<f64>,
    pub feature_weight: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l1_hr: f64, l1_lr: f64, feature_term: Option<f64>, feature_weight: f64) -> Self {
        LossReport {
            l1_hr,
            l1_lr,
            feature_term,
            feature_weight,
            total: l1_hr + l1_lr + feature_weight * feature_term.unwrap_or(0.0),
        }
    }
}

/// Maps an image to a list of feature fields, one per level.
///
/// Stands in for a pretrained classification network; levels are compared
/// with a mean squared error.
pub trait FeatureExtractor: Sync {
    fn extract(&self, img: &ImageField) -> Result<Vec<ImageField>>;
}

/// Deterministic test extractor: level `l` is `l` successive 2x average pools.
///
/// Odd sizes round up and replicate the last row or column.
#[derive(Clone, Copy, Debug)]
pub struct AvgPoolFeatures {
    pub levels: usize,
}

impl Default for AvgPoolFeatures {
    fn default() -> Self {
        AvgPoolFeatures { levels: 3 }
    }
}

/// 2x2 average pool with output size `ceil(n / 2)`.
pub fn avg_pool_2x(img: &ImageField) -> ImageField {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    ImageField::from_fn(oh, ow, ch, |y, x, c| {
        let ys = [2 * y, (2 * y + 1).min(h - 1)];
        let xs = [2 * x, (2 * x + 1).min(w - 1)];
        let mut acc = 0.0f64;
        for &yy in &ys {
            for &xx in &xs {
                acc += img.get(yy, xx, c) as f64;
            }
        }
        acc * 0.25
    })
}

impl FeatureExtractor for AvgPoolFeatures {
    fn extract(&self, img: &ImageField) -> Result<Vec<ImageField>> {
        let mut out = Vec::with_capacity(self.levels);
        let mut cur = img.clone();
        for _ in 0..self.levels {
            cur = avg_pool_2x(&cur);
            out.push(cur.clone());
        }
        Ok(out)
    }
}

fn mean_abs_diff(a: &ImageField, b: &ImageField) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    sum / a.data().len() as f64
}

fn mean_sq_diff(a: &ImageField, b: &ImageField) -> f64 {
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.data().len() as f64
}

/// Mean absolute difference of two equally shaped fields.
pub fn l1(a: &ImageField, b: &ImageField) -> Result<f64> {
    a.ensure_same_shape(b, "l1 operands")?;
    Ok(mean_abs_diff(a, b))
}

fn feature_distance(
    extractor: &dyn FeatureExtractor,
    a: &ImageField,
    b: &ImageField,
) -> Result<f64> {
    let fa = extractor.extract(a)?;
    let fb = extractor.extract(b)?;
    if fa.len() != fb.len() {
        return Err(Error::shape("feature level count", fa.len(), fb.len()));
    }
    let mut total = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        x.ensure_same_shape(y, "feature level")?;
        total += mean_sq_diff(x, y);
    }
    Ok(total)
}

/// Loss of a full-resolution prediction `out_hr` and its half-resolution
/// counterpart `out_lr` against the ground truth `gt`.
///
/// The l1 terms are means over all elements. With an extractor, the feature
/// term sums the per-level mean squared errors at both resolutions.
pub fn pan_loss(
    gt: &ImageField,
    out_hr: &ImageField,
    out_lr: &ImageField,
    features: Option<&dyn FeatureExtractor>,
    feature_weight: f64,
) -> Result<LossReport> {
    gt.ensure_same_shape(out_hr, "full-resolution prediction")?;
    let gt_half = downscale_bilinear_2x(gt)?;
    gt_half.ensure_same_shape(out_lr, "half-resolution prediction")?;
    let l1_hr = mean_abs_diff(gt, out_hr);
    let l1_lr = mean_abs_diff(&gt_half, out_lr);
    let feature_term = match features {
        Some(ex) => Some(feature_distance(ex, gt, out_hr)? + feature_distance(ex, &gt_half, out_lr)?),
        None => None,
    };
    Ok(LossReport::new(l1_hr, l1_lr, feature_term, feature_weight))
}

/// Full-reference image quality on the 0-255 scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub rmse: f64,
    /// `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
}

impl ImageMetrics {
    pub fn to_kv(&self) -> String {
        format!(
            "rmse={} psnr={} ssim={}",
            fmt_sig(self.rmse),
            fmt_sig(self.psnr),
            fmt_sig(self.ssim)
        )
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// RMSE, PSNR and SSIM of `pred` against `gt`.
///
/// `range` is the nominal maximum of the inputs (1.0 for unit images, 255.0
/// for 8-bit scale); values are rescaled to 0-255 before measuring.
pub fn image_metrics(pred: &ImageField, gt: &ImageField, range: f64) -> Result<ImageMetrics> {
    pred.ensure_same_shape(gt, "prediction vs ground truth")?;
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::precondition(format!("value range must be positive, got {range}")));
    }
    let scale = PEAK / range;
    let mse = mean_sq_diff(pred, gt) * scale * scale;
    let rmse = mse.sqrt();
    let psnr = if rmse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (PEAK / rmse).log10()
    };
    Ok(ImageMetrics {
        rmse,
        psnr,
        ssim: ssim(pred, gt, scale),
    })
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let half = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over valid window centers and channels.
///
/// Uses an 11x11 Gaussian window (sigma 1.5); images smaller than the
/// window use the largest odd window that fits.
fn ssim(a: &ImageField, b: &ImageField, scale: f64) -> f64 {
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for c in 0..ch {
        for y0 in 0..=h - size {
            for x0 in 0..=w - size {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, gy) in g.iter().enumerate() {
                    for (dx, gx) in g.iter().enumerate() {
                        let wgt = gy * gx;
                        let u = a.get(y0 + dy, x0 + dx, c) as f64 * scale;
                        let v = b.get(y0 + dy, x0 + dx, c) as f64 * scale;
                        mx += wgt * u;
                        my += wgt * v;
                        xx += wgt * u * u;
                        yy += wgt * v * v;
                        xy += wgt * u * v;
                    }
                }
                let sx = xx - mx * mx;
                let sy = yy - my * my;
                let sxy = xy - mx * my;
                let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
                let den = (mx * mx + my * my + c1) * (sx + sy + c2);
                total += num / den;
                count += 1;
            }
        }
    }
    total / count as f64
}

/// Aggregate depth (or disparity) accuracy over valid pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rms: f64,
    pub log_rms: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl DepthMetrics {
    pub fn to_kv(&self) -> String {
        format!(
            "abs_rel={} sq_rel={} rms={} log_rms={} a1={} a2={} a3={}",
            fmt_sig(self.abs_rel),
            fmt_sig(self.sq_rel),
            fmt_sig(self.rms),
            fmt_sig(self.log_rms),
            fmt_sig(self.a1),
            fmt_sig(self.a2),
            fmt_sig(self.a3)
        )
    }
}

/// Standard depth metrics of `pred` against `gt` on pixels where `mask` is nonzero.
///
/// `a_k` is the fraction of pixels with `max(p/g, g/p) < 1.25^k` (strict).
pub fn depth_metrics(pred: &ImageField, gt: &ImageField, mask: &ImageField) -> Result<DepthMetrics> {
    pred.ensure_same_shape(gt, "predicted vs ground-truth depth")?;
    gt.ensure_channels(1, "depth map")?;
    gt.ensure_same_shape(mask, "validity mask")?;
    let (mut abs_rel, mut sq_rel, mut sq, mut log_sq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut hits = [0usize; 3];
    let mut n = 0usize;
    for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask.data()) {
        if m == 0.0 {
            continue;
        }
        if p <= 0.0 || g <= 0.0 {
            return Err(Error::precondition(format!(
                "depth values on the mask must be positive, got pred={p} gt={g}"
            )));
        }
        let (p, g) = (p as f64, g as f64);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let ld = p.ln() - g.ln();
        log_sq += ld * ld;
        let ratio = (p / g).max(g / p);
        for (k, hit) in hits.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *hit += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::precondition("validity mask selects no pixels"));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rms: (sq / nf).sqrt(),
        log_rms: (log_sq / nf).sqrt(),
        a1: hits[0] as f64 / nf,
        a2: hits[1] as f64 / nf,
        a3: hits[2] as f64 / nf,
    })
}

/// Formats a value with 6 significant digits in the style of C's `%g`.
pub fn fmt_sig(v: f64) -> String {
    const DIGITS: usize = 6;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= DIGITS as i32 {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
