//! Geometry read out of t-kernel fields.
//!
//! Disparity is the expected long-wing tap index normalized by the wing
//! length, so `1.0` corresponds to `|P_a|` pixels. Occlusion is the mass a
//! kernel puts on the taps that do not point in the pan direction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::{ImageField, Scalar};
use crate::sample::downscale_bilinear_2x;
use crate::tkernel::{KernelLayout, TKernelField};

fn ensure_default_layout(layout: KernelLayout) -> Result<()> {
    let expected = KernelLayout::default();
    if layout != expected {
        return Err(Error::shape(
            "kernel layout",
            format!("{expected:?}"),
            format!("{layout:?}"),
        ));
    }
    Ok(())
}

/// Normalized disparity `sum_i (i / n_long) * T_long_i`, clamped to `[0, 1]`.
pub fn primitive_disparity<T: Scalar>(kernels: &TKernelField<T>) -> Result<ImageField> {
    let layout = kernels.layout();
    ensure_default_layout(layout)?;
    let field = kernels.field();
    let n_long = layout.n_long as f64;
    Ok(ImageField::from_fn(kernels.height(), kernels.width(), 1, |y, x, _| {
        let px = field.pixel(y, x);
        let d: f64 = (1..=layout.n_long)
            .map(|i| i as f64 / n_long * px[layout.long_tap(i)].to_f64())
            .sum();
        d.clamp(0.0, 1.0)
    }))
}

/// Total mass on the short, upper and bottom wings.
///
/// Negative sums (possible only for unnormalized kernels) are clamped to zero.
pub fn primitive_occlusion<T: Scalar>(kernels: &TKernelField<T>) -> Result<ImageField> {
    let layout = kernels.layout();
    ensure_default_layout(layout)?;
    let field = kernels.field();
    Ok(ImageField::from_fn(kernels.height(), kernels.width(), 1, |y, x, _| {
        let px = field.pixel(y, x);
        let sum: f64 = [layout.short_range(), layout.up_range(), layout.down_range()]
            .into_iter()
            .flatten()
            .map(|c| px[c].to_f64())
            .sum();
        sum.max(0.0)
    }))
}

/// Stereo baselines per dataset, relative to a reference dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineTable {
    baselines: BTreeMap<String, f64>,
    reference: String,
}

impl BaselineTable {
    pub fn new(baselines: BTreeMap<String, f64>, reference: impl Into<String>) -> Result<Self> {
        let reference = reference.into();
        for (tag, &b) in &baselines {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::precondition(format!(
                    "baseline for '{tag}' must be positive, got {b}"
                )));
            }
        }
        if !baselines.contains_key(&reference) {
            return Err(Error::precondition(format!(
                "reference dataset '{reference}' is not in the baseline table"
            )));
        }
        Ok(BaselineTable { baselines, reference })
    }

    /// Parses `tag=length,tag=length,...`.
    pub fn parse(spec: &str, reference: &str) -> Result<Self> {
        let mut baselines = BTreeMap::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (tag, value) = item.split_once('=').ok_or_else(|| {
                Error::precondition(format!("baseline entry '{item}' is not tag=length"))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::precondition(format!("baseline length '{value}' is not a number"))
            })?;
            baselines.insert(tag.trim().to_string(), value);
        }
        Self::new(baselines, reference)
    }

    /// Stereo rigs in centimeters with the 54 cm rig as reference.
    pub fn standard() -> Self {
        let baselines = [("kitti", 54.0), ("cityscapes", 22.0), ("viclab", 12.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self::new(baselines, "kitti").expect("valid built-in table")
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn baseline(&self, tag: &str) -> Option<f64> {
        self.baselines.get(tag).copied()
    }
}

/// Rescales a pan amount from the reference rig to `dataset`'s rig.
pub fn scale_pan(table: &BaselineTable, dataset: &str, reference_pan: f64) -> Result<f64> {
    let b = table
        .baseline(dataset)
        .ok_or_else(|| Error::precondition(format!("unknown dataset '{dataset}'")))?;
    let b_ref = table.baselines[&table.reference];
    Ok(reference_pan * (b / b_ref))
}

/// Blends two disparity estimates with a per-pixel softmax over ambiguity logits.
pub fn spp_blend(
    disp_fwd: &ImageField,
    disp_bwd: &ImageField,
    amb_fwd: &ImageField,
    amb_bwd: &ImageField,
) -> Result<ImageField> {
    disp_fwd.ensure_channels(1, "forward disparity")?;
    disp_fwd.ensure_same_shape(disp_bwd, "backward disparity")?;
    disp_fwd.ensure_same_shape(amb_fwd, "forward ambiguity")?;
    disp_fwd.ensure_same_shape(amb_bwd, "backward ambiguity")?;
    Ok(ImageField::from_fn(disp_fwd.height(), disp_fwd.width(), 1, |y, x, _| {
        let (a, b) = (amb_fwd.get(y, x, 0) as f64, amb_bwd.get(y, x, 0) as f64);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let s = ea + eb;
        (ea / s) * disp_fwd.get(y, x, 0) as f64 + (eb / s) * disp_bwd.get(y, x, 0) as f64
    }))
}

/// Mean l1 distance of each half-resolution disparity estimate to its downscaled
/// full-resolution target, summed over the panned and center views.
///
/// The primitives are at half the resolution of the targets. The caller
/// applies any loss weight.
pub fn primitive_disparity_loss(
    panned_estimate: &ImageField,
    center_estimate: &ImageField,
    panned_truth: &ImageField,
    center_truth: &ImageField,
) -> Result<f64> {
    let mut total = 0.0;
    for (prim, target, what) in [(panned_estimate, panned_truth, "panned-view disparity"), (center_estimate, center_truth, "center-view disparity")] {
        let down = downscale_bilinear_2x(target)?;
        prim.ensure_same_shape(&down, what)?;
        total += crate::metrics::l1(prim, &down)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> KernelLayout {
        KernelLayout::default()
    }

    #[test]
    fn disparity_examples() {
        let l = layout();
        let zero = TKernelField::<f32>::delta(2, 3, l);
        assert!(primitive_disparity(&zero).unwrap().data().iter().all(|&v| v == 0.0));

        let last = TKernelField::<f32>::one_hot(2, 3, l, l.long_tap(32));
        assert!(primitive_disparity(&last).unwrap().data().iter().all(|&v| v == 1.0));

        let mut k = vec![0.0; l.channels()];
        for c in l.long_range() {
            k[c] = 1.0 / 32.0;
        }
        let uniform = TKernelField::<f32>::constant(2, 3, l, &k);
        assert!(primitive_disparity(&uniform).unwrap().data().iter().all(|&v| v == 0.515625));
    }

    #[test]
    fn disparity_clamps_unnormalized() {
        let l = layout();
        let mut k = vec![0.0; l.channels()];
        k[l.long_tap(32)] = 3.0;
        let big = TKernelField::<f32>::constant(1, 1, l, &k);
        assert_eq!(primitive_disparity(&big).unwrap().data(), &[1.0]);
        k[l.long_tap(32)] = -3.0;
        let neg = TKernelField::<f32>::constant(1, 1, l, &k);
        assert_eq!(primitive_disparity(&neg).unwrap().data(), &[0.0]);
    }

    #[test]
    fn occlusion_examples() {
        let l = layout();
        let delta = TKernelField::<f32>::delta(2, 2, l);
        assert!(primitive_occlusion(&delta).unwrap().data().iter().all(|&v| v == 0.0));
        let uniform = TKernelField::<f64>::constant(2, 2, l, &vec![1.0 / 81.0; 81]);
        let occ = primitive_occlusion(&uniform).unwrap();
        assert!(occ.data().iter().all(|&v| (v as f64 - 48.0 / 81.0).abs() < 1e-6));
    }

    #[test]
    fn layout_mismatch_rejected() {
        let small = KernelLayout {
            n_short: 2,
            n_long: 4,
            n_up: 2,
            n_down: 2,
        };
        let k = TKernelField::<f32>::delta(2, 2, small);
        assert!(matches!(primitive_disparity(&k), Err(Error::Shape { .. })));
        assert!(primitive_occlusion(&k).is_err());
    }

    #[test]
    fn pan_scaling() {
        let t = BaselineTable::standard();
        let cs = scale_pan(&t, "cityscapes", 153.0).unwrap();
        assert!((cs - 22.0 / 54.0 * 153.0).abs() < 1e-9);
        assert!((cs - 62.333333333333336).abs() < 1e-9);
        let vl = scale_pan(&t, "viclab", 153.0).unwrap();
        assert!((vl - 34.0).abs() < 1e-9);
        assert_eq!(scale_pan(&t, "kitti", 153.0).unwrap(), 153.0);
        assert!(scale_pan(&t, "nuscenes", 153.0).is_err());
    }

    #[test]
    fn baseline_parsing() {
        let t = BaselineTable::parse("kitti=54, cs=22", "kitti").unwrap();
        assert_eq!(t.baseline("cs"), Some(22.0));
        assert!(BaselineTable::parse("kitti=54", "cs").is_err());
        assert!(BaselineTable::parse("kitti=0", "kitti").is_err());
        assert!(BaselineTable::parse("kitti:54", "kitti").is_err());
        assert!(BaselineTable::parse("kitti=abc", "kitti").is_err());
    }

    fn single(v: f32) -> ImageField {
        ImageField::filled(1, 1, 1, v)
    }

    #[test]
    fn spp_examples() {
        let out = spp_blend(&single(0.8), &single(0.4), &single(1.0), &single(0.0)).unwrap();
        let w = std::f64::consts::E / (std::f64::consts::E + 1.0);
        let expected = w * 0.8f32 as f64 + (1.0 - w) * 0.4f32 as f64;
        assert!((out.data()[0] as f64 - expected).abs() < 1e-7);
        assert!((out.data()[0] - 0.692423).abs() < 1e-6);

        let eq = spp_blend(&single(0.75), &single(0.25), &single(3.0), &single(3.0)).unwrap();
        assert_eq!(eq.data(), &[0.5]);

        let sat = spp_blend(&single(0.9), &single(0.1), &single(20.0), &single(0.0)).unwrap();
        assert!((sat.data()[0] - 0.9).abs() < 1e-7);
        let big = spp_blend(&single(0.9), &single(0.1), &single(1e30), &single(0.0)).unwrap();
        assert_eq!(big.data(), &[0.9]);
    }

    #[test]
    fn spp_shape_mismatch() {
        let a = ImageField::zeros(2, 2, 1);
        let b = ImageField::zeros(2, 3, 1);
        assert!(spp_blend(&a, &a, &a, &b).is_err());
    }

    #[test]
    fn disparity_loss_examples() {
        let full = ImageField::from_fn(4, 6, 1, |y, x, _| ((y * 6 + x) % 5) as f64 / 5.0);
        let half = downscale_bilinear_2x(&full).unwrap();
        assert_eq!(primitive_disparity_loss(&half, &half, &full, &full).unwrap(), 0.0);

        let panned_estimate = ImageField::filled(2, 3, 1, 0.2);
        let panned_truth = ImageField::filled(4, 6, 1, 0.5);
        let l = primitive_disparity_loss(&panned_estimate, &half, &panned_truth, &full).unwrap();
        assert!((l - 0.3).abs() < 1e-7);

        assert!(primitive_disparity_loss(&full, &full, &full, &full).is_err());
    }
}
