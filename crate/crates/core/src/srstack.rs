//! The shifted-downscaled stack and the super-resolving composition.
//!
//! Level `n` of a stack is the full-resolution view shifted toward the pan by
//! `n * stride_1` pixels and halved, where `stride_1 = pan_amount / levels * max_disp`.
//! A pluggable fusion stage maps the stack and the half-resolution synthesis
//! to a residual that is upscaled and added to the bilinear upscale of the
//! half-resolution synthesis.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ImageField;
use crate::geometry::primitive_disparity;
use crate::sample::{downscale_bilinear_2x, shift_downscale, upscale_bilinear_2x, upscale_nearest_2x};
use crate::tkernel::{blend_forward, BlendField, PanSpec, TKernelField};

/// Stack depth used for every dataset.
pub const DEFAULT_LEVELS: usize = 32;

const STACK_TAG: &str = "MNRT-STACK";

/// Progressively shifted, 2x downscaled copies of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftStack {
    levels: Vec<ImageField>,
    pan_amount: f64,
    max_disp: f64,
}

fn stride_unit(pan_amount: f64, n_levels: usize, max_disp: f64) -> f64 {
    pan_amount / n_levels as f64 * max_disp
}

impl ShiftStack {
    pub fn levels(&self) -> &[ImageField] {
        &self.levels
    }

    pub fn level(&self, n: usize) -> &ImageField {
        &self.levels[n]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn pan_amount(&self) -> f64 {
        self.pan_amount
    }

    pub fn max_disp(&self) -> f64 {
        self.max_disp
    }

    /// Source-pixel shift of level `n`.
    pub fn stride(&self, n: usize) -> f64 {
        n as f64 * stride_unit(self.pan_amount, self.levels.len(), self.max_disp)
    }

    /// Writes a one-line text header followed by the levels as MNRT fields.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "{STACK_TAG} levels={} pan={} max_disp={}",
            self.levels.len(),
            self.pan_amount,
            self.max_disp
        )?;
        for level in &self.levels {
            level.write_mnrt(&mut out)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let header = read_header_line(&mut input)?;
        let mut fields = header.split(' ');
        if fields.next() != Some(STACK_TAG) {
            return Err(Error::format("missing stack header"));
        }
        let mut value = |key: &str| -> Result<f64> {
            let item = fields
                .next()
                .ok_or_else(|| Error::format(format!("stack header lacks {key}")))?;
            item.strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(format!("bad stack header entry '{item}'")))
        };
        let depth = value("levels")?;
        let pan_amount = value("pan")?;
        let max_disp = value("max_disp")?;
        if depth < 1.0 || depth.fract() != 0.0 {
            return Err(Error::format(format!("bad stack depth {depth}")));
        }
        let levels = (0..depth as usize)
            .map(|_| ImageField::read_mnrt(&mut input))
            .collect::<Result<Vec<_>>>()?;
        for l in &levels[1..] {
            l.ensure_same_shape(&levels[0], "stack level")?;
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::format("trailing bytes after stack"));
        }
        Ok(ShiftStack {
            levels,
            pan_amount,
            max_disp,
        })
    }
}

fn read_header_line(input: &mut impl Read) -> Result<String> {
    const MAX_HEADER: usize = 256;
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if input.read(&mut byte)? == 0 {
            return Err(Error::format("truncated stack header"));
        }
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > MAX_HEADER {
            return Err(Error::format("stack header too long"));
        }
    }
    String::from_utf8(line).map_err(|_| Error::format("stack header is not UTF-8"))
}

/// Builds `n_levels` shifted 2x downscales of `img`.
///
/// `max_disp` is the largest normalized disparity of the view, in `[0, 1]`.
pub fn build_stack(img: &ImageField, pan_amount: f64, max_disp: f64, n_levels: usize) -> Result<ShiftStack> {
    if n_levels == 0 {
        return Err(Error::precondition("stack needs at least one level"));
    }
    if !pan_amount.is_finite() {
        return Err(Error::precondition("pan amount must be finite"));
    }
    if !(0.0..=1.0).contains(&max_disp) {
        return Err(Error::precondition(format!(
            "max disparity must lie in [0, 1], got {max_disp}"
        )));
    }
    let unit = stride_unit(pan_amount, n_levels, max_disp);
    let levels = (0..n_levels)
        .into_par_iter()
        .map(|n| shift_downscale(img, n as f64 * unit))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShiftStack {
        levels,
        pan_amount,
        max_disp,
    })
}

/// Learned part of the composition: maps the half-resolution synthesis and
/// the stack, concatenated along channels (synthesis first, then levels in
/// order), to a `channels`-channel residual at the same resolution.
pub trait FusionStage: Sync {
    fn apply(&self, input: &ImageField, channels: usize) -> Result<ImageField>;
}

/// Produces a zero residual, leaving only the bilinear path.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityFusion;

impl FusionStage for IdentityFusion {
    fn apply(&self, input: &ImageField, channels: usize) -> Result<ImageField> {
        Ok(ImageField::zeros(input.height(), input.width(), channels))
    }
}

/// Residual `mean(levels) - synthesis`, a fixed linear stage for testing.
#[derive(Clone, Copy, Debug, Default)]
pub struct AveragingFusion;

impl FusionStage for AveragingFusion {
    fn apply(&self, input: &ImageField, channels: usize) -> Result<ImageField> {
        let total = input.channels();
        if channels == 0 || !total.is_multiple_of(channels) || total / channels < 2 {
            return Err(Error::shape("fusion input channels", format!("k * {channels}, k >= 2"), total));
        }
        let levels = total / channels - 1;
        Ok(ImageField::from_fn(input.height(), input.width(), channels, |y, x, c| {
            let px = input.pixel(y, x);
            let sum: f64 = (1..=levels).map(|n| px[n * channels + c] as f64).sum();
            sum / levels as f64 - px[c] as f64
        }))
    }
}

/// Composes the full-resolution view from the stack and the half-resolution
/// synthesis `lr_pan`.
pub fn fuse(stack: &ShiftStack, lr_pan: &ImageField, stage: &dyn FusionStage) -> Result<ImageField> {
    let first = stack
        .levels
        .first()
        .ok_or_else(|| Error::precondition("empty stack"))?;
    lr_pan.ensure_same_shape(first, "half-resolution synthesis vs stack level")?;
    let mut parts: Vec<&ImageField> = vec![lr_pan];
    parts.extend(stack.levels.iter());
    let input = ImageField::concat_channels(&parts)?;
    let residual = stage.apply(&input, lr_pan.channels())?;
    residual.ensure_same_shape(lr_pan, "fusion stage output")?;
    let up_residual = upscale_nearest_2x(&residual);
    let base = upscale_bilinear_2x(lr_pan);
    let data = up_residual
        .data()
        .iter()
        .zip(base.data())
        .map(|(&r, &b)| (r as f64 + b as f64) as f32)
        .collect();
    ImageField::new(base.height(), base.width(), base.channels(), data)
}

/// Intermediate and final products of the two-resolution synthesis.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub lr_pan: ImageField,
    pub disparity: ImageField,
    pub stack: ShiftStack,
    pub output: ImageField,
}

/// Runs the t-kernel blend at half resolution and super-resolves it.
///
/// `kernels` and `weights` are half-resolution fields; `spec` carries the
/// full-resolution pan amount, which is halved for the blend.
pub fn synthesize(
    img: &ImageField,
    kernels: &TKernelField,
    weights: &BlendField,
    spec: &PanSpec,
    stage: &dyn FusionStage,
    n_levels: usize,
) -> Result<Synthesis> {
    let lr = downscale_bilinear_2x(img)?;
    let lr_spec = PanSpec {
        pan_amount: spec.pan_amount / 2.0,
        ..*spec
    };
    let lr_pan = blend_forward(&lr, kernels, weights, &lr_spec)?;
    let disparity = primitive_disparity(kernels)?;
    let stack = build_stack(img, spec.pan_amount, disparity.max_value(), n_levels)?;
    let output = fuse(&stack, &lr_pan, stage)?;
    Ok(Synthesis {
        lr_pan,
        disparity,
        stack,
        output,
    })
}
