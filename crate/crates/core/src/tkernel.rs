//! The t-shaped adaptive convolution.
//!
//! A t-kernel at output pixel `p = (x, y)` has one center tap, a long
//! horizontal wing pointing in the pan direction, a short horizontal wing
//! pointing the other way and two short vertical wings. Taps of a wing are
//! spaced by the dilation `d`; the horizontal wings use the signed `d` and the
//! vertical wings `|d|`. Fractional tap positions are read with 1D linear
//! interpolation along the wing axis and replicate clamping at the border.
//!
//! Channel layout of a [`TKernelField`] (default sizes in brackets):
//!
//! | channels                | meaning                                      |
//! |-------------------------|----------------------------------------------|
//! | `0`                     | center `T_c`                                 |
//! | `1 ..= n_short` [16]    | short wing, tap `i` at `x - i*d`             |
//! | next `n_long` [32]      | long wing, tap `i` at `x + i*d`              |
//! | next `n_up` [16]        | upper wing, tap `i` at `y - i*abs(d)`        |
//! | next `n_down` [16]      | bottom wing, tap `i` at `y + i*abs(d)`       |
//!
//! The layout is fixed regardless of pan direction; the sign of `d` decides
//! where the long wing points.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Field, Scalar};
use crate::sample::clamp_index;

/// How the global dilation is derived from the pan amount.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DilationRule {
    /// Divide the pan by the long-wing length in either direction.
    #[default]
    LongWing,
    /// Divide by the long-wing length for rightward pans and by the short-wing
    /// length for leftward ones.
    PanSign,
}

/// Pan amount and t-kernel geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanSpec {
    /// Signed horizontal shift in pixels; positive pans rightward.
    pub pan_amount: f64,
    pub n_long: usize,
    pub n_short: usize,
    pub n_up: usize,
    pub n_down: usize,
    /// Number of blended dilations `N`.
    pub n_dilations: usize,
    pub rule: DilationRule,
}

impl PanSpec {
    pub const DEFAULT_N_LONG: usize = 32;
    pub const DEFAULT_N_SHORT: usize = 16;
    pub const DEFAULT_N_VERTICAL: usize = 16;
    pub const DEFAULT_N_DILATIONS: usize = 3;
    /// Pan amount matching the largest expected disparity at the reference baseline.
    pub const REFERENCE_PAN: f64 = 153.0;

    pub fn new(pan_amount: f64) -> Self {
        PanSpec {
            pan_amount,
            n_long: Self::DEFAULT_N_LONG,
            n_short: Self::DEFAULT_N_SHORT,
            n_up: Self::DEFAULT_N_VERTICAL,
            n_down: Self::DEFAULT_N_VERTICAL,
            n_dilations: Self::DEFAULT_N_DILATIONS,
            rule: DilationRule::LongWing,
        }
    }

    pub fn layout(&self) -> KernelLayout {
        KernelLayout {
            n_short: self.n_short,
            n_long: self.n_long,
            n_up: self.n_up,
            n_down: self.n_down,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pan_amount.is_finite() || self.pan_amount == 0.0 {
            return Err(Error::precondition(format!(
                "pan amount must be finite and nonzero, got {}",
                self.pan_amount
            )));
        }
        if self.n_long == 0
            || self.n_short == 0
            || self.n_up == 0
            || self.n_down == 0
            || self.n_dilations == 0
        {
            return Err(Error::precondition(
                "wing lengths and dilation count must be positive",
            ));
        }
        Ok(())
    }

    /// Spacing between consecutive taps at the largest dilation.
    pub fn global_dilation(&self) -> Result<f64> {
        self.validate()?;
        let wing = match self.rule {
            DilationRule::LongWing => self.n_long,
            DilationRule::PanSign if self.pan_amount > 0.0 => self.n_long,
            DilationRule::PanSign => self.n_short,
        };
        Ok(self.pan_amount / wing as f64)
    }
}

/// Dilation `i` of `N` is `(1 + (1 - i) / N)` times the global dilation, `i = 1..=N`.
///
/// Evaluated as `global * (N + 1 - i) / N`, which is exact whenever the result is
/// representable.
pub fn dilation_schedule(spec: &PanSpec) -> Result<Vec<f64>> {
    let global = spec.global_dilation()?;
    let n = spec.n_dilations;
    Ok((1..=n)
        .map(|i| global * (n + 1 - i) as f64 / n as f64)
        .collect())
}

/// Wing sizes of a t-kernel and the channel ranges they occupy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelLayout {
    pub n_short: usize,
    pub n_long: usize,
    pub n_up: usize,
    pub n_down: usize,
}

impl Default for KernelLayout {
    fn default() -> Self {
        PanSpec::new(PanSpec::REFERENCE_PAN).layout()
    }
}

impl KernelLayout {
    pub const CENTER: usize = 0;

    pub fn channels(&self) -> usize {
        1 + self.n_short + self.n_long + self.n_up + self.n_down
    }

    pub fn short_range(&self) -> Range<usize> {
        1..1 + self.n_short
    }

    pub fn long_range(&self) -> Range<usize> {
        let s = self.short_range().end;
        s..s + self.n_long
    }

    pub fn up_range(&self) -> Range<usize> {
        let s = self.long_range().end;
        s..s + self.n_up
    }

    pub fn down_range(&self) -> Range<usize> {
        let s = self.up_range().end;
        s..s + self.n_down
    }

    /// Channel of long-wing tap `i` (1-based).
    pub fn long_tap(&self, i: usize) -> usize {
        assert!((1..=self.n_long).contains(&i), "long tap {i} out of range");
        self.long_range().start + i - 1
    }

    pub fn short_tap(&self, i: usize) -> usize {
        assert!((1..=self.n_short).contains(&i), "short tap {i} out of range");
        self.short_range().start + i - 1
    }
}

/// Per-pixel t-kernel parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TKernelField<T = f32> {
    field: Field<T>,
    layout: KernelLayout,
}

impl<T: Scalar> TKernelField<T> {
    pub fn new(field: Field<T>, layout: KernelLayout) -> Result<Self> {
        field.ensure_channels(layout.channels(), "t-kernel field")?;
        Ok(TKernelField { field, layout })
    }

    /// Every pixel holds the same kernel vector.
    pub fn constant(height: usize, width: usize, layout: KernelLayout, kernel: &[f64]) -> Self {
        assert_eq!(kernel.len(), layout.channels(), "kernel vector length");
        let field = Field::from_fn(height, width, layout.channels(), |_, _, c| kernel[c]);
        TKernelField { field, layout }
    }

    /// A single channel set to one everywhere.
    pub fn one_hot(height: usize, width: usize, layout: KernelLayout, channel: usize) -> Self {
        let mut k = vec![0.0; layout.channels()];
        k[channel] = 1.0;
        Self::constant(height, width, layout, &k)
    }

    /// The identity kernel (`T_c = 1`).
    pub fn delta(height: usize, width: usize, layout: KernelLayout) -> Self {
        Self::one_hot(height, width, layout, KernelLayout::CENTER)
    }

    pub fn field(&self) -> &Field<T> {
        &self.field
    }

    pub fn into_field(self) -> Field<T> {
        self.field
    }

    pub fn layout(&self) -> KernelLayout {
        self.layout
    }

    pub fn height(&self) -> usize {
        self.field.height()
    }

    pub fn width(&self) -> usize {
        self.field.width()
    }

    /// Mirrors the kernel field left-to-right; the channel layout is unchanged.
    pub fn flip_horizontal(&self) -> Self {
        TKernelField {
            field: self.field.flip_horizontal(),
            layout: self.layout,
        }
    }
}

/// Per-pixel blending weights over the `N` dilations.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendField<T = f32> {
    field: Field<T>,
}

impl<T: Scalar> BlendField<T> {
    pub fn new(field: Field<T>) -> Self {
        BlendField { field }
    }

    pub fn constant(height: usize, width: usize, weights: &[f64]) -> Self {
        BlendField {
            field: Field::from_fn(height, width, weights.len(), |_, _, c| weights[c]),
        }
    }

    pub fn one_hot(height: usize, width: usize, n: usize, index: usize) -> Self {
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Self::constant(height, width, &w)
    }

    pub fn field(&self) -> &Field<T> {
        &self.field
    }

    pub fn into_field(self) -> Field<T> {
        self.field
    }

    pub fn n(&self) -> usize {
        self.field.channels()
    }

    pub fn flip_horizontal(&self) -> Self {
        BlendField {
            field: self.field.flip_horizontal(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Horizontal,
    Vertical,
}

/// One tap with its offset split into integer base and interpolation fraction.
#[derive(Clone, Copy, Debug)]
struct Tap {
    channel: usize,
    axis: Axis,
    base: i64,
    frac: f64,
}

impl Tap {
    fn new(channel: usize, axis: Axis, offset: f64) -> Self {
        let base = offset.floor();
        Tap {
            channel,
            axis,
            base: base as i64,
            frac: offset - base,
        }
    }

    /// Flat pixel indices of the two interpolation neighbours at `(y, x)`.
    ///
    /// When both neighbours clamp onto the same pixel the caller's fraction
    /// weights still sum to one, so the read is the replicated edge value.
    #[inline]
    fn support(&self, y: usize, x: usize, height: usize, width: usize) -> (usize, usize) {
        match self.axis {
            Axis::Horizontal => {
                let x0 = x as i64 + self.base;
                let row = y * width;
                (row + clamp_index(x0, width), row + clamp_index(x0 + 1, width))
            }
            Axis::Vertical => {
                let y0 = y as i64 + self.base;
                (
                    clamp_index(y0, height) * width + x,
                    clamp_index(y0 + 1, height) * width + x,
                )
            }
        }
    }
}

/// Taps in channel order for dilation `d`.
fn tap_table(layout: &KernelLayout, d: f64) -> Vec<Tap> {
    let mut taps = Vec::with_capacity(layout.channels());
    taps.push(Tap::new(KernelLayout::CENTER, Axis::Horizontal, 0.0));
    for (i, ch) in layout.short_range().enumerate() {
        taps.push(Tap::new(ch, Axis::Horizontal, -((i + 1) as f64) * d));
    }
    for (i, ch) in layout.long_range().enumerate() {
        taps.push(Tap::new(ch, Axis::Horizontal, (i + 1) as f64 * d));
    }
    for (i, ch) in layout.up_range().enumerate() {
        taps.push(Tap::new(ch, Axis::Vertical, -((i + 1) as f64) * d.abs()));
    }
    for (i, ch) in layout.down_range().enumerate() {
        taps.push(Tap::new(ch, Axis::Vertical, (i + 1) as f64 * d.abs()));
    }
    debug_assert!(taps.iter().enumerate().all(|(i, t)| t.channel == i));
    taps
}

fn check_dilation(d: f64) -> Result<()> {
    if !d.is_finite() || d == 0.0 {
        return Err(Error::precondition(format!(
            "dilation must be finite and nonzero, got {d}"
        )));
    }
    Ok(())
}

fn check_inputs<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    weights: Option<(&BlendField<T>, &PanSpec)>,
) -> Result<()> {
    img.ensure_same_spatial(&kernels.field, "t-kernel field vs image")?;
    if let Some((w, spec)) = weights {
        if kernels.layout != spec.layout() {
            return Err(Error::shape(
                "t-kernel layout vs pan spec",
                spec.layout().channels(),
                kernels.layout.channels(),
            ));
        }
        img.ensure_same_spatial(&w.field, "blend field vs image")?;
        w.field.ensure_channels(spec.n_dilations, "blend field")?;
    }
    Ok(())
}

/// Shared per-pixel evaluation for a list of dilations.
///
/// `tables[i]` holds the taps of dilation `i`. Writes the per-dilation filter
/// responses into `per_dilation` (`N * C`, dilation-major).
#[inline]
fn eval_pixel<T: Scalar>(
    img: &Field<T>,
    kern: &[T],
    tables: &[Vec<Tap>],
    y: usize,
    x: usize,
    per_dilation: &mut [f64],
) {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let data = img.data();
    per_dilation.iter_mut().for_each(|v| *v = 0.0);
    for (i, taps) in tables.iter().enumerate() {
        let acc = &mut per_dilation[i * ch..(i + 1) * ch];
        for tap in taps {
            let t = kern[tap.channel].to_f64();
            let (p0, p1) = tap.support(y, x, h, w);
            let (f, g) = (tap.frac, 1.0 - tap.frac);
            let (v0, v1) = (&data[p0 * ch..(p0 + 1) * ch], &data[p1 * ch..(p1 + 1) * ch]);
            for ((a, u0), u1) in acc.iter_mut().zip(v0).zip(v1) {
                *a += t * (g * u0.to_f64() + f * u1.to_f64());
            }
        }
    }
}

fn forward_impl<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    dilations: &[f64],
    weights: Option<&Field<T>>,
) -> Field<T> {
    let tables: Vec<Vec<Tap>> = dilations.iter().map(|&d| tap_table(&kernels.layout, d)).collect();
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let n = dilations.len();
    Field::from_rows(h, w, ch, |y, row| {
        let mut per = vec![0.0f64; n * ch];
        for x in 0..w {
            eval_pixel(img, kernels.field.pixel(y, x), &tables, y, x, &mut per);
            for c in 0..ch {
                let mut v = 0.0f64;
                for i in 0..n {
                    let wi = weights.map_or(1.0, |wf| wf.get(y, x, i).to_f64());
                    v += wi * per[i * ch + c];
                }
                row[x * ch + c] = T::from_f64(v);
            }
        }
    })
}

/// Applies the t-kernel field at a single dilation `d`.
pub fn tconv_forward<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    d: f64,
) -> Result<Field<T>> {
    check_dilation(d)?;
    check_inputs(img, kernels, None)?;
    Ok(forward_impl(img, kernels, &[d], None))
}

/// Blends the t-convolutions at every scheduled dilation with per-pixel weights.
pub fn blend_forward<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    weights: &BlendField<T>,
    spec: &PanSpec,
) -> Result<Field<T>> {
    let dilations = dilation_schedule(spec)?;
    check_inputs(img, kernels, Some((weights, spec)))?;
    Ok(forward_impl(img, kernels, &dilations, Some(&weights.field)))
}

/// Gradients of a scalar loss with respect to the blended convolution inputs.
#[derive(Clone, Debug)]
pub struct BlendGradients<T = f32> {
    pub kernels: TKernelField<T>,
    pub weights: BlendField<T>,
    /// Absent when only parameter gradients were requested.
    pub image: Option<Field<T>>,
}

struct RawGradients<T> {
    kernels: Field<T>,
    weights: Field<T>,
    image: Option<Field<T>>,
}

fn backward_impl<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    dilations: &[f64],
    weights: Option<&Field<T>>,
    grad_out: &Field<T>,
    want_image: bool,
) -> RawGradients<T> {
    let layout = kernels.layout;
    let tables: Vec<Vec<Tap>> = dilations.iter().map(|&d| tap_table(&layout, d)).collect();
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let n = dilations.len();
    let k = layout.channels();
    let data = img.data();
    let weight_at =
        |y: usize, x: usize, i: usize| weights.map_or(1.0, |wf| wf.get(y, x, i).to_f64());

    // Parameter gradients only touch their own pixel, so rows are independent.
    // Kernel and weight gradients share one `K + N` channel buffer.
    let params = Field::<f64>::from_rows(h, w, k + n, |y, row| {
        let mut per = vec![0.0f64; n * ch];
        let mut mixed = vec![0.0f64; ch];
        for x in 0..w {
            let kern = kernels.field.pixel(y, x);
            let g = grad_out.pixel(y, x);
            let out = &mut row[x * (k + n)..(x + 1) * (k + n)];
            per.iter_mut().for_each(|v| *v = 0.0);
            for tap_idx in 0..k {
                mixed.iter_mut().for_each(|v| *v = 0.0);
                let t = kern[tap_idx].to_f64();
                for (i, taps) in tables.iter().enumerate() {
                    let tap = &taps[tap_idx];
                    let (p0, p1) = tap.support(y, x, h, w);
                    let (f, g) = (tap.frac, 1.0 - tap.frac);
                    let (v0, v1) = (&data[p0 * ch..(p0 + 1) * ch], &data[p1 * ch..(p1 + 1) * ch]);
                    let wi = weight_at(y, x, i);
                    let per_i = &mut per[i * ch..(i + 1) * ch];
                    for (((m, p), u0), u1) in mixed.iter_mut().zip(per_i).zip(v0).zip(v1) {
                        let s = g * u0.to_f64() + f * u1.to_f64();
                        *m += wi * s;
                        *p += t * s;
                    }
                }
                out[tap_idx] = (0..ch).map(|c| g[c].to_f64() * mixed[c]).sum();
            }
            for i in 0..n {
                out[k + i] = (0..ch).map(|c| g[c].to_f64() * per[i * ch + c]).sum();
            }
        }
    });
    let grad_k = Field::<T>::from_rows(h, w, k, |y, row| {
        for x in 0..w {
            for (j, v) in params.pixel(y, x)[..k].iter().enumerate() {
                row[x * k + j] = T::from_f64(*v);
            }
        }
    });
    let grad_w = Field::<T>::from_rows(h, w, n, |y, row| {
        for x in 0..w {
            for (j, v) in params.pixel(y, x)[k..].iter().enumerate() {
                row[x * n + j] = T::from_f64(*v);
            }
        }
    });

    let image = want_image.then(|| {
        // Scatter-add of `g * w_i * T_k` into the interpolation neighbours.
        // Horizontal taps stay within their row and vertical taps within their
        // column, so each row (resp. column) owns a private accumulator and the
        // summation order is fixed regardless of scheduling.
        let coef = |y: usize, x: usize, i: usize, tap: &Tap, c: usize| {
            grad_out.get(y, x, c).to_f64()
                * weight_at(y, x, i)
                * kernels.field.get(y, x, tap.channel).to_f64()
        };
        let horizontal: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut acc = vec![0.0f64; w * ch];
                for x in 0..w {
                    for (i, taps) in tables.iter().enumerate() {
                        for tap in taps.iter().filter(|t| t.axis == Axis::Horizontal) {
                            let (p0, p1) = tap.support(y, x, h, w);
                            let (x0, x1) = (p0 - y * w, p1 - y * w);
                            for c in 0..ch {
                                let v = coef(y, x, i, tap, c);
                                acc[x0 * ch + c] += (1.0 - tap.frac) * v;
                                acc[x1 * ch + c] += tap.frac * v;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        let vertical: Vec<Vec<f64>> = (0..w)
            .into_par_iter()
            .map(|x| {
                let mut acc = vec![0.0f64; h * ch];
                for y in 0..h {
                    for (i, taps) in tables.iter().enumerate() {
                        for tap in taps.iter().filter(|t| t.axis == Axis::Vertical) {
                            let (p0, p1) = tap.support(y, x, h, w);
                            let (y0, y1) = (p0 / w, p1 / w);
                            for c in 0..ch {
                                let v = coef(y, x, i, tap, c);
                                acc[y0 * ch + c] += (1.0 - tap.frac) * v;
                                acc[y1 * ch + c] += tap.frac * v;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        Field::<T>::from_rows(h, w, ch, |y, row| {
            for x in 0..w {
                for c in 0..ch {
                    let v = horizontal[y][x * ch + c] + vertical[x][y * ch + c];
                    row[x * ch + c] = T::from_f64(v);
                }
            }
        })
    });

    RawGradients {
        kernels: grad_k,
        weights: grad_w,
        image,
    }
}

/// Gradients of a single-dilation t-convolution.
///
/// Returns `(grad_kernels, grad_image)` for the upstream gradient `grad_out`.
pub fn tconv_backward<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    d: f64,
    grad_out: &Field<T>,
) -> Result<(TKernelField<T>, Field<T>)> {
    check_dilation(d)?;
    check_inputs(img, kernels, None)?;
    img.ensure_same_shape(grad_out, "upstream gradient vs output")?;
    let raw = backward_impl(img, kernels, &[d], None, grad_out, true);
    let layout = kernels.layout;
    Ok((
        TKernelField {
            field: raw.kernels,
            layout,
        },
        raw.image.expect("image gradient requested"),
    ))
}

/// Gradients of [`blend_forward`] with respect to kernels, weights and image.
pub fn blend_backward<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    weights: &BlendField<T>,
    spec: &PanSpec,
    grad_out: &Field<T>,
) -> Result<BlendGradients<T>> {
    blend_backward_impl(img, kernels, weights, spec, grad_out, true)
}

/// Like [`blend_backward`] but skips the image gradient.
pub fn blend_backward_params<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    weights: &BlendField<T>,
    spec: &PanSpec,
    grad_out: &Field<T>,
) -> Result<BlendGradients<T>> {
    blend_backward_impl(img, kernels, weights, spec, grad_out, false)
}

fn blend_backward_impl<T: Scalar>(
    img: &Field<T>,
    kernels: &TKernelField<T>,
    weights: &BlendField<T>,
    spec: &PanSpec,
    grad_out: &Field<T>,
    want_image: bool,
) -> Result<BlendGradients<T>> {
    let dilations = dilation_schedule(spec)?;
    check_inputs(img, kernels, Some((weights, spec)))?;
    img.ensure_same_shape(grad_out, "upstream gradient vs output")?;
    let raw = backward_impl(
        img,
        kernels,
        &dilations,
        Some(&weights.field),
        grad_out,
        want_image,
    );
    Ok(BlendGradients {
        kernels: TKernelField {
            field: raw.kernels,
            layout: kernels.layout,
        },
        weights: BlendField { field: raw.weights },
        image: raw.image,
    })
}
