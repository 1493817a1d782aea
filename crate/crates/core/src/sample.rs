//! Clamped linear samplers and the 2x resampling operators.
//!
//! All samplers replicate the border: a coordinate outside `[0, len - 1]`
//! reads the nearest edge pixel, which keeps every finite coordinate valid.

use crate::error::{Error, Result};
use crate::field::{Field, ImageField, Scalar};

/// Integer neighbours and interpolation fraction for a real coordinate.
///
/// Returns `(i0, i1, f)` with both indices already clamped into `[0, len - 1]`;
/// the interpolated value is `(1 - f) * v[i0] + f * v[i1]`.
#[inline]
pub(crate) fn linear_support(pos: f64, len: usize) -> (usize, usize, f64) {
    let base = pos.floor();
    let (i0, i1) = (clamp_index(base as i64, len), clamp_index(base as i64 + 1, len));
    // Both neighbours clamped onto the same edge pixel: read it exactly.
    let frac = if i0 == i1 { 0.0 } else { pos - base };
    (i0, i1, frac)
}

#[inline]
pub(crate) fn clamp_index(i: i64, len: usize) -> usize {
    i.clamp(0, len as i64 - 1) as usize
}

/// Linear interpolation along row `y` at real column `x`.
pub fn sample_linear_h<T: Scalar>(img: &Field<T>, x: f64, y: usize, c: usize) -> f64 {
    let (x0, x1, f) = linear_support(x, img.width());
    (1.0 - f) * img.get(y, x0, c).to_f64() + f * img.get(y, x1, c).to_f64()
}

/// Linear interpolation along column `x` at real row `y`.
pub fn sample_linear_v<T: Scalar>(img: &Field<T>, x: usize, y: f64, c: usize) -> f64 {
    let (y0, y1, f) = linear_support(y, img.height());
    (1.0 - f) * img.get(y0, x, c).to_f64() + f * img.get(y1, x, c).to_f64()
}

fn ensure_even(img: &ImageField, op: &str) -> Result<()> {
    if !img.height().is_multiple_of(2) || !img.width().is_multiple_of(2) {
        return Err(Error::precondition(format!(
            "{op} needs even dimensions, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Shifts `img` horizontally by `stride` source pixels, then halves it.
///
/// The shifted image `s(y, x) = sample_linear_h(img, x + stride, y)` is
/// averaged over aligned 2x2 blocks, i.e. bilinearly resampled at the
/// pixel-center grid `(2y' + 0.5, 2x' + 0.5)`. With `stride == 0` this is the
/// plain 2x bilinear downscale.
pub fn shift_downscale(img: &ImageField, stride: f64) -> Result<ImageField> {
    ensure_even(img, "shift_downscale")?;
    if !stride.is_finite() {
        return Err(Error::precondition("shift stride must be finite"));
    }
    let (h, w, ch) = (img.height() / 2, img.width() / 2, img.channels());
    let full_w = img.width();
    // Column weights are the same for every output column, only the clamped
    // indices change.
    let supports: Vec<[(usize, usize, f64); 2]> = (0..w)
        .map(|x| {
            let left = linear_support((2 * x) as f64 + stride, full_w);
            let right = linear_support((2 * x + 1) as f64 + stride, full_w);
            [left, right]
        })
        .collect();
    Ok(ImageField::from_rows(h, w, ch, |y, row| {
        let rows = [img.row(2 * y), img.row(2 * y + 1)];
        for (x, support) in supports.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for src in &rows {
                    for &(x0, x1, f) in support {
                        acc += (1.0 - f) * src[x0 * ch + c] as f64 + f * src[x1 * ch + c] as f64;
                    }
                }
                row[x * ch + c] = (acc * 0.25) as f32;
            }
        }
    }))
}

/// 2x bilinear downscale on the pixel-center grid (an aligned 2x2 mean).
pub fn downscale_bilinear_2x(img: &ImageField) -> Result<ImageField> {
    shift_downscale(img, 0.0)
}

/// Replicates every pixel into a 2x2 block.
pub fn upscale_nearest_2x<T: Scalar>(img: &Field<T>) -> Field<T> {
    let ch = img.channels();
    Field::from_rows(img.height() * 2, img.width() * 2, ch, |y, row| {
        let src = img.row(y / 2);
        for x in 0..img.width() * 2 {
            let s = (x / 2) * ch;
            row[x * ch..(x + 1) * ch].copy_from_slice(&src[s..s + ch]);
        }
    })
}

/// 2x bilinear upscale with pixel-center alignment and replicate border.
///
/// Output pixel `X` reads source coordinate `(X + 0.5) / 2 - 0.5`.
pub fn upscale_bilinear_2x(img: &ImageField) -> ImageField {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let src_pos = |o: usize| (o as f64 + 0.5) * 0.5 - 0.5;
    let cols: Vec<_> = (0..2 * w).map(|x| linear_support(src_pos(x), w)).collect();
    ImageField::from_rows(2 * h, 2 * w, ch, |y, row| {
        let (y0, y1, fy) = linear_support(src_pos(y), h);
        let (r0, r1) = (img.row(y0), img.row(y1));
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for c in 0..ch {
                let top = (1.0 - fx) * r0[x0 * ch + c] as f64 + fx * r0[x1 * ch + c] as f64;
                let bottom = (1.0 - fx) * r1[x0 * ch + c] as f64 + fx * r1[x1 * ch + c] as f64;
                row[x * ch + c] = ((1.0 - fy) * top + fy * bottom) as f32;
            }
        }
    })
}
