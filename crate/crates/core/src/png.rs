//! 8-bit PNG conversion.
//!
//! Fields hold values in `[0, 1]`; writing quantizes with
//! `floor(v * 255 + 0.5)` clamped to `[0, 255]`. One-channel fields become
//! grayscale images and three-channel fields RGB.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::field::ImageField;

/// Round half up, clamped to the 8-bit range.
pub fn quantize(v: f32) -> u8 {
    let q = (v as f64 * 255.0 + 0.5).floor();
    if q.is_nan() {
        0
    } else {
        q.clamp(0.0, 255.0) as u8
    }
}

fn to_dynamic(field: &ImageField) -> Result<DynamicImage> {
    let (w, h) = (field.width() as u32, field.height() as u32);
    let bytes: Vec<u8> = field.data().iter().map(|&v| quantize(v)).collect();
    match field.channels() {
        1 => Ok(DynamicImage::ImageLuma8(
            GrayImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        )),
        3 => Ok(DynamicImage::ImageRgb8(
            RgbImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        )),
        c => Err(Error::shape("PNG channels", "1 or 3", c)),
    }
}

/// Encodes a 1- or 3-channel field as PNG bytes.
pub fn encode_png(field: &ImageField) -> Result<Vec<u8>> {
    let img = to_dynamic(field)?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::format(format!("PNG encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

/// Decodes PNG bytes; grayscale images give one channel, everything else
/// three (alpha is dropped).
pub fn decode_png(bytes: &[u8]) -> Result<ImageField> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(format!("cannot decode PNG: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img.color().channel_count() {
        1 | 2 => (1, img.into_luma8().into_raw()),
        _ => (3, img.into_rgb8().into_raw()),
    };
    let data = raw.into_iter().map(|b| b as f32 / 255.0).collect();
    ImageField::new(h, w, channels, data)
}

pub fn read_png(path: &Path) -> Result<ImageField> {
    decode_png(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(0.515625), 131);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(f32::NAN), 0);
    }

    #[test]
    fn round_trip_is_lossless_on_8bit_values() {
        let f = ImageField::from_fn(3, 5, 3, |y, x, c| ((y * 40 + x * 17 + c * 90) % 256) as f64 / 255.0);
        let back = decode_png(&encode_png(&f).unwrap()).unwrap();
        assert_eq!(back.shape(), f.shape());
        assert_eq!(encode_png(&back).unwrap(), encode_png(&f).unwrap());
        let gray = ImageField::filled(2, 2, 1, 0.5);
        assert_eq!(decode_png(&encode_png(&gray).unwrap()).unwrap().channels(), 1);
    }

    #[test]
    fn rejects_other_channel_counts_and_garbage() {
        assert!(encode_png(&ImageField::zeros(2, 2, 2)).is_err());
        assert!(matches!(decode_png(b"not a png"), Err(Error::Format(_))));
    }
}
