//! Dense `H x W x C` grids of reals stored row-major in `(y, x, c)` order.
//!
//! [`Field`] is the carrier for images, kernel parameter maps, disparity maps
//! and gradient buffers. Storage defaults to `f32`; the operators are generic
//! over [`Scalar`] so the same code paths can run in `f64` when a gradient
//! check needs the extra headroom.
//!
//! The raw on-disk format ("MNRT") is a 4-byte magic `MNRT`, three `u32`
//! little-endian integers `H, W, C`, then `H*W*C` little-endian `f32` values.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Storage element of a [`Field`].
pub trait Scalar: Copy + Default + PartialEq + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

pub const MNRT_MAGIC: &[u8; 4] = b"MNRT";

/// Dimensions of a field, `(height, width, channels)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, PartialEq)]
pub struct Field<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

/// The default single-precision field.
pub type ImageField = Field<f32>;

impl<T> fmt::Debug for Field<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field").field("shape", &self.shape).finish_non_exhaustive()
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::precondition(format!(
            "field dimensions must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

impl<T: Scalar> Field<T> {
    /// Wraps `data`, validating its length and that every value is finite.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_dims(height, width, channels)?;
        let shape = Shape::new(height, width, channels);
        if data.len() != shape.len() {
            return Err(Error::shape("field data length", shape.len(), data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.to_f64().is_finite()) {
            return Err(Error::precondition(format!(
                "field value at flat index {i} is not finite"
            )));
        }
        Ok(Field { shape, data })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        check_dims(height, width, channels).expect("field dimensions");
        let shape = Shape::new(height, width, channels);
        Field {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::default())
    }

    /// Builds a field by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64 + Sync,
    ) -> Self {
        Self::from_rows(height, width, channels, |y, row| {
            for x in 0..width {
                for c in 0..channels {
                    row[x * channels + c] = T::from_f64(f(y, x, c));
                }
            }
        })
    }

    /// Builds a field row by row; `fill(y, row)` receives the `W*C` slice of row `y`.
    ///
    /// Rows are filled in parallel. Each row is owned by exactly one call, so the
    /// result does not depend on how rows are scheduled.
    pub fn from_rows(
        height: usize,
        width: usize,
        channels: usize,
        fill: impl Fn(usize, &mut [T]) + Sync,
    ) -> Self {
        let mut field = Self::zeros(height, width, channels);
        let row_len = width * channels;
        field
            .data
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| fill(y, row));
        field
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the raw values. Callers are responsible for keeping them finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.shape.height && x < self.shape.width && c < self.shape.channels);
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: T) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// The channel vector at `(y, x)`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.shape.width + x) * self.shape.channels;
        &self.data[start..start + self.shape.channels]
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        let len = self.shape.width * self.shape.channels;
        &self.data[y * len..(y + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Field {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Field<U> {
        Field {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Errors unless `other` has exactly the same shape.
    pub fn ensure_same_shape<U: Scalar>(&self, other: &Field<U>, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(what, self.shape, other.shape));
        }
        Ok(())
    }

    /// Errors unless `other` has the same height and width.
    pub fn ensure_same_spatial<U: Scalar>(&self, other: &Field<U>, what: &str) -> Result<()> {
        if self.shape.spatial() != other.shape.spatial() {
            return Err(Error::shape(
                what,
                format!("{}x{}", self.height(), self.width()),
                format!("{}x{}", other.height(), other.width()),
            ));
        }
        Ok(())
    }

    pub fn ensure_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.shape.channels != channels {
            return Err(Error::shape(
                format!("{what} channel count"),
                channels,
                self.shape.channels,
            ));
        }
        Ok(())
    }

    /// Largest value in the field.
    pub fn max_value(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.to_f64())
            .fold(f64::INFINITY, f64::min)
    }

    /// Selects one channel as a single-channel field.
    pub fn channel(&self, c: usize) -> Self {
        assert!(c < self.channels(), "channel {c} out of range");
        let stride = self.channels();
        Field {
            shape: Shape::new(self.height(), self.width(), 1),
            data: self.data.iter().skip(c).step_by(stride).copied().collect(),
        }
    }

    /// Mirrors the field left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let (w, ch) = (self.width(), self.channels());
        Self::from_rows(self.height(), w, ch, |y, row| {
            let src = self.row(y);
            for x in 0..w {
                let s = (w - 1 - x) * ch;
                row[x * ch..(x + 1) * ch].copy_from_slice(&src[s..s + ch]);
            }
        })
    }

    /// Concatenates fields of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Field<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::precondition("cannot concatenate zero fields"))?;
        for p in parts {
            first.ensure_same_spatial(p, "channel concatenation")?;
        }
        let total: usize = parts.iter().map(|p| p.channels()).sum();
        let (h, w) = first.shape.spatial();
        Ok(Self::from_rows(h, w, total, |y, row| {
            for x in 0..w {
                let mut o = x * total;
                for p in parts {
                    let px = p.pixel(y, x);
                    row[o..o + px.len()].copy_from_slice(px);
                    o += px.len();
                }
            }
        }))
    }
}

impl ImageField {
    /// Serializes as an MNRT byte stream.
    pub fn write_mnrt(&self, mut out: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(MNRT_MAGIC);
        for d in [self.height(), self.width(), self.channels()] {
            let d = u32::try_from(d)
                .map_err(|_| Error::format(format!("dimension {d} does not fit in u32")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_mnrt_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_mnrt(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads one MNRT field from the stream, consuming exactly its bytes.
    pub fn read_mnrt(mut input: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        read_exact_or_format(&mut input, &mut header, "MNRT header")?;
        if &header[0..4] != MNRT_MAGIC {
            return Err(Error::format(format!(
                "bad magic bytes {:?}, expected \"MNRT\"",
                &header[0..4]
            )));
        }
        let dim = |i: usize| {
            u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
        };
        let (h, w, c) = (dim(0), dim(1), dim(2));
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::format(format!("MNRT dimensions {h}x{w}x{c} must be positive")));
        }
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .filter(|&n| n <= (1 << 32))
            .ok_or_else(|| Error::format(format!("MNRT dimensions {h}x{w}x{c} too large")))?;
        let mut bytes = vec![0u8; n * 4];
        read_exact_or_format(&mut input, &mut bytes, "MNRT payload")?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Field::new(h, w, c, data).map_err(|e| match e {
            Error::Precondition(m) => Error::Format(m),
            other => other,
        })
    }

    pub fn from_mnrt_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let field = Self::read_mnrt(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::format(format!(
                "{} trailing bytes after MNRT field",
                cursor.len()
            )));
        }
        Ok(field)
    }
}

fn read_exact_or_format(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_nonfinite() {
        assert!(matches!(
            ImageField::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            ImageField::new(1, 2, 1, vec![0.0, f32::NAN]),
            Err(Error::Precondition(_))
        ));
        assert!(ImageField::new(0, 2, 1, vec![]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let f = ImageField::from_fn(2, 3, 2, |y, x, c| (100 * y + 10 * x + c) as f64);
        assert_eq!(f.get(1, 2, 1), 121.0);
        assert_eq!(f.data()[f.index(1, 0, 1)], 101.0);
        assert_eq!(f.pixel(0, 1), &[10.0, 11.0]);
    }

    #[test]
    fn mnrt_header_layout() {
        let f = ImageField::new(1, 2, 1, vec![1.5, -2.0]).unwrap();
        let bytes = f.to_mnrt_bytes();
        assert_eq!(&bytes[0..4], b"MNRT");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
        assert_eq!(ImageField::from_mnrt_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn mnrt_rejects_bad_magic_and_truncation() {
        let f = ImageField::filled(2, 2, 1, 0.5);
        let mut bytes = f.to_mnrt_bytes();
        assert!(matches!(
            ImageField::from_mnrt_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(ImageField::from_mnrt_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn flip_and_channel_select() {
        let f = ImageField::from_fn(1, 3, 2, |_, x, c| (x * 2 + c) as f64);
        let flipped = f.flip_horizontal();
        assert_eq!(flipped.data(), &[4.0, 5.0, 2.0, 3.0, 0.0, 1.0]);
        assert_eq!(f.channel(1).data(), &[1.0, 3.0, 5.0]);
    }
}
