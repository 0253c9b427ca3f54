//! Domain-tagged images in the `[-1, 1]` range.

use std::fmt;
use std::path::Path;

use autograd::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn other(self) -> Self {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Domain::X => 0,
            Domain::Y => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Domain::X => "x",
            Domain::Y => "y",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" | "a" => Some(Domain::X),
            "y" | "b" => Some(Domain::Y),
            _ => None,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::X => "X",
            Domain::Y => "Y",
        })
    }
}

/// A `channels × height × width` image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Tensor<f32>,
    domain: Domain,
    label: Option<usize>,
}

impl Image {
    pub fn new(pixels: Tensor<f32>, domain: Domain) -> Result<Self> {
        if pixels.shape().len() != 3 {
            return Err(Error::InvalidImage(format!(
                "expected channels x height x width, got {:?}",
                pixels.shape()
            )));
        }
        if let Some(bad) = pixels
            .data()
            .iter()
            .find(|v| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [-1, 1]")));
        }
        Ok(Self {
            pixels,
            domain,
            label: None,
        })
    }

    /// Like [`Image::new`] but clamps values into `[-1, 1]` first.
    pub fn from_clamped(pixels: Tensor<f32>, domain: Domain) -> Result<Self> {
        if !pixels.all_finite() {
            return Err(Error::NonFinite("image pixels".into()));
        }
        Self::new(pixels.map(|v| v.clamp(-1.0, 1.0)), domain)
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// Pixel `(c, y, x)`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels.data()[(c * self.height() + y) * self.width() + x]
    }

    /// `[1, c, h, w]` copy in the requested precision.
    pub fn to_batch<T: Scalar>(&self) -> Tensor<T> {
        let s = self.pixels.shape();
        self.pixels.cast::<T>().reshape(&[1, s[0], s[1], s[2]])
    }

    /// Stacks same-sized images into `[n, c, h, w]`.
    pub fn stack<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidImage("empty batch".into()))?;
        for img in images {
            if img.pixels.shape() != first.pixels.shape() {
                return Err(Error::Shape {
                    context: "image batch".into(),
                    expected: first.pixels.shape().to_vec(),
                    actual: img.pixels.shape().to_vec(),
                });
            }
        }
        let items: Vec<Tensor<T>> = images.iter().map(|i| i.to_batch()).collect();
        Ok(Tensor::stack_batch(&items))
    }

    /// Splits a `[n, c, h, w]` batch into images, clamping into `[-1, 1]`.
    pub fn unstack<T: Scalar>(batch: &Tensor<T>, domain: Domain) -> Result<Vec<Image>> {
        let (n, c, h, w) = batch.dims4().ok_or_else(|| Error::Shape {
            context: "image batch".into(),
            expected: vec![0, 0, 0, 0],
            actual: batch.shape().to_vec(),
        })?;
        (0..n)
            .map(|i| {
                let t = batch.batch_item(i).cast::<f32>().reshape(&[c, h, w]);
                Image::from_clamped(t, domain)
            })
            .collect()
    }

    /// Mean absolute per-pixel difference.
    pub fn l1_distance(&self, other: &Image) -> Result<f64> {
        if self.pixels.shape() != other.pixels.shape() {
            return Err(Error::Shape {
                context: "image distance".into(),
                expected: self.pixels.shape().to_vec(),
                actual: other.pixels.shape().to_vec(),
            });
        }
        let sum: f64 = self
            .pixels
            .data()
            .iter()
            .zip(other.pixels.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.pixels.numel() as f64)
    }

    /// Root-mean-square per-pixel difference.
    pub fn l2_distance(&self, other: &Image) -> Result<f64> {
        if self.pixels.shape() != other.pixels.shape() {
            return Err(Error::Shape {
                context: "image distance".into(),
                expected: self.pixels.shape().to_vec(),
                actual: other.pixels.shape().to_vec(),
            });
        }
        let sum: f64 = self
            .pixels
            .data()
            .iter()
            .zip(other.pixels.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        Ok((sum / self.pixels.numel() as f64).sqrt())
    }

    /// Builds an image from 8-bit interleaved pixels (`channels` = 1 or 3).
    pub fn from_u8(
        bytes: &[u8],
        channels: usize,
        height: usize,
        width: usize,
        domain: Domain,
    ) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::InvalidImage(format!(
                "{} bytes for {channels}x{height}x{width}",
                bytes.len()
            )));
        }
        let mut data = vec![0.0f32; bytes.len()];
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data[(c * height + y) * width + x] =
                        normalize_u8(bytes[(y * width + x) * channels + c]);
                }
            }
        }
        Self::new(Tensor::new(&[channels, height, width], data), domain)
    }

    /// Interleaved 8-bit pixels.
    pub fn to_u8(&self) -> Vec<u8> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let mut out = vec![0u8; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(y * w + x) * c + ch] = denormalize_u8(self.at(ch, y, x));
                }
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(path, &self.to_u8(), self.channels(), self.height(), self.width())
    }
}

/// `0 → -1`, `255 → 1`.
pub fn normalize_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`normalize_u8`], rounding to the nearest level.
pub fn denormalize_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub(crate) fn write_png(path: &Path, bytes: &[u8], channels: usize, height: usize, width: usize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let color = match channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::InvalidImage(format!("cannot write {c}-channel PNG"))),
    };
    image::save_buffer(path, bytes, width as u32, height as u32, color).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Horizontally concatenates same-sized images into one PNG.
pub fn write_strip(path: &Path, images: &[Image]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidImage("empty image strip".into()))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let total_w = w * images.len();
    let mut out = vec![0u8; c * h * total_w];
    for (k, img) in images.iter().enumerate() {
        if img.pixels.shape() != first.pixels.shape() {
            return Err(Error::Shape {
                context: "image strip".into(),
                expected: first.pixels.shape().to_vec(),
                actual: img.pixels.shape().to_vec(),
            });
        }
        let bytes = img.to_u8();
        for y in 0..h {
            let dst = (y * total_w + k * w) * c;
            out[dst..dst + w * c].copy_from_slice(&bytes[y * w * c..(y + 1) * w * c]);
        }
    }
    write_png(path, &out, c, h, total_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_u8(255), 1.0);
        assert_eq!(normalize_u8(0), -1.0);
    }

    #[test]
    fn normalization_round_trips_every_level() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_u8(normalize_u8(v)), v);
        }
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let t = Tensor::new(&[1, 1, 2], vec![0.0, 1.5]);
        assert!(Image::new(t, Domain::X).is_err());
        let t = Tensor::new(&[1, 1, 2], vec![0.0, f32::NAN]);
        assert!(Image::new(t, Domain::X).is_err());
    }

    #[test]
    fn u8_round_trip() {
        let bytes: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as u8).collect();
        let img = Image::from_u8(&bytes, 3, 2, 3, Domain::Y).unwrap();
        assert_eq!(img.to_u8(), bytes);
        assert_eq!(img.at(0, 0, 0), normalize_u8(bytes[0]));
        assert_eq!(img.at(1, 0, 0), normalize_u8(bytes[1]));
    }
}
