//! The universal pixel container: a dense H×W×C array of `f32`, row-major,
//! channel-last, nominally in [0,1]. Unclamped intermediates (network outputs,
//! residuals) reuse the same container; clamping happens only at PNG export
//! and metric evaluation.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Top-left crop of `h`×`w` at offset (`y0`, `x0`).
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {}x{}+{}+{} exceeds image {}x{}",
                h, w, y0, x0, self.height, self.width
            )));
        }
        let mut out = Image::new(h, w, self.channels);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * w * self.channels;
            out.data[dst..dst + w * self.channels]
                .copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        Ok(out)
    }

    pub fn clamp01(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v);
        }
        out
    }

    /// Mean absolute difference against another image of identical extents.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.height != other.height
            || self.width != other.width
            || self.channels != other.channels
        {
            return Err(Error::ShapeMismatch(format!(
                "mean_abs_diff: {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.channels, other.height, other.width, other.channels
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Reads an 8-bit PNG as RGB, mapping each sample to `v / 255`.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| Error::image(path, e))?;
    let rgb = dynimg.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data: Vec<f32> = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Image::from_vec(h as usize, w as usize, 3, data)
}

/// Writes an image as an 8-bit PNG, mapping each sample by `round(v*255)`
/// clamped to [0,255]. Single-channel images are written as grayscale.
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let to_u8 = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    match img.channels {
        3 => {
            let raw: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
                .expect("raw buffer matches dimensions");
            buf.save(path).map_err(|e| Error::image(path, e))
        }
        1 => {
            let raw: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
            let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, raw)
                .expect("raw buffer matches dimensions");
            buf.save(path).map_err(|e| Error::image(path, e))
        }
        c => Err(Error::InvalidArgument(format!(
            "png export supports 1 or 3 channels, got {c}"
        ))),
    }
}

/// Encodes the image to PNG bytes in memory (same mapping as `write_png`).
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let to_u8 = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    let raw: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let mut out = std::io::Cursor::new(Vec::new());
    match img.channels {
        3 => {
            let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
                .expect("raw buffer matches dimensions");
            buf.write_to(&mut out, image::ImageFormat::Png)
                .map_err(|e| Error::image("<memory>", e))?;
        }
        1 => {
            let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, raw)
                .expect("raw buffer matches dimensions");
            buf.write_to(&mut out, image::ImageFormat::Png)
                .map_err(|e| Error::image("<memory>", e))?;
        }
        c => {
            return Err(Error::InvalidArgument(format!(
                "png export supports 1 or 3 channels, got {c}"
            )))
        }
    }
    Ok(out.into_inner())
}
