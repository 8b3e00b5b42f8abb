//! Antialiased bicubic resizing (the downsampling operator and data-prep
//! resizer) plus RGB→Y color conversion.
//!
//! The resampler is separable (width pass, then height pass) with a Keys
//! cubic kernel. Source coordinates are center-aligned: `src = (dst + 0.5) /
//! scale - 0.5`. Boundaries replicate the edge pixel, and the weights of
//! every output pixel are renormalized to sum to one. When downscaling with
//! antialiasing the kernel is stretched by `1/scale`. Intermediate values are
//! left unclamped; the final output is clamped to `[0, 1]` once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;

/// How to resize: output/input size ratio plus kernel settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResizeSpec {
    pub scale: f64,
    pub antialias: bool,
    /// Keys kernel parameter; −0.5 is the common Catmull-Rom-like choice.
    pub kernel_a: f64,
}

impl ResizeSpec {
    /// Antialiased resize at the given ratio (the dataset-prep default).
    pub fn antialiased(scale: f64) -> Self {
        ResizeSpec {
            scale,
            antialias: true,
            kernel_a: -0.5,
        }
    }

    /// Plain bicubic without kernel stretching on downscale.
    pub fn plain(scale: f64) -> Self {
        ResizeSpec {
            scale,
            antialias: false,
            kernel_a: -0.5,
        }
    }
}

/// Keys piecewise-cubic interpolation kernel.
pub fn cubic_kernel(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Per-output-pixel taps for one axis: edge-clamped source index and
/// normalized weight.
fn axis_taps(in_len: usize, out_len: usize, spec: &ResizeSpec) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let stretch = if spec.antialias && scale < 1.0 {
        1.0 / scale
    } else {
        1.0
    };
    let radius = 2.0 * stretch;
    let mut taps = Vec::with_capacity(out_len);
    for dst in 0..out_len {
        let center = (dst as f64 + 0.5) / scale - 0.5;
        let lo = (center - radius).ceil() as i64;
        let hi = (center + radius).floor() as i64;
        let mut row: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
        let mut total = 0.0;
        for i in lo..=hi {
            let w = cubic_kernel((i as f64 - center) / stretch, spec.kernel_a);
            if w != 0.0 {
                let src = i.clamp(0, in_len as i64 - 1) as usize;
                row.push((src, w));
                total += w;
            }
        }
        for (_, w) in &mut row {
            *w /= total;
        }
        taps.push(row);
    }
    taps
}

/// Resize `img` by `spec.scale`; output extents are `round(extent · scale)`.
pub fn resize(img: &Image, spec: &ResizeSpec) -> Result<Image> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "resize scale must be positive, got {}",
            spec.scale
        )));
    }
    let out_h = (img.height as f64 * spec.scale).round() as usize;
    let out_w = (img.width as f64 * spec.scale).round() as usize;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize of {}x{} by {} yields an empty image",
            img.height, img.width, spec.scale
        )));
    }
    let c = img.channels;

    // Width pass: (H, W, C) -> (H, out_w, C), accumulated in f64.
    let taps_w = axis_taps(img.width, out_w, spec);
    let mut mid = vec![0.0f64; img.height * out_w * c];
    for y in 0..img.height {
        for (xo, row) in taps_w.iter().enumerate() {
            let base = (y * out_w + xo) * c;
            for &(xs, w) in row {
                for ch in 0..c {
                    mid[base + ch] += w * img.at(y, xs, ch) as f64;
                }
            }
        }
    }

    // Height pass: (H, out_w, C) -> (out_h, out_w, C).
    let taps_h = axis_taps(img.height, out_h, spec);
    let mut out = Image::new(out_h, out_w, c);
    for (yo, col) in taps_h.iter().enumerate() {
        for xo in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0f64;
                for &(ys, w) in col {
                    acc += w * mid[(ys * out_w + xo) * c + ch];
                }
                *out.at_mut(yo, xo, ch) = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(out)
}

/// ITU-R BT.601 luminance of an RGB image in [0,1], returned in
/// [16/255, 235/255].
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "rgb_to_y expects 3 channels, got {}",
            img.channels
        )));
    }
    let mut out = Image::new(img.height, img.width, 1);
    for y in 0..img.height {
        for x in 0..img.width {
            let r = img.at(y, x, 0) as f64;
            let g = img.at(y, x, 1) as f64;
            let b = img.at(y, x, 2) as f64;
            let y255 = 16.0 + 65.481 * r + 128.553 * g + 24.966 * b;
            *out.at_mut(y, x, 0) = (y255 / 255.0) as f32;
        }
    }
    Ok(out)
}
