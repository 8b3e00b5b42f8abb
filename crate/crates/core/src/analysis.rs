//! Metrics (PSNR/SSIM on the luminance channel), the optimization-landscape
//! probe along the gradient direction, and gradient spectra.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::{predict, ModelParams};
use crate::objectives::TrainingPair;
use crate::tensor::Tensor;
use crate::trainer::{batch_loss_and_grads, LossKind};

/// 10·log10(1/MSE) on [0,1] data after cropping `border` pixels on every
/// side. Identical images give +∞; callers cap for CSV output.
pub fn psnr(a: &Image, b: &Image, border: usize) -> Result<f64> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::ShapeMismatch(format!(
            "psnr: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if 2 * border >= a.height.min(a.width) {
        return Err(Error::InvalidArgument(format!(
            "psnr: border {border} leaves no pixels of {}x{}",
            a.height, a.width
        )));
    }
    let (h, w) = (a.height - 2 * border, a.width - 2 * border);
    let ac = a.crop(border, border, h, w)?;
    let bc = b.crop(border, border, h, w)?;
    let mut se = 0.0f64;
    for (x, y) in ac.data.iter().zip(&bc.data) {
        let d = *x as f64 - *y as f64;
        se += d * d;
    }
    let mse = se / ac.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01; // (K1·L)², L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut total = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        total += *v;
    }
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Valid-region separable convolution with the 1-D window, rows then cols.
fn valid_filter(
    src: &[f64],
    h: usize,
    w: usize,
    k: &[f64; SSIM_WINDOW],
) -> (Vec<f64>, usize, usize) {
    let ow = w - SSIM_WINDOW + 1;
    let mut mid = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            mid[y * ow + x] = acc;
        }
    }
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * mid[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// valid-region only, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::ShapeMismatch(format!(
            "ssim: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if a.channels != 1 {
        return Err(Error::InvalidArgument(
            "ssim expects single-channel (luminance) images".into(),
        ));
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs extents >= {SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let (h, w) = (a.height, a.width);
    let x: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let k = gaussian_window();
    let (mu_x, oh, ow) = valid_filter(&x, h, w, &k);
    let (mu_y, _, _) = valid_filter(&y, h, w, &k);
    let (e_xx, _, _) = valid_filter(&xx, h, w, &k);
    let (e_yy, _, _) = valid_filter(&yy, h, w, &k);
    let (e_xy, _, _) = valid_filter(&xy, h, w, &k);

    let mut total = 0.0f64;
    for i in 0..oh * ow {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cxy = e_xy[i] - mx * my;
        let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        total += s;
    }
    Ok(total / (oh * ow) as f64)
}

/// Loss and gradient behavior along the negative-gradient ray from θ.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub step: u64,
    pub etas: Vec<f64>,
    pub losses_along_ray: Vec<f64>,
    /// max over η of ‖g(θ−ηg) − g(θ)‖₂ over concatenated parameters.
    pub max_grad_diff: f64,
    pub baseline_loss: f64,
    pub baseline_grad_norm: f64,
}

fn grad_l2_diff(a: &[Tensor], b: &[Tensor]) -> f64 {
    let mut acc = 0.0f64;
    for (ta, tb) in a.iter().zip(b) {
        for (x, y) in ta.data().iter().zip(tb.data()) {
            let d = *x as f64 - *y as f64;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Evaluate loss and gradients at θ and at θ−ηg on the SAME batch for each
/// η. Probe step sizes must be nonnegative and ascending. `params` is never
/// mutated; non-finite evaluations are recorded as +∞ and the probe
/// continues.
pub fn landscape_probe(
    params: &ModelParams,
    input: &Tensor,
    target: &Tensor,
    etas: &[f64],
    kind: LossKind,
    step: u64,
) -> Result<ProbeReport> {
    if etas.is_empty() {
        return Err(Error::InvalidArgument(
            "probe needs at least one eta".into(),
        ));
    }
    if etas.windows(2).any(|w| w[1] <= w[0]) || etas[0] < 0.0 {
        return Err(Error::InvalidArgument(
            "probe etas must be nonnegative and strictly ascending".into(),
        ));
    }
    let (baseline_loss, g0) = batch_loss_and_grads(params, input, target, kind)?;
    let baseline_grad_norm = {
        let mut acc = 0.0f64;
        for t in &g0 {
            for v in t.data() {
                acc += (*v as f64) * (*v as f64);
            }
        }
        acc.sqrt()
    };

    let mut losses = Vec::with_capacity(etas.len());
    let mut max_grad_diff = 0.0f64;
    for &eta in etas {
        let mut moved = params.clone();
        for ((_, t), g) in moved.tensors_mut().iter_mut().zip(&g0) {
            for (p, gv) in t.data_mut().iter_mut().zip(g.data()) {
                *p -= (eta * *gv as f64) as f32;
            }
        }
        match batch_loss_and_grads(&moved, input, target, kind) {
            Ok((loss, g)) if loss.is_finite() => {
                losses.push(loss);
                let diff = grad_l2_diff(&g, &g0);
                max_grad_diff = max_grad_diff.max(if diff.is_finite() {
                    diff
                } else {
                    f64::INFINITY
                });
            }
            _ => {
                losses.push(f64::INFINITY);
                max_grad_diff = f64::INFINITY;
            }
        }
    }
    Ok(ProbeReport {
        step,
        etas: etas.to_vec(),
        losses_along_ray: losses,
        max_grad_diff,
        baseline_loss,
        baseline_grad_norm,
    })
}

/// Unnormalized 2-D DFT of a single-channel image, row-major bins.
pub fn dft2(img: &Image) -> Result<Vec<Complex64>> {
    if img.channels != 1 {
        return Err(Error::InvalidArgument(
            "dft2 expects a single-channel image".into(),
        ));
    }
    let (h, w) = (img.height, img.width);
    // Rows first, then columns (separable).
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for kx in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in 0..w {
                let ang = -2.0 * std::f64::consts::PI * (kx * x) as f64 / w as f64;
                acc += img.at(y, x, 0) as f64 * Complex64::new(ang.cos(), ang.sin());
            }
            rows[y * w + kx] = acc;
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for kx in 0..w {
        for ky in 0..h {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                let ang = -2.0 * std::f64::consts::PI * (ky * y) as f64 / h as f64;
                acc += rows[y * w + kx] * Complex64::new(ang.cos(), ang.sin());
            }
            out[ky * w + kx] = acc;
        }
    }
    Ok(out)
}

/// Inverse of [`dft2`] (applies the 1/(HW) normalization); returns the real
/// part.
pub fn idft2(spec: &[Complex64], h: usize, w: usize) -> Result<Vec<f64>> {
    if spec.len() != h * w {
        return Err(Error::ShapeMismatch(format!(
            "idft2: {} bins for {h}x{w}",
            spec.len()
        )));
    }
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for ky in 0..h {
        for x in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for kx in 0..w {
                let ang = 2.0 * std::f64::consts::PI * (kx * x) as f64 / w as f64;
                acc += spec[ky * w + kx] * Complex64::new(ang.cos(), ang.sin());
            }
            rows[ky * w + x] = acc;
        }
    }
    let norm = 1.0 / (h * w) as f64;
    let mut out = vec![0.0f64; h * w];
    for x in 0..w {
        for y in 0..h {
            let mut acc = Complex64::new(0.0, 0.0);
            for ky in 0..h {
                let ang = 2.0 * std::f64::consts::PI * (ky * y) as f64 / h as f64;
                acc += rows[ky * w + x] * Complex64::new(ang.cos(), ang.sin());
            }
            out[y * w + x] = acc.re * norm;
        }
    }
    Ok(out)
}

/// Magnitude spectrum (DC centered) plus a radial-average profile.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// H×W single-channel magnitude image, DC at (H/2, W/2).
    pub magnitude: Image,
    /// Band b averages bins with integer radius b (in cycles); everything at
    /// or beyond the Nyquist radius lands in the top band. Length
    /// floor(min(H,W)/2).
    pub radial_profile: Vec<f64>,
}

impl SpectrumReport {
    /// Fraction of radial-profile mass in the top quarter of the bands.
    pub fn top_quartile_mass(&self) -> f64 {
        let n = self.radial_profile.len();
        let start = n * 3 / 4;
        let total: f64 = self.radial_profile.iter().sum();
        if total == 0.0 {
            return 0.0;
        }
        self.radial_profile[start..].iter().sum::<f64>() / total
    }
}

fn spectrum_from_plane(plane: &Image) -> Result<SpectrumReport> {
    let (h, w) = (plane.height, plane.width);
    let spec = dft2(plane)?;
    let mut magnitude = Image::new(h, w, 1);
    for ky in 0..h {
        for kx in 0..w {
            // fftshift: DC at (h/2, w/2)
            let sy = (ky + h / 2) % h;
            let sx = (kx + w / 2) % w;
            *magnitude.at_mut(sy, sx, 0) = spec[ky * w + kx].norm() as f32;
        }
    }
    let bands = h.min(w) / 2;
    let mut sums = vec![0.0f64; bands];
    let mut counts = vec![0u64; bands];
    for ky in 0..h {
        for kx in 0..w {
            let fy = if ky <= h / 2 {
                ky as f64
            } else {
                ky as f64 - h as f64
            };
            let fx = if kx <= w / 2 {
                kx as f64
            } else {
                kx as f64 - w as f64
            };
            let band = ((fy * fy + fx * fx).sqrt().floor() as usize).min(bands - 1);
            sums[band] += spec[ky * w + kx].norm();
            counts[band] += 1;
        }
    }
    let radial_profile = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
        .collect();
    Ok(SpectrumReport {
        magnitude,
        radial_profile,
    })
}

/// Spectrum of the per-pixel L1 loss gradient plane for one training pair:
/// sign(target − prediction)/numel, averaged over channels.
pub fn gradient_spectrum(params: &ModelParams, pair: &TrainingPair) -> Result<SpectrumReport> {
    let pred = predict(params, &pair.input)?;
    if (pred.height, pred.width, pred.channels)
        != (pair.target.height, pair.target.width, pair.target.channels)
    {
        return Err(Error::ShapeMismatch(format!(
            "gradient_spectrum: prediction {}x{} vs target {}x{}",
            pred.height, pred.width, pair.target.height, pair.target.width
        )));
    }
    let numel = pred.numel() as f32;
    let mut plane = Image::new(pred.height, pred.width, 1);
    for y in 0..pred.height {
        for x in 0..pred.width {
            let mut acc = 0.0f32;
            for c in 0..pred.channels {
                let d = pair.target.at(y, x, c) - pred.at(y, x, c);
                acc += if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                } / numel;
            }
            *plane.at_mut(y, x, 0) = acc / pred.channels as f32;
        }
    }
    spectrum_from_plane(&plane)
}

/// Export a spectrum as a viewable PNG: log-magnitude, min-max normalized.
pub fn spectrum_to_png_image(report: &SpectrumReport) -> Image {
    let logged: Vec<f32> = report
        .magnitude
        .data
        .iter()
        .map(|&v| (1.0 + v as f64).ln() as f32)
        .collect();
    let lo = logged.iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = logged.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Image::from_vec(
        report.magnitude.height,
        report.magnitude.width,
        1,
        logged.iter().map(|&v| (v - lo) / span).collect(),
    )
    .expect("same extents")
}

/// Evaluate one SR/HR pair the protocol way: clamp, luminance, crop the
/// scale-sized border, then PSNR and SSIM.
pub fn evaluate_pair(sr: &Image, hr: &Image, scale: usize) -> Result<(f64, f64)> {
    use crate::resample::rgb_to_y;
    let y_sr = rgb_to_y(&sr.clamp01())?;
    let y_hr = rgb_to_y(&hr.clamp01())?;
    let p = psnr(&y_sr, &y_hr, scale)?;
    let (h, w) = (y_sr.height - 2 * scale, y_sr.width - 2 * scale);
    let s = ssim(
        &y_sr.crop(scale, scale, h, w)?,
        &y_hr.crop(scale, scale, h, w)?,
    )?;
    Ok((p, s))
}
