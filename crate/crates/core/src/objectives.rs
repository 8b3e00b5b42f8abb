//! Training-pair constructors for each objective mode.
//!
//! Vanilla pairs the stored LR input with ground truth. KD pairs it with the
//! cached pretrained output μ_emp (spatially inconsistent in general). ECO
//! blends t = μ_emp + α·(y* − μ_emp) and pairs ↓t with t, so the pair is
//! spatially consistent for every α — blending happens before downsampling.
//! Residual regression encodes (y* − μ_emp) affinely into [0,1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::resample::{resize, ResizeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    Vanilla,
    Kd,
    Eco,
    ResidualRegression,
}

impl ObjectiveMode {
    /// KD, ECO, and residual regression all read the centroid cache.
    pub fn needs_centroids(&self) -> bool {
        !matches!(self, ObjectiveMode::Vanilla)
    }
}

/// One (input, target) pair ready for the trainer.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input: Image,
    pub target: Image,
    pub alpha: f64,
    pub mode: ObjectiveMode,
}

fn check_scaled_extents(lr: &Image, hr: &Image, scale: usize, what: &str) -> Result<()> {
    if hr.height != lr.height * scale || hr.width != lr.width * scale {
        return Err(Error::ShapeMismatch(format!(
            "{what}: HR {}x{} is not {scale}x LR {}x{}",
            hr.height, hr.width, lr.height, lr.width
        )));
    }
    Ok(())
}

/// Integer upscale factor encoded by a downsampling spec (scale = 1/s).
fn scale_from_spec(spec: &ResizeSpec) -> Result<usize> {
    let s = 1.0 / spec.scale;
    let rounded = s.round();
    if !(rounded >= 1.0 && (s - rounded).abs() < 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "resize spec scale {} is not 1/s for integer s",
            spec.scale
        )));
    }
    Ok(rounded as usize)
}

/// Ground-truth pair (x, y*), α = 1.
pub fn vanilla_pair(x: &Image, y_star: &Image, scale: usize) -> Result<TrainingPair> {
    check_scaled_extents(x, y_star, scale, "vanilla_pair")?;
    Ok(TrainingPair {
        input: x.clone(),
        target: y_star.clone(),
        alpha: 1.0,
        mode: ObjectiveMode::Vanilla,
    })
}

/// Distillation pair (x, μ_emp); never reads ground truth.
pub fn kd_pair(x: &Image, mu_emp: &Image, scale: usize) -> Result<TrainingPair> {
    check_scaled_extents(x, mu_emp, scale, "kd_pair")?;
    Ok(TrainingPair {
        input: x.clone(),
        target: mu_emp.clone(),
        alpha: 0.0,
        mode: ObjectiveMode::Kd,
    })
}

/// Centroid-oriented pair: target t = μ_emp + α·(y* − μ_emp), input ↓t.
///
/// The input is always recomputed as the downsample of the blended target,
/// including at α = 1; when the dataset LR was produced with the same spec
/// the two coincide within float tolerance, and this keeps the pair exactly
/// spatially consistent for every α.
pub fn eco_pair(
    y_star: &Image,
    mu_emp: &Image,
    alpha: f64,
    spec: &ResizeSpec,
) -> Result<TrainingPair> {
    if (y_star.height, y_star.width, y_star.channels)
        != (mu_emp.height, mu_emp.width, mu_emp.channels)
    {
        return Err(Error::ShapeMismatch(format!(
            "eco_pair: ground truth {}x{}x{} vs centroid {}x{}x{}",
            y_star.height,
            y_star.width,
            y_star.channels,
            mu_emp.height,
            mu_emp.width,
            mu_emp.channels
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "eco_pair: alpha {alpha} outside [0,1]"
        )));
    }
    let s = scale_from_spec(spec)?;
    if !y_star.height.is_multiple_of(s) || !y_star.width.is_multiple_of(s) {
        return Err(Error::ShapeMismatch(format!(
            "eco_pair: target {}x{} not divisible by scale {s}",
            y_star.height, y_star.width
        )));
    }
    let a = alpha as f32;
    let target = Image::from_vec(
        y_star.height,
        y_star.width,
        y_star.channels,
        mu_emp
            .data
            .iter()
            .zip(&y_star.data)
            .map(|(&m, &y)| m + a * (y - m))
            .collect(),
    )?;
    let input = resize(&target, spec)?;
    Ok(TrainingPair {
        input,
        target,
        alpha,
        mode: ObjectiveMode::Eco,
    })
}

/// Noise-regression pair: input x, target 0.5 + (y* − μ_emp)/2.
pub fn residual_pair(
    x: &Image,
    y_star: &Image,
    mu_emp: &Image,
    scale: usize,
) -> Result<TrainingPair> {
    check_scaled_extents(x, y_star, scale, "residual_pair")?;
    if (y_star.height, y_star.width) != (mu_emp.height, mu_emp.width) {
        return Err(Error::ShapeMismatch(format!(
            "residual_pair: ground truth {}x{} vs centroid {}x{}",
            y_star.height, y_star.width, mu_emp.height, mu_emp.width
        )));
    }
    let target = Image::from_vec(
        y_star.height,
        y_star.width,
        y_star.channels,
        y_star
            .data
            .iter()
            .zip(&mu_emp.data)
            .map(|(&y, &m)| 0.5 + (y - m) / 2.0)
            .collect(),
    )?;
    Ok(TrainingPair {
        input: x.clone(),
        target,
        alpha: 0.0,
        mode: ObjectiveMode::ResidualRegression,
    })
}

/// Invert the residual encoding at evaluation time: SR = μ_emp + 2·(pred − 0.5).
pub fn decode_residual(mu_emp: &Image, pred: &Image) -> Result<Image> {
    if (mu_emp.height, mu_emp.width, mu_emp.channels) != (pred.height, pred.width, pred.channels) {
        return Err(Error::ShapeMismatch(format!(
            "decode_residual: centroid {}x{} vs prediction {}x{}",
            mu_emp.height, mu_emp.width, pred.height, pred.width
        )));
    }
    Image::from_vec(
        pred.height,
        pred.width,
        pred.channels,
        mu_emp
            .data
            .iter()
            .zip(&pred.data)
            .map(|(&m, &p)| m + 2.0 * (p - 0.5))
            .collect(),
    )
}

/// Mean |↓target − input|: zero (up to resampling tolerance) exactly when
/// the pair is spatially consistent.
pub fn spatial_consistency_residual(pair: &TrainingPair, spec: &ResizeSpec) -> Result<f64> {
    let down = resize(&pair.target, spec)?;
    down.mean_abs_diff(&pair.input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::toy_image;
    use crate::resample::rgb_to_y;

    /// Downsample-upsample blur: a stand-in for the pretrained network's
    /// output, which approximates exactly this kind of smoother.
    fn blurred(hr: &Image) -> Image {
        let lr = resize(hr, &ResizeSpec::antialiased(0.5)).unwrap();
        resize(&lr, &ResizeSpec::antialiased(2.0)).unwrap()
    }

    fn float_item(seed: u64) -> (Image, Image, Image) {
        let hr = toy_image(seed, 24, 24);
        let lr = resize(&hr, &ResizeSpec::antialiased(0.5)).unwrap();
        let mu = blurred(&hr);
        (hr, lr, mu)
    }

    #[test]
    fn vanilla_is_passthrough_and_checks_extents() {
        let (hr, lr, _) = float_item(1);
        let p = vanilla_pair(&lr, &hr, 2).unwrap();
        assert_eq!(p.input, lr);
        assert_eq!(p.target, hr);
        assert_eq!(p.alpha, 1.0);
        assert!(vanilla_pair(&lr, &hr, 3).is_err());
        let odd = Image::constant(23, 24, 3, 0.5);
        assert!(vanilla_pair(&lr, &odd, 2).is_err());
    }

    #[test]
    fn eco_endpoints_match_kd_and_vanilla_targets() {
        let (hr, lr, mu) = float_item(2);
        let spec = ResizeSpec::antialiased(0.5);

        let at0 = eco_pair(&hr, &mu, 0.0, &spec).unwrap();
        assert_eq!(at0.target, mu, "alpha=0 target must be the centroid");
        assert_eq!(at0.input, resize(&mu, &spec).unwrap());

        let at1 = eco_pair(&hr, &mu, 1.0, &spec).unwrap();
        assert!(at1.target.max_abs_diff(&hr) < 1e-6);
        assert!(at1.input.max_abs_diff(&lr) < 1e-6);

        let vp = vanilla_pair(&lr, &hr, 2).unwrap();
        assert!(at1.target.max_abs_diff(&vp.target) < 1e-6);
        assert!(at1.input.max_abs_diff(&vp.input) < 1e-6);
    }

    #[test]
    fn eco_blend_is_affine_in_alpha() {
        let (hr, _, mu) = float_item(3);
        let spec = ResizeSpec::antialiased(0.5);
        let t0 = eco_pair(&hr, &mu, 0.0, &spec).unwrap().target;
        let t1 = eco_pair(&hr, &mu, 1.0, &spec).unwrap().target;
        for alpha in [0.25, 0.5, 0.75] {
            let t = eco_pair(&hr, &mu, alpha, &spec).unwrap().target;
            for i in 0..t.data.len() {
                let expect = (1.0 - alpha as f32) * t0.data[i] + alpha as f32 * t1.data[i];
                assert!(
                    (t.data[i] - expect).abs() < 1e-6,
                    "alpha {alpha}, pixel {i}: {} vs {expect}",
                    t.data[i]
                );
            }
        }
    }

    #[test]
    fn eco_pairs_are_spatially_consistent_for_all_alpha() {
        let (hr, _, mu) = float_item(4);
        let spec = ResizeSpec::antialiased(0.5);
        for alpha in [0.0, 0.3, 0.7, 1.0] {
            let p = eco_pair(&hr, &mu, alpha, &spec).unwrap();
            let r = spatial_consistency_residual(&p, &spec).unwrap();
            assert!(r < 1e-5, "alpha {alpha}: residual {r}");
        }
    }

    #[test]
    fn eco_constant_blend_reference_point() {
        let y = Image::constant(8, 8, 3, 0.8);
        let mu = Image::constant(8, 8, 3, 0.4);
        let p = eco_pair(&y, &mu, 0.5, &ResizeSpec::antialiased(0.5)).unwrap();
        for &v in &p.target.data {
            assert!((v - 0.6).abs() < 1e-6);
        }
        for &v in &p.input.data {
            assert!((v - 0.6).abs() < 1e-6);
        }
        assert_eq!((p.input.height, p.input.width), (4, 4));
    }

    #[test]
    fn eco_rejects_bad_inputs() {
        let (hr, _, mu) = float_item(5);
        let spec = ResizeSpec::antialiased(0.5);
        assert!(eco_pair(&hr, &mu, 1.5, &spec).is_err());
        assert!(eco_pair(&hr, &Image::constant(8, 8, 3, 0.1), 0.5, &spec).is_err());
        assert!(eco_pair(&hr, &mu, 0.5, &ResizeSpec::antialiased(0.4)).is_err());
        let odd = Image::constant(9, 9, 3, 0.5);
        assert!(eco_pair(&odd, &odd, 0.5, &spec).is_err());
    }

    #[test]
    fn vanilla_pair_on_float_lr_is_spatially_consistent() {
        // The dataset LR is the downsample of HR at full float precision,
        // so the vanilla pair inherits spatial consistency.
        let (hr, lr, _) = float_item(6);
        let spec = ResizeSpec::antialiased(0.5);
        let p = vanilla_pair(&lr, &hr, 2).unwrap();
        let r = spatial_consistency_residual(&p, &spec).unwrap();
        assert!(r < 1e-5, "residual {r}");
    }

    #[test]
    fn ideal_kd_pair_is_consistent_and_offset_shifts_residual() {
        // Ideal teacher: μ_emp downsamples exactly to x.
        let hr = toy_image(7, 24, 24).map(|v| 0.05 + 0.8 * v); // keep headroom
        let spec = ResizeSpec::antialiased(0.5);
        let x = resize(&hr, &spec).unwrap();
        let ideal = kd_pair(&x, &hr, 2).unwrap();
        let r0 = spatial_consistency_residual(&ideal, &spec).unwrap();
        assert!(r0 < 1e-7, "ideal-teacher residual {r0}");

        // A constant offset survives the weight-normalized downsampler.
        for offset in [0.05f32, 0.1] {
            let shifted = hr.map(|v| v + offset);
            let p = kd_pair(&x, &shifted, 2).unwrap();
            let r = spatial_consistency_residual(&p, &spec).unwrap();
            assert!(
                (r - offset as f64).abs() < 0.005,
                "offset {offset}: residual {r}"
            );
        }
    }

    #[test]
    fn kd_signature_never_reads_ground_truth() {
        let (hr, lr, mu) = float_item(8);
        let a = kd_pair(&lr, &mu, 2).unwrap();
        // Rebuilding after "mutating" ground truth trivially yields the
        // same pair: the constructor does not take y* at all.
        let _mutated = hr.map(|v| 1.0 - v);
        let b = kd_pair(&lr, &mu, 2).unwrap();
        assert_eq!(a.input, b.input);
        assert_eq!(a.target, b.target);
    }

    #[test]
    fn residual_encoding_round_trips() {
        let (hr, lr, mu) = float_item(9);
        let p = residual_pair(&lr, &hr, &mu, 2).unwrap();
        let decoded = decode_residual(&mu, &p.target).unwrap();
        assert!(decoded.max_abs_diff(&hr) < 1e-6);

        let same = residual_pair(&lr, &hr, &hr, 2).unwrap();
        for &v in &same.target.data {
            assert!((v - 0.5).abs() < 1e-7, "zero residual must encode to 0.5");
        }
    }

    #[test]
    fn residuals_concentrate_at_edges() {
        // Sobel magnitude on the ground-truth luminance marks edges; the
        // teacher-miss residual should be larger there than elsewhere.
        let mut edge_means = Vec::new();
        let mut flat_means = Vec::new();
        for seed in 0..6 {
            let hr = toy_image(seed, 48, 48);
            let mu = blurred(&hr);
            let y = rgb_to_y(&hr).unwrap();
            let mut sobel = vec![0.0f64; 48 * 48];
            for yy in 1..47 {
                for xx in 1..47 {
                    let g = |dy: i64, dx: i64| {
                        y.at((yy as i64 + dy) as usize, (xx as i64 + dx) as usize, 0) as f64
                    };
                    let gx =
                        g(-1, 1) + 2.0 * g(0, 1) + g(1, 1) - g(-1, -1) - 2.0 * g(0, -1) - g(1, -1);
                    let gy =
                        g(1, -1) + 2.0 * g(1, 0) + g(1, 1) - g(-1, -1) - 2.0 * g(-1, 0) - g(-1, 1);
                    sobel[yy * 48 + xx] = (gx * gx + gy * gy).sqrt();
                }
            }
            let mut sorted = sobel.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cutoff = sorted[(sorted.len() as f64 * 0.75) as usize];

            let (mut edge_sum, mut edge_n, mut flat_sum, mut flat_n) = (0.0, 0u64, 0.0, 0u64);
            for yy in 1..47 {
                for xx in 1..47 {
                    let mut r = 0.0;
                    for c in 0..3 {
                        r += (hr.at(yy, xx, c) - mu.at(yy, xx, c)).abs() as f64;
                    }
                    r /= 3.0;
                    if sobel[yy * 48 + xx] > cutoff {
                        edge_sum += r;
                        edge_n += 1;
                    } else {
                        flat_sum += r;
                        flat_n += 1;
                    }
                }
            }
            edge_means.push(edge_sum / edge_n as f64);
            flat_means.push(flat_sum / flat_n as f64);
        }
        let edge: f64 = edge_means.iter().sum::<f64>() / edge_means.len() as f64;
        let flat: f64 = flat_means.iter().sum::<f64>() / flat_means.len() as f64;
        assert!(
            edge >= flat,
            "edge-region residual {edge} should dominate flat-region {flat}"
        );
    }
}
