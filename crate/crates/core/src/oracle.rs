//! Controlled posterior testbed. The degradation here is average pooling,
//! whose null space is exactly characterizable (zero per-block mean), so a
//! whole family of HR images downsampling to the *same* LR image can be
//! constructed explicitly. That makes the true centroid μ_true and the
//! noise components ε_i computable by construction rather than estimated,
//! which is what the bound and convergence checks need.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::{image_to_tensor, predict, ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::trainer::{adam_step, batch_loss_and_grads, cosine_lr, AdamState, LossKind};

fn check_divisible(img: &Image, s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::InvalidArgument(
            "pool factor must be positive".into(),
        ));
    }
    if !img.height.is_multiple_of(s) || !img.width.is_multiple_of(s) {
        return Err(Error::ShapeMismatch(format!(
            "extents {}x{} not divisible by {s}",
            img.height, img.width
        )));
    }
    Ok(())
}

/// Per-block mean over s×s blocks, every channel independently.
pub fn avg_pool(y: &Image, s: usize) -> Result<Image> {
    check_divisible(y, s)?;
    let (oh, ow) = (y.height / s, y.width / s);
    let mut out = Image::new(oh, ow, y.channels);
    let norm = 1.0 / (s * s) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..y.channels {
                let mut acc = 0.0f64;
                for dy in 0..s {
                    for dx in 0..s {
                        acc += y.at(oy * s + dy, ox * s + dx, c) as f64;
                    }
                }
                *out.at_mut(oy, ox, c) = (acc * norm) as f32;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor upsampling: each pixel replicated into an s×s block.
pub fn nn_upsample(x: &Image, s: usize) -> Result<Image> {
    if s == 0 {
        return Err(Error::InvalidArgument(
            "upsample factor must be positive".into(),
        ));
    }
    let mut out = Image::new(x.height * s, x.width * s, x.channels);
    for y in 0..out.height {
        for xx in 0..out.width {
            for c in 0..x.channels {
                *out.at_mut(y, xx, c) = x.at(y / s, xx / s, c);
            }
        }
    }
    Ok(out)
}

/// An explicitly constructed posterior: K HR images that all average-pool
/// to the same LR image, their exact mean, and the per-sample noise.
#[derive(Debug, Clone)]
pub struct PosteriorSample {
    pub x: Image,
    pub scale: usize,
    pub samples: Vec<Image>,
    pub mu_true: Image,
    pub eps: Vec<Image>,
}

/// Build a K-sample posterior around nn_upsample(x): per sample, draw
/// uniform(−amp, amp) noise and project it onto the null space of
/// avg_pool (subtract its per-block mean), so every sample downsamples to
/// x exactly. Samples may leave [0,1]; they are analysis constructs, not
/// display images.
pub fn make_posterior(
    x: &Image,
    scale: usize,
    k: usize,
    noise_amp: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PosteriorSample> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "posterior needs at least one sample".into(),
        ));
    }
    if !(noise_amp.is_finite() && noise_amp >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad noise amplitude {noise_amp}"
        )));
    }
    let u = nn_upsample(x, scale)?;
    let mut samples = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = Image::new(u.height, u.width, u.channels);
        for val in &mut v.data {
            *val = if noise_amp == 0.0 {
                0.0
            } else {
                rng.gen_range(-noise_amp..noise_amp) as f32
            };
        }
        let block_means = nn_upsample(&avg_pool(&v, scale)?, scale)?;
        let mut y = u.clone();
        for i in 0..y.data.len() {
            y.data[i] += v.data[i] - block_means.data[i];
        }
        samples.push(y);
    }
    let mut mu_true = Image::new(u.height, u.width, u.channels);
    for i in 0..mu_true.data.len() {
        let acc: f64 = samples.iter().map(|s| s.data[i] as f64).sum();
        mu_true.data[i] = (acc / k as f64) as f32;
    }
    let eps = samples
        .iter()
        .map(|s| {
            let mut e = s.clone();
            for i in 0..e.data.len() {
                e.data[i] -= mu_true.data[i];
            }
            e
        })
        .collect();
    Ok(PosteriorSample {
        x: x.clone(),
        scale,
        samples,
        mu_true,
        eps,
    })
}

impl PosteriorSample {
    /// Max abs of the per-pixel mean of ε over samples; exactly-zero up to
    /// f32 rounding by construction.
    pub fn mean_eps_norm(&self) -> f64 {
        let n = self.mu_true.data.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let m: f64 =
                self.eps.iter().map(|e| e.data[i] as f64).sum::<f64>() / self.eps.len() as f64;
            worst = worst.max(m.abs());
        }
        worst
    }

    /// Index of the sample farthest (L1) from μ_true; None if all ε are 0.
    pub fn farthest_sample(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.eps.iter().enumerate() {
            let d = e.data.iter().map(|&v| (v as f64).abs()).sum::<f64>() / e.data.len() as f64;
            if d > 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// The two sides of the bound: averaging the loss over posterior samples
/// (lhs) can never undercut the loss against their mean (rhs).
pub fn check_jensen(sample: &PosteriorSample, c: &Image) -> Result<(f64, f64)> {
    let mut lhs = 0.0f64;
    for y in &sample.samples {
        lhs += y.mean_abs_diff(c)?;
    }
    lhs /= sample.samples.len() as f64;
    let rhs = sample.mu_true.mean_abs_diff(c)?;
    Ok((lhs, rhs))
}

/// Distance-to-centroid trajectory of a tiny model trained on targets drawn
/// uniformly from the posterior.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorTrainingReport {
    /// ‖f(x) − μ_true‖₁ (mean abs), index 0 = before training, then one
    /// entry per step.
    pub distances: Vec<f64>,
    pub initial_distance: f64,
    pub final_distance: f64,
    /// ‖f(x) − y_far‖₁ at the end, for the sample farthest from μ_true;
    /// None when the posterior is degenerate (all ε zero).
    pub farthest_sample_distance: Option<f64>,
}

/// Train a fresh tiny model on the single LR image with per-step targets
/// drawn uniformly from {y_i}, simulating sampling from the posterior, and
/// track convergence toward μ_true.
pub fn posterior_training_check(
    sample: &PosteriorSample,
    model_cfg: &ModelConfig,
    steps: u64,
    lr0: f64,
    seed: u64,
) -> Result<PosteriorTrainingReport> {
    if model_cfg.scale != sample.scale {
        return Err(Error::ShapeMismatch(format!(
            "model scale {} vs posterior scale {}",
            model_cfg.scale, sample.scale
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let mut params = ModelParams::init(model_cfg, seed)?;
    let mut state = AdamState::new(&params);
    let input = image_to_tensor(&sample.x);
    let targets: Vec<Tensor> = sample.samples.iter().map(image_to_tensor).collect();

    let distance =
        |p: &ModelParams| -> Result<f64> { predict(p, &sample.x)?.mean_abs_diff(&sample.mu_true) };

    let mut distances = Vec::with_capacity(steps as usize + 1);
    distances.push(distance(&params)?);
    use rand::SeedableRng;
    for step in 0..steps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step + 1);
        let pick = rng.gen_range(0..targets.len());
        let (loss, grads) = batch_loss_and_grads(&params, &input, &targets[pick], LossKind::L1)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step as usize,
            });
        }
        adam_step(&mut params, &grads, &mut state, cosine_lr(step, steps, lr0))?;
        distances.push(distance(&params)?);
    }

    let farthest_sample_distance = match sample.farthest_sample() {
        Some(i) => Some(predict(&params, &sample.x)?.mean_abs_diff(&sample.samples[i])?),
        None => None,
    };
    Ok(PosteriorTrainingReport {
        initial_distance: distances[0],
        final_distance: *distances.last().unwrap(),
        farthest_sample_distance,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::toy_image;
    use rand::SeedableRng;

    #[test]
    fn avg_pool_reference_points() {
        let block = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let pooled = avg_pool(&block, 2).unwrap();
        assert_eq!(pooled.data, vec![0.5]);

        let c = Image::constant(6, 9, 3, 0.37);
        let pc = avg_pool(&c, 3).unwrap();
        assert!(pc.data.iter().all(|&v| v == 0.37));
        assert_eq!((pc.height, pc.width), (2, 3));

        assert!(avg_pool(&Image::constant(5, 4, 1, 0.0), 2).is_err());
    }

    #[test]
    fn pool_inverts_replication() {
        let x = toy_image(11, 6, 7);
        let up = nn_upsample(&x, 3).unwrap();
        assert_eq!((up.height, up.width), (18, 21));
        let back = avg_pool(&up, 3).unwrap();
        assert!(
            x.max_abs_diff(&back) < 1e-6,
            "pooling replicated blocks must be exact"
        );
    }

    #[test]
    fn degenerate_posterior_collapses_to_base() {
        let x = toy_image(1, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = make_posterior(&x, 2, 5, 0.0, &mut rng).unwrap();
        let u = nn_upsample(&x, 2).unwrap();
        for y in &p.samples {
            assert_eq!(y.data, u.data);
        }
        assert_eq!(p.mu_true.data, u.data);
        assert!(p.eps.iter().all(|e| e.data.iter().all(|&v| v == 0.0)));
        assert_eq!(p.mean_eps_norm(), 0.0);
        assert!(p.farthest_sample().is_none());
    }

    #[test]
    fn every_sample_downsamples_to_x_exactly() {
        let x = toy_image(2, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = make_posterior(&x, 2, 16, 0.3, &mut rng).unwrap();
        for (i, y) in p.samples.iter().enumerate() {
            let back = avg_pool(y, 2).unwrap();
            assert!(
                back.max_abs_diff(&x) < 1e-6,
                "sample {i} breaks degradation consistency: {}",
                back.max_abs_diff(&x)
            );
        }
    }

    #[test]
    fn noise_has_zero_mean_and_zero_block_means() {
        let x = toy_image(5, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = make_posterior(&x, 2, 16, 0.2, &mut rng).unwrap();
        assert!(p.mean_eps_norm() < 1e-7, "mean eps {}", p.mean_eps_norm());
        for e in &p.eps {
            let pooled = avg_pool(e, 2).unwrap();
            let worst = pooled.data.iter().map(|v| v.abs()).fold(0.0f32, f32::max);
            assert!(worst < 1e-6, "eps leaks out of the null space: {worst}");
        }
        // Noise is genuinely present.
        assert!(p.farthest_sample().is_some());
    }

    #[test]
    fn jensen_bound_holds_for_random_probe_points() {
        let x = toy_image(7, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = make_posterior(&x, 2, 16, 0.25, &mut rng).unwrap();

        // Equality in the degenerate case.
        let degenerate = make_posterior(&x, 2, 4, 0.0, &mut rng).unwrap();
        let c = toy_image(9, 8, 8);
        let (lhs, rhs) = check_jensen(&degenerate, &c).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);

        // rhs vanishes at the centroid itself.
        let (lhs, rhs) = check_jensen(&p, &p.mu_true).unwrap();
        assert_eq!(rhs, 0.0);
        assert!(lhs > 0.0);

        for trial in 0..50 {
            let mut probe = Image::new(8, 8, 3);
            for v in &mut probe.data {
                *v = rng.gen_range(-0.5..1.5);
            }
            let (lhs, rhs) = check_jensen(&p, &probe).unwrap();
            assert!(lhs >= rhs - 1e-6, "trial {trial}: lhs {lhs} < rhs {rhs}");
        }

        assert!(check_jensen(&p, &Image::constant(4, 4, 3, 0.0)).is_err());
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            scale: 2,
            channels: 8,
            n_blocks: 1,
            residual_scaling: 1.0,
        }
    }

    #[test]
    fn single_target_regression_converges_toward_it() {
        let x = toy_image(10, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = make_posterior(&x, 2, 1, 0.0, &mut rng).unwrap();
        let report = posterior_training_check(&p, &tiny_cfg(), 200, 2e-3, 5).unwrap();
        assert!(
            report.final_distance < 0.5 * report.initial_distance,
            "expected ≥2x shrink: {} -> {}",
            report.initial_distance,
            report.final_distance
        );
        assert!(report.farthest_sample_distance.is_none());
        assert_eq!(report.distances.len(), 201);
    }

    #[test]
    fn symmetric_pair_prediction_settles_between_the_targets() {
        // y_1 = u + v, y_2 = u − v: the L1-optimal prediction set is the
        // per-pixel interval between them.
        let x = toy_image(12, 4, 4);
        let u = nn_upsample(&x, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let base = make_posterior(&x, 2, 1, 0.15, &mut rng).unwrap();
        let v: Vec<f32> = base.samples[0]
            .data
            .iter()
            .zip(&u.data)
            .map(|(a, b)| a - b)
            .collect();
        let mut y1 = u.clone();
        let mut y2 = u.clone();
        for ((a, b), &dv) in y1.data.iter_mut().zip(y2.data.iter_mut()).zip(&v) {
            *a += dv;
            *b -= dv;
        }
        let sample = PosteriorSample {
            x: x.clone(),
            scale: 2,
            mu_true: u.clone(),
            eps: vec![y1.clone(), y2.clone()]
                .into_iter()
                .map(|mut e| {
                    for i in 0..e.data.len() {
                        e.data[i] -= u.data[i];
                    }
                    e
                })
                .collect(),
            samples: vec![y1.clone(), y2.clone()],
        };
        let report = posterior_training_check(&sample, &tiny_cfg(), 600, 2e-3, 7).unwrap();
        assert!(report.final_distance < 0.5 * report.initial_distance);

        let params = {
            // Re-run the deterministic training to recover the final model:
            // the report intentionally carries only distances.
            let mut params = ModelParams::init(&tiny_cfg(), 7).unwrap();
            let mut state = AdamState::new(&params);
            let input = image_to_tensor(&x);
            let targets = [image_to_tensor(&y1), image_to_tensor(&y2)];
            for step in 0..600u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                rng.set_stream(step + 1);
                let pick = rng.gen_range(0..2usize);
                let (_, grads) =
                    batch_loss_and_grads(&params, &input, &targets[pick], LossKind::L1).unwrap();
                adam_step(&mut params, &grads, &mut state, cosine_lr(step, 600, 2e-3)).unwrap();
            }
            params
        };
        let pred = predict(&params, &x).unwrap();
        let slack = 0.05;
        let mut inside = 0usize;
        for i in 0..pred.data.len() {
            let (lo, hi) = (y1.data[i].min(y2.data[i]), y1.data[i].max(y2.data[i]));
            if pred.data[i] >= lo - slack && pred.data[i] <= hi + slack {
                inside += 1;
            }
        }
        let frac = inside as f64 / pred.data.len() as f64;
        assert!(
            frac > 0.95,
            "only {frac:.3} of pixels inside the per-pixel median interval"
        );
    }

    #[test]
    fn posterior_training_check_is_seeded() {
        let x = toy_image(14, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p = make_posterior(&x, 2, 4, 0.2, &mut rng).unwrap();
        let a = posterior_training_check(&p, &tiny_cfg(), 50, 1e-3, 3).unwrap();
        let b = posterior_training_check(&p, &tiny_cfg(), 50, 1e-3, 3).unwrap();
        assert_eq!(a.distances, b.distances);
    }
}
