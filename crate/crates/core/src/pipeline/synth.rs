//! Deterministic synthetic HR images for desk-scale experiments: smooth
//! gradient backgrounds with a mild sinusoidal texture and a handful of
//! hard-edged shapes, so downsampling discards real high-frequency content.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::img::{write_png, Image};

/// One synthetic RGB image, fully determined by `seed`.
pub fn toy_image(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(h, w, 3);

    let color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        [
            rng.gen_range(0.08..0.92),
            rng.gen_range(0.08..0.92),
            rng.gen_range(0.08..0.92),
        ]
    };

    // Gradient background between two colors along a random direction.
    let ca = color(&mut rng);
    let cb = color(&mut rng);
    let theta: f64 = rng.gen_range(0.0..TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let diag = ((h * h + w * w) as f64).sqrt();

    // Low-amplitude plane wave so even "flat" regions carry some texture.
    let freq: f64 = rng.gen_range(1.5..4.0);
    let phase: f64 = rng.gen_range(0.0..TAU);
    let wave_dir: f64 = rng.gen_range(0.0..TAU);
    let amp: f64 = rng.gen_range(0.02..0.06);

    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 * dx + y as f64 * dy) / diag + 1.0) / 2.0;
            let s = amp
                * (TAU * freq * (x as f64 * wave_dir.cos() + y as f64 * wave_dir.sin())
                    / w.max(h) as f64
                    + phase)
                    .sin();
            for c in 0..3 {
                *img.at_mut(y, x, c) = ((ca[c] + t * (cb[c] - ca[c])) + s).clamp(0.0, 1.0) as f32;
            }
        }
    }

    // Hard-edged shapes: rectangles, discs, and stripes.
    let n_shapes = rng.gen_range(3..=6);
    for _ in 0..n_shapes {
        let col = color(&mut rng);
        match rng.gen_range(0..3u32) {
            0 => {
                let y0 = rng.gen_range(0..h);
                let x0 = rng.gen_range(0..w);
                let hh = rng.gen_range(h / 8..=h / 2).max(1);
                let ww = rng.gen_range(w / 8..=w / 2).max(1);
                for y in y0..(y0 + hh).min(h) {
                    for x in x0..(x0 + ww).min(w) {
                        for (c, &cv) in col.iter().enumerate() {
                            *img.at_mut(y, x, c) = cv as f32;
                        }
                    }
                }
            }
            1 => {
                let cy = rng.gen_range(0..h) as f64;
                let cx = rng.gen_range(0..w) as f64;
                let r = rng.gen_range(h.min(w) as f64 / 10.0..h.min(w) as f64 / 3.0);
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        if d2 <= r * r {
                            for (c, &cv) in col.iter().enumerate() {
                                *img.at_mut(y, x, c) = cv as f32;
                            }
                        }
                    }
                }
            }
            _ => {
                let ang: f64 = rng.gen_range(0.0..TAU);
                let (a, b) = (ang.cos(), ang.sin());
                let offset = rng.gen_range(0.0..diag);
                let half_width = rng.gen_range(1.0..(h.min(w) as f64 / 8.0).max(1.5));
                for y in 0..h {
                    for x in 0..w {
                        let d = (x as f64 * a + y as f64 * b + offset).rem_euclid(diag);
                        if d < 2.0 * half_width {
                            for (c, &cv) in col.iter().enumerate() {
                                *img.at_mut(y, x, c) = cv as f32;
                            }
                        }
                    }
                }
            }
        }
    }

    // Speckled patches: per-pixel detail too fine to survive downsampling,
    // so several HR explanations map to the same LR image there. Without
    // such regions every target would be recoverable and the centroid-based
    // objectives would collapse onto plain regression.
    let n_tex = rng.gen_range(3..=5);
    for _ in 0..n_tex {
        let col = color(&mut rng);
        let amp: f64 = rng.gen_range(0.12..0.25);
        let y0 = rng.gen_range(0..h);
        let x0 = rng.gen_range(0..w);
        let hh = rng.gen_range(h / 6..=h / 2).max(1);
        let ww = rng.gen_range(w / 6..=w / 2).max(1);
        for y in y0..(y0 + hh).min(h) {
            for x in x0..(x0 + ww).min(w) {
                let speck: f64 = rng.gen_range(-amp..amp);
                for (c, &cv) in col.iter().enumerate() {
                    *img.at_mut(y, x, c) = ((cv + speck).clamp(0.0, 1.0)) as f32;
                }
            }
        }
    }

    // Grain over everything, shared across channels.
    let grain: f64 = rng.gen_range(0.06..0.12);
    for y in 0..h {
        for x in 0..w {
            let g: f64 = rng.gen_range(-grain..grain);
            for c in 0..3 {
                let v = img.at(y, x, c) as f64 + g;
                *img.at_mut(y, x, c) = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

/// Write `count` toy images (`tile_NNN.png`) into `dir`.
pub fn generate_toy_corpus(
    dir: impl AsRef<Path>,
    count: usize,
    h: usize,
    w: usize,
    base_seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if count == 0 {
        return Err(Error::InvalidArgument("corpus count must be > 0".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = toy_image(base_seed.wrapping_add(i as u64), h, w);
        let path = dir.join(format!("tile_{i:03}.png"));
        write_png(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}
