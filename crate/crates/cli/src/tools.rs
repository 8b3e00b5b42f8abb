//! Data and analysis subcommands: corpus synthesis, dataset preparation,
//! the standalone resampler, metric tables, probe/spectrum reports, target
//! dumps, and the posterior oracle check.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use srlab_core::analysis::{gradient_spectrum, landscape_probe, spectrum_to_png_image};
use srlab_core::img::{encode_png, read_png, write_png, Image};
use srlab_core::model::ModelConfig;
use srlab_core::objectives::{
    eco_pair, kd_pair, residual_pair, vanilla_pair, ObjectiveMode, TrainingPair,
};
use srlab_core::oracle::{check_jensen, make_posterior, posterior_training_check};
use srlab_core::pipeline::synth::{generate_toy_corpus, toy_image};
use srlab_core::pipeline::{
    load_checkpoint, prepare_dataset, write_ecot, AlphaSchedule, CentroidCache, DatasetManifest,
    LoadedDataset, LoadedItem,
};
use srlab_core::resample::{resize, ResizeSpec};
use srlab_core::trainer::{
    assemble_batch, default_probe_etas, evaluate, LossKind, TrainConfig, PSNR_CSV_CAP,
};

use crate::config::{parse_loss, parse_objective};
use crate::stage::{write_file, StagedDir};

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Directory for the synthesized HR PNGs
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub force: bool,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let staged = StagedDir::new(&args.out, args.force)?;
    let paths = generate_toy_corpus(
        staged.path(),
        args.count,
        args.height,
        args.width,
        args.seed,
    )?;
    let n = paths.len();
    let out = staged.commit()?;
    println!(
        "wrote {n} toy images ({}x{}) -> {}",
        args.height,
        args.width,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PrepareDataArgs {
    /// Directory of source HR PNGs
    #[arg(long)]
    pub hr_dir: PathBuf,
    /// Output dataset directory (hr/, lr/, manifest.json)
    #[arg(long)]
    pub out: PathBuf,
    /// Integer SR factor
    #[arg(long)]
    pub scale: usize,
    /// Antialias the bicubic downscale (the standard degradation)
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub antialias: bool,
    #[arg(long)]
    pub force: bool,
}

pub fn prepare_data(args: &PrepareDataArgs) -> Result<()> {
    if args.scale == 0 {
        bail!("--scale must be at least 1");
    }
    let spec = if args.antialias {
        ResizeSpec::antialiased(1.0 / args.scale as f64)
    } else {
        ResizeSpec::plain(1.0 / args.scale as f64)
    };
    let staged = StagedDir::new(&args.out, args.force)?;
    let manifest = prepare_dataset(&args.hr_dir, staged.path(), args.scale, &spec)?;
    let n = manifest.items.len();
    let out = staged.commit()?;
    println!("prepared {n} items at x{} -> {}", args.scale, out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ResizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output/input size ratio (0.5 halves, 2 doubles)
    #[arg(long)]
    pub scale: f64,
    /// Antialias when downscaling
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub antialias: bool,
    #[arg(long)]
    pub force: bool,
}

pub fn resize_cmd(args: &ResizeArgs) -> Result<()> {
    let img = read_png(&args.input)?;
    let spec = if args.antialias {
        ResizeSpec::antialiased(args.scale)
    } else {
        ResizeSpec::plain(args.scale)
    };
    let resized = resize(&img, &spec)?;
    write_file(&args.out, &encode_png(&resized)?, args.force)?;
    println!(
        "{}x{} -> {}x{} ({})",
        img.height,
        img.width,
        resized.height,
        resized.width,
        args.out.display()
    );
    Ok(())
}

fn load_dataset_for(
    data: &Path,
    centroids: Option<&PathBuf>,
    objective: ObjectiveMode,
) -> Result<LoadedDataset> {
    let manifest_path = data.join("manifest.json");
    let manifest = DatasetManifest::load(&manifest_path)
        .with_context(|| format!("loading dataset manifest {}", manifest_path.display()))?;
    if objective.needs_centroids() && centroids.is_none() {
        bail!("objective {objective:?} needs --centroids; run gen-centroids first");
    }
    let cache = match centroids {
        Some(dir) => Some(CentroidCache::open(dir).with_context(|| {
            format!(
                "opening centroid cache {}; run gen-centroids first",
                dir.display()
            )
        })?),
        None => None,
    };
    Ok(LoadedDataset::load(&manifest, cache.as_ref())?)
}

fn find_item<'a>(dataset: &'a LoadedDataset, id: &str) -> Result<&'a LoadedItem> {
    dataset
        .items
        .iter()
        .find(|i| i.id == id)
        .ok_or_else(|| anyhow::anyhow!("item {id:?} not found in dataset"))
}

/// Build one full-image pair for the given objective (used by spectrum).
fn full_image_pair(
    dataset: &LoadedDataset,
    item: &LoadedItem,
    objective: ObjectiveMode,
    alpha: f64,
) -> Result<TrainingPair> {
    let centroid = || {
        item.centroid.as_ref().ok_or_else(|| {
            anyhow::anyhow!("item {} has no centroid; run gen-centroids first", item.id)
        })
    };
    let pair = match objective {
        ObjectiveMode::Vanilla => vanilla_pair(&item.lr, &item.hr, dataset.scale)?,
        ObjectiveMode::Kd => kd_pair(&item.lr, centroid()?, dataset.scale)?,
        ObjectiveMode::Eco => eco_pair(&item.hr, centroid()?, alpha, &dataset.resize)?,
        ObjectiveMode::ResidualRegression => {
            residual_pair(&item.lr, &item.hr, centroid()?, dataset.scale)?
        }
    };
    Ok(pair)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Prepared dataset directory to score against
    #[arg(long)]
    pub data: PathBuf,
    /// Needed only for residual decoding
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Interpret model outputs per this objective (residual decodes)
    #[arg(long, value_parser = parse_objective, default_value = "vanilla")]
    pub objective: ObjectiveMode,
    /// Optional CSV output path
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let (params, step) = load_checkpoint(&args.ckpt)
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    let needs_cache = matches!(args.objective, ObjectiveMode::ResidualRegression);
    let dataset = load_dataset_for(
        &args.data,
        if needs_cache {
            args.centroids.as_ref()
        } else {
            None
        },
        if needs_cache {
            args.objective
        } else {
            ObjectiveMode::Vanilla
        },
    )?;
    let report = evaluate(&params, &dataset.items, args.objective)?;

    println!("checkpoint at step {step}: {}", args.ckpt.display());
    println!("{:<16} {:>9} {:>8}", "item", "psnr_db", "ssim");
    let mut csv = String::from("id,psnr,ssim\n");
    for item in &report.per_item {
        println!(
            "{:<16} {:>9.3} {:>8.4}",
            item.id,
            item.psnr.min(PSNR_CSV_CAP),
            item.ssim
        );
        csv.push_str(&format!(
            "{},{},{}\n",
            item.id,
            item.psnr.min(PSNR_CSV_CAP),
            item.ssim
        ));
    }
    println!(
        "{:<16} {:>9.3} {:>8.4}",
        "mean",
        report.mean_psnr.min(PSNR_CSV_CAP),
        report.mean_ssim
    );
    csv.push_str(&format!(
        "mean,{},{}\n",
        report.mean_psnr.min(PSNR_CSV_CAP),
        report.mean_ssim
    ));
    if let Some(out) = &args.out {
        write_file(out, csv.as_bytes(), args.force)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Pair construction for the probed batch
    #[arg(long, value_parser = parse_objective, default_value = "vanilla")]
    pub objective: ObjectiveMode,
    /// α used when the objective blends targets
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 48)]
    pub patch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Which step's batch draw to probe
    #[arg(long, default_value_t = 0)]
    pub step: u64,
    /// Anchor for the default η grid
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, value_parser = parse_loss, default_value = "l1")]
    pub loss: LossKind,
    /// Explicit η grid (comma separated, ascending)
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1)]
    pub val_items: usize,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn probe_cmd(args: &ProbeArgs) -> Result<()> {
    let (params, _) = load_checkpoint(&args.ckpt)
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    let dataset = load_dataset_for(&args.data, args.centroids.as_ref(), args.objective)?;
    let cfg = TrainConfig {
        total_steps: args.step + 1,
        batch_size: args.batch,
        lr0: args.lr,
        loss: args.loss,
        objective: args.objective,
        alpha: AlphaSchedule::constant(args.alpha.clamp(0.0, 1.0)),
        seed: args.seed,
        eval_every: 0,
        probe_every: 0,
        patch_size: args.patch,
        val_items: args.val_items,
        halt_step: None,
    };
    let (input, target, _) = assemble_batch(&dataset, &cfg, args.step)?;
    let etas = args
        .etas
        .clone()
        .unwrap_or_else(|| default_probe_etas(args.lr));
    let report = landscape_probe(&params, &input, &target, &etas, args.loss, args.step)?;

    let mut csv = String::from("eta,loss,baseline_loss,baseline_grad_norm,max_grad_diff\n");
    for (eta, loss) in report.etas.iter().zip(&report.losses_along_ray) {
        csv.push_str(&format!(
            "{eta},{loss},{},{},{}\n",
            report.baseline_loss, report.baseline_grad_norm, report.max_grad_diff
        ));
    }
    write_file(&args.out, csv.as_bytes(), args.force)?;
    println!(
        "baseline loss {:.6}, max grad diff {:.6} -> {}",
        report.baseline_loss,
        report.max_grad_diff,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Dataset item to analyze
    #[arg(long)]
    pub item: String,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, value_parser = parse_objective, default_value = "eco")]
    pub objective: ObjectiveMode,
    /// Output directory (spectrum.csv, magnitude.ecot, heatmap.png)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

pub fn spectrum_cmd(args: &SpectrumArgs) -> Result<()> {
    let (params, _) = load_checkpoint(&args.ckpt)
        .with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    let dataset = load_dataset_for(&args.data, args.centroids.as_ref(), args.objective)?;
    let item = find_item(&dataset, &args.item)?;
    let pair = full_image_pair(&dataset, item, args.objective, args.alpha)?;
    let report = gradient_spectrum(&params, &pair)?;

    let staged = StagedDir::new(&args.out, args.force)?;
    let mut csv = String::from("band,mean_magnitude\n");
    for (band, mag) in report.radial_profile.iter().enumerate() {
        csv.push_str(&format!("{band},{mag}\n"));
    }
    std::fs::write(staged.path().join("spectrum.csv"), csv).context("writing spectrum.csv")?;
    write_ecot(staged.path().join("magnitude.ecot"), &report.magnitude)?;
    write_png(
        staged.path().join("heatmap.png"),
        &spectrum_to_png_image(&report),
    )?;
    let mass = report.top_quartile_mass();
    let out = staged.commit()?;
    println!(
        "item {} ({:?}, alpha {}): top-quartile mass {:.4} -> {}",
        args.item,
        args.objective,
        args.alpha,
        mass,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TargetDumpArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub centroids: PathBuf,
    #[arg(long)]
    pub item: String,
    /// Blend positions, left to right in the strip
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: Vec<f64>,
    /// Output PNG strip
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Horizontal concatenation with a thin white separator.
fn concat_strip(images: &[Image]) -> Result<Image> {
    let gap = 2usize;
    let h = images[0].height;
    let c = images[0].channels;
    let total_w: usize = images.iter().map(|i| i.width).sum::<usize>() + gap * (images.len() - 1);
    let mut strip = Image::constant(h, total_w, c, 1.0);
    let mut x0 = 0usize;
    for img in images {
        if img.height != h || img.channels != c {
            bail!("strip members must share extents");
        }
        for y in 0..h {
            for x in 0..img.width {
                for ch in 0..c {
                    *strip.at_mut(y, x0 + x, ch) = img.at(y, x, ch);
                }
            }
        }
        x0 += img.width + gap;
    }
    Ok(strip)
}

pub fn target_dump(args: &TargetDumpArgs) -> Result<()> {
    if args.alphas.is_empty() {
        bail!("--alphas must be non-empty");
    }
    let dataset = load_dataset_for(&args.data, Some(&args.centroids), ObjectiveMode::Eco)?;
    let item = find_item(&dataset, &args.item)?;
    let mut panels = Vec::with_capacity(args.alphas.len());
    for &alpha in &args.alphas {
        let pair = full_image_pair(&dataset, item, ObjectiveMode::Eco, alpha)?;
        panels.push(pair.target.clamp01());
    }
    let strip = concat_strip(&panels)?;
    write_file(&args.out, &encode_png(&strip)?, args.force)?;
    println!(
        "blended targets for {} at alphas {:?} -> {}",
        args.item,
        args.alphas,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    /// Posterior sample count
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    /// Random probe points for the bound check
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// LR extents of the synthetic observation
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 0.2)]
    pub noise_amp: f64,
    /// Training steps for the convergence curve
    #[arg(long, default_value_t = 200)]
    pub steps: u64,
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON output path (also printed to stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

pub fn oracle_check(args: &OracleCheckArgs) -> Result<()> {
    let x = toy_image(args.seed, args.height, args.width);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let sample = make_posterior(&x, args.scale, args.k, args.noise_amp, &mut rng)?;

    let mut violations = 0usize;
    let (hr_h, hr_w) = (sample.mu_true.height, sample.mu_true.width);
    for _ in 0..args.trials {
        let mut c = Image::new(hr_h, hr_w, sample.mu_true.channels);
        for v in &mut c.data {
            use rand::Rng;
            *v = rng.gen_range(-0.5..1.5);
        }
        let (lhs, rhs) = check_jensen(&sample, &c)?;
        if lhs < rhs - 1e-6 {
            violations += 1;
        }
    }

    let model_cfg = ModelConfig {
        scale: args.scale,
        channels: 8,
        n_blocks: 1,
        residual_scaling: 1.0,
    };
    let training = posterior_training_check(&sample, &model_cfg, args.steps, args.lr, args.seed)?;

    let report = serde_json::json!({
        "jensen_trials": args.trials,
        "violations": violations,
        "mean_eps_norm": sample.mean_eps_norm(),
        "training_distance_curve": training.distances,
    });
    let pretty = serde_json::to_string_pretty(&report)?;
    println!("{pretty}");
    if let Some(out) = &args.out {
        write_file(out, pretty.as_bytes(), args.force)?;
    }
    Ok(())
}
