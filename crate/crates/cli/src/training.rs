//! Training-family subcommands: pretrain, gen-centroids, train, and
//! sweep-batch. They share one resolution path from flags + config file to
//! a concrete recipe, and every run persists that resolved recipe.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use srlab_core::model::{ModelConfig, ModelParams};
use srlab_core::objectives::ObjectiveMode;
use srlab_core::pipeline::{
    checkpoint_hash, generate_centroids, load_checkpoint, save_checkpoint, AlphaSchedule,
    CentroidCache, DatasetManifest, LoadedDataset, ScheduleKind,
};
use srlab_core::trainer::{train, LossKind, TrainConfig, TrainReport};

use crate::config::{
    parse_loss, parse_objective, parse_schedule_kind, pick, pick_required, DatasetSection,
    ExperimentConfig, ModelSection, PathsSection, ProbeSection, TrainSection,
};
use crate::stage::StagedDir;

#[derive(Debug, Args)]
pub struct CommonTrainArgs {
    /// Prepared dataset directory (holds manifest.json)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON experiment config; explicit flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (checkpoint.ecot, runlog.csv, config.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// l1 | l2
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub probe_every: Option<u64>,
    /// LR patch edge in pixels
    #[arg(long)]
    pub patch: Option<usize>,
    /// Items held out from the end of the dataset for validation
    #[arg(long)]
    pub val_items: Option<usize>,
    /// Stop early at this step while keeping schedules pinned to --steps
    #[arg(long)]
    pub halt_step: Option<u64>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub n_blocks: Option<usize>,
    #[arg(long)]
    pub residual_scaling: Option<f32>,
    /// Start from this checkpoint instead of a fresh initialization
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonTrainArgs,
    /// vanilla | kd | eco | residual
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<ObjectiveMode>,
    /// Centroid cache directory (required by kd/eco/residual)
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// constant | linear_ramp | step | cosine_ramp
    #[arg(long, value_parser = parse_schedule_kind)]
    pub alpha_kind: Option<ScheduleKind>,
    #[arg(long)]
    pub ramp_end_fraction: Option<f64>,
    #[arg(long)]
    pub alpha_start: Option<f64>,
    #[arg(long)]
    pub alpha_end: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonTrainArgs,
}

#[derive(Debug, Args)]
pub struct GenCentroidsArgs {
    /// Prepared dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Pretrained teacher checkpoint (.ecot)
    #[arg(long)]
    pub teacher: PathBuf,
    /// Cache output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SweepBatchArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Batch sizes to sweep
    #[arg(long, value_delimiter = ',', default_value = "2,4,16")]
    pub sizes: Vec<usize>,
    /// Seeds to repeat each size with
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
}

/// Everything a run needs, with the filled-in config for persistence.
pub struct ResolvedRun {
    pub dataset: LoadedDataset,
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub out: PathBuf,
    pub init: Option<ModelParams>,
    pub resolved: ExperimentConfig,
    pub force: bool,
}

fn load_manifest(data_dir: &Path) -> Result<DatasetManifest> {
    let path = data_dir.join("manifest.json");
    DatasetManifest::load(&path)
        .with_context(|| format!("loading dataset manifest {}", path.display()))
}

fn open_cache(dir: &Path) -> Result<CentroidCache> {
    CentroidCache::open(dir).with_context(|| {
        format!(
            "opening centroid cache {}; run gen-centroids first",
            dir.display()
        )
    })
}

pub fn resolve_run(
    common: &CommonTrainArgs,
    objective: ObjectiveMode,
    centroids_flag: Option<&PathBuf>,
    alpha: AlphaSchedule,
) -> Result<ResolvedRun> {
    let file = ExperimentConfig::load_opt(common.config.as_ref())?;

    let data_dir = pick_required(
        common.data.clone(),
        file.dataset.dir.clone(),
        "--data (dataset directory)",
    )?;
    let out = pick_required(common.out.clone(), file.paths.out.clone(), "--out")?;
    let manifest = load_manifest(&data_dir)?;

    if let Some(s) = file.model.scale {
        if s != manifest.scale {
            bail!(
                "config model.scale {s} contradicts dataset scale {}",
                manifest.scale
            );
        }
    }
    let defaults = ModelConfig::default();
    let model_cfg = ModelConfig {
        scale: manifest.scale,
        channels: pick(common.channels, file.model.channels, defaults.channels),
        n_blocks: pick(common.n_blocks, file.model.n_blocks, defaults.n_blocks),
        residual_scaling: pick(
            common.residual_scaling,
            file.model.residual_scaling,
            defaults.residual_scaling,
        ),
    };

    let train_cfg = TrainConfig {
        total_steps: pick_required(common.steps, file.train.total_steps, "--steps")?,
        batch_size: pick(common.batch, file.train.batch_size, 16),
        lr0: pick(common.lr, file.train.lr0, 1e-4),
        loss: pick(common.loss, file.train.loss, LossKind::L1),
        objective,
        alpha,
        seed: pick(common.seed, file.seed, 0),
        eval_every: pick(common.eval_every, file.train.eval_every, 100),
        probe_every: pick(common.probe_every, file.train.probe_every, 0),
        patch_size: pick(common.patch, file.dataset.patch_size, 48),
        val_items: pick(common.val_items, file.dataset.val_items, 1),
        halt_step: common.halt_step.or(file.train.halt_step),
    };

    let centroids_dir = centroids_flag.cloned().or(file.paths.centroids.clone());
    if objective.needs_centroids() && centroids_dir.is_none() {
        bail!("objective {objective:?} needs --centroids; run gen-centroids first");
    }
    let cache = match &centroids_dir {
        Some(dir) => Some(open_cache(dir)?),
        None => None,
    };
    let dataset = LoadedDataset::load(&manifest, cache.as_ref())?;

    let init_path = common.init.clone().or(file.paths.init.clone());
    let init = match &init_path {
        Some(p) => {
            let (params, _) = load_checkpoint(p)
                .with_context(|| format!("loading initial checkpoint {}", p.display()))?;
            Some(params)
        }
        None => None,
    };

    let resolved = ExperimentConfig {
        dataset: DatasetSection {
            dir: Some(data_dir),
            val_items: Some(train_cfg.val_items),
            patch_size: Some(train_cfg.patch_size),
        },
        model: ModelSection {
            scale: Some(model_cfg.scale),
            channels: Some(model_cfg.channels),
            n_blocks: Some(model_cfg.n_blocks),
            residual_scaling: Some(model_cfg.residual_scaling),
        },
        train: TrainSection {
            total_steps: Some(train_cfg.total_steps),
            batch_size: Some(train_cfg.batch_size),
            lr0: Some(train_cfg.lr0),
            loss: Some(train_cfg.loss),
            eval_every: Some(train_cfg.eval_every),
            probe_every: Some(train_cfg.probe_every),
            halt_step: train_cfg.halt_step,
        },
        objective: Some(objective),
        alpha_schedule: Some(train_cfg.alpha),
        probe: ProbeSection { etas: None },
        paths: PathsSection {
            centroids: centroids_dir,
            out: Some(out.clone()),
            init: init_path,
        },
        seed: Some(train_cfg.seed),
    };

    Ok(ResolvedRun {
        dataset,
        model_cfg,
        train_cfg,
        out,
        init,
        resolved,
        force: common.force,
    })
}

fn alpha_from(args: &TrainArgs, file: &ExperimentConfig) -> AlphaSchedule {
    let base = file.alpha_schedule.unwrap_or_default();
    AlphaSchedule {
        kind: args.alpha_kind.unwrap_or(base.kind),
        ramp_end_fraction: args.ramp_end_fraction.unwrap_or(base.ramp_end_fraction),
        alpha_start: args.alpha_start.unwrap_or(base.alpha_start),
        alpha_end: args.alpha_end.unwrap_or(base.alpha_end),
    }
}

fn write_run_outputs(
    staged: &StagedDir,
    report: &TrainReport,
    resolved: &ExperimentConfig,
) -> Result<()> {
    save_checkpoint(
        staged.path().join("checkpoint.ecot"),
        &report.params,
        report.completed_steps,
    )?;
    report.log.write_csv(&staged.path().join("runlog.csv"))?;
    std::fs::write(
        staged.path().join("config.json"),
        resolved.to_pretty_json()?,
    )
    .context("writing resolved config")?;
    Ok(())
}

fn summarize(report: &TrainReport, objective: ObjectiveMode, out: &Path) {
    let val = report
        .log
        .rows
        .iter()
        .rev()
        .find_map(|r| r.val_psnr.map(|p| (p, r.val_ssim.unwrap_or(f64::NAN))));
    match val {
        Some((p, s)) => println!(
            "{objective:?}: {} steps, val PSNR {:.2} dB, SSIM {:.4} -> {}",
            report.completed_steps,
            p.min(99.0),
            s,
            out.display()
        ),
        None => println!(
            "{objective:?}: {} steps -> {}",
            report.completed_steps,
            out.display()
        ),
    }
}

fn run_one(run: ResolvedRun, objective: ObjectiveMode) -> Result<()> {
    let staged = StagedDir::new(&run.out, run.force)?;
    let report = train(&run.train_cfg, &run.model_cfg, &run.dataset, run.init)?;
    write_run_outputs(&staged, &report, &run.resolved)?;
    let out = staged.commit()?;
    if let Some(abort) = &report.aborted {
        bail!(
            "training aborted at step {}: {}; last-good checkpoint kept in {}",
            abort.step,
            abort.reason,
            out.display()
        );
    }
    summarize(&report, objective, &out);
    Ok(())
}

/// Train the teacher: always the vanilla objective, no centroids.
pub fn pretrain(args: &PretrainArgs) -> Result<()> {
    let run = resolve_run(
        &args.common,
        ObjectiveMode::Vanilla,
        None,
        AlphaSchedule::constant(1.0),
    )?;
    run_one(run, ObjectiveMode::Vanilla)
}

pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let file = ExperimentConfig::load_opt(args.common.config.as_ref())?;
    let objective = args
        .objective
        .or(file.objective)
        .ok_or_else(|| anyhow::anyhow!("--objective must be set via flag or config file"))?;
    let alpha = alpha_from(args, &file);
    let run = resolve_run(&args.common, objective, args.centroids.as_ref(), alpha)?;
    run_one(run, objective)
}

pub fn gen_centroids(args: &GenCentroidsArgs) -> Result<()> {
    let manifest = load_manifest(&args.data)?;
    let (teacher, _) = load_checkpoint(&args.teacher)
        .with_context(|| format!("loading teacher checkpoint {}", args.teacher.display()))?;
    let hash = checkpoint_hash(&args.teacher)?;
    let staged = StagedDir::new(&args.out, args.force)?;
    let cache = generate_centroids(&manifest, &teacher, &hash, staged.path(), true)?;
    let n = cache.ids().count();
    let out = staged.commit()?;
    println!(
        "cached {n} centroids from teacher {} -> {}",
        &hash[..12],
        out.display()
    );
    Ok(())
}

pub fn sweep_batch(args: &SweepBatchArgs) -> Result<()> {
    if args.sizes.is_empty() || args.seeds.is_empty() {
        bail!("--sizes and --seeds must be non-empty");
    }
    let file = ExperimentConfig::load_opt(args.train.common.config.as_ref())?;
    let objective = args
        .train
        .objective
        .or(file.objective)
        .ok_or_else(|| anyhow::anyhow!("--objective must be set via flag or config file"))?;
    let alpha = alpha_from(&args.train, &file);
    let base = resolve_run(
        &args.train.common,
        objective,
        args.train.centroids.as_ref(),
        alpha,
    )?;

    let staged = StagedDir::new(&base.out, base.force)?;
    let mut summary = String::from("batch,seed,steps,val_psnr,val_ssim\n");
    for &size in &args.sizes {
        for &seed in &args.seeds {
            let mut cfg = base.train_cfg.clone();
            cfg.batch_size = size;
            cfg.seed = seed;
            let report = train(&cfg, &base.model_cfg, &base.dataset, base.init.clone())?;
            if let Some(abort) = &report.aborted {
                bail!(
                    "sweep run batch={size} seed={seed} aborted at step {}: {}",
                    abort.step,
                    abort.reason
                );
            }
            let log_name = format!("batch{size}_seed{seed}.csv");
            report.log.write_csv(&staged.path().join(&log_name))?;
            let last_eval = report
                .log
                .rows
                .iter()
                .rev()
                .find_map(|r| r.val_psnr.map(|p| (p, r.val_ssim.unwrap_or(f64::NAN))));
            let (p, s) = last_eval.unwrap_or((f64::NAN, f64::NAN));
            summary.push_str(&format!(
                "{size},{seed},{},{},{}\n",
                report.completed_steps,
                p.min(99.0),
                s
            ));
            println!(
                "batch {size} seed {seed}: {} steps, val PSNR {:.2}",
                report.completed_steps,
                p.min(99.0)
            );
        }
    }
    std::fs::write(staged.path().join("summary.csv"), summary).context("writing summary")?;
    std::fs::write(
        staged.path().join("config.json"),
        base.resolved.to_pretty_json()?,
    )
    .context("writing resolved config")?;
    let out = staged.commit()?;
    println!("sweep outputs -> {}", out.display());
    Ok(())
}
