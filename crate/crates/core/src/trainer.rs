//! Optimization loop: Adam with cosine annealing, per-step pair construction
//! via the active objective, periodic evaluation and landscape probes, and
//! CSV run logging. Fully deterministic given (seed, config, dataset).

use serde::{Deserialize, Serialize};

use crate::analysis::{evaluate_pair, landscape_probe};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::{forward, images_to_batch, predict, ModelConfig, ModelParams};
use crate::objectives::{
    decode_residual, eco_pair, kd_pair, residual_pair, vanilla_pair, ObjectiveMode,
};
use crate::pipeline::{alpha_at, augment, sample_patch, AlphaSchedule, LoadedDataset, LoadedItem};
use crate::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Training loss. L1 is the usual choice for SR regression; L2 is kept as
/// a config option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

/// Full recipe for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default)]
    pub loss: LossKind,
    pub objective: ObjectiveMode,
    #[serde(default)]
    pub alpha: AlphaSchedule,
    pub seed: u64,
    /// Validation PSNR/SSIM cadence in steps; 0 disables periodic eval
    /// (a final eval still runs at the last step).
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Landscape-probe cadence in steps; 0 disables probing.
    #[serde(default)]
    pub probe_every: u64,
    /// LR patch edge; HR patches are scale× larger.
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// Items held out from the end of the (id-sorted) dataset for eval.
    #[serde(default = "default_val_items")]
    pub val_items: usize,
    /// Stop after this many steps while keeping the schedule pinned to
    /// `total_steps` — the truncated trajectory is bitwise identical to the
    /// prefix of the full run.
    #[serde(default)]
    pub halt_step: Option<u64>,
}

fn default_batch_size() -> usize {
    16
}
fn default_lr0() -> f64 {
    1e-4
}
fn default_eval_every() -> u64 {
    100
}
fn default_patch_size() -> usize {
    48
}
fn default_val_items() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidArgument(
                "total_steps must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::InvalidArgument(format!("bad lr0 {}", self.lr0)));
        }
        if self.patch_size < 4 {
            return Err(Error::InvalidArgument(format!(
                "patch_size {} is too small",
                self.patch_size
            )));
        }
        if self.val_items == 0 {
            return Err(Error::InvalidArgument(
                "val_items must be at least 1".into(),
            ));
        }
        if let Some(h) = self.halt_step {
            if h == 0 || h > self.total_steps {
                return Err(Error::InvalidArgument(format!(
                    "halt_step {h} outside 1..={}",
                    self.total_steps
                )));
            }
        }
        self.alpha.validate()
    }
}

/// Cosine annealing from lr0 at step 0 to 0 at step == total.
pub fn cosine_lr(step: u64, total: u64, lr0: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Eight log-spaced probe step sizes spanning [0.1·lr0, 10·lr0].
pub fn default_probe_etas(lr0: f64) -> Vec<f64> {
    (0..8)
        .map(|i| 0.1 * lr0 * 100f64.powf(i as f64 / 7.0))
        .collect()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates, in parameter-plan order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are validated before any
/// parameter is touched, so a rejected step leaves params intact.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.tensors().len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} grads for {} params",
            grads.len(),
            params.tensors().len()
        )));
    }
    for ((name, t), g) in params.tensors().iter().zip(grads) {
        if t.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "adam: shape mismatch for {name}"
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGrad {
                param: name.clone(),
            });
        }
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (i, (_, t)) in params.tensors_mut().iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, p) in t.data_mut().iter_mut().enumerate() {
            let g = grads[i].data()[j] as f64;
            let mn = ADAM_BETA1 * m[j] as f64 + (1.0 - ADAM_BETA1) * g;
            let vn = ADAM_BETA2 * v[j] as f64 + (1.0 - ADAM_BETA2) * g * g;
            m[j] = mn as f32;
            v[j] = vn as f32;
            let update = lr * (mn / bc1) / ((vn / bc2).sqrt() + ADAM_EPS);
            *p = (*p as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Forward + loss + backward for one batch; returns (loss, gradients in
/// parameter-plan order). Shared by the trainer and the landscape probe.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    input: &Tensor,
    target: &Tensor,
    kind: LossKind,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let input_id = g.leaf(input.clone());
    let bound = forward(&mut g, params, input_id, true)?;
    let loss_id = match kind {
        LossKind::L1 => g.l1_loss(bound.output, target.clone())?,
        LossKind::L2 => g.l2_loss(bound.output, target.clone())?,
    };
    g.backward(loss_id)?;
    let loss = g.value(loss_id).item() as f64;
    let grads = bound
        .param_ids
        .iter()
        .map(|&id| {
            g.grad(id)
                .cloned()
                .ok_or_else(|| Error::Graph("parameter missing its gradient".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// Items after the split point are validation-only.
pub fn train_val_split(
    data: &LoadedDataset,
    val_items: usize,
) -> Result<(&[LoadedItem], &[LoadedItem])> {
    let n = data.items.len();
    if val_items == 0 || val_items >= n {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {val_items} of {n} items for validation"
        )));
    }
    Ok(data.items.split_at(n - val_items))
}

fn require_centroid<'a>(item_id: &str, centroid: &'a Option<Image>) -> Result<&'a Image> {
    centroid.as_ref().ok_or_else(|| {
        Error::CentroidCache(format!(
            "item {item_id} has no centroid; run gen-centroids first"
        ))
    })
}

/// Draw one batch for `step` (0-based). The random draws — item index,
/// patch offset, dihedral transform — are identical for every objective
/// mode; only the pair construction differs. Returns (input, target, alpha
/// tag for the log).
pub fn assemble_batch(
    data: &LoadedDataset,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(Tensor, Tensor, f64)> {
    let (train_items, _) = train_val_split(data, cfg.val_items)?;
    let alpha = match cfg.objective {
        ObjectiveMode::Vanilla => 1.0,
        ObjectiveMode::Kd | ObjectiveMode::ResidualRegression => 0.0,
        ObjectiveMode::Eco => alpha_at(&cfg.alpha, step, cfg.total_steps),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step + 1);

    let mut inputs = Vec::with_capacity(cfg.batch_size);
    let mut targets = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.batch_size {
        let item = &train_items[rng.gen_range(0..train_items.len())];
        let tuple = sample_patch(item, data.scale, cfg.patch_size, &mut rng)?;
        let tuple = augment(&tuple, &mut rng);
        let pair = match cfg.objective {
            ObjectiveMode::Vanilla => vanilla_pair(&tuple.lr, &tuple.hr, data.scale)?,
            ObjectiveMode::Kd => kd_pair(
                &tuple.lr,
                require_centroid(&item.id, &tuple.centroid)?,
                data.scale,
            )?,
            ObjectiveMode::Eco => eco_pair(
                &tuple.hr,
                require_centroid(&item.id, &tuple.centroid)?,
                alpha,
                &data.resize,
            )?,
            ObjectiveMode::ResidualRegression => residual_pair(
                &tuple.lr,
                &tuple.hr,
                require_centroid(&item.id, &tuple.centroid)?,
                data.scale,
            )?,
        };
        inputs.push(pair.input);
        targets.push(pair.target);
    }
    Ok((images_to_batch(&inputs)?, images_to_batch(&targets)?, alpha))
}

/// PSNR/SSIM on the luminance channel per item, border of `scale` pixels
/// ignored, plus means.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub per_item: Vec<ItemEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ItemEval {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Run the model over full LR images and score the (decoded, for
/// residual-regression) SR output against HR.
pub fn evaluate(
    params: &ModelParams,
    items: &[LoadedItem],
    mode: ObjectiveMode,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluate needs at least one item".into(),
        ));
    }
    let scale = params.config.scale;
    let mut per_item = Vec::with_capacity(items.len());
    let (mut psum, mut ssum) = (0.0f64, 0.0f64);
    for item in items {
        let raw = predict(params, &item.lr)?;
        let sr = match mode {
            ObjectiveMode::ResidualRegression => {
                decode_residual(require_centroid(&item.id, &item.centroid)?, &raw)?
            }
            _ => raw,
        };
        let (p, s) = evaluate_pair(&sr, &item.hr, scale)?;
        psum += p;
        ssum += s;
        per_item.push(ItemEval {
            id: item.id.clone(),
            psnr: p,
            ssim: s,
        });
    }
    Ok(EvalReport {
        mean_psnr: psum / items.len() as f64,
        mean_ssim: ssum / items.len() as f64,
        per_item,
    })
}

/// One CSV row; optional fields are blank when that diagnostic did not run
/// at this step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub alpha: f64,
    pub train_loss: f64,
    pub lr: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub probe_loss_min: Option<f64>,
    pub probe_loss_max: Option<f64>,
    pub probe_max_grad_diff: Option<f64>,
}

/// Diagnostics log; one row per eval/probe step, strictly increasing steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
}

pub const RUN_LOG_HEADER: &str =
    "step,alpha,train_loss,lr,val_psnr,val_ssim,probe_loss_min,probe_loss_max,probe_max_grad_diff";

/// Infinite PSNR (identical images) is capped at this value in the CSV.
pub const PSNR_CSV_CAP: f64 = 99.0;

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUN_LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.alpha,
                r.train_loss,
                r.lr,
                fmt_opt(r.val_psnr.map(|p| p.min(PSNR_CSV_CAP))),
                fmt_opt(r.val_ssim),
                fmt_opt(r.probe_loss_min),
                fmt_opt(r.probe_loss_max),
                fmt_opt(r.probe_max_grad_diff),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Why a run stopped before `total_steps`.
#[derive(Debug, Clone, Serialize)]
pub struct AbortInfo {
    pub step: u64,
    pub reason: String,
}

/// Outcome of [`train`]: final (or last-good, if aborted) parameters plus
/// the diagnostics log.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub log: RunLog,
    pub aborted: Option<AbortInfo>,
    pub completed_steps: u64,
}

/// Run the full optimization loop. On a non-finite loss or gradient the run
/// aborts and the report carries the last parameters known good.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    data: &LoadedDataset,
    init: Option<ModelParams>,
) -> Result<TrainReport> {
    cfg.validate()?;
    model_cfg.validate()?;
    if data.scale != model_cfg.scale {
        return Err(Error::ShapeMismatch(format!(
            "dataset scale {} vs model scale {}",
            data.scale, model_cfg.scale
        )));
    }
    if cfg.objective.needs_centroids() && !data.has_centroids() {
        return Err(Error::CentroidCache(format!(
            "objective {:?} needs centroids for every item; run gen-centroids first",
            cfg.objective
        )));
    }
    let (_, val_items) = train_val_split(data, cfg.val_items)?;

    let mut params = match init {
        Some(p) => {
            if p.config != *model_cfg {
                return Err(Error::Checkpoint(
                    "initial checkpoint does not match the model config".into(),
                ));
            }
            p
        }
        None => ModelParams::init(model_cfg, cfg.seed)?,
    };
    let mut state = AdamState::new(&params);
    let etas = default_probe_etas(cfg.lr0);
    let mut log = RunLog::default();
    let last = cfg.halt_step.unwrap_or(cfg.total_steps);

    for step in 0..last {
        let row_step = step + 1;
        let (input, target, alpha) = assemble_batch(data, cfg, step)?;
        let lr = cosine_lr(step, cfg.total_steps, cfg.lr0);

        let probe = if cfg.probe_every > 0 && row_step % cfg.probe_every == 0 {
            Some(landscape_probe(
                &params, &input, &target, &etas, cfg.loss, row_step,
            )?)
        } else {
            None
        };

        let (loss, grads) = batch_loss_and_grads(&params, &input, &target, cfg.loss)?;
        if !loss.is_finite() {
            return Ok(TrainReport {
                params,
                log,
                aborted: Some(AbortInfo {
                    step: row_step,
                    reason: format!("non-finite training loss at step {row_step}"),
                }),
                completed_steps: step,
            });
        }
        if let Err(e) = adam_step(&mut params, &grads, &mut state, lr) {
            return Ok(TrainReport {
                params,
                log,
                aborted: Some(AbortInfo {
                    step: row_step,
                    reason: e.to_string(),
                }),
                completed_steps: step,
            });
        }

        let do_eval = (cfg.eval_every > 0 && row_step % cfg.eval_every == 0) || row_step == last;
        if do_eval || probe.is_some() {
            let (val_psnr, val_ssim) = if do_eval {
                let r = evaluate(&params, val_items, cfg.objective)?;
                (Some(r.mean_psnr), Some(r.mean_ssim))
            } else {
                (None, None)
            };
            let (pmin, pmax, pdiff) = match &probe {
                Some(p) => {
                    let lo = p
                        .losses_along_ray
                        .iter()
                        .cloned()
                        .fold(f64::INFINITY, f64::min);
                    let hi = p
                        .losses_along_ray
                        .iter()
                        .cloned()
                        .fold(f64::NEG_INFINITY, f64::max);
                    (Some(lo), Some(hi), Some(p.max_grad_diff))
                }
                None => (None, None, None),
            };
            log.rows.push(LogRow {
                step: row_step,
                alpha,
                train_loss: loss,
                lr,
                val_psnr,
                val_ssim,
                probe_loss_min: pmin,
                probe_loss_max: pmax,
                probe_max_grad_diff: pdiff,
            });
        }
    }

    Ok(TrainReport {
        params,
        log,
        aborted: None,
        completed_steps: last,
    })
}
