//! Experiment config file: optional JSON sections that mirror the CLI
//! flags. Flags win over file values; every run persists the fully
//! resolved config next to its outputs so the run is reconstructible.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use srlab_core::objectives::ObjectiveMode;
use srlab_core::pipeline::AlphaSchedule;
use srlab_core::trainer::LossKind;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub objective: Option<ObjectiveMode>,
    pub alpha_schedule: Option<AlphaSchedule>,
    pub probe: ProbeSection,
    pub paths: PathsSection,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub dir: Option<PathBuf>,
    pub val_items: Option<usize>,
    pub patch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub scale: Option<usize>,
    pub channels: Option<usize>,
    pub n_blocks: Option<usize>,
    pub residual_scaling: Option<f32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub total_steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr0: Option<f64>,
    pub loss: Option<LossKind>,
    pub eval_every: Option<u64>,
    pub probe_every: Option<u64>,
    pub halt_step: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub etas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub centroids: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub init: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_opt(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Flag value wins; config-file value is the fallback.
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] but the value is required from one of the two sources.
pub fn pick_required<T: Clone>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| anyhow::anyhow!("{what} must be set via flag or config file"))
}

pub fn parse_objective(s: &str) -> std::result::Result<ObjectiveMode, String> {
    match s {
        "vanilla" => Ok(ObjectiveMode::Vanilla),
        "kd" => Ok(ObjectiveMode::Kd),
        "eco" => Ok(ObjectiveMode::Eco),
        "residual" | "residual_regression" => Ok(ObjectiveMode::ResidualRegression),
        other => Err(format!(
            "unknown objective {other:?} (expected vanilla|kd|eco|residual)"
        )),
    }
}

pub fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    match s {
        "l1" => Ok(LossKind::L1),
        "l2" => Ok(LossKind::L2),
        other => Err(format!("unknown loss {other:?} (expected l1|l2)")),
    }
}

pub fn parse_schedule_kind(
    s: &str,
) -> std::result::Result<srlab_core::pipeline::ScheduleKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown schedule kind {s:?} (expected constant|linear_ramp|step|cosine_ramp)")
    })
}
