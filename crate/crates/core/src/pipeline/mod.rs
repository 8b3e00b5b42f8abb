//! Dataset management: manifest and pair storage, centroid-cache
//! generation, patch extraction, augmentation, and α scheduling.

mod container;
pub mod synth;

pub use container::{
    checkpoint_hash, load_checkpoint, read_image as read_ecot, save_checkpoint,
    write_image as write_ecot, CheckpointMeta,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{read_png, write_png, Image};
use crate::model::{predict, ModelParams};
use crate::resample::{resize, ResizeSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
}

/// Index of a prepared dataset. Item paths are stored relative to the
/// manifest file and resolved on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scale: usize,
    pub resize: ResizeSpec,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetManifest> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&json)?;
        let root = path.parent().unwrap_or_else(|| Path::new("."));
        for item in &mut manifest.items {
            item.hr_path = root.join(&item.hr_path);
            item.lr_path = root.join(&item.lr_path);
        }
        Ok(manifest)
    }
}

/// Crop every HR image in `hr_dir` modulo `scale`, generate LR counterparts
/// with `spec`, and write hr/, lr/, and manifest.json under `out_dir`.
pub fn prepare_dataset(
    hr_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    scale: usize,
    spec: &ResizeSpec,
) -> Result<DatasetManifest> {
    let hr_dir = hr_dir.as_ref();
    let out_dir = out_dir.as_ref();
    if scale < 1 {
        return Err(Error::InvalidArgument("scale must be >= 1".into()));
    }
    let expected = 1.0 / scale as f64;
    if (spec.scale - expected).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "resize spec scale {} does not match 1/{scale}",
            spec.scale
        )));
    }

    let mut sources: Vec<PathBuf> = std::fs::read_dir(hr_dir)
        .map_err(|e| Error::io(hr_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    sources.sort();
    if sources.is_empty() {
        return Err(Error::Dataset(format!(
            "no PNG images found in {}",
            hr_dir.display()
        )));
    }

    let hr_out = out_dir.join("hr");
    let lr_out = out_dir.join("lr");
    std::fs::create_dir_all(&hr_out).map_err(|e| Error::io(&hr_out, e))?;
    std::fs::create_dir_all(&lr_out).map_err(|e| Error::io(&lr_out, e))?;

    let mut items = Vec::with_capacity(sources.len());
    for src in &sources {
        let id = src
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("unusable file name {}", src.display())))?
            .to_string();
        let img = read_png(src)?;
        let (ch, cw) = (
            img.height - img.height % scale,
            img.width - img.width % scale,
        );
        if ch == 0 || cw == 0 {
            return Err(Error::Dataset(format!(
                "{id}: {}x{} too small for scale {scale}",
                img.height, img.width
            )));
        }
        let hr = img.crop(0, 0, ch, cw)?;
        let lr = resize(&hr, spec)?;
        let hr_rel = Path::new("hr").join(format!("{id}.png"));
        let lr_rel = Path::new("lr").join(format!("{id}.png"));
        write_png(out_dir.join(&hr_rel), &hr)?;
        write_png(out_dir.join(&lr_rel), &lr)?;
        items.push(ManifestItem {
            id,
            hr_path: hr_rel,
            lr_path: lr_rel,
        });
    }

    let manifest = DatasetManifest {
        scale,
        resize: *spec,
        items,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheIndexEntry {
    id: String,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheIndex {
    teacher_hash: String,
    scale: usize,
    items: Vec<CacheIndexEntry>,
}

/// Directory of per-item unclamped teacher outputs plus an index binding
/// them to the teacher checkpoint hash.
#[derive(Debug, Clone)]
pub struct CentroidCache {
    root: PathBuf,
    pub teacher_hash: String,
    pub scale: usize,
    files: BTreeMap<String, String>,
}

impl CentroidCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<CentroidCache> {
        let root = dir.as_ref().to_path_buf();
        let index_path = root.join("index.json");
        let json = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let index: CacheIndex = serde_json::from_str(&json)?;
        Ok(CentroidCache {
            root,
            teacher_hash: index.teacher_hash,
            scale: index.scale,
            files: index.items.into_iter().map(|e| (e.id, e.file)).collect(),
        })
    }

    pub fn get(&self, id: &str) -> Result<Image> {
        let file = self.files.get(id).ok_or_else(|| {
            Error::CentroidCache(format!(
                "no centroid for item '{id}' in {}",
                self.root.display()
            ))
        })?;
        read_ecot(self.root.join(file))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(|s| s.as_str())
    }
}

/// Run the pretrained model over every full LR image and store the raw
/// float outputs under `out_dir`. Refuses to overwrite an existing cache
/// unless `force`.
pub fn generate_centroids(
    manifest: &DatasetManifest,
    pretrained: &ModelParams,
    teacher_hash: &str,
    out_dir: impl AsRef<Path>,
    force: bool,
) -> Result<CentroidCache> {
    let out_dir = out_dir.as_ref();
    if pretrained.config.scale != manifest.scale {
        return Err(Error::CentroidCache(format!(
            "teacher scale {} does not match dataset scale {}",
            pretrained.config.scale, manifest.scale
        )));
    }
    let index_path = out_dir.join("index.json");
    if index_path.exists() && !force {
        return Err(Error::CentroidCache(format!(
            "{} already exists; pass force to regenerate",
            index_path.display()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut entries = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let lr = read_png(&item.lr_path)?;
        let mu = predict(pretrained, &lr)?;
        let file = format!("{}.ecot", item.id);
        write_ecot(out_dir.join(&file), &mu)?;
        entries.push(CacheIndexEntry {
            id: item.id.clone(),
            file,
        });
    }
    let index = CacheIndex {
        teacher_hash: teacher_hash.to_string(),
        scale: manifest.scale,
        items: entries,
    };
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(&index_path, json).map_err(|e| Error::io(&index_path, e))?;
    CentroidCache::open(out_dir)
}

/// One dataset item held in memory at full float precision.
#[derive(Debug, Clone)]
pub struct LoadedItem {
    pub id: String,
    pub hr: Image,
    pub lr: Image,
    pub centroid: Option<Image>,
}

/// Everything the trainer needs, loaded up front.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub scale: usize,
    pub resize: ResizeSpec,
    pub items: Vec<LoadedItem>,
}

impl LoadedDataset {
    pub fn load(
        manifest: &DatasetManifest,
        cache: Option<&CentroidCache>,
    ) -> Result<LoadedDataset> {
        let mut items = Vec::with_capacity(manifest.items.len());
        for m in &manifest.items {
            let hr = read_png(&m.hr_path)?;
            let lr = read_png(&m.lr_path)?;
            let centroid = cache.map(|c| c.get(&m.id)).transpose()?;
            items.push(LoadedItem {
                id: m.id.clone(),
                hr,
                lr,
                centroid,
            });
        }
        let ds = LoadedDataset {
            scale: manifest.scale,
            resize: manifest.resize,
            items,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Assemble a dataset without touching disk (float-exact fixtures).
    pub fn from_memory(
        scale: usize,
        resize: ResizeSpec,
        items: Vec<LoadedItem>,
    ) -> Result<LoadedDataset> {
        let ds = LoadedDataset {
            scale,
            resize,
            items,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Dataset("dataset has no items".into()));
        }
        for item in &self.items {
            let (hh, hw) = (item.hr.height, item.hr.width);
            let (lh, lw) = (item.lr.height, item.lr.width);
            if hh != lh * self.scale || hw != lw * self.scale {
                return Err(Error::Dataset(format!(
                    "{}: HR {}x{} is not {}x LR {}x{}",
                    item.id, hh, hw, self.scale, lh, lw
                )));
            }
            if let Some(c) = &item.centroid {
                if (c.height, c.width) != (hh, hw) {
                    return Err(Error::Dataset(format!(
                        "{}: centroid {}x{} does not match HR {}x{}",
                        item.id, c.height, c.width, hh, hw
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn has_centroids(&self) -> bool {
        self.items.iter().all(|i| i.centroid.is_some())
    }
}

/// Aligned crops of one item: LR patch plus the s× HR/centroid patches.
#[derive(Debug, Clone)]
pub struct PatchTuple {
    pub hr: Image,
    pub lr: Image,
    pub centroid: Option<Image>,
}

/// Crop an aligned (HR, LR, centroid) tuple at a uniformly random valid LR
/// offset. Draw order: row offset, then column offset.
pub fn sample_patch(
    item: &LoadedItem,
    scale: usize,
    lr_patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PatchTuple> {
    if item.lr.height < lr_patch || item.lr.width < lr_patch {
        return Err(Error::Dataset(format!(
            "{}: LR {}x{} smaller than patch {lr_patch}",
            item.id, item.lr.height, item.lr.width
        )));
    }
    let oy = rng.gen_range(0..=item.lr.height - lr_patch);
    let ox = rng.gen_range(0..=item.lr.width - lr_patch);
    patch_at(item, scale, lr_patch, oy, ox)
}

/// Deterministic variant of [`sample_patch`] with an explicit LR offset.
pub fn patch_at(
    item: &LoadedItem,
    scale: usize,
    lr_patch: usize,
    oy: usize,
    ox: usize,
) -> Result<PatchTuple> {
    let lr = item.lr.crop(oy, ox, lr_patch, lr_patch)?;
    let hr = item
        .hr
        .crop(scale * oy, scale * ox, scale * lr_patch, scale * lr_patch)?;
    let centroid = item
        .centroid
        .as_ref()
        .map(|c| c.crop(scale * oy, scale * ox, scale * lr_patch, scale * lr_patch))
        .transpose()?;
    Ok(PatchTuple { hr, lr, centroid })
}

/// One of the 8 dihedral transforms: k in 0..4 rotates by k·90°
/// counterclockwise; k in 4..8 mirrors horizontally first.
pub fn dihedral(img: &Image, k: usize) -> Image {
    assert!(k < 8, "dihedral index must be in 0..8");
    let flipped;
    let src = if k >= 4 {
        let mut f = Image::new(img.height, img.width, img.channels);
        for y in 0..img.height {
            for x in 0..img.width {
                for c in 0..img.channels {
                    *f.at_mut(y, x, c) = img.at(y, img.width - 1 - x, c);
                }
            }
        }
        flipped = f;
        &flipped
    } else {
        img
    };
    let rot = k % 4;
    let (h, w) = (src.height, src.width);
    let (oh, ow) = if rot.is_multiple_of(2) {
        (h, w)
    } else {
        (w, h)
    };
    let mut out = Image::new(oh, ow, src.channels);
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = match rot {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            for c in 0..src.channels {
                *out.at_mut(y, x, c) = src.at(sy, sx, c);
            }
        }
    }
    out
}

/// Apply one random dihedral transform identically to all patch members.
pub fn augment(tuple: &PatchTuple, rng: &mut ChaCha8Rng) -> PatchTuple {
    let k = rng.gen_range(0..8usize);
    augment_with(tuple, k)
}

pub fn augment_with(tuple: &PatchTuple, k: usize) -> PatchTuple {
    PatchTuple {
        hr: dihedral(&tuple.hr, k),
        lr: dihedral(&tuple.lr, k),
        centroid: tuple.centroid.as_ref().map(|c| dihedral(c, k)),
    }
}

fn default_ramp_end_fraction() -> f64 {
    0.5
}
fn default_alpha_end() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    LinearRamp,
    Step,
    CosineRamp,
}

/// How α moves from synthetic targets (α=0) toward ground truth (α=1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    pub kind: ScheduleKind,
    /// Fraction of the run after which the ramp has finished.
    #[serde(default = "default_ramp_end_fraction")]
    pub ramp_end_fraction: f64,
    #[serde(default)]
    pub alpha_start: f64,
    #[serde(default = "default_alpha_end")]
    pub alpha_end: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            kind: ScheduleKind::LinearRamp,
            ramp_end_fraction: default_ramp_end_fraction(),
            alpha_start: 0.0,
            alpha_end: default_alpha_end(),
        }
    }
}

impl AlphaSchedule {
    /// Hold one α for the whole run.
    pub fn constant(alpha: f64) -> Self {
        AlphaSchedule {
            kind: ScheduleKind::Constant,
            ramp_end_fraction: default_ramp_end_fraction(),
            alpha_start: alpha,
            alpha_end: alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.ramp_end_fraction > 0.0 && self.ramp_end_fraction <= 1.0) {
            return Err(Error::InvalidArgument(
                "ramp_end_fraction must be in (0, 1]".into(),
            ));
        }
        if !ok_range(self.alpha_start) || !ok_range(self.alpha_end) {
            return Err(Error::InvalidArgument(
                "alpha bounds must be in [0,1]".into(),
            ));
        }
        if self.alpha_end < self.alpha_start {
            return Err(Error::InvalidArgument(
                "alpha_end < alpha_start would make the schedule decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// α at `step` of `total_steps` under `schedule`.
pub fn alpha_at(schedule: &AlphaSchedule, step: u64, total_steps: u64) -> f64 {
    let span = schedule.alpha_end - schedule.alpha_start;
    let progress = if total_steps == 0 {
        1.0
    } else {
        (step as f64 / (schedule.ramp_end_fraction * total_steps as f64)).clamp(0.0, 1.0)
    };
    match schedule.kind {
        ScheduleKind::Constant => schedule.alpha_end,
        ScheduleKind::LinearRamp => schedule.alpha_start + span * progress,
        ScheduleKind::Step => {
            if progress >= 1.0 {
                schedule.alpha_end
            } else {
                schedule.alpha_start
            }
        }
        ScheduleKind::CosineRamp => {
            schedule.alpha_start + span * 0.5 * (1.0 - (std::f64::consts::PI * progress).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::resample::rgb_to_y;
    use rand::SeedableRng;

    fn toy_hr_dir(dir: &Path, count: usize, h: usize, w: usize) -> PathBuf {
        let hr = dir.join("raw");
        std::fs::create_dir_all(&hr).unwrap();
        for i in 0..count {
            let img = synth::toy_image(100 + i as u64, h, w);
            write_png(hr.join(format!("img_{i:03}.png")), &img).unwrap();
        }
        hr
    }

    #[test]
    fn prepare_crops_modulo_scale_and_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let hr = toy_hr_dir(tmp.path(), 2, 49, 51);
        let spec = ResizeSpec::antialiased(0.5);

        let out_a = tmp.path().join("a");
        let m = prepare_dataset(&hr, &out_a, 2, &spec).unwrap();
        assert_eq!(m.items.len(), 2);
        let hr0 = read_png(out_a.join("hr/img_000.png")).unwrap();
        let lr0 = read_png(out_a.join("lr/img_000.png")).unwrap();
        assert_eq!((hr0.height, hr0.width), (48, 50));
        assert_eq!((lr0.height, lr0.width), (24, 25));

        let out_b = tmp.path().join("b");
        prepare_dataset(&hr, &out_b, 2, &spec).unwrap();
        let bytes_a = std::fs::read(out_a.join("lr/img_001.png")).unwrap();
        let bytes_b = std::fs::read(out_b.join("lr/img_001.png")).unwrap();
        assert_eq!(bytes_a, bytes_b, "regeneration must be byte-identical");

        let loaded = DatasetManifest::load(out_a.join("manifest.json")).unwrap();
        assert!(loaded.items[0].hr_path.is_absolute() || loaded.items[0].hr_path.exists());
        assert_eq!(loaded.scale, 2);
    }

    #[test]
    fn prepare_rejects_empty_dir() {
        let tmp = tempfile::tempdir().unwrap();
        let empty = tmp.path().join("none");
        std::fs::create_dir_all(&empty).unwrap();
        assert!(prepare_dataset(
            &empty,
            tmp.path().join("out"),
            2,
            &ResizeSpec::antialiased(0.5)
        )
        .is_err());
    }

    #[test]
    fn constant_hr_yields_constant_lr() {
        let tmp = tempfile::tempdir().unwrap();
        let hr = tmp.path().join("raw");
        std::fs::create_dir_all(&hr).unwrap();
        write_png(hr.join("c.png"), &Image::constant(16, 16, 3, 94.0 / 255.0)).unwrap();
        let out = tmp.path().join("out");
        prepare_dataset(&hr, &out, 2, &ResizeSpec::antialiased(0.5)).unwrap();
        let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();
        let lr = read_png(&manifest.items[0].lr_path).unwrap();
        for &v in &lr.data {
            assert!((v - 94.0 / 255.0).abs() < 1e-6);
        }
    }

    #[test]
    fn centroid_cache_round_trips_and_binds_teacher_hash() {
        let tmp = tempfile::tempdir().unwrap();
        let hr = toy_hr_dir(tmp.path(), 2, 24, 24);
        let out = tmp.path().join("data");
        prepare_dataset(&hr, &out, 2, &ResizeSpec::antialiased(0.5)).unwrap();
        let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();
        let cfg = ModelConfig {
            scale: 2,
            channels: 4,
            n_blocks: 1,
            residual_scaling: 1.0,
        };
        let teacher = ModelParams::init(&cfg, 5).unwrap();
        let cache_dir = tmp.path().join("cache");
        let cache = generate_centroids(&manifest, &teacher, "hash-a", &cache_dir, false).unwrap();
        assert_eq!(cache.teacher_hash, "hash-a");

        // Bitwise round trip of the unclamped outputs.
        let lr = read_png(&manifest.items[0].lr_path).unwrap();
        let mu = predict(&teacher, &lr).unwrap();
        let stored = cache.get(&manifest.items[0].id).unwrap();
        assert_eq!(stored, mu);

        // Overwrite refused unless forced.
        assert!(generate_centroids(&manifest, &teacher, "hash-b", &cache_dir, false).is_err());
        let cache2 = generate_centroids(&manifest, &teacher, "hash-b", &cache_dir, true).unwrap();
        assert_eq!(cache2.teacher_hash, "hash-b");

        assert!(cache.get("missing").is_err());
    }

    #[test]
    fn identity_teacher_at_scale_one_reproduces_lr() {
        let tmp = tempfile::tempdir().unwrap();
        let hr = toy_hr_dir(tmp.path(), 1, 16, 16);
        let out = tmp.path().join("data");
        prepare_dataset(&hr, &out, 1, &ResizeSpec::antialiased(1.0)).unwrap();
        let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();

        let cfg = ModelConfig {
            scale: 1,
            channels: 3,
            n_blocks: 0,
            residual_scaling: 1.0,
        };
        let mut teacher = ModelParams::init(&cfg, 0).unwrap();
        let ident = |ch: usize| {
            let mut t = crate::tensor::Tensor::zeros(&[ch, ch, 3, 3]);
            for o in 0..ch {
                t.data_mut()[o * ch * 9 + o * 9 + 4] = 1.0;
            }
            t
        };
        *teacher.get_mut("head.weight").unwrap() = ident(3);
        teacher
            .get_mut("body_end.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        *teacher.get_mut("tail.weight").unwrap() = ident(3);
        *teacher.get_mut("final.weight").unwrap() = ident(3);

        let cache =
            generate_centroids(&manifest, &teacher, "h", tmp.path().join("cache"), false).unwrap();
        let lr = read_png(&manifest.items[0].lr_path).unwrap();
        let mu = cache.get(&manifest.items[0].id).unwrap();
        assert_eq!(mu, lr);
    }

    #[test]
    fn patch_sampling_is_aligned_and_seeded() {
        let tmp = tempfile::tempdir().unwrap();
        let hr = toy_hr_dir(tmp.path(), 1, 40, 40);
        let out = tmp.path().join("data");
        prepare_dataset(&hr, &out, 2, &ResizeSpec::antialiased(0.5)).unwrap();
        let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();
        let ds = LoadedDataset::load(&manifest, None).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let t = sample_patch(&ds.items[0], 2, 8, &mut rng).unwrap();
        assert_eq!((t.lr.height, t.lr.width), (8, 8));
        assert_eq!((t.hr.height, t.hr.width), (16, 16));

        let mut rng2 = ChaCha8Rng::seed_from_u64(77);
        let t2 = sample_patch(&ds.items[0], 2, 8, &mut rng2).unwrap();
        assert_eq!(t.lr.data, t2.lr.data, "same seed must give same offsets");

        // Offset (0,0) is the top-left crop.
        let t0 = patch_at(&ds.items[0], 2, 8, 0, 0).unwrap();
        assert_eq!(t0.hr.data, ds.items[0].hr.crop(0, 0, 16, 16).unwrap().data);

        assert!(sample_patch(&ds.items[0], 2, 64, &mut rng).is_err());
    }

    #[test]
    fn interior_hr_crop_redownsamples_to_lr_crop() {
        // Away from borders the separable resampler is local, so the crop
        // of the LR image matches a fresh downsample of the HR crop. The
        // stretched kernel reaches 2 LR pixels, hence the interior margin;
        // built in memory at float precision (PNG quantization would mask
        // the effect being measured).
        let hr = synth::toy_image(11, 48, 48);
        let spec = ResizeSpec::antialiased(0.5);
        let lr = resize(&hr, &spec).unwrap();
        let item = LoadedItem {
            id: "m".into(),
            hr,
            lr,
            centroid: None,
        };
        let (oy, ox, p) = (4, 6, 8);
        let t = patch_at(&item, 2, p, oy, ox).unwrap();
        let again = resize(&t.hr, &spec).unwrap();
        let mut max = 0.0f32;
        for y in 2..p - 2 {
            for x in 2..p - 2 {
                for c in 0..3 {
                    max = max.max((again.at(y, x, c) - t.lr.at(y, x, c)).abs());
                }
            }
        }
        assert!(max < 1e-4, "interior consistency broke: {max}");
    }

    #[test]
    fn dihedral_group_properties() {
        let img = synth::toy_image(9, 12, 12);
        assert_eq!(dihedral(&img, 0), img);
        let f = dihedral(&img, 4);
        assert_eq!(dihedral(&f, 4), img, "horizontal flip is an involution");
        let r = dihedral(&dihedral(&dihedral(&dihedral(&img, 1), 1), 1), 1);
        assert_eq!(r, img, "four quarter turns are the identity");

        // All 8 transforms are distinct on a generic image.
        let all: Vec<Image> = (0..8).map(|k| dihedral(&img, k)).collect();
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_ne!(all[i].data, all[j].data, "transforms {i} and {j} collide");
            }
        }
    }

    #[test]
    fn downsample_commutes_with_dihedral() {
        let img = synth::toy_image(10, 24, 24);
        let spec = ResizeSpec::antialiased(0.5);
        for k in 0..8 {
            let a = resize(&dihedral(&img, k), &spec).unwrap();
            let b = dihedral(&resize(&img, &spec).unwrap(), k);
            let diff = a.max_abs_diff(&b);
            assert!(diff < 1e-5, "transform {k}: max diff {diff}");
        }
    }

    #[test]
    fn augmentation_applies_one_transform_to_all_members() {
        let tmp = tempfile::tempdir().unwrap();
        let hr = toy_hr_dir(tmp.path(), 1, 32, 32);
        let out = tmp.path().join("data");
        prepare_dataset(&hr, &out, 2, &ResizeSpec::antialiased(0.5)).unwrap();
        let manifest = DatasetManifest::load(out.join("manifest.json")).unwrap();
        let ds = LoadedDataset::load(&manifest, None).unwrap();
        let t = patch_at(&ds.items[0], 2, 8, 2, 3).unwrap();
        for k in 0..8 {
            let a = augment_with(&t, k);
            assert_eq!(a.hr.data, dihedral(&t.hr, k).data);
            assert_eq!(a.lr.data, dihedral(&t.lr, k).data);
            // Luminance is pointwise, so it commutes with any permutation
            // of pixel positions; use it to cross-check alignment.
            let ya = rgb_to_y(&a.hr).unwrap();
            let yb = dihedral(&rgb_to_y(&t.hr).unwrap(), k);
            assert_eq!(ya.data, yb.data);
        }
    }

    #[test]
    fn alpha_schedule_reference_points() {
        let lin = AlphaSchedule::default();
        assert_eq!(alpha_at(&lin, 0, 1000), 0.0);
        assert_eq!(alpha_at(&lin, 1000, 1000), 1.0);
        // ramp_end_fraction 0.5: quarter of the run is halfway up the ramp
        assert!((alpha_at(&lin, 250, 1000) - 0.5).abs() < 1e-12);
        assert_eq!(alpha_at(&lin, 500, 1000), 1.0);

        let c = AlphaSchedule::constant(0.0);
        assert_eq!(alpha_at(&c, 0, 100), 0.0);
        assert_eq!(alpha_at(&c, 100, 100), 0.0);

        for kind in [
            ScheduleKind::LinearRamp,
            ScheduleKind::Step,
            ScheduleKind::CosineRamp,
        ] {
            let s = AlphaSchedule {
                kind,
                ..AlphaSchedule::default()
            };
            assert_eq!(alpha_at(&s, 1000, 1000), 1.0, "{kind:?} must end at 1");
        }

        let step = AlphaSchedule {
            kind: ScheduleKind::Step,
            ..AlphaSchedule::default()
        };
        assert_eq!(alpha_at(&step, 499, 1000), 0.0);
        assert_eq!(alpha_at(&step, 500, 1000), 1.0);
    }

    #[test]
    fn alpha_schedules_are_monotone() {
        for kind in [
            ScheduleKind::Constant,
            ScheduleKind::LinearRamp,
            ScheduleKind::Step,
            ScheduleKind::CosineRamp,
        ] {
            for (start, end, frac) in [(0.0, 1.0, 0.5), (0.2, 0.9, 0.25), (0.0, 0.0, 1.0)] {
                let s = AlphaSchedule {
                    kind,
                    ramp_end_fraction: frac,
                    alpha_start: start,
                    alpha_end: end,
                };
                s.validate().unwrap();
                let mut prev = -1.0;
                for step in 0..=200 {
                    let a = alpha_at(&s, step, 200);
                    assert!(a >= prev - 1e-12, "{kind:?} decreased at {step}");
                    assert!((0.0..=1.0).contains(&a));
                    prev = a;
                }
            }
        }
        assert!(AlphaSchedule {
            kind: ScheduleKind::LinearRamp,
            ramp_end_fraction: 0.0,
            alpha_start: 0.0,
            alpha_end: 1.0,
        }
        .validate()
        .is_err());
    }
}
