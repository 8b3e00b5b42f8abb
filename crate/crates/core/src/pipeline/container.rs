//! Lossless raw-tensor container ("ECOT") and model checkpoints.
//!
//! An ECOT record is: magic bytes `ECOT`, three unsigned 32-bit
//! little-endian extents H, W, C, then H·W·C little-endian 32-bit floats,
//! row-major, channel-last. Centroid caches store one record per file; a
//! checkpoint is the concatenation of one flat record per parameter in plan
//! order, next to a JSON sidecar with the model config, training step, and
//! parameter names.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ECOT";

fn write_record(w: &mut impl Write, h: u32, wd: u32, c: u32, data: &[f32]) -> std::io::Result<()> {
    debug_assert_eq!(data.len(), h as usize * wd as usize * c as usize);
    w.write_all(MAGIC)?;
    w.write_all(&h.to_le_bytes())?;
    w.write_all(&wd.to_le_bytes())?;
    w.write_all(&c.to_le_bytes())?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_record(r: &mut impl Read, what: &str) -> Result<(u32, u32, u32, Vec<f32>)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|e| Error::Container(format!("{what}: truncated header: {e}")))?;
    if &head[0..4] != MAGIC {
        return Err(Error::Container(format!(
            "{what}: bad magic {:?}, expected ECOT",
            &head[0..4]
        )));
    }
    let h = u32::from_le_bytes(head[4..8].try_into().unwrap());
    let w = u32::from_le_bytes(head[8..12].try_into().unwrap());
    let c = u32::from_le_bytes(head[12..16].try_into().unwrap());
    let n = h as usize * w as usize * c as usize;
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Container(format!("{what}: truncated payload: {e}")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((h, w, c, data))
}

/// Write one image as a standalone ECOT file.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_record(
        &mut w,
        img.height as u32,
        img.width as u32,
        img.channels as u32,
        &img.data,
    )
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

/// Read a standalone ECOT image file.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let (h, w, c, data) = read_record(&mut r, &path.display().to_string())?;
    Image::from_vec(h as usize, w as usize, c as usize, data)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub step: u64,
    pub param_names: Vec<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `params` to `path` (binary records) and `path.json` (sidecar).
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, step: u64) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (_, t) in params.tensors() {
        write_record(&mut w, 1, 1, t.numel() as u32, t.data()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let meta = CheckpointMeta {
        config: params.config,
        step,
        param_names: params.tensors().iter().map(|(n, _)| n.clone()).collect(),
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, u64)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let json = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&json)?;

    let plan = meta.config.parameter_plan();
    let plan_names: Vec<&String> = plan.iter().map(|(n, _)| n).collect();
    if plan_names.len() != meta.param_names.len()
        || plan_names
            .iter()
            .zip(&meta.param_names)
            .any(|(a, b)| *a != b)
    {
        return Err(Error::Checkpoint(format!(
            "sidecar parameter names do not match the config topology in {}",
            side.display()
        )));
    }

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut tensors = Vec::with_capacity(plan.len());
    for (name, shape) in plan {
        let (h, w, c, data) = read_record(&mut r, &format!("{}:{name}", path.display()))?;
        if (h, w) != (1, 1) || c as usize != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "record {name}: expected flat record of {} values, got {h}x{w}x{c}",
                shape.iter().product::<usize>()
            )));
        }
        tensors.push((name, Tensor::from_vec(&shape, data)?));
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Checkpoint(format!(
            "trailing bytes after last parameter record in {}",
            path.display()
        )));
    }
    let params = ModelParams::from_tensors(&meta.config, tensors)?;
    Ok((params, meta.step))
}

/// SHA-256 of the checkpoint binary, hex-encoded. Binds centroid caches to
/// the exact teacher weights.
pub fn checkpoint_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn image_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..5 * 4 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let img = Image::from_vec(5, 4, 3, data).unwrap();
        let path = dir.path().join("x.ecot");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back, img, "unclamped values must round-trip exactly");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ecot");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(read_image(&path).is_err());

        let img = Image::constant(4, 4, 1, 0.5);
        write_image(&path, &img).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert!(read_image(&path).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            scale: 2,
            channels: 4,
            n_blocks: 1,
            residual_scaling: 0.5,
        };
        let params = ModelParams::init(&cfg, 33).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, 1234).unwrap();

        let (back, step) = load_checkpoint(&path).unwrap();
        assert_eq!(step, 1234);
        assert_eq!(back, params);

        let h1 = checkpoint_hash(&path).unwrap();
        assert_eq!(h1.len(), 64);
        let other = ModelParams::init(&cfg, 34).unwrap();
        save_checkpoint(&path, &other, 1234).unwrap();
        let h2 = checkpoint_hash(&path).unwrap();
        assert_ne!(h1, h2, "different weights must hash differently");
    }

    #[test]
    fn checkpoint_rejects_mismatched_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            scale: 2,
            channels: 4,
            n_blocks: 1,
            residual_scaling: 1.0,
        };
        let params = ModelParams::init(&cfg, 1).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, 0).unwrap();

        // Claim a different topology in the sidecar.
        let side = dir.path().join("model.ckpt.json");
        let mut meta: CheckpointMeta =
            serde_json::from_str(&std::fs::read_to_string(&side).unwrap()).unwrap();
        meta.config.n_blocks = 2;
        std::fs::write(&side, serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
