//! Staged output writing: artifacts are assembled in a temp location and
//! moved into place only when complete, so a failed run never leaves
//! partial outputs behind. Existing outputs are refused unless forced.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

/// A directory being assembled; commit moves it to its final location.
pub struct StagedDir {
    tmp: tempfile::TempDir,
    target: PathBuf,
    force: bool,
}

impl StagedDir {
    pub fn new(target: &Path, force: bool) -> Result<StagedDir> {
        if target.exists() && !force {
            bail!(
                "{} already exists; pass --force to overwrite",
                target.display()
            );
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        std::fs::create_dir_all(&parent)
            .with_context(|| format!("creating {}", parent.display()))?;
        let tmp = tempfile::TempDir::with_prefix_in(".staging-", &parent)
            .with_context(|| format!("creating staging dir in {}", parent.display()))?;
        Ok(StagedDir {
            tmp,
            target: target.to_path_buf(),
            force,
        })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            if !self.force {
                bail!(
                    "{} appeared during the run; pass --force to overwrite",
                    self.target.display()
                );
            }
            if self.target.is_dir() {
                std::fs::remove_dir_all(&self.target)
                    .with_context(|| format!("clearing {}", self.target.display()))?;
            } else {
                std::fs::remove_file(&self.target)
                    .with_context(|| format!("clearing {}", self.target.display()))?;
            }
        }
        std::fs::rename(self.tmp.path(), &self.target).with_context(|| {
            format!(
                "moving staged outputs {} -> {}",
                self.tmp.path().display(),
                self.target.display()
            )
        })?;
        // The TempDir destructor now points at a moved-away path; its
        // cleanup is a harmless no-op.
        Ok(self.target)
    }
}

/// Write one file atomically (staged in the same directory, then renamed).
pub fn write_file(target: &Path, bytes: &[u8], force: bool) -> Result<()> {
    if target.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            target.display()
        );
    }
    let parent = match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(&parent)
        .with_context(|| format!("staging file in {}", parent.display()))?;
    std::fs::write(tmp.path(), bytes)
        .with_context(|| format!("writing staged {}", tmp.path().display()))?;
    tmp.persist(target)
        .with_context(|| format!("moving staged file into {}", target.display()))?;
    Ok(())
}
