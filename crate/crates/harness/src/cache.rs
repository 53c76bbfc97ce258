//! Hash-keyed cache of dynamic-image sets and GAN checkpoints.

use anyhow::Context;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use dynaug_core::rankpool::DynamicImage;
use dynaug_core::videodata::{read_dataset, write_dataset, Dataset, Split};
use dynaug_core::wgan::{read_checkpoint, write_checkpoint, GanModel};

/// Hex SHA-256 over length-prefixed parts.
pub fn key(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Default)]
pub struct Cache {
    dir: Option<PathBuf>,
}

impl Cache {
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path(&self, name: &str, key: &str, ext: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{name}-{}.{ext}", &key[..32])))
    }

    /// Returns the images and whether they came from disk.
    pub fn images(
        &self,
        name: &str,
        key: &str,
        split: Split,
        num_classes: usize,
        build: impl FnOnce() -> anyhow::Result<Vec<DynamicImage>>,
    ) -> anyhow::Result<(Vec<DynamicImage>, bool)> {
        let Some(path) = self.path(name, key, "dyn1") else {
            return Ok((build()?, false));
        };
        if path.exists() {
            let ds = read_dataset(&path).with_context(|| format!("reading cached {}", path.display()))?;
            return Ok((ds.images().cloned().collect(), true));
        }
        let images = build()?;
        let ds = Dataset::from_images(split, num_classes, images)?;
        atomic_write(&path, |tmp| Ok(write_dataset(&ds, tmp)?))?;
        Ok((ds.images().cloned().collect(), false))
    }

    pub fn gan(&self, key: &str, build: impl FnOnce() -> anyhow::Result<GanModel>) -> anyhow::Result<(GanModel, bool)> {
        let Some(path) = self.path("gan", key, "wgn1") else {
            return Ok((build()?, false));
        };
        if path.exists() {
            let gan = read_checkpoint(&path).with_context(|| format!("reading cached {}", path.display()))?;
            return Ok((gan, true));
        }
        let gan = build()?;
        atomic_write(&path, |tmp| Ok(write_checkpoint(&gan, tmp)?))?;
        Ok((gan, false))
    }
}

fn atomic_write(path: &Path, write: impl FnOnce(&Path) -> anyhow::Result<()>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    write(&tmp)?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
