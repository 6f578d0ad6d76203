//! On-disk image pools: BRAS files listed in a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bras;
use crate::error::{Error, Result};
use crate::raster::{LabelRaster, MultiBandRaster};
use crate::synth::SceneSpec;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    /// Multi-band image file, relative to the manifest.
    pub image: String,
    /// Fine label file, relative to the manifest.
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub version: u32,
    pub num_classes: usize,
    pub bands: usize,
    /// Pool seed and scene template, when the pool is synthetic.
    pub pool_seed: Option<u64>,
    pub spec: Option<SceneSpec>,
    pub images: Vec<PoolEntry>,
}

pub type Pool = Vec<(MultiBandRaster, LabelRaster)>;

impl DataManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DataManifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
    }

    /// Reads every image/label pair listed in the manifest at `manifest_path`.
    pub fn load_pool(&self, manifest_path: &Path) -> Result<Pool> {
        self.images
            .iter()
            .map(|e| {
                let img = bras::read_multiband(&Self::resolve(manifest_path, &e.image))?;
                let lab = bras::read_labels(&Self::resolve(manifest_path, &e.labels), self.num_classes)?;
                if img.bands() != self.bands || img.width() != lab.width() || img.height() != lab.height() {
                    return Err(Error::Dimension(format!(
                        "{} and {} disagree with each other or the manifest",
                        e.image, e.labels
                    )));
                }
                Ok((img, lab))
            })
            .collect()
    }

    /// Writes a pool as numbered BRAS files next to `manifest_path`, then the manifest.
    pub fn write_pool(
        manifest_path: &Path,
        pool: &Pool,
        pool_seed: Option<u64>,
        spec: Option<SceneSpec>,
    ) -> Result<Self> {
        let first = pool.first().ok_or_else(|| Error::config("images", "empty pool"))?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut images = Vec::with_capacity(pool.len());
        for (i, (img, lab)) in pool.iter().enumerate() {
            let entry = PoolEntry {
                image: format!("image_{i:03}.bras"),
                labels: format!("labels_{i:03}.bras"),
            };
            bras::write(&dir.join(&entry.image), &bras::encode_multiband(img))?;
            bras::write(&dir.join(&entry.labels), &bras::encode_labels(lab))?;
            images.push(entry);
        }
        let manifest = DataManifest {
            version: MANIFEST_VERSION,
            num_classes: first.1.num_classes(),
            bands: first.0.bands(),
            pool_seed,
            spec,
            images,
        };
        manifest.save(manifest_path)?;
        Ok(manifest)
    }
}
