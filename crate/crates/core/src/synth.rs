//! Deterministic synthetic scenes: multi-band images with fine ground-truth
//! labels built from nearest-site class partitions plus scattered small
//! objects.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, MultiBandRaster, DEFAULT_BANDS, DEFAULT_NUM_CLASSES};
use crate::seed;

const MEAN_TAG: u64 = 0x3EA5;
const LAYOUT_TAG: u64 = 0x1A40;
const MEAN_LO: f64 = 0.05;
const MEAN_HI: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub num_classes: usize,
    /// Seed sites per class.
    pub blob_count: usize,
    /// Reflectance noise standard deviation.
    pub noise_sigma: f64,
    /// Fraction of pixels overwritten by 1–4 px objects.
    pub small_object_rate: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 256,
            height: 256,
            bands: DEFAULT_BANDS,
            num_classes: DEFAULT_NUM_CLASSES,
            blob_count: 6,
            noise_sigma: 0.08,
            small_object_rate: 0.04,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("width/height", "must be at least 1"));
        }
        if self.bands == 0 {
            return Err(Error::config("bands", "must be at least 1"));
        }
        if !(1..=256).contains(&self.num_classes) {
            return Err(Error::config("num_classes", "must be in 1..=256"));
        }
        if self.blob_count == 0 {
            return Err(Error::config("blob_count", "must be at least 1"));
        }
        if self.num_classes * self.blob_count > self.width * self.height {
            return Err(Error::config("blob_count", "more seed sites than pixels"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.small_object_rate) {
            return Err(Error::config("small_object_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-class spectral means, `means[k][b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    pub means: Vec<Vec<f64>>,
}

impl ClassMeans {
    /// Draws class means with every pair separated by at least `2σ` in some
    /// band. Classes 0 and 1 share means within `σ/2` in all bands but one.
    pub fn draw(seed: u64, num_classes: usize, bands: usize, noise_sigma: f64) -> Result<Self> {
        let mut rng = seed::rng_for(seed, &[MEAN_TAG]);
        let min_sep = (2.0 * noise_sigma).max(1e-3);
        for _ in 0..10_000 {
            let mut means: Vec<Vec<f64>> = (0..num_classes)
                .map(|_| (0..bands).map(|_| rng.gen_range(MEAN_LO..MEAN_HI)).collect())
                .collect();
            if num_classes >= 2 {
                let distinct = rng.gen_range(0..bands);
                for b in 0..bands {
                    if b != distinct {
                        let jitter = rng.gen_range(-0.45..=0.45) * noise_sigma;
                        means[1][b] = (means[0][b] + jitter).clamp(0.0, 1.0);
                    }
                }
            }
            let separated = (0..num_classes).all(|k| {
                (k + 1..num_classes).all(|l| {
                    (0..bands).any(|b| (means[k][b] - means[l][b]).abs() >= min_sep)
                })
            });
            if separated {
                return Ok(Self { means });
            }
        }
        Err(Error::config(
            "noise_sigma",
            format!("cannot separate {num_classes} class means by 2*{noise_sigma} in [0, 1]"),
        ))
    }
}

/// Generates one image/label pair; class means are drawn from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<(MultiBandRaster, LabelRaster)> {
    spec.validate()?;
    let means = ClassMeans::draw(spec.seed, spec.num_classes, spec.bands, spec.noise_sigma)?;
    render_scene(spec, &means)
}

/// Generates `n_images` scenes with seeds `seed + i` and one shared mean table.
pub fn generate_pool(
    seed: u64,
    n_images: usize,
    template: &SceneSpec,
) -> Result<Vec<(MultiBandRaster, LabelRaster)>> {
    if n_images < 2 {
        return Err(Error::config("n_images", "pool needs at least 2 images for leave-one-out"));
    }
    template.validate()?;
    let means = ClassMeans::draw(seed, template.num_classes, template.bands, template.noise_sigma)?;
    (0..n_images)
        .map(|i| {
            let spec = SceneSpec {
                seed: seed.wrapping_add(i as u64),
                ..template.clone()
            };
            render_scene(&spec, &means)
        })
        .collect()
}

/// Renders the label layout and image for `spec` with the given class means.
pub fn render_scene(spec: &SceneSpec, means: &ClassMeans) -> Result<(MultiBandRaster, LabelRaster)> {
    spec.validate()?;
    if means.means.len() != spec.num_classes || means.means.iter().any(|m| m.len() != spec.bands) {
        return Err(Error::Dimension("class mean table does not match scene spec".into()));
    }
    let mut rng = seed::rng_for(spec.seed, &[LAYOUT_TAG]);
    let labels = layout(spec, &mut rng)?;

    let (w, h) = (spec.width, spec.height);
    let mut image = MultiBandRaster::zeros(spec.bands, w, h)?;
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::config("noise_sigma", e.to_string()))?;
    for b in 0..spec.bands {
        for j in 0..h {
            for i in 0..w {
                let mu = means.means[labels.get(i, j) as usize][b];
                let v = if spec.noise_sigma > 0.0 {
                    mu + noise.sample(&mut rng)
                } else {
                    mu
                };
                image.set(b, i, j, v as f32);
            }
        }
    }
    Ok((image, labels))
}

fn layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<LabelRaster> {
    let (w, h) = (spec.width, spec.height);
    let n_sites = spec.num_classes * spec.blob_count;
    // distinct positions so every class owns at least its own sites
    let mut cells: Vec<usize> = if w * h <= 4 * n_sites {
        let mut all: Vec<usize> = (0..w * h).collect();
        all.shuffle(rng);
        all.truncate(n_sites);
        all
    } else {
        let mut picked = Vec::with_capacity(n_sites);
        while picked.len() < n_sites {
            let c = rng.gen_range(0..w * h);
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        picked
    };
    // sites are ordered by class so strict comparison breaks ties to the lowest id
    let sites: Vec<(usize, usize, u8)> = cells
        .drain(..)
        .enumerate()
        .map(|(n, c)| (c % w, c / w, (n / spec.blob_count) as u8))
        .collect();

    let mut labels = vec![0u8; w * h];
    for j in 0..h {
        for i in 0..w {
            let mut best = usize::MAX;
            let mut class = 0u8;
            for &(si, sj, k) in &sites {
                let d = si.abs_diff(i) + sj.abs_diff(j);
                if d < best {
                    best = d;
                    class = k;
                }
            }
            labels[j * w + i] = class;
        }
    }

    let target = (spec.small_object_rate * (w * h) as f64).round() as usize;
    let mut placed = 0;
    while placed < target {
        let s = rng.gen_range(1..=4usize);
        let x0 = rng.gen_range(0..w);
        let y0 = rng.gen_range(0..h);
        let k = rng.gen_range(0..spec.num_classes) as u8;
        for j in y0..(y0 + s).min(h) {
            for i in x0..(x0 + s).min(w) {
                labels[j * w + i] = k;
                placed += 1;
            }
        }
    }
    LabelRaster::from_vec(w, h, spec.num_classes, labels)
}
