//! Per-pixel class predictors.
//!
//! The active-learning loop only needs a [`Predictor`]: something that can be
//! trained on label maps and produce a [`ProbabilityMap`]. The in-process
//! [`BaselinePredictor`] is a softmax classifier over windowed band
//! statistics; [`crate::protocol::SidecarClient`] forwards the same contract
//! to an external process.

pub mod features;
pub mod loss;
pub mod model;
pub mod proba;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use features::{extract_features, FeatureMap};
pub use loss::weighted_cross_entropy;
pub use model::{predict_proba, predict_proba_f32, train, train_model, train_on_features, BaselineModel, Checkpoint, TrainHistory};
pub use proba::{entropy_map, EntropyMap, ProbabilityMap};

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, MultiBandRaster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Rotate90,
    FlipH,
    FlipV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeightMode {
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Odd side length of the mean/std window.
    pub window: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub chips_per_epoch: usize,
    pub chip_size: usize,
    pub augmentations: Vec<Augmentation>,
    pub class_weight_mode: ClassWeightMode,
    pub seed: u64,
    /// Continue from the previous cycle's model instead of zero weights.
    pub warm_start: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            window: 5,
            learning_rate: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 15,
            chips_per_epoch: 64,
            chip_size: 128,
            augmentations: vec![Augmentation::Rotate90, Augmentation::FlipH, Augmentation::FlipV],
            class_weight_mode: ClassWeightMode::InverseFrequency,
            seed: 0,
            warm_start: false,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::config("window", "must be odd"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam_beta", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.chip_size == 0 {
            return Err(Error::config("chip_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Anything that can be trained on label maps and emit class probabilities.
pub trait Predictor: Send {
    fn train(&mut self, images: &[&MultiBandRaster], labels: &[&LabelRaster], cfg: &PredictorConfig) -> Result<()>;
    fn predict_proba(&mut self, image: &MultiBandRaster) -> Result<ProbabilityMap>;
}

/// In-process baseline predictor. Features of every image it sees are
/// cached, since the loop retrains on the same images each cycle.
#[derive(Debug, Clone, Default)]
pub struct BaselinePredictor {
    model: Option<BaselineModel>,
    cache: HashMap<(u64, usize), FeatureMap>,
}

const CACHE_LIMIT: usize = 64;

fn image_key(image: &MultiBandRaster) -> u64 {
    let mut h = DefaultHasher::new();
    (image.bands(), image.width(), image.height()).hash(&mut h);
    for v in image.data() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl BaselinePredictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn model(&self) -> Option<&BaselineModel> {
        self.model.as_ref()
    }

    fn features_key(&mut self, image: &MultiBandRaster, window: usize) -> Result<(u64, usize)> {
        let key = (image_key(image), window);
        if !self.cache.contains_key(&key) {
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            self.cache.insert(key, extract_features(image, window)?);
        }
        Ok(key)
    }

    /// Probabilities as f32 before renormalization, the form sent over the wire.
    pub fn predict_proba_f32(&mut self, image: &MultiBandRaster) -> Result<Vec<f32>> {
        let window = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Domain("predict called before train".into()))?
            .window();
        let key = self.features_key(image, window)?;
        let model = self.model.as_ref().expect("trained");
        let logits = model.logits_from_features(&self.cache[&key])?;
        model::proba_f32_from_logits(model, image.width(), image.height(), &logits)
    }
}

impl Predictor for BaselinePredictor {
    fn train(&mut self, images: &[&MultiBandRaster], labels: &[&LabelRaster], cfg: &PredictorConfig) -> Result<()> {
        cfg.validate()?;
        if images.iter().any(|i| i.bands() != images[0].bands()) {
            return Err(Error::Dimension("training images disagree on bands".into()));
        }
        let keys: Vec<_> = images
            .iter()
            .map(|img| self.features_key(img, cfg.window))
            .collect::<Result<_>>()?;
        let feats: Vec<&FeatureMap> = keys.iter().map(|k| &self.cache[k]).collect();
        let init = if cfg.warm_start { self.model.as_ref() } else { None };
        let (model, _) = train_on_features(&feats, labels, cfg, init)?;
        self.model = Some(model);
        Ok(())
    }

    fn predict_proba(&mut self, image: &MultiBandRaster) -> Result<ProbabilityMap> {
        let f = self.predict_proba_f32(image)?;
        let k = self.model.as_ref().expect("trained").num_classes();
        ProbabilityMap::from_f32(k, image.width(), image.height(), &f, proba::SIMPLEX_TOLERANCE)
    }
}

