//! Windowed-feature softmax classifier trained with Adam on random chips.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, feature_dims, FeatureMap};
use super::proba::{softmax_in_place, ProbabilityMap, SIMPLEX_TOLERANCE};
use super::{Augmentation, ClassWeightMode, PredictorConfig};
use crate::error::{Error, Result};
use crate::raster::{LabelRaster, MultiBandRaster};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    bands: usize,
    num_classes: usize,
    window: usize,
    /// `num_classes × (dims + 1)`, bias last in each row.
    weights: Vec<f32>,
    adam_m: Vec<f32>,
    adam_v: Vec<f32>,
    step: u64,
}

impl BaselineModel {
    pub fn zeros(bands: usize, num_classes: usize, window: usize) -> Self {
        let n = num_classes * (feature_dims(bands) + 1);
        Self {
            bands,
            num_classes,
            window,
            weights: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn window(&self) -> usize {
        self.window
    }
    pub fn dims(&self) -> usize {
        feature_dims(self.bands)
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn step(&self) -> u64 {
        self.step
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let stride = x.len() + 1;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weights[k * stride..(k + 1) * stride];
            let mut z = row[x.len()] as f64;
            for (wv, xv) in row.iter().zip(x) {
                z += *wv as f64 * xv;
            }
            *o = z;
        }
    }

    /// Mean weighted cross-entropy over all pixels of `features` and its
    /// gradient with respect to the weight matrix.
    pub fn loss_and_gradient(
        &self,
        features: &FeatureMap,
        labels: &LabelRaster,
        class_weights: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if features.dims() != self.dims() {
            return Err(Error::Dimension(format!(
                "{} features, model expects {}",
                features.dims(),
                self.dims()
            )));
        }
        if labels.width() != features.width() || labels.height() != features.height() {
            return Err(Error::Dimension("labels do not match feature map".into()));
        }
        let samples = labels.labels().iter().enumerate().map(|(px, &y)| (features.pixel(px), y));
        Ok(self.accumulate(samples, labels.len(), class_weights))
    }

    fn accumulate<'a>(
        &self,
        samples: impl Iterator<Item = (&'a [f64], u8)>,
        n: usize,
        class_weights: &[f64],
    ) -> (f64, Vec<f64>) {
        let dims = self.dims();
        let stride = dims + 1;
        let w: Vec<f64> = self.weights.iter().map(|&v| v as f64).collect();
        let mut grad = vec![0.0; w.len()];
        let mut p = vec![0.0; self.num_classes];
        let mut loss = 0.0;
        for (x, y) in samples {
            let y = y as usize;
            let wy = class_weights[y];
            if wy == 0.0 {
                continue;
            }
            for (k, pk) in p.iter_mut().enumerate() {
                let row = &w[k * stride..(k + 1) * stride];
                *pk = row[dims] + dot(&row[..dims], x);
            }
            softmax_in_place(&mut p);
            loss -= wy * p[y].max(super::loss::PROB_FLOOR).ln();
            for (k, &pk) in p.iter().enumerate() {
                let g = wy * (pk - if k == y { 1.0 } else { 0.0 });
                let row = &mut grad[k * stride..(k + 1) * stride];
                for (r, xv) in row[..dims].iter_mut().zip(x) {
                    *r += g * xv;
                }
                row[dims] += g;
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (loss * inv, grad)
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grad: &[f64], cfg: &PredictorConfig) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (idx, &g) in grad.iter().enumerate() {
            let m = b1 * self.adam_m[idx] as f64 + (1.0 - b1) * g;
            let v = b2 * self.adam_v[idx] as f64 + (1.0 - b2) * g * g;
            self.adam_m[idx] = m as f32;
            self.adam_v[idx] = v as f32;
            let update = cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.adam_eps);
            self.weights[idx] = (self.weights[idx] as f64 - update) as f32;
        }
    }

    pub fn predict_logits(&self, image: &MultiBandRaster) -> Result<Vec<f64>> {
        if image.bands() != self.bands {
            return Err(Error::Dimension(format!(
                "image has {} bands, model expects {}",
                image.bands(),
                self.bands
            )));
        }
        self.logits_from_features(&extract_features(image, self.window)?)
    }

    /// Class-major logits for every pixel of a feature map.
    pub fn logits_from_features(&self, f: &FeatureMap) -> Result<Vec<f64>> {
        if f.dims() != self.dims() {
            return Err(Error::Dimension(format!("{} features, model expects {}", f.dims(), self.dims())));
        }
        let n = f.width() * f.height();
        let mut logits = vec![0.0; self.num_classes * n];
        let mut z = vec![0.0; self.num_classes];
        for px in 0..n {
            self.logits_into(f.pixel(px), &mut z);
            for (k, &v) in z.iter().enumerate() {
                logits[k * n + px] = v;
            }
        }
        Ok(logits)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let enc = |v: &[f32]| B64.encode(v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>());
        Checkpoint {
            bands: self.bands,
            num_classes: self.num_classes,
            features: self.dims(),
            window: self.window,
            step: self.step,
            weights: enc(&self.weights),
            adam_m: enc(&self.adam_m),
            adam_v: enc(&self.adam_v),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.features != feature_dims(c.bands) {
            return Err(Error::Format(format!(
                "checkpoint declares {} features for {} bands",
                c.features, c.bands
            )));
        }
        let n = c.num_classes * (c.features + 1);
        let dec = |s: &str| -> Result<Vec<f32>> {
            let bytes = B64.decode(s).map_err(|e| Error::Format(e.to_string()))?;
            if bytes.len() != n * 4 {
                return Err(Error::Format(format!("array of {} bytes, expected {}", bytes.len(), n * 4)));
            }
            let v: Vec<f32> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format("non-finite checkpoint entry".into()));
            }
            Ok(v)
        };
        Ok(Self {
            bands: c.bands,
            num_classes: c.num_classes,
            window: c.window,
            weights: dec(&c.weights)?,
            adam_m: dec(&c.adam_m)?,
            adam_v: dec(&c.adam_v)?,
            step: c.step,
        })
    }
}

/// Serialized model: header fields plus base64 little-endian f32 arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub bands: usize,
    pub num_classes: usize,
    pub features: usize,
    pub window: usize,
    pub step: u64,
    pub weights: String,
    pub adam_m: String,
    pub adam_v: String,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-class loss weights over the given label maps.
pub fn class_weights(labels: &[&LabelRaster], num_classes: usize, mode: ClassWeightMode) -> Vec<f64> {
    match mode {
        ClassWeightMode::Uniform => vec![1.0; num_classes],
        ClassWeightMode::InverseFrequency => {
            let mut counts = vec![0usize; num_classes];
            for l in labels {
                for &y in l.labels() {
                    counts[y as usize] += 1;
                }
            }
            let total: usize = counts.iter().sum();
            let inv: Vec<f64> = counts
                .iter()
                .map(|&c| if c == 0 { 0.0 } else { total as f64 / c as f64 })
                .collect();
            let present = counts.iter().filter(|&&c| c > 0).count().max(1);
            let mean = inv.iter().sum::<f64>() / present as f64;
            inv.iter().map(|w| w / mean).collect()
        }
    }
}

/// Pixel indices (into the full image) of a square chip, row-major, after
/// the seeded augmentations. Window statistics are invariant under these
/// transforms, so permuting indices of precomputed features is equivalent to
/// transforming the chip.
fn augmented_chip(
    image_width: usize,
    x0: usize,
    y0: usize,
    s: usize,
    augs: &[Augmentation],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut turns = 0u8;
    let (mut flip_h, mut flip_v) = (false, false);
    for a in augs {
        match a {
            Augmentation::Rotate90 => turns = rng.gen_range(0..4u8),
            Augmentation::FlipH => flip_h = rng.gen_bool(0.5),
            Augmentation::FlipV => flip_v = rng.gen_bool(0.5),
        }
    }
    let mut out = Vec::with_capacity(s * s);
    for j in 0..s {
        for i in 0..s {
            // destination (i, j) back to source: undo flips, then rotations
            let (mut si, mut sj) = (i, j);
            if flip_v {
                sj = s - 1 - sj;
            }
            if flip_h {
                si = s - 1 - si;
            }
            for _ in 0..turns {
                (si, sj) = (sj, s - 1 - si);
            }
            out.push((y0 + sj) * image_width + x0 + si);
        }
    }
    out
}

/// Per-step training losses, useful for convergence checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub step_losses: Vec<f64>,
}

/// Trains a fresh model, or continues from `init` when given.
pub fn train_model(
    images: &[&MultiBandRaster],
    labels: &[&LabelRaster],
    cfg: &PredictorConfig,
    init: Option<&BaselineModel>,
) -> Result<(BaselineModel, TrainHistory)> {
    cfg.validate()?;
    if images.iter().any(|i| i.bands() != images[0].bands()) {
        return Err(Error::Dimension("training images disagree on bands".into()));
    }
    let features: Vec<FeatureMap> = images
        .iter()
        .map(|img| extract_features(img, cfg.window))
        .collect::<Result<_>>()?;
    let refs: Vec<&FeatureMap> = features.iter().collect();
    train_on_features(&refs, labels, cfg, init)
}

/// [`train_model`] on precomputed features (extracted with `cfg.window`).
pub fn train_on_features(
    features: &[&FeatureMap],
    labels: &[&LabelRaster],
    cfg: &PredictorConfig,
    init: Option<&BaselineModel>,
) -> Result<(BaselineModel, TrainHistory)> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::config("images", "need at least one training image"));
    }
    if features.len() != labels.len() {
        return Err(Error::Dimension(format!("{} images but {} label maps", features.len(), labels.len())));
    }
    let bands = features[0].dims() / 3;
    let num_classes = labels[0].num_classes();
    for (f, lab) in features.iter().zip(labels) {
        if f.dims() != features[0].dims() || lab.num_classes() != num_classes {
            return Err(Error::Dimension("training images disagree on bands or classes".into()));
        }
        if f.width() != lab.width() || f.height() != lab.height() {
            return Err(Error::Dimension("image and label sizes differ".into()));
        }
        if cfg.chip_size > f.width().min(f.height()) {
            return Err(Error::config(
                "chip_size",
                format!("{} exceeds image {}x{}", cfg.chip_size, f.width(), f.height()),
            ));
        }
    }
    let mut model = match init {
        Some(m) if m.bands == bands && m.num_classes == num_classes && m.window == cfg.window => m.clone(),
        Some(_) => return Err(Error::Dimension("warm-start model does not match training data".into())),
        None => BaselineModel::zeros(bands, num_classes, cfg.window),
    };
    let weights = class_weights(labels, num_classes, cfg.class_weight_mode);
    let mut rng = seed::rng_for(cfg.seed, &[seed::tag::TRAIN]);
    let mut history = TrainHistory::default();
    let s = cfg.chip_size;
    for _ in 0..cfg.epochs {
        for _ in 0..cfg.chips_per_epoch {
            let idx = rng.gen_range(0..features.len());
            let (lab, feat) = (labels[idx], features[idx]);
            let x0 = rng.gen_range(0..=feat.width() - s);
            let y0 = rng.gen_range(0..=feat.height() - s);
            let chip = augmented_chip(feat.width(), x0, y0, s, &cfg.augmentations, &mut rng);
            let samples = chip.iter().map(|&p| (feat.pixel(p), lab.labels()[p]));
            let (loss, grad) = model.accumulate(samples, chip.len(), &weights);
            model.adam_step(&grad, cfg);
            history.step_losses.push(loss);
        }
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Domain("training diverged to non-finite weights".into()));
    }
    Ok((model, history))
}

/// Trains a fresh model from zero weights.
pub fn train(images: &[&MultiBandRaster], labels: &[&LabelRaster], cfg: &PredictorConfig) -> Result<BaselineModel> {
    train_model(images, labels, cfg, None).map(|(m, _)| m)
}

/// Softmax probabilities rounded to f32, class-major, before renormalization.
pub fn predict_proba_f32(model: &BaselineModel, image: &MultiBandRaster) -> Result<Vec<f32>> {
    let logits = model.predict_logits(image)?;
    proba_f32_from_logits(model, image.width(), image.height(), &logits)
}

pub(crate) fn proba_f32_from_logits(model: &BaselineModel, w: usize, h: usize, logits: &[f64]) -> Result<Vec<f32>> {
    let p = ProbabilityMap::from_logits(model.num_classes, w, h, logits)?;
    Ok(p.probs().iter().map(|&v| v as f32).collect())
}

/// Softmax probabilities per pixel, at wire precision.
pub fn predict_proba(model: &BaselineModel, image: &MultiBandRaster) -> Result<ProbabilityMap> {
    let f = predict_proba_f32(model, image)?;
    ProbabilityMap::from_f32(model.num_classes, image.width(), image.height(), &f, SIMPLEX_TOLERANCE)
}
