use crate::error::{Error, Result};
use crate::predictor::proba::ProbabilityMap;
use crate::raster::{AcquisitionMask, LabelRaster};

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Weighted cross-entropy averaged over counted pixels.
///
/// Returns the loss and its gradient with respect to the logits that produced
/// `p`, class-sequential like `p`. For a counted pixel with label `y` the
/// gradient is `w[y] (p - onehot(y)) / n`, `n` being the counted-pixel count.
/// With `mask = None` every pixel counts; otherwise only pixels whose mask
/// entry is 1.
pub fn weighted_cross_entropy(
    p: &ProbabilityMap,
    labels: &LabelRaster,
    weights: &[f64],
    mask: Option<&AcquisitionMask>,
) -> Result<(f64, Vec<f64>)> {
    let (w, h, k) = (p.width(), p.height(), p.num_classes());
    if labels.width() != w || labels.height() != h {
        return Err(Error::Dimension(format!(
            "labels {}x{} vs probabilities {w}x{h}",
            labels.width(),
            labels.height()
        )));
    }
    if weights.len() != k || labels.num_classes() > k {
        return Err(Error::Dimension(format!("{} weights for {k} classes", weights.len())));
    }
    if weights.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Domain("class weights must be positive".into()));
    }
    if let Some(m) = mask {
        if m.width() != w || m.height() != h {
            return Err(Error::Dimension("mask does not match probabilities".into()));
        }
    }
    let n = w * h;
    let counted = |px: usize| mask.map_or(true, |m| m.bits()[px] == 1);
    let count = (0..n).filter(|&px| counted(px)).count();
    let mut grad = vec![0.0; k * n];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let probs = p.probs();
    let mut loss = 0.0;
    for (px, &y) in labels.labels().iter().enumerate() {
        if !counted(px) {
            continue;
        }
        let y = y as usize;
        let wy = weights[y];
        loss -= wy * probs[y * n + px].max(PROB_FLOOR).ln();
        for c in 0..k {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad[c * n + px] = wy * (probs[c * n + px] - onehot) / count as f64;
        }
    }
    Ok((loss / count as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_truth_has_zero_loss() {
        let labels = LabelRaster::from_rows(&[&[0, 1], &[3, 2]], 4).unwrap();
        let mut logits = vec![-50.0; 16];
        for (px, &y) in labels.labels().iter().enumerate() {
            logits[y as usize * 4 + px] = 50.0;
        }
        let p = ProbabilityMap::from_logits(4, 2, 2, &logits).unwrap();
        let (loss, _) = weighted_cross_entropy(&p, &labels, &[1.0; 4], None).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_prediction_costs_ln4() {
        let labels = LabelRaster::from_rows(&[&[0, 1, 2]], 4).unwrap();
        let p = ProbabilityMap::uniform(4, 3, 1);
        let (loss, _) = weighted_cross_entropy(&p, &labels, &[1.0; 4], None).unwrap();
        assert!((loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn mask_restricts_counted_pixels() {
        let labels = LabelRaster::from_rows(&[&[0, 1]], 2).unwrap();
        let p = ProbabilityMap::from_logits(2, 2, 1, &[5.0, 0.0, 0.0, 0.0]).unwrap();
        let m = AcquisitionMask::from_rows(&[&[0, 1]]).unwrap();
        let (masked, g) = weighted_cross_entropy(&p, &labels, &[1.0, 1.0], Some(&m)).unwrap();
        assert!((masked - 2f64.ln()).abs() < 1e-12);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn rejects_bad_weights() {
        let labels = LabelRaster::from_rows(&[&[0]], 2).unwrap();
        let p = ProbabilityMap::uniform(2, 1, 1);
        assert!(weighted_cross_entropy(&p, &labels, &[1.0, 0.0], None).is_err());
        assert!(weighted_cross_entropy(&p, &labels, &[1.0], None).is_err());
    }
}
