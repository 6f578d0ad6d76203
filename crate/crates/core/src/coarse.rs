//! Coarse-label simulation by repeated single-class enlargement.
//!
//! Each step dilates one class with a randomly sized all-ones rectangle and
//! relabels every covered pixel, which wipes out small details and shifts
//! boundaries the way cheap labelling does.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelRaster;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassOrder {
    RandomPermutation,
    FixedList(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseSimConfig {
    pub min_filter: usize,
    pub max_filter: usize,
    pub seed: u64,
    pub class_order: ClassOrder,
    /// Passes over all classes.
    pub rounds: usize,
}

impl Default for CoarseSimConfig {
    fn default() -> Self {
        Self {
            min_filter: 2,
            max_filter: 32,
            seed: 0,
            class_order: ClassOrder::RandomPermutation,
            rounds: 1,
        }
    }
}

impl CoarseSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_filter < 1 {
            return Err(Error::config("min_filter", "must be at least 1"));
        }
        if self.max_filter < self.min_filter {
            return Err(Error::config("max_filter", "must not be below min_filter"));
        }
        if self.rounds < 1 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        Ok(())
    }
}

/// One applied enlargement step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enlargement {
    pub class: u8,
    pub fw: usize,
    pub fh: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseOutcome {
    pub labels: LabelRaster,
    pub log: Vec<Enlargement>,
}

/// For each position, whether any set cell lies in `[p - before, p + after]`
/// (clipped to the line).
fn dilate_line(src: &[bool], before: usize, after: usize, out: &mut [bool], prefix: &mut Vec<u32>) {
    let n = src.len();
    prefix.clear();
    prefix.push(0);
    for &s in src {
        let last = *prefix.last().unwrap();
        prefix.push(last + s as u32);
    }
    for (p, o) in out.iter_mut().enumerate() {
        let lo = p.saturating_sub(before);
        let hi = (p + after + 1).min(n);
        *o = prefix[hi] > prefix[lo];
    }
}

/// Dilates class `c` with an `fw`x`fh` all-ones element anchored at
/// `((fw-1)/2, (fh-1)/2)`; covered pixels become `c`, others keep their label.
pub fn enlarge_class(labels: &LabelRaster, c: u8, fw: usize, fh: usize) -> Result<LabelRaster> {
    if c as usize >= labels.num_classes() {
        return Err(Error::Domain(format!(
            "class {c} not below num_classes {}",
            labels.num_classes()
        )));
    }
    if fw == 0 || fh == 0 {
        return Err(Error::Domain(format!("filter {fw}x{fh} must be at least 1x1")));
    }
    let (w, h) = (labels.width(), labels.height());
    let (ax, ay) = ((fw - 1) / 2, (fh - 1) / 2);
    let ind: Vec<bool> = labels.labels().iter().map(|&l| l == c).collect();

    let mut prefix = Vec::with_capacity(w.max(h) + 1);
    let mut horiz = vec![false; w * h];
    for j in 0..h {
        let row = j * w..(j + 1) * w;
        dilate_line(&ind[row.clone()], ax, fw - 1 - ax, &mut horiz[row], &mut prefix);
    }

    let mut out = labels.labels().to_vec();
    let mut column = vec![false; h];
    let mut dilated = vec![false; h];
    for i in 0..w {
        for j in 0..h {
            column[j] = horiz[j * w + i];
        }
        dilate_line(&column, ay, fh - 1 - ay, &mut dilated, &mut prefix);
        for j in 0..h {
            if dilated[j] {
                out[j * w + i] = c;
            }
        }
    }
    LabelRaster::from_vec(w, h, labels.num_classes(), out)
}

/// Enlarges each class once per round in a seeded order with filter sides
/// drawn uniformly from `min_filter..=max_filter`.
pub fn simulate_coarse(labels: &LabelRaster, cfg: &CoarseSimConfig) -> Result<CoarseOutcome> {
    cfg.validate()?;
    let k = labels.num_classes();
    if let ClassOrder::FixedList(list) = &cfg.class_order {
        if let Some(bad) = list.iter().find(|&&c| c as usize >= k) {
            return Err(Error::config("class_order", format!("class {bad} not below {k}")));
        }
    }
    let mut rng = seed::rng_for(cfg.seed, &[seed::tag::COARSE]);
    let mut current = labels.clone();
    let mut log = Vec::new();
    for _ in 0..cfg.rounds {
        let order: Vec<u8> = match &cfg.class_order {
            ClassOrder::RandomPermutation => {
                let mut o: Vec<u8> = (0..k).map(|c| c as u8).collect();
                o.shuffle(&mut rng);
                o
            }
            ClassOrder::FixedList(list) => list.clone(),
        };
        for class in order {
            let fw = rng.gen_range(cfg.min_filter..=cfg.max_filter);
            let fh = rng.gen_range(cfg.min_filter..=cfg.max_filter);
            current = enlarge_class(&current, class, fw, fh)?;
            log.push(Enlargement { class, fw, fh });
        }
    }
    Ok(CoarseOutcome {
        labels: current,
        log,
    })
}

/// Fraction of pixels where `coarse` and `fine` disagree.
pub fn noise_rate(coarse: &LabelRaster, fine: &LabelRaster) -> Result<f64> {
    coarse.same_shape(fine)?;
    let wrong = coarse
        .labels()
        .iter()
        .zip(fine.labels())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / coarse.len() as f64)
}
