//! Simulated expert: copies fine labels into selected areas and records which
//! pixels have been refined.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{AcquisitionMask, LabelRaster, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementEntry {
    pub cycle: usize,
    pub region: Region,
    pub newly_refined: usize,
}

/// Acquisition masks for every pool image plus an audit log.
///
/// Images without a mask (the held-out image) cannot be refined.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementLedger {
    masks: Vec<Option<AcquisitionMask>>,
    refined: usize,
    log: Vec<RefinementEntry>,
}

/// JSON form of a ledger's audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerLog {
    pub refined_pixels: usize,
    pub trackable_pixels: usize,
    pub entries: Vec<RefinementEntry>,
}

impl RefinementLedger {
    /// `dims[i] = Some((w, h))` for trackable images, `None` for excluded ones.
    pub fn new(dims: &[Option<(usize, usize)>]) -> Self {
        Self {
            masks: dims
                .iter()
                .map(|d| d.map(|(w, h)| AcquisitionMask::unrefined(w, h)))
                .collect(),
            refined: 0,
            log: Vec::new(),
        }
    }

    pub fn mask(&self, image_index: usize) -> Option<&AcquisitionMask> {
        self.masks.get(image_index).and_then(|m| m.as_ref())
    }

    pub fn masks(&self) -> Vec<Option<&AcquisitionMask>> {
        self.masks.iter().map(|m| m.as_ref()).collect()
    }

    pub fn refined_pixels(&self) -> usize {
        self.refined
    }

    pub fn trackable_pixels(&self) -> usize {
        self.masks
            .iter()
            .flatten()
            .map(|m| m.width() * m.height())
            .sum()
    }

    pub fn entries(&self) -> &[RefinementEntry] {
        &self.log
    }

    pub fn to_log(&self) -> LedgerLog {
        LedgerLog {
            refined_pixels: self.refined,
            trackable_pixels: self.trackable_pixels(),
            entries: self.log.clone(),
        }
    }

    fn mask_mut(&mut self, image_index: usize) -> Result<&mut AcquisitionMask> {
        self.masks
            .get_mut(image_index)
            .and_then(|m| m.as_mut())
            .ok_or_else(|| Error::Domain(format!("image {image_index} is not refinable")))
    }

    /// Copies `fine[r]` into `current[r]` and clears the mask there.
    /// Returns how many mask entries flipped from 1 to 0; repeating a
    /// refinement returns 0.
    pub fn refine(
        &mut self,
        current: &mut LabelRaster,
        fine: &LabelRaster,
        r: &Region,
        cycle: usize,
    ) -> Result<usize> {
        self.refine_inner(current, fine, r, cycle, None::<(&mut rand::rngs::mock::StepRng, f64)>)
    }

    /// Like [`refine`](Self::refine) but each pixel keeps its current label
    /// with probability `keep_prob`, modelling an imperfect expert. The mask
    /// is cleared either way.
    pub fn refine_noisy<R: Rng>(
        &mut self,
        current: &mut LabelRaster,
        fine: &LabelRaster,
        r: &Region,
        cycle: usize,
        keep_prob: f64,
        rng: &mut R,
    ) -> Result<usize> {
        if !(0.0..=1.0).contains(&keep_prob) {
            return Err(Error::config("oracle_keep_prob", "must lie in [0, 1]"));
        }
        self.refine_inner(current, fine, r, cycle, Some((rng, keep_prob)))
    }

    fn refine_inner<R: Rng>(
        &mut self,
        current: &mut LabelRaster,
        fine: &LabelRaster,
        r: &Region,
        cycle: usize,
        noise: Option<(&mut R, f64)>,
    ) -> Result<usize> {
        current.same_shape(fine)?;
        let mask = self.mask_mut(r.image_index)?;
        if mask.width() != current.width() || mask.height() != current.height() {
            return Err(Error::Dimension("labels do not match the image's acquisition mask".into()));
        }
        r.check_within(current.width(), current.height())?;
        let newly = mask.clear_region(r)?;
        match noise {
            None => current.paste(r, &fine.crop(r)?)?,
            Some((rng, keep)) => {
                for j in r.y0..r.y0 + r.h {
                    for i in r.x0..r.x0 + r.w {
                        if !rng.gen_bool(keep) {
                            current.set(i, j, fine.get(i, j));
                        }
                    }
                }
            }
        }
        self.refined += newly;
        self.log.push(RefinementEntry {
            cycle,
            region: *r,
            newly_refined: newly,
        });
        Ok(newly)
    }
}
