//! Raster primitives: multi-band images, label maps, acquisition masks and
//! rectangular regions.
//!
//! Coordinates are `(i, j)` = (column, row) everywhere. Storage is row-major
//! within a band (`j * width + i`) and band-sequential across bands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default land-cover classes: background, soil, herbaceous, woody.
pub const DEFAULT_NUM_CLASSES: usize = 4;
/// Blue, green, red, red-edge, near-infrared.
pub const DEFAULT_BANDS: usize = 5;

/// Axis-aligned window into one image of a pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub image_index: usize,
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn new(image_index: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self {
            image_index,
            x0,
            y0,
            w,
            h,
        }
    }

    /// Whole extent of a `width`x`height` image.
    pub fn full(image_index: usize, width: usize, height: usize) -> Self {
        Self::new(image_index, 0, 0, width, height)
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        let fits = self.w >= 1
            && self.h >= 1
            && self.x0.checked_add(self.w).is_some_and(|e| e <= width)
            && self.y0.checked_add(self.h).is_some_and(|e| e <= height);
        if fits {
            Ok(())
        } else {
            Err(Error::Bounds {
                region: format!("{self}"),
                width,
                height,
            })
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.x0 && i < self.x0 + self.w && j >= self.y0 && j < self.y0 + self.h
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "image {} at ({}, {}) size {}x{}",
            self.image_index, self.x0, self.y0, self.w, self.h
        )
    }
}

fn crop_plane<T: Copy>(data: &[T], width: usize, r: &Region) -> Vec<T> {
    let mut out = Vec::with_capacity(r.area());
    for j in r.y0..r.y0 + r.h {
        let row = j * width;
        out.extend_from_slice(&data[row + r.x0..row + r.x0 + r.w]);
    }
    out
}

fn paste_plane<T: Copy>(dst: &mut [T], width: usize, r: &Region, src: &[T]) {
    for (dj, j) in (r.y0..r.y0 + r.h).enumerate() {
        let row = j * width;
        dst[row + r.x0..row + r.x0 + r.w].copy_from_slice(&src[dj * r.w..(dj + 1) * r.w]);
    }
}

/// C×W×H reflectance image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBandRaster {
    bands: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl MultiBandRaster {
    pub fn zeros(bands: usize, width: usize, height: usize) -> Result<Self> {
        if bands == 0 || width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be positive, got {bands}x{width}x{height}"
            )));
        }
        Ok(Self {
            bands,
            width,
            height,
            data: vec![0.0; bands * width * height],
        })
    }

    /// Builds a raster from band-sequential data, validating shape and range.
    pub fn from_vec(bands: usize, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        let mut r = Self::zeros(bands, width, height)?;
        if data.len() != r.data.len() {
            return Err(Error::Dimension(format!(
                "expected {} values for {bands}x{width}x{height}, got {}",
                r.data.len(),
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("reflectance {v} outside [0, 1]")));
        }
        r.data = data;
        Ok(r)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn get(&self, b: usize, i: usize, j: usize) -> f32 {
        self.data[(b * self.height + j) * self.width + i]
    }

    /// Sets a value, clipping it to [0, 1].
    pub fn set(&mut self, b: usize, i: usize, j: usize, v: f32) {
        self.data[(b * self.height + j) * self.width + i] = v.clamp(0.0, 1.0);
    }

    pub fn crop(&self, r: &Region) -> Result<Self> {
        r.check_within(self.width, self.height)?;
        let mut data = Vec::with_capacity(self.bands * r.area());
        for b in 0..self.bands {
            data.extend(crop_plane(self.band(b), self.width, r));
        }
        Ok(Self {
            bands: self.bands,
            width: r.w,
            height: r.h,
            data,
        })
    }
}

/// W×H map of class ids in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelRaster {
    width: usize,
    height: usize,
    num_classes: usize,
    labels: Vec<u8>,
}

impl LabelRaster {
    pub fn filled(width: usize, height: usize, num_classes: usize, class: u8) -> Result<Self> {
        Self::from_vec(width, height, num_classes, vec![class; width * height])
    }

    pub fn from_vec(width: usize, height: usize, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "label raster must be non-empty, got {width}x{height}"
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::Domain(format!("num_classes {num_classes} not in 1..=256")));
        }
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} labels for {width}x{height}, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Domain(format!("label {l} not below num_classes {num_classes}")));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            labels,
        })
    }

    /// Builds a raster from rows (`rows[j][i]`).
    pub fn from_rows(rows: &[&[u8]], num_classes: usize) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(width, height, num_classes, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, class: u8) {
        assert!((class as usize) < self.num_classes, "class {class} out of range");
        self.labels[j * self.width + i] = class;
    }

    pub fn same_shape(&self, other: &LabelRaster) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn crop(&self, r: &Region) -> Result<Self> {
        r.check_within(self.width, self.height)?;
        Ok(Self {
            width: r.w,
            height: r.h,
            num_classes: self.num_classes,
            labels: crop_plane(&self.labels, self.width, r),
        })
    }

    /// Writes `patch` into the window `r`.
    pub fn paste(&mut self, r: &Region, patch: &LabelRaster) -> Result<()> {
        r.check_within(self.width, self.height)?;
        if patch.width != r.w || patch.height != r.h {
            return Err(Error::Dimension(format!(
                "patch {}x{} does not match region {}x{}",
                patch.width, patch.height, r.w, r.h
            )));
        }
        if patch.num_classes > self.num_classes {
            return Err(Error::Domain("patch has more classes than target".into()));
        }
        paste_plane(&mut self.labels, self.width, r, &patch.labels);
        Ok(())
    }
}

pub fn crop_labels(labels: &LabelRaster, r: &Region) -> Result<LabelRaster> {
    labels.crop(r)
}

pub fn crop_mask(mask: &AcquisitionMask, r: &Region) -> Result<AcquisitionMask> {
    mask.crop(r)
}

/// Fraction of pixels in each class; sums to one.
pub fn class_frequencies(labels: &LabelRaster) -> Vec<f64> {
    let mut counts = vec![0usize; labels.num_classes];
    for &l in &labels.labels {
        counts[l as usize] += 1;
    }
    let n = labels.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Per-image binary map: 1 = label not yet refined, 0 = refined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquisitionMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl AcquisitionMask {
    /// Fresh mask with nothing refined.
    pub fn unrefined(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "expected {} mask entries for {width}x{height}, got {}",
                width * height,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("mask entries must be 0 or 1".into()));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(width, rows.len(), rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.bits[j * self.width + i]
    }

    pub fn unrefined_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn refined_count(&self) -> usize {
        self.bits.len() - self.unrefined_count()
    }

    pub fn crop(&self, r: &Region) -> Result<Self> {
        r.check_within(self.width, self.height)?;
        Ok(Self {
            width: r.w,
            height: r.h,
            bits: crop_plane(&self.bits, self.width, r),
        })
    }

    /// Marks every pixel of `r` refined; returns how many flipped 1 → 0.
    /// Entries never return to 1.
    pub fn clear_region(&mut self, r: &Region) -> Result<usize> {
        r.check_within(self.width, self.height)?;
        let mut flipped = 0;
        for j in r.y0..r.y0 + r.h {
            let row = j * self.width;
            for b in &mut self.bits[row + r.x0..row + r.x0 + r.w] {
                flipped += *b as usize;
                *b = 0;
            }
        }
        Ok(flipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> LabelRaster {
        LabelRaster::from_rows(&[&[0, 1, 2], &[3, 0, 1], &[2, 3, 0]], 4).unwrap()
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let l = sample();
        assert_eq!(crop_labels(&l, &Region::full(0, 3, 3)).unwrap(), l);
        let m = AcquisitionMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        assert_eq!(crop_mask(&m, &Region::full(0, 2, 2)).unwrap(), m);
    }

    #[test]
    fn single_pixel_crop() {
        let l = sample();
        let c = crop_labels(&l, &Region::new(0, 2, 1, 1, 1)).unwrap();
        assert_eq!(c.labels(), &[l.get(2, 1)]);
        assert_eq!(c.labels(), &[1]);
    }

    #[test]
    fn out_of_bounds_crop_fails() {
        let l = sample();
        assert!(matches!(
            crop_labels(&l, &Region::new(0, 2, 0, 2, 1)),
            Err(Error::Bounds { .. })
        ));
        let m = AcquisitionMask::unrefined(3, 3);
        assert!(matches!(
            crop_mask(&m, &Region::new(0, 0, 1, 1, 3)),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn crop_of_unrefined_mask_is_all_ones() {
        let m = AcquisitionMask::unrefined(8, 6);
        let c = crop_mask(&m, &Region::new(0, 2, 1, 4, 3)).unwrap();
        assert_eq!((c.width(), c.height()), (4, 3));
        assert!(c.bits().iter().all(|&b| b == 1));
    }

    #[test]
    fn frequencies() {
        let all0 = LabelRaster::filled(2, 2, 4, 0).unwrap();
        assert_eq!(class_frequencies(&all0), vec![1.0, 0.0, 0.0, 0.0]);
        let mixed = LabelRaster::from_rows(&[&[0, 1], &[2, 3]], 4).unwrap();
        assert_eq!(class_frequencies(&mixed), vec![0.25; 4]);
        let row = LabelRaster::from_rows(&[&[0, 0, 1, 1]], 4).unwrap();
        assert_eq!(class_frequencies(&row), vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(LabelRaster::from_vec(2, 1, 2, vec![0, 2]).is_err());
        assert!(MultiBandRaster::from_vec(1, 1, 1, vec![1.5]).is_err());
        assert!(AcquisitionMask::from_vec(1, 1, vec![2]).is_err());
    }

    #[test]
    fn clear_region_counts_flips() {
        let mut m = AcquisitionMask::unrefined(4, 4);
        assert_eq!(m.clear_region(&Region::new(0, 0, 0, 2, 2)).unwrap(), 4);
        assert_eq!(m.clear_region(&Region::new(0, 1, 1, 2, 2)).unwrap(), 3);
        assert_eq!(m.refined_count(), 7);
    }

    fn labels_strategy() -> impl Strategy<Value = LabelRaster> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..4, w * h)
                .prop_map(move |v| LabelRaster::from_vec(w, h, 4, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn crop_then_paste_is_identity(l in labels_strategy(), a in 0usize..12, b in 0usize..12, c in 1usize..12, d in 1usize..12) {
            let r = Region::new(0, a % l.width(), b % l.height(), 1 + c % l.width(), 1 + d % l.height());
            prop_assume!(r.check_within(l.width(), l.height()).is_ok());
            let patch = l.crop(&r).unwrap();
            prop_assert_eq!((patch.width(), patch.height()), (r.w, r.h));
            let mut pasted = l.clone();
            pasted.paste(&r, &patch).unwrap();
            prop_assert_eq!(pasted, l);
        }

        #[test]
        fn frequencies_sum_to_one_and_follow_relabeling(l in labels_strategy(), perm in Just([2u8, 0, 3, 1])) {
            let f = class_frequencies(&l);
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let relabeled = LabelRaster::from_vec(
                l.width(), l.height(), 4,
                l.labels().iter().map(|&x| perm[x as usize]).collect(),
            ).unwrap();
            let g = class_frequencies(&relabeled);
            for k in 0..4 {
                prop_assert_eq!(f[k], g[perm[k] as usize]);
            }
        }
    }
}
