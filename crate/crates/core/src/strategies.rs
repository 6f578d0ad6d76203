//! Candidate areas and the acquisition strategies that rank them.
//!
//! Every strategy assigns each candidate a utility; the selected batch is the
//! `k` candidates with the largest utilities, which maximizes the batch's
//! summed utility because the objective is additive.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::EntropyMap;
use crate::raster::{AcquisitionMask, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Random sampling.
    #[serde(rename = "rs")]
    Rs,
    /// Coverage sampling: count of unrefined pixels.
    #[serde(rename = "cs")]
    Cs,
    /// Uncertainty sampling: summed entropy of unrefined pixels.
    #[serde(rename = "us")]
    Us,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Rs, StrategyKind::Cs, StrategyKind::Us];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Rs => "rs",
            StrategyKind::Cs => "cs",
            StrategyKind::Us => "us",
        }
    }

    pub fn needs_entropy(&self) -> bool {
        matches!(self, StrategyKind::Us)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Ok(StrategyKind::Rs),
            "cs" => Ok(StrategyKind::Cs),
            "us" => Ok(StrategyKind::Us),
            other => Err(Error::config("strategy", format!("unknown strategy `{other}` (rs|cs|us)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub region: Region,
    pub utility: f64,
}

/// Draws `n` square candidates of side `size`: uniform image among
/// `images` (pool index, width, height), then uniform valid offset.
/// Overlaps and duplicates are allowed.
pub fn sample_candidates<R: Rng>(
    images: &[(usize, usize, usize)],
    n: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<Candidate>> {
    if n == 0 {
        return Err(Error::config("n_candidates", "must be at least 1"));
    }
    if images.is_empty() {
        return Err(Error::config("images", "no images to sample candidates from"));
    }
    if size == 0 || images.iter().any(|&(_, w, h)| size > w.min(h)) {
        return Err(Error::config(
            "candidate_size",
            format!("{size} does not fit every training image"),
        ));
    }
    Ok((0..n)
        .map(|_| {
            let (idx, w, h) = images[rng.gen_range(0..images.len())];
            let x0 = rng.gen_range(0..=w - size);
            let y0 = rng.gen_range(0..=h - size);
            Candidate {
                region: Region::new(idx, x0, y0, size, size),
                utility: 0.0,
            }
        })
        .collect())
}

/// Number of unrefined pixels in the window.
pub fn utility_cs(mask_crop: &AcquisitionMask) -> f64 {
    mask_crop.unrefined_count() as f64
}

/// Summed entropy over unrefined pixels.
pub fn utility_us(mask_crop: &AcquisitionMask, entropy_crop: &EntropyMap) -> Result<f64> {
    if mask_crop.width() != entropy_crop.width() || mask_crop.height() != entropy_crop.height() {
        return Err(Error::Dimension(format!(
            "mask {}x{} vs entropy {}x{}",
            mask_crop.width(),
            mask_crop.height(),
            entropy_crop.width(),
            entropy_crop.height()
        )));
    }
    Ok(mask_crop
        .bits()
        .iter()
        .zip(entropy_crop.values())
        .filter(|(&a, _)| a == 1)
        .map(|(_, &h)| h)
        .sum())
}

/// I.i.d. score in `[0, 1)`.
pub fn utility_rs<R: Rng>(rng: &mut R) -> f64 {
    rng.gen::<f64>()
}

/// Indices of the `k` largest utilities (ties to the lower index), ascending.
pub fn select_top_k(utilities: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > utilities.len() {
        return Err(Error::config(
            "k_select",
            format!("k = {k} must lie in 1..={}", utilities.len()),
        ));
    }
    if let Some(u) = utilities.iter().find(|u| !u.is_finite()) {
        return Err(Error::Domain(format!("non-finite utility {u}")));
    }
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Fills in candidate utilities for `kind`.
///
/// `masks` and `entropies` are indexed by pool image index; entropies are
/// only consulted for uncertainty sampling.
pub fn score_candidates<R: Rng>(
    kind: StrategyKind,
    candidates: &mut [Candidate],
    masks: &[Option<&AcquisitionMask>],
    entropies: &[Option<&EntropyMap>],
    rng: &mut R,
) -> Result<()> {
    for c in candidates.iter_mut() {
        let r = c.region;
        let mask = || {
            masks
                .get(r.image_index)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Domain(format!("no acquisition mask for image {}", r.image_index)))
        };
        c.utility = match kind {
            StrategyKind::Rs => utility_rs(rng),
            StrategyKind::Cs => utility_cs(&mask()?.crop(&r)?),
            StrategyKind::Us => {
                let h = entropies
                    .get(r.image_index)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Domain(format!("no entropy map for image {}", r.image_index)))?;
                utility_us(&mask()?.crop(&r)?, &h.crop(&r)?)?
            }
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn cs_examples() {
        assert_eq!(utility_cs(&AcquisitionMask::unrefined(128, 128)), 16384.0);
        let mut m = AcquisitionMask::unrefined(128, 128);
        m.clear_region(&Region::new(0, 10, 20, 64, 64)).unwrap();
        assert_eq!(utility_cs(&m), 12288.0);
        assert_eq!(utility_cs(&AcquisitionMask::from_rows(&[&[1, 0], &[0, 0]]).unwrap()), 1.0);
    }

    #[test]
    fn us_examples() {
        let h = EntropyMap::from_vec(2, 2, vec![3.0, 1.0, 2.0, 7.0]).unwrap();
        let zero = AcquisitionMask::from_rows(&[&[0, 0], &[0, 0]]).unwrap();
        assert_eq!(utility_us(&zero, &h).unwrap(), 0.0);
        let uniform = EntropyMap::constant(2, 2, 4f64.ln());
        let all = AcquisitionMask::unrefined(2, 2);
        assert!((utility_us(&all, &uniform).unwrap() - 5.545177).abs() < 1e-6);
        let m = AcquisitionMask::from_rows(&[&[1, 0], &[1, 1]]).unwrap();
        let h = EntropyMap::from_vec(2, 2, vec![0.5, 9.0, 0.25, 0.25]).unwrap();
        assert_eq!(utility_us(&m, &h).unwrap(), 1.0);
        assert!(matches!(
            utility_us(&m, &EntropyMap::constant(3, 2, 1.0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(select_top_k(&[3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(select_top_k(&[5.0; 4], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_top_k(&[1.0, 2.0, 3.0], 3).unwrap(), vec![0, 1, 2]);
        assert!(select_top_k(&[1.0], 2).is_err());
        assert!(select_top_k(&[1.0, f64::NAN], 1).is_err());
    }

    #[test]
    fn candidate_sampling() {
        let dims = [(0, 256, 256), (3, 256, 256)];
        let mut rng = seed::rng_for(1, &[]);
        let c = sample_candidates(&dims, 128, 64, &mut rng).unwrap();
        assert_eq!(c.len(), 128);
        assert!(c.iter().all(|c| c.region.check_within(256, 256).is_ok() && c.region.w == 64));
        assert!(c.iter().all(|c| [0, 3].contains(&c.region.image_index)));
        let again = sample_candidates(&dims, 128, 64, &mut seed::rng_for(1, &[])).unwrap();
        assert_eq!(c, again);

        let single = sample_candidates(&[(0, 128, 128)], 10, 128, &mut rng).unwrap();
        assert!(single.iter().all(|c| c.region == Region::new(0, 0, 0, 128, 128)));
        assert!(sample_candidates(&dims, 4, 300, &mut rng).is_err());
    }

    #[test]
    fn random_scores() {
        let a: Vec<f64> = (0..100).scan(seed::rng_for(2, &[]), |r, _| Some(utility_rs(r))).collect();
        let b: Vec<f64> = (0..100).scan(seed::rng_for(2, &[]), |r, _| Some(utility_rs(r))).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn random_selection_is_uniform() {
        // binomial oracle: each of 128 candidates picked with p = 16/128
        let (n, k, trials) = (128, 16, 10_000);
        let mut rng = seed::rng_for(99, &[]);
        let mut hits = vec![0usize; n];
        for _ in 0..trials {
            let u: Vec<f64> = (0..n).map(|_| utility_rs(&mut rng)).collect();
            for i in select_top_k(&u, k).unwrap() {
                hits[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        // 128 simultaneous 3-sigma checks: about 0.35 excursions are expected
        // under uniformity, three or more has probability ~0.005
        let outside: Vec<(usize, f64)> = hits
            .iter()
            .map(|&h| h as f64 / trials as f64)
            .enumerate()
            .filter(|&(_, f)| (f - p).abs() > 3.0 * sigma)
            .collect();
        assert!(outside.len() <= 2, "outside 3 sigma: {outside:?}");
        assert!(outside.iter().all(|&(_, f)| (f - p).abs() <= 4.0 * sigma), "{outside:?}");
        assert_eq!(hits.iter().sum::<usize>(), k * trials);
    }

    fn brute_best_sum(u: &[f64], k: usize) -> f64 {
        fn rec(u: &[f64], k: usize, start: usize, acc: f64, best: &mut f64) {
            if k == 0 {
                *best = best.max(acc);
                return;
            }
            for i in start..u.len() {
                rec(u, k - 1, i + 1, acc + u[i], best);
            }
        }
        let mut best = f64::NEG_INFINITY;
        rec(u, k, 0, 0.0, &mut best);
        best
    }

    proptest! {
        #[test]
        fn top_k_maximizes_sum(u in proptest::collection::vec(0u32..20, 1..=12), k in 1usize..=4) {
            prop_assume!(k <= u.len());
            let u: Vec<f64> = u.into_iter().map(f64::from).collect();
            let s = select_top_k(&u, k).unwrap();
            prop_assert_eq!(s.len(), k);
            let sum: f64 = s.iter().map(|&i| u[i]).sum();
            prop_assert_eq!(sum, brute_best_sum(&u, k));
        }

        #[test]
        fn coverage_is_uncertainty_with_unit_entropy(bits in proptest::collection::vec(0u8..2, 36), hv in proptest::collection::vec(0.0f64..1.4, 36)) {
            let m = AcquisitionMask::from_vec(6, 6, bits).unwrap();
            let h = EntropyMap::from_vec(6, 6, hv).unwrap();
            prop_assert_eq!(utility_cs(&m), utility_us(&m, &EntropyMap::constant(6, 6, 1.0)).unwrap());
            let us = utility_us(&m, &h).unwrap();
            prop_assert!(us >= 0.0 && us <= utility_cs(&m) * 4f64.ln() + 1e-12);
            // zeroing a mask entry never raises the score
            let mut fewer = m.bits().to_vec();
            if let Some(p) = fewer.iter().position(|&b| b == 1) { fewer[p] = 0; }
            let m2 = AcquisitionMask::from_vec(6, 6, fewer).unwrap();
            prop_assert!(utility_us(&m2, &h).unwrap() <= us);
        }

        #[test]
        fn scaling_entropy_keeps_selection(hv in proptest::collection::vec(0u32..8, 64), lambda in prop_oneof![Just(0.5f64), Just(2.0), Just(4.0), Just(0.25)]) {
            // dyadic factors keep products exact so ties survive scaling
            let h = EntropyMap::from_vec(8, 8, hv.into_iter().map(|v| v as f64 * 0.125).collect()).unwrap();
            let masks = [Some(&AcquisitionMask::unrefined(8, 8))];
            let mut rng = seed::rng_for(5, &[]);
            let mut c = sample_candidates(&[(0, 8, 8)], 12, 3, &mut rng).unwrap();
            let mut d = c.clone();
            let scaled = h.scaled(lambda);
            score_candidates(StrategyKind::Us, &mut c, &masks, &[Some(&h)], &mut rng).unwrap();
            score_candidates(StrategyKind::Us, &mut d, &masks, &[Some(&scaled)], &mut rng).unwrap();
            let uc: Vec<f64> = c.iter().map(|c| c.utility).collect();
            let ud: Vec<f64> = d.iter().map(|c| c.utility).collect();
            prop_assert_eq!(select_top_k(&uc, 4).unwrap(), select_top_k(&ud, 4).unwrap());
        }
    }
}
