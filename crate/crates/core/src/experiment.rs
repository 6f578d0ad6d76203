//! Active-learning cycles and the repeated leave-one-out harness.
//!
//! A fold holds one pool image out for evaluation, coarsens the labels of the
//! others, and then alternates: score candidate areas with the current model,
//! let the oracle refine the best `k`, retrain, evaluate. Every random stream
//! is derived from `(seed, repeat, fold, cycle, purpose)`, so records do not
//! depend on scheduling.

use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse::{simulate_coarse, CoarseSimConfig};
use crate::dataset::Pool;
use crate::error::{Error, Result};
use crate::oracle::RefinementLedger;
use crate::predictor::{entropy_map, EntropyMap, Predictor, PredictorConfig};
use crate::raster::LabelRaster;
use crate::seed::{self, tag};
use crate::strategies::{sample_candidates, score_candidates, select_top_k, StrategyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_candidates: usize,
    pub k_select: usize,
    pub cycles: usize,
    pub strategy: StrategyKind,
    pub repeats: usize,
    pub candidate_size: usize,
    pub predictor: PredictorConfig,
    pub coarse: CoarseSimConfig,
    pub seed: u64,
    /// Stop a fold early once this acquisition rate is reached.
    pub budget: Option<f64>,
    /// Probability that the oracle leaves a pixel's label as it was.
    pub oracle_keep_prob: f64,
    /// Record wall time per cycle; off yields byte-reproducible tables.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_candidates: 128,
            k_select: 16,
            cycles: 30,
            strategy: StrategyKind::Us,
            repeats: 5,
            candidate_size: 128,
            predictor: PredictorConfig::default(),
            coarse: CoarseSimConfig::default(),
            seed: 0,
            budget: None,
            oracle_keep_prob: 0.0,
            timing: true,
        }
    }
}

impl ExperimentConfig {
    /// Laptop-scale settings for a pool of 256x256 images: 64-pixel
    /// candidates, `N = 32`, `K = 4`, 15 cycles, and a predictor trained on
    /// 64-pixel chips with a larger step size.
    pub fn desk() -> Self {
        Self {
            n_candidates: 32,
            k_select: 4,
            cycles: 15,
            candidate_size: 64,
            predictor: PredictorConfig {
                chip_size: 64,
                chips_per_epoch: 8,
                learning_rate: 0.05,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(Error::config("n_candidates", "must be at least 1"));
        }
        if self.k_select == 0 || self.k_select > self.n_candidates {
            return Err(Error::config("k_select", "must lie in 1..=n_candidates"));
        }
        if self.cycles == 0 {
            return Err(Error::config("cycles", "must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.candidate_size == 0 {
            return Err(Error::config("candidate_size", "must be at least 1"));
        }
        if let Some(b) = self.budget {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::config("budget", "must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.oracle_keep_prob) {
            return Err(Error::config("oracle_keep_prob", "must lie in [0, 1]"));
        }
        self.predictor.validate()?;
        self.coarse.validate()
    }
}

/// Metrics of one cycle of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub repeat: usize,
    pub fold: usize,
    pub cycle: usize,
    pub strategy: StrategyKind,
    pub accuracy: f64,
    pub acquisition_rate: f64,
    pub newly_refined: usize,
    pub seconds: f64,
}

impl CycleRecord {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &CycleRecord) -> bool {
        CycleRecord {
            seconds: other.seconds,
            ..self.clone()
        } == *other
    }
}

/// Fraction of pixels whose labels agree.
pub fn pixel_accuracy(predicted: &LabelRaster, truth: &LabelRaster) -> Result<f64> {
    predicted.same_shape(truth)?;
    let agree = predicted
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(agree as f64 / truth.len() as f64)
}

/// Refined fraction of the ledger's training pixels.
pub fn acquisition_rate(ledger: &RefinementLedger, total_training_pixels: usize) -> Result<f64> {
    if total_training_pixels == 0 {
        return Err(Error::Domain("no training pixels".into()));
    }
    Ok(ledger.refined_pixels() as f64 / total_training_pixels as f64)
}

/// Builds a fresh predictor for a fold.
pub type PredictorFactory<'a> = dyn Fn() -> Result<Box<dyn Predictor>> + Sync + 'a;

/// Records and end state of one fold.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub records: Vec<CycleRecord>,
    /// Training labels after the last cycle, indexed by pool image; the
    /// held-out slot is `None`.
    pub final_labels: Vec<Option<LabelRaster>>,
    pub ledger: RefinementLedger,
}

/// Coarse labels for pool image `image` in repeat `repeat`; identical across
/// folds and strategies.
pub fn coarse_labels_for(config: &ExperimentConfig, fine: &LabelRaster, repeat: usize, image: usize) -> Result<LabelRaster> {
    let cfg = CoarseSimConfig {
        seed: seed::derive(config.seed, &[tag::COARSE, repeat as u64, image as u64]) ^ config.coarse.seed,
        ..config.coarse.clone()
    };
    Ok(simulate_coarse(fine, &cfg)?.labels)
}

fn train_cycle(
    predictor: &mut dyn Predictor,
    config: &ExperimentConfig,
    pool: &Pool,
    labels: &[Option<LabelRaster>],
    path: [u64; 3],
) -> Result<()> {
    let (images, labs): (Vec<_>, Vec<_>) = pool
        .iter()
        .zip(labels)
        .filter_map(|((img, _), l)| l.as_ref().map(|l| (img, l)))
        .unzip();
    let cfg = PredictorConfig {
        seed: seed::derive(config.seed, &[tag::TRAIN, path[0], path[1], path[2]]),
        ..config.predictor.clone()
    };
    predictor.train(&images, &labs, &cfg)
}

fn evaluate(predictor: &mut dyn Predictor, pool: &Pool, fold: usize) -> Result<f64> {
    let (img, truth) = &pool[fold];
    let p = predictor.predict_proba(img)?;
    let pred = LabelRaster::from_vec(img.width(), img.height(), truth.num_classes(), p.argmax())?;
    pixel_accuracy(&pred, truth)
}

/// Runs one leave-one-out fold: cycle 0 on coarse labels, then `cycles`
/// rounds of select, refine, retrain and evaluate.
pub fn run_fold(
    config: &ExperimentConfig,
    pool: &Pool,
    repeat: usize,
    fold: usize,
    predictor: &mut dyn Predictor,
) -> Result<FoldRun> {
    config.validate()?;
    if pool.len() < 2 {
        return Err(Error::config("images", "pool needs at least 2 images"));
    }
    if fold >= pool.len() {
        return Err(Error::config("fold", format!("{fold} not below pool size {}", pool.len())));
    }
    let wrap = |cycle: usize| {
        move |e: Error| Error::Cycle {
            repeat,
            fold,
            cycle,
            source: Box::new(e),
        }
    };
    let strategy = config.strategy;
    let train_dims: Vec<(usize, usize, usize)> = pool
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != fold)
        .map(|(i, (img, _))| (i, img.width(), img.height()))
        .collect();
    let total: usize = train_dims.iter().map(|&(_, w, h)| w * h).sum();

    let mut labels: Vec<Option<LabelRaster>> = Vec::with_capacity(pool.len());
    for (i, (_, fine)) in pool.iter().enumerate() {
        labels.push(if i == fold {
            None
        } else {
            Some(coarse_labels_for(config, fine, repeat, i).map_err(wrap(0))?)
        });
    }
    let mut ledger = RefinementLedger::new(
        &pool
            .iter()
            .enumerate()
            .map(|(i, (img, _))| (i != fold).then_some((img.width(), img.height())))
            .collect::<Vec<_>>(),
    );

    let (r, f) = (repeat as u64, fold as u64);
    let mut records = Vec::with_capacity(config.cycles + 1);
    let start = Instant::now();
    train_cycle(predictor, config, pool, &labels, [r, f, 0]).map_err(wrap(0))?;
    let accuracy = evaluate(predictor, pool, fold).map_err(wrap(0))?;
    records.push(CycleRecord {
        repeat,
        fold,
        cycle: 0,
        strategy,
        accuracy,
        acquisition_rate: 0.0,
        newly_refined: 0,
        seconds: if config.timing { start.elapsed().as_secs_f64() } else { 0.0 },
    });

    for cycle in 1..=config.cycles {
        if let Some(budget) = config.budget {
            if acquisition_rate(&ledger, total)? >= budget {
                break;
            }
        }
        let start = Instant::now();
        let c = cycle as u64;
        let mut step = || -> Result<usize> {
            let entropies: Vec<Option<EntropyMap>> = if strategy.needs_entropy() {
                pool.iter()
                    .enumerate()
                    .map(|(i, (img, _))| {
                        if i == fold {
                            Ok(None)
                        } else {
                            Ok(Some(entropy_map(&predictor.predict_proba(img)?)))
                        }
                    })
                    .collect::<Result<_>>()?
            } else {
                vec![None; pool.len()]
            };
            let mut cand_rng = seed::rng_for(config.seed, &[tag::CANDIDATES, r, f, c]);
            let mut candidates =
                sample_candidates(&train_dims, config.n_candidates, config.candidate_size, &mut cand_rng)?;
            let mut util_rng = seed::rng_for(config.seed, &[tag::RANDOM_UTILITY, r, f, c]);
            let entropy_refs: Vec<Option<&EntropyMap>> = entropies.iter().map(|e| e.as_ref()).collect();
            score_candidates(strategy, &mut candidates, &ledger.masks(), &entropy_refs, &mut util_rng)?;
            let utilities: Vec<f64> = candidates.iter().map(|c| c.utility).collect();
            let selected = select_top_k(&utilities, config.k_select)?;

            let mut oracle_rng = seed::rng_for(config.seed, &[tag::ORACLE, r, f, c]);
            let mut newly = 0;
            for idx in selected {
                let region = candidates[idx].region;
                let current = labels[region.image_index]
                    .as_mut()
                    .ok_or_else(|| Error::Domain("candidate on held-out image".into()))?;
                let fine = &pool[region.image_index].1;
                newly += if config.oracle_keep_prob > 0.0 {
                    ledger.refine_noisy(current, fine, &region, cycle, config.oracle_keep_prob, &mut oracle_rng)?
                } else {
                    ledger.refine(current, fine, &region, cycle)?
                };
            }
            Ok(newly)
        };
        let newly = step().map_err(wrap(cycle))?;
        train_cycle(predictor, config, pool, &labels, [r, f, c]).map_err(wrap(cycle))?;
        let accuracy = evaluate(predictor, pool, fold).map_err(wrap(cycle))?;
        records.push(CycleRecord {
            repeat,
            fold,
            cycle,
            strategy,
            accuracy,
            acquisition_rate: acquisition_rate(&ledger, total)?,
            newly_refined: newly,
            seconds: if config.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        });
    }
    Ok(FoldRun {
        records,
        final_labels: labels,
        ledger,
    })
}

/// Runs every (repeat, fold) pair, in parallel on the current rayon pool, and
/// returns records ordered by (repeat, fold, cycle).
pub fn run_experiment(config: &ExperimentConfig, pool: &Pool, factory: &PredictorFactory<'_>) -> Result<Vec<CycleRecord>> {
    config.validate()?;
    if pool.len() < 2 {
        return Err(Error::config("images", "pool needs at least 2 images for leave-one-out"));
    }
    let jobs: Vec<(usize, usize)> = (0..config.repeats)
        .flat_map(|r| (0..pool.len()).map(move |f| (r, f)))
        .collect();
    let runs: Vec<Vec<CycleRecord>> = jobs
        .par_iter()
        .map(|&(r, f)| {
            let mut p = factory()?;
            run_fold(config, pool, r, f, p.as_mut()).map(|run| run.records)
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<CycleRecord> = runs.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.repeat, r.fold, r.cycle));
    Ok(records)
}

pub fn write_records<W: io::Write>(writer: W, records: &[CycleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_records_csv(path: &Path, records: &[CycleRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(io::BufWriter::new(file), records)
}

pub fn read_records<R: io::Read>(reader: R) -> Result<Vec<CycleRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn read_records_csv(path: &Path) -> Result<Vec<CycleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::BaselinePredictor;
    use crate::synth::{generate_pool, SceneSpec};

    fn tiny() -> (ExperimentConfig, Pool) {
        let spec = SceneSpec { width: 32, height: 32, ..Default::default() };
        let pool = generate_pool(1, 3, &spec).unwrap();
        let config = ExperimentConfig {
            n_candidates: 8,
            k_select: 2,
            cycles: 4,
            repeats: 2,
            candidate_size: 8,
            predictor: PredictorConfig {
                chip_size: 16,
                chips_per_epoch: 4,
                epochs: 3,
                ..Default::default()
            },
            coarse: CoarseSimConfig { max_filter: 8, ..Default::default() },
            timing: false,
            ..Default::default()
        };
        (config, pool)
    }

    fn baseline() -> Result<Box<dyn Predictor>> {
        Ok(Box::new(BaselinePredictor::new()))
    }

    #[test]
    fn accuracy_examples() {
        let a = LabelRaster::from_rows(&[&[0, 1], &[2, 3]], 4).unwrap();
        assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
        let b = LabelRaster::from_rows(&[&[1, 0], &[3, 2]], 4).unwrap();
        assert_eq!(pixel_accuracy(&a, &b).unwrap(), 0.0);
        let c = LabelRaster::from_rows(&[&[0, 1], &[3, 2]], 4).unwrap();
        assert_eq!(pixel_accuracy(&a, &c).unwrap(), 0.5);
        let d = LabelRaster::filled(1, 4, 4, 0).unwrap();
        assert!(pixel_accuracy(&a, &d).is_err());
    }

    #[test]
    fn acquisition_rate_examples() {
        let mut ledger = RefinementLedger::new(&[Some((256, 256)), Some((256, 256)), None]);
        assert_eq!(acquisition_rate(&ledger, 131072).unwrap(), 0.0);
        let fine = LabelRaster::filled(256, 256, 4, 1).unwrap();
        let mut cur = LabelRaster::filled(256, 256, 4, 0).unwrap();
        ledger.refine(&mut cur, &fine, &crate::raster::Region::new(0, 0, 0, 128, 128), 1).unwrap();
        assert_eq!(acquisition_rate(&ledger, 131072).unwrap(), 0.125);
        for i in 0..2 {
            ledger.refine(&mut cur, &fine, &crate::raster::Region::full(i, 256, 256), 2).unwrap();
        }
        assert_eq!(acquisition_rate(&ledger, 131072).unwrap(), 1.0);
    }

    #[test]
    fn experiment_shape_and_determinism() {
        let (config, pool) = tiny();
        let a = run_experiment(&config, &pool, &baseline).unwrap();
        assert_eq!(a.len(), 2 * 3 * 5);
        assert_eq!(a, run_experiment(&config, &pool, &baseline).unwrap());
        for w in a.windows(2) {
            if (w[0].repeat, w[0].fold) == (w[1].repeat, w[1].fold) {
                assert!(w[1].acquisition_rate >= w[0].acquisition_rate);
                assert_eq!(w[1].cycle, w[0].cycle + 1);
            }
        }
        let rs = run_experiment(&ExperimentConfig { strategy: StrategyKind::Rs, ..config.clone() }, &pool, &baseline).unwrap();
        for (x, y) in a.iter().zip(&rs).filter(|(x, _)| x.cycle == 0) {
            assert_eq!((x.accuracy, x.acquisition_rate), (y.accuracy, y.acquisition_rate));
        }
    }

    #[test]
    fn budget_stops_early() {
        let (config, pool) = tiny();
        let config = ExperimentConfig { budget: Some(0.05), repeats: 1, ..config };
        let run = run_fold(&config, &pool, 0, 1, &mut BaselinePredictor::new()).unwrap();
        let last = run.records.last().unwrap();
        assert!(last.acquisition_rate >= 0.05 || run.records.len() == config.cycles + 1);
        assert!(run.records.len() < config.cycles + 1);
    }

    #[test]
    fn csv_round_trip_and_columns() {
        let (config, pool) = tiny();
        let run = run_fold(&ExperimentConfig { cycles: 1, ..config }, &pool, 0, 0, &mut BaselinePredictor::new()).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &run.records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("repeat,fold,cycle,strategy,accuracy,acquisition_rate,newly_refined,seconds\n"));
        assert!(text.lines().nth(1).unwrap().contains(",us,"));
        assert_eq!(read_records(buf.as_slice()).unwrap(), run.records);
    }

    #[test]
    fn invalid_configs() {
        let (config, pool) = tiny();
        let bad = ExperimentConfig { k_select: 9, ..config.clone() };
        assert!(matches!(run_experiment(&bad, &pool, &baseline), Err(Error::Config { .. })));
        assert!(run_fold(&config, &pool, 0, 3, &mut BaselinePredictor::new()).is_err());
        let too_big = ExperimentConfig { candidate_size: 64, ..config };
        let err = run_fold(&too_big, &pool, 0, 0, &mut BaselinePredictor::new()).unwrap_err();
        assert!(matches!(err, Error::Cycle { cycle: 1, .. }), "{err}");
    }
}
