//! Sweeps comparing an OVA system against a synchronized softmax baseline
//! while one factor varies: the negative sampling fraction, the per-class
//! dataset size, the number of classes, or the staleness of negative copies.
//!
//! Every `(sweep_value, seed)` point regenerates its corpus from the seed,
//! so points are independent jobs. Results are assembled by key and are
//! therefore independent of execution order.

mod output;
mod stats;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asynchrony::{compute_alpha, EmptyCopyPolicy};
use crate::density::DEFAULT_VARIANCE;
use crate::embedding::{EmbeddingTable, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::models::{evaluate, train_multiclass, train_ova, TrainConfig};
use crate::registry::{
    derive_seed, generate_evolving_corpus, generate_synthetic_corpus, merge_classes,
    split_speaker_independent, CorpusSpec, EvolutionSpec, Registry,
};

pub use output::{write_outputs, OutputFiles};
pub use stats::{mean, pearson};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    AsyncFraction,
    DataSize,
    ClassCount,
    Staleness,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::AsyncFraction => "async",
            SweepKind::DataSize => "size",
            SweepKind::ClassCount => "classes",
            SweepKind::Staleness => "staleness",
        }
    }
}

/// Settings shared by every point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    /// Number of classes (for class-count sweeps: classes before merging).
    pub classes: usize,
    pub per_class: usize,
    pub vocab_per_class: usize,
    pub overlap: f64,
    pub sentence_len: (usize, usize),
    pub dimension: usize,
    /// Seed of the hashed word embeddings; fixed across sweep seeds.
    pub embedding_seed: u64,
    pub variance: f64,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Sampling fraction held fixed by the size and class-count sweeps.
    pub fraction: f64,
    pub split: (f64, f64, f64),
    /// Early-stop on the dev split.
    pub use_dev: bool,
    /// Staleness sweeps: months of evolution; copies are taken at the last.
    pub months: u32,
    pub monthly_growth: f64,
    pub monthly_drift: f64,
    /// Staleness sweeps: `(class, month)` launches after month 0.
    pub launches: Vec<(usize, u32)>,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 500,
            vocab_per_class: 12,
            overlap: 0.2,
            sentence_len: (3, 8),
            dimension: DEFAULT_DIMENSION,
            embedding_seed: 0,
            variance: DEFAULT_VARIANCE,
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            fraction: 0.3,
            split: (0.8, 0.1, 0.1),
            use_dev: true,
            months: 8,
            monthly_growth: 0.10,
            monthly_drift: 0.05,
            launches: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub base: BaseConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("sweep grid is empty"));
        }
        let up = self.grid.windows(2).all(|w| w[1] > w[0]);
        let down = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::invalid("sweep grid must be strictly monotone"));
        }
        if self.base.seeds.is_empty() {
            return Err(Error::invalid("no seeds given"));
        }
        let integral = |v: f64| v >= 0.0 && v.fract() == 0.0;
        for &v in &self.grid {
            let ok = match self.kind {
                SweepKind::AsyncFraction => v > 0.0 && v <= 1.0,
                SweepKind::DataSize => integral(v) && v >= 3.0,
                SweepKind::ClassCount => integral(v) && v >= 2.0 && v as usize <= self.base.classes,
                SweepKind::Staleness => integral(v),
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "grid value {v} is not valid for a {} sweep",
                    self.kind.name()
                )));
            }
        }
        if !(self.base.fraction > 0.0 && self.base.fraction <= 1.0) {
            return Err(Error::invalid("fixed fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

/// One `(sweep_value, seed)` observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub seed: u64,
    pub classes: usize,
    pub fraction: f64,
    pub staleness: u32,
    pub ova_error: f64,
    pub mc_error: f64,
    /// `ova_error - mc_error`.
    pub gap: f64,
    /// `gap / mc_error`; `None` when the baseline makes no errors.
    pub relative_gap: Option<f64>,
    pub alpha: f64,
    pub alpha_abs: f64,
    pub skipped_pairs: Vec<(usize, usize)>,
}

/// Seed-mean of the rows sharing one sweep value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub sweep_value: f64,
    pub runs: usize,
    pub ova_error: f64,
    pub mc_error: f64,
    pub gap: f64,
    /// Mean over the runs where it is defined.
    pub relative_gap: Option<f64>,
    pub alpha: f64,
    pub alpha_abs: f64,
    pub skipped_pairs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub sweep_value: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub means: Vec<MeanRow>,
    /// Pearson r between seed-mean `alpha_abs` and the seed-mean gap
    /// (relative gap for staleness sweeps). `None` when undefined.
    pub correlation_abs: Option<f64>,
    pub failures: Vec<PointFailure>,
}

impl SweepResult {
    pub fn mean_at(&self, value: f64) -> Option<&MeanRow> {
        self.means.iter().find(|m| m.sweep_value == value)
    }

    /// The gap series the correlation is computed on.
    pub fn primary_gap(&self, m: &MeanRow) -> Option<f64> {
        match self.config.kind {
            SweepKind::Staleness => m.relative_gap,
            _ => Some(m.gap),
        }
    }
}

/// Age in months of the negative data held by each consumer model at a
/// staleness bound of `n`: ages are spread evenly over `0..=n` and assigned
/// to consumers in a seeded random order, then capped so that no model is
/// older than its own class.
pub fn consumer_ages(n: u32, classes: usize, launches: &[(usize, u32)], now: u32, seed: u64) -> Vec<u32> {
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut ages = vec![0u32; classes];
    for (rank, &consumer) in order.iter().enumerate() {
        let spread = if classes > 1 {
            (n as f64 * rank as f64 / (classes - 1) as f64).round() as u32
        } else {
            0
        };
        let launch = launches
            .iter()
            .find(|(c, _)| *c == consumer)
            .map_or(0, |(_, m)| *m);
        ages[consumer] = spread.min(now.saturating_sub(launch));
    }
    ages
}

/// Runs one sweep point end to end.
pub fn run_point(kind: SweepKind, value: f64, seed: u64, base: &BaseConfig) -> Result<SweepRow> {
    let table = EmbeddingTable::hashed(base.dimension, base.embedding_seed)?;
    let corpus_seed = derive_seed(seed, 0);
    let split_seed = derive_seed(seed, 1);
    let copy_seed = derive_seed(seed, 2);
    let merge_seed = derive_seed(seed, 3);
    let train_seed = derive_seed(seed, 4);
    let spec = |classes: usize, per_class: usize| CorpusSpec {
        classes,
        per_class,
        vocab_per_class: base.vocab_per_class,
        overlap: base.overlap,
        sentence_len: base.sentence_len,
        seed: corpus_seed,
    };

    let (datasets, fraction, staleness) = match kind {
        SweepKind::AsyncFraction => (
            generate_synthetic_corpus(&spec(base.classes, base.per_class))?,
            value,
            0,
        ),
        SweepKind::DataSize => (
            generate_synthetic_corpus(&spec(base.classes, value as usize))?,
            base.fraction,
            0,
        ),
        SweepKind::ClassCount => {
            let full = generate_synthetic_corpus(&spec(base.classes, base.per_class))?;
            (merge_classes(&full, value as usize, merge_seed)?, base.fraction, 0)
        }
        SweepKind::Staleness => {
            let evolution = EvolutionSpec {
                months: base.months,
                growth: base.monthly_growth,
                drift: base.monthly_drift,
                launches: base.launches.clone(),
            };
            (
                generate_evolving_corpus(&spec(base.classes, base.per_class), &evolution)?,
                1.0,
                value as u32,
            )
        }
    };

    let splits = split_speaker_independent(&datasets, base.split, split_seed)?;
    let classes = splits.train.len();
    let mut registry = Registry::new(splits.train.clone())?;
    match kind {
        SweepKind::Staleness => {
            let ages = consumer_ages(staleness, classes, &base.launches, base.months, copy_seed);
            registry.materialize_stale(base.months, |l| ages[l])?;
        }
        _ => registry.materialize_subsampled(fraction, copy_seed)?,
    }

    let dev = splits.dev_utterances();
    let dev = base.use_dev.then_some(dev.as_slice());
    let test = splits.test_utterances();

    let ova = train_ova(&registry, &table, &base.train, train_seed, dev)?;
    let mc = train_multiclass(registry.datasets(), &table, &base.train, train_seed, dev)?;
    let ova_eval = evaluate(
        |u| Ok(ova.predict_embedded(table.embed_sentence(&u.tokens)?.as_slice())),
        &test,
    )?;
    let mc_eval = evaluate(|u| mc.predict(&u.tokens, &table), &test)?;
    let report = compute_alpha(&registry, &table, base.variance, EmptyCopyPolicy::Skip)?;

    let gap = ova_eval.error_rate - mc_eval.error_rate;
    Ok(SweepRow {
        sweep_value: value,
        seed,
        classes,
        fraction,
        staleness,
        ova_error: ova_eval.error_rate,
        mc_error: mc_eval.error_rate,
        gap,
        relative_gap: (mc_eval.error_rate > 0.0).then(|| gap / mc_eval.error_rate),
        alpha: report.alpha,
        alpha_abs: report.alpha_abs,
        skipped_pairs: report.skipped_pairs,
    })
}

fn aggregate(grid: &[f64], rows: &[SweepRow]) -> Vec<MeanRow> {
    grid.iter()
        .filter_map(|&v| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.sweep_value == v).collect();
            if at.is_empty() {
                return None;
            }
            let avg = |f: &dyn Fn(&SweepRow) -> f64| mean(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
            let rel: Vec<f64> = at.iter().filter_map(|r| r.relative_gap).collect();
            Some(MeanRow {
                sweep_value: v,
                runs: at.len(),
                ova_error: avg(&|r| r.ova_error),
                mc_error: avg(&|r| r.mc_error),
                gap: avg(&|r| r.gap),
                relative_gap: (!rel.is_empty()).then(|| mean(&rel)),
                alpha: avg(&|r| r.alpha),
                alpha_abs: avg(&|r| r.alpha_abs),
                skipped_pairs: avg(&|r| r.skipped_pairs.len() as f64),
            })
        })
        .collect()
}

/// Runs every `(value, seed)` point of the sweep in parallel.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let jobs: Vec<(f64, u64)> = config
        .grid
        .iter()
        .flat_map(|&v| config.base.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes: Vec<((usize, usize), Result<SweepRow>)> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let key = (
                config.grid.iter().position(|&g| g == v).unwrap_or(0),
                config.base.seeds.iter().position(|&x| x == s).unwrap_or(0),
            );
            (key, run_point(config.kind, v, s, &config.base))
        })
        .collect();
    let keyed: BTreeMap<(usize, usize), Result<SweepRow>> = outcomes.into_iter().collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((gi, si), outcome) in keyed {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(PointFailure {
                sweep_value: config.grid[gi],
                seed: config.base.seeds[si],
                message: e.to_string(),
            }),
        }
    }
    let means = aggregate(&config.grid, &rows);
    let mut result = SweepResult {
        config: config.clone(),
        rows,
        means,
        correlation_abs: None,
        failures,
    };
    let pairs: Option<Vec<(f64, f64)>> = result
        .means
        .iter()
        .map(|m| result.primary_gap(m).map(|g| (m.alpha_abs, g)))
        .collect();
    if let Some(pairs) = pairs.filter(|p| p.len() >= 2) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        result.correlation_abs = pearson(&xs, &ys)?;
    }
    Ok(result)
}

fn run_kind(kind: SweepKind, grid: Vec<f64>, base: BaseConfig) -> Result<SweepResult> {
    run_sweep(&SweepConfig { kind, grid, base })
}

/// Sub-sampling fraction sweep.
pub fn run_async_sweep(grid: Vec<f64>, base: BaseConfig) -> Result<SweepResult> {
    run_kind(SweepKind::AsyncFraction, grid, base)
}

/// Per-class dataset size sweep at the fixed fraction.
pub fn run_size_sweep(grid: Vec<f64>, base: BaseConfig) -> Result<SweepResult> {
    run_kind(SweepKind::DataSize, grid, base)
}

/// Merged class-count sweep at the fixed fraction.
pub fn run_class_sweep(grid: Vec<f64>, base: BaseConfig) -> Result<SweepResult> {
    run_kind(SweepKind::ClassCount, grid, base)
}

/// Negative-copy staleness sweep over an evolving corpus.
pub fn run_staleness_sweep(grid: Vec<f64>, base: BaseConfig) -> Result<SweepResult> {
    run_kind(SweepKind::Staleness, grid, base)
}
