//! Per-class datasets, their version timelines, and the copies of each
//! dataset that other classes' models consume as negative data.
//!
//! `D_k` is [`Dataset`] `k`; the copy of `D_k` held by consumer model `l`
//! is the [`DatasetCopy`] keyed `(k, l)` in the [`Registry`].

mod corpus;
mod manifest;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corpus::{generate_evolving_corpus, generate_synthetic_corpus, CorpusSpec, EvolutionSpec};
pub use manifest::{
    read_corpus_file, write_corpus_file, CopyEntry, DatasetEntry, RegistryManifest, VersionEntry,
};

/// One labeled utterance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub class_label: usize,
}

impl Utterance {
    pub fn new(tokens: Vec<String>, class_label: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("utterance has no tokens"));
        }
        Ok(Self {
            tokens,
            class_label,
        })
    }
}

/// A dataset's content at one point in time (integer months).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Version {
    pub timestamp: u32,
    pub utterances: Vec<Utterance>,
}

/// The positive data of one class with its version history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    class_id: usize,
    versions: Vec<Version>,
}

impl Dataset {
    /// A dataset with a single version at month 0.
    pub fn new(class_id: usize, utterances: Vec<Utterance>) -> Result<Self> {
        Self::with_versions(
            class_id,
            vec![Version {
                timestamp: 0,
                utterances,
            }],
        )
    }

    pub fn with_versions(class_id: usize, versions: Vec<Version>) -> Result<Self> {
        if versions.is_empty() {
            return Err(Error::invalid(format!("dataset {class_id} has no versions")));
        }
        for pair in versions.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::invalid(format!(
                    "dataset {class_id}: version timestamps must strictly increase ({} then {})",
                    pair[0].timestamp, pair[1].timestamp
                )));
            }
        }
        for v in &versions {
            if let Some(u) = v.utterances.iter().find(|u| u.class_label != class_id) {
                return Err(Error::invalid(format!(
                    "dataset {class_id} contains an utterance labeled {}",
                    u.class_label
                )));
            }
            if v.utterances.iter().any(|u| u.tokens.is_empty()) {
                return Err(Error::invalid(format!("dataset {class_id} contains an empty utterance")));
            }
        }
        Ok(Self { class_id, versions })
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn versions(&self) -> &[Version] {
        &self.versions
    }

    pub fn latest(&self) -> &Version {
        self.versions.last().expect("dataset has at least one version")
    }

    /// Newest version with `timestamp <= t`.
    pub fn version_at(&self, t: u32) -> Option<&Version> {
        self.versions.iter().rev().find(|v| v.timestamp <= t)
    }

    /// Appends a version; its timestamp must exceed the current latest.
    pub fn push_version(&mut self, timestamp: u32, utterances: Vec<Utterance>) -> Result<()> {
        let mut versions = self.versions.clone();
        versions.push(Version {
            timestamp,
            utterances,
        });
        *self = Self::with_versions(self.class_id, versions)?;
        Ok(())
    }
}

/// How a copy was derived from its source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sampling_fraction: f64,
    pub staleness_months: u32,
    pub seed: u64,
    /// Timestamp of the source version the copy was taken from, if any.
    pub source_timestamp: Option<u32>,
}

/// The copy `D_k^l` of dataset `k` used as negatives by model `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCopy {
    pub source_class: usize,
    pub consumer_class: usize,
    pub utterances: Vec<Utterance>,
    pub provenance: Provenance,
    /// Set when no source version was old enough to snapshot.
    pub flagged_empty: bool,
}

impl DatasetCopy {
    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

fn check_pair(source: usize, consumer: usize) -> Result<()> {
    if source == consumer {
        return Err(Error::invalid(format!(
            "a copy of dataset {source} cannot be consumed by its own model"
        )));
    }
    Ok(())
}

/// ⌈fraction · n⌉, tolerant of representation error in the product.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Derives an independent seed for stream `stream` of a base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Uniform sample without replacement of ⌈fraction·n⌉ utterances from the
/// latest version. Selected utterances keep their source order.
///
/// The sample is a prefix of a seeded permutation, so copies drawn with the
/// same seed are nested: a smaller fraction picks a subset of a larger one.
pub fn subsample(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
    consumer_class: usize,
) -> Result<DatasetCopy> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sampling fraction must be in (0, 1], got {fraction}")));
    }
    check_pair(dataset.class_id(), consumer_class)?;
    let latest = dataset.latest();
    let n = latest.utterances.len();
    if n == 0 {
        return Err(Error::invalid(format!(
            "dataset {} has an empty latest version",
            dataset.class_id()
        )));
    }
    let take = ceil_count(fraction, n).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = (0..n).collect();
    picked.shuffle(&mut rng);
    picked.truncate(take);
    picked.sort_unstable();
    Ok(DatasetCopy {
        source_class: dataset.class_id(),
        consumer_class,
        utterances: picked.into_iter().map(|i| latest.utterances[i].clone()).collect(),
        provenance: Provenance {
            sampling_fraction: fraction,
            staleness_months: 0,
            seed,
            source_timestamp: Some(latest.timestamp),
        },
        flagged_empty: false,
    })
}

/// Snapshot of the newest version at least `staleness` months older than
/// `now`. Yields an empty, flagged copy if the dataset did not exist yet.
pub fn stale_snapshot(
    dataset: &Dataset,
    now: u32,
    staleness: u32,
    consumer_class: usize,
) -> Result<DatasetCopy> {
    check_pair(dataset.class_id(), consumer_class)?;
    if dataset.version_at(now).is_none() {
        return Err(Error::invalid(format!(
            "dataset {} has no version at or before month {now}",
            dataset.class_id()
        )));
    }
    let chosen = now
        .checked_sub(staleness)
        .and_then(|cutoff| dataset.version_at(cutoff));
    let provenance = Provenance {
        sampling_fraction: 1.0,
        staleness_months: staleness,
        seed: 0,
        source_timestamp: chosen.map(|v| v.timestamp),
    };
    Ok(DatasetCopy {
        source_class: dataset.class_id(),
        consumer_class,
        utterances: chosen.map(|v| v.utterances.clone()).unwrap_or_default(),
        provenance,
        flagged_empty: chosen.is_none(),
    })
}

/// Train/dev/test partition of every class.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Dataset>,
    pub dev: Vec<Dataset>,
    pub test: Vec<Dataset>,
}

impl Splits {
    /// All latest-version dev utterances, class by class.
    pub fn dev_utterances(&self) -> Vec<Utterance> {
        flatten_latest(&self.dev)
    }

    pub fn test_utterances(&self) -> Vec<Utterance> {
        flatten_latest(&self.test)
    }
}

pub fn flatten_latest(datasets: &[Dataset]) -> Vec<Utterance> {
    datasets
        .iter()
        .flat_map(|d| d.latest().utterances.iter().cloned())
        .collect()
}

/// Partitions each class's utterances into train/dev/test.
///
/// Synthetic corpora carry no speaker identity, so the partition is by
/// utterance. Assignment is made on the latest version; earlier versions
/// must be prefixes of it (append-only history) and inherit the same
/// assignment by position.
pub fn split_speaker_independent(
    datasets: &[Dataset],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Splits> {
    let (r_train, r_dev, r_test) = ratios;
    if !(r_train > 0.0 && r_dev > 0.0 && r_test > 0.0) {
        return Err(Error::invalid("split ratios must be positive"));
    }
    if (r_train + r_dev + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split ratios must sum to 1"));
    }
    let mut splits = Splits {
        train: Vec::with_capacity(datasets.len()),
        dev: Vec::with_capacity(datasets.len()),
        test: Vec::with_capacity(datasets.len()),
    };
    for d in datasets {
        let latest = &d.latest().utterances;
        let n = latest.len();
        if n < 3 {
            return Err(Error::invalid(format!(
                "class {} has {n} utterances; at least 3 are needed to split",
                d.class_id()
            )));
        }
        for v in d.versions() {
            if v.utterances[..] != latest[..v.utterances.len().min(n)] {
                return Err(Error::invalid(format!(
                    "class {}: version {} is not a prefix of the latest version",
                    d.class_id(),
                    v.timestamp
                )));
            }
        }
        let n_dev = ((n as f64 * r_dev).round() as usize).max(1);
        let n_test = ((n as f64 * r_test).round() as usize).max(1);
        if n_dev + n_test >= n {
            return Err(Error::invalid(format!(
                "class {} is too small for the requested ratios",
                d.class_id()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, d.class_id() as u64));
        order.shuffle(&mut rng);
        // 0 = train, 1 = dev, 2 = test
        let mut part = vec![0u8; n];
        for &i in &order[..n_dev] {
            part[i] = 1;
        }
        for &i in &order[n_dev..n_dev + n_test] {
            part[i] = 2;
        }
        let mut per_part: [Vec<Version>; 3] = Default::default();
        for v in d.versions() {
            for (p, out) in per_part.iter_mut().enumerate() {
                out.push(Version {
                    timestamp: v.timestamp,
                    utterances: v
                        .utterances
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| part[*i] as usize == p)
                        .map(|(_, u)| u.clone())
                        .collect(),
                });
            }
        }
        let [train, dev, test] = per_part;
        splits.train.push(Dataset::with_versions(d.class_id(), train)?);
        splits.dev.push(Dataset::with_versions(d.class_id(), dev)?);
        splits.test.push(Dataset::with_versions(d.class_id(), test)?);
    }
    Ok(splits)
}

/// Randomly groups `K` classes into `target_k` non-empty groups and unions
/// each group's data under the group id.
pub fn merge_classes(datasets: &[Dataset], target_k: usize, seed: u64) -> Result<Vec<Dataset>> {
    let k = datasets.len();
    if target_k < 2 {
        return Err(Error::invalid("merged class count must be at least 2"));
    }
    if target_k > k {
        return Err(Error::invalid(format!("cannot merge {k} classes into {target_k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut group_of = vec![0usize; k];
    for (pos, &class) in order.iter().enumerate() {
        group_of[class] = if pos < target_k {
            pos
        } else {
            rng.gen_range(0..target_k)
        };
    }
    (0..target_k)
        .map(|g| {
            let members: Vec<&Dataset> = datasets
                .iter()
                .enumerate()
                .filter(|(c, _)| group_of[*c] == g)
                .map(|(_, d)| d)
                .collect();
            let mut stamps: Vec<u32> = members
                .iter()
                .flat_map(|d| d.versions().iter().map(|v| v.timestamp))
                .collect();
            stamps.sort_unstable();
            stamps.dedup();
            let versions = stamps
                .into_iter()
                .map(|t| Version {
                    timestamp: t,
                    utterances: members
                        .iter()
                        .filter_map(|d| d.version_at(t))
                        .flat_map(|v| v.utterances.iter())
                        .map(|u| Utterance {
                            tokens: u.tokens.clone(),
                            class_label: g,
                        })
                        .collect(),
                })
                .collect();
            Dataset::with_versions(g, versions)
        })
        .collect()
}

/// The full set of datasets and their copies.
#[derive(Clone, Debug)]
pub struct Registry {
    datasets: Vec<Dataset>,
    copies: BTreeMap<(usize, usize), DatasetCopy>,
}

impl Registry {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        if datasets.len() < 2 {
            return Err(Error::invalid("a registry needs at least 2 classes"));
        }
        for (i, d) in datasets.iter().enumerate() {
            if d.class_id() != i {
                return Err(Error::invalid(format!(
                    "dataset at position {i} has class id {}",
                    d.class_id()
                )));
            }
        }
        Ok(Self {
            datasets,
            copies: BTreeMap::new(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.datasets.len()
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn dataset(&self, k: usize) -> &Dataset {
        &self.datasets[k]
    }

    /// Replaces the live dataset `k` without touching any copy.
    pub fn replace_dataset(&mut self, dataset: Dataset) -> Result<()> {
        let k = dataset.class_id();
        if k >= self.datasets.len() {
            return Err(Error::invalid(format!("no class {k} in registry")));
        }
        self.datasets[k] = dataset;
        Ok(())
    }

    pub fn copy(&self, source: usize, consumer: usize) -> Option<&DatasetCopy> {
        self.copies.get(&(source, consumer))
    }

    pub fn copies(&self) -> impl Iterator<Item = &DatasetCopy> {
        self.copies.values()
    }

    pub fn insert_copy(&mut self, copy: DatasetCopy) -> Result<()> {
        check_pair(copy.source_class, copy.consumer_class)?;
        let k = self.num_classes();
        if copy.source_class >= k || copy.consumer_class >= k {
            return Err(Error::invalid(format!(
                "copy ({}, {}) out of range for {k} classes",
                copy.source_class, copy.consumer_class
            )));
        }
        self.copies
            .insert((copy.source_class, copy.consumer_class), copy);
        Ok(())
    }

    /// True when a copy exists for every ordered pair `(k, l)`, `k != l`.
    pub fn is_materialized(&self) -> bool {
        let k = self.num_classes();
        self.copies.len() == k * (k - 1)
    }

    /// Negatives for model `consumer`: every copy it holds, by source class.
    pub fn negatives_for(&self, consumer: usize) -> Vec<&DatasetCopy> {
        (0..self.num_classes())
            .filter(|&k| k != consumer)
            .filter_map(|k| self.copy(k, consumer))
            .collect()
    }

    /// Sub-samples every `(k, l)` pair independently, each with its own
    /// seed derived from `seed`.
    pub fn materialize_subsampled(&mut self, fraction: f64, seed: u64) -> Result<()> {
        let k = self.num_classes();
        for source in 0..k {
            for consumer in (0..k).filter(|&c| c != source) {
                let pair_seed = derive_seed(seed, (source * k + consumer) as u64);
                let copy = subsample(&self.datasets[source], fraction, pair_seed, consumer)
                    .map_err(|e| e.for_class(source))?;
                self.copies.insert((source, consumer), copy);
            }
        }
        Ok(())
    }

    /// Snapshots every pair at month `now`, consumer `l` holding data that
    /// is `staleness_of(l)` months old.
    pub fn materialize_stale<F>(&mut self, now: u32, staleness_of: F) -> Result<()>
    where
        F: Fn(usize) -> u32,
    {
        let k = self.num_classes();
        for source in 0..k {
            for consumer in (0..k).filter(|&c| c != source) {
                let copy = stale_snapshot(&self.datasets[source], now, staleness_of(consumer), consumer)
                    .map_err(|e| e.for_class(source))?;
                self.copies.insert((source, consumer), copy);
            }
        }
        Ok(())
    }
}
