//! Class-conditional synthetic utterance generator.
//!
//! Class `c` draws each token either from its own vocabulary (`c{c}w{i}`)
//! or, with probability `overlap`, from a vocabulary shared by every class
//! (`sw{i}`). Higher overlap means less separable classes.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ceil_count, derive_seed, Dataset, Utterance, Version};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub classes: usize,
    pub per_class: usize,
    pub vocab_per_class: usize,
    pub overlap: f64,
    /// Inclusive token-count range of each utterance.
    pub sentence_len: (usize, usize),
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 500,
            vocab_per_class: 12,
            overlap: 0.2,
            sentence_len: (3, 8),
            seed: 0,
        }
    }
}

impl CorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("a corpus needs at least 2 classes"));
        }
        if self.per_class < 1 {
            return Err(Error::invalid("per_class must be at least 1"));
        }
        if self.vocab_per_class < 1 {
            return Err(Error::invalid("vocab_per_class must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::invalid(format!("overlap must be in [0, 1], got {}", self.overlap)));
        }
        let (lo, hi) = self.sentence_len;
        if lo < 1 || hi < lo {
            return Err(Error::invalid(format!("bad sentence length range {lo}..={hi}")));
        }
        Ok(())
    }
}

/// Monthly evolution of a corpus: each month every live class appends
/// `growth · per_class` new utterances after replacing a `drift` fraction of
/// its vocabulary with new tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSpec {
    pub months: u32,
    pub growth: f64,
    pub drift: f64,
    /// `(class, month)` pairs for classes that first appear after month 0.
    pub launches: Vec<(usize, u32)>,
}

impl EvolutionSpec {
    pub fn none() -> Self {
        Self {
            months: 0,
            growth: 0.0,
            drift: 0.0,
            launches: Vec::new(),
        }
    }

    pub fn monthly(months: u32) -> Self {
        Self {
            months,
            growth: 0.10,
            drift: 0.05,
            launches: Vec::new(),
        }
    }

    fn launch_month(&self, class: usize) -> u32 {
        self.launches
            .iter()
            .find(|(c, _)| *c == class)
            .map_or(0, |(_, m)| *m)
    }
}

/// `K` single-version datasets at month 0.
pub fn generate_synthetic_corpus(spec: &CorpusSpec) -> Result<Vec<Dataset>> {
    generate_evolving_corpus(spec, &EvolutionSpec::none())
}

/// Datasets with one cumulative version per month from launch to
/// `evolution.months`. Earlier versions are prefixes of later ones.
pub fn generate_evolving_corpus(spec: &CorpusSpec, evolution: &EvolutionSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&evolution.growth) || !(0.0..=1.0).contains(&evolution.drift) {
        return Err(Error::invalid("growth and drift must be in [0, 1]"));
    }
    for &(c, m) in &evolution.launches {
        if c >= spec.classes || m > evolution.months {
            return Err(Error::invalid(format!("launch ({c}, {m}) out of range")));
        }
    }
    let shared: Vec<String> = (0..spec.vocab_per_class).map(|i| format!("sw{i}")).collect();
    (0..spec.classes)
        .map(|class| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, class as u64));
            let mut vocab: Vec<String> = (0..spec.vocab_per_class)
                .map(|i| format!("c{class}w{i}"))
                .collect();
            let launch = evolution.launch_month(class);
            let mut utterances: Vec<Utterance> = (0..spec.per_class)
                .map(|_| sample_utterance(&mut rng, spec, &vocab, &shared, class))
                .collect();
            let mut versions = vec![Version {
                timestamp: launch,
                utterances: utterances.clone(),
            }];
            let n_new = ceil_count(evolution.growth, spec.per_class);
            let n_swap = ceil_count(evolution.drift, vocab.len());
            for month in (launch + 1)..=evolution.months {
                for (j, slot) in index::sample(&mut rng, vocab.len(), n_swap).into_iter().enumerate() {
                    vocab[slot] = format!("c{class}m{month}w{j}");
                }
                for _ in 0..n_new {
                    utterances.push(sample_utterance(&mut rng, spec, &vocab, &shared, class));
                }
                versions.push(Version {
                    timestamp: month,
                    utterances: utterances.clone(),
                });
            }
            Dataset::with_versions(class, versions)
        })
        .collect()
}

fn sample_utterance(
    rng: &mut ChaCha8Rng,
    spec: &CorpusSpec,
    vocab: &[String],
    shared: &[String],
    class: usize,
) -> Utterance {
    let (lo, hi) = spec.sentence_len;
    let len = rng.gen_range(lo..=hi);
    let tokens = (0..len)
        .map(|_| {
            let pool = if rng.gen_bool(spec.overlap) { shared } else { vocab };
            pool[rng.gen_range(0..pool.len())].clone()
        })
        .collect();
    Utterance {
        tokens,
        class_label: class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec() -> CorpusSpec {
        CorpusSpec {
            classes: 3,
            per_class: 100,
            seed: 42,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let ds = generate_synthetic_corpus(&spec()).unwrap();
        assert_eq!(ds.len(), 3);
        for (c, d) in ds.iter().enumerate() {
            assert_eq!(d.class_id(), c);
            assert_eq!(d.versions().len(), 1);
            assert_eq!(d.latest().timestamp, 0);
            assert_eq!(d.latest().utterances.len(), 100);
            assert!(d.latest().utterances.iter().all(|u| u.class_label == c));
            assert!(d
                .latest()
                .utterances
                .iter()
                .all(|u| (3..=8).contains(&u.tokens.len())));
        }
    }

    #[test]
    fn zero_overlap_gives_disjoint_vocabularies() {
        let ds = generate_synthetic_corpus(&CorpusSpec {
            overlap: 0.0,
            ..spec()
        })
        .unwrap();
        let vocabs: Vec<HashSet<&str>> = ds
            .iter()
            .map(|d| {
                d.latest()
                    .utterances
                    .iter()
                    .flat_map(|u| u.tokens.iter().map(String::as_str))
                    .collect()
            })
            .collect();
        for i in 0..vocabs.len() {
            for j in (i + 1)..vocabs.len() {
                assert!(vocabs[i].is_disjoint(&vocabs[j]));
            }
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            generate_synthetic_corpus(&spec()).unwrap(),
            generate_synthetic_corpus(&spec()).unwrap()
        );
        let other = CorpusSpec { seed: 43, ..spec() };
        assert_ne!(
            generate_synthetic_corpus(&spec()).unwrap(),
            generate_synthetic_corpus(&other).unwrap()
        );
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic_corpus(&CorpusSpec { classes: 1, ..spec() }).is_err());
        assert!(generate_synthetic_corpus(&CorpusSpec { overlap: 1.5, ..spec() }).is_err());
        assert!(generate_synthetic_corpus(&CorpusSpec {
            sentence_len: (4, 2),
            ..spec()
        })
        .is_err());
    }

    #[test]
    fn evolution_appends_and_drifts() {
        let evo = EvolutionSpec {
            launches: vec![(2, 6)],
            ..EvolutionSpec::monthly(8)
        };
        let ds = generate_evolving_corpus(&spec(), &evo).unwrap();
        assert_eq!(ds[0].versions().len(), 9);
        assert_eq!(ds[2].versions().len(), 3);
        assert_eq!(ds[2].versions()[0].timestamp, 6);
        let v = ds[0].versions();
        assert_eq!(v[1].utterances.len(), 110);
        assert_eq!(v[8].utterances.len(), 180);
        assert_eq!(v[0].utterances[..], v[8].utterances[..100]);
        let late: HashSet<&str> = v[8].utterances[100..]
            .iter()
            .flat_map(|u| u.tokens.iter().map(String::as_str))
            .collect();
        assert!(late.iter().any(|t| t.contains('m')));
    }
}
