//! The asynchrony metric α and the health gate built on it.
//!
//! For every class `k` a KDE `P_k` is fitted on the embeddings of `D_k` and a
//! KDE `P_k^l` on each copy `D_k^l`. The pair score `a_k^l` is the mean over
//! `x ∈ D_k` of `ln P_k^l(x) - ln P_k(x)`; `a_k` averages the pair scores of
//! class `k` over its consumers and α sums `a_k` over classes. Sub-sampled
//! or stale copies put less mass on `D_k`, so pair scores are usually
//! negative; `alpha_abs = Σ|a_k|` is the magnitude used for gating.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::KdeModel;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::registry::{Registry, Utterance};

/// Floor on the baseline magnitude in the relative-degradation ratio.
pub const DEGRADATION_EPSILON: f64 = 1e-12;

/// What to do with a copy that holds no utterances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCopyPolicy {
    #[default]
    Skip,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub source: usize,
    pub consumer: usize,
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsynchronyReport {
    pub classes: usize,
    /// Sorted by `(source, consumer)`.
    pub per_pair: Vec<PairScore>,
    /// One entry per class, in class order.
    pub per_class: Vec<ClassScore>,
    pub alpha: f64,
    pub alpha_abs: f64,
    pub skipped_pairs: Vec<(usize, usize)>,
}

impl AsynchronyReport {
    pub fn pair(&self, source: usize, consumer: usize) -> Option<f64> {
        self.per_pair
            .iter()
            .find(|p| p.source == source && p.consumer == consumer)
            .map(|p| p.a)
    }

    pub fn class(&self, k: usize) -> Option<f64> {
        self.per_class.iter().find(|c| c.class == k).map(|c| c.a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HealthAction {
    Healthy,
    ResyncRecommended,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthVerdict {
    pub baseline_alpha: f64,
    pub current_alpha: f64,
    pub relative_degradation: f64,
    pub threshold: f64,
    pub action: HealthAction,
}

/// Embeddings of `D_k` and `ln P_k` at each of them.
struct ClassDensity {
    points: Vec<Vec<f64>>,
    self_log_density: Vec<f64>,
}

fn embed_all(utterances: &[Utterance], table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    utterances
        .iter()
        .map(|u| table.embed_sentence(&u.tokens).map(|e| e.0))
        .collect()
}

impl ClassDensity {
    fn new(original: &[Utterance], table: &EmbeddingTable, variance: f64) -> Result<Self> {
        if original.is_empty() {
            return Err(Error::invalid("original dataset is empty"));
        }
        let points = embed_all(original, table)?;
        let kde = KdeModel::fit_rows(points.iter().map(Vec::as_slice), variance)?;
        let self_log_density = points
            .iter()
            .map(|x| kde.log_density_at(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points,
            self_log_density,
        })
    }

    fn llr(&self, copy: &[Utterance], table: &EmbeddingTable, variance: f64) -> Result<f64> {
        if copy.is_empty() {
            return Err(Error::invalid("copy is empty"));
        }
        let copy_points = embed_all(copy, table)?;
        let kde = KdeModel::fit_rows(copy_points.iter().map(Vec::as_slice), variance)?;
        let mut total = 0.0;
        for (x, own) in self.points.iter().zip(&self.self_log_density) {
            total += kde.log_density_at(x)? - own;
        }
        Ok(total / self.points.len() as f64)
    }
}

/// Size-normalized log-likelihood ratio of `original` under the copy's KDE
/// versus its own.
pub fn pair_llr(
    original: &[Utterance],
    copy: &[Utterance],
    table: &EmbeddingTable,
    variance: f64,
) -> Result<f64> {
    ClassDensity::new(original, table, variance)?.llr(copy, table, variance)
}

/// Computes every pair score, the per-class means and α over a fully
/// materialized registry. Pairs are evaluated in parallel and assembled by
/// key.
pub fn compute_alpha(
    registry: &Registry,
    table: &EmbeddingTable,
    variance: f64,
    policy: EmptyCopyPolicy,
) -> Result<AsynchronyReport> {
    if !registry.is_materialized() {
        return Err(Error::invalid("registry copies are not materialized"));
    }
    let k = registry.num_classes();
    let densities = (0..k)
        .into_par_iter()
        .map(|c| {
            ClassDensity::new(&registry.dataset(c).latest().utterances, table, variance)
                .map_err(|e| e.for_class(c))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for source in 0..k {
        for consumer in (0..k).filter(|&l| l != source) {
            let copy = registry
                .copy(source, consumer)
                .expect("materialized registry holds every pair");
            if copy.is_empty() {
                match policy {
                    EmptyCopyPolicy::Skip => skipped.push((source, consumer)),
                    EmptyCopyPolicy::Error => {
                        return Err(Error::invalid(format!(
                            "copy of class {source} held by model {consumer} is empty"
                        )))
                    }
                }
            } else {
                jobs.push((source, consumer));
            }
        }
    }

    let scores: BTreeMap<(usize, usize), f64> = jobs
        .par_iter()
        .map(|&(source, consumer)| {
            let copy = registry.copy(source, consumer).expect("pair exists");
            densities[source]
                .llr(&copy.utterances, table, variance)
                .map(|a| ((source, consumer), a))
                .map_err(|e| e.for_class(source))
        })
        .collect::<Result<_>>()?;

    let mut per_class = Vec::with_capacity(k);
    for source in 0..k {
        let vals: Vec<f64> = scores
            .range((source, 0)..(source + 1, 0))
            .map(|(_, &a)| a)
            .collect();
        if vals.is_empty() {
            return Err(Error::invalid(format!(
                "every copy of class {source} was skipped; its mean score is undefined"
            )));
        }
        per_class.push(ClassScore {
            class: source,
            a: vals.iter().sum::<f64>() / vals.len() as f64,
        });
    }
    let alpha = per_class.iter().map(|c| c.a).sum();
    let alpha_abs = per_class.iter().map(|c| c.a.abs()).sum();
    Ok(AsynchronyReport {
        classes: k,
        per_pair: scores
            .into_iter()
            .map(|((source, consumer), a)| PairScore {
                source,
                consumer,
                a,
            })
            .collect(),
        per_class,
        alpha,
        alpha_abs,
        skipped_pairs: skipped,
    })
}

/// Compares a current report against an accepted baseline.
pub fn health_check(
    baseline: &AsynchronyReport,
    current: &AsynchronyReport,
    threshold: f64,
) -> Result<HealthVerdict> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    if baseline.classes != current.classes {
        return Err(Error::invalid(format!(
            "baseline has {} classes, current has {}",
            baseline.classes, current.classes
        )));
    }
    let relative_degradation = (current.alpha_abs - baseline.alpha_abs)
        / baseline.alpha_abs.max(DEGRADATION_EPSILON);
    let action = if relative_degradation > threshold {
        HealthAction::ResyncRecommended
    } else {
        HealthAction::Healthy
    };
    Ok(HealthVerdict {
        baseline_alpha: baseline.alpha_abs,
        current_alpha: current.alpha_abs,
        relative_degradation,
        threshold,
        action,
    })
}
