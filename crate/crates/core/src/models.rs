//! One-vs-all binary classifiers and a softmax baseline over averaged
//! sentence embeddings, trained by (full-batch by default) gradient descent.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::registry::{Dataset, DatasetCopy, Registry, Utterance};

/// Gradient-descent hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_iters: usize,
    /// Stop after this many iterations without improvement of the monitored
    /// loss (dev loss if a dev set is given, training objective otherwise).
    pub patience: usize,
    pub min_delta: f64,
    /// `None` trains full-batch; otherwise one iteration is one shuffled
    /// pass over mini-batches of this size.
    pub batch_size: Option<usize>,
    /// Inverse-frequency weighting of positives and negatives in binary
    /// models.
    pub balance_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            max_iters: 500,
            patience: 20,
            min_delta: 1e-6,
            batch_size: None,
            balance_classes: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) || self.max_iters == 0 {
            return Err(Error::invalid(
                "learning_rate must be positive, l2 non-negative, max_iters at least 1",
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Dense design matrix with one row per sample.
#[derive(Clone, Debug, Default)]
pub struct Samples {
    pub dimension: usize,
    pub rows: Vec<f64>,
}

impl Samples {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dimension = rows.first().map_or(0, Vec::len);
        let mut s = Self::new(dimension);
        for r in rows {
            s.push(r);
        }
        s
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dimension);
        self.rows.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        if self.dimension == 0 {
            0
        } else {
            self.rows.len() / self.dimension
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dimension..(i + 1) * self.dimension]
    }

    fn embed(utterances: &[Utterance], table: &EmbeddingTable) -> Result<Self> {
        let mut s = Self::new(table.dimension());
        for u in utterances {
            s.push(table.embed_sentence(&u.tokens)?.as_slice());
        }
        Ok(s)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Loss functions and their analytic gradients.
pub mod loss {
    use super::{dot, sigmoid, softplus, Samples};

    /// Weighted binary cross-entropy plus `l2/2 · ‖w‖²` (bias unpenalized).
    /// Labels are 0/1; the data term is `Σ cᵢ·ℓᵢ / Σ cᵢ`.
    /// Returns `(loss, ∂w, ∂b)`.
    pub fn binary(
        weights: &[f64],
        bias: f64,
        xs: &Samples,
        labels: &[f64],
        sample_weights: &[f64],
        idx: &[usize],
        l2: f64,
    ) -> (f64, Vec<f64>, f64) {
        let mut gw = vec![0.0; weights.len()];
        let mut gb = 0.0;
        let mut loss = 0.0;
        let mut total_weight = 0.0;
        for &i in idx {
            let x = xs.row(i);
            let z = dot(weights, x) + bias;
            let c = sample_weights[i];
            let y = labels[i];
            // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
            loss += c * (softplus(z) - y * z);
            let r = c * (sigmoid(z) - y);
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += r * xi);
            gb += r;
            total_weight += c;
        }
        let inv = 1.0 / total_weight;
        loss *= inv;
        gw.iter_mut().zip(weights).for_each(|(g, w)| *g = *g * inv + l2 * w);
        loss += 0.5 * l2 * dot(weights, weights);
        (loss, gw, gb * inv)
    }

    /// Mean categorical cross-entropy of a softmax model plus
    /// `l2/2 · ‖W‖²`. `weights` is row-major `K × d`.
    /// Returns `(loss, ∂W, ∂b)`.
    pub fn softmax(
        weights: &[f64],
        biases: &[f64],
        xs: &Samples,
        labels: &[usize],
        idx: &[usize],
        l2: f64,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let k = biases.len();
        let d = xs.dimension;
        let mut gw = vec![0.0; weights.len()];
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        let mut logits = vec![0.0; k];
        for &i in idx {
            let x = xs.row(i);
            for c in 0..k {
                logits[c] = dot(&weights[c * d..(c + 1) * d], x) + biases[c];
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += log_z - logits[labels[i]];
            for c in 0..k {
                let p = (logits[c] - log_z).exp();
                let r = p - if c == labels[i] { 1.0 } else { 0.0 };
                gw[c * d..(c + 1) * d]
                    .iter_mut()
                    .zip(x)
                    .for_each(|(g, xi)| *g += r * xi);
                gb[c] += r;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        loss = loss * inv + 0.5 * l2 * dot(weights, weights);
        gw.iter_mut().zip(weights).for_each(|(g, w)| *g = *g * inv + l2 * w);
        gb.iter_mut().for_each(|g| *g *= inv);
        (loss, gw, gb)
    }
}

/// Summary of the data a binary model was trained on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub positives: usize,
    pub negatives: Vec<NegativeSource>,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeSource {
    pub source_class: usize,
    pub count: usize,
    pub sampling_fraction: f64,
    pub staleness_months: u32,
}

/// Model `M_k`: scores membership of class `k` against all others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub class_id: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub provenance: TrainingProvenance,
}

impl BinaryModel {
    /// Probability that `x` belongs to this model's class.
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub classes: usize,
    pub dimension: usize,
    /// Row-major `classes × dimension`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub iterations: usize,
}

impl MulticlassModel {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(&self.weights[c * self.dimension..(c + 1) * self.dimension], x) + self.biases[c])
            .collect()
    }

    pub fn predict_embedded(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn predict(&self, tokens: &[String], table: &EmbeddingTable) -> Result<usize> {
        Ok(self.predict_embedded(table.embed_sentence(tokens)?.as_slice()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvaSystem {
    pub models: Vec<BinaryModel>,
}

impl OvaSystem {
    pub fn new(models: Vec<BinaryModel>) -> Result<Self> {
        if models.iter().enumerate().any(|(i, m)| m.class_id != i) {
            return Err(Error::invalid("OVA system needs exactly one model per class, in order"));
        }
        Ok(Self { models })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.models.iter().map(|m| m.score(x)).collect()
    }

    pub fn predict_embedded(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Class predicted by the OVA system for an utterance.
pub fn predict_ova(system: &OvaSystem, tokens: &[String], table: &EmbeddingTable) -> Result<usize> {
    Ok(system.predict_embedded(table.embed_sentence(tokens)?.as_slice()))
}

/// Tracks the monitored loss for early stopping.
struct EarlyStop {
    best: f64,
    stale: usize,
    patience: usize,
    min_delta: f64,
}

impl EarlyStop {
    fn new(cfg: &TrainConfig) -> Self {
        Self {
            best: f64::INFINITY,
            stale: 0,
            patience: cfg.patience,
            min_delta: cfg.min_delta,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience > 0 && self.stale >= self.patience
    }
}

fn batches(n: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    match cfg.batch_size {
        None => vec![order],
        Some(b) => {
            order.shuffle(rng);
            order.chunks(b).map(<[usize]>::to_vec).collect()
        }
    }
}

/// Labeled binary data with per-sample loss weights.
struct BinaryData {
    xs: Samples,
    labels: Vec<f64>,
    weights: Vec<f64>,
}

impl BinaryData {
    fn new(pos: Samples, neg: Samples, balance: bool) -> Self {
        let (np, nn) = (pos.len(), neg.len());
        let n = (np + nn) as f64;
        let (wp, wn) = if balance {
            (n / (2.0 * np as f64), n / (2.0 * nn as f64))
        } else {
            (1.0, 1.0)
        };
        let mut xs = pos;
        xs.rows.extend_from_slice(&neg.rows);
        let mut labels = vec![1.0; np];
        labels.resize(np + nn, 0.0);
        let mut weights = vec![wp; np];
        weights.resize(np + nn, wn);
        Self { xs, labels, weights }
    }
}

fn fit_binary(
    train: &BinaryData,
    dev: Option<&BinaryData>,
    cfg: &TrainConfig,
    seed: u64,
) -> (Vec<f64>, f64, usize) {
    let d = train.xs.dimension;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stop = EarlyStop::new(cfg);
    let all: Vec<usize> = (0..train.xs.len()).collect();
    let dev_idx: Vec<usize> = dev.map(|v| (0..v.xs.len()).collect()).unwrap_or_default();
    let mut iters = 0;
    while iters < cfg.max_iters {
        for batch in batches(train.xs.len(), cfg, &mut rng) {
            let (_, gw, gb) =
                loss::binary(&w, b, &train.xs, &train.labels, &train.weights, &batch, cfg.l2);
            w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= cfg.learning_rate * g);
            b -= cfg.learning_rate * gb;
        }
        iters += 1;
        let monitored = match dev {
            Some(v) => loss::binary(&w, b, &v.xs, &v.labels, &v.weights, &dev_idx, cfg.l2).0,
            None => loss::binary(&w, b, &train.xs, &train.labels, &train.weights, &all, cfg.l2).0,
        };
        if stop.observe(monitored) {
            break;
        }
    }
    (w, b, iters)
}

fn pooled_negatives(
    negatives: &[&DatasetCopy],
    table: &EmbeddingTable,
) -> Result<(Samples, Vec<NegativeSource>)> {
    let mut xs = Samples::new(table.dimension());
    let mut sources = Vec::with_capacity(negatives.len());
    for copy in negatives {
        for u in &copy.utterances {
            xs.push(table.embed_sentence(&u.tokens)?.as_slice());
        }
        sources.push(NegativeSource {
            source_class: copy.source_class,
            count: copy.utterances.len(),
            sampling_fraction: copy.provenance.sampling_fraction,
            staleness_months: copy.provenance.staleness_months,
        });
    }
    Ok((xs, sources))
}

/// Trains `M_k` with `positive` as positives and the pooled copies as
/// negatives.
pub fn train_binary(
    class_id: usize,
    positive: &[Utterance],
    negatives: &[&DatasetCopy],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BinaryModel> {
    train_binary_with_dev(class_id, positive, negatives, None, table, cfg, seed)
}

/// As [`train_binary`], early-stopping on a labeled dev set: utterances
/// labeled `class_id` count as positives, everything else as negatives.
pub fn train_binary_with_dev(
    class_id: usize,
    positive: &[Utterance],
    negatives: &[&DatasetCopy],
    dev: Option<&[Utterance]>,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BinaryModel> {
    cfg.validate()?;
    if positive.is_empty() {
        return Err(Error::invalid("no positive samples"));
    }
    let (neg, sources) = pooled_negatives(negatives, table)?;
    if neg.is_empty() {
        return Err(Error::invalid("no negative samples in any copy"));
    }
    let pos = Samples::embed(positive, table)?;
    let npos = pos.len();
    let train = BinaryData::new(pos, neg, cfg.balance_classes);
    let dev = match dev {
        Some(dev) => {
            let (p, n): (Vec<_>, Vec<_>) = dev.iter().cloned().partition(|u| u.class_label == class_id);
            if p.is_empty() || n.is_empty() {
                None
            } else {
                Some(BinaryData::new(
                    Samples::embed(&p, table)?,
                    Samples::embed(&n, table)?,
                    cfg.balance_classes,
                ))
            }
        }
        None => None,
    };
    let (weights, bias, iterations) = fit_binary(&train, dev.as_ref(), cfg, seed);
    Ok(BinaryModel {
        class_id,
        weights,
        bias,
        provenance: TrainingProvenance {
            positives: npos,
            negatives: sources,
            iterations,
        },
    })
}

/// Trains one binary model per class. Model `k` sees only `D_k` and the
/// copies it holds, never the live datasets of other classes.
pub fn train_ova(
    registry: &Registry,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    seed: u64,
    dev: Option<&[Utterance]>,
) -> Result<OvaSystem> {
    if !registry.is_materialized() {
        return Err(Error::invalid("registry copies are not materialized"));
    }
    let models = (0..registry.num_classes())
        .into_par_iter()
        .map(|k| {
            train_binary_with_dev(
                k,
                &registry.dataset(k).latest().utterances,
                &registry.negatives_for(k),
                dev,
                table,
                cfg,
                seed,
            )
            .map_err(|e| e.for_class(k))
        })
        .collect::<Result<Vec<_>>>()?;
    OvaSystem::new(models)
}

/// Trains the softmax baseline on the latest versions of all datasets.
pub fn train_multiclass(
    datasets: &[Dataset],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    seed: u64,
    dev: Option<&[Utterance]>,
) -> Result<MulticlassModel> {
    cfg.validate()?;
    let k = datasets.len();
    if k < 2 {
        return Err(Error::invalid("multi-class training needs at least 2 classes"));
    }
    let mut xs = Samples::new(table.dimension());
    let mut labels = Vec::new();
    for (c, d) in datasets.iter().enumerate() {
        let utts = &d.latest().utterances;
        if utts.is_empty() {
            return Err(Error::invalid(format!("dataset {c} is empty")));
        }
        for u in utts {
            xs.push(table.embed_sentence(&u.tokens)?.as_slice());
            labels.push(c);
        }
    }
    let dev = match dev {
        Some(dev) if !dev.is_empty() => {
            if dev.iter().any(|u| u.class_label >= k) {
                return Err(Error::invalid("dev set contains an unknown class"));
            }
            Some((
                Samples::embed(dev, table)?,
                dev.iter().map(|u| u.class_label).collect::<Vec<_>>(),
            ))
        }
        _ => None,
    };
    let d = table.dimension();
    let mut w = vec![0.0; k * d];
    let mut b = vec![0.0; k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stop = EarlyStop::new(cfg);
    let all: Vec<usize> = (0..xs.len()).collect();
    let dev_idx: Vec<usize> = dev.as_ref().map(|(x, _)| (0..x.len()).collect()).unwrap_or_default();
    let mut iters = 0;
    while iters < cfg.max_iters {
        for batch in batches(xs.len(), cfg, &mut rng) {
            let (_, gw, gb) = loss::softmax(&w, &b, &xs, &labels, &batch, cfg.l2);
            w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= cfg.learning_rate * g);
            b.iter_mut().zip(&gb).for_each(|(bi, g)| *bi -= cfg.learning_rate * g);
        }
        iters += 1;
        let monitored = match &dev {
            Some((dx, dy)) => loss::softmax(&w, &b, dx, dy, &dev_idx, cfg.l2).0,
            None => loss::softmax(&w, &b, &xs, &labels, &all, cfg.l2).0,
        };
        if stop.observe(monitored) {
            break;
        }
    }
    Ok(MulticlassModel {
        classes: k,
        dimension: d,
        weights: w,
        biases: b,
        iterations: iters,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub error_rate: f64,
    pub n_correct: usize,
    pub n_total: usize,
    /// Misclassification count by true class.
    pub per_class_errors: BTreeMap<usize, usize>,
}

/// Error rate of `predict` over `test`.
pub fn evaluate<F>(predict: F, test: &[Utterance]) -> Result<EvalResult>
where
    F: Fn(&Utterance) -> Result<usize>,
{
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let mut n_correct = 0;
    let mut per_class_errors = BTreeMap::new();
    for u in test {
        if predict(u)? == u.class_label {
            n_correct += 1;
        } else {
            *per_class_errors.entry(u.class_label).or_insert(0) += 1;
        }
    }
    Ok(EvalResult {
        error_rate: (test.len() - n_correct) as f64 / test.len() as f64,
        n_correct,
        n_total: test.len(),
        per_class_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::parse_embedding_table;
    use crate::registry::{generate_synthetic_corpus, split_speaker_independent, CorpusSpec, Provenance};

    fn line_table() -> EmbeddingTable {
        parse_embedding_table("pos 1\nneg -1\nmid 0\n", 1).unwrap()
    }

    fn copy_of(source: usize, consumer: usize, utterances: Vec<Utterance>) -> DatasetCopy {
        DatasetCopy {
            source_class: source,
            consumer_class: consumer,
            utterances,
            provenance: Provenance {
                sampling_fraction: 1.0,
                staleness_months: 0,
                seed: 0,
                source_timestamp: Some(0),
            },
            flagged_empty: false,
        }
    }

    fn u(tok: &str, class: usize) -> Utterance {
        Utterance::new(vec![tok.to_string()], class).unwrap()
    }

    #[test]
    fn separable_binary_ranks_positives_first() {
        let table = line_table();
        let pos: Vec<_> = (0..5).map(|_| u("pos", 0)).collect();
        let neg = copy_of(1, 0, (0..7).map(|_| u("neg", 1)).collect());
        let m = train_binary(0, &pos, &[&neg], &table, &TrainConfig::default(), 0).unwrap();
        assert!(m.score(&[1.0]) > m.score(&[-1.0]));
        assert!(m.weights[0] > 0.0);
        assert_eq!(m.provenance.positives, 5);
        assert_eq!(m.provenance.negatives[0].count, 7);
    }

    #[test]
    fn uninformative_data_scores_one_half() {
        let table = line_table();
        let pos: Vec<_> = ["pos", "neg", "mid"].iter().map(|t| u(t, 0)).collect();
        let neg = copy_of(1, 0, ["pos", "neg", "mid"].iter().map(|t| u(t, 1)).collect());
        let cfg = TrainConfig {
            max_iters: 5000,
            ..TrainConfig::default()
        };
        let m = train_binary(0, &pos, &[&neg], &table, &cfg, 0).unwrap();
        for x in [-1.0, 0.0, 1.0] {
            assert!((m.score(&[x]) - 0.5).abs() < 1e-3);
        }
    }

    #[test]
    fn binary_needs_both_classes() {
        let table = line_table();
        let neg = copy_of(1, 0, vec![u("neg", 1)]);
        let empty = copy_of(2, 0, vec![]);
        let cfg = TrainConfig::default();
        assert!(train_binary(0, &[], &[&neg], &table, &cfg, 0).is_err());
        assert!(train_binary(0, &[u("pos", 0)], &[&empty], &table, &cfg, 0).is_err());
        assert!(train_binary(0, &[u("pos", 0)], &[&empty, &neg], &table, &cfg, 0).is_ok());
    }

    #[test]
    fn minibatch_training_is_seeded() {
        let table = EmbeddingTable::hashed(4, 2).unwrap();
        let pos: Vec<_> = (0..30).map(|i| u(&format!("p{i}"), 0)).collect();
        let neg = copy_of(1, 0, (0..30).map(|i| u(&format!("n{i}"), 1)).collect());
        let cfg = TrainConfig {
            batch_size: Some(8),
            max_iters: 20,
            ..TrainConfig::default()
        };
        let a = train_binary(0, &pos, &[&neg], &table, &cfg, 1).unwrap();
        let b = train_binary(0, &pos, &[&neg], &table, &cfg, 1).unwrap();
        let c = train_binary(0, &pos, &[&neg], &table, &cfg, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn full_batch_loss_decreases() {
        let table = EmbeddingTable::hashed(6, 9).unwrap();
        let data = BinaryData::new(
            Samples::embed(&(0..20).map(|i| u(&format!("p{i}"), 0)).collect::<Vec<_>>(), &table).unwrap(),
            Samples::embed(&(0..35).map(|i| u(&format!("n{i}"), 1)).collect::<Vec<_>>(), &table).unwrap(),
            true,
        );
        let idx: Vec<usize> = (0..data.xs.len()).collect();
        let (mut w, mut b) = (vec![0.0; 6], 0.0);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let (l, gw, gb) = loss::binary(&w, b, &data.xs, &data.labels, &data.weights, &idx, 1e-4);
            assert!(l <= prev + 1e-15, "{l} > {prev}");
            prev = l;
            w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= 0.5 * g);
            b -= 0.5 * gb;
        }
    }

    #[test]
    fn multiclass_learns_separable_corpus() {
        let ds = generate_synthetic_corpus(&CorpusSpec {
            classes: 3,
            per_class: 100,
            overlap: 0.0,
            seed: 5,
            ..CorpusSpec::default()
        })
        .unwrap();
        let table = EmbeddingTable::hashed(16, 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1.0,
            max_iters: 2000,
            ..TrainConfig::default()
        };
        let m = train_multiclass(&ds, &table, &cfg, 0, None).unwrap();
        let all: Vec<Utterance> = ds.iter().flat_map(|d| d.latest().utterances.clone()).collect();
        let r = evaluate(|x| m.predict(&x.tokens, &table), &all).unwrap();
        assert!(r.error_rate <= 0.05, "{}", r.error_rate);
    }

    #[test]
    fn multiclass_rejects_single_class() {
        let ds = vec![Dataset::new(0, vec![u("a", 0)]).unwrap()];
        let table = EmbeddingTable::hashed(4, 0).unwrap();
        assert!(train_multiclass(&ds, &table, &TrainConfig::default(), 0, None).is_err());
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax(&[0.9, 0.2, 0.3]), 0);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        let s = [0.1, 0.8, 0.3, 0.79];
        let t: Vec<f64> = s.iter().map(|x: &f64| (5.0 * x).exp() - 3.0).collect();
        assert_eq!(argmax(&s), argmax(&t));
    }

    #[test]
    fn evaluate_arithmetic() {
        let test: Vec<_> = (0..10).map(|i| u(&format!("x{i}"), i % 3)).collect();
        let perfect = evaluate(|x| Ok(x.class_label), &test).unwrap();
        assert_eq!(perfect.error_rate, 0.0);
        let wrong = evaluate(|x| Ok(x.class_label + 1), &test).unwrap();
        assert_eq!(wrong.error_rate, 1.0);
        assert_eq!(wrong.per_class_errors.values().sum::<usize>(), 10);
        let nine = evaluate(
            |x| Ok(if x.tokens[0] == "x4" { 99 } else { x.class_label }),
            &test,
        )
        .unwrap();
        assert_eq!(nine.n_correct, 9);
        assert!((nine.error_rate - 0.1).abs() < 1e-15);
        assert_eq!(nine.per_class_errors.get(&1), Some(&1));
        assert!(evaluate(|_| Ok(0), &[]).is_err());
    }

    #[test]
    fn ova_two_class_symmetry_and_isolation() {
        let ds = generate_synthetic_corpus(&CorpusSpec {
            classes: 3,
            per_class: 60,
            seed: 8,
            ..CorpusSpec::default()
        })
        .unwrap();
        let splits = split_speaker_independent(&ds, (0.8, 0.1, 0.1), 1).unwrap();
        let table = EmbeddingTable::hashed(8, 0).unwrap();
        let cfg = TrainConfig::default();
        let mut reg = Registry::new(splits.train.clone()).unwrap();
        reg.materialize_subsampled(0.5, 3).unwrap();
        let sys = train_ova(&reg, &table, &cfg, 0, None).unwrap();
        assert_eq!(sys.models.len(), 3);

        // Changing the live D_2 without re-materializing copies leaves M_0, M_1 untouched.
        let mut changed = reg.clone();
        let mut d2 = changed.dataset(2).clone();
        d2.push_version(1, vec![u("novel", 2)]).unwrap();
        changed.replace_dataset(d2).unwrap();
        let sys2 = train_ova(&changed, &table, &cfg, 0, None).unwrap();
        assert_eq!(sys.models[0], sys2.models[0]);
        assert_eq!(sys.models[1], sys2.models[1]);
        assert_ne!(sys.models[2], sys2.models[2]);
    }
}
