//! Word-embedding lookup and sentence embeddings by averaging.
//!
//! Every downstream computation (density estimation and classification)
//! happens in the space produced here. Tables are immutable once built.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default embedding dimension for desk-scale runs.
pub const DEFAULT_DIMENSION: usize = 16;

/// How tokens missing from the table are resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OovPolicy {
    /// Missing tokens contribute the origin to the mean.
    ZeroVector,
    /// Missing tokens are embedded with [`hash_embedding`] under `seed`.
    HashFallback { seed: u64 },
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy::ZeroVector
    }
}

/// Where a table comes from: a text file, or nothing but the OOV policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    pub oov_policy: OovPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

impl EmbeddingConfig {
    /// Hash-only embeddings, the usual choice for synthetic corpora.
    pub fn hashed(dimension: usize, seed: u64) -> Self {
        Self {
            dimension,
            oov_policy: OovPolicy::HashFallback { seed },
            table: None,
        }
    }

    /// Builds the table, resolving a relative table path against `base`.
    pub fn build(&self, base: &Path) -> Result<EmbeddingTable> {
        match &self.table {
            Some(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                Ok(load_embedding_table(&path, self.dimension)?.with_oov_policy(self.oov_policy))
            }
            None => EmbeddingTable::new(self.dimension, HashMap::new(), self.oov_policy),
        }
    }
}

/// Mapping from tokens to fixed-length vectors.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: HashMap<String, Vec<f64>>,
    oov_policy: OovPolicy,
}

/// Mean of the word vectors of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding(pub Vec<f64>);

impl SentenceEmbedding {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl EmbeddingTable {
    /// Builds a table from explicit entries, validating every vector.
    pub fn new(
        dimension: usize,
        entries: HashMap<String, Vec<f64>>,
        oov_policy: OovPolicy,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        for (token, v) in &entries {
            if v.len() != dimension {
                return Err(Error::Config(format!(
                    "token {token:?} has {} components, expected dimension {dimension}",
                    v.len()
                )));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("token {token:?} has a non-finite component")));
            }
        }
        Ok(Self {
            dimension,
            entries,
            oov_policy,
        })
    }

    /// An empty table that embeds every token through the hash fallback.
    pub fn hashed(dimension: usize, seed: u64) -> Result<Self> {
        Self::new(dimension, HashMap::new(), OovPolicy::HashFallback { seed })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_oov_policy(mut self, oov_policy: OovPolicy) -> Self {
        self.oov_policy = oov_policy;
        self
    }

    /// Stored vector for `token`, if any. Does not apply the OOV policy.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Vector for `token` with the OOV policy applied.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        match self.entries.get(token) {
            Some(v) => v.clone(),
            None => match self.oov_policy {
                OovPolicy::ZeroVector => vec![0.0; self.dimension],
                OovPolicy::HashFallback { seed } => hash_embedding(token, self.dimension, seed),
            },
        }
    }

    /// Averages the token vectors of an utterance.
    pub fn embed_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<SentenceEmbedding> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot embed an empty token sequence"));
        }
        let mut sum = vec![0.0; self.dimension];
        for token in tokens {
            let token = token.as_ref();
            match self.entries.get(token) {
                Some(v) => add_assign(&mut sum, v),
                None => match self.oov_policy {
                    OovPolicy::ZeroVector => {}
                    OovPolicy::HashFallback { seed } => {
                        add_assign(&mut sum, &hash_embedding(token, self.dimension, seed))
                    }
                },
            }
        }
        let n = tokens.len() as f64;
        sum.iter_mut().for_each(|c| *c /= n);
        Ok(SentenceEmbedding(sum))
    }
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Loads a word2vec-style text table: `token v1 ... vd` per line.
///
/// Blank lines are ignored and a repeated token keeps its last vector.
pub fn load_embedding_table(path: &Path, dimension: usize) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_table(&text, dimension)
}

/// Parses the text form read by [`load_embedding_table`].
pub fn parse_embedding_table(text: &str, dimension: usize) -> Result<EmbeddingTable> {
    if dimension == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut entries = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("non-numeric field {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dimension {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "token {token:?} has {} components, embedding dimension is {dimension}",
                    values.len()
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "non-finite component".into(),
            });
        }
        entries.insert(token.to_string(), values);
    }
    EmbeddingTable::new(dimension, entries, OovPolicy::ZeroVector)
}

/// Deterministic pseudo-embedding of a token, components uniform in `[-1, 1]`.
pub fn hash_embedding(token: &str, dimension: usize, seed: u64) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..dimension).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// Whitespace tokenization with lowercase folding.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table2() -> EmbeddingTable {
        parse_embedding_table("a 1 0\nb 0 1\n", 2).unwrap()
    }

    #[test]
    fn parses_single_line() {
        let t = parse_embedding_table("hello 0.5 -0.5\n", 2).unwrap();
        assert_eq!(t.lookup("hello"), vec![0.5, -0.5]);
    }

    #[test]
    fn last_occurrence_wins() {
        let t = parse_embedding_table("a 1 0\na 0 1\n", 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.lookup("a"), vec![0.0, 1.0]);
    }

    #[test]
    fn arity_violation_names_line() {
        let err = parse_embedding_table("bad 0.1\n", 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_embedding_table("ok 1 2\n\nx 1 zz\n", 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn explicit_entries_must_match_dimension() {
        let mut entries = HashMap::new();
        entries.insert("a".to_string(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            EmbeddingTable::new(2, entries, OovPolicy::ZeroVector),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hash_embedding_is_deterministic_and_seeded() {
        assert_eq!(hash_embedding("foo", 4, 7), hash_embedding("foo", 4, 7));
        assert_ne!(hash_embedding("foo", 4, 7), hash_embedding("foo", 4, 8));
        assert_ne!(hash_embedding("foo", 4, 7), hash_embedding("bar", 4, 7));
        assert!(hash_embedding("foo", 64, 7).iter().all(|c| (-1.0..=1.0).contains(c)));
    }

    #[test]
    fn hash_embedding_distinct_over_corpus() {
        let vecs: Vec<_> = (0..100)
            .map(|i| hash_embedding(&format!("tok{i}"), 4, 7))
            .collect();
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                assert_ne!(vecs[i], vecs[j], "tok{i} vs tok{j}");
            }
        }
    }

    #[test]
    fn sentence_mean() {
        let t = table2();
        assert_eq!(t.embed_sentence(&["a", "a", "a"]).unwrap().0, t.lookup("a"));
        assert_eq!(t.embed_sentence(&["a", "b"]).unwrap().0, vec![0.5, 0.5]);
        assert_eq!(t.embed_sentence(&["a", "zzz"]).unwrap().0, vec![0.5, 0.0]);
    }

    #[test]
    fn empty_sentence_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            table2().embed_sentence(&empty),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn hash_fallback_used_for_oov() {
        let t = table2().with_oov_policy(OovPolicy::HashFallback { seed: 3 });
        let h = hash_embedding("zzz", 2, 3);
        let e = t.embed_sentence(&["zzz"]).unwrap();
        assert_eq!(e.0, h);
    }

    #[test]
    fn tokenize_folds_case() {
        assert_eq!(tokenize("  Play  SOME music\t"), vec!["play", "some", "music"]);
    }

    proptest! {
        #[test]
        fn mean_is_permutation_invariant_and_bounded(
            idx in proptest::collection::vec(0usize..20, 1..12),
            rot in 0usize..12,
        ) {
            let t = EmbeddingTable::hashed(5, 11).unwrap();
            let tokens: Vec<String> = idx.iter().map(|i| format!("w{i}")).collect();
            let mut rotated = tokens.clone();
            rotated.rotate_left(rot % tokens.len());
            let a = t.embed_sentence(&tokens).unwrap();
            let b = t.embed_sentence(&rotated).unwrap();
            for (x, y) in a.0.iter().zip(&b.0) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            let vecs: Vec<Vec<f64>> = tokens.iter().map(|w| t.lookup(w)).collect();
            for c in 0..5 {
                let lo = vecs.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = vecs.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a.0[c] >= lo - 1e-12 && a.0[c] <= hi + 1e-12);
            }
            prop_assert_eq!(a, t.embed_sentence(&tokens).unwrap());
        }
    }
}
