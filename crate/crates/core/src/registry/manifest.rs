//! On-disk form of a registry: one corpus file per dataset version or copy,
//! tied together by a JSON manifest. Paths in the manifest are relative to
//! the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetCopy, Provenance, Registry, Utterance, Version};
use crate::embedding::{tokenize, EmbeddingConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub timestamp: u32,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub class_id: usize,
    pub versions: Vec<VersionEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyEntry {
    pub source: usize,
    pub consumer: usize,
    /// Absent for flagged empty copies.
    pub path: Option<String>,
    pub provenance: Provenance,
    #[serde(default)]
    pub flagged_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingConfig>,
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub copies: Vec<CopyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

/// Reads `<class_id>\t<tokens...>` lines. Lines starting with `#` are
/// comments.
pub fn read_corpus_file(path: &Path) -> Result<Vec<Utterance>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub(crate) fn parse_corpus(text: &str) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let (label, rest) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `<class_id>\\t<tokens>`".into()))?;
        let class_label = label
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(format!("bad class id {label:?}")))?;
        let tokens = tokenize(rest);
        if tokens.is_empty() {
            return Err(parse_err("utterance has no tokens".into()));
        }
        out.push(Utterance {
            tokens,
            class_label,
        });
    }
    Ok(out)
}

pub(crate) fn format_corpus(utterances: &[Utterance], digest: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(d) = digest {
        let _ = writeln!(s, "# config_digest: {d}");
    }
    for u in utterances {
        let _ = writeln!(s, "{}\t{}", u.class_label, u.tokens.join(" "));
    }
    s
}

/// Writes a corpus file, optionally headed by a `# config_digest:` comment.
pub fn write_corpus_file(path: &Path, utterances: &[Utterance], digest: Option<&str>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, format_corpus(utterances, digest)).map_err(|e| Error::io(path, e))
}

impl RegistryManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Writes every dataset version (and any copies) of `registry` under
    /// `dir` and returns the manifest describing them.
    pub fn write_registry(dir: &Path, registry: &Registry, digest: Option<&str>) -> Result<Self> {
        let mut datasets = Vec::new();
        for d in registry.datasets() {
            let mut versions = Vec::new();
            for v in d.versions() {
                let rel = format!("class_{}_m{}.tsv", d.class_id(), v.timestamp);
                write_corpus_file(&dir.join(&rel), &v.utterances, digest)?;
                versions.push(VersionEntry {
                    timestamp: v.timestamp,
                    path: rel,
                });
            }
            datasets.push(DatasetEntry {
                class_id: d.class_id(),
                versions,
            });
        }
        let mut copies = Vec::new();
        for c in registry.copies() {
            let path = if c.flagged_empty {
                None
            } else {
                let rel = format!("copies/copy_{}_{}.tsv", c.source_class, c.consumer_class);
                write_corpus_file(&dir.join(&rel), &c.utterances, digest)?;
                Some(rel)
            };
            copies.push(CopyEntry {
                source: c.source_class,
                consumer: c.consumer_class,
                path,
                provenance: c.provenance.clone(),
                flagged_empty: c.flagged_empty,
            });
        }
        Ok(Self {
            classes: registry.num_classes(),
            embedding: None,
            datasets,
            copies,
            dev: None,
            test: None,
            config_digest: digest.map(str::to_owned),
        })
    }

    fn resolve(base: &Path, rel: &str) -> PathBuf {
        base.join(rel)
    }

    /// Reads the corpus files back into a registry.
    pub fn to_registry(&self, base: &Path) -> Result<Registry> {
        if self.datasets.len() != self.classes {
            return Err(Error::Config(format!(
                "manifest declares {} classes but lists {} datasets",
                self.classes,
                self.datasets.len()
            )));
        }
        let mut datasets = Vec::with_capacity(self.classes);
        for entry in &self.datasets {
            let versions = entry
                .versions
                .iter()
                .map(|v| {
                    Ok(Version {
                        timestamp: v.timestamp,
                        utterances: read_corpus_file(&Self::resolve(base, &v.path))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            datasets.push(Dataset::with_versions(entry.class_id, versions)?);
        }
        datasets.sort_by_key(Dataset::class_id);
        let mut registry = Registry::new(datasets)?;
        for c in &self.copies {
            let utterances = match &c.path {
                Some(p) => read_corpus_file(&Self::resolve(base, p))?,
                None => Vec::new(),
            };
            if utterances.iter().any(|u| u.class_label != c.source) {
                return Err(Error::invalid(format!(
                    "copy ({}, {}) contains utterances of another class",
                    c.source, c.consumer
                )));
            }
            registry.insert_copy(DatasetCopy {
                source_class: c.source,
                consumer_class: c.consumer,
                utterances,
                provenance: c.provenance.clone(),
                flagged_empty: c.flagged_empty,
            })?;
        }
        Ok(registry)
    }

    pub fn load_split(&self, base: &Path, which: Option<&String>) -> Result<Option<Vec<Utterance>>> {
        which
            .map(|p| read_corpus_file(&Self::resolve(base, p)))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{generate_synthetic_corpus, CorpusSpec};

    #[test]
    fn corpus_text_round_trips() {
        let utts = vec![
            Utterance::new(vec!["play".into(), "music".into()], 0).unwrap(),
            Utterance::new(vec!["stop".into()], 3).unwrap(),
        ];
        let text = format_corpus(&utts, None);
        assert_eq!(text, "0\tplay music\n3\tstop\n");
        assert_eq!(parse_corpus(&text).unwrap(), utts);
        let headed = format_corpus(&utts, Some("ab12"));
        assert!(headed.starts_with("# config_digest: ab12\n"));
        assert_eq!(parse_corpus(&headed).unwrap(), utts);
    }

    #[test]
    fn corpus_errors_name_line() {
        let err = parse_corpus("0\tok\nnot a line\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_corpus("x\tok\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_corpus("1\t   \n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn registry_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic_corpus(&CorpusSpec {
            classes: 3,
            per_class: 20,
            seed: 3,
            ..CorpusSpec::default()
        })
        .unwrap();
        let mut reg = Registry::new(ds).unwrap();
        reg.materialize_subsampled(0.5, 9).unwrap();
        let m = RegistryManifest::write_registry(dir.path(), &reg, Some("d1")).unwrap();
        m.save(&dir.path().join("manifest.json")).unwrap();
        let back = RegistryManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back, m);
        let reg2 = back.to_registry(dir.path()).unwrap();
        assert_eq!(reg2.datasets(), reg.datasets());
        assert!(reg2.is_materialized());
        for c in reg.copies() {
            assert_eq!(reg2.copy(c.source_class, c.consumer_class), Some(c));
        }
    }
}
