//! Sweep result files: a CSV of per-seed and seed-mean rows, a JSON dump,
//! and two-column plot series (`# `-prefixed header lines).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{SweepKind, SweepResult};
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    kind: &'a str,
    sweep_value: f64,
    seed: String,
    classes: Option<usize>,
    fraction: Option<f64>,
    staleness: Option<u32>,
    ova_error: f64,
    mc_error: f64,
    gap: f64,
    relative_gap: Option<f64>,
    alpha: f64,
    alpha_abs: f64,
    skipped_pairs: f64,
}

#[derive(Debug, Serialize)]
struct JsonDoc<'a> {
    config_digest: &'a str,
    result: &'a SweepResult,
}

/// Paths of everything [`write_outputs`] produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OutputFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub plots: Vec<PathBuf>,
}

impl OutputFiles {
    pub fn all(&self) -> Vec<PathBuf> {
        let mut v = vec![self.csv.clone(), self.json.clone()];
        v.extend(self.plots.iter().cloned());
        v
    }
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn render_csv(result: &SweepResult, digest: &str) -> Result<Vec<u8>> {
    let kind = result.config.kind.name();
    let mut buf = format!("# config_digest: {digest}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in &result.rows {
            w.serialize(CsvRow {
                kind,
                sweep_value: r.sweep_value,
                seed: r.seed.to_string(),
                classes: Some(r.classes),
                fraction: Some(r.fraction),
                staleness: Some(r.staleness),
                ova_error: r.ova_error,
                mc_error: r.mc_error,
                gap: r.gap,
                relative_gap: r.relative_gap,
                alpha: r.alpha,
                alpha_abs: r.alpha_abs,
                skipped_pairs: r.skipped_pairs.len() as f64,
            })?;
        }
        for m in &result.means {
            w.serialize(CsvRow {
                kind,
                sweep_value: m.sweep_value,
                seed: "mean".into(),
                classes: None,
                fraction: None,
                staleness: None,
                ova_error: m.ova_error,
                mc_error: m.mc_error,
                gap: m.gap,
                relative_gap: m.relative_gap,
                alpha: m.alpha,
                alpha_abs: m.alpha_abs,
                skipped_pairs: m.skipped_pairs,
            })?;
        }
        w.flush().map_err(|e| Error::io("<csv buffer>", e))?;
    }
    Ok(buf)
}

fn render_series(result: &SweepResult, digest: &str, column: &str, pick: impl Fn(&super::MeanRow) -> Option<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_digest: {digest}");
    let _ = writeln!(s, "# {} {}", result.config.kind.name(), column);
    for m in &result.means {
        if let Some(v) = pick(m) {
            let _ = writeln!(s, "{} {}", m.sweep_value, v);
        }
    }
    s
}

/// Writes `<kind>.csv`, `<kind>.json` and `<kind>_<series>.dat` files under
/// `dir`.
pub fn write_outputs(dir: &Path, result: &SweepResult, digest: &str) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let kind = result.config.kind.name();
    let csv = dir.join(format!("{kind}.csv"));
    write(&csv, &render_csv(result, digest)?)?;

    let json = dir.join(format!("{kind}.json"));
    let mut text = serde_json::to_string_pretty(&JsonDoc {
        config_digest: digest,
        result,
    })?;
    text.push('\n');
    write(&json, text.as_bytes())?;

    let mut plots = Vec::new();
    let mut series: Vec<(&str, Box<dyn Fn(&super::MeanRow) -> Option<f64>>)> = vec![
        ("gap", Box::new(|m| Some(m.gap))),
        ("alpha_abs", Box::new(|m| Some(m.alpha_abs))),
    ];
    if result.config.kind == SweepKind::Staleness {
        series.push(("relative_gap", Box::new(|m| m.relative_gap)));
    }
    for (name, pick) in series {
        let path = dir.join(format!("{kind}_{name}.dat"));
        write(&path, render_series(result, digest, name, pick).as_bytes())?;
        plots.push(path);
    }
    Ok(OutputFiles { csv, json, plots })
}
