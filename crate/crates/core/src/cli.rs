//! Command-line front end.
//!
//! Exit codes are shared by every command: 0 for success (or a healthy
//! verdict), 1 when `health` recommends a resync, 2 for usage and
//! validation errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asynchrony::{compute_alpha, health_check, AsynchronyReport, EmptyCopyPolicy, HealthAction, HealthVerdict};
use crate::density::DEFAULT_VARIANCE;
use crate::embedding::{EmbeddingConfig, OovPolicy, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::experiments::{run_sweep, write_outputs, BaseConfig, SweepConfig, SweepKind};
use crate::models::{evaluate, train_multiclass, train_ova, EvalResult, MulticlassModel, OvaSystem, TrainConfig};
use crate::registry::{
    derive_seed, generate_evolving_corpus, split_speaker_independent, write_corpus_file, CorpusSpec,
    EvolutionSpec, Registry, RegistryManifest,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_RESYNC: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

const MANIFEST_FILE: &str = "manifest.json";
const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "ova-drift", version, about = "Dataset asynchrony metric and simulations for one-vs-all classifiers")]
pub struct Cli {
    /// Worker threads for parallel stages (defaults to all cores).
    #[arg(long, global = true, env = "OVA_DRIFT_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic registry: corpus files, dev/test splits and a manifest.
    GenData(GenDataArgs),
    /// Compute the asynchrony metric of a registry.
    Metric(MetricArgs),
    /// Train the OVA system on copies and the multi-class baseline on originals.
    Train(TrainArgs),
    /// Evaluate trained models on the registry's test split.
    Evaluate(EvaluateArgs),
    /// Run a sweep and write CSV, JSON and plot data.
    Sweep(SweepArgs),
    /// Compare a current metric report against a baseline.
    Health(HealthArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Class-specific vocabulary size.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Months of synthetic evolution (0 for a single version).
    #[arg(long)]
    pub months: Option<u32>,
    /// Late class launch as `CLASS:MONTH`; repeatable.
    #[arg(long = "launch", value_parser = parse_launch)]
    pub launches: Vec<(usize, u32)>,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub embedding_seed: Option<u64>,
    /// Also materialize sub-sampled copies at this fraction.
    #[arg(long, conflicts_with = "staleness")]
    pub fraction: Option<f64>,
    /// Also materialize copies this many months stale.
    #[arg(long)]
    pub staleness: Option<u32>,
}

#[derive(Debug, Args)]
pub struct Materialize {
    /// Sub-sample fresh copies at this fraction.
    #[arg(long, conflicts_with = "staleness")]
    pub fraction: Option<f64>,
    /// Snapshot fresh copies this many months stale.
    #[arg(long)]
    pub staleness: Option<u32>,
    /// Seed for sub-sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Month to snapshot at (defaults to the newest version in the registry).
    #[arg(long)]
    pub now: Option<u32>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EmptyCopies {
    Skip,
    Error,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Kernel variance.
    #[arg(long)]
    pub variance: Option<f64>,
    /// Embedding table file (`token v1 ... vd` per line).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub dimension: Option<usize>,
    /// Use hashed vectors with this seed for out-of-vocabulary tokens.
    #[arg(long)]
    pub embedding_seed: Option<u64>,
    #[command(flatten)]
    pub materialize: Materialize,
    #[arg(long, value_enum)]
    pub empty_copies: Option<EmptyCopies>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub materialize: Materialize,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for training (mini-batch order).
    #[arg(long)]
    pub train_seed: Option<u64>,
    /// Ignore the dev split when early stopping.
    #[arg(long)]
    pub no_dev: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `models.json` written by `train`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Async,
    Size,
    Classes,
    Staleness,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Async => SweepKind::AsyncFraction,
            KindArg::Size => SweepKind::DataSize,
            KindArg::Classes => SweepKind::ClassCount,
            KindArg::Staleness => SweepKind::Staleness,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub variance: Option<f64>,
    /// Fixed fraction of size and class-count sweeps.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub months: Option<u32>,
    #[arg(long = "launch", value_parser = parse_launch)]
    pub launches: Vec<(usize, u32)>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HealthArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub current: PathBuf,
    /// Relative increase of alpha_abs that triggers a resync.
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_launch(s: &str) -> std::result::Result<(usize, u32), String> {
    let (c, m) = s
        .split_once(':')
        .ok_or_else(|| format!("expected CLASS:MONTH, got {s:?}"))?;
    Ok((
        c.trim().parse().map_err(|_| format!("bad class in {s:?}"))?,
        m.trim().parse().map_err(|_| format!("bad month in {s:?}"))?,
    ))
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
}

/// SHA-256 over the command name and its resolved configuration.
pub fn config_digest<T: Serialize>(command: &str, config: &T) -> Result<String> {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    let mut hex = String::with_capacity(64);
    for b in h.finalize() {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_config<T: Default + for<'de> Deserialize<'de>>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

fn write_run_manifest<T: Serialize>(
    path: &Path,
    command: &str,
    digest: &str,
    config: &T,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
) -> Result<()> {
    write_json(
        path,
        &RunManifest {
            command: command.into(),
            config_digest: digest.into(),
            config: serde_json::to_value(config)?,
            seeds,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

/// Sibling path for the run manifest of a single-file output.
fn run_manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_stem().map(OsString::from).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut (dyn Write + Send)) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Parses `args` and runs the command, writing reports to `stdout` and
/// diagnostics to `stderr`. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
                return EXIT_OK;
            }
            let _ = stderr.write_all(text.as_bytes());
            return EXIT_USAGE;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            let _ = writeln!(stderr, "error: --jobs must be at least 1");
            return EXIT_USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command, stdout, stderr)) {
        Ok(code) => code,
        Err(e) => {
            let _ = write!(stderr, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = write!(stderr, ": {s}");
                source = s.source();
            }
            let _ = writeln!(stderr);
            EXIT_USAGE
        }
    }
}

fn dispatch(command: Command, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> Result<u8> {
    match command {
        Command::GenData(a) => cmd_gen_data(a, stdout),
        Command::Metric(a) => cmd_metric(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Evaluate(a) => cmd_evaluate(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout, stderr),
        Command::Health(a) => cmd_health(a, stdout),
    }
}

/// Resolved `gen-data` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub classes: usize,
    pub per_class: usize,
    pub vocab_per_class: usize,
    pub overlap: f64,
    pub sentence_len: (usize, usize),
    pub seed: u64,
    pub months: u32,
    pub monthly_growth: f64,
    pub monthly_drift: f64,
    pub launches: Vec<(usize, u32)>,
    pub split: (f64, f64, f64),
    pub dimension: usize,
    pub embedding_seed: u64,
    pub fraction: Option<f64>,
    pub staleness: Option<u32>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        let base = BaseConfig::default();
        Self {
            classes: corpus.classes,
            per_class: corpus.per_class,
            vocab_per_class: corpus.vocab_per_class,
            overlap: corpus.overlap,
            sentence_len: corpus.sentence_len,
            seed: 0,
            months: 0,
            monthly_growth: base.monthly_growth,
            monthly_drift: base.monthly_drift,
            launches: Vec::new(),
            split: base.split,
            dimension: DEFAULT_DIMENSION,
            embedding_seed: 0,
            fraction: None,
            staleness: None,
        }
    }
}

fn cmd_gen_data(a: GenDataArgs, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    let mut cfg: GenDataConfig = load_config(a.config.as_ref())?;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { cfg.$field = v; })* };
    }
    set!(classes => classes, per_class => per_class, vocab => vocab_per_class, overlap => overlap,
         seed => seed, months => months, dimension => dimension, embedding_seed => embedding_seed);
    if !a.launches.is_empty() {
        cfg.launches = a.launches;
    }
    if a.fraction.is_some() || a.staleness.is_some() {
        cfg.fraction = a.fraction;
        cfg.staleness = a.staleness;
    }
    if cfg.classes < 2 {
        return Err(Error::invalid("--classes must be at least 2"));
    }
    if cfg.dimension == 0 {
        return Err(Error::invalid("--dimension must be at least 1"));
    }
    let digest = config_digest("gen-data", &cfg)?;

    let spec = CorpusSpec {
        classes: cfg.classes,
        per_class: cfg.per_class,
        vocab_per_class: cfg.vocab_per_class,
        overlap: cfg.overlap,
        sentence_len: cfg.sentence_len,
        seed: cfg.seed,
    };
    let evolution = EvolutionSpec {
        months: cfg.months,
        growth: cfg.monthly_growth,
        drift: cfg.monthly_drift,
        launches: cfg.launches.clone(),
    };
    let datasets = generate_evolving_corpus(&spec, &evolution)?;
    let splits = split_speaker_independent(&datasets, cfg.split, derive_seed(cfg.seed, 1))?;
    let mut registry = Registry::new(splits.train.clone())?;
    if let Some(f) = cfg.fraction {
        registry.materialize_subsampled(f, derive_seed(cfg.seed, 2))?;
    } else if let Some(n) = cfg.staleness {
        registry.materialize_stale(cfg.months, |_| n)?;
    }

    let out = &a.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RegistryManifest::write_registry(out, &registry, Some(&digest))?;
    write_corpus_file(&out.join("dev.tsv"), &splits.dev_utterances(), Some(&digest))?;
    write_corpus_file(&out.join("test.tsv"), &splits.test_utterances(), Some(&digest))?;
    manifest.dev = Some("dev.tsv".into());
    manifest.test = Some("test.tsv".into());
    manifest.embedding = Some(EmbeddingConfig::hashed(cfg.dimension, cfg.embedding_seed));
    manifest.save(&out.join(MANIFEST_FILE))?;

    let mut outputs: Vec<PathBuf> = manifest
        .datasets
        .iter()
        .flat_map(|d| d.versions.iter().map(|v| PathBuf::from(&v.path)))
        .chain(manifest.copies.iter().filter_map(|c| c.path.as_ref().map(PathBuf::from)))
        .collect();
    outputs.extend(["dev.tsv", "test.tsv", MANIFEST_FILE].map(PathBuf::from));
    write_run_manifest(&out.join(RUN_MANIFEST_FILE), "gen-data", &digest, &cfg, vec![cfg.seed], outputs)?;
    let _ = writeln!(
        stdout,
        "wrote {} classes, {} copies to {} (config_digest {digest})",
        registry.num_classes(),
        registry.copies().count(),
        out.display()
    );
    Ok(EXIT_OK)
}

/// How copies are materialized before a command runs, if at all.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterializeConfig {
    pub fraction: Option<f64>,
    pub staleness: Option<u32>,
    pub seed: u64,
    pub now: Option<u32>,
}

impl MaterializeConfig {
    fn apply_flags(&mut self, m: Materialize) {
        if m.fraction.is_some() || m.staleness.is_some() {
            self.fraction = m.fraction;
            self.staleness = m.staleness;
        }
        if let Some(s) = m.seed {
            self.seed = s;
        }
        if m.now.is_some() {
            self.now = m.now;
        }
    }

    fn apply(&self, registry: &mut Registry) -> Result<()> {
        if let Some(f) = self.fraction {
            registry.materialize_subsampled(f, self.seed)
        } else if let Some(n) = self.staleness {
            let now = match self.now {
                Some(t) => t,
                None => registry
                    .datasets()
                    .iter()
                    .map(|d| d.latest().timestamp)
                    .max()
                    .unwrap_or(0),
            };
            registry.materialize_stale(now, |_| n)
        } else if registry.is_materialized() {
            Ok(())
        } else {
            Err(Error::invalid(
                "manifest lacks copies for some class pairs; pass --fraction or --staleness to materialize them",
            ))
        }
    }
}

/// Resolved `metric` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub manifest: Option<PathBuf>,
    pub variance: f64,
    pub embeddings: Option<PathBuf>,
    pub dimension: Option<usize>,
    pub embedding_seed: Option<u64>,
    pub materialize: MaterializeConfig,
    pub empty_copies: EmptyCopyPolicy,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            variance: DEFAULT_VARIANCE,
            embeddings: None,
            dimension: None,
            embedding_seed: None,
            materialize: MaterializeConfig::default(),
            empty_copies: EmptyCopyPolicy::Skip,
        }
    }
}

/// Manifest embedding settings with command-line overrides applied.
fn resolve_embedding(
    manifest: &RegistryManifest,
    embeddings: Option<&PathBuf>,
    dimension: Option<usize>,
    embedding_seed: Option<u64>,
) -> Result<EmbeddingConfig> {
    let mut emb = manifest
        .embedding
        .clone()
        .unwrap_or_else(|| EmbeddingConfig::hashed(DEFAULT_DIMENSION, 0));
    if let Some(d) = dimension {
        if manifest.embedding.is_some() && d != emb.dimension {
            return Err(Error::Config(format!(
                "embedding dimension mismatch: manifest declares {}, requested {d}",
                emb.dimension
            )));
        }
        emb.dimension = d;
    }
    if let Some(seed) = embedding_seed {
        emb.oov_policy = OovPolicy::HashFallback { seed };
    }
    if let Some(p) = embeddings {
        emb.table = Some(std::path::absolute(p).map_err(|e| Error::io(p, e))?);
    }
    if emb.dimension == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    Ok(emb)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn required_manifest(path: Option<&PathBuf>) -> Result<PathBuf> {
    path.cloned()
        .ok_or_else(|| Error::invalid("--manifest is required (flag or config file)"))
}

/// Metric report as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDoc {
    pub config_digest: String,
    #[serde(flatten)]
    pub report: AsynchronyReport,
}

fn cmd_metric(a: MetricArgs, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    let mut cfg: MetricConfig = load_config(a.config.as_ref())?;
    if a.manifest.is_some() {
        cfg.manifest = a.manifest;
    }
    if let Some(v) = a.variance {
        cfg.variance = v;
    }
    if a.embeddings.is_some() {
        cfg.embeddings = a.embeddings;
    }
    if a.dimension.is_some() {
        cfg.dimension = a.dimension;
    }
    if a.embedding_seed.is_some() {
        cfg.embedding_seed = a.embedding_seed;
    }
    if let Some(p) = a.empty_copies {
        cfg.empty_copies = match p {
            EmptyCopies::Skip => EmptyCopyPolicy::Skip,
            EmptyCopies::Error => EmptyCopyPolicy::Error,
        };
    }
    cfg.materialize.apply_flags(a.materialize);
    let digest = config_digest("metric", &cfg)?;

    let path = required_manifest(cfg.manifest.as_ref())?;
    let manifest = RegistryManifest::load(&path)?;
    let base = manifest_dir(&path);
    let emb = resolve_embedding(&manifest, cfg.embeddings.as_ref(), cfg.dimension, cfg.embedding_seed)?;
    let table = emb.build(&base)?;
    let mut registry = manifest.to_registry(&base)?;
    cfg.materialize.apply(&mut registry)?;
    let report = compute_alpha(&registry, &table, cfg.variance, cfg.empty_copies)?;

    let doc = MetricDoc {
        config_digest: digest.clone(),
        report,
    };
    emit(a.out.as_deref(), &pretty(&doc)?, stdout)?;
    if let Some(out) = &a.out {
        write_run_manifest(
            &run_manifest_beside(out),
            "metric",
            &digest,
            &cfg,
            vec![cfg.materialize.seed],
            vec![out.clone()],
        )?;
    }
    Ok(EXIT_OK)
}

/// Resolved `train` configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub manifest: Option<PathBuf>,
    pub materialize: MaterializeConfig,
    pub train: TrainConfig,
    pub train_seed: u64,
    pub no_dev: bool,
}

/// Trained models as written by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelsDoc {
    pub config_digest: String,
    pub embedding: EmbeddingConfig,
    pub ova: OvaSystem,
    pub multiclass: MulticlassModel,
}

fn cmd_train(a: TrainArgs, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    let mut cfg: TrainCmdConfig = load_config(a.config.as_ref())?;
    if a.manifest.is_some() {
        cfg.manifest = a.manifest;
    }
    cfg.materialize.apply_flags(a.materialize);
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.l2 {
        cfg.train.l2 = v;
    }
    if let Some(v) = a.max_iters {
        cfg.train.max_iters = v;
    }
    if a.batch_size.is_some() {
        cfg.train.batch_size = a.batch_size;
    }
    if let Some(v) = a.train_seed {
        cfg.train_seed = v;
    }
    cfg.no_dev |= a.no_dev;
    let digest = config_digest("train", &cfg)?;

    let path = required_manifest(cfg.manifest.as_ref())?;
    let manifest = RegistryManifest::load(&path)?;
    let base = manifest_dir(&path);
    let emb = resolve_embedding(&manifest, None, None, None)?;
    let table = emb.build(&base)?;
    let mut registry = manifest.to_registry(&base)?;
    cfg.materialize.apply(&mut registry)?;
    let dev = if cfg.no_dev {
        None
    } else {
        manifest.load_split(&base, manifest.dev.as_ref())?
    };

    let ova = train_ova(&registry, &table, &cfg.train, cfg.train_seed, dev.as_deref())?;
    let multiclass = train_multiclass(registry.datasets(), &table, &cfg.train, cfg.train_seed, dev.as_deref())?;
    let emb = EmbeddingConfig {
        table: emb
            .table
            .map(|t| if t.is_absolute() { t } else { base.join(t) }),
        ..emb
    };
    let out = &a.out;
    let models = out.join("models.json");
    write_json(
        &models,
        &ModelsDoc {
            config_digest: digest.clone(),
            embedding: emb,
            ova,
            multiclass,
        },
    )?;
    write_run_manifest(
        &out.join(RUN_MANIFEST_FILE),
        "train",
        &digest,
        &cfg,
        vec![cfg.materialize.seed, cfg.train_seed],
        vec![PathBuf::from("models.json")],
    )?;
    let _ = writeln!(stdout, "wrote {} (config_digest {digest})", models.display());
    Ok(EXIT_OK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub config_digest: String,
    pub ova: EvalResult,
    pub multiclass: EvalResult,
    /// OVA error minus multi-class error.
    pub gap: f64,
}

#[derive(Serialize)]
struct EvaluateConfig<'a> {
    manifest: &'a Path,
    models: &'a Path,
    models_digest: &'a str,
}

fn cmd_evaluate(a: EvaluateArgs, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    let models: ModelsDoc = read_json(&a.models)?;
    let cfg = EvaluateConfig {
        manifest: &a.manifest,
        models: &a.models,
        models_digest: &models.config_digest,
    };
    let digest = config_digest("evaluate", &cfg)?;
    let manifest = RegistryManifest::load(&a.manifest)?;
    let base = manifest_dir(&a.manifest);
    let table = models.embedding.build(&base)?;
    if models.multiclass.dimension != table.dimension() {
        return Err(Error::Config(format!(
            "embedding dimension mismatch: models use {}, table has {}",
            models.multiclass.dimension,
            table.dimension()
        )));
    }
    let test = manifest
        .load_split(&base, manifest.test.as_ref())?
        .ok_or_else(|| Error::invalid("manifest has no test split"))?;
    let ova = evaluate(
        |u| Ok(models.ova.predict_embedded(table.embed_sentence(&u.tokens)?.as_slice())),
        &test,
    )?;
    let multiclass = evaluate(|u| models.multiclass.predict(&u.tokens, &table), &test)?;
    let doc = EvalDoc {
        config_digest: digest.clone(),
        gap: ova.error_rate - multiclass.error_rate,
        ova,
        multiclass,
    };
    emit(a.out.as_deref(), &pretty(&doc)?, stdout)?;
    if let Some(out) = &a.out {
        write_run_manifest(&run_manifest_beside(out), "evaluate", &digest, &cfg, Vec::new(), vec![out.clone()])?;
    }
    Ok(EXIT_OK)
}

/// Sweep config file: every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepFile {
    kind: Option<SweepKind>,
    grid: Option<Vec<f64>>,
    base: Option<serde_json::Value>,
}

fn default_grid(kind: SweepKind) -> Vec<f64> {
    match kind {
        SweepKind::AsyncFraction => vec![1.0, 0.9, 0.7, 0.5, 0.3],
        SweepKind::DataSize => vec![50.0, 158.0, 500.0, 1581.0, 5000.0],
        SweepKind::ClassCount => vec![2.0, 4.0, 8.0],
        SweepKind::Staleness => vec![0.0, 2.0, 4.0, 6.0],
    }
}

fn resolve_sweep(a: &SweepArgs) -> Result<SweepConfig> {
    let file: SweepFile = load_config(a.config.as_ref())?;
    let classes_in_file = file
        .base
        .as_ref()
        .is_some_and(|b| b.get("classes").is_some());
    let mut base: BaseConfig = match file.base {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::Config(format!("sweep base: {e}")))?,
        None => BaseConfig::default(),
    };
    let kind = a
        .kind
        .map(SweepKind::from)
        .or(file.kind)
        .ok_or_else(|| Error::invalid("--kind is required (flag or config file)"))?;
    let grid = a.grid.clone().or(file.grid).unwrap_or_else(|| default_grid(kind));
    if let Some(s) = &a.seeds {
        base.seeds = s.clone();
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),*) => { $(if let Some(v) = a.$flag { base.$($field).+ = v; })* };
    }
    set!(classes => classes, per_class => per_class, vocab => vocab_per_class, overlap => overlap,
         dimension => dimension, variance => variance, fraction => fraction, months => months,
         learning_rate => train.learning_rate, l2 => train.l2, max_iters => train.max_iters);
    if !a.launches.is_empty() {
        base.launches = a.launches.clone();
    }
    if kind == SweepKind::ClassCount && a.classes.is_none() && !classes_in_file {
        let largest = grid.iter().copied().fold(0.0, f64::max);
        base.classes = base.classes.max(largest as usize);
    }
    Ok(SweepConfig { kind, grid, base })
}

fn cmd_sweep(a: SweepArgs, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> Result<u8> {
    let cfg = resolve_sweep(&a)?;
    cfg.validate()?;
    let digest = config_digest("sweep", &cfg)?;
    let result = run_sweep(&cfg)?;
    let files = write_outputs(&a.out, &result, &digest)?;
    let outputs = files
        .all()
        .iter()
        .map(|p| p.strip_prefix(&a.out).map(Path::to_path_buf).unwrap_or_else(|_| p.clone()))
        .collect();
    write_run_manifest(
        &a.out.join(RUN_MANIFEST_FILE),
        "sweep",
        &digest,
        &cfg,
        cfg.base.seeds.clone(),
        outputs,
    )?;

    let series = if cfg.kind == SweepKind::Staleness { "relative gap" } else { "gap" };
    let _ = writeln!(
        stdout,
        "{} sweep: {} rows over {} values x {} seeds (config_digest {digest})",
        cfg.kind.name(),
        result.rows.len(),
        cfg.grid.len(),
        cfg.base.seeds.len()
    );
    let _ = writeln!(stdout, "{:>10} {:>10} {:>10} {:>10} {:>12}", "value", "ova", "mc", series, "alpha_abs");
    for m in &result.means {
        let g = result.primary_gap(m).map_or("-".to_string(), |g| format!("{g:+.4}"));
        let _ = writeln!(
            stdout,
            "{:>10} {:>10.4} {:>10.4} {:>10} {:>12.4}",
            m.sweep_value, m.ova_error, m.mc_error, g, m.alpha_abs
        );
    }
    match result.correlation_abs {
        Some(r) => {
            let _ = writeln!(stdout, "pearson(alpha_abs, {series}) = {r:.4}");
        }
        None => {
            let _ = writeln!(stdout, "pearson(alpha_abs, {series}) undefined (constant series)");
        }
    }
    let sync_value = match cfg.kind {
        SweepKind::AsyncFraction => Some(1.0),
        SweepKind::Staleness => Some(0.0),
        _ => None,
    };
    if let Some(m) = sync_value.and_then(|v| result.mean_at(v)) {
        let verdict = if m.alpha_abs == 0.0 { "ok" } else { "NONZERO" };
        let _ = writeln!(
            stdout,
            "synchronized endpoint {}: alpha_abs = {} ({verdict})",
            m.sweep_value, m.alpha_abs
        );
    }
    let _ = writeln!(stdout, "outputs in {}", a.out.display());
    if !result.failures.is_empty() {
        for f in &result.failures {
            let _ = writeln!(stderr, "failed point value={} seed={}: {}", f.sweep_value, f.seed, f.message);
        }
        return Ok(EXIT_USAGE);
    }
    Ok(EXIT_OK)
}

/// Health verdict as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthDoc {
    pub config_digest: String,
    #[serde(flatten)]
    pub verdict: HealthVerdict,
}

fn cmd_health(a: HealthArgs, stdout: &mut (dyn Write + Send)) -> Result<u8> {
    let baseline: AsynchronyReport = read_json(&a.baseline)?;
    let current: AsynchronyReport = read_json(&a.current)?;
    #[derive(Serialize)]
    struct HealthConfig<'a> {
        baseline: &'a AsynchronyReport,
        current: &'a AsynchronyReport,
        threshold: f64,
    }
    let cfg = HealthConfig {
        baseline: &baseline,
        current: &current,
        threshold: a.threshold,
    };
    let digest = config_digest("health", &cfg)?;
    let verdict = health_check(&baseline, &current, a.threshold)?;
    let code = match verdict.action {
        HealthAction::Healthy => EXIT_OK,
        HealthAction::ResyncRecommended => EXIT_RESYNC,
    };
    let text = pretty(&HealthDoc {
        config_digest: digest.clone(),
        verdict,
    })?;
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    if let Some(out) = &a.out {
        emit(Some(out), &text, stdout)?;
        write_run_manifest(&run_manifest_beside(out), "health", &digest, &a.threshold, Vec::new(), vec![out.clone()])?;
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn launch_parsing() {
        assert_eq!(parse_launch("4:6"), Ok((4, 6)));
        assert!(parse_launch("4").is_err());
        assert!(parse_launch("a:1").is_err());
    }

    #[test]
    fn digest_depends_on_command_and_config() {
        let a = config_digest("x", &1).unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, config_digest("x", &1).unwrap());
        assert_ne!(a, config_digest("y", &1).unwrap());
        assert_ne!(a, config_digest("x", &2).unwrap());
    }

    #[test]
    fn run_manifest_path() {
        assert_eq!(run_manifest_beside(Path::new("r/report.json")), PathBuf::from("r/report.run.json"));
    }

    #[test]
    fn class_sweep_grows_corpus_to_grid() {
        let cli = Cli::try_parse_from(["ova-drift", "sweep", "--kind", "classes", "--grid", "2,4,8", "--out", "x"]).unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        assert_eq!(resolve_sweep(&a).unwrap().base.classes, 8);
    }
}
