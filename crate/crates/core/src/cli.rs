//! Subcommand front end. Every flag has a config-file twin; flags win.
//!
//! Config file layout (JSON, every key optional):
//!
//! ```json
//! {
//!   "seed": 0, "jobs": 4, "out_dir": "out", "force": false,
//!   "corpus": ["train.jsonl"], "format": "role_labeled", "error_budget": 0.01,
//!   "assistant_start": [100, 101], "assistant_end": [102],
//!   "profile": "llama3-8b-eagle3", "vocab_size": 128256,
//!   "freq": "out/frequencies.json", "force_include": [0, 1],
//!   "objective": {"alpha": 0.5, "c_min": 0.9, "k_min": 256, "k_max": 128256, "penalty": -1.0},
//!   "tpe": {"n_trials": 100, "n_startup": 10, "n_candidates": 24, "gamma_fraction": 0.1, "gamma_cap": 25},
//!   "exhaustive": false, "k": 32000, "stride": 256, "ks": [1000, 2000],
//!   "artifact": "out/artifact", "generations": "gen.jsonl", "token_map": "tokens.jsonl",
//!   "missing_top": 50, "sizes": [1000, 10000], "seeds": [0, 1, 2], "out": "freq.json"
//! }
//! ```
//!
//! Relative paths in a config file resolve against the file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use vocab_pareto::analysis::{
    curves_csv, emit_curves, evaluate_coverage, pareto_front, stability_csv, stability_sweep,
    KSelection, TokenTextMap, DEFAULT_MISSING_TOP,
};
use vocab_pareto::artifact::{
    build_artifact, sha256_hex, write_file_atomic, ArtifactProvenance, Provenance,
    VocabularyArtifact, METADATA_FILE,
};
use vocab_pareto::frequency::{build_frequency_table, CoverageCurve, FrequencyTable};
use vocab_pareto::ingest::{
    read_conversations, AssistantSpanStream, CorpusRecord, DelimiterSpec, InputFormat,
    DEFAULT_ERROR_BUDGET,
};
use vocab_pareto::latency::{ArchitectureProfile, LLAMA3_8B_EAGLE3};
use vocab_pareto::objective::{Objective, ObjectiveConfig};
use vocab_pareto::tpe::{optimize_exhaustive, optimize_tpe, GammaRule, StudyResult, TpeConfig};
use vocab_pareto::{Error, Result, TokenId};

pub const FREQUENCIES_FILE: &str = "frequencies.json";
pub const STUDY_FILE: &str = "study.json";
pub const ARTIFACT_DIR: &str = "artifact";
pub const REPORT_FILE: &str = "coverage_report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const PARETO_FILE: &str = "pareto.csv";
pub const STABILITY_FILE: &str = "stability.csv";

#[derive(Debug, Parser)]
#[command(
    name = "vocab-pareto",
    version,
    about = "Pick and emit a reduced draft vocabulary"
)]
pub struct Cli {
    /// JSON config file; flags override its values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: available processors]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for output files [default: .]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Replace existing output files
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Count assistant-token frequencies of a corpus
    Count(CountArgs),
    /// Search for the best vocabulary size and write the artifact
    Optimize(OptimizeArgs),
    /// Write the artifact for an explicit vocabulary size
    Trim(TrimArgs),
    /// Measure how well an artifact covers generated tokens
    Evaluate(EvaluateArgs),
    /// Tabulate coverage, reduction and utility over k
    Curves(CurvesArgs),
    /// Re-optimize on record subsamples of several sizes
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FormatArg {
    /// `{"messages": [{"role": ..., "tokens": [...]}]}` per line
    RoleLabeled,
    /// `{"tokens": [...]}` per line, assistant turns marked by delimiters
    RawStream,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::RoleLabeled => InputFormat::RoleLabeled,
            FormatArg::RawStream => InputFormat::RawStream,
        }
    }
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Tokenized JSONL file (repeatable)
    #[arg(long, value_name = "PATH")]
    corpus: Vec<PathBuf>,
    /// Record layout [default: role-labeled]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Token ids opening an assistant turn in raw streams, comma separated
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    assistant_start: Option<Vec<TokenId>>,
    /// Token ids closing an assistant turn in raw streams, comma separated
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    assistant_end: Option<Vec<TokenId>>,
    /// Fraction of malformed lines tolerated [default: 0.01]
    #[arg(long)]
    error_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// Built-in profile name or profile JSON path [default: llama3-8b-eagle3]
    #[arg(long, value_name = "NAME|PATH")]
    profile: Option<String>,
    /// Full vocabulary size, overriding the profile's
    #[arg(long)]
    vocab_size: Option<u64>,
}

#[derive(Debug, Args)]
struct ObjectiveArgs {
    /// Weight on coverage [default: 0.5]
    #[arg(long)]
    alpha: Option<f64>,
    /// Minimum coverage [default: 0.9]
    #[arg(long)]
    c_min: Option<f64>,
    /// Smallest k searched [default: min(256, V)]
    #[arg(long)]
    k_min: Option<u64>,
    /// Largest k searched [default: V]
    #[arg(long)]
    k_max: Option<u64>,
    /// Score of infeasible k [default: -1]
    #[arg(long, allow_hyphen_values = true)]
    penalty: Option<f64>,
}

#[derive(Debug, Args)]
struct TpeArgs {
    /// Trials per study [default: 100]
    #[arg(long)]
    n_trials: Option<usize>,
    /// Uniform random trials before modeling starts [default: 10]
    #[arg(long)]
    n_startup: Option<usize>,
    /// Candidates scored per modeled trial [default: 24]
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Fraction of trials in the good set [default: 0.1]
    #[arg(long)]
    gamma_fraction: Option<f64>,
    /// Cap on the good set size [default: 25]
    #[arg(long)]
    gamma_cap: Option<usize>,
}

#[derive(Debug, Args)]
struct CountArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    profile: ProfileArgs,
    /// Output file [default: <out-dir>/frequencies.json]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// Frequency table from `count`
    #[arg(long, value_name = "PATH")]
    freq: Option<PathBuf>,
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[command(flatten)]
    tpe: TpeArgs,
    /// Score every k instead of running TPE
    #[arg(long)]
    exhaustive: bool,
    /// Token ids always kept, comma separated
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    force_include: Option<Vec<TokenId>>,
}

#[derive(Debug, Args)]
struct TrimArgs {
    /// Frequency table from `count`
    #[arg(long, value_name = "PATH")]
    freq: Option<PathBuf>,
    #[command(flatten)]
    profile: ProfileArgs,
    /// Vocabulary size to keep
    #[arg(long)]
    k: Option<u64>,
    /// Recorded in the artifact metadata only
    #[arg(long)]
    alpha: Option<f64>,
    /// Recorded in the artifact metadata only
    #[arg(long)]
    c_min: Option<f64>,
    /// Token ids always kept, comma separated
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    force_include: Option<Vec<TokenId>>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Artifact directory
    #[arg(long, value_name = "DIR")]
    artifact: Option<PathBuf>,
    /// Generated tokens as JSONL; raw streams without delimiters count every token
    #[arg(long, value_name = "PATH")]
    generations: Option<PathBuf>,
    /// Record layout of the generations [default: role-labeled]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Token ids opening an assistant turn, comma separated
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    assistant_start: Option<Vec<TokenId>>,
    /// Token ids closing an assistant turn, comma separated
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    assistant_end: Option<Vec<TokenId>>,
    /// Fraction of malformed lines tolerated [default: 0.01]
    #[arg(long)]
    error_budget: Option<f64>,
    /// Length of the missing-token list [default: 50]
    #[arg(long)]
    missing_top: Option<usize>,
    /// JSONL `{"id", "text"}` map used to label missing tokens
    #[arg(long, value_name = "PATH")]
    token_map: Option<PathBuf>,
    /// Output file [default: <out-dir>/coverage_report.json]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    /// Frequency table from `count`
    #[arg(long, value_name = "PATH")]
    freq: Option<PathBuf>,
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    /// Step between tabulated k [default: 1]
    #[arg(long, conflicts_with = "ks")]
    stride: Option<u64>,
    /// Explicit k values, comma separated
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    profile: ProfileArgs,
    #[command(flatten)]
    objective: ObjectiveArgs,
    #[command(flatten)]
    tpe: TpeArgs,
    /// Subsample sizes in records, comma separated
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Subsample and study seeds, comma separated [default: --seed]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    jobs: Option<usize>,
    out_dir: Option<PathBuf>,
    force: Option<bool>,
    corpus: Option<Vec<PathBuf>>,
    format: Option<FormatArg>,
    error_budget: Option<f64>,
    assistant_start: Option<Vec<TokenId>>,
    assistant_end: Option<Vec<TokenId>>,
    profile: Option<String>,
    vocab_size: Option<u64>,
    freq: Option<PathBuf>,
    force_include: Option<Vec<TokenId>>,
    #[serde(default)]
    objective: ObjectiveSection,
    #[serde(default)]
    tpe: TpeSection,
    exhaustive: Option<bool>,
    k: Option<u64>,
    stride: Option<u64>,
    ks: Option<Vec<u64>>,
    artifact: Option<PathBuf>,
    generations: Option<PathBuf>,
    token_map: Option<PathBuf>,
    missing_top: Option<usize>,
    sizes: Option<Vec<usize>>,
    seeds: Option<Vec<u64>>,
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveSection {
    alpha: Option<f64>,
    c_min: Option<f64>,
    k_min: Option<u64>,
    k_max: Option<u64>,
    penalty: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TpeSection {
    n_trials: Option<usize>,
    n_startup: Option<usize>,
    n_candidates: Option<usize>,
    gamma_fraction: Option<f64>,
    gamma_cap: Option<usize>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| read_error(path, e))?;
        let mut cfg: ConfigFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let join = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                *q = base.join(&*q);
            }
        };
        join(&mut cfg.out_dir);
        join(&mut cfg.freq);
        join(&mut cfg.artifact);
        join(&mut cfg.generations);
        join(&mut cfg.token_map);
        join(&mut cfg.out);
        if let Some(c) = cfg.corpus.as_mut() {
            for p in c.iter_mut() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.profile.as_mut() {
            if ArchitectureProfile::builtin(p).is_none() {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }
}

fn read_error(path: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io {
            path: path.to_path_buf(),
            source: e,
        },
    }
}

/// Options shared by every subcommand after merging flags over the config.
struct Common {
    seed: u64,
    out_dir: PathBuf,
    force: bool,
}

impl Common {
    fn output(&self, explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.out_dir.join(default_name))
    }

    /// Fails before any work if `path` exists and `--force` is off.
    fn claim(&self, path: &Path) -> Result<()> {
        if !self.force && path.exists() {
            return Err(Error::AlreadyExists(path.to_path_buf()));
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let jobs = cli.jobs.or(file.jobs);
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::InvalidConfig("--jobs must be >= 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            warn!("thread pool already configured: {e}");
        }
    }
    let common = Common {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out_dir: cli
            .out_dir
            .clone()
            .or_else(|| file.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
        force: cli.force || file.force.unwrap_or(false),
    };
    match cli.command {
        Command::Count(a) => cmd_count(a, &file, &common),
        Command::Optimize(a) => cmd_optimize(a, &file, &common),
        Command::Trim(a) => cmd_trim(a, &file, &common),
        Command::Evaluate(a) => cmd_evaluate(a, &file, &common),
        Command::Curves(a) => cmd_curves(a, &file, &common),
        Command::Sweep(a) => cmd_sweep(a, &file, &common),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::FileNotFound(path.to_path_buf()))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidConfig(format!("missing required --{flag}")))
}

struct CorpusOptions {
    paths: Vec<PathBuf>,
    format: InputFormat,
    delimiters: Option<DelimiterSpec>,
    error_budget: f64,
}

fn delimiters(
    start: Option<Vec<TokenId>>,
    end: Option<Vec<TokenId>>,
) -> Result<Option<DelimiterSpec>> {
    match (start, end) {
        (None, None) => Ok(None),
        (Some(s), Some(e)) => DelimiterSpec::new(s, e).map(Some),
        _ => Err(Error::InvalidDelimiters(
            "--assistant-start and --assistant-end go together",
        )),
    }
}

fn corpus_options(a: CorpusArgs, file: &ConfigFile) -> Result<CorpusOptions> {
    let paths = if a.corpus.is_empty() {
        file.corpus.clone().unwrap_or_default()
    } else {
        a.corpus
    };
    if paths.is_empty() {
        return Err(Error::InvalidConfig("missing required --corpus".into()));
    }
    for p in &paths {
        require_file(p)?;
    }
    let format: InputFormat = a
        .format
        .or(file.format)
        .unwrap_or(FormatArg::RoleLabeled)
        .into();
    let delimiters = delimiters(
        a.assistant_start.or_else(|| file.assistant_start.clone()),
        a.assistant_end.or_else(|| file.assistant_end.clone()),
    )?;
    if format == InputFormat::RawStream && delimiters.is_none() {
        return Err(Error::MissingDelimiters);
    }
    Ok(CorpusOptions {
        paths,
        format,
        delimiters,
        error_budget: a
            .error_budget
            .or(file.error_budget)
            .unwrap_or(DEFAULT_ERROR_BUDGET),
    })
}

#[derive(Debug, Default)]
struct IngestSummary {
    records: u64,
    malformed: u64,
    spans: u64,
    tokens: u64,
    out_of_range: u64,
    unterminated: u64,
}

/// Streams every record of every corpus file; `f` receives the assistant
/// spans of one record. Raw records with no delimiters configured become a
/// single span covering the whole record.
fn for_each_record(
    opts: &CorpusOptions,
    vocab_size: u64,
    mut f: impl FnMut(Vec<Vec<TokenId>>) -> Result<()>,
) -> Result<IngestSummary> {
    let mut summary = IngestSummary::default();
    for path in &opts.paths {
        info!("reading {}", path.display());
        let mut reader =
            read_conversations(path, opts.format)?.with_error_budget(opts.error_budget);
        let mut spans =
            AssistantSpanStream::new(std::iter::empty(), vocab_size, opts.delimiters.clone());
        for record in reader.by_ref() {
            let record = record?;
            let out = match (&record, &opts.delimiters) {
                (CorpusRecord::Raw(tokens), None) => {
                    summary.records += 1;
                    summary.spans += 1;
                    summary.tokens += tokens.len() as u64;
                    vec![tokens.clone()]
                }
                _ => spans.record_spans(record)?,
            };
            f(out)?;
        }
        let s = spans.stats();
        summary.records += s.records_read;
        summary.spans += s.spans_found;
        summary.tokens += s.tokens_emitted;
        summary.out_of_range += s.out_of_range_tokens;
        summary.unterminated += s.unterminated_spans;
        summary.malformed += reader.stats().malformed;
    }
    if summary.malformed > 0 {
        warn!("skipped {} malformed lines", summary.malformed);
    }
    if summary.out_of_range > 0 {
        warn!("dropped {} out-of-range tokens", summary.out_of_range);
    }
    if summary.unterminated > 0 {
        info!(
            "{} spans ran to the end of their record",
            summary.unterminated
        );
    }
    Ok(summary)
}

fn load_profile(a: ProfileArgs, file: &ConfigFile) -> Result<ArchitectureProfile> {
    let name = a
        .profile
        .or_else(|| file.profile.clone())
        .unwrap_or_else(|| LLAMA3_8B_EAGLE3.to_string());
    let profile = ArchitectureProfile::load(&name)?;
    match a.vocab_size.or(file.vocab_size) {
        Some(v) if v != profile.vocab_size() => profile.with_vocab_size(v),
        _ => Ok(profile),
    }
}

/// Profile resized to the table's vocabulary when the two disagree.
fn profile_for_table(
    a: ProfileArgs,
    file: &ConfigFile,
    table: &FrequencyTable,
) -> Result<ArchitectureProfile> {
    let explicit = a.vocab_size.or(file.vocab_size);
    let profile = load_profile(a, file)?;
    if profile.vocab_size() == table.vocab_size() {
        return Ok(profile);
    }
    if explicit.is_some() {
        return Err(Error::VocabSizeMismatch {
            left: table.vocab_size(),
            right: profile.vocab_size(),
        });
    }
    warn!(
        "profile {} has V={}, table has V={}; using the table's",
        profile.name(),
        profile.vocab_size(),
        table.vocab_size()
    );
    profile.with_vocab_size(table.vocab_size())
}

fn objective_config(
    a: ObjectiveArgs,
    file: &ConfigFile,
    vocab_size: u64,
) -> Result<ObjectiveConfig> {
    let d = ObjectiveConfig::defaults_for(vocab_size);
    let s = &file.objective;
    let cfg = ObjectiveConfig {
        alpha: a.alpha.or(s.alpha).unwrap_or(d.alpha),
        c_min: a.c_min.or(s.c_min).unwrap_or(d.c_min),
        k_min: a.k_min.or(s.k_min).unwrap_or(d.k_min),
        k_max: a.k_max.or(s.k_max).unwrap_or(d.k_max),
        penalty_value: a.penalty.or(s.penalty).unwrap_or(d.penalty_value),
    };
    cfg.validate(vocab_size)?;
    Ok(cfg)
}

fn tpe_config(a: TpeArgs, file: &ConfigFile, seed: u64) -> Result<TpeConfig> {
    let d = TpeConfig::with_seed(seed);
    let s = &file.tpe;
    let cfg = TpeConfig {
        n_trials: a.n_trials.or(s.n_trials).unwrap_or(d.n_trials),
        n_startup_trials: a.n_startup.or(s.n_startup).unwrap_or(d.n_startup_trials),
        gamma: GammaRule {
            fraction: a
                .gamma_fraction
                .or(s.gamma_fraction)
                .unwrap_or(d.gamma.fraction),
            cap: a.gamma_cap.or(s.gamma_cap).unwrap_or(d.gamma.cap),
        },
        n_candidates: a.n_candidates.or(s.n_candidates).unwrap_or(d.n_candidates),
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_table(flag: Option<PathBuf>, file: &ConfigFile) -> Result<FrequencyTable> {
    let path = required(flag.or_else(|| file.freq.clone()), "freq")?;
    require_file(&path)?;
    FrequencyTable::read(&path)
}

fn fingerprint(table: &FrequencyTable) -> String {
    sha256_hex(table.to_json().as_bytes())
}

fn to_json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s.into_bytes()
}

fn cmd_count(a: CountArgs, file: &ConfigFile, common: &Common) -> Result<()> {
    let opts = corpus_options(a.corpus, file)?;
    let profile = load_profile(a.profile, file)?;
    let vocab_size = profile.vocab_size();
    let out = common.output(a.out.or_else(|| file.out.clone()), FREQUENCIES_FILE);
    common.claim(&out)?;
    let mut table = FrequencyTable::empty(vocab_size);
    let mut batch: Vec<Vec<TokenId>> = Vec::new();
    let mut batch_tokens = 0usize;
    let summary = for_each_record(&opts, vocab_size, |spans| {
        batch_tokens += spans.iter().map(Vec::len).sum::<usize>();
        batch.extend(spans);
        if batch_tokens >= 1 << 22 {
            table = table.merge(&build_frequency_table(batch.drain(..), vocab_size)?)?;
            batch_tokens = 0;
        }
        Ok(())
    })?;
    table = table.merge(&build_frequency_table(batch, vocab_size)?)?;
    if let Some(parent) = out.parent() {
        ensure_dir(parent)?;
    }
    table.write(&out)?;
    println!("records: {}", summary.records);
    println!("spans: {}", summary.spans);
    println!("tokens: {}", table.total());
    println!("distinct: {}", table.distinct());
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct StudyDoc<'a> {
    #[serde(flatten)]
    study: &'a StudyResult,
    config: StudyConfig<'a>,
}

#[derive(Serialize)]
struct StudyConfig<'a> {
    method: &'static str,
    profile: &'a str,
    vocab_size: u64,
    corpus_fingerprint: &'a str,
    objective: ObjectiveConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    tpe: Option<TpeConfig>,
    force_include: &'a BTreeSet<TokenId>,
}

fn cmd_optimize(a: OptimizeArgs, file: &ConfigFile, common: &Common) -> Result<()> {
    let table = read_table(a.freq, file)?;
    let profile = profile_for_table(a.profile, file, &table)?;
    let obj = objective_config(a.objective, file, profile.vocab_size())?;
    let exhaustive = a.exhaustive || file.exhaustive.unwrap_or(false);
    let tpe = tpe_config(a.tpe, file, common.seed)?;
    let forced: BTreeSet<TokenId> = a
        .force_include
        .or_else(|| file.force_include.clone())
        .unwrap_or_default()
        .into_iter()
        .collect();
    let study_path = common.out_dir.join(STUDY_FILE);
    let artifact_dir = common.out_dir.join(ARTIFACT_DIR);
    common.claim(&study_path)?;
    common.claim(&artifact_dir.join(METADATA_FILE))?;

    let curve = CoverageCurve::new(&table);
    let study = if exhaustive {
        optimize_exhaustive(&curve, &profile, obj)?
    } else {
        optimize_tpe(&curve, &profile, obj, tpe)?
    };
    let fp = fingerprint(&table);
    let artifact = build_artifact(
        &curve,
        &profile,
        study.k_star,
        &forced,
        ArtifactProvenance {
            alpha: Some(obj.alpha),
            c_min: Some(obj.c_min),
            corpus_fingerprint: fp.clone(),
            provenance: if exhaustive {
                Provenance::Exhaustive
            } else {
                Provenance::Tpe
            },
        },
    )?;
    let doc = StudyDoc {
        study: &study,
        config: StudyConfig {
            method: if exhaustive { "exhaustive" } else { "tpe" },
            profile: profile.name(),
            vocab_size: profile.vocab_size(),
            corpus_fingerprint: &fp,
            objective: obj,
            tpe: (!exhaustive).then_some(tpe),
            force_include: &forced,
        },
    };
    ensure_dir(&common.out_dir)?;
    write_file_atomic(&study_path, &to_json_bytes(&doc))?;
    artifact.write(&artifact_dir, common.force)?;
    let e = &study.best.evaluation;
    println!("k_star: {}", study.k_star);
    println!("coverage: {:.6}", e.coverage);
    println!("reduction: {:.6}", e.reduction);
    println!("utility: {:.6}", e.utility);
    println!(
        "wrote {} and {}",
        study_path.display(),
        artifact_dir.display()
    );
    Ok(())
}

fn cmd_trim(a: TrimArgs, file: &ConfigFile, common: &Common) -> Result<()> {
    let table = read_table(a.freq, file)?;
    let profile = profile_for_table(a.profile, file, &table)?;
    let k = required(a.k.or(file.k), "k")?;
    let forced: BTreeSet<TokenId> = a
        .force_include
        .or_else(|| file.force_include.clone())
        .unwrap_or_default()
        .into_iter()
        .collect();
    let artifact_dir = common.out_dir.join(ARTIFACT_DIR);
    common.claim(&artifact_dir.join(METADATA_FILE))?;
    let curve = CoverageCurve::new(&table);
    let artifact = build_artifact(
        &curve,
        &profile,
        k,
        &forced,
        ArtifactProvenance {
            alpha: a.alpha.or(file.objective.alpha),
            c_min: a.c_min.or(file.objective.c_min),
            corpus_fingerprint: fingerprint(&table),
            provenance: Provenance::Manual,
        },
    )?;
    artifact.write(&artifact_dir, common.force)?;
    println!("k: {k}");
    println!("coverage: {:.6}", artifact.metadata().coverage);
    println!("reduction: {:.6}", artifact.metadata().reduction);
    println!("wrote {}", artifact_dir.display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, file: &ConfigFile, common: &Common) -> Result<()> {
    let dir = required(a.artifact.or_else(|| file.artifact.clone()), "artifact")?;
    require_file(&dir.join(METADATA_FILE))?;
    let generations = required(
        a.generations.or_else(|| file.generations.clone()),
        "generations",
    )?;
    require_file(&generations)?;
    let token_map = a.token_map.or_else(|| file.token_map.clone());
    if let Some(p) = &token_map {
        require_file(p)?;
    }
    let opts = CorpusOptions {
        paths: vec![generations],
        format: a
            .format
            .or(file.format)
            .unwrap_or(FormatArg::RoleLabeled)
            .into(),
        delimiters: delimiters(
            a.assistant_start.or_else(|| file.assistant_start.clone()),
            a.assistant_end.or_else(|| file.assistant_end.clone()),
        )?,
        error_budget: a
            .error_budget
            .or(file.error_budget)
            .unwrap_or(DEFAULT_ERROR_BUDGET),
    };
    let out = common.output(a.out.or_else(|| file.out.clone()), REPORT_FILE);
    common.claim(&out)?;

    let artifact = VocabularyArtifact::read(&dir)?;
    let texts = token_map.map(TokenTextMap::read).transpose()?;
    let mut tokens: Vec<TokenId> = Vec::new();
    for_each_record(&opts, artifact.vocab_size(), |spans| {
        tokens.extend(spans.into_iter().flatten());
        Ok(())
    })?;
    let report = evaluate_coverage(
        &artifact,
        tokens,
        a.missing_top
            .or(file.missing_top)
            .unwrap_or(DEFAULT_MISSING_TOP),
        texts.as_ref(),
    )?;
    if let Some(parent) = out.parent() {
        ensure_dir(parent)?;
    }
    write_file_atomic(&out, &to_json_bytes(&report))?;
    println!("total_tokens: {}", report.total_tokens);
    println!("freq_coverage: {:.6}", report.freq_coverage);
    println!("unique_tokens: {}", report.unique_tokens);
    println!("unique_coverage: {:.6}", report.unique_coverage);
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_curves(a: CurvesArgs, file: &ConfigFile, common: &Common) -> Result<()> {
    let table = read_table(a.freq, file)?;
    let profile = profile_for_table(a.profile, file, &table)?;
    let obj = objective_config(a.objective, file, profile.vocab_size())?;
    let selection = match (a.ks.or_else(|| file.ks.clone()), a.stride.or(file.stride)) {
        (Some(ks), _) => KSelection::Explicit(ks),
        (None, stride) => KSelection::Stride(stride.unwrap_or(1)),
    };
    let curves_path = common.out_dir.join(CURVES_FILE);
    let pareto_path = common.out_dir.join(PARETO_FILE);
    common.claim(&curves_path)?;
    common.claim(&pareto_path)?;
    let curve = CoverageCurve::new(&table);
    let objective = Objective::new(&curve, &profile, obj)?;
    let points = emit_curves(&objective, &selection)?;
    let front = pareto_front(&points);
    ensure_dir(&common.out_dir)?;
    write_file_atomic(&curves_path, curves_csv(&points).as_bytes())?;
    write_file_atomic(&pareto_path, curves_csv(&front).as_bytes())?;
    println!("points: {}", points.len());
    println!("pareto: {}", front.len());
    println!(
        "wrote {} and {}",
        curves_path.display(),
        pareto_path.display()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs, file: &ConfigFile, common: &Common) -> Result<()> {
    let opts = corpus_options(a.corpus, file)?;
    let profile = load_profile(a.profile, file)?;
    let obj = objective_config(a.objective, file, profile.vocab_size())?;
    let tpe = tpe_config(a.tpe, file, common.seed)?;
    let sizes = required(a.sizes.or_else(|| file.sizes.clone()), "sizes")?;
    let seeds = a
        .seeds
        .or_else(|| file.seeds.clone())
        .unwrap_or_else(|| vec![common.seed]);
    let out = common.out_dir.join(STABILITY_FILE);
    common.claim(&out)?;

    let mut records: Vec<Vec<TokenId>> = Vec::new();
    let summary = for_each_record(&opts, profile.vocab_size(), |spans| {
        records.push(spans.concat());
        Ok(())
    })?;
    info!("{} records, {} tokens", summary.records, summary.tokens);
    let points = stability_sweep(&records, &sizes, &seeds, &profile, obj, tpe)?;
    ensure_dir(&common.out_dir)?;
    write_file_atomic(&out, stability_csv(&points).as_bytes())?;
    for p in &points {
        println!(
            "size {} seed {}: k_star {}",
            p.sample_size, p.seed, p.k_star
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
