//! Draft-model vocabulary selection for speculative decoding.
//!
//! The pipeline counts assistant-token frequencies in a tokenized corpus,
//! scores each candidate draft vocabulary size `k` by a weighted sum of token
//! coverage and LM-head FLOPs savings, searches for the best `k` under a
//! minimum-coverage constraint, and emits the trimmed vocabulary as
//! draft/target index buffers.
//!
//! ```
//! use vocab_pareto::{
//!     optimize_exhaustive, ArchitectureProfile, CoverageCurve, FrequencyTable, ObjectiveConfig,
//! };
//!
//! let table = FrequencyTable::from_counts(128_256, [(11, 40), (12, 30), (900, 5)]).unwrap();
//! let curve = CoverageCurve::new(&table);
//! let profile = ArchitectureProfile::llama3_8b_eagle3();
//! let obj = ObjectiveConfig { k_min: 1, k_max: 10, ..ObjectiveConfig::defaults_for(128_256) };
//! let study = optimize_exhaustive(&curve, &profile, obj).unwrap();
//! assert_eq!(study.k_star, 3);
//! ```

pub mod analysis;
pub mod artifact;
pub mod error;
pub mod frequency;
pub mod ingest;
pub mod latency;
pub mod objective;
pub mod synth;
pub mod tpe;

/// Index into the target model's vocabulary.
pub type TokenId = u32;

pub use analysis::{
    emit_curves, evaluate_coverage, pareto_front, stability_sweep, CoverageReport, CurvePoint,
    KSelection, StabilityPoint,
};
pub use artifact::{
    build_artifact, read_artifact, write_artifact, write_file_atomic, ArtifactProvenance,
    Provenance, VocabularyArtifact,
};
pub use error::{Error, Result};
pub use frequency::{build_frequency_table, CoverageCurve, FrequencyTable};
pub use ingest::{
    extract_assistant_spans, extract_spans_by_delimiter, read_conversations, AssistantSpanStream,
    ConversationRecord, CorpusRecord, DelimiterSpec, InputFormat, Role,
};
pub use latency::{ArchitectureProfile, ComponentFlops, FlopsBreakdown};
pub use objective::{utility, Objective, ObjectiveConfig, TrialEvaluation};
pub use synth::{RecordSource, ZipfCorpus};
pub use tpe::{optimize_exhaustive, optimize_tpe, StudyResult, TpeConfig, TrialRecord};
