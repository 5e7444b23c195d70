//! Crash report mining: group Java stack traces into buckets, rank the
//! files and methods most likely responsible for each bucket, and produce
//! weekly triage artifacts and retrospective accuracy metrics.

pub mod error;
pub mod evaluation;
pub mod grouping;
pub mod ingest;
pub mod ranking;
pub mod report;
pub mod trace_model;

pub use error::{ConfigError, EvalError, GroupingError, IngestError, RankingError, TraceError};
pub use grouping::{group, CrashGroup, GroupId, Grouper, LevelPartition, Signature};
pub use ingest::{load_corpus, AppConfig, CrashCorpus, CrashReport, LoadOptions, TimeWindow};
pub use trace_model::{parse_stack_trace, Frame, NormalizationRules, QualifiedMethod, StackTrace};
