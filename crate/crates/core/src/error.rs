use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("no line matches the `at pkg.Class.method(File.java:NN)` frame grammar")]
    MalformedTrace,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("duplicate crash_id `{crash_id}` (line {line})")]
    DuplicateId { crash_id: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupingError {
    #[error("grouping level must be 1..=4, got {0}")]
    InvalidLevel(u8),
    #[error("group references unknown crash_id `{0}`")]
    UnknownMember(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankingError {
    #[error("file `{0}` does not occur in any group")]
    FileUnseen(String),
    #[error("group {0} has no application frames")]
    NoCandidates(String),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no ranking for group {group_id} (task {task_id})")]
    MissingRanking { task_id: String, group_id: String },
    #[error("no evaluable tasks")]
    EmptyTaskSet,
}
