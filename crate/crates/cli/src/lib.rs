//! Library side of the `crashlens` executable: each subcommand as a
//! function, plus the run manifest written beside every output.

pub mod commands;
pub mod error;
pub mod manifest;

pub use commands::{run_pipeline, CorpusSource, PipelineRequest, ReportFormat, Settings};
pub use error::{CliError, Failure};
pub use manifest::RunManifest;
