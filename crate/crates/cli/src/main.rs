use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crashlens::commands::{self, CorpusSource, PipelineRequest, Recurrence, ReportFormat, ReportRequest, Settings};
use crashlens::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "crashlens",
    version,
    about = "Group crash reports, rank suspicious files and build weekly triage reports"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "CRASHLENS_CONFIG")]
    config: Option<PathBuf>,

    /// Application package prefix; repeat to give several. Replaces the configured list.
    #[arg(long = "app-prefix", global = true, value_name = "PREFIX")]
    app_prefix: Vec<String>,

    /// Number of suspicious files kept per group.
    #[arg(long, global = true, value_name = "N")]
    top: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Crash export, one JSON object per line.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,

    /// Half-open interval `<start>..<end>` (RFC 3339 or YYYY-MM-DD).
    #[arg(long, value_name = "START..END")]
    window: Option<String>,

    /// Fail on the first malformed or duplicate record instead of skipping it.
    #[arg(long)]
    strict: bool,
}

impl From<CorpusArgs> for CorpusSource {
    fn from(a: CorpusArgs) -> Self {
        Self {
            input: a.input,
            window: a.window,
            strict: a.strict,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Validate an export; print counts and optionally write the accepted records.
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Group crash reports at a similarity level.
    Group {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
        level: u8,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Rank suspicious files and methods for each group.
    Rank {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        groups: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Write the group spreadsheet and issue payloads.
    Report {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_name = "FILE")]
        groups: PathBuf,
        #[arg(long, value_name = "FILE")]
        ranks: PathBuf,
        /// Output formats, comma separated.
        #[arg(long, value_delimiter = ',', default_values = ["csv", "md"])]
        format: Vec<ReportFormat>,
        /// Only write issues for these group ids.
        #[arg(long, value_delimiter = ',', value_name = "GROUP_ID")]
        select: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score rankings against bug-fix ground truth.
    Eval {
        #[arg(long, value_name = "FILE")]
        ranks: PathBuf,
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        #[arg(long, value_delimiter = ',', default_values = ["1", "3", "5"])]
        n: Vec<usize>,
        /// Groups file for the recurrence check (needs --post-input).
        #[arg(long, value_name = "FILE", requires = "post_input")]
        groups: Option<PathBuf>,
        /// Crash export collected after the tasks were closed.
        #[arg(long, value_name = "FILE", requires = "groups")]
        post_input: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Group, rank and report in one run.
    Pipeline {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
        level: u8,
        #[arg(long, value_delimiter = ',', value_name = "GROUP_ID")]
        select: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = Settings::resolve(cli.config.as_deref(), &cli.app_prefix, cli.top)?;
    match cli.command {
        Cmd::Ingest { corpus, out } => {
            let summary = commands::ingest(&settings, &corpus.into(), out.as_deref())?;
            commands::print_json(&summary)
        }
        Cmd::Group { corpus, level, out } => {
            let p = commands::group_cmd(&settings, &corpus.into(), level, &out)?;
            eprintln!("crashlens: {} level-{} group(s) -> {}", p.len(), p.level, out.display());
            Ok(())
        }
        Cmd::Rank { corpus, groups, out } => {
            let ranks = commands::rank_cmd(&settings, &corpus.into(), &groups, &out)?;
            eprintln!("crashlens: ranked {} group(s) -> {}", ranks.len(), out.display());
            Ok(())
        }
        Cmd::Report {
            corpus,
            groups,
            ranks,
            format,
            select,
            out,
        } => {
            let req = ReportRequest {
                groups: &groups,
                ranks: &ranks,
                formats: &format,
                select: &select,
                out_dir: &out,
            };
            let m = commands::report_cmd(&settings, &corpus.into(), &req)?;
            eprintln!("crashlens: wrote {} file(s) to {}", m.outputs.len(), out.display());
            Ok(())
        }
        Cmd::Eval {
            ranks,
            truth,
            n,
            groups,
            post_input,
            out,
        } => {
            let recurrence = match (groups.as_deref(), post_input) {
                (Some(groups), Some(input)) => Some(Recurrence {
                    groups,
                    post: CorpusSource {
                        input,
                        window: None,
                        strict: false,
                    },
                }),
                _ => None,
            };
            let output = commands::eval_cmd(&settings, &ranks, &truth, &n, recurrence.as_ref(), &out)?;
            commands::print_json(&output)
        }
        Cmd::Pipeline {
            corpus,
            level,
            select,
            out,
        } => {
            let req = PipelineRequest {
                level,
                select: &select,
                out_dir: &out,
            };
            let m = commands::run_pipeline(&settings, &corpus.into(), &req)?;
            eprintln!("crashlens: wrote {} file(s) to {}", m.outputs.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crashlens: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
