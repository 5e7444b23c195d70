use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use crashlens_core::evaluation::{evaluate, recurrence_table, tasks_from_json, EvalReport};
use crashlens_core::ingest::CrashRecord;
use crashlens_core::ranking::{ranks_from_json, ranks_to_json, RankedGroup, Ranker};
use crashlens_core::report::{build_issue, export_spreadsheet_csv, render_issue_markdown, summarize_groups};
use crashlens_core::{
    group, load_corpus, AppConfig, CrashCorpus, GroupId, GroupingError, LevelPartition, LoadOptions, RankingError,
    TimeWindow,
};
use serde::Serialize;

use crate::error::{Classify, CliError, Failure};
use crate::manifest::{manifest_path_for, sha256_hex, Command, RunManifest};

/// Effective configuration after applying command-line overrides.
#[derive(Debug, Clone)]
pub struct Settings {
    pub config: AppConfig,
    pub config_path: Option<PathBuf>,
}

impl Settings {
    /// Loads `path` (or defaults) and applies overrides. A non-empty
    /// `prefixes` replaces the configured prefixes.
    pub fn resolve(path: Option<&Path>, prefixes: &[String], top: Option<usize>) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => AppConfig::load(p).config_err()?,
            None => AppConfig::default(),
        };
        if !prefixes.is_empty() {
            config.app_package_prefixes = prefixes.to_vec();
        }
        if let Some(top) = top {
            config.top_n_files = top;
        }
        Ok(Self {
            config,
            config_path: path.map(Path::to_path_buf),
        })
    }

    fn validated(&self) -> Result<&AppConfig, CliError> {
        self.config.validate().config_err()?;
        Ok(&self.config)
    }

    pub fn sha256(&self) -> String {
        sha256_hex(
            serde_json::to_string(&self.config)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    fn stamp(&self, manifest: &mut RunManifest) {
        manifest.config_path = self.config_path.as_ref().map(|p| p.display().to_string());
        manifest.config_sha256 = Some(self.sha256());
    }
}

/// Where and how to read the crash export.
#[derive(Debug, Clone)]
pub struct CorpusSource {
    pub input: PathBuf,
    pub window: Option<String>,
    pub strict: bool,
}

impl CorpusSource {
    pub fn window(&self) -> Result<Option<TimeWindow>, CliError> {
        self.window
            .as_deref()
            .map(|w| w.parse::<TimeWindow>().map_err(|e| anyhow!("--window: {e}")))
            .transpose()
            .input_err()
    }

    pub fn load(&self) -> Result<CrashCorpus, CliError> {
        let corpus = load_corpus(&self.input, self.window()?, LoadOptions { strict: self.strict })
            .with_context(|| format!("loading {}", self.input.display()))
            .input_err()?;
        let skipped = corpus.skipped();
        if skipped.total() > 0 {
            eprintln!(
                "crashlens: skipped {} record(s): {} malformed, {} outside window, {} duplicate",
                skipped.total(),
                skipped.malformed,
                skipped.out_of_window,
                skipped.duplicate
            );
        }
        Ok(corpus)
    }

    fn stamp(&self, manifest: &mut RunManifest) -> Result<(), CliError> {
        manifest.strict = self.strict;
        manifest.window = self.window()?.map(|w| w.to_string());
        manifest.add_inputs([self.input.as_path()]).input_err()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .input_err()?;
    }
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .input_err()
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .input_err()
}

fn finish(mut manifest: RunManifest, outputs: &[PathBuf], manifest_path: &Path) -> Result<RunManifest, CliError> {
    manifest
        .add_outputs(outputs.iter().map(PathBuf::as_path))
        .internal_err()?;
    manifest.write(manifest_path).input_err()?;
    Ok(manifest)
}

fn grouping_failure(e: GroupingError) -> CliError {
    match e {
        GroupingError::UnknownMember(_) => CliError::new(Failure::Input, e),
        GroupingError::InvalidLevel(_) => CliError::new(Failure::Config, e),
    }
}

fn ranking_failure(e: RankingError) -> CliError {
    match e {
        RankingError::Grouping(g) => grouping_failure(g),
        other => CliError::new(Failure::Internal, other),
    }
}

fn load_groups(path: &Path) -> Result<LevelPartition, CliError> {
    LevelPartition::from_json(&read_file(path)?, 4)
        .with_context(|| format!("parsing {}", path.display()))
        .input_err()
}

fn load_ranks(path: &Path) -> Result<Vec<RankedGroup>, CliError> {
    ranks_from_json(&read_file(path)?)
        .with_context(|| format!("parsing {}", path.display()))
        .input_err()
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub accepted: usize,
    pub skipped: crashlens_core::ingest::SkipCounts,
    pub window: String,
}

/// Validates the export and optionally writes the accepted records back
/// out in canonical form.
pub fn ingest(settings: &Settings, source: &CorpusSource, out: Option<&Path>) -> Result<IngestSummary, CliError> {
    let corpus = source.load()?;
    let summary = IngestSummary {
        accepted: corpus.len(),
        skipped: corpus.skipped(),
        window: corpus.window().to_string(),
    };
    if let Some(out) = out {
        let mut text = String::new();
        for report in corpus.reports() {
            text.push_str(&serde_json::to_string(&CrashRecord::from(report)).internal_err()?);
            text.push('\n');
        }
        write_file(out, &text)?;
        let mut manifest = RunManifest::new(Command::Ingest);
        settings.stamp(&mut manifest);
        source.stamp(&mut manifest)?;
        finish(manifest, &[out.to_path_buf()], &manifest_path_for(out))?;
    }
    Ok(summary)
}

pub fn group_cmd(
    settings: &Settings,
    source: &CorpusSource,
    level: u8,
    out: &Path,
) -> Result<LevelPartition, CliError> {
    let corpus = source.load()?;
    let partition = group(&corpus, level, &settings.config).map_err(grouping_failure)?;
    write_file(out, &partition.to_json())?;

    let mut manifest = RunManifest::new(Command::Group);
    settings.stamp(&mut manifest);
    source.stamp(&mut manifest)?;
    manifest.level = Some(level);
    finish(manifest, &[out.to_path_buf()], &manifest_path_for(out))?;
    Ok(partition)
}

fn rank_partition(
    partition: &LevelPartition,
    corpus: &CrashCorpus,
    config: &AppConfig,
) -> Result<Vec<RankedGroup>, CliError> {
    Ranker::new(partition, corpus, config)
        .and_then(|ranker| ranker.rank_all(partition))
        .map_err(ranking_failure)
}

pub fn rank_cmd(
    settings: &Settings,
    source: &CorpusSource,
    groups: &Path,
    out: &Path,
) -> Result<Vec<RankedGroup>, CliError> {
    let config = settings.validated()?;
    let partition = load_groups(groups)?;
    let corpus = source.load()?;
    let ranks = rank_partition(&partition, &corpus, config)?;
    write_file(out, &ranks_to_json(&ranks))?;

    let mut manifest = RunManifest::new(Command::Rank);
    settings.stamp(&mut manifest);
    source.stamp(&mut manifest)?;
    manifest.level = Some(partition.level);
    manifest.add_inputs([groups]).input_err()?;
    finish(manifest, &[out.to_path_buf()], &manifest_path_for(out))?;
    Ok(ranks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Csv,
    Md,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "md" => Ok(Self::Md),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format `{other}` (expected csv, md or json)")),
        }
    }
}

/// Keeps only filename-safe characters.
pub fn issue_file_stem(id: &GroupId) -> String {
    id.as_str()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn resolve_selection(partition: &LevelPartition, select: &[String]) -> Result<Vec<GroupId>, CliError> {
    if select.is_empty() {
        return Ok(partition.groups.iter().map(|g| g.id.clone()).collect());
    }
    let mut ids = Vec::new();
    for raw in select {
        let id = GroupId::from(raw.trim());
        if partition.get(&id).is_none() {
            return Err(CliError::new(
                Failure::Input,
                anyhow!("--select: unknown group id `{id}`"),
            ));
        }
        ids.push(id);
    }
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Writes the spreadsheet and issues into `out_dir`; returns written paths.
fn write_reports(
    partition: &LevelPartition,
    ranks: &[RankedGroup],
    corpus: &CrashCorpus,
    config: &AppConfig,
    formats: &[ReportFormat],
    selected: &[GroupId],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Csv) {
        let summaries = summarize_groups(partition, corpus, config).map_err(grouping_failure)?;
        let path = out_dir.join("summaries.csv");
        write_file(&path, &export_spreadsheet_csv(&summaries))?;
        written.push(path);
    }

    let wants_md = formats.contains(&ReportFormat::Md);
    let wants_json = formats.contains(&ReportFormat::Json);
    if !(wants_md || wants_json) {
        return Ok(written);
    }
    let issues_dir = out_dir.join("issues");
    fs::create_dir_all(&issues_dir)
        .with_context(|| format!("creating {}", issues_dir.display()))
        .input_err()?;
    let by_id: BTreeMap<&GroupId, &RankedGroup> = ranks.iter().map(|r| (&r.group_id, r)).collect();
    for id in selected {
        let group = partition.get(id).expect("selection validated");
        let ranked = by_id
            .get(id)
            .ok_or_else(|| CliError::new(Failure::Input, anyhow!("no ranking for group {id}")))?;
        let issue =
            build_issue(group, &ranked.file_ranking(), &ranked.methods, corpus, config).map_err(grouping_failure)?;
        let stem = issue_file_stem(id);
        if wants_md {
            let path = issues_dir.join(format!("{stem}.md"));
            write_file(&path, &render_issue_markdown(&issue))?;
            written.push(path);
        }
        if wants_json {
            let path = issues_dir.join(format!("{stem}.json"));
            write_file(&path, &issue.to_json())?;
            written.push(path);
        }
    }
    Ok(written)
}

pub struct ReportRequest<'a> {
    pub groups: &'a Path,
    pub ranks: &'a Path,
    pub formats: &'a [ReportFormat],
    pub select: &'a [String],
    pub out_dir: &'a Path,
}

pub fn report_cmd(
    settings: &Settings,
    source: &CorpusSource,
    req: &ReportRequest<'_>,
) -> Result<RunManifest, CliError> {
    let config = settings.validated()?;
    let partition = load_groups(req.groups)?;
    let ranks = load_ranks(req.ranks)?;
    let selected = resolve_selection(&partition, req.select)?;
    let corpus = source.load()?;
    let written = write_reports(&partition, &ranks, &corpus, config, req.formats, &selected, req.out_dir)?;

    let mut manifest = RunManifest::new(Command::Report);
    settings.stamp(&mut manifest);
    source.stamp(&mut manifest)?;
    manifest.level = Some(partition.level);
    manifest.select = req.select.to_vec();
    manifest.add_inputs([req.groups, req.ranks]).input_err()?;
    finish(manifest, &written, &req.out_dir.join("manifest.json"))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<BTreeMap<String, bool>>,
}

/// Post-closure data for the recurrence check.
pub struct Recurrence<'a> {
    pub groups: &'a Path,
    pub post: CorpusSource,
}

pub fn eval_cmd(
    settings: &Settings,
    ranks_path: &Path,
    truth_path: &Path,
    ns: &[usize],
    recurrence: Option<&Recurrence<'_>>,
    out: &Path,
) -> Result<EvalOutput, CliError> {
    let ranks = load_ranks(ranks_path)?;
    let tasks = tasks_from_json(&read_file(truth_path)?)
        .with_context(|| format!("parsing {}", truth_path.display()))
        .input_err()?;
    let report = evaluate(&tasks, &ranks, ns).input_err()?;

    let mut manifest = RunManifest::new(Command::Eval);
    settings.stamp(&mut manifest);
    manifest.add_inputs([ranks_path, truth_path]).input_err()?;

    let recurrence = match recurrence {
        Some(r) => {
            let partition = load_groups(r.groups)?;
            let post = r.post.load()?;
            r.post.stamp(&mut manifest)?;
            manifest.add_inputs([r.groups]).input_err()?;
            Some(recurrence_table(&tasks, &post, &partition, &settings.config))
        }
        None => None,
    };
    let output = EvalOutput { report, recurrence };
    let mut text = serde_json::to_string_pretty(&output).internal_err()?;
    text.push('\n');
    write_file(out, &text)?;
    finish(manifest, &[out.to_path_buf()], &manifest_path_for(out))?;
    Ok(output)
}

pub struct PipelineRequest<'a> {
    pub level: u8,
    pub select: &'a [String],
    pub out_dir: &'a Path,
}

/// Groups, ranks and reports in one pass, writing `groups.json`,
/// `ranks.json`, `summaries.csv`, `issues/<id>.{md,json}` and
/// `manifest.json` into the output directory.
pub fn run_pipeline(
    settings: &Settings,
    source: &CorpusSource,
    req: &PipelineRequest<'_>,
) -> Result<RunManifest, CliError> {
    let config = settings.validated()?;
    let corpus = source.load()?;
    let partition = group(&corpus, req.level, config).map_err(grouping_failure)?;
    let selected = resolve_selection(&partition, req.select)?;
    let ranks = rank_partition(&partition, &corpus, config)?;

    let groups_path = req.out_dir.join("groups.json");
    let ranks_path = req.out_dir.join("ranks.json");
    write_file(&groups_path, &partition.to_json())?;
    write_file(&ranks_path, &ranks_to_json(&ranks))?;
    let mut written = vec![groups_path, ranks_path];
    written.extend(write_reports(
        &partition,
        &ranks,
        &corpus,
        config,
        &[ReportFormat::Csv, ReportFormat::Md, ReportFormat::Json],
        &selected,
        req.out_dir,
    )?);

    let mut manifest = RunManifest::new(Command::Pipeline);
    settings.stamp(&mut manifest);
    source.stamp(&mut manifest)?;
    manifest.level = Some(req.level);
    manifest.select = req.select.to_vec();
    finish(manifest, &written, &req.out_dir.join("manifest.json"))
}

/// Prints a JSON value followed by a newline.
pub fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).internal_err()?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").input_err()
}
