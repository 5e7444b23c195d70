//! Weekly triage artifacts: the group spreadsheet and per-group issue
//! payloads rendered as markdown or JSON.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::GroupingError;
use crate::grouping::{CrashGroup, GroupId, LevelPartition};
use crate::ingest::{format_instant, weekly_windows, AppConfig, CrashCorpus, CrashReport, TimeWindow};
use crate::ranking::{FileRanking, MethodRank};

/// Requests attached to every issue for the developer who fixes it.
pub const INSTRUCTIONS: [&str; 3] = [
    "Keep the fix in its own commit: do not mix refactoring with the bug fix.",
    "Mention this task's identifier in the commit message of the fix.",
    "After closing this task, answer the feedback survey about the suggested files and methods.",
];

const NONE_RECORDED: &str = "_none recorded_";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group_id: GroupId,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub crash_count: usize,
    pub affected_uri_count: usize,
    pub affected_user_count: usize,
    /// Application classes appearing in the group's traces, sorted.
    pub system_classes: Vec<String>,
}

/// One spreadsheet row per group, largest groups first.
pub fn summarize_groups(
    partition: &LevelPartition,
    corpus: &CrashCorpus,
    config: &AppConfig,
) -> Result<Vec<GroupSummary>, GroupingError> {
    let mut out = partition
        .groups
        .iter()
        .map(|group| summarize(group, corpus, config))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| {
        b.crash_count
            .cmp(&a.crash_count)
            .then_with(|| a.group_id.cmp(&b.group_id))
    });
    Ok(out)
}

fn summarize(group: &CrashGroup, corpus: &CrashCorpus, config: &AppConfig) -> Result<GroupSummary, GroupingError> {
    let reports = group.reports(corpus)?;
    let uris: HashSet<&str> = reports.iter().map(|r| r.uri.as_str()).collect();
    let users: HashSet<&str> = reports.iter().filter_map(|r| r.user.as_deref()).collect();

    let mut classes: Vec<String> = Vec::new();
    let mut seen_traces = HashSet::new();
    for report in &reports {
        if !seen_traces.insert(std::sync::Arc::as_ptr(&report.trace)) {
            continue;
        }
        for frame in &report.trace.frames {
            if frame.has_source_file() {
                let name = frame.qualified_file_name();
                if config.is_app_class(&name) {
                    classes.push(name);
                }
            }
        }
    }
    classes.sort_unstable();
    classes.dedup();

    Ok(GroupSummary {
        group_id: group.id.clone(),
        first_seen: group.first_seen,
        last_seen: group.last_seen,
        crash_count: reports.len(),
        affected_uri_count: uris.len(),
        affected_user_count: users.len(),
        system_classes: classes,
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "group_id",
    "first_seen",
    "last_seen",
    "crash_count",
    "uri_count",
    "user_count",
    "system_classes",
];

/// RFC 4180 CSV, classes joined with `;`.
pub fn export_spreadsheet_csv(summaries: &[GroupSummary]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("in-memory write");
    for s in summaries {
        writer
            .write_record([
                s.group_id.to_string(),
                format_instant(s.first_seen),
                format_instant(s.last_seen),
                s.crash_count.to_string(),
                s.affected_uri_count.to_string(),
                s.affected_user_count.to_string(),
                s.system_classes.join(";"),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Crash counts per Monday-aligned week of `span`.
pub fn weekly_crash_counts(corpus: &CrashCorpus, span: &TimeWindow) -> Vec<(TimeWindow, usize)> {
    let mut weeks: Vec<(TimeWindow, usize)> = weekly_windows(span).into_iter().map(|w| (w, 0)).collect();
    for report in corpus.reports() {
        let idx = weeks.partition_point(|(w, _)| w.end <= report.timestamp);
        if let Some((w, n)) = weeks.get_mut(idx) {
            if w.contains(report.timestamp) {
                *n += 1;
            }
        }
    }
    weeks
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTally {
    pub user: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UriTally {
    pub uri: String,
    pub count: usize,
    pub top_users: Vec<UserTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuePayload {
    pub group_id: GroupId,
    pub window: TimeWindow,
    pub top_files: FileRanking,
    pub top_methods: Vec<MethodRank>,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
    pub crash_count: usize,
    pub top_uris: Vec<UriTally>,
    pub trace_samples: Vec<String>,
    pub crash_id_samples: Vec<String>,
    pub session_samples: Vec<String>,
    pub instructions: Vec<String>,
}

impl IssuePayload {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("payload serializes");
        out.push('\n');
        out
    }
}

/// Assembles the issue for one group. Samples are taken from the earliest
/// members (ties by crash id).
pub fn build_issue(
    group: &CrashGroup,
    ranking: &FileRanking,
    methods: &[MethodRank],
    corpus: &CrashCorpus,
    config: &AppConfig,
) -> Result<IssuePayload, GroupingError> {
    let mut reports = group.reports(corpus)?;
    reports.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.crash_id.cmp(&b.crash_id)));

    let mut trace_samples: Vec<String> = Vec::new();
    for r in &reports {
        if trace_samples.len() >= config.sample_trace_count {
            break;
        }
        if !trace_samples.contains(&r.trace.raw_text) {
            trace_samples.push(r.trace.raw_text.clone());
        }
    }

    let crash_id_samples = reports
        .iter()
        .take(config.sample_crash_id_count)
        .map(|r| r.crash_id.clone())
        .collect();

    let mut session_samples: Vec<String> = Vec::new();
    for session in reports.iter().filter_map(|r| r.session_id.as_ref()) {
        if session_samples.len() >= config.sample_crash_id_count {
            break;
        }
        if !session_samples.contains(session) {
            session_samples.push(session.clone());
        }
    }

    Ok(IssuePayload {
        group_id: group.id.clone(),
        window: corpus.window(),
        top_files: ranking.clone(),
        top_methods: methods.to_vec(),
        first_seen: group.first_seen,
        last_seen: group.last_seen,
        crash_count: reports.len(),
        top_uris: tally_uris(&reports, config),
        trace_samples,
        crash_id_samples,
        session_samples,
        instructions: INSTRUCTIONS.iter().map(|s| (*s).to_owned()).collect(),
    })
}

fn tally_uris(reports: &[&CrashReport], config: &AppConfig) -> Vec<UriTally> {
    let mut by_uri: BTreeMap<&str, (usize, HashMap<&str, usize>)> = BTreeMap::new();
    for r in reports {
        let entry = by_uri.entry(r.uri.as_str()).or_default();
        entry.0 += 1;
        if let Some(user) = r.user.as_deref() {
            *entry.1.entry(user).or_default() += 1;
        }
    }
    let mut uris: Vec<UriTally> = by_uri
        .into_iter()
        .map(|(uri, (count, users))| {
            let mut top_users: Vec<UserTally> = users
                .into_iter()
                .map(|(user, count)| UserTally {
                    user: user.to_owned(),
                    count,
                })
                .collect();
            top_users.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.user.cmp(&b.user)));
            top_users.truncate(config.top_n_users_per_uri);
            UriTally {
                uri: uri.to_owned(),
                count,
                top_users,
            }
        })
        .collect();
    uris.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.uri.cmp(&b.uri)));
    uris.truncate(config.top_n_uris);
    uris
}

pub fn render_issue_markdown(payload: &IssuePayload) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Crash group {}", payload.group_id);

    md.push_str("\n## Summary\n\n");
    let _ = writeln!(md, "- Window: {}", payload.window);
    let _ = writeln!(md, "- First seen: {}", format_instant(payload.first_seen));
    let _ = writeln!(md, "- Last seen: {}", format_instant(payload.last_seen));
    let _ = writeln!(md, "- Crash reports: {}", payload.crash_count);
    let _ = writeln!(
        md,
        "- Candidate files considered: {}",
        payload.top_files.candidates_considered
    );

    md.push_str("\n## Suspicious Files\n\n");
    if payload.top_files.entries.is_empty() {
        let _ = writeln!(md, "{NONE_RECORDED}");
    } else {
        md.push_str("| Rank | File | Score | IAD | IBF | FF |\n");
        md.push_str("|---:|---|---:|---:|---:|---:|\n");
        for (i, e) in payload.top_files.entries.iter().enumerate() {
            let _ = writeln!(
                md,
                "| {} | `{}` | {:.6} | {:.6} | {:.6} | {:.6} |",
                i + 1,
                e.file,
                e.score,
                e.iad,
                e.ibf,
                e.ff
            );
        }
    }

    md.push_str("\n## Suspicious Methods\n\n");
    if payload.top_methods.iter().all(|m| m.methods.is_empty()) {
        let _ = writeln!(md, "{NONE_RECORDED}");
    } else {
        for rank in payload.top_methods.iter().filter(|m| !m.methods.is_empty()) {
            let _ = writeln!(md, "- `{}`", rank.file);
            for m in &rank.methods {
                let _ = writeln!(md, "  - `{}`: {} trace(s)", m.method, m.count);
            }
        }
    }

    md.push_str("\n## Affected URIs/Users\n\n");
    if payload.top_uris.is_empty() {
        let _ = writeln!(md, "{NONE_RECORDED}");
    } else {
        for uri in &payload.top_uris {
            let _ = writeln!(md, "- `{}`: {} crash(es)", uri.uri, uri.count);
            if uri.top_users.is_empty() {
                let _ = writeln!(md, "  - {NONE_RECORDED}");
            }
            for u in &uri.top_users {
                let _ = writeln!(md, "  - {}: {}", u.user, u.count);
            }
        }
    }

    md.push_str("\n## Samples\n\n### Stack traces\n\n");
    if payload.trace_samples.is_empty() {
        let _ = writeln!(md, "{NONE_RECORDED}");
    }
    let blocks: Vec<String> = payload
        .trace_samples
        .iter()
        .map(|trace| format!("```text\n{}\n```\n", trace.trim_end()))
        .collect();
    md.push_str(&blocks.join("\n"));
    md.push_str("\n### Crash report IDs\n\n");
    write_list(&mut md, &payload.crash_id_samples);
    md.push_str("\n### Session IDs\n\n");
    write_list(&mut md, &payload.session_samples);

    md.push_str("\n## Instructions\n\n");
    if payload.instructions.is_empty() {
        let _ = writeln!(md, "{NONE_RECORDED}");
    }
    for (i, line) in payload.instructions.iter().enumerate() {
        let _ = writeln!(md, "{}. {}", i + 1, line);
    }
    md
}

fn write_list(md: &mut String, items: &[String]) {
    if items.is_empty() {
        let _ = writeln!(md, "{NONE_RECORDED}");
    }
    for item in items {
        let _ = writeln!(md, "- `{item}`");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::group;
    use crate::ingest::{parse_instant, CrashReport};
    use crate::ranking::Ranker;
    use crate::trace_model::parse_stack_trace;
    use std::sync::Arc;

    fn report(id: &str, ts: &str, uri: &str, user: Option<&str>, session: Option<&str>, trace: &str) -> CrashReport {
        CrashReport {
            crash_id: id.into(),
            timestamp: parse_instant(ts).unwrap(),
            uri: uri.into(),
            user: user.map(Into::into),
            session_id: session.map(Into::into),
            trace: Arc::new(parse_stack_trace(trace).unwrap()),
        }
    }

    const T_A: &str = "java.lang.NullPointerException\n\tat s.p.ClassMBean.methodA(ClassMBean.java:280)\n\tat s.p.web.Page.load(Page.java:12)";
    const T_B: &str = "java.lang.IllegalStateException\n\tat s.p.dao.Repo.find(Repo.java:40)\n\tat org.hibernate.Session.get(Session.java:1)";
    const T_C: &str = "java.lang.ArithmeticException: / by zero\n\tat s.p.calc.Tax.rate(Tax.java:7)";

    /// 12 reports in 3 level-4 groups.
    fn fixture() -> (CrashCorpus, LevelPartition, AppConfig) {
        let reports = vec![
            report("a01", "2022-03-07T08:00:00Z", "/a.jsf", Some("ana"), Some("s1"), T_A),
            report("a02", "2022-03-07T09:00:00Z", "/a.jsf", Some("ana"), Some("s1"), T_A),
            report("a03", "2022-03-08T09:00:00Z", "/b.jsf", Some("bob"), Some("s2"), T_A),
            report("a04", "2022-03-09T09:00:00Z", "/a.jsf", None, None, T_A),
            report("a05", "2022-03-10T09:00:00Z", "/c.jsf", Some("cid"), Some("s3"), T_A),
            report("b01", "2022-03-07T10:00:00Z", "/r.jsf", Some("ana"), None, T_B),
            report("b02", "2022-03-08T10:00:00Z", "/r.jsf", Some("dan"), None, T_B),
            report("b03", "2022-03-09T10:00:00Z", "/r.jsf", Some("dan"), None, T_B),
            report("b04", "2022-03-11T10:00:00Z", "/s.jsf", Some("eve"), Some("s9"), T_B),
            report("c01", "2022-03-12T10:00:00Z", "/t.jsf", None, None, T_C),
            report("c02", "2022-03-12T11:00:00Z", "/t.jsf", None, None, T_C),
            report("c03", "2022-03-13T11:00:00Z", "/t.jsf", Some("fay"), None, T_C),
        ];
        let corpus = CrashCorpus::from_reports(reports, Some("2022-03-07..2022-03-14".parse().unwrap())).unwrap();
        let config = AppConfig::with_prefixes(["s.p"]);
        let p = group(&corpus, 4, &config).unwrap();
        (corpus, p, config)
    }

    #[test]
    fn summaries_match_hand_tabulation() {
        let (corpus, p, config) = fixture();
        let s = summarize_groups(&p, &corpus, &config).unwrap();
        let rows: Vec<(&str, usize, usize, usize)> = s
            .iter()
            .map(|s| {
                (
                    s.group_id.as_str(),
                    s.crash_count,
                    s.affected_uri_count,
                    s.affected_user_count,
                )
            })
            .collect();
        assert_eq!(rows, [("G4-a01", 5, 3, 3), ("G4-b01", 4, 2, 3), ("G4-c01", 3, 1, 1)]);
        assert_eq!(s[0].system_classes, ["s.p.ClassMBean", "s.p.web.Page"]);
        assert_eq!(s[1].system_classes, ["s.p.dao.Repo"]);
        assert_eq!(s[0].first_seen, parse_instant("2022-03-07T08:00:00Z").unwrap());
        assert_eq!(s[0].last_seen, parse_instant("2022-03-10T09:00:00Z").unwrap());
        assert_eq!(s.iter().map(|s| s.crash_count).sum::<usize>(), corpus.len());
    }

    #[test]
    fn single_member_summary() {
        let corpus = CrashCorpus::from_reports(
            vec![report("x", "2022-03-07T08:00:00Z", "/a", Some("u"), None, T_A)],
            None,
        )
        .unwrap();
        let config = AppConfig::with_prefixes(["s.p"]);
        let p = group(&corpus, 4, &config).unwrap();
        let s = &summarize_groups(&p, &corpus, &config).unwrap()[0];
        assert_eq!((s.crash_count, s.affected_uri_count, s.affected_user_count), (1, 1, 1));
        assert_eq!(s.first_seen, s.last_seen);
    }

    #[test]
    fn csv_export() {
        assert_eq!(
            export_spreadsheet_csv(&[]),
            "group_id,first_seen,last_seen,crash_count,uri_count,user_count,system_classes\r\n"
        );
        let (corpus, p, config) = fixture();
        let csv_text = export_spreadsheet_csv(&summarize_groups(&p, &corpus, &config).unwrap());
        let lines: Vec<&str> = csv_text.split("\r\n").collect();
        assert_eq!(
            lines[1],
            "G4-a01,2022-03-07T08:00:00Z,2022-03-10T09:00:00Z,5,3,3,s.p.ClassMBean;s.p.web.Page"
        );
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn csv_quotes_awkward_names() {
        let t: DateTime<Utc> = DateTime::UNIX_EPOCH;
        let s = GroupSummary {
            group_id: GroupId::from("G4-\"x\""),
            first_seen: t,
            last_seen: t,
            crash_count: 1,
            affected_uri_count: 1,
            affected_user_count: 0,
            system_classes: vec!["a.B,C".into(), "a.D".into()],
        };
        let text = export_spreadsheet_csv(std::slice::from_ref(&s));
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let row = reader.records().next().unwrap().unwrap();
        assert_eq!(&row[0], "G4-\"x\"");
        assert_eq!(&row[6], "a.B,C;a.D");
    }

    fn issue_for(corpus: &CrashCorpus, p: &LevelPartition, config: &AppConfig, idx: usize) -> IssuePayload {
        let ranker = Ranker::new(p, corpus, config).unwrap();
        let g = &p.groups[idx];
        let ranking = ranker.rank_files(g).unwrap();
        let methods = ranker.rank_methods(&ranking, g).unwrap();
        build_issue(g, &ranking, &methods, corpus, config).unwrap()
    }

    #[test]
    fn issue_tallies_and_samples() {
        let (corpus, p, config) = fixture();
        let issue = issue_for(&corpus, &p, &config, 0);
        assert_eq!(issue.crash_count, 5);
        assert_eq!(issue.top_uris[0].uri, "/a.jsf");
        assert_eq!(issue.top_uris[0].count, 3);
        assert_eq!(
            issue.top_uris[0].top_users,
            vec![UserTally {
                user: "ana".into(),
                count: 2
            }]
        );
        assert_eq!(issue.trace_samples.len(), 1);
        assert_eq!(issue.crash_id_samples, ["a01", "a02", "a03", "a04", "a05"]);
        assert_eq!(issue.session_samples, ["s1", "s2", "s3"]);
        assert_eq!(issue.instructions.len(), 3);
        assert_eq!(issue.top_files.entries[0].file, "s.p.ClassMBean");
        for id in issue.crash_id_samples.iter() {
            assert!(p.groups[0].members.contains(id));
        }
    }

    #[test]
    fn keeps_five_uris_by_count_then_name() {
        let mut reports = Vec::new();
        let counts = [
            ("/u1", 1),
            ("/u2", 3),
            ("/u3", 2),
            ("/u4", 3),
            ("/u5", 1),
            ("/u6", 4),
            ("/u7", 1),
        ];
        let mut n = 0;
        for (uri, c) in counts {
            for k in 0..c {
                n += 1;
                let user = format!("user{k}");
                reports.push(report(
                    &format!("r{n:02}"),
                    "2022-03-07T08:00:00Z",
                    uri,
                    Some(&user),
                    None,
                    T_A,
                ));
            }
        }
        let corpus = CrashCorpus::from_reports(reports, None).unwrap();
        let config = AppConfig::with_prefixes(["s.p"]);
        let p = group(&corpus, 4, &config).unwrap();
        let issue = issue_for(&corpus, &p, &config, 0);
        let uris: Vec<(&str, usize)> = issue.top_uris.iter().map(|u| (u.uri.as_str(), u.count)).collect();
        assert_eq!(uris, [("/u6", 4), ("/u2", 3), ("/u4", 3), ("/u3", 2), ("/u1", 1)]);
        assert_eq!(issue.top_uris[0].top_users.len(), 4);
    }

    #[test]
    fn markdown_is_deterministic_and_ordered() {
        let (corpus, p, config) = fixture();
        let issue = issue_for(&corpus, &p, &config, 1);
        let a = render_issue_markdown(&issue);
        assert_eq!(a, render_issue_markdown(&issue));
        let order = [
            "## Summary",
            "## Suspicious Files",
            "## Suspicious Methods",
            "## Affected URIs/Users",
            "## Samples",
            "## Instructions",
        ];
        let positions: Vec<usize> = order.iter().map(|h| a.find(h).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn markdown_marks_empty_sections() {
        let (corpus, p, config) = fixture();
        let mut issue = issue_for(&corpus, &p, &config, 2);
        issue.top_files.entries.clear();
        issue.top_methods.clear();
        issue.top_uris.clear();
        issue.trace_samples.clear();
        issue.session_samples.clear();
        let md = render_issue_markdown(&issue);
        assert!(md.matches(NONE_RECORDED).count() >= 5);
        assert!(md.contains("## Suspicious Files\n\n_none recorded_"));
    }

    #[test]
    fn weekly_counts_cover_span() {
        let (corpus, _, _) = fixture();
        let span: TimeWindow = "2022-03-07..2022-03-21".parse().unwrap();
        let weeks = weekly_crash_counts(&corpus, &span);
        assert_eq!(weeks.iter().map(|(_, n)| *n).collect::<Vec<_>>(), [12, 0]);
    }
}
