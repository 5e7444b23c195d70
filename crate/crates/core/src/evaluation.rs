//! Retrospective accuracy of the suspicious-file and method lists against
//! the files and methods that bug-fix commits actually changed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::grouping::{GroupId, LevelPartition, ReportKeys};
use crate::ingest::{AppConfig, CrashCorpus};
use crate::ranking::{FileRanking, MethodRank, RankedGroup};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChangedMethod {
    pub file: String,
    pub method: String,
}

/// One closed bug-fix task, as exported from an issue tracker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthTask {
    pub task_id: String,
    pub group_id: GroupId,
    pub changed_files: Vec<String>,
    #[serde(default)]
    pub changed_methods: Vec<ChangedMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<DateTime<Utc>>,
}

impl GroundTruthTask {
    pub fn is_evaluable(&self) -> bool {
        !self.changed_files.is_empty()
    }

    fn relevant(&self) -> BTreeSet<&str> {
        self.changed_files.iter().map(String::as_str).collect()
    }
}

pub fn tasks_from_json(text: &str) -> Result<Vec<GroundTruthTask>, serde_json::Error> {
    serde_json::from_str(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub first_hit_rank: Option<usize>,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub map_at: BTreeMap<usize, f64>,
    pub method_hit_rate: f64,
    pub per_task: Vec<TaskResult>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }
}

pub type Rankings = BTreeMap<GroupId, FileRanking>;
pub type MethodRankings = BTreeMap<GroupId, Vec<MethodRank>>;

/// Splits `ranks.json` content into file and method lookups.
pub fn index_ranks(ranks: &[RankedGroup]) -> (Rankings, MethodRankings) {
    let files = ranks.iter().map(|r| (r.group_id.clone(), r.file_ranking())).collect();
    let methods = ranks.iter().map(|r| (r.group_id.clone(), r.methods.clone())).collect();
    (files, methods)
}

fn evaluable(tasks: &[GroundTruthTask]) -> Result<Vec<&GroundTruthTask>, EvalError> {
    let out: Vec<_> = tasks.iter().filter(|t| t.is_evaluable()).collect();
    if out.is_empty() {
        return Err(EvalError::EmptyTaskSet);
    }
    Ok(out)
}

fn ranking_for<'r>(task: &GroundTruthTask, rankings: &'r Rankings) -> Result<&'r FileRanking, EvalError> {
    rankings.get(&task.group_id).ok_or_else(|| EvalError::MissingRanking {
        task_id: task.task_id.clone(),
        group_id: task.group_id.to_string(),
    })
}

/// 1-based rank of the first changed file in the ranking.
pub fn first_hit_rank(task: &GroundTruthTask, ranking: &FileRanking) -> Option<usize> {
    let relevant = task.relevant();
    ranking
        .entries
        .iter()
        .position(|e| relevant.contains(e.file.as_str()))
        .map(|i| i + 1)
}

/// Fraction of evaluable tasks with a changed file among the top `n`.
pub fn recall_at_n(tasks: &[GroundTruthTask], rankings: &Rankings, n: usize) -> Result<f64, EvalError> {
    let tasks = evaluable(tasks)?;
    let mut hits = 0usize;
    for task in &tasks {
        if first_hit_rank(task, ranking_for(task, rankings)?).is_some_and(|r| r <= n) {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

/// Sum of precision@k over relevant ranks k ≤ n, divided by min(|R|, n).
pub fn average_precision(task: &GroundTruthTask, ranking: &FileRanking, n: usize) -> f64 {
    let relevant = task.relevant();
    let denom = relevant.len().min(n);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, entry) in ranking.entries.iter().take(n).enumerate() {
        if relevant.contains(entry.file.as_str()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

pub fn mean_average_precision(tasks: &[GroundTruthTask], rankings: &Rankings, n: usize) -> Result<f64, EvalError> {
    let tasks = evaluable(tasks)?;
    let mut sum = 0.0;
    for task in &tasks {
        sum += average_precision(task, ranking_for(task, rankings)?, n);
    }
    Ok(sum / tasks.len() as f64)
}

/// Fraction of tasks with changed methods where at least one of them was
/// suggested. Tasks without changed methods are not counted; with none at
/// all the rate is 0.
pub fn method_hit_rate(tasks: &[GroundTruthTask], method_ranks: &MethodRankings) -> f64 {
    let mut considered = 0usize;
    let mut hits = 0usize;
    for task in tasks.iter().filter(|t| !t.changed_methods.is_empty()) {
        considered += 1;
        let Some(ranks) = method_ranks.get(&task.group_id) else {
            continue;
        };
        let suggested: BTreeSet<(&str, &str)> = ranks
            .iter()
            .flat_map(|r| r.methods.iter().map(move |m| (r.file.as_str(), m.method.as_str())))
            .collect();
        if task
            .changed_methods
            .iter()
            .any(|c| suggested.contains(&(c.file.as_str(), c.method.as_str())))
        {
            hits += 1;
        }
    }
    if considered == 0 {
        0.0
    } else {
        hits as f64 / considered as f64
    }
}

/// For each task, whether any report after the task's closure still
/// matches its group. Tasks without a close date consider the whole corpus;
/// tasks whose group is unknown never recur.
pub fn recurrence_table(
    tasks: &[GroundTruthTask],
    post_corpus: &CrashCorpus,
    groups: &LevelPartition,
    config: &AppConfig,
) -> BTreeMap<String, bool> {
    let mut keys: HashMap<*const crate::trace_model::StackTrace, ReportKeys> = HashMap::new();
    for report in post_corpus.reports() {
        keys.entry(Arc::as_ptr(&report.trace))
            .or_insert_with(|| ReportKeys::new(&report.trace, &config.normalization_rules));
    }

    tasks
        .iter()
        .map(|task| {
            let recurred = groups.get(&task.group_id).is_some_and(|group| {
                post_corpus.reports().iter().any(|r| {
                    task.closed_at.is_none_or(|closed| r.timestamp > closed)
                        && group.signature.matches(&keys[&Arc::as_ptr(&r.trace)])
                })
            });
            (task.task_id.clone(), recurred)
        })
        .collect()
}

/// All metrics for the cutoffs in `ns`. Per-task AP uses the largest cutoff.
pub fn evaluate(tasks: &[GroundTruthTask], ranks: &[RankedGroup], ns: &[usize]) -> Result<EvalReport, EvalError> {
    let (rankings, methods) = index_ranks(ranks);
    let mut recall_at = BTreeMap::new();
    let mut map_at = BTreeMap::new();
    for &n in ns {
        recall_at.insert(n, recall_at_n(tasks, &rankings, n)?);
        map_at.insert(n, mean_average_precision(tasks, &rankings, n)?);
    }
    let cutoff = ns.iter().copied().max().unwrap_or(0);
    let mut per_task = Vec::new();
    for task in tasks.iter().filter(|t| t.is_evaluable()) {
        let ranking = ranking_for(task, &rankings)?;
        per_task.push(TaskResult {
            task_id: task.task_id.clone(),
            first_hit_rank: first_hit_rank(task, ranking),
            average_precision: average_precision(task, ranking, cutoff),
        });
    }
    Ok(EvalReport {
        recall_at,
        map_at,
        method_hit_rate: method_hit_rate(tasks, &methods),
        per_task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{FileScore, MethodCount};

    fn ranking(group: &str, files: &[&str]) -> FileRanking {
        FileRanking {
            group_id: GroupId::from(group),
            entries: files
                .iter()
                .enumerate()
                .map(|(i, f)| FileScore {
                    file: (*f).into(),
                    iad: 1.0,
                    ibf: 1.0,
                    ff: 1.0,
                    score: 10.0 - i as f64,
                })
                .collect(),
            candidates_considered: files.len(),
        }
    }

    fn task(id: &str, group: &str, changed: &[&str]) -> GroundTruthTask {
        GroundTruthTask {
            task_id: id.into(),
            group_id: GroupId::from(group),
            changed_files: changed.iter().map(|s| (*s).into()).collect(),
            changed_methods: Vec::new(),
            closed_at: None,
        }
    }

    const FILES: [&str; 5] = ["f1", "f2", "f3", "f4", "f5"];

    fn rankings(pairs: &[(&str, &[&str])]) -> Rankings {
        pairs.iter().map(|(g, f)| (GroupId::from(*g), ranking(g, f))).collect()
    }

    #[test]
    fn recall_single_hit_at_one() {
        let r = rankings(&[("G", &FILES)]);
        assert_eq!(recall_at_n(&[task("t", "G", &["f1"])], &r, 1).unwrap(), 1.0);
    }

    #[test]
    fn recall_with_hits_at_two_and_four() {
        let r = rankings(&[("A", &FILES), ("B", &FILES)]);
        let tasks = [task("a", "A", &["f2"]), task("b", "B", &["f4"])];
        let got: Vec<f64> = [1, 3, 5].iter().map(|&n| recall_at_n(&tasks, &r, n).unwrap()).collect();
        assert_eq!(got, [0.0, 0.5, 1.0]);
    }

    #[test]
    fn recall_requires_ranking() {
        let err = recall_at_n(&[task("t", "missing", &["x"])], &Rankings::new(), 3).unwrap_err();
        assert_eq!(
            err,
            EvalError::MissingRanking {
                task_id: "t".into(),
                group_id: "missing".into()
            }
        );
    }

    #[test]
    fn ap_fixtures() {
        let r = ranking("G", &FILES);
        assert_eq!(average_precision(&task("t", "G", &["f1"]), &r, 5), 1.0);
        assert!((average_precision(&task("t", "G", &["f3"]), &r, 5) - 1.0 / 3.0).abs() < 1e-12);
        assert!((average_precision(&task("t", "G", &["f1", "f4"]), &r, 5) - 0.75).abs() < 1e-12);
        assert_eq!(average_precision(&task("t", "G", &["zz"]), &r, 5), 0.0);
    }

    #[test]
    fn ap_denominator_caps_at_cutoff() {
        let r = ranking("G", &FILES);
        let t = task("t", "G", &["f1", "f2", "f3", "f9"]);
        assert_eq!(average_precision(&t, &r, 1), 1.0);
        assert_eq!(average_precision(&t, &r, 3), 1.0);
        assert!((average_precision(&t, &r, 5) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn map_of_four_tasks() {
        // APs 1, 0.75, 0.5 and 0.25 at n = 5.
        let r = rankings(&[("A", &FILES), ("B", &FILES), ("C", &FILES), ("D", &FILES)]);
        let tasks = [
            task("a", "A", &["f1"]),
            task("b", "B", &["f1", "f4"]),
            task("c", "C", &["f2"]),
            task("d", "D", &["f4"]),
        ];
        let aps: Vec<f64> = tasks.iter().map(|t| average_precision(t, &r[&t.group_id], 5)).collect();
        assert_eq!(aps, [1.0, 0.75, 0.5, 0.25]);
        assert!((mean_average_precision(&tasks, &r, 5).unwrap() - 0.625).abs() < 1e-12);
        assert_eq!(mean_average_precision(&tasks[..1], &r, 5).unwrap(), 1.0);
    }

    #[test]
    fn map_of_nothing_is_an_error() {
        assert_eq!(
            mean_average_precision(&[], &Rankings::new(), 5),
            Err(EvalError::EmptyTaskSet)
        );
        assert_eq!(
            mean_average_precision(&[task("t", "G", &[])], &Rankings::new(), 5),
            Err(EvalError::EmptyTaskSet)
        );
    }

    fn method_ranks(group: &str, file: &str, methods: &[&str]) -> (GroupId, Vec<MethodRank>) {
        (
            GroupId::from(group),
            vec![MethodRank {
                file: file.into(),
                methods: methods
                    .iter()
                    .map(|m| MethodCount {
                        method: (*m).into(),
                        count: 1,
                    })
                    .collect(),
            }],
        )
    }

    fn with_method(mut t: GroundTruthTask, file: &str, method: &str) -> GroundTruthTask {
        t.changed_methods.push(ChangedMethod {
            file: file.into(),
            method: method.into(),
        });
        t
    }

    #[test]
    fn method_hits_over_ten_tasks() {
        let mut tasks = Vec::new();
        let mut ranks = MethodRankings::new();
        for i in 0..10 {
            let g = format!("G{i}");
            let (id, list) = method_ranks(&g, "a.B", &["run", "stop"]);
            ranks.insert(id, list);
            let method = if i < 7 { "run" } else { "other" };
            tasks.push(with_method(task(&format!("t{i}"), &g, &["a.B"]), "a.B", method));
        }
        // Excluded from the denominator.
        tasks.push(task("plain", "G0", &["a.B"]));
        assert!((method_hit_rate(&tasks, &ranks) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn method_hit_needs_same_file() {
        let ranks: MethodRankings = [method_ranks("G", "a.B", &["run"])].into_iter().collect();
        let hit = with_method(task("t", "G", &["a.B"]), "a.B", "run");
        let wrong_file = with_method(task("t", "G", &["a.C"]), "a.C", "run");
        assert_eq!(method_hit_rate(&[hit], &ranks), 1.0);
        assert_eq!(method_hit_rate(&[wrong_file], &ranks), 0.0);
        assert_eq!(method_hit_rate(&[], &ranks), 0.0);
    }

    #[test]
    fn evaluate_combines_metrics() {
        let ranks = vec![RankedGroup {
            group_id: GroupId::from("A"),
            candidates_considered: 5,
            files: ranking("A", &FILES).entries,
            methods: method_ranks("A", "f2", &["m"]).1,
        }];
        let tasks = [with_method(task("a", "A", &["f2"]), "f2", "m")];
        let report = evaluate(&tasks, &ranks, &[1, 3, 5]).unwrap();
        assert_eq!(report.recall_at.values().copied().collect::<Vec<_>>(), [0.0, 1.0, 1.0]);
        assert_eq!(report.map_at[&5], 0.5);
        assert_eq!(report.method_hit_rate, 1.0);
        assert_eq!(report.per_task[0].first_hit_rank, Some(2));
    }

    #[test]
    fn truth_schema_parses() {
        let text = r#"[{"task_id":"T-1","group_id":"G4-c1","changed_files":["s.p.A"],
            "changed_methods":[{"file":"s.p.A","method":"run"}]},
            {"task_id":"T-2","group_id":"G4-c2","changed_files":[],"closed_at":"2022-03-07T00:00:00Z"}]"#;
        let tasks = tasks_from_json(text).unwrap();
        assert_eq!(tasks.len(), 2);
        assert!(tasks[0].is_evaluable() && !tasks[1].is_evaluable());
        assert!(tasks[1].closed_at.is_some());
    }
}
