//! Suspicious file and method ranking for crash groups.
//!
//! Each candidate file `f` of a group `B` scores
//!
//! ```text
//! score(f) = IAD(f, B) * IBF(f) * FF(f, B)
//!
//! FF  = |traces of B containing f| / |B|
//! IAD = 1 / mean over those traces of (1 + lowest position of f)
//! IBF = ln(1 + |groups| / |groups whose traces contain f|)
//! ```
//!
//! Candidates are application files (package under one of the configured
//! prefixes) with at least one frame pointing at a `.java` source.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::RankingError;
use crate::grouping::{CrashGroup, GroupId, LevelPartition};
use crate::ingest::{AppConfig, CrashCorpus, CrashReport};
use crate::trace_model::StackTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileScore {
    pub file: String,
    pub iad: f64,
    pub ibf: f64,
    pub ff: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRanking {
    pub group_id: GroupId,
    /// Highest score first.
    pub entries: Vec<FileScore>,
    pub candidates_considered: usize,
}

impl FileRanking {
    pub fn rank_of(&self, file: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.file == file).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCount {
    pub method: String,
    /// Member traces with at least one frame in this method.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodRank {
    pub file: String,
    pub methods: Vec<MethodCount>,
}

/// One entry of `ranks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub group_id: GroupId,
    pub candidates_considered: usize,
    pub files: Vec<FileScore>,
    pub methods: Vec<MethodRank>,
}

impl RankedGroup {
    pub fn file_ranking(&self) -> FileRanking {
        FileRanking {
            group_id: self.group_id.clone(),
            entries: self.files.clone(),
            candidates_considered: self.candidates_considered,
        }
    }
}

pub fn ranks_to_json(ranks: &[RankedGroup]) -> String {
    let mut out = serde_json::to_string_pretty(ranks).expect("ranks serialize");
    out.push('\n');
    out
}

pub fn ranks_from_json(text: &str) -> Result<Vec<RankedGroup>, serde_json::Error> {
    serde_json::from_str(text)
}

/// Where each file and method first occurs in one trace.
#[derive(Debug)]
struct TraceProfile {
    /// (file id, lowest position, has a `.java` frame)
    files: Vec<(u32, usize, bool)>,
    /// (file id, method name, lowest position)
    methods: Vec<(u32, String, usize)>,
}

impl TraceProfile {
    fn build(trace: &StackTrace, files: &mut FileTable) -> Self {
        let mut by_file: Vec<(u32, usize, bool)> = Vec::new();
        let mut methods: Vec<(u32, String, usize)> = Vec::new();
        for frame in &trace.frames {
            let id = files.intern(frame.qualified_file_name());
            let source = frame.has_source_file();
            match by_file.iter_mut().find(|(f, _, _)| *f == id) {
                Some(entry) => entry.2 |= source,
                None => by_file.push((id, frame.position, source)),
            }
            let method = &frame.qualified_method.method;
            if !methods.iter().any(|(f, m, _)| *f == id && m == method) {
                methods.push((id, method.clone(), frame.position));
            }
        }
        Self {
            files: by_file,
            methods,
        }
    }
}

#[derive(Debug, Default)]
struct FileTable {
    ids: HashMap<String, u32>,
    names: Vec<String>,
}

impl FileTable {
    fn intern(&mut self, name: String) -> u32 {
        if let Some(&id) = self.ids.get(&name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.ids.insert(name.clone(), id);
        self.names.push(name);
        id
    }
}

/// Ranking context for one partition: trace profiles and the bucket
/// frequency of every file are computed once and shared by all groups.
pub struct Ranker<'a> {
    corpus: &'a CrashCorpus,
    config: &'a AppConfig,
    files: FileTable,
    profiles: Vec<Arc<TraceProfile>>,
    /// Number of groups whose traces contain each file, by file id.
    bucket_counts: Vec<usize>,
    group_count: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct FileStats {
    traces: usize,
    distance_sum: usize,
    source: bool,
}

impl<'a> Ranker<'a> {
    pub fn new(
        all_groups: &LevelPartition,
        corpus: &'a CrashCorpus,
        config: &'a AppConfig,
    ) -> Result<Self, RankingError> {
        let mut files = FileTable::default();
        let mut by_trace: HashMap<*const StackTrace, Arc<TraceProfile>> = HashMap::new();
        let profiles: Vec<Arc<TraceProfile>> = corpus
            .reports()
            .iter()
            .map(|r| {
                by_trace
                    .entry(Arc::as_ptr(&r.trace))
                    .or_insert_with(|| Arc::new(TraceProfile::build(&r.trace, &mut files)))
                    .clone()
            })
            .collect();

        let mut bucket_counts = vec![0usize; files.names.len()];
        let mut seen: HashSet<u32> = HashSet::new();
        for group in &all_groups.groups {
            seen.clear();
            for id in &group.members {
                let idx = corpus
                    .position(id)
                    .ok_or_else(|| crate::GroupingError::UnknownMember(id.clone()))?;
                seen.extend(profiles[idx].files.iter().map(|(f, _, _)| *f));
            }
            for &f in &seen {
                bucket_counts[f as usize] += 1;
            }
        }

        Ok(Self {
            corpus,
            config,
            files,
            profiles,
            bucket_counts,
            group_count: all_groups.groups.len(),
        })
    }

    fn member_profiles(&self, group: &CrashGroup) -> Result<Vec<&TraceProfile>, RankingError> {
        group
            .members
            .iter()
            .map(|id| {
                self.corpus
                    .position(id)
                    .map(|i| self.profiles[i].as_ref())
                    .ok_or_else(|| crate::GroupingError::UnknownMember(id.clone()).into())
            })
            .collect()
    }

    pub fn inverse_bucket_frequency(&self, file: &str) -> Result<f64, RankingError> {
        let n = self
            .files
            .ids
            .get(file)
            .map_or(0, |&id| self.bucket_counts[id as usize]);
        if n == 0 {
            return Err(RankingError::FileUnseen(file.to_owned()));
        }
        Ok(ibf(self.group_count, n))
    }

    pub fn rank_files(&self, group: &CrashGroup) -> Result<FileRanking, RankingError> {
        let profiles = self.member_profiles(group)?;
        let mut stats: HashMap<u32, FileStats> = HashMap::new();
        for profile in &profiles {
            for &(file, position, source) in &profile.files {
                let s = stats.entry(file).or_default();
                s.traces += 1;
                s.distance_sum += 1 + position;
                s.source |= source;
            }
        }

        let size = profiles.len() as f64;
        let mut scored: Vec<(FileScore, f64)> = stats
            .into_iter()
            .filter(|(file, s)| s.source && self.config.is_app_class(&self.files.names[*file as usize]))
            .map(|(file, s)| {
                let ff = s.traces as f64 / size;
                let iad = s.traces as f64 / s.distance_sum as f64;
                let ibf = ibf(self.group_count, self.bucket_counts[file as usize]);
                let mean_distance = s.distance_sum as f64 / s.traces as f64;
                let entry = FileScore {
                    file: self.files.names[file as usize].clone(),
                    iad,
                    ibf,
                    ff,
                    score: iad * ibf * ff,
                };
                (entry, mean_distance)
            })
            .collect();

        if scored.is_empty() {
            return Err(RankingError::NoCandidates(group.id.to_string()));
        }
        let candidates_considered = scored.len();
        scored.sort_by(|(a, da), (b, db)| compare_entries(a, *da, b, *db));
        scored.truncate(self.config.top_n_files);
        Ok(FileRanking {
            group_id: group.id.clone(),
            entries: scored.into_iter().map(|(e, _)| e).collect(),
            candidates_considered,
        })
    }

    /// Methods of each ranked file that occur in the group's traces, most
    /// frequent first (ties: lower first position, then name).
    pub fn rank_methods(&self, ranking: &FileRanking, group: &CrashGroup) -> Result<Vec<MethodRank>, RankingError> {
        let profiles = self.member_profiles(group)?;
        ranking
            .entries
            .iter()
            .map(|entry| {
                let Some(&file) = self.files.ids.get(&entry.file) else {
                    return Ok(MethodRank {
                        file: entry.file.clone(),
                        methods: Vec::new(),
                    });
                };
                let mut tally: HashMap<&str, (usize, usize)> = HashMap::new();
                for profile in &profiles {
                    for (f, method, position) in &profile.methods {
                        if *f == file {
                            let t = tally.entry(method.as_str()).or_insert((0, usize::MAX));
                            t.0 += 1;
                            t.1 = t.1.min(*position);
                        }
                    }
                }
                Ok(MethodRank {
                    file: entry.file.clone(),
                    methods: sort_methods(tally),
                })
            })
            .collect()
    }

    /// Ranks every group. Groups without application frames get an empty
    /// file list.
    pub fn rank_all(&self, partition: &LevelPartition) -> Result<Vec<RankedGroup>, RankingError> {
        partition
            .groups
            .iter()
            .map(|group| match self.rank_files(group) {
                Ok(ranking) => {
                    let methods = self.rank_methods(&ranking, group)?;
                    Ok(RankedGroup {
                        group_id: ranking.group_id,
                        candidates_considered: ranking.candidates_considered,
                        files: ranking.entries,
                        methods,
                    })
                }
                Err(RankingError::NoCandidates(_)) => Ok(RankedGroup {
                    group_id: group.id.clone(),
                    candidates_considered: 0,
                    files: Vec::new(),
                    methods: Vec::new(),
                }),
                Err(e) => Err(e),
            })
            .collect()
    }
}

fn ibf(group_count: usize, containing: usize) -> f64 {
    (1.0 + group_count as f64 / containing as f64).ln()
}

/// Score descending, then mean distance ascending, then file name.
fn compare_entries(a: &FileScore, da: f64, b: &FileScore, db: f64) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(da.total_cmp(&db))
        .then_with(|| a.file.cmp(&b.file))
}

fn traces_containing<'r>(file: &'r str, reports: &'r [&'r CrashReport]) -> impl Iterator<Item = Option<usize>> + 'r {
    reports.iter().map(move |r| {
        r.trace
            .frames
            .iter()
            .filter(|f| f.qualified_file_name() == file)
            .map(|f| f.position)
            .min()
    })
}

/// Fraction of the group's traces with at least one frame in `file`.
pub fn file_frequency(file: &str, group: &CrashGroup, corpus: &CrashCorpus) -> Result<f64, RankingError> {
    let reports = group.reports(corpus)?;
    if reports.is_empty() {
        return Ok(0.0);
    }
    let hits = traces_containing(file, &reports).filter(Option::is_some).count();
    Ok(hits as f64 / reports.len() as f64)
}

/// Inverse of the mean `1 + lowest position` of `file` over the traces of
/// the group that contain it.
pub fn inverse_avg_distance(file: &str, group: &CrashGroup, corpus: &CrashCorpus) -> Result<f64, RankingError> {
    let reports = group.reports(corpus)?;
    let distances: Vec<usize> = traces_containing(file, &reports).flatten().map(|p| p + 1).collect();
    if distances.is_empty() {
        return Err(RankingError::FileUnseen(file.to_owned()));
    }
    Ok(distances.len() as f64 / distances.iter().sum::<usize>() as f64)
}

pub fn inverse_bucket_frequency(
    file: &str,
    all_groups: &LevelPartition,
    corpus: &CrashCorpus,
) -> Result<f64, RankingError> {
    let mut containing = 0;
    for group in &all_groups.groups {
        let reports = group.reports(corpus)?;
        if traces_containing(file, &reports).any(|d| d.is_some()) {
            containing += 1;
        }
    }
    if containing == 0 {
        return Err(RankingError::FileUnseen(file.to_owned()));
    }
    Ok(ibf(all_groups.groups.len(), containing))
}

pub fn rank_files(
    group: &CrashGroup,
    all_groups: &LevelPartition,
    corpus: &CrashCorpus,
    config: &AppConfig,
) -> Result<FileRanking, RankingError> {
    Ranker::new(all_groups, corpus, config)?.rank_files(group)
}

/// Method lists for the files of `ranking`, computed straight from the
/// group's traces.
pub fn rank_methods(
    ranking: &FileRanking,
    group: &CrashGroup,
    corpus: &CrashCorpus,
) -> Result<Vec<MethodRank>, RankingError> {
    let reports = group.reports(corpus)?;
    Ok(ranking
        .entries
        .iter()
        .map(|entry| {
            let mut tally: HashMap<&str, (usize, usize)> = HashMap::new();
            for report in &reports {
                let mut first: HashMap<&str, usize> = HashMap::new();
                for frame in report
                    .trace
                    .frames
                    .iter()
                    .filter(|f| f.qualified_file_name() == entry.file)
                {
                    first
                        .entry(frame.qualified_method.method.as_str())
                        .or_insert(frame.position);
                }
                for (method, position) in first {
                    let t = tally.entry(method).or_insert((0, usize::MAX));
                    t.0 += 1;
                    t.1 = t.1.min(position);
                }
            }
            MethodRank {
                file: entry.file.clone(),
                methods: sort_methods(tally),
            }
        })
        .collect())
}

fn sort_methods(tally: HashMap<&str, (usize, usize)>) -> Vec<MethodCount> {
    let mut methods: Vec<(&str, usize, usize)> = tally.into_iter().map(|(m, (c, p))| (m, c, p)).collect();
    methods.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(b.0)));
    methods
        .into_iter()
        .map(|(m, count, _)| MethodCount {
            method: m.to_owned(),
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{GroupId, Signature};
    use crate::trace_model::parse_stack_trace;
    use chrono::{DateTime, Duration, Utc};
    use std::collections::BTreeSet;

    /// Corpus plus a partition given as lists of member indices.
    fn fixture(traces: &[&str], groups: &[&[usize]]) -> (CrashCorpus, LevelPartition) {
        let t0: DateTime<Utc> = "2022-03-07T00:00:00Z".parse().unwrap();
        let reports = traces
            .iter()
            .enumerate()
            .map(|(i, raw)| CrashReport {
                crash_id: format!("c{i:03}"),
                timestamp: t0 + Duration::minutes(i as i64),
                uri: "/x".into(),
                user: None,
                session_id: None,
                trace: Arc::new(parse_stack_trace(raw).unwrap()),
            })
            .collect();
        let corpus = CrashCorpus::from_reports(reports, None).unwrap();
        let groups = groups
            .iter()
            .map(|members| {
                let ids: Vec<String> = members.iter().map(|i| format!("c{i:03}")).collect();
                CrashGroup {
                    id: GroupId(format!("G4-{}", ids[0])),
                    level: 4,
                    signature: Signature::TopFrameFiles(BTreeSet::new()),
                    members: ids,
                    first_seen: t0,
                    last_seen: t0,
                }
            })
            .collect();
        (corpus, LevelPartition::new(4, groups))
    }

    fn cfg() -> AppConfig {
        AppConfig::with_prefixes(["app"])
    }

    #[test]
    fn ff_counts_trace_presence() {
        let (c, p) = fixture(
            &[
                "E\n at app.A.x(A.java:1)\n at app.B.y(B.java:1)",
                "E\n at app.A.x(A.java:1)",
                "E\n at app.A.x(A.java:1)\n at app.B.y(B.java:1)",
                "E\n at app.C.z(C.java:1)\n at app.B.y(B.java:1)",
            ],
            &[&[0, 1, 2, 3]],
        );
        let g = &p.groups[0];
        assert_eq!(file_frequency("app.B", g, &c).unwrap(), 0.75);
        assert_eq!(file_frequency("app.A", g, &c).unwrap(), 0.75);
        assert_eq!(file_frequency("app.C", g, &c).unwrap(), 0.25);
    }

    #[test]
    fn ff_ignores_multiplicity() {
        let (c, p) = fixture(
            &[
                "E\n at app.A.x(A.java:1)\n at app.A.x(A.java:1)",
                "E\n at app.B.y(B.java:1)",
            ],
            &[&[0, 1]],
        );
        assert_eq!(file_frequency("app.A", &p.groups[0], &c).unwrap(), 0.5);
    }

    #[test]
    fn iad_uses_lowest_position_per_trace() {
        let (c, p) = fixture(
            &[
                "E\n at app.A.x(A.java:1)\n at app.B.y(B.java:1)\n at app.A.z(A.java:9)",
                "E\n at app.Q.q(Q.java:1)\n at app.B.y(B.java:1)",
                "E\n at app.Q.q(Q.java:1)\n at app.R.r(R.java:1)\n at app.S.s(S.java:1)\n at app.B.y(B.java:1)",
            ],
            &[&[0], &[1, 2]],
        );
        assert_eq!(inverse_avg_distance("app.A", &p.groups[0], &c).unwrap(), 1.0);
        // Positions 1 and 3: distances 2 and 4, mean 3.
        assert!((inverse_avg_distance("app.B", &p.groups[1], &c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            inverse_avg_distance("app.Z", &p.groups[0], &c),
            Err(RankingError::FileUnseen("app.Z".into()))
        );
    }

    #[test]
    fn ibf_values() {
        let traces: Vec<String> = (0..20)
            .map(|i| {
                let shared = if i < 5 { "\n at app.Shared.s(Shared.java:1)" } else { "" };
                format!("E\n at app.F{i}.x(F{i}.java:1)\n at app.All.a(All.java:1){shared}")
            })
            .collect();
        let refs: Vec<&str> = traces.iter().map(String::as_str).collect();
        let singletons: Vec<Vec<usize>> = (0..20).map(|i| vec![i]).collect();
        let groups: Vec<&[usize]> = singletons.iter().map(Vec::as_slice).collect();
        let (c, p) = fixture(&refs, &groups);

        let cfg = cfg();
        let ranker = Ranker::new(&p, &c, &cfg).unwrap();
        assert!((inverse_bucket_frequency("app.All", &p, &c).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((inverse_bucket_frequency("app.Shared", &p, &c).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((ranker.inverse_bucket_frequency("app.F3").unwrap() - 21f64.ln()).abs() < 1e-12);
        assert!(matches!(
            ranker.inverse_bucket_frequency("app.Nope"),
            Err(RankingError::FileUnseen(_))
        ));

        let first_ten = LevelPartition::new(4, p.groups[..10].to_vec());
        assert!((inverse_bucket_frequency("app.F3", &first_ten, &c).unwrap() - 2.397_895_272_798_371).abs() < 1e-12);
    }

    #[test]
    fn crash_point_file_ranks_first() {
        let (c, p) = fixture(
            &[
                "E\n at app.Top.a(Top.java:1)\n at java.lang.Thread.run(Thread.java:1)",
                "E\n at app.Top.b(Top.java:2)\n at java.lang.Thread.run(Thread.java:1)",
                "E\n at app.Other.c(Other.java:2)\n at java.lang.Thread.run(Thread.java:1)",
            ],
            &[&[0, 1], &[2]],
        );
        let r = rank_files(&p.groups[0], &p, &c, &cfg()).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.candidates_considered, 1);
        let top = &r.entries[0];
        assert_eq!(top.file, "app.Top");
        assert_eq!((top.iad, top.ff), (1.0, 1.0));
        assert!((top.score - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_source_and_framework_frames_are_not_candidates() {
        let (c, p) = fixture(
            &["E\n at app.Gen.x(Unknown Source)\n at org.fw.Call.c(Call.java:3)\n at app.Real.y(Real.java:4)"],
            &[&[0]],
        );
        let r = rank_files(&p.groups[0], &p, &c, &cfg()).unwrap();
        let files: Vec<&str> = r.entries.iter().map(|e| e.file.as_str()).collect();
        assert_eq!(files, ["app.Real"]);

        let (c, p) = fixture(&["E\n at org.fw.Call.c(Call.java:3)"], &[&[0]]);
        assert!(matches!(
            rank_files(&p.groups[0], &p, &c, &cfg()),
            Err(RankingError::NoCandidates(_))
        ));
    }

    #[test]
    fn ties_break_on_distance_then_name() {
        // app.B and app.A: same ff and ibf; B sits closer in trace 0, A in
        // trace 1, so the mean distances tie as well and the name decides.
        let (c, p) = fixture(
            &[
                "E\n at app.B.x(B.java:1)\n at app.A.y(A.java:1)",
                "E\n at app.A.y(A.java:1)\n at app.B.x(B.java:1)",
            ],
            &[&[0, 1]],
        );
        let r = rank_files(&p.groups[0], &p, &c, &cfg()).unwrap();
        let files: Vec<&str> = r.entries.iter().map(|e| e.file.as_str()).collect();
        assert_eq!(files, ["app.A", "app.B"]);
    }

    #[test]
    fn truncates_to_top_n() {
        let trace: String = std::iter::once("E".to_owned())
            .chain((0..8).map(|i| format!(" at app.F{i}.m(F{i}.java:1)")))
            .collect::<Vec<_>>()
            .join("\n");
        let (c, p) = fixture(&[&trace], &[&[0]]);
        let r = rank_files(&p.groups[0], &p, &c, &cfg()).unwrap();
        assert_eq!(r.entries.len(), 5);
        assert_eq!(r.candidates_considered, 8);
        assert_eq!(r.entries[0].file, "app.F0");
        assert!(r.entries.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn methods_by_trace_count() {
        let mut traces = vec!["E\n at app.A.methodA(A.java:1)"; 3];
        traces.extend(["E\n at app.A.methodB(A.java:5)\n at app.A.methodA(A.java:2)"; 2]);
        let (c, p) = fixture(&traces, &[&[0, 1, 2, 3, 4]]);
        let cfg = cfg();
        let ranker = Ranker::new(&p, &c, &cfg).unwrap();
        let r = ranker.rank_files(&p.groups[0]).unwrap();
        let m = ranker.rank_methods(&r, &p.groups[0]).unwrap();
        assert_eq!(m, rank_methods(&r, &p.groups[0], &c).unwrap());
        assert_eq!(m.len(), 1);
        assert_eq!(
            m[0].methods,
            vec![
                MethodCount {
                    method: "methodA".into(),
                    count: 5
                },
                MethodCount {
                    method: "methodB".into(),
                    count: 2
                },
            ]
        );
    }

    #[test]
    fn rank_all_keeps_groups_without_candidates() {
        let (c, p) = fixture(
            &["E\n at app.A.x(A.java:1)", "E\n at org.fw.B.y(B.java:1)"],
            &[&[0], &[1]],
        );
        let cfg = cfg();
        let ranked = Ranker::new(&p, &c, &cfg).unwrap().rank_all(&p).unwrap();
        assert_eq!(ranked.len(), 2);
        assert!(ranked[1].files.is_empty());
        assert_eq!(ranks_from_json(&ranks_to_json(&ranked)).unwrap(), ranked);
    }
}
