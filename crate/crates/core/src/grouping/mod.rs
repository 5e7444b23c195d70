//! Cumulative four-level crash grouping.
//!
//! 1. identical frame sections (exception type plus frames),
//! 2. identical exception type and frames after normalization of generated
//!    identifiers,
//! 3. one method-frame sequence is a contiguous run of the other,
//! 4. same qualified file at the crash point.
//!
//! Each level merges the groups of the previous one, so level `k` is always
//! a coarsening of level `k - 1`.

mod union_find;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use union_find::UnionFind;

use crate::error::GroupingError;
use crate::ingest::{AppConfig, CrashCorpus, CrashReport};
use crate::trace_model::{normalize_trace, NormalizationRules, StackTrace};

/// Stable group identifier derived from the level and the
/// lexicographically least member crash id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub String);

impl GroupId {
    fn new(level: u8, least_member: &str) -> Self {
        Self(format!("G{level}-{least_member}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// What a group's members have in common at its level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Signature {
    /// Level 1: exception type and frame lines, verbatim.
    Trace(String),
    /// Level 2: exception type and normalized frame lines, line numbers kept.
    NormalizedFrames {
        exception_type: String,
        frames: Vec<String>,
    },
    /// Level 3: the normalized `package.class.method` sequences of the members.
    MethodSequences(BTreeSet<Vec<String>>),
    /// Level 4: qualified crash-point file names of the members.
    TopFrameFiles(BTreeSet<String>),
}

impl Signature {
    pub fn kind(&self) -> &'static str {
        match self {
            Signature::Trace(_) => "trace",
            Signature::NormalizedFrames { .. } => "normalized_frames",
            Signature::MethodSequences(_) => "method_sequences",
            Signature::TopFrameFiles(_) => "top_frame_files",
        }
    }

    /// Whether a report with these keys satisfies the level predicate.
    pub fn matches(&self, keys: &ReportKeys) -> bool {
        match self {
            Signature::Trace(text) => *text == keys.frame_section,
            Signature::NormalizedFrames { exception_type, frames } => {
                *exception_type == keys.exception_type && *frames == keys.normalized_frames
            }
            Signature::MethodSequences(seqs) => seqs.iter().any(|s| {
                contains_contiguous(s, &keys.method_sequence) || contains_contiguous(&keys.method_sequence, s)
            }),
            Signature::TopFrameFiles(files) => files.contains(&keys.top_frame_file),
        }
    }
}

/// True when `needle` occurs as a contiguous run inside `haystack`.
pub fn contains_contiguous<T: PartialEq>(haystack: &[T], needle: &[T]) -> bool {
    if needle.is_empty() {
        return true;
    }
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// The per-level comparison keys of one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportKeys {
    pub frame_section: String,
    pub exception_type: String,
    pub normalized_frames: Vec<String>,
    pub method_sequence: Vec<String>,
    pub top_frame_file: String,
}

impl ReportKeys {
    pub fn new(trace: &StackTrace, rules: &NormalizationRules) -> Self {
        let normalized = normalize_trace(trace, rules);
        Self {
            frame_section: trace.frame_section(),
            exception_type: trace.exception_type.clone(),
            normalized_frames: normalized.frames.iter().map(ToString::to_string).collect(),
            method_sequence: normalized.method_sequence(),
            top_frame_file: normalized.crash_point().qualified_file_name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashGroup {
    pub id: GroupId,
    pub level: u8,
    pub signature: Signature,
    /// Member crash ids, ascending.
    pub members: Vec<String>,
    pub first_seen: DateTime<Utc>,
    pub last_seen: DateTime<Utc>,
}

impl CrashGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Member reports, in member order. Unknown ids are an error.
    pub fn reports<'c>(&self, corpus: &'c CrashCorpus) -> Result<Vec<&'c CrashReport>, GroupingError> {
        self.members
            .iter()
            .map(|id| corpus.get(id).ok_or_else(|| GroupingError::UnknownMember(id.clone())))
            .collect()
    }
}

/// Groups of one level, ordered by id. Serialized as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelPartition {
    pub level: u8,
    pub groups: Vec<CrashGroup>,
}

impl LevelPartition {
    pub fn new(level: u8, mut groups: Vec<CrashGroup>) -> Self {
        groups.sort_by(|a, b| a.id.cmp(&b.id));
        Self { level, groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn get(&self, id: &GroupId) -> Option<&CrashGroup> {
        self.groups
            .binary_search_by(|g| g.id.cmp(id))
            .ok()
            .map(|i| &self.groups[i])
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.groups).expect("groups serialize");
        out.push('\n');
        out
    }

    /// Reads a groups file. The level is taken from the groups, or
    /// `fallback_level` when the file is empty.
    pub fn from_json(text: &str, fallback_level: u8) -> Result<Self, serde_json::Error> {
        let groups: Vec<CrashGroup> = serde_json::from_str(text)?;
        let level = groups.first().map_or(fallback_level, |g| g.level);
        Ok(Self::new(level, groups))
    }
}

/// Whether `report` would join `group` under the group's level predicate.
pub fn match_report_to_group(report: &CrashReport, group: &CrashGroup, config: &AppConfig) -> bool {
    group
        .signature
        .matches(&ReportKeys::new(&report.trace, &config.normalization_rules))
}

#[derive(Debug, Clone, Copy)]
struct TraceKeys {
    l1: u32,
    l2: u32,
    l3: u32,
    top: u32,
}

#[derive(Debug, Default)]
struct Interner<K> {
    ids: HashMap<K, u32>,
    items: Vec<K>,
}

impl<K: std::hash::Hash + Eq + Clone> Interner<K> {
    fn intern(&mut self, key: K) -> (u32, bool) {
        if let Some(&id) = self.ids.get(&key) {
            return (id, false);
        }
        let id = self.items.len() as u32;
        self.ids.insert(key.clone(), id);
        self.items.push(key);
        (id, true)
    }

    fn get(&self, id: u32) -> &K {
        &self.items[id as usize]
    }
}

/// Grouping context for one corpus. Per-trace keys are computed once, and
/// only once per distinct frame section.
pub struct Grouper<'c> {
    corpus: &'c CrashCorpus,
    keys: Vec<TraceKeys>,
    sections: Interner<String>,
    normalized: Interner<(String, Vec<String>)>,
    methods: Interner<String>,
    sequences: Interner<Vec<u32>>,
    files: Interner<String>,
}

impl<'c> Grouper<'c> {
    pub fn new(corpus: &'c CrashCorpus, rules: &NormalizationRules) -> Self {
        let mut g = Self {
            corpus,
            keys: Vec::with_capacity(corpus.len()),
            sections: Interner::default(),
            normalized: Interner::default(),
            methods: Interner::default(),
            sequences: Interner::default(),
            files: Interner::default(),
        };
        let mut by_trace: HashMap<*const StackTrace, TraceKeys> = HashMap::new();
        let mut by_section: Vec<TraceKeys> = Vec::new();
        for report in corpus.reports() {
            let ptr = Arc::as_ptr(&report.trace);
            let keys = match by_trace.get(&ptr) {
                Some(k) => *k,
                None => {
                    let (l1, fresh) = g.sections.intern(report.trace.frame_section());
                    let k = if fresh {
                        let k = g.derive_keys(l1, &report.trace, rules);
                        by_section.push(k);
                        k
                    } else {
                        by_section[l1 as usize]
                    };
                    by_trace.insert(ptr, k);
                    k
                }
            };
            g.keys.push(keys);
        }
        g
    }

    fn derive_keys(&mut self, l1: u32, trace: &StackTrace, rules: &NormalizationRules) -> TraceKeys {
        let normalized = normalize_trace(trace, rules);
        let frames = normalized.frames.iter().map(ToString::to_string).collect();
        let (l2, _) = self.normalized.intern((trace.exception_type.clone(), frames));
        let seq = normalized
            .frames
            .iter()
            .map(|f| self.methods.intern(f.qualified_method.to_string()).0)
            .collect();
        let (l3, _) = self.sequences.intern(seq);
        let (top, _) = self.files.intern(normalized.crash_point().qualified_file_name());
        TraceKeys { l1, l2, l3, top }
    }

    pub fn corpus(&self) -> &'c CrashCorpus {
        self.corpus
    }

    pub fn level1(&self) -> LevelPartition {
        let mut buckets: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, k) in self.keys.iter().enumerate() {
            buckets.entry(k.l1).or_default().push(i);
        }
        let groups = buckets
            .into_iter()
            .map(|(l1, members)| self.make_group(1, members, Signature::Trace(self.sections.get(l1).clone())))
            .collect();
        LevelPartition::new(1, groups)
    }

    pub fn level2(&self, p1: &LevelPartition) -> Result<LevelPartition, GroupingError> {
        let merged = self.merge_sharing(p1, |k| k.l2)?;
        let groups = merged
            .into_iter()
            .map(|members| {
                let least = self.least_member(&members);
                let (exception_type, frames) = self.normalized.get(self.keys[least].l2).clone();
                self.make_group(2, members, Signature::NormalizedFrames { exception_type, frames })
            })
            .collect();
        Ok(LevelPartition::new(2, groups))
    }

    pub fn level3(&self, p2: &LevelPartition) -> Result<LevelPartition, GroupingError> {
        let mut present: Vec<u32> = self
            .members_of(p2)?
            .iter()
            .flatten()
            .map(|&i| self.keys[i].l3)
            .collect();
        present.sort_unstable();
        present.dedup();

        let mut uf = UnionFind::new(self.sequences.items.len());
        self.union_contained(&present, &mut uf);

        let roots: Vec<u32> = (0..self.sequences.items.len()).map(|i| uf.find(i) as u32).collect();
        let merged = self.merge_sharing(p2, |k| roots[k.l3 as usize])?;
        let groups = merged
            .into_iter()
            .map(|members| {
                let seqs: BTreeSet<Vec<String>> = members
                    .iter()
                    .map(|&i| self.keys[i].l3)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .map(|l3| {
                        self.sequences
                            .get(l3)
                            .iter()
                            .map(|&m| self.methods.get(m).clone())
                            .collect()
                    })
                    .collect();
                self.make_group(3, members, Signature::MethodSequences(seqs))
            })
            .collect();
        Ok(LevelPartition::new(3, groups))
    }

    pub fn level4(&self, p3: &LevelPartition) -> Result<LevelPartition, GroupingError> {
        let merged = self.merge_sharing(p3, |k| k.top)?;
        let groups = merged
            .into_iter()
            .map(|members| {
                let files = members
                    .iter()
                    .map(|&i| self.files.get(self.keys[i].top).clone())
                    .collect();
                self.make_group(4, members, Signature::TopFrameFiles(files))
            })
            .collect();
        Ok(LevelPartition::new(4, groups))
    }

    /// Partitions for levels `1..=level`, finest first.
    pub fn levels(&self, level: u8) -> Result<Vec<LevelPartition>, GroupingError> {
        if !(1..=4).contains(&level) {
            return Err(GroupingError::InvalidLevel(level));
        }
        let mut out = vec![self.level1()];
        for k in 2..=level {
            let prev = out.last().unwrap();
            let next = match k {
                2 => self.level2(prev)?,
                3 => self.level3(prev)?,
                _ => self.level4(prev)?,
            };
            out.push(next);
        }
        Ok(out)
    }

    /// Unions every present sequence with each present sequence it contains
    /// as a contiguous run. Candidates are found through an index on the
    /// first method of each sequence and filtered on the last method before
    /// the full comparison.
    fn union_contained(&self, present: &[u32], uf: &mut UnionFind) {
        let mut by_first: HashMap<u32, Vec<u32>> = HashMap::new();
        for &id in present {
            by_first.entry(self.sequences.get(id)[0]).or_default().push(id);
        }
        for &outer_id in present {
            let outer = self.sequences.get(outer_id);
            for start in 0..outer.len() {
                let Some(candidates) = by_first.get(&outer[start]) else {
                    continue;
                };
                for &inner_id in candidates {
                    if inner_id == outer_id {
                        continue;
                    }
                    let inner = self.sequences.get(inner_id);
                    let end = start + inner.len();
                    if end <= outer.len() && outer[end - 1] == inner[inner.len() - 1] && outer[start..end] == inner[..]
                    {
                        uf.union(outer_id as usize, inner_id as usize);
                    }
                }
            }
        }
    }

    fn members_of(&self, p: &LevelPartition) -> Result<Vec<Vec<usize>>, GroupingError> {
        p.groups
            .iter()
            .map(|g| {
                g.members
                    .iter()
                    .map(|id| {
                        self.corpus
                            .position(id)
                            .ok_or_else(|| GroupingError::UnknownMember(id.clone()))
                    })
                    .collect()
            })
            .collect()
    }

    /// Merges groups of `p` that share any key, transitively. Returns the
    /// report indices of each merged group.
    fn merge_sharing<F>(&self, p: &LevelPartition, key: F) -> Result<Vec<Vec<usize>>, GroupingError>
    where
        F: Fn(&TraceKeys) -> u32,
    {
        let members = self.members_of(p)?;
        let mut uf = UnionFind::new(members.len());
        let mut owner: HashMap<u32, usize> = HashMap::new();
        for (g, reports) in members.iter().enumerate() {
            for &r in reports {
                let k = key(&self.keys[r]);
                match owner.get(&k) {
                    Some(&o) => {
                        uf.union(o, g);
                    }
                    None => {
                        owner.insert(k, g);
                    }
                }
            }
        }
        Ok(uf
            .sets()
            .into_iter()
            .map(|set| set.into_iter().flat_map(|g| members[g].iter().copied()).collect())
            .collect())
    }

    fn least_member(&self, members: &[usize]) -> usize {
        *members
            .iter()
            .min_by(|&&a, &&b| {
                self.corpus.reports()[a]
                    .crash_id
                    .cmp(&self.corpus.reports()[b].crash_id)
            })
            .expect("group has members")
    }

    fn make_group(&self, level: u8, members: Vec<usize>, signature: Signature) -> CrashGroup {
        let reports = self.corpus.reports();
        let mut ids: Vec<String> = members.iter().map(|&i| reports[i].crash_id.clone()).collect();
        ids.sort_unstable();
        let first_seen = members.iter().map(|&i| reports[i].timestamp).min().expect("non-empty");
        let last_seen = members.iter().map(|&i| reports[i].timestamp).max().expect("non-empty");
        CrashGroup {
            id: GroupId::new(level, &ids[0]),
            level,
            signature,
            members: ids,
            first_seen,
            last_seen,
        }
    }
}

pub fn group_level1(corpus: &CrashCorpus) -> LevelPartition {
    Grouper::new(corpus, &NormalizationRules::empty()).level1()
}

pub fn group_level2(
    corpus: &CrashCorpus,
    p1: &LevelPartition,
    rules: &NormalizationRules,
) -> Result<LevelPartition, GroupingError> {
    Grouper::new(corpus, rules).level2(p1)
}

pub fn group_level3(
    corpus: &CrashCorpus,
    p2: &LevelPartition,
    rules: &NormalizationRules,
) -> Result<LevelPartition, GroupingError> {
    Grouper::new(corpus, rules).level3(p2)
}

pub fn group_level4(
    corpus: &CrashCorpus,
    p3: &LevelPartition,
    rules: &NormalizationRules,
) -> Result<LevelPartition, GroupingError> {
    Grouper::new(corpus, rules).level4(p3)
}

/// Runs levels `1..=level` and returns the last partition.
pub fn group(corpus: &CrashCorpus, level: u8, config: &AppConfig) -> Result<LevelPartition, GroupingError> {
    if !(1..=4).contains(&level) {
        return Err(GroupingError::InvalidLevel(level));
    }
    let mut levels = Grouper::new(corpus, &config.normalization_rules).levels(level)?;
    Ok(levels.pop().expect("at least level 1"))
}
