//! Brute-force reference implementations. They share no code with the
//! library beyond reading the parsed frames of each trace.

use std::collections::{BTreeMap, BTreeSet};

use crashlens_core::ranking::FileRanking;
use crashlens_core::{AppConfig, CrashCorpus, LevelPartition, StackTrace};

/// One frame as plain strings: `package.Class.method`, file, line.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PlainFrame {
    method_path: String,
    package: String,
    class: String,
    file: String,
    line: Option<u32>,
}

fn plain_frames(trace: &StackTrace) -> Vec<PlainFrame> {
    trace
        .frames
        .iter()
        .map(|f| {
            let q = &f.qualified_method;
            PlainFrame {
                method_path: format!("{}.{}.{}", q.package, q.class, q.method),
                package: q.package.clone(),
                class: q.class.clone(),
                file: f.file_name.clone(),
                line: f.line,
            }
        })
        .collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Replaces the digits after `Generated…Accessor` and `$Proxy` with `#`.
pub fn mask_generated(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let rest: String = chars[i..].iter().collect();
        let digits_after = |from: usize| chars[from..].iter().take_while(|c| c.is_ascii_digit()).count();
        if rest.starts_with("$Proxy") {
            let d = digits_after(i + 6);
            if d > 0 {
                out.push_str("$Proxy#");
                i += 6 + d;
                continue;
            }
        }
        if rest.starts_with("Accessor") {
            let d = digits_after(i + 8);
            // Walk back over the current word looking for "Generated".
            let mut j = i;
            while j > 0 && is_word(chars[j - 1]) {
                j -= 1;
            }
            let word_prefix: String = chars[j..i].iter().collect();
            if d > 0 && word_prefix.contains("Generated") {
                out.push_str("Accessor#");
                i += 8 + d;
                continue;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}

fn file_of(package: &str, class: &str) -> String {
    let top = match class.find('$') {
        Some(0) | None => class,
        Some(i) => &class[..i],
    };
    format!("{package}.{top}")
}

/// `package.Class` of a `package.Class.method` path.
fn file_of_path(path: &str) -> String {
    let (owner, _) = path.rsplit_once('.').expect("method path");
    let (package, class) = owner.rsplit_once('.').expect("class path");
    file_of(package, class)
}

struct OracleKeys {
    exception: String,
    raw: Vec<(String, String, Option<u32>)>,
    masked: Vec<(String, String, Option<u32>)>,
    methods: Vec<String>,
    crash_file: String,
}

fn keys(trace: &StackTrace) -> OracleKeys {
    let frames = plain_frames(trace);
    let raw: Vec<_> = frames
        .iter()
        .map(|f| (f.method_path.clone(), f.file.clone(), f.line))
        .collect();
    let masked: Vec<_> = frames
        .iter()
        .map(|f| (mask_generated(&f.method_path), mask_generated(&f.file), f.line))
        .collect();
    let methods: Vec<String> = masked.iter().map(|(m, _, _)| m.clone()).collect();
    let crash_file = file_of_path(&methods[0]);
    OracleKeys {
        exception: trace.exception_type.clone(),
        raw,
        masked,
        methods,
        crash_file,
    }
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() {
        return true;
    }
    if needle.len() > haystack.len() {
        return false;
    }
    (0..=haystack.len() - needle.len()).any(|start| (0..needle.len()).all(|k| haystack[start + k] == needle[k]))
}

fn related(a: &OracleKeys, b: &OracleKeys, level: u8) -> bool {
    let l1 = a.exception == b.exception && a.raw == b.raw;
    let l2 = a.exception == b.exception && a.masked == b.masked;
    let l3 = contains_run(&a.methods, &b.methods) || contains_run(&b.methods, &a.methods);
    let l4 = a.crash_file == b.crash_file;
    match level {
        1 => l1,
        2 => l1 || l2,
        3 => l1 || l2 || l3,
        _ => l1 || l2 || l3 || l4,
    }
}

/// Connected components of the pairwise relation, as sorted crash-id
/// lists ordered by their first id.
pub fn oracle_partition(corpus: &CrashCorpus, level: u8) -> Vec<Vec<String>> {
    let reports = corpus.reports();
    let n = reports.len();
    let k: Vec<OracleKeys> = reports.iter().map(|r| keys(&r.trace)).collect();
    let mut adjacent = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            adjacent[i][j] = i == j || related(&k[i], &k[j], level);
        }
    }
    let mut component = vec![usize::MAX; n];
    let mut out: Vec<Vec<String>> = Vec::new();
    for seed in 0..n {
        if component[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![seed];
        component[seed] = id;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(reports[i].crash_id.clone());
            for j in 0..n {
                if adjacent[i][j] && component[j] == usize::MAX {
                    component[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort();
        out.push(members);
    }
    out.sort();
    out
}

/// The library partition in the same shape as [`oracle_partition`].
pub fn member_sets(partition: &LevelPartition) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = partition.groups.iter().map(|g| g.members.clone()).collect();
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub file: String,
    pub iad: f64,
    pub ibf: f64,
    pub ff: f64,
    pub score: f64,
    pub mean_distance: f64,
}

fn prefix_matches(prefixes: &[String], name: &str) -> bool {
    prefixes.iter().any(|p| {
        let p = p.trim().trim_end_matches('.');
        !p.is_empty() && (name == p || name.starts_with(&format!("{p}.")))
    })
}

fn lowest_position(trace: &StackTrace, file: &str) -> Option<usize> {
    let frames = plain_frames(trace);
    (0..frames.len()).find(|&i| file_of(&frames[i].package, &frames[i].class) == file)
}

/// File ranking for `members`, straight from the definitions.
pub fn oracle_rank(
    members: &[String],
    partition: &LevelPartition,
    corpus: &CrashCorpus,
    config: &AppConfig,
) -> Vec<OracleScore> {
    let traces: Vec<&StackTrace> = members
        .iter()
        .map(|id| corpus.get(id).expect("member").trace.as_ref())
        .collect();

    let mut candidates: BTreeSet<String> = BTreeSet::new();
    let mut with_source: BTreeSet<String> = BTreeSet::new();
    for t in &traces {
        for f in plain_frames(t) {
            let file = file_of(&f.package, &f.class);
            if f.file.ends_with(".java") {
                with_source.insert(file.clone());
            }
            candidates.insert(file);
        }
    }

    let group_count = partition.groups.len() as f64;
    let mut out = Vec::new();
    for file in candidates {
        if !with_source.contains(&file) || !prefix_matches(&config.app_package_prefixes, &file) {
            continue;
        }
        let mut present = 0usize;
        let mut distance_sum = 0usize;
        for t in &traces {
            if let Some(p) = lowest_position(t, &file) {
                present += 1;
                distance_sum += p + 1;
            }
        }
        let mut groups_with_file = 0usize;
        for g in &partition.groups {
            if g.members
                .iter()
                .any(|id| lowest_position(&corpus.get(id).expect("member").trace, &file).is_some())
            {
                groups_with_file += 1;
            }
        }
        let ff = present as f64 / traces.len() as f64;
        let iad = present as f64 / distance_sum as f64;
        let ibf = (1.0 + group_count / groups_with_file as f64).ln();
        out.push(OracleScore {
            file,
            iad,
            ibf,
            ff,
            score: iad * ibf * ff,
            mean_distance: distance_sum as f64 / present as f64,
        });
    }
    // Selection sort keeps the ordering logic visibly separate.
    let mut sorted = Vec::new();
    while !out.is_empty() {
        let mut best = 0;
        for i in 1..out.len() {
            let (a, b) = (&out[i], &out[best]);
            let better = a.score > b.score
                || (a.score == b.score && a.mean_distance < b.mean_distance)
                || (a.score == b.score && a.mean_distance == b.mean_distance && a.file < b.file);
            if better {
                best = i;
            }
        }
        sorted.push(out.remove(best));
    }
    sorted.truncate(config.top_n_files);
    sorted
}

/// Compares a library ranking with the oracle: same files in the same
/// order and every factor within `tol`.
pub fn ranking_agrees(lib: &FileRanking, oracle: &[OracleScore], tol: f64) -> Result<(), String> {
    let lib_files: Vec<&str> = lib.entries.iter().map(|e| e.file.as_str()).collect();
    let oracle_files: Vec<&str> = oracle.iter().map(|e| e.file.as_str()).collect();
    if lib_files != oracle_files {
        return Err(format!("order differs: {lib_files:?} vs {oracle_files:?}"));
    }
    for (l, o) in lib.entries.iter().zip(oracle) {
        for (name, a, b) in [
            ("score", l.score, o.score),
            ("iad", l.iad, o.iad),
            ("ibf", l.ibf, o.ibf),
            ("ff", l.ff, o.ff),
        ] {
            if (a - b).abs() >= tol {
                return Err(format!("{name} of {} differs: {a} vs {b}", l.file));
            }
        }
    }
    Ok(())
}

/// Recall@n by enumerating each task's top-n list.
pub fn oracle_recall(truth: &[(Vec<String>, Vec<String>)], n: usize) -> f64 {
    let mut hits = 0;
    for (changed, ranked) in truth {
        let top: Vec<&String> = ranked.iter().take(n).collect();
        if changed.iter().any(|c| top.contains(&c)) {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

/// AP@n from an explicit precision-at-k table.
pub fn oracle_average_precision(changed: &[String], ranked: &[String], n: usize) -> f64 {
    let relevant: BTreeSet<&String> = changed.iter().collect();
    let mut precision_at = BTreeMap::new();
    for k in 1..=n.min(ranked.len()) {
        let hits = ranked[..k].iter().filter(|f| relevant.contains(f)).count();
        precision_at.insert(k, hits as f64 / k as f64);
    }
    let mut total = 0.0;
    for k in 1..=n.min(ranked.len()) {
        if relevant.contains(&ranked[k - 1]) {
            total += precision_at[&k];
        }
    }
    let denom = relevant.len().min(n);
    if denom == 0 {
        0.0
    } else {
        total / denom as f64
    }
}
