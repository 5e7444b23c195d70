//! Hand-built fixtures for ranking and recurrence tests.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::Duration;
use crashlens_core::evaluation::GroundTruthTask;
use crashlens_core::{
    group, parse_stack_trace, AppConfig, CrashCorpus, CrashGroup, CrashReport, GroupId, LevelPartition, Signature,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::gen::{generate, rng, start_instant, Shape};

pub const APP_PREFIX: &str = "com.acme";

/// A corpus with an arbitrary partition of its reports.
#[derive(Debug, Clone)]
pub struct RankFixture {
    pub corpus: CrashCorpus,
    pub partition: LevelPartition,
    pub config: AppConfig,
}

/// Builds groups from `(crash_id, group index)` pairs.
pub fn partition_from(corpus: &CrashCorpus, assignment: &[(String, usize)]) -> LevelPartition {
    let group_count = assignment.iter().map(|(_, g)| g + 1).max().unwrap_or(0);
    let mut groups = Vec::new();
    for g in 0..group_count {
        let mut members: Vec<String> = assignment
            .iter()
            .filter(|(_, x)| *x == g)
            .map(|(id, _)| id.clone())
            .collect();
        if members.is_empty() {
            continue;
        }
        members.sort();
        let times: Vec<_> = members
            .iter()
            .map(|id| corpus.get(id).expect("member").timestamp)
            .collect();
        groups.push(CrashGroup {
            id: GroupId(format!("G4-{}", members[0])),
            level: 4,
            signature: Signature::TopFrameFiles(BTreeSet::new()),
            first_seen: *times.iter().min().expect("non-empty"),
            last_seen: *times.iter().max().expect("non-empty"),
            members,
        });
    }
    LevelPartition::new(4, groups)
}

fn file_pool(files: usize) -> Vec<String> {
    (0..files)
        .map(|i| {
            if i % 4 == 3 {
                format!("org.lib.L{i}")
            } else {
                format!("{APP_PREFIX}.p{}.F{i}", i % 3)
            }
        })
        .collect()
}

fn frame_line(rng: &mut ChaCha8Rng, file: &str) -> String {
    let simple = file.rsplit('.').next().expect("class");
    let method = format!("m{}", rng.gen_range(0..4));
    let class = if rng.gen_bool(0.1) {
        format!("{file}$Inner")
    } else {
        file.to_owned()
    };
    match rng.gen_range(0..12) {
        0 => format!("\tat {class}.{method}(Unknown Source)"),
        1 => format!("\tat {class}.{method}(Native Method)"),
        _ => format!("\tat {class}.{method}({simple}.java:{})", rng.gen_range(1..500)),
    }
}

fn random_trace(rng: &mut ChaCha8Rng, pool: &[String], forced_top: Option<&str>) -> String {
    let depth = rng.gen_range(1..=8);
    let mut lines = vec!["java.lang.RuntimeException: boom".to_owned()];
    if let Some(top) = forced_top {
        let simple = top.rsplit('.').next().expect("class");
        lines.push(format!("\tat {top}.fail({simple}.java:{})", rng.gen_range(1..99)));
    }
    for _ in 0..depth {
        let file = pool.choose(rng).expect("non-empty pool");
        lines.push(frame_line(rng, file));
    }
    lines.join("\n")
}

fn reports_from(rng: &mut ChaCha8Rng, traces: Vec<String>) -> CrashCorpus {
    let start = start_instant();
    let reports = traces
        .into_iter()
        .enumerate()
        .map(|(i, t)| CrashReport {
            crash_id: format!("r{i:03}"),
            timestamp: start + Duration::minutes(rng.gen_range(0..10_000)),
            uri: format!("/page{}.jsf", rng.gen_range(0..4)),
            user: Some(format!("u{}", rng.gen_range(0..6))),
            session_id: None,
            trace: Arc::new(parse_stack_trace(&t).expect("fixture trace parses")),
        })
        .collect();
    CrashCorpus::from_reports(reports, None).expect("unique ids")
}

/// Up to `max_traces` reports over up to `max_files` files, split into a
/// few random groups.
pub fn random_rank_fixture(rng: &mut ChaCha8Rng, max_traces: usize, max_files: usize) -> RankFixture {
    let files = rng.gen_range(2..=max_files);
    let pool = file_pool(files);
    let n = rng.gen_range(1..=max_traces);
    let traces: Vec<String> = (0..n).map(|_| random_trace(rng, &pool, None)).collect();
    let corpus = reports_from(rng, traces);
    let groups = rng.gen_range(1..=6.min(n));
    let assignment: Vec<(String, usize)> = corpus
        .reports()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.crash_id.clone(),
                if i < groups { i } else { rng.gen_range(0..groups) },
            )
        })
        .collect();
    let partition = partition_from(&corpus, &assignment);
    let mut config = AppConfig::with_prefixes([APP_PREFIX]);
    config.top_n_files = rng.gen_range(1..=8);
    RankFixture {
        corpus,
        partition,
        config,
    }
}

/// A fixture whose group 0 crashes in `com.acme.crash.Signaler` in every
/// trace; no other group mentions that file. Returns the fixture and the
/// id of that group.
pub fn dominance_fixture(rng: &mut ChaCha8Rng) -> (RankFixture, GroupId, String) {
    let signaler = format!("{APP_PREFIX}.crash.Signaler");
    let pool = file_pool(rng.gen_range(2..=20));
    let own = rng.gen_range(1..=20);
    let others = rng.gen_range(0..=30);
    let mut traces = Vec::new();
    for _ in 0..own {
        traces.push(random_trace(rng, &pool, Some(&signaler)));
    }
    for _ in 0..others {
        traces.push(random_trace(rng, &pool, None));
    }
    let corpus = reports_from(rng, traces);
    let groups = rng.gen_range(1..=5);
    let assignment: Vec<(String, usize)> = corpus
        .reports()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.crash_id.clone(),
                if i < own { 0 } else { 1 + rng.gen_range(0..groups) },
            )
        })
        .collect();
    let partition = partition_from(&corpus, &assignment);
    let id = GroupId(format!("G4-{}", corpus.reports()[0].crash_id));
    let mut config = AppConfig::with_prefixes([APP_PREFIX]);
    config.top_n_files = 20;
    (
        RankFixture {
            corpus,
            partition,
            config,
        },
        id,
        signaler,
    )
}

/// Closed tasks plus the crash reports that arrived around their closure.
#[derive(Debug, Clone)]
pub struct RecurrenceFixture {
    pub tasks: Vec<GroundTruthTask>,
    pub post: CrashCorpus,
    pub partition: LevelPartition,
    pub config: AppConfig,
    /// Task id to whether a matching report was planted after closure.
    pub expected: BTreeMap<String, bool>,
}

/// 50 closed tasks over 50 level-4 groups; `recurring` of them (chosen by
/// a seeded shuffle) get a matching report after closure. Every task also
/// gets a matching report shortly before closure, and one unrelated report
/// follows the closures.
pub fn recurrence_fixture(recurring: usize) -> RecurrenceFixture {
    let config = AppConfig::with_prefixes([APP_PREFIX]);
    let corpus = generate(Shape::planted(50, 120, 400), 2024).corpus();
    let partition = group(&corpus, 4, &config).expect("valid level");
    assert_eq!(partition.len(), 50);

    let closed_at = start_instant() + Duration::days(20);
    let mut order: Vec<usize> = (0..partition.len()).collect();
    order.shuffle(&mut rng(8));
    let mut recurs = vec![false; partition.len()];
    for &i in &order[..recurring] {
        recurs[i] = true;
    }

    let mut tasks = Vec::new();
    let mut post = Vec::new();
    let mut expected = BTreeMap::new();
    for (i, g) in partition.groups.iter().enumerate() {
        let task_id = format!("TASK-{i:02}");
        tasks.push(GroundTruthTask {
            task_id: task_id.clone(),
            group_id: g.id.clone(),
            changed_files: vec![format!("{APP_PREFIX}.X")],
            changed_methods: Vec::new(),
            closed_at: Some(closed_at),
        });
        expected.insert(task_id, recurs[i]);
        let member = corpus.get(&g.members[g.members.len() - 1]).expect("member");
        post.push(CrashReport {
            crash_id: format!("pre-{i:02}"),
            timestamp: closed_at - Duration::hours(1),
            ..member.clone()
        });
        if recurs[i] {
            post.push(CrashReport {
                crash_id: format!("post-{i:02}"),
                timestamp: closed_at + Duration::days(1 + i as i64 % 5),
                ..member.clone()
            });
        }
    }
    post.push(CrashReport {
        crash_id: "unrelated".into(),
        timestamp: closed_at + Duration::days(2),
        uri: "/x".into(),
        user: None,
        session_id: None,
        trace: Arc::new(
            parse_stack_trace("java.lang.Error\n\tat com.other.Unrelated.run(Unrelated.java:1)").expect("parses"),
        ),
    });
    RecurrenceFixture {
        tasks,
        post: CrashCorpus::from_reports(post, None).expect("unique ids"),
        partition,
        config,
        expected,
    }
}
