use std::collections::BTreeMap;

use crashlens_core::evaluation::{
    average_precision, mean_average_precision, recall_at_n, recurrence_table, GroundTruthTask, Rankings,
};
use crashlens_core::ranking::{FileRanking, FileScore};
use crashlens_core::GroupId;
use crashlens_testkit::fixtures::recurrence_fixture;
use crashlens_testkit::gen::rng;
use crashlens_testkit::oracle::{oracle_average_precision, oracle_recall};
use proptest::prelude::*;
use rand::seq::SliceRandom;

const FILES: [&str; 8] = ["a.F0", "a.F1", "a.F2", "a.F3", "a.F4", "a.F5", "a.F6", "a.F7"];

fn ranking(group: &str, files: &[String]) -> FileRanking {
    FileRanking {
        group_id: GroupId::from(group),
        entries: files
            .iter()
            .enumerate()
            .map(|(i, f)| FileScore {
                file: f.clone(),
                iad: 1.0,
                ibf: 1.0,
                ff: 1.0,
                score: 100.0 - i as f64,
            })
            .collect(),
        candidates_considered: files.len(),
    }
}

/// Per task: changed files and that task's ranked list.
fn task_set() -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
    let files = || prop::sample::subsequence(FILES.to_vec(), 0..=FILES.len()).prop_shuffle();
    prop::collection::vec(
        (prop::sample::subsequence(FILES.to_vec(), 1..=4), files()).prop_map(|(changed, ranked)| {
            (
                changed.into_iter().map(String::from).collect(),
                ranked.into_iter().map(String::from).collect(),
            )
        }),
        1..=20,
    )
}

fn build(set: &[(Vec<String>, Vec<String>)]) -> (Vec<GroundTruthTask>, Rankings) {
    let mut tasks = Vec::new();
    let mut rankings = Rankings::new();
    for (i, (changed, ranked)) in set.iter().enumerate() {
        let g = format!("G4-t{i:02}");
        tasks.push(GroundTruthTask {
            task_id: format!("T{i}"),
            group_id: GroupId::from(g.as_str()),
            changed_files: changed.clone(),
            changed_methods: Vec::new(),
            closed_at: None,
        });
        rankings.insert(GroupId::from(g.as_str()), ranking(&g, ranked));
    }
    (tasks, rankings)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn recall_never_drops_as_n_grows(set in task_set()) {
        let (tasks, rankings) = build(&set);
        let mut last = 0.0;
        for n in 1..=10 {
            let r = recall_at_n(&tasks, &rankings, n).unwrap();
            prop_assert!(r >= last && (0.0..=1.0).contains(&r));
            last = r;
        }
    }

    #[test]
    fn metrics_match_exhaustive_recomputation(set in task_set(), n in 1usize..=8) {
        let (tasks, rankings) = build(&set);
        prop_assert!((recall_at_n(&tasks, &rankings, n).unwrap() - oracle_recall(&set, n)).abs() < 1e-12);
        let mut ap_sum = 0.0;
        for (task, (changed, ranked)) in tasks.iter().zip(&set) {
            let expected = oracle_average_precision(changed, ranked, n);
            let got = average_precision(task, &rankings[&task.group_id], n);
            prop_assert!((got - expected).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&got));
            ap_sum += expected;
        }
        let map = mean_average_precision(&tasks, &rankings, n).unwrap();
        prop_assert!((map - ap_sum / set.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn task_order_is_irrelevant(set in task_set(), seed in any::<u64>(), n in 1usize..=8) {
        let (tasks, rankings) = build(&set);
        let mut shuffled = tasks.clone();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(recall_at_n(&tasks, &rankings, n).unwrap(), recall_at_n(&shuffled, &rankings, n).unwrap());
        let a = mean_average_precision(&tasks, &rankings, n).unwrap();
        let b = mean_average_precision(&shuffled, &rankings, n).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn perfect_prefix_gives_full_precision(k in 1usize..=8, n in 1usize..=8) {
        let changed: Vec<String> = FILES[..k].iter().map(|s| s.to_string()).collect();
        let ranked: Vec<String> = FILES.iter().map(|s| s.to_string()).collect();
        let (tasks, rankings) = build(&[(changed, ranked)]);
        prop_assert_eq!(average_precision(&tasks[0], &rankings[&tasks[0].group_id], n), 1.0);
    }
}

fn recurrence(recurring: usize) -> (BTreeMap<String, bool>, BTreeMap<String, bool>) {
    let fx = recurrence_fixture(recurring);
    (
        recurrence_table(&fx.tasks, &fx.post, &fx.partition, &fx.config),
        fx.expected,
    )
}

#[test]
fn recurrence_split_of_fifty_tasks() {
    let (table, expected) = recurrence(16);
    assert_eq!(table, expected);
    assert_eq!(table.values().filter(|v| !**v).count(), 34);
    assert_eq!(table.values().filter(|v| **v).count(), 16);
}

#[test]
fn no_post_closure_reports_means_no_recurrence() {
    let (table, _) = recurrence(0);
    assert!(table.values().all(|v| !v));
}

#[test]
fn single_recurring_trace_flags_one_task() {
    let (table, expected) = recurrence(1);
    assert_eq!(table.values().filter(|v| **v).count(), 1);
    assert_eq!(table, expected);
}

#[test]
fn tasks_without_close_date_see_the_whole_corpus() {
    let mut fx = recurrence_fixture(0);
    for t in &mut fx.tasks {
        t.closed_at = None;
    }
    let table = recurrence_table(&fx.tasks, &fx.post, &fx.partition, &fx.config);
    assert!(table.values().all(|v| *v));
}
