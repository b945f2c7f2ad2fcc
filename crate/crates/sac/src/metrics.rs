//! Evaluation metrics computed from trace lists.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::RoundTrace;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("task {0} has no traces")]
    EmptyTask(usize),
    #[error("tasks disagree on round count ({0} vs {1})")]
    RoundMismatch(usize, usize),
    #[error("no tasks")]
    NoTasks,
}

/// Trace list for a single task, tagged with its index in the task list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTraces {
    pub task_index: usize,
    pub traces: Vec<RoundTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub majority_correct: bool,
    pub honest_majority_correct: bool,
}

/// Aggregated report over a set of tasks.
///
/// `iaa`/`faa` average per-agent correctness over all agents at the first
/// and last round; `bfti = faa - iaa` exactly. `ra` and `h_majority` are
/// final-round majority-vote accuracies over all agents and over honest
/// agents respectively. The honest-only accuracy variants are
/// supplementary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iaa: f64,
    pub faa: f64,
    pub bfti: f64,
    pub ra: f64,
    pub h_majority: f64,
    pub weak_series: Vec<f64>,
    pub strong_series: Vec<f64>,
    pub iaa_honest: f64,
    pub faa_honest: f64,
    pub per_task: BTreeMap<usize, TaskRecord>,
}

/// The unique most-frequent label, or none on an empty input or a tied
/// plurality. A tie deliberately counts as "no majority" so vote-based
/// accuracies are never inflated.
pub fn majority_vote<S: AsRef<str>>(answers: &[S]) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a.as_ref()).or_insert(0) += 1;
    }
    let best = counts.values().copied().max()?;
    let winners: Vec<&str> = counts
        .iter()
        .filter(|(_, &c)| c == best)
        .map(|(&a, _)| a)
        .collect();
    if winners.len() == 1 {
        Some(winners[0].to_string())
    } else {
        None
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Compute the full report. `weak_set`/`strong_set` partition the honest
/// agents into their capability groups; `honest_set` is everything that is
/// not adversarial.
pub fn compute_report(
    tasks: &[TaskTraces],
    honest_set: &BTreeSet<usize>,
    weak_set: &BTreeSet<usize>,
    strong_set: &BTreeSet<usize>,
) -> Result<MetricsReport, MetricsError> {
    if tasks.is_empty() {
        return Err(MetricsError::NoTasks);
    }
    let rounds = tasks[0].traces.len();
    for t in tasks {
        if t.traces.is_empty() {
            return Err(MetricsError::EmptyTask(t.task_index));
        }
        if t.traces.len() != rounds {
            return Err(MetricsError::RoundMismatch(rounds, t.traces.len()));
        }
    }

    let accuracy_at = |round: usize, filter: Option<&BTreeSet<usize>>| -> f64 {
        mean(tasks.iter().flat_map(|t| {
            t.traces[round]
                .agents
                .iter()
                .filter(move |(id, _)| filter.map_or(true, |s| s.contains(id)))
                .map(|(_, rec)| if rec.post_correct { 1.0 } else { 0.0 })
        }))
    };

    let last = rounds - 1;
    let iaa = accuracy_at(0, None);
    let faa = accuracy_at(last, None);
    let iaa_honest = accuracy_at(0, Some(honest_set));
    let faa_honest = accuracy_at(last, Some(honest_set));

    let weak_series: Vec<f64> = (0..rounds).map(|r| accuracy_at(r, Some(weak_set))).collect();
    let strong_series: Vec<f64> = (0..rounds)
        .map(|r| accuracy_at(r, Some(strong_set)))
        .collect();

    let mut per_task = BTreeMap::new();
    for t in tasks {
        let final_trace = &t.traces[last];
        let vote_correct = |filter: Option<&BTreeSet<usize>>| -> bool {
            let answers: Vec<&String> = final_trace
                .agents
                .iter()
                .filter(|(id, _)| filter.map_or(true, |s| s.contains(id)))
                .map(|(_, rec)| &rec.post_answer)
                .collect();
            match majority_vote(&answers.iter().map(|s| s.as_str()).collect::<Vec<_>>()) {
                None => false,
                Some(winner) => final_trace
                    .agents
                    .values()
                    .any(|rec| rec.post_answer == winner && rec.post_correct),
            }
        };
        per_task.insert(
            t.task_index,
            TaskRecord {
                majority_correct: vote_correct(None),
                honest_majority_correct: vote_correct(Some(honest_set)),
            },
        );
    }
    let ra = mean(
        per_task
            .values()
            .map(|r| if r.majority_correct { 1.0 } else { 0.0 }),
    );
    let h_majority = mean(
        per_task
            .values()
            .map(|r| if r.honest_majority_correct { 1.0 } else { 0.0 }),
    );

    Ok(MetricsReport {
        iaa,
        faa,
        bfti: faa - iaa,
        ra,
        h_majority,
        weak_series,
        strong_series,
        iaa_honest,
        faa_honest,
        per_task,
    })
}

/// Column header matching [`report_row`].
pub fn report_header() -> &'static str {
    "method,topology,seed,iaa,faa,bfti,ra,w_iaa_faa,s_iaa_faa,h_majority"
}

/// One comma-separated row per (method, topology, seed).
pub fn report_row(method: &str, topology: &str, seed: u64, report: &MetricsReport) -> String {
    let series_pair = |series: &[f64]| -> String {
        match (series.first(), series.last()) {
            (Some(a), Some(b)) => format!("{:.4}->{:.4}", a, b),
            _ => "-".into(),
        }
    };
    format!(
        "{},{},{},{:.4},{:.4},{:+.4},{:.4},{},{},{:.4}",
        method,
        topology,
        seed,
        report.iaa,
        report.faa,
        report.bfti,
        report.ra,
        series_pair(&report.weak_series),
        series_pair(&report.strong_series),
        report.h_majority
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Role;
    use crate::protocol::AgentRound;

    #[test]
    fn majority_vote_rules() {
        assert_eq!(majority_vote(&["A", "A", "B"]), Some("A".into()));
        assert_eq!(majority_vote(&["A", "B"]), None);
        assert_eq!(majority_vote::<&str>(&[]), None);
    }

    fn rec(role: Role, answer: &str, correct: bool) -> AgentRound {
        AgentRound {
            role,
            pre_answer: answer.into(),
            pre_correct: correct,
            post_answer: answer.into(),
            post_correct: correct,
            self_score: None,
            neighbor_scores: BTreeMap::new(),
            low: Vec::new(),
            dropped: BTreeSet::new(),
            retained: BTreeSet::new(),
            received_confidences: BTreeMap::new(),
        }
    }

    fn single_round_task(records: Vec<(usize, AgentRound)>) -> TaskTraces {
        TaskTraces {
            task_index: 0,
            traces: vec![RoundTrace {
                round: 0,
                agents: records.into_iter().collect(),
            }],
        }
    }

    #[test]
    fn all_correct_degenerate() {
        let records: Vec<(usize, AgentRound)> = (0..4)
            .map(|i| (i, rec(Role::Reliable, "A", true)))
            .collect();
        let task = single_round_task(records);
        let honest: BTreeSet<usize> = (0..4).collect();
        let report = compute_report(&[task], &honest, &BTreeSet::new(), &honest).unwrap();
        assert_eq!(report.iaa, 1.0);
        assert_eq!(report.faa, 1.0);
        assert_eq!(report.bfti, 0.0);
        assert_eq!(report.ra, 1.0);
        assert_eq!(report.h_majority, 1.0);
    }

    #[test]
    fn bfti_identity() {
        // 7 agents, 3 correct at round 0 vs mixed later would need rounds;
        // here just assert the identity holds to full precision
        let records: Vec<(usize, AgentRound)> = (0..7)
            .map(|i| (i, rec(Role::Reliable, if i < 3 { "A" } else { "B" }, i < 3)))
            .collect();
        let task = single_round_task(records);
        let honest: BTreeSet<usize> = (0..7).collect();
        let report = compute_report(&[task], &honest, &BTreeSet::new(), &honest).unwrap();
        assert_eq!(report.bfti, report.faa - report.iaa);
    }

    #[test]
    fn tied_honest_vote_counts_incorrect() {
        // 7 agents: 3 truth, 4 wrong; the 4 wrong are 1 adversary + 3 honest
        let mut records = Vec::new();
        for i in 0..3 {
            records.push((i, rec(Role::Reliable, "A", true)));
        }
        for i in 3..6 {
            records.push((i, rec(Role::Faulty, "w", false)));
        }
        records.push((6, rec(Role::Adversarial, "w", false)));
        let task = single_round_task(records);
        let honest: BTreeSet<usize> = (0..6).collect();
        let strong: BTreeSet<usize> = (0..3).collect();
        let weak: BTreeSet<usize> = (3..6).collect();
        let report = compute_report(&[task], &honest, &weak, &strong).unwrap();
        // all-agent vote: w wins 4-3, wrong
        assert_eq!(report.ra, 0.0);
        // honest-only vote: 3-3 tie, counts incorrect
        assert_eq!(report.h_majority, 0.0);
    }

    #[test]
    fn table_style_bfti_value() {
        // 0.624 - 0.548 = +0.076 must survive the report arithmetic
        let report = MetricsReport {
            iaa: 0.548,
            faa: 0.624,
            bfti: 0.624 - 0.548,
            ra: 0.9,
            h_majority: 0.967,
            weak_series: vec![],
            strong_series: vec![],
            iaa_honest: 0.0,
            faa_honest: 0.0,
            per_task: BTreeMap::new(),
        };
        assert!((report.bfti - 0.076).abs() < 1e-12);
        let row = report_row("sac", "merg", 0, &report);
        assert!(row.contains("+0.0760"), "row: {}", row);
    }

    #[test]
    fn errors() {
        assert_eq!(
            compute_report(&[], &BTreeSet::new(), &BTreeSet::new(), &BTreeSet::new()),
            Err(MetricsError::NoTasks)
        );
    }
}
