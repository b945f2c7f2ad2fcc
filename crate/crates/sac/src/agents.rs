//! Agent behavior: response generation, receiver-side scoring, and the
//! refinement policy, with a deterministic synthetic backend.
//!
//! Faulty and reliable agents share one code path and differ only in their
//! accuracy parameters. Adversarial agents bypass the honest operations
//! entirely and emit messages via [`adversarial_message`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::streams::{self, tag};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("operation requires an adversarial agent, got {0:?}")]
    NotAdversarial(Role),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("task {0:?} invalid: {1}")]
    InvalidTask(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reliable,
    Faulty,
    Adversarial,
}

impl Role {
    pub fn is_honest(self) -> bool {
        !matches!(self, Role::Adversarial)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    /// Fixed wrong answer per task, identical to all recipients, reported
    /// confidence pinned at 1.0.
    ReplayFalsified,
    /// Per-recipient wrong answers; different neighbors may receive
    /// different content. Confidence still 1.0.
    Inconsistent,
}

/// Score bands for judged-correct and judged-incorrect responses. The gap
/// between the bands keeps the two judgments linearly separable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBands {
    pub low: (f64, f64),
    pub high: (f64, f64),
}

impl Default for ScoreBands {
    fn default() -> Self {
        Self {
            low: (0.0, 0.3),
            high: (0.7, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub role: Role,
    pub answer_accuracy: f64,
    pub judge_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary_mode: Option<AdversaryMode>,
    #[serde(default)]
    pub bands: ScoreBands,
}

impl AgentSpec {
    pub fn validate(&self) -> Result<(), AgentError> {
        for p in [self.answer_accuracy, self.judge_accuracy] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AgentError::InvalidProbability(p));
            }
        }
        Ok(())
    }
}

/// Kind of task, controls the live adapter's prompt wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Math,
    Commonsense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub query_id: String,
    /// Natural-language problem statement; only required by the live
    /// endpoint adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub alphabet: Vec<String>,
    pub truth: String,
    #[serde(default)]
    pub kind: TaskKind,
}

impl Task {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.alphabet.len() < 2 {
            return Err(AgentError::InvalidTask(
                self.query_id.clone(),
                "alphabet must have at least 2 labels".into(),
            ));
        }
        if !self.alphabet.contains(&self.truth) {
            return Err(AgentError::InvalidTask(
                self.query_id.clone(),
                "truth not in alphabet".into(),
            ));
        }
        Ok(())
    }

    pub fn wrong_labels(&self) -> impl Iterator<Item = &String> {
        self.alphabet.iter().filter(move |l| **l != self.truth)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub answer: String,
    pub correct: bool,
}

impl Response {
    pub fn new(answer: impl Into<String>, task: &Task) -> Self {
        let answer = answer.into();
        let correct = answer == task.truth;
        Self { answer, correct }
    }
}

/// A retained neighbor entry fed into the refinement step.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedEntry {
    pub sender: usize,
    pub response: Response,
    pub score: f64,
}

fn uniform_wrong(task: &Task, rng: &mut ChaCha8Rng) -> Response {
    let wrong: Vec<&String> = task.wrong_labels().collect();
    let pick = wrong[rng.gen_range(0..wrong.len())];
    Response::new(pick.clone(), task)
}

/// Initial response: the truth with probability `answer_accuracy`, else a
/// uniform wrong label.
pub fn generate_initial(spec: &AgentSpec, task: &Task, rng: &mut ChaCha8Rng) -> Response {
    if rng.gen::<f64>() < spec.answer_accuracy {
        Response::new(task.truth.clone(), task)
    } else {
        uniform_wrong(task, rng)
    }
}

/// Receiver-side evaluation score. The judgment matches the response's
/// true correctness with probability `judge_accuracy` and is flipped
/// otherwise; the score is then drawn uniformly from the matching band.
/// Depends only on the scorer's own computation and the response content.
pub fn score(spec: &AgentSpec, _task: &Task, response: &Response, rng: &mut ChaCha8Rng) -> f64 {
    let judged_correct = if rng.gen::<f64>() < spec.judge_accuracy {
        response.correct
    } else {
        !response.correct
    };
    let (lo, hi) = if judged_correct {
        spec.bands.high
    } else {
        spec.bands.low
    };
    rng.gen_range(lo..=hi)
}

/// Synthetic refinement: adopt the best-scored retained response when it
/// strictly beats the own self-score, otherwise keep the current response.
/// Ties among retained entries break toward the lowest sender id. An empty
/// retained set skips refinement.
pub fn refine(
    _spec: &AgentSpec,
    _task: &Task,
    own: &Response,
    self_score: f64,
    retained: &[RetainedEntry],
    _rng: &mut ChaCha8Rng,
) -> Response {
    let best = retained.iter().fold(None::<&RetainedEntry>, |acc, e| match acc {
        None => Some(e),
        Some(b) if e.score > b.score || (e.score == b.score && e.sender < b.sender) => Some(e),
        Some(b) => Some(b),
    });
    match best {
        Some(b) if b.score > self_score => b.response.clone(),
        _ => own.clone(),
    }
}

/// The message an adversarial agent sends to `recipient` at `round`,
/// together with its falsified reported confidence (always 1.0). The
/// answer is always wrong; replay mode fixes it once per task, while
/// inconsistent mode varies it per recipient and round.
pub fn adversarial_message(
    spec: &AgentSpec,
    task: &Task,
    recipient: usize,
    round: usize,
    task_seed: u64,
) -> Result<(Response, f64), AgentError> {
    if spec.role != Role::Adversarial {
        return Err(AgentError::NotAdversarial(spec.role));
    }
    let mode = spec.adversary_mode.unwrap_or(AdversaryMode::ReplayFalsified);
    let mut rng = match mode {
        AdversaryMode::ReplayFalsified => {
            streams::derive(&[task_seed, tag::ADVERSARY, spec.id as u64])
        }
        AdversaryMode::Inconsistent => streams::derive(&[
            task_seed,
            tag::ADVERSARY,
            spec.id as u64,
            recipient as u64,
            round as u64,
        ]),
    };
    Ok((uniform_wrong(task, &mut rng), 1.0))
}

/// The answer the trace records as the adversary's own held response: the
/// per-task replay answer, independent of recipient and round.
pub fn adversary_canonical(spec: &AgentSpec, task: &Task, task_seed: u64) -> Response {
    let mut rng = streams::derive(&[task_seed, tag::ADVERSARY, spec.id as u64]);
    uniform_wrong(task, &mut rng)
}

/// Pluggable realization of the honest agent operations. The synthetic
/// backend is deterministic given the rng streams; a live-endpoint backend
/// may ignore them.
pub trait Backend {
    fn initial(&self, spec: &AgentSpec, task: &Task, rng: &mut ChaCha8Rng) -> Response;
    fn score(&self, spec: &AgentSpec, task: &Task, response: &Response, rng: &mut ChaCha8Rng)
        -> f64;
    fn refine(
        &self,
        spec: &AgentSpec,
        task: &Task,
        own: &Response,
        self_score: f64,
        retained: &[RetainedEntry],
        rng: &mut ChaCha8Rng,
    ) -> Response;
}

/// Deterministic parameterized backend used by the simulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Synthetic;

impl Backend for Synthetic {
    fn initial(&self, spec: &AgentSpec, task: &Task, rng: &mut ChaCha8Rng) -> Response {
        generate_initial(spec, task, rng)
    }

    fn score(
        &self,
        spec: &AgentSpec,
        task: &Task,
        response: &Response,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        score(spec, task, response, rng)
    }

    fn refine(
        &self,
        spec: &AgentSpec,
        task: &Task,
        own: &Response,
        self_score: f64,
        retained: &[RetainedEntry],
        rng: &mut ChaCha8Rng,
    ) -> Response {
        refine(spec, task, own, self_score, retained, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> Task {
        Task {
            query_id: "q0".into(),
            text: None,
            alphabet: vec!["A".into(), "B".into(), "C".into(), "D".into()],
            truth: "A".into(),
            kind: TaskKind::Math,
        }
    }

    fn spec(role: Role, answer: f64, judge: f64) -> AgentSpec {
        AgentSpec {
            id: 0,
            role,
            answer_accuracy: answer,
            judge_accuracy: judge,
            adversary_mode: if role == Role::Adversarial {
                Some(AdversaryMode::ReplayFalsified)
            } else {
                None
            },
            bands: ScoreBands::default(),
        }
    }

    fn rng(parts: &[u64]) -> ChaCha8Rng {
        streams::derive(parts)
    }

    #[test]
    fn perfect_accuracy_always_truth() {
        let t = task();
        let s = spec(Role::Reliable, 1.0, 1.0);
        for i in 0..50 {
            let r = generate_initial(&s, &t, &mut rng(&[i]));
            assert!(r.correct);
        }
    }

    #[test]
    fn zero_accuracy_binary_alphabet() {
        let t = Task {
            alphabet: vec!["A".into(), "B".into()],
            ..task()
        };
        let s = spec(Role::Faulty, 0.0, 1.0);
        for i in 0..50 {
            let r = generate_initial(&s, &t, &mut rng(&[i]));
            assert_eq!(r.answer, "B");
        }
    }

    #[test]
    fn initial_accuracy_monte_carlo() {
        let t = task();
        let s = spec(Role::Reliable, 0.84, 1.0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|&i| generate_initial(&s, &t, &mut rng(&[i])).correct)
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.84).abs() < 0.02, "empirical {}", frac);
    }

    #[test]
    fn score_bands_forced_at_perfect_judgment() {
        let t = task();
        let s = spec(Role::Reliable, 1.0, 1.0);
        let good = Response::new("A", &t);
        let bad = Response::new("B", &t);
        for i in 0..100 {
            let sc = score(&s, &t, &good, &mut rng(&[i]));
            assert!((0.7..=1.0).contains(&sc));
            let sc = score(&s, &t, &bad, &mut rng(&[i, 1]));
            assert!((0.0..=0.3).contains(&sc));
        }
    }

    #[test]
    fn judge_flip_rate_monte_carlo() {
        let t = task();
        let s = spec(Role::Reliable, 1.0, 0.8);
        let bad = Response::new("B", &t);
        let n = 10_000;
        let high = (0..n)
            .filter(|&i| score(&s, &t, &bad, &mut rng(&[i, 7])) >= 0.7)
            .count();
        let frac = high as f64 / n as f64;
        assert!((frac - 0.20).abs() < 0.02, "high-band fraction {}", frac);
    }

    #[test]
    fn score_bands_disjoint() {
        let b = ScoreBands::default();
        assert!(b.low.1 < b.high.0);
    }

    #[test]
    fn refine_rules() {
        let t = task();
        let s = spec(Role::Reliable, 1.0, 1.0);
        let own = Response::new("B", &t);
        let mut r = rng(&[0]);

        // empty retained: keep own
        assert_eq!(refine(&s, &t, &own, 0.2, &[], &mut r), own);

        // own self-score wins
        let retained = vec![RetainedEntry {
            sender: 3,
            response: Response::new("A", &t),
            score: 0.8,
        }];
        assert_eq!(refine(&s, &t, &own, 0.9, &retained, &mut r), own);

        // argmax adoption
        let retained = vec![
            RetainedEntry {
                sender: 2,
                response: Response::new("A", &t),
                score: 0.9,
            },
            RetainedEntry {
                sender: 1,
                response: Response::new("C", &t),
                score: 0.85,
            },
        ];
        let out = refine(&s, &t, &own, 0.2, &retained, &mut r);
        assert_eq!(out.answer, "A");

        // score tie: lowest sender id wins
        let retained = vec![
            RetainedEntry {
                sender: 5,
                response: Response::new("C", &t),
                score: 0.9,
            },
            RetainedEntry {
                sender: 2,
                response: Response::new("A", &t),
                score: 0.9,
            },
        ];
        let out = refine(&s, &t, &own, 0.2, &retained, &mut r);
        assert_eq!(out.answer, "A");
    }

    #[test]
    fn adversarial_replay_fixed_per_task() {
        let t = task();
        let s = AgentSpec { id: 6, ..spec(Role::Adversarial, 0.0, 0.0) };
        let (first, conf) = adversarial_message(&s, &t, 0, 0, 99).unwrap();
        assert_eq!(conf, 1.0);
        assert!(!first.correct);
        for recipient in 0..6 {
            for round in 0..4 {
                let (r, c) = adversarial_message(&s, &t, recipient, round, 99).unwrap();
                assert_eq!(r, first);
                assert_eq!(c, 1.0);
            }
        }
        assert_eq!(adversary_canonical(&s, &t, 99), first);
    }

    #[test]
    fn adversarial_inconsistent_never_truth() {
        let t = task();
        let s = AgentSpec {
            id: 6,
            adversary_mode: Some(AdversaryMode::Inconsistent),
            ..spec(Role::Adversarial, 0.0, 0.0)
        };
        let mut answers = std::collections::BTreeSet::new();
        for recipient in 0..6 {
            for round in 0..6 {
                let (r, c) = adversarial_message(&s, &t, recipient, round, 7).unwrap();
                assert!(!r.correct);
                assert_eq!(c, 1.0);
                answers.insert(r.answer);
            }
        }
        assert!(answers.len() > 1, "inconsistent mode should vary answers");
    }

    #[test]
    fn adversarial_message_rejects_honest() {
        let t = task();
        let s = spec(Role::Reliable, 1.0, 1.0);
        assert_eq!(
            adversarial_message(&s, &t, 0, 0, 0),
            Err(AgentError::NotAdversarial(Role::Reliable))
        );
    }

    #[test]
    fn score_ignores_reported_confidence() {
        // The scoring signature admits no confidence input at all; assert
        // the same response scores identically regardless of what the
        // sender claimed alongside it.
        let t = task();
        let s = spec(Role::Reliable, 1.0, 0.9);
        let resp = Response::new("B", &t);
        for i in 0..20 {
            let a = score(&s, &t, &resp, &mut rng(&[i, 5]));
            let b = score(&s, &t, &resp, &mut rng(&[i, 5]));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn determinism() {
        let t = task();
        let s = spec(Role::Faulty, 0.4, 0.6);
        for i in 0..10 {
            assert_eq!(
                generate_initial(&s, &t, &mut rng(&[i])),
                generate_initial(&s, &t, &mut rng(&[i]))
            );
        }
    }
}
