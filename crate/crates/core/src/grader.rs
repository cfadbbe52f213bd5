//! Judges agent answers against ground truth and classifies failures.
//!
//! Three match modes: normalized exact comparison, label containment for
//! triage scenarios, and a yes/no judge model. The judge prompt is an
//! original asset of this project (`assets/judge_prompt.txt`); deterministic
//! modes exist so CI never depends on a paid judge.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Outcome, RunTranscript};
use crate::llm::{ChatBackend, ChatMessage, GatewayError, ToolName};
use crate::scenario::{GroundTruth, MatchMode, Question, Scenario};
use crate::triage::TriageLabel;

/// Judge prompt revision.
pub const JUDGE_PROMPT_VERSION: &str = "v1";

const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../assets/judge_prompt.txt");

const JUDGE_SYSTEM_PROMPT: &str =
    "You are a strict grader for incident-analysis answers. Reply with exactly yes or no.";

/// The three terminal failure modes of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureMode {
    GiveUp,
    WrongAnswer,
    RoundExceed,
}

/// Root causes behind a failure. The loop and command heuristics fire
/// automatically; hallucination and shallow investigation have no reliable
/// automatic signal and come only from an operator annotation file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureCause {
    WrongCommands,
    InfiniteLoop,
    Hallucination,
    ShallowInvestigation,
    QuestionDependency,
}

/// Per-question grading outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub scenario_id: String,
    pub question_id: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_cause: Option<FailureCause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_rationale: Option<String>,
    pub steps_used: usize,
}

#[derive(Debug, Error)]
pub enum GraderError {
    #[error("JudgeLLM grading requires a judge backend")]
    JudgeUnavailable,
    #[error("label answer is ambiguous (contains both labels or neither): {answer:?}")]
    AmbiguousLabel { answer: String },
    #[error("judge reply could not be read as yes or no: {content:?}")]
    JudgeUnparseable { content: String },
    #[error("judge backend failed: {0}")]
    JudgeFailed(#[from] GatewayError),
}

/// Case-folds, trims, and strips surrounding punctuation.
pub fn normalize(text: &str) -> String {
    text.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn normalized_exact(answer: &str, ground_truth: &GroundTruth) -> bool {
    let normalized = normalize(answer);
    if normalized == normalize(&ground_truth.canonical_answer) {
        return true;
    }
    ground_truth
        .accepted_aliases
        .iter()
        .any(|alias| normalize(alias) == normalized)
}

/// Label containment: the answer must name exactly one of the two triage
/// labels, in any casing or spacing.
fn label_match(answer: &str, ground_truth: &GroundTruth) -> Result<bool, GraderError> {
    let squashed: String = answer
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect();
    let has_tp = squashed.contains("truepositive");
    let has_fp = squashed.contains("falsepositive");
    let answered = match (has_tp, has_fp) {
        (true, false) => TriageLabel::TruePositive,
        (false, true) => TriageLabel::FalsePositive,
        _ => {
            return Err(GraderError::AmbiguousLabel {
                answer: answer.to_string(),
            })
        }
    };
    let expected = TriageLabel::parse(&ground_truth.canonical_answer).ok_or_else(|| {
        GraderError::AmbiguousLabel {
            answer: ground_truth.canonical_answer.clone(),
        }
    })?;
    Ok(answered == expected)
}

fn judge_match(
    question_prompt: &str,
    answer: &str,
    ground_truth: &GroundTruth,
    judge: Option<&dyn ChatBackend>,
) -> Result<(bool, String), GraderError> {
    let judge = judge.ok_or(GraderError::JudgeUnavailable)?;
    let prompt = JUDGE_PROMPT_TEMPLATE
        .replace("{question}", question_prompt)
        .replace("{ground_truth}", &ground_truth.canonical_answer)
        .replace("{answer}", answer);
    let history = [
        ChatMessage::system(JUDGE_SYSTEM_PROMPT),
        ChatMessage::user(prompt),
    ];
    let turn = judge.chat(&history, &[])?;
    let first_word = normalize(&turn.content);
    let verdict = if first_word.starts_with("yes") {
        true
    } else if first_word.starts_with("no") {
        false
    } else {
        return Err(GraderError::JudgeUnparseable {
            content: turn.content,
        });
    };
    Ok((verdict, turn.content))
}

/// Grades one finished episode against its question's ground truth.
///
/// Aborted episodes (backend or sandbox failure markers) grade as
/// incorrect with `RoundExceed`, carrying the abort reason in the
/// rationale, so the verdict partition over a run stays total.
pub fn grade(
    transcript: &RunTranscript,
    question_prompt: &str,
    ground_truth: &GroundTruth,
    judge: Option<&dyn ChatBackend>,
) -> Result<Verdict, GraderError> {
    let base = |correct: bool, failure: Option<FailureMode>, rationale: Option<String>| Verdict {
        scenario_id: transcript.scenario_id.clone(),
        question_id: transcript.question_id.clone(),
        correct,
        failure,
        failure_cause: None,
        judge_rationale: rationale,
        steps_used: transcript.steps.len(),
    };

    if let Some(reason) = &transcript.abort {
        return Ok(base(
            false,
            Some(FailureMode::RoundExceed),
            Some(format!("episode aborted: {reason}")),
        ));
    }

    match &transcript.outcome {
        Outcome::GaveUp => Ok(base(false, Some(FailureMode::GiveUp), None)),
        Outcome::RoundExceeded => Ok(base(false, Some(FailureMode::RoundExceed), None)),
        Outcome::Answered(answer) => {
            let (correct, rationale) = match ground_truth.match_mode {
                MatchMode::NormalizedExact => (normalized_exact(answer, ground_truth), None),
                MatchMode::Label => (label_match(answer, ground_truth)?, None),
                MatchMode::JudgeLLM => {
                    let (ok, rationale) =
                        judge_match(question_prompt, answer, ground_truth, judge)?;
                    (ok, Some(rationale))
                }
            };
            let failure = (!correct).then_some(FailureMode::WrongAnswer);
            Ok(base(correct, failure, rationale))
        }
    }
}

/// Grades a single-state transcript into one verdict per question.
///
/// The episode's final `save_answer` carries a map keyed by question id;
/// a question missing from the map grades as given up.
pub fn grade_single_state(
    transcript: &RunTranscript,
    scenario: &Scenario,
    judge: Option<&dyn ChatBackend>,
) -> Result<Vec<Verdict>, GraderError> {
    let answers: BTreeMap<String, String> = match &transcript.outcome {
        Outcome::Answered(serialized) => serde_json::from_str(serialized)
            .unwrap_or_else(|_| BTreeMap::from([("answer".to_string(), serialized.clone())])),
        _ => BTreeMap::new(),
    };

    let mut verdicts = Vec::with_capacity(scenario.questions.len());
    for question in &scenario.questions {
        let mut per_question = transcript.clone();
        per_question.question_id = question.id.clone();
        per_question.outcome = match answers.get(&question.id) {
            Some(answer) if !answer.trim().is_empty() => Outcome::Answered(answer.clone()),
            _ => match &transcript.outcome {
                Outcome::RoundExceeded => Outcome::RoundExceeded,
                _ => Outcome::GaveUp,
            },
        };
        verdicts.push(grade(
            &per_question,
            &question.prompt,
            &question.ground_truth,
            judge,
        )?);
    }
    Ok(verdicts)
}

/// Inputs the failure-cause heuristics need beyond the transcript itself.
#[derive(Debug, Default)]
pub struct FailureContext<'a> {
    /// Operator annotations keyed `scenario_id.question_id`. The only
    /// source for `Hallucination` and `ShallowInvestigation`.
    pub annotations: Option<&'a BTreeMap<String, FailureCause>>,
    /// The question being classified, for its declared dependencies.
    pub question: Option<&'a Question>,
    /// Ids of earlier questions in the same scenario that were failed.
    pub prior_failed: BTreeSet<String>,
}

/// Heuristic root-cause labeling for a failed episode.
///
/// Rules, in precedence order: operator annotation; three or more
/// consecutive identical commands (infinite loop); more than half of the
/// commands exiting nonzero (wrong commands); a failed declared dependency
/// (question dependency).
pub fn classify_failure_cause(
    transcript: &RunTranscript,
    context: &FailureContext<'_>,
) -> Option<FailureCause> {
    if let Some(annotations) = context.annotations {
        let key = format!("{}.{}", transcript.scenario_id, transcript.question_id);
        if let Some(cause) = annotations.get(&key) {
            return Some(*cause);
        }
    }

    let commands = transcript.commands();
    let mut run_length = 1;
    for pair in commands.windows(2) {
        if pair[0] == pair[1] {
            run_length += 1;
            if run_length >= 3 {
                return Some(FailureCause::InfiniteLoop);
            }
        } else {
            run_length = 1;
        }
    }

    let exits: Vec<i32> = transcript
        .steps
        .iter()
        .filter(|s| s.action.name == ToolName::ExecuteCommand)
        .filter_map(|s| s.exit_code)
        .collect();
    if !exits.is_empty() {
        let nonzero = exits.iter().filter(|&&code| code != 0).count();
        if nonzero * 2 > exits.len() {
            return Some(FailureCause::WrongCommands);
        }
    }

    if let Some(question) = context.question {
        if question
            .depends_on
            .iter()
            .any(|dep| context.prior_failed.contains(dep))
        {
            return Some(FailureCause::QuestionDependency);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Step;
    use crate::llm::{AssistantTurn, ScriptBackend, ToolCall};

    fn ground_truth(mode: MatchMode, canonical: &str) -> GroundTruth {
        GroundTruth {
            canonical_answer: canonical.to_string(),
            accepted_aliases: vec![],
            match_mode: mode,
        }
    }

    fn answered(answer: &str) -> RunTranscript {
        RunTranscript {
            scenario_id: "s1".to_string(),
            question_id: "q1".to_string(),
            steps: vec![],
            outcome: Outcome::Answered(answer.to_string()),
            abort: None,
            final_report: String::new(),
        }
    }

    fn exec_step(index: usize, command: &str, exit_code: i32) -> Step {
        Step {
            index,
            thought: String::new(),
            action: ToolCall::new(ToolName::ExecuteCommand).with_arg("command", command),
            observation: String::new(),
            token_count: 0,
            exit_code: Some(exit_code),
        }
    }

    #[test]
    fn judge_yes_makes_the_answer_correct() {
        let judge = ScriptBackend::new(vec![AssistantTurn::text("yes")]);
        let verdict = grade(
            &answered("The IP is 10.251.96.4"),
            "Which IP is scanning?",
            &ground_truth(MatchMode::JudgeLLM, "10.251.96.4"),
            Some(&judge),
        )
        .unwrap();
        assert!(verdict.correct);
        assert!(verdict.failure.is_none());
        let history = &judge.recorded_histories()[0];
        assert!(history[1].content.contains("The IP is 10.251.96.4"));
        assert!(history[1].content.contains("10.251.96.4"));
    }

    #[test]
    fn near_miss_ip_is_a_wrong_answer() {
        let verdict = grade(
            &answered("10.251.96.5"),
            "Which IP is scanning?",
            &ground_truth(MatchMode::NormalizedExact, "10.251.96.4"),
            None,
        )
        .unwrap();
        assert!(!verdict.correct);
        assert_eq!(verdict.failure, Some(FailureMode::WrongAnswer));
    }

    #[test]
    fn give_up_grades_as_give_up_regardless_of_ground_truth() {
        let mut transcript = answered("ignored");
        transcript.outcome = Outcome::GaveUp;
        let verdict = grade(
            &transcript,
            "q",
            &ground_truth(MatchMode::NormalizedExact, "anything"),
            None,
        )
        .unwrap();
        assert!(!verdict.correct);
        assert_eq!(verdict.failure, Some(FailureMode::GiveUp));
    }

    #[test]
    fn normalization_forgives_case_and_punctuation() {
        let gt = ground_truth(MatchMode::NormalizedExact, "Invoice.pdf");
        for answer in ["invoice.pdf", "  INVOICE.PDF.", "\"Invoice.pdf\""] {
            let verdict = grade(&answered(answer), "q", &gt, None).unwrap();
            assert!(verdict.correct, "answer {answer:?} should match");
        }
    }

    #[test]
    fn aliases_are_accepted() {
        let mut gt = ground_truth(MatchMode::NormalizedExact, "192.168.10.5");
        gt.accepted_aliases = vec!["the host 192-168-10-5".to_string()];
        let verdict = grade(&answered("The host 192-168-10-5"), "q", &gt, None).unwrap();
        assert!(verdict.correct);
    }

    #[test]
    fn label_mode_accepts_exactly_one_label_phrase() {
        let gt = ground_truth(MatchMode::Label, "True Positive");
        let verdict = grade(
            &answered("This alert is a TRUE positive."),
            "q",
            &gt,
            None,
        )
        .unwrap();
        assert!(verdict.correct);

        let wrong = grade(&answered("It is a false positive"), "q", &gt, None).unwrap();
        assert!(!wrong.correct);

        for ambiguous in ["not a false positive but a true positive", "benign"] {
            assert!(matches!(
                grade(&answered(ambiguous), "q", &gt, None),
                Err(GraderError::AmbiguousLabel { .. })
            ));
        }
    }

    #[test]
    fn judge_mode_without_a_backend_is_unavailable() {
        assert!(matches!(
            grade(
                &answered("x"),
                "q",
                &ground_truth(MatchMode::JudgeLLM, "x"),
                None
            ),
            Err(GraderError::JudgeUnavailable)
        ));
    }

    #[test]
    fn always_no_judge_turns_every_answer_into_wrong_answer() {
        let judge = ScriptBackend::new(vec![
            AssistantTurn::text("no"),
            AssistantTurn::text("No."),
        ]);
        for answer in ["perfectly right", "also right"] {
            let verdict = grade(
                &answered(answer),
                "q",
                &ground_truth(MatchMode::JudgeLLM, "right"),
                Some(&judge),
            )
            .unwrap();
            assert!(!verdict.correct);
            assert_eq!(verdict.failure, Some(FailureMode::WrongAnswer));
        }
    }

    #[test]
    fn aborted_transcripts_grade_as_round_exceed_with_the_reason() {
        let mut transcript = answered("x");
        transcript.outcome = Outcome::RoundExceeded;
        transcript.abort = Some("backend failure: boom".to_string());
        let verdict = grade(
            &transcript,
            "q",
            &ground_truth(MatchMode::NormalizedExact, "x"),
            None,
        )
        .unwrap();
        assert_eq!(verdict.failure, Some(FailureMode::RoundExceed));
        assert!(verdict.judge_rationale.unwrap().contains("boom"));
    }

    #[test]
    fn four_identical_commands_are_an_infinite_loop() {
        let mut transcript = answered("x");
        transcript.outcome = Outcome::RoundExceeded;
        transcript.steps = (1..=4).map(|i| exec_step(i, "strings dump.mem", 0)).collect();
        assert_eq!(
            classify_failure_cause(&transcript, &FailureContext::default()),
            Some(FailureCause::InfiniteLoop)
        );
    }

    #[test]
    fn mostly_failing_commands_classify_as_wrong_commands() {
        let mut transcript = answered("x");
        transcript.outcome = Outcome::GaveUp;
        transcript.steps = vec![
            exec_step(1, "volatility -f mem", 1),
            exec_step(2, "volatility2 -f mem", 2),
            exec_step(3, "vol.py -f mem", 127),
            exec_step(4, "strings mem", 0),
            exec_step(5, "vol3 -f mem", 1),
            exec_step(6, "file mem", 0),
        ];
        assert_eq!(
            classify_failure_cause(&transcript, &FailureContext::default()),
            Some(FailureCause::WrongCommands)
        );
    }

    #[test]
    fn annotations_override_heuristics() {
        let mut transcript = answered("x");
        transcript.outcome = Outcome::RoundExceeded;
        transcript.steps = (1..=4).map(|i| exec_step(i, "same", 0)).collect();
        let mut annotations = BTreeMap::new();
        annotations.insert("s1.q1".to_string(), FailureCause::Hallucination);
        let context = FailureContext {
            annotations: Some(&annotations),
            ..FailureContext::default()
        };
        assert_eq!(
            classify_failure_cause(&transcript, &context),
            Some(FailureCause::Hallucination)
        );
    }

    #[test]
    fn failed_dependency_classifies_as_question_dependency() {
        let question = Question {
            id: "q2".to_string(),
            prompt: "What does the extracted PDF contain?".to_string(),
            tactic: None,
            ground_truth: ground_truth(MatchMode::NormalizedExact, "macro"),
            depends_on: vec!["q1".to_string()],
        };
        let mut transcript = answered("nothing");
        transcript.question_id = "q2".to_string();
        transcript.outcome = Outcome::GaveUp;
        let context = FailureContext {
            question: Some(&question),
            prior_failed: BTreeSet::from(["q1".to_string()]),
            ..FailureContext::default()
        };
        assert_eq!(
            classify_failure_cause(&transcript, &context),
            Some(FailureCause::QuestionDependency)
        );
    }

    #[test]
    fn single_state_transcripts_grade_per_question() {
        let scenario = Scenario {
            id: "s1".to_string(),
            description: "d".to_string(),
            artifacts: vec![],
            directory: "/tmp".to_string(),
            tools: vec![],
            basic_instruction: "i".to_string(),
            questions: vec![
                Question {
                    id: "q1".to_string(),
                    prompt: "one".to_string(),
                    tactic: None,
                    ground_truth: ground_truth(MatchMode::NormalizedExact, "alpha"),
                    depends_on: vec![],
                },
                Question {
                    id: "q2".to_string(),
                    prompt: "two".to_string(),
                    tactic: None,
                    ground_truth: ground_truth(MatchMode::NormalizedExact, "beta"),
                    depends_on: vec![],
                },
                Question {
                    id: "q3".to_string(),
                    prompt: "three".to_string(),
                    tactic: None,
                    ground_truth: ground_truth(MatchMode::NormalizedExact, "gamma"),
                    depends_on: vec![],
                },
            ],
            task_category: crate::scenario::TaskCategory::Miscellaneous,
            task_level: crate::scenario::TaskLevel::Easy,
        };
        let mut transcript = answered(r#"{"q1": "alpha", "q2": "nope"}"#);
        transcript.question_id = crate::agent::SINGLE_STATE_QUESTION_ID.to_string();

        let verdicts = grade_single_state(&transcript, &scenario, None).unwrap();
        assert_eq!(verdicts.len(), 3);
        assert!(verdicts[0].correct);
        assert_eq!(verdicts[1].failure, Some(FailureMode::WrongAnswer));
        assert_eq!(verdicts[2].failure, Some(FailureMode::GiveUp));
    }
}
