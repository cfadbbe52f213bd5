//! Aggregates verdicts into benchmark report shapes: fully/partially
//! solved by category and level, tactic solve rates, failure distribution,
//! consistency across repeated runs, triage accuracy, and step accounting.
//!
//! Aggregation is pure and single-threaded; inputs are grouped through
//! ordered maps so float summation order, and therefore every report byte,
//! is deterministic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grader::{FailureMode, Verdict};
use crate::scenario::{MatchMode, Scenario, TaskCategory, TaskLevel};
use crate::triage::TriageLabel;

/// Tactics with fewer questions than this are omitted from tactic rates.
pub const DEFAULT_MIN_TACTIC_COUNT: usize = 10;

/// Fully-solved and partially-solved statistics for one category/level cell.
///
/// FS counts scenarios with every question correct. PS is the unweighted
/// mean over scenarios of each scenario's percent of correct answers, not
/// pooled question accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub fs_solved: usize,
    pub fs_total: usize,
    pub ps_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallStats {
    pub fs_solved: usize,
    pub fs_total: usize,
    pub ps_percent: f64,
}

impl OverallStats {
    /// The "solved/total" form used in leaderboard tables.
    pub fn fs_display(&self) -> String {
        format!("{}/{}", self.fs_solved, self.fs_total)
    }
}

/// Share of questions per terminal failure mode. Together with the solved
/// share these sum to one hundred percent of questions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureDistribution {
    pub solved_percent: f64,
    pub give_up_percent: f64,
    pub wrong_answer_percent: f64,
    pub round_exceed_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageStats {
    pub tp_correct: usize,
    pub tp_total: usize,
    pub fp_correct: usize,
    pub fp_total: usize,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyStats {
    pub mean: f64,
    /// Population standard deviation over the repeats.
    pub stddev: f64,
}

/// Average step counts split by outcome, per difficulty level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub avg_pass_steps: Option<f64>,
    pub avg_fail_wrong_steps: Option<f64>,
    pub avg_fail_giveup_steps: Option<f64>,
}

/// Everything a benchmark run reports for one model/configuration label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    /// Keyed "Category/Level".
    pub per_cell: BTreeMap<String, CellStats>,
    pub overall: OverallStats,
    /// Tactic display name to solve percent, filtered by the minimum
    /// question count.
    pub tactic_rates: BTreeMap<String, f64>,
    pub failure_dist: FailureDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<BTreeMap<String, ConsistencyStats>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triage: Option<TriageStats>,
    /// Keyed by difficulty level name.
    pub steps: BTreeMap<String, StepStats>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scenario {scenario_id} has incomplete verdicts: {detail}")]
    IncompleteVerdicts { scenario_id: String, detail: String },
    #[error("verdicts reference unknown scenario {0}")]
    UnknownScenario(String),
    #[error("consistency needs at least two repeats, got {0}")]
    TooFewRepeats(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

pub fn cell_key(category: TaskCategory, level: TaskLevel) -> String {
    format!("{category}/{level}")
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-scenario percent of correct answers, checking that the verdict set
/// covers the scenario's questions exactly.
fn scenario_percent(scenario: &Scenario, verdicts: &[&Verdict]) -> Result<f64, MetricsError> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for verdict in verdicts {
        *seen.entry(verdict.question_id.as_str()).or_default() += 1;
    }
    let mut missing = Vec::new();
    for question in &scenario.questions {
        match seen.remove(question.id.as_str()) {
            Some(1) => {}
            Some(n) => {
                return Err(MetricsError::IncompleteVerdicts {
                    scenario_id: scenario.id.clone(),
                    detail: format!("question {} graded {n} times", question.id),
                })
            }
            None => missing.push(question.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::IncompleteVerdicts {
            scenario_id: scenario.id.clone(),
            detail: format!("missing verdicts for questions {missing:?}"),
        });
    }
    if let Some((stray, _)) = seen.into_iter().next() {
        return Err(MetricsError::IncompleteVerdicts {
            scenario_id: scenario.id.clone(),
            detail: format!("verdict references unknown question {stray:?}"),
        });
    }
    let correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(correct as f64 / scenario.questions.len() as f64 * 100.0)
}

fn group_by_scenario<'a>(
    verdicts: &'a [Verdict],
    scenarios: &[Scenario],
) -> Result<BTreeMap<String, Vec<&'a Verdict>>, MetricsError> {
    let mut groups: BTreeMap<String, Vec<&Verdict>> = BTreeMap::new();
    for verdict in verdicts {
        groups
            .entry(verdict.scenario_id.clone())
            .or_default()
            .push(verdict);
    }
    for id in groups.keys() {
        if !scenarios.iter().any(|s| &s.id == id) {
            return Err(MetricsError::UnknownScenario(id.clone()));
        }
    }
    Ok(groups)
}

/// Computes the per-cell and overall FS/PS statistics.
pub fn compute_fs_ps(
    verdicts: &[Verdict],
    scenarios: &[Scenario],
) -> Result<(BTreeMap<String, CellStats>, OverallStats), MetricsError> {
    let groups = group_by_scenario(verdicts, scenarios)?;

    let mut cell_percents: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cell_fs: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut all_percents = Vec::new();
    let mut overall_fs = 0usize;

    let mut sorted: Vec<&Scenario> = scenarios.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    for scenario in sorted {
        let empty = Vec::new();
        let scenario_verdicts = groups.get(&scenario.id).unwrap_or(&empty);
        let percent = scenario_percent(scenario, scenario_verdicts)?;
        let fully_solved = (percent - 100.0).abs() < f64::EPSILON;

        let key = cell_key(scenario.task_category, scenario.task_level);
        cell_percents.entry(key.clone()).or_default().push(percent);
        let fs = cell_fs.entry(key).or_insert((0, 0));
        fs.1 += 1;
        if fully_solved {
            fs.0 += 1;
            overall_fs += 1;
        }
        all_percents.push(percent);
    }

    let per_cell = cell_percents
        .into_iter()
        .map(|(key, percents)| {
            let (fs_solved, fs_total) = cell_fs[&key];
            (
                key,
                CellStats {
                    fs_solved,
                    fs_total,
                    ps_percent: mean(&percents),
                },
            )
        })
        .collect();

    Ok((
        per_cell,
        OverallStats {
            fs_solved: overall_fs,
            fs_total: scenarios.len(),
            ps_percent: mean(&all_percents),
        },
    ))
}

/// Solve percentage per tactic, over the questions carrying that tactic.
/// Questions with no tactic are excluded; tactics with fewer than
/// `min_count` questions are omitted.
pub fn compute_tactic_rates(
    verdicts: &[Verdict],
    scenarios: &[Scenario],
    min_count: usize,
) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for verdict in verdicts {
        let tactic = scenarios
            .iter()
            .find(|s| s.id == verdict.scenario_id)
            .and_then(|s| s.question(&verdict.question_id))
            .and_then(|q| q.tactic);
        if let Some(tactic) = tactic {
            let entry = tally.entry(tactic.to_string()).or_default();
            entry.1 += 1;
            if verdict.correct {
                entry.0 += 1;
            }
        }
    }
    tally
        .into_iter()
        .filter(|(_, (_, total))| *total >= min_count)
        .map(|(tactic, (correct, total))| (tactic, correct as f64 / total as f64 * 100.0))
        .collect()
}

/// Failure-mode shares over all graded questions.
pub fn compute_failure_distribution(verdicts: &[Verdict]) -> FailureDistribution {
    if verdicts.is_empty() {
        return FailureDistribution::default();
    }
    let total = verdicts.len() as f64;
    let count = |mode: FailureMode| {
        verdicts.iter().filter(|v| v.failure == Some(mode)).count() as f64 / total * 100.0
    };
    FailureDistribution {
        solved_percent: verdicts.iter().filter(|v| v.correct).count() as f64 / total * 100.0,
        give_up_percent: count(FailureMode::GiveUp),
        wrong_answer_percent: count(FailureMode::WrongAnswer),
        round_exceed_percent: count(FailureMode::RoundExceed),
    }
}

/// Per-class and overall accuracy over label-graded (alert triage)
/// questions. Absent when the run contains none.
pub fn compute_triage_accuracy(
    verdicts: &[Verdict],
    scenarios: &[Scenario],
) -> Option<TriageStats> {
    let mut stats = TriageStats {
        tp_correct: 0,
        tp_total: 0,
        fp_correct: 0,
        fp_total: 0,
        accuracy_percent: 0.0,
    };
    for verdict in verdicts {
        let question = scenarios
            .iter()
            .find(|s| s.id == verdict.scenario_id)
            .and_then(|s| s.question(&verdict.question_id));
        let Some(question) = question else { continue };
        if question.ground_truth.match_mode != MatchMode::Label {
            continue;
        }
        match TriageLabel::parse(&question.ground_truth.canonical_answer) {
            Some(TriageLabel::TruePositive) => {
                stats.tp_total += 1;
                if verdict.correct {
                    stats.tp_correct += 1;
                }
            }
            Some(TriageLabel::FalsePositive) => {
                stats.fp_total += 1;
                if verdict.correct {
                    stats.fp_correct += 1;
                }
            }
            None => continue,
        }
    }
    let total = stats.tp_total + stats.fp_total;
    if total == 0 {
        return None;
    }
    stats.accuracy_percent = (stats.tp_correct + stats.fp_correct) as f64 / total as f64 * 100.0;
    Some(stats)
}

/// Mean and population standard deviation of each cell's PS across repeat
/// runs.
pub fn compute_consistency(
    repeats: &[BTreeMap<String, CellStats>],
) -> Result<BTreeMap<String, ConsistencyStats>, MetricsError> {
    if repeats.len() < 2 {
        return Err(MetricsError::TooFewRepeats(repeats.len()));
    }
    let mut keys: Vec<&String> = repeats.iter().flat_map(|r| r.keys()).collect();
    keys.sort();
    keys.dedup();

    let mut out = BTreeMap::new();
    for key in keys {
        let values: Vec<f64> = repeats
            .iter()
            .filter_map(|r| r.get(key))
            .map(|c| c.ps_percent)
            .collect();
        let m = mean(&values);
        let variance = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64;
        out.insert(
            key.clone(),
            ConsistencyStats {
                mean: m,
                stddev: variance.sqrt(),
            },
        );
    }
    Ok(out)
}

/// Average steps per difficulty level: passes over correct verdicts, the
/// failure columns over wrong answers and give-ups respectively.
pub fn compute_step_stats(
    verdicts: &[Verdict],
    scenarios: &[Scenario],
) -> BTreeMap<String, StepStats> {
    let mut buckets: BTreeMap<String, (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for verdict in verdicts {
        let Some(scenario) = scenarios.iter().find(|s| s.id == verdict.scenario_id) else {
            continue;
        };
        let entry = buckets.entry(scenario.task_level.to_string()).or_default();
        let steps = verdict.steps_used as f64;
        if verdict.correct {
            entry.0.push(steps);
        } else {
            match verdict.failure {
                Some(FailureMode::WrongAnswer) => entry.1.push(steps),
                Some(FailureMode::GiveUp) => entry.2.push(steps),
                _ => {}
            }
        }
    }
    buckets
        .into_iter()
        .map(|(level, (pass, wrong, give_up))| {
            let avg = |v: &Vec<f64>| (!v.is_empty()).then(|| mean(v));
            (
                level,
                StepStats {
                    avg_pass_steps: avg(&pass),
                    avg_fail_wrong_steps: avg(&wrong),
                    avg_fail_giveup_steps: avg(&give_up),
                },
            )
        })
        .collect()
}

/// Builds the full report for one labeled run.
pub fn assemble_report(
    label: &str,
    verdicts: &[Verdict],
    scenarios: &[Scenario],
    repeat_cells: Option<&[BTreeMap<String, CellStats>]>,
    min_tactic_count: usize,
) -> Result<MetricsReport, MetricsError> {
    let (per_cell, overall) = compute_fs_ps(verdicts, scenarios)?;
    let consistency = match repeat_cells {
        Some(repeats) => Some(compute_consistency(repeats)?),
        None => None,
    };
    Ok(MetricsReport {
        label: label.to_string(),
        tactic_rates: compute_tactic_rates(verdicts, scenarios, min_tactic_count),
        failure_dist: compute_failure_distribution(verdicts),
        triage: compute_triage_accuracy(verdicts, scenarios),
        steps: compute_step_stats(verdicts, scenarios),
        consistency,
        per_cell,
        overall,
    })
}

/// Renders the report. JSON is the canonical machine form; markdown mirrors
/// the leaderboard table layout (one row per run label, FS and PS columns
/// per cell plus overall); CSV flattens the cells.
pub fn render(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            text
        }
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report),
    }
}

fn render_markdown(report: &MetricsReport) -> String {
    let mut header = vec!["Model".to_string()];
    let mut divider = vec!["---".to_string()];
    let mut row = vec![report.label.clone()];
    for (key, cell) in &report.per_cell {
        header.push(format!("{key} FS"));
        header.push(format!("{key} PS"));
        divider.push("---".to_string());
        divider.push("---".to_string());
        row.push(format!("{}/{}", cell.fs_solved, cell.fs_total));
        row.push(format!("{:.2}%", cell.ps_percent));
    }
    header.push("Overall FS".to_string());
    header.push("Overall PS".to_string());
    divider.push("---".to_string());
    divider.push("---".to_string());
    row.push(report.overall.fs_display());
    row.push(format!("{:.2}%", report.overall.ps_percent));

    let mut out = String::new();
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("| {} |\n", divider.join(" | ")));
    out.push_str(&format!("| {} |\n", row.join(" | ")));

    if !report.tactic_rates.is_empty() {
        out.push_str("\n| Tactic | Solved |\n| --- | --- |\n");
        for (tactic, rate) in &report.tactic_rates {
            out.push_str(&format!("| {tactic} | {rate:.2}% |\n"));
        }
    }
    if let Some(triage) = &report.triage {
        out.push_str(&format!(
            "\nTriage: TP {}/{}, FP {}/{}, accuracy {:.1}%\n",
            triage.tp_correct,
            triage.tp_total,
            triage.fp_correct,
            triage.fp_total,
            triage.accuracy_percent
        ));
    }
    out
}

fn render_csv(report: &MetricsReport) -> String {
    let mut out = String::from("label,category,level,fs_solved,fs_total,ps_percent\n");
    for (key, cell) in &report.per_cell {
        let (category, level) = key.split_once('/').unwrap_or((key.as_str(), ""));
        out.push_str(&format!(
            "{},{},{},{},{},{:.4}\n",
            report.label, category, level, cell.fs_solved, cell.fs_total, cell.ps_percent
        ));
    }
    out
}
