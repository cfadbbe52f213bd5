//! Scenario bundle format shared by SIA tasks and alert-triage tasks.
//!
//! A scenario is one incident: a description, a set of evidence artifacts
//! on disk, tool usage instructions, and an ordered list of investigative
//! questions with ground truth. The JSON schema is strict: unknown keys are
//! rejected so that dataset drift surfaces at load time instead of
//! corrupting grading.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Task type, used only for result aggregation, never shown to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskCategory {
    MemoryForensics,
    MalwareAnalysis,
    NetworkForensics,
    Miscellaneous,
    AlertTriage,
}

impl fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TaskCategory::MemoryForensics => "MemoryForensics",
            TaskCategory::MalwareAnalysis => "MalwareAnalysis",
            TaskCategory::NetworkForensics => "NetworkForensics",
            TaskCategory::Miscellaneous => "Miscellaneous",
            TaskCategory::AlertTriage => "AlertTriage",
        };
        f.write_str(name)
    }
}

/// Difficulty rating carried over from the source platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskLevel {
    Easy,
    Medium,
    Hard,
    Unspecified,
}

impl fmt::Display for TaskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TaskLevel::Easy => "Easy",
            TaskLevel::Medium => "Medium",
            TaskLevel::Hard => "Hard",
            TaskLevel::Unspecified => "Unspecified",
        };
        f.write_str(name)
    }
}

/// MITRE ATT&CK tactic labeling a question's investigative intent.
///
/// Closed set: unknown tactic strings fail validation rather than being
/// carried through as free text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tactic {
    Reconnaissance,
    #[serde(rename = "Resource Development")]
    ResourceDevelopment,
    #[serde(rename = "Initial Access")]
    InitialAccess,
    Execution,
    Persistence,
    #[serde(rename = "Privilege Escalation")]
    PrivilegeEscalation,
    #[serde(rename = "Defense Evasion")]
    DefenseEvasion,
    #[serde(rename = "Credential Access")]
    CredentialAccess,
    Discovery,
    #[serde(rename = "Lateral Movement")]
    LateralMovement,
    Collection,
    #[serde(rename = "Command and Control")]
    CommandAndControl,
    Exfiltration,
    Impact,
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Tactic::Reconnaissance => "Reconnaissance",
            Tactic::ResourceDevelopment => "Resource Development",
            Tactic::InitialAccess => "Initial Access",
            Tactic::Execution => "Execution",
            Tactic::Persistence => "Persistence",
            Tactic::PrivilegeEscalation => "Privilege Escalation",
            Tactic::DefenseEvasion => "Defense Evasion",
            Tactic::CredentialAccess => "Credential Access",
            Tactic::Discovery => "Discovery",
            Tactic::LateralMovement => "Lateral Movement",
            Tactic::Collection => "Collection",
            Tactic::CommandAndControl => "Command and Control",
            Tactic::Exfiltration => "Exfiltration",
            Tactic::Impact => "Impact",
        };
        f.write_str(name)
    }
}

/// How an agent answer is compared against ground truth.
///
/// The deterministic modes exist so grading can run in CI without a judge
/// model; `JudgeLLM` delegates the comparison to a configured backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMode {
    NormalizedExact,
    JudgeLLM,
    Label,
}

/// Kind tag for an evidence file, informational only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArtifactKind {
    Pcap,
    MemoryDump,
    Email,
    Log,
    Binary,
    Document,
    Other,
}

/// Reference to one evidence file, resolved against the scenario directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRef {
    pub filename: String,
    pub kind: ArtifactKind,
}

/// Ground truth for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    /// The reference answer. In `Label` mode this must name one of the two
    /// triage labels ("True Positive" / "False Positive").
    pub canonical_answer: String,
    /// Alternative phrasings accepted by `NormalizedExact` grading.
    pub accepted_aliases: Vec<String>,
    pub match_mode: MatchMode,
}

/// One investigative question within a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub id: String,
    pub prompt: String,
    /// May be null: some questions (e.g. capture timestamps) map to no tactic.
    pub tactic: Option<Tactic>,
    pub ground_truth: GroundTruth,
    /// Ids of earlier questions whose answers this one builds on. Used by
    /// the failure-cause classifier, never shown to the model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
}

/// One incident bundle: description, artifacts, tool instructions, and an
/// ordered list of questions with ground truth.
///
/// Immutable after load; values are freely shareable across concurrent
/// scenario runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    /// Incident overview shown to the model.
    pub description: String,
    pub artifacts: Vec<ArtifactRef>,
    /// Location of the artifact files. May be written relative to the
    /// scenario JSON file; [`load_scenario`] rewrites it to the joined path.
    pub directory: String,
    /// Recommended analysis tools, bare names without version pins.
    pub tools: Vec<String>,
    /// Tool usage guidelines and scenario-specific instructions.
    pub basic_instruction: String,
    pub questions: Vec<Question>,
    pub task_category: TaskCategory,
    pub task_level: TaskLevel,
}

/// The projection of a scenario that is allowed to reach the model.
///
/// Holds exactly the LLM-input components; ground truth, tactics, category
/// and level are structurally absent so leakage is checkable by
/// serializing this view.
#[derive(Debug, Clone, Serialize)]
pub struct LlmInputs<'a> {
    pub description: &'a str,
    pub artifacts: Vec<&'a str>,
    pub directory: &'a str,
    pub tools: &'a [String],
    pub basic_instruction: &'a str,
    pub question_prompts: Vec<&'a str>,
}

impl Scenario {
    /// The model-visible projection of this scenario.
    pub fn llm_inputs(&self) -> LlmInputs<'_> {
        LlmInputs {
            description: &self.description,
            artifacts: self.artifacts.iter().map(|a| a.filename.as_str()).collect(),
            directory: &self.directory,
            tools: &self.tools,
            basic_instruction: &self.basic_instruction,
            question_prompts: self.questions.iter().map(|q| q.prompt.as_str()).collect(),
        }
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Semantic checks beyond what the serde schema enforces. Returns every
    /// violation found rather than stopping at the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("scenario id is empty".to_string());
        }
        if self.questions.is_empty() {
            out.push("scenario has no questions".to_string());
        }
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.id.as_str()) {
                out.push(format!("duplicate question id {:?}", q.id));
            }
            if q.prompt.trim().is_empty() {
                out.push(format!("question {:?} has an empty prompt", q.id));
            }
            if q.ground_truth.canonical_answer.trim().is_empty() {
                out.push(format!("question {:?} has an empty canonical answer", q.id));
            }
            if q.ground_truth.match_mode == MatchMode::Label
                && crate::triage::TriageLabel::parse(&q.ground_truth.canonical_answer).is_none()
            {
                out.push(format!(
                    "question {:?} uses Label mode but its canonical answer {:?} names neither triage label",
                    q.id, q.ground_truth.canonical_answer
                ));
            }
            for dep in &q.depends_on {
                if !self.questions.iter().any(|p| &p.id == dep) {
                    out.push(format!(
                        "question {:?} depends on unknown question id {:?}",
                        q.id, dep
                    ));
                }
            }
        }
        for artifact in &self.artifacts {
            if Path::new(&artifact.filename)
                .components()
                .any(|c| matches!(c, std::path::Component::ParentDir))
                || artifact.filename.starts_with('/')
            {
                out.push(format!(
                    "artifact filename {:?} contains path traversal segments",
                    artifact.filename
                ));
            }
        }
        if self.task_category == TaskCategory::AlertTriage {
            let label_questions = self
                .questions
                .iter()
                .filter(|q| q.ground_truth.match_mode == MatchMode::Label)
                .count();
            if label_questions != 1 {
                out.push(format!(
                    "alert-triage scenario must have exactly one label-graded question, found {label_questions}"
                ));
            }
        }
        out
    }

    /// Checks that every referenced artifact exists and is readable under
    /// `directory`. Separate from [`Scenario::violations`] because it touches
    /// the filesystem.
    pub fn missing_artifacts(&self) -> Vec<PathBuf> {
        self.artifacts
            .iter()
            .map(|a| Path::new(&self.directory).join(&a.filename))
            .filter(|p| fs::File::open(p).is_err())
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is not valid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path} violates the scenario schema: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path} references missing artifact {artifact}")]
    ArtifactMissing { path: PathBuf, artifact: PathBuf },
}

/// Loads and fully validates one scenario JSON file.
///
/// A relative `directory` field is rewritten to be relative to the scenario
/// file's parent, so the returned value is usable from any working
/// directory. Artifact existence is checked here, at load time, because the
/// runner assumes artifacts stay intact for the whole run.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    let mut scenario: Scenario =
        serde_json::from_value(value).map_err(|e| ScenarioError::Schema {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;

    let declared = PathBuf::from(&scenario.directory);
    if declared.is_relative() {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        scenario.directory = base.join(declared).to_string_lossy().into_owned();
    }

    let violations = scenario.violations();
    if !violations.is_empty() {
        return Err(ScenarioError::Schema {
            path: path.to_path_buf(),
            message: violations.join("; "),
        });
    }
    if let Some(missing) = scenario.missing_artifacts().into_iter().next() {
        return Err(ScenarioError::ArtifactMissing {
            path: path.to_path_buf(),
            artifact: missing,
        });
    }
    Ok(scenario)
}

/// Validates every `*.json` file in a directory, never aborting on the
/// first bad file. Returns one entry per file with its violation list;
/// valid scenarios get an empty list.
pub fn validate_suite(
    dir: impl AsRef<Path>,
) -> Result<Vec<(String, Vec<String>)>, std::io::Error> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();

    let mut report = Vec::new();
    for file in files {
        let fallback_id = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| file.display().to_string());
        match load_scenario(&file) {
            Ok(scenario) => report.push((scenario.id, Vec::new())),
            Err(e) => report.push((fallback_id, vec![e.to_string()])),
        }
    }
    Ok(report)
}

/// Loads every valid scenario in a directory, sorted by scenario id.
/// Any invalid file is an error; suites are all-or-nothing for runs.
pub fn load_suite(dir: impl AsRef<Path>) -> Result<Vec<Scenario>, ScenarioError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|source| ScenarioError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    let mut scenarios = files
        .iter()
        .map(load_scenario)
        .collect::<Result<Vec<_>, _>>()?;
    scenarios.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(scenarios)
}
