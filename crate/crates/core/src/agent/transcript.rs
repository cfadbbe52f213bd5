//! Transcript persistence: one JSON-lines file per episode plus the plain
//! text final report, laid out as `{scenario_id}/{question_id}.jsonl`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Outcome, RunTranscript, Step};

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} line {line} is not a valid transcript record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path} is missing its trailing outcome record")]
    MissingOutcome { path: PathBuf },
}

#[derive(Serialize, Deserialize)]
struct OutcomeRecord {
    scenario_id: String,
    question_id: String,
    outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    abort: Option<String>,
}

/// Keeps ids usable as file names. Scenario ids are expected to already be
/// plain identifiers; anything else is mapped to underscores.
fn safe_component(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `{root}/{scenario_id}/{question_id}.jsonl` (one object per step,
/// one trailing outcome object) and the final report next to it as
/// `{question_id}.log`. Returns the jsonl path.
pub fn write_transcript(
    root: impl AsRef<Path>,
    transcript: &RunTranscript,
) -> Result<PathBuf, TranscriptError> {
    let dir = root.as_ref().join(safe_component(&transcript.scenario_id));
    fs::create_dir_all(&dir).map_err(|source| TranscriptError::Io {
        path: dir.clone(),
        source,
    })?;

    let jsonl_path = dir.join(format!("{}.jsonl", safe_component(&transcript.question_id)));
    let mut buffer = String::new();
    for step in &transcript.steps {
        buffer.push_str(&serde_json::to_string(step).expect("steps serialize"));
        buffer.push('\n');
    }
    let trailer = OutcomeRecord {
        scenario_id: transcript.scenario_id.clone(),
        question_id: transcript.question_id.clone(),
        outcome: transcript.outcome.clone(),
        abort: transcript.abort.clone(),
    };
    buffer.push_str(&serde_json::to_string(&trailer).expect("outcome serializes"));
    buffer.push('\n');

    let mut file = fs::File::create(&jsonl_path).map_err(|source| TranscriptError::Io {
        path: jsonl_path.clone(),
        source,
    })?;
    file.write_all(buffer.as_bytes())
        .map_err(|source| TranscriptError::Io {
            path: jsonl_path.clone(),
            source,
        })?;

    let log_path = dir.join(format!("{}.log", safe_component(&transcript.question_id)));
    fs::write(&log_path, &transcript.final_report).map_err(|source| TranscriptError::Io {
        path: log_path,
        source,
    })?;
    Ok(jsonl_path)
}

/// Reads a transcript back from its JSON-lines file. The final report is
/// restored from the sibling `.log` file when present.
pub fn read_transcript(jsonl_path: impl AsRef<Path>) -> Result<RunTranscript, TranscriptError> {
    let path = jsonl_path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TranscriptError::Io {
        path: path.to_path_buf(),
        source,
    })?;

    let mut steps: Vec<Step> = Vec::new();
    let mut trailer: Option<OutcomeRecord> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(step) = serde_json::from_str::<Step>(line) {
            steps.push(step);
            continue;
        }
        match serde_json::from_str::<OutcomeRecord>(line) {
            Ok(record) => trailer = Some(record),
            Err(e) => {
                return Err(TranscriptError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    let trailer = trailer.ok_or_else(|| TranscriptError::MissingOutcome {
        path: path.to_path_buf(),
    })?;

    let final_report = fs::read_to_string(path.with_extension("log")).unwrap_or_default();
    Ok(RunTranscript {
        scenario_id: trailer.scenario_id,
        question_id: trailer.question_id,
        steps,
        outcome: trailer.outcome,
        abort: trailer.abort,
        final_report,
    })
}

/// Collects every transcript under a run directory, sorted by scenario and
/// question id for deterministic aggregation.
pub fn read_all_transcripts(root: impl AsRef<Path>) -> Result<Vec<RunTranscript>, TranscriptError> {
    let root = root.as_ref();
    let mut paths = Vec::new();
    let dirs = fs::read_dir(root).map_err(|source| TranscriptError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    for entry in dirs.filter_map(|e| e.ok()) {
        if !entry.path().is_dir() {
            continue;
        }
        let inner = fs::read_dir(entry.path()).map_err(|source| TranscriptError::Io {
            path: entry.path(),
            source,
        })?;
        for file in inner.filter_map(|e| e.ok()) {
            if file.path().extension().is_some_and(|ext| ext == "jsonl") {
                paths.push(file.path());
            }
        }
    }
    paths.sort();
    let mut transcripts = paths
        .iter()
        .map(read_transcript)
        .collect::<Result<Vec<_>, _>>()?;
    transcripts.sort_by(|a, b| {
        (a.scenario_id.as_str(), a.question_id.as_str())
            .cmp(&(b.scenario_id.as_str(), b.question_id.as_str()))
    });
    Ok(transcripts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ToolCall, ToolName};

    fn transcript() -> RunTranscript {
        RunTranscript {
            scenario_id: "fixture".to_string(),
            question_id: "q1".to_string(),
            steps: vec![Step {
                index: 1,
                thought: "look".to_string(),
                action: ToolCall::new(ToolName::ExecuteCommand).with_arg("command", "ls"),
                observation: "capture.pcap\n".to_string(),
                token_count: 3,
                exit_code: Some(0),
            }],
            outcome: Outcome::Answered("capture.pcap".to_string()),
            abort: None,
            final_report: "=== episode ===\n".to_string(),
        }
    }

    #[test]
    fn transcripts_round_trip_through_disk() {
        let tmp = tempfile::tempdir().unwrap();
        let original = transcript();
        let path = write_transcript(tmp.path(), &original).unwrap();
        assert!(path.ends_with("fixture/q1.jsonl"));
        let restored = read_transcript(&path).unwrap();
        assert_eq!(original, restored);
    }

    #[test]
    fn jsonl_has_one_step_line_plus_outcome_trailer() {
        let tmp = tempfile::tempdir().unwrap();
        let path = write_transcript(tmp.path(), &transcript()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("execute_command"));
        assert!(lines[1].contains("Answered"));
    }

    #[test]
    fn read_all_sorts_by_scenario_and_question() {
        let tmp = tempfile::tempdir().unwrap();
        let mut second = transcript();
        second.scenario_id = "zulu".to_string();
        write_transcript(tmp.path(), &second).unwrap();
        write_transcript(tmp.path(), &transcript()).unwrap();
        let all = read_all_transcripts(tmp.path()).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].scenario_id, "fixture");
        assert_eq!(all[1].scenario_id, "zulu");
    }

    #[test]
    fn missing_trailer_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("orphan.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            read_transcript(&path),
            Err(TranscriptError::MissingOutcome { .. })
        ));
    }
}
