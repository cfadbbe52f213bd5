//! Triage scenario emission: one scenario JSON per labeled alert, plus the
//! suite manifest and the manual-review file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::alerts::AlertRecord;
use super::pcap::PcapSegment;
use super::{TriageError, TriageLabel};
use crate::scenario::{
    ArtifactKind, ArtifactRef, GroundTruth, MatchMode, Question, Scenario, TaskCategory, TaskLevel,
};

/// The one question every triage scenario asks.
pub const TRIAGE_QUESTION: &str = "Analyze the provided PCAP file and determine if the generated alert is a false positive or true positive.";

const TRIAGE_INSTRUCTION: &str = "Inspect the provided capture with the suggested tools and decide \
whether the alerted activity is actually present. Conclude with either true positive or false positive.";

/// Record of one emitted scenario, also a manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedScenario {
    pub scenario_id: String,
    pub label: TriageLabel,
    pub alert_line: String,
    pub json_path: PathBuf,
}

/// An alert deferred to manual review instead of emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub alert_line: String,
    pub reason: String,
}

fn id_fragment(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect()
}

fn scenario_id(alert: &AlertRecord, segment: &PcapSegment) -> String {
    let stem = segment
        .output_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "segment".to_string());
    let endpoint = |ip: std::net::IpAddr, port: Option<u16>| match port {
        Some(port) => format!("{}-{port}", id_fragment(&ip.to_string())),
        None => id_fragment(&ip.to_string()),
    };
    format!(
        "triage-{}-{}-{}-{}-{}-{}",
        id_fragment(&stem),
        alert.gid,
        alert.sid,
        alert.timestamp_micros / 1_000_000,
        endpoint(alert.src_ip, alert.src_port),
        endpoint(alert.dst_ip, alert.dst_port),
    )
}

/// Writes one triage scenario: `{out_dir}/{id}.json` plus the segment
/// copied to `{out_dir}/{id}/capture.pcap`. The emitted JSON passes
/// scenario loading and validation as-is.
pub fn emit_triage_scenario(
    alert: &AlertRecord,
    segment: &PcapSegment,
    label: TriageLabel,
    out_dir: impl AsRef<Path>,
) -> Result<EmittedScenario, TriageError> {
    let out_dir = out_dir.as_ref();
    let id = scenario_id(alert, segment);

    let evidence_dir = out_dir.join(&id);
    fs::create_dir_all(&evidence_dir).map_err(|source| TriageError::Io {
        path: evidence_dir.clone(),
        source,
    })?;
    let capture_path = evidence_dir.join("capture.pcap");
    fs::copy(&segment.output_path, &capture_path).map_err(|source| TriageError::Io {
        path: capture_path.clone(),
        source,
    })?;

    let scenario = Scenario {
        id: id.clone(),
        description: format!(
            "The SOC team has received the following alert: {}. A PCAP file has been provided to investigate the alert.",
            alert.raw_line
        ),
        artifacts: vec![ArtifactRef {
            filename: "capture.pcap".to_string(),
            kind: ArtifactKind::Pcap,
        }],
        directory: id.clone(),
        tools: vec!["tshark".to_string()],
        basic_instruction: TRIAGE_INSTRUCTION.to_string(),
        questions: vec![Question {
            id: "q1".to_string(),
            prompt: TRIAGE_QUESTION.to_string(),
            tactic: None,
            ground_truth: GroundTruth {
                canonical_answer: label.canonical_answer().to_string(),
                accepted_aliases: vec![],
                match_mode: MatchMode::Label,
            },
            depends_on: vec![],
        }],
        task_category: TaskCategory::AlertTriage,
        task_level: TaskLevel::Unspecified,
    };

    let json_path = out_dir.join(format!("{id}.json"));
    let body = serde_json::to_string_pretty(&scenario)
        .map_err(|e| TriageError::Emit(e.to_string()))?;
    fs::write(&json_path, body).map_err(|source| TriageError::Io {
        path: json_path.clone(),
        source,
    })?;

    Ok(EmittedScenario {
        scenario_id: id,
        label,
        alert_line: alert.raw_line.clone(),
        json_path,
    })
}

/// Writes `manifest.csv`: one row per emitted scenario with its label and
/// source alert line.
pub fn write_manifest(
    out_dir: impl AsRef<Path>,
    scenarios: &[EmittedScenario],
) -> Result<PathBuf, TriageError> {
    let path = out_dir.as_ref().join("manifest.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| TriageError::Emit(e.to_string()))?;
    writer
        .write_record(["scenario_id", "label", "alert_line"])
        .map_err(|e| TriageError::Emit(e.to_string()))?;
    for emitted in scenarios {
        writer
            .write_record([
                emitted.scenario_id.as_str(),
                emitted.label.canonical_answer(),
                emitted.alert_line.as_str(),
            ])
            .map_err(|e| TriageError::Emit(e.to_string()))?;
    }
    writer.flush().map_err(|e| TriageError::Emit(e.to_string()))?;
    Ok(path)
}

/// Writes `review.csv` listing alerts that need a human decision.
pub fn write_review(
    out_dir: impl AsRef<Path>,
    entries: &[ReviewEntry],
) -> Result<PathBuf, TriageError> {
    let path = out_dir.as_ref().join("review.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| TriageError::Emit(e.to_string()))?;
    writer
        .write_record(["alert_line", "reason"])
        .map_err(|e| TriageError::Emit(e.to_string()))?;
    for entry in entries {
        writer
            .write_record([entry.alert_line.as_str(), entry.reason.as_str()])
            .map_err(|e| TriageError::Emit(e.to_string()))?;
    }
    writer.flush().map_err(|e| TriageError::Emit(e.to_string()))?;
    Ok(path)
}
