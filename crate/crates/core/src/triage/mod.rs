//! Alert-triage dataset pipeline: PCAP segmentation, IDS alert ingestion,
//! flow correlation, ground-truth derivation, and scenario emission.
//!
//! Alert generation itself (running an IDS) is delegated: the pipeline
//! either invokes a configured external IDS command per segment or
//! consumes pre-generated logs.

pub mod alerts;
pub mod emit;
pub mod flows;
pub mod pcap;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alerts::{parse_alerts, AlertDiagnostic, AlertFormat, AlertParseOptions, AlertRecord};
pub use emit::{emit_triage_scenario, write_manifest, write_review, EmittedScenario, ReviewEntry};
pub use flows::{label_alert, load_flow_csv, FlowIndex, FlowKind, FlowLabel, SegmentTraffic};
pub use pcap::{segment_pcap, PcapSegment};

/// Default packet count per PCAP segment.
pub const DEFAULT_SEGMENT_SIZE: usize = 10_000;

/// Default clock skew tolerated between IDS and flow-label timestamps.
pub const DEFAULT_SKEW: Duration = Duration::from_secs(2);

/// Ground truth of one alert-triage scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriageLabel {
    TruePositive,
    FalsePositive,
}

impl TriageLabel {
    /// Reads a label from loose text ("True Positive", "truepositive", ...).
    pub fn parse(text: &str) -> Option<TriageLabel> {
        let squashed: String = text
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        match squashed.as_str() {
            "truepositive" | "tp" => Some(TriageLabel::TruePositive),
            "falsepositive" | "fp" => Some(TriageLabel::FalsePositive),
            _ => None,
        }
    }

    /// The canonical answer string written into scenarios.
    pub fn canonical_answer(&self) -> &'static str {
        match self {
            TriageLabel::TruePositive => "True Positive",
            TriageLabel::FalsePositive => "False Positive",
        }
    }
}

impl fmt::Display for TriageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_answer())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
    Other,
}

impl Protocol {
    pub fn parse(text: &str) -> Protocol {
        match text.trim().to_ascii_lowercase().as_str() {
            "tcp" | "6" => Protocol::Tcp,
            "udp" | "17" => Protocol::Udp,
            "icmp" | "icmpv6" | "1" | "58" => Protocol::Icmp,
            _ => Protocol::Other,
        }
    }

    /// Whether 5-tuple matching compares ports for this protocol.
    pub fn has_ports(&self) -> bool {
        matches!(self, Protocol::Tcp | Protocol::Udp)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Icmp => "ICMP",
            Protocol::Other => "OTHER",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("malformed pcap {path}: {detail}")]
    MalformedPcap { path: PathBuf, detail: String },
    #[error("segment size must be at least one packet")]
    InvalidSegmentSize,
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("flow label csv {path}: {detail}")]
    FlowCsv { path: PathBuf, detail: String },
    #[error("ids command failed on {segment}: {detail}")]
    IdsCommand { segment: PathBuf, detail: String },
    #[error("alert did not match any flow inside mixed traffic")]
    Unlabelable,
    #[error("alert matched both benign and malicious flows")]
    ConflictingMatch,
    #[error("scenario emission failed: {0}")]
    Emit(String),
}

/// Settings for a whole pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub segment_size: usize,
    pub skew: Duration,
    pub alert_format: AlertFormat,
    /// Year assumed for Snort fast timestamps that omit one.
    pub default_year: i32,
    /// Optional external IDS invocation, run once per segment with
    /// `{pcap}` and `{alerts}` placeholders. When absent, a pre-generated
    /// alert log must be supplied instead.
    pub ids_command: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            segment_size: DEFAULT_SEGMENT_SIZE,
            skew: DEFAULT_SKEW,
            alert_format: AlertFormat::SnortFast,
            default_year: 1970,
            ids_command: None,
        }
    }
}

/// Outcome of a pipeline run: emitted scenarios, alerts deferred to manual
/// review, and parser diagnostics.
#[derive(Debug, Default)]
pub struct PipelineReport {
    pub scenarios: Vec<EmittedScenario>,
    pub review: Vec<ReviewEntry>,
    pub segments: Vec<PcapSegment>,
    pub diagnostics: Vec<AlertDiagnostic>,
}

/// Runs the full pipeline: segment every `*.pcap` under `pcap_dir`,
/// collect alerts (external IDS or pre-generated log), correlate against
/// labeled flows, and emit one scenario per alert. Unlabelable and
/// conflicting alerts land in the review list, never abort the run.
///
/// Multiple alerts for one segment each become their own scenario,
/// deduplicated by (gid, sid, 5-tuple, second-truncated timestamp).
pub fn build_triage_suite(
    pcap_dir: &Path,
    alerts_path: Option<&Path>,
    flows_path: &Path,
    out_dir: &Path,
    config: &PipelineConfig,
) -> Result<PipelineReport, TriageError> {
    let mut report = PipelineReport::default();

    let mut pcaps: Vec<PathBuf> = std::fs::read_dir(pcap_dir)
        .map_err(|source| TriageError::Io {
            path: pcap_dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "pcap"))
        .collect();
    pcaps.sort();

    let segment_dir = out_dir.join("segments");
    std::fs::create_dir_all(&segment_dir).map_err(|source| TriageError::Io {
        path: segment_dir.clone(),
        source,
    })?;
    for pcap in &pcaps {
        report
            .segments
            .extend(segment_pcap(pcap, config.segment_size, &segment_dir)?);
    }

    let flows = load_flow_csv(flows_path)?;
    let index = FlowIndex::build(&flows, config.skew);
    let skew_micros = config.skew.as_micros() as i64;

    // (segment index, alert) pairs to label.
    let mut located: Vec<(usize, AlertRecord)> = Vec::new();
    let parse_options = AlertParseOptions {
        format: config.alert_format,
        default_year: config.default_year,
    };

    if let Some(template) = &config.ids_command {
        for (i, segment) in report.segments.iter().enumerate() {
            let alert_file = segment.output_path.with_extension("alerts");
            run_ids_command(template, &segment.output_path, &alert_file)?;
            let parsed = parse_alerts(&alert_file, &parse_options)?;
            report.diagnostics.extend(parsed.diagnostics);
            located.extend(parsed.records.into_iter().map(|a| (i, a)));
        }
    } else {
        let alerts_path = alerts_path.ok_or_else(|| {
            TriageError::Emit("either an alert log or an ids command is required".to_string())
        })?;
        let parsed = parse_alerts(alerts_path, &parse_options)?;
        report.diagnostics.extend(parsed.diagnostics);
        for alert in parsed.records {
            match locate_segment(&report.segments, alert.timestamp_micros, skew_micros) {
                Some(i) => located.push((i, alert)),
                None => report.review.push(ReviewEntry {
                    alert_line: alert.raw_line.clone(),
                    reason: "no segment covers the alert timestamp".to_string(),
                }),
            }
        }
    }

    // A segment is all-benign when no malicious flow window intersects it.
    let traffic_kinds: Vec<SegmentTraffic> = report
        .segments
        .iter()
        .map(|segment| {
            if index.any_malicious_overlap(
                segment.first_ts_micros - skew_micros,
                segment.last_ts_micros + skew_micros,
            ) {
                SegmentTraffic::Mixed
            } else {
                SegmentTraffic::AllBenign
            }
        })
        .collect();

    let mut seen = std::collections::BTreeSet::new();
    for (segment_index, alert) in located {
        let dedup_key = (
            alert.gid,
            alert.sid,
            alert.canonical_tuple(),
            alert.timestamp_micros / 1_000_000,
        );
        if !seen.insert(dedup_key) {
            continue;
        }
        let segment = &report.segments[segment_index];
        match label_alert(&alert, &index, traffic_kinds[segment_index]) {
            Ok(label) => {
                let emitted = emit_triage_scenario(&alert, segment, label, out_dir)?;
                report.scenarios.push(emitted);
            }
            Err(TriageError::Unlabelable) => report.review.push(ReviewEntry {
                alert_line: alert.raw_line.clone(),
                reason: "unlabelable: no flow match inside mixed traffic".to_string(),
            }),
            Err(TriageError::ConflictingMatch) => report.review.push(ReviewEntry {
                alert_line: alert.raw_line.clone(),
                reason: "conflicting match: alert matches both benign and malicious flows"
                    .to_string(),
            }),
            Err(other) => return Err(other),
        }
    }

    write_manifest(out_dir, &report.scenarios)?;
    write_review(out_dir, &report.review)?;
    Ok(report)
}

fn locate_segment(segments: &[PcapSegment], ts: i64, skew: i64) -> Option<usize> {
    segments
        .iter()
        .position(|s| ts >= s.first_ts_micros && ts <= s.last_ts_micros)
        .or_else(|| {
            segments
                .iter()
                .position(|s| ts >= s.first_ts_micros - skew && ts <= s.last_ts_micros + skew)
        })
}

fn run_ids_command(template: &str, pcap: &Path, alerts: &Path) -> Result<(), TriageError> {
    let command = template
        .replace("{pcap}", &pcap.display().to_string())
        .replace("{alerts}", &alerts.display().to_string());
    let status = std::process::Command::new("/bin/sh")
        .arg("-c")
        .arg(&command)
        .status()
        .map_err(|e| TriageError::IdsCommand {
            segment: pcap.to_path_buf(),
            detail: e.to_string(),
        })?;
    if !status.success() {
        return Err(TriageError::IdsCommand {
            segment: pcap.to_path_buf(),
            detail: format!("{command:?} exited with {status}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triage_labels_parse_from_loose_text() {
        assert_eq!(
            TriageLabel::parse("True Positive"),
            Some(TriageLabel::TruePositive)
        );
        assert_eq!(
            TriageLabel::parse("falsepositive"),
            Some(TriageLabel::FalsePositive)
        );
        assert_eq!(TriageLabel::parse("benign"), None);
    }

    #[test]
    fn protocol_parsing_covers_names_and_numbers() {
        assert_eq!(Protocol::parse("TCP"), Protocol::Tcp);
        assert_eq!(Protocol::parse("17"), Protocol::Udp);
        assert_eq!(Protocol::parse("icmp"), Protocol::Icmp);
        assert_eq!(Protocol::parse("gre"), Protocol::Other);
        assert!(!Protocol::Icmp.has_ports());
    }
}
