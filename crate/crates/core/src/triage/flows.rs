//! Labeled flow ingestion and 5-tuple correlation.
//!
//! Flow label CSVs record flows in initiator direction while alerts may
//! fire on responder packets, so matching is bidirectional. IDS and flow
//! clocks in public datasets disagree at second granularity, hence the
//! configurable timestamp skew.

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::alerts::AlertRecord;
use super::{Protocol, TriageError, TriageLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    Benign,
    Malicious(String),
}

impl FlowKind {
    pub fn is_malicious(&self) -> bool {
        matches!(self, FlowKind::Malicious(_))
    }
}

/// One labeled flow row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLabel {
    pub src_ip: IpAddr,
    pub src_port: Option<u16>,
    pub dst_ip: IpAddr,
    pub dst_port: Option<u16>,
    pub protocol: Protocol,
    pub start_ts_micros: i64,
    pub end_ts_micros: i64,
    pub label: FlowKind,
}

type EndpointKey = (IpAddr, Option<u16>);
type TupleKey = (EndpointKey, EndpointKey, Protocol);

fn canonical_key(
    src_ip: IpAddr,
    src_port: Option<u16>,
    dst_ip: IpAddr,
    dst_port: Option<u16>,
    protocol: Protocol,
) -> TupleKey {
    let src_port = protocol.has_ports().then_some(src_port).flatten();
    let dst_port = protocol.has_ports().then_some(dst_port).flatten();
    let a = (src_ip, src_port);
    let b = (dst_ip, dst_port);
    if a <= b {
        (a, b, protocol)
    } else {
        (b, a, protocol)
    }
}

impl FlowLabel {
    fn key(&self) -> TupleKey {
        canonical_key(
            self.src_ip,
            self.src_port,
            self.dst_ip,
            self.dst_port,
            self.protocol,
        )
    }
}

/// Whether a PCAP segment contains attack traffic at all; decides how an
/// unmatched alert is labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentTraffic {
    Mixed,
    AllBenign,
}

/// Hash index over canonical 5-tuples with per-flow time windows.
pub struct FlowIndex<'a> {
    map: HashMap<TupleKey, Vec<&'a FlowLabel>>,
    skew_micros: i64,
    malicious_windows: Vec<(i64, i64)>,
}

impl<'a> FlowIndex<'a> {
    pub fn build(flows: &'a [FlowLabel], skew: Duration) -> Self {
        let mut map: HashMap<TupleKey, Vec<&FlowLabel>> = HashMap::new();
        let mut malicious_windows = Vec::new();
        for flow in flows {
            map.entry(flow.key()).or_default().push(flow);
            if flow.label.is_malicious() {
                malicious_windows.push((flow.start_ts_micros, flow.end_ts_micros));
            }
        }
        FlowIndex {
            map,
            skew_micros: skew.as_micros() as i64,
            malicious_windows,
        }
    }

    /// Flows matching the alert's 5-tuple in either direction whose time
    /// window (widened by the skew) covers the alert timestamp.
    pub fn matches(&self, alert: &AlertRecord) -> Vec<&'a FlowLabel> {
        let (a, b, protocol) = alert.canonical_tuple();
        let key = (a, b, protocol);
        let Some(candidates) = self.map.get(&key) else {
            return Vec::new();
        };
        candidates
            .iter()
            .copied()
            .filter(|flow| {
                alert.timestamp_micros >= flow.start_ts_micros - self.skew_micros
                    && alert.timestamp_micros <= flow.end_ts_micros + self.skew_micros
            })
            .collect()
    }

    /// True when any malicious flow window intersects `[from, to]`.
    pub fn any_malicious_overlap(&self, from: i64, to: i64) -> bool {
        self.malicious_windows
            .iter()
            .any(|&(start, end)| start <= to && end >= from)
    }
}

/// Derives the triage ground truth for one alert.
///
/// Matching only malicious flows makes a true positive. Matching any
/// benign flow, or matching nothing inside all-benign traffic, makes a
/// false positive. Matching both kinds needs manual review; matching
/// nothing inside mixed traffic cannot be labeled.
pub fn label_alert(
    alert: &AlertRecord,
    index: &FlowIndex<'_>,
    traffic: SegmentTraffic,
) -> Result<TriageLabel, TriageError> {
    let matches = index.matches(alert);
    let any_malicious = matches.iter().any(|f| f.label.is_malicious());
    let any_benign = matches.iter().any(|f| !f.label.is_malicious());
    match (any_malicious, any_benign) {
        (true, true) => Err(TriageError::ConflictingMatch),
        (true, false) => Ok(TriageLabel::TruePositive),
        (false, true) => Ok(TriageLabel::FalsePositive),
        (false, false) => match traffic {
            SegmentTraffic::AllBenign => Ok(TriageLabel::FalsePositive),
            SegmentTraffic::Mixed => Err(TriageError::Unlabelable),
        },
    }
}

/// Loads a flow label CSV. The header row must name the columns
/// src_ip, src_port, dst_ip, dst_port, protocol, start_ts, end_ts, label
/// (any order, extra columns ignored); timestamps are integer microseconds
/// and a label of "benign" in any casing means benign, anything else is
/// the attack name.
pub fn load_flow_csv(path: impl AsRef<Path>) -> Result<Vec<FlowLabel>, TriageError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TriageError::FlowCsv {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;

    let fail = |detail: String| TriageError::FlowCsv {
        path: path.to_path_buf(),
        detail,
    };

    let headers = reader
        .headers()
        .map_err(|e| fail(e.to_string()))?
        .clone();
    let column = |name: &str| -> Result<usize, TriageError> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| fail(format!("missing column {name:?}")))
    };
    let src_ip_col = column("src_ip")?;
    let src_port_col = column("src_port")?;
    let dst_ip_col = column("dst_ip")?;
    let dst_port_col = column("dst_port")?;
    let proto_col = column("protocol")?;
    let start_col = column("start_ts")?;
    let end_col = column("end_ts")?;
    let label_col = column("label")?;

    let mut flows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| fail(format!("row {}: {e}", i + 2)))?;
        let cell = |col: usize| row.get(col).unwrap_or("");
        let row_fail = |detail: &str| fail(format!("row {}: {detail}", i + 2));

        let protocol = Protocol::parse(cell(proto_col));
        let parse_port = |col: usize| -> Result<Option<u16>, TriageError> {
            let text = cell(col);
            if text.is_empty() || !protocol.has_ports() {
                return Ok(None);
            }
            text.parse::<u16>()
                .map(Some)
                .map_err(|_| row_fail(&format!("bad port {text:?}")))
        };

        let start_ts_micros: i64 = cell(start_col)
            .parse()
            .map_err(|_| row_fail("start_ts is not integer microseconds"))?;
        let end_ts_micros: i64 = cell(end_col)
            .parse()
            .map_err(|_| row_fail("end_ts is not integer microseconds"))?;
        if start_ts_micros > end_ts_micros {
            return Err(row_fail("start_ts is after end_ts"));
        }
        let label_text = cell(label_col);
        let label = if label_text.eq_ignore_ascii_case("benign") {
            FlowKind::Benign
        } else if label_text.is_empty() {
            return Err(row_fail("empty label"));
        } else {
            FlowKind::Malicious(label_text.to_string())
        };

        flows.push(FlowLabel {
            src_ip: IpAddr::from_str(cell(src_ip_col))
                .map_err(|_| row_fail(&format!("bad src_ip {:?}", cell(src_ip_col))))?,
            src_port: parse_port(src_port_col)?,
            dst_ip: IpAddr::from_str(cell(dst_ip_col))
                .map_err(|_| row_fail(&format!("bad dst_ip {:?}", cell(dst_ip_col))))?,
            dst_port: parse_port(dst_port_col)?,
            protocol,
            start_ts_micros,
            end_ts_micros,
            label,
        });
    }
    Ok(flows)
}
