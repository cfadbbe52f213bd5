//! IDS alert ingestion: Snort fast-alert text and Suricata eve.json.
//!
//! Unparseable lines become diagnostics, never hard failures, so one
//! mangled line cannot sink a whole dataset build.

use std::fmt::Write as _;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Protocol, TriageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertFormat {
    SnortFast,
    SuricataEve,
}

/// One parsed IDS alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub timestamp_micros: i64,
    pub gid: u32,
    pub sid: u32,
    pub rev: u32,
    pub message: String,
    pub priority: u32,
    pub protocol: Protocol,
    pub src_ip: IpAddr,
    pub src_port: Option<u16>,
    pub dst_ip: IpAddr,
    pub dst_port: Option<u16>,
    pub source_format: AlertFormat,
    /// The alert as one line of text: the source line for fast alerts, a
    /// reconstructed fast-style line for eve events. Interpolated into
    /// scenario descriptions and the manifest.
    pub raw_line: String,
}

impl AlertRecord {
    /// Direction-independent 5-tuple, for deduplication and indexing.
    pub fn canonical_tuple(
        &self,
    ) -> ((IpAddr, Option<u16>), (IpAddr, Option<u16>), Protocol) {
        let src_port = self.protocol.has_ports().then_some(self.src_port).flatten();
        let dst_port = self.protocol.has_ports().then_some(self.dst_port).flatten();
        let a = (self.src_ip, src_port);
        let b = (self.dst_ip, dst_port);
        if a <= b {
            (a, b, self.protocol)
        } else {
            (b, a, self.protocol)
        }
    }
}

/// A line the parser had to skip, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDiagnostic {
    pub line_number: usize,
    pub line: String,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParsedAlerts {
    pub records: Vec<AlertRecord>,
    pub diagnostics: Vec<AlertDiagnostic>,
}

#[derive(Debug, Clone, Copy)]
pub struct AlertParseOptions {
    pub format: AlertFormat,
    /// Snort fast timestamps omit the year; this one is assumed.
    pub default_year: i32,
}

impl Default for AlertParseOptions {
    fn default() -> Self {
        AlertParseOptions {
            format: AlertFormat::SnortFast,
            default_year: 1970,
        }
    }
}

/// Parses an alert log. IO problems are errors; content problems are
/// per-line diagnostics.
pub fn parse_alerts(
    path: impl AsRef<Path>,
    options: &AlertParseOptions,
) -> Result<ParsedAlerts, TriageError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TriageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_alert_text(&text, options))
}

pub fn parse_alert_text(text: &str, options: &AlertParseOptions) -> ParsedAlerts {
    let mut parsed = ParsedAlerts::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let outcome = match options.format {
            AlertFormat::SnortFast => parse_fast_line(line, options.default_year),
            AlertFormat::SuricataEve => parse_eve_line(line),
        };
        match outcome {
            Ok(Some(record)) => parsed.records.push(record),
            Ok(None) => {} // valid eve event of another type
            Err(reason) => parsed.diagnostics.push(AlertDiagnostic {
                line_number: i + 1,
                line: line.to_string(),
                reason,
            }),
        }
    }
    parsed
}

fn fast_line_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?x)^
            (?P<month>\d{2})/(?P<day>\d{2})(?:/(?P<year>\d{2,4}))?
            -(?P<hour>\d{2}):(?P<minute>\d{2}):(?P<second>\d{2})\.(?P<micros>\d{6})
            \s+\[\*\*\]\s+
            \[(?P<gid>\d+):(?P<sid>\d+):(?P<rev>\d+)\]\s+
            (?P<message>.*?)\s+\[\*\*\]\s+
            (?:\[Classification:\s*[^\]]*\]\s+)?
            \[Priority:\s*(?P<priority>\d+)\]\s+
            \{(?P<proto>[^}]+)\}\s+
            (?P<src>\S+)\s+-+>?\s+(?P<dst>\S+)
            \s*$",
        )
        .expect("fast alert regex compiles")
    })
}

fn parse_fast_line(line: &str, default_year: i32) -> Result<Option<AlertRecord>, String> {
    let captures = fast_line_regex()
        .captures(line)
        .ok_or_else(|| "line does not match the fast alert layout".to_string())?;

    let field = |name: &str| captures.name(name).map(|m| m.as_str()).unwrap_or("");
    let number = |name: &str| -> Result<u32, String> {
        field(name)
            .parse()
            .map_err(|_| format!("field {name} is not a number"))
    };

    let year = match captures.name("year") {
        Some(text) => {
            let value: i32 = text.as_str().parse().map_err(|_| "bad year".to_string())?;
            if text.as_str().len() == 2 {
                if value < 70 {
                    2000 + value
                } else {
                    1900 + value
                }
            } else {
                value
            }
        }
        None => default_year,
    };
    let date = NaiveDate::from_ymd_opt(year, number("month")?, number("day")?)
        .ok_or_else(|| "invalid calendar date".to_string())?;
    let timestamp = date
        .and_hms_micro_opt(number("hour")?, number("minute")?, number("second")?, number("micros")?)
        .ok_or_else(|| "invalid time of day".to_string())?
        .and_utc()
        .timestamp_micros();

    let protocol = Protocol::parse(field("proto"));
    let (src_ip, src_port) = split_endpoint(field("src"), protocol)?;
    let (dst_ip, dst_port) = split_endpoint(field("dst"), protocol)?;
    if protocol.has_ports() && (src_port.is_none() || dst_port.is_none()) {
        return Err(format!("{protocol} alert is missing a port"));
    }

    Ok(Some(AlertRecord {
        timestamp_micros: timestamp,
        gid: number("gid")?,
        sid: number("sid")?,
        rev: number("rev")?,
        message: field("message").to_string(),
        priority: number("priority")?,
        protocol,
        src_ip,
        src_port,
        dst_ip,
        dst_port,
        source_format: AlertFormat::SnortFast,
        raw_line: line.trim().to_string(),
    }))
}

/// Splits `ip` or `ip:port`. The port is taken from the last colon when
/// the protocol carries ports and the remainder parses as an address.
fn split_endpoint(token: &str, protocol: Protocol) -> Result<(IpAddr, Option<u16>), String> {
    if let Ok(ip) = IpAddr::from_str(token) {
        return Ok((ip, None));
    }
    if let Some((addr, port)) = token.rsplit_once(':') {
        if let (Ok(ip), Ok(port)) = (IpAddr::from_str(addr), port.parse::<u16>()) {
            let port = protocol.has_ports().then_some(port);
            return Ok((ip, port));
        }
    }
    Err(format!("endpoint {token:?} is not an address"))
}

#[derive(Deserialize)]
struct EveEvent {
    timestamp: Option<String>,
    event_type: Option<String>,
    src_ip: Option<String>,
    src_port: Option<u16>,
    dest_ip: Option<String>,
    dest_port: Option<u16>,
    proto: Option<String>,
    alert: Option<EveAlert>,
}

#[derive(Deserialize)]
struct EveAlert {
    #[serde(default = "default_gid")]
    gid: u32,
    signature_id: u32,
    #[serde(default)]
    rev: u32,
    signature: Option<String>,
    #[serde(default = "default_severity")]
    severity: u32,
}

fn default_gid() -> u32 {
    1
}

fn default_severity() -> u32 {
    3
}

fn parse_eve_timestamp(text: &str) -> Result<i64, String> {
    DateTime::parse_from_rfc3339(text)
        .or_else(|_| DateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f%z"))
        .map(|dt| dt.timestamp_micros())
        .map_err(|e| format!("bad eve timestamp {text:?}: {e}"))
}

fn parse_eve_line(line: &str) -> Result<Option<AlertRecord>, String> {
    let event: EveEvent =
        serde_json::from_str(line).map_err(|e| format!("not a valid eve event: {e}"))?;
    if event.event_type.as_deref() != Some("alert") {
        return Ok(None);
    }
    let alert = event.alert.ok_or("alert event without an alert object")?;
    let timestamp =
        parse_eve_timestamp(event.timestamp.as_deref().ok_or("alert without timestamp")?)?;
    let protocol = Protocol::parse(event.proto.as_deref().unwrap_or(""));
    let src_ip = IpAddr::from_str(event.src_ip.as_deref().ok_or("missing src_ip")?)
        .map_err(|_| "src_ip is not an address".to_string())?;
    let dst_ip = IpAddr::from_str(event.dest_ip.as_deref().ok_or("missing dest_ip")?)
        .map_err(|_| "dest_ip is not an address".to_string())?;
    let src_port = protocol.has_ports().then_some(event.src_port).flatten();
    let dst_port = protocol.has_ports().then_some(event.dest_port).flatten();
    if protocol.has_ports() && (src_port.is_none() || dst_port.is_none()) {
        return Err(format!("{protocol} alert is missing a port"));
    }

    let message = alert.signature.unwrap_or_default();
    let mut record = AlertRecord {
        timestamp_micros: timestamp,
        gid: alert.gid,
        sid: alert.signature_id,
        rev: alert.rev,
        message,
        priority: alert.severity,
        protocol,
        src_ip,
        src_port,
        dst_ip,
        dst_port,
        source_format: AlertFormat::SuricataEve,
        raw_line: String::new(),
    };
    record.raw_line = render_fast_line(&record);
    Ok(Some(record))
}

/// Renders an alert in the fast-alert layout, used to give eve events a
/// displayable one-line form.
pub fn render_fast_line(record: &AlertRecord) -> String {
    let datetime = DateTime::from_timestamp_micros(record.timestamp_micros)
        .unwrap_or_else(|| DateTime::from_timestamp_micros(0).expect("epoch is representable"));
    let mut line = String::new();
    let _ = write!(
        line,
        "{} [**] [{}:{}:{}] {} [**] [Priority: {}] {{{}}} ",
        datetime.format("%m/%d-%H:%M:%S%.6f"),
        record.gid,
        record.sid,
        record.rev,
        record.message,
        record.priority,
        record.protocol,
    );
    let endpoint = |ip: IpAddr, port: Option<u16>| match port {
        Some(port) => format!("{ip}:{port}"),
        None => ip.to_string(),
    };
    let _ = write!(
        line,
        "{} -> {}",
        endpoint(record.src_ip, record.src_port),
        endpoint(record.dst_ip, record.dst_port),
    );
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    const PORTSCAN_LINE: &str = "07/07-08:00:50.818009 [**] [122:1:1] (port_scan) TCP portscan [**] [Priority: 3] {TCP} 192.168.10.3:88 - 192.168.10.5:49175";

    #[test]
    fn portscan_fast_line_parses_to_exact_fields() {
        let record = parse_fast_line(PORTSCAN_LINE, 2017).unwrap().unwrap();
        assert_eq!(record.gid, 122);
        assert_eq!(record.sid, 1);
        assert_eq!(record.rev, 1);
        assert_eq!(record.message, "(port_scan) TCP portscan");
        assert_eq!(record.priority, 3);
        assert_eq!(record.protocol, Protocol::Tcp);
        assert_eq!(record.src_ip, IpAddr::from_str("192.168.10.3").unwrap());
        assert_eq!(record.src_port, Some(88));
        assert_eq!(record.dst_ip, IpAddr::from_str("192.168.10.5").unwrap());
        assert_eq!(record.dst_port, Some(49175));
        assert_eq!(record.source_format, AlertFormat::SnortFast);
        assert_eq!(record.raw_line, PORTSCAN_LINE);
    }

    #[test]
    fn arrow_separator_and_explicit_year_are_accepted() {
        let line = "07/07/17-08:00:50.818009 [**] [1:2019416:3] ET SCAN Possible Nmap Scan [**] [Classification: Attempted Recon] [Priority: 2] {TCP} 10.0.0.1:55555 -> 10.0.0.2:22";
        let record = parse_fast_line(line, 1970).unwrap().unwrap();
        assert_eq!(record.sid, 2019416);
        assert_eq!(record.message, "ET SCAN Possible Nmap Scan");
        // 2017-07-07T08:00:50.818009Z
        let datetime = DateTime::from_timestamp_micros(record.timestamp_micros).unwrap();
        assert_eq!(datetime.format("%Y-%m-%d").to_string(), "2017-07-07");
    }

    #[test]
    fn icmp_alerts_carry_no_ports() {
        let line = "07/07-08:00:50.000001 [**] [1:408:5] ICMP Echo Reply [**] [Priority: 3] {ICMP} 192.168.10.3 - 192.168.10.5";
        let record = parse_fast_line(line, 1970).unwrap().unwrap();
        assert_eq!(record.protocol, Protocol::Icmp);
        assert_eq!(record.src_port, None);
        assert_eq!(record.dst_port, None);
    }

    #[test]
    fn garbage_lines_become_diagnostics_not_failures() {
        let text = format!("{PORTSCAN_LINE}\nthis is not an alert\n{PORTSCAN_LINE}\n");
        let text = text.replace("192.168.10.3:88", "192.168.10.9:90");
        let parsed = parse_alert_text(&text, &AlertParseOptions::default());
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].line_number, 2);
    }

    #[test]
    fn eve_alert_event_maps_to_an_equivalent_record() {
        let line = r#"{"timestamp":"2017-07-07T08:00:50.818009+0000","event_type":"alert","src_ip":"192.168.10.3","src_port":88,"dest_ip":"192.168.10.5","dest_port":49175,"proto":"TCP","alert":{"action":"allowed","gid":122,"signature_id":1,"rev":1,"signature":"(port_scan) TCP portscan","severity":3}}"#;
        let record = parse_eve_line(line).unwrap().unwrap();
        assert_eq!(record.source_format, AlertFormat::SuricataEve);
        assert_eq!(record.sid, 1);
        assert_eq!(record.gid, 122);
        assert_eq!(record.src_port, Some(88));
        assert_eq!(record.message, "(port_scan) TCP portscan");
        assert!(record.raw_line.contains("192.168.10.3:88 -> 192.168.10.5:49175"));

        let fast = parse_fast_line(PORTSCAN_LINE, 2017).unwrap().unwrap();
        assert_eq!(record.timestamp_micros, fast.timestamp_micros);
        assert_eq!(record.canonical_tuple(), fast.canonical_tuple());
    }

    #[test]
    fn non_alert_eve_events_are_skipped_silently() {
        let text = concat!(
            r#"{"timestamp":"2017-07-07T08:00:50.000000+0000","event_type":"flow","proto":"TCP"}"#,
            "\n",
            r#"{"timestamp":"2017-07-07T08:00:51.000000+0000","event_type":"alert","src_ip":"10.0.0.1","src_port":1,"dest_ip":"10.0.0.2","dest_port":2,"proto":"TCP","alert":{"signature_id":7,"signature":"x"}}"#,
        );
        let options = AlertParseOptions {
            format: AlertFormat::SuricataEve,
            default_year: 1970,
        };
        let parsed = parse_alert_text(text, &options);
        assert_eq!(parsed.records.len(), 1);
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn canonical_tuple_is_direction_independent() {
        let forward = parse_fast_line(PORTSCAN_LINE, 2017).unwrap().unwrap();
        let reversed_line = PORTSCAN_LINE
            .replace("192.168.10.3:88 - 192.168.10.5:49175", "192.168.10.5:49175 - 192.168.10.3:88");
        let reversed = parse_fast_line(&reversed_line, 2017).unwrap().unwrap();
        assert_eq!(forward.canonical_tuple(), reversed.canonical_tuple());
    }
}
