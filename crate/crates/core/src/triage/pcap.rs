//! Classic libpcap reading, writing, and packet-level segmentation.
//!
//! Both byte orders and both timestamp resolutions (microsecond and
//! nanosecond magics) are accepted; pcapng is out of scope. Record headers
//! and payload bytes pass through segmentation untouched, so concatenating
//! the segments' records reproduces the source records exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TriageError;

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const MAGIC_MICROS_SWAPPED: u32 = 0xd4c3_b2a1;
const MAGIC_NANOS_SWAPPED: u32 = 0x4d3c_b2a1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

/// Upper bound on a sane capture length; larger values mean a corrupt
/// record header.
const MAX_RECORD_BYTES: u32 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn read_u32(&self, bytes: &[u8]) -> u32 {
        let array: [u8; 4] = bytes[..4].try_into().expect("four bytes");
        match self {
            ByteOrder::Little => u32::from_le_bytes(array),
            ByteOrder::Big => u32::from_be_bytes(array),
        }
    }
}

/// One packet record with its raw 16-byte header preserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub header: [u8; RECORD_HEADER_LEN],
    pub data: Vec<u8>,
    /// Timestamp in microseconds since the epoch; nanosecond captures are
    /// down-converted for correlation.
    pub ts_micros: i64,
}

/// Streaming reader over a classic pcap file.
pub struct PcapReader<R> {
    input: R,
    path: PathBuf,
    order: ByteOrder,
    nanos: bool,
    global_header: [u8; GLOBAL_HEADER_LEN],
}

impl PcapReader<BufReader<fs::File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TriageError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| TriageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), path)
    }
}

impl<R: Read> PcapReader<R> {
    pub fn from_reader(mut input: R, path: &Path) -> Result<Self, TriageError> {
        let mut global_header = [0u8; GLOBAL_HEADER_LEN];
        input
            .read_exact(&mut global_header)
            .map_err(|_| TriageError::MalformedPcap {
                path: path.to_path_buf(),
                detail: "file is shorter than the global header".to_string(),
            })?;
        let magic = u32::from_le_bytes(global_header[..4].try_into().unwrap());
        let (order, nanos) = match magic {
            MAGIC_MICROS => (ByteOrder::Little, false),
            MAGIC_MICROS_SWAPPED => (ByteOrder::Big, false),
            MAGIC_NANOS => (ByteOrder::Little, true),
            MAGIC_NANOS_SWAPPED => (ByteOrder::Big, true),
            other => {
                return Err(TriageError::MalformedPcap {
                    path: path.to_path_buf(),
                    detail: format!("bad magic number 0x{other:08x}"),
                })
            }
        };
        Ok(PcapReader {
            input,
            path: path.to_path_buf(),
            order,
            nanos,
            global_header,
        })
    }

    /// The source file's 24-byte global header, verbatim.
    pub fn global_header(&self) -> [u8; GLOBAL_HEADER_LEN] {
        self.global_header
    }

    /// Reads the next record; `None` at a clean end of file. A partial
    /// header or payload is malformed, not end of file.
    pub fn next_record(&mut self) -> Result<Option<PcapRecord>, TriageError> {
        let mut header = [0u8; RECORD_HEADER_LEN];
        let mut read = 0;
        while read < RECORD_HEADER_LEN {
            match self.input.read(&mut header[read..]) {
                Ok(0) if read == 0 => return Ok(None),
                Ok(0) => {
                    return Err(self.malformed("record header truncated"));
                }
                Ok(n) => read += n,
                Err(e) => {
                    return Err(TriageError::Io {
                        path: self.path.clone(),
                        source: e,
                    })
                }
            }
        }

        let ts_sec = self.order.read_u32(&header[0..4]) as i64;
        let ts_frac = self.order.read_u32(&header[4..8]) as i64;
        let incl_len = self.order.read_u32(&header[8..12]);
        if incl_len > MAX_RECORD_BYTES {
            return Err(self.malformed(&format!("implausible record length {incl_len}")));
        }

        let mut data = vec![0u8; incl_len as usize];
        self.input
            .read_exact(&mut data)
            .map_err(|_| self.malformed("record payload truncated"))?;

        let ts_micros = if self.nanos {
            ts_sec * 1_000_000 + ts_frac / 1_000
        } else {
            ts_sec * 1_000_000 + ts_frac
        };
        Ok(Some(PcapRecord {
            header,
            data,
            ts_micros,
        }))
    }

    fn malformed(&self, detail: &str) -> TriageError {
        TriageError::MalformedPcap {
            path: self.path.clone(),
            detail: detail.to_string(),
        }
    }
}

/// Writes records under a fixed global header, preserving their bytes.
pub struct PcapWriter<W: Write> {
    output: W,
    path: PathBuf,
}

impl PcapWriter<BufWriter<fs::File>> {
    pub fn create(
        path: impl AsRef<Path>,
        global_header: &[u8; GLOBAL_HEADER_LEN],
    ) -> Result<Self, TriageError> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|source| TriageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut writer = PcapWriter {
            output: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        writer.write_bytes(global_header)?;
        Ok(writer)
    }
}

impl<W: Write> PcapWriter<W> {
    pub fn write_record(&mut self, record: &PcapRecord) -> Result<(), TriageError> {
        self.write_bytes(&record.header)?;
        self.write_bytes(&record.data)
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<(), TriageError> {
        self.output.write_all(bytes).map_err(|source| TriageError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<(), TriageError> {
        self.output.flush().map_err(|source| TriageError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// One emitted chunk of a source capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcapSegment {
    pub source_file: PathBuf,
    pub segment_index: usize,
    pub packet_count: usize,
    pub first_ts_micros: i64,
    pub last_ts_micros: i64,
    pub output_path: PathBuf,
}

/// Splits a capture into files of at most `segment_size` packets each,
/// preserving per-packet headers and payload bytes exactly. The segments
/// partition the source's packets in order; an empty capture yields no
/// segments.
pub fn segment_pcap(
    path: impl AsRef<Path>,
    segment_size: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PcapSegment>, TriageError> {
    if segment_size == 0 {
        return Err(TriageError::InvalidSegmentSize);
    }
    let path = path.as_ref();
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|source| TriageError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut reader = PcapReader::open(path)?;
    let global_header = reader.global_header();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "capture".to_string());

    let mut segments: Vec<PcapSegment> = Vec::new();
    let mut writer: Option<PcapWriter<BufWriter<fs::File>>> = None;

    while let Some(record) = reader.next_record()? {
        if segments.last().map_or(true, |s| s.packet_count >= segment_size) {
            if let Some(open) = writer.take() {
                open.finish()?;
            }
            let index = segments.len();
            let output_path = out_dir.join(format!("{stem}-seg{index:04}.pcap"));
            writer = Some(PcapWriter::create(&output_path, &global_header)?);
            segments.push(PcapSegment {
                source_file: path.to_path_buf(),
                segment_index: index,
                packet_count: 0,
                first_ts_micros: record.ts_micros,
                last_ts_micros: record.ts_micros,
                output_path,
            });
        }
        let segment = segments.last_mut().expect("segment was just created");
        writer
            .as_mut()
            .expect("writer exists while a segment is open")
            .write_record(&record)?;
        segment.packet_count += 1;
        segment.first_ts_micros = segment.first_ts_micros.min(record.ts_micros);
        segment.last_ts_micros = segment.last_ts_micros.max(record.ts_micros);
    }
    if let Some(open) = writer.take() {
        open.finish()?;
    }
    Ok(segments)
}

/// Reads every record of a capture; test and fixture helper.
pub fn read_all_records(path: impl AsRef<Path>) -> Result<Vec<PcapRecord>, TriageError> {
    let mut reader = PcapReader::open(path)?;
    let mut records = Vec::new();
    while let Some(record) = reader.next_record()? {
        records.push(record);
    }
    Ok(records)
}

/// Builds a little-endian microsecond record for synthetic captures.
pub fn make_record(ts_micros: i64, payload: &[u8]) -> PcapRecord {
    let ts_sec = (ts_micros / 1_000_000) as u32;
    let ts_usec = (ts_micros % 1_000_000) as u32;
    let len = payload.len() as u32;
    let mut header = [0u8; RECORD_HEADER_LEN];
    header[0..4].copy_from_slice(&ts_sec.to_le_bytes());
    header[4..8].copy_from_slice(&ts_usec.to_le_bytes());
    header[8..12].copy_from_slice(&len.to_le_bytes());
    header[12..16].copy_from_slice(&len.to_le_bytes());
    PcapRecord {
        header,
        data: payload.to_vec(),
        ts_micros,
    }
}

/// A little-endian microsecond global header for synthetic captures.
pub fn default_global_header() -> [u8; GLOBAL_HEADER_LEN] {
    let mut header = [0u8; GLOBAL_HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC_MICROS.to_le_bytes());
    header[4..6].copy_from_slice(&2u16.to_le_bytes());
    header[6..8].copy_from_slice(&4u16.to_le_bytes());
    // thiszone and sigfigs stay zero.
    header[16..20].copy_from_slice(&65535u32.to_le_bytes());
    header[20..24].copy_from_slice(&1u32.to_le_bytes());
    header
}

/// Writes a synthetic capture; test and bench helper.
pub fn write_pcap(
    path: impl AsRef<Path>,
    records: &[PcapRecord],
) -> Result<(), TriageError> {
    let mut writer = PcapWriter::create(path, &default_global_header())?;
    for record in records {
        writer.write_record(record)?;
    }
    writer.finish()
}
