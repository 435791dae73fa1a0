//! Retired-instruction trace records, the binary and CSV trace formats, and
//! window slicing.
//!
//! Binary format: a flat sequence of 17-byte records, each holding the
//! little-endian instruction address (8 bytes), the little-endian data address
//! (8 bytes) and a one-byte kind code. There is no header.
//!
//! CSV format: a header line `ip,kind,data_addr` followed by one record per
//! line. Addresses are hexadecimal with an optional `0x` prefix; the kind is
//! either its numeric code or its name (`load`, `store`, `branch-conditional`,
//! `branch-return`, `branch-other`, `other`).

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

pub const RECORD_BYTES: usize = 17;
pub const CSV_HEADER: &str = "ip,kind,data_addr";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Kind {
    Load = 0,
    Store = 1,
    BranchConditional = 2,
    BranchReturn = 3,
    BranchOther = 4,
    Other = 5,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Load,
        Kind::Store,
        Kind::BranchConditional,
        Kind::BranchReturn,
        Kind::BranchOther,
        Kind::Other,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Kind> {
        Kind::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Load => "load",
            Kind::Store => "store",
            Kind::BranchConditional => "branch-conditional",
            Kind::BranchReturn => "branch-return",
            Kind::BranchOther => "branch-other",
            Kind::Other => "other",
        }
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Kind::Load | Kind::Store)
    }

    pub fn is_branch(self) -> bool {
        matches!(
            self,
            Kind::BranchConditional | Kind::BranchReturn | Kind::BranchOther
        )
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(code) = s.parse::<u8>() {
            return Kind::from_code(code).ok_or(());
        }
        Kind::ALL.iter().copied().find(|k| k.name() == s).ok_or(())
    }
}

/// One retired instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceRecord {
    pub ip: u64,
    pub kind: Kind,
    /// Only meaningful for loads and stores; zero otherwise.
    pub data_addr: u64,
}

impl TraceRecord {
    pub fn new(ip: u64, kind: Kind, data_addr: u64) -> Self {
        TraceRecord { ip, kind, data_addr }
    }

    pub fn load(ip: u64, addr: u64) -> Self {
        TraceRecord::new(ip, Kind::Load, addr)
    }

    pub fn store(ip: u64, addr: u64) -> Self {
        TraceRecord::new(ip, Kind::Store, addr)
    }

    pub fn op(ip: u64, kind: Kind) -> Self {
        TraceRecord::new(ip, kind, 0)
    }

    fn check(&self) -> Result<(), &'static str> {
        if self.ip == 0 {
            return Err("instruction address is zero");
        }
        if !self.kind.is_memory() && self.data_addr != 0 {
            return Err("non-memory record carries a data address");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Binary,
    Csv,
}

impl FromStr for TraceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" | "bin" => Ok(TraceFormat::Binary),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(format!("unknown trace format `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("record {index}: truncated record ({len} of {RECORD_BYTES} bytes)")]
    Truncated { index: usize, len: usize },
    #[error("record {index}: unknown kind code {code}")]
    UnknownKind { index: usize, code: u8 },
    #[error("record {index}: unknown kind `{text}`")]
    UnknownKindName { index: usize, text: String },
    #[error("record {index}: `{field}` is not a hex address: `{text}`")]
    BadAddress {
        index: usize,
        field: &'static str,
        text: String,
    },
    #[error("record {index}: expected 3 fields, found {found}")]
    FieldCount { index: usize, found: usize },
    #[error("record {index}: {reason}")]
    Invalid { index: usize, reason: &'static str },
    #[error("missing or malformed header, expected `{CSV_HEADER}`")]
    Header,
    #[error("trace is not valid UTF-8")]
    Utf8,
}

/// An ordered sequence of trace records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(records: Vec<TraceRecord>) -> Self {
        Trace { records }
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    pub fn window(&self, range: Range<usize>) -> &[TraceRecord] {
        &self.records[range]
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * RECORD_BYTES);
        for r in &self.records {
            out.extend_from_slice(&r.ip.to_le_bytes());
            out.extend_from_slice(&r.data_addr.to_le_bytes());
            out.push(r.kind.code());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(16 + self.records.len() * 24);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{:#x},{},{:#x}\n", r.ip, r.kind.code(), r.data_addr));
        }
        out
    }

    pub fn serialize(&self, format: TraceFormat) -> Vec<u8> {
        match format {
            TraceFormat::Binary => self.to_binary(),
            TraceFormat::Csv => self.to_csv().into_bytes(),
        }
    }
}

impl FromIterator<TraceRecord> for Trace {
    fn from_iter<I: IntoIterator<Item = TraceRecord>>(iter: I) -> Self {
        Trace::new(iter.into_iter().collect())
    }
}

pub fn parse_trace(stream: &[u8], format: TraceFormat) -> Result<Trace, TraceError> {
    match format {
        TraceFormat::Binary => parse_binary(stream),
        TraceFormat::Csv => {
            let text = std::str::from_utf8(stream).map_err(|_| TraceError::Utf8)?;
            parse_csv(text)
        }
    }
}

pub fn parse_binary(stream: &[u8]) -> Result<Trace, TraceError> {
    let mut records = Vec::with_capacity(stream.len() / RECORD_BYTES);
    let mut chunks = stream.chunks_exact(RECORD_BYTES);
    for (index, chunk) in chunks.by_ref().enumerate() {
        let ip = u64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let data_addr = u64::from_le_bytes(chunk[8..16].try_into().unwrap());
        let code = chunk[16];
        let kind = Kind::from_code(code).ok_or(TraceError::UnknownKind { index, code })?;
        let record = TraceRecord { ip, kind, data_addr };
        record
            .check()
            .map_err(|reason| TraceError::Invalid { index, reason })?;
        records.push(record);
    }
    let rest = chunks.remainder();
    if !rest.is_empty() {
        return Err(TraceError::Truncated {
            index: records.len(),
            len: rest.len(),
        });
    }
    Ok(Trace { records })
}

fn parse_hex(index: usize, field: &'static str, text: &str) -> Result<u64, TraceError> {
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(TraceError::BadAddress {
            index,
            field,
            text: text.to_string(),
        });
    }
    u64::from_str_radix(digits, 16).map_err(|_| TraceError::BadAddress {
        index,
        field,
        text: text.to_string(),
    })
}

pub fn parse_csv(text: &str) -> Result<Trace, TraceError> {
    let mut lines = text.lines();
    match lines.next() {
        None => return Ok(Trace::default()),
        Some(h) if h.trim() == CSV_HEADER => {}
        Some(_) => return Err(TraceError::Header),
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let index = records.len();
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(TraceError::FieldCount {
                index,
                found: fields.len(),
            });
        }
        let ip = parse_hex(index, "ip", fields[0])?;
        let kind: Kind = fields[1].parse().map_err(|_| TraceError::UnknownKindName {
            index,
            text: fields[1].to_string(),
        })?;
        let data_addr = parse_hex(index, "data_addr", fields[2])?;
        let record = TraceRecord { ip, kind, data_addr };
        record
            .check()
            .map_err(|reason| TraceError::Invalid { index, reason })?;
        records.push(record);
    }
    Ok(Trace { records })
}

/// Splits `len` records into consecutive windows of `window_size`; the last
/// window may be shorter.
pub fn slice_windows(len: usize, window_size: usize) -> Vec<Range<usize>> {
    assert!(window_size >= 1, "window size must be at least 1");
    (0..len)
        .step_by(window_size)
        .map(|start| start..(start + window_size).min(len))
        .collect()
}
