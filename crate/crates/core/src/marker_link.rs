//! Event-marker serial link codec.
//!
//! Frames are ASCII lines `M,<code>,<timestamp_us>\n` where `code` is
//! `1..=9999` and `timestamp_us` is the transmitter clock in whole
//! microseconds. Lines holding only a code (the bare form a Testbench-style
//! receiver shows) are also accepted; they are stamped with the parser's
//! receive clock. Lines longer than [`MAX_LINE_LEN`] are dropped up to the
//! next newline.

use std::fmt;

use serde::Serialize;

use crate::model::MarkerEvent;

/// Baud rate of the stimulus board's marker link.
pub const DEFAULT_BAUD: u32 = 115_200;
/// Longest accepted line, newline excluded.
pub const MAX_LINE_LEN: usize = 64;
pub const MAX_CODE: u32 = 9999;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinkError {
    #[error("marker code {0} outside 1..=9999")]
    CodeOutOfRange(u32),
    #[error("timestamp {0} s cannot be sent as microseconds")]
    Timestamp(f64),
}

/// One marker as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireFrame {
    pub code: u16,
    pub timestamp_us: u64,
}

impl WireFrame {
    pub fn from_event(event: &MarkerEvent) -> Result<Self, LinkError> {
        if event.code == 0 || event.code > MAX_CODE {
            return Err(LinkError::CodeOutOfRange(event.code));
        }
        let us = (event.timestamp * 1e6).round();
        if !(us >= 0.0 && us < 2f64.powi(53)) {
            return Err(LinkError::Timestamp(event.timestamp));
        }
        Ok(Self {
            code: event.code as u16,
            timestamp_us: us as u64,
        })
    }

    pub fn to_event(self) -> MarkerEvent {
        MarkerEvent {
            code: self.code as u32,
            timestamp: self.timestamp_us as f64 / 1e6,
        }
    }

    pub fn to_bytes(self) -> Vec<u8> {
        format!("M,{},{}\n", self.code, self.timestamp_us).into_bytes()
    }
}

/// Serializes one marker event as a wire line.
pub fn encode_marker(event: &MarkerEvent) -> Result<Vec<u8>, LinkError> {
    Ok(WireFrame::from_event(event)?.to_bytes())
}

/// Seconds to clock `frame` out over an 8N1 link: ten bit times per byte.
pub fn link_budget(frame: &[u8], baud: u32) -> f64 {
    assert!(baud > 0, "baud must be positive");
    10.0 * frame.len() as f64 / baud as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticReason {
    /// Line is neither an `M,` frame nor a bare code.
    Unrecognized,
    /// Frame has the wrong number of fields or a non-numeric field.
    BadField,
    CodeOutOfRange,
    TimestampOverflow,
    /// Line exceeded `MAX_LINE_LEN`; skipped to the next newline.
    Overlong,
}

impl fmt::Display for DiagnosticReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagnosticReason::Unrecognized => "unrecognized line",
            DiagnosticReason::BadField => "malformed field",
            DiagnosticReason::CodeOutOfRange => "code out of range",
            DiagnosticReason::TimestampOverflow => "timestamp overflow",
            DiagnosticReason::Overlong => "line too long",
        };
        f.write_str(s)
    }
}

/// A skipped line, located by the stream offset of its first byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub offset: u64,
    pub reason: DiagnosticReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Feed {
    pub events: Vec<MarkerEvent>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Incremental line parser. Holds at most one partial line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarkerParser {
    line: Vec<u8>,
    line_start: u64,
    consumed: u64,
    discarding: bool,
    receive_time: f64,
}

impl MarkerParser {
    pub fn new() -> Self {
        Self::default()
    }

    /// Timestamp given to bare-code lines completed from now on.
    pub fn set_receive_time(&mut self, seconds: f64) {
        self.receive_time = seconds;
    }

    /// Bytes of an incomplete line currently held.
    pub fn pending(&self) -> usize {
        self.line.len()
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Feed {
        let mut out = Feed::default();
        for &b in chunk {
            let offset = self.consumed;
            self.consumed += 1;
            if b == b'\n' {
                if self.discarding {
                    self.discarding = false;
                } else {
                    self.finish_line(&mut out);
                }
                self.line.clear();
                self.line_start = self.consumed;
                continue;
            }
            if self.discarding {
                continue;
            }
            if self.line.len() == MAX_LINE_LEN {
                out.diagnostics.push(Diagnostic {
                    offset: self.line_start,
                    reason: DiagnosticReason::Overlong,
                });
                self.line.clear();
                self.discarding = true;
                continue;
            }
            if self.line.is_empty() {
                self.line_start = offset;
            }
            self.line.push(b);
        }
        out
    }

    fn finish_line(&mut self, out: &mut Feed) {
        let mut line = self.line.as_slice();
        if let Some(stripped) = line.strip_suffix(b"\r") {
            line = stripped;
        }
        if line.is_empty() {
            return;
        }
        match parse_line(line, self.receive_time) {
            Ok(ev) => out.events.push(ev),
            Err(reason) => out.diagnostics.push(Diagnostic {
                offset: self.line_start,
                reason,
            }),
        }
    }
}

/// Functional form of [`MarkerParser::feed`].
pub fn feed_bytes(mut state: MarkerParser, chunk: &[u8]) -> (MarkerParser, Vec<MarkerEvent>, Vec<Diagnostic>) {
    let feed = state.feed(chunk);
    (state, feed.events, feed.diagnostics)
}

fn parse_code(field: &[u8]) -> Result<u32, DiagnosticReason> {
    if field.is_empty() || field.len() > 4 || !field.iter().all(u8::is_ascii_digit) {
        return Err(DiagnosticReason::BadField);
    }
    let code = field.iter().fold(0u32, |acc, d| acc * 10 + (d - b'0') as u32);
    if code == 0 {
        return Err(DiagnosticReason::CodeOutOfRange);
    }
    Ok(code)
}

fn parse_line(line: &[u8], receive_time: f64) -> Result<MarkerEvent, DiagnosticReason> {
    if line.iter().all(u8::is_ascii_digit) {
        if line.len() > 4 {
            return Err(DiagnosticReason::CodeOutOfRange);
        }
        return Ok(MarkerEvent {
            code: parse_code(line)?,
            timestamp: receive_time,
        });
    }
    let rest = line.strip_prefix(b"M,").ok_or(DiagnosticReason::Unrecognized)?;
    let mut fields = rest.split(|&b| b == b',');
    let (Some(code), Some(ts), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(DiagnosticReason::BadField);
    };
    if code.len() > 4 && code.iter().all(u8::is_ascii_digit) {
        return Err(DiagnosticReason::CodeOutOfRange);
    }
    let code = parse_code(code)?;
    if ts.is_empty() || !ts.iter().all(u8::is_ascii_digit) {
        return Err(DiagnosticReason::BadField);
    }
    let mut us: u64 = 0;
    for d in ts {
        us = us
            .checked_mul(10)
            .and_then(|v| v.checked_add((d - b'0') as u64))
            .filter(|&v| v < 1 << 53)
            .ok_or(DiagnosticReason::TimestampOverflow)?;
    }
    Ok(WireFrame {
        code: code as u16,
        timestamp_us: us,
    }
    .to_event())
}
