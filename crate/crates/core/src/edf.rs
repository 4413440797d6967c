//! EDF reader and writer.
//!
//! Plain EDF (not EDF+): a 256-byte fixed header, 256 bytes per signal,
//! then record-interleaved 16-bit little-endian samples. Markers travel as an
//! extra signal labelled `MARKER` that is zero everywhere except the sample
//! nearest each event, which holds the marker code.

use std::fs;
use std::io;
use std::path::Path;

use crate::model::{Channel, EegRecord, MarkerEvent, StartTime};

pub const MARKER_LABEL: &str = "MARKER";
const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EdfError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed header field {field}: {value:?}")]
    MalformedHeader { field: String, value: String },
    #[error("degenerate scaling on signal {label}: {detail}")]
    DegenerateScaling { label: String, detail: String },
    #[error("inconsistent record size: {0}")]
    InconsistentRecords(String),
    #[error("channel {label} sample {index} = {value} outside [{min}, {max}]")]
    Unrepresentable {
        label: String,
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("markers {first} and {second} fall on the same sample {sample}")]
    MarkerCollision { first: usize, second: usize, sample: usize },
    #[error("marker {index} at {timestamp} s falls outside the record")]
    MarkerOutOfRange { index: usize, timestamp: f64 },
    #[error("cannot write record: {0}")]
    Unsupported(String),
}

/// Physical ranges used when writing.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfOptions {
    pub eeg_range: (f64, f64),
    pub marker_range: (f64, f64),
    pub patient_id: String,
    pub recording_id: String,
    /// Write the MARKER signal. Without it the record's markers are dropped.
    pub marker_channel: bool,
}

impl Default for EdfOptions {
    fn default() -> Self {
        Self {
            eeg_range: (-200.0, 200.0),
            marker_range: (0.0, 500.0),
            patient_id: "X X X X".into(),
            recording_id: "Startdate X X X X".into(),
            marker_channel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_unit: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    fn scale(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, d: i16) -> f64 {
        (d as i32 - self.digital_min) as f64 * self.scale() + self.physical_min
    }

    /// Nearest digital value, or `None` outside the physical range.
    pub fn to_digital(&self, v: f64) -> Option<i16> {
        if !(v >= self.physical_min && v <= self.physical_max) {
            return None;
        }
        let d = ((v - self.physical_min) / self.scale()).round() as i64 + self.digital_min as i64;
        Some(d.clamp(self.digital_min as i64, self.digital_max as i64) as i16)
    }

    /// Physical size of one digital step.
    pub fn quantum(&self) -> f64 {
        self.scale()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start: StartTime,
    pub header_bytes: usize,
    pub data_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn header_len(signal_count: usize) -> usize {
        FIXED_HEADER + SIGNAL_HEADER * signal_count
    }

    fn record_samples(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record).sum()
    }
}

fn push_field(buf: &mut Vec<u8>, value: &str, width: usize, name: &str) -> Result<(), EdfError> {
    if value.len() > width || !value.is_ascii() {
        return Err(EdfError::Unsupported(format!(
            "{name} {value:?} does not fit {width} ASCII bytes"
        )));
    }
    buf.extend_from_slice(value.as_bytes());
    buf.extend(std::iter::repeat_n(b' ', width - value.len()));
    Ok(())
}

/// Shortest decimal form of `v` that fits in 8 characters.
fn format_number(v: f64) -> Option<String> {
    let plain = format!("{v}");
    if plain.len() <= 8 {
        return Some(plain);
    }
    for prec in (0..8).rev() {
        let s = format!("{v:.prec$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s.len() <= 8 {
            return Some(s);
        }
    }
    None
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Picks samples per data record: one-second records when the sample count
/// allows, otherwise the largest record that divides the sample count.
fn record_layout(n: usize, fs: usize) -> Result<(usize, f64, String), EdfError> {
    let candidates = if n.is_multiple_of(fs) {
        vec![fs]
    } else {
        let g = gcd(n, fs);
        (1..=g).rev().filter(|d| g.is_multiple_of(*d)).collect()
    };
    for spr in candidates {
        let dur = spr as f64 / fs as f64;
        if let Some(text) = format_number(dur) {
            if text.parse::<f64>().ok() == Some(dur) {
                return Ok((spr, dur, text));
            }
        }
    }
    Err(EdfError::Unsupported(format!(
        "{n} samples at {fs} Hz cannot be split into exact data records"
    )))
}

/// Serializes `record` to EDF bytes.
pub fn encode_edf(record: &EegRecord, options: &EdfOptions) -> Result<Vec<u8>, EdfError> {
    record.check().map_err(|e| EdfError::Unsupported(e.to_string()))?;
    let fs = record.sample_rate;
    if fs.fract() != 0.0 {
        return Err(EdfError::Unsupported(format!(
            "sample rate {fs} Hz is not a whole number"
        )));
    }
    let fs_int = fs as usize;
    let n = record.sample_count();
    let (spr, _, duration_text) = if n == 0 {
        (fs_int, 1.0, "1".to_string())
    } else {
        record_layout(n, fs_int)?
    };
    let records = n / spr;

    let mut signals: Vec<SignalHeader> = record
        .channels
        .iter()
        .map(|c| SignalHeader {
            label: c.label.clone(),
            transducer: String::new(),
            physical_unit: c.physical_unit.clone(),
            physical_min: options.eeg_range.0,
            physical_max: options.eeg_range.1,
            digital_min: -32768,
            digital_max: 32767,
            prefilter: String::new(),
            samples_per_record: spr,
        })
        .collect();
    let marker_header = SignalHeader {
        label: MARKER_LABEL.into(),
        transducer: "event marker".into(),
        physical_unit: String::new(),
        physical_min: options.marker_range.0,
        physical_max: options.marker_range.1,
        digital_min: options.marker_range.0 as i32,
        digital_max: options.marker_range.1 as i32,
        prefilter: String::new(),
        samples_per_record: spr,
    };
    for s in signals.iter().chain([&marker_header]) {
        if !(s.physical_min < s.physical_max) || s.digital_min >= s.digital_max {
            return Err(EdfError::DegenerateScaling {
                label: s.label.clone(),
                detail: "empty range".into(),
            });
        }
        if s.digital_min < -32768 || s.digital_max > 32767 {
            return Err(EdfError::Unsupported(format!(
                "digital range of {} exceeds 16 bits",
                s.label
            )));
        }
    }

    let mut digital: Vec<Vec<i16>> = Vec::with_capacity(signals.len() + 1);
    for (ch, hdr) in record.channels.iter().zip(&signals) {
        let mut d = Vec::with_capacity(n);
        for (index, &v) in ch.samples.iter().enumerate() {
            d.push(hdr.to_digital(v).ok_or_else(|| EdfError::Unrepresentable {
                label: ch.label.clone(),
                index,
                value: v,
                min: hdr.physical_min,
                max: hdr.physical_max,
            })?);
        }
        digital.push(d);
    }

    let mut marker_track = vec![
        marker_header.to_digital(0.0).ok_or_else(|| {
            EdfError::DegenerateScaling {
                label: MARKER_LABEL.into(),
                detail: "range excludes 0".into(),
            }
        })?;
        n
    ];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (index, m) in record.markers.iter().enumerate() {
        let sample = (m.timestamp * fs).round() as usize;
        if sample >= n {
            return Err(EdfError::MarkerOutOfRange {
                index,
                timestamp: m.timestamp,
            });
        }
        if let Some(first) = owner[sample] {
            return Err(EdfError::MarkerCollision {
                first,
                second: index,
                sample,
            });
        }
        owner[sample] = Some(index);
        marker_track[sample] = marker_header
            .to_digital(m.code as f64)
            .ok_or_else(|| EdfError::Unrepresentable {
                label: MARKER_LABEL.into(),
                index: sample,
                value: m.code as f64,
                min: marker_header.physical_min,
                max: marker_header.physical_max,
            })?;
    }
    if options.marker_channel {
        digital.push(marker_track);
        signals.push(marker_header);
    }

    let ns = signals.len();
    let header_bytes = EdfHeader::header_len(ns);
    let mut buf = Vec::with_capacity(header_bytes + 2 * n * ns);
    let st = record.start;
    push_field(&mut buf, "0", 8, "version")?;
    push_field(&mut buf, &options.patient_id, 80, "patient id")?;
    push_field(&mut buf, &options.recording_id, 80, "recording id")?;
    push_field(
        &mut buf,
        &format!("{:02}.{:02}.{:02}", st.day, st.month, st.year),
        8,
        "start date",
    )?;
    push_field(
        &mut buf,
        &format!("{:02}.{:02}.{:02}", st.hour, st.minute, st.second),
        8,
        "start time",
    )?;
    push_field(&mut buf, &header_bytes.to_string(), 8, "header bytes")?;
    push_field(&mut buf, "", 44, "reserved")?;
    push_field(&mut buf, &records.to_string(), 8, "data records")?;
    push_field(&mut buf, &duration_text, 8, "record duration")?;
    push_field(&mut buf, &ns.to_string(), 4, "signal count")?;

    let num = |v: f64, name: &str| {
        format_number(v).ok_or_else(|| EdfError::Unsupported(format!("{name} {v} does not fit 8 bytes")))
    };
    for s in &signals {
        push_field(&mut buf, &s.label, 16, "label")?;
    }
    for s in &signals {
        push_field(&mut buf, &s.transducer, 80, "transducer")?;
    }
    for s in &signals {
        push_field(&mut buf, &s.physical_unit, 8, "physical unit")?;
    }
    for s in &signals {
        push_field(&mut buf, &num(s.physical_min, "physical min")?, 8, "physical min")?;
    }
    for s in &signals {
        push_field(&mut buf, &num(s.physical_max, "physical max")?, 8, "physical max")?;
    }
    for s in &signals {
        push_field(&mut buf, &s.digital_min.to_string(), 8, "digital min")?;
    }
    for s in &signals {
        push_field(&mut buf, &s.digital_max.to_string(), 8, "digital max")?;
    }
    for s in &signals {
        push_field(&mut buf, &s.prefilter, 80, "prefilter")?;
    }
    for s in &signals {
        push_field(&mut buf, &s.samples_per_record.to_string(), 8, "samples per record")?;
    }
    for _ in &signals {
        push_field(&mut buf, "", 32, "reserved")?;
    }
    debug_assert_eq!(buf.len(), header_bytes);

    for r in 0..records {
        for track in &digital {
            for &d in &track[r * spr..(r + 1) * spr] {
                buf.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(buf)
}

pub fn write_edf(record: &EegRecord, path: impl AsRef<Path>, options: &EdfOptions) -> Result<(), EdfError> {
    let bytes = encode_edf(record, options)?;
    fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, width: usize, name: &str) -> Result<String, EdfError> {
        let end = self.pos + width;
        let raw = self.bytes.get(self.pos..end).ok_or(EdfError::Truncated {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        let s = std::str::from_utf8(raw).map_err(|_| EdfError::MalformedHeader {
            field: name.into(),
            value: String::from_utf8_lossy(raw).into_owned(),
        })?;
        Ok(s.trim_end().trim_start().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, name: &str) -> Result<T, EdfError> {
        let s = self.take(width, name)?;
        s.parse().map_err(|_| EdfError::MalformedHeader {
            field: name.into(),
            value: s,
        })
    }
}

fn parse_pair(s: &str, field: &str) -> Result<(u8, u8, u8), EdfError> {
    let bad = || EdfError::MalformedHeader {
        field: field.into(),
        value: s.into(),
    };
    let parts: Vec<u8> = s
        .split('.')
        .map(|p| p.parse::<u8>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(bad()),
    }
}

/// Parses the header portion of an EDF byte buffer.
pub fn decode_header(bytes: &[u8]) -> Result<EdfHeader, EdfError> {
    let mut c = Cursor { bytes, pos: 0 };
    let version = c.take(8, "version")?;
    let patient_id = c.take(80, "patient id")?;
    let recording_id = c.take(80, "recording id")?;
    let (day, month, year) = parse_pair(&c.take(8, "start date")?, "start date")?;
    let (hour, minute, second) = parse_pair(&c.take(8, "start time")?, "start time")?;
    let header_bytes: usize = c.number(8, "header bytes")?;
    c.take(44, "reserved")?;
    let data_records: i64 = c.number(8, "data records")?;
    let record_duration: f64 = c.number(8, "record duration")?;
    let ns: usize = c.number(4, "signal count")?;
    if ns == 0 {
        return Err(EdfError::MalformedHeader {
            field: "signal count".into(),
            value: "0".into(),
        });
    }
    if header_bytes != EdfHeader::header_len(ns) {
        return Err(EdfError::MalformedHeader {
            field: "header bytes".into(),
            value: header_bytes.to_string(),
        });
    }
    if !(record_duration > 0.0) {
        return Err(EdfError::MalformedHeader {
            field: "record duration".into(),
            value: record_duration.to_string(),
        });
    }

    let mut col =
        |width: usize, name: &str| -> Result<Vec<String>, EdfError> { (0..ns).map(|_| c.take(width, name)).collect() };
    let labels = col(16, "label")?;
    let transducers = col(80, "transducer")?;
    let units = col(8, "physical unit")?;
    let pmin = col(8, "physical min")?;
    let pmax = col(8, "physical max")?;
    let dmin = col(8, "digital min")?;
    let dmax = col(8, "digital max")?;
    let prefilters = col(80, "prefilter")?;
    let spr = col(8, "samples per record")?;
    col(32, "reserved")?;

    fn parse<T: std::str::FromStr>(s: &str, field: &str) -> Result<T, EdfError> {
        s.parse().map_err(|_| EdfError::MalformedHeader {
            field: field.into(),
            value: s.into(),
        })
    }

    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let s = SignalHeader {
            label: labels[i].clone(),
            transducer: transducers[i].clone(),
            physical_unit: units[i].clone(),
            physical_min: parse(&pmin[i], "physical min")?,
            physical_max: parse(&pmax[i], "physical max")?,
            digital_min: parse(&dmin[i], "digital min")?,
            digital_max: parse(&dmax[i], "digital max")?,
            prefilter: prefilters[i].clone(),
            samples_per_record: parse(&spr[i], "samples per record")?,
        };
        if s.physical_min == s.physical_max || s.digital_min >= s.digital_max {
            return Err(EdfError::DegenerateScaling {
                label: s.label.clone(),
                detail: format!(
                    "physical [{}, {}], digital [{}, {}]",
                    s.physical_min, s.physical_max, s.digital_min, s.digital_max
                ),
            });
        }
        if s.digital_min < -32768 || s.digital_max > 32767 {
            return Err(EdfError::MalformedHeader {
                field: "digital range".into(),
                value: format!("[{}, {}]", s.digital_min, s.digital_max),
            });
        }
        if s.samples_per_record == 0 {
            return Err(EdfError::MalformedHeader {
                field: "samples per record".into(),
                value: "0".into(),
            });
        }
        signals.push(s);
    }

    let mut header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start: StartTime {
            day,
            month,
            year,
            hour,
            minute,
            second,
        },
        header_bytes,
        data_records: 0,
        record_duration,
        signals,
    };
    let record_bytes = 2 * header.record_samples();
    let body = bytes.len().saturating_sub(header_bytes);
    header.data_records = if data_records < 0 {
        if !body.is_multiple_of(record_bytes) {
            return Err(EdfError::InconsistentRecords(format!(
                "{body} data bytes is not a multiple of the {record_bytes}-byte record"
            )));
        }
        body / record_bytes
    } else {
        data_records as usize
    };
    Ok(header)
}

/// Decodes EDF bytes into a record. Non-zero `MARKER` samples become marker
/// events at `index / sample_rate`.
pub fn decode_edf(bytes: &[u8]) -> Result<EegRecord, EdfError> {
    let header = decode_header(bytes)?;
    let record_bytes = 2 * header.record_samples();
    let expected = header.header_bytes + header.data_records * record_bytes;
    if bytes.len() < expected {
        return Err(EdfError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EdfError::InconsistentRecords(format!(
            "{} trailing bytes after {} data records",
            bytes.len() - expected,
            header.data_records
        )));
    }

    let spr = header.signals[0].samples_per_record;
    if header.signals.iter().any(|s| s.samples_per_record != spr) {
        return Err(EdfError::InconsistentRecords(
            "signals have different samples per record".into(),
        ));
    }
    let sample_rate = spr as f64 / header.record_duration;
    let n = spr * header.data_records;

    let mut tracks: Vec<Vec<f64>> = vec![Vec::with_capacity(n); header.signals.len()];
    let mut pos = header.header_bytes;
    for _ in 0..header.data_records {
        for (hdr, track) in header.signals.iter().zip(tracks.iter_mut()) {
            for _ in 0..hdr.samples_per_record {
                let d = i16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
                pos += 2;
                track.push(hdr.to_physical(d));
            }
        }
    }

    let mut channels = Vec::new();
    let mut markers = Vec::new();
    for (hdr, samples) in header.signals.iter().zip(tracks) {
        if hdr.label == MARKER_LABEL {
            for (i, v) in samples.iter().enumerate() {
                let code = v.round();
                if code != 0.0 {
                    markers.push(MarkerEvent {
                        code: code as u32,
                        timestamp: i as f64 / sample_rate,
                    });
                }
            }
        } else {
            channels.push(Channel {
                label: hdr.label.clone(),
                physical_unit: hdr.physical_unit.clone(),
                samples,
            });
        }
    }
    Ok(EegRecord {
        sample_rate,
        channels,
        markers,
        start: header.start,
    })
}

pub fn read_edf(path: impl AsRef<Path>) -> Result<EegRecord, EdfError> {
    let bytes = fs::read(path)?;
    decode_edf(&bytes)
}

/// Whether the file carries a `MARKER` signal.
pub fn has_marker_channel(bytes: &[u8]) -> Result<bool, EdfError> {
    Ok(decode_header(bytes)?.signals.iter().any(|s| s.label == MARKER_LABEL))
}
