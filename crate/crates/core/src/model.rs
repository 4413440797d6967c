//! Shared domain types: stimulus layout, session protocol, EEG records,
//! marker events and classifier decisions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of flicker stimuli on the board.
pub const STIMULUS_COUNT: usize = 4;

/// Index of a stimulus on the board, `0..4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusId(pub u8);

impl StimulusId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StimulusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Placement of a stimulus ring on the board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    Top,
    Left,
    Bottom,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub id: StimulusId,
    /// Flicker frequency in Hz.
    pub frequency: f64,
    /// Fraction of each period the ring is lit.
    pub duty_cycle: f64,
    pub position: Position,
    /// Code sent over the marker link when this stimulus' red LED flashes.
    pub marker_code: u32,
}

/// The four flicker stimuli.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StimulusConfig {
    pub stimuli: Vec<Stimulus>,
}

impl Default for StimulusConfig {
    /// 7, 8, 9 and 10 Hz at 85% duty, laid out counter-clockwise from the top.
    fn default() -> Self {
        let layout = [
            (7.0, Position::Top, 111),
            (8.0, Position::Left, 222),
            (9.0, Position::Bottom, 333),
            (10.0, Position::Right, 444),
        ];
        let stimuli = layout
            .iter()
            .enumerate()
            .map(|(i, &(frequency, position, marker_code))| Stimulus {
                id: StimulusId(i as u8),
                frequency,
                duty_cycle: 0.85,
                position,
                marker_code,
            })
            .collect();
        Self { stimuli }
    }
}

impl StimulusConfig {
    pub fn get(&self, id: StimulusId) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.id == id)
    }

    pub fn by_marker_code(&self, code: u32) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.marker_code == code)
    }

    pub fn ids(&self) -> impl Iterator<Item = StimulusId> + '_ {
        self.stimuli.iter().map(|s| s.id)
    }

    pub fn max_frequency(&self) -> f64 {
        self.stimuli.iter().map(|s| s.frequency).fold(0.0, f64::max)
    }

    /// Stimulus ids sorted by ascending frequency.
    pub fn ascending_frequency_order(&self) -> Vec<StimulusId> {
        let mut v: Vec<&Stimulus> = self.stimuli.iter().collect();
        v.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
        v.into_iter().map(|s| s.id).collect()
    }
}

/// Focus/rest timing of a recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionProtocol {
    /// Seconds of attention per stimulus.
    pub focus_duration: f64,
    /// Seconds looking away between stimuli.
    pub rest_duration: f64,
    /// Order in which stimuli are attended; empty means ascending frequency.
    pub frequency_order: Vec<StimulusId>,
    pub sessions: u32,
}

impl Default for SessionProtocol {
    fn default() -> Self {
        Self {
            focus_duration: 3.0,
            rest_duration: 5.0,
            frequency_order: Vec::new(),
            sessions: 5,
        }
    }
}

impl SessionProtocol {
    pub fn resolved_order(&self, config: &StimulusConfig) -> Vec<StimulusId> {
        if self.frequency_order.is_empty() {
            config.ascending_frequency_order()
        } else {
            self.frequency_order.clone()
        }
    }

    /// Length of one focus+rest cycle.
    pub fn cycle_duration(&self) -> f64 {
        self.focus_duration + self.rest_duration
    }

    pub fn session_duration(&self, config: &StimulusConfig) -> f64 {
        self.resolved_order(config).len() as f64 * self.cycle_duration()
    }

    pub fn total_duration(&self, config: &StimulusConfig) -> f64 {
        self.sessions as f64 * self.session_duration(config)
    }
}

/// A timestamped marker code, the unit of the flash event stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerEvent {
    pub code: u32,
    /// Seconds from record start.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub label: String,
    pub physical_unit: String,
    pub samples: Vec<f64>,
}

impl Channel {
    pub fn new(label: impl Into<String>, samples: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            physical_unit: "uV".into(),
            samples,
        }
    }
}

/// Recording start, as stored in the EDF header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartTime {
    pub day: u8,
    pub month: u8,
    /// Two-digit year as written to EDF (`85..=99` → 19xx, `0..=84` → 20xx).
    pub year: u8,
    pub hour: u8,
    pub minute: u8,
    pub second: u8,
}

impl Default for StartTime {
    fn default() -> Self {
        Self {
            day: 1,
            month: 1,
            year: 20,
            hour: 0,
            minute: 0,
            second: 0,
        }
    }
}

/// Multichannel sampled EEG plus the marker stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegRecord {
    pub sample_rate: f64,
    pub channels: Vec<Channel>,
    pub markers: Vec<MarkerEvent>,
    pub start: StartTime,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("sample rate must be positive, got {0}")]
    SampleRate(f64),
    #[error("channel {label} has {found} samples, expected {expected}")]
    UnequalLength {
        label: String,
        expected: usize,
        found: usize,
    },
    #[error("marker {index} at {timestamp} s lies outside [0, {duration}] s")]
    MarkerOutOfRange {
        index: usize,
        timestamp: f64,
        duration: f64,
    },
    #[error("markers not sorted at index {0}")]
    MarkersUnsorted(usize),
}

impl EegRecord {
    /// Builds a record, checking the shape invariants.
    pub fn new(sample_rate: f64, channels: Vec<Channel>, markers: Vec<MarkerEvent>) -> Result<Self, RecordError> {
        let record = Self {
            sample_rate,
            channels,
            markers,
            start: StartTime::default(),
        };
        record.check()?;
        Ok(record)
    }

    pub fn check(&self) -> Result<(), RecordError> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(RecordError::SampleRate(self.sample_rate));
        }
        let expected = self.sample_count();
        for ch in &self.channels {
            if ch.samples.len() != expected {
                return Err(RecordError::UnequalLength {
                    label: ch.label.clone(),
                    expected,
                    found: ch.samples.len(),
                });
            }
        }
        let duration = self.duration();
        for (index, m) in self.markers.iter().enumerate() {
            if !(m.timestamp >= 0.0 && m.timestamp <= duration) {
                return Err(RecordError::MarkerOutOfRange {
                    index,
                    timestamp: m.timestamp,
                    duration,
                });
            }
            if index > 0 && self.markers[index - 1].timestamp > m.timestamp {
                return Err(RecordError::MarkersUnsorted(index));
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    pub fn duration(&self) -> f64 {
        self.sample_count() as f64 / self.sample_rate
    }

    pub fn channel(&self, label: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.label == label)
    }
}

/// Which paradigm produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionSource {
    Ssvep,
    P300,
    Fused,
}

/// A classified stimulus with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub class_id: StimulusId,
    pub scores: BTreeMap<StimulusId, f64>,
    /// Relative gap between the best and second-best score; `+inf` when the
    /// second score is zero and the top score is positive.
    #[serde(with = "crate::serde_inf")]
    pub margin: f64,
    pub source: DecisionSource,
    pub low_confidence: bool,
    /// For fused decisions, the P300 scores that were available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_scores: Option<BTreeMap<StimulusId, f64>>,
}

/// Relative margin between the two best scores.
///
/// Ties (including all-zero scores) give 0. A zero second score under a
/// positive top gives `+inf`. `floor` replaces non-positive second scores when
/// set, which the P300 path uses since its scores may be negative.
pub fn relative_margin(top: f64, second: f64, floor: Option<f64>) -> f64 {
    if top == second {
        return 0.0;
    }
    match floor {
        Some(eps) => (top - second) / second.max(eps),
        None if second > 0.0 => (top - second) / second,
        None => f64::INFINITY,
    }
}
