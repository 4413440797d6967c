//! Configuration validation and the JSON configuration file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderParams;
use crate::model::{SessionProtocol, StimulusConfig, STIMULUS_COUNT};
use crate::robot::RobotConfig;
use crate::synth::SynthParams;

/// One broken invariant found by [`validate_config`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    StimulusCount { found: usize },
    DuplicateId { id: u8 },
    IdOutOfRange { id: u8 },
    DuplicateFrequency { frequency: f64 },
    DuplicateMarkerCode { code: u32 },
    DuplicatePosition { position: String },
    BadFrequency { id: u8, frequency: f64 },
    BadDutyCycle { id: u8, duty_cycle: f64 },
    ZeroMarkerCode { id: u8 },
    BadSampleRate { sample_rate: f64 },
    Nyquist { max_frequency: f64, nyquist: f64 },
    FocusDuration { seconds: f64 },
    RestDuration { seconds: f64 },
    OrderNotPermutation,
    NoSessions,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StimulusCount { found } => {
                write!(f, "expected {STIMULUS_COUNT} stimuli, found {found}")
            }
            Violation::DuplicateId { id } => write!(f, "duplicate stimulus id {id}"),
            Violation::IdOutOfRange { id } => write!(f, "stimulus id {id} outside 0..{STIMULUS_COUNT}"),
            Violation::DuplicateFrequency { frequency } => {
                write!(f, "duplicate frequency {frequency} Hz")
            }
            Violation::DuplicateMarkerCode { code } => write!(f, "duplicate marker code {code}"),
            Violation::DuplicatePosition { position } => write!(f, "duplicate position {position}"),
            Violation::BadFrequency { id, frequency } => {
                write!(f, "stimulus {id}: frequency {frequency} Hz must be positive")
            }
            Violation::BadDutyCycle { id, duty_cycle } => {
                write!(f, "stimulus {id}: duty cycle {duty_cycle} outside (0, 1)")
            }
            Violation::ZeroMarkerCode { id } => write!(f, "stimulus {id}: marker code must be positive"),
            Violation::BadSampleRate { sample_rate } => {
                write!(f, "sample rate {sample_rate} Hz must be positive")
            }
            Violation::Nyquist { max_frequency, nyquist } => write!(
                f,
                "3×{max_frequency} Hz = {} Hz ≥ {nyquist} Hz Nyquist",
                3.0 * max_frequency
            ),
            Violation::FocusDuration { seconds } => {
                write!(f, "focus duration {seconds} s must be positive")
            }
            Violation::RestDuration { seconds } => {
                write!(f, "rest duration {seconds} s must not be negative")
            }
            Violation::OrderNotPermutation => {
                write!(f, "frequency order is not a permutation of the stimulus ids")
            }
            Violation::NoSessions => write!(f, "session count must be positive"),
        }
    }
}

/// Outcome of [`validate_config`]; an empty list means the inputs are valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Checks the stimulus layout and protocol, including the third-harmonic
/// Nyquist condition at `sample_rate`.
pub fn validate_config(config: &StimulusConfig, protocol: &SessionProtocol, sample_rate: f64) -> ValidationReport {
    let mut v = Vec::new();
    let stimuli = &config.stimuli;
    if stimuli.len() != STIMULUS_COUNT {
        v.push(Violation::StimulusCount { found: stimuli.len() });
    }

    let mut ids = BTreeSet::new();
    let mut codes = BTreeSet::new();
    let mut positions = BTreeSet::new();
    let mut freqs: Vec<f64> = Vec::new();
    for s in stimuli {
        if s.id.index() >= STIMULUS_COUNT {
            v.push(Violation::IdOutOfRange { id: s.id.0 });
        }
        if !ids.insert(s.id) {
            v.push(Violation::DuplicateId { id: s.id.0 });
        }
        if !(s.frequency > 0.0 && s.frequency.is_finite()) {
            v.push(Violation::BadFrequency {
                id: s.id.0,
                frequency: s.frequency,
            });
        }
        if freqs.contains(&s.frequency) {
            v.push(Violation::DuplicateFrequency { frequency: s.frequency });
        }
        freqs.push(s.frequency);
        if !(s.duty_cycle > 0.0 && s.duty_cycle < 1.0) {
            v.push(Violation::BadDutyCycle {
                id: s.id.0,
                duty_cycle: s.duty_cycle,
            });
        }
        if s.marker_code == 0 {
            v.push(Violation::ZeroMarkerCode { id: s.id.0 });
        }
        if !codes.insert(s.marker_code) {
            v.push(Violation::DuplicateMarkerCode { code: s.marker_code });
        }
        if !positions.insert(s.position) {
            v.push(Violation::DuplicatePosition {
                position: format!("{:?}", s.position),
            });
        }
    }

    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        v.push(Violation::BadSampleRate { sample_rate });
    } else {
        let max_frequency = config.max_frequency();
        let nyquist = sample_rate / 2.0;
        if 3.0 * max_frequency >= nyquist {
            v.push(Violation::Nyquist { max_frequency, nyquist });
        }
    }

    if !(protocol.focus_duration > 0.0) {
        v.push(Violation::FocusDuration {
            seconds: protocol.focus_duration,
        });
    }
    if !(protocol.rest_duration >= 0.0) {
        v.push(Violation::RestDuration {
            seconds: protocol.rest_duration,
        });
    }
    if protocol.sessions == 0 {
        v.push(Violation::NoSessions);
    }
    if !protocol.frequency_order.is_empty() {
        let mut order = protocol.frequency_order.clone();
        order.sort();
        let mut all: Vec<_> = config.ids().collect();
        all.sort();
        if order != all {
            v.push(Violation::OrderNotPermutation);
        }
    }

    ValidationReport { violations: v }
}

/// Live gateway settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySettings {
    pub port: u16,
    /// Frames buffered per subscriber before it is dropped.
    pub subscriber_buffer: usize,
    /// Samples synthesized per live block.
    pub block_samples: usize,
    /// Pace the live loop against the wall clock.
    pub realtime: bool,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            port: 8350,
            subscriber_buffer: 1024,
            block_samples: 32,
            realtime: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(ValidationReport),
}

/// Everything the JSON configuration file can carry. Every section is
/// optional and falls back to its defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub stimuli: StimulusConfig,
    pub protocol: SessionProtocol,
    pub synth: SynthParams,
    pub decoder: DecoderParams,
    pub robot: RobotConfig,
    pub gateway: GatewaySettings,
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let report = validate_config(&self.stimuli, &self.protocol, self.synth.sample_rate);
        if report.is_ok() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(report))
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StimulusId;

    #[test]
    fn defaults_are_valid_at_128_hz() {
        let r = validate_config(&StimulusConfig::default(), &SessionProtocol::default(), 128.0);
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn duplicate_frequency_is_reported() {
        let mut c = StimulusConfig::default();
        c.stimuli[2].frequency = 8.0;
        let r = validate_config(&c, &SessionProtocol::default(), 128.0);
        assert_eq!(r.violations, vec![Violation::DuplicateFrequency { frequency: 8.0 }]);
        assert_eq!(r.to_string(), "duplicate frequency 8 Hz");
    }

    #[test]
    fn third_harmonic_nyquist_check() {
        // 3 * 10 Hz = 30 Hz >= 50 / 2
        let r = validate_config(&StimulusConfig::default(), &SessionProtocol::default(), 50.0);
        assert_eq!(
            r.violations,
            vec![Violation::Nyquist {
                max_frequency: 10.0,
                nyquist: 25.0
            }]
        );
        assert_eq!(r.to_string(), "3×10 Hz = 30 Hz ≥ 25 Hz Nyquist");
        // 30 < 30.5
        assert!(validate_config(&StimulusConfig::default(), &SessionProtocol::default(), 61.0).is_ok());
        assert!(!validate_config(&StimulusConfig::default(), &SessionProtocol::default(), 60.0).is_ok());
    }

    #[test]
    fn protocol_violations() {
        let p = SessionProtocol {
            focus_duration: 0.0,
            rest_duration: -1.0,
            frequency_order: vec![StimulusId(0), StimulusId(0), StimulusId(1), StimulusId(2)],
            sessions: 0,
        };
        let r = validate_config(&StimulusConfig::default(), &p, 128.0);
        assert_eq!(
            r.violations,
            vec![
                Violation::FocusDuration { seconds: 0.0 },
                Violation::RestDuration { seconds: -1.0 },
                Violation::NoSessions,
                Violation::OrderNotPermutation,
            ]
        );
    }

    #[test]
    fn layout_violations() {
        let mut c = StimulusConfig::default();
        c.stimuli[1].marker_code = 111;
        c.stimuli[3].position = c.stimuli[0].position;
        c.stimuli[0].duty_cycle = 1.0;
        c.stimuli.pop();
        let r = validate_config(&c, &SessionProtocol::default(), 128.0);
        assert!(r.violations.contains(&Violation::StimulusCount { found: 3 }));
        assert!(r.violations.contains(&Violation::DuplicateMarkerCode { code: 111 }));
        assert!(r
            .violations
            .contains(&Violation::BadDutyCycle { id: 0, duty_cycle: 1.0 }));
    }

    #[test]
    fn validation_is_pure() {
        let c = StimulusConfig::default();
        let p = SessionProtocol::default();
        assert_eq!(validate_config(&c, &p, 40.0), validate_config(&c, &p, 40.0));
    }

    #[test]
    fn config_file_round_trips_and_rejects_unknown_keys() {
        let cfg = AppConfig::default();
        let text = cfg.to_json_pretty();
        assert_eq!(AppConfig::from_json(&text).unwrap(), cfg);
        assert!(AppConfig::from_json("{}").is_ok());
        assert!(matches!(
            AppConfig::from_json(r#"{"stimulus": []}"#),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            AppConfig::from_json(r#"{"protocol": {"focus": 3}}"#),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            AppConfig::from_json(r#"{"synth": {"sample_rate": 40}}"#),
            Err(ConfigError::Invalid(_))
        ));
    }
}
