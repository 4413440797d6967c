//! Decoding pipeline: SSVEP band energies with harmonics, P300 peak
//! amplitudes around flash markers, and SSVEP-first fusion.

pub mod filter;
mod fusion;
mod p300;
mod ssvep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Decision, EegRecord, StimulusConfig, StimulusId};

pub use filter::{bandpass, butterworth_bandpass, FilterError, FilterMode, SosFilter};
pub use fusion::fuse;
pub use p300::{classify_p300, p300_scores, p300_scores_from_samples, FlashScore, P300Scores, P300_MARGIN_FLOOR};
pub use ssvep::{classify_ssvep, ssvep_scores, ssvep_scores_from_samples};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderParams {
    /// Half the pass-band width in Hz.
    pub band_halfwidth: f64,
    /// Multiples of each stimulus frequency whose energies are summed.
    pub harmonics: Vec<u32>,
    /// Total band-pass order (even).
    pub filter_order: usize,
    pub filter_mode: FilterMode,
    /// Seconds dropped from each end of the filtered window before taking
    /// the variance.
    pub edge_trim: f64,
    /// Peak search span after each flash, seconds.
    pub p300_window: f64,
    /// Pre-flash baseline span, seconds.
    pub p300_baseline: f64,
    /// Earliest latency considered for the peak, seconds.
    pub p300_min_latency: f64,
    pub fusion_margin_ssvep: f64,
    pub fusion_margin_p300: f64,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            band_halfwidth: 1.0,
            harmonics: vec![1, 2, 3],
            filter_order: 4,
            filter_mode: FilterMode::ZeroPhase,
            edge_trim: 0.5,
            p300_window: 0.600,
            p300_baseline: 0.100,
            p300_min_latency: 0.0,
            fusion_margin_ssvep: 0.15,
            fusion_margin_p300: 0.15,
        }
    }
}

impl DecoderParams {
    pub fn check(&self) -> Result<(), DecodeError> {
        let bad = |m: &str| Err(DecodeError::Params(m.to_string()));
        if !(self.band_halfwidth > 0.0) {
            return bad("band_halfwidth must be positive");
        }
        if self.harmonics.is_empty() || self.harmonics.contains(&0) {
            return bad("harmonics must be non-empty positive multipliers");
        }
        if self.filter_order == 0 || !self.filter_order.is_multiple_of(2) {
            return bad("filter_order must be a positive even number");
        }
        if !(self.edge_trim >= 0.0) {
            return bad("edge_trim must not be negative");
        }
        if !(self.p300_min_latency >= 0.0 && self.p300_window > self.p300_min_latency) {
            return bad("need p300_window > p300_min_latency >= 0");
        }
        if !(self.p300_baseline > 0.0) {
            return bad("p300_baseline must be positive");
        }
        if !(self.fusion_margin_ssvep >= 0.0 && self.fusion_margin_p300 >= 0.0) {
            return bad("fusion margins must not be negative");
        }
        Ok(())
    }
}

/// Span of a record to classify, plus the channels to read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: f64,
    pub end: f64,
    pub channel_ssvep: String,
    pub channel_p300: String,
}

impl AnalysisWindow {
    pub fn new(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            channel_ssvep: crate::synth::SSVEP_CHANNEL.into(),
            channel_p300: crate::synth::P300_CHANNEL.into(),
        }
    }

    /// Sample index range `[start, end)` at `fs`.
    pub fn sample_range(&self, fs: f64) -> (usize, usize) {
        (
            (self.start * fs).round().max(0.0) as usize,
            (self.end * fs).round().max(0.0) as usize,
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("channel {0} not present in record")]
    MissingChannel(String),
    #[error("window [{start}, {end}) s not inside record of {duration} s")]
    WindowOutOfRange { start: f64, end: f64, duration: f64 },
    #[error("window [{start}, {end}) s is empty after edge trimming")]
    EmptyWindow { start: f64, end: f64 },
    #[error("no usable markers in window [{start}, {end}) s")]
    NoMarkers { start: f64, end: f64 },
    #[error("need at least two candidate scores, got {0}")]
    TooFewCandidates(usize),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("invalid decoder parameters: {0}")]
    Params(String),
}

/// Mean-subtracted variance over `x`.
pub fn population_variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn window_samples<'a>(record: &'a EegRecord, window: &AnalysisWindow, label: &str) -> Result<&'a [f64], DecodeError> {
    let ch = record
        .channel(label)
        .ok_or_else(|| DecodeError::MissingChannel(label.to_string()))?;
    let (a, b) = window.sample_range(record.sample_rate);
    if !(window.start >= 0.0 && window.end > window.start) || b > ch.samples.len() {
        return Err(DecodeError::WindowOutOfRange {
            start: window.start,
            end: window.end,
            duration: record.duration(),
        });
    }
    Ok(&ch.samples[a..b])
}

/// Ranks candidates by score, breaking ties toward the lowest frequency.
fn rank(scores: &BTreeMap<StimulusId, f64>, config: &StimulusConfig) -> Vec<(StimulusId, f64)> {
    let freq = |id: &StimulusId| config.get(*id).map_or(f64::INFINITY, |s| s.frequency);
    let mut v: Vec<(StimulusId, f64)> = scores.iter().map(|(k, v)| (*k, *v)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(freq(&a.0).total_cmp(&freq(&b.0))));
    v
}

/// Every decision made for one analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDecision {
    pub start: f64,
    pub end: f64,
    pub ssvep: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p300: Option<Decision>,
    /// Why no P300 decision was made, if none was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p300_unavailable: Option<String>,
    /// Flashes in the window whose read span left the record.
    pub p300_skipped_flashes: usize,
    pub fused: Decision,
}

/// Runs the full pipeline on one window. P300 problems (no marker channel,
/// no usable flashes) degrade to an SSVEP-only fused decision.
pub fn decode_window(
    record: &EegRecord,
    window: &AnalysisWindow,
    config: &StimulusConfig,
    params: &DecoderParams,
    markers_available: bool,
) -> Result<WindowDecision, DecodeError> {
    let scores = ssvep_scores(record, window, config, params)?;
    let ssvep = classify_ssvep(&scores, config)?;
    let (p300, p300_unavailable, skipped) = if !markers_available {
        (None, Some("no marker channel".to_string()), 0)
    } else {
        match p300_scores(record, window, config, params) {
            Ok(s) if s.scores.len() >= 2 => {
                let d = classify_p300(&s.scores, config)?;
                (Some(d), None, s.skipped)
            }
            Ok(s) => (
                None,
                Some(format!("only {} stimulus with usable flashes", s.scores.len())),
                s.skipped,
            ),
            Err(DecodeError::NoMarkers { .. }) => (None, Some("no usable markers".to_string()), 0),
            Err(DecodeError::MissingChannel(c)) => (None, Some(format!("channel {c} missing")), 0),
            Err(e) => return Err(e),
        }
    };
    let fused = fuse(&ssvep, p300.as_ref(), params);
    Ok(WindowDecision {
        start: window.start,
        end: window.end,
        ssvep,
        p300,
        p300_unavailable,
        p300_skipped_flashes: skipped,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_is_population_variance() {
        assert_eq!(population_variance(&[1.0, 3.0]), 1.0);
        assert_eq!(population_variance(&[]), 0.0);
    }

    #[test]
    fn default_params_are_valid() {
        DecoderParams::default().check().unwrap();
        let bad = DecoderParams {
            filter_order: 3,
            ..Default::default()
        };
        assert!(bad.check().is_err());
        let bad = DecoderParams {
            p300_window: 0.1,
            p300_min_latency: 0.2,
            ..Default::default()
        };
        assert!(bad.check().is_err());
    }
}
