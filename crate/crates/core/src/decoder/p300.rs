use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{relative_margin, Decision, DecisionSource, EegRecord, MarkerEvent, StimulusConfig, StimulusId};

use super::{rank, AnalysisWindow, DecodeError, DecoderParams};

/// Denominator floor for the P300 margin when the second score is not
/// positive.
pub const P300_MARGIN_FLOOR: f64 = 1e-12;

const GRID_EPS: f64 = 1e-9;

/// Baseline-corrected peak after one flash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashScore {
    pub stimulus_id: StimulusId,
    pub onset: f64,
    /// Peak time relative to the onset, seconds.
    pub latency: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct P300Scores {
    /// Mean flash amplitude per stimulus that flashed in the window.
    pub scores: BTreeMap<StimulusId, f64>,
    pub flashes: Vec<FlashScore>,
    /// Flashes in the window whose baseline or peak span leaves the record.
    pub skipped: usize,
    /// Markers in the window whose code matches no stimulus.
    pub unknown_codes: usize,
}

/// First sample index at or after `t`.
fn index_at_or_after(t: f64, fs: f64) -> i64 {
    (t * fs - GRID_EPS).ceil() as i64
}

/// Last sample index at or before `t`.
fn index_at_or_before(t: f64, fs: f64) -> i64 {
    (t * fs + GRID_EPS).floor() as i64
}

fn score_flash(x: &[f64], fs: f64, onset: f64, params: &DecoderParams) -> Option<(f64, f64)> {
    // baseline: [onset - b, onset)
    let b0 = index_at_or_after(onset - params.p300_baseline, fs);
    let b1 = index_at_or_after(onset, fs);
    // peak: (onset + min_latency, onset + window]
    let p0 = index_at_or_before(onset + params.p300_min_latency, fs) + 1;
    let p1 = index_at_or_before(onset + params.p300_window, fs) + 1;
    if b0 < 0 || b1 <= b0 || p1 <= p0 || p1 as usize > x.len() {
        return None;
    }
    let base = &x[b0 as usize..b1 as usize];
    let baseline = base.iter().sum::<f64>() / base.len() as f64;
    let (mut best, mut at) = (f64::NEG_INFINITY, p0);
    for i in p0..p1 {
        let v = x[i as usize] - baseline;
        if v > best {
            best = v;
            at = i;
        }
    }
    Some((best, at as f64 / fs - onset))
}

/// Mean baseline-corrected peak per stimulus over flashes in `window`.
pub fn p300_scores(
    record: &EegRecord,
    window: &AnalysisWindow,
    config: &StimulusConfig,
    params: &DecoderParams,
) -> Result<P300Scores, DecodeError> {
    let ch = record
        .channel(&window.channel_p300)
        .ok_or_else(|| DecodeError::MissingChannel(window.channel_p300.clone()))?;
    if !(window.start >= 0.0 && window.end > window.start && window.end <= record.duration() + GRID_EPS) {
        return Err(DecodeError::WindowOutOfRange {
            start: window.start,
            end: window.end,
            duration: record.duration(),
        });
    }
    p300_scores_from_samples(&ch.samples, record.sample_rate, &record.markers, window, config, params)
}

/// [`p300_scores`] on a whole channel and its marker list.
pub fn p300_scores_from_samples(
    x: &[f64],
    sample_rate: f64,
    markers: &[MarkerEvent],
    window: &AnalysisWindow,
    config: &StimulusConfig,
    params: &DecoderParams,
) -> Result<P300Scores, DecodeError> {
    params.check()?;
    let mut out = P300Scores::default();
    let mut sums: BTreeMap<StimulusId, (f64, usize)> = BTreeMap::new();
    for m in markers
        .iter()
        .filter(|m| m.timestamp >= window.start && m.timestamp < window.end)
    {
        let Some(stim) = config.by_marker_code(m.code) else {
            out.unknown_codes += 1;
            continue;
        };
        match score_flash(x, sample_rate, m.timestamp, params) {
            Some((amplitude, latency)) => {
                let e = sums.entry(stim.id).or_insert((0.0, 0));
                e.0 += amplitude;
                e.1 += 1;
                out.flashes.push(FlashScore {
                    stimulus_id: stim.id,
                    onset: m.timestamp,
                    latency,
                    amplitude,
                });
            }
            None => out.skipped += 1,
        }
    }
    if out.flashes.is_empty() {
        return Err(DecodeError::NoMarkers {
            start: window.start,
            end: window.end,
        });
    }
    out.scores = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    Ok(out)
}

/// Picks the stimulus with the largest mean P300 amplitude.
pub fn classify_p300(scores: &BTreeMap<StimulusId, f64>, config: &StimulusConfig) -> Result<Decision, DecodeError> {
    if scores.len() < 2 {
        return Err(DecodeError::TooFewCandidates(scores.len()));
    }
    let ranked = rank(scores, config);
    let (top, second) = (ranked[0].1, ranked[1].1);
    Ok(Decision {
        class_id: ranked[0].0,
        scores: scores.clone(),
        margin: relative_margin(top, second, Some(P300_MARGIN_FLOOR)),
        source: DecisionSource::P300,
        low_confidence: top == second,
        secondary_scores: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;

    const FS: f64 = 128.0;

    fn bump(t: f64, onset: f64, amp: f64) -> f64 {
        let d = t - onset;
        if (0.0..=1.0).contains(&d) {
            amp * (-(d - 0.3).powi(2) / (2.0 * 0.06f64.powi(2))).exp()
        } else {
            0.0
        }
    }

    fn record(flashes: &[(u32, f64, f64)], n: usize) -> EegRecord {
        let x = (0..n)
            .map(|i| {
                let t = i as f64 / FS;
                flashes.iter().map(|&(_, o, a)| bump(t, o, a)).sum()
            })
            .collect();
        let markers = flashes
            .iter()
            .map(|&(code, timestamp, _)| MarkerEvent { code, timestamp })
            .collect();
        EegRecord::new(FS, vec![Channel::new("F4", x)], markers).unwrap()
    }

    fn map(v: [f64; 4]) -> BTreeMap<StimulusId, f64> {
        v.iter().enumerate().map(|(i, &s)| (StimulusId(i as u8), s)).collect()
    }

    #[test]
    fn single_flash_amplitude_and_latency() {
        let r = record(&[(222, 1.0, 5.0)], 384);
        let s = p300_scores(
            &r,
            &AnalysisWindow::new(0.0, 3.0),
            &StimulusConfig::default(),
            &DecoderParams::default(),
        )
        .unwrap();
        let v = s.scores[&StimulusId(1)];
        assert!((4.9..=5.1).contains(&v), "{v}");
        assert!((s.flashes[0].latency - 0.3).abs() <= 2.0 / FS);
        assert_eq!(s.skipped, 0);
    }

    #[test]
    fn identical_flashes_average_to_single_score() {
        let c = StimulusConfig::default();
        let p = DecoderParams::default();
        let w = AnalysisWindow::new(0.0, 4.0);
        let one = p300_scores(&record(&[(111, 0.5, 5.0)], 512), &w, &c, &p).unwrap();
        let two = p300_scores(&record(&[(111, 0.5, 5.0), (111, 2.0, 5.0)], 512), &w, &c, &p).unwrap();
        assert!((one.scores[&StimulusId(0)] - two.scores[&StimulusId(0)]).abs() < 1e-12);
    }

    #[test]
    fn no_markers_names_the_window() {
        let r = record(&[], 384);
        assert_eq!(
            p300_scores(
                &r,
                &AnalysisWindow::new(0.5, 2.5),
                &StimulusConfig::default(),
                &DecoderParams::default()
            ),
            Err(DecodeError::NoMarkers { start: 0.5, end: 2.5 })
        );
    }

    #[test]
    fn flash_near_record_end_is_skipped() {
        let r = record(&[(111, 0.5, 5.0), (222, 2.7, 5.0)], 384);
        let s = p300_scores(
            &r,
            &AnalysisWindow::new(0.0, 3.0),
            &StimulusConfig::default(),
            &DecoderParams::default(),
        )
        .unwrap();
        assert_eq!(s.skipped, 1);
        assert_eq!(s.scores.len(), 1);
    }

    #[test]
    fn flash_at_record_start_is_skipped() {
        let r = record(&[(111, 0.05, 5.0), (222, 1.0, 5.0)], 384);
        let s = p300_scores(
            &r,
            &AnalysisWindow::new(0.0, 3.0),
            &StimulusConfig::default(),
            &DecoderParams::default(),
        )
        .unwrap();
        assert_eq!(s.skipped, 1);
    }

    #[test]
    fn unknown_codes_are_counted() {
        let r = record(&[(999, 0.5, 5.0), (111, 1.0, 5.0)], 384);
        let s = p300_scores(
            &r,
            &AnalysisWindow::new(0.0, 3.0),
            &StimulusConfig::default(),
            &DecoderParams::default(),
        )
        .unwrap();
        assert_eq!(s.unknown_codes, 1);
        assert_eq!(s.flashes.len(), 1);
    }

    #[test]
    fn target_against_nontargets() {
        let r = record(
            &[(111, 0.3, 0.5), (222, 0.8, 5.0), (333, 1.4, 0.5), (444, 2.0, 0.5)],
            640,
        );
        let c = StimulusConfig::default();
        let s = p300_scores(&r, &AnalysisWindow::new(0.0, 3.0), &c, &DecoderParams::default()).unwrap();
        let d = classify_p300(&s.scores, &c).unwrap();
        assert_eq!(d.class_id, StimulusId(1));
        assert!((d.margin - 9.0).abs() < 0.3, "{}", d.margin);
    }

    #[test]
    fn classify_examples() {
        let c = StimulusConfig::default();
        let d = classify_p300(&map([0.4, 4.8, 0.5, 0.3]), &c).unwrap();
        assert_eq!(d.class_id, StimulusId(1));
        assert_eq!(d.source, DecisionSource::P300);
        let tie = classify_p300(&map([1.0; 4]), &c).unwrap();
        assert_eq!(tie.class_id, StimulusId(0));
        assert!(tie.low_confidence);
        assert_eq!(tie.margin, 0.0);
    }

    #[test]
    fn negative_scores_use_the_floor() {
        let c = StimulusConfig::default();
        let d = classify_p300(&map([-0.5, -1.0, -2.0, 1e-3]), &c).unwrap();
        assert_eq!(d.class_id, StimulusId(3));
        assert!((d.margin - (1e-3 + 0.5) / P300_MARGIN_FLOOR).abs() < 1.0);
        let d = classify_p300(&map([-0.5, -1.0, -2.0, -3.0]), &c).unwrap();
        assert_eq!(d.class_id, StimulusId(0));
        assert!(d.margin.is_finite() && d.margin > 0.0);
    }

    #[test]
    fn reads_only_the_flash_spans() {
        let flashes = [(111, 0.4, 0.5), (222, 1.15, 5.0), (111, 1.9, 0.5), (333, 2.25, 0.5)];
        let clean = record(&flashes, 640);
        let w = AnalysisWindow::new(0.0, 3.0);
        let c = StimulusConfig::default();
        let p = DecoderParams::default();
        let mut dirty = clean.clone();
        for (i, v) in dirty.channels[0].samples.iter_mut().enumerate() {
            let t = i as f64 / FS;
            if !flashes.iter().any(|&(_, o, _)| t >= o - 0.1 && t <= o + 0.6) {
                *v = 1e6 * if i % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
        assert_eq!(p300_scores(&clean, &w, &c, &p), p300_scores(&dirty, &w, &c, &p));
    }
}
