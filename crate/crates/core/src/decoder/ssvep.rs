use std::collections::BTreeMap;

use crate::model::{relative_margin, Decision, DecisionSource, EegRecord, StimulusConfig, StimulusId};

use super::filter::butterworth_bandpass;
use super::{population_variance, rank, window_samples, AnalysisWindow, DecodeError, DecoderParams};

/// Band energy per stimulus over `window` of the SSVEP channel.
///
/// For every stimulus frequency `f` and harmonic `k`, the window is
/// band-passed around `k·f`, trimmed by `edge_trim` on both ends, and its
/// variance taken; the energies of all harmonics are summed.
pub fn ssvep_scores(
    record: &EegRecord,
    window: &AnalysisWindow,
    config: &StimulusConfig,
    params: &DecoderParams,
) -> Result<BTreeMap<StimulusId, f64>, DecodeError> {
    let x = window_samples(record, window, &window.channel_ssvep)?;
    ssvep_scores_from_samples(x, record.sample_rate, config, params).map_err(|e| match e {
        DecodeError::EmptyWindow { .. } => DecodeError::EmptyWindow {
            start: window.start,
            end: window.end,
        },
        e => e,
    })
}

/// [`ssvep_scores`] on an already extracted window.
pub fn ssvep_scores_from_samples(
    x: &[f64],
    sample_rate: f64,
    config: &StimulusConfig,
    params: &DecoderParams,
) -> Result<BTreeMap<StimulusId, f64>, DecodeError> {
    params.check()?;
    let trim = (params.edge_trim * sample_rate).round() as usize;
    if x.len() <= 2 * trim {
        return Err(DecodeError::EmptyWindow {
            start: 0.0,
            end: x.len() as f64 / sample_rate,
        });
    }
    let mut scores = BTreeMap::new();
    for s in &config.stimuli {
        let mut energy = 0.0;
        for &k in &params.harmonics {
            let filter = butterworth_bandpass(
                sample_rate,
                k as f64 * s.frequency,
                params.band_halfwidth,
                params.filter_order,
            )?;
            let y = filter.apply(x, params.filter_mode);
            energy += population_variance(&y[trim..y.len() - trim]);
        }
        scores.insert(s.id, energy);
    }
    Ok(scores)
}

/// Picks the stimulus with the highest band energy.
pub fn classify_ssvep(scores: &BTreeMap<StimulusId, f64>, config: &StimulusConfig) -> Result<Decision, DecodeError> {
    if scores.len() < 2 {
        return Err(DecodeError::TooFewCandidates(scores.len()));
    }
    let ranked = rank(scores, config);
    let (top, second) = (ranked[0].1, ranked[1].1);
    Ok(Decision {
        class_id: ranked[0].0,
        scores: scores.clone(),
        margin: relative_margin(top, second, None),
        source: DecisionSource::Ssvep,
        low_confidence: top == second,
        secondary_scores: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;
    use std::f64::consts::PI;

    fn map(v: [f64; 4]) -> BTreeMap<StimulusId, f64> {
        v.iter().enumerate().map(|(i, &s)| (StimulusId(i as u8), s)).collect()
    }

    fn tone_record(freq: f64, amp: f64) -> EegRecord {
        let x = (0..384)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / 128.0 + 0.4).sin())
            .collect();
        EegRecord::new(128.0, vec![Channel::new("O2", x)], vec![]).unwrap()
    }

    #[test]
    fn classify_examples() {
        let c = StimulusConfig::default();
        let d = classify_ssvep(&map([1.0, 0.2, 0.1, 0.1]), &c).unwrap();
        assert_eq!(d.class_id, StimulusId(0));
        assert!((d.margin - 4.0).abs() < 1e-12);
        assert_eq!(d.source, DecisionSource::Ssvep);
        assert!(!d.low_confidence);

        let tie = classify_ssvep(&map([0.3; 4]), &c).unwrap();
        assert_eq!(tie.class_id, StimulusId(0));
        assert!(tie.low_confidence);

        let scaled = classify_ssvep(&map([7.0, 1.4, 0.7, 0.7]), &c).unwrap();
        assert_eq!(scaled.class_id, d.class_id);
        assert!((scaled.margin - d.margin).abs() < 1e-12);
    }

    #[test]
    fn tie_breaks_toward_lowest_frequency_not_lowest_id() {
        let mut c = StimulusConfig::default();
        c.stimuli[0].frequency = 11.0;
        let d = classify_ssvep(&map([0.5, 0.5, 0.1, 0.1]), &c).unwrap();
        assert_eq!(d.class_id, StimulusId(1));
    }

    #[test]
    fn too_few_candidates() {
        let one: BTreeMap<_, _> = [(StimulusId(0), 1.0)].into();
        assert_eq!(
            classify_ssvep(&one, &StimulusConfig::default()),
            Err(DecodeError::TooFewCandidates(1))
        );
    }

    #[test]
    fn pure_tone_is_classified() {
        let c = StimulusConfig::default();
        let p = DecoderParams::default();
        for (i, f) in [7.0, 8.0, 9.0, 10.0].iter().enumerate() {
            let r = tone_record(*f, 3.0);
            let s = ssvep_scores(&r, &AnalysisWindow::new(0.0, 3.0), &c, &p).unwrap();
            assert_eq!(classify_ssvep(&s, &c).unwrap().class_id, StimulusId(i as u8));
            assert!(s.values().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn scores_scale_quadratically() {
        let c = StimulusConfig::default();
        let p = DecoderParams::default();
        let w = AnalysisWindow::new(0.0, 3.0);
        let a = ssvep_scores(&tone_record(8.0, 1.0), &w, &c, &p).unwrap();
        let b = ssvep_scores(&tone_record(8.0, 2.5), &w, &c, &p).unwrap();
        for (id, v) in &a {
            assert!((b[id] - 6.25 * v).abs() <= 1e-9 * b[id].max(1e-12));
        }
    }

    #[test]
    fn zero_signal_scores_zero() {
        let r = tone_record(8.0, 0.0);
        let s = ssvep_scores(
            &r,
            &AnalysisWindow::new(0.0, 3.0),
            &StimulusConfig::default(),
            &DecoderParams::default(),
        )
        .unwrap();
        assert!(s.values().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let c = StimulusConfig::default();
        let p = DecoderParams::default();
        let r = tone_record(8.0, 1.0);
        let mut w = AnalysisWindow::new(0.0, 3.0);
        w.channel_ssvep = "Oz".into();
        assert_eq!(
            ssvep_scores(&r, &w, &c, &p),
            Err(DecodeError::MissingChannel("Oz".into()))
        );
        assert!(matches!(
            ssvep_scores(&r, &AnalysisWindow::new(1.0, 4.0), &c, &p),
            Err(DecodeError::WindowOutOfRange { .. })
        ));
        assert!(matches!(
            ssvep_scores(&r, &AnalysisWindow::new(1.0, 1.9), &c, &p),
            Err(DecodeError::EmptyWindow { start, .. }) if start == 1.0
        ));
    }
}
