//! Synthetic EEG standing in for the headset.
//!
//! O2 carries the SSVEP response (fundamental plus two harmonics of the
//! attended flicker, fresh random phases per focus segment). F4 carries a
//! Gaussian P300 bump after every red flash: full amplitude when the flashed
//! stimulus is the attended one, a fixed fraction otherwise. Both channels get
//! white plus 1/f noise. Everything is driven by ChaCha8 streams derived from
//! one seed.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::model::{Channel, EegRecord, SessionProtocol, StartTime, StimulusConfig, StimulusId};
use crate::stimulus::{emit_marker_events, Flash, FlashSchedule, StimulusError};

pub const SSVEP_CHANNEL: &str = "O2";
pub const P300_CHANNEL: &str = "F4";

/// EPOC-style 14 electrode layout used when `full_montage` is set.
pub const EPOC_MONTAGE: [&str; 14] = [
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1", "O2", "P8", "T8", "FC6", "F4", "F8", "AF4",
];

/// ChaCha stream for SSVEP phases. Noise uses streams 1..=14 and the flash
/// scheduler stream 0.
const PHASE_STREAM: u64 = 1 << 32;

/// P300 bumps are evaluated over `[onset, onset + TEMPLATE_SPAN]`.
const TEMPLATE_SPAN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub sample_rate: f64,
    /// Amplitudes in µV of the fundamental, second and third harmonic.
    pub ssvep_amplitudes: [f64; 3],
    pub p300_amplitude: f64,
    pub p300_latency: f64,
    pub p300_width_sigma: f64,
    /// Response to a flash of a stimulus that is not attended, relative to
    /// `p300_amplitude`.
    pub nontarget_p300_fraction: f64,
    pub noise_white_sigma: f64,
    pub noise_pink_sigma: f64,
    /// Red LED on-time used when scheduling flashes.
    pub flash_duration: f64,
    /// Add noise-only channels so the record mimics the 14-electrode layout.
    pub full_montage: bool,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            sample_rate: 128.0,
            ssvep_amplitudes: [4.0, 2.0, 1.0],
            p300_amplitude: 5.0,
            p300_latency: 0.300,
            p300_width_sigma: 0.060,
            nontarget_p300_fraction: 0.1,
            noise_white_sigma: 4.0,
            noise_pink_sigma: 4.0,
            flash_duration: crate::stimulus::DEFAULT_FLASH_DURATION,
            full_montage: false,
            seed: 0,
        }
    }
}

impl SynthParams {
    /// Defaults with both noise sources switched off.
    pub fn noise_free() -> Self {
        Self {
            noise_white_sigma: 0.0,
            noise_pink_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn check(&self, config: &StimulusConfig) -> Result<(), SynthError> {
        let amps = self.ssvep_amplitudes.iter().chain([
            &self.p300_amplitude,
            &self.nontarget_p300_fraction,
            &self.noise_white_sigma,
            &self.noise_pink_sigma,
        ]);
        for &a in amps {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(SynthError::Params(format!("amplitude {a} must be >= 0")));
            }
        }
        if !(self.sample_rate > 6.0 * config.max_frequency()) {
            return Err(SynthError::Params(format!(
                "sample rate {} Hz must exceed 6 x {} Hz",
                self.sample_rate,
                config.max_frequency()
            )));
        }
        if !(self.p300_width_sigma > 0.0)
            || !(self.p300_latency >= 0.0)
            || self.p300_latency + 3.0 * self.p300_width_sigma >= 0.600
        {
            return Err(SynthError::Params(format!(
                "P300 latency {} s + 3 x sigma {} s must stay below 0.6 s",
                self.p300_latency, self.p300_width_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth parameters: {0}")]
    Params(String),
    #[error("attention schedule is not contiguous from 0 at segment {0}")]
    Schedule(usize),
    #[error("flashes run to {flashes} s but the schedule ends at {schedule} s")]
    DurationMismatch { flashes: f64, schedule: f64 },
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error("unknown stimulus {0}")]
    UnknownStimulus(StimulusId),
}

/// What the participant looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attention {
    Stimulus(StimulusId),
    Rest,
}

impl Attention {
    pub fn stimulus(self) -> Option<StimulusId> {
        match self {
            Attention::Stimulus(id) => Some(id),
            Attention::Rest => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub attended: Attention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSchedule {
    pub segments: Vec<Segment>,
}

impl AttentionSchedule {
    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    pub fn attended_at(&self, t: f64) -> Attention {
        self.segments
            .iter()
            .find(|s| t >= s.start && t < s.end)
            .map_or(Attention::Rest, |s| s.attended)
    }

    pub fn focus_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments
            .iter()
            .filter(|s| matches!(s.attended, Attention::Stimulus(_)))
    }

    fn check(&self) -> Result<(), SynthError> {
        let mut t = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if (s.start - t).abs() > 1e-9 || s.end < s.start {
                return Err(SynthError::Schedule(i));
            }
            t = s.end;
        }
        Ok(())
    }
}

/// Expands the protocol into focus and rest segments, session after session.
/// Zero-length rest segments are omitted.
pub fn protocol_to_schedule(protocol: &SessionProtocol, config: &StimulusConfig) -> AttentionSchedule {
    let order = protocol.resolved_order(config);
    let mut segments = Vec::new();
    let mut t = 0.0;
    for _ in 0..protocol.sessions {
        for &id in &order {
            segments.push(Segment {
                start: t,
                end: t + protocol.focus_duration,
                attended: Attention::Stimulus(id),
            });
            t += protocol.focus_duration;
            if protocol.rest_duration > 0.0 {
                segments.push(Segment {
                    start: t,
                    end: t + protocol.rest_duration,
                    attended: Attention::Rest,
                });
                t += protocol.rest_duration;
            }
        }
    }
    AttentionSchedule { segments }
}

/// Kellet's refined pink filter: six leaky integrators plus direct terms.
#[derive(Debug, Clone, Default)]
struct PinkFilter {
    b: [f64; 7],
}

impl PinkFilter {
    const POLES: [f64; 6] = [0.99886, 0.99332, 0.96900, 0.86650, 0.55000, -0.7616];
    const GAINS: [f64; 6] = [0.0555179, 0.0750759, 0.1538520, 0.3104856, 0.5329522, -0.0168980];

    fn step(&mut self, white: f64) -> f64 {
        for i in 0..6 {
            self.b[i] = Self::POLES[i] * self.b[i] + white * Self::GAINS[i];
        }
        let out = self.b.iter().sum::<f64>() + white * 0.5362;
        self.b[6] = white * 0.115926;
        out
    }

    /// Output standard deviation for unit-variance white input.
    fn unit_gain() -> f64 {
        static GAIN: OnceLock<f64> = OnceLock::new();
        *GAIN.get_or_init(|| {
            let mut f = PinkFilter::default();
            let mut energy = f.step(1.0).powi(2);
            for _ in 0..40_000 {
                energy += f.step(0.0).powi(2);
            }
            energy.sqrt()
        })
    }
}

const PINK_BURN_IN: usize = 8192;

/// Seeded white + 1/f noise source for one channel.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    rng: ChaCha8Rng,
    pink: PinkFilter,
    white_sigma: f64,
    pink_sigma: f64,
}

impl NoiseGenerator {
    pub fn new(white_sigma: f64, pink_sigma: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut gen = Self {
            rng,
            pink: PinkFilter::default(),
            white_sigma,
            pink_sigma,
        };
        if pink_sigma > 0.0 {
            // settle the slow integrators so the output is stationary
            for _ in 0..PINK_BURN_IN {
                let w: f64 = StandardNormal.sample(&mut gen.rng);
                gen.pink.step(w);
            }
        }
        gen
    }

    pub fn next_sample(&mut self) -> f64 {
        let mut v = 0.0;
        if self.white_sigma > 0.0 {
            let w: f64 = StandardNormal.sample(&mut self.rng);
            v += self.white_sigma * w;
        }
        if self.pink_sigma > 0.0 {
            let w: f64 = StandardNormal.sample(&mut self.rng);
            v += self.pink_sigma * self.pink.step(w) / PinkFilter::unit_gain();
        }
        v
    }
}

/// `length` samples of white (`noise_white_sigma`) plus pink
/// (`noise_pink_sigma`) noise.
pub fn noise(length: usize, params: &SynthParams, seed: u64) -> Vec<f64> {
    let mut g = NoiseGenerator::new(params.noise_white_sigma, params.noise_pink_sigma, seed, 1);
    (0..length).map(|_| g.next_sample()).collect()
}

#[derive(Debug, Clone, Copy)]
struct ActiveBump {
    onset: f64,
    amplitude: f64,
}

/// Sample-by-sample renderer shared by the offline and live paths.
///
/// Attention and flashes are pushed in by the caller; `render` advances the
/// clock. Channel order is given by [`StreamingSynth::labels`].
#[derive(Debug, Clone)]
pub struct StreamingSynth {
    params: SynthParams,
    frequencies: Vec<(StimulusId, f64)>,
    labels: Vec<String>,
    ssvep_index: usize,
    p300_index: usize,
    noise: Vec<NoiseGenerator>,
    phase_rng: ChaCha8Rng,
    attention: Attention,
    phases: [f64; 3],
    bumps: Vec<ActiveBump>,
    sample_index: u64,
}

impl StreamingSynth {
    pub fn new(params: &SynthParams, config: &StimulusConfig) -> Result<Self, SynthError> {
        params.check(config)?;
        let labels: Vec<String> = if params.full_montage {
            EPOC_MONTAGE.iter().map(|s| s.to_string()).collect()
        } else {
            vec![SSVEP_CHANNEL.into(), P300_CHANNEL.into()]
        };
        let ssvep_index = labels.iter().position(|l| l == SSVEP_CHANNEL).unwrap();
        let p300_index = labels.iter().position(|l| l == P300_CHANNEL).unwrap();
        let noise = (0..labels.len())
            .map(|i| {
                NoiseGenerator::new(
                    params.noise_white_sigma,
                    params.noise_pink_sigma,
                    params.seed,
                    i as u64 + 1,
                )
            })
            .collect();
        let mut phase_rng = ChaCha8Rng::seed_from_u64(params.seed);
        phase_rng.set_stream(PHASE_STREAM);
        Ok(Self {
            params: params.clone(),
            frequencies: config.stimuli.iter().map(|s| (s.id, s.frequency)).collect(),
            labels,
            ssvep_index,
            p300_index,
            noise,
            phase_rng,
            attention: Attention::Rest,
            phases: [0.0; 3],
            bumps: Vec::new(),
            sample_index: 0,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn attention(&self) -> Attention {
        self.attention
    }

    /// Time of the next sample to be rendered.
    pub fn time(&self) -> f64 {
        self.sample_index as f64 / self.params.sample_rate
    }

    pub fn sample_index(&self) -> u64 {
        self.sample_index
    }

    /// Starts a new attention segment. Focus segments draw fresh phases.
    pub fn begin_segment(&mut self, attention: Attention) -> Result<(), SynthError> {
        if let Attention::Stimulus(id) = attention {
            if !self.frequencies.iter().any(|(s, _)| *s == id) {
                return Err(SynthError::UnknownStimulus(id));
            }
            let u = Uniform::new(0.0, 2.0 * PI).expect("valid range");
            for p in &mut self.phases {
                *p = u.sample(&mut self.phase_rng);
            }
        }
        self.attention = attention;
        Ok(())
    }

    /// Switches attention, starting a new segment only if it changed.
    pub fn set_attention(&mut self, attention: Attention) -> Result<(), SynthError> {
        if attention != self.attention {
            self.begin_segment(attention)?;
        }
        Ok(())
    }

    /// Registers a flash; `target` selects full or non-target amplitude.
    pub fn add_flash(&mut self, flash: &Flash, target: bool) {
        let scale = if target {
            1.0
        } else {
            self.params.nontarget_p300_fraction
        };
        self.bumps.push(ActiveBump {
            onset: flash.onset,
            amplitude: scale * self.params.p300_amplitude,
        });
    }

    fn ssvep_value(&self, t: f64) -> f64 {
        let Some(id) = self.attention.stimulus() else {
            return 0.0;
        };
        let f = self
            .frequencies
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, f)| *f)
            .unwrap_or(0.0);
        self.params
            .ssvep_amplitudes
            .iter()
            .zip(self.phases)
            .enumerate()
            .map(|(k, (a, phi))| a * (2.0 * PI * (k + 1) as f64 * f * t + phi).sin())
            .sum()
    }

    fn p300_value(&self, t: f64) -> f64 {
        let sigma = self.params.p300_width_sigma;
        self.bumps
            .iter()
            .filter(|b| t >= b.onset && t <= b.onset + TEMPLATE_SPAN)
            .map(|b| {
                let d = t - b.onset - self.params.p300_latency;
                b.amplitude * (-(d * d) / (2.0 * sigma * sigma)).exp()
            })
            .sum()
    }

    /// Renders `n` samples per channel.
    pub fn render(&mut self, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(n); self.labels.len()];
        for _ in 0..n {
            let t = self.time();
            self.bumps.retain(|b| t <= b.onset + TEMPLATE_SPAN);
            for (ch, buf) in out.iter_mut().enumerate() {
                let mut v = self.noise[ch].next_sample();
                if ch == self.ssvep_index {
                    v += self.ssvep_value(t);
                }
                if ch == self.p300_index {
                    v += self.p300_value(t);
                }
                buf.push(v);
            }
            self.sample_index += 1;
        }
        out
    }
}

/// Renders a whole record for an attention schedule and flash schedule.
pub fn synthesize(
    schedule: &AttentionSchedule,
    flashes: &FlashSchedule,
    params: &SynthParams,
    config: &StimulusConfig,
) -> Result<EegRecord, SynthError> {
    schedule.check()?;
    let duration = schedule.duration();
    if let Some(last) = flashes.flashes.last() {
        if last.onset + last.duration > duration + 1e-9 {
            return Err(SynthError::DurationMismatch {
                flashes: last.onset + last.duration,
                schedule: duration,
            });
        }
    }
    let fs = params.sample_rate;
    let total = (duration * fs).round() as usize;
    let mut synth = StreamingSynth::new(params, config)?;
    let mut channels: Vec<Vec<f64>> = vec![Vec::with_capacity(total); synth.labels().len()];

    // Render up to each event (segment start or flash onset) in turn.
    let mut pending_flashes = flashes.flashes.iter().peekable();
    let mut segments = schedule.segments.iter().peekable();
    for i in 0..total {
        let t = i as f64 / fs;
        while let Some(seg) = segments.peek() {
            if sample_of(seg.start, fs) <= i {
                synth.begin_segment(seg.attended)?;
                segments.next();
            } else {
                break;
            }
        }
        while let Some(flash) = pending_flashes.peek() {
            if flash.onset <= t {
                let target = schedule.attended_at(flash.onset) == Attention::Stimulus(flash.stimulus_id);
                synth.add_flash(flash, target);
                pending_flashes.next();
            } else {
                break;
            }
        }
        for (buf, v) in channels.iter_mut().zip(synth.render(1)) {
            buf.push(v[0]);
        }
    }

    let markers = emit_marker_events(flashes, config)?;
    let labels = synth.labels().to_vec();
    Ok(EegRecord {
        sample_rate: fs,
        channels: labels
            .into_iter()
            .zip(channels)
            .map(|(l, s)| Channel::new(l, s))
            .collect(),
        markers,
        start: StartTime::default(),
    })
}

fn sample_of(t: f64, fs: f64) -> usize {
    (t * fs - 1e-9).ceil().max(0.0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::schedule_flashes;
    use approx::assert_relative_eq;

    fn cfg() -> StimulusConfig {
        StimulusConfig::default()
    }

    fn single_segment(id: u8, dur: f64) -> AttentionSchedule {
        AttentionSchedule {
            segments: vec![Segment {
                start: 0.0,
                end: dur,
                attended: Attention::Stimulus(StimulusId(id)),
            }],
        }
    }

    fn no_flashes() -> FlashSchedule {
        FlashSchedule {
            flashes: vec![],
            seed: 0,
        }
    }

    #[test]
    fn default_protocol_schedule() {
        let s = protocol_to_schedule(
            &SessionProtocol {
                sessions: 1,
                ..Default::default()
            },
            &cfg(),
        );
        let got: Vec<_> = s
            .segments
            .iter()
            .map(|g| (g.start, g.end, g.attended.stimulus().map(|i| i.0)))
            .collect();
        assert_eq!(
            got,
            vec![
                (0.0, 3.0, Some(0)),
                (3.0, 8.0, None),
                (8.0, 11.0, Some(1)),
                (11.0, 16.0, None),
                (16.0, 19.0, Some(2)),
                (19.0, 24.0, None),
                (24.0, 27.0, Some(3)),
                (27.0, 32.0, None),
            ]
        );
        let two = protocol_to_schedule(
            &SessionProtocol {
                sessions: 2,
                ..Default::default()
            },
            &cfg(),
        );
        assert_eq!(two.duration(), 64.0);
        assert_eq!(
            two.segments[8..],
            {
                let mut v = s.segments.clone();
                for g in &mut v {
                    g.start += 32.0;
                    g.end += 32.0;
                }
                v
            }[..]
        );
    }

    /// Naive DFT magnitude at `freq` for a signal spanning whole cycles.
    fn dft_amplitude(x: &[f64], fs: f64, freq: f64) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let w = 2.0 * PI * freq * i as f64 / fs;
            re += v * w.cos();
            im -= v * w.sin();
        }
        2.0 * (re * re + im * im).sqrt() / n
    }

    #[test]
    fn ssvep_spectrum_has_harmonics_in_4_2_1_ratio() {
        let p = SynthParams::noise_free();
        let rec = synthesize(&single_segment(2, 3.0), &no_flashes(), &p, &cfg()).unwrap();
        let o2 = &rec.channel("O2").unwrap().samples;
        assert_eq!(o2.len(), 384);
        let a1 = dft_amplitude(o2, 128.0, 9.0);
        let a2 = dft_amplitude(o2, 128.0, 18.0);
        let a3 = dft_amplitude(o2, 128.0, 27.0);
        assert_relative_eq!(a1, 4.0, epsilon = 1e-9);
        assert_relative_eq!(a2, 2.0, epsilon = 1e-9);
        assert_relative_eq!(a3, 1.0, epsilon = 1e-9);
        // peak bin is the fundamental
        for k in 1..64 {
            let f = k as f64 / 3.0;
            if (f - 9.0).abs() > 1e-9 {
                assert!(dft_amplitude(o2, 128.0, f) < a1);
            }
        }
    }

    #[test]
    fn single_target_flash_peaks_at_300_ms() {
        let p = SynthParams::noise_free();
        let flashes = FlashSchedule {
            flashes: vec![Flash {
                stimulus_id: StimulusId(1),
                onset: 1.0,
                duration: 0.1,
            }],
            seed: 0,
        };
        let rec = synthesize(&single_segment(1, 3.0), &flashes, &p, &cfg()).unwrap();
        let f4 = &rec.channel("F4").unwrap().samples;
        let (imax, vmax) = (129..=204)
            .map(|i| (i, f4[i]))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        let t = imax as f64 / 128.0;
        assert!((t - 1.3).abs() <= 1.0 / 128.0, "t={t}");
        // analytic template value at the nearest sample
        let d: f64 = t - 1.3;
        let expect = 5.0 * (-(d * d) / (2.0 * 0.06 * 0.06)).exp();
        assert_relative_eq!(vmax, expect, epsilon = 1e-12);
        assert!((vmax - 5.0).abs() < 0.01);
        assert_eq!(rec.markers.len(), 1);
        assert_eq!(rec.markers[0].code, 222);
    }

    #[test]
    fn nontarget_flash_is_scaled() {
        let p = SynthParams::noise_free();
        let flashes = FlashSchedule {
            flashes: vec![Flash {
                stimulus_id: StimulusId(3),
                onset: 1.0,
                duration: 0.1,
            }],
            seed: 0,
        };
        let rec = synthesize(&single_segment(1, 3.0), &flashes, &p, &cfg()).unwrap();
        let f4 = &rec.channel("F4").unwrap().samples;
        let peak = f4.iter().cloned().fold(f64::MIN, f64::max);
        assert!((peak - 0.5).abs() < 0.001);
    }

    #[test]
    fn null_model_is_zero() {
        let p = SynthParams {
            ssvep_amplitudes: [0.0; 3],
            p300_amplitude: 0.0,
            ..SynthParams::noise_free()
        };
        let sched = protocol_to_schedule(
            &SessionProtocol {
                sessions: 1,
                ..Default::default()
            },
            &cfg(),
        );
        let flashes = schedule_flashes(&cfg(), 32.0, 0.1, 9).unwrap();
        let rec = synthesize(&sched, &flashes, &p, &cfg()).unwrap();
        for ch in &rec.channels {
            assert!(ch.samples.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rest_segments_are_silent_on_o2() {
        let sched = protocol_to_schedule(
            &SessionProtocol {
                sessions: 1,
                ..Default::default()
            },
            &cfg(),
        );
        let flashes = schedule_flashes(&cfg(), 32.0, 0.1, 4).unwrap();
        let rec = synthesize(&sched, &flashes, &SynthParams::noise_free(), &cfg()).unwrap();
        let o2 = &rec.channel("O2").unwrap().samples;
        for seg in sched.segments.iter().filter(|s| s.attended == Attention::Rest) {
            let a = (seg.start * 128.0) as usize;
            let b = (seg.end * 128.0) as usize;
            assert!(o2[a..b].iter().all(|&v| v == 0.0));
        }
        assert!(o2[0..384].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn ssvep_is_linear_in_amplitudes() {
        let sched = protocol_to_schedule(
            &SessionProtocol {
                sessions: 1,
                ..Default::default()
            },
            &cfg(),
        );
        let flashes = schedule_flashes(&cfg(), 32.0, 0.1, 4).unwrap();
        let p1 = SynthParams::noise_free();
        let p2 = SynthParams {
            ssvep_amplitudes: [8.0, 4.0, 2.0],
            ..SynthParams::noise_free()
        };
        let a = synthesize(&sched, &flashes, &p1, &cfg()).unwrap();
        let b = synthesize(&sched, &flashes, &p2, &cfg()).unwrap();
        let (xa, xb) = (&a.channel("O2").unwrap().samples, &b.channel("O2").unwrap().samples);
        for (u, v) in xa.iter().zip(xb) {
            assert!((2.0 * u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn deterministic_and_markers_match_flashes() {
        let sched = protocol_to_schedule(
            &SessionProtocol {
                sessions: 1,
                ..Default::default()
            },
            &cfg(),
        );
        let flashes = schedule_flashes(&cfg(), 32.0, 0.1, 4).unwrap();
        let p = SynthParams {
            seed: 77,
            full_montage: true,
            ..Default::default()
        };
        let a = synthesize(&sched, &flashes, &p, &cfg()).unwrap();
        let b = synthesize(&sched, &flashes, &p, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.channels.len(), 14);
        assert_eq!(a.markers, emit_marker_events(&flashes, &cfg()).unwrap());
        a.check().unwrap();
        let c = synthesize(&sched, &flashes, &SynthParams { seed: 78, ..p }, &cfg()).unwrap();
        assert_ne!(a.channels[0], c.channels[0]);
    }

    #[test]
    fn flashes_past_schedule_are_rejected() {
        let flashes = schedule_flashes(&cfg(), 10.0, 0.1, 1).unwrap();
        let err = synthesize(&single_segment(0, 3.0), &flashes, &SynthParams::noise_free(), &cfg());
        assert!(matches!(err, Err(SynthError::DurationMismatch { .. })));
    }

    #[test]
    fn white_noise_std() {
        let p = SynthParams {
            noise_white_sigma: 1.0,
            noise_pink_sigma: 0.0,
            ..Default::default()
        };
        let x = noise(100_000, &p, 5);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!((0.98..=1.02).contains(&sd), "sd {sd}");
        assert_eq!(x, noise(100_000, &p, 5));
    }

    #[test]
    fn pink_noise_std_and_spectrum_slope() {
        let p = SynthParams {
            noise_white_sigma: 0.0,
            noise_pink_sigma: 2.0,
            ..Default::default()
        };
        let x = noise(1 << 17, &p, 11);
        let sd = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((1.8..=2.2).contains(&sd), "sd {sd}");
        // power in a low band should clearly exceed power in a high band
        let low: f64 = (1..40)
            .map(|k| dft_amplitude(&x[..8192], 128.0, k as f64 * 0.05 + 1.0).powi(2))
            .sum();
        let high: f64 = (1..40)
            .map(|k| dft_amplitude(&x[..8192], 128.0, k as f64 * 0.05 + 40.0).powi(2))
            .sum();
        assert!(low > 5.0 * high, "low {low} high {high}");
    }

    #[test]
    fn zero_noise_is_zero() {
        assert!(noise(1000, &SynthParams::noise_free(), 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_checks() {
        let c = cfg();
        assert!(SynthParams::default().check(&c).is_ok());
        assert!(SynthParams {
            sample_rate: 60.0,
            ..Default::default()
        }
        .check(&c)
        .is_err());
        assert!(SynthParams {
            p300_latency: 0.45,
            ..Default::default()
        }
        .check(&c)
        .is_err());
        assert!(SynthParams {
            p300_amplitude: -1.0,
            ..Default::default()
        }
        .check(&c)
        .is_err());
    }
}
