//! Software model of the stimulus board: four periodic flicker channels and
//! the random red-flash scheduler that emits marker events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{MarkerEvent, Stimulus, StimulusConfig, StimulusId};

/// Default timeline tick: 1 ms.
pub const DEFAULT_RESOLUTION: f64 = 1e-3;
/// Default red LED on-time.
pub const DEFAULT_FLASH_DURATION: f64 = 0.100;
/// Bounds on the gap between successive flash onsets, in microseconds.
pub const MIN_GAP_US: u64 = 200_000;
pub const MAX_GAP_US: u64 = 800_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StimulusError {
    #[error("frequency {0} Hz must be positive")]
    Frequency(f64),
    #[error("duty cycle {0} outside (0, 1)")]
    DutyCycle(f64),
    #[error("duration {0} s is not valid")]
    Duration(f64),
    #[error("resolution {resolution} s too coarse for {frequency} Hz (need <= {limit} s)")]
    ResolutionTooCoarse {
        resolution: f64,
        frequency: f64,
        limit: f64,
    },
    #[error("flash duration {0} s outside (0, 0.2)")]
    FlashDuration(f64),
    #[error("schedule references unknown stimulus {0}")]
    UnknownStimulus(StimulusId),
    #[error("stimulus config must contain at least two stimuli")]
    TooFewStimuli,
}

/// Whether a flicker of `frequency` Hz and `duty_cycle` is lit at `t` seconds.
///
/// The ring is ON while the fractional phase `t·f mod 1` is below the duty
/// cycle; the cycle starts ON at `t = 0`. Phases within 1e-9 of a whole cycle
/// are snapped to the cycle start so `t` and `t + 1/f` agree.
pub fn flicker_state(frequency: f64, duty_cycle: f64, t: f64) -> bool {
    flicker_phase(frequency, t) < duty_cycle
}

fn flicker_phase(frequency: f64, t: f64) -> f64 {
    let p = t * frequency;
    let nearest = p.round();
    if (p - nearest).abs() <= 1e-9 * p.abs().max(1.0) {
        0.0
    } else {
        p - p.floor()
    }
}

/// ON/OFF state of one flicker channel sampled on a uniform tick grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlickerTimeline {
    pub stimulus_id: StimulusId,
    pub frequency: f64,
    pub duty_cycle: f64,
    /// Seconds per tick.
    pub resolution: f64,
    pub states: Vec<bool>,
}

impl FlickerTimeline {
    pub fn on_fraction(&self) -> f64 {
        if self.states.is_empty() {
            return 0.0;
        }
        self.states.iter().filter(|&&s| s).count() as f64 / self.states.len() as f64
    }

    /// Tick indices where the ring switches OFF→ON. Tick 0 counts as rising.
    pub fn rising_edges(&self) -> Vec<usize> {
        let mut edges = Vec::new();
        for (i, &s) in self.states.iter().enumerate() {
            if s && (i == 0 || !self.states[i - 1]) {
                edges.push(i);
            }
        }
        edges
    }

    /// Number of ON→OFF transitions.
    pub fn falling_edge_count(&self) -> usize {
        self.states.windows(2).filter(|w| w[0] && !w[1]).count()
    }

    /// Distances between successive rising edges, in ticks.
    pub fn periods_in_ticks(&self) -> Vec<usize> {
        self.rising_edges().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Mean measured period in seconds, if at least two rising edges exist.
    pub fn measured_period(&self) -> Option<f64> {
        let p = self.periods_in_ticks();
        if p.is_empty() {
            return None;
        }
        Some(p.iter().sum::<usize>() as f64 / p.len() as f64 * self.resolution)
    }
}

/// Samples one stimulus' flicker for `duration` seconds at `resolution`
/// seconds per tick. Each tick holds the state at its midpoint. The tick must
/// be at most a tenth of the period.
pub fn build_flicker_timeline(
    stimulus: &Stimulus,
    duration: f64,
    resolution: f64,
) -> Result<FlickerTimeline, StimulusError> {
    let f = stimulus.frequency;
    if !(f > 0.0 && f.is_finite()) {
        return Err(StimulusError::Frequency(f));
    }
    if !(stimulus.duty_cycle > 0.0 && stimulus.duty_cycle < 1.0) {
        return Err(StimulusError::DutyCycle(stimulus.duty_cycle));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(StimulusError::Duration(duration));
    }
    let limit = 1.0 / (10.0 * f);
    if !(resolution > 0.0) || resolution > limit * (1.0 + 1e-12) {
        return Err(StimulusError::ResolutionTooCoarse {
            resolution,
            frequency: f,
            limit,
        });
    }
    let ticks = (duration / resolution).round() as usize;
    let states = (0..ticks)
        .map(|i| flicker_state(f, stimulus.duty_cycle, (i as f64 + 0.5) * resolution))
        .collect();
    Ok(FlickerTimeline {
        stimulus_id: stimulus.id,
        frequency: f,
        duty_cycle: stimulus.duty_cycle,
        resolution,
        states,
    })
}

/// ON/OFF state of every stimulus at `t`, in config order.
pub fn board_state(config: &StimulusConfig, t: f64) -> Vec<bool> {
    config
        .stimuli
        .iter()
        .map(|s| flicker_state(s.frequency, s.duty_cycle, t))
        .collect()
}

/// One red LED flash.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flash {
    pub stimulus_id: StimulusId,
    /// Onset in seconds; always a whole number of microseconds.
    pub onset: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashSchedule {
    pub flashes: Vec<Flash>,
    pub seed: u64,
}

impl FlashSchedule {
    /// Gaps between successive onsets, in seconds.
    pub fn gaps(&self) -> Vec<f64> {
        self.flashes.windows(2).map(|w| w[1].onset - w[0].onset).collect()
    }
}

/// Incremental flash generator.
///
/// Gaps are drawn uniformly in whole microseconds from
/// `[MIN_GAP_US, MAX_GAP_US]` by a ChaCha8 stream seeded with `seed`, so the
/// sequence reproduces on every platform. The first onset is one gap after
/// `t = 0`. The flashed LED is uniform over the stimuli, never the same one
/// twice in a row.
#[derive(Debug, Clone)]
pub struct FlashScheduler {
    rng: ChaCha8Rng,
    ids: Vec<StimulusId>,
    last: Option<usize>,
    cursor_us: u64,
    flash_duration: f64,
}

impl FlashScheduler {
    pub fn new(config: &StimulusConfig, flash_duration: f64, seed: u64) -> Result<Self, StimulusError> {
        if !(flash_duration > 0.0 && flash_duration < MIN_GAP_US as f64 / 1e6) {
            return Err(StimulusError::FlashDuration(flash_duration));
        }
        let ids: Vec<StimulusId> = config.ids().collect();
        if ids.len() < 2 {
            return Err(StimulusError::TooFewStimuli);
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ids,
            last: None,
            cursor_us: 0,
            flash_duration,
        })
    }

    /// Onset of the most recently generated flash, in microseconds.
    pub fn cursor_us(&self) -> u64 {
        self.cursor_us
    }

    pub fn next_flash(&mut self) -> Flash {
        let gap = self.rng.random_range(MIN_GAP_US..=MAX_GAP_US);
        self.cursor_us += gap;
        let pick = match self.last {
            None => self.rng.random_range(0..self.ids.len()),
            Some(prev) => {
                // skip over the previous LED
                let k = self.rng.random_range(0..self.ids.len() - 1);
                if k >= prev {
                    k + 1
                } else {
                    k
                }
            }
        };
        self.last = Some(pick);
        Flash {
            stimulus_id: self.ids[pick],
            onset: self.cursor_us as f64 / 1e6,
            duration: self.flash_duration,
        }
    }
}

impl Iterator for FlashScheduler {
    type Item = Flash;

    fn next(&mut self) -> Option<Flash> {
        Some(self.next_flash())
    }
}

/// All flashes that start and finish within `[0, duration]`.
pub fn schedule_flashes(
    config: &StimulusConfig,
    duration: f64,
    flash_duration: f64,
    seed: u64,
) -> Result<FlashSchedule, StimulusError> {
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(StimulusError::Duration(duration));
    }
    let scheduler = FlashScheduler::new(config, flash_duration, seed)?;
    let flashes = scheduler.take_while(|f| f.onset + f.duration <= duration).collect();
    Ok(FlashSchedule { flashes, seed })
}

/// One marker per flash, coded by the flashed stimulus, stamped at onset.
pub fn emit_marker_events(
    schedule: &FlashSchedule,
    config: &StimulusConfig,
) -> Result<Vec<MarkerEvent>, StimulusError> {
    let mut events = schedule
        .flashes
        .iter()
        .map(|f| {
            config
                .get(f.stimulus_id)
                .map(|s| MarkerEvent {
                    code: s.marker_code,
                    timestamp: f.onset,
                })
                .ok_or(StimulusError::UnknownStimulus(f.stimulus_id))
        })
        .collect::<Result<Vec<_>, _>>()?;
    events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stim(f: f64) -> Stimulus {
        Stimulus {
            id: StimulusId(0),
            frequency: f,
            duty_cycle: 0.85,
            position: crate::model::Position::Top,
            marker_code: 111,
        }
    }

    #[test]
    fn flicker_at_7_hz() {
        assert!(flicker_state(7.0, 0.85, 0.0));
        // ON window is [0, 0.85/7) = [0, 0.121428...)
        assert!(flicker_state(7.0, 0.85, 0.120));
        assert!(!flicker_state(7.0, 0.85, 0.130));
        assert!(flicker_state(7.0, 0.85, 1.0 / 7.0));
    }

    #[test]
    fn timeline_7_hz_three_seconds() {
        let tl = build_flicker_timeline(&stim(7.0), 3.0, 1e-3).unwrap();
        assert_eq!(tl.states.len(), 3000);
        // counting oracle
        let on = tl.states.iter().filter(|&&s| s).count();
        assert!((on as i64 - 2550).abs() <= 1, "on={on}");
    }

    #[test]
    fn timeline_10_hz_has_ten_falling_edges() {
        let tl = build_flicker_timeline(&stim(10.0), 1.0, 1e-3).unwrap();
        assert_eq!(tl.falling_edge_count(), 10);
        assert_eq!(tl.rising_edges().len(), 10);
        assert_eq!(tl.periods_in_ticks(), vec![100; 9]);
    }

    #[test]
    fn one_period_on_fraction_within_one_tick() {
        for f in [7.0, 8.0, 9.0, 10.0, 13.0] {
            let tl = build_flicker_timeline(&stim(f), 1.0 / f, 1e-3).unwrap();
            let n = tl.states.len() as f64;
            assert!((tl.on_fraction() - 0.85).abs() <= 1.0 / n + 1e-12, "f={f}");
        }
    }

    #[test]
    fn coarse_resolution_rejected() {
        assert!(matches!(
            build_flicker_timeline(&stim(10.0), 1.0, 0.02),
            Err(StimulusError::ResolutionTooCoarse { .. })
        ));
        assert!(build_flicker_timeline(&stim(10.0), 1.0, 0.01).is_ok());
    }

    #[test]
    fn empty_schedule_for_zero_duration() {
        let s = schedule_flashes(&StimulusConfig::default(), 0.0, 0.1, 1).unwrap();
        assert!(s.flashes.is_empty());
    }

    #[test]
    fn schedule_gaps_and_determinism() {
        let c = StimulusConfig::default();
        let a = schedule_flashes(&c, 10.0, 0.1, 42).unwrap();
        let b = schedule_flashes(&c, 10.0, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert!(!a.flashes.is_empty());
        assert!(a.flashes[0].onset >= 0.2 && a.flashes[0].onset <= 0.8);
        for g in a.gaps() {
            assert!((0.2 - 1e-12..=0.8 + 1e-12).contains(&g), "gap {g}");
        }
        let last = a.flashes.last().unwrap();
        assert!(last.onset + last.duration <= 10.0);
    }

    #[test]
    fn schedule_mean_gap_over_ten_minutes() {
        let c = StimulusConfig::default();
        for seed in [0, 7, 99] {
            let s = schedule_flashes(&c, 600.0, 0.1, seed).unwrap();
            let gaps = s.gaps();
            assert!(gaps.len() >= 900);
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            assert!((0.48..=0.52).contains(&mean), "mean {mean}");
        }
    }

    #[test]
    fn no_immediate_repeat_and_all_leds_used() {
        let s = schedule_flashes(&StimulusConfig::default(), 300.0, 0.1, 3).unwrap();
        let mut counts = [0usize; 4];
        for w in s.flashes.windows(2) {
            assert_ne!(w[0].stimulus_id, w[1].stimulus_id);
        }
        for f in &s.flashes {
            counts[f.stimulus_id.index()] += 1;
        }
        let n = s.flashes.len() as f64;
        for c in counts {
            assert!((c as f64 / n - 0.25).abs() < 0.06, "{counts:?}");
        }
    }

    #[test]
    fn flashes_never_overlap() {
        let s = schedule_flashes(&StimulusConfig::default(), 120.0, 0.199, 5).unwrap();
        for w in s.flashes.windows(2) {
            assert!(w[0].onset + w[0].duration <= w[1].onset);
        }
    }

    #[test]
    fn bad_flash_duration() {
        let c = StimulusConfig::default();
        assert!(schedule_flashes(&c, 1.0, 0.2, 0).is_err());
        assert!(schedule_flashes(&c, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn marker_events_from_flashes() {
        let c = StimulusConfig::default();
        let sched = FlashSchedule {
            flashes: vec![Flash {
                stimulus_id: StimulusId(1),
                onset: 1.5,
                duration: 0.1,
            }],
            seed: 0,
        };
        assert_eq!(
            emit_marker_events(&sched, &c).unwrap(),
            vec![MarkerEvent {
                code: 222,
                timestamp: 1.5
            }]
        );
        let empty = FlashSchedule {
            flashes: vec![],
            seed: 0,
        };
        assert!(emit_marker_events(&empty, &c).unwrap().is_empty());

        let three = schedule_flashes(&c, 1.9, 0.1, 11).unwrap();
        let ev = emit_marker_events(&three, &c).unwrap();
        assert_eq!(ev.len(), three.flashes.len());
        for (e, f) in ev.iter().zip(&three.flashes) {
            assert_eq!(e.timestamp, f.onset);
            assert_eq!(e.code, c.get(f.stimulus_id).unwrap().marker_code);
        }
    }

    proptest! {
        #[test]
        fn flicker_is_periodic(f in 1.0f64..60.0, d in 0.05f64..0.95, t in 0.0f64..100.0) {
            prop_assert_eq!(flicker_state(f, d, t), flicker_state(f, d, t + 1.0 / f));
        }

        #[test]
        fn timeline_on_fraction_bounded(f in 2.0f64..40.0, d in 0.1f64..0.9, periods in 1usize..20) {
            let s = Stimulus { duty_cycle: d, ..stim(f) };
            let res = 1e-4;
            let tl = build_flicker_timeline(&s, periods as f64 / f, res).unwrap();
            let ticks_per_period = 1.0 / (f * res);
            // ON count is off by at most one tick and the span by half a tick
            prop_assert!((tl.on_fraction() - d).abs() <= 2.0 / ticks_per_period);
        }
    }
}
