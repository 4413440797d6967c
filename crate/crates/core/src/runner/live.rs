use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::decoder::{decode_window, AnalysisWindow, WindowDecision};
use crate::marker_link::{encode_marker, MarkerParser};
use crate::model::{Channel, EegRecord, MarkerEvent, SessionProtocol, StartTime, StimulusId};
use crate::robot::{apply_command, decision_to_command, Command, Heading, RobotState};
use crate::stimulus::{board_state, Flash, FlashScheduler};
use crate::synth::{Attention, StreamingSynth};

use super::RunError;

/// Most samples per channel carried by one EEG block event.
const MAX_BLOCK_POINTS: usize = 32;

/// What the gaze source reports at a block boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GazeInput {
    Attend(Attention),
    /// No operator attached; the loop renders rest and makes no decisions.
    Disconnected,
}

/// Supplies the attended stimulus over time. Polled once per block with the
/// session time of the block's first sample.
pub trait GazeSource {
    fn poll(&mut self, t: f64) -> GazeInput;
}

impl<F: FnMut(f64) -> GazeInput> GazeSource for F {
    fn poll(&mut self, t: f64) -> GazeInput {
        self(t)
    }
}

/// Attends `script[k]` during the focus part of protocol cycle `k` and rests
/// otherwise.
#[derive(Debug, Clone)]
pub struct ScriptedGaze {
    script: Vec<StimulusId>,
    focus: f64,
    cycle: f64,
}

impl ScriptedGaze {
    pub fn new(script: Vec<StimulusId>, protocol: &SessionProtocol) -> Self {
        Self {
            script,
            focus: protocol.focus_duration,
            cycle: protocol.cycle_duration(),
        }
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }
}

impl GazeSource for ScriptedGaze {
    fn poll(&mut self, t: f64) -> GazeInput {
        let k = ((t + 1e-9) / self.cycle).floor() as usize;
        let phase = t - k as f64 * self.cycle;
        match self.script.get(k) {
            Some(&id) if phase < self.focus - 1e-9 => GazeInput::Attend(Attention::Stimulus(id)),
            _ => GazeInput::Attend(Attention::Rest),
        }
    }
}

/// Gaze fed from another thread. Holds the last input received; starts at
/// rest and reports a disconnect once the sender is dropped.
#[derive(Debug)]
pub struct ChannelGaze {
    rx: mpsc::Receiver<GazeInput>,
    current: GazeInput,
}

impl ChannelGaze {
    pub fn new() -> (mpsc::Sender<GazeInput>, Self) {
        let (tx, rx) = mpsc::channel();
        (
            tx,
            Self {
                rx,
                current: GazeInput::Attend(Attention::Rest),
            },
        )
    }
}

impl GazeSource for ChannelGaze {
    fn poll(&mut self, _t: f64) -> GazeInput {
        loop {
            match self.rx.try_recv() {
                Ok(g) => self.current = g,
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    self.current = GazeInput::Disconnected;
                    break;
                }
            }
        }
        self.current
    }
}

#[derive(Debug, Clone)]
pub struct LiveOptions {
    pub seed: u64,
    /// Stop after this many focus windows.
    pub max_windows: Option<usize>,
    pub block_samples: usize,
    /// Sleep so session time tracks the wall clock.
    pub realtime: bool,
    /// Keep the full record in the summary.
    pub keep_record: bool,
    pub stop: Option<Arc<AtomicBool>>,
}

impl LiveOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            max_windows: None,
            block_samples: 32,
            realtime: false,
            keep_record: false,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusStateFrame {
    pub t: f64,
    /// ON/OFF per stimulus in config order.
    pub on: Vec<bool>,
    /// Stimulus whose red LED is lit, if any.
    pub flashing: Option<StimulusId>,
    pub attended: Attention,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegBlockFrame {
    /// Time of the first sample.
    pub t: f64,
    /// Seconds between the points below.
    pub dt: f64,
    pub channels: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerFrame {
    pub t: f64,
    pub code: u32,
    pub stimulus_id: Option<StimulusId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveDecision {
    /// Session time at which the decision was made.
    pub t: f64,
    pub window_index: usize,
    pub start: f64,
    pub end: f64,
    /// Stimulus attended throughout the window, if one was.
    pub truth: Option<StimulusId>,
    /// Absent when the operator was disconnected during the window.
    pub decision: Option<WindowDecision>,
    pub command: Option<Command>,
    /// Wall-clock seconds from window close to command.
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotFrame {
    pub t: f64,
    pub x: i64,
    pub y: i64,
    pub heading: Heading,
    pub last_command: Option<Command>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockFrame {
    pub t: f64,
    pub window_index: usize,
    pub paused: bool,
}

/// Everything the live loop emits, in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum LiveEvent {
    StimulusState(StimulusStateFrame),
    EegBlock(EegBlockFrame),
    Marker(MarkerFrame),
    Decision(Box<LiveDecision>),
    RobotState(RobotFrame),
    Clock(ClockFrame),
}

impl LiveEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LiveEvent::StimulusState(_) => "StimulusState",
            LiveEvent::EegBlock(_) => "EegBlock",
            LiveEvent::Marker(_) => "Marker",
            LiveEvent::Decision(_) => "Decision",
            LiveEvent::RobotState(_) => "RobotState",
            LiveEvent::Clock(_) => "Clock",
        }
    }

    pub fn t(&self) -> f64 {
        match self {
            LiveEvent::StimulusState(f) => f.t,
            LiveEvent::EegBlock(f) => f.t,
            LiveEvent::Marker(f) => f.t,
            LiveEvent::Decision(f) => f.t,
            LiveEvent::RobotState(f) => f.t,
            LiveEvent::Clock(f) => f.t,
        }
    }

    pub fn payload(&self) -> serde_json::Value {
        let v = match self {
            LiveEvent::StimulusState(f) => serde_json::to_value(f),
            LiveEvent::EegBlock(f) => serde_json::to_value(f),
            LiveEvent::Marker(f) => serde_json::to_value(f),
            LiveEvent::Decision(f) => serde_json::to_value(f),
            LiveEvent::RobotState(f) => serde_json::to_value(f),
            LiveEvent::Clock(f) => serde_json::to_value(f),
        };
        v.expect("frames serialize")
    }
}

#[derive(Debug, Clone)]
pub struct LiveSummary {
    pub decisions: Vec<LiveDecision>,
    pub robot: RobotState,
    pub flashes: Vec<Flash>,
    pub record: Option<EegRecord>,
}

impl LiveSummary {
    pub fn mean_latency(&self) -> f64 {
        let n = self.decisions.len().max(1) as f64;
        self.decisions.iter().map(|d| d.latency_s).sum::<f64>() / n
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct WindowTrack {
    first: Option<Attention>,
    mixed: bool,
    paused: bool,
}

/// Runs the closed loop: synthesize a block, pass flash markers through
/// the serial wire format, decode each focus window once its last P300
/// epoch is complete, and steer the robot.
///
/// Focus windows follow the protocol timing (`focus_duration` every
/// `focus_duration + rest_duration` seconds) whatever the source does.
/// Attention changes take effect at block boundaries.
pub fn run_live(
    cfg: &AppConfig,
    opts: &LiveOptions,
    source: &mut dyn GazeSource,
    sink: &mut dyn FnMut(LiveEvent),
) -> Result<LiveSummary, RunError> {
    let mut params = cfg.synth.clone();
    params.seed = opts.seed;
    cfg.validate()?;
    cfg.decoder.check()?;
    cfg.robot.command_map.check()?;
    let fs = params.sample_rate;
    let mut synth = StreamingSynth::new(&params, &cfg.stimuli)?;
    let mut scheduler = FlashScheduler::new(&cfg.stimuli, params.flash_duration, opts.seed)?;
    let mut next_flash = scheduler.next_flash();
    let mut lit: Option<Flash> = None;
    let mut parser = MarkerParser::new();
    let mut record = EegRecord {
        sample_rate: fs,
        channels: synth
            .labels()
            .iter()
            .map(|l| Channel::new(l.clone(), Vec::new()))
            .collect(),
        markers: Vec::new(),
        start: StartTime::default(),
    };
    let mut robot = RobotState::default();
    let mut decisions = Vec::new();
    let mut flashes = Vec::new();

    let block = opts.block_samples.max(1);
    let stride = block.div_ceil(MAX_BLOCK_POINTS);
    let focus = cfg.protocol.focus_duration;
    let cycle = cfg.protocol.cycle_duration();
    let window_of = |k: usize| AnalysisWindow::new(k as f64 * cycle, k as f64 * cycle + focus);
    let due_sample = |k: usize| ((window_of(k).end + cfg.decoder.p300_window) * fs).round() as usize + 1;
    let mut k = 0usize;
    let mut tracks: BTreeMap<usize, WindowTrack> = BTreeMap::new();
    let wall0 = Instant::now();

    loop {
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed)) {
            break;
        }
        if opts.max_windows.is_some_and(|m| k >= m) {
            break;
        }
        let t_block = synth.time();
        let (attention, paused) = match source.poll(t_block) {
            GazeInput::Attend(a) => (a, false),
            GazeInput::Disconnected => (Attention::Rest, true),
        };
        synth.set_attention(attention)?;

        // frames are held until the block's decisions are made so publishing
        // never interleaves with decoding
        let mut out = Vec::new();
        let mut buf = vec![Vec::with_capacity(block); record.channels.len()];
        for _ in 0..block {
            let t = synth.time();
            // window bookkeeping per sample so block size cannot blur edges
            let kk = ((t + 1e-9) / cycle).floor() as usize;
            if t - kk as f64 * cycle < focus - 1e-9 {
                let tr = tracks.entry(kk).or_default();
                match tr.first {
                    None => tr.first = Some(attention),
                    Some(a) if a != attention => tr.mixed = true,
                    _ => {}
                }
                tr.paused |= paused;
            }
            while next_flash.onset <= t {
                let f = next_flash;
                let target = synth.attention() == Attention::Stimulus(f.stimulus_id);
                synth.add_flash(&f, target);
                let code = cfg.stimuli.get(f.stimulus_id).map_or(0, |s| s.marker_code);
                let bytes = encode_marker(&MarkerEvent {
                    code,
                    timestamp: f.onset,
                })?;
                parser.set_receive_time(t);
                for ev in parser.feed(&bytes).events {
                    record.markers.push(ev);
                    out.push(LiveEvent::Marker(MarkerFrame {
                        t: ev.timestamp,
                        code: ev.code,
                        stimulus_id: cfg.stimuli.by_marker_code(ev.code).map(|s| s.id),
                    }));
                }
                flashes.push(f);
                lit = Some(f);
                next_flash = scheduler.next_flash();
            }
            let frame = synth.render(1);
            for ((ch, b), v) in record.channels.iter_mut().zip(buf.iter_mut()).zip(frame) {
                ch.samples.push(v[0]);
                b.push(v[0]);
            }
        }

        out.push(LiveEvent::EegBlock(EegBlockFrame {
            t: t_block,
            dt: stride as f64 / fs,
            channels: record
                .channels
                .iter()
                .zip(buf)
                .map(|(c, b)| (c.label.clone(), b.into_iter().step_by(stride).collect()))
                .collect(),
        }));
        let flashing = lit
            .filter(|f| t_block >= f.onset && t_block < f.onset + f.duration)
            .map(|f| f.stimulus_id);
        out.push(LiveEvent::StimulusState(StimulusStateFrame {
            t: t_block,
            on: board_state(&cfg.stimuli, t_block),
            flashing,
            attended: attention,
            paused,
        }));
        out.push(LiveEvent::Clock(ClockFrame {
            t: t_block,
            window_index: k,
            paused,
        }));

        while record.sample_count() >= due_sample(k) && !opts.max_windows.is_some_and(|m| k >= m) {
            let w = window_of(k);
            let track = tracks.remove(&k).unwrap_or_default();
            let t_now = synth.time();
            let t0 = Instant::now();
            let (decision, command) = if track.paused {
                (None, None)
            } else {
                let d = decode_window(&record, &w, &cfg.stimuli, &cfg.decoder, true)?;
                let c = decision_to_command(&d.fused, &cfg.robot.command_map, cfg.robot.low_confidence_policy);
                (Some(d), c)
            };
            if let Some(c) = command {
                robot = apply_command(robot, c, w.end + cfg.decoder.p300_window);
            }
            let latency_s = t0.elapsed().as_secs_f64();
            let truth = match track.first {
                Some(Attention::Stimulus(id)) if !track.mixed => Some(id),
                _ => None,
            };
            let d = LiveDecision {
                t: t_now,
                window_index: k,
                start: w.start,
                end: w.end,
                truth,
                decision,
                command,
                latency_s,
            };
            out.push(LiveEvent::Decision(Box::new(d.clone())));
            out.push(LiveEvent::RobotState(RobotFrame {
                t: t_now,
                x: robot.x,
                y: robot.y,
                heading: robot.heading,
                last_command: command,
            }));
            decisions.push(d);
            k += 1;
        }
        for event in out {
            sink(event);
        }

        if opts.realtime {
            let target = Duration::from_secs_f64(synth.time());
            if let Some(wait) = target.checked_sub(wall0.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }

    Ok(LiveSummary {
        decisions,
        robot,
        flashes,
        record: opts.keep_record.then_some(record),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SessionProtocol;

    #[test]
    fn scripted_gaze_follows_protocol_cycles() {
        let p = SessionProtocol::default();
        let mut g = ScriptedGaze::new(vec![StimulusId(2), StimulusId(0)], &p);
        assert_eq!(g.poll(0.0), GazeInput::Attend(Attention::Stimulus(StimulusId(2))));
        assert_eq!(g.poll(2.99), GazeInput::Attend(Attention::Stimulus(StimulusId(2))));
        assert_eq!(g.poll(3.0), GazeInput::Attend(Attention::Rest));
        assert_eq!(g.poll(8.0), GazeInput::Attend(Attention::Stimulus(StimulusId(0))));
        assert_eq!(g.poll(16.0), GazeInput::Attend(Attention::Rest));
    }

    #[test]
    fn channel_gaze_keeps_last_input_and_reports_disconnect() {
        let (tx, mut g) = ChannelGaze::new();
        assert_eq!(g.poll(0.0), GazeInput::Attend(Attention::Rest));
        tx.send(GazeInput::Attend(Attention::Stimulus(StimulusId(1)))).unwrap();
        assert_eq!(g.poll(0.1), GazeInput::Attend(Attention::Stimulus(StimulusId(1))));
        assert_eq!(g.poll(0.2), GazeInput::Attend(Attention::Stimulus(StimulusId(1))));
        drop(tx);
        assert_eq!(g.poll(0.3), GazeInput::Disconnected);
    }

    #[test]
    fn event_kind_matches_tag() {
        let e = LiveEvent::Clock(ClockFrame {
            t: 1.5,
            window_index: 0,
            paused: false,
        });
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], e.kind());
        assert_eq!(v["payload"], e.payload());
        assert_eq!(e.t(), 1.5);
    }
}
