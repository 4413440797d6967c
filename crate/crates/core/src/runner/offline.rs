use std::path::Path;
use std::time::Instant;

use crate::config::AppConfig;
use crate::decoder::{decode_window, AnalysisWindow};
use crate::edf::{decode_edf, encode_edf, has_marker_channel, EdfError, EdfOptions};
use crate::model::{EegRecord, StimulusId};
use crate::robot::{apply_command, decision_to_command, LogEntry, RobotState};
use crate::stimulus::{schedule_flashes, FlashSchedule};
use crate::synth::{protocol_to_schedule, synthesize, Attention, AttentionSchedule, P300_CHANNEL, SSVEP_CHANNEL};

use super::report::{score_windows, EvaluationReport, RobotPose, Timing, WindowReport};
use super::{protocol_windows, RunError};

/// Which spans of a record to classify.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum WindowPlan {
    /// The focus segments implied by the configured protocol.
    #[default]
    Protocol,
    /// Explicit `(start, end)` spans in seconds.
    Explicit(Vec<(f64, f64)>),
}

impl WindowPlan {
    fn windows(&self, cfg: &AppConfig) -> Result<Vec<AnalysisWindow>, RunError> {
        let w: Vec<AnalysisWindow> = match self {
            WindowPlan::Protocol => protocol_windows(&cfg.protocol, &cfg.stimuli),
            WindowPlan::Explicit(spans) => spans.iter().map(|&(a, b)| AnalysisWindow::new(a, b)).collect(),
        };
        if w.is_empty() {
            return Err(RunError::EmptyPlan);
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineOptions {
    pub seed: u64,
    /// Overrides the configured session count.
    pub sessions: Option<u32>,
    pub plan: WindowPlan,
    /// Record wall-clock decode timings in the report.
    pub timings: bool,
}

impl OfflineOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            sessions: None,
            plan: WindowPlan::Protocol,
            timings: false,
        }
    }
}

/// Everything produced by a synthetic session.
#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub report: EvaluationReport,
    /// The record as read back from `edf`; this is what was decoded.
    pub record: EegRecord,
    pub edf: Vec<u8>,
    pub schedule: AttentionSchedule,
    pub flashes: FlashSchedule,
    pub command_log: Vec<LogEntry>,
}

/// The configuration actually used once CLI-style overrides are applied.
fn effective_config(cfg: &AppConfig, opts: &OfflineOptions) -> AppConfig {
    let mut c = cfg.clone();
    c.synth.seed = opts.seed;
    if let Some(n) = opts.sessions {
        c.protocol.sessions = n;
    }
    c
}

fn check(cfg: &AppConfig) -> Result<(), RunError> {
    cfg.validate()?;
    cfg.synth.check(&cfg.stimuli)?;
    cfg.decoder.check()?;
    cfg.robot.command_map.check()?;
    Ok(())
}

/// Attention held over the whole of `[start, end)`, if any.
fn truth_for(schedule: &AttentionSchedule, start: f64, end: f64) -> Option<StimulusId> {
    schedule
        .segments
        .iter()
        .find(|s| s.start <= start + 1e-9 && end <= s.end + 1e-9)
        .and_then(|s| match s.attended {
            Attention::Stimulus(id) => Some(id),
            Attention::Rest => None,
        })
}

struct Decoded {
    windows: Vec<WindowReport>,
    robot: RobotState,
    timing: Timing,
}

fn decode_windows(
    record: &EegRecord,
    cfg: &AppConfig,
    windows: &[AnalysisWindow],
    markers_available: bool,
    truth: impl Fn(&AnalysisWindow) -> Option<StimulusId>,
) -> Result<Decoded, RunError> {
    let mut robot = RobotState::default();
    let mut out = Vec::with_capacity(windows.len());
    let (mut total, mut max) = (0.0f64, 0.0f64);
    for (index, w) in windows.iter().enumerate() {
        let t0 = Instant::now();
        let decision = decode_window(record, w, &cfg.stimuli, &cfg.decoder, markers_available)?;
        let dt = t0.elapsed().as_secs_f64();
        total += dt;
        max = max.max(dt);
        let command = decision_to_command(&decision.fused, &cfg.robot.command_map, cfg.robot.low_confidence_policy);
        if let Some(c) = command {
            robot = apply_command(robot, c, w.end + cfg.decoder.p300_window);
        }
        out.push(WindowReport {
            index,
            truth: truth(w),
            decision,
            command,
        });
    }
    Ok(Decoded {
        windows: out,
        robot,
        timing: Timing {
            mean_decode_latency_s: total / windows.len().max(1) as f64,
            max_decode_latency_s: max,
        },
    })
}

fn assemble(
    cfg: AppConfig,
    seed: Option<u64>,
    decoded: &Decoded,
    mut warnings: Vec<String>,
    timings: bool,
) -> EvaluationReport {
    let classes: Vec<StimulusId> = cfg.stimuli.ids().collect();
    let (accuracy, confusion, w) = if seed.is_some() {
        score_windows(&decoded.windows, &classes)
    } else {
        (None, None, Vec::new())
    };
    warnings.extend(w);
    EvaluationReport {
        seed,
        config: cfg,
        windows: decoded.windows.clone(),
        accuracy,
        confusion,
        robot: RobotPose {
            x: decoded.robot.x,
            y: decoded.robot.y,
            heading: decoded.robot.heading,
        },
        warnings,
        timing: timings.then_some(decoded.timing),
    }
}

/// Generates a synthetic session, stores it as EDF, decodes the stored
/// record and scores the decisions against the attention schedule.
pub fn run_offline(cfg: &AppConfig, opts: &OfflineOptions) -> Result<OfflineRun, RunError> {
    let cfg = effective_config(cfg, opts);
    check(&cfg)?;
    let schedule = protocol_to_schedule(&cfg.protocol, &cfg.stimuli);
    let flashes = schedule_flashes(&cfg.stimuli, schedule.duration(), cfg.synth.flash_duration, opts.seed)?;
    let raw = synthesize(&schedule, &flashes, &cfg.synth, &cfg.stimuli)?;
    let edf = encode_edf(&raw, &EdfOptions::default())?;
    let record = decode_edf(&edf)?;

    let windows = opts.plan.windows(&cfg)?;
    let decoded = decode_windows(&record, &cfg, &windows, true, |w| truth_for(&schedule, w.start, w.end))?;
    let command_log = decoded.robot.log.clone();
    let report = assemble(cfg, Some(opts.seed), &decoded, Vec::new(), opts.timings);
    Ok(OfflineRun {
        report,
        record,
        edf,
        schedule,
        flashes,
        command_log,
    })
}

/// Decodes an in-memory record without ground truth.
pub fn decode_record(
    record: &EegRecord,
    cfg: &AppConfig,
    plan: &WindowPlan,
    markers_available: bool,
    timings: bool,
) -> Result<EvaluationReport, RunError> {
    check(cfg)?;
    for label in [SSVEP_CHANNEL, P300_CHANNEL] {
        if record.channel(label).is_none() {
            return Err(RunError::MissingChannel(label.into()));
        }
    }
    let mut windows = plan.windows(cfg)?;
    let mut warnings = Vec::new();
    if *plan == WindowPlan::Protocol {
        // a shorter recording keeps the protocol windows it covers
        let all = windows.len();
        let duration = record.duration();
        windows.retain(|w| w.end <= duration + 1e-9);
        if windows.is_empty() {
            return Err(RunError::EmptyPlan);
        }
        if windows.len() < all {
            warnings.push(format!(
                "{} of {all} protocol windows lie beyond the {duration} s record and were skipped",
                all - windows.len()
            ));
        }
    }
    let decoded = decode_windows(record, cfg, &windows, markers_available, |_| None)?;
    if !markers_available {
        warnings.push("record has no MARKER channel; P300 decisions unavailable".to_string());
    }
    Ok(assemble(cfg.clone(), None, &decoded, warnings, timings))
}

/// Decodes an EDF file. Without a MARKER channel only SSVEP decisions are
/// made.
pub fn decode_file(
    path: impl AsRef<Path>,
    cfg: &AppConfig,
    plan: &WindowPlan,
    timings: bool,
) -> Result<EvaluationReport, RunError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(EdfError::Io)?;
    let record = decode_edf(&bytes)?;
    let markers = has_marker_channel(&bytes)?;
    decode_record(&record, cfg, plan, markers, timings)
}
