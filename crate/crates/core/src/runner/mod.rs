//! Session orchestration: offline synthetic runs, decoding of recorded EDF
//! files, and the live closed loop.

mod live;
mod offline;
mod report;

use crate::config::ConfigError;
use crate::decoder::{AnalysisWindow, DecodeError};
use crate::edf::EdfError;
use crate::marker_link::LinkError;
use crate::model::{SessionProtocol, StimulusConfig};
use crate::robot::RobotError;
use crate::stimulus::StimulusError;
use crate::synth::{protocol_to_schedule, SynthError};

pub use live::{
    run_live, ChannelGaze, GazeInput, GazeSource, LiveDecision, LiveEvent, LiveOptions, LiveSummary, ScriptedGaze,
};
pub use offline::{decode_file, decode_record, run_offline, OfflineOptions, OfflineRun, WindowPlan};
pub use report::{ConfusionMatrix, EvaluationReport, MethodAccuracy, MethodTable, Timing, WindowReport};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("record has no {0} channel")]
    MissingChannel(String),
    #[error("window plan is empty")]
    EmptyPlan,
}

/// Focus windows of every session in protocol order.
pub fn protocol_windows(protocol: &SessionProtocol, config: &StimulusConfig) -> Vec<AnalysisWindow> {
    protocol_to_schedule(protocol, config)
        .focus_segments()
        .map(|s| AnalysisWindow::new(s.start, s.end))
        .collect()
}
