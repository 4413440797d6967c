//! Grid robot driven by decoded stimuli.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{Decision, StimulusId, STIMULUS_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Heading {
    #[default]
    N,
    E,
    S,
    W,
}

impl Heading {
    pub fn left(self) -> Self {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Self {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }

    /// Unit step `(dx, dy)`; north is `+y`.
    pub fn step(self) -> (i64, i64) {
        match self {
            Heading::N => (0, 1),
            Heading::E => (1, 0),
            Heading::S => (0, -1),
            Heading::W => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Command {
    Forward,
    TurnLeft,
    Backward,
    TurnRight,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Session time of execution, seconds.
    pub t: f64,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: i64,
    pub y: i64,
    pub heading: Heading,
    pub log: Vec<LogEntry>,
}

impl RobotState {
    /// Pose without the log.
    pub fn pose(&self) -> (i64, i64, Heading) {
        (self.x, self.y, self.heading)
    }
}

/// Executes `cmd` at time `t`.
pub fn apply_command(mut state: RobotState, cmd: Command, t: f64) -> RobotState {
    let (dx, dy) = state.heading.step();
    match cmd {
        Command::Forward => {
            state.x += dx;
            state.y += dy;
        }
        Command::Backward => {
            state.x -= dx;
            state.y -= dy;
        }
        Command::TurnLeft => state.heading = state.heading.left(),
        Command::TurnRight => state.heading = state.heading.right(),
    }
    state.log.push(LogEntry { t, command: cmd });
    state
}

/// Rebuilds the state reached by executing `log` from the origin.
pub fn replay(log: &[LogEntry]) -> RobotState {
    log.iter()
        .fold(RobotState::default(), |s, e| apply_command(s, e.command, e.t))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RobotError {
    #[error("command map must cover stimuli 0..{STIMULUS_COUNT} exactly once, got {0:?}")]
    NotBijective(Vec<(StimulusId, Command)>),
    #[error("command log line {line}: {message}")]
    Log { line: usize, message: String },
}

/// Stimulus to command assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CommandMap(pub BTreeMap<StimulusId, Command>);

impl Default for CommandMap {
    /// Top → Forward, Left → TurnLeft, Bottom → Backward, Right → TurnRight.
    fn default() -> Self {
        CommandMap(
            [
                Command::Forward,
                Command::TurnLeft,
                Command::Backward,
                Command::TurnRight,
            ]
            .into_iter()
            .enumerate()
            .map(|(i, c)| (StimulusId(i as u8), c))
            .collect(),
        )
    }
}

impl CommandMap {
    pub fn check(&self) -> Result<(), RobotError> {
        let ids: BTreeSet<_> = self.0.keys().map(|k| k.0 as usize).collect();
        let cmds: BTreeSet<_> = self.0.values().map(|c| *c as usize).collect();
        let want: BTreeSet<_> = (0..STIMULUS_COUNT).collect();
        if ids != want || cmds != want {
            return Err(RobotError::NotBijective(self.0.iter().map(|(k, v)| (*k, *v)).collect()));
        }
        Ok(())
    }

    pub fn get(&self, id: StimulusId) -> Option<Command> {
        self.0.get(&id).copied()
    }
}

/// What to do with a low-confidence decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowConfidencePolicy {
    /// Hold the robot.
    #[default]
    Suppress,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub command_map: CommandMap,
    pub low_confidence_policy: LowConfidencePolicy,
}

/// Command for a decision, or `None` when the robot should hold.
pub fn decision_to_command(decision: &Decision, map: &CommandMap, policy: LowConfidencePolicy) -> Option<Command> {
    if decision.low_confidence && policy == LowConfidencePolicy::Suppress {
        return None;
    }
    map.get(decision.class_id)
}

/// One JSON object per line.
pub fn log_to_jsonl(log: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e).expect("log entries serialize"));
        out.push('\n');
    }
    out
}

pub fn log_from_jsonl(text: &str) -> Result<Vec<LogEntry>, RobotError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RobotError::Log {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
