use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::decoder::WindowDecision;
use crate::model::{Decision, StimulusId};
use crate::robot::{Command, Heading};

/// Correct decisions over focus windows with a known truth class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub correct: usize,
    /// Windows where the method produced a decision at all.
    pub decided: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable<T> {
    pub ssvep: T,
    pub p300: T,
    pub fused: T,
}

/// Rows are truth classes, columns predicted classes, both in `classes`
/// order. Windows without a decision land in `undecided`, so each row plus
/// its `undecided` entry sums to that class's window count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<StimulusId>,
    pub counts: Vec<Vec<usize>>,
    pub undecided: Vec<usize>,
}

impl ConfusionMatrix {
    fn new(classes: &[StimulusId]) -> Self {
        Self {
            classes: classes.to_vec(),
            counts: vec![vec![0; classes.len()]; classes.len()],
            undecided: vec![0; classes.len()],
        }
    }

    fn add(&mut self, truth: StimulusId, predicted: Option<StimulusId>) {
        let Some(row) = self.classes.iter().position(|c| *c == truth) else {
            return;
        };
        match predicted.and_then(|p| self.classes.iter().position(|c| *c == p)) {
            Some(col) => self.counts[row][col] += 1,
            None => self.undecided[row] += 1,
        }
    }

    pub fn row_total(&self, row: usize) -> usize {
        self.counts[row].iter().sum::<usize>() + self.undecided[row]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    /// Attended stimulus over the whole window, if there was one.
    pub truth: Option<StimulusId>,
    pub decision: WindowDecision,
    /// Robot command issued for the fused decision, if any.
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_decode_latency_s: f64,
    pub max_decode_latency_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: i64,
    pub y: i64,
    pub heading: Heading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Seed of a synthetic run; absent for decoded files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: AppConfig,
    pub windows: Vec<WindowReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<MethodTable<MethodAccuracy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<MethodTable<ConfusionMatrix>>,
    pub robot: RobotPose,
    pub warnings: Vec<String>,
    /// Wall-clock decode timings; only present when requested because they
    /// differ from run to run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn method_accuracy<'a>(
    windows: &'a [WindowReport],
    pick: impl Fn(&'a WindowDecision) -> Option<&'a Decision>,
) -> MethodAccuracy {
    let mut m = MethodAccuracy {
        correct: 0,
        decided: 0,
        total: 0,
        accuracy: 0.0,
    };
    for w in windows {
        let Some(truth) = w.truth else { continue };
        m.total += 1;
        if let Some(d) = pick(&w.decision) {
            m.decided += 1;
            if d.class_id == truth {
                m.correct += 1;
            }
        }
    }
    if m.total > 0 {
        m.accuracy = m.correct as f64 / m.total as f64;
    }
    m
}

fn confusion<'a>(
    windows: &'a [WindowReport],
    classes: &[StimulusId],
    pick: impl Fn(&'a WindowDecision) -> Option<&'a Decision>,
) -> ConfusionMatrix {
    let mut c = ConfusionMatrix::new(classes);
    for w in windows {
        if let Some(truth) = w.truth {
            c.add(truth, pick(&w.decision).map(|d| d.class_id));
        }
    }
    c
}

/// Accuracy and confusion tables over windows with a truth class, plus a
/// warning when some or all windows have none.
pub(crate) fn score_windows(
    windows: &[WindowReport],
    classes: &[StimulusId],
) -> (
    Option<MethodTable<MethodAccuracy>>,
    Option<MethodTable<ConfusionMatrix>>,
    Vec<String>,
) {
    let mut warnings = Vec::new();
    let without = windows.iter().filter(|w| w.truth.is_none()).count();
    if without == windows.len() {
        warnings.push(format!(
            "none of the {} windows has a truth class (rest or mixed attention); accuracy omitted",
            windows.len()
        ));
        return (None, None, warnings);
    }
    if without > 0 {
        warnings.push(format!(
            "{without} of {} windows have no truth class (rest or mixed attention) and are excluded from accuracy",
            windows.len()
        ));
    }
    let accuracy = MethodTable {
        ssvep: method_accuracy(windows, |d| Some(&d.ssvep)),
        p300: method_accuracy(windows, |d| d.p300.as_ref()),
        fused: method_accuracy(windows, |d| Some(&d.fused)),
    };
    let conf = MethodTable {
        ssvep: confusion(windows, classes, |d| Some(&d.ssvep)),
        p300: confusion(windows, classes, |d| d.p300.as_ref()),
        fused: confusion(windows, classes, |d| Some(&d.fused)),
    };
    (Some(accuracy), Some(conf), warnings)
}
