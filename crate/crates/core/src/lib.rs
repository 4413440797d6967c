//! Hybrid SSVEP+P300 brain-computer interface, simulated end to end.
//!
//! The stimulus board, serial marker link, EEG headset and robot are all
//! modelled in software so a full session can run deterministically from a
//! seed. [`runner`] ties the pieces together.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decoder;
pub mod edf;
pub mod marker_link;
pub mod model;
pub mod robot;
pub mod runner;
pub mod serde_inf;
pub mod stimulus;
pub mod synth;

pub use config::AppConfig;
pub use model::{Decision, DecisionSource, EegRecord, MarkerEvent, StimulusConfig, StimulusId};
