//! WebSocket gateway between the live loop and an operator console.
//!
//! `/stream` fans out live frames, `/gaze` accepts attention changes,
//! `/config` and `/healthz` are plain HTTP.

pub mod frame;
pub mod gaze;
pub mod server;

pub use frame::{PublishError, Publisher, StreamFrame, Subscription, MAX_FRAME_BYTES};
pub use gaze::{parse_gaze, ConsoleGaze, GazeCommand, GazeRequest};
pub use server::{router, start, AppState, Gateway, ServeOptions, StartError};
