use std::sync::mpsc;

use hbci_core::runner::{GazeInput, GazeSource};
use hbci_core::synth::Attention;
use hbci_core::{StimulusConfig, StimulusId};
use serde::Serialize;
use tokio::sync::oneshot;

use crate::frame::Publisher;

/// Operator input forwarded from the `/gaze` socket to the live loop.
#[derive(Debug)]
pub enum GazeCommand {
    Connected,
    Disconnected,
    /// Switch attention; the reply carries the stream sequence number from
    /// which the change is in effect.
    Attend(Attention, oneshot::Sender<u64>),
}

/// Parsed `{"attend": <id> | "rest", "t_client": <ms>}` message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeRequest {
    pub attention: Attention,
    pub t_client: Option<f64>,
}

pub fn parse_gaze(text: &str, config: &StimulusConfig) -> Result<GazeRequest, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let t_client = v.get("t_client").and_then(|t| t.as_f64());
    let attention = match v.get("attend") {
        Some(serde_json::Value::String(s)) if s == "rest" => Attention::Rest,
        Some(serde_json::Value::Number(n)) => {
            let id = n
                .as_u64()
                .filter(|&i| i <= u8::MAX as u64)
                .map(|i| StimulusId(i as u8))
                .ok_or_else(|| format!("unknown stimulus id {n}"))?;
            if config.get(id).is_none() {
                return Err(format!("unknown stimulus id {n}"));
            }
            Attention::Stimulus(id)
        }
        Some(other) => return Err(format!("attend must be a stimulus id or \"rest\", got {other}")),
        None => return Err("missing \"attend\" field".into()),
    };
    Ok(GazeRequest { attention, t_client })
}

#[derive(Debug, Serialize)]
pub(crate) struct GazeAck {
    pub ack: u64,
    pub attend: Attention,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_client: Option<f64>,
}

/// Gaze source driven by console connections. With no console attached the
/// loop is paused; a fresh connection starts at rest.
pub struct ConsoleGaze {
    rx: mpsc::Receiver<GazeCommand>,
    publisher: Publisher,
    clients: usize,
    current: Attention,
}

impl ConsoleGaze {
    pub fn new(publisher: Publisher) -> (mpsc::Sender<GazeCommand>, Self) {
        let (tx, rx) = mpsc::channel();
        (
            tx,
            Self {
                rx,
                publisher,
                clients: 0,
                current: Attention::Rest,
            },
        )
    }
}

impl GazeSource for ConsoleGaze {
    fn poll(&mut self, _t: f64) -> GazeInput {
        while let Ok(cmd) = self.rx.try_recv() {
            match cmd {
                GazeCommand::Connected => self.clients += 1,
                GazeCommand::Disconnected => {
                    self.clients = self.clients.saturating_sub(1);
                    if self.clients == 0 {
                        self.current = Attention::Rest;
                    }
                }
                GazeCommand::Attend(a, reply) => {
                    self.current = a;
                    let _ = reply.send(self.publisher.next_seq());
                }
            }
        }
        if self.clients == 0 {
            GazeInput::Disconnected
        } else {
            GazeInput::Attend(self.current)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ids_and_rest() {
        let c = StimulusConfig::default();
        let g = parse_gaze(r#"{"attend": 2, "t_client": 1234.5}"#, &c).unwrap();
        assert_eq!(g.attention, Attention::Stimulus(StimulusId(2)));
        assert_eq!(g.t_client, Some(1234.5));
        assert_eq!(
            parse_gaze(r#"{"attend": "rest"}"#, &c).unwrap().attention,
            Attention::Rest
        );
    }

    #[test]
    fn rejects_bad_input() {
        let c = StimulusConfig::default();
        for bad in [
            r#"{"attend": 9}"#,
            r#"{"attend": -1}"#,
            r#"{"attend": 1.5}"#,
            r#"{"attend": "left"}"#,
            r#"{"t_client": 3}"#,
            "not json",
        ] {
            assert!(parse_gaze(bad, &c).is_err(), "{bad}");
        }
    }

    #[test]
    fn console_source_pauses_without_clients() {
        let (tx, mut g) = ConsoleGaze::new(Publisher::new(4));
        assert_eq!(g.poll(0.0), GazeInput::Disconnected);
        tx.send(GazeCommand::Connected).unwrap();
        assert_eq!(g.poll(0.1), GazeInput::Attend(Attention::Rest));
        let (rtx, mut rrx) = oneshot::channel();
        tx.send(GazeCommand::Attend(Attention::Stimulus(StimulusId(1)), rtx))
            .unwrap();
        assert_eq!(g.poll(0.2), GazeInput::Attend(Attention::Stimulus(StimulusId(1))));
        assert_eq!(rrx.try_recv(), Ok(0));
        tx.send(GazeCommand::Disconnected).unwrap();
        assert_eq!(g.poll(0.3), GazeInput::Disconnected);
        tx.send(GazeCommand::Connected).unwrap();
        assert_eq!(g.poll(0.4), GazeInput::Attend(Attention::Rest));
    }
}
