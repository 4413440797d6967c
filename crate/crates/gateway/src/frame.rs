use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use hbci_core::runner::LiveEvent;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Largest serialized frame the publisher will send.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

/// One message on the `/stream` socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamFrame {
    pub kind: String,
    pub t: f64,
    pub payload: serde_json::Value,
    pub seq: u64,
}

impl StreamFrame {
    pub fn from_event(event: &LiveEvent, seq: u64) -> Self {
        Self {
            kind: event.kind().to_string(),
            t: event.t(),
            payload: event.payload(),
            seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PublishError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES} byte limit")]
    Oversize(usize),
}

/// Fans serialized frames out to every subscriber without ever blocking the
/// caller. A subscriber that falls more than the buffer behind is dropped.
#[derive(Clone)]
pub struct Publisher {
    tx: broadcast::Sender<Arc<str>>,
    next_seq: Arc<AtomicU64>,
    send_lock: Arc<Mutex<()>>,
}

impl Publisher {
    pub fn new(buffer: usize) -> Self {
        let (tx, _) = broadcast::channel(buffer.max(1));
        Self {
            tx,
            next_seq: Arc::new(AtomicU64::new(0)),
            send_lock: Arc::new(Mutex::new(())),
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.tx.receiver_count()
    }

    /// Sequence number the next published frame will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq.load(Ordering::SeqCst)
    }

    /// Publishes `event`, returning its sequence number, or `None` when no
    /// one is listening.
    pub fn publish(&self, event: &LiveEvent) -> Result<Option<u64>, PublishError> {
        if self.tx.receiver_count() == 0 {
            return Ok(None);
        }
        let _guard = self.send_lock.lock().unwrap_or_else(|e| e.into_inner());
        let seq = self.next_seq.load(Ordering::SeqCst);
        let text = serde_json::to_string(&StreamFrame::from_event(event, seq)).expect("frames serialize");
        if text.len() > MAX_FRAME_BYTES {
            return Err(PublishError::Oversize(text.len()));
        }
        self.next_seq.store(seq + 1, Ordering::SeqCst);
        // receivers may all have gone since the check above
        let _ = self.tx.send(text.into());
        Ok(Some(seq))
    }

    pub fn subscribe(&self) -> Subscription {
        Subscription {
            rx: self.tx.subscribe(),
        }
    }
}

pub struct Subscription {
    rx: broadcast::Receiver<Arc<str>>,
}

impl Subscription {
    /// Next frame, or `None` once the publisher is gone or this subscriber
    /// has lagged past the buffer.
    pub async fn recv(&mut self) -> Option<Arc<str>> {
        match self.rx.recv().await {
            Ok(f) => Some(f),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                tracing::warn!(skipped = n, "dropping slow subscriber");
                None
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    }
}
