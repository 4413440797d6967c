use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use hbci_core::runner::{run_live, LiveOptions, LiveSummary, RunError};
use hbci_core::AppConfig;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::frame::Publisher;
use crate::gaze::{parse_gaze, ConsoleGaze, GazeAck, GazeCommand};

const ACK_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone)]
pub struct AppState {
    pub publisher: Publisher,
    pub config: Arc<AppConfig>,
    pub gaze: mpsc::Sender<GazeCommand>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/stream", get(stream))
        .route("/gaze", get(gaze))
        .route("/config", get(config))
        .route("/healthz", get(healthz))
        .with_state(state)
}

async fn config(State(s): State<AppState>) -> Json<AppConfig> {
    Json((*s.config).clone())
}

async fn healthz(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "subscribers": s.publisher.subscriber_count()}))
}

async fn stream(ws: WebSocketUpgrade, State(s): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| stream_socket(socket, s.publisher))
}

async fn stream_socket(mut socket: WebSocket, publisher: Publisher) {
    let mut sub = publisher.subscribe();
    loop {
        tokio::select! {
            frame = sub.recv() => match frame {
                Some(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                None => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn gaze(ws: WebSocketUpgrade, State(s): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| gaze_socket(socket, s))
}

async fn gaze_socket(mut socket: WebSocket, s: AppState) {
    if s.gaze.send(GazeCommand::Connected).is_err() {
        let _ = socket
            .send(Message::Text(json!({"error": "pipeline stopped"}).to_string().into()))
            .await;
        return;
    }
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match parse_gaze(&text, &s.config.stimuli) {
            Err(e) => json!({ "error": e }),
            Ok(req) => {
                let (tx, rx) = oneshot::channel();
                if s.gaze.send(GazeCommand::Attend(req.attention, tx)).is_err() {
                    json!({"error": "pipeline stopped"})
                } else {
                    match tokio::time::timeout(ACK_TIMEOUT, rx).await {
                        Ok(Ok(seq)) => serde_json::to_value(GazeAck {
                            ack: seq,
                            attend: req.attention,
                            t_client: req.t_client,
                        })
                        .expect("ack serializes"),
                        _ => json!({"error": "pipeline stopped"}),
                    }
                }
            }
        };
        if socket.send(Message::Text(reply.to_string().into())).await.is_err() {
            break;
        }
    }
    let _ = s.gaze.send(GazeCommand::Disconnected);
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub seed: u64,
    pub max_windows: Option<usize>,
    /// Hold the loop until [`Gateway::release`] is called.
    pub held: bool,
}

impl ServeOptions {
    pub fn new(addr: SocketAddr, seed: u64) -> Self {
        Self {
            addr,
            seed,
            max_windows: None,
            held: false,
        }
    }
}

/// A running gateway: the HTTP server plus the live loop thread feeding it.
pub struct Gateway {
    addr: SocketAddr,
    publisher: Publisher,
    stop: Arc<AtomicBool>,
    gate: Arc<AtomicBool>,
    live: Option<thread::JoinHandle<Result<LiveSummary, RunError>>>,
    shutdown: Option<oneshot::Sender<()>>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl Gateway {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn publisher(&self) -> &Publisher {
        &self.publisher
    }

    /// Lets a held loop start.
    pub fn release(&self) {
        self.gate.store(true, Ordering::SeqCst);
    }

    pub fn live_finished(&self) -> bool {
        self.live.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Stops the loop and the server, returning the loop's summary.
    pub async fn shutdown(mut self) -> Result<LiveSummary, RunError> {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let live = self.live.take().expect("joined once");
        let summary = tokio::task::spawn_blocking(move || live.join().expect("live loop panicked"))
            .await
            .expect("join task");
        let _ = (&mut self.server).await;
        summary
    }

    /// Serves until the loop ends or ctrl-c.
    pub async fn run_until_stopped(self) -> Result<LiveSummary, RunError> {
        let stop = self.stop.clone();
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = async {
                while !self.live_finished() {
                    tokio::time::sleep(Duration::from_millis(100)).await;
                }
            } => {}
        }
        stop.store(true, Ordering::SeqCst);
        self.shutdown().await
    }
}

/// Binds the server and starts the live loop on its own thread.
pub async fn start(cfg: AppConfig, opts: ServeOptions) -> Result<Gateway, StartError> {
    cfg.validate().map_err(RunError::from)?;
    let listener = TcpListener::bind(opts.addr).await?;
    let addr = listener.local_addr()?;
    let publisher = Publisher::new(cfg.gateway.subscriber_buffer);
    let (gaze_tx, mut source) = ConsoleGaze::new(publisher.clone());
    let stop = Arc::new(AtomicBool::new(false));
    let config = Arc::new(cfg);

    let live_opts = LiveOptions {
        seed: opts.seed,
        max_windows: opts.max_windows,
        block_samples: config.gateway.block_samples,
        realtime: config.gateway.realtime,
        keep_record: false,
        stop: Some(stop.clone()),
    };
    let live_cfg = (*config).clone();
    let live_pub = publisher.clone();
    let live_stop = stop.clone();
    let gate = Arc::new(AtomicBool::new(!opts.held));
    let live_gate = gate.clone();
    let live = thread::Builder::new().name("hbci-live".into()).spawn(move || {
        while !live_gate.load(Ordering::SeqCst) && !live_stop.load(Ordering::SeqCst) {
            thread::sleep(Duration::from_millis(5));
        }
        run_live(&live_cfg, &live_opts, &mut source, &mut |event| {
            if let Err(e) = live_pub.publish(&event) {
                tracing::warn!("dropping {} frame: {e}", event.kind());
            }
        })
    })?;

    let app = router(AppState {
        publisher: publisher.clone(),
        config,
        gaze: gaze_tx,
    });
    let (shutdown_tx, shutdown_rx) = oneshot::channel();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = shutdown_rx.await;
            })
            .await
    });
    tracing::info!("gateway listening on {addr}");
    Ok(Gateway {
        addr,
        publisher,
        stop,
        gate,
        live: Some(live),
        shutdown: Some(shutdown_tx),
        server,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Run(#[from] RunError),
}
