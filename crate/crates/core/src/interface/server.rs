//! WebSocket service for one live operator at a time.
//!
//! The control loop runs on its own thread, paced by a [`Clock`]. The socket
//! reader hands messages to it through a bounded queue; telemetry goes back
//! through a [`TelemetryQueue`] that drops its oldest frame rather than block
//! the loop when the client stalls.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, TrySendError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::Notify;
use tokio_tungstenite::tungstenite::Message;

use super::config::SessionConfig;
use super::live::{parse_client_message, ClientMessage, LiveSession, ServerMessage};
use crate::DT;

/// Time source for pacing the control loop.
pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep_until(&self, deadline: Duration);
}

/// Real time: one tick per millisecond of wall clock.
#[derive(Debug)]
pub struct WallClock {
    origin: Instant,
}

impl Default for WallClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for WallClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        if let Some(wait) = deadline.checked_sub(self.now()) {
            std::thread::sleep(wait);
        }
    }
}

/// Never waits, so trials run as fast as the loop can go.
#[derive(Debug, Default)]
pub struct UnpacedClock(WallClock);

impl Clock for UnpacedClock {
    fn now(&self) -> Duration {
        self.0.now()
    }

    fn sleep_until(&self, _deadline: Duration) {}
}

/// Bounded outbound queue. When full, the oldest telemetry frame is dropped
/// and counted; lifecycle messages are never dropped.
pub struct TelemetryQueue {
    items: Mutex<VecDeque<ServerMessage>>,
    capacity: usize,
    dropped: AtomicU64,
    closed: AtomicBool,
    ready: Notify,
}

impl TelemetryQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity: capacity.max(1),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            ready: Notify::new(),
        }
    }

    pub fn push(&self, msg: ServerMessage) {
        {
            let mut q = self.items.lock().expect("queue lock");
            if q.len() >= self.capacity && msg.is_telemetry() {
                if let Some(k) = q.iter().position(ServerMessage::is_telemetry) {
                    q.remove(k);
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                }
            }
            q.push_back(msg);
        }
        self.ready.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.items.lock().expect("queue lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Take everything queued, stamping telemetry with the drop count.
    pub fn drain(&self) -> Vec<ServerMessage> {
        let dropped = self.dropped();
        let mut q = self.items.lock().expect("queue lock");
        q.drain(..)
            .map(|mut m| {
                if let ServerMessage::Telemetry(f) = &mut m {
                    f.dropped_frames = dropped;
                }
                m
            })
            .collect()
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.ready.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }

    pub async fn wait(&self) {
        self.ready.notified().await
    }
}

pub const OUTBOUND_CAPACITY: usize = 256;
pub const INBOUND_CAPACITY: usize = 256;

enum Inbound {
    Message(ClientMessage, Option<u64>),
    Disconnect,
}

pub struct ServeOptions {
    /// Directory for live trial logs.
    pub out_dir: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            clock: Arc::new(WallClock::default()),
        }
    }
}

pub struct LiveServer {
    listener: TcpListener,
    config: SessionConfig,
    options: ServeOptions,
    busy: Arc<AtomicBool>,
}

impl LiveServer {
    pub async fn bind(addr: SocketAddr, config: SessionConfig, options: ServeOptions) -> std::io::Result<Self> {
        config
            .validate()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
        Ok(Self {
            listener: TcpListener::bind(addr).await?,
            config,
            options,
            busy: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept operators until the task is dropped.
    pub async fn run(self) -> std::io::Result<()> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let busy = self.busy.clone();
            let config = self.config.clone();
            let out_dir = self.options.out_dir.clone();
            let clock = self.options.clock.clone();
            tokio::spawn(async move {
                if busy.swap(true, Ordering::AcqRel) {
                    reject(stream).await;
                    return;
                }
                tracing::info!(%peer, "operator connected");
                if let Err(e) = serve_connection(stream, config, out_dir, clock).await {
                    tracing::warn!(%peer, error = %e, "connection ended with error");
                }
                tracing::info!(%peer, "operator disconnected");
                busy.store(false, Ordering::Release);
            });
        }
    }
}

async fn reject(stream: TcpStream) {
    if let Ok(mut ws) = tokio_tungstenite::accept_async(stream).await {
        let msg = ServerMessage::error("session busy: another operator is connected");
        let _ = ws.send(Message::text(msg.to_json())).await;
        let _ = ws.close(None).await;
    }
}

async fn serve_connection(
    stream: TcpStream,
    config: SessionConfig,
    out_dir: Option<PathBuf>,
    clock: Arc<dyn Clock>,
) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();

    let outbound = Arc::new(TelemetryQueue::new(OUTBOUND_CAPACITY));
    let next_tick = Arc::new(AtomicU64::new(u64::MAX));
    let (tx, rx) = mpsc::sync_channel::<Inbound>(INBOUND_CAPACITY);

    let session = LiveSession::new(config, out_dir);
    outbound.push(session.hello());
    let control = {
        let outbound = outbound.clone();
        let next_tick = next_tick.clone();
        std::thread::Builder::new()
            .name("control-loop".into())
            .spawn(move || control_loop(session, rx, &outbound, &next_tick, clock.as_ref()))
            .expect("spawn control loop")
    };

    let writer = {
        let outbound = outbound.clone();
        async move {
            loop {
                for m in outbound.drain() {
                    sink.send(Message::text(m.to_json())).await?;
                }
                if outbound.is_closed() && outbound.is_empty() {
                    let _ = sink.close().await;
                    return Ok::<_, tokio_tungstenite::tungstenite::Error>(());
                }
                outbound.wait().await;
            }
        }
    };

    let reader = async {
        while let Some(frame) = source.next().await {
            let text = match frame {
                Ok(Message::Text(t)) => t,
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            let stamp = match next_tick.load(Ordering::Acquire) {
                u64::MAX => None,
                t => Some(t),
            };
            match parse_client_message(&text) {
                Ok(msg) => match tx.try_send(Inbound::Message(msg, stamp)) {
                    Ok(()) => {}
                    Err(TrySendError::Full(_)) => outbound.push(ServerMessage::error("inbound queue full, message dropped")),
                    Err(TrySendError::Disconnected(_)) => break,
                },
                Err(e) => outbound.push(ServerMessage::error(e)),
            }
        }
        let _ = tx.send(Inbound::Disconnect);
    };

    let (write_result, ()) = tokio::join!(writer, reader);
    let _ = tokio::task::spawn_blocking(move || control.join()).await;
    match write_result {
        Ok(()) => Ok(()),
        // the client is gone; the control loop has already logged the abort
        Err(e) => {
            tracing::debug!(error = %e, "telemetry writer stopped");
            Ok(())
        }
    }
}

fn control_loop(
    mut session: LiveSession,
    rx: mpsc::Receiver<Inbound>,
    outbound: &TelemetryQueue,
    next_tick: &AtomicU64,
    clock: &dyn Clock,
) {
    let tick = Duration::from_secs_f64(DT);
    let mut trial_origin = clock.now();
    let handle = |session: &mut LiveSession, item: Inbound, origin: &mut Duration| -> bool {
        match item {
            Inbound::Message(msg, stamp) => {
                let starting = matches!(msg, ClientMessage::StartTrial { .. });
                for out in session.handle_received(msg, stamp) {
                    outbound.push(out);
                }
                if starting && session.is_running() {
                    *origin = clock.now();
                }
                true
            }
            Inbound::Disconnect => {
                if let Some(m) = session.disconnect() {
                    outbound.push(m);
                }
                false
            }
        }
    };

    'session: loop {
        match session.next_tick() {
            Some(t) => {
                next_tick.store(t, Ordering::Release);
                loop {
                    match rx.try_recv() {
                        Ok(item) => {
                            if !handle(&mut session, item, &mut trial_origin) {
                                break 'session;
                            }
                        }
                        Err(mpsc::TryRecvError::Empty) => break,
                        Err(mpsc::TryRecvError::Disconnected) => {
                            session.disconnect();
                            break 'session;
                        }
                    }
                }
                if session.next_tick().is_none() {
                    continue;
                }
                for out in session.step() {
                    outbound.push(out);
                }
                next_tick.store(session.next_tick().unwrap_or(u64::MAX), Ordering::Release);
                clock.sleep_until(trial_origin + tick * (t as u32 + 1));
            }
            None => {
                next_tick.store(u64::MAX, Ordering::Release);
                match rx.recv_timeout(Duration::from_millis(20)) {
                    Ok(item) => {
                        if !handle(&mut session, item, &mut trial_origin) {
                            break;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
        }
    }
    outbound.close();
}
