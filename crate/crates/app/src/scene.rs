//! WebSocket endpoint `/scene` for viewers.
//!
//! Server to client: one text message per snapshot, the JSON form of
//! [`SceneSnapshot`]. Client to server: [`ListenerUpdate`] JSON, which moves
//! the listener. Each client has a bounded queue; a client that lets it fill
//! up is disconnected instead of slowing anyone else down.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use log::{debug, info, warn};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::protocol::WebSocketConfig;
use tungstenite::{Message, WebSocket};

use traffic_bridge::bridge::SceneSnapshot;
use traffic_bridge::geo::Point3;

pub const SCENE_PATH: &str = "/scene";
/// Snapshots waiting for the broadcaster thread.
const FANOUT_QUEUE: usize = 4;
const POLL: Duration = Duration::from_millis(5);

/// A viewer moving the listener.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerUpdate {
    /// Engine units.
    pub position: Point3,
    /// Engine yaw, degrees.
    #[serde(default)]
    pub yaw: f64,
    /// Client id; filled in by the server when the client leaves it out.
    #[serde(default)]
    pub source: Option<String>,
}

impl ListenerUpdate {
    pub fn is_valid(&self) -> bool {
        self.position.is_finite() && self.yaw.is_finite()
    }
}

/// The most recent listener update from any client.
#[derive(Debug, Default)]
pub struct ListenerCell {
    latest: Mutex<Option<ListenerUpdate>>,
    received: AtomicU64,
}

impl ListenerCell {
    pub fn store(&self, update: ListenerUpdate) {
        *self.latest.lock() = Some(update);
        self.received.fetch_add(1, Ordering::Relaxed);
    }

    /// Takes the update stored since the last call, if any.
    pub fn take(&self) -> Option<ListenerUpdate> {
        self.latest.lock().take()
    }

    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
}

struct Client {
    id: u64,
    tx: Sender<Arc<str>>,
    kicked: Arc<AtomicBool>,
}

#[derive(Debug, Default)]
pub struct SceneCounters {
    pub connected: AtomicUsize,
    pub accepted: AtomicU64,
    pub dropped_slow: AtomicU64,
    /// Snapshots the tick loop offered while the broadcaster was busy.
    pub skipped: AtomicU64,
    pub broadcasts: AtomicU64,
}

/// Handle held by the tick loop.
pub struct SceneServer {
    addr: SocketAddr,
    feed: Sender<Arc<SceneSnapshot>>,
    listener: Arc<ListenerCell>,
    counters: Arc<SceneCounters>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl SceneServer {
    pub fn start(bind: &str, client_queue: usize) -> anyhow::Result<Self> {
        let socket = TcpListener::bind(bind).map_err(|e| anyhow::anyhow!("binding WebSocket server to {bind}: {e}"))?;
        socket.set_nonblocking(true)?;
        let addr = socket.local_addr()?;
        let clients: Arc<Mutex<Vec<Client>>> = Arc::default();
        let listener = Arc::new(ListenerCell::default());
        let counters = Arc::new(SceneCounters::default());
        let stop = Arc::new(AtomicBool::new(false));
        let (feed, snapshots) = bounded::<Arc<SceneSnapshot>>(FANOUT_QUEUE);

        let accept = {
            let (clients, listener, counters, stop) =
                (Arc::clone(&clients), Arc::clone(&listener), Arc::clone(&counters), Arc::clone(&stop));
            std::thread::Builder::new()
                .name("scene-accept".into())
                .spawn(move || accept_loop(socket, client_queue, clients, listener, counters, stop))?
        };
        let fanout = {
            let (clients, counters) = (Arc::clone(&clients), Arc::clone(&counters));
            std::thread::Builder::new().name("scene-fanout".into()).spawn(move || fanout_loop(snapshots, clients, counters))?
        };
        info!("viewer endpoint ws://{addr}{SCENE_PATH}");
        Ok(Self { addr, feed, listener, counters, stop, threads: vec![accept, fanout] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn listener(&self) -> &Arc<ListenerCell> {
        &self.listener
    }

    pub fn counters(&self) -> &SceneCounters {
        &self.counters
    }

    /// Hands a snapshot to the broadcaster without blocking. Returns false
    /// if the broadcaster is still busy with earlier ones.
    pub fn offer(&self, snapshot: Arc<SceneSnapshot>) -> bool {
        match self.feed.try_send(snapshot) {
            Ok(()) => true,
            Err(_) => {
                self.counters.skipped.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // closing the feed ends the fan-out loop
        let (dead, _) = bounded(1);
        self.feed = dead;
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for SceneServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn fanout_loop(snapshots: Receiver<Arc<SceneSnapshot>>, clients: Arc<Mutex<Vec<Client>>>, counters: Arc<SceneCounters>) {
    for snapshot in snapshots {
        let mut clients = clients.lock();
        clients.retain(|c| !c.kicked.load(Ordering::Relaxed));
        if clients.is_empty() {
            continue;
        }
        let text: Arc<str> = match serde_json::to_string(&*snapshot) {
            Ok(t) => t.into(),
            Err(e) => {
                warn!("snapshot did not serialize: {e}");
                continue;
            }
        };
        clients.retain(|c| match c.tx.try_send(Arc::clone(&text)) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                warn!("viewer {} is too slow, disconnecting", c.id);
                c.kicked.store(true, Ordering::Relaxed);
                counters.dropped_slow.fetch_add(1, Ordering::Relaxed);
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
        counters.broadcasts.fetch_add(1, Ordering::Relaxed);
    }
}

fn accept_loop(
    socket: TcpListener,
    client_queue: usize,
    clients: Arc<Mutex<Vec<Client>>>,
    listener: Arc<ListenerCell>,
    counters: Arc<SceneCounters>,
    stop: Arc<AtomicBool>,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    let mut next_id = 1;
    while !stop.load(Ordering::SeqCst) {
        match socket.accept() {
            Ok((stream, peer)) => {
                let id = next_id;
                next_id += 1;
                let (tx, rx) = bounded(client_queue);
                let kicked = Arc::new(AtomicBool::new(false));
                let ctx = ClientCtx {
                    id,
                    rx,
                    kicked: Arc::clone(&kicked),
                    listener: Arc::clone(&listener),
                    counters: Arc::clone(&counters),
                    stop: Arc::clone(&stop),
                };
                clients.lock().push(Client { id, tx, kicked });
                debug!("viewer {id} connecting from {peer}");
                match std::thread::Builder::new().name(format!("scene-client-{id}")).spawn(move || serve_client(stream, ctx)) {
                    Ok(h) => workers.push(h),
                    Err(e) => warn!("no thread for viewer {id}: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => {
                warn!("accepting viewer: {e}");
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

struct ClientCtx {
    id: u64,
    rx: Receiver<Arc<str>>,
    kicked: Arc<AtomicBool>,
    listener: Arc<ListenerCell>,
    counters: Arc<SceneCounters>,
    stop: Arc<AtomicBool>,
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn handshake(stream: TcpStream) -> Option<WebSocket<TcpStream>> {
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    // the error type is fixed by tungstenite's callback signature
    #[allow(clippy::result_large_err)]
    let check_path = |req: &Request, resp: Response| -> Result<Response, ErrorResponse> {
        if req.uri().path() == SCENE_PATH {
            Ok(resp)
        } else {
            let mut err = ErrorResponse::new(Some(format!("only {SCENE_PATH} is served\n")));
            *err.status_mut() = tungstenite::http::StatusCode::NOT_FOUND;
            Err(err)
        }
    };
    let config = WebSocketConfig { max_write_buffer_size: 16 << 20, ..Default::default() };
    match tungstenite::accept_hdr_with_config(stream, check_path, Some(config)) {
        Ok(ws) => {
            ws.get_ref().set_nonblocking(true).ok()?;
            Some(ws)
        }
        Err(e) => {
            debug!("viewer handshake failed: {e}");
            None
        }
    }
}

fn serve_client(stream: TcpStream, ctx: ClientCtx) {
    let Some(mut ws) = handshake(stream) else {
        ctx.kicked.store(true, Ordering::Relaxed);
        return;
    };
    ctx.counters.accepted.fetch_add(1, Ordering::Relaxed);
    ctx.counters.connected.fetch_add(1, Ordering::Relaxed);
    info!("viewer {} connected", ctx.id);
    let reason = client_loop(&mut ws, &ctx);
    ctx.kicked.store(true, Ordering::Relaxed);
    let _ = ws.close(None);
    let _ = ws.flush();
    ctx.counters.connected.fetch_sub(1, Ordering::Relaxed);
    info!("viewer {} disconnected: {reason}", ctx.id);
}

fn client_loop(ws: &mut WebSocket<TcpStream>, ctx: &ClientCtx) -> String {
    let mut flush_pending = false;
    loop {
        if ctx.stop.load(Ordering::SeqCst) {
            return "shutting down".into();
        }
        if ctx.kicked.load(Ordering::Relaxed) {
            return "send queue full".into();
        }
        if flush_pending {
            match ws.flush() {
                Ok(()) => flush_pending = false,
                Err(e) if would_block(&e) => std::thread::sleep(POLL),
                Err(e) => return e.to_string(),
            }
        } else {
            match ctx.rx.recv_timeout(POLL) {
                Ok(text) => match ws.send(Message::Text(text.to_string())) {
                    Ok(()) => {}
                    Err(e) if would_block(&e) => flush_pending = true,
                    Err(e) => return e.to_string(),
                },
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return "dropped".into(),
            }
        }
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => match serde_json::from_str::<ListenerUpdate>(&text) {
                    Ok(mut update) if update.is_valid() => {
                        update.source.get_or_insert_with(|| format!("client-{}", ctx.id));
                        ctx.listener.store(update);
                    }
                    Ok(_) => warn!("viewer {} sent a non-finite listener position", ctx.id),
                    Err(e) => warn!("viewer {} sent an unreadable message: {e}", ctx.id),
                },
                Ok(Message::Close(_)) => return "closed by viewer".into(),
                Ok(_) => {}
                Err(e) if would_block(&e) => break,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return "connection closed".into()
                }
                Err(e) => return e.to_string(),
            }
        }
    }
}
