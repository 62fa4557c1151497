//! Live console server: a WebSocket endpoint that streams 20 Hz snapshots
//! and accepts operator commands.
//!
//! Every frame is one JSON text message tagged by `type`. See
//! `docs/SOCKET_API.md` for the message catalogue.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tungstenite::{Message as WsMessage, WebSocket};

use super::script::{CueCommand, ResolvedScript};
use super::sim::{RobotSnapshot, SimError, Simulation, SIM_RATE_HZ};
use super::trace::EventRecord;

/// Version carried in every snapshot as `v`.
pub const SOCKET_SCHEMA: u32 = 1;

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// A cue, e.g. `{"type":"command","command":"switch","program":"flock"}`.
    Command(CueCommand),
    Marker { x: f64, y: f64 },
    Pause,
    Resume,
    /// Restarts the performance from t = 0 with a new seed, paused.
    SetSeed { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthWindow {
    pub t: f64,
    pub total_bps: f64,
    pub gossip_bps: f64,
    pub transfer_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub v: u32,
    pub t: f64,
    pub paused: bool,
    pub seed: u64,
    pub robots: Vec<RobotSnapshot>,
    pub marker: Option<[f64; 2]>,
    pub bandwidth_window: BandwidthWindow,
    /// Log lines added since the previous snapshot.
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        v: u32,
        name: String,
        programs: Vec<String>,
    },
    Snapshot(Snapshot),
    Error { message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("serve needs a manual script; cue {0} has a time")]
    NotManual(usize),
    #[error("cannot listen: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub struct ServeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn wait(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }
}

type Clients = Arc<Mutex<BTreeMap<u64, Sender<String>>>>;

enum Inbound {
    Message(u64, ClientMessage),
    Malformed(u64, String),
}

/// Binds `127.0.0.1:port` (0 picks a free port) and starts serving.
pub fn serve(resolved: ResolvedScript, seed: u64, port: u16) -> Result<ServeHandle, ServeError> {
    if let Some(i) = resolved.script.cues.iter().position(|c| c.at.is_some()) {
        return Err(ServeError::NotManual(i));
    }
    let sim = Simulation::new(resolved.clone(), seed)?;
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let stop = Arc::new(AtomicBool::new(false));
    let clients: Clients = Arc::default();
    let (in_tx, in_rx) = channel();
    let hello = encode(&ServerMessage::Hello {
        v: SOCKET_SCHEMA,
        name: resolved.script.name.clone(),
        programs: resolved.programs.iter().map(|p| p.name.clone()).collect(),
    });

    let accept = {
        let stop = stop.clone();
        let clients = clients.clone();
        thread::spawn(move || accept_loop(listener, stop, clients, in_tx, hello))
    };
    let run = {
        let stop = stop.clone();
        thread::spawn(move || sim_loop(resolved, sim, stop, clients, in_rx))
    };
    log::info!("console server listening on ws://{addr}");
    Ok(ServeHandle {
        addr,
        stop,
        threads: vec![accept, run],
    })
}

fn accept_loop(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    clients: Clients,
    inbound: Sender<Inbound>,
    hello: String,
) {
    let next_id = AtomicU64::new(1);
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id.fetch_add(1, Ordering::SeqCst);
                let ws = stream
                    .set_nonblocking(false)
                    .map_err(|e| e.to_string())
                    .and_then(|_| tungstenite::accept(stream).map_err(|e| e.to_string()));
                match ws {
                    Ok(ws) => {
                        // hello goes first, ahead of any snapshot
                        let (out_tx, out_rx) = channel();
                        let _ = out_tx.send(hello.clone());
                        clients.lock().expect("client table").insert(id, out_tx);
                        let (stop, inbound, clients) = (stop.clone(), inbound.clone(), clients.clone());
                        workers.push(thread::spawn(move || {
                            client_loop(id, ws, out_rx, inbound, &stop);
                            clients.lock().expect("client table").remove(&id);
                        }));
                        log::info!("client {id} connected from {peer}");
                    }
                    Err(e) => log::warn!("handshake with {peer} failed: {e}"),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn client_loop(
    id: u64,
    mut ws: WebSocket<TcpStream>,
    outbound: Receiver<String>,
    inbound: Sender<Inbound>,
    stop: &AtomicBool,
) {
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                let msg = match serde_json::from_str::<ClientMessage>(text.as_str()) {
                    Ok(m) => Inbound::Message(id, m),
                    Err(e) => Inbound::Malformed(id, e.to_string()),
                };
                if inbound.send(msg).is_err() {
                    break;
                }
            }
            Ok(WsMessage::Binary(_)) => {
                let _ = inbound.send(Inbound::Malformed(id, "binary frames are not accepted".into()));
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        let mut failed = false;
        for text in outbound.try_iter() {
            if ws.send(WsMessage::text(text)).is_err() {
                failed = true;
                break;
            }
        }
        if failed {
            break;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    log::info!("client {id} disconnected");
}

fn encode(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

struct Session {
    sim: Simulation,
    paused: bool,
    event_cursor: usize,
}

impl Session {
    fn new(mut sim: Simulation) -> Self {
        sim.set_record_tracks(false);
        Self {
            sim,
            paused: true,
            event_cursor: 0,
        }
    }

    fn snapshot(&mut self) -> Snapshot {
        let events = self.sim.events()[self.event_cursor..].to_vec();
        self.event_cursor = self.sim.events().len();
        let bw = self.sim.current_bandwidth();
        Snapshot {
            v: SOCKET_SCHEMA,
            t: self.sim.now(),
            paused: self.paused,
            seed: self.sim.seed(),
            robots: self.sim.robots(),
            marker: self.sim.marker_position().map(|p| [p.x, p.y]),
            bandwidth_window: BandwidthWindow {
                t: bw.t,
                total_bps: bw.bytes_per_s,
                gossip_bps: bw.gossip_bps,
                transfer_bps: bw.transfer_bps,
            },
            events,
        }
    }
}

fn sim_loop(
    resolved: ResolvedScript,
    sim: Simulation,
    stop: Arc<AtomicBool>,
    clients: Clients,
    inbound: Receiver<Inbound>,
) {
    let tick = Duration::from_secs_f64(1.0 / SIM_RATE_HZ);
    let mut session = Session::new(sim);
    let reply = |id: u64, msg: String| {
        if let Some(tx) = clients.lock().expect("client table").get(&id) {
            let _ = tx.send(msg);
        }
    };
    let mut next = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        for m in inbound.try_iter() {
            match m {
                Inbound::Malformed(id, reason) => reply(
                    id,
                    encode(&ServerMessage::Error {
                        message: format!("bad message: {reason}"),
                    }),
                ),
                Inbound::Message(id, msg) => {
                    let result = match msg {
                        ClientMessage::Command(c) => session.sim.issue(&c).map_err(|e| e.to_string()),
                        ClientMessage::Marker { x, y } => session
                            .sim
                            .issue(&CueCommand::Marker { x, y })
                            .map_err(|e| e.to_string()),
                        ClientMessage::Pause => {
                            session.paused = true;
                            Ok(())
                        }
                        ClientMessage::Resume => {
                            session.paused = false;
                            Ok(())
                        }
                        ClientMessage::SetSeed { seed } => Simulation::new(resolved.clone(), seed)
                            .map(|s| session = Session::new(s))
                            .map_err(|e| e.to_string()),
                    };
                    if let Err(message) = result {
                        reply(id, encode(&ServerMessage::Error { message }));
                    }
                }
            }
        }
        if !session.paused {
            if let Err(e) = session.sim.step() {
                log::error!("simulation halted: {e}");
                session.paused = true;
                let msg = encode(&ServerMessage::Error {
                    message: format!("simulation halted: {e}"),
                });
                for tx in clients.lock().expect("client table").values() {
                    let _ = tx.send(msg.clone());
                }
            }
        }
        let snap = encode(&ServerMessage::Snapshot(session.snapshot()));
        clients
            .lock()
            .expect("client table")
            .retain(|_, tx| tx.send(snap.clone()).is_ok());

        next += tick;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}
