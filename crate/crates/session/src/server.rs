//! WebSocket endpoint. One thread owns the session and runs the control
//! loop; each client gets a thread that forwards its commands into an
//! ordered queue and writes out acks, errors and state snapshots. Any
//! number of viewers may connect; commands need the teacher lease.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use kinesis_core::lfd::execute::{Feedback, FeedbackSource, TickContext, TickLog};
use kinesis_core::lfd::Trajectory;
use tungstenite::{Message, WebSocket};

use crate::command::{
    parse_client_line, ClientMessage, ErrorCode, Overlay, ServerMessage, StateSnapshot, TeachCommand, PROTOCOL_VERSION,
};
use crate::script::as_feedback;
use crate::session::{Mode, Session, SessionError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub broadcast_hz: f64,
    /// Pace the control loop at wall-clock rate; off runs as fast as possible.
    pub realtime: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            broadcast_hz: 30.0,
            realtime: true,
        }
    }
}

struct Inbound {
    client: u64,
    id: u64,
    command: TeachCommand,
}

#[derive(Default)]
struct Hub {
    clients: BTreeMap<u64, Sender<String>>,
    lease: Option<u64>,
    next_id: u64,
}

impl Hub {
    fn send(&self, client: u64, msg: &ServerMessage) {
        if let Some(tx) = self.clients.get(&client) {
            let _ = tx.send(msg.to_line());
        }
    }

    fn broadcast(&self, msg: &ServerMessage) {
        let line = msg.to_line();
        for tx in self.clients.values() {
            let _ = tx.send(line.clone());
        }
    }
}

type SharedHub = Arc<Mutex<Hub>>;

fn lock(hub: &SharedHub) -> std::sync::MutexGuard<'_, Hub> {
    hub.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct Server {
    listener: TcpListener,
}

impl Server {
    pub fn bind(addr: &str) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `stop` is set; returns the session as it was left.
    pub fn run(self, mut session: Session, opts: ServeOptions, stop: Arc<AtomicBool>) -> std::io::Result<Session> {
        let hub: SharedHub = Arc::default();
        let (tx, rx) = mpsc::channel::<Inbound>();
        self.listener.set_nonblocking(true)?;
        let accept = {
            let hub = hub.clone();
            let stop = stop.clone();
            let listener = self.listener;
            thread::spawn(move || accept_loop(listener, hub, tx, stop))
        };
        let mut pacer = Pacer::new(&opts, session.rig().dt());
        while !stop.load(Ordering::Relaxed) {
            let next = match rx.try_recv() {
                Ok(m) => Some(m),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => break,
            };
            let ticked_before = session.tick_count();
            if let Some(msg) = next {
                let result = {
                    let mut fb = LiveFeedback {
                        rx: &rx,
                        hub: &hub,
                        pacer: &mut pacer,
                        tick: session.tick_count(),
                        step_m: session.settings.correction_step_m,
                        step: 0,
                    };
                    session.handle(msg.command, &mut fb)
                };
                reply(&hub, msg.client, msg.id, result.map(|o| o.detail()));
            }
            if session.tick_count() == ticked_before {
                if let Err(e) = session.step() {
                    lock(&hub).broadcast(&ServerMessage::error(None, ErrorCode::Failed, e.to_string()));
                }
                pacer.tick();
            }
            if pacer.broadcast_due() {
                let snap = session.snapshot();
                lock(&hub).broadcast(&ServerMessage::State {
                    v: PROTOCOL_VERSION,
                    snapshot: Box::new(snap),
                });
            }
        }
        let _ = accept.join();
        Ok(session)
    }
}

fn reply(hub: &SharedHub, client: u64, id: u64, result: Result<Option<String>, SessionError>) {
    let msg = match result {
        Ok(detail) => ServerMessage::Ack {
            v: PROTOCOL_VERSION,
            id,
            detail,
        },
        Err(e) => {
            let code = match e {
                SessionError::WrongMode { .. } => ErrorCode::WrongMode,
                _ => ErrorCode::Failed,
            };
            ServerMessage::error(Some(id), code, e.to_string())
        }
    };
    lock(hub).send(client, &msg);
}

/// Keeps the loop at the control rate and decides when to broadcast.
struct Pacer {
    realtime: bool,
    tick_period: Duration,
    broadcast_period: Duration,
    next_tick: Instant,
    last_broadcast: Instant,
}

impl Pacer {
    fn new(opts: &ServeOptions, dt: f64) -> Self {
        let now = Instant::now();
        let hz = if opts.broadcast_hz > 0.0 { opts.broadcast_hz } else { 30.0 };
        Self {
            realtime: opts.realtime,
            tick_period: Duration::from_secs_f64(dt),
            broadcast_period: Duration::from_secs_f64(1.0 / hz),
            next_tick: now,
            last_broadcast: now,
        }
    }

    fn tick(&mut self) {
        if !self.realtime {
            return;
        }
        self.next_tick += self.tick_period;
        let now = Instant::now();
        if self.next_tick > now {
            thread::sleep(self.next_tick - now);
        } else if now - self.next_tick > self.tick_period * 10 {
            // fell far behind; don't try to catch up in a burst
            self.next_tick = now;
        }
    }

    fn broadcast_due(&mut self) -> bool {
        let now = Instant::now();
        if now - self.last_broadcast >= self.broadcast_period {
            self.last_broadcast = now;
            true
        } else {
            false
        }
    }
}

/// Feeds queued client commands into a running program, one per tick, and
/// streams snapshots while it runs.
struct LiveFeedback<'a> {
    rx: &'a Receiver<Inbound>,
    hub: &'a SharedHub,
    pacer: &'a mut Pacer,
    tick: u64,
    step_m: f64,
    /// Index of the program step being executed, from 1.
    step: usize,
}

impl FeedbackSource for LiveFeedback<'_> {
    fn poll(&mut self, _ctx: &TickContext) -> Option<Feedback> {
        let msg = self.rx.try_recv().ok()?;
        match as_feedback(&msg.command, self.step_m) {
            Some(fb) => {
                reply(self.hub, msg.client, msg.id, Ok(None));
                Some(fb)
            }
            None => {
                let err = SessionError::WrongMode {
                    command: msg.command.kind(),
                    mode: Mode::Execute,
                };
                reply(self.hub, msg.client, msg.id, Err(err));
                None
            }
        }
    }

    fn observe(&mut self, entry: &TickLog, samples: &Trajectory) {
        self.tick += 1;
        if entry.tick == 1 {
            self.step += 1;
        }
        self.pacer.tick();
        if !self.pacer.broadcast_due() {
            return;
        }
        let snap = StateSnapshot {
            tick: self.tick,
            t_s: entry.t_s,
            mode: Mode::Execute,
            q_rad: entry.q_rad.clone(),
            ee_pose: entry.ee_pose,
            x_goal: entry.x_goal,
            wrench: entry.wrench,
            insertion_force_n: entry.insertion_force_n,
            stiffness: entry.stiffness,
            gripper_closed: entry.gripper_closed,
            exploration_active: entry.exploration_active,
            exploration_offset_m: entry.exploration_offset_m,
            overlay: Some(Overlay {
                primitive: format!("step {}", self.step),
                positions_m: samples.samples().iter().map(|s| s.pose.position.into()).collect(),
            }),
        };
        lock(self.hub).broadcast(&ServerMessage::State {
            v: PROTOCOL_VERSION,
            snapshot: Box::new(snap),
        });
    }
}

fn accept_loop(listener: TcpListener, hub: SharedHub, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut workers = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (hub, tx, stop) = (hub.clone(), tx.clone(), stop.clone());
                workers.push(thread::spawn(move || {
                    if let Err(e) = client_loop(stream, hub, tx, stop) {
                        eprintln!("client: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                eprintln!("accept: {e}");
                break;
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn client_loop(stream: TcpStream, hub: SharedHub, tx: Sender<Inbound>, stop: Arc<AtomicBool>) -> anyhow::Result<()> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)))?;
    let (out_tx, out_rx) = mpsc::channel::<String>();
    let id = {
        let mut h = lock(&hub);
        h.next_id += 1;
        let id = h.next_id;
        h.clients.insert(id, out_tx);
        h.send(
            id,
            &ServerMessage::Hello {
                v: PROTOCOL_VERSION,
                client: id,
                lease_holder: h.lease,
            },
        );
        id
    };
    let result = serve_client(&mut ws, id, &hub, &tx, &out_rx, &stop);
    let mut h = lock(&hub);
    h.clients.remove(&id);
    if h.lease == Some(id) {
        h.lease = None;
        h.broadcast(&ServerMessage::Lease {
            v: PROTOCOL_VERSION,
            holder: None,
        });
    }
    drop(h);
    let _ = ws.close(None);
    result
}

fn serve_client(
    ws: &mut WebSocket<TcpStream>,
    id: u64,
    hub: &SharedHub,
    tx: &Sender<Inbound>,
    out_rx: &Receiver<String>,
    stop: &AtomicBool,
) -> anyhow::Result<()> {
    while !stop.load(Ordering::Relaxed) {
        for line in out_rx.try_iter() {
            ws.send(Message::Text(line))?;
        }
        match ws.read() {
            Ok(Message::Text(text)) => on_text(&text, id, hub, tx),
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn on_text(text: &str, id: u64, hub: &SharedHub, tx: &Sender<Inbound>) {
    let msg = match parse_client_line(text) {
        Ok(m) => m,
        Err(err) => return lock(hub).send(id, &err),
    };
    let mut h = lock(hub);
    match msg {
        ClientMessage::Lease { take: true, .. } => {
            if h.lease.is_some_and(|holder| holder != id) {
                h.send(id, &ServerMessage::error(None, ErrorCode::LeaseHeld, "another client holds the lease"));
            } else {
                h.lease = Some(id);
                h.broadcast(&ServerMessage::Lease {
                    v: PROTOCOL_VERSION,
                    holder: Some(id),
                });
            }
        }
        ClientMessage::Lease { take: false, .. } => {
            if h.lease == Some(id) {
                h.lease = None;
                h.broadcast(&ServerMessage::Lease {
                    v: PROTOCOL_VERSION,
                    holder: None,
                });
            }
        }
        ClientMessage::Command { id: msg_id, command, .. } => {
            if h.lease != Some(id) {
                h.send(id, &ServerMessage::error(Some(msg_id), ErrorCode::LeaseHeld, "take the teacher lease first"));
                return;
            }
            drop(h);
            let _ = tx.send(Inbound {
                client: id,
                id: msg_id,
                command,
            });
        }
    }
}
