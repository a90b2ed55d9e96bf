//! The per-module service node.
//!
//! A [`Node`] is a sans-IO state machine. The caller feeds it bytes from
//! its ports, command lines from local sessions, physical changes and the
//! clock, and drains [`NodeOutput`]s: bytes to put on a port, lines for a
//! session, and log records.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use super::command::{b64_encode, parse_command, valid_file_name, Command, Reply};
use super::phys::ModulePhysState;
use crate::link::{Delivery, LinkConfig, LinkStats};
use crate::msgnet::{
    AppDataFlag, AppName, Body, ChannelOutput, Chunk, ModuleId, MsgTicket, PortChannel,
    ServiceMessage,
};
use crate::roledsl::{EngineEffect, EventId, RoleEngine, RoleProgram};
use crate::time::{SimDuration, SimTime};

/// Data bytes per CODE_CHUNK message.
pub const CODE_CHUNK_LEN: usize = 512;
/// Data bytes per FILE_CHUNK message.
pub const FILE_CHUNK_LEN: usize = 512;
/// Source app name used for commands arriving through EXEC.
pub const EXEC_APP: &str = "exec";
/// Leading bytes of every code image.
pub const IMAGE_MAGIC: &[u8; 5] = b"MSIMG";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeConfig {
    /// The root starts with id `0`; everyone else waits for a push.
    pub root: bool,
    pub version: u32,
    pub image_len: usize,
    pub announce_period: SimDuration,
}

impl NodeConfig {
    pub fn root() -> Self {
        NodeConfig {
            root: true,
            version: 1,
            ..Self::member()
        }
    }

    pub fn member() -> Self {
        NodeConfig {
            root: false,
            version: 0,
            image_len: 1024,
            announce_period: SimDuration::from_secs(1),
        }
    }
}

/// Deterministic stand-in for a software release.
pub fn code_image(version: u32, len: usize) -> Vec<u8> {
    let mut img = Vec::with_capacity(len.max(9));
    img.extend_from_slice(IMAGE_MAGIC);
    img.extend_from_slice(&version.to_be_bytes());
    let mut i = 0u32;
    while img.len() < len {
        img.push((i.wrapping_mul(31).wrapping_add(version)) as u8);
        i += 1;
    }
    img
}

fn image_version(img: &[u8]) -> Option<u32> {
    if img.len() < 9 || &img[..5] != IMAGE_MAGIC {
        return None;
    }
    Some(u32::from_be_bytes([img[5], img[6], img[7], img[8]]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub kind: String,
    pub payload: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeOutput {
    Transmit { port: u8, bytes: Vec<u8> },
    Line { session: SessionId, line: String },
    Log(LogRecord),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborInfo {
    pub id: ModuleId,
    pub version: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub pushes_started: u64,
    pub pushes_completed: u64,
    pub pushes_failed: u64,
    pub pushes_accepted: u64,
    pub pushes_rejected: u64,
    pub app_delivered: u64,
    pub bcast_delivered: u64,
    pub files_stored: u64,
    pub protocol_drops: u64,
}

#[derive(Debug)]
struct Assembly {
    transfer_id: u16,
    total: u16,
    next: u16,
    bytes: Vec<u8>,
    name: String,
}

impl Assembly {
    /// Feeds one chunk. Returns false (and the caller drops the assembly)
    /// when it does not continue the current transfer.
    fn push(slot: &mut Option<Assembly>, chunk: Chunk, name: &str) -> bool {
        if chunk.index == 0 {
            *slot = Some(Assembly {
                transfer_id: chunk.transfer_id,
                total: chunk.total,
                next: 0,
                bytes: Vec::new(),
                name: name.to_string(),
            });
        }
        let Some(a) = slot.as_mut() else {
            return false;
        };
        if a.transfer_id != chunk.transfer_id
            || a.total != chunk.total
            || a.next != chunk.index
            || a.name != name
        {
            *slot = None;
            return false;
        }
        a.bytes.extend_from_slice(&chunk.data);
        a.next += 1;
        true
    }

    fn complete(&self) -> bool {
        self.next == self.total
    }
}

#[derive(Debug)]
struct PushState {
    transfer_id: u16,
    version: u32,
}

#[derive(Debug)]
struct Port {
    channel: PortChannel,
    connected: bool,
    neighbor: Option<NeighborInfo>,
    push: Option<PushState>,
    code_rx: Option<Assembly>,
    file_rx: Option<Assembly>,
    /// Role chain most recently reported by the neighbour's engine.
    roles: Option<Vec<String>>,
}

impl Port {
    fn new(cfg: LinkConfig) -> Self {
        Port {
            channel: PortChannel::new(cfg),
            connected: false,
            neighbor: None,
            push: None,
            code_rx: None,
            file_rx: None,
            roles: None,
        }
    }

    /// Reply timeout for requests sent over this port.
    fn request_timeout(&self) -> SimDuration {
        let cfg = self.channel.link_config();
        cfg.ack_timeout
            .saturating_mul(3)
            .saturating_mul(u64::from(cfg.max_retries.max(1)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RemoteKind {
    Exec,
    Start,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sink {
    Session(SessionId),
    Remote { port: u8, req_id: u16, kind: RemoteKind },
}

#[derive(Debug)]
enum Op {
    State,
    Send { len: usize },
    Exec,
    Start,
    Bcast {
        waiting: BTreeSet<u8>,
        delivered: usize,
        failed: Vec<u8>,
    },
    PutFile { name: String, len: usize, waiting: usize },
}

#[derive(Debug)]
struct Pending {
    sink: Sink,
    op: Op,
    deadline: Option<SimTime>,
    timeout: SimDuration,
}

#[derive(Clone, Copy, Debug)]
enum TicketUse {
    /// The request message of a pending entry.
    Request(u16),
    Bcast(u16),
    File(u16),
    Push { transfer_id: u16, last: bool },
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Registrant {
    Session(SessionId),
    Engine,
}

#[derive(Debug)]
struct EngineHost {
    app: AppName,
    engine: RoleEngine,
}

#[derive(Clone, Copy, Debug)]
struct Ctx {
    sink: Sink,
    /// `None` inside EXEC.
    session: Option<SessionId>,
}

#[derive(Debug)]
pub struct Node {
    cfg: NodeConfig,
    phys: ModulePhysState,
    id: ModuleId,
    version: u32,
    image: Vec<u8>,
    ports: BTreeMap<u8, Port>,
    sessions: BTreeMap<SessionId, Option<AppName>>,
    next_session: u64,
    registry: BTreeMap<AppName, Registrant>,
    files: BTreeMap<String, Vec<u8>>,
    pending: BTreeMap<u16, Pending>,
    next_req: u16,
    tickets: BTreeMap<(u8, MsgTicket), TicketUse>,
    next_transfer: u16,
    engine: Option<EngineHost>,
    next_tick: Option<SimTime>,
    stats: NodeStats,
    outputs: VecDeque<NodeOutput>,
}

impl Node {
    pub fn new(cfg: NodeConfig, phys: ModulePhysState) -> Self {
        let ports = phys
            .ports
            .keys()
            .map(|&p| (p, Port::new(LinkConfig::default())))
            .collect();
        let version = cfg.version;
        Node {
            id: if cfg.root {
                ModuleId::root()
            } else {
                ModuleId::unassigned()
            },
            image: if version > 0 {
                code_image(version, cfg.image_len)
            } else {
                Vec::new()
            },
            version,
            cfg,
            phys,
            ports,
            sessions: BTreeMap::new(),
            next_session: 0,
            registry: BTreeMap::new(),
            files: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_req: 0,
            tickets: BTreeMap::new(),
            next_transfer: 0,
            engine: None,
            next_tick: None,
            stats: NodeStats::default(),
            outputs: VecDeque::new(),
        }
    }

    /// Replaces the link parameters of `port`. Only meaningful before the
    /// port carries traffic.
    pub fn set_link_config(&mut self, port: u8, cfg: LinkConfig) {
        if let Some(p) = self.ports.get_mut(&port) {
            p.channel = PortChannel::new(cfg);
        }
    }

    pub fn id(&self) -> &ModuleId {
        &self.id
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn image(&self) -> &[u8] {
        &self.image
    }

    pub fn phys(&self) -> &ModulePhysState {
        &self.phys
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn link_stats(&self, port: u8) -> Option<LinkStats> {
        self.ports.get(&port).map(|p| p.channel.link_stats())
    }

    pub fn neighbors(&self) -> BTreeMap<u8, NeighborInfo> {
        self.ports
            .iter()
            .filter_map(|(&k, p)| p.neighbor.clone().map(|n| (k, n)))
            .collect()
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn files(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.files.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn registered_apps(&self) -> Vec<String> {
        self.registry.keys().map(|a| a.to_string()).collect()
    }

    pub fn engine_role(&self) -> Option<&str> {
        self.engine.as_ref().and_then(|h| h.engine.role())
    }

    pub fn engine(&self) -> Option<&RoleEngine> {
        self.engine.as_ref().map(|h| &h.engine)
    }

    /// Requests still waiting for a reply or a delivery outcome.
    pub fn pending_requests(&self) -> usize {
        self.pending.len()
    }

    pub fn drain_outputs(&mut self) -> Vec<NodeOutput> {
        self.outputs.drain(..).collect()
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        let channels = self.ports.values().filter_map(|p| p.channel.next_deadline());
        let pending = self.pending.values().filter_map(|p| p.deadline);
        let engine = self.engine.as_ref().and_then(|h| h.engine.next_deadline());
        channels.chain(pending).chain(engine).chain(self.next_tick).min()
    }

    fn log(&mut self, kind: &str, payload: impl Into<String>) {
        self.outputs.push_back(NodeOutput::Log(LogRecord {
            kind: kind.to_string(),
            payload: payload.into(),
        }));
    }

    fn line(&mut self, session: SessionId, line: impl Into<String>) {
        if self.sessions.contains_key(&session) {
            self.outputs.push_back(NodeOutput::Line {
                session,
                line: line.into(),
            });
        }
    }

    pub fn boot(&mut self, now: SimTime) {
        if self.next_tick.is_some() {
            return;
        }
        self.log("boot", format!("id={} version={}", self.id, self.version));
        self.next_tick = Some(now + self.cfg.announce_period);
        self.announce(now);
        self.flush(now);
    }

    // ---- sessions -------------------------------------------------------

    pub fn open_session(&mut self) -> SessionId {
        let id = SessionId(self.next_session);
        self.next_session += 1;
        self.sessions.insert(id, None);
        id
    }

    pub fn close_session(&mut self, session: SessionId) {
        if let Some(Some(app)) = self.sessions.remove(&session) {
            self.registry.remove(&app);
            self.log("unregister", format!("app={app} closed"));
        }
    }

    /// Runs one command line from `session`. The reply arrives as a
    /// [`NodeOutput::Line`], possibly after remote round trips.
    pub fn app_command(&mut self, session: SessionId, line: &str, now: SimTime) {
        if !self.sessions.contains_key(&session) {
            return;
        }
        let ctx = Ctx {
            sink: Sink::Session(session),
            session: Some(session),
        };
        if let Some(reply) = self.execute(ctx, line, now) {
            self.line(session, reply.to_string());
        }
        self.flush(now);
    }

    // ---- physical events ------------------------------------------------

    pub fn port_connected(&mut self, port: u8, neighbor: &str, now: SimTime) {
        let Some(p) = self.ports.get_mut(&port) else {
            return;
        };
        p.channel.reset(now);
        p.connected = true;
        p.neighbor = None;
        p.push = None;
        p.code_rx = None;
        p.file_rx = None;
        p.roles = None;
        self.phys.connect(port, neighbor);
        self.log("link_up", format!("port={port} peer={neighbor}"));
        self.send_plain(port, None, &Body::Hello { version: self.version }, now);
        if let Some(host) = &self.engine {
            let msg = self.role_message(true);
            let app = host.app.clone();
            self.send_engine(port, &app, &msg, now);
        }
        self.reevaluate_engine(now);
        self.flush(now);
    }

    /// The port is open again. Outstanding frames keep retrying until the
    /// link gives up; everything keyed to the neighbour is dropped now.
    pub fn port_disconnected(&mut self, port: u8, now: SimTime) {
        let Some(p) = self.ports.get_mut(&port) else {
            return;
        };
        if !p.connected {
            return;
        }
        p.connected = false;
        let old = p.neighbor.take();
        p.push = None;
        p.code_rx = None;
        p.file_rx = None;
        p.roles = None;
        self.phys.disconnect(port);
        self.log("link_down", format!("port={port}"));
        if let Some(n) = old {
            self.event_all(&format!("neighbor_down {port} {}", n.id));
        }
        self.reevaluate_engine(now);
        self.flush(now);
    }

    pub fn set_sensor(&mut self, sensor: u8, value: i32, now: SimTime) {
        self.phys.sensors.insert(sensor, value);
        self.log("sensor", format!("id={sensor} value={value}"));
        self.reevaluate_engine(now);
        if value != 0 {
            if let Some(host) = self.engine.as_mut() {
                let n = host.engine.fire_event(EventId(sensor), now);
                self.log("event", format!("{} handlers={n}", EventId(sensor)));
                self.process_engine(now);
            }
        }
        self.flush(now);
    }

    /// Installs a new local release. Versions only move forward.
    pub fn upgrade(&mut self, version: u32, now: SimTime) -> bool {
        if version <= self.version {
            self.log("upgrade_ignored", format!("version={version} current={}", self.version));
            return false;
        }
        let old = self.version;
        self.version = version;
        self.image = code_image(version, self.cfg.image_len);
        self.log("upgrade", format!("from={old} to={version}"));
        self.announce(now);
        self.event_all(&format!("version {} {}", self.version, self.id));
        self.flush(now);
        true
    }

    /// Stores `content` under `name` as if it had arrived by PUTFILE.
    pub fn store_file(&mut self, name: &str, content: Vec<u8>) {
        self.files.insert(name.to_string(), content);
    }

    // ---- I/O ------------------------------------------------------------

    pub fn receive_bytes(&mut self, port: u8, bytes: &[u8], now: SimTime) {
        if let Some(p) = self.ports.get_mut(&port) {
            p.channel.receive(bytes, now);
            self.flush(now);
        }
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        for p in self.ports.values_mut() {
            if p.channel.next_deadline().is_some_and(|d| d <= now) {
                p.channel.handle_timeout(now);
            }
        }
        let expired: Vec<u16> = self
            .pending
            .iter()
            .filter(|(_, p)| p.deadline.is_some_and(|d| d <= now))
            .map(|(&k, _)| k)
            .collect();
        for req in expired {
            if let Some(p) = self.pending.remove(&req) {
                self.reply_to(p.sink, Reply::err(504, "timeout"), now);
            }
        }
        if let Some(host) = self.engine.as_mut() {
            if host.engine.next_deadline().is_some_and(|d| d <= now) {
                host.engine.handle_timeout(now);
                self.process_engine(now);
            }
        }
        while self.next_tick.is_some_and(|t| t <= now) {
            let t = self.next_tick.expect("checked");
            self.next_tick = Some(t + self.cfg.announce_period);
            self.announce(now);
            self.reevaluate_engine(now);
        }
        self.flush(now);
    }

    /// Sends VERSION_ANNOUNCE on every connected port and retries pushes.
    fn announce(&mut self, now: SimTime) {
        let ports: Vec<u8> = self.connected_ports();
        for port in ports {
            self.send_plain(port, None, &Body::VersionAnnounce { version: self.version }, now);
            self.maybe_push(port, now);
        }
    }

    fn connected_ports(&self) -> Vec<u8> {
        self.ports
            .iter()
            .filter(|(_, p)| p.connected)
            .map(|(&k, _)| k)
            .collect()
    }

    fn flush(&mut self, now: SimTime) {
        loop {
            let mut any = false;
            let ports: Vec<u8> = self.ports.keys().copied().collect();
            for port in ports {
                let outs = self
                    .ports
                    .get_mut(&port)
                    .expect("listed above")
                    .channel
                    .drain_outputs();
                for out in outs {
                    any = true;
                    match out {
                        ChannelOutput::Transmit(bytes) => {
                            self.outputs.push_back(NodeOutput::Transmit { port, bytes })
                        }
                        ChannelOutput::Received(msg) => self.dispatch(port, msg, now),
                        ChannelOutput::Resolved(t, d) => self.on_resolved(port, t, d, now),
                        ChannelOutput::Dropped(e) => {
                            self.stats.protocol_drops += 1;
                            self.log("drop", format!("port={port} error={e}"));
                        }
                    }
                }
            }
            if !any {
                return;
            }
        }
    }

    fn send_msg(
        &mut self,
        port: u8,
        dst_app: Option<AppName>,
        body: &Body,
        use_: TicketUse,
        now: SimTime,
    ) -> Option<MsgTicket> {
        let src = self.id.clone();
        let p = self.ports.get_mut(&port)?;
        if !p.connected {
            return None;
        }
        let msg = ServiceMessage::new(src, dst_app, body);
        match p.channel.send(&msg, now) {
            Ok(t) => {
                self.tickets.insert((port, t), use_);
                Some(t)
            }
            Err(e) => {
                self.log("send_error", format!("port={port} error={e}"));
                None
            }
        }
    }

    fn send_plain(&mut self, port: u8, dst_app: Option<AppName>, body: &Body, now: SimTime) {
        self.send_msg(port, dst_app, body, TicketUse::Plain, now);
    }

    fn on_resolved(&mut self, port: u8, ticket: MsgTicket, d: Delivery, now: SimTime) {
        let Some(use_) = self.tickets.remove(&(port, ticket)) else {
            return;
        };
        match use_ {
            TicketUse::Plain => {}
            TicketUse::Request(req) => {
                let Some(p) = self.pending.get_mut(&req) else {
                    return;
                };
                match d {
                    // The reply clock starts once the request has landed.
                    Delivery::Delivered => p.deadline = Some(now + p.timeout),
                    Delivery::Failed => {
                        let p = self.pending.remove(&req).expect("checked");
                        let reply = match p.op {
                            Op::State => Reply::err(504, "timeout"),
                            _ => Reply::err(503, "delivery failed"),
                        };
                        self.reply_to(p.sink, reply, now);
                    }
                }
            }
            TicketUse::Bcast(req) => {
                let Some(p) = self.pending.get_mut(&req) else {
                    return;
                };
                let Op::Bcast {
                    waiting,
                    delivered,
                    failed,
                } = &mut p.op
                else {
                    return;
                };
                waiting.remove(&port);
                match d {
                    Delivery::Delivered => *delivered += 1,
                    Delivery::Failed => failed.push(port),
                }
                if waiting.is_empty() {
                    let text = bcast_summary(*delivered, failed);
                    let p = self.pending.remove(&req).expect("checked");
                    self.reply_to(p.sink, Reply::ok(text), now);
                }
            }
            TicketUse::File(req) => {
                let Some(p) = self.pending.get_mut(&req) else {
                    return;
                };
                let Op::PutFile { name, len, waiting } = &mut p.op else {
                    return;
                };
                match d {
                    Delivery::Delivered => {
                        *waiting -= 1;
                        if *waiting == 0 {
                            let text = format!("stored {name} {len}");
                            let p = self.pending.remove(&req).expect("checked");
                            self.reply_to(p.sink, Reply::ok(text), now);
                        }
                    }
                    Delivery::Failed => {
                        let p = self.pending.remove(&req).expect("checked");
                        self.reply_to(p.sink, Reply::err(503, "transfer failed"), now);
                    }
                }
            }
            TicketUse::Push { transfer_id, last } => {
                let Some(port_state) = self.ports.get_mut(&port) else {
                    return;
                };
                let Some(push) = &port_state.push else {
                    return;
                };
                if push.transfer_id != transfer_id {
                    return;
                }
                match d {
                    Delivery::Failed => {
                        port_state.push = None;
                        self.stats.pushes_failed += 1;
                        self.log("push_fail", format!("port={port} transfer={transfer_id}"));
                    }
                    Delivery::Delivered if last => {
                        let version = push.version;
                        port_state.push = None;
                        // Assume success until the neighbour says otherwise,
                        // so a periodic announce does not push twice.
                        if let Some(n) = port_state.neighbor.as_mut() {
                            n.version = n.version.max(version);
                        }
                        self.stats.pushes_completed += 1;
                        self.log("push_done", format!("port={port} transfer={transfer_id}"));
                    }
                    Delivery::Delivered => {}
                }
            }
        }
    }

    fn reply_to(&mut self, sink: Sink, reply: Reply, now: SimTime) {
        match sink {
            Sink::Session(s) => self.line(s, reply.to_string()),
            Sink::Remote { port, req_id, kind } => {
                let text = reply.to_string();
                let body = match kind {
                    RemoteKind::Exec => Body::Exec {
                        reply: true,
                        req_id,
                        text,
                    },
                    RemoteKind::Start => Body::Start {
                        reply: true,
                        req_id,
                        text,
                    },
                };
                self.send_plain(port, None, &body, now);
            }
        }
    }

    fn event_all(&mut self, text: &str) {
        let sessions: Vec<SessionId> = self
            .sessions
            .iter()
            .filter(|(_, app)| app.is_some())
            .map(|(&s, _)| s)
            .collect();
        for s in sessions {
            self.line(s, format!("EVENT {text}"));
        }
    }

    // ---- diffusion --------------------------------------------------------

    fn maybe_push(&mut self, port: u8, now: SimTime) {
        if self.version == 0 || self.image.is_empty() {
            return;
        }
        let Some(p) = self.ports.get(&port) else {
            return;
        };
        let behind = p.neighbor.as_ref().is_some_and(|n| n.version < self.version);
        if !p.connected || !behind || p.push.is_some() {
            return;
        }
        let transfer_id = self.next_transfer;
        self.next_transfer = self.next_transfer.wrapping_add(1);
        let version = self.version;
        let peer = self.phys.ports[&port].neighbor.clone().unwrap_or_default();
        self.ports.get_mut(&port).expect("checked").push = Some(PushState {
            transfer_id,
            version,
        });
        self.stats.pushes_started += 1;
        self.log(
            "push_start",
            format!("port={port} peer={peer} version={version} transfer={transfer_id}"),
        );
        let image = self.image.clone();
        let total = image.len().div_ceil(CODE_CHUNK_LEN) as u16;
        for (index, data) in image.chunks(CODE_CHUNK_LEN).enumerate() {
            let body = Body::CodeChunk(Chunk {
                transfer_id,
                index: index as u16,
                total,
                data: data.to_vec(),
            });
            self.send_msg(port, None, &body, TicketUse::Push { transfer_id, last: false }, now);
        }
        let body = Body::IdAssign {
            transfer_id,
            version,
            id: assign_id(&self.id, port),
        };
        self.send_msg(port, None, &body, TicketUse::Push { transfer_id, last: true }, now);
    }

    fn on_id_assign(&mut self, port: u8, transfer_id: u16, version: u32, id: ModuleId, now: SimTime) {
        let p = self.ports.get_mut(&port).expect("dispatch checks the port");
        let assembly = p.code_rx.take();
        let peer = self.phys.ports[&port].neighbor.clone().unwrap_or_default();
        let reason = match &assembly {
            _ if version <= self.version => Some("stale_version"),
            None => Some("no_image"),
            Some(a) if a.transfer_id != transfer_id || !a.complete() => Some("incomplete"),
            Some(a) if image_version(&a.bytes) != Some(version) => Some("bad_image"),
            Some(_) => None,
        };
        if let Some(reason) = reason {
            self.stats.pushes_rejected += 1;
            self.log(
                "push_reject",
                format!("port={port} peer={peer} version={version} reason={reason}"),
            );
            return;
        }
        let image = assembly.expect("checked").bytes;
        let old = self.version;
        self.version = version;
        self.image = image;
        self.id = id;
        self.stats.pushes_accepted += 1;
        self.log(
            "push_accept",
            format!("port={port} peer={peer} from={old} version={version} id={}", self.id),
        );
        // Every session is re-registered under the new release.
        self.event_all(&format!("version {} {}", self.version, self.id));
        for port in self.connected_ports() {
            self.send_plain(port, None, &Body::Hello { version: self.version }, now);
            self.maybe_push(port, now);
        }
    }

    // ---- inbound dispatch ---------------------------------------------------

    fn dispatch(&mut self, port: u8, msg: ServiceMessage, now: SimTime) {
        let body = match msg.decode_body() {
            Ok(b) => b,
            Err(e) => {
                self.stats.protocol_drops += 1;
                self.log("drop", format!("port={port} kind={} error={e}", msg.kind.name()));
                return;
            }
        };
        let src = msg.src_module.clone();
        match body {
            Body::Hello { version } | Body::VersionAnnounce { version } => {
                self.on_neighbor_info(port, src, version, now)
            }
            Body::AppData {
                flag,
                req_id,
                src_app,
                data,
            } => {
                let dst = msg.dst_app.expect("decode enforces dst_app on APPDATA");
                self.on_appdata(port, &src, dst, flag, req_id, src_app, data, now);
            }
            Body::Bcast { src_app, data } => {
                let sessions: Vec<SessionId> = self
                    .registry
                    .values()
                    .filter_map(|r| match r {
                        Registrant::Session(s) => Some(*s),
                        Registrant::Engine => None,
                    })
                    .collect();
                let line = format!("MSG {src} {src_app} {}", b64_encode(&data));
                for s in &sessions {
                    self.line(*s, line.clone());
                }
                self.stats.bcast_delivered += sessions.len() as u64;
                self.log(
                    "bcast_rx",
                    format!("port={port} src={src} app={src_app} sessions={}", sessions.len()),
                );
            }
            Body::StateReq { req_id } => {
                let state = self.phys.clone();
                self.send_plain(port, None, &Body::StateRep { req_id, state }, now);
            }
            Body::StateRep { req_id, state } => {
                if let Some(p) = self.take_pending(req_id, |op| matches!(op, Op::State)) {
                    self.reply_to(p.sink, Reply::ok(state.to_string()), now);
                }
            }
            Body::CodeChunk(chunk) => {
                let p = self.ports.get_mut(&port).expect("dispatch on known port");
                if !Assembly::push(&mut p.code_rx, chunk, "") {
                    self.log("code_chunk_discarded", format!("port={port}"));
                }
            }
            Body::FileChunk { name, chunk } => self.on_file_chunk(port, name, chunk),
            Body::Exec {
                reply: false,
                req_id,
                text,
            } => {
                let sink = Sink::Remote {
                    port,
                    req_id,
                    kind: RemoteKind::Exec,
                };
                let ctx = Ctx {
                    sink,
                    session: None,
                };
                self.log("exec", format!("port={port} line={text}"));
                if let Some(reply) = self.execute(ctx, &text, now) {
                    self.reply_to(sink, reply, now);
                }
            }
            Body::Start {
                reply: false,
                req_id,
                text,
            } => {
                let reply = self.start_program(&text, now);
                let sink = Sink::Remote {
                    port,
                    req_id,
                    kind: RemoteKind::Start,
                };
                self.reply_to(sink, reply, now);
            }
            Body::Exec {
                reply: true,
                req_id,
                text,
            } => {
                if let Some(p) = self.take_pending(req_id, |op| matches!(op, Op::Exec)) {
                    self.relay(p.sink, text, now);
                }
            }
            Body::Start {
                reply: true,
                req_id,
                text,
            } => {
                if let Some(p) = self.take_pending(req_id, |op| matches!(op, Op::Start)) {
                    self.relay(p.sink, text, now);
                }
            }
            Body::IdAssign {
                transfer_id,
                version,
                id,
            } => self.on_id_assign(port, transfer_id, version, id, now),
        }
    }

    fn relay(&mut self, sink: Sink, text: String, now: SimTime) {
        match sink {
            Sink::Session(s) => self.line(s, text),
            Sink::Remote { port, req_id, kind } => {
                let body = match kind {
                    RemoteKind::Exec => Body::Exec {
                        reply: true,
                        req_id,
                        text,
                    },
                    RemoteKind::Start => Body::Start {
                        reply: true,
                        req_id,
                        text,
                    },
                };
                self.send_plain(port, None, &body, now);
            }
        }
    }

    fn take_pending(&mut self, req_id: u16, want: impl Fn(&Op) -> bool) -> Option<Pending> {
        if self.pending.get(&req_id).is_some_and(|p| want(&p.op)) {
            self.pending.remove(&req_id)
        } else {
            None
        }
    }

    fn on_neighbor_info(&mut self, port: u8, id: ModuleId, version: u32, now: SimTime) {
        let p = self.ports.get_mut(&port).expect("dispatch on known port");
        if !p.connected {
            return;
        }
        let info = NeighborInfo { id, version };
        let first = p.neighbor.is_none();
        if p.neighbor.as_ref() != Some(&info) {
            self.log("neighbor", format!("port={port} id={} version={}", info.id, info.version));
            self.ports.get_mut(&port).expect("checked").neighbor = Some(info.clone());
        }
        if first {
            self.event_all(&format!("neighbor_up {port} {}", info.id));
        }
        self.maybe_push(port, now);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_appdata(
        &mut self,
        port: u8,
        src: &ModuleId,
        dst: AppName,
        flag: AppDataFlag,
        req_id: u16,
        src_app: AppName,
        data: Vec<u8>,
        now: SimTime,
    ) {
        match flag {
            AppDataFlag::Data => {
                let target = self.registry.get(&dst).copied();
                let ack = match target {
                    Some(Registrant::Session(s)) => {
                        self.line(s, format!("MSG {src} {src_app} {}", b64_encode(&data)));
                        self.stats.app_delivered += 1;
                        AppDataFlag::Receipt
                    }
                    Some(Registrant::Engine) => {
                        self.on_engine_message(port, &data, now);
                        AppDataFlag::Receipt
                    }
                    None => {
                        self.log("appdata_unknown", format!("port={port} app={dst}"));
                        AppDataFlag::UnknownApp
                    }
                };
                if req_id != 0 {
                    let body = Body::AppData {
                        flag: ack,
                        req_id,
                        src_app: dst,
                        data: Vec::new(),
                    };
                    self.send_plain(port, Some(src_app), &body, now);
                }
            }
            AppDataFlag::Receipt | AppDataFlag::UnknownApp => {
                if let Some(p) = self.take_pending(req_id, |op| matches!(op, Op::Send { .. })) {
                    let reply = match (flag, &p.op) {
                        (AppDataFlag::Receipt, Op::Send { len }) => Reply::ok(format!("sent {len}")),
                        _ => Reply::err(404, "unknown app"),
                    };
                    self.reply_to(p.sink, reply, now);
                }
            }
        }
    }

    fn on_file_chunk(&mut self, port: u8, name: String, chunk: Chunk) {
        if !valid_file_name(&name) {
            self.log("file_chunk_discarded", format!("port={port} reason=bad_name"));
            return;
        }
        let p = self.ports.get_mut(&port).expect("dispatch on known port");
        if !Assembly::push(&mut p.file_rx, chunk, &name) {
            self.log("file_chunk_discarded", format!("port={port} name={name}"));
            return;
        }
        if p.file_rx.as_ref().is_some_and(Assembly::complete) {
            let a = p.file_rx.take().expect("checked");
            let len = a.bytes.len();
            self.files.insert(a.name.clone(), a.bytes);
            self.stats.files_stored += 1;
            self.log("file_stored", format!("name={} bytes={len}", a.name));
        }
    }

    // ---- commands -------------------------------------------------------------

    fn port_of(&self, module: &ModuleId) -> Option<u8> {
        if !module.is_assigned() {
            return None;
        }
        self.ports
            .iter()
            .find(|(_, p)| p.connected && p.neighbor.as_ref().is_some_and(|n| &n.id == module))
            .map(|(&k, _)| k)
    }

    fn is_self(&self, module: &ModuleId) -> bool {
        self.id.is_assigned() && module == &self.id
    }

    fn new_request(&mut self, sink: Sink, op: Op, port: Option<u8>, now: SimTime) -> u16 {
        loop {
            self.next_req = self.next_req.wrapping_add(1);
            if self.next_req != 0 && !self.pending.contains_key(&self.next_req) {
                break;
            }
        }
        let timeout = port
            .and_then(|p| self.ports.get(&p))
            .map(Port::request_timeout)
            .unwrap_or_else(|| Port::new(LinkConfig::default()).request_timeout());
        let deadline = match op {
            Op::Bcast { .. } | Op::PutFile { .. } => None,
            _ => Some(now + timeout),
        };
        self.pending.insert(
            self.next_req,
            Pending {
                sink,
                op,
                deadline,
                timeout,
            },
        );
        self.next_req
    }

    fn execute(&mut self, ctx: Ctx, line: &str, now: SimTime) -> Option<Reply> {
        let cmd = match parse_command(line) {
            Ok(c) => c,
            Err(reply) => return Some(reply),
        };
        let src_app = match (&cmd, ctx.session) {
            (Command::Register(_) | Command::Unregister, None) => {
                return Some(Reply::err(403, "not allowed in exec context"))
            }
            (Command::Register(app), Some(s)) => return Some(self.register(s, app.clone())),
            (_, None) => AppName::new(EXEC_APP).expect("valid"),
            (_, Some(s)) => match self.sessions.get(&s).cloned().flatten() {
                Some(app) => app,
                None => return Some(Reply::err(401, "not registered")),
            },
        };
        match cmd {
            Command::Register(_) => unreachable!("handled above"),
            Command::Unregister => {
                let s = ctx.session.expect("exec context rejected above");
                self.sessions.insert(s, None);
                self.registry.remove(&src_app);
                self.log("unregister", format!("app={src_app}"));
                Some(Reply::ok(format!("unregistered {src_app}")))
            }
            Command::State(None) => Some(Reply::ok(self.phys.to_string())),
            Command::State(Some(m)) if self.is_self(&m) => Some(Reply::ok(self.phys.to_string())),
            Command::State(Some(m)) => {
                let Some(port) = self.port_of(&m) else {
                    return Some(Reply::err(404, "unknown module"));
                };
                let req = self.new_request(ctx.sink, Op::State, Some(port), now);
                self.send_request(port, None, &Body::StateReq { req_id: req }, req, now)
            }
            Command::Neighbors => {
                let list: Vec<String> = self
                    .neighbors()
                    .iter()
                    .map(|(p, n)| format!("{p}:{}:{}", n.id, n.version))
                    .collect();
                if list.is_empty() {
                    Some(Reply::ok("-"))
                } else {
                    Some(Reply::ok(list.join(",")))
                }
            }
            Command::Send { module, app, data } => {
                if self.is_self(&module) {
                    return Some(match self.registry.get(&app).copied() {
                        Some(Registrant::Session(s)) => {
                            self.line(s, format!("MSG {} {src_app} {}", self.id, b64_encode(&data)));
                            self.stats.app_delivered += 1;
                            Reply::ok(format!("sent {}", data.len()))
                        }
                        _ => Reply::err(404, "unknown app"),
                    });
                }
                let Some(port) = self.port_of(&module) else {
                    return Some(Reply::err(404, "unknown module"));
                };
                let req = self.new_request(ctx.sink, Op::Send { len: data.len() }, Some(port), now);
                let body = Body::AppData {
                    flag: AppDataFlag::Data,
                    req_id: req,
                    src_app,
                    data,
                };
                self.send_request(port, Some(app), &body, req, now)
            }
            Command::Bcast(data) => {
                let ports: Vec<u8> = self.neighbors().keys().copied().collect();
                if ports.is_empty() {
                    return Some(Reply::ok("delivered=0"));
                }
                let op = Op::Bcast {
                    waiting: ports.iter().copied().collect(),
                    delivered: 0,
                    failed: Vec::new(),
                };
                let req = self.new_request(ctx.sink, op, None, now);
                let body = Body::Bcast { src_app, data };
                let mut failed_now = Vec::new();
                for &port in &ports {
                    if self.send_msg(port, None, &body, TicketUse::Bcast(req), now).is_none() {
                        failed_now.push(port);
                    }
                }
                if !failed_now.is_empty() {
                    let p = self.pending.get_mut(&req).expect("just inserted");
                    if let Op::Bcast {
                        waiting, failed, ..
                    } = &mut p.op
                    {
                        for port in failed_now {
                            waiting.remove(&port);
                            failed.push(port);
                        }
                        if waiting.is_empty() {
                            let text = bcast_summary(0, failed);
                            self.pending.remove(&req);
                            return Some(Reply::ok(text));
                        }
                    }
                }
                None
            }
            Command::PutFile { module, name, data } => {
                if self.is_self(&module) {
                    let len = data.len();
                    self.files.insert(name.clone(), data);
                    self.stats.files_stored += 1;
                    self.log("file_stored", format!("name={name} bytes={len}"));
                    return Some(Reply::ok(format!("stored {name} {len}")));
                }
                let Some(port) = self.port_of(&module) else {
                    return Some(Reply::err(404, "unknown module"));
                };
                let parts: Vec<&[u8]> = if data.is_empty() {
                    vec![&[][..]]
                } else {
                    data.chunks(FILE_CHUNK_LEN).collect()
                };
                if parts.len() > u16::MAX as usize {
                    return Some(Reply::err(400, "file too large"));
                }
                let op = Op::PutFile {
                    name: name.clone(),
                    len: data.len(),
                    waiting: parts.len(),
                };
                let req = self.new_request(ctx.sink, op, Some(port), now);
                let transfer_id = self.next_transfer;
                self.next_transfer = self.next_transfer.wrapping_add(1);
                let total = parts.len() as u16;
                for (index, part) in parts.iter().enumerate() {
                    let body = Body::FileChunk {
                        name: name.clone(),
                        chunk: Chunk {
                            transfer_id,
                            index: index as u16,
                            total,
                            data: part.to_vec(),
                        },
                    };
                    if self.send_msg(port, None, &body, TicketUse::File(req), now).is_none() {
                        self.pending.remove(&req);
                        return Some(Reply::err(503, "transfer failed"));
                    }
                }
                None
            }
            Command::Exec { module, line } => {
                if self.is_self(&module) {
                    return self.execute(ctx, &line, now);
                }
                let Some(port) = self.port_of(&module) else {
                    return Some(Reply::err(404, "unknown module"));
                };
                let req = self.new_request(ctx.sink, Op::Exec, Some(port), now);
                let body = Body::Exec {
                    reply: false,
                    req_id: req,
                    text: line,
                };
                self.send_request(port, None, &body, req, now)
            }
            Command::Start { module, name } => {
                if self.is_self(&module) {
                    return Some(self.start_program(&name, now));
                }
                let Some(port) = self.port_of(&module) else {
                    return Some(Reply::err(404, "unknown module"));
                };
                let req = self.new_request(ctx.sink, Op::Start, Some(port), now);
                let body = Body::Start {
                    reply: false,
                    req_id: req,
                    text: name,
                };
                self.send_request(port, None, &body, req, now)
            }
            Command::Version => Some(Reply::ok(self.version.to_string())),
            Command::Id => Some(Reply::ok(self.id.to_string())),
        }
    }

    fn send_request(
        &mut self,
        port: u8,
        dst_app: Option<AppName>,
        body: &Body,
        req: u16,
        now: SimTime,
    ) -> Option<Reply> {
        if self
            .send_msg(port, dst_app, body, TicketUse::Request(req), now)
            .is_none()
        {
            self.pending.remove(&req);
            return Some(Reply::err(503, "delivery failed"));
        }
        None
    }

    fn register(&mut self, session: SessionId, app: AppName) -> Reply {
        if let Some(Some(current)) = self.sessions.get(&session) {
            if *current == app {
                return Reply::ok(format!("registered {app}"));
            }
            return Reply::err(409, format!("already registered as {current}"));
        }
        if self.registry.contains_key(&app) || app.as_str() == EXEC_APP {
            return Reply::err(409, "name in use");
        }
        self.registry.insert(app.clone(), Registrant::Session(session));
        self.sessions.insert(session, Some(app.clone()));
        self.log("register", format!("app={app}"));
        Reply::ok(format!("registered {app}"))
    }

    // ---- role engine ------------------------------------------------------------

    /// Starts the role engine on file `name`, replacing any running one.
    pub fn start_program(&mut self, name: &str, now: SimTime) -> Reply {
        let Some(bytes) = self.files.get(name) else {
            return Reply::err(404, "unknown file");
        };
        let Ok(text) = std::str::from_utf8(bytes) else {
            return Reply::err(422, "line 1: file is not UTF-8");
        };
        let program = match RoleProgram::parse(text) {
            Ok(p) => p,
            Err(diags) => return Reply::err(422, diags[0].to_string()),
        };
        let Ok(app) = AppName::new(name) else {
            return Reply::err(400, "bad file name");
        };
        match self.registry.get(&app) {
            Some(Registrant::Session(_)) => return Reply::err(409, "name in use"),
            Some(Registrant::Engine) | None => {}
        }
        if let Some(host) = self.engine.as_mut() {
            host.engine.shutdown();
            self.process_engine(now);
        }
        if let Some(old) = self.engine.take() {
            self.registry.remove(&old.app);
            self.log("program_stop", format!("name={}", old.app));
        }
        let roles = program.roles().len();
        let engine = RoleEngine::new(Arc::new(program), self.phys.clone());
        self.registry.insert(app.clone(), Registrant::Engine);
        self.engine = Some(EngineHost {
            app: app.clone(),
            engine,
        });
        self.log("program_start", format!("name={app} roles={roles}"));
        self.reevaluate_engine(now);
        let msg = self.role_message(true);
        for port in self.connected_ports() {
            self.send_engine(port, &app, &msg, now);
        }
        let role = self.engine_role().unwrap_or("-").to_string();
        Reply::ok(format!("started {app} role={role}"))
    }

    fn reevaluate_engine(&mut self, now: SimTime) {
        if let Some(host) = self.engine.as_mut() {
            host.engine.reevaluate(&self.phys, now);
            self.process_engine(now);
        }
    }

    fn role_message(&self, want_reply: bool) -> String {
        let chain = self
            .engine
            .as_ref()
            .map(|h| h.engine.role_chain())
            .unwrap_or_default();
        let role = chain.first().cloned().unwrap_or_else(|| "-".into());
        let chain = if chain.is_empty() {
            "-".to_string()
        } else {
            chain.join(",")
        };
        format!("ROLE {} {role} {chain}", want_reply as u8)
    }

    /// Fire-and-forget engine-to-engine message.
    fn send_engine(&mut self, port: u8, app: &AppName, text: &str, now: SimTime) {
        let body = Body::AppData {
            flag: AppDataFlag::Data,
            req_id: 0,
            src_app: app.clone(),
            data: text.as_bytes().to_vec(),
        };
        self.send_plain(port, Some(app.clone()), &body, now);
    }

    fn on_engine_message(&mut self, port: u8, data: &[u8], now: SimTime) {
        let text = String::from_utf8_lossy(data).into_owned();
        let words: Vec<&str> = text.split_ascii_whitespace().collect();
        match words.as_slice() {
            ["ROLE", want, _role, chain] => {
                let chain: Vec<String> = if *chain == "-" {
                    Vec::new()
                } else {
                    chain.split(',').map(str::to_string).collect()
                };
                if let Some(p) = self.ports.get_mut(&port) {
                    p.roles = Some(chain);
                }
                if *want == "1" {
                    let msg = self.role_message(false);
                    let app = self.engine.as_ref().expect("engine registrant").app.clone();
                    self.send_engine(port, &app, &msg, now);
                }
            }
            ["INVOKE", role, command] => {
                let host = self.engine.as_mut().expect("engine registrant");
                match host.engine.invoke(role, command, now) {
                    Ok(()) => self.log("invoke_rx", format!("port={port} role={role} command={command}")),
                    Err(e) => self.log(
                        "invoke_reject",
                        format!("port={port} role={role} command={command} reason={e}"),
                    ),
                }
                self.process_engine(now);
            }
            _ => {
                self.stats.protocol_drops += 1;
                self.log("drop", format!("port={port} error=bad engine message"));
            }
        }
    }

    fn process_engine(&mut self, now: SimTime) {
        loop {
            let Some(host) = self.engine.as_mut() else {
                return;
            };
            let effects = host.engine.drain_effects();
            if effects.is_empty() {
                return;
            }
            let app = host.app.clone();
            for fx in effects {
                match fx {
                    EngineEffect::RoleChanged { from, to } => {
                        self.log(
                            "role",
                            format!(
                                "from={} to={}",
                                from.as_deref().unwrap_or("-"),
                                to.as_deref().unwrap_or("-")
                            ),
                        );
                        let msg = self.role_message(false);
                        for port in self.connected_ports() {
                            self.send_engine(port, &app, &msg, now);
                        }
                    }
                    EngineEffect::Ambiguous { candidates, chosen } => self.log(
                        "role_ambiguous",
                        format!("candidates={} chosen={chosen}", candidates.join(",")),
                    ),
                    EngineEffect::RoleExcluded { role, error } => {
                        self.log("role_excluded", format!("role={role} error={error}"))
                    }
                    EngineEffect::Started(l) => self.log("activity_start", l.to_string()),
                    EngineEffect::Finished(l) => self.log("activity_end", l.to_string()),
                    EngineEffect::Preempted(l) => self.log("activity_preempt", l.to_string()),
                    EngineEffect::Restarted(l) => self.log("activity_restart", l.to_string()),
                    EngineEffect::Actuate(v) => {
                        self.phys.rotation_speed = v;
                        self.log("TURN_CONTINUOUSLY", v.to_string());
                    }
                    EngineEffect::Invoke { role, command } => {
                        let targets: Vec<u8> = self
                            .ports
                            .iter()
                            .filter(|(_, p)| p.connected)
                            .filter(|(_, p)| {
                                p.roles.as_ref().is_some_and(|chain| {
                                    chain.iter().any(|r| r == &role)
                                        || (role == crate::roledsl::BUILTIN_ROOT && !chain.is_empty())
                                })
                            })
                            .map(|(&k, _)| k)
                            .collect();
                        if targets.is_empty() {
                            self.log("invoke_noop", format!("role={role} command={command}"));
                            continue;
                        }
                        let ports: Vec<String> = targets.iter().map(u8::to_string).collect();
                        self.log(
                            "invoke",
                            format!("role={role} command={command} ports={}", ports.join(",")),
                        );
                        let msg = format!("INVOKE {role} {command}");
                        for port in targets {
                            self.send_engine(port, &app, &msg, now);
                        }
                    }
                    EngineEffect::ActionError { activity, error } => {
                        self.log("action_error", format!("{activity} error={error}"))
                    }
                }
            }
        }
    }
}

/// Id handed to the module reached through `port` of `parent`.
pub fn assign_id(parent: &ModuleId, port: u8) -> ModuleId {
    parent.child(port)
}

fn bcast_summary(delivered: usize, failed: &[u8]) -> String {
    if failed.is_empty() {
        format!("delivered={delivered}")
    } else {
        let f: Vec<String> = failed.iter().map(u8::to_string).collect();
        format!("delivered={delivered} failed={}", f.join(","))
    }
}
