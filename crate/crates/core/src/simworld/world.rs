//! A deterministic discrete-event world of nodes joined by lossy serial
//! lines.
//!
//! Each link direction is a serial line: a frame starts when the line is
//! free, occupies it for `len * per_byte`, and lands `propagation` after
//! its last byte unless the direction's loss stream drops it. Every frame
//! on a live link consumes exactly one draw, so runs are a pure function
//! of (topology, scenario, seed).

use std::collections::BTreeMap;

use crate::msgnet::AppName;
use crate::roledsl::Diagnostic;
use crate::service::{Node, NodeConfig, NodeOutput, SessionId};
use crate::time::{SimDuration, SimTime};

use super::log::EventLog;
use super::rng::LossRng;
use super::scenario::{Action, Scenario};
use super::topology::WorldTopology;

#[derive(Debug)]
enum Event {
    Step(usize),
    Arrival {
        link: usize,
        to_side: usize,
        generation: u64,
        bytes: Vec<u8>,
    },
    Wake(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub frames: u64,
    pub dropped: u64,
    /// Frames offered while the link was severed.
    pub severed: u64,
}

#[derive(Debug)]
struct Line {
    busy_until: SimTime,
    rng: LossRng,
    stats: ChannelStats,
}

#[derive(Debug)]
struct Channel {
    /// `(node index, port)` for side 0 and side 1.
    ends: [(usize, u8); 2],
    loss: f64,
    propagation: SimDuration,
    per_byte: SimDuration,
    severed: bool,
    generation: u64,
    lines: [Line; 2],
}

#[derive(Debug)]
pub struct World {
    topo: WorldTopology,
    scenario: Scenario,
    nodes: Vec<Node>,
    channels: Vec<Channel>,
    /// `(node, port)` to `(link, side)`.
    port_map: BTreeMap<(usize, u8), (usize, usize)>,
    queue: BTreeMap<(SimTime, u64), Event>,
    seq: u64,
    now: SimTime,
    /// Earliest wake currently queued per node.
    wakes: Vec<Option<SimTime>>,
    sessions: BTreeMap<(usize, String), SessionId>,
    session_apps: BTreeMap<(usize, SessionId), String>,
    log: EventLog,
    booted: bool,
}

impl World {
    /// Builds a world. Every scenario step is checked against the topology
    /// first, so a bad scenario never produces a partial run.
    pub fn new(topo: WorldTopology, scenario: Scenario, seed: u64) -> Result<World, Vec<Diagnostic>> {
        let mut diags = Vec::new();
        for step in &scenario.steps {
            for m in step.action.modules() {
                if topo.module_index(m).is_none() {
                    diags.push(Diagnostic::new(step.line, format!("unknown module `{m}`")));
                }
            }
            match &step.action {
                Action::Sever { a, b } | Action::Restore { a, b }
                    if !topo.links.iter().any(|l| l.connects(a, b)) =>
                {
                    diags.push(Diagnostic::new(step.line, format!("no link between `{a}` and `{b}`")));
                }
                Action::App { app, .. } if AppName::new(app).is_err() => {
                    diags.push(Diagnostic::new(step.line, format!("bad app name `{app}`")));
                }
                _ => {}
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }

        let mut nodes: Vec<Node> = topo
            .modules
            .iter()
            .map(|m| {
                let mut cfg = if m.root { NodeConfig::root() } else { NodeConfig::member() };
                if let Some(v) = m.version {
                    cfg.version = v;
                }
                if let Some(len) = m.image_len {
                    cfg.image_len = len;
                }
                Node::new(cfg, m.initial_state())
            })
            .collect();
        let mut channels = Vec::new();
        let mut port_map = BTreeMap::new();
        for (i, l) in topo.links.iter().enumerate() {
            let a = topo.module_index(&l.a.0).expect("validated topology");
            let b = topo.module_index(&l.b.0).expect("validated topology");
            nodes[a].set_link_config(l.a.1, l.link_config());
            nodes[b].set_link_config(l.b.1, l.link_config());
            port_map.insert((a, l.a.1), (i, 0));
            port_map.insert((b, l.b.1), (i, 1));
            let line = |k: usize| Line {
                busy_until: SimTime::ZERO,
                rng: LossRng::stream(seed, 2 * i + k),
                stats: ChannelStats::default(),
            };
            channels.push(Channel {
                ends: [(a, l.a.1), (b, l.b.1)],
                loss: l.loss,
                propagation: l.propagation,
                per_byte: l.per_byte,
                severed: false,
                generation: 0,
                lines: [line(0), line(1)],
            });
        }

        let n = nodes.len();
        let mut world = World {
            topo,
            scenario,
            nodes,
            channels,
            port_map,
            queue: BTreeMap::new(),
            seq: 0,
            now: SimTime::ZERO,
            wakes: vec![None; n],
            sessions: BTreeMap::new(),
            session_apps: BTreeMap::new(),
            log: EventLog::default(),
            booted: false,
        };
        for i in 0..world.scenario.steps.len() {
            let at = world.scenario.steps[i].at;
            world.schedule(at, Event::Step(i));
        }
        Ok(world)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn topology(&self) -> &WorldTopology {
        &self.topo
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.topo.module_index(name).map(|i| &self.nodes[i])
    }

    pub fn channel_stats(&self, link: usize) -> Option<[ChannelStats; 2]> {
        self.channels
            .get(link)
            .map(|c| [c.lines[0].stats, c.lines[1].stats])
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.queue.insert((at, self.seq), ev);
        self.seq += 1;
    }

    fn boot(&mut self) {
        self.booted = true;
        for i in 0..self.nodes.len() {
            self.nodes[i].boot(self.now);
            self.collect(i);
        }
        for link in 0..self.channels.len() {
            self.connect(link);
        }
    }

    fn connect(&mut self, link: usize) {
        let ends = self.channels[link].ends;
        for side in 0..2 {
            let (node, port) = ends[side];
            let peer = self.topo.modules[ends[1 - side].0].name.clone();
            self.nodes[node].port_connected(port, &peer, self.now);
            self.collect(node);
        }
    }

    /// Processes every event up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) {
        if !self.booted {
            self.boot();
        }
        while let Some(entry) = self.queue.first_entry() {
            let (at, _) = *entry.key();
            if at > until {
                break;
            }
            let ev = entry.remove();
            self.now = at;
            self.dispatch(ev);
        }
        self.now = self.now.max(until);
    }

    /// Runs to `until` and appends the final counters.
    pub fn run(mut self, until: SimTime) -> EventLog {
        self.run_until(until);
        self.append_stats();
        self.log
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Step(i) => {
                let action = self.scenario.steps[i].action.clone();
                self.apply(action);
            }
            Event::Arrival { link, to_side, generation, bytes } => {
                let ch = &self.channels[link];
                if ch.generation != generation {
                    return;
                }
                let (node, port) = ch.ends[to_side];
                self.nodes[node].receive_bytes(port, &bytes, self.now);
                self.collect(node);
            }
            Event::Wake(node) => {
                if self.wakes[node] == Some(self.now) {
                    self.wakes[node] = None;
                }
                self.nodes[node].handle_timeout(self.now);
                self.collect(node);
            }
        }
    }

    fn index(&self, name: &str) -> usize {
        self.topo.module_index(name).expect("validated scenario")
    }

    fn apply(&mut self, action: Action) {
        let now = self.now;
        match action {
            Action::Sensor { module, sensor, value } => {
                let i = self.index(&module);
                self.nodes[i].set_sensor(sensor, value, now);
                self.collect(i);
            }
            Action::Sever { a, b } => {
                for link in self.links_between(&a, &b) {
                    if self.channels[link].severed {
                        continue;
                    }
                    self.channels[link].severed = true;
                    self.channels[link].generation += 1;
                    self.log.push(now, "-", "sever", format!("link={link} a={a} b={b}"));
                    for (node, port) in self.channels[link].ends {
                        self.nodes[node].port_disconnected(port, now);
                        self.collect(node);
                    }
                }
            }
            Action::Restore { a, b } => {
                for link in self.links_between(&a, &b) {
                    let ch = &mut self.channels[link];
                    if !ch.severed {
                        continue;
                    }
                    ch.severed = false;
                    ch.generation += 1;
                    for l in &mut ch.lines {
                        l.busy_until = now;
                    }
                    self.log.push(now, "-", "restore", format!("link={link} a={a} b={b}"));
                    self.connect(link);
                }
            }
            Action::Upgrade { module, version } => {
                let i = self.index(&module);
                self.nodes[i].upgrade(version, now);
                self.collect(i);
            }
            Action::Start { module, name, content } => {
                let i = self.index(&module);
                self.nodes[i].store_file(&name, content);
                let reply = self.nodes[i].start_program(&name, now);
                self.log.push(now, &module, "start_reply", reply.to_string());
                self.collect(i);
            }
            Action::App { module, app, line } => {
                let i = self.index(&module);
                let key = (i, app.clone());
                let session = match self.sessions.get(&key) {
                    Some(&s) => s,
                    None => {
                        let s = self.nodes[i].open_session();
                        self.sessions.insert(key, s);
                        self.session_apps.insert((i, s), app.clone());
                        if !line.starts_with("REGISTER ") {
                            let reg = format!("REGISTER {app}");
                            self.log.push(now, &module, "app_cmd", format!("{app} {reg}"));
                            self.nodes[i].app_command(s, &reg, now);
                            self.collect(i);
                        }
                        s
                    }
                };
                self.log.push(now, &module, "app_cmd", format!("{app} {line}"));
                self.nodes[i].app_command(session, &line, now);
                self.collect(i);
            }
        }
    }

    fn links_between(&self, a: &str, b: &str) -> Vec<usize> {
        (0..self.topo.links.len())
            .filter(|&i| self.topo.links[i].connects(a, b))
            .collect()
    }

    /// Drains a node's outputs into the log and the channels, then makes
    /// sure its next deadline has a wake queued.
    fn collect(&mut self, node: usize) {
        for out in self.nodes[node].drain_outputs() {
            match out {
                NodeOutput::Transmit { port, bytes } => self.transmit(node, port, bytes),
                NodeOutput::Line { session, line } => {
                    let app = self
                        .session_apps
                        .get(&(node, session))
                        .cloned()
                        .unwrap_or_else(|| "?".into());
                    let name = &self.topo.modules[node].name;
                    self.log.push(self.now, name, "app_rx", format!("{app} {line}"));
                }
                NodeOutput::Log(rec) => {
                    let name = &self.topo.modules[node].name;
                    self.log.push(self.now, name, &rec.kind, rec.payload);
                }
            }
        }
        if let Some(d) = self.nodes[node].next_deadline() {
            let d = d.max(self.now);
            if self.wakes[node].is_none_or(|w| d < w) {
                self.wakes[node] = Some(d);
                self.schedule(d, Event::Wake(node));
            }
        }
    }

    fn transmit(&mut self, node: usize, port: u8, bytes: Vec<u8>) {
        // An unlinked port is an open connector: the frame goes nowhere.
        let Some(&(link, side)) = self.port_map.get(&(node, port)) else {
            return;
        };
        let now = self.now;
        let ch = &mut self.channels[link];
        let line = &mut ch.lines[side];
        if ch.severed {
            line.stats.severed += 1;
            return;
        }
        let start = now.max(line.busy_until);
        line.busy_until = start + ch.per_byte.saturating_mul(bytes.len() as u64);
        line.stats.frames += 1;
        if line.rng.lose(ch.loss) {
            line.stats.dropped += 1;
            return;
        }
        let at = line.busy_until + ch.propagation;
        let generation = ch.generation;
        self.schedule(
            at,
            Event::Arrival {
                link,
                to_side: 1 - side,
                generation,
                bytes,
            },
        );
    }

    fn append_stats(&mut self) {
        let now = self.now;
        for (i, n) in self.nodes.iter().enumerate() {
            let name = &self.topo.modules[i].name;
            let s = n.stats();
            self.log.push(
                now,
                name,
                "stats",
                format!(
                    "id={} version={} role={} pushes_started={} pushes_completed={} pushes_failed={} pushes_accepted={} pushes_rejected={} app_delivered={} bcast_delivered={} files_stored={} protocol_drops={}",
                    n.id(),
                    n.version(),
                    n.engine_role().unwrap_or("-"),
                    s.pushes_started,
                    s.pushes_completed,
                    s.pushes_failed,
                    s.pushes_accepted,
                    s.pushes_rejected,
                    s.app_delivered,
                    s.bcast_delivered,
                    s.files_stored,
                    s.protocol_drops
                ),
            );
            for &port in n.phys().ports.keys() {
                if !self.port_map.contains_key(&(i, port)) {
                    continue;
                }
                if let Some(ls) = n.link_stats(port) {
                    self.log.push(
                        now,
                        name,
                        "link_stats",
                        format!(
                            "port={port} data_sent={} retransmissions={} acks_sent={} delivered_up={} duplicates={} corrupt={} stale_acks={} failed={}",
                            ls.data_sent,
                            ls.retransmissions,
                            ls.acks_sent,
                            ls.delivered_up,
                            ls.duplicates,
                            ls.corrupt,
                            ls.stale_acks,
                            ls.failed
                        ),
                    );
                }
            }
        }
        for (i, ch) in self.channels.iter().enumerate() {
            let [a, b] = [ch.lines[0].stats, ch.lines[1].stats];
            self.log.push(
                now,
                "-",
                "channel",
                format!(
                    "link={i} frames={} dropped={} severed={}",
                    a.frames + b.frames,
                    a.dropped + b.dropped,
                    a.severed + b.severed
                ),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR_TOPO: &str = include_str!("../../programs/car.topo");
    const CAR_ROLE: &[u8] = include_bytes!("../../programs/car.role");

    fn world(topo: &str, scenario: &str, seed: u64) -> World {
        let t = WorldTopology::parse(topo).unwrap();
        let s = Scenario::parse_with(scenario, &mut |_: &str| Ok(CAR_ROLE.to_vec())).unwrap();
        World::new(t, s, seed).unwrap()
    }

    const PAIR_LOSS: &str = "\
module a center=UP_DOWN ports=0:UP root
module b center=UP_DOWN ports=0:DOWN
link a.0 b.0 loss=0.3
";

    #[test]
    fn empty_world_logs_nothing() {
        let log = world("", "", 1).run(SimTime::from_centis(500));
        assert!(log.is_empty());
    }

    #[test]
    fn same_seed_same_log() {
        let a = world(PAIR_LOSS, "at 200 upgrade a 2", 9).run(SimTime::from_centis(1500));
        let b = world(PAIR_LOSS, "at 200 upgrade a 2", 9).run(SimTime::from_centis(1500));
        assert_eq!(a, b);
        let c = world(PAIR_LOSS, "at 200 upgrade a 2", 10).run(SimTime::from_centis(1500));
        assert_ne!(a, c);
    }

    #[test]
    fn lossless_delay_is_exact() {
        let topo = "\
module a center=UP_DOWN ports=0:UP
module b center=UP_DOWN ports=0:DOWN
link a.0 b.0 prop_us=1000 byte_us=300
";
        let mut w = world(topo, "", 0);
        w.now = SimTime::from_micros(50);
        w.transmit(0, 0, vec![0; 10]);
        w.transmit(0, 0, vec![0; 2]);
        let times: Vec<u64> = w.queue.keys().map(|(t, _)| t.as_micros()).collect();
        // The second frame queues behind the first on the serial line.
        assert_eq!(times, [50 + 3000 + 1000, 50 + 3000 + 600 + 1000]);
        // Opposite direction is an independent line.
        w.transmit(1, 0, vec![0; 1]);
        assert!(w.queue.keys().any(|(t, _)| t.as_micros() == 50 + 300 + 1000));
    }

    #[test]
    fn total_loss_never_delivers() {
        let topo = "\
module a center=UP_DOWN ports=0:UP root
module b center=UP_DOWN ports=0:DOWN
link a.0 b.0 loss=1
";
        let w = world(topo, "", 3);
        let log = w.run(SimTime::from_centis(1000));
        assert_eq!(log.of_kind("neighbor").count(), 0);
        let ch = log.of_kind("channel").next().unwrap();
        assert_eq!(ch.field("frames"), ch.field("dropped"));
        assert_ne!(ch.field("frames"), Some("0"));
    }

    #[test]
    fn unrelated_links_do_not_perturb_each_other() {
        let extra = format!(
            "{PAIR_LOSS}module c center=UP_DOWN ports=0:UP\nmodule d center=UP_DOWN ports=0:DOWN\nlink c.0 d.0 loss=0.5\n"
        );
        let only = |log: EventLog| -> Vec<String> {
            log.lines
                .into_iter()
                .filter(|l| l.module == "a" || l.module == "b")
                .map(|l| l.to_string())
                .collect()
        };
        let alone = only(world(PAIR_LOSS, "", 4).run(SimTime::from_centis(800)));
        let shared = only(world(&extra, "", 4).run(SimTime::from_centis(800)));
        assert_eq!(alone, shared);
    }

    #[test]
    fn car_adopts_roles_and_evades() {
        let scenario = "\
at 0 start head car.role
at 0 start right car.role
at 0 start left car.role
at 1000 sensor head 1 1
";
        let mut w = world(CAR_TOPO, scenario, 0);
        w.run_until(SimTime::from_centis(900));
        assert_eq!(w.node("head").unwrap().engine_role(), Some("Head"));
        assert_eq!(w.node("right").unwrap().engine_role(), Some("RightWheel"));
        assert_eq!(w.node("left").unwrap().engine_role(), Some("LeftWheel"));
        assert_eq!(w.node("right").unwrap().engine().unwrap().speed(), 150);
        assert_eq!(w.node("left").unwrap().engine().unwrap().speed(), -150);
        w.run_until(SimTime::from_centis(1010));
        assert_eq!(w.node("right").unwrap().engine().unwrap().speed(), -100);
        assert_eq!(w.node("left").unwrap().engine().unwrap().speed(), 100);
        w.run_until(SimTime::from_centis(1200));
        assert_eq!(w.node("right").unwrap().engine().unwrap().speed(), 150);
    }

    #[test]
    fn sever_and_restore() {
        let mut w = world(
            PAIR_LOSS.replace(" loss=0.3", "").as_str(),
            "at 300 sever a b\nat 600 restore b a",
            0,
        );
        w.run_until(SimTime::from_centis(400));
        assert!(w.node("a").unwrap().neighbors().is_empty());
        w.run_until(SimTime::from_centis(700));
        assert_eq!(w.node("a").unwrap().neighbors().len(), 1);
        assert_eq!(w.log().of_kind("sever").count(), 1);
        assert_eq!(w.log().of_kind("restore").count(), 1);
    }

    #[test]
    fn app_sessions_register_implicitly() {
        let topo = PAIR_LOSS.replace(" loss=0.3", "");
        let log = world(&topo, "at 100 app a ctl ID\nat 100 app a ctl VERSION", 0)
            .run(SimTime::from_centis(200));
        let rx: Vec<&str> = log.of_kind("app_rx").map(|l| l.payload.as_str()).collect();
        assert_eq!(rx, ["ctl OK registered ctl", "ctl OK 0", "ctl OK 1"]);
    }

    #[test]
    fn scenario_is_checked_against_topology() {
        let t = WorldTopology::parse(PAIR_LOSS).unwrap();
        let s = Scenario::parse(&format!("at 1 upgrade z 2\nat 2 sever a a\nat 3 app a {} ID", "n".repeat(300))).unwrap();
        let d = World::new(t, s, 0).unwrap_err();
        let lines: Vec<usize> = d.iter().map(|d| d.line).collect();
        assert_eq!(lines, [1, 2, 3]);
    }
}
