//! The per-module role engine.
//!
//! The engine is sans-IO: callers feed it state snapshots, events, remote
//! invocations and the clock, and drain [`EngineEffect`]s. At most one
//! activity (startup, behavior, command or handler) is current at a time.
//! Startup runs once per role assignment; the default behavior loops while
//! nothing else is pending; commands and handlers preempt the behavior and
//! run to completion in FIFO order. A request matching the current command
//! or handler restarts it instead of queueing behind it.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use super::ast::{Action, EventId};
use super::eval::{assign_role, eval_int, Constants, EvalError};
use super::program::RoleProgram;
use crate::service::phys::ModulePhysState;
use crate::time::{SimDuration, SimTime};

/// How often the node re-runs role assignment when nothing changes.
pub const REEVALUATION_PERIOD: SimDuration = SimDuration::from_secs(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActivityKind {
    Startup,
    Behavior,
    Command,
    Handler,
}

impl ActivityKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivityKind::Startup => "startup",
            ActivityKind::Behavior => "behavior",
            ActivityKind::Command => "command",
            ActivityKind::Handler => "handler",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActivityLabel {
    pub kind: ActivityKind,
    pub name: String,
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.kind.name(), self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EngineEffect {
    RoleChanged {
        from: Option<String>,
        to: Option<String>,
    },
    Ambiguous {
        candidates: Vec<String>,
        chosen: String,
    },
    /// A role was excluded from assignment because a require failed to
    /// evaluate.
    RoleExcluded {
        role: String,
        error: EvalError,
    },
    Started(ActivityLabel),
    Finished(ActivityLabel),
    Preempted(ActivityLabel),
    Restarted(ActivityLabel),
    Actuate(i32),
    /// Send `command` to every neighbour whose role descends from `role`.
    Invoke {
        role: String,
        command: String,
    },
    /// An action argument failed to evaluate; the action was skipped.
    ActionError {
        activity: ActivityLabel,
        error: EvalError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InvokeError {
    NoRole,
    NotA(String),
    UnknownCommand(String),
}

impl fmt::Display for InvokeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvokeError::NoRole => f.write_str("no role assigned"),
            InvokeError::NotA(r) => write!(f, "assigned role does not descend from `{r}`"),
            InvokeError::UnknownCommand(c) => write!(f, "no command `{c}`"),
        }
    }
}

#[derive(Clone, Debug)]
struct Activity {
    label: ActivityLabel,
    actions: Vec<Action>,
    pc: usize,
    wake_at: Option<SimTime>,
    /// Whether this pass consumed simulated time.
    slept: bool,
}

impl Activity {
    fn new(label: ActivityLabel, actions: Vec<Action>) -> Self {
        Activity {
            label,
            actions,
            pc: 0,
            wake_at: None,
            slept: false,
        }
    }

    fn done(&self) -> bool {
        self.pc >= self.actions.len() && self.wake_at.is_none()
    }
}

#[derive(Debug)]
pub struct RoleEngine {
    program: Arc<RoleProgram>,
    state: ModulePhysState,
    role: Option<String>,
    constants: Constants,
    enabled: BTreeSet<EventId>,
    current: Option<Activity>,
    pending: VecDeque<Activity>,
    speed: i32,
    last_candidates: Vec<String>,
    last_errors: Vec<(String, EvalError)>,
    effects: Vec<EngineEffect>,
}

impl RoleEngine {
    /// A fresh engine; nothing runs until the first [`Self::reevaluate`].
    pub fn new(program: Arc<RoleProgram>, state: ModulePhysState) -> Self {
        RoleEngine {
            program,
            speed: state.rotation_speed,
            state,
            role: None,
            constants: Constants::new(),
            enabled: BTreeSet::new(),
            current: None,
            pending: VecDeque::new(),
            last_candidates: Vec::new(),
            last_errors: Vec::new(),
            effects: Vec::new(),
        }
    }

    pub fn program(&self) -> &Arc<RoleProgram> {
        &self.program
    }

    pub fn role(&self) -> Option<&str> {
        self.role.as_deref()
    }

    /// The assigned role followed by its ancestors.
    pub fn role_chain(&self) -> Vec<String> {
        match &self.role {
            Some(r) => self.program.chain(r).iter().map(|d| d.name.clone()).collect(),
            None => Vec::new(),
        }
    }

    pub fn speed(&self) -> i32 {
        self.speed
    }

    pub fn current(&self) -> Option<&ActivityLabel> {
        self.current.as_ref().map(|a| &a.label)
    }

    pub fn pending(&self) -> impl Iterator<Item = &ActivityLabel> {
        self.pending.iter().map(|a| &a.label)
    }

    pub fn is_enabled(&self, event: EventId) -> bool {
        self.enabled.contains(&event)
    }

    pub fn next_deadline(&self) -> Option<SimTime> {
        self.current.as_ref().and_then(|a| a.wake_at)
    }

    pub fn drain_effects(&mut self) -> Vec<EngineEffect> {
        std::mem::take(&mut self.effects)
    }

    /// Re-runs role assignment against `state`. A new role discards all
    /// activities and enabled handlers and starts over with startup.
    pub fn reevaluate(&mut self, state: &ModulePhysState, now: SimTime) {
        let changed_state = *state != self.state;
        self.state = state.clone();
        let a = assign_role(&self.program, &self.state);
        if a.errors != self.last_errors {
            for (role, error) in &a.errors {
                if !self.last_errors.iter().any(|(r, e)| r == role && e == error) {
                    self.effects.push(EngineEffect::RoleExcluded {
                        role: role.clone(),
                        error: error.clone(),
                    });
                }
            }
            self.last_errors = a.errors.clone();
        }
        if a.is_ambiguous() && a.candidates != self.last_candidates {
            self.effects.push(EngineEffect::Ambiguous {
                candidates: a.candidates.clone(),
                chosen: a.role.clone().unwrap_or_default(),
            });
        }
        self.last_candidates = a.candidates;

        if a.role != self.role {
            if let Some(cur) = self.current.take() {
                self.effects.push(EngineEffect::Preempted(cur.label));
            }
            self.pending.clear();
            self.enabled.clear();
            self.effects.push(EngineEffect::RoleChanged {
                from: self.role.take(),
                to: a.role.clone(),
            });
            self.role = a.role;
            match &self.role {
                None => {
                    self.constants.clear();
                    self.set_speed(0);
                }
                Some(r) => {
                    self.constants = self.program.effective_constants(r);
                    if let Some(s) = self.program.effective_startup(r) {
                        let label = ActivityLabel {
                            kind: ActivityKind::Startup,
                            name: s.name.clone(),
                        };
                        self.pending.push_back(Activity::new(label, s.actions.clone()));
                    }
                }
            }
        } else if changed_state {
            // A parked behavior gets another pass against the new state.
            if let Some(cur) = self.current.as_mut() {
                if cur.label.kind == ActivityKind::Behavior && cur.done() {
                    cur.pc = 0;
                }
            }
        }
        self.advance(now);
    }

    /// Fires every enabled handler listening on `event`.
    pub fn fire_event(&mut self, event: EventId, now: SimTime) -> usize {
        let Some(role) = self.role.clone() else {
            return 0;
        };
        if !self.enabled.contains(&event) {
            return 0;
        }
        let handlers: Vec<_> = self
            .program
            .effective_handlers(&role)
            .into_iter()
            .filter(|h| h.events.contains(&event))
            .map(|h| {
                let name = h
                    .events
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                Activity::new(
                    ActivityLabel {
                        kind: ActivityKind::Handler,
                        name,
                    },
                    h.actions.clone(),
                )
            })
            .collect();
        let n = handlers.len();
        for h in handlers {
            self.request(h);
        }
        self.advance(now);
        n
    }

    /// Runs `command` if the assigned role descends from `role`.
    pub fn invoke(&mut self, role: &str, command: &str, now: SimTime) -> Result<(), InvokeError> {
        let Some(mine) = self.role.clone() else {
            return Err(InvokeError::NoRole);
        };
        if !self.program.descends_from(&mine, role) {
            return Err(InvokeError::NotA(role.to_string()));
        }
        let Some(m) = self.program.command(&mine, command) else {
            return Err(InvokeError::UnknownCommand(command.to_string()));
        };
        let act = Activity::new(
            ActivityLabel {
                kind: ActivityKind::Command,
                name: m.name.clone(),
            },
            m.actions.clone(),
        );
        self.request(act);
        self.advance(now);
        Ok(())
    }

    pub fn handle_timeout(&mut self, now: SimTime) {
        self.advance(now);
    }

    /// Stops everything and idles the actuator.
    pub fn shutdown(&mut self) {
        if let Some(cur) = self.current.take() {
            self.effects.push(EngineEffect::Preempted(cur.label));
        }
        self.pending.clear();
        self.enabled.clear();
        if self.role.is_some() {
            self.effects.push(EngineEffect::RoleChanged {
                from: self.role.take(),
                to: None,
            });
        }
        self.set_speed(0);
    }

    fn request(&mut self, act: Activity) {
        if let Some(cur) = self.current.as_mut() {
            if cur.label == act.label {
                *cur = act;
                let label = cur.label.clone();
                self.effects.push(EngineEffect::Restarted(label));
                return;
            }
            if cur.label.kind == ActivityKind::Behavior {
                let cur = self.current.take().expect("checked");
                self.effects.push(EngineEffect::Preempted(cur.label));
            }
        }
        if self.pending.iter().any(|p| p.label == act.label) {
            return;
        }
        self.pending.push_back(act);
    }

    fn set_speed(&mut self, v: i32) {
        if v != self.speed {
            self.speed = v;
            self.effects.push(EngineEffect::Actuate(v));
        }
    }

    fn start_next(&mut self) -> bool {
        if let Some(next) = self.pending.pop_front() {
            self.effects.push(EngineEffect::Started(next.label.clone()));
            self.current = Some(next);
            return true;
        }
        let Some(role) = &self.role else {
            return false;
        };
        let Some(b) = self.program.default_behavior(role) else {
            return false;
        };
        let act = Activity::new(
            ActivityLabel {
                kind: ActivityKind::Behavior,
                name: b.name.clone(),
            },
            b.actions.clone(),
        );
        self.effects.push(EngineEffect::Started(act.label.clone()));
        self.current = Some(act);
        true
    }

    fn advance(&mut self, now: SimTime) {
        loop {
            if self.current.is_none() && !self.start_next() {
                return;
            }
            let mut cur = self.current.take().expect("set above");
            if let Some(w) = cur.wake_at {
                if w > now {
                    self.current = Some(cur);
                    return;
                }
                cur.wake_at = None;
            }
            while cur.pc < cur.actions.len() && cur.wake_at.is_none() {
                let action = cur.actions[cur.pc].clone();
                cur.pc += 1;
                self.execute(&mut cur, &action, now);
            }
            if cur.wake_at.is_some() {
                self.current = Some(cur);
                return;
            }
            if cur.label.kind == ActivityKind::Behavior {
                if cur.slept && self.pending.is_empty() {
                    cur.pc = 0;
                    cur.slept = false;
                    self.current = Some(cur);
                    continue;
                }
                if self.pending.is_empty() {
                    // Zero-time pass: park until something changes.
                    self.current = Some(cur);
                    return;
                }
                self.effects.push(EngineEffect::Preempted(cur.label));
                continue;
            }
            self.effects.push(EngineEffect::Finished(cur.label));
        }
    }

    fn execute(&mut self, cur: &mut Activity, action: &Action, now: SimTime) {
        match action {
            Action::TurnContinuously(e) => match eval_int(e, &self.constants, &self.state) {
                Ok(v) => self.set_speed(v.clamp(i32::MIN as i64, i32::MAX as i64) as i32),
                Err(error) => self.effects.push(EngineEffect::ActionError {
                    activity: cur.label.clone(),
                    error,
                }),
            },
            Action::SleepCs(e) => match eval_int(e, &self.constants, &self.state) {
                Ok(n) if n > 0 => {
                    cur.wake_at = Some(now + SimDuration::from_centis(n as u64));
                    cur.slept = true;
                }
                Ok(_) => {}
                Err(error) => self.effects.push(EngineEffect::ActionError {
                    activity: cur.label.clone(),
                    error,
                }),
            },
            Action::Invoke { role, command } => self.effects.push(EngineEffect::Invoke {
                role: role.clone(),
                command: command.clone(),
            }),
            Action::Enable(ev) => {
                self.enabled.insert(*ev);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::phys::{Axis, Direction};

    const CAR: &str = include_str!("../../programs/car.role");

    fn car() -> Arc<RoleProgram> {
        Arc::new(RoleProgram::parse(CAR).unwrap())
    }

    fn right_wheel() -> ModulePhysState {
        let mut s = ModulePhysState::new(Axis::EastWest)
            .with_port(0, Direction::East)
            .with_port(1, Direction::West);
        s.connect(0, "head");
        s
    }

    fn head() -> ModulePhysState {
        let mut s = ModulePhysState::new(Axis::NorthSouth)
            .with_port(0, Direction::East)
            .with_port(1, Direction::West);
        s.connect(0, "r");
        s.connect(1, "l");
        s
    }

    fn t(cs: u64) -> SimTime {
        SimTime::from_centis(cs)
    }

    fn actuations(e: &[EngineEffect]) -> Vec<i32> {
        e.iter()
            .filter_map(|x| match x {
                EngineEffect::Actuate(v) => Some(*v),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn wheel_moves_and_stays_parked() {
        let mut e = RoleEngine::new(car(), right_wheel());
        e.reevaluate(&right_wheel(), t(0));
        let fx = e.drain_effects();
        assert_eq!(
            fx[0],
            EngineEffect::RoleChanged {
                from: None,
                to: Some("RightWheel".into())
            }
        );
        assert_eq!(actuations(&fx), [150]);
        assert_eq!(e.current().unwrap().to_string(), "behavior move");
        assert_eq!(e.next_deadline(), None);
        for s in 1..5 {
            e.reevaluate(&right_wheel(), t(100 * s));
        }
        assert!(e.drain_effects().is_empty());
        assert_eq!(e.role_chain(), ["RightWheel", "Wheel"]);
    }

    #[test]
    fn evade_preempts_then_behavior_resumes() {
        let mut e = RoleEngine::new(car(), right_wheel());
        e.reevaluate(&right_wheel(), t(0));
        e.drain_effects();
        e.invoke("Wheel", "evade", t(1000)).unwrap();
        let fx = e.drain_effects();
        assert_eq!(actuations(&fx), [-100]);
        assert!(fx.contains(&EngineEffect::Preempted(ActivityLabel {
            kind: ActivityKind::Behavior,
            name: "move".into()
        })));
        assert_eq!(e.next_deadline(), Some(t(1025)));
        e.handle_timeout(t(1024));
        assert!(actuations(&e.drain_effects()).is_empty());
        e.handle_timeout(t(1025));
        let fx = e.drain_effects();
        assert_eq!(actuations(&fx), [150]);
        assert_eq!(e.current().unwrap().kind, ActivityKind::Behavior);
    }

    #[test]
    fn overlapping_evade_restarts_timer() {
        let mut e = RoleEngine::new(car(), right_wheel());
        e.reevaluate(&right_wheel(), t(0));
        e.invoke("Wheel", "evade", t(1000)).unwrap();
        e.invoke("RightWheel", "evade", t(1010)).unwrap();
        let fx = e.drain_effects();
        assert!(fx.iter().any(|x| matches!(x, EngineEffect::Restarted(_))));
        assert_eq!(e.pending().count(), 0);
        assert_eq!(e.next_deadline(), Some(t(1035)));
    }

    #[test]
    fn invoke_rejections() {
        let mut e = RoleEngine::new(car(), right_wheel());
        assert_eq!(e.invoke("Wheel", "evade", t(0)), Err(InvokeError::NoRole));
        e.reevaluate(&right_wheel(), t(0));
        assert_eq!(e.invoke("Head", "evade", t(0)), Err(InvokeError::NotA("Head".into())));
        assert_eq!(
            e.invoke("Wheel", "spin", t(0)),
            Err(InvokeError::UnknownCommand("spin".into()))
        );
        assert!(e.invoke("Module", "evade", t(0)).is_ok());
    }

    #[test]
    fn head_handler_requires_enable_and_invokes() {
        let mut e = RoleEngine::new(car(), head());
        e.reevaluate(&head(), t(0));
        let fx = e.drain_effects();
        assert!(fx.contains(&EngineEffect::Finished(ActivityLabel {
            kind: ActivityKind::Startup,
            name: "initialize".into()
        })));
        assert!(e.is_enabled(EventId(1)) && e.is_enabled(EventId(3)));
        assert!(!e.is_enabled(EventId(2)));
        assert_eq!(e.fire_event(EventId(2), t(5)), 0);
        assert_eq!(e.fire_event(EventId(1), t(1000)), 1);
        let fx = e.drain_effects();
        assert!(fx.contains(&EngineEffect::Invoke {
            role: "Wheel".into(),
            command: "evade".into()
        }));
        assert_eq!(e.next_deadline(), Some(t(1025)));
        // Event 3 maps to the same handler and coalesces.
        e.fire_event(EventId(3), t(1010));
        assert_eq!(e.pending().count(), 0);
        e.handle_timeout(t(1035));
        assert!(e.current().is_none());
    }

    #[test]
    fn losing_the_role_idles() {
        let mut e = RoleEngine::new(car(), right_wheel());
        e.reevaluate(&right_wheel(), t(0));
        e.drain_effects();
        let mut s = right_wheel();
        s.disconnect(0);
        e.reevaluate(&s, t(10));
        let fx = e.drain_effects();
        assert_eq!(actuations(&fx), [0]);
        assert_eq!(e.role(), None);
        assert!(e.current().is_none());
    }

    #[test]
    fn sleeping_behavior_loops_and_commands_queue_fifo() {
        let src = "role A {\n behavior tick(_) { self.$TURN_CONTINUOUSLY(1); (self.sleepcs(10)); self.$TURN_CONTINUOUSLY(2); (self.sleepcs(10)); }\n command x(_) { (self.sleepcs(5)); }\n command y(_) { self.$TURN_CONTINUOUSLY(9); }\n}";
        let p = Arc::new(RoleProgram::parse(src).unwrap());
        let s = ModulePhysState::new(Axis::UpDown);
        let mut e = RoleEngine::new(p, s.clone());
        e.reevaluate(&s, t(0));
        e.handle_timeout(t(10));
        e.handle_timeout(t(20));
        assert_eq!(actuations(&e.drain_effects()), [1, 2, 1]);
        e.invoke("A", "x", t(25)).unwrap();
        e.invoke("A", "y", t(26)).unwrap();
        e.invoke("A", "y", t(27)).unwrap();
        assert_eq!(e.pending().count(), 1);
        e.handle_timeout(t(30));
        let fx = e.drain_effects();
        assert_eq!(actuations(&fx), [9, 1]);
        let order: Vec<_> = fx
            .iter()
            .filter_map(|x| match x {
                EngineEffect::Started(l) => Some(l.name.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(order, ["x", "y", "tick"]);
    }

    #[test]
    fn action_errors_are_reported_and_skipped() {
        let src = "role A { behavior b(_) { self.$TURN_CONTINUOUSLY(missing); self.$TURN_CONTINUOUSLY(4); } }";
        let p = Arc::new(RoleProgram::parse(src).unwrap());
        let s = ModulePhysState::new(Axis::UpDown);
        let mut e = RoleEngine::new(p, s.clone());
        e.reevaluate(&s, t(0));
        let fx = e.drain_effects();
        assert!(fx.iter().any(|x| matches!(x, EngineEffect::ActionError { .. })));
        assert_eq!(actuations(&fx), [4]);
    }
}
