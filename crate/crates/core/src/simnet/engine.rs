use super::scheduler::{Class, Scheduler};
use crate::adversary::AdversaryModel;
use crate::model::{
    AcceptableStates, DeviceId, DropReason, Event, EventKind, Role, SoftwareState, TimePoint, Trace, TraceHeader,
};
use crate::protocols::{Machine, Protocol, Services, TimerTag};
use crate::symcrypto::{Knowledge, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("timer for {device} at {at} is before the current time {now}")]
    InvalidTimer { device: DeviceId, at: TimePoint, now: TimePoint },
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
}

/// Key term for `base` after `epoch` secret updates.
pub fn versioned_key(base: &str, epoch: u64) -> Term {
    if epoch == 0 {
        Term::key(base)
    } else {
        Term::key(&format!("{base}@{epoch}"))
    }
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: DeviceId,
    pub name: String,
    pub roles: Vec<Role>,
    pub software: SoftwareState,
    pub original: SoftwareState,
    pub compromises: u32,
    pub clock_offset: i64,
    pub epoch: u64,
    /// When the device last moved to a new epoch.
    pub rotated_at: Option<TimePoint>,
    /// Trusted monotonic counter.
    pub counter: u64,
    pub offline_until: Option<TimePoint>,
    /// Trusted counter value written during capture, committed at its end.
    pub pending_counter: Option<u64>,
    pub atomic_until: Option<TimePoint>,
    /// Role name to base key name.
    pub keys: BTreeMap<String, String>,
}

impl DeviceState {
    pub fn new(id: DeviceId, name: &str, roles: Vec<Role>, software: SoftwareState) -> DeviceState {
        DeviceState {
            id,
            name: name.to_string(),
            roles,
            original: software.clone(),
            software,
            compromises: 0,
            clock_offset: 0,
            epoch: 0,
            rotated_at: None,
            counter: 0,
            offline_until: None,
            pending_counter: None,
            atomic_until: None,
            keys: BTreeMap::new(),
        }
    }

    pub fn is_prover(&self) -> bool {
        self.roles.contains(&Role::Prover)
    }

    pub fn key(&self, role: &str) -> Option<Term> {
        self.keys.get(role).map(|base| versioned_key(base, self.epoch))
    }

    /// Epochs whose keys this device accepts at `now`: the current one, and
    /// the previous one for `grace` ticks after a rotation.
    pub fn accepted_epochs(&self, now: TimePoint, grace: u64) -> Vec<u64> {
        let mut out = vec![self.epoch];
        if self.rotated_at.is_some_and(|r| now.0 <= r.0 + grace) {
            out.push(self.epoch - 1);
        }
        out
    }

    pub fn is_offline(&self, now: TimePoint) -> bool {
        self.offline_until.is_some_and(|u| now < u)
    }

    pub fn in_atomic(&self, now: TimePoint) -> bool {
        self.atomic_until.is_some_and(|u| now <= u)
    }

    /// Everything held in the trusted environment.
    pub fn secrets(&self) -> Vec<Term> {
        let mut out: Vec<Term> = self.keys.values().map(|b| versioned_key(b, self.epoch)).collect();
        out.push(Term::Counter(self.counter));
        out
    }
}

/// Mutable simulation state shared by protocol handlers.
#[derive(Debug, Clone)]
pub struct World {
    pub now: TimePoint,
    pub devices: Vec<DeviceState>,
    pub acceptable: AcceptableStates,
    pub events: Vec<Event>,
    pub knowledge: Knowledge,
    pub latency: u64,
    pub epoch: u64,
    pub attest_duration: u64,
    /// Whether the adversary observes network traffic.
    pub eavesdrop: bool,
    pub rng: ChaCha8Rng,
}

impl World {
    pub fn emit(&mut self, kind: EventKind) {
        self.events.push(Event::new(self.now, kind));
    }

    pub fn device(&self, id: DeviceId) -> Option<&DeviceState> {
        self.devices.get(id.0 as usize)
    }
}

/// Handler-side view of the world. Sends and timers are collected and
/// applied by the engine after the handler returns.
pub struct Ctx<'a> {
    pub(crate) world: &'a mut World,
    pub(crate) sends: &'a mut Vec<(DeviceId, DeviceId, Term)>,
    pub(crate) timers: &'a mut Vec<(DeviceId, TimePoint, TimerTag)>,
}

impl<'a> Ctx<'a> {
    pub fn now(&self) -> TimePoint {
        self.world.now
    }

    pub fn latency(&self) -> u64 {
        self.world.latency
    }

    pub fn emit(&mut self, kind: EventKind) {
        self.world.emit(kind);
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.world.emit(EventKind::Warning { message: message.into() });
    }

    pub fn send(&mut self, src: DeviceId, dst: DeviceId, body: Term) {
        self.world.emit(EventKind::MsgSend {
            src,
            dst,
            term: body.clone(),
        });
        if self.world.eavesdrop {
            self.world.knowledge.learn(body.clone());
        }
        self.sends.push((src, dst, body));
    }

    pub fn set_timer(&mut self, device: DeviceId, at: TimePoint, tag: TimerTag) -> Result<(), SimError> {
        let now = self.world.now;
        if at < now {
            return Err(SimError::InvalidTimer { device, at, now });
        }
        if self.world.device(device).is_none() {
            return Err(SimError::UnknownDevice(device));
        }
        self.timers.push((device, at, tag));
        Ok(())
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.world.devices
    }

    pub fn device(&self, id: DeviceId) -> &DeviceState {
        &self.world.devices[id.0 as usize]
    }

    /// Epochs whose keys `id` accepts for messages arriving now.
    pub fn accepted_epochs(&self, id: DeviceId) -> Vec<u64> {
        self.device(id).accepted_epochs(self.world.now, self.world.latency)
    }

    /// Keys for `role` that `id` accepts for messages arriving now.
    pub fn verify_keys(&self, id: DeviceId, role: &str) -> Vec<Term> {
        let d = self.device(id);
        match d.keys.get(role) {
            Some(base) => self.accepted_epochs(id).into_iter().map(|e| versioned_key(base, e)).collect(),
            None => Vec::new(),
        }
    }

    pub fn device_mut(&mut self, id: DeviceId) -> &mut DeviceState {
        &mut self.world.devices[id.0 as usize]
    }

    pub fn key(&self, id: DeviceId, role: &str) -> Option<Term> {
        self.world.device(id).and_then(|d| d.key(role))
    }

    /// Current software of `p`, recorded as a measurement. Starts an atomic
    /// section when the attestation has a duration.
    pub fn measure(&mut self, p: DeviceId) -> SoftwareState {
        let now = self.world.now;
        let dur = self.world.attest_duration;
        let dev = &mut self.world.devices[p.0 as usize];
        if dur > 0 {
            dev.atomic_until = Some(now.plus(dur));
        }
        let state = dev.software.clone();
        self.world.emit(EventKind::MeasureTaken {
            prover: p,
            state: state.clone(),
        });
        state
    }

    pub fn is_acceptable(&self, p: DeviceId, state: &SoftwareState) -> bool {
        self.world.acceptable.is_acceptable(p, self.world.now, state)
    }

    pub fn acceptable_labels(&self, p: DeviceId) -> Vec<SoftwareState> {
        self.world
            .acceptable
            .at(p, self.world.now)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn epoch(&self) -> u64 {
        self.world.epoch
    }

    /// Advances the global key epoch and installs it on every online device
    /// that holds the previous one. A device that misses an update stays
    /// behind for good.
    pub fn rotate_epoch(&mut self) -> u64 {
        let now = self.world.now;
        self.world.epoch += 1;
        let e = self.world.epoch;
        for d in self
            .world
            .devices
            .iter_mut()
            .filter(|d| !d.is_offline(now) && d.epoch + 1 == e)
        {
            d.epoch = e;
            d.rotated_at = Some(now);
        }
        self.world.emit(EventKind::EpochKeyUpdate { epoch: e });
        e
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.world.rng
    }
}

/// One adversary decision.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Choice {
    Pass,
    Deliver,
    Drop,
    Delay(u64),
    Duplicate,
    Compromise(DeviceId),
    Restore(DeviceId),
    Inject { dst: DeviceId, body: Term },
}

impl Choice {
    pub fn is_benign(&self) -> bool {
        matches!(self, Choice::Pass | Choice::Deliver)
    }

    /// Text form with device names taken from `header`.
    pub fn render(&self, header: &TraceHeader) -> String {
        match self {
            Choice::Pass => "pass".into(),
            Choice::Deliver => "deliver".into(),
            Choice::Drop => "drop".into(),
            Choice::Delay(d) => format!("delay:{d}"),
            Choice::Duplicate => "dup".into(),
            Choice::Compromise(p) => format!("compromise:{}", header.device_name(*p)),
            Choice::Restore(p) => format!("restore:{}", header.device_name(*p)),
            Choice::Inject { dst, body } => format!("inject:{}:{body}", header.device_name(*dst)),
        }
    }

    pub fn parse(s: &str, header: &TraceHeader) -> Result<Choice, String> {
        let device = |name: &str| -> Result<DeviceId, String> {
            if let Some(d) = header.device_by_name(name) {
                return Ok(d);
            }
            name.strip_prefix('#')
                .and_then(|n| n.parse().ok())
                .map(DeviceId)
                .ok_or_else(|| format!("unknown device `{name}`"))
        };
        let s = s.trim();
        Ok(match s {
            "pass" => Choice::Pass,
            "deliver" => Choice::Deliver,
            "drop" => Choice::Drop,
            "dup" => Choice::Duplicate,
            _ => {
                let (head, rest) = s.split_once(':').ok_or_else(|| format!("bad choice `{s}`"))?;
                match head {
                    "delay" => Choice::Delay(rest.parse().map_err(|_| format!("bad delay `{rest}`"))?),
                    "compromise" => Choice::Compromise(device(rest)?),
                    "restore" => Choice::Restore(device(rest)?),
                    "inject" => {
                        let (dst, body) = rest.split_once(':').ok_or_else(|| format!("bad inject `{s}`"))?;
                        Choice::Inject {
                            dst: device(dst)?,
                            body: body.parse().map_err(|e| format!("{e}"))?,
                        }
                    }
                    _ => return Err(format!("bad choice `{s}`")),
                }
            }
        })
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&TraceHeader::new("", "")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecisionKind {
    Software,
    Injection,
    Network { src: DeviceId, dst: DeviceId, body: Term },
}

/// A point where the adversary picks one of `options`; option 0 is benign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionPoint {
    pub at: TimePoint,
    pub kind: DecisionKind,
    pub options: Vec<Choice>,
}

/// Network actions the adversary may take on each send (needs `dy`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetPolicy {
    pub drop: bool,
    /// Largest extra delay in ticks; 0 disables delaying.
    pub max_delay: u64,
    pub duplicate: bool,
    pub inject: bool,
}

impl Default for NetPolicy {
    fn default() -> Self {
        NetPolicy {
            drop: true,
            max_delay: 0,
            duplicate: false,
            inject: true,
        }
    }
}

/// Adversary actions fixed by the scenario rather than chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptAction {
    Compromise(DeviceId),
    Restore(DeviceId),
    ReadSecrets(DeviceId),
    Capture { prover: DeviceId, until: TimePoint, write: bool },
    CaptureEnd(DeviceId),
    Inject { dst: DeviceId, body: Term },
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub header: TraceHeader,
    pub horizon: TimePoint,
    pub net: NetPolicy,
    /// Offer compromise (and, with msw, restore) decisions at each tick.
    pub free_software: bool,
    pub inject_depth: usize,
    pub t_attack: u64,
}

impl EngineConfig {
    pub fn model(&self) -> AdversaryModel {
        self.header.adversary
    }
}

#[derive(Debug, Clone)]
enum Item {
    Deliver { dst: DeviceId, body: Term },
    Timer { device: DeviceId, tag: TimerTag },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Software,
    Injection,
    Running,
    Finished,
}

/// Discrete-event simulator driven step by step so that adversary decisions
/// can be enumerated by cloning.
#[derive(Debug, Clone)]
pub struct Engine {
    pub(crate) cfg: Arc<EngineConfig>,
    pub(crate) world: World,
    machine: Machine,
    services: Services,
    queue: Scheduler<Item>,
    script: Scheduler<ScriptAction>,
    phase: Phase,
    pending: Option<DecisionPoint>,
    held: VecDeque<(DeviceId, DeviceId, Term)>,
    choices: Vec<Choice>,
    interventions: u32,
    truncated: bool,
    fault: Option<String>,
}

impl Engine {
    pub fn new(cfg: EngineConfig, world: World, machine: Machine, services: Services) -> Engine {
        let mut e = Engine {
            cfg: Arc::new(cfg),
            world,
            machine,
            services,
            queue: Scheduler::default(),
            script: Scheduler::default(),
            phase: Phase::Idle,
            pending: None,
            held: VecDeque::new(),
            choices: Vec::new(),
            interventions: 0,
            truncated: false,
            fault: None,
        };
        let (mut sends, mut timers) = (Vec::new(), Vec::new());
        let mut ctx = Ctx {
            world: &mut e.world,
            sends: &mut sends,
            timers: &mut timers,
        };
        let r = e.machine.start(&mut ctx).and_then(|_| e.services.start(&mut ctx));
        if let Err(msg) = r {
            e.fail(msg);
        }
        e.absorb(sends, timers);
        e
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn model(&self) -> AdversaryModel {
        self.cfg.model()
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn now(&self) -> TimePoint {
        self.world.now
    }

    pub fn events(&self) -> &[Event] {
        &self.world.events
    }

    /// Decisions resolved so far, including benign ones.
    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    /// Number of non-benign decisions taken so far.
    pub fn interventions(&self) -> u32 {
        self.interventions
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn protocol_done(&self) -> bool {
        self.machine.is_done()
    }

    pub fn schedule_action(&mut self, at: TimePoint, action: ScriptAction) {
        self.script.push(at, Class::Message, action);
    }

    /// Sends `body` as if `src`'s handler did so now.
    pub fn send(&mut self, src: DeviceId, dst: DeviceId, body: Term) {
        let mut sends = Vec::new();
        let mut ctx = Ctx {
            world: &mut self.world,
            sends: &mut sends,
            timers: &mut Vec::new(),
        };
        ctx.send(src, dst, body);
        self.held.extend(sends);
        if self.phase == Phase::Idle {
            self.phase = Phase::Running;
        }
    }

    pub fn set_timer(&mut self, device: DeviceId, at: TimePoint, tag: TimerTag) -> Result<(), SimError> {
        let now = self.world.now;
        if at < now {
            return Err(SimError::InvalidTimer { device, at, now });
        }
        if self.world.device(device).is_none() {
            return Err(SimError::UnknownDevice(device));
        }
        self.queue.push(at, Class::Timer, Item::Timer { device, tag });
        Ok(())
    }

    fn fail(&mut self, message: String) {
        self.world.emit(EventKind::Fault {
            message: message.clone(),
        });
        self.fault = Some(message);
        self.phase = Phase::Finished;
    }

    fn absorb(&mut self, sends: Vec<(DeviceId, DeviceId, Term)>, timers: Vec<(DeviceId, TimePoint, TimerTag)>) {
        for (device, at, tag) in timers {
            self.queue.push(at, Class::Timer, Item::Timer { device, tag });
        }
        self.held.extend(sends);
    }

    /// Runs until the next adversary decision, or to the end of the run.
    /// Returns the pending decision, if any.
    pub fn advance(&mut self) -> Option<&DecisionPoint> {
        while self.pending.is_none() {
            match self.phase {
                Phase::Finished => return None,
                Phase::Idle => self.next_tick(),
                Phase::Software => {
                    self.phase = Phase::Injection;
                    let options = self.software_options();
                    if options.len() > 1 {
                        self.pending = Some(DecisionPoint {
                            at: self.world.now,
                            kind: DecisionKind::Software,
                            options,
                        });
                    }
                }
                Phase::Injection => {
                    self.phase = Phase::Running;
                    let options = self.injection_options();
                    if options.len() > 1 {
                        self.pending = Some(DecisionPoint {
                            at: self.world.now,
                            kind: DecisionKind::Injection,
                            options,
                        });
                    }
                }
                Phase::Running => {
                    if let Some((src, dst, body)) = self.held.front().cloned() {
                        let options = self.network_options(dst);
                        if options.len() > 1 {
                            self.pending = Some(DecisionPoint {
                                at: self.world.now,
                                kind: DecisionKind::Network { src, dst, body },
                                options,
                            });
                        } else {
                            self.held.pop_front();
                            self.route(dst, body, &Choice::Deliver);
                        }
                        continue;
                    }
                    match self.queue.pop_due(self.world.now) {
                        Some((_, item)) => self.process(item),
                        None => self.phase = Phase::Idle,
                    }
                }
            }
        }
        self.pending.as_ref()
    }

    pub fn pending(&self) -> Option<&DecisionPoint> {
        self.pending.as_ref()
    }

    /// Applies option `idx` of the pending decision.
    pub fn resolve(&mut self, idx: usize) {
        let Some(point) = self.pending.take() else {
            return;
        };
        let choice = point.options.get(idx).cloned().unwrap_or_else(|| point.options[0].clone());
        if !choice.is_benign() {
            self.interventions += 1;
        }
        self.choices.push(choice.clone());
        match (&point.kind, &choice) {
            (_, Choice::Pass) => {}
            (_, Choice::Compromise(p)) => {
                let _ = self.compromise(*p);
            }
            (_, Choice::Restore(p)) => {
                let _ = self.restore(*p);
            }
            (_, Choice::Inject { dst, body }) => {
                self.world.emit(EventKind::Inject {
                    dst: *dst,
                    term: body.clone(),
                });
                let at = self.world.now.plus(self.world.latency);
                self.queue.push(
                    at,
                    Class::Message,
                    Item::Deliver {
                        dst: *dst,
                        body: body.clone(),
                    },
                );
            }
            (DecisionKind::Network { .. }, c) => {
                if let Some((_, dst, body)) = self.held.pop_front() {
                    self.route(dst, body, c);
                }
            }
            _ => {}
        }
    }

    fn next_tick(&mut self) {
        let next = match (self.queue.peek_time(), self.script.peek_time()) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => {
                self.phase = Phase::Finished;
                return;
            }
        };
        if next > self.cfg.horizon {
            self.truncated = true;
            self.phase = Phase::Finished;
            return;
        }
        self.world.now = next.max(self.world.now);
        while let Some((_, action)) = self.script.pop_due(self.world.now) {
            self.apply_script(action);
        }
        self.phase = Phase::Software;
    }

    fn apply_script(&mut self, action: ScriptAction) {
        let now = self.world.now;
        let r = match action {
            ScriptAction::Compromise(p) => match self.compromise(p) {
                Err(crate::adversary::AdversaryError::RejectedAtomic(_)) => {
                    let until = self.world.devices[p.0 as usize].atomic_until.unwrap_or(now);
                    self.schedule_action(until.plus(1), ScriptAction::Compromise(p));
                    Ok(())
                }
                r => r,
            },
            ScriptAction::Restore(p) => match self.restore(p) {
                Err(crate::adversary::AdversaryError::RejectedAtomic(_)) => {
                    let until = self.world.devices[p.0 as usize].atomic_until.unwrap_or(now);
                    self.schedule_action(until.plus(1), ScriptAction::Restore(p));
                    Ok(())
                }
                r => r,
            },
            ScriptAction::ReadSecrets(p) => self.read_secrets(p),
            ScriptAction::Capture { prover, until, write } => {
                let dev = &mut self.world.devices[prover.0 as usize];
                dev.offline_until = Some(until);
                if write {
                    dev.compromises += 1;
                    dev.software = SoftwareState::Compromised(dev.compromises);
                }
                self.world.emit(EventKind::CaptureBegin { prover, write });
                for s in self.world.devices[prover.0 as usize].secrets() {
                    self.world.knowledge.learn(s);
                }
                self.world.emit(EventKind::SecretRead { prover });
                self.schedule_action(until, ScriptAction::CaptureEnd(prover));
                Ok(())
            }
            ScriptAction::CaptureEnd(p) => {
                let dev = &mut self.world.devices[p.0 as usize];
                dev.offline_until = None;
                if let Some(c) = dev.pending_counter.take() {
                    dev.counter = c;
                }
                self.world.emit(EventKind::CaptureEnd { prover: p });
                Ok(())
            }
            ScriptAction::Inject { body, .. } if !self.world.knowledge.can_derive_within(&body, self.cfg.inject_depth) => {
                Err(crate::adversary::AdversaryError::NotDerivable(body))
            }
            ScriptAction::Inject { dst, body } => {
                self.world.emit(EventKind::Inject {
                    dst,
                    term: body.clone(),
                });
                self.queue.push(now.plus(self.world.latency), Class::Message, Item::Deliver { dst, body });
                Ok(())
            }
        };
        if let Err(e) = r {
            self.world.emit(EventKind::Warning {
                message: format!("scripted action rejected: {e}"),
            });
        }
    }

    fn software_options(&self) -> Vec<Choice> {
        let mut options = vec![Choice::Pass];
        let m = self.model();
        if !self.cfg.free_software || !m.sw || self.machine.is_done() {
            return options;
        }
        let now = self.world.now;
        for d in self.world.devices.iter().filter(|d| d.is_prover() && !d.in_atomic(now)) {
            if !d.software.is_compromised() {
                options.push(Choice::Compromise(d.id));
            } else if m.msw {
                options.push(Choice::Restore(d.id));
            }
        }
        options
    }

    fn injection_options(&self) -> Vec<Choice> {
        let mut options = vec![Choice::Pass];
        if !self.model().dy || !self.cfg.net.inject || self.machine.is_done() {
            return options;
        }
        let mut seen = std::collections::BTreeSet::new();
        for (dst, body) in self.machine.inject_candidates(&self.world) {
            if self.world.knowledge.can_derive_within(&body, self.cfg.inject_depth) && seen.insert((dst, body.clone())) {
                options.push(Choice::Inject { dst, body });
            }
        }
        options
    }

    fn network_options(&self, dst: DeviceId) -> Vec<Choice> {
        let mut options = vec![Choice::Deliver];
        if !self.model().dy || self.world.device(dst).is_none() {
            return options;
        }
        let net = &self.cfg.net;
        if net.drop {
            options.push(Choice::Drop);
        }
        options.extend((1..=net.max_delay).map(Choice::Delay));
        if net.duplicate {
            options.push(Choice::Duplicate);
        }
        options
    }

    fn route(&mut self, dst: DeviceId, body: Term, choice: &Choice) {
        if self.world.device(dst).is_none() {
            self.world.emit(EventKind::MsgDrop {
                dst,
                term: body,
                reason: DropReason::UnknownDestination,
            });
            return;
        }
        let at = self.world.now.plus(self.world.latency);
        match choice {
            Choice::Drop => self.world.emit(EventKind::MsgDrop {
                dst,
                term: body,
                reason: DropReason::Adversary,
            }),
            Choice::Delay(d) => self.queue.push(at.plus(*d), Class::Message, Item::Deliver { dst, body }),
            Choice::Duplicate => {
                self.queue.push(at, Class::Message, Item::Deliver { dst, body: body.clone() });
                self.queue.push(at.plus(1), Class::Message, Item::Deliver { dst, body });
            }
            _ => self.queue.push(at, Class::Message, Item::Deliver { dst, body }),
        }
    }

    fn process(&mut self, item: Item) {
        let now = self.world.now;
        let (mut sends, mut timers) = (Vec::new(), Vec::new());
        let result = match item {
            Item::Deliver { dst, body } => {
                let dev = &self.world.devices[dst.0 as usize];
                if dev.is_offline(now) {
                    self.world.emit(EventKind::MsgDrop {
                        dst,
                        term: body,
                        reason: DropReason::Offline,
                    });
                    return;
                }
                self.world.emit(EventKind::MsgRecv { dst, term: body.clone() });
                let mut ctx = Ctx {
                    world: &mut self.world,
                    sends: &mut sends,
                    timers: &mut timers,
                };
                if self.services.claims_message(&body) {
                    self.services.on_message(&mut ctx, dst, &body)
                } else {
                    self.machine.on_message(&mut ctx, dst, &body)
                }
            }
            Item::Timer { device, tag } => {
                if let Some(until) = self.world.devices[device.0 as usize].offline_until.filter(|u| now < *u) {
                    self.queue.push(until, Class::Timer, Item::Timer { device, tag });
                    return;
                }
                let mut ctx = Ctx {
                    world: &mut self.world,
                    sends: &mut sends,
                    timers: &mut timers,
                };
                if tag.is_service() {
                    self.services.on_timer(&mut ctx, device, tag)
                } else {
                    self.machine.on_timer(&mut ctx, device, tag)
                }
            }
        };
        self.absorb(sends, timers);
        if let Err(msg) = result {
            self.fail(msg);
        }
    }

    /// Resolves every decision with `chooser` and returns the finished trace.
    pub fn run_with(mut self, chooser: &mut dyn Chooser) -> Trace {
        while let Some(point) = self.advance() {
            let idx = chooser.choose(point);
            self.resolve(idx);
        }
        self.into_trace()
    }

    /// Finished (or truncated) trace; the header records the schedule.
    pub fn into_trace(self) -> Trace {
        let mut header = self.cfg.header.clone();
        header.schedule = self.choices.iter().map(|c| c.render(&header)).collect();
        header.fault = self.fault.clone();
        Trace {
            header,
            events: self.world.events,
        }
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }
}

/// Picks an option index at each decision point.
pub trait Chooser {
    fn choose(&mut self, point: &DecisionPoint) -> usize;
}

/// Always takes option 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct Benign;

impl Chooser for Benign {
    fn choose(&mut self, _: &DecisionPoint) -> usize {
        0
    }
}

/// Replays a recorded schedule positionally; unmatched entries fall back to
/// the benign option.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    choices: Vec<Choice>,
    pos: usize,
}

impl Replay {
    pub fn new(choices: Vec<Choice>) -> Replay {
        Replay { choices, pos: 0 }
    }
}

impl Chooser for Replay {
    fn choose(&mut self, point: &DecisionPoint) -> usize {
        let want = self.choices.get(self.pos);
        self.pos += 1;
        want.and_then(|w| point.options.iter().position(|o| o == w)).unwrap_or(0)
    }
}

/// Uniform random choices from a seeded stream. `bias` is the probability
/// of taking the benign option outright.
#[derive(Debug, Clone)]
pub struct RandomChooser {
    rng: ChaCha8Rng,
    bias: f64,
}

impl RandomChooser {
    pub fn new(seed: u64, stream: u64, bias: f64) -> RandomChooser {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomChooser { rng, bias }
    }
}

impl Chooser for RandomChooser {
    fn choose(&mut self, point: &DecisionPoint) -> usize {
        if self.rng.gen_bool(self.bias.clamp(0.0, 1.0)) {
            0
        } else {
            self.rng.gen_range(0..point.options.len())
        }
    }
}
