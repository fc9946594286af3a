//! Collective attestation protocols, their configuration, and the physical
//! attack defenses that can be layered on top.

mod defenses;
mod pads;
mod sap;
mod seda;
mod simpleplus;

pub use defenses::{attestation_frequency_monitor, DefenseParams, Services};
pub use pads::{Pads, PadsParams};
pub use sap::{Sap, SapParams};
pub use seda::Seda;
pub use simpleplus::SimplePlus;

use crate::model::{DeviceId, Role};
use crate::simnet::{Ctx, DeviceState, World};
use crate::symcrypto::Term;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("key policy `{policy}` is not supported by {protocol}")]
    InvalidKeyPolicy { policy: String, protocol: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    None,
    SimplePlus,
    Seda,
    Pads,
    Sap,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::None => "none",
            ProtocolKind::SimplePlus => "simpleplus",
            ProtocolKind::Seda => "seda",
            ProtocolKind::Pads => "pads",
            ProtocolKind::Sap => "sap",
        }
    }

    /// Whether a verifier initiates each attestation run.
    pub fn interactive(self) -> bool {
        !matches!(self, ProtocolKind::Pads)
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    SpanningTree,
    BalancedBinaryTree,
    DistributedGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub root: DeviceId,
    /// Tree edges, child to parent. Empty for graphs.
    pub parent: BTreeMap<DeviceId, DeviceId>,
    /// Undirected edges as `(min, max)`. Empty for trees.
    pub edges: BTreeSet<(DeviceId, DeviceId)>,
}

impl Topology {
    pub fn tree(root: DeviceId, parent: BTreeMap<DeviceId, DeviceId>) -> Result<Topology, ConfigError> {
        if parent.contains_key(&root) {
            return Err(ConfigError::InvalidTopology(format!("root {root} has a parent")));
        }
        for &start in parent.keys() {
            let mut cur = start;
            let mut steps = 0;
            while cur != root {
                cur = *parent
                    .get(&cur)
                    .ok_or_else(|| ConfigError::InvalidTopology(format!("{cur} does not reach the root")))?;
                steps += 1;
                if steps > parent.len() {
                    return Err(ConfigError::InvalidTopology(format!("cycle through {start}")));
                }
            }
        }
        Ok(Topology {
            kind: TopologyKind::SpanningTree,
            root,
            parent,
            edges: BTreeSet::new(),
        })
    }

    /// Heap layout over `root` followed by `nodes`.
    pub fn balanced_binary(root: DeviceId, nodes: &[DeviceId]) -> Topology {
        let order: Vec<DeviceId> = std::iter::once(root).chain(nodes.iter().copied()).collect();
        let parent = (1..order.len()).map(|i| (order[i], order[(i - 1) / 2])).collect();
        Topology {
            kind: TopologyKind::BalancedBinaryTree,
            root,
            parent,
            edges: BTreeSet::new(),
        }
    }

    pub fn graph(root: DeviceId, edges: impl IntoIterator<Item = (DeviceId, DeviceId)>) -> Result<Topology, ConfigError> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(ConfigError::InvalidTopology(format!("self loop at {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Topology {
            kind: TopologyKind::DistributedGraph,
            root,
            parent: BTreeMap::new(),
            edges: set,
        })
    }

    pub fn is_tree(&self) -> bool {
        self.kind != TopologyKind::DistributedGraph
    }

    pub fn parent_of(&self, d: DeviceId) -> Option<DeviceId> {
        self.parent.get(&d).copied()
    }

    pub fn children(&self, d: DeviceId) -> Vec<DeviceId> {
        self.parent.iter().filter(|(_, p)| **p == d).map(|(c, _)| *c).collect()
    }

    pub fn neighbors(&self, d: DeviceId) -> Vec<DeviceId> {
        if self.is_tree() {
            let mut out = self.children(d);
            out.extend(self.parent_of(d));
            out.sort();
            out
        } else {
            self.edges
                .iter()
                .filter_map(|&(a, b)| {
                    if a == d {
                        Some(b)
                    } else if b == d {
                        Some(a)
                    } else {
                        None
                    }
                })
                .collect()
        }
    }

    /// Edges from `d` down to its deepest descendant.
    pub fn height(&self, d: DeviceId) -> u64 {
        self.children(d).into_iter().map(|c| 1 + self.height(c)).max().unwrap_or(0)
    }

    /// Subtree of `d`, excluding `d`.
    pub fn descendants(&self, d: DeviceId) -> Vec<DeviceId> {
        let mut out = Vec::new();
        for c in self.children(d) {
            out.push(c);
            out.extend(self.descendants(c));
        }
        out
    }

    pub fn members(&self) -> BTreeSet<DeviceId> {
        let mut out: BTreeSet<DeviceId> = BTreeSet::from([self.root]);
        for (c, p) in &self.parent {
            out.insert(*c);
            out.insert(*p);
        }
        for (a, b) in &self.edges {
            out.insert(*a);
            out.insert(*b);
        }
        out
    }
}

/// How symmetric keys are distributed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KeyPolicy {
    /// One attestation key and one authentication key shared by the swarm.
    SwarmShared {
        #[serde(default = "default_att")]
        att: String,
        #[serde(default = "default_auth")]
        auth: String,
    },
    /// One key per tree edge, known to its two endpoints.
    PerLink,
    /// One key per device, shared with the verifier; signatures verifiable by all.
    PerDevice,
}

impl KeyPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            KeyPolicy::SwarmShared { .. } => "swarm_shared",
            KeyPolicy::PerLink => "per_link",
            KeyPolicy::PerDevice => "per_device",
        }
    }

    pub fn swarm_default() -> KeyPolicy {
        KeyPolicy::SwarmShared {
            att: "att".into(),
            auth: "auth".into(),
        }
    }
}

fn default_att() -> String {
    "att".into()
}

fn default_auth() -> String {
    "auth".into()
}

/// Role name under which a link key is stored on both endpoints.
pub fn link_role(parent: &str, child: &str) -> String {
    format!("link:{parent}-{child}")
}

/// Role name of the per-device key of `name`.
pub fn device_role(name: &str) -> String {
    format!("dev:{name}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub kind: ProtocolKind,
    pub verifier: DeviceId,
    pub provers: Vec<DeviceId>,
    pub topology: Topology,
    pub key_policy: KeyPolicy,
    pub latency: u64,
    pub rounds: u32,
    pub round_start: u64,
    /// Verifier timeout after sending a request; default `3 * latency * depth`.
    pub response_deadline: Option<u64>,
    /// SIMPLE+: monotonic counters in requests. Off gives a replayable variant.
    pub counters: bool,
    /// SIMPLE+: attest only a uniform sample of this many provers per round.
    pub sample: Option<usize>,
    pub pads: PadsParams,
    pub sap: SapParams,
    pub t_attack: u64,
}

impl ProtocolConfig {
    pub fn new(kind: ProtocolKind, verifier: DeviceId, provers: Vec<DeviceId>, topology: Topology) -> ProtocolConfig {
        let key_policy = match kind {
            ProtocolKind::SimplePlus | ProtocolKind::None => KeyPolicy::swarm_default(),
            ProtocolKind::Seda => KeyPolicy::PerLink,
            ProtocolKind::Pads | ProtocolKind::Sap => KeyPolicy::PerDevice,
        };
        ProtocolConfig {
            kind,
            verifier,
            provers,
            topology,
            key_policy,
            latency: 1,
            rounds: 1,
            round_start: 1,
            response_deadline: None,
            counters: true,
            sample: None,
            pads: PadsParams::default(),
            sap: SapParams::default(),
            t_attack: 0,
        }
    }

    pub fn deadline(&self) -> u64 {
        self.response_deadline
            .unwrap_or_else(|| 3 * self.latency * self.topology.height(self.verifier).max(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.latency == 0 {
            return Err(ConfigError::InvalidParameter("latency must be at least 1".into()));
        }
        let bad_policy = || ConfigError::InvalidKeyPolicy {
            policy: self.key_policy.name().into(),
            protocol: self.kind.name().into(),
        };
        let tree_at_verifier = || -> Result<(), ConfigError> {
            if !self.topology.is_tree() || self.topology.root != self.verifier {
                return Err(ConfigError::InvalidTopology(format!(
                    "{} needs a tree rooted at the verifier",
                    self.kind
                )));
            }
            for p in &self.provers {
                if self.topology.parent_of(*p).is_none() {
                    return Err(ConfigError::InvalidTopology(format!("prover {p} is not attached to the tree")));
                }
            }
            Ok(())
        };
        match self.kind {
            ProtocolKind::None => {}
            ProtocolKind::SimplePlus => {
                tree_at_verifier()?;
                if !matches!(self.key_policy, KeyPolicy::SwarmShared { .. }) {
                    return Err(bad_policy());
                }
                if let Some(k) = self.sample {
                    if k == 0 || k > self.provers.len() {
                        return Err(ConfigError::InvalidParameter(format!(
                            "sample size {k} outside 1..={}",
                            self.provers.len()
                        )));
                    }
                }
            }
            ProtocolKind::Seda => {
                tree_at_verifier()?;
                if self.topology.children(self.verifier).len() != 1 {
                    return Err(ConfigError::InvalidTopology(
                        "the verifier must be linked to exactly one initial prover".into(),
                    ));
                }
                if self.key_policy != KeyPolicy::PerLink {
                    return Err(bad_policy());
                }
            }
            ProtocolKind::Sap => {
                tree_at_verifier()?;
                if self.topology.kind != TopologyKind::BalancedBinaryTree {
                    return Err(ConfigError::InvalidTopology("SAP needs a balanced binary tree".into()));
                }
                if self.key_policy != KeyPolicy::PerDevice {
                    return Err(bad_policy());
                }
                if let Some((d, off)) = self.sap.clock_offsets.iter().find(|(_, o)| o.unsigned_abs() > self.sap.epsilon) {
                    return Err(ConfigError::InvalidParameter(format!(
                        "clock offset {off} of {d} exceeds epsilon {}",
                        self.sap.epsilon
                    )));
                }
            }
            ProtocolKind::Pads => {
                if self.topology.kind != TopologyKind::DistributedGraph {
                    return Err(ConfigError::InvalidTopology("PADS needs a distributed graph".into()));
                }
                if self.key_policy != KeyPolicy::PerDevice {
                    return Err(bad_policy());
                }
                let p = &self.pads;
                if p.attest_period == 0 || p.gossip_period == 0 || p.window == 0 {
                    return Err(ConfigError::InvalidParameter("PADS periods and window must be positive".into()));
                }
                if !self.provers.contains(&p.target.unwrap_or(DeviceId(u32::MAX))) && p.target.is_some() {
                    return Err(ConfigError::InvalidParameter("PADS query target is not a prover".into()));
                }
            }
        }
        Ok(())
    }

    /// Installs keys on `devices` according to the key policy.
    pub fn assign_keys(&self, devices: &mut [DeviceState]) {
        let name = |d: DeviceId, devices: &[DeviceState]| devices[d.0 as usize].name.clone();
        match &self.key_policy {
            KeyPolicy::SwarmShared { att, auth } => {
                for d in devices.iter_mut() {
                    d.keys.insert("att".into(), att.clone());
                    d.keys.insert("auth".into(), auth.clone());
                }
            }
            KeyPolicy::PerLink => {
                let links: Vec<(DeviceId, DeviceId)> = self.topology.parent.iter().map(|(c, p)| (*p, *c)).collect();
                for (p, c) in links {
                    let role = link_role(&name(p, devices), &name(c, devices));
                    devices[p.0 as usize].keys.insert(role.clone(), role.clone());
                    devices[c.0 as usize].keys.insert(role.clone(), role);
                }
            }
            KeyPolicy::PerDevice => {
                let names: Vec<String> = devices.iter().map(|d| d.name.clone()).collect();
                let v = self.verifier.0 as usize;
                for (i, n) in names.iter().enumerate() {
                    devices[i].keys.insert("dev".into(), device_role(n));
                    devices[v].keys.insert(device_role(n), device_role(n));
                }
            }
        }
    }
}

/// Timer purposes. Service timers belong to the defense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimerTag {
    Round(u32),
    Deadline(u64),
    Measure(u64),
    SelfAttest,
    Gossip,
    Query(u32),
    Heartbeat,
    HeartbeatCheck,
    Epoch,
    AttMonitor,
}

impl TimerTag {
    pub fn is_service(self) -> bool {
        matches!(
            self,
            TimerTag::Heartbeat | TimerTag::HeartbeatCheck | TimerTag::Epoch | TimerTag::AttMonitor
        )
    }
}

/// Behaviour of one protocol over the whole swarm. Handlers get the
/// receiving device and the message body; senders are named inside bodies.
pub trait Protocol {
    fn start(&mut self, ctx: &mut Ctx) -> Result<(), String>;
    fn on_message(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String>;
    fn on_timer(&mut self, ctx: &mut Ctx, device: DeviceId, tag: TimerTag) -> Result<(), String>;
    /// No further claims will be produced.
    fn is_done(&self) -> bool;
    /// Messages worth injecting, before the derivability filter.
    fn inject_candidates(&self, world: &World) -> Vec<(DeviceId, Term)>;
}

#[derive(Debug, Clone)]
pub enum Machine {
    Idle,
    SimplePlus(SimplePlus),
    Seda(Seda),
    Pads(Pads),
    Sap(Sap),
}

impl Machine {
    pub fn build(cfg: ProtocolConfig) -> Result<Machine, ConfigError> {
        cfg.validate()?;
        let cfg = Arc::new(cfg);
        Ok(match cfg.kind {
            ProtocolKind::None => Machine::Idle,
            ProtocolKind::SimplePlus => Machine::SimplePlus(SimplePlus::new(cfg)),
            ProtocolKind::Seda => Machine::Seda(Seda::new(cfg)),
            ProtocolKind::Pads => Machine::Pads(Pads::new(cfg)),
            ProtocolKind::Sap => Machine::Sap(Sap::new(cfg)),
        })
    }

    fn inner(&mut self) -> Option<&mut dyn Protocol> {
        match self {
            Machine::Idle => None,
            Machine::SimplePlus(p) => Some(p),
            Machine::Seda(p) => Some(p),
            Machine::Pads(p) => Some(p),
            Machine::Sap(p) => Some(p),
        }
    }

    fn inner_ref(&self) -> Option<&dyn Protocol> {
        match self {
            Machine::Idle => None,
            Machine::SimplePlus(p) => Some(p),
            Machine::Seda(p) => Some(p),
            Machine::Pads(p) => Some(p),
            Machine::Sap(p) => Some(p),
        }
    }
}

impl Protocol for Machine {
    fn start(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        self.inner().map_or(Ok(()), |p| p.start(ctx))
    }

    fn on_message(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String> {
        self.inner().map_or(Ok(()), |p| p.on_message(ctx, dst, body))
    }

    fn on_timer(&mut self, ctx: &mut Ctx, device: DeviceId, tag: TimerTag) -> Result<(), String> {
        self.inner().map_or(Ok(()), |p| p.on_timer(ctx, device, tag))
    }

    fn is_done(&self) -> bool {
        self.inner_ref().is_none_or(|p| p.is_done())
    }

    fn inject_candidates(&self, world: &World) -> Vec<(DeviceId, Term)> {
        self.inner_ref().map(|p| p.inject_candidates(world)).unwrap_or_default()
    }
}

/// Default role sets for the verifier and provers.
pub fn verifier_roles(kind: ProtocolKind) -> Vec<Role> {
    match kind {
        ProtocolKind::Pads => vec![Role::RelyingParty],
        _ => vec![Role::Initiator, Role::Verifier, Role::RelyingParty],
    }
}

/// `pair('tag', rest)` split.
pub(crate) fn tagged<'a>(body: &'a Term, tag: &str) -> Option<&'a Term> {
    let (head, rest) = body.as_pair()?;
    (head.as_atom() == Some(tag)).then_some(rest)
}

/// Device id for an atom naming a device.
pub(crate) fn device_named(world: &World, t: &Term) -> Option<DeviceId> {
    let name = t.as_atom()?;
    world.devices.iter().find(|d| d.name == name).map(|d| d.id)
}

/// Analyzed terms of the form `pair(pair('tag', _), _)`.
pub(crate) fn observed_with_tag<'a>(world: &'a World, tag: &'a str) -> impl Iterator<Item = &'a Term> + 'a {
    world
        .knowledge
        .analyzed()
        .iter()
        .filter(move |t| t.as_pair().and_then(|(b, _)| tagged(b, tag)).is_some())
}
