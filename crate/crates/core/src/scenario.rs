//! Scenario files: versioned TOML describing devices, protocol, adversary,
//! scripted attacks, exploration bounds and expected verdicts.
//!
//! A file may carry `[[variant]]` tables. Each variant is merged over the
//! base document (top-level keys replaced, tables merged one level deep)
//! and only the variants are run.

use crate::adversary::AdversaryModel;
use crate::explorer::Bounds;
use crate::model::{
    AcceptableStates, DeviceId, DeviceInfo, Role, SoftwareState, TimePoint, TraceHeader,
};
use crate::protocols::{
    verifier_roles, ConfigError, DefenseParams, KeyPolicy, Machine, PadsParams, ProtocolConfig, ProtocolKind,
    SapParams, Services, Topology, TopologyKind,
};
use crate::simnet::{DeviceState, Engine, EngineConfig, NetPolicy, ScriptAction, World};
use crate::symcrypto::{Knowledge, Term, DEFAULT_DEPTH};
use crate::tracecheck::{Outcome, PropertyId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("unsupported scenario version {0} (expected {SCENARIO_VERSION})")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdversarySpec {
    List(Vec<String>),
    Text(String),
}

impl Default for AdversarySpec {
    fn default() -> Self {
        AdversarySpec::Text("none".into())
    }
}

impl AdversarySpec {
    pub fn model(&self) -> Result<AdversaryModel, String> {
        match self {
            AdversarySpec::Text(s) => AdversaryModel::parse_list(s),
            AdversarySpec::List(l) => AdversaryModel::parse_list(&l.join("+")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DevicesSection {
    #[serde(default = "default_verifier")]
    pub verifier: String,
    pub provers: Vec<String>,
    #[serde(default = "default_state")]
    pub initial_state: String,
    /// Per-prover initial state overriding `initial_state`.
    #[serde(default)]
    pub states: BTreeMap<String, String>,
}

fn default_verifier() -> String {
    "V".into()
}

fn default_state() -> String {
    "fw".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptableUpdate {
    pub prover: String,
    pub at: u64,
    pub states: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    /// Spanning tree: child name to parent name.
    #[serde(default)]
    pub parent: BTreeMap<String, String>,
    /// Balanced binary tree: heap order below the root; provers by default.
    #[serde(default)]
    pub order: Vec<String>,
    /// Distributed graph: undirected edges.
    #[serde(default)]
    pub edges: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadsSection {
    pub attest_period: Option<u64>,
    pub gossip_period: Option<u64>,
    pub window: Option<u64>,
    pub query_at: Option<u64>,
    pub query_period: Option<u64>,
    pub target: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SapSection {
    #[serde(default)]
    pub epsilon: u64,
    #[serde(default)]
    pub clock_offsets: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptEntry {
    Compromise {
        at: u64,
        prover: String,
    },
    Restore {
        at: u64,
        prover: String,
    },
    ReadSecrets {
        at: u64,
        prover: String,
    },
    Capture {
        at: u64,
        prover: String,
        until: u64,
        #[serde(default)]
        write: bool,
    },
    Inject {
        at: u64,
        dst: String,
        body: String,
    },
}

/// Raw scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    pub protocol: ProtocolKind,
    #[serde(default)]
    pub seed: u64,
    pub horizon: Option<u64>,
    #[serde(default = "one")]
    pub latency: u64,
    #[serde(default = "one_u32")]
    pub rounds: u32,
    #[serde(default = "one")]
    pub round_start: u64,
    pub response_deadline: Option<u64>,
    #[serde(default)]
    pub t_attack: u64,
    #[serde(default)]
    pub group_threshold: u32,
    #[serde(default = "yes")]
    pub counters: bool,
    pub sample: Option<usize>,
    #[serde(default)]
    pub attest_duration: u64,
    #[serde(default)]
    pub adversary: AdversarySpec,
    /// Offer compromise/restore decisions to the explorer at every tick.
    #[serde(default = "yes")]
    pub free_software: bool,
    pub inject_depth: Option<usize>,
    pub devices: DevicesSection,
    #[serde(default)]
    pub acceptable: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub acceptable_update: Vec<AcceptableUpdate>,
    pub topology: Option<TopologySection>,
    pub keys: Option<KeyPolicy>,
    #[serde(default)]
    pub network: NetPolicy,
    #[serde(default)]
    pub pads: PadsSection,
    #[serde(default)]
    pub sap: SapSection,
    #[serde(default)]
    pub defenses: DefenseParams,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
    #[serde(default)]
    pub bounds: Bounds,
    /// Properties to check; all nine when absent.
    pub properties: Option<Vec<String>>,
    /// Expected aggregate outcome per property.
    #[serde(default)]
    pub expect: BTreeMap<String, Outcome>,
}

fn one() -> u64 {
    1
}

fn one_u32() -> u32 {
    1
}

fn yes() -> bool {
    true
}

/// A loaded, validated scenario ready to build engines.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub header: TraceHeader,
    pub protocol: ProtocolConfig,
    pub devices: Vec<DeviceState>,
    pub script: Vec<(TimePoint, ScriptAction)>,
    pub properties: Vec<PropertyId>,
    pub expect: BTreeMap<PropertyId, Outcome>,
    pub horizon: TimePoint,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                for (k2, v2) in o {
                    b.insert(k2, v2);
                }
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Scenario {
    /// Every scenario described by `text`: the variants, or the base document if there are none.
    pub fn parse_all(text: &str) -> Result<Vec<Scenario>, ScenarioError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        let variants = match doc.remove("variant") {
            None => Vec::new(),
            Some(toml::Value::Array(a)) => a,
            Some(_) => return Err(ScenarioError::Parse("`variant` must be an array of tables".into())),
        };
        if variants.is_empty() {
            return Ok(vec![Scenario::from_table(doc)?]);
        }
        let mut out = Vec::new();
        for v in variants {
            let toml::Value::Table(v) = v else {
                return Err(ScenarioError::Parse("`variant` entries must be tables".into()));
            };
            let mut d = doc.clone();
            merge(&mut d, v);
            out.push(Scenario::from_table(d)?);
        }
        Ok(out)
    }

    /// A file without variants.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut all = Scenario::parse_all(text)?;
        if all.len() != 1 {
            return Err(invalid("file defines several variants"));
        }
        Ok(all.remove(0))
    }

    pub fn load_all(path: &Path) -> Result<Vec<Scenario>, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::parse_all(&text)
    }

    fn from_table(doc: toml::Table) -> Result<Scenario, ScenarioError> {
        let version = doc.get("version").and_then(|v| v.as_integer());
        if let Some(v) = version.filter(|v| *v != SCENARIO_VERSION as i64) {
            return Err(ScenarioError::Version(v as u32));
        }
        let file: ScenarioFile = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        Scenario::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
        if file.version != SCENARIO_VERSION {
            return Err(ScenarioError::Version(file.version));
        }
        let adversary = file.adversary.model().map_err(ScenarioError::Invalid)?;
        let d = &file.devices;
        if d.provers.is_empty() && file.protocol != ProtocolKind::None {
            return Err(invalid("no provers"));
        }

        let mut names: Vec<String> = vec![d.verifier.clone()];
        names.extend(d.provers.iter().cloned());
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(invalid("device names must be unique"));
        }
        let id_of = |n: &str| -> Result<DeviceId, ScenarioError> {
            names
                .iter()
                .position(|x| x == n)
                .map(|i| DeviceId(i as u32))
                .ok_or_else(|| invalid(format!("unknown device `{n}`")))
        };
        let prover_of = |n: &str| -> Result<DeviceId, ScenarioError> {
            let id = id_of(n)?;
            if id.0 == 0 {
                return Err(invalid(format!("`{n}` is not a prover")));
            }
            Ok(id)
        };
        let verifier = DeviceId(0);
        let provers: Vec<DeviceId> = (1..names.len()).map(|i| DeviceId(i as u32)).collect();

        let label = |s: &str| -> Result<SoftwareState, ScenarioError> {
            let st: SoftwareState = s.parse().map_err(|e| invalid(format!("{e}")))?;
            if st.is_compromised() {
                return Err(invalid(format!("`{s}` is reserved for compromised states")));
            }
            Ok(st)
        };
        let mut initial = BTreeMap::new();
        for p in &provers {
            let name = &names[p.0 as usize];
            let s = d.states.get(name).unwrap_or(&d.initial_state);
            initial.insert(*p, label(s)?);
        }
        for n in d.states.keys() {
            prover_of(n)?;
        }

        let mut acceptable = AcceptableStates::default();
        for p in &provers {
            let name = &names[p.0 as usize];
            let set: BTreeSet<SoftwareState> = match file.acceptable.get(name) {
                Some(l) => l.iter().map(|s| label(s)).collect::<Result<_, _>>()?,
                None => [initial[p].clone()].into(),
            };
            acceptable.push_update(*p, TimePoint::ZERO, set);
        }
        for n in file.acceptable.keys() {
            prover_of(n)?;
        }
        for u in &file.acceptable_update {
            let p = prover_of(&u.prover)?;
            if u.at == 0 {
                return Err(invalid("acceptable-state updates must be after tick 0"));
            }
            let set = u.states.iter().map(|s| label(s)).collect::<Result<_, _>>()?;
            acceptable.push_update(p, TimePoint(u.at), set);
        }

        let topology = match &file.topology {
            Some(t) => match t.kind {
                TopologyKind::SpanningTree => {
                    let mut parent = BTreeMap::new();
                    for (c, p) in &t.parent {
                        parent.insert(id_of(c)?, id_of(p)?);
                    }
                    Topology::tree(verifier, parent)?
                }
                TopologyKind::BalancedBinaryTree => {
                    let order = if t.order.is_empty() {
                        provers.clone()
                    } else {
                        t.order.iter().map(|n| prover_of(n)).collect::<Result<_, _>>()?
                    };
                    Topology::balanced_binary(verifier, &order)
                }
                TopologyKind::DistributedGraph => {
                    let edges = t
                        .edges
                        .iter()
                        .map(|(a, b)| Ok((id_of(a)?, id_of(b)?)))
                        .collect::<Result<Vec<_>, ScenarioError>>()?;
                    Topology::graph(verifier, edges)?
                }
            },
            None => default_topology(file.protocol, verifier, &provers)?,
        };

        let mut cfg = ProtocolConfig::new(file.protocol, verifier, provers.clone(), topology);
        if let Some(k) = &file.keys {
            cfg.key_policy = k.clone();
        }
        cfg.latency = file.latency;
        cfg.rounds = file.rounds;
        cfg.round_start = file.round_start;
        cfg.response_deadline = file.response_deadline;
        cfg.counters = file.counters;
        cfg.sample = file.sample;
        cfg.t_attack = file.t_attack;
        let pd = PadsParams::default();
        let ps = &file.pads;
        cfg.pads = PadsParams {
            attest_period: ps.attest_period.unwrap_or(pd.attest_period),
            gossip_period: ps.gossip_period.unwrap_or(pd.gossip_period),
            window: ps.window.unwrap_or(pd.window),
            query_at: ps.query_at.unwrap_or(pd.query_at),
            query_period: ps.query_period.unwrap_or(pd.query_period),
            target: ps.target.as_deref().map(prover_of).transpose()?,
        };
        let mut offsets = BTreeMap::new();
        for (n, o) in &file.sap.clock_offsets {
            offsets.insert(id_of(n)?, *o);
        }
        cfg.sap = SapParams {
            epsilon: file.sap.epsilon,
            clock_offsets: offsets.clone(),
        };
        cfg.validate()?;
        file.defenses.validate(file.t_attack)?;
        if !file.defenses.is_empty() && file.t_attack == 0 {
            return Err(invalid("defenses need a positive t_attack"));
        }

        let mut devices: Vec<DeviceState> = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let id = DeviceId(i as u32);
                if i == 0 {
                    DeviceState::new(id, n, verifier_roles(file.protocol), SoftwareState::label("verifier"))
                } else {
                    DeviceState::new(id, n, vec![Role::Prover], initial[&id].clone())
                }
            })
            .collect();
        for (d, o) in &offsets {
            devices[d.0 as usize].clock_offset = *o;
        }
        cfg.assign_keys(&mut devices);
        let services = Services::new(file.defenses.clone(), verifier, provers.clone(), file.t_attack);
        services.assign_keys(&mut devices);

        let mut script = Vec::new();
        for s in &file.script {
            script.push(resolve_script(s, &adversary, file.t_attack, &prover_of, &id_of)?);
        }
        script.sort_by_key(|(t, _)| *t);

        let properties = match &file.properties {
            None => PropertyId::ALL.to_vec(),
            Some(l) => l
                .iter()
                .map(|p| p.parse::<PropertyId>().map_err(ScenarioError::Invalid))
                .collect::<Result<_, _>>()?,
        };
        if properties.is_empty() {
            return Err(invalid("property list is empty"));
        }
        let mut expect = BTreeMap::new();
        for (k, v) in &file.expect {
            expect.insert(k.parse::<PropertyId>().map_err(ScenarioError::Invalid)?, *v);
        }

        let mut header = TraceHeader::new(&file.name, file.protocol.name());
        header.seed = file.seed;
        header.adversary = adversary;
        header.interactive = file.protocol.interactive();
        header.devices = devices
            .iter()
            .map(|d| DeviceInfo {
                id: d.id,
                name: d.name.clone(),
                roles: d.roles.clone(),
            })
            .collect();
        header.provers = provers;
        header.initial_states = initial;
        header.acceptable = acceptable;
        header.group_threshold = file.group_threshold;
        header.t_attack = file.t_attack;

        let horizon = TimePoint(file.horizon.unwrap_or_else(|| default_horizon(&file, &cfg)));
        Ok(Scenario {
            file,
            header,
            protocol: cfg,
            devices,
            script,
            properties,
            expect,
            horizon,
        })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn adversary(&self) -> AdversaryModel {
        self.header.adversary
    }

    pub fn bounds(&self) -> &Bounds {
        &self.file.bounds
    }

    pub fn with_seed(mut self, seed: u64) -> Scenario {
        self.file.seed = seed;
        self.header.seed = seed;
        self
    }

    pub fn engine(&self) -> Result<Engine, ScenarioError> {
        self.engine_with_horizon(self.horizon)
    }

    pub fn engine_with_horizon(&self, horizon: TimePoint) -> Result<Engine, ScenarioError> {
        self.build_engine(horizon, self.file.network, self.inject_depth())
    }

    pub fn inject_depth(&self) -> usize {
        self.file.inject_depth.unwrap_or(self.file.bounds.max_inject_depth)
    }

    /// Engine with an explicit network policy and injection bound.
    pub fn build_engine(&self, horizon: TimePoint, net: NetPolicy, inject_depth: usize) -> Result<Engine, ScenarioError> {
        let world = World {
            now: TimePoint::ZERO,
            devices: self.devices.clone(),
            acceptable: self.header.acceptable.clone(),
            events: Vec::new(),
            knowledge: Knowledge::new(DEFAULT_DEPTH),
            latency: self.file.latency,
            epoch: 0,
            attest_duration: self.file.attest_duration,
            eavesdrop: self.header.adversary.dy,
            rng: ChaCha8Rng::seed_from_u64(self.file.seed),
        };
        let machine = Machine::build(self.protocol.clone())?;
        let services = Services::new(
            self.file.defenses.clone(),
            self.protocol.verifier,
            self.protocol.provers.clone(),
            self.file.t_attack,
        );
        let cfg = EngineConfig {
            header: self.header.clone(),
            horizon,
            net,
            free_software: self.file.free_software,
            inject_depth,
            t_attack: self.file.t_attack,
        };
        let mut engine = Engine::new(cfg, world, machine, services);
        for (at, action) in &self.script {
            engine.schedule_action(*at, action.clone());
        }
        Ok(engine)
    }
}

fn default_topology(kind: ProtocolKind, verifier: DeviceId, provers: &[DeviceId]) -> Result<Topology, ScenarioError> {
    Ok(match kind {
        // chain V - P0 - P1 - ...
        ProtocolKind::Seda => {
            let mut parent = BTreeMap::new();
            let mut prev = verifier;
            for p in provers {
                parent.insert(*p, prev);
                prev = *p;
            }
            Topology::tree(verifier, parent)?
        }
        ProtocolKind::Sap => Topology::balanced_binary(verifier, provers),
        ProtocolKind::Pads => {
            let mut edges = Vec::new();
            for (i, a) in provers.iter().enumerate() {
                for b in &provers[i + 1..] {
                    edges.push((*a, *b));
                }
            }
            Topology::graph(verifier, edges)?
        }
        ProtocolKind::SimplePlus | ProtocolKind::None => {
            Topology::tree(verifier, provers.iter().map(|p| (*p, verifier)).collect())?
        }
    })
}

fn default_horizon(file: &ScenarioFile, cfg: &ProtocolConfig) -> u64 {
    let l = file.latency;
    let depth = cfg.topology.height(cfg.verifier).max(1);
    let slack = file.network.max_delay.max(file.bounds.max_delay) + 2 * l + 2;
    let per_round = cfg.deadline() + 3 * l * depth + 2 * file.sap.epsilon + 4;
    let mut h = match file.protocol {
        ProtocolKind::Pads => {
            cfg.pads.query_at + cfg.pads.query_period * file.rounds as u64 + slack
        }
        _ => file.round_start + per_round * file.rounds as u64 + slack,
    };
    if !file.defenses.is_empty() {
        h = h.max(4 * file.t_attack);
    }
    if let Some(ScriptEntry::Capture { until, .. }) = file.script.iter().max_by_key(|s| match s {
        ScriptEntry::Capture { until, .. } => *until,
        _ => 0,
    }) {
        h = h.max(until + file.t_attack + slack);
    }
    h
}

fn resolve_script(
    s: &ScriptEntry,
    m: &AdversaryModel,
    t_attack: u64,
    prover_of: &dyn Fn(&str) -> Result<DeviceId, ScenarioError>,
    id_of: &dyn Fn(&str) -> Result<DeviceId, ScenarioError>,
) -> Result<(TimePoint, ScriptAction), ScenarioError> {
    let need = |ok: bool, cap: &str| {
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("scripted action needs adversary capability `{cap}`")))
        }
    };
    Ok(match s {
        ScriptEntry::Compromise { at, prover } => {
            need(m.sw, "sw")?;
            (TimePoint(*at), ScriptAction::Compromise(prover_of(prover)?))
        }
        ScriptEntry::Restore { at, prover } => {
            need(m.msw, "msw")?;
            (TimePoint(*at), ScriptAction::Restore(prover_of(prover)?))
        }
        ScriptEntry::ReadSecrets { at, prover } => {
            need(m.can_read_secrets(), "pni")?;
            (TimePoint(*at), ScriptAction::ReadSecrets(prover_of(prover)?))
        }
        ScriptEntry::Capture { at, prover, until, write } => {
            need(m.pi, "pi")?;
            if until <= at || until - at < t_attack {
                return Err(invalid(format!(
                    "capture window [{at}, {until}) is shorter than t_attack = {t_attack}"
                )));
            }
            (
                TimePoint(*at),
                ScriptAction::Capture {
                    prover: prover_of(prover)?,
                    until: TimePoint(*until),
                    write: *write,
                },
            )
        }
        ScriptEntry::Inject { at, dst, body } => {
            need(m.dy, "dy")?;
            let body: Term = body.parse().map_err(|e| invalid(format!("inject body: {e}")))?;
            (TimePoint(*at), ScriptAction::Inject { dst: id_of(dst)?, body })
        }
    })
}
