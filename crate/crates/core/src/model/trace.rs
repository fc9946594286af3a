use super::{AcceptableStates, DeviceId, Event, EventKind, Interval, Role, SoftwareState, TimePoint};
use crate::adversary::AdversaryModel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

pub const TRACE_FORMAT: &str = "crasim-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no header line")]
    MissingHeader,
    #[error("unsupported trace format `{0}` version {1}")]
    Unsupported(String, u32),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("trace has no events")]
    EmptyTrace,
    #[error("event {index} goes back in time")]
    NonMonotonicTime { index: usize },
    #[error("claim at event {index} has an interval outside the trace horizon")]
    OutsideHorizon { index: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub id: DeviceId,
    pub name: String,
    pub roles: Vec<Role>,
}

/// Scenario metadata written as the first line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub protocol: String,
    pub seed: u64,
    pub adversary: AdversaryModel,
    /// False for protocols where provers trigger attestation themselves.
    pub interactive: bool,
    pub devices: Vec<DeviceInfo>,
    pub provers: Vec<DeviceId>,
    pub initial_states: BTreeMap<DeviceId, SoftwareState>,
    pub acceptable: AcceptableStates,
    #[serde(default)]
    pub group_threshold: u32,
    #[serde(default)]
    pub t_attack: u64,
    /// Adversary decisions taken during the run, in canonical text form.
    #[serde(default)]
    pub schedule: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

impl TraceHeader {
    pub fn new(scenario: &str, protocol: &str) -> TraceHeader {
        TraceHeader {
            format: TRACE_FORMAT.to_string(),
            version: TRACE_VERSION,
            scenario: scenario.to_string(),
            protocol: protocol.to_string(),
            seed: 0,
            adversary: AdversaryModel::default(),
            interactive: true,
            devices: Vec::new(),
            provers: Vec::new(),
            initial_states: BTreeMap::new(),
            acceptable: AcceptableStates::default(),
            group_threshold: 0,
            t_attack: 0,
            schedule: Vec::new(),
            fault: None,
        }
    }

    pub fn is_prover(&self, p: DeviceId) -> bool {
        self.provers.contains(&p)
    }

    pub fn device_name(&self, d: DeviceId) -> String {
        self.devices
            .iter()
            .find(|i| i.id == d)
            .map(|i| i.name.clone())
            .unwrap_or_else(|| d.to_string())
    }

    pub fn device_by_name(&self, name: &str) -> Option<DeviceId> {
        self.devices.iter().find(|i| i.name == name).map(|i| i.id)
    }

    /// Validity can only decrease over time: no restores are possible and
    /// the acceptable-state lists never change.
    pub fn is_monotone(&self) -> bool {
        !self.adversary.msw && !self.acceptable.has_updates()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Trace {
        Trace {
            header,
            events: Vec::new(),
        }
    }

    pub fn end_time(&self) -> Option<TimePoint> {
        self.events.last().map(|e| e.at)
    }

    /// Copy of this trace keeping only the events at `indices`.
    pub fn restricted_to(&self, indices: &[usize]) -> Trace {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        Trace {
            header: self.header.clone(),
            events: idx.into_iter().filter_map(|i| self.events.get(i).cloned()).collect(),
        }
    }

    /// Structural checks: non-decreasing timestamps and well-placed claim intervals.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut last = TimePoint::ZERO;
        for (index, ev) in self.events.iter().enumerate() {
            if ev.at < last {
                return Err(TraceError::NonMonotonicTime { index });
            }
            last = ev.at;
            match &ev.kind {
                EventKind::ClaimIndividual { interval, .. } | EventKind::ClaimGroup { interval, .. }
                    if interval.start > interval.end || interval.end > ev.at =>
                {
                    return Err(TraceError::OutsideHorizon { index });
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate();
        let header: TraceHeader = loop {
            match lines.next() {
                None => return Err(TraceError::MissingHeader),
                Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
                Some((n, line)) => {
                    break serde_json::from_str(&line?).map_err(|e| TraceError::Parse {
                        line: n + 1,
                        message: e.to_string(),
                    })?
                }
            }
        };
        if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
            return Err(TraceError::Unsupported(header.format, header.version));
        }
        let mut events = Vec::new();
        for (n, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: Event = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            events.push(ev);
        }
        let trace = Trace { header, events };
        trace.validate()?;
        Ok(trace)
    }

    pub fn from_jsonl(s: &str) -> Result<Trace, TraceError> {
        Trace::read_jsonl(s.as_bytes())
    }
}

/// Software state of `p` after every event stamped `<= t`, by plain replay.
fn replay_state(trace: &Trace, p: DeviceId, t: TimePoint) -> SoftwareState {
    let original = trace
        .header
        .initial_states
        .get(&p)
        .cloned()
        .unwrap_or_else(|| SoftwareState::label("fw"));
    let mut state = original.clone();
    let mut compromises = 0;
    for ev in trace.events.iter().take_while(|e| e.at <= t) {
        match &ev.kind {
            EventKind::Compromise { prover } if *prover == p => {
                compromises += 1;
                state = SoftwareState::Compromised(compromises);
            }
            EventKind::CaptureBegin { prover, write: true } if *prover == p => {
                compromises += 1;
                state = SoftwareState::Compromised(compromises);
            }
            EventKind::Restore { prover } if *prover == p => state = original.clone(),
            _ => {}
        }
    }
    state
}

/// Whether prover `p` had a valid state at time `t`, reconstructed by
/// replaying the trace from its start.
pub fn is_valid_state(trace: &Trace, p: DeviceId, t: TimePoint) -> Result<bool, TraceError> {
    if !trace.header.is_prover(p) {
        return Err(TraceError::UnknownDevice(p));
    }
    let state = replay_state(trace, p, t);
    Ok(trace.header.acceptable.is_acceptable(p, t, &state))
}

/// Precomputed validity timelines for every prover of a trace.
#[derive(Debug, Clone)]
pub struct ValidityIndex {
    /// Per prover: `(from, valid)` runs, starting at tick 0, alternating values.
    runs: BTreeMap<DeviceId, Vec<(TimePoint, bool)>>,
}

impl ValidityIndex {
    pub fn build(trace: &Trace) -> ValidityIndex {
        let header = &trace.header;
        let mut runs = BTreeMap::new();
        for &p in &header.provers {
            let original = header
                .initial_states
                .get(&p)
                .cloned()
                .unwrap_or_else(|| SoftwareState::label("fw"));
            let mut changes: Vec<(TimePoint, Option<SoftwareState>)> = Vec::new();
            let mut compromises = 0;
            for ev in &trace.events {
                let next = match &ev.kind {
                    EventKind::Compromise { prover } if *prover == p => {
                        compromises += 1;
                        Some(SoftwareState::Compromised(compromises))
                    }
                    EventKind::CaptureBegin { prover, write: true } if *prover == p => {
                        compromises += 1;
                        Some(SoftwareState::Compromised(compromises))
                    }
                    EventKind::Restore { prover } if *prover == p => Some(original.clone()),
                    _ => None,
                };
                if next.is_some() {
                    changes.push((ev.at, next));
                }
            }
            for t in header.acceptable.update_times(p) {
                changes.push((t, None));
            }
            // stable: state changes keep trace order within a tick
            changes.sort_by_key(|(t, _)| *t);

            let mut state = original.clone();
            let mut timeline = vec![(TimePoint::ZERO, header.acceptable.is_acceptable(p, TimePoint::ZERO, &state))];
            let mut i = 0;
            while i < changes.len() {
                let at = changes[i].0;
                while i < changes.len() && changes[i].0 == at {
                    if let Some(s) = &changes[i].1 {
                        state = s.clone();
                    }
                    i += 1;
                }
                let valid = header.acceptable.is_acceptable(p, at, &state);
                let last = timeline.last_mut().expect("timeline starts non-empty");
                if last.0 == at {
                    last.1 = valid;
                    if timeline.len() > 1 && timeline[timeline.len() - 2].1 == valid {
                        timeline.pop();
                    }
                } else if last.1 != valid {
                    timeline.push((at, valid));
                }
            }
            runs.insert(p, timeline);
        }
        ValidityIndex { runs }
    }

    pub fn valid_at(&self, p: DeviceId, t: TimePoint) -> Option<bool> {
        let runs = self.runs.get(&p)?;
        let idx = runs.partition_point(|(from, _)| *from <= t);
        Some(runs[idx.max(1) - 1].1)
    }

    /// Times in `(iv.start, iv.end]` where `p`'s validity differs from the tick before.
    pub fn flips_within(&self, p: DeviceId, iv: Interval) -> Vec<TimePoint> {
        self.runs
            .get(&p)
            .map(|runs| {
                runs.iter()
                    .map(|(t, _)| *t)
                    .filter(|t| *t > iv.start && *t <= iv.end)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// `iv.start`, `iv.end`, and every flip of `p` in between, sorted.
    pub fn change_points(&self, p: DeviceId, iv: Interval) -> Vec<TimePoint> {
        let mut pts = vec![iv.start];
        pts.extend(self.flips_within(p, iv));
        pts.push(iv.end);
        pts.dedup();
        pts
    }

    /// Earliest time in `iv` at which `p` is invalid.
    pub fn first_invalid_in(&self, p: DeviceId, iv: Interval) -> Option<TimePoint> {
        if self.valid_at(p, iv.start) == Some(false) {
            return Some(iv.start);
        }
        self.flips_within(p, iv)
            .into_iter()
            .find(|t| self.valid_at(p, *t) == Some(false))
    }

    pub fn knows(&self, p: DeviceId) -> bool {
        self.runs.contains_key(&p)
    }
}

/// Finite set of times that suffices to quantify over all of `iv` for prover `p`.
pub fn state_change_points(trace: &Trace, p: DeviceId, iv: Interval) -> Result<Vec<TimePoint>, TraceError> {
    if trace.events.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    if !trace.header.is_prover(p) {
        return Err(TraceError::UnknownDevice(p));
    }
    Ok(ValidityIndex::build(trace).change_points(p, iv))
}
