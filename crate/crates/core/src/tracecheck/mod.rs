//! Trace properties: initiator authentication, individual and group
//! attestation in their weak/strong and (a)synchronous variants, and the
//! quality of swarm attestation a trace's claims expose.

mod group;
mod ia;
mod individual;
mod oracle;
mod qosa;

pub use group::check_group;
pub use ia::check_ia;
pub use individual::check_individual;
pub use oracle::{oracle_check_group, oracle_check_individual};
pub use qosa::{classify_qosa, Qosa};

use crate::model::{DeviceId, EventKind, GroupStatus, Interval, Status, Trace, TraceError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PropertyId {
    IA,
    IAW,
    IAS,
    ISW,
    ISS,
    GAW,
    GAS,
    GSW,
    GSS,
}

impl PropertyId {
    pub const ALL: [PropertyId; 9] = [
        PropertyId::IA,
        PropertyId::IAW,
        PropertyId::IAS,
        PropertyId::ISW,
        PropertyId::ISS,
        PropertyId::GAW,
        PropertyId::GAS,
        PropertyId::GSW,
        PropertyId::GSS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PropertyId::IA => "IA",
            PropertyId::IAW => "IAW",
            PropertyId::IAS => "IAS",
            PropertyId::ISW => "ISW",
            PropertyId::ISS => "ISS",
            PropertyId::GAW => "GAW",
            PropertyId::GAS => "GAS",
            PropertyId::GSW => "GSW",
            PropertyId::GSS => "GSS",
        }
    }

    pub fn individual(sync: bool, strong: bool) -> PropertyId {
        match (sync, strong) {
            (false, false) => PropertyId::IAW,
            (false, true) => PropertyId::IAS,
            (true, false) => PropertyId::ISW,
            (true, true) => PropertyId::ISS,
        }
    }

    pub fn group(sync: bool, strong: bool) -> PropertyId {
        match (sync, strong) {
            (false, false) => PropertyId::GAW,
            (false, true) => PropertyId::GAS,
            (true, false) => PropertyId::GSW,
            (true, true) => PropertyId::GSS,
        }
    }

    /// `(is_group, sync, strong)` for the attestation properties.
    pub fn shape(self) -> Option<(bool, bool, bool)> {
        Some(match self {
            PropertyId::IA => return None,
            PropertyId::IAW => (false, false, false),
            PropertyId::IAS => (false, false, true),
            PropertyId::ISW => (false, true, false),
            PropertyId::ISS => (false, true, true),
            PropertyId::GAW => (true, false, false),
            PropertyId::GAS => (true, false, true),
            PropertyId::GSW => (true, true, false),
            PropertyId::GSS => (true, true, true),
        })
    }

    /// Properties directly implied by this one (drop sync, or drop strong).
    pub fn implies(self) -> Vec<PropertyId> {
        let Some((group, sync, strong)) = self.shape() else {
            return Vec::new();
        };
        let make = if group { PropertyId::group } else { PropertyId::individual };
        let mut out = Vec::new();
        if sync {
            out.push(make(false, strong));
        }
        if strong {
            out.push(make(sync, false));
        }
        out
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PropertyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PropertyId::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown property `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Holds,
    Violated,
    Inapplicable,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Holds => "Holds",
            Outcome::Violated => "Violated",
            Outcome::Inapplicable => "Inapplicable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: PropertyId,
    pub result: Outcome,
    /// Indices of the trace events that suffice to reproduce a violation.
    pub witness: Option<Vec<usize>>,
}

impl Verdict {
    pub fn holds(property: PropertyId) -> Verdict {
        Verdict {
            property,
            result: Outcome::Holds,
            witness: None,
        }
    }

    pub fn inapplicable(property: PropertyId) -> Verdict {
        Verdict {
            property,
            result: Outcome::Inapplicable,
            witness: None,
        }
    }

    pub fn violated(property: PropertyId, mut witness: Vec<usize>) -> Verdict {
        witness.sort_unstable();
        witness.dedup();
        Verdict {
            property,
            result: Outcome::Violated,
            witness: Some(witness),
        }
    }

    pub fn is_violated(&self) -> bool {
        self.result == Outcome::Violated
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdicts always serialize")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CheckError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("group specification: {0}")]
    Spec(String),
    #[error("trace contains no claims")]
    NoClaims,
}

/// Groups and the relaxation threshold for group attestation checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupSpec {
    /// Groups claims must use; empty accepts whatever groups claims carry.
    pub groups: Vec<BTreeSet<DeviceId>>,
    pub threshold: u32,
}

impl GroupSpec {
    pub fn with_threshold(threshold: u32) -> GroupSpec {
        GroupSpec {
            groups: Vec::new(),
            threshold,
        }
    }

    pub(crate) fn validate(&self, trace: &Trace) -> Result<(), CheckError> {
        for g in &self.groups {
            if g.is_empty() {
                return Err(CheckError::Spec("empty group".into()));
            }
            if let Some(p) = g.iter().find(|p| !trace.header.is_prover(**p)) {
                return Err(CheckError::Spec(format!("{p} is not a prover of the trace")));
            }
        }
        Ok(())
    }
}

/// One individual claim: event index, non-unknown statuses, interval.
pub(crate) struct IndividualClaim {
    pub index: usize,
    pub statuses: Vec<(DeviceId, Status)>,
    pub interval: Interval,
}

pub(crate) fn individual_claims(trace: &Trace) -> Result<Vec<IndividualClaim>, CheckError> {
    let mut out = Vec::new();
    for (index, ev) in trace.events.iter().enumerate() {
        if let EventKind::ClaimIndividual { statuses, interval, .. } = &ev.kind {
            let statuses: Vec<(DeviceId, Status)> = statuses
                .iter()
                .filter(|(_, s)| **s != Status::Unknown)
                .map(|(p, s)| (*p, *s))
                .collect();
            if let Some((p, _)) = statuses.iter().find(|(p, _)| !trace.header.is_prover(*p)) {
                return Err(TraceError::UnknownDevice(*p).into());
            }
            out.push(IndividualClaim {
                index,
                statuses,
                interval: *interval,
            });
        }
    }
    Ok(out)
}

/// One group claim, explicit or derived from an individual claim.
pub(crate) struct GroupClaim {
    pub index: usize,
    pub groups: Vec<GroupStatus>,
    pub interval: Interval,
}

/// Group claims of a trace. Traces with only individual claims are read as
/// one group per claim whose status is the AND of the individual statuses.
pub(crate) fn group_claims(trace: &Trace, spec: &GroupSpec) -> Result<Vec<GroupClaim>, CheckError> {
    spec.validate(trace)?;
    let mut out = Vec::new();
    for (index, ev) in trace.events.iter().enumerate() {
        if let EventKind::ClaimGroup { groups, interval, .. } = &ev.kind {
            for g in groups {
                if let Some(p) = g.members.iter().find(|p| !trace.header.is_prover(**p)) {
                    return Err(CheckError::Spec(format!("claimed group member {p} is not a prover")));
                }
                if !spec.groups.is_empty() && !spec.groups.contains(&g.members) {
                    return Err(CheckError::Spec("claimed group is not in the specification".into()));
                }
            }
            out.push(GroupClaim {
                index,
                groups: groups.iter().filter(|g| g.status != Status::Unknown).cloned().collect(),
                interval: *interval,
            });
        }
    }
    if out.is_empty() {
        for c in individual_claims(trace)? {
            let members: BTreeSet<DeviceId> = c.statuses.iter().map(|(p, _)| *p).collect();
            let status = if c.statuses.iter().all(|(_, s)| *s == Status::Healthy) {
                Status::Healthy
            } else {
                Status::Unhealthy
            };
            let groups = if members.is_empty() {
                Vec::new()
            } else {
                vec![GroupStatus { members, status }]
            };
            out.push(GroupClaim {
                index: c.index,
                groups,
                interval: c.interval,
            });
        }
    }
    Ok(out)
}

/// Claim event plus every validity-relevant event of `provers` up to its tick.
pub(crate) fn claim_witness(trace: &Trace, claim: usize, provers: impl IntoIterator<Item = DeviceId>) -> Vec<usize> {
    let provers: BTreeSet<DeviceId> = provers.into_iter().collect();
    let at = trace.events[claim].at;
    let mut out: Vec<usize> = trace
        .events
        .iter()
        .enumerate()
        .take_while(|(_, e)| e.at <= at)
        .filter(|(_, e)| provers.iter().any(|p| e.kind.affects_validity_of(*p)))
        .map(|(i, _)| i)
        .collect();
    out.push(claim);
    out
}

/// Verdict for `property` using the optimized checkers.
pub fn check(trace: &Trace, property: PropertyId, spec: &GroupSpec) -> Result<Verdict, CheckError> {
    match property.shape() {
        None => check_ia(trace),
        Some((false, sync, strong)) => check_individual(trace, sync, strong),
        Some((true, sync, strong)) => check_group(trace, spec, sync, strong),
    }
}

/// Verdicts for `properties`, with the group threshold taken from the trace header.
pub fn check_all(trace: &Trace, properties: &[PropertyId]) -> Result<Vec<Verdict>, CheckError> {
    let spec = GroupSpec::with_threshold(trace.header.group_threshold);
    properties.iter().map(|p| check(trace, *p, &spec)).collect()
}

/// Pairs `(stronger, weaker)` where the stronger holds but the weaker is violated.
pub fn ordering_violations(verdicts: &[Verdict]) -> Vec<(PropertyId, PropertyId)> {
    let by: BTreeMap<PropertyId, Outcome> = verdicts.iter().map(|v| (v.property, v.result)).collect();
    let mut out = Vec::new();
    for (p, r) in &by {
        if *r != Outcome::Holds {
            continue;
        }
        for w in p.implies() {
            if by.get(&w) == Some(&Outcome::Violated) {
                out.push((*p, w));
            }
        }
    }
    out
}

/// CSV header matching [`verdict_csv_row`].
pub const CSV_HEADER: &str = "trace,property,result,witness";

pub fn verdict_csv_row(trace_name: &str, v: &Verdict) -> String {
    let witness = v
        .witness
        .as_ref()
        .map(|w| w.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    format!("{trace_name},{},{},{witness}", v.property, v.result)
}
