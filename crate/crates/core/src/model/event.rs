use super::{DeviceId, Interval, SoftwareState, Status, TimePoint};
use crate::symcrypto::Term;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// One timestamped, observable occurrence in a run.
///
/// Serialized as `{"at": .., "kind": .., "args": {..}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub at: TimePoint,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(at: TimePoint, kind: EventKind) -> Event {
        Event { at, kind }
    }
}

/// Which party consulted the acceptable-state list, and with which reference values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSource {
    /// Prover compares against expected values shipped in the request.
    VerifierSupplied,
    /// A device compares against values stored locally.
    LocalStore,
    /// Local values merged with what neighbours report.
    LocalConsensus,
    /// The verifier itself validates forwarded evidence.
    VerifierRooted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Adversary,
    Offline,
    UnknownDestination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStatus {
    pub members: BTreeSet<DeviceId>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "args")]
pub enum EventKind {
    SendRequest {
        initiator: DeviceId,
        prover: DeviceId,
        request: Term,
    },
    RecvRequest {
        prover: DeviceId,
        request: Term,
    },
    RunComplete {
        prover: DeviceId,
        initiator: DeviceId,
        request: Term,
    },
    MeasureTaken {
        prover: DeviceId,
        state: SoftwareState,
    },
    Validation {
        validator: DeviceId,
        subject: DeviceId,
        source: ValidationSource,
        healthy: bool,
    },
    Compromise {
        prover: DeviceId,
    },
    Restore {
        prover: DeviceId,
    },
    CaptureBegin {
        prover: DeviceId,
        write: bool,
    },
    CaptureEnd {
        prover: DeviceId,
    },
    SecretRead {
        prover: DeviceId,
    },
    MsgSend {
        src: DeviceId,
        dst: DeviceId,
        term: Term,
    },
    MsgRecv {
        dst: DeviceId,
        term: Term,
    },
    MsgDrop {
        dst: DeviceId,
        term: Term,
        reason: DropReason,
    },
    Inject {
        dst: DeviceId,
        term: Term,
    },
    AttStart {
        verifier: DeviceId,
        counter: u64,
    },
    ClaimIndividual {
        relying_party: DeviceId,
        #[serde(with = "status_pairs")]
        statuses: BTreeMap<DeviceId, Status>,
        interval: Interval,
        counter: u64,
    },
    ClaimGroup {
        relying_party: DeviceId,
        groups: Vec<GroupStatus>,
        interval: Interval,
        counter: u64,
    },
    HeartbeatSend {
        prover: DeviceId,
    },
    HeartbeatRecv {
        observer: DeviceId,
        prover: DeviceId,
    },
    EpochKeyUpdate {
        epoch: u64,
    },
    PhysicalFlag {
        device: DeviceId,
        detector: String,
    },
    Warning {
        message: String,
    },
    Fault {
        message: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SendRequest { .. } => "SendRequest",
            EventKind::RecvRequest { .. } => "RecvRequest",
            EventKind::RunComplete { .. } => "RunComplete",
            EventKind::MeasureTaken { .. } => "MeasureTaken",
            EventKind::Validation { .. } => "Validation",
            EventKind::Compromise { .. } => "Compromise",
            EventKind::Restore { .. } => "Restore",
            EventKind::CaptureBegin { .. } => "CaptureBegin",
            EventKind::CaptureEnd { .. } => "CaptureEnd",
            EventKind::SecretRead { .. } => "SecretRead",
            EventKind::MsgSend { .. } => "MsgSend",
            EventKind::MsgRecv { .. } => "MsgRecv",
            EventKind::MsgDrop { .. } => "MsgDrop",
            EventKind::Inject { .. } => "Inject",
            EventKind::AttStart { .. } => "AttStart",
            EventKind::ClaimIndividual { .. } => "ClaimIndividual",
            EventKind::ClaimGroup { .. } => "ClaimGroup",
            EventKind::HeartbeatSend { .. } => "HeartbeatSend",
            EventKind::HeartbeatRecv { .. } => "HeartbeatRecv",
            EventKind::EpochKeyUpdate { .. } => "EpochKeyUpdate",
            EventKind::PhysicalFlag { .. } => "PhysicalFlag",
            EventKind::Warning { .. } => "Warning",
            EventKind::Fault { .. } => "Fault",
        }
    }

    /// True for events that can change a prover's validity.
    pub fn affects_validity_of(&self, p: DeviceId) -> bool {
        match self {
            EventKind::Compromise { prover } | EventKind::Restore { prover } => *prover == p,
            EventKind::CaptureBegin { prover, write } => *write && *prover == p,
            _ => false,
        }
    }

    pub fn is_claim(&self) -> bool {
        matches!(
            self,
            EventKind::ClaimIndividual { .. } | EventKind::ClaimGroup { .. }
        )
    }
}

/// Status maps as `[[device, status], ...]`: map keys lose their integer
/// type inside tagged enums.
mod status_pairs {
    use super::{DeviceId, Status};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(m: &BTreeMap<DeviceId, Status>, s: S) -> Result<S::Ok, S::Error> {
        let v: Vec<(&DeviceId, &Status)> = m.iter().collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<DeviceId, Status>, D::Error> {
        Ok(Vec::<(DeviceId, Status)>::deserialize(d)?.into_iter().collect())
    }
}
