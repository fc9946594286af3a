//! Time, device, health-state and trace vocabulary shared by every other module.

mod event;
mod trace;

pub use event::{DropReason, Event, EventKind, GroupStatus, ValidationSource};
pub use trace::{
    is_valid_state, state_change_points, DeviceInfo, Trace, TraceError, TraceHeader, ValidityIndex,
    TRACE_FORMAT, TRACE_VERSION,
};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

/// Global logical time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePoint(pub u64);

impl TimePoint {
    pub const ZERO: TimePoint = TimePoint(0);

    pub fn tick(self) -> u64 {
        self.0
    }

    pub fn plus(self, ticks: u64) -> TimePoint {
        TimePoint(self.0 + ticks)
    }

    pub fn saturating_minus(self, ticks: u64) -> TimePoint {
        TimePoint(self.0.saturating_sub(ticks))
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Closed interval `[start, end]` of logical time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start: TimePoint,
    pub end: TimePoint,
}

impl Interval {
    /// Returns `None` when `start > end`.
    pub fn new(start: TimePoint, end: TimePoint) -> Option<Interval> {
        (start <= end).then_some(Interval { start, end })
    }

    pub fn contains(&self, t: TimePoint) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn ticks(&self) -> impl Iterator<Item = TimePoint> {
        (self.start.0..=self.end.0).map(TimePoint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Prover,
    Initiator,
    Verifier,
    Aggregator,
    RelyingParty,
}

/// Label of a device's untrusted software state.
///
/// Compromised states form their own family and can never collide with a
/// configured label, since labels may not contain `#`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SoftwareState {
    Label(String),
    Compromised(u32),
}

impl SoftwareState {
    pub fn label(name: &str) -> SoftwareState {
        SoftwareState::Label(name.to_string())
    }

    pub fn is_compromised(&self) -> bool {
        matches!(self, SoftwareState::Compromised(_))
    }
}

impl fmt::Display for SoftwareState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SoftwareState::Label(l) => f.write_str(l),
            SoftwareState::Compromised(n) => write!(f, "mal#{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid software state label `{0}`")]
pub struct BadLabel(pub String);

impl FromStr for SoftwareState {
    type Err = BadLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(n) = s.strip_prefix("mal#") {
            return n
                .parse()
                .map(SoftwareState::Compromised)
                .map_err(|_| BadLabel(s.to_string()));
        }
        let ok = !s.is_empty()
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if ok {
            Ok(SoftwareState::Label(s.to_string()))
        } else {
            Err(BadLabel(s.to_string()))
        }
    }
}

impl Serialize for SoftwareState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SoftwareState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Healthy,
    Unhealthy,
    Unknown,
}

/// Per-prover acceptable software states, possibly changing at configured times.
///
/// Each prover maps to a list of `(effective_from, labels)` entries sorted by
/// time; the first entry is effective from tick 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptableStates {
    pub entries: BTreeMap<DeviceId, Vec<(TimePoint, BTreeSet<SoftwareState>)>>,
}

impl AcceptableStates {
    pub fn constant(map: impl IntoIterator<Item = (DeviceId, BTreeSet<SoftwareState>)>) -> Self {
        AcceptableStates {
            entries: map
                .into_iter()
                .map(|(d, set)| (d, vec![(TimePoint::ZERO, set)]))
                .collect(),
        }
    }

    /// Adds an update effective from `at`; entries stay sorted.
    pub fn push_update(&mut self, device: DeviceId, at: TimePoint, labels: BTreeSet<SoftwareState>) {
        let list = self.entries.entry(device).or_default();
        let pos = list.partition_point(|(t, _)| *t <= at);
        list.insert(pos, (at, labels));
    }

    pub fn at(&self, device: DeviceId, t: TimePoint) -> Option<&BTreeSet<SoftwareState>> {
        let list = self.entries.get(&device)?;
        let idx = list.partition_point(|(from, _)| *from <= t);
        if idx == 0 {
            list.first().map(|(_, s)| s)
        } else {
            Some(&list[idx - 1].1)
        }
    }

    pub fn is_acceptable(&self, device: DeviceId, t: TimePoint, state: &SoftwareState) -> bool {
        self.at(device, t).is_some_and(|s| s.contains(state))
    }

    /// True when any prover's acceptable set changes after tick 0.
    pub fn has_updates(&self) -> bool {
        self.entries.values().any(|l| l.len() > 1)
    }

    /// Times (after 0) at which the acceptable set of `device` changes.
    pub fn update_times(&self, device: DeviceId) -> impl Iterator<Item = TimePoint> + '_ {
        self.entries
            .get(&device)
            .into_iter()
            .flat_map(|l| l.iter().skip(1).map(|(t, _)| *t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compromised_labels_are_disjoint_from_configured_labels() {
        assert!("mal#3".parse::<SoftwareState>().unwrap().is_compromised());
        assert!("fw-1.2".parse::<SoftwareState>().is_ok());
        assert!("a#b".parse::<SoftwareState>().is_err());
        assert!("".parse::<SoftwareState>().is_err());
    }

    #[test]
    fn acceptable_state_updates_take_effect_at_their_time() {
        let p = DeviceId(1);
        let mut acc = AcceptableStates::constant([(p, [SoftwareState::label("v1")].into())]);
        acc.push_update(p, TimePoint(10), [SoftwareState::label("v2")].into());
        assert!(acc.is_acceptable(p, TimePoint(9), &SoftwareState::label("v1")));
        assert!(!acc.is_acceptable(p, TimePoint(10), &SoftwareState::label("v1")));
        assert!(acc.is_acceptable(p, TimePoint(10), &SoftwareState::label("v2")));
        assert!(acc.has_updates());
    }

    #[test]
    fn interval_rejects_reversed_bounds() {
        assert!(Interval::new(TimePoint(3), TimePoint(2)).is_none());
        let i = Interval::new(TimePoint(2), TimePoint(4)).unwrap();
        assert_eq!(i.ticks().count(), 3);
    }
}
