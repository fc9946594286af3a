//! Random small traces for checker tests. Built directly from events, so they
//! exercise shapes no protocol produces: restores, capture writes, acceptable
//! updates, unknown statuses and arbitrary claim intervals.
#![allow(dead_code)]

use crasim::adversary::AdversaryModel;
use crasim::model::{
    DeviceId, DeviceInfo, Event, EventKind, GroupStatus, Interval, Role, SoftwareState, Status, TimePoint, Trace,
    TraceHeader,
};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

pub const V: DeviceId = DeviceId(0);

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn header(k: u32, adversary: AdversaryModel) -> TraceHeader {
    let mut h = TraceHeader::new("random", "synthetic");
    h.adversary = adversary;
    h.devices.push(DeviceInfo {
        id: V,
        name: "V".into(),
        roles: vec![Role::Verifier, Role::RelyingParty],
    });
    for i in 1..=k {
        let p = DeviceId(i);
        h.devices.push(DeviceInfo {
            id: p,
            name: format!("P{}", i - 1),
            roles: vec![Role::Prover],
        });
        h.provers.push(p);
        h.initial_states.insert(p, SoftwareState::label("fw"));
    }
    let fw: BTreeSet<SoftwareState> = [SoftwareState::label("fw")].into();
    h.acceptable = crasim::model::AcceptableStates::constant(h.provers.iter().map(|p| (*p, fw.clone())));
    h
}

fn status(rng: &mut impl Rng) -> Status {
    match rng.gen_range(0..10) {
        0..=4 => Status::Healthy,
        5..=8 => Status::Unhealthy,
        _ => Status::Unknown,
    }
}

fn interval(rng: &mut impl Rng, at: u64) -> Interval {
    let end = rng.gen_range(0..=at);
    let start = rng.gen_range(0..=end);
    Interval::new(TimePoint(start), TimePoint(end)).expect("start <= end")
}

/// A random trace with up to `max_provers` provers and events in `0..=max_ticks`.
pub fn random_trace(rng: &mut impl Rng, max_provers: u32, max_ticks: u64) -> Trace {
    let k = rng.gen_range(1..=max_provers);
    let adversary = AdversaryModel {
        sw: true,
        msw: rng.gen_bool(0.5),
        pi: rng.gen_bool(0.3),
        ..Default::default()
    };
    let mut h = header(k, adversary);
    let provers = h.provers.clone();
    let fw: BTreeSet<SoftwareState> = [SoftwareState::label("fw")].into();
    if rng.gen_bool(0.3) {
        for _ in 0..rng.gen_range(1..=2) {
            let p = *provers.choose(rng).expect("at least one prover");
            let labels: BTreeSet<SoftwareState> = match rng.gen_range(0..3) {
                0 => [SoftwareState::label("fw2")].into(),
                1 => [SoftwareState::label("fw"), SoftwareState::label("fw2")].into(),
                _ => fw.clone(),
            };
            h.acceptable.push_update(p, TimePoint(rng.gen_range(1..=max_ticks)), labels);
        }
    }
    h.group_threshold = rng.gen_range(0..=k);
    let grouped = rng.gen_range(0..3);

    let mut times: Vec<u64> = (0..rng.gen_range(3..=30)).map(|_| rng.gen_range(0..=max_ticks)).collect();
    times.sort_unstable();
    let mut events = Vec::new();
    let mut captured: BTreeMap<DeviceId, bool> = BTreeMap::new();
    for at in times {
        let p = *provers.choose(rng).expect("at least one prover");
        let kind = match rng.gen_range(0..10) {
            0..=2 => EventKind::Compromise { prover: p },
            3 if adversary.msw => EventKind::Restore { prover: p },
            4 if adversary.pi => {
                if captured.remove(&p).is_some() {
                    EventKind::CaptureEnd { prover: p }
                } else {
                    captured.insert(p, true);
                    EventKind::CaptureBegin {
                        prover: p,
                        write: rng.gen_bool(0.5),
                    }
                }
            }
            5..=8 => claim(rng, &provers, at, grouped),
            _ => EventKind::MeasureTaken {
                prover: p,
                state: SoftwareState::label("fw"),
            },
        };
        events.push(Event::new(TimePoint(at), kind));
    }
    Trace { header: h, events }
}

fn claim(rng: &mut impl Rng, provers: &[DeviceId], at: u64, grouped: u32) -> EventKind {
    let interval = interval(rng, at);
    let group = match grouped {
        0 => false,
        1 => true,
        _ => rng.gen_bool(0.5),
    };
    if group {
        let mut members: Vec<DeviceId> = provers.to_vec();
        members.shuffle(rng);
        members.truncate(rng.gen_range(1..=members.len()));
        let mut groups = Vec::new();
        while !members.is_empty() {
            let n = rng.gen_range(1..=members.len());
            let g: BTreeSet<DeviceId> = members.drain(..n).collect();
            groups.push(GroupStatus {
                members: g,
                status: status(rng),
            });
        }
        EventKind::ClaimGroup {
            relying_party: V,
            groups,
            interval,
            counter: 1,
        }
    } else {
        let mut statuses = BTreeMap::new();
        for p in provers {
            if rng.gen_bool(0.8) {
                statuses.insert(*p, status(rng));
            }
        }
        EventKind::ClaimIndividual {
            relying_party: V,
            statuses,
            interval,
            counter: 1,
        }
    }
}
