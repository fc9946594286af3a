mod common;

use common::{header, random_trace, V};
use crasim::adversary::AdversaryModel;
use crasim::model::{DeviceId, Event, EventKind, GroupStatus, Interval, Status, TimePoint, Trace};
use crasim::symcrypto::Term;
use crasim::tracecheck::{
    check, check_all, classify_qosa, ordering_violations, oracle_check_group, oracle_check_individual, GroupSpec,
    Outcome, PropertyId, Qosa,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

const P0: DeviceId = DeviceId(1);
const P1: DeviceId = DeviceId(2);

fn ev(at: u64, kind: EventKind) -> Event {
    Event::new(TimePoint(at), kind)
}

fn iv(a: u64, b: u64) -> Interval {
    Interval::new(TimePoint(a), TimePoint(b)).unwrap()
}

fn individual(at: u64, interval: Interval, statuses: &[(DeviceId, Status)]) -> Event {
    ev(
        at,
        EventKind::ClaimIndividual {
            relying_party: V,
            statuses: statuses.iter().copied().collect(),
            interval,
            counter: 1,
        },
    )
}

fn group(at: u64, interval: Interval, groups: Vec<(Vec<DeviceId>, Status)>) -> Event {
    ev(
        at,
        EventKind::ClaimGroup {
            relying_party: V,
            groups: groups
                .into_iter()
                .map(|(m, status)| GroupStatus {
                    members: m.into_iter().collect(),
                    status,
                })
                .collect(),
            interval,
            counter: 1,
        },
    )
}

fn trace(k: u32, adversary: AdversaryModel, events: Vec<Event>) -> Trace {
    Trace {
        header: header(k, adversary),
        events,
    }
}

fn outcome(t: &Trace, p: PropertyId, threshold: u32) -> Outcome {
    check(t, p, &GroupSpec::with_threshold(threshold)).unwrap().result
}

fn request(c: u64) -> Term {
    format!("pair('req', ctr({c}))").parse().unwrap()
}

#[test]
fn ia_matches_requests_injectively() {
    let send = ev(
        1,
        EventKind::SendRequest {
            initiator: V,
            prover: P0,
            request: request(1),
        },
    );
    let done = ev(
        2,
        EventKind::RunComplete {
            prover: P0,
            initiator: V,
            request: request(1),
        },
    );
    let once = trace(1, AdversaryModel::none(), vec![send.clone(), done.clone()]);
    assert_eq!(outcome(&once, PropertyId::IA, 0), Outcome::Holds);
    let mut again = done.clone();
    again.at = TimePoint(4);
    let twice = trace(1, AdversaryModel::none(), vec![send, done, again]);
    let v = check(&twice, PropertyId::IA, &GroupSpec::default()).unwrap();
    assert_eq!(v.result, Outcome::Violated);
    assert_eq!(v.witness, Some(vec![0, 1, 2]));
}

#[test]
fn ia_is_inapplicable_without_requests() {
    let mut t = trace(1, AdversaryModel::none(), vec![individual(3, iv(1, 2), &[(P0, Status::Healthy)])]);
    t.header.interactive = false;
    assert_eq!(outcome(&t, PropertyId::IA, 0), Outcome::Inapplicable);
}

#[test]
fn all_valid_and_all_healthy_holds_everywhere() {
    let t = trace(
        2,
        AdversaryModel::software(),
        vec![individual(5, iv(1, 4), &[(P0, Status::Healthy), (P1, Status::Healthy)])],
    );
    for p in [PropertyId::IAW, PropertyId::IAS, PropertyId::ISW, PropertyId::ISS] {
        assert_eq!(outcome(&t, p, 0), Outcome::Holds, "{p}");
    }
}

#[test]
fn dropped_report_breaks_only_strong() {
    let t = trace(
        2,
        AdversaryModel::software().with_dy(),
        vec![individual(5, iv(1, 4), &[(P0, Status::Healthy), (P1, Status::Unhealthy)])],
    );
    assert_eq!(outcome(&t, PropertyId::IAW, 0), Outcome::Holds);
    assert_eq!(outcome(&t, PropertyId::ISW, 0), Outcome::Holds);
    assert_eq!(outcome(&t, PropertyId::IAS, 0), Outcome::Violated);
    assert_eq!(outcome(&t, PropertyId::ISS, 0), Outcome::Violated);
}

#[test]
fn malware_hop_separates_async_from_sync() {
    let events = vec![
        ev(0, EventKind::Compromise { prover: P0 }),
        ev(3, EventKind::Restore { prover: P0 }),
        ev(3, EventKind::Compromise { prover: P1 }),
        individual(7, iv(1, 6), &[(P0, Status::Healthy), (P1, Status::Healthy)]),
    ];
    let t = trace(2, AdversaryModel::mobile(), events);
    assert_eq!(outcome(&t, PropertyId::IAW, 0), Outcome::Holds);
    assert_eq!(outcome(&t, PropertyId::ISW, 0), Outcome::Violated);
}

#[test]
fn compromised_through_interval_violates_weak() {
    let events = vec![
        ev(0, EventKind::Compromise { prover: P0 }),
        individual(5, iv(1, 4), &[(P0, Status::Healthy)]),
    ];
    let t = trace(1, AdversaryModel::software(), events);
    let v = check(&t, PropertyId::IAW, &GroupSpec::default()).unwrap();
    assert_eq!(v.result, Outcome::Violated);
    assert_eq!(v.witness, Some(vec![0, 1]));
}

#[test]
fn group_threshold_relaxes_healthy_claims() {
    let events = vec![
        ev(0, EventKind::Compromise { prover: P1 }),
        group(5, iv(1, 4), vec![(vec![P0, P1], Status::Healthy)]),
    ];
    let t = trace(2, AdversaryModel::software(), events);
    assert_eq!(outcome(&t, PropertyId::GAW, 1), Outcome::Holds);
    assert_eq!(outcome(&t, PropertyId::GAW, 0), Outcome::Violated);
}

#[test]
fn group_unhealthy_claim_over_healthy_members() {
    let t = trace(
        2,
        AdversaryModel::software().with_dy(),
        vec![group(5, iv(1, 4), vec![(vec![P0, P1], Status::Unhealthy)])],
    );
    assert_eq!(outcome(&t, PropertyId::GAW, 0), Outcome::Holds);
    assert_eq!(outcome(&t, PropertyId::GAS, 0), Outcome::Violated);
}

#[test]
fn qosa_follows_claim_granularity() {
    let list = trace(2, AdversaryModel::none(), vec![individual(2, iv(1, 1), &[(P0, Status::Healthy)])]);
    assert_eq!(classify_qosa(&list).unwrap(), Qosa::List);
    let binary = trace(2, AdversaryModel::none(), vec![group(2, iv(1, 1), vec![(vec![P0, P1], Status::Healthy)])]);
    assert_eq!(classify_qosa(&binary).unwrap(), Qosa::Binary);
    let p = |i| DeviceId(i);
    let halves = trace(
        4,
        AdversaryModel::none(),
        vec![group(
            2,
            iv(1, 1),
            vec![(vec![p(1), p(2)], Status::Healthy), (vec![p(3), p(4)], Status::Unhealthy)],
        )],
    );
    assert_eq!(classify_qosa(&halves).unwrap(), Qosa::Intermediate);
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn shape(p: PropertyId) -> (bool, bool, bool) {
    p.shape().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 300,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn checker_agrees_with_oracle(seed in any::<u64>()) {
        let t = random_trace(&mut rng(seed), 3, 25);
        let spec = GroupSpec::with_threshold(t.header.group_threshold);
        for p in PropertyId::ALL.into_iter().filter(|p| p.shape().is_some()) {
            let (grp, sync, strong) = shape(p);
            let fast = check(&t, p, &spec).unwrap();
            let slow = if grp {
                oracle_check_group(&t, &spec, sync, strong).unwrap()
            } else {
                oracle_check_individual(&t, sync, strong).unwrap()
            };
            prop_assert_eq!(fast.result, slow.result, "{}", p);
        }
    }

    #[test]
    fn strength_ordering_holds(seed in any::<u64>()) {
        let t = random_trace(&mut rng(seed), 4, 30);
        let verdicts = check_all(&t, &PropertyId::ALL).unwrap();
        prop_assert!(ordering_violations(&verdicts).is_empty());
    }

    #[test]
    fn witnesses_recheck_as_violations(seed in any::<u64>()) {
        let t = random_trace(&mut rng(seed), 3, 25);
        let spec = GroupSpec::with_threshold(t.header.group_threshold);
        for p in PropertyId::ALL {
            let v = check(&t, p, &spec).unwrap();
            if let Some(w) = v.witness {
                let sub = t.restricted_to(&w);
                prop_assert_eq!(check(&sub, p, &spec).unwrap().result, Outcome::Violated, "{}", p);
            }
        }
    }

    #[test]
    fn qosa_ignores_statuses(seed in any::<u64>()) {
        let t = random_trace(&mut rng(seed), 4, 20);
        let mut flipped = t.clone();
        for e in &mut flipped.events {
            match &mut e.kind {
                EventKind::ClaimIndividual { statuses, .. } => {
                    statuses.values_mut().for_each(|s| *s = Status::Healthy);
                }
                EventKind::ClaimGroup { groups, .. } => {
                    groups.iter_mut().for_each(|g| g.status = Status::Unhealthy);
                }
                _ => {}
            }
        }
        prop_assert_eq!(classify_qosa(&t).ok(), classify_qosa(&flipped).ok());
    }

    #[test]
    fn random_traces_survive_jsonl(seed in any::<u64>()) {
        let t = random_trace(&mut rng(seed), 4, 40);
        prop_assert_eq!(Trace::from_jsonl(&t.to_jsonl()).unwrap(), t);
    }

    #[test]
    fn healthy_claims_on_untouched_provers_hold(seed in any::<u64>(), k in 1u32..4) {
        let provers: Vec<DeviceId> = (1..=k).map(DeviceId).collect();
        let mut r = rng(seed);
        let t = random_trace(&mut r, k, 10);
        let mut clean = trace(k, AdversaryModel::software(), Vec::new());
        clean.header.group_threshold = 0;
        let statuses: BTreeMap<DeviceId, Status> = provers.iter().map(|p| (*p, Status::Healthy)).collect();
        let members: BTreeSet<DeviceId> = provers.iter().copied().collect();
        let end = t.end_time().map_or(1, |e| e.tick().max(1));
        clean.events.push(individual(end, iv(0, end), &statuses.into_iter().collect::<Vec<_>>()));
        clean.events.push(group(end, iv(0, end), vec![(members.into_iter().collect(), Status::Healthy)]));
        for v in check_all(&clean, &PropertyId::ALL).unwrap() {
            prop_assert_ne!(v.result, Outcome::Violated, "{}", v.property);
        }
    }
}
