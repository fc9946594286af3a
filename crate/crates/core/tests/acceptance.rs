//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

mod common;

use common::{random_trace, scenarios_dir, V};
use crasim::explorer::{explore_random, random_runs, Exploration, Explorer, Strategy};
use crasim::model::{DeviceId, EventKind, SoftwareState, Status, TimePoint, Trace};
use crasim::report::ReportSummary;
use crasim::scenario::Scenario;
use crasim::simnet::{self, Choice};
use crasim::symcrypto::Term;
use crasim::tracecheck::{
    check, check_all, ordering_violations, oracle_check_group, oracle_check_individual, GroupSpec, Outcome,
    PropertyId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::time::Instant;

type Check = Result<String, String>;

fn err(e: impl Display) -> String {
    e.to_string()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn strategy() -> Strategy {
    Strategy::Parallel {
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
    }
}

fn load(file: &str) -> Result<Vec<Scenario>, String> {
    Scenario::load_all(&scenarios_dir().join(file)).map_err(err)
}

fn variant<'a>(all: &'a [Scenario], name: &str) -> Result<&'a Scenario, String> {
    all.iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| format!("missing variant {name}"))
}

fn spec(t: &Trace) -> GroupSpec {
    GroupSpec::with_threshold(t.header.group_threshold)
}

fn outcome(t: &Trace, p: PropertyId) -> Result<Outcome, String> {
    Ok(check(t, p, &spec(t)).map_err(err)?.result)
}

fn adversary_decisions(t: &Trace) -> Result<usize, String> {
    let mut n = 0;
    for s in &t.header.schedule {
        n += !Choice::parse(s, &t.header)?.is_benign() as usize;
    }
    Ok(n)
}

/// Traces seen by criteria 1 to 6 and how many broke the strength ordering.
#[derive(Default)]
struct Tally {
    traces: u64,
    ordering: u64,
    reference: Vec<(String, Exploration)>,
}

impl Tally {
    fn exploration(&mut self, ex: &Exploration) {
        self.traces += ex.traces;
        self.ordering += ex.ordering_violations;
    }

    fn trace(&mut self, t: &Trace) -> Result<(), String> {
        let verdicts = check_all(t, &PropertyId::ALL).map_err(err)?;
        self.traces += 1;
        self.ordering += !ordering_violations(&verdicts).is_empty() as u64;
        Ok(())
    }
}

fn reference_reproduction(tally: &mut Tally) -> Check {
    let start = Instant::now();
    let scenarios = load("simpleplus_paper.scn")?;
    ensure(scenarios.len() == 3, || format!("expected 3 topologies, got {}", scenarios.len()))?;
    let mut total = 0;
    let mut witnesses: BTreeMap<PropertyId, Vec<(String, usize)>> = BTreeMap::new();
    for s in &scenarios {
        ensure(s.file.rounds <= 2, || format!("{} runs {} rounds", s.name(), s.file.rounds))?;
        let ex = Explorer::new(s, *s.bounds()).map_err(err)?;
        let mut r = ex.explore(&PropertyId::ALL, strategy()).map_err(err)?;
        tally.exploration(&r);
        total += r.traces;
        for p in [PropertyId::IAW, PropertyId::GAW] {
            let st = r.stats[&p];
            ensure(st.holds == r.traces, || {
                format!("{p} on {}: {} of {} traces hold", s.name(), st.holds, r.traces)
            })?;
        }
        ex.minimize_witnesses(&mut r).map_err(err)?;
        for p in [PropertyId::IAS, PropertyId::GAS] {
            if let Some(w) = r.witnesses.get(&p) {
                ensure(outcome(w, p)? == Outcome::Violated, || format!("minimized {p} witness no longer violates"))?;
                witnesses
                    .entry(p)
                    .or_default()
                    .push((s.name().to_string(), adversary_decisions(w)?));
            }
        }
        tally.reference.push((s.name().to_string(), r));
    }
    for p in [PropertyId::IAS, PropertyId::GAS] {
        ensure(witnesses.contains_key(&p), || format!("no counterexample for {p}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1800.0, || format!("exploration took {secs:.0}s"))?;
    let smallest = |p: PropertyId| witnesses[&p].iter().map(|(_, n)| *n).min().unwrap_or(0);
    Ok(format!(
        "{total} traces over {} topologies; IAW and GAW hold on all; IAS and GAS minimized to {} and {} adversary decisions; {secs:.1}s",
        scenarios.len(),
        smallest(PropertyId::IAS),
        smallest(PropertyId::GAS),
    ))
}

fn initiator_authentication(tally: &mut Tally) -> Check {
    ensure(!tally.reference.is_empty(), || "criterion 1 produced no explorations".into())?;
    for (name, r) in &tally.reference {
        let st = r.stats[&PropertyId::IA];
        ensure(st.holds == r.traces, || format!("IA on {name}: {} of {} hold", st.holds, r.traces))?;
    }
    let all = load("simpleplus_counterless.scn")?;
    let s = &all[0];
    ensure(!s.file.counters, || "counterless scenario uses counters".into())?;
    let ex = Explorer::new(s, *s.bounds()).map_err(err)?;
    let mut r = ex.explore(&[PropertyId::IA], Strategy::Sequential).map_err(err)?;
    tally.exploration(&r);
    ex.minimize_witnesses(&mut r).map_err(err)?;
    let w = r
        .witnesses
        .get(&PropertyId::IA)
        .ok_or("counterless variant never violates IA")?;
    ensure(outcome(w, PropertyId::IA)? == Outcome::Violated, || "witness does not violate IA".into())?;
    let sent: BTreeSet<&Term> = w
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::MsgSend { src, term, .. } if *src == V => Some(term),
            _ => None,
        })
        .collect();
    let replayed = w.events.iter().any(|e| matches!(&e.kind, EventKind::Inject { term, .. } if sent.contains(term)));
    ensure(replayed, || "IA witness does not replay a verifier message".into())?;
    let traces: u64 = tally.reference.iter().map(|(_, r)| r.traces).sum();
    Ok(format!(
        "IA holds on {traces} counter-protected traces; counterless variant violated in {} of {} traces, witness replays a request ({} adversary decision)",
        r.stats[&PropertyId::IA].violated,
        r.traces,
        adversary_decisions(w)?
    ))
}

fn health_timeline(t: &Trace) -> Vec<(TimePoint, String)> {
    t.events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::Compromise { .. } | EventKind::Restore { .. }))
        .map(|e| (e.at, format!("{:?}", e.kind)))
        .collect()
}

fn synchronicity_separation(tally: &mut Tally) -> Check {
    let all = load("malware_hop.scn")?;
    let sp = variant(&all, "malware_hop/simpleplus")?;
    let t = simnet::run(sp, sp.horizon).map_err(err)?;
    tally.trace(&t)?;
    let measured_valid = t.events.iter().filter(|e| matches!(&e.kind, EventKind::MeasureTaken { state, .. } if !state.is_compromised())).count();
    ensure(measured_valid == 2, || format!("{measured_valid} valid measurements, expected 2"))?;
    let iaw = outcome(&t, PropertyId::IAW)?;
    let isw = outcome(&t, PropertyId::ISW)?;
    ensure(iaw == Outcome::Holds && isw == Outcome::Violated, || format!("IAW {iaw}, ISW {isw}"))?;

    let sap = variant(&all, "malware_hop/sap")?;
    let u = simnet::run(sap, sap.horizon).map_err(err)?;
    tally.trace(&u)?;
    ensure(health_timeline(&t) == health_timeline(&u), || "SAP run follows a different health timeline".into())?;
    let gsw = outcome(&u, PropertyId::GSW)?;
    ensure(gsw == Outcome::Holds, || format!("SAP GSW {gsw}"))?;
    let times: BTreeSet<TimePoint> = u
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::MeasureTaken { .. }))
        .map(|e| e.at)
        .collect();
    let measured: usize = u.events.iter().filter(|e| matches!(e.kind, EventKind::MeasureTaken { .. })).count();
    let claim = u
        .events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::ClaimGroup { interval, groups, .. } => Some((*interval, groups.clone())),
            _ => None,
        })
        .ok_or("SAP made no claim")?;
    let t_star = *times.iter().next().ok_or("SAP measured nothing")?;
    ensure(times.len() == 1 && measured == u.header.provers.len(), || {
        format!("measurements at {times:?}, {measured} in total")
    })?;
    ensure(claim.0.contains(t_star), || format!("t* = {t_star} outside claim interval"))?;
    Ok(format!(
        "SIMPLE+: IAW Holds, ISW Violated; SAP: all {measured} measurements at t* = {t_star}, group claimed {:?}, GSW Holds",
        claim.1[0].status
    ))
}

struct SedaReport {
    sender: String,
    counter: u64,
    state: String,
    ok: u64,
    total: u64,
}

fn seda_report(term: &Term) -> Option<SedaReport> {
    let (body, _) = term.as_pair()?;
    let (tag, rest) = body.as_pair()?;
    (tag.as_atom()? == "srep").then_some(())?;
    let (sender, rest) = rest.as_pair()?;
    let (counter, rest) = rest.as_pair()?;
    let (state, rest) = rest.as_pair()?;
    let (ok, total) = rest.as_pair()?;
    Some(SedaReport {
        sender: sender.as_atom()?.to_string(),
        counter: counter.as_counter()?,
        state: state.as_atom()?.to_string(),
        ok: ok.as_counter()?,
        total: total.as_counter()?,
    })
}

/// Checks each group claim against the s-1 rule, recomputing the expected
/// counts from the measurements of its round. Returns the claimed statuses.
fn seda_claims_follow_rule(t: &Trace) -> Result<Vec<Status>, String> {
    let s = t.header.provers.len() as u64;
    let root_name = t.header.device_name(DeviceId(1));
    let mut measured: BTreeMap<DeviceId, SoftwareState> = BTreeMap::new();
    let mut root_report: Option<SedaReport> = None;
    let mut out = Vec::new();
    for e in &t.events {
        match &e.kind {
            EventKind::AttStart { .. } => {
                measured.clear();
                root_report = None;
            }
            EventKind::MeasureTaken { prover, state } => {
                measured.insert(*prover, state.clone());
            }
            EventKind::MsgRecv { dst, term } if *dst == V => {
                if let Some(r) = seda_report(term).filter(|r| r.sender == root_name) {
                    root_report = Some(r);
                }
            }
            EventKind::ClaimGroup { groups, counter, .. } => {
                let r = root_report.take().ok_or("claim without a root report")?;
                ensure(r.counter == *counter, || "root report from another round".into())?;
                let acceptable = |st: &SoftwareState| *st == SoftwareState::label("fw");
                let ok = measured
                    .iter()
                    .filter(|(p, st)| p.0 != 1 && acceptable(st))
                    .count() as u64;
                ensure(r.ok == ok && r.total == s - 1, || {
                    format!("round {counter}: report ({}, {}), expected ({ok}, {})", r.ok, r.total, s - 1)
                })?;
                let healthy = r.state == "fw" && r.ok == s - 1 && r.total == s - 1;
                let status = if healthy { Status::Healthy } else { Status::Unhealthy };
                ensure(groups.len() == 1 && groups[0].members.len() as u64 == s, || "claim does not cover the swarm".into())?;
                ensure(groups[0].status == status, || {
                    format!("round {counter}: claimed {:?}, rule gives {status:?}", groups[0].status)
                })?;
                out.push(status);
            }
            _ => {}
        }
    }
    Ok(out)
}

fn group_semantics(tally: &mut Tally) -> Check {
    let all = load("seda_group.scn")?;
    let honest = variant(&all, "seda_group/honest")?;
    let t = simnet::run(honest, honest.horizon).map_err(err)?;
    tally.trace(&t)?;
    let h = seda_claims_follow_rule(&t)?;
    ensure(!h.is_empty() && h.iter().all(|s| *s == Status::Healthy), || format!("honest claims {h:?}"))?;

    let bad = variant(&all, "seda_group/one_compromised")?;
    let u = simnet::run(bad, bad.horizon).map_err(err)?;
    tally.trace(&u)?;
    let b = seda_claims_follow_rule(&u)?;
    ensure(b.contains(&Status::Unhealthy), || format!("one-compromised claims {b:?}"))?;
    for tr in [&t, &u] {
        let gaw = outcome(tr, PropertyId::GAW)?;
        ensure(gaw == Outcome::Holds, || format!("scripted run GAW {gaw}"))?;
    }

    let random = variant(&all, "seda_group/random")?;
    let n = 1000;
    let ex = explore_random(random, &PropertyId::ALL, n, 0x5eda).map_err(err)?;
    tally.exploration(&ex);
    let gaw = ex.stats[&PropertyId::GAW];
    ensure(gaw.violated == 0 && gaw.holds == n as u64, || format!("GAW over {n} runs: {gaw:?}"))?;
    Ok(format!(
        "honest rounds {h:?} and one-compromised rounds {b:?} follow the s-1 rule; GAW holds on {n}/{n} random sw+dy runs (GAS violated on {})",
        ex.stats[&PropertyId::GAS].violated
    ))
}

fn defense_scenario(protocol: &str, t_attack: u64, horizon: u64, defenses: &str, script: &str, rounds: u32) -> Result<Scenario, String> {
    Scenario::parse(&format!(
        r#"
version = 1
name = "defense"
protocol = "{protocol}"
horizon = {horizon}
rounds = {rounds}
t_attack = {t_attack}
adversary = "pi"
[devices]
provers = ["P0", "P1"]
[defenses]
{defenses}
{script}
"#
    ))
    .map_err(err)
}

fn capture_script(at: u64, until: u64, write: bool) -> String {
    format!("[[script]]\naction = \"capture\"\nat = {at}\nprover = \"P0\"\nuntil = {until}\nwrite = {write}\n")
}

fn capture_defenses(tally: &mut Tally) -> Check {
    let p0 = DeviceId(1);
    let mut rng = ChaCha8Rng::seed_from_u64(0xdefe);
    let mut flagged = 0;
    let runs = 200;
    for _ in 0..runs {
        let t_attack = rng.gen_range(3..=12);
        let period = rng.gen_range(1..=t_attack);
        let begin = rng.gen_range(1..=40);
        let end = begin + rng.gen_range(t_attack..=3 * t_attack);
        let s = defense_scenario(
            "none",
            t_attack,
            end + 2 * t_attack + period + 5,
            &format!("heartbeat = {period}"),
            &capture_script(begin, end, rng.gen_bool(0.5)),
            1,
        )?;
        let t = simnet::run(&s, s.horizon).map_err(err)?;
        tally.trace(&t)?;
        let latency = s.file.latency;
        let last_seen = t
            .events
            .iter()
            .filter(|e| e.at.0 <= begin + latency && matches!(e.kind, EventKind::HeartbeatRecv { prover, .. } if prover == p0))
            .map(|e| e.at.0)
            .max()
            .unwrap_or(latency);
        let flag = t
            .events
            .iter()
            .find(|e| matches!(e.kind, EventKind::PhysicalFlag { device, .. } if device == p0))
            .map(|e| e.at.0);
        let case = format!("T_attack {t_attack}, period {period}, capture [{begin}, {end})");
        let f = flag.ok_or_else(|| format!("{case}: never flagged"))?;
        ensure(f > last_seen + t_attack && f <= last_seen + t_attack + period, || {
            format!("{case}: last heartbeat at {last_seen}, flagged at {f}")
        })?;
        flagged += 1;
    }

    let mut quiet_ticks = 0;
    for (t_attack, period, su) in [(5, 5, false), (5, 5, true), (8, 3, true), (12, 12, true), (3, 1, false)] {
        let defenses = if su {
            format!("heartbeat = {period}\nsecret_update = {t_attack}")
        } else {
            format!("heartbeat = {period}")
        };
        let s = defense_scenario("none", t_attack, 10_000, &defenses, "", 1)?;
        let t = simnet::run(&s, s.horizon).map_err(err)?;
        tally.trace(&t)?;
        ensure(t.end_time().is_some_and(|e| e.0 >= 9_990), || "capture-free run ended early".into())?;
        let false_flags = t.events.iter().filter(|e| matches!(e.kind, EventKind::PhysicalFlag { .. })).count();
        ensure(false_flags == 0, || format!("{false_flags} false flags with period {period}"))?;
        quiet_ticks += s.horizon.0;
    }

    let su_runs = 100;
    for _ in 0..su_runs {
        let t_attack = rng.gen_range(3..=8);
        let epoch = rng.gen_range(1..=t_attack);
        let begin = rng.gen_range(2..=20);
        let end = begin + rng.gen_range(t_attack..=2 * t_attack);
        let rounds = (end / 3 + 4) as u32;
        let s = defense_scenario(
            "simpleplus",
            t_attack,
            end + 30,
            &format!("secret_update = {epoch}\nheartbeat = {t_attack}"),
            &capture_script(begin, end, rng.gen_bool(0.5)),
            rounds,
        )?;
        let t = simnet::run(&s, s.horizon).map_err(err)?;
        tally.trace(&t)?;
        let case = format!("epoch {epoch}, capture [{begin}, {end})");
        let rotated = t
            .events
            .iter()
            .any(|e| (begin..end).contains(&e.at.0) && matches!(e.kind, EventKind::EpochKeyUpdate { .. }));
        ensure(rotated, || format!("{case}: no key update during capture"))?;
        let later_claims: Vec<Status> = t
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ClaimIndividual { statuses, interval, .. } if interval.start.0 >= end => {
                    statuses.get(&p0).copied()
                }
                _ => None,
            })
            .collect();
        ensure(!later_claims.is_empty(), || format!("{case}: no round after the capture"))?;
        ensure(later_claims.iter().all(|s| *s != Status::Healthy), || format!("{case}: P0 accepted after capture"))?;
        let sent_after = t
            .events
            .iter()
            .any(|e| e.at.0 >= end && matches!(&e.kind, EventKind::MsgSend { src, .. } if *src == p0));
        let accepted_after = t
            .events
            .iter()
            .any(|e| e.at.0 >= end && matches!(e.kind, EventKind::HeartbeatRecv { prover, .. } if prover == p0));
        ensure(sent_after && !accepted_after, || {
            format!("{case}: sent after capture {sent_after}, accepted {accepted_after}")
        })?;
    }
    Ok(format!(
        "{flagged}/{runs} captures flagged within one period; 0 false flags over {quiet_ticks} capture-free ticks; stale device rejected in {su_runs}/{su_runs} secret-update runs"
    ))
}

fn oracle_equivalence(tally: &mut Tally) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1e);
    let n = 10_000;
    let mut checks = 0;
    let mut violated = 0;
    for i in 0..n {
        let t = random_trace(&mut rng, 4, 60);
        tally.trace(&t)?;
        let sp = spec(&t);
        for sync in [false, true] {
            for strong in [false, true] {
                let pairs = [
                    (
                        PropertyId::individual(sync, strong),
                        oracle_check_individual(&t, sync, strong).map_err(err)?,
                    ),
                    (PropertyId::group(sync, strong), oracle_check_group(&t, &sp, sync, strong).map_err(err)?),
                ];
                for (p, expected) in pairs {
                    let got = check(&t, p, &sp).map_err(err)?;
                    ensure(got.result == expected.result, || {
                        format!("trace {i} {p}: checker {}, oracle {}", got.result, expected.result)
                    })?;
                    if let (Some(w), Some(o)) = (&got.witness, &expected.witness) {
                        ensure(o.iter().all(|c| w.contains(c)), || format!("trace {i} {p}: witness claims {w:?} vs {o:?}"))?;
                    }
                    violated += got.is_violated() as usize;
                    checks += 1;
                }
            }
        }
    }
    Ok(format!("{checks} checks on {n} random traces agree ({violated} violations), same violating claim in every case"))
}

fn strength_ordering(tally: &Tally) -> Check {
    ensure(tally.ordering == 0, || format!("{} of {} traces break the ordering", tally.ordering, tally.traces))?;
    Ok(format!("0 ordering violations over {} traces", tally.traces))
}

fn summary(s: &Scenario, ex: &Exploration) -> String {
    let mut r = ReportSummary::default();
    r.add(s.name(), ex, &s.properties, &s.expect, &BTreeMap::new());
    r.to_json()
}

fn determinism() -> Check {
    let files = ["simpleplus_paper.scn", "simpleplus_counterless.scn", "malware_hop.scn", "seda_group.scn"];
    let mut scenarios = Vec::new();
    for f in files {
        scenarios.extend(load(f)?);
    }
    let counterless = load("simpleplus_counterless.scn")?.remove(0);
    let seda = load("seda_group.scn")?;
    let random = variant(&seda, "seda_group/random")?;
    let produce = |strategy: Strategy| -> Result<Vec<String>, String> {
        let mut out = Vec::new();
        for s in &scenarios {
            out.push(simnet::run(s, s.horizon).map_err(err)?.to_jsonl());
        }
        for t in random_runs(random, 25, 11).map_err(err)? {
            out.push(t.to_jsonl());
        }
        let ex = Explorer::new(&counterless, *counterless.bounds()).map_err(err)?;
        out.push(summary(&counterless, &ex.explore(&counterless.properties, strategy).map_err(err)?));
        out.push(summary(random, &explore_random(random, &random.properties, 50, 11).map_err(err)?));
        Ok(out)
    };
    let reps = 20;
    let first = produce(Strategy::Sequential)?;
    for rep in 1..reps {
        let strategy = if rep % 2 == 0 { Strategy::Sequential } else { strategy() };
        let again = produce(strategy)?;
        ensure(again == first, || {
            let i = again.iter().zip(&first).position(|(a, b)| a != b).unwrap_or(0);
            format!("repetition {rep} differs in artifact {i}")
        })?;
    }
    let bytes: usize = first.iter().map(String::len).sum();
    Ok(format!("{} artifacts ({bytes} bytes) byte-identical across {reps} repetitions", first.len()))
}

fn main() {
    let mut tally = Tally::default();
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    type Stage = (u32, &'static str, fn(&mut Tally) -> Check);
    let staged: [Stage; 6] = [
        (1, "reference result reproduction", reference_reproduction),
        (2, "initiator authentication", initiator_authentication),
        (3, "synchronicity separation", synchronicity_separation),
        (4, "group semantics", group_semantics),
        (5, "physical-capture defenses", capture_defenses),
        (6, "oracle equivalence", oracle_equivalence),
    ];
    for (id, name, f) in staged {
        let start = Instant::now();
        let r = f(&mut tally);
        eprintln!("criterion {id} finished in {:.1}s", start.elapsed().as_secs_f64());
        results.push((id, name, r));
    }
    results.push((7, "strength ordering", strength_ordering(&tally)));
    results.push((8, "determinism", determinism()));

    let mut failed = 0;
    for (id, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
