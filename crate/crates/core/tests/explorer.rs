mod common;

use common::scenarios_dir;
use crasim::explorer::{enumerate, explore_random, random_runs, random_runs_with_bias, ExploreError, Explorer, Strategy};
use crasim::model::Trace;
use crasim::scenario::Scenario;
use crasim::simnet::{self, Choice};
use crasim::tracecheck::{check, GroupSpec, Outcome, PropertyId};

fn scenario(body: &str) -> Scenario {
    Scenario::parse(&format!("version = 1\nname = \"t\"\n{body}")).unwrap()
}

fn counterless() -> Scenario {
    Scenario::load_all(&scenarios_dir().join("simpleplus_counterless.scn"))
        .unwrap()
        .remove(0)
}

fn interventions(t: &Trace) -> usize {
    t.header
        .schedule
        .iter()
        .filter(|s| !Choice::parse(s, &t.header).unwrap().is_benign())
        .count()
}

fn violates(t: &Trace, p: PropertyId) -> bool {
    check(t, p, &GroupSpec::with_threshold(t.header.group_threshold)).unwrap().result == Outcome::Violated
}

#[test]
fn without_adversary_there_is_one_trace() {
    let s = scenario("protocol = \"simpleplus\"\n[devices]\nprovers = [\"P0\", \"P1\"]\n");
    let all = enumerate(&s, *s.bounds()).unwrap();
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].events, simnet::run(&s, s.horizon).unwrap().events);
}

#[test]
fn two_droppable_messages_give_four_traces() {
    let s = scenario(
        "protocol = \"none\"\nhorizon = 5\nt_attack = 10\nadversary = \"dy\"\n[devices]\nprovers = [\"P0\"]\n[network]\ndrop = true\n[defenses]\nheartbeat = 2\n",
    );
    let all = enumerate(&s, *s.bounds()).unwrap();
    assert_eq!(all.len(), 4);
    let mut drops: Vec<usize> = all.iter().map(interventions).collect();
    drops.sort_unstable();
    assert_eq!(drops, vec![0, 1, 1, 2]);
}

#[test]
fn intervention_budget_bounds_schedules() {
    let s = scenario(
        "protocol = \"none\"\nhorizon = 7\nt_attack = 10\nadversary = \"dy\"\n[devices]\nprovers = [\"P0\"]\n[network]\ndrop = true\n[defenses]\nheartbeat = 2\n",
    );
    // three heartbeats: every subset of at most `budget` drops
    for (budget, expected) in [(0, 1), (1, 4), (2, 7), (3, 8)] {
        let mut b = *s.bounds();
        b.max_interventions = budget;
        let all = enumerate(&s, b).unwrap();
        assert_eq!(all.len(), expected, "budget {budget}");
        assert!(all.iter().all(|t| interventions(t) <= budget as usize));
    }
}

#[test]
fn one_benign_random_run_is_the_honest_run() {
    let s = scenario("protocol = \"seda\"\n[devices]\nprovers = [\"P0\", \"P1\"]\n");
    let runs = random_runs(&s, 1, 3).unwrap();
    assert_eq!(runs[0].events, simnet::run(&s, s.horizon).unwrap().events);
    let forced = random_runs_with_bias(&counterless(), 3, 3, 1.0).unwrap();
    assert!(forced.iter().all(|t| interventions(t) == 0));
    assert!(matches!(random_runs(&s, 0, 1), Err(ExploreError::InvalidArgument(_))));
}

#[test]
fn sequential_and_parallel_agree() {
    let s = counterless();
    let ex = Explorer::new(&s, *s.bounds()).unwrap();
    let seq = ex.explore(&PropertyId::ALL, Strategy::Sequential).unwrap();
    let par = ex.explore(&PropertyId::ALL, Strategy::Parallel { workers: 3 }).unwrap();
    assert_eq!(seq.traces, par.traces);
    assert_eq!(seq.stats, par.stats);
    assert_eq!(seq.witnesses, par.witnesses);
    assert_eq!(seq.traces as usize, ex.enumerate().unwrap().len());
    assert_eq!(seq.outcome(PropertyId::IA), Some(Outcome::Violated));
    assert_eq!(seq.lint_violations, 0);
}

#[test]
fn minimized_witnesses_stay_violating_and_are_fixpoints() {
    let s = counterless();
    let ex = Explorer::new(&s, *s.bounds()).unwrap();
    let all = ex.enumerate().unwrap();
    let mut seen = 0;
    for t in all.iter().filter(|t| violates(t, PropertyId::IA)).take(25) {
        let m = ex.minimize(t, PropertyId::IA).unwrap();
        assert!(violates(&m, PropertyId::IA));
        assert!(interventions(&m) <= interventions(t));
        assert_eq!(ex.minimize(&m, PropertyId::IA).unwrap(), m);
        seen += 1;
    }
    assert!(seen > 0);
    let honest = &all[0];
    assert!(matches!(ex.minimize(honest, PropertyId::IA), Err(ExploreError::NotAViolation(_))));
}

#[test]
fn minimizing_drops_needless_delays() {
    let s = scenario(
        "protocol = \"simpleplus\"\nadversary = \"dy\"\n[devices]\nprovers = [\"P0\"]\n[network]\ndrop = true\nmax_delay = 2\n",
    );
    let ex = Explorer::new(&s, *s.bounds()).unwrap();
    let noisy = ex
        .enumerate()
        .unwrap()
        .into_iter()
        .find(|t| {
            violates(t, PropertyId::IAS)
                && t.header.schedule.iter().any(|c| c.starts_with("delay"))
                && t.header.schedule.iter().any(|c| c == "drop")
        })
        .expect("a delay-plus-drop witness exists");
    let m = ex.minimize(&noisy, PropertyId::IAS).unwrap();
    assert!(violates(&m, PropertyId::IAS));
    let kept: Vec<&String> = m.header.schedule.iter().filter(|c| c.as_str() != "deliver" && c.as_str() != "pass").collect();
    assert_eq!(kept, vec!["drop"]);
}

#[test]
fn replaying_a_schedule_reproduces_the_trace() {
    let s = counterless();
    let ex = Explorer::new(&s, *s.bounds()).unwrap();
    assert_eq!(ex.replay_indices(&[]).unwrap(), ex.enumerate().unwrap()[0]);
}

#[test]
fn exploration_cap_is_enforced() {
    let s = counterless();
    let ex = Explorer::new(&s, *s.bounds()).unwrap().with_cap(10);
    assert!(ex.estimate().unwrap() > 10.0);
    assert!(matches!(
        ex.explore(&[PropertyId::IA], Strategy::Sequential),
        Err(ExploreError::ExplorationTooLarge { .. })
    ));
}

#[test]
fn bounds_reject_oversized_scenarios() {
    let s = scenario("protocol = \"simpleplus\"\n[devices]\nprovers = [\"P0\", \"P1\", \"P2\"]\n");
    assert!(matches!(Explorer::new(&s, *s.bounds()), Err(ExploreError::OutOfBounds(_))));
}

#[test]
fn seda_random_runs_never_break_group_weak() {
    let s = scenario(
        "protocol = \"seda\"\nadversary = \"sw+dy\"\n[devices]\nprovers = [\"P0\", \"P1\", \"P2\"]\n[network]\ndrop = true\nmax_delay = 3\ninject = true\n",
    );
    let ex = explore_random(&s, &[PropertyId::GAW, PropertyId::GAS], 200, 17).unwrap();
    assert_eq!(ex.traces, 200);
    assert_eq!(ex.stats[&PropertyId::GAW].violated, 0);
    assert_eq!(ex.ordering_violations, 0);
}
