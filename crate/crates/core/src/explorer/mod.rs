//! Bounded exhaustive and randomized exploration of adversary schedules.
//!
//! A schedule is the sequence of option indices taken at the engine's
//! decision points. Exhaustive search walks the decision tree depth first
//! by cloning the engine, visiting schedules in lexicographic order, so the
//! first violating schedule found is the smallest one. Decisions past the
//! intervention budget are forced benign.

mod minimize;

pub use minimize::minimize;

use crate::adversary::lint_capabilities;
use crate::model::Trace;
use crate::scenario::{Scenario, ScenarioError};
use crate::simnet::{Engine, RandomChooser};
use crate::tracecheck::{check_all, ordering_violations, CheckError, Outcome, PropertyId, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_CAP: u64 = 10_000_000;
/// Probability that a random run takes the benign option outright.
pub const RANDOM_BIAS: f64 = 0.5;
const PROBES: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub max_provers: usize,
    pub max_rounds: u32,
    pub max_inject_depth: usize,
    pub max_delay: u64,
    /// Non-benign decisions allowed per schedule.
    pub max_interventions: u32,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_provers: 2,
            max_rounds: 2,
            max_inject_depth: 4,
            max_delay: 3,
            max_interventions: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error("scenario exceeds bounds: {0}")]
    OutOfBounds(String),
    #[error("exploration too large: about {estimate:.0} schedules, cap is {cap}")]
    ExplorationTooLarge { estimate: f64, cap: u64 },
    #[error("{0} is not violated by this trace")]
    NotAViolation(PropertyId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Sequential,
    /// Rayon over a split frontier; sequential when built without `parallel`.
    Parallel { workers: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyStats {
    pub holds: u64,
    pub violated: u64,
    pub inapplicable: u64,
}

impl PropertyStats {
    fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Holds => self.holds += 1,
            Outcome::Violated => self.violated += 1,
            Outcome::Inapplicable => self.inapplicable += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.holds + self.violated + self.inapplicable
    }

    /// Aggregate outcome: violated by some trace, else holds on some, else inapplicable.
    pub fn outcome(&self) -> Outcome {
        if self.violated > 0 {
            Outcome::Violated
        } else if self.holds > 0 {
            Outcome::Holds
        } else {
            Outcome::Inapplicable
        }
    }
}

/// Verdicts aggregated over many traces.
#[derive(Debug, Clone, Default)]
pub struct Exploration {
    pub traces: u64,
    pub stats: BTreeMap<PropertyId, PropertyStats>,
    /// Smallest violating trace per property, in schedule order.
    pub witnesses: BTreeMap<PropertyId, Trace>,
    /// Traces where a stronger property held and a weaker one was violated.
    pub ordering_violations: u64,
    /// Traces the capability linter rejected.
    pub lint_violations: u64,
    pub faults: u64,
    pub truncated: u64,
    pub estimate: f64,
}

impl Exploration {
    fn new(properties: &[PropertyId]) -> Exploration {
        Exploration {
            stats: properties.iter().map(|p| (*p, PropertyStats::default())).collect(),
            ..Default::default()
        }
    }

    fn record(&mut self, trace: Trace, truncated: bool) -> Result<(), CheckError> {
        let verdicts: Vec<Verdict> = check_all(&trace, &PropertyId::ALL)?;
        self.traces += 1;
        if !ordering_violations(&verdicts).is_empty() {
            self.ordering_violations += 1;
        }
        if !lint_capabilities(&trace).is_empty() {
            self.lint_violations += 1;
        }
        self.faults += trace.header.fault.is_some() as u64;
        self.truncated += truncated as u64;
        let mut keep = Vec::new();
        for v in verdicts {
            if let Some(s) = self.stats.get_mut(&v.property) {
                s.add(v.result);
                if v.is_violated() && !self.witnesses.contains_key(&v.property) {
                    keep.push(v.property);
                }
            }
        }
        for p in keep {
            self.witnesses.insert(p, trace.clone());
        }
        Ok(())
    }

    /// Appends `later`, whose schedules all sort after this one's.
    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn merge(&mut self, later: Exploration) {
        self.traces += later.traces;
        self.ordering_violations += later.ordering_violations;
        self.lint_violations += later.lint_violations;
        self.faults += later.faults;
        self.truncated += later.truncated;
        for (p, s) in later.stats {
            let e = self.stats.entry(p).or_default();
            e.holds += s.holds;
            e.violated += s.violated;
            e.inapplicable += s.inapplicable;
        }
        for (p, t) in later.witnesses {
            self.witnesses.entry(p).or_insert(t);
        }
    }

    pub fn outcome(&self, p: PropertyId) -> Option<Outcome> {
        self.stats.get(&p).map(PropertyStats::outcome)
    }
}

/// Exhaustive search over one scenario within bounds.
#[derive(Debug, Clone)]
pub struct Explorer<'a> {
    scenario: &'a Scenario,
    bounds: Bounds,
    cap: u64,
}

impl<'a> Explorer<'a> {
    pub fn new(scenario: &'a Scenario, bounds: Bounds) -> Result<Explorer<'a>, ExploreError> {
        let n = scenario.header.provers.len();
        if n > bounds.max_provers {
            return Err(ExploreError::OutOfBounds(format!(
                "{n} provers, bound is {}",
                bounds.max_provers
            )));
        }
        if scenario.file.rounds > bounds.max_rounds {
            return Err(ExploreError::OutOfBounds(format!(
                "{} rounds, bound is {}",
                scenario.file.rounds, bounds.max_rounds
            )));
        }
        Ok(Explorer {
            scenario,
            bounds,
            cap: DEFAULT_CAP,
        })
    }

    pub fn with_cap(mut self, cap: u64) -> Explorer<'a> {
        self.cap = cap;
        self
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Engine at the root of the decision tree.
    pub fn root(&self) -> Result<Engine, ExploreError> {
        let mut net = self.scenario.file.network;
        net.max_delay = net.max_delay.min(self.bounds.max_delay);
        let depth = self.scenario.inject_depth().min(self.bounds.max_inject_depth);
        Ok(self.scenario.build_engine(self.scenario.horizon, net, depth)?)
    }

    fn branching(&self, e: &Engine, options: usize) -> usize {
        if e.interventions() >= self.bounds.max_interventions {
            1
        } else {
            options
        }
    }

    /// Knuth's random-probe estimate of the number of schedules. Probes
    /// intervene at a rate that spreads the budget over the honest run's
    /// decision points, and weight each path by the inverse of its
    /// probability, which keeps the estimate unbiased.
    pub fn estimate(&self) -> Result<f64, ExploreError> {
        let root = self.root()?;
        let mut honest = root.clone();
        let mut points = 0u32;
        while let Some(p) = honest.advance() {
            points += (p.options.len() > 1) as u32;
            honest.resolve(0);
        }
        let q = (self.bounds.max_interventions as f64 / points.max(1) as f64).clamp(0.0, 0.5);
        let mut total = 0.0;
        for i in 0..PROBES {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            rng.set_stream(i);
            let mut e = root.clone();
            let mut weight = 1.0f64;
            while let Some(p) = e.advance() {
                let n = p.options.len();
                let n = self.branching(&e, n);
                let idx = if n == 1 || !rng.gen_bool(q) {
                    0
                } else {
                    rng.gen_range(1..n)
                };
                if n > 1 {
                    weight *= if idx == 0 { 1.0 / (1.0 - q) } else { (n - 1) as f64 / q };
                }
                e.resolve(idx);
            }
            total += weight;
        }
        Ok(total / PROBES as f64)
    }

    fn check_cap(&self) -> Result<f64, ExploreError> {
        let estimate = self.estimate()?;
        if estimate > self.cap as f64 {
            return Err(ExploreError::ExplorationTooLarge { estimate, cap: self.cap });
        }
        Ok(estimate)
    }

    /// Depth-first walk from `start`; calls `visit` on every finished engine in schedule order.
    fn dfs<E>(&self, start: Engine, visit: &mut dyn FnMut(Engine) -> Result<(), E>) -> Result<(), E> {
        let mut stack = vec![start];
        while let Some(mut e) = stack.pop() {
            loop {
                let n = match e.advance() {
                    None => break,
                    Some(p) => p.options.len(),
                };
                let n = self.branching(&e, n);
                for i in (1..n).rev() {
                    let mut c = e.clone();
                    c.resolve(i);
                    stack.push(c);
                }
                e.resolve(0);
            }
            visit(e)?;
        }
        Ok(())
    }

    /// Calls `visit` on every trace within bounds, in schedule order.
    pub fn for_each(&self, mut visit: impl FnMut(Trace)) -> Result<(), ExploreError> {
        self.check_cap()?;
        self.dfs::<()>(self.root()?, &mut |e| {
            visit(e.into_trace());
            Ok(())
        })
        .ok();
        Ok(())
    }

    pub fn enumerate(&self) -> Result<Vec<Trace>, ExploreError> {
        let mut out = Vec::new();
        self.for_each(|t| out.push(t))?;
        Ok(out)
    }

    /// Checks every trace within bounds and aggregates the verdicts.
    pub fn explore(&self, properties: &[PropertyId], strategy: Strategy) -> Result<Exploration, ExploreError> {
        let estimate = self.check_cap()?;
        let root = self.root()?;
        let mut result = match strategy {
            Strategy::Sequential => self.explore_from(root, properties)?,
            Strategy::Parallel { workers } => self.explore_parallel(root, properties, workers.max(1))?,
        };
        result.estimate = estimate;
        Ok(result)
    }

    fn explore_from(&self, root: Engine, properties: &[PropertyId]) -> Result<Exploration, ExploreError> {
        let mut agg = Exploration::new(properties);
        self.dfs(root, &mut |e: Engine| {
            let truncated = e.truncated();
            agg.record(e.into_trace(), truncated)
        })?;
        Ok(agg)
    }

    #[cfg(feature = "parallel")]
    fn explore_parallel(&self, root: Engine, properties: &[PropertyId], workers: usize) -> Result<Exploration, ExploreError> {
        use rayon::prelude::*;
        if workers == 1 {
            return self.explore_from(root, properties);
        }
        let frontier = self.split(root, workers * 16);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| ExploreError::InvalidArgument(e.to_string()))?;
        let parts: Vec<Result<Exploration, ExploreError>> = pool.install(|| {
            frontier
                .into_par_iter()
                .map(|node| match node {
                    Node::Open(e) => self.explore_from(e, properties),
                    Node::Leaf(e) => {
                        let mut agg = Exploration::new(properties);
                        let truncated = e.truncated();
                        agg.record(e.into_trace(), truncated)?;
                        Ok(agg)
                    }
                })
                .collect()
        });
        let mut agg = Exploration::new(properties);
        for p in parts {
            agg.merge(p?);
        }
        Ok(agg)
    }

    #[cfg(not(feature = "parallel"))]
    fn explore_parallel(&self, root: Engine, properties: &[PropertyId], _workers: usize) -> Result<Exploration, ExploreError> {
        self.explore_from(root, properties)
    }

    /// Breadth-first expansion into at least `target` subtrees, kept in schedule order.
    #[cfg_attr(not(feature = "parallel"), allow(dead_code))]
    fn split(&self, root: Engine, target: usize) -> Vec<Node> {
        let mut frontier = vec![Node::Open(root)];
        while frontier.len() < target && frontier.iter().any(|n| matches!(n, Node::Open(_))) {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for node in frontier {
                let Node::Open(mut e) = node else {
                    next.push(node);
                    continue;
                };
                loop {
                    let n = match e.advance() {
                        None => {
                            next.push(Node::Leaf(e));
                            break;
                        }
                        Some(p) => p.options.len(),
                    };
                    let n = self.branching(&e, n);
                    if n == 1 {
                        e.resolve(0);
                        continue;
                    }
                    for i in 0..n {
                        let mut c = e.clone();
                        c.resolve(i);
                        next.push(Node::Open(c));
                    }
                    break;
                }
            }
            frontier = next;
        }
        frontier
    }

    /// Minimizes a trace produced by this explorer.
    pub fn minimize(&self, trace: &Trace, property: PropertyId) -> Result<Trace, ExploreError> {
        minimize(&self.root()?, trace, property)
    }

    /// Replaces every witness of `ex` by its minimized form.
    pub fn minimize_witnesses(&self, ex: &mut Exploration) -> Result<(), ExploreError> {
        let root = self.root()?;
        for (p, t) in ex.witnesses.iter_mut() {
            *t = minimize(&root, t, *p)?;
        }
        Ok(())
    }

    /// Re-executes a schedule given as option indices.
    pub fn replay_indices(&self, schedule: &[usize]) -> Result<Trace, ExploreError> {
        let mut e = self.root()?;
        let mut k = 0;
        while e.advance().is_some() {
            e.resolve(schedule.get(k).copied().unwrap_or(0));
            k += 1;
        }
        Ok(e.into_trace())
    }
}

#[cfg_attr(not(feature = "parallel"), allow(dead_code))]
enum Node {
    Open(Engine),
    Leaf(Engine),
}

/// Every trace of `scenario` within `bounds`, in schedule order.
pub fn enumerate(scenario: &Scenario, bounds: Bounds) -> Result<Vec<Trace>, ExploreError> {
    Explorer::new(scenario, bounds)?.enumerate()
}

/// `n` runs with seeded random choices; run `i` uses stream `i` of `seed`.
pub fn random_runs(scenario: &Scenario, n: usize, seed: u64) -> Result<Vec<Trace>, ExploreError> {
    random_runs_with_bias(scenario, n, seed, RANDOM_BIAS)
}

pub fn random_runs_with_bias(scenario: &Scenario, n: usize, seed: u64, bias: f64) -> Result<Vec<Trace>, ExploreError> {
    if n == 0 {
        return Err(ExploreError::InvalidArgument("n must be at least 1".into()));
    }
    let root = scenario.engine()?;
    Ok((0..n as u64)
        .map(|i| root.clone().run_with(&mut RandomChooser::new(seed, i, bias)))
        .collect())
}

/// Aggregated verdicts over `n` random runs.
pub fn explore_random(scenario: &Scenario, properties: &[PropertyId], n: usize, seed: u64) -> Result<Exploration, ExploreError> {
    if n == 0 {
        return Err(ExploreError::InvalidArgument("n must be at least 1".into()));
    }
    let root = scenario.engine()?;
    let mut agg = Exploration::new(properties);
    for i in 0..n as u64 {
        let mut e = root.clone();
        let mut chooser = RandomChooser::new(seed, i, RANDOM_BIAS);
        while let Some(p) = e.advance() {
            let idx = crate::simnet::Chooser::choose(&mut chooser, p);
            e.resolve(idx);
        }
        let truncated = e.truncated();
        agg.record(e.into_trace(), truncated)?;
    }
    Ok(agg)
}
