use super::ExploreError;
use crate::model::Trace;
use crate::scenario::Scenario;
use crate::simnet::{Choice, Engine, Replay};
use crate::tracecheck::{check, GroupSpec, PropertyId};

fn violated(trace: &Trace, property: PropertyId) -> Result<bool, ExploreError> {
    let spec = GroupSpec::with_threshold(trace.header.group_threshold);
    Ok(check(trace, property, &spec)?.is_violated())
}

fn replay(root: &Engine, choices: Vec<Choice>) -> (Trace, u32) {
    let mut e = root.clone();
    let mut r = Replay::new(choices);
    while let Some(p) = e.advance() {
        let i = crate::simnet::Chooser::choose(&mut r, p);
        e.resolve(i);
    }
    let n = e.interventions();
    (e.into_trace(), n)
}

/// Removes adversary decisions one at a time, keeping each removal whose
/// re-execution still violates `property`, until no single removal does.
///
/// `root` must be the engine the trace was produced from.
pub fn minimize(root: &Engine, trace: &Trace, property: PropertyId) -> Result<Trace, ExploreError> {
    if !violated(trace, property)? {
        return Err(ExploreError::NotAViolation(property));
    }
    let header = &trace.header;
    let mut choices: Vec<Choice> = header
        .schedule
        .iter()
        .map(|s| Choice::parse(s, header))
        .collect::<Result<_, _>>()
        .map_err(ExploreError::InvalidArgument)?;
    let (mut best, mut cost) = replay(root, choices.clone());
    if !violated(&best, property)? {
        // the schedule does not reproduce from this root
        return Ok(trace.clone());
    }
    'outer: loop {
        for i in (0..choices.len()).rev() {
            if choices[i].is_benign() {
                continue;
            }
            let mut cand = choices.clone();
            cand[i] = Choice::Pass;
            let (t, n) = replay(root, cand);
            if n < cost && violated(&t, property)? {
                choices = t
                    .header
                    .schedule
                    .iter()
                    .map(|s| Choice::parse(s, &t.header))
                    .collect::<Result<_, _>>()
                    .map_err(ExploreError::InvalidArgument)?;
                best = t;
                cost = n;
                continue 'outer;
            }
        }
        return Ok(best);
    }
}

impl Scenario {
    /// Minimizes a violating trace of this scenario run with its own settings.
    pub fn minimize(&self, trace: &Trace, property: PropertyId) -> Result<Trace, ExploreError> {
        minimize(&self.engine()?, trace, property)
    }
}
