use super::CheckError;
use crate::model::{EventKind, Trace};
use serde::{Deserialize, Serialize};
use std::fmt;

/// How much a relying party learns from a trace's claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Qosa {
    /// One bit for the whole swarm.
    Binary,
    /// A status per prover.
    List,
    /// Statuses for groups that are neither singletons nor the whole swarm.
    Intermediate,
}

impl fmt::Display for Qosa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Qosa::Binary => "Binary",
            Qosa::List => "List",
            Qosa::Intermediate => "Intermediate",
        })
    }
}

/// Classifies by the finest claim granularity present in the trace.
pub fn classify_qosa(trace: &Trace) -> Result<Qosa, CheckError> {
    let n = trace.header.provers.len();
    let mut best: Option<Qosa> = None;
    let rank = |q: Qosa| match q {
        Qosa::Binary => 0,
        Qosa::Intermediate => 1,
        Qosa::List => 2,
    };
    for ev in &trace.events {
        let q = match &ev.kind {
            EventKind::ClaimIndividual { .. } => Qosa::List,
            EventKind::ClaimGroup { groups, .. } => {
                if groups.iter().all(|g| g.members.len() == 1) && !groups.is_empty() {
                    Qosa::List
                } else if groups.len() == 1 && groups[0].members.len() == n {
                    Qosa::Binary
                } else {
                    Qosa::Intermediate
                }
            }
            _ => continue,
        };
        if best.is_none_or(|b| rank(q) > rank(b)) {
            best = Some(q);
        }
    }
    best.ok_or(CheckError::NoClaims)
}
