use super::{CheckError, PropertyId, Verdict};
use crate::model::{DeviceId, EventKind, Trace};
use crate::symcrypto::Term;
use std::collections::HashMap;

/// Initiator authentication: every completed run matches a distinct earlier
/// request from the same initiator to the same prover. Non-interactive
/// protocols have no requests, so the property is `Inapplicable`.
pub fn check_ia(trace: &Trace) -> Result<Verdict, CheckError> {
    trace.validate()?;
    if !trace.header.interactive {
        return Ok(Verdict::inapplicable(PropertyId::IA));
    }
    let mut open: HashMap<(DeviceId, DeviceId, &Term), Vec<usize>> = HashMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        match &ev.kind {
            EventKind::SendRequest { initiator, prover, request } => {
                open.entry((*initiator, *prover, request)).or_default().push(i);
            }
            EventKind::RunComplete { prover, initiator, request } => {
                match open.get_mut(&(*initiator, *prover, request)).and_then(|v| {
                    // oldest unused request first
                    (!v.is_empty()).then(|| v.remove(0))
                }) {
                    Some(_) => {}
                    None => {
                        let key = (*initiator, *prover, request);
                        let w = trace.events[..=i]
                            .iter()
                            .enumerate()
                            .filter(|(_, e)| match &e.kind {
                                EventKind::SendRequest { initiator, prover, request }
                                | EventKind::RunComplete { prover, initiator, request } => {
                                    (*initiator, *prover, request) == key
                                }
                                _ => false,
                            })
                            .map(|(j, _)| j)
                            .collect();
                        return Ok(Verdict::violated(PropertyId::IA, w));
                    }
                }
            }
            _ => {}
        }
    }
    Ok(Verdict::holds(PropertyId::IA))
}
