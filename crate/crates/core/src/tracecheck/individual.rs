use super::{claim_witness, individual_claims, CheckError, PropertyId, Verdict};
use crate::model::{DeviceId, Interval, Status, TimePoint, Trace, ValidityIndex};

pub(crate) fn correct(valid: bool, status: Status, strong: bool) -> bool {
    match status {
        Status::Healthy => valid,
        Status::Unhealthy => !strong || !valid,
        Status::Unknown => true,
    }
}

fn valid(idx: &ValidityIndex, p: DeviceId, t: TimePoint) -> bool {
    idx.valid_at(p, t).unwrap_or(false)
}

fn async_ok(idx: &ValidityIndex, p: DeviceId, s: Status, iv: Interval, strong: bool, monotone: bool) -> bool {
    if s == Status::Unhealthy && !strong {
        return true;
    }
    if monotone {
        return match s {
            Status::Healthy => valid(idx, p, iv.start),
            _ => !valid(idx, p, iv.end),
        };
    }
    idx.change_points(p, iv)
        .into_iter()
        .any(|t| correct(valid(idx, p, t), s, strong))
}

fn sync_ok(idx: &ValidityIndex, claim: &[(DeviceId, Status)], iv: Interval, strong: bool, monotone: bool) -> bool {
    let all_at = |t: TimePoint| claim.iter().all(|(p, s)| correct(valid(idx, *p, t), *s, strong));
    if monotone {
        if !strong {
            return all_at(iv.start);
        }
        let mut t = iv.start;
        for (p, s) in claim {
            if *s == Status::Unhealthy {
                match idx.first_invalid_in(*p, iv) {
                    Some(f) => t = t.max(f),
                    None => return false,
                }
            }
        }
        return all_at(t);
    }
    let mut candidates: Vec<TimePoint> = claim
        .iter()
        .flat_map(|(p, _)| idx.change_points(*p, iv))
        .collect();
    candidates.push(iv.start);
    candidates.sort_unstable();
    candidates.dedup();
    candidates.into_iter().any(all_at)
}

/// Checks every individual claim of `trace` against the actual prover
/// states. Traces without individual claims are `Inapplicable`.
pub fn check_individual(trace: &Trace, sync: bool, strong: bool) -> Result<Verdict, CheckError> {
    trace.validate()?;
    let prop = PropertyId::individual(sync, strong);
    let claims = individual_claims(trace)?;
    if claims.is_empty() {
        return Ok(Verdict::inapplicable(prop));
    }
    let idx = ValidityIndex::build(trace);
    let monotone = trace.header.is_monotone();
    for c in &claims {
        let ok = if sync {
            sync_ok(&idx, &c.statuses, c.interval, strong, monotone)
        } else {
            c.statuses
                .iter()
                .all(|(p, s)| async_ok(&idx, *p, *s, c.interval, strong, monotone))
        };
        if !ok {
            let provers = c.statuses.iter().map(|(p, _)| *p);
            return Ok(Verdict::violated(prop, claim_witness(trace, c.index, provers)));
        }
    }
    Ok(Verdict::holds(prop))
}
