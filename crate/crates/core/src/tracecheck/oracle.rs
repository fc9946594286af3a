//! Reference checkers that enumerate every tick of every claim interval and
//! replay the trace for each state query. Slow, but free of shortcuts.

use super::{group_claims, individual_claims, CheckError, GroupSpec, PropertyId, Verdict};
use crate::model::{is_valid_state, DeviceId, Status, TimePoint, Trace};

fn ok(trace: &Trace, p: DeviceId, s: Status, t: TimePoint, strong: bool) -> Result<bool, CheckError> {
    let v = is_valid_state(trace, p, t)?;
    Ok(match s {
        Status::Healthy => v,
        Status::Unhealthy => !strong || !v,
        Status::Unknown => true,
    })
}

pub fn oracle_check_individual(trace: &Trace, sync: bool, strong: bool) -> Result<Verdict, CheckError> {
    trace.validate()?;
    let prop = PropertyId::individual(sync, strong);
    let claims = individual_claims(trace)?;
    if claims.is_empty() {
        return Ok(Verdict::inapplicable(prop));
    }
    for c in &claims {
        let holds = if sync {
            let mut found = c.statuses.is_empty();
            for t in c.interval.ticks() {
                let mut all = true;
                for (p, s) in &c.statuses {
                    all &= ok(trace, *p, *s, t, strong)?;
                }
                if all {
                    found = true;
                    break;
                }
            }
            found
        } else {
            let mut all = true;
            for (p, s) in &c.statuses {
                let mut any = false;
                for t in c.interval.ticks() {
                    any |= ok(trace, *p, *s, t, strong)?;
                }
                all &= any;
            }
            all
        };
        if !holds {
            return Ok(Verdict::violated(prop, vec![c.index]));
        }
    }
    Ok(Verdict::holds(prop))
}

fn invalid(trace: &Trace, members: &[DeviceId], t: TimePoint) -> Result<usize, CheckError> {
    let mut n = 0;
    for p in members {
        if !is_valid_state(trace, *p, t)? {
            n += 1;
        }
    }
    Ok(n)
}

pub fn oracle_check_group(trace: &Trace, spec: &GroupSpec, sync: bool, strong: bool) -> Result<Verdict, CheckError> {
    trace.validate()?;
    let prop = PropertyId::group(sync, strong);
    let claims = group_claims(trace, spec)?;
    if claims.is_empty() {
        return Ok(Verdict::inapplicable(prop));
    }
    let th = spec.threshold as usize;
    for c in &claims {
        let mut healthy = Vec::new();
        let mut unhealthy = Vec::new();
        for g in &c.groups {
            let m: Vec<DeviceId> = g.members.iter().copied().collect();
            match g.status {
                Status::Healthy => healthy.push(m),
                Status::Unhealthy => unhealthy.push(m),
                Status::Unknown => {}
            }
        }
        let mut holds = true;
        if sync {
            let mut found = healthy.is_empty();
            for t in c.interval.ticks() {
                let mut all = true;
                for g in &healthy {
                    all &= invalid(trace, g, t)? <= th;
                }
                if all {
                    found = true;
                    break;
                }
            }
            holds &= found;
        } else {
            for g in &healthy {
                let mut never_valid = 0;
                for p in g {
                    let mut any = false;
                    for t in c.interval.ticks() {
                        any |= is_valid_state(trace, *p, t)?;
                    }
                    if !any {
                        never_valid += 1;
                    }
                }
                holds &= never_valid <= th;
            }
        }
        if strong {
            for g in &unhealthy {
                let mut any = false;
                for t in c.interval.ticks() {
                    any |= invalid(trace, g, t)? > th;
                }
                holds &= any;
            }
        }
        if !holds {
            return Ok(Verdict::violated(prop, vec![c.index]));
        }
    }
    Ok(Verdict::holds(prop))
}
