use super::{claim_witness, group_claims, CheckError, GroupClaim, GroupSpec, PropertyId, Verdict};
use crate::model::{DeviceId, GroupStatus, Interval, Status, TimePoint, Trace, ValidityIndex};
use std::collections::BTreeSet;

fn invalid_count(idx: &ValidityIndex, g: &GroupStatus, t: TimePoint) -> usize {
    g.members
        .iter()
        .filter(|p| !idx.valid_at(**p, t).unwrap_or(false))
        .count()
}

fn points(idx: &ValidityIndex, members: impl IntoIterator<Item = DeviceId>, iv: Interval) -> Vec<TimePoint> {
    let mut pts: Vec<TimePoint> = members.into_iter().flat_map(|p| idx.change_points(p, iv)).collect();
    pts.push(iv.start);
    pts.sort_unstable();
    pts.dedup();
    pts
}

fn ever_valid(idx: &ValidityIndex, p: DeviceId, iv: Interval, monotone: bool) -> bool {
    if monotone {
        return idx.valid_at(p, iv.start).unwrap_or(false);
    }
    idx.change_points(p, iv)
        .into_iter()
        .any(|t| idx.valid_at(p, t).unwrap_or(false))
}

fn healthy_ok(idx: &ValidityIndex, c: &GroupClaim, th: usize, sync: bool, monotone: bool) -> bool {
    let healthy: Vec<&GroupStatus> = c.groups.iter().filter(|g| g.status == Status::Healthy).collect();
    if healthy.is_empty() {
        return true;
    }
    if !sync {
        return healthy.iter().all(|g| {
            g.members
                .iter()
                .filter(|p| !ever_valid(idx, **p, c.interval, monotone))
                .count()
                <= th
        });
    }
    let ok_at = |t: TimePoint| healthy.iter().all(|g| invalid_count(idx, g, t) <= th);
    if monotone {
        return ok_at(c.interval.start);
    }
    let members = healthy.iter().flat_map(|g| g.members.iter().copied());
    points(idx, members, c.interval).into_iter().any(ok_at)
}

fn unhealthy_ok(idx: &ValidityIndex, c: &GroupClaim, th: usize, monotone: bool) -> bool {
    c.groups.iter().filter(|g| g.status == Status::Unhealthy).all(|g| {
        if monotone {
            return invalid_count(idx, g, c.interval.end) > th;
        }
        points(idx, g.members.iter().copied(), c.interval)
            .into_iter()
            .any(|t| invalid_count(idx, g, t) > th)
    })
}

/// Checks every group claim of `trace`; a group of size `n` tolerates up to
/// `spec.threshold` members outside the claimed status.
pub fn check_group(trace: &Trace, spec: &GroupSpec, sync: bool, strong: bool) -> Result<Verdict, CheckError> {
    trace.validate()?;
    let prop = PropertyId::group(sync, strong);
    let claims = group_claims(trace, spec)?;
    if claims.is_empty() {
        return Ok(Verdict::inapplicable(prop));
    }
    let idx = ValidityIndex::build(trace);
    let monotone = trace.header.is_monotone();
    let th = spec.threshold as usize;
    for c in &claims {
        let ok = healthy_ok(&idx, c, th, sync, monotone) && (!strong || unhealthy_ok(&idx, c, th, monotone));
        if !ok {
            let provers: BTreeSet<DeviceId> = c.groups.iter().flat_map(|g| g.members.iter().copied()).collect();
            return Ok(Verdict::violated(prop, claim_witness(trace, c.index, provers)));
        }
    }
    Ok(Verdict::holds(prop))
}
