//! Adversary capabilities and the actions they permit.

use crate::model::{DeviceId, DropReason, EventKind, SoftwareState, TimePoint, Trace};
use crate::simnet::{Engine, ScriptAction};
use crate::symcrypto::Term;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Which adversary classes are active. Any combination is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AdversaryModel {
    /// Software: can compromise prover software at any time.
    pub sw: bool,
    /// Mobile software: additionally restores software to cover its tracks.
    pub msw: bool,
    /// Physical non-intrusive: reads trusted-environment secrets.
    pub pni: bool,
    /// Physical intrusive: captures a device (offline) and rewrites it.
    pub pi: bool,
    /// Dolev-Yao: full control of the network.
    pub dy: bool,
}

impl AdversaryModel {
    pub fn none() -> AdversaryModel {
        AdversaryModel::default()
    }

    pub fn software() -> AdversaryModel {
        AdversaryModel {
            sw: true,
            ..Default::default()
        }
    }

    pub fn mobile() -> AdversaryModel {
        AdversaryModel {
            sw: true,
            msw: true,
            ..Default::default()
        }
    }

    /// `msw` implies `sw`.
    pub fn normalized(mut self) -> AdversaryModel {
        self.sw |= self.msw;
        self
    }

    pub fn with_dy(mut self) -> AdversaryModel {
        self.dy = true;
        self
    }

    /// Parses a `+`- or `,`-separated list such as `sw+dy`.
    pub fn parse_list(s: &str) -> Result<AdversaryModel, String> {
        let mut m = AdversaryModel::default();
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "sw" => m.sw = true,
                "msw" => m.msw = true,
                "pni" => m.pni = true,
                "pi" => m.pi = true,
                "dy" => m.dy = true,
                "none" => {}
                other => return Err(format!("unknown adversary class `{other}`")),
            }
        }
        Ok(m.normalized())
    }

    pub fn can_read_secrets(&self) -> bool {
        self.pni || self.pi
    }
}

impl fmt::Display for AdversaryModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [
            (self.sw && !self.msw, "sw"),
            (self.msw, "msw"),
            (self.pni, "pni"),
            (self.pi, "pi"),
            (self.dy, "dy"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdversaryError {
    #[error("{0} is inside an atomic attestation section")]
    RejectedAtomic(DeviceId),
    #[error("trusted state of {0} can only be written while it is captured")]
    RejectedTrusted(DeviceId),
    #[error("restore needs the mobile software adversary")]
    RejectedRestore,
    #[error("action needs capability `{0}`")]
    RejectedCapability(&'static str),
    #[error("capture window of {len} ticks is shorter than T_attack = {t_attack}")]
    RejectedWindow { len: u64, t_attack: u64 },
    #[error("`{0}` is not derivable from adversary knowledge")]
    NotDerivable(Term),
    #[error("{0} is not a prover")]
    UnknownDevice(DeviceId),
    #[error("time {0} is in the past")]
    PastTime(TimePoint),
}

impl Engine {
    fn require_prover(&self, p: DeviceId) -> Result<(), AdversaryError> {
        match self.world.devices.get(p.0 as usize) {
            Some(d) if d.is_prover() => Ok(()),
            _ => Err(AdversaryError::UnknownDevice(p)),
        }
    }

    /// Replaces the software of `p` with a fresh malicious state.
    pub fn compromise(&mut self, p: DeviceId) -> Result<(), AdversaryError> {
        if !self.model().sw {
            return Err(AdversaryError::RejectedCapability("sw"));
        }
        self.require_prover(p)?;
        let now = self.world.now;
        let dev = &mut self.world.devices[p.0 as usize];
        if dev.in_atomic(now) {
            return Err(AdversaryError::RejectedAtomic(p));
        }
        dev.compromises += 1;
        dev.software = SoftwareState::Compromised(dev.compromises);
        self.world.emit(EventKind::Compromise { prover: p });
        Ok(())
    }

    /// Puts the original software of `p` back. Restoring a device that was
    /// never compromised is a no-op with a warning.
    pub fn restore(&mut self, p: DeviceId) -> Result<(), AdversaryError> {
        if !self.model().msw {
            return Err(AdversaryError::RejectedRestore);
        }
        self.require_prover(p)?;
        let now = self.world.now;
        let dev = &mut self.world.devices[p.0 as usize];
        if dev.in_atomic(now) {
            return Err(AdversaryError::RejectedAtomic(p));
        }
        if dev.compromises == 0 {
            let message = format!("restore of {} which was never compromised", dev.name);
            self.world.emit(EventKind::Warning { message });
            return Ok(());
        }
        dev.software = dev.original.clone();
        self.world.emit(EventKind::Restore { prover: p });
        Ok(())
    }

    /// Adds every trusted-environment secret of `p` to adversary knowledge.
    pub fn read_secrets(&mut self, p: DeviceId) -> Result<(), AdversaryError> {
        if !self.model().can_read_secrets() {
            return Err(AdversaryError::RejectedCapability("pni"));
        }
        self.require_prover(p)?;
        let secrets = self.world.devices[p.0 as usize].secrets();
        for s in secrets {
            self.world.knowledge.learn(s);
        }
        self.world.emit(EventKind::SecretRead { prover: p });
        Ok(())
    }

    /// Takes `p` offline for `[begin, end)`. With `write`, its software is
    /// replaced at capture time.
    pub fn capture(&mut self, p: DeviceId, begin: TimePoint, end: TimePoint, write: bool) -> Result<(), AdversaryError> {
        if !self.model().pi {
            return Err(AdversaryError::RejectedCapability("pi"));
        }
        self.require_prover(p)?;
        if begin < self.world.now {
            return Err(AdversaryError::PastTime(begin));
        }
        let len = end.0.saturating_sub(begin.0);
        let t_attack = self.cfg.t_attack;
        if len < t_attack || end <= begin {
            return Err(AdversaryError::RejectedWindow { len, t_attack });
        }
        self.schedule_action(begin, ScriptAction::Capture { prover: p, until: end, write });
        Ok(())
    }

    /// Overwrites the trusted counter of `p`; only possible while captured,
    /// and committed when the capture ends.
    pub fn tamper_counter(&mut self, p: DeviceId, value: u64) -> Result<(), AdversaryError> {
        if !self.model().pi {
            return Err(AdversaryError::RejectedCapability("pi"));
        }
        self.require_prover(p)?;
        let now = self.world.now;
        let dev = &mut self.world.devices[p.0 as usize];
        if !dev.is_offline(now) {
            return Err(AdversaryError::RejectedTrusted(p));
        }
        dev.pending_counter = Some(value);
        Ok(())
    }

    /// Queues `body` for delivery to `dst` at `at`.
    pub fn inject(&mut self, dst: DeviceId, body: Term, at: TimePoint) -> Result<(), AdversaryError> {
        if !self.model().dy {
            return Err(AdversaryError::RejectedCapability("dy"));
        }
        if at < self.world.now {
            return Err(AdversaryError::PastTime(at));
        }
        if !self.world.knowledge.can_derive_within(&body, self.cfg.inject_depth) {
            return Err(AdversaryError::NotDerivable(body));
        }
        self.schedule_action(at, ScriptAction::Inject { dst, body });
        Ok(())
    }
}

/// One event that the adversary model recorded in the header cannot produce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintViolation {
    pub index: usize,
    pub message: String,
}

/// Checks that every adversary event in `trace` is permitted by its
/// declared model and that nothing is received out of thin air.
pub fn lint_capabilities(trace: &Trace) -> Vec<LintViolation> {
    let m = trace.header.adversary;
    let mut out = Vec::new();
    let mut seen: BTreeSet<&Term> = BTreeSet::new();
    for (index, ev) in trace.events.iter().enumerate() {
        let missing = match &ev.kind {
            EventKind::Compromise { .. } if !m.sw => Some("sw"),
            EventKind::Restore { .. } if !m.msw => Some("msw"),
            EventKind::SecretRead { .. } if !m.can_read_secrets() => Some("pni"),
            EventKind::CaptureBegin { .. } | EventKind::CaptureEnd { .. } if !m.pi => Some("pi"),
            EventKind::Inject { .. } if !m.dy => Some("dy"),
            EventKind::MsgDrop {
                reason: DropReason::Adversary,
                ..
            } if !m.dy => Some("dy"),
            _ => None,
        };
        if let Some(cap) = missing {
            out.push(LintViolation {
                index,
                message: format!("{} needs capability `{cap}`", ev.kind.name()),
            });
        }
        match &ev.kind {
            EventKind::MsgSend { term, .. } | EventKind::Inject { term, .. } => {
                seen.insert(term);
            }
            EventKind::MsgRecv { term, .. } if !seen.contains(term) => out.push(LintViolation {
                index,
                message: format!("received `{term}` that was never sent or injected"),
            }),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Event, TraceHeader};

    #[test]
    fn parse_and_display() {
        let m = AdversaryModel::parse_list("msw+dy").unwrap();
        assert!(m.sw && m.msw && m.dy && !m.pi);
        assert_eq!(m.to_string(), "msw+dy");
        assert_eq!(AdversaryModel::none().to_string(), "none");
        assert!(AdversaryModel::parse_list("sw+laser").is_err());
    }

    #[test]
    fn lint_flags_missing_capabilities_and_thin_air() {
        let mut h = TraceHeader::new("t", "none");
        h.adversary = AdversaryModel::software();
        let mut t = Trace::new(h);
        let p = DeviceId(1);
        t.events.push(Event::new(TimePoint(1), EventKind::Compromise { prover: p }));
        t.events.push(Event::new(TimePoint(2), EventKind::Restore { prover: p }));
        t.events.push(Event::new(
            TimePoint(3),
            EventKind::MsgRecv {
                dst: p,
                term: Term::atom("x"),
            },
        ));
        let v = lint_capabilities(&t);
        assert_eq!(v.iter().map(|v| v.index).collect::<Vec<_>>(), vec![1, 2]);
    }
}
