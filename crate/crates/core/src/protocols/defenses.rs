//! Countermeasures against physical capture: heartbeats, periodic secret
//! updates, and attestation more frequent than the capture time.

use super::{tagged, TimerTag};
use crate::model::{DeviceId, EventKind, Trace, ValidationSource};
use crate::simnet::Ctx;
use crate::symcrypto::Term;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseParams {
    /// Heartbeat period; provers send, the observer flags silences longer than T_attack.
    pub heartbeat: Option<u64>,
    /// Epoch length of secret updates.
    pub secret_update: Option<u64>,
    /// Period of self-measurements checked against T_attack.
    pub att_frequency: Option<u64>,
}

impl DefenseParams {
    pub fn is_empty(&self) -> bool {
        self.heartbeat.is_none() && self.secret_update.is_none() && self.att_frequency.is_none()
    }

    pub fn validate(&self, t_attack: u64) -> Result<(), super::ConfigError> {
        for (name, p) in [
            ("heartbeat", self.heartbeat),
            ("secret_update", self.secret_update),
            ("att_frequency", self.att_frequency),
        ] {
            if p == Some(0) {
                return Err(super::ConfigError::InvalidParameter(format!("{name} period must be positive")));
            }
        }
        for (name, p) in [
            ("heartbeat", self.heartbeat),
            ("secret_update", self.secret_update),
            ("att_frequency", self.att_frequency),
        ] {
            if p.is_some_and(|p| p > t_attack) {
                return Err(super::ConfigError::InvalidParameter(format!(
                    "{name} period must not exceed t_attack = {t_attack}"
                )));
            }
        }
        Ok(())
    }
}

/// Heartbeat key role for prover `name`.
pub fn heartbeat_role(name: &str) -> String {
    format!("hb:{name}")
}

#[derive(Debug, Clone)]
pub struct Services {
    params: DefenseParams,
    observer: DeviceId,
    provers: Vec<DeviceId>,
    t_attack: u64,
    last_seen: BTreeMap<DeviceId, u64>,
    flagged: BTreeSet<DeviceId>,
    last_measure: BTreeMap<DeviceId, u64>,
    seq: u64,
}

impl Services {
    pub fn new(params: DefenseParams, observer: DeviceId, provers: Vec<DeviceId>, t_attack: u64) -> Services {
        Services {
            params,
            observer,
            provers,
            t_attack,
            last_seen: BTreeMap::new(),
            flagged: BTreeSet::new(),
            last_measure: BTreeMap::new(),
            seq: 0,
        }
    }

    pub fn none() -> Services {
        Services::new(DefenseParams::default(), DeviceId(0), Vec::new(), 0)
    }

    /// Heartbeat keys: each prover holds its own, the observer holds all.
    pub fn assign_keys(&self, devices: &mut [crate::simnet::DeviceState]) {
        if self.params.heartbeat.is_none() {
            return;
        }
        for p in &self.provers {
            let role = heartbeat_role(&devices[p.0 as usize].name);
            devices[p.0 as usize].keys.insert("hb".into(), role.clone());
            devices[self.observer.0 as usize].keys.insert(role.clone(), role);
        }
    }

    pub fn claims_message(&self, body: &Term) -> bool {
        body.as_pair().is_some_and(|(b, _)| tagged(b, "hb").is_some())
    }

    pub fn start(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        let err = |e: crate::simnet::SimError| e.to_string();
        if let Some(p) = self.params.heartbeat {
            for d in &self.provers {
                ctx.set_timer(*d, ctx.now().plus(p), TimerTag::Heartbeat).map_err(err)?;
                // first beat is due at p + latency
                self.last_seen.insert(*d, ctx.latency());
            }
            ctx.set_timer(self.observer, ctx.now().plus(p), TimerTag::HeartbeatCheck)
                .map_err(err)?;
        }
        if let Some(e) = self.params.secret_update {
            ctx.set_timer(self.observer, ctx.now().plus(e), TimerTag::Epoch).map_err(err)?;
        }
        if let Some(a) = self.params.att_frequency {
            for d in &self.provers {
                ctx.set_timer(*d, ctx.now().plus(a), TimerTag::AttMonitor).map_err(err)?;
                self.last_measure.insert(*d, 0);
            }
        }
        Ok(())
    }

    fn flag(&mut self, ctx: &mut Ctx, device: DeviceId, detector: &str) {
        if self.flagged.insert(device) {
            ctx.emit(EventKind::PhysicalFlag {
                device,
                detector: detector.into(),
            });
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx, dst: DeviceId, msg: &Term) -> Result<(), String> {
        if dst != self.observer {
            return Ok(());
        }
        let Some((body, _)) = msg.as_pair() else {
            return Ok(());
        };
        let Some(sender) = tagged(body, "hb")
            .and_then(Term::as_pair)
            .and_then(|(s, _)| super::device_named(ctx.world, s))
        else {
            return Ok(());
        };
        let role = heartbeat_role(&ctx.device(sender).name);
        if !ctx.verify_keys(dst, &role).iter().any(|k| msg.open_authenticated(k).is_some()) {
            return Ok(());
        }
        ctx.emit(EventKind::HeartbeatRecv {
            observer: dst,
            prover: sender,
        });
        let now = ctx.now().0;
        let last = self.last_seen.get(&sender).copied().unwrap_or(0);
        if now.saturating_sub(last) > self.t_attack {
            self.flag(ctx, sender, "heartbeat");
        }
        self.flagged.remove(&sender);
        self.last_seen.insert(sender, now);
        Ok(())
    }

    pub fn on_timer(&mut self, ctx: &mut Ctx, device: DeviceId, tag: TimerTag) -> Result<(), String> {
        let err = |e: crate::simnet::SimError| e.to_string();
        match tag {
            TimerTag::Heartbeat => {
                let period = self.params.heartbeat.unwrap_or(1);
                ctx.emit(EventKind::HeartbeatSend { prover: device });
                self.seq += 1;
                let body = Term::pair(
                    Term::atom("hb"),
                    Term::pair(Term::atom(&ctx.device(device).name), Term::Counter(self.seq)),
                );
                if let Some(key) = ctx.key(device, "hb") {
                    ctx.send(device, self.observer, Term::authenticated(key, body));
                }
                ctx.set_timer(device, ctx.now().plus(period), TimerTag::Heartbeat).map_err(err)
            }
            TimerTag::HeartbeatCheck => {
                let now = ctx.now().0;
                let silent: Vec<DeviceId> = self
                    .last_seen
                    .iter()
                    .filter(|(_, last)| now.saturating_sub(**last) > self.t_attack)
                    .map(|(d, _)| *d)
                    .collect();
                for d in silent {
                    self.flag(ctx, d, "heartbeat");
                }
                let period = self.params.heartbeat.unwrap_or(1);
                ctx.set_timer(device, ctx.now().plus(period), TimerTag::HeartbeatCheck)
                    .map_err(err)
            }
            TimerTag::Epoch => {
                ctx.rotate_epoch();
                let e = self.params.secret_update.unwrap_or(1);
                ctx.set_timer(device, ctx.now().plus(e), TimerTag::Epoch).map_err(err)
            }
            TimerTag::AttMonitor => {
                let state = ctx.measure(device);
                let healthy = ctx.is_acceptable(device, &state);
                ctx.emit(EventKind::Validation {
                    validator: device,
                    subject: device,
                    source: ValidationSource::LocalStore,
                    healthy,
                });
                let now = ctx.now().0;
                let last = self.last_measure.insert(device, now).unwrap_or(0);
                if now - last > self.t_attack {
                    ctx.emit(EventKind::PhysicalFlag {
                        device,
                        detector: "att_frequency".into(),
                    });
                }
                let a = self.params.att_frequency.unwrap_or(1);
                ctx.set_timer(device, ctx.now().plus(a), TimerTag::AttMonitor).map_err(err)
            }
            _ => Ok(()),
        }
    }
}

/// Provers whose consecutive measurements in `trace` are more than
/// `t_attack` ticks apart, with the start of each such gap.
pub fn attestation_frequency_monitor(trace: &Trace, t_attack: u64) -> Vec<(DeviceId, u64)> {
    let mut last: BTreeMap<DeviceId, u64> = BTreeMap::new();
    let mut out = Vec::new();
    for ev in &trace.events {
        if let EventKind::MeasureTaken { prover, .. } = &ev.kind {
            if let Some(prev) = last.insert(*prover, ev.at.0) {
                if ev.at.0 - prev > t_attack {
                    out.push((*prover, prev));
                }
            }
        }
    }
    out
}
