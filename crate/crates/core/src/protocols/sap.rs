//! SAP: synchronized attestation at a common instant `t*`.
//!
//! The verifier broadcasts `pair('sapreq', pair(ctr(c), ctr(t*)))` signed
//! with its key down a balanced binary tree. Each prover measures when its
//! local clock reads `t*` and produces the token
//! `mac(k(dev:P), pair(ctr(c), pair(ctr(t*), '<state>')))`. Tokens travel up
//! unchanged inside `pair('saprep', pair('<sender>', pair(ctr(c), tokens)))`
//! and only the verifier checks them.

use super::{device_named, device_role, observed_with_tag, tagged, Protocol, ProtocolConfig, TimerTag};
use crate::model::{DeviceId, EventKind, GroupStatus, Interval, Status, TimePoint, ValidationSource};
use crate::simnet::{versioned_key, Ctx, World};
use crate::symcrypto::Term;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SapParams {
    /// Clock synchronization bound; every offset must be within it.
    pub epsilon: u64,
    /// Local clock minus global time, per device.
    #[serde(skip)]
    pub clock_offsets: BTreeMap<DeviceId, i64>,
}

#[derive(Debug, Clone)]
struct Run {
    counter: u64,
    target: u64,
    request: Term,
    measured: bool,
    pending: BTreeSet<DeviceId>,
    tokens: Vec<Term>,
    sent: bool,
}

#[derive(Debug, Clone)]
struct VerifierRun {
    id: u64,
    counter: u64,
    target: u64,
    pending: BTreeSet<DeviceId>,
    tokens: BTreeMap<DeviceId, Term>,
}

#[derive(Debug, Clone)]
pub struct Sap {
    cfg: Arc<ProtocolConfig>,
    round: u32,
    next_run: u64,
    verifier: Option<VerifierRun>,
    runs: BTreeMap<DeviceId, Run>,
    done: bool,
}

impl Sap {
    pub fn new(cfg: Arc<ProtocolConfig>) -> Sap {
        Sap {
            done: cfg.rounds == 0,
            cfg,
            round: 0,
            next_run: 0,
            verifier: None,
            runs: BTreeMap::new(),
        }
    }

    fn eps(&self) -> u64 {
        self.cfg.sap.epsilon
    }

    fn depth(&self) -> u64 {
        self.cfg.topology.height(self.cfg.verifier)
    }

    fn token(key: Term, counter: u64, target: u64, state: &str) -> Term {
        Term::mac(
            key,
            Term::pair(Term::Counter(counter), Term::pair(Term::Counter(target), Term::atom(state))),
        )
    }

    fn start_round(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        let v = self.cfg.verifier;
        let counter = ctx.device(v).counter + 1;
        ctx.device_mut(v).counter = counter;
        let l = self.cfg.latency;
        let target = ctx.now().0 + l * self.depth() + 1 + self.eps();
        let body = Term::pair(
            Term::atom("sapreq"),
            Term::pair(Term::Counter(counter), Term::Counter(target)),
        );
        ctx.emit(EventKind::AttStart { verifier: v, counter });
        for p in &self.cfg.provers {
            ctx.emit(EventKind::SendRequest {
                initiator: v,
                prover: *p,
                request: body.clone(),
            });
        }
        let key = ctx.key(v, "dev").ok_or("verifier has no device key")?;
        let msg = Term::signed(key, body);
        let children = self.cfg.topology.children(v);
        for c in &children {
            ctx.send(v, *c, msg.clone());
        }
        let id = self.next_run;
        self.next_run += 1;
        self.verifier = Some(VerifierRun {
            id,
            counter,
            target,
            pending: children.into_iter().collect(),
            tokens: BTreeMap::new(),
        });
        let deadline = target + self.eps() + 2 * l * self.depth() + 1;
        ctx.set_timer(v, TimePoint(deadline), TimerTag::Deadline(id))
            .map_err(|e| e.to_string())
    }

    fn claim(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        let Some(run) = self.verifier.take() else {
            return Ok(());
        };
        let v = self.cfg.verifier;
        let epochs = ctx.accepted_epochs(v);
        let mut all = true;
        for q in self.cfg.provers.clone() {
            let role = device_role(&ctx.device(q).name);
            let labels = ctx
                .world
                .acceptable
                .at(q, TimePoint(run.target))
                .cloned()
                .unwrap_or_default();
            let healthy = run.tokens.get(&q).is_some_and(|tok| {
                labels
                    .iter()
                    .any(|l| {
                        epochs.iter().any(|e| {
                            *tok == Self::token(versioned_key(&role, *e), run.counter, run.target, &l.to_string())
                        })
                    })
            });
            ctx.emit(EventKind::Validation {
                validator: v,
                subject: q,
                source: ValidationSource::VerifierRooted,
                healthy,
            });
            all &= healthy;
        }
        let interval = Interval::new(
            TimePoint(run.target).saturating_minus(self.eps()),
            TimePoint(run.target + self.eps()),
        )
        .ok_or("empty synchronization window")?;
        ctx.emit(EventKind::ClaimGroup {
            relying_party: v,
            groups: vec![GroupStatus {
                members: self.cfg.provers.iter().copied().collect(),
                status: if all { Status::Healthy } else { Status::Unhealthy },
            }],
            interval,
            counter: run.counter,
        });
        self.round += 1;
        if self.round < self.cfg.rounds {
            ctx.set_timer(v, ctx.now().plus(1), TimerTag::Round(self.round))
                .map_err(|e| e.to_string())?;
        } else {
            self.done = true;
        }
        Ok(())
    }

    fn on_request(&mut self, ctx: &mut Ctx, p: DeviceId, msg: &Term) -> Result<(), String> {
        let v = self.cfg.verifier;
        let role = device_role(&ctx.device(v).name);
        let epochs = ctx.accepted_epochs(p);
        let Some(body) = epochs.iter().find_map(|e| msg.open_signed(&versioned_key(&role, *e))) else {
            return Ok(());
        };
        let Some((counter, target)) = tagged(body, "sapreq").and_then(Term::as_pair) else {
            return Ok(());
        };
        let (Some(counter), Some(target)) = (counter.as_counter(), target.as_counter()) else {
            return Ok(());
        };
        if counter <= ctx.device(p).counter {
            return Ok(());
        }
        ctx.device_mut(p).counter = counter;
        ctx.emit(EventKind::RecvRequest {
            prover: p,
            request: body.clone(),
        });
        let children = self.cfg.topology.children(p);
        for c in &children {
            ctx.send(p, *c, msg.clone());
        }
        self.runs.insert(
            p,
            Run {
                counter,
                target,
                request: body.clone(),
                measured: false,
                pending: children.into_iter().collect(),
                tokens: Vec::new(),
                sent: false,
            },
        );
        let offset = self.cfg.sap.clock_offsets.get(&p).copied().unwrap_or(0);
        let when = (target as i64 - offset).max(0) as u64;
        let when = if when < ctx.now().0 {
            ctx.warn(format!("{} received the request after its measurement time", ctx.device(p).name));
            ctx.now()
        } else {
            TimePoint(when)
        };
        ctx.set_timer(p, when, TimerTag::Measure(counter)).map_err(|e| e.to_string())
    }

    fn on_measure(&mut self, ctx: &mut Ctx, p: DeviceId, counter: u64) -> Result<(), String> {
        let Some(run) = self.runs.get(&p).filter(|r| r.counter == counter && !r.measured) else {
            return Ok(());
        };
        let target = run.target;
        let state = ctx.measure(p);
        let key = ctx.key(p, "dev").ok_or("prover has no device key")?;
        let tok = Term::pair(
            Term::atom(&ctx.device(p).name),
            Self::token(key, counter, target, &state.to_string()),
        );
        let run = self.runs.get_mut(&p).expect("checked above");
        run.measured = true;
        run.tokens.insert(0, tok);
        if run.pending.is_empty() {
            return self.send_report(ctx, p);
        }
        let wait = 2 * self.eps() + 2 * self.cfg.latency * self.cfg.topology.height(p);
        ctx.set_timer(p, ctx.now().plus(wait), TimerTag::Deadline(counter))
            .map_err(|e| e.to_string())
    }

    fn send_report(&mut self, ctx: &mut Ctx, p: DeviceId) -> Result<(), String> {
        let Some(run) = self.runs.get_mut(&p).filter(|r| r.measured && !r.sent) else {
            return Ok(());
        };
        run.sent = true;
        let run = run.clone();
        let parent = self.cfg.topology.parent_of(p).ok_or("prover without parent")?;
        let body = Term::pair(
            Term::atom("saprep"),
            Term::pair(
                Term::atom(&ctx.device(p).name),
                Term::pair(Term::Counter(run.counter), Term::list(run.tokens)),
            ),
        );
        ctx.send(p, parent, body);
        ctx.emit(EventKind::RunComplete {
            prover: p,
            initiator: self.cfg.verifier,
            request: run.request,
        });
        Ok(())
    }

    fn on_report(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String> {
        let Some((sender, rest)) = tagged(body, "saprep").and_then(Term::as_pair) else {
            return Ok(());
        };
        let Some((counter, tokens)) = rest.as_pair() else {
            return Ok(());
        };
        let (Some(sender), Some(counter), Some(tokens)) =
            (device_named(ctx.world, sender), counter.as_counter(), tokens.as_list())
        else {
            return Ok(());
        };
        if dst == self.cfg.verifier {
            let Some(run) = self.verifier.as_mut().filter(|r| r.counter == counter) else {
                return Ok(());
            };
            if !run.pending.remove(&sender) {
                return Ok(());
            }
            for t in &tokens {
                if let Some((q, tok)) = t.as_pair() {
                    if let Some(q) = device_named(ctx.world, q) {
                        run.tokens.entry(q).or_insert_with(|| tok.clone());
                    }
                }
            }
            let eps_end = TimePoint(run.target + self.cfg.sap.epsilon);
            if run.pending.is_empty() {
                if ctx.now() >= eps_end {
                    return self.claim(ctx);
                }
                let id = run.id;
                return ctx
                    .set_timer(dst, eps_end, TimerTag::Deadline(id))
                    .map_err(|e| e.to_string());
            }
            return Ok(());
        }
        let Some(run) = self.runs.get_mut(&dst).filter(|r| r.counter == counter && !r.sent) else {
            return Ok(());
        };
        if !run.pending.remove(&sender) {
            return Ok(());
        }
        run.tokens.extend(tokens);
        if run.pending.is_empty() && run.measured {
            return self.send_report(ctx, dst);
        }
        Ok(())
    }
}

impl Protocol for Sap {
    fn start(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        if self.cfg.rounds > 0 {
            ctx.set_timer(self.cfg.verifier, TimePoint(self.cfg.round_start), TimerTag::Round(0))
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String> {
        if tagged(body, "saprep").is_some() {
            return self.on_report(ctx, dst, body);
        }
        match body.as_pair() {
            Some((b, _)) if tagged(b, "sapreq").is_some() && dst != self.cfg.verifier => self.on_request(ctx, dst, body),
            _ => Ok(()),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, device: DeviceId, tag: TimerTag) -> Result<(), String> {
        match tag {
            TimerTag::Round(_) if device == self.cfg.verifier => self.start_round(ctx),
            TimerTag::Deadline(id) if device == self.cfg.verifier => {
                if self.verifier.as_ref().is_some_and(|r| r.id == id) {
                    self.claim(ctx)
                } else {
                    Ok(())
                }
            }
            TimerTag::Measure(c) => self.on_measure(ctx, device, c),
            TimerTag::Deadline(c) => {
                if self.runs.get(&device).is_some_and(|r| r.counter == c) {
                    self.send_report(ctx, device)
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn inject_candidates(&self, world: &World) -> Vec<(DeviceId, Term)> {
        let mut out = Vec::new();
        for r in observed_with_tag(world, "sapreq") {
            for p in &self.cfg.provers {
                out.push((*p, r.clone()));
            }
        }
        for r in world
            .knowledge
            .analyzed()
            .iter()
            .filter(|t| tagged(t, "saprep").is_some())
        {
            if let Some(parent) = r
                .as_pair()
                .and_then(|(_, rest)| rest.as_pair())
                .and_then(|(s, _)| device_named(world, s))
                .and_then(|s| self.cfg.topology.parent_of(s))
            {
                out.push((parent, r.clone()));
            }
        }
        out
    }
}
