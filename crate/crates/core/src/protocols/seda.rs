//! SEDA: spanning-tree attestation with per-link keys and counted reports.
//!
//! Request body: `pair('sreq', ctr(c))`, authenticated per hop under the
//! link key. Report body:
//! `pair('srep', pair('<sender>', pair(ctr(c), pair('<state>', pair(ctr(ok), ctr(total))))))`
//! where `ok` and `total` count the sender's descendants.

use super::{device_named, link_role, observed_with_tag, tagged, Protocol, ProtocolConfig, TimerTag};
use crate::model::{DeviceId, EventKind, GroupStatus, Interval, SoftwareState, Status, TimePoint, ValidationSource};
use crate::simnet::{Ctx, World};
use crate::symcrypto::Term;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Clone)]
struct Run {
    id: u64,
    counter: u64,
    request: Term,
    state: SoftwareState,
    pending: BTreeSet<DeviceId>,
    ok: u64,
    total: u64,
    sent: bool,
}

#[derive(Debug, Clone)]
struct VerifierRun {
    id: u64,
    counter: u64,
    att_start: TimePoint,
}

#[derive(Debug, Clone)]
pub struct Seda {
    cfg: Arc<ProtocolConfig>,
    round: u32,
    next_run: u64,
    verifier: Option<VerifierRun>,
    runs: BTreeMap<DeviceId, Run>,
    done: bool,
}

struct Report {
    sender: DeviceId,
    counter: u64,
    state: String,
    ok: u64,
    total: u64,
}

fn request_body(counter: u64) -> Term {
    Term::pair(Term::atom("sreq"), Term::Counter(counter))
}

fn report_body(sender: &str, counter: u64, state: &str, ok: u64, total: u64) -> Term {
    Term::pair(
        Term::atom("srep"),
        Term::pair(
            Term::atom(sender),
            Term::pair(
                Term::Counter(counter),
                Term::pair(Term::atom(state), Term::pair(Term::Counter(ok), Term::Counter(total))),
            ),
        ),
    )
}

fn parse_report(world: &World, body: &Term) -> Option<Report> {
    let rest = tagged(body, "srep")?;
    let (sender, rest) = rest.as_pair()?;
    let (counter, rest) = rest.as_pair()?;
    let (state, rest) = rest.as_pair()?;
    let (ok, total) = rest.as_pair()?;
    Some(Report {
        sender: device_named(world, sender)?,
        counter: counter.as_counter()?,
        state: state.as_atom()?.to_string(),
        ok: ok.as_counter()?,
        total: total.as_counter()?,
    })
}

impl Seda {
    pub fn new(cfg: Arc<ProtocolConfig>) -> Seda {
        Seda {
            done: cfg.rounds == 0,
            cfg,
            round: 0,
            next_run: 0,
            verifier: None,
            runs: BTreeMap::new(),
        }
    }

    fn link_key(&self, ctx: &Ctx, holder: DeviceId, parent: DeviceId, child: DeviceId) -> Option<Term> {
        let role = link_role(&ctx.device(parent).name, &ctx.device(child).name);
        ctx.key(holder, &role)
    }

    fn link_verify_keys(&self, ctx: &Ctx, holder: DeviceId, parent: DeviceId, child: DeviceId) -> Vec<Term> {
        let role = link_role(&ctx.device(parent).name, &ctx.device(child).name);
        ctx.verify_keys(holder, &role)
    }

    fn initial_prover(&self) -> DeviceId {
        self.cfg.topology.children(self.cfg.verifier)[0]
    }

    fn start_round(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        let v = self.cfg.verifier;
        let counter = ctx.device(v).counter + 1;
        ctx.device_mut(v).counter = counter;
        let body = request_body(counter);
        ctx.emit(EventKind::AttStart { verifier: v, counter });
        for p in &self.cfg.provers {
            ctx.emit(EventKind::SendRequest {
                initiator: v,
                prover: *p,
                request: body.clone(),
            });
        }
        let root = self.initial_prover();
        let key = self.link_key(ctx, v, v, root).ok_or("verifier has no link key")?;
        ctx.send(v, root, Term::authenticated(key, body));
        let id = self.next_run;
        self.next_run += 1;
        self.verifier = Some(VerifierRun {
            id,
            counter,
            att_start: ctx.now(),
        });
        ctx.set_timer(v, ctx.now().plus(self.cfg.deadline()), TimerTag::Deadline(id))
            .map_err(|e| e.to_string())
    }

    fn claim(&mut self, ctx: &mut Ctx, healthy: bool) -> Result<(), String> {
        let Some(run) = self.verifier.take() else {
            return Ok(());
        };
        let interval = Interval::new(run.att_start, ctx.now()).ok_or("claim before attestation start")?;
        ctx.emit(EventKind::ClaimGroup {
            relying_party: self.cfg.verifier,
            groups: vec![GroupStatus {
                members: self.cfg.provers.iter().copied().collect(),
                status: if healthy { Status::Healthy } else { Status::Unhealthy },
            }],
            interval,
            counter: run.counter,
        });
        self.round += 1;
        if self.round < self.cfg.rounds {
            ctx.set_timer(self.cfg.verifier, ctx.now().plus(1), TimerTag::Round(self.round))
                .map_err(|e| e.to_string())?;
        } else {
            self.done = true;
        }
        Ok(())
    }

    fn on_request(&mut self, ctx: &mut Ctx, p: DeviceId, msg: &Term) -> Result<(), String> {
        let Some(parent) = self.cfg.topology.parent_of(p) else {
            return Ok(());
        };
        let keys = self.link_verify_keys(ctx, p, parent, p);
        let Some(body) = keys.iter().find_map(|k| msg.open_authenticated(k)) else {
            return Ok(());
        };
        let Some(counter) = tagged(body, "sreq").and_then(Term::as_counter) else {
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
        let state = ctx.measure(p);
        let children = self.cfg.topology.children(p);
        for c in &children {
            if let Some(k) = self.link_key(ctx, p, p, *c) {
                ctx.send(p, *c, Term::authenticated(k, body.clone()));
            }
        }
        let id = self.next_run;
        self.next_run += 1;
        self.runs.insert(
            p,
            Run {
                id,
                counter,
                request: body.clone(),
                state,
                pending: children.iter().copied().collect(),
                ok: 0,
                total: 0,
                sent: false,
            },
        );
        if children.is_empty() {
            self.send_report(ctx, p)
        } else {
            let wait = 2 * self.cfg.latency * self.cfg.topology.height(p);
            ctx.set_timer(p, ctx.now().plus(wait), TimerTag::Deadline(id))
                .map_err(|e| e.to_string())
        }
    }

    fn send_report(&mut self, ctx: &mut Ctx, p: DeviceId) -> Result<(), String> {
        let Some(run) = self.runs.get_mut(&p).filter(|r| !r.sent) else {
            return Ok(());
        };
        run.sent = true;
        let run = run.clone();
        let parent = self.cfg.topology.parent_of(p).ok_or("prover without parent")?;
        let name = ctx.device(p).name.clone();
        let body = report_body(&name, run.counter, &run.state.to_string(), run.ok, run.total);
        let key = self.link_key(ctx, p, parent, p).ok_or("prover has no link key")?;
        ctx.send(p, parent, Term::authenticated(key, body));
        ctx.emit(EventKind::RunComplete {
            prover: p,
            initiator: self.cfg.verifier,
            request: run.request,
        });
        Ok(())
    }

    fn on_report(&mut self, ctx: &mut Ctx, dst: DeviceId, msg: &Term) -> Result<(), String> {
        let Some(rep) = msg.as_pair().and_then(|(b, _)| parse_report(ctx.world, b)) else {
            return Ok(());
        };
        if self.cfg.topology.parent_of(rep.sender) != Some(dst) {
            return Ok(());
        }
        let keys = self.link_verify_keys(ctx, dst, dst, rep.sender);
        if !keys.iter().any(|k| msg.open_authenticated(k).is_some()) {
            return Ok(());
        }
        let healthy = rep
            .state
            .parse::<SoftwareState>()
            .is_ok_and(|s| ctx.is_acceptable(rep.sender, &s));
        if dst == self.cfg.verifier {
            let Some(run) = &self.verifier else {
                return Ok(());
            };
            if rep.counter != run.counter {
                return Ok(());
            }
            ctx.emit(EventKind::Validation {
                validator: dst,
                subject: rep.sender,
                source: ValidationSource::LocalStore,
                healthy,
            });
            let expect = self.cfg.provers.len() as u64 - 1;
            let all = healthy && rep.ok == expect && rep.total == expect;
            return self.claim(ctx, all);
        }
        let Some(run) = self.runs.get_mut(&dst).filter(|r| !r.sent) else {
            return Ok(());
        };
        // one report per child per run
        if rep.counter != run.counter || !run.pending.remove(&rep.sender) {
            return Ok(());
        }
        run.ok += rep.ok + healthy as u64;
        run.total += rep.total + 1;
        let finished = run.pending.is_empty();
        ctx.emit(EventKind::Validation {
            validator: dst,
            subject: rep.sender,
            source: ValidationSource::LocalStore,
            healthy,
        });
        if finished {
            self.send_report(ctx, dst)?;
        }
        Ok(())
    }
}

impl Protocol for Seda {
    fn start(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        if self.cfg.rounds > 0 {
            ctx.set_timer(self.cfg.verifier, TimePoint(self.cfg.round_start), TimerTag::Round(0))
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String> {
        let inner = body.as_pair().map(|(b, _)| b);
        match inner {
            Some(b) if tagged(b, "sreq").is_some() && dst != self.cfg.verifier => self.on_request(ctx, dst, body),
            Some(b) if tagged(b, "srep").is_some() => self.on_report(ctx, dst, body),
            _ => Ok(()),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, device: DeviceId, tag: TimerTag) -> Result<(), String> {
        match tag {
            TimerTag::Round(_) if device == self.cfg.verifier => self.start_round(ctx),
            TimerTag::Deadline(id) if device == self.cfg.verifier => {
                if self.verifier.as_ref().is_some_and(|r| r.id == id) {
                    self.claim(ctx, false)
                } else {
                    Ok(())
                }
            }
            TimerTag::Deadline(id) => {
                if self.runs.get(&device).is_some_and(|r| r.id == id) {
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
        for r in observed_with_tag(world, "sreq") {
            for p in &self.cfg.provers {
                out.push((*p, r.clone()));
            }
        }
        for r in observed_with_tag(world, "srep") {
            if let Some(rep) = r.as_pair().and_then(|(b, _)| parse_report(world, b)) {
                if let Some(parent) = self.cfg.topology.parent_of(rep.sender) {
                    out.push((parent, r.clone()));
                }
            }
        }
        out
    }
}
