//! SIMPLE+: tree aggregation of per-prover health bits.
//!
//! Request body: `pair('req', pair(ctr(c), pair(expected, sel)))` where
//! `expected` lists acceptable labels and `sel` marks the provers asked to
//! attest. Report body: `pair('rep', pair('<sender>', pair(ctr(c), bits)))`.
//! Both travel as `pair(body, mac(k(auth), body))`. The counter-less variant
//! drops the `ctr(c)` component.

use super::{device_named, observed_with_tag, tagged, Protocol, ProtocolConfig, TimerTag};
use crate::model::{DeviceId, EventKind, Interval, Status, TimePoint, ValidationSource};
use crate::simnet::{Ctx, World};
use crate::symcrypto::Term;
use rand::seq::index::sample;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Clone)]
struct VerifierRun {
    id: u64,
    counter: u64,
    att_start: TimePoint,
    selected: Vec<DeviceId>,
    pending: BTreeSet<DeviceId>,
    bits: Vec<bool>,
}

#[derive(Debug, Clone)]
struct ProverRun {
    id: u64,
    counter: Option<u64>,
    request: Term,
    pending: BTreeSet<DeviceId>,
    bits: Vec<bool>,
    sent: bool,
}

#[derive(Debug, Clone)]
pub struct SimplePlus {
    cfg: Arc<ProtocolConfig>,
    index: BTreeMap<DeviceId, usize>,
    round: u32,
    next_run: u64,
    verifier: Option<VerifierRun>,
    provers: BTreeMap<DeviceId, ProverRun>,
    done: bool,
}

struct Request {
    counter: Option<u64>,
    expected: Vec<Term>,
    selected: Vec<bool>,
}

struct Report {
    sender: DeviceId,
    counter: Option<u64>,
    bits: Vec<bool>,
}

impl SimplePlus {
    pub fn new(cfg: Arc<ProtocolConfig>) -> SimplePlus {
        let index = cfg.provers.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        SimplePlus {
            done: cfg.rounds == 0,
            cfg,
            index,
            round: 0,
            next_run: 0,
            verifier: None,
            provers: BTreeMap::new(),
        }
    }

    fn width(&self) -> usize {
        self.cfg.provers.len()
    }

    fn request_body(&self, counter: u64, expected: Vec<Term>, selected: &[bool]) -> Term {
        let tail = Term::pair(Term::list(expected), Term::bitvec(selected.iter().copied()));
        let tail = if self.cfg.counters {
            Term::pair(Term::Counter(counter), tail)
        } else {
            tail
        };
        Term::pair(Term::atom("req"), tail)
    }

    fn parse_request(&self, body: &Term) -> Option<Request> {
        let rest = tagged(body, "req")?;
        let (counter, rest) = if self.cfg.counters {
            let (c, rest) = rest.as_pair()?;
            (Some(c.as_counter()?), rest)
        } else {
            (None, rest)
        };
        let (expected, sel) = rest.as_pair()?;
        let selected = sel.as_bits()?;
        if selected.len() != self.width() {
            return None;
        }
        Some(Request {
            counter,
            expected: expected.as_list()?,
            selected,
        })
    }

    fn report_body(&self, sender: &str, counter: Option<u64>, bits: &[bool]) -> Term {
        let bv = Term::bitvec(bits.iter().copied());
        let tail = match counter {
            Some(c) if self.cfg.counters => Term::pair(Term::Counter(c), bv),
            _ => bv,
        };
        Term::pair(Term::atom("rep"), Term::pair(Term::atom(sender), tail))
    }

    fn parse_report(&self, world: &World, body: &Term) -> Option<Report> {
        let rest = tagged(body, "rep")?;
        let (sender, rest) = rest.as_pair()?;
        let sender = device_named(world, sender)?;
        let (counter, bv) = if self.cfg.counters {
            let (c, bv) = rest.as_pair()?;
            (Some(c.as_counter()?), bv)
        } else {
            (None, rest)
        };
        let bits = bv.as_bits()?;
        (bits.len() == self.width()).then_some(Report { sender, counter, bits })
    }

    fn start_round(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        let v = self.cfg.verifier;
        let counter = ctx.device(v).counter + 1;
        ctx.device_mut(v).counter = counter;
        let selected: Vec<DeviceId> = match self.cfg.sample {
            Some(k) if k < self.width() => {
                let mut idx = sample(ctx.rng(), self.width(), k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| self.cfg.provers[i]).collect()
            }
            _ => self.cfg.provers.clone(),
        };
        let mut mask = vec![false; self.width()];
        for p in &selected {
            mask[self.index[p]] = true;
        }
        let mut expected: BTreeSet<String> = BTreeSet::new();
        for p in &selected {
            expected.extend(ctx.acceptable_labels(*p).iter().map(|s| s.to_string()));
        }
        let body = self.request_body(counter, expected.iter().map(|s| Term::atom(s)).collect(), &mask);
        let key = ctx.key(v, "auth").ok_or("verifier has no authentication key")?;
        let msg = Term::authenticated(key, body.clone());

        ctx.emit(EventKind::AttStart { verifier: v, counter });
        for p in &selected {
            ctx.emit(EventKind::SendRequest {
                initiator: v,
                prover: *p,
                request: body.clone(),
            });
        }
        let children = self.cfg.topology.children(v);
        for c in &children {
            ctx.send(v, *c, msg.clone());
        }
        let id = self.next_run;
        self.next_run += 1;
        self.verifier = Some(VerifierRun {
            id,
            counter,
            att_start: ctx.now(),
            selected,
            pending: children.into_iter().collect(),
            bits: vec![false; self.width()],
        });
        ctx.set_timer(v, ctx.now().plus(self.cfg.deadline()), TimerTag::Deadline(id))
            .map_err(|e| e.to_string())
    }

    fn claim(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        let Some(run) = self.verifier.take() else {
            return Ok(());
        };
        let statuses = run
            .selected
            .iter()
            .map(|p| {
                let s = if run.bits[self.index[p]] {
                    Status::Healthy
                } else {
                    Status::Unhealthy
                };
                (*p, s)
            })
            .collect();
        let interval = Interval::new(run.att_start, ctx.now()).ok_or("claim before attestation start")?;
        ctx.emit(EventKind::ClaimIndividual {
            relying_party: self.cfg.verifier,
            statuses,
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
        let keys = ctx.verify_keys(p, "auth");
        let Some(body) = keys.iter().find_map(|k| msg.open_authenticated(k)) else {
            return Ok(());
        };
        let Some(req) = self.parse_request(body) else {
            return Ok(());
        };
        if let Some(c) = req.counter {
            if c <= ctx.device(p).counter {
                return Ok(());
            }
            ctx.device_mut(p).counter = c;
        }
        ctx.emit(EventKind::RecvRequest {
            prover: p,
            request: body.clone(),
        });
        let children = self.cfg.topology.children(p);
        for c in &children {
            ctx.send(p, *c, msg.clone());
        }
        let mut bits = vec![false; self.width()];
        let i = self.index[&p];
        if req.selected[i] {
            let state = ctx.measure(p);
            let healthy = req.expected.contains(&Term::atom(&state.to_string()));
            ctx.emit(EventKind::Validation {
                validator: p,
                subject: p,
                source: ValidationSource::VerifierSupplied,
                healthy,
            });
            bits[i] = healthy;
        }
        let id = self.next_run;
        self.next_run += 1;
        self.provers.insert(
            p,
            ProverRun {
                id,
                counter: req.counter,
                request: body.clone(),
                pending: children.iter().copied().collect(),
                bits,
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
        let Some(run) = self.provers.get_mut(&p).filter(|r| !r.sent) else {
            return Ok(());
        };
        run.sent = true;
        let (counter, bits, request) = (run.counter, run.bits.clone(), run.request.clone());
        let parent = self.cfg.topology.parent_of(p).ok_or("prover without parent")?;
        let body = self.report_body(&ctx.device(p).name.clone(), counter, &bits);
        let key = ctx.key(p, "auth").ok_or("prover has no authentication key")?;
        ctx.send(p, parent, Term::authenticated(key, body));
        ctx.emit(EventKind::RunComplete {
            prover: p,
            initiator: self.cfg.verifier,
            request,
        });
        Ok(())
    }

    fn on_report(&mut self, ctx: &mut Ctx, dst: DeviceId, msg: &Term) -> Result<(), String> {
        let keys = ctx.verify_keys(dst, "auth");
        let Some(body) = keys.iter().find_map(|k| msg.open_authenticated(k)) else {
            return Ok(());
        };
        let Some(rep) = self.parse_report(ctx.world, body) else {
            return Ok(());
        };
        if dst == self.cfg.verifier {
            let Some(run) = self.verifier.as_mut() else {
                return Ok(());
            };
            let fresh = rep.counter.is_none_or(|c| c == run.counter);
            if !fresh || !run.pending.remove(&rep.sender) {
                return Ok(());
            }
            for (b, r) in run.bits.iter_mut().zip(&rep.bits) {
                *b |= *r;
            }
            if run.pending.is_empty() {
                return self.claim(ctx);
            }
            return Ok(());
        }
        let Some(run) = self.provers.get_mut(&dst).filter(|r| !r.sent) else {
            return Ok(());
        };
        let fresh = rep.counter.is_none_or(|c| Some(c) == run.counter);
        if !fresh || !run.pending.remove(&rep.sender) {
            return Ok(());
        }
        for (b, r) in run.bits.iter_mut().zip(&rep.bits) {
            *b |= *r;
        }
        if run.pending.is_empty() {
            return self.send_report(ctx, dst);
        }
        Ok(())
    }
}

impl Protocol for SimplePlus {
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
            Some(b) if tagged(b, "req").is_some() && self.index.contains_key(&dst) => self.on_request(ctx, dst, body),
            Some(b) if tagged(b, "rep").is_some() => self.on_report(ctx, dst, body),
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
            TimerTag::Deadline(id) => {
                if self.provers.get(&device).is_some_and(|r| r.id == id) {
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
        let aggregators: Vec<DeviceId> = std::iter::once(self.cfg.verifier)
            .chain(
                self.cfg
                    .provers
                    .iter()
                    .copied()
                    .filter(|p| !self.cfg.topology.children(*p).is_empty()),
            )
            .collect();
        // replays of observed traffic
        let requests: Vec<&Term> = observed_with_tag(world, "req").collect();
        for r in &requests {
            for p in &self.cfg.provers {
                out.push((*p, (*r).clone()));
            }
        }
        for r in observed_with_tag(world, "rep") {
            for a in &aggregators {
                out.push((*a, r.clone()));
            }
        }
        // forgeries with every key the adversary has analyzed
        let keys: Vec<&Term> = world
            .knowledge
            .analyzed()
            .iter()
            .filter(|t| matches!(t, Term::Key(_)))
            .collect();
        if keys.is_empty() {
            return out;
        }
        let mut max_counter = 0;
        let mut templates = BTreeSet::new();
        for r in &requests {
            if let Some(req) = r.as_pair().and_then(|(b, _)| self.parse_request(b)) {
                max_counter = max_counter.max(req.counter.unwrap_or(0));
                templates.insert((req.expected, req.selected));
            }
        }
        for k in &keys {
            for (expected, selected) in &templates {
                let body = simpleplus_forged_request(self, max_counter + 1, expected.clone(), selected);
                for p in &self.cfg.provers {
                    out.push((*p, Term::authenticated((*k).clone(), body.clone())));
                }
            }
            if let Some(run) = &self.verifier {
                for c in self.cfg.topology.children(self.cfg.verifier) {
                    let name = &world.devices[c.0 as usize].name;
                    let body = self.report_body(name, Some(run.counter), &vec![true; self.width()]);
                    out.push((self.cfg.verifier, Term::authenticated((*k).clone(), body)));
                }
            }
        }
        out
    }
}

/// Request body with an attacker-chosen counter, reusing an observed
/// expected-state list and selection mask.
pub fn simpleplus_forged_request(sp: &SimplePlus, counter: u64, expected: Vec<Term>, selected: &[bool]) -> Term {
    sp.request_body(counter, expected, selected)
}
