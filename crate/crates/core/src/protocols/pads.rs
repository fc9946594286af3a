//! PADS: non-interactive attestation by gossip convergence.
//!
//! Every prover self-attests periodically and gossips its status vector to
//! its neighbours. A vector entry is `pair('<device>', pair('<status>', ctr(stamp)))`
//! with `stamp = measurement tick + 1` (0 for unknown). Gossip body is
//! `pair('pads', pair('<sender>', entries))`, signed with the sender's key.
//! A relying party queries one prover and turns its vector into a claim.

use super::{device_named, device_role, observed_with_tag, tagged, Protocol, ProtocolConfig, TimerTag};
use crate::model::{DeviceId, EventKind, Interval, Status, TimePoint, ValidationSource};
use crate::simnet::{versioned_key, Ctx, World};
use crate::symcrypto::Term;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PadsParams {
    pub attest_period: u64,
    pub gossip_period: u64,
    /// Freshness window of a query; entries measured earlier are ignored.
    pub window: u64,
    pub query_at: u64,
    pub query_period: u64,
    /// Prover that answers queries; the first prover when unset.
    #[serde(skip)]
    pub target: Option<DeviceId>,
}

impl Default for PadsParams {
    fn default() -> Self {
        PadsParams {
            attest_period: 4,
            gossip_period: 2,
            window: 8,
            query_at: 10,
            query_period: 8,
            target: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Entry {
    status: Status,
    stamp: u64,
}

fn rank(s: Status) -> u8 {
    match s {
        Status::Unknown => 0,
        Status::Healthy => 1,
        Status::Unhealthy => 2,
    }
}

fn code(s: Status) -> &'static str {
    match s {
        Status::Healthy => "H",
        Status::Unhealthy => "U",
        Status::Unknown => "N",
    }
}

fn decode(s: &str) -> Option<Status> {
    match s {
        "H" => Some(Status::Healthy),
        "U" => Some(Status::Unhealthy),
        "N" => Some(Status::Unknown),
        _ => None,
    }
}

#[derive(Debug, Clone)]
struct Query {
    id: u32,
    sent_at: TimePoint,
}

#[derive(Debug, Clone)]
pub struct Pads {
    cfg: Arc<ProtocolConfig>,
    vectors: BTreeMap<DeviceId, BTreeMap<DeviceId, Entry>>,
    query: Option<Query>,
    answered: u32,
    done: bool,
}

impl Pads {
    pub fn new(cfg: Arc<ProtocolConfig>) -> Pads {
        let unknown = Entry {
            status: Status::Unknown,
            stamp: 0,
        };
        let blank: BTreeMap<DeviceId, Entry> = cfg.provers.iter().map(|p| (*p, unknown)).collect();
        Pads {
            vectors: cfg.provers.iter().map(|p| (*p, blank.clone())).collect(),
            done: cfg.rounds == 0,
            cfg,
            query: None,
            answered: 0,
        }
    }

    fn target(&self) -> DeviceId {
        self.cfg.pads.target.unwrap_or(self.cfg.provers[0])
    }

    fn entries_term(&self, world: &World, p: DeviceId) -> Term {
        Term::list(self.vectors[&p].iter().map(|(q, e)| {
            Term::pair(
                Term::atom(&world.devices[q.0 as usize].name),
                Term::pair(Term::atom(code(e.status)), Term::Counter(e.stamp)),
            )
        }))
    }

    fn parse_entries(world: &World, t: &Term) -> Option<Vec<(DeviceId, Entry)>> {
        t.as_list()?
            .iter()
            .map(|item| {
                let (q, rest) = item.as_pair()?;
                let (st, stamp) = rest.as_pair()?;
                Some((
                    device_named(world, q)?,
                    Entry {
                        status: decode(st.as_atom()?)?,
                        stamp: stamp.as_counter()?,
                    },
                ))
            })
            .collect()
    }

    fn signing_key(&self, ctx: &Ctx, signer: DeviceId, verifier_epoch: u64) -> Term {
        versioned_key(&device_role(&ctx.device(signer).name), verifier_epoch)
    }

    fn self_attest(&mut self, ctx: &mut Ctx, p: DeviceId) -> Result<(), String> {
        let state = ctx.measure(p);
        let healthy = ctx.is_acceptable(p, &state);
        ctx.emit(EventKind::Validation {
            validator: p,
            subject: p,
            source: ValidationSource::LocalStore,
            healthy,
        });
        let entry = Entry {
            status: if healthy { Status::Healthy } else { Status::Unhealthy },
            stamp: ctx.now().0 + 1,
        };
        self.vectors.get_mut(&p).ok_or("unknown prover")?.insert(p, entry);
        if !self.done {
            ctx.set_timer(p, ctx.now().plus(self.cfg.pads.attest_period), TimerTag::SelfAttest)
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn gossip(&mut self, ctx: &mut Ctx, p: DeviceId) -> Result<(), String> {
        let name = ctx.device(p).name.clone();
        let body = Term::pair(
            Term::atom("pads"),
            Term::pair(Term::atom(&name), self.entries_term(ctx.world, p)),
        );
        let key = ctx.key(p, "dev").ok_or("prover has no device key")?;
        let msg = Term::signed(key, body);
        for n in self.cfg.topology.neighbors(p) {
            ctx.send(p, n, msg.clone());
        }
        if !self.done {
            ctx.set_timer(p, ctx.now().plus(self.cfg.pads.gossip_period), TimerTag::Gossip)
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn on_gossip(&mut self, ctx: &mut Ctx, dst: DeviceId, msg: &Term) -> Result<(), String> {
        let Some((body, _)) = msg.as_pair() else {
            return Ok(());
        };
        let Some((sender, entries)) = tagged(body, "pads").and_then(Term::as_pair) else {
            return Ok(());
        };
        let Some(sender) = device_named(ctx.world, sender) else {
            return Ok(());
        };
        let epochs = ctx.accepted_epochs(dst);
        if !epochs.into_iter().any(|e| msg.open_signed(&self.signing_key(ctx, sender, e)).is_some()) {
            return Ok(());
        }
        let Some(entries) = Self::parse_entries(ctx.world, entries) else {
            ctx.warn(format!("malformed gossip at {}", ctx.device(dst).name));
            return Ok(());
        };
        let Some(vector) = self.vectors.get_mut(&dst) else {
            return Ok(());
        };
        let mut changed = Vec::new();
        for (q, e) in entries {
            let Some(cur) = vector.get_mut(&q) else { continue };
            if e.stamp > cur.stamp || (e.stamp == cur.stamp && rank(e.status) > rank(cur.status)) {
                *cur = e;
                if e.status != Status::Unknown {
                    changed.push((q, e.status == Status::Healthy));
                }
            }
        }
        for (q, healthy) in changed {
            ctx.emit(EventKind::Validation {
                validator: dst,
                subject: q,
                source: ValidationSource::LocalConsensus,
                healthy,
            });
        }
        Ok(())
    }

    fn send_query(&mut self, ctx: &mut Ctx, id: u32) -> Result<(), String> {
        let v = self.cfg.verifier;
        let counter = id as u64 + 1;
        ctx.emit(EventKind::AttStart { verifier: v, counter });
        let target = self.target();
        ctx.send(v, target, Term::pair(Term::atom("query"), Term::Counter(counter)));
        self.query = Some(Query { id, sent_at: ctx.now() });
        let wait = 3 * self.cfg.latency;
        ctx.set_timer(v, ctx.now().plus(wait), TimerTag::Deadline(id as u64))
            .map_err(|e| e.to_string())
    }

    fn finish_query(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        self.query = None;
        self.answered += 1;
        if self.answered < self.cfg.rounds {
            let at = TimePoint(self.cfg.pads.query_at + self.answered as u64 * self.cfg.pads.query_period);
            ctx.set_timer(self.cfg.verifier, at.max(ctx.now()), TimerTag::Query(self.answered))
                .map_err(|e| e.to_string())
        } else {
            self.done = true;
            Ok(())
        }
    }

    fn on_query(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String> {
        let Some(counter) = tagged(body, "query").and_then(Term::as_counter) else {
            return Ok(());
        };
        if !self.vectors.contains_key(&dst) {
            return Ok(());
        }
        let name = ctx.device(dst).name.clone();
        let resp = Term::pair(
            Term::atom("resp"),
            Term::pair(
                Term::Counter(counter),
                Term::pair(Term::atom(&name), self.entries_term(ctx.world, dst)),
            ),
        );
        let key = ctx.key(dst, "dev").ok_or("prover has no device key")?;
        ctx.send(dst, self.cfg.verifier, Term::signed(key, resp));
        Ok(())
    }

    fn on_response(&mut self, ctx: &mut Ctx, msg: &Term) -> Result<(), String> {
        let Some(q) = self.query.clone() else {
            return Ok(());
        };
        let Some((body, _)) = msg.as_pair() else {
            return Ok(());
        };
        let Some((counter, rest)) = tagged(body, "resp").and_then(Term::as_pair) else {
            return Ok(());
        };
        let Some((sender, entries)) = rest.as_pair() else {
            return Ok(());
        };
        if counter.as_counter() != Some(q.id as u64 + 1) || device_named(ctx.world, sender) != Some(self.target()) {
            return Ok(());
        }
        let v = self.cfg.verifier;
        let epochs = ctx.accepted_epochs(v);
        if !epochs.into_iter().any(|e| msg.open_signed(&self.signing_key(ctx, self.target(), e)).is_some()) {
            return Ok(());
        }
        let Some(entries) = Self::parse_entries(ctx.world, entries) else {
            return Ok(());
        };
        let start = q.sent_at.saturating_minus(self.cfg.pads.window);
        let statuses = entries
            .into_iter()
            .filter(|(_, e)| e.status != Status::Unknown && e.stamp > start.0)
            .map(|(d, e)| (d, e.status))
            .collect();
        let interval = Interval::new(start, ctx.now()).ok_or("claim before window start")?;
        ctx.emit(EventKind::ClaimIndividual {
            relying_party: v,
            statuses,
            interval,
            counter: q.id as u64 + 1,
        });
        self.finish_query(ctx)
    }
}

impl Protocol for Pads {
    fn start(&mut self, ctx: &mut Ctx) -> Result<(), String> {
        for p in self.cfg.provers.clone() {
            ctx.set_timer(p, TimePoint::ZERO, TimerTag::SelfAttest).map_err(|e| e.to_string())?;
            ctx.set_timer(p, TimePoint::ZERO, TimerTag::Gossip).map_err(|e| e.to_string())?;
        }
        if self.cfg.rounds > 0 {
            ctx.set_timer(self.cfg.verifier, TimePoint(self.cfg.pads.query_at), TimerTag::Query(0))
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut Ctx, dst: DeviceId, body: &Term) -> Result<(), String> {
        if tagged(body, "query").is_some() {
            return self.on_query(ctx, dst, body);
        }
        let inner = body.as_pair().map(|(b, _)| b);
        match inner {
            Some(b) if tagged(b, "pads").is_some() => self.on_gossip(ctx, dst, body),
            Some(b) if tagged(b, "resp").is_some() && dst == self.cfg.verifier => self.on_response(ctx, body),
            _ => Ok(()),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, device: DeviceId, tag: TimerTag) -> Result<(), String> {
        match tag {
            TimerTag::SelfAttest => self.self_attest(ctx, device),
            TimerTag::Gossip => self.gossip(ctx, device),
            TimerTag::Query(id) => self.send_query(ctx, id),
            TimerTag::Deadline(id) => {
                if self.query.as_ref().is_some_and(|q| q.id as u64 == id) {
                    ctx.warn(format!("query {} unanswered", id + 1));
                    self.finish_query(ctx)
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
        for g in observed_with_tag(world, "pads") {
            for p in &self.cfg.provers {
                out.push((*p, g.clone()));
            }
        }
        for r in observed_with_tag(world, "resp") {
            out.push((self.cfg.verifier, r.clone()));
        }
        out
    }
}
