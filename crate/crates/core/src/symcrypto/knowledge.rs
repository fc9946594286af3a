//! Dolev-Yao deduction under perfect cryptography.
//!
//! Analysis rules (unbounded, they only shrink terms): projection of pairs,
//! decryption of `senc` with a derivable key, reading the body of a `sign`,
//! and splitting bit vectors. MACs and hashes reveal nothing.
//!
//! Synthesis rules build `pair`, `mac`, `senc`, `sign`, `h` and `bv` from
//! derivable parts. Synthesized terms are bounded to height `<= depth`, and
//! bit vectors additionally to width `<= depth`. The bits `1` and `0` are
//! public, and so is every counter (a multiset of the public unit). Every
//! other atomic term is known only if observed.

use super::term::{normalize, Term};
use std::collections::BTreeSet;

pub const DEFAULT_DEPTH: usize = 6;

/// Finite set of terms known to the adversary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeSet {
    terms: BTreeSet<Term>,
}

impl KnowledgeSet {
    pub fn new() -> KnowledgeSet {
        KnowledgeSet::default()
    }

    pub fn insert(&mut self, t: Term) -> bool {
        let t = normalize(&t).unwrap_or(t);
        self.terms.insert(t)
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.terms.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_subset(&self, other: &KnowledgeSet) -> bool {
        self.terms.is_subset(&other.terms)
    }
}

impl FromIterator<Term> for KnowledgeSet {
    fn from_iter<I: IntoIterator<Item = Term>>(iter: I) -> Self {
        let mut k = KnowledgeSet::new();
        for t in iter {
            k.insert(t);
        }
        k
    }
}

/// Analysis-saturated adversary knowledge, grown incrementally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Knowledge {
    analyzed: KnowledgeSet,
    /// Encryptions whose key is not (yet) derivable.
    locked: Vec<Term>,
    depth: usize,
}

impl Knowledge {
    pub fn new(depth: usize) -> Knowledge {
        Knowledge {
            analyzed: KnowledgeSet::new(),
            locked: Vec::new(),
            depth: depth.max(1),
        }
    }

    pub fn from_set(k: &KnowledgeSet, depth: usize) -> Knowledge {
        let mut out = Knowledge::new(depth);
        for t in k.iter() {
            out.learn(t.clone());
        }
        out
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn analyzed(&self) -> &KnowledgeSet {
        &self.analyzed
    }

    /// Adds `t` and everything analysis extracts from it. Returns whether
    /// anything new was learnt.
    pub fn learn(&mut self, t: Term) -> bool {
        let mut grew = false;
        let mut work = vec![normalize(&t).unwrap_or(t)];
        loop {
            while let Some(t) = work.pop() {
                if self.analyzed.contains(&t) {
                    continue;
                }
                match &t {
                    Term::Pair(a, b) => {
                        work.push((**a).clone());
                        work.push((**b).clone());
                    }
                    Term::Sign(_, body) => work.push((**body).clone()),
                    Term::BitVec(items) => work.extend(items.iter().cloned()),
                    Term::SymEnc(..) => self.locked.push(t.clone()),
                    _ => {}
                }
                self.analyzed.terms.insert(t);
                grew = true;
            }
            // a newly learnt key may unlock earlier encryptions
            let (open, still): (Vec<Term>, Vec<Term>) = std::mem::take(&mut self.locked)
                .into_iter()
                .partition(|enc| match enc {
                    Term::SymEnc(k, _) => self.can_derive(k),
                    _ => false,
                });
            self.locked = still;
            if open.is_empty() {
                return grew;
            }
            for enc in open {
                if let Term::SymEnc(_, body) = enc {
                    work.push((*body).clone());
                }
            }
        }
    }

    pub fn can_derive(&self, t: &Term) -> bool {
        match normalize(t) {
            Ok(t) => synth(&self.analyzed, &t, self.depth),
            Err(_) => false,
        }
    }

    /// Like [`Knowledge::can_derive`], but bounds the number of constructors
    /// stacked on top of analyzed terms instead of the absolute height.
    pub fn can_derive_within(&self, t: &Term, steps: usize) -> bool {
        match normalize(t) {
            Ok(t) => synth_steps(&self.analyzed, &t, steps),
            Err(_) => false,
        }
    }
}

/// Derivability with at most `steps` nested synthesis rules above known terms.
fn synth_steps(known: &KnowledgeSet, t: &Term, steps: usize) -> bool {
    if known.contains(t) || matches!(t, Term::Bit(_) | Term::Counter(_)) {
        return true;
    }
    if steps == 0 {
        return false;
    }
    match t {
        Term::Atom(_) | Term::Nonce(_) | Term::Key(_) | Term::Or(..) | Term::And(..) => false,
        _ => t.children().into_iter().all(|c| synth_steps(known, c, steps - 1)),
    }
}

fn synth(known: &KnowledgeSet, t: &Term, depth: usize) -> bool {
    if known.contains(t) || matches!(t, Term::Bit(_) | Term::Counter(_)) {
        return true;
    }
    if t.height() > depth {
        return false;
    }
    match t {
        Term::Atom(_) | Term::Nonce(_) | Term::Key(_) | Term::Counter(_) | Term::Bit(_) => false,
        Term::BitVec(items) if items.len() > depth => false,
        Term::Or(..) | Term::And(..) => false,
        _ => t.children().into_iter().all(|c| synth(known, c, depth)),
    }
}

/// Goal-directed membership test for `dy_close(k, depth)`.
pub fn can_derive(k: &KnowledgeSet, t: &Term, depth: usize) -> bool {
    Knowledge::from_set(k, depth).can_derive(t)
}

/// Materializes the bounded closure of `k`.
///
/// Counters are public, so the true closure is infinite; only `ctr(0)` and
/// observed counters are materialized.
/// The result grows exponentially with `depth`; this is meant for small sets
/// and shallow bounds. Use [`can_derive`] for membership queries.
pub fn dy_close(k: &KnowledgeSet, depth: usize) -> KnowledgeSet {
    let depth = depth.max(1);
    let know = Knowledge::from_set(k, depth);
    let mut all: BTreeSet<Term> = know.analyzed.terms.clone();
    all.insert(Term::one());
    all.insert(Term::zero());
    all.insert(Term::Counter(0));

    // bit vectors: elements are normalized bits, so height is always 2
    if depth >= 2 {
        for width in 1..=depth {
            for mask in 0u64..(1 << width) {
                all.insert(Term::bitvec((0..width).map(|i| mask >> i & 1 == 1)));
            }
        }
    }

    // layer by height; each new layer needs at least one child from the previous one
    let mut below: Vec<Term> = all.iter().filter(|t| t.height() == 1).cloned().collect();
    let mut prev: Vec<Term> = below.clone();
    for h in 2..=depth {
        let mut layer = BTreeSet::new();
        for x in &prev {
            layer.insert(Term::hash(x.clone()));
        }
        for x in &below {
            for y in &below {
                if x.height() != h - 1 && y.height() != h - 1 {
                    continue;
                }
                layer.insert(Term::pair(x.clone(), y.clone()));
                layer.insert(Term::mac(x.clone(), y.clone()));
                layer.insert(Term::senc(x.clone(), y.clone()));
                layer.insert(Term::sign(x.clone(), y.clone()));
            }
        }
        // analyzed terms of this height, and bit vectors, join the next round's inputs
        layer.extend(all.iter().filter(|t| t.height() == h).cloned());
        prev = layer.iter().cloned().collect();
        below.extend(prev.iter().cloned());
        below.sort();
        below.dedup();
        all.extend(layer);
    }
    KnowledgeSet { terms: all }
}
