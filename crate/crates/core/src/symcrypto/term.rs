use std::sync::Arc;

/// Symbolic message. Free algebra except for the OR/AND equations on bits,
/// which [`normalize`] applies.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Atom(Arc<str>),
    Nonce(Arc<str>),
    Key(Arc<str>),
    /// Multiset of `n + 1` units; only the cardinality is observable.
    Counter(u64),
    Pair(Arc<Term>, Arc<Term>),
    Mac(Arc<Term>, Arc<Term>),
    SymEnc(Arc<Term>, Arc<Term>),
    Sign(Arc<Term>, Arc<Term>),
    Hash(Arc<Term>),
    Bit(bool),
    BitVec(Arc<[Term]>),
    Or(Arc<Term>, Arc<Term>),
    And(Arc<Term>, Arc<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TermError {
    #[error("{op} applied to non-bit operands `{left}` and `{right}`")]
    TypeMismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error("bit vector element `{0}` is not a bit")]
    NotABit(String),
    #[error("parse error at byte {pos}: {message}")]
    Parse { pos: usize, message: String },
}

impl Term {
    pub fn atom(name: &str) -> Term {
        Term::Atom(name.into())
    }

    pub fn nonce(id: &str) -> Term {
        Term::Nonce(id.into())
    }

    pub fn key(id: &str) -> Term {
        Term::Key(id.into())
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::Pair(Arc::new(a), Arc::new(b))
    }

    pub fn mac(key: Term, body: Term) -> Term {
        Term::Mac(Arc::new(key), Arc::new(body))
    }

    pub fn senc(key: Term, body: Term) -> Term {
        Term::SymEnc(Arc::new(key), Arc::new(body))
    }

    pub fn sign(key: Term, body: Term) -> Term {
        Term::Sign(Arc::new(key), Arc::new(body))
    }

    pub fn hash(t: Term) -> Term {
        Term::Hash(Arc::new(t))
    }

    pub fn or(a: Term, b: Term) -> Term {
        Term::Or(Arc::new(a), Arc::new(b))
    }

    pub fn and(a: Term, b: Term) -> Term {
        Term::And(Arc::new(a), Arc::new(b))
    }

    pub fn one() -> Term {
        Term::Bit(true)
    }

    pub fn zero() -> Term {
        Term::Bit(false)
    }

    pub fn bitvec(bits: impl IntoIterator<Item = bool>) -> Term {
        Term::BitVec(bits.into_iter().map(Term::Bit).collect())
    }

    /// Right-nested pairs terminated by `'nil'`.
    pub fn list(items: impl IntoIterator<Item = Term>) -> Term {
        let items: Vec<Term> = items.into_iter().collect();
        items
            .into_iter()
            .rev()
            .fold(Term::atom("nil"), |acc, t| Term::pair(t, acc))
    }

    /// Inverse of [`Term::list`].
    pub fn as_list(&self) -> Option<Vec<Term>> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Term::Atom(a) if &**a == "nil" => return Some(out),
                Term::Pair(h, t) => {
                    out.push((**h).clone());
                    cur = t;
                }
                _ => return None,
            }
        }
    }

    /// `pair(body, mac(key, body))`.
    pub fn authenticated(key: Term, body: Term) -> Term {
        Term::pair(body.clone(), Term::mac(key, body))
    }

    /// Splits `pair(body, mac(key, body))` when the MAC verifies under `key`.
    pub fn open_authenticated<'a>(&'a self, key: &Term) -> Option<&'a Term> {
        match self {
            Term::Pair(body, tag) => match &**tag {
                Term::Mac(k, b) if &**k == key && b == body => Some(body),
                _ => None,
            },
            _ => None,
        }
    }

    /// `pair(body, sign(key, body))`.
    pub fn signed(key: Term, body: Term) -> Term {
        Term::pair(body.clone(), Term::sign(key, body))
    }

    /// Splits `pair(body, sign(key, body))` when the signature is by `key`.
    pub fn open_signed<'a>(&'a self, key: &Term) -> Option<&'a Term> {
        match self {
            Term::Pair(body, sig) => match &**sig {
                Term::Sign(k, b) if &**k == key && b == body => Some(body),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn as_pair(&self) -> Option<(&Term, &Term)> {
        match self {
            Term::Pair(a, b) => Some((a, b)),
            _ => None,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Term::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_counter(&self) -> Option<u64> {
        match self {
            Term::Counter(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_bits(&self) -> Option<Vec<bool>> {
        match self {
            Term::BitVec(items) => items
                .iter()
                .map(|b| match b {
                    Term::Bit(v) => Some(*v),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }

    pub fn is_atomic(&self) -> bool {
        matches!(
            self,
            Term::Atom(_) | Term::Nonce(_) | Term::Key(_) | Term::Counter(_) | Term::Bit(_)
        )
    }

    /// Nesting height; atomic terms have height 1.
    pub fn height(&self) -> usize {
        match self {
            Term::Atom(_) | Term::Nonce(_) | Term::Key(_) | Term::Counter(_) | Term::Bit(_) => 1,
            Term::Hash(t) => 1 + t.height(),
            Term::Pair(a, b)
            | Term::Mac(a, b)
            | Term::SymEnc(a, b)
            | Term::Sign(a, b)
            | Term::Or(a, b)
            | Term::And(a, b) => 1 + a.height().max(b.height()),
            Term::BitVec(items) => 1 + items.iter().map(Term::height).max().unwrap_or(0),
        }
    }

    /// Number of constructor nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Atom(_) | Term::Nonce(_) | Term::Key(_) | Term::Counter(_) | Term::Bit(_) => 1,
            Term::Hash(t) => 1 + t.size(),
            Term::Pair(a, b)
            | Term::Mac(a, b)
            | Term::SymEnc(a, b)
            | Term::Sign(a, b)
            | Term::Or(a, b)
            | Term::And(a, b) => 1 + a.size() + b.size(),
            Term::BitVec(items) => 1 + items.iter().map(Term::size).sum::<usize>(),
        }
    }

    /// Immediate subterms.
    pub fn children(&self) -> Vec<&Term> {
        match self {
            Term::Hash(t) => vec![t],
            Term::Pair(a, b)
            | Term::Mac(a, b)
            | Term::SymEnc(a, b)
            | Term::Sign(a, b)
            | Term::Or(a, b)
            | Term::And(a, b) => vec![a, b],
            Term::BitVec(items) => items.iter().collect(),
            _ => Vec::new(),
        }
    }
}

impl std::fmt::Debug for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Display::fmt(self, f)
    }
}

#[derive(Clone, Copy)]
enum BitOp {
    Or,
    And,
}

impl BitOp {
    fn name(self) -> &'static str {
        match self {
            BitOp::Or => "or",
            BitOp::And => "and",
        }
    }

    fn apply(self, a: bool, b: bool) -> bool {
        match self {
            BitOp::Or => a || b,
            BitOp::And => a && b,
        }
    }
}

fn combine(op: BitOp, a: Term, b: Term) -> Result<Term, TermError> {
    match (&a, &b) {
        (Term::Bit(x), Term::Bit(y)) => Ok(Term::Bit(op.apply(*x, *y))),
        (Term::BitVec(xs), Term::BitVec(ys)) if xs.len() == ys.len() => xs
            .iter()
            .zip(ys.iter())
            .map(|(x, y)| combine(op, x.clone(), y.clone()))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| Term::BitVec(v.into())),
        _ => Err(TermError::TypeMismatch {
            op: op.name(),
            left: a.to_string(),
            right: b.to_string(),
        }),
    }
}

/// Applies the OR/AND equations everywhere in `t`.
///
/// Terms without `or`/`and` nodes come back structurally identical.
pub fn normalize(t: &Term) -> Result<Term, TermError> {
    Ok(match t {
        Term::Atom(_) | Term::Nonce(_) | Term::Key(_) | Term::Counter(_) | Term::Bit(_) => t.clone(),
        Term::Or(a, b) => combine(BitOp::Or, normalize(a)?, normalize(b)?)?,
        Term::And(a, b) => combine(BitOp::And, normalize(a)?, normalize(b)?)?,
        Term::BitVec(items) => {
            let items = items
                .iter()
                .map(|x| {
                    let n = normalize(x)?;
                    match n {
                        Term::Bit(_) => Ok(n),
                        other => Err(TermError::NotABit(other.to_string())),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Term::BitVec(items.into())
        }
        Term::Pair(a, b) => Term::pair(normalize(a)?, normalize(b)?),
        Term::Mac(a, b) => Term::mac(normalize(a)?, normalize(b)?),
        Term::SymEnc(a, b) => Term::senc(normalize(a)?, normalize(b)?),
        Term::Sign(a, b) => Term::sign(normalize(a)?, normalize(b)?),
        Term::Hash(a) => Term::hash(normalize(a)?),
    })
}

/// True when no `or`/`and` node remains.
pub fn is_normal(t: &Term) -> bool {
    match t {
        Term::Or(..) | Term::And(..) => false,
        _ => t.children().into_iter().all(is_normal),
    }
}
