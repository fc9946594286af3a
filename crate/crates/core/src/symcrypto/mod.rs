//! Symbolic term algebra with perfect-cryptography semantics and bounded
//! Dolev-Yao deduction.

mod knowledge;
mod syntax;
mod term;

pub use knowledge::{can_derive, dy_close, Knowledge, KnowledgeSet, DEFAULT_DEPTH};
pub use term::{is_normal, normalize, Term, TermError};
