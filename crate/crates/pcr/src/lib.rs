//! Probabilistic circuit restructuring.
//!
//! A structured-decomposable probabilistic circuit (PC) factorizes a joint
//! distribution according to a vtree: every product node splits its scope the
//! way some inner vtree node does. This crate converts such circuits into
//! tree-shaped Bayesian networks over one latent per inner vtree node,
//! computes vtree labellings (latent sets that render target scopes
//! conditionally independent), and rebuilds circuits over arbitrary target
//! vtrees from the labelled conditionals. On top of that sit cross-vtree
//! circuit multiplication (including on-the-fly multiplication with
//! non-structured contiguous circuits), compilation of PCFGs into contiguous
//! circuits, and log-depth reduction.
//!
//! Everything is verified at desk scale against brute-force oracles in
//! [`oracle`].

pub mod bn;
pub mod circuit;
pub mod generate;
pub mod grammar;
pub mod labelling;
pub mod logical;
pub mod oracle;
pub mod product;
pub mod restructure;
pub mod vtree;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("node {node}: weights sum to {total}, not normalized")]
    WeightsNotNormalized { node: usize, total: f64 },
    #[error("sum node {node} is not smooth")]
    NotSmooth { node: usize },
    #[error("product node {node} is not decomposable")]
    NotDecomposable { node: usize },
    #[error("circuit is not structured: {0}")]
    NotStructured(String),
    #[error("circuit/vtree mismatch: {0}")]
    VtreeMismatch(String),
    #[error("not contiguous: {0}")]
    NotContiguous(String),
    #[error("vtree is not right-linear: {0}")]
    NotLinear(String),
    #[error("invalid assignment: {0}")]
    InvalidAssignment(String),
    #[error("invalid labelling: {0}")]
    InvalidLabelling(String),
    #[error("{stage}: table of {required} entries exceeds budget {budget}")]
    BudgetExceeded {
        stage: String,
        required: u64,
        budget: u64,
    },
    #[error("grammar error: {0}")]
    Grammar(String),
    #[error("domain too large for exhaustive enumeration: {0} states")]
    DomainTooLarge(u64),
    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tolerance for weight/CPT normalization checks.
pub const NORM_TOL: f64 = 1e-9;

/// Default entry budget for conditional tables built during restructuring.
pub const DEFAULT_TABLE_BUDGET: u64 = 10_000_000;

/// Iterator over all joint assignments of the given cardinalities, in
/// lexicographic order (first coordinate slowest). Empty scope yields one
/// empty assignment.
pub fn assignments(cards: &[usize]) -> Assignments {
    Assignments {
        cards: cards.to_vec(),
        next: Some(vec![0; cards.len()]),
    }
}

pub struct Assignments {
    cards: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for Assignments {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cards.iter().any(|&c| c == 0) {
            return None;
        }
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        let mut i = succ.len();
        loop {
            if i == 0 {
                self.next = None;
                break;
            }
            i -= 1;
            succ[i] += 1;
            if succ[i] < self.cards[i] {
                self.next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_order_is_lexicographic() {
        let all: Vec<_> = assignments(&[2, 3]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[5], vec![1, 2]);
    }

    #[test]
    fn empty_scope_has_one_assignment() {
        let all: Vec<_> = assignments(&[]).collect();
        assert_eq!(all, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn zero_cardinality_has_none() {
        assert_eq!(assignments(&[2, 0]).count(), 0);
    }
}
