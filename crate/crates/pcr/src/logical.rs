//! Logical circuits (smooth decomposable NNF) and the probabilistic bridge:
//! disjunctions become weighted sums, conjunctions become products, literals
//! become indicator leaves. Support is preserved in both directions, so
//! restructuring applies to logical circuits too, and model counts survive
//! the round trip for deterministic circuits.

use crate::circuit::{marginalize_evaluate, support_masks, Builder, Circuit, Node};
use crate::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LNode {
    Or(Vec<usize>),
    And(Vec<usize>),
    /// Literal: variable and phase (`true` for the positive literal).
    Lit(usize, bool),
    /// Smoothing gadget `x ∨ ¬x`, kept as one node.
    TrueVar(usize),
}

#[derive(Debug, Clone)]
pub struct LogicalCircuit {
    pub num_vars: usize,
    pub nodes: Vec<LNode>,
    pub root: usize,
}

impl LogicalCircuit {
    pub fn eval(&self, x: &[usize]) -> bool {
        let mut vals = vec![false; self.nodes.len()];
        // ids are in child-before-parent order by construction
        for (id, node) in self.nodes.iter().enumerate() {
            vals[id] = match node {
                LNode::Or(ch) => ch.iter().any(|&c| vals[c]),
                LNode::And(ch) => ch.iter().all(|&c| vals[c]),
                LNode::Lit(v, phase) => (x[*v] == 1) == *phase,
                LNode::TrueVar(_) => true,
            };
        }
        vals[self.root]
    }

    pub fn brute_force_count(&self) -> u64 {
        crate::assignments(&vec![2; self.num_vars])
            .filter(|x| self.eval(x))
            .count() as u64
    }
}

/// Replace ∨ with ⊕ (uniform weights) and ∧ with ⊗. The input must be smooth
/// and decomposable over binary variables; support is preserved exactly.
pub fn from_logical(l: &LogicalCircuit) -> Result<Circuit> {
    let mut b = Builder::new(l.num_vars, vec![2; l.num_vars]);
    let mut map = vec![usize::MAX; l.nodes.len()];
    for (id, node) in l.nodes.iter().enumerate() {
        map[id] = match node {
            LNode::Lit(v, phase) => {
                let table = if *phase { vec![0.0, 1.0] } else { vec![1.0, 0.0] };
                b.leaf(*v, table)
            }
            LNode::TrueVar(v) => b.leaf(*v, vec![1.0, 1.0]),
            LNode::And(ch) => {
                let kids = ch.iter().map(|&c| map[c]).collect();
                b.prod(kids)
            }
            LNode::Or(ch) => {
                let kids: Vec<usize> = ch.iter().map(|&c| map[c]).collect();
                let w = 1.0 / kids.len() as f64;
                b.sum(kids.clone(), vec![w; kids.len()])
            }
        };
    }
    let c = b.finish(map[l.root], false);
    let rep = crate::circuit::validate(&c);
    if !rep.decomposable {
        return Err(Error::NotDecomposable {
            node: rep.offending.map(|(id, _)| id).unwrap_or(c.root),
        });
    }
    if !rep.smooth {
        return Err(Error::NotSmooth {
            node: rep.offending.map(|(id, _)| id).unwrap_or(c.root),
        });
    }
    Ok(c)
}

/// Map a PC with 0/1-support leaves back to a logical circuit by support:
/// sums become ∨, products become ∧, leaves become literals (or the
/// full-support gadget).
pub fn to_logical(c: &Circuit) -> Result<LogicalCircuit> {
    if c.domains.iter().any(|&d| d != 2) {
        return Err(Error::Unsupported(
            "logical bridge needs binary variables".into(),
        ));
    }
    let mut nodes = Vec::new();
    let mut map = vec![usize::MAX; c.nodes.len()];
    for id in c.topo_order() {
        let lnode = match &c.nodes[id] {
            Node::Leaf { var, probs } => match (probs[0] > 0.0, probs[1] > 0.0) {
                (true, true) => LNode::TrueVar(*var),
                (false, true) => LNode::Lit(*var, true),
                (true, false) => LNode::Lit(*var, false),
                (false, false) => {
                    return Err(Error::Unsupported(format!(
                        "leaf {id} has empty support"
                    )))
                }
            },
            Node::Prod { children } => LNode::And(children.iter().map(|&ch| map[ch]).collect()),
            Node::Sum { children, .. } => LNode::Or(children.iter().map(|&ch| map[ch]).collect()),
        };
        map[id] = nodes.len();
        nodes.push(lnode);
    }
    Ok(LogicalCircuit {
        num_vars: c.num_vars,
        nodes,
        root: map[c.root],
    })
}

/// Model count by unweighted marginalization: indicator leaves, unit sum
/// weights, then one marginal pass. Exact for smooth, decomposable,
/// deterministic circuits.
pub fn model_count(c: &Circuit) -> Result<u64> {
    let masks = support_masks(c);
    let mut b = Builder::new(c.num_vars, c.domains.clone());
    let mut map = vec![usize::MAX; c.nodes.len()];
    for id in c.topo_order() {
        map[id] = match &c.nodes[id] {
            Node::Leaf { var, probs } => {
                let _ = masks[id].len();
                let table = probs
                    .iter()
                    .map(|&p| if p > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                b.leaf(*var, table)
            }
            Node::Prod { children } => {
                let kids = children.iter().map(|&ch| map[ch]).collect();
                b.prod(kids)
            }
            Node::Sum { children, .. } => {
                let kids: Vec<usize> = children.iter().map(|&ch| map[ch]).collect();
                let ones = vec![1.0; kids.len()];
                b.sum(kids, ones)
            }
        };
    }
    let unweighted = b.finish(map[c.root], true);
    let count = marginalize_evaluate(&unweighted, &vec![None; c.num_vars])?;
    Ok(count.round() as u64)
}

// ---------------------------------------------------------------------------
// OBDDs
// ---------------------------------------------------------------------------

/// Reference into an OBDD: a terminal or a decision node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BddRef {
    Terminal(bool),
    Node(usize),
}

/// Reduced ordered BDD over variables `0..n` in ascending test order.
#[derive(Debug, Clone)]
pub struct Obdd {
    pub num_vars: usize,
    /// `(var, low, high)` triples; low is the 0-branch.
    pub nodes: Vec<(usize, BddRef, BddRef)>,
    pub root: BddRef,
}

impl Obdd {
    /// Shannon expansion of a truth table (assignment index has variable 0 as
    /// the most significant bit), hash-consed and reduced.
    pub fn from_truth_table(num_vars: usize, table: &[bool]) -> Obdd {
        assert_eq!(table.len(), 1 << num_vars);
        let mut nodes = Vec::new();
        let mut dedup: HashMap<(usize, BddRef, BddRef), usize> = HashMap::new();
        fn rec(
            var: usize,
            num_vars: usize,
            slice: &[bool],
            nodes: &mut Vec<(usize, BddRef, BddRef)>,
            dedup: &mut HashMap<(usize, BddRef, BddRef), usize>,
        ) -> BddRef {
            if var == num_vars {
                return BddRef::Terminal(slice[0]);
            }
            let half = slice.len() / 2;
            let low = rec(var + 1, num_vars, &slice[..half], nodes, dedup);
            let high = rec(var + 1, num_vars, &slice[half..], nodes, dedup);
            if low == high {
                return low;
            }
            let key = (var, low, high);
            let id = *dedup.entry(key).or_insert_with(|| {
                nodes.push(key);
                nodes.len() - 1
            });
            BddRef::Node(id)
        }
        let root = rec(0, num_vars, table, &mut nodes, &mut dedup);
        Obdd {
            num_vars,
            nodes,
            root,
        }
    }

    pub fn eval(&self, x: &[usize]) -> bool {
        let mut cur = self.root;
        loop {
            match cur {
                BddRef::Terminal(b) => return b,
                BddRef::Node(i) => {
                    let (v, lo, hi) = self.nodes[i];
                    cur = if x[v] == 1 { hi } else { lo };
                }
            }
        }
    }
}

/// Convert an OBDD into a smooth deterministic decomposable NNF structured
/// along the variable order (right-linear vtree). Skipped variables are
/// filled with full-support gadgets so every disjunct covers the same scope.
pub fn obdd_to_nnf(o: &Obdd) -> Result<LogicalCircuit> {
    if o.root == BddRef::Terminal(false) {
        return Err(Error::Unsupported(
            "the constant-false OBDD has no NNF with nonempty support".into(),
        ));
    }
    let mut nodes: Vec<LNode> = Vec::new();
    let mut memo: HashMap<(BddRef, usize), Option<usize>> = HashMap::new();
    // formula over variables [level, n); None encodes false, usize::MAX the
    // empty conjunction (only at level == n)
    fn build(
        o: &Obdd,
        r: BddRef,
        level: usize,
        nodes: &mut Vec<LNode>,
        memo: &mut HashMap<(BddRef, usize), Option<usize>>,
    ) -> Option<usize> {
        if let Some(&cached) = memo.get(&(r, level)) {
            return cached;
        }
        let res = match r {
            BddRef::Terminal(false) => None,
            BddRef::Terminal(true) => Some(gadget_chain(o, level, nodes)),
            BddRef::Node(i) => {
                let (v, lo, hi) = o.nodes[i];
                debug_assert!(v >= level);
                if v > level {
                    // fill the skipped variable, keeping the right-linear shape
                    let rest = build(o, r, level + 1, nodes, memo);
                    rest.map(|rest| {
                        nodes.push(LNode::TrueVar(level));
                        let g = nodes.len() - 1;
                        if rest == usize::MAX {
                            g
                        } else {
                            nodes.push(LNode::And(vec![g, rest]));
                            nodes.len() - 1
                        }
                    })
                } else {
                    let mut branches = Vec::new();
                    for (phase, sub) in [(false, lo), (true, hi)] {
                        if let Some(rest) = build(o, sub, level + 1, nodes, memo) {
                            nodes.push(LNode::Lit(v, phase));
                            let lit = nodes.len() - 1;
                            let node = if rest == usize::MAX {
                                lit
                            } else {
                                nodes.push(LNode::And(vec![lit, rest]));
                                nodes.len() - 1
                            };
                            branches.push(node);
                        }
                    }
                    match branches.len() {
                        0 => None,
                        1 => Some(branches[0]),
                        _ => {
                            nodes.push(LNode::Or(branches));
                            Some(nodes.len() - 1)
                        }
                    }
                }
            }
        };
        memo.insert((r, level), res);
        res
    }
    fn gadget_chain(o: &Obdd, level: usize, nodes: &mut Vec<LNode>) -> usize {
        if level == o.num_vars {
            return usize::MAX;
        }
        let rest = gadget_chain(o, level + 1, nodes);
        nodes.push(LNode::TrueVar(level));
        let g = nodes.len() - 1;
        if rest == usize::MAX {
            g
        } else {
            nodes.push(LNode::And(vec![g, rest]));
            nodes.len() - 1
        }
    }
    let root = build(o, o.root, 0, &mut nodes, &mut memo)
        .ok_or_else(|| Error::Unsupported("OBDD has empty support".into()))?;
    if root == usize::MAX {
        return Err(Error::Unsupported("OBDD over zero variables".into()));
    }
    Ok(LogicalCircuit {
        num_vars: o.num_vars,
        nodes,
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::validate;

    #[test]
    fn single_literal_roundtrip() {
        let l = LogicalCircuit {
            num_vars: 1,
            nodes: vec![LNode::Lit(0, true)],
            root: 0,
        };
        let c = from_logical(&l).unwrap();
        match &c.nodes[c.root] {
            Node::Leaf { probs, .. } => assert_eq!(probs, &vec![0.0, 1.0]),
            _ => panic!("expected a leaf"),
        }
        let back = to_logical(&c).unwrap();
        assert_eq!(back.nodes[back.root], LNode::Lit(0, true));
    }

    #[test]
    fn xor_as_dsdnnf_counts_two_models() {
        // x0 XOR x1 as a deterministic SDNNF
        let l = LogicalCircuit {
            num_vars: 2,
            nodes: vec![
                LNode::Lit(0, true),
                LNode::Lit(1, false),
                LNode::And(vec![0, 1]),
                LNode::Lit(0, false),
                LNode::Lit(1, true),
                LNode::And(vec![3, 4]),
                LNode::Or(vec![2, 5]),
            ],
            root: 6,
        };
        let c = from_logical(&l).unwrap();
        // support preserved on all four assignments
        for x in crate::assignments(&vec![2; 2]) {
            let p = crate::circuit::evaluate(&c, &x).unwrap();
            assert_eq!(p > 0.0, l.eval(&x), "x={x:?}");
        }
        assert_eq!(model_count(&c).unwrap(), 2);
    }

    #[test]
    fn truth_table_obdd_agrees_everywhere() {
        let mut rng = crate::generate::rng_for(5);
        use rand::Rng;
        for _ in 0..10 {
            let n = 4;
            let table: Vec<bool> = (0..1 << n).map(|_| rng.random::<bool>()).collect();
            if table.iter().all(|&b| !b) {
                continue;
            }
            let o = Obdd::from_truth_table(n, &table);
            for (i, x) in crate::assignments(&vec![2; n]).enumerate() {
                assert_eq!(o.eval(&x), table[i]);
            }
            let nnf = obdd_to_nnf(&o).unwrap();
            for (i, x) in crate::assignments(&vec![2; n]).enumerate() {
                assert_eq!(nnf.eval(&x), table[i], "x={x:?}");
            }
            let c = from_logical(&nnf).unwrap();
            let rep = validate(&c);
            assert!(rep.smooth && rep.decomposable && rep.structured);
            assert_eq!(rep.deterministic, Some(true));
            let count = table.iter().filter(|&&b| b).count() as u64;
            assert_eq!(model_count(&c).unwrap(), count);
        }
    }

    #[test]
    fn nnf_is_structured_along_the_variable_order() {
        let table = vec![false, true, true, false, true, false, false, true];
        let o = Obdd::from_truth_table(3, &table);
        let nnf = obdd_to_nnf(&o).unwrap();
        let c = from_logical(&nnf).unwrap();
        let rep = validate(&c);
        let v = rep.vtree.expect("structured");
        assert!(v.is_right_linear());
    }
}
