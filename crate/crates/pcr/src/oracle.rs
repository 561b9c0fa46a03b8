//! Brute-force reference implementations used by tests: dense joint tables,
//! equivalence and proportionality checks, d-separation by path enumeration,
//! and the induced-tree semantics. Everything here enumerates exhaustively in
//! lexicographic order, so results are bit-for-bit reproducible.

use crate::bn::{Site, TreeBayesNet};
use crate::circuit::{evaluate, Circuit, Node};
use crate::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};

const ENUM_BUDGET: u64 = 1_000_000;

/// Dense table over all assignments: `table[i]` is the probability of the
/// i-th assignment in lexicographic order.
pub fn joint_table(c: &Circuit) -> Result<Vec<f64>> {
    c.state_space(ENUM_BUDGET)?;
    crate::assignments(&c.domains)
        .map(|x| evaluate(c, &x))
        .collect()
}

/// Dense joint over observed variables and latents of a tree BN, keyed by
/// assignment vectors (observed in variable order, then latents in id order).
pub fn bn_joint_table(bn: &TreeBayesNet) -> Result<BTreeMap<Vec<usize>, f64>> {
    let sites: Vec<Site> = (0..bn.num_vars())
        .map(Site::Obs)
        .chain(bn.latents().into_iter().map(Site::Latent))
        .collect();
    let cards: Vec<usize> = sites.iter().map(|&s| bn.card(s)).collect();
    let mut space: u64 = 1;
    for &c in &cards {
        space = space.saturating_mul(c as u64);
    }
    if space > ENUM_BUDGET {
        return Err(Error::DomainTooLarge(space));
    }
    let mut out = BTreeMap::new();
    for a in crate::assignments(&cards) {
        let assignment: BTreeMap<Site, usize> =
            sites.iter().copied().zip(a.iter().copied()).collect();
        out.insert(a, bn.joint(&assignment));
    }
    Ok(out)
}

/// Marginal of the BN over the observed variables, as a dense table aligned
/// with [`joint_table`]. Computed by evidence passes, not by materializing
/// the full joint.
pub fn bn_obs_marginal_table(bn: &TreeBayesNet, domains: &[usize]) -> Result<Vec<f64>> {
    let mut space: u64 = 1;
    for &d in domains {
        space = space.saturating_mul(d as u64);
    }
    if space > ENUM_BUDGET {
        return Err(Error::DomainTooLarge(space));
    }
    Ok(crate::assignments(domains)
        .map(|x| {
            let ev: BTreeMap<Site, usize> = x
                .iter()
                .enumerate()
                .map(|(i, &d)| (Site::Obs(i), d))
                .collect();
            bn.marginal(&ev)
        })
        .collect())
}

/// Maximum relative deviation between two circuits over all assignments.
pub fn check_equivalence(a: &Circuit, b: &Circuit, _tol: f64) -> Result<f64> {
    if a.num_vars != b.num_vars || a.domains != b.domains {
        return Err(Error::InvalidAssignment(
            "circuits range over different variables".into(),
        ));
    }
    let ta = joint_table(a)?;
    let tb = joint_table(b)?;
    let mut max_dev = 0.0f64;
    for (pa, pb) in ta.iter().zip(&tb) {
        max_dev = max_dev.max(rel_dev(*pa, *pb));
    }
    Ok(max_dev)
}

pub fn rel_dev(p: f64, q: f64) -> f64 {
    let m = p.abs().max(q.abs());
    if m == 0.0 {
        0.0
    } else {
        (p - q).abs() / m
    }
}

/// Best-fit proportionality constant and maximum relative deviation of
/// `prod * constant` from the pointwise product `a * b`.
pub fn check_proportional(prod: &Circuit, a: &Circuit, b: &Circuit, _tol: f64) -> Result<(f64, f64)> {
    if a.num_vars != b.num_vars || a.domains != b.domains || prod.num_vars != a.num_vars {
        return Err(Error::InvalidAssignment(
            "circuits range over different variables".into(),
        ));
    }
    let tp = joint_table(prod)?;
    let ta = joint_table(a)?;
    let tb = joint_table(b)?;
    let constant: f64 = ta.iter().zip(&tb).map(|(x, y)| x * y).sum();
    if constant <= 0.0 {
        return Err(Error::Unsupported("all-zero product".into()));
    }
    let mut max_dev = 0.0f64;
    for ((p, x), y) in tp.iter().zip(&ta).zip(&tb) {
        max_dev = max_dev.max(rel_dev(p * constant, x * y));
    }
    Ok((constant, max_dev))
}

/// d-separation verdict on a tree: `c` blocks every path between a site of
/// `a` and a site of `b`. On rooted trees there are no colliders, so path
/// intersection is the whole criterion.
pub fn check_dsep(
    bn: &TreeBayesNet,
    a: &BTreeSet<Site>,
    b: &BTreeSet<Site>,
    c: &BTreeSet<Site>,
) -> bool {
    for &x in a {
        for &y in b {
            if !bn.blocks(c, x, y) {
                return false;
            }
        }
    }
    true
}

/// Distributional conditional-independence test: for every assignment of the
/// conditioning set with positive mass, the conditional joint of `a` and `b`
/// factorizes within `tol`. Zero-probability conditioning events are skipped.
pub fn check_ci(
    bn: &TreeBayesNet,
    a: &[Site],
    b: &[Site],
    c: &[Site],
    tol: f64,
) -> bool {
    let cards = |sites: &[Site]| -> Vec<usize> { sites.iter().map(|&s| bn.card(s)).collect() };
    for gc in crate::assignments(&cards(c)) {
        let evc: BTreeMap<Site, usize> = c.iter().copied().zip(gc.iter().copied()).collect();
        let pc = bn.marginal(&evc);
        if pc <= 0.0 {
            continue;
        }
        for ga in crate::assignments(&cards(a)) {
            let mut eva = evc.clone();
            let mut ok = true;
            for (&s, &v) in a.iter().zip(&ga) {
                if *eva.entry(s).or_insert(v) != v {
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            let pa = bn.marginal(&eva);
            for gb in crate::assignments(&cards(b)) {
                let mut evb = evc.clone();
                let mut evab = eva.clone();
                let mut ok = true;
                for (&s, &v) in b.iter().zip(&gb) {
                    if *evb.entry(s).or_insert(v) != v {
                        ok = false;
                    }
                    if *evab.entry(s).or_insert(v) != v {
                        ok = false;
                    }
                }
                if !ok {
                    continue;
                }
                let pb = bn.marginal(&evb);
                let pab = bn.marginal(&evab);
                // p(ab|c) = p(a|c) p(b|c)  <=>  pab * pc = pa * pb
                if rel_dev(pab * pc, pa * pb) > tol {
                    return false;
                }
            }
        }
    }
    true
}

/// Sum over induced trees of the tree value at `x`: one child per sum, all
/// children per product, rooted at the circuit root. Equals `evaluate(c, x)`
/// for decomposable circuits.
pub fn induced_tree_sum(c: &Circuit, x: &[usize]) -> Result<f64> {
    let count = count_induced_trees(c);
    if count > 10_000 {
        return Err(Error::DomainTooLarge(count));
    }
    fn rec(c: &Circuit, id: usize, x: &[usize], acc: f64, total: &mut f64) {
        match &c.nodes[id] {
            Node::Leaf { var, probs } => *total += acc * probs[x[*var]],
            Node::Prod { children } => {
                // all children: multiply the contributions one at a time
                fn prod_rec(
                    c: &Circuit,
                    children: &[usize],
                    x: &[usize],
                    acc: f64,
                    total: &mut f64,
                ) {
                    if children.is_empty() {
                        *total += acc;
                        return;
                    }
                    // expand the first child into a sum of tree values, then
                    // recurse on the rest for each term
                    let mut terms = Vec::new();
                    collect_terms(c, children[0], x, 1.0, &mut terms);
                    for t in terms {
                        prod_rec(c, &children[1..], x, acc * t, total);
                    }
                }
                prod_rec(c, children, x, acc, total);
            }
            Node::Sum { children, weights } => {
                for (&ch, &w) in children.iter().zip(weights) {
                    rec(c, ch, x, acc * w, total);
                }
            }
        }
    }
    /// Tree values of the subcircuit at `id` as a list of per-tree terms.
    fn collect_terms(c: &Circuit, id: usize, x: &[usize], acc: f64, out: &mut Vec<f64>) {
        match &c.nodes[id] {
            Node::Leaf { var, probs } => out.push(acc * probs[x[*var]]),
            Node::Sum { children, weights } => {
                for (&ch, &w) in children.iter().zip(weights) {
                    collect_terms(c, ch, x, acc * w, out);
                }
            }
            Node::Prod { children } => {
                let mut parts = vec![acc];
                for &ch in children {
                    let mut next = Vec::new();
                    let mut terms = Vec::new();
                    collect_terms(c, ch, x, 1.0, &mut terms);
                    for p in &parts {
                        for t in &terms {
                            next.push(p * t);
                        }
                    }
                    parts = next;
                }
                out.extend(parts);
            }
        }
    }
    let mut total = 0.0;
    rec(c, c.root, x, 1.0, &mut total);
    Ok(total)
}

/// Number of induced trees (one child per sum, all per product), counted
/// per-occurrence: shared nodes recount per path, matching the enumeration.
pub fn count_induced_trees(c: &Circuit) -> u64 {
    fn rec(c: &Circuit, id: usize, memo: &mut BTreeMap<usize, u64>) -> u64 {
        if let Some(&n) = memo.get(&id) {
            return n;
        }
        let n = match &c.nodes[id] {
            Node::Leaf { .. } => 1,
            Node::Sum { children, .. } => children
                .iter()
                .map(|&ch| rec(c, ch, memo))
                .fold(0u64, |a, b| a.saturating_add(b)),
            Node::Prod { children } => children
                .iter()
                .map(|&ch| rec(c, ch, memo))
                .fold(1u64, |a, b| a.saturating_mul(b)),
        };
        memo.insert(id, n);
        n
    }
    rec(c, c.root, &mut BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_circuit;

    fn two_leaf_mixture() -> Circuit {
        parse_circuit(
            r#"{"format_version":1,"num_vars":1,"root":2,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[1.0,0.0]},
            {"id":1,"kind":"leaf","var":0,"probs":[0.2,0.8]},
            {"id":2,"kind":"sum","children":[0,1],"weights":[0.3,0.7]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn joint_table_of_binary_leaf() {
        let c = two_leaf_mixture();
        let t = joint_table(&c).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equivalence_of_identical_is_zero() {
        let c = two_leaf_mixture();
        assert_eq!(check_equivalence(&c, &c, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn perturbed_copy_deviates() {
        let c = two_leaf_mixture();
        let mut d = c.clone();
        if let Node::Sum { weights, .. } = &mut d.nodes[2] {
            weights[0] = 0.31;
            weights[1] = 0.69;
        }
        assert!(check_equivalence(&c, &d, 1e-9).unwrap() > 1e-9);
    }

    #[test]
    fn induced_trees_of_single_sum() {
        let c = two_leaf_mixture();
        assert_eq!(count_induced_trees(&c), 2);
        for x in crate::assignments(&c.domains) {
            let s = induced_tree_sum(&c, &x).unwrap();
            let e = evaluate(&c, &x).unwrap();
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn proportional_self_with_uniform() {
        let c = two_leaf_mixture();
        let uniform = parse_circuit(
            r#"{"format_version":1,"num_vars":1,"root":0,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.5,0.5]}]}"#,
        )
        .unwrap();
        // c itself is proportional to c * uniform with constant 0.5
        let (k, dev) = check_proportional(&c, &c, &uniform, 1e-9).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
        assert!(dev <= 1e-12);
    }
}
