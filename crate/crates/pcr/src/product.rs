//! Circuit multiplication: the same-vtree pairwise product, cross-vtree
//! multiplication by restructuring one factor, and on-the-fly multiplication
//! of a linear-vtree circuit with a contiguous circuit that need not be
//! structured at all.
//!
//! All three return a normalized circuit together with the partition constant
//! `Σ_x p_a(x) p_b(x)`, so the product distribution is the returned circuit
//! and the unnormalized product is recovered by scaling.

use crate::bn::{augment_index, pc_to_bn, Site, TreeBayesNet};
use crate::circuit::{renormalize_mass, Builder, Circuit, Node, NodeId};
use crate::labelling::{contiguous_labelling, linear_cover};
use crate::restructure::{restructure_with_bn, RestructureOptions};
use crate::vtree::{Vtree, VtreeId};
use crate::{Error, Result};
use std::collections::{BTreeMap, HashMap};

/// Pairwise product of two circuits structured by the same vtree, with
/// memoization on node pairs. Zero-weight expansions are dropped.
pub fn multiply_same_vtree(a: &Circuit, b: &Circuit, v: &Vtree) -> Result<(Circuit, f64)> {
    augment_index_or_leaf(a, v)?;
    augment_index_or_leaf(b, v)?;
    if a.domains != b.domains {
        return Err(Error::InvalidAssignment(
            "factor circuits have different variable domains".into(),
        ));
    }
    let scopes_a = a.scopes();
    let scopes_b = b.scopes();
    let mut builder = Builder::new(a.num_vars, a.domains.clone());
    let mut memo: HashMap<(NodeId, NodeId), NodeId> = HashMap::new();
    let root = pair(
        a, b, a.root, b.root, &scopes_a, &scopes_b, &mut builder, &mut memo,
    )?;
    let unnormalized = builder.finish(root, true);
    let (normalized, partition) = renormalize_mass(&unnormalized)?;
    Ok((normalized, partition))
}

fn augment_index_or_leaf(c: &Circuit, v: &Vtree) -> Result<()> {
    if c.num_vars == 1 {
        if v.num_vars() != 1 {
            return Err(Error::VtreeMismatch("vtree has more variables".into()));
        }
        return Ok(());
    }
    augment_index(c, v).map(|_| ())
}

#[allow(clippy::too_many_arguments)]
fn pair(
    a: &Circuit,
    b: &Circuit,
    na: NodeId,
    nb: NodeId,
    scopes_a: &[std::collections::BTreeSet<usize>],
    scopes_b: &[std::collections::BTreeSet<usize>],
    builder: &mut Builder,
    memo: &mut HashMap<(NodeId, NodeId), NodeId>,
) -> Result<NodeId> {
    if let Some(&id) = memo.get(&(na, nb)) {
        return Ok(id);
    }
    let id = match (&a.nodes[na], &b.nodes[nb]) {
        (Node::Leaf { var, probs }, Node::Leaf { var: vb, probs: pb }) => {
            if var != vb {
                return Err(Error::VtreeMismatch(format!(
                    "leaf variables {var} and {vb} do not align"
                )));
            }
            let table = probs.iter().zip(pb).map(|(x, y)| x * y).collect();
            builder.leaf(*var, table)
        }
        (Node::Sum { children: ca, weights: wa }, Node::Sum { children: cb, weights: wb }) => {
            let mut children = Vec::new();
            let mut weights = Vec::new();
            for (&xa, &ua) in ca.iter().zip(wa) {
                for (&xb, &ub) in cb.iter().zip(wb) {
                    let w = ua * ub;
                    if w == 0.0 {
                        continue;
                    }
                    children.push(pair(a, b, xa, xb, scopes_a, scopes_b, builder, memo)?);
                    weights.push(w);
                }
            }
            if children.is_empty() {
                // all expansions vanished: keep one zero-weight edge so the
                // node stays well formed; renormalization prunes it upstream
                let z = pair(a, b, ca[0], cb[0], scopes_a, scopes_b, builder, memo)?;
                children.push(z);
                weights.push(0.0);
            }
            builder.sum(children, weights)
        }
        (Node::Prod { children: ca }, Node::Prod { children: cb }) => {
            if ca.len() != 2 || cb.len() != 2 {
                return Err(Error::VtreeMismatch(
                    "products must be binary; normalize first".into(),
                ));
            }
            // align children by vtree side (scope comparison)
            let (b0, b1) = if scopes_a[ca[0]] == scopes_b[cb[0]] {
                (cb[0], cb[1])
            } else {
                (cb[1], cb[0])
            };
            if scopes_a[ca[0]] != scopes_b[b0] || scopes_a[ca[1]] != scopes_b[b1] {
                return Err(Error::VtreeMismatch(format!(
                    "products {na} and {nb} decompose differently"
                )));
            }
            let left = pair(a, b, ca[0], b0, scopes_a, scopes_b, builder, memo)?;
            let right = pair(a, b, ca[1], b1, scopes_a, scopes_b, builder, memo)?;
            builder.prod(vec![left, right])
        }
        _ => {
            return Err(Error::VtreeMismatch(format!(
                "nodes {na} ({}) and {nb} ({}) do not align; normalize both factors",
                a.nodes[na].kind_str(),
                b.nodes[nb].kind_str()
            )))
        }
    };
    memo.insert((na, nb), id);
    Ok(id)
}

/// Cross-vtree multiplication of contiguous structured circuits: restructure
/// one factor to the other's vtree, then multiply. A right-linear factor is
/// restructured with the boundary labelling (cardinality 3); otherwise the
/// first factor is restructured via segment covers.
pub fn multiply(
    a: &Circuit,
    va: &Vtree,
    b: &Circuit,
    vb: &Vtree,
    opts: &RestructureOptions,
) -> Result<(Circuit, f64)> {
    if same_vtree(va, vb) {
        return multiply_same_vtree(a, b, va);
    }
    if !va.is_contiguous() || !vb.is_contiguous() {
        return Err(Error::NotContiguous(
            "cross-vtree multiplication needs contiguous factors".into(),
        ));
    }
    if va.is_right_linear() {
        let bn = pc_to_bn(a, va)?;
        let lw = contiguous_labelling(&bn, vb)?;
        let (a_res, _) = restructure_with_bn(a, &bn, &lw, opts)?;
        multiply_same_vtree(&a_res, b, vb)
    } else if vb.is_right_linear() {
        let (c, partition) = multiply(b, vb, a, va, opts)?;
        Ok((c, partition))
    } else {
        let bn = pc_to_bn(a, va)?;
        let lw = contiguous_labelling(&bn, vb)?;
        let (a_res, _) = restructure_with_bn(a, &bn, &lw, opts)?;
        multiply_same_vtree(&a_res, b, vb)
    }
}

fn same_vtree(a: &Vtree, b: &Vtree) -> bool {
    a.num_nodes() == b.num_nodes()
        && (0..a.num_nodes()).all(|id| a.node(id) == b.node(id))
}

/// On-the-fly multiplication: `a` structured by the right-linear vtree, `b`
/// contiguous (smooth, decomposable, normalized) but not necessarily
/// structured. For every node `q` of `b` with scope `[lo, hi]` and every
/// positive-prior assignment of the boundary latents of that segment, one
/// node computes `p_q(X_{lo..hi}) * p_a(X_{lo..hi} | boundary)`; sums expand
/// over the split-point latent of each child product exactly as the
/// restructuring recursion does.
pub fn multiply_onthefly(a: &Circuit, va: &Vtree, b: &Circuit) -> Result<(Circuit, f64)> {
    if !va.is_right_linear() {
        return Err(Error::NotLinear(
            "on-the-fly multiplication needs a right-linear first factor".into(),
        ));
    }
    if a.domains != b.domains {
        return Err(Error::InvalidAssignment(
            "factor circuits have different variable domains".into(),
        ));
    }
    crate::circuit::check_smooth_decomposable(b)?;
    {
        let scopes = b.scopes();
        let contiguous = scopes.iter().all(|s| match (s.first(), s.last()) {
            (Some(&lo), Some(&hi)) => hi - lo + 1 == s.len(),
            _ => true,
        });
        if !contiguous {
            return Err(Error::NotContiguous("second factor".into()));
        }
    }
    if a.num_vars == 1 {
        return multiply_same_vtree(a, b, va);
    }
    let bn = pc_to_bn(a, va)?;
    let scopes_b = b.scopes();
    let interval = |id: NodeId| -> (usize, usize) {
        let s = &scopes_b[id];
        (*s.iter().next().unwrap(), *s.iter().next_back().unwrap())
    };
    let mut builder = Builder::new(a.num_vars, a.domains.clone());
    let mut memo: HashMap<(NodeId, Vec<usize>), NodeId> = HashMap::new();
    let root_key: Vec<usize> = Vec::new();
    let root = onthefly_rec(
        b,
        b.root,
        &root_key,
        &bn,
        va,
        &interval,
        &mut builder,
        &mut memo,
    )?;
    let unnormalized = builder.finish(root, true);
    renormalize_mass(&unnormalized)
}

/// Boundary latents of segment `[lo, hi]` in ascending id order.
fn boundary(va: &Vtree, lo: usize, hi: usize) -> Vec<VtreeId> {
    linear_cover(va, lo, hi)
        .expect("right-linear source")
        .into_iter()
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn onthefly_rec(
    b: &Circuit,
    q: NodeId,
    gamma: &[usize],
    bn: &TreeBayesNet,
    va: &Vtree,
    interval: &dyn Fn(NodeId) -> (usize, usize),
    builder: &mut Builder,
    memo: &mut HashMap<(NodeId, Vec<usize>), NodeId>,
) -> Result<NodeId> {
    if let Some(&id) = memo.get(&(q, gamma.to_vec())) {
        return Ok(id);
    }
    let (lo, hi) = interval(q);
    let bound = boundary(va, lo, hi);
    debug_assert_eq!(bound.len(), gamma.len());
    let id = match &b.nodes[q] {
        Node::Leaf { var, probs } => {
            let sites: Vec<Site> = bound.iter().map(|&v| Site::Latent(v)).collect();
            let rows = bn.leaf_conditional(*var, &sites)?;
            let row = rows.get(gamma).ok_or_else(|| {
                Error::InvalidAssignment(format!(
                    "boundary assignment {gamma:?} has zero prior at X{var}"
                ))
            })?;
            let table: Vec<f64> = probs.iter().zip(row).map(|(x, y)| x * y).collect();
            builder.leaf(*var, table)
        }
        Node::Prod { .. } => {
            return Err(Error::Unsupported(
                "product node reached outside a sum expansion; normalize the factor".into(),
            ))
        }
        Node::Sum { children, weights } => {
            let mut out_children = Vec::new();
            let mut out_weights = Vec::new();
            for (&c, &w_qc) in children.iter().zip(weights) {
                if w_qc == 0.0 {
                    continue;
                }
                let (c1, c2) = match &b.nodes[c] {
                    Node::Prod { children } if children.len() == 2 => {
                        let (x, y) = (children[0], children[1]);
                        if interval(x).0 == lo {
                            (x, y)
                        } else {
                            (y, x)
                        }
                    }
                    _ => {
                        return Err(Error::Unsupported(
                            "sum child is not a binary product; normalize the factor".into(),
                        ))
                    }
                };
                let (l_lo, l_hi) = interval(c1);
                let (r_lo, r_hi) = interval(c2);
                debug_assert_eq!((l_lo, r_hi), (lo, hi));
                debug_assert_eq!(l_hi + 1, r_lo);
                let bl = boundary(va, l_lo, l_hi);
                let br = boundary(va, r_lo, r_hi);
                // scope of the local table: this node's boundary plus both
                // child boundaries (the split latent is the only new site)
                let mut scope: Vec<VtreeId> = bound.clone();
                scope.extend(&bl);
                scope.extend(&br);
                scope.sort_unstable();
                scope.dedup();
                let cards: Vec<usize> =
                    scope.iter().map(|&v| bn.card(Site::Latent(v))).collect();
                let pos = |v: &VtreeId| scope.binary_search(v).expect("in scope");
                // condition on gamma, sum over the remaining sites
                let mut fixed: BTreeMap<VtreeId, usize> = BTreeMap::new();
                for (v, &val) in bound.iter().zip(gamma) {
                    fixed.insert(*v, val);
                }
                let ev_gamma: BTreeMap<Site, usize> = fixed
                    .iter()
                    .map(|(&v, &val)| (Site::Latent(v), val))
                    .collect();
                let pg = bn.marginal(&ev_gamma);
                if pg <= 0.0 {
                    continue;
                }
                for s in crate::assignments(&cards) {
                    let consistent = fixed.iter().all(|(&v, &val)| s[pos(&v)] == val);
                    if !consistent {
                        continue;
                    }
                    let ev: BTreeMap<Site, usize> = scope
                        .iter()
                        .zip(&s)
                        .map(|(&v, &val)| (Site::Latent(v), val))
                        .collect();
                    let p = bn.marginal(&ev);
                    if p <= 0.0 {
                        continue;
                    }
                    let w = w_qc * p / pg;
                    let key_l: Vec<usize> = bl.iter().map(|v| s[pos(v)]).collect();
                    let key_r: Vec<usize> = br.iter().map(|v| s[pos(v)]).collect();
                    let left = onthefly_rec(b, c1, &key_l, bn, va, interval, builder, memo)?;
                    let right = onthefly_rec(b, c2, &key_r, bn, va, interval, builder, memo)?;
                    out_children.push(builder.prod(vec![left, right]));
                    out_weights.push(w);
                }
            }
            if out_children.is_empty() {
                return Err(Error::Unsupported(format!(
                    "sum {q} has no feasible expansion under the boundary assignment"
                )));
            }
            builder.sum(out_children, out_weights)
        }
    };
    memo.insert((q, gamma.to_vec()), id);
    Ok(id)
}
