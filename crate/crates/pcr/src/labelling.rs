//! Vtree labellings: latent sets attached to every target vtree node.
//!
//! A valid labelling gives, for each target node `w`, a set `C_w` of source
//! latents such that (1) `C_w` blocks all paths between `X_w` and the rest of
//! the observed variables, (2) the left child label blocks paths between
//! `X_l` and `C_r ∪ C_w`, and (3) symmetrically on the right. These
//! properties are exactly what lets the restructuring recursion factor
//! `p(X_w | C_w)` through the child conditionals.
//!
//! Three labelling constructions live here: the greedy top-down computation
//! with minimum d-separators, segment covers for contiguous vtrees, and the
//! balanced (depth-reduction) vtree whose labels have cardinality at most 3.

use crate::bn::{Site, TreeBayesNet};
use crate::vtree::{Vtree, VtreeId, VtreeNode};
use crate::{Error, Result};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};

/// Target vtree plus one latent set per node (indexed by target node id).
/// Latents are inner-node ids of the source vtree.
#[derive(Debug, Clone)]
pub struct LabelledVtree {
    pub vtree: Vtree,
    pub labels: Vec<BTreeSet<VtreeId>>,
}

impl LabelledVtree {
    pub fn label(&self, id: VtreeId) -> &BTreeSet<VtreeId> {
        &self.labels[id]
    }

    /// Vtree dump extended with per-node `labels` listing source latent ids.
    pub fn serialize(&self) -> String {
        fn rec(lv: &LabelledVtree, id: VtreeId) -> Value {
            let labels: Vec<usize> = lv.labels[id].iter().copied().collect();
            match lv.vtree.node(id) {
                VtreeNode::Leaf { var } => json!({ "var": var, "labels": labels }),
                VtreeNode::Inner { left, right } => json!({
                    "left": rec(lv, *left),
                    "right": rec(lv, *right),
                    "labels": labels,
                }),
            }
        }
        let mut s =
            serde_json::to_string_pretty(&rec(self, self.vtree.root())).expect("serializes");
        s.push('\n');
        s
    }
}

/// Result of the three Definition-6 checks plus the cardinality measures
/// `M = max |C_l ∪ C_r|` and `M' = max |C_l ∪ C_r ∪ C_w|` over inner nodes.
#[derive(Debug, Clone)]
pub struct LabellingReport {
    pub valid: bool,
    /// Per inner target node: (covers, blocks_left, blocks_right).
    pub node_checks: Vec<(VtreeId, bool, bool, bool)>,
    pub m: usize,
    pub m_prime: usize,
}

/// The three sets returned by the minimum-separator recursion: `sep_a` also
/// blocks all paths from `A` to the subtree root, `sep_b` symmetrically, and
/// `sep` is a minimum d-separator between `A` and `B`.
#[derive(Debug, Clone)]
pub struct SeparatorTriple {
    pub sep_a: BTreeSet<Site>,
    pub sep_b: BTreeSet<Site>,
    pub sep: BTreeSet<Site>,
}

// ---------------------------------------------------------------------------
// connected components
// ---------------------------------------------------------------------------

/// A connected piece of the BN tree after removing blocker latents. Adjacent
/// blockers below the component are reattached as neutral leaf markers so the
/// separator recursion sees them as leaves.
#[derive(Debug, Clone)]
pub struct Component {
    pub root: Site,
    children: BTreeMap<Site, Vec<Site>>,
    /// Observed variables under each component site (markers excluded).
    vars_below: BTreeMap<Site, BTreeSet<usize>>,
}

impl Component {
    pub fn children(&self, s: Site) -> &[Site] {
        self.children.get(&s).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn vars(&self) -> &BTreeSet<usize> {
        &self.vars_below[&self.root]
    }

    pub fn vars_below(&self, s: Site) -> &BTreeSet<usize> {
        &self.vars_below[&s]
    }

    pub fn sites(&self) -> Vec<Site> {
        self.vars_below.keys().copied().collect()
    }
}

/// Split the BN into components separated by the blocker latents.
pub fn connected_components(bn: &TreeBayesNet, blockers: &BTreeSet<VtreeId>) -> Vec<Component> {
    let is_blocked = |s: Site| matches!(s, Site::Latent(v) if blockers.contains(&v));
    let mut roots = Vec::new();
    if !is_blocked(bn.root()) {
        roots.push(bn.root());
    }
    for &v in blockers {
        for &ch in bn.children(Site::Latent(v)) {
            if !is_blocked(ch) {
                roots.push(ch);
            }
        }
    }
    roots
        .into_iter()
        .map(|root| {
            let mut children = BTreeMap::new();
            let mut vars_below = BTreeMap::new();
            build_component(bn, root, &is_blocked, &mut children, &mut vars_below);
            Component {
                root,
                children,
                vars_below,
            }
        })
        .collect()
}

fn build_component(
    bn: &TreeBayesNet,
    s: Site,
    is_blocked: &dyn Fn(Site) -> bool,
    children: &mut BTreeMap<Site, Vec<Site>>,
    vars_below: &mut BTreeMap<Site, BTreeSet<usize>>,
) {
    let mut vars = BTreeSet::new();
    if let Site::Obs(x) = s {
        vars.insert(x);
    }
    let mut kids = Vec::new();
    for &ch in bn.children(s) {
        if is_blocked(ch) {
            // boundary marker: neutral leaf, no variables below
            kids.push(ch);
            vars_below.entry(ch).or_default();
        } else {
            kids.push(ch);
            build_component(bn, ch, is_blocked, children, vars_below);
            let below = vars_below[&ch].clone();
            vars.extend(below);
        }
    }
    if !kids.is_empty() {
        children.insert(s, kids);
    }
    vars_below.insert(s, vars);
}

// ---------------------------------------------------------------------------
// minimum separators
// ---------------------------------------------------------------------------

/// Linear-time minimum d-separator on a component. `a` and `b` are disjoint
/// sets of observed variables; the returned sets may contain observed leaf
/// sites, which callers lift to their BN parents before use as labels.
pub fn minimum_separator(
    comp: &Component,
    a: &BTreeSet<usize>,
    b: &BTreeSet<usize>,
) -> Result<SeparatorTriple> {
    if a.intersection(b).next().is_some() {
        return Err(Error::InvalidLabelling(
            "separator endpoints overlap".into(),
        ));
    }
    let (sep_a, sep_b, sep) = min_sep_rec(comp, comp.root, a, b);
    Ok(SeparatorTriple { sep_a, sep_b, sep })
}

type Triple = (BTreeSet<Site>, BTreeSet<Site>, BTreeSet<Site>);

fn min_sep_rec(
    comp: &Component,
    site: Site,
    a: &BTreeSet<usize>,
    b: &BTreeSet<usize>,
) -> Triple {
    let below = comp.vars_below(site);
    let a_here: BTreeSet<usize> = a.intersection(below).copied().collect();
    let b_here: BTreeSet<usize> = b.intersection(below).copied().collect();
    if a_here.is_empty() && b_here.is_empty() {
        return (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    }
    if b_here.is_empty() {
        return (
            BTreeSet::from([site]),
            BTreeSet::new(),
            BTreeSet::new(),
        );
    }
    if a_here.is_empty() {
        return (
            BTreeSet::new(),
            BTreeSet::from([site]),
            BTreeSet::new(),
        );
    }
    // both sides present: site is internal (a leaf carries one variable)
    let mut union_c = BTreeSet::new();
    let mut union_ca = BTreeSet::new();
    let mut union_cb = BTreeSet::new();
    for &ch in comp.children(site) {
        let (ca, cb, c) = min_sep_rec(comp, ch, &a_here, &b_here);
        union_ca.extend(ca);
        union_cb.extend(cb);
        union_c.extend(c);
    }
    let mut with_root = union_c.clone();
    with_root.insert(site);
    let sep_a = pick_min(with_root.clone(), union_ca, site);
    let sep_b = pick_min(with_root, union_cb, site);
    let sep = pick_min_pair(&sep_a, &sep_b, site);
    (sep_a, sep_b, sep)
}

/// Min combiner: smaller set wins; ties break toward the set not containing
/// the current root (keeps separators deep), then toward the second.
fn pick_min(first: BTreeSet<Site>, second: BTreeSet<Site>, root: Site) -> BTreeSet<Site> {
    use std::cmp::Ordering::*;
    match first.len().cmp(&second.len()) {
        Less => first,
        Greater => second,
        Equal => match (first.contains(&root), second.contains(&root)) {
            (true, false) => second,
            (false, true) => first,
            _ => second,
        },
    }
}

fn pick_min_pair(sep_a: &BTreeSet<Site>, sep_b: &BTreeSet<Site>, root: Site) -> BTreeSet<Site> {
    pick_min(sep_a.clone(), sep_b.clone(), root)
}

/// Lift observed sites to their BN parent latents; latents pass through.
pub fn lift_to_latents(bn: &TreeBayesNet, sites: &BTreeSet<Site>) -> BTreeSet<VtreeId> {
    sites
        .iter()
        .map(|&s| match s {
            Site::Latent(v) => v,
            Site::Obs(_) => bn
                .parent(s)
                .and_then(Site::latent)
                .expect("observed site has a latent parent"),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// path tracing and the greedy labelling
// ---------------------------------------------------------------------------

/// Blockers reachable from a source variable by a tree path meeting the
/// blocker set only at its endpoint.
pub fn trace_first_blocked(
    bn: &TreeBayesNet,
    sources: &BTreeSet<usize>,
    blockers: &BTreeSet<VtreeId>,
) -> BTreeSet<VtreeId> {
    let mut hit = BTreeSet::new();
    let mut visited: BTreeSet<Site> = BTreeSet::new();
    let mut stack: Vec<Site> = sources.iter().map(|&x| Site::Obs(x)).collect();
    for s in &stack {
        visited.insert(*s);
    }
    while let Some(s) = stack.pop() {
        let neighbors = bn
            .parent(s)
            .into_iter()
            .chain(bn.children(s).iter().copied());
        for nb in neighbors {
            if visited.contains(&nb) {
                continue;
            }
            visited.insert(nb);
            if let Site::Latent(v) = nb {
                if blockers.contains(&v) {
                    hit.insert(v);
                    continue; // stop at the first blocker on this path
                }
            }
            stack.push(nb);
        }
    }
    hit
}

/// Greedy top-down labelling of a target vtree: split the BN by the current
/// label, take a minimum separator per component, and trace each side's
/// first-blocked latents.
pub fn compute_label(bn: &TreeBayesNet, target: &Vtree) -> Result<LabelledVtree> {
    if target.num_vars() != bn.num_vars() {
        return Err(Error::VtreeMismatch(format!(
            "target vtree has {} variables, BN has {}",
            target.num_vars(),
            bn.num_vars()
        )));
    }
    let mut labels = vec![BTreeSet::new(); target.num_nodes()];
    compute_label_rec(bn, target, target.root(), BTreeSet::new(), &mut labels)?;
    Ok(LabelledVtree {
        vtree: target.clone(),
        labels,
    })
}

fn compute_label_rec(
    bn: &TreeBayesNet,
    target: &Vtree,
    w: VtreeId,
    c_w: BTreeSet<VtreeId>,
    labels: &mut Vec<BTreeSet<VtreeId>>,
) -> Result<()> {
    labels[w] = c_w.clone();
    let (l, r) = match target.children(w) {
        Some(pair) => pair,
        None => return Ok(()),
    };
    let x_l = target.scope(l).clone();
    let x_r = target.scope(r).clone();
    let mut d_w = c_w.clone();
    for comp in connected_components(bn, &c_w) {
        let a: BTreeSet<usize> = x_l.intersection(comp.vars()).copied().collect();
        let b: BTreeSet<usize> = x_r.intersection(comp.vars()).copied().collect();
        let triple = minimum_separator(&comp, &a, &b)?;
        d_w.extend(lift_to_latents(bn, &triple.sep));
    }
    // D_w covers both child scopes: every outgoing path is blocked
    debug_assert!(covers(bn, &d_w, &x_l));
    debug_assert!(covers(bn, &d_w, &x_r));
    let c_l = trace_first_blocked(bn, &x_l, &d_w);
    let c_r = trace_first_blocked(bn, &x_r, &d_w);
    compute_label_rec(bn, target, l, c_l, labels)?;
    compute_label_rec(bn, target, r, c_r, labels)
}

/// Sites reachable from `sources` without entering the blocker set
/// (blocked sites are never visited; sources inside the blockers are inert).
fn reachable(
    bn: &TreeBayesNet,
    sources: impl IntoIterator<Item = Site>,
    blockers: &BTreeSet<Site>,
) -> BTreeSet<Site> {
    let mut seen = BTreeSet::new();
    let mut stack = Vec::new();
    for s in sources {
        if !blockers.contains(&s) && seen.insert(s) {
            stack.push(s);
        }
    }
    while let Some(s) = stack.pop() {
        let neighbors = bn
            .parent(s)
            .into_iter()
            .chain(bn.children(s).iter().copied());
        for nb in neighbors {
            if !blockers.contains(&nb) && seen.insert(nb) {
                stack.push(nb);
            }
        }
    }
    seen
}

fn covers(bn: &TreeBayesNet, label: &BTreeSet<VtreeId>, vars: &BTreeSet<usize>) -> bool {
    let blockers: BTreeSet<Site> = label.iter().map(|&v| Site::Latent(v)).collect();
    let region = reachable(bn, vars.iter().map(|&x| Site::Obs(x)), &blockers);
    (0..bn.num_vars()).all(|y| vars.contains(&y) || !region.contains(&Site::Obs(y)))
}

/// Check Definition-6 validity of a labelling and report the cardinality
/// measures. The root label must be empty by convention.
pub fn validate_labelling(bn: &TreeBayesNet, lw: &LabelledVtree) -> LabellingReport {
    let target = &lw.vtree;
    let mut node_checks = Vec::new();
    let mut valid = lw.labels[target.root()].is_empty();
    let mut m = 0;
    let mut m_prime = 0;
    for w in 0..target.num_nodes() {
        let cover_ok = covers(bn, &lw.labels[w], target.scope(w));
        let (mut left_ok, mut right_ok) = (true, true);
        if let Some((l, r)) = target.children(w) {
            let c_l: BTreeSet<Site> = lw.labels[l].iter().map(|&v| Site::Latent(v)).collect();
            let c_r: BTreeSet<Site> = lw.labels[r].iter().map(|&v| Site::Latent(v)).collect();
            let c_w: BTreeSet<Site> = lw.labels[w].iter().map(|&v| Site::Latent(v)).collect();
            let rc: BTreeSet<Site> = c_r.union(&c_w).copied().collect();
            let lc: BTreeSet<Site> = c_l.union(&c_w).copied().collect();
            left_ok = blocks_set(bn, &c_l, target.scope(l), &rc);
            right_ok = blocks_set(bn, &c_r, target.scope(r), &lc);
            let lr: BTreeSet<VtreeId> = lw.labels[l].union(&lw.labels[r]).copied().collect();
            m = m.max(lr.len());
            let lrw: BTreeSet<VtreeId> = lr.union(&lw.labels[w]).copied().collect();
            m_prime = m_prime.max(lrw.len());
        }
        valid &= cover_ok && left_ok && right_ok;
        node_checks.push((w, cover_ok, left_ok, right_ok));
    }
    LabellingReport {
        valid,
        node_checks,
        m,
        m_prime,
    }
}

fn blocks_set(
    bn: &TreeBayesNet,
    blockers: &BTreeSet<Site>,
    vars: &BTreeSet<usize>,
    targets: &BTreeSet<Site>,
) -> bool {
    // paths ending inside the blocker set are blocked at their endpoint
    let region = reachable(bn, vars.iter().map(|&x| Site::Obs(x)), blockers);
    targets
        .iter()
        .all(|t| blockers.contains(t) || !region.contains(t))
}

// ---------------------------------------------------------------------------
// segment covers (contiguous vtrees)
// ---------------------------------------------------------------------------

/// Segment-tree decomposition of `[lo, hi]` (inclusive, zero-based): the
/// maximal vtree nodes whose scopes tile the segment disjointly. Returned as
/// vtree node ids (leaves possible); size is at most 4 times the vtree depth.
pub fn segment_cover(v: &Vtree, lo: usize, hi: usize) -> Result<Vec<VtreeId>> {
    if !v.is_contiguous() {
        return Err(Error::NotContiguous(
            "segment covers need a contiguous vtree".into(),
        ));
    }
    if lo > hi || hi >= v.num_vars() {
        return Err(Error::InvalidAssignment(format!(
            "segment [{lo}, {hi}] out of range"
        )));
    }
    let mut out = Vec::new();
    segment_cover_rec(v, v.root(), lo, hi, &mut out);
    Ok(out)
}

fn segment_cover_rec(v: &Vtree, id: VtreeId, lo: usize, hi: usize, out: &mut Vec<VtreeId>) {
    let (slo, shi) = v.interval(id).expect("contiguous vtree");
    let qlo = lo.max(slo);
    let qhi = hi.min(shi);
    if qlo > qhi {
        return;
    }
    if (qlo, qhi) == (slo, shi) {
        out.push(id);
        return;
    }
    let (l, r) = v.children(id).expect("partial overlap only at inner nodes");
    segment_cover_rec(v, l, qlo, qhi, out);
    segment_cover_rec(v, r, qlo, qhi, out);
}

/// Boundary cover for a right-linear source: `{Z_lo, Z_{hi+1}}` indexed by
/// suffix nodes, dropping the left boundary at `lo = 0` and the right one at
/// `hi = n-1`. Indices cap at the last existing latent (the suffix vtree has
/// n-1 inner nodes, so positions n-1 and n share the deepest latent).
pub fn linear_cover(v: &Vtree, lo: usize, hi: usize) -> Result<BTreeSet<VtreeId>> {
    if !v.is_right_linear() {
        return Err(Error::NotLinear(
            "boundary covers need a right-linear vtree".into(),
        ));
    }
    let n = v.num_vars();
    let suffix = |k: usize| -> VtreeId {
        let k = k.min(n - 2);
        v.node_by_interval(k, n - 1).expect("suffix node exists")
    };
    let mut cover = BTreeSet::new();
    if lo > 0 {
        cover.insert(suffix(lo));
    }
    if hi < n - 1 {
        cover.insert(suffix(hi + 1));
    }
    Ok(cover)
}

/// Labelling of a contiguous target from a contiguous source: boundary
/// covers when the source is right-linear (cardinality at most 3), segment
/// covers otherwise (cardinality at most 12 times the source depth).
pub fn contiguous_labelling(
    bn: &TreeBayesNet,
    target: &Vtree,
) -> Result<LabelledVtree> {
    let src = bn.vtree();
    if !src.is_contiguous() {
        return Err(Error::NotContiguous("source vtree".into()));
    }
    if !target.is_contiguous() {
        return Err(Error::NotContiguous("target vtree".into()));
    }
    let linear = src.is_right_linear();
    let mut labels = vec![BTreeSet::new(); target.num_nodes()];
    for w in 0..target.num_nodes() {
        if w == target.root() {
            continue; // root label is empty by convention
        }
        let (lo, hi) = target.interval(w).expect("contiguous target");
        labels[w] = if linear {
            linear_cover(src, lo, hi)?
        } else {
            let sites: BTreeSet<Site> = segment_cover(src, lo, hi)?
                .into_iter()
                .map(|id| match src.leaf_var(id) {
                    Some(x) => Site::Obs(x),
                    None => Site::Latent(id),
                })
                .collect();
            lift_to_latents(bn, &sites)
        };
    }
    Ok(LabelledVtree {
        vtree: target.clone(),
        labels,
    })
}

// ---------------------------------------------------------------------------
// depth-reduction vtree
// ---------------------------------------------------------------------------

/// A connected piece of the source vtree under contraction. Children map the
/// surviving structure; cuts are the latents of previously removed split
/// nodes that bound this piece's variables.
#[derive(Debug, Clone)]
struct Piece {
    root: VtreeId,
    kids: BTreeMap<VtreeId, (VtreeId, VtreeId)>,
    cuts: BTreeSet<VtreeId>,
}

enum LabelTree {
    Leaf(usize, BTreeSet<VtreeId>),
    Inner(Box<LabelTree>, Box<LabelTree>, BTreeSet<VtreeId>),
}

/// Balanced target vtree with a valid labelling of cardinality at most 3.
///
/// Each step removes one split node, cutting the current piece into the
/// subtree under one child and the rest (with the other child contracted
/// into the split position). The removed latent joins the boundary of both
/// parts; old boundary cuts follow the part whose region they border. Split
/// candidates keeping every non-leaf part at no more than two separable
/// boundary cuts always exist, and among those the most balanced one is
/// taken, which bounds the target depth logarithmically.
pub fn balanced_vtree(src: &Vtree) -> LabelledVtree {
    let piece = Piece {
        root: src.root(),
        kids: (0..src.num_nodes())
            .filter_map(|id| src.children(id).map(|c| (id, c)))
            .collect(),
        cuts: BTreeSet::new(),
    };
    let tree = reduce(src, &piece);
    let mut nodes = Vec::new();
    let mut labels = Vec::new();
    flatten(&tree, &mut nodes, &mut labels);
    let vtree = Vtree::from_nodes(nodes).expect("balanced vtree is well formed");
    LabelledVtree { vtree, labels }
}

fn reduce(src: &Vtree, piece: &Piece) -> LabelTree {
    if piece.kids.is_empty() {
        let var = src.leaf_var(piece.root).expect("single-node piece is a leaf");
        return LabelTree::Leaf(var, piece.cuts.clone());
    }
    let (v, sub_child) = choose_split(src, piece);
    let (co, sub) = carve(src, piece, v, sub_child);
    let left = reduce(src, &co);
    let right = reduce(src, &sub);
    LabelTree::Inner(Box::new(left), Box::new(right), piece.cuts.clone())
}

fn flatten(t: &LabelTree, nodes: &mut Vec<VtreeNode>, labels: &mut Vec<BTreeSet<VtreeId>>) {
    let id = nodes.len();
    match t {
        LabelTree::Leaf(var, cuts) => {
            nodes.push(VtreeNode::Leaf { var: *var });
            labels.push(cuts.clone());
        }
        LabelTree::Inner(l, r, cuts) => {
            nodes.push(VtreeNode::Inner { left: 0, right: 0 });
            labels.push(cuts.clone());
            flatten(l, nodes, labels);
            let left = id + 1;
            let right = nodes.len();
            flatten(r, nodes, labels);
            nodes[id] = VtreeNode::Inner { left, right };
        }
    }
}

/// Original-tree path between two nodes, endpoints included.
fn orig_path(src: &Vtree, a: VtreeId, b: VtreeId) -> Vec<VtreeId> {
    let mut anc_a = vec![a];
    let mut cur = a;
    while let Some(p) = src.parent(cur) {
        anc_a.push(p);
        cur = p;
    }
    let pos: BTreeMap<VtreeId, usize> = anc_a.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let mut down = Vec::new();
    let meet;
    cur = b;
    loop {
        if let Some(&i) = pos.get(&cur) {
            meet = i;
            break;
        }
        down.push(cur);
        cur = src.parent(cur).expect("nodes share the root");
    }
    let mut path: Vec<VtreeId> = anc_a[..=meet].to_vec();
    path.extend(down.into_iter().rev());
    path
}

/// A cut belongs to the subtree part iff its original position reaches the
/// designated child without passing through the split node.
fn cut_goes_sub(src: &Vtree, cut: VtreeId, split: VtreeId, sub_child: VtreeId) -> bool {
    !orig_path(src, cut, sub_child).contains(&split)
}

fn piece_subtree_nodes(piece: &Piece, top: VtreeId) -> Vec<VtreeId> {
    let mut out = Vec::new();
    let mut stack = vec![top];
    while let Some(u) = stack.pop() {
        out.push(u);
        if let Some(&(l, r)) = piece.kids.get(&u) {
            stack.push(l);
            stack.push(r);
        }
    }
    out
}

fn piece_size(piece: &Piece) -> usize {
    piece_subtree_nodes(piece, piece.root).len()
}

fn carve(src: &Vtree, piece: &Piece, v: VtreeId, sub_child: VtreeId) -> (Piece, Piece) {
    let (l, r) = piece.kids[&v];
    let other = if sub_child == l { r } else { l };
    let sub_nodes = piece_subtree_nodes(piece, sub_child);
    let mut sub_kids = BTreeMap::new();
    for &u in &sub_nodes {
        if let Some(&c) = piece.kids.get(&u) {
            sub_kids.insert(u, c);
        }
    }
    let mut co_kids = piece.kids.clone();
    co_kids.remove(&v);
    for &u in &sub_nodes {
        co_kids.remove(&u);
    }
    // contract: the other child takes the split position
    let co_root = if v == piece.root {
        other
    } else {
        let parent = *piece
            .kids
            .iter()
            .find(|(_, &(a, b))| a == v || b == v)
            .expect("split node has a piece parent")
            .0;
        let (pl, pr) = co_kids[&parent];
        let new = if pl == v { (other, pr) } else { (pl, other) };
        co_kids.insert(parent, new);
        piece.root
    };
    let mut sub_cuts: BTreeSet<VtreeId> = piece
        .cuts
        .iter()
        .copied()
        .filter(|&z| cut_goes_sub(src, z, v, sub_child))
        .collect();
    let mut co_cuts: BTreeSet<VtreeId> = piece.cuts.difference(&sub_cuts).copied().collect();
    sub_cuts.insert(v);
    co_cuts.insert(v);
    (
        Piece {
            root: co_root,
            kids: co_kids,
            cuts: co_cuts,
        },
        Piece {
            root: sub_child,
            kids: sub_kids,
            cuts: sub_cuts,
        },
    )
}

/// A part stays workable when it is a single leaf, has at most one boundary
/// cut, or has two cuts that some further split can send to opposite sides.
fn feasible(src: &Vtree, piece: &Piece) -> bool {
    if piece.kids.is_empty() || piece.cuts.len() <= 1 {
        return true;
    }
    if piece.cuts.len() > 2 {
        return false;
    }
    for (&u, &(l, r)) in &piece.kids {
        for child in [l, r] {
            let below = piece
                .cuts
                .iter()
                .filter(|&&z| cut_goes_sub(src, z, u, child))
                .count();
            if below == 1 {
                return true;
            }
        }
    }
    false
}

fn choose_split(src: &Vtree, piece: &Piece) -> (VtreeId, VtreeId) {
    let total = piece_size(piece);
    let mut best: Option<(usize, VtreeId, VtreeId)> = None;
    for (&v, &(l, r)) in &piece.kids {
        for sub_child in [l, r] {
            let (co, sub) = carve(src, piece, v, sub_child);
            if !feasible(src, &co) || !feasible(src, &sub) {
                continue;
            }
            let sub_size = piece_size(&sub);
            let worst = sub_size.max(total - sub_size - 1);
            let cand = (worst, v, sub_child);
            if best.map_or(true, |b| cand < b) {
                best = Some(cand);
            }
        }
    }
    let (_, v, sub_child) = best.expect("a feasible split always exists");
    (v, sub_child)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bn::pc_to_bn;
    use crate::circuit::{normalize, parse_circuit};
    use crate::vtree::VtreeSpec;

    fn hmm4_bn() -> TreeBayesNet {
        let c = normalize(&parse_circuit(crate::bn::tests::appendix_hmm_text()).unwrap()).unwrap();
        pc_to_bn(&c, &Vtree::right_linear(4)).unwrap()
    }

    #[test]
    fn components_without_blockers_is_whole_tree() {
        let bn = hmm4_bn();
        let comps = connected_components(&bn, &BTreeSet::new());
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].vars().len(), 4);
    }

    #[test]
    fn removing_middle_latent_splits_chain() {
        let bn = hmm4_bn();
        // latent ids on the right-linear vtree over 4 vars: 0, 2, 4; X1 hangs
        // directly off Z2, so removing it leaves three pieces
        let comps = connected_components(&bn, &BTreeSet::from([2]));
        assert_eq!(comps.len(), 3);
        let vars: Vec<BTreeSet<usize>> = comps.iter().map(|c| c.vars().clone()).collect();
        assert!(vars.contains(&BTreeSet::from([0])));
        assert!(vars.contains(&BTreeSet::from([1])));
        assert!(vars.contains(&BTreeSet::from([2, 3])));
        // the upper component sees the removed latent as a marker leaf
        let upper = comps.iter().find(|c| c.vars().contains(&0)).unwrap();
        assert!(upper.sites().contains(&Site::Latent(2)));
    }

    #[test]
    fn removing_root_latent_yields_per_subtree_components() {
        let bn = hmm4_bn();
        let comps = connected_components(&bn, &BTreeSet::from([0]));
        assert_eq!(comps.len(), 2);
    }

    #[test]
    fn separator_base_cases() {
        let bn = hmm4_bn();
        let comp = connected_components(&bn, &BTreeSet::new()).remove(0);
        let empty = BTreeSet::new();
        let t = minimum_separator(&comp, &empty, &empty).unwrap();
        assert!(t.sep.is_empty() && t.sep_a.is_empty() && t.sep_b.is_empty());
        let t = minimum_separator(&comp, &BTreeSet::from([0, 1]), &empty).unwrap();
        assert_eq!(t.sep_a, BTreeSet::from([Site::Latent(0)]));
        assert!(t.sep.is_empty());
        assert!(minimum_separator(&comp, &BTreeSet::from([0]), &BTreeSet::from([0])).is_err());
    }

    #[test]
    fn separator_star_root() {
        // root latent with one A-leaf and one B-leaf: the separator is a
        // single site, lifting to the root latent
        let text = r#"{"format_version":1,"num_vars":2,"root":3,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"prod","children":[0,1]},
            {"id":3,"kind":"sum","children":[2],"weights":[1.0]}]}"#;
        let c = parse_circuit(text).unwrap();
        let bn = pc_to_bn(&c, &Vtree::right_linear(2)).unwrap();
        let comp = connected_components(&bn, &BTreeSet::new()).remove(0);
        let t =
            minimum_separator(&comp, &BTreeSet::from([0]), &BTreeSet::from([1])).unwrap();
        assert_eq!(t.sep.len(), 1);
        assert_eq!(lift_to_latents(&bn, &t.sep), BTreeSet::from([0]));
    }

    #[test]
    fn trace_stops_at_first_blocker() {
        let bn = hmm4_bn();
        // from X3 with blockers {Z0, Z2}: the path stops at Z2
        let hit = trace_first_blocked(&bn, &BTreeSet::from([3]), &BTreeSet::from([0, 2]));
        assert_eq!(hit, BTreeSet::from([2]));
        // from X0, the first blocker is Z0
        let hit = trace_first_blocked(&bn, &BTreeSet::from([0]), &BTreeSet::from([0, 2]));
        assert_eq!(hit, BTreeSet::from([0]));
    }

    #[test]
    fn figure_one_trace_retains_both_blockers() {
        // source vtree ((X0,(X1,X2)),((X3,X4),X5)); blockers are the latents
        // over [0..2] and [1..2]; tracing from {X2,X3,X4,X5} keeps both
        let spec = VtreeSpec::pair(
            VtreeSpec::pair(
                VtreeSpec::Var(0),
                VtreeSpec::pair(VtreeSpec::Var(1), VtreeSpec::Var(2)),
            ),
            VtreeSpec::pair(
                VtreeSpec::pair(VtreeSpec::Var(3), VtreeSpec::Var(4)),
                VtreeSpec::Var(5),
            ),
        );
        let src = Vtree::from_spec(&spec).unwrap();
        let c = crate::generate::random_structured_pc(
            &src,
            &crate::generate::GenOptions::new(2, 42),
        );
        let bn = pc_to_bn(&c, &src).unwrap();
        let z_02 = src.node_by_interval(0, 2).unwrap();
        let z_12 = src.node_by_interval(1, 2).unwrap();
        let blockers = BTreeSet::from([z_02, z_12]);
        let sources = BTreeSet::from([2, 3, 4, 5]);
        let hit = trace_first_blocked(&bn, &sources, &blockers);
        assert_eq!(hit, blockers);
        // and from the other side {X0, X1} the same two are hit
        let hit = trace_first_blocked(&bn, &BTreeSet::from([0, 1]), &blockers);
        assert_eq!(hit, blockers);
    }

    #[test]
    fn figure_one_labelling_is_the_paper_separator() {
        // target root splits {X2,X3,X4,X5} | {X0,X1}; the minimum separator
        // has two latents and both children receive the same label
        let spec = VtreeSpec::pair(
            VtreeSpec::pair(
                VtreeSpec::Var(0),
                VtreeSpec::pair(VtreeSpec::Var(1), VtreeSpec::Var(2)),
            ),
            VtreeSpec::pair(
                VtreeSpec::pair(VtreeSpec::Var(3), VtreeSpec::Var(4)),
                VtreeSpec::Var(5),
            ),
        );
        let src = Vtree::from_spec(&spec).unwrap();
        let c = crate::generate::random_structured_pc(
            &src,
            &crate::generate::GenOptions::new(2, 7),
        );
        let bn = pc_to_bn(&c, &src).unwrap();
        let tgt_spec = VtreeSpec::pair(
            VtreeSpec::pair(
                VtreeSpec::pair(VtreeSpec::Var(2), VtreeSpec::Var(5)),
                VtreeSpec::pair(VtreeSpec::Var(3), VtreeSpec::Var(4)),
            ),
            VtreeSpec::pair(VtreeSpec::Var(0), VtreeSpec::Var(1)),
        );
        let tgt = Vtree::from_spec(&tgt_spec).unwrap();
        let lw = compute_label(&bn, &tgt).unwrap();
        let report = validate_labelling(&bn, &lw);
        assert!(report.valid);
        let (b, c_node) = tgt.children(tgt.root()).unwrap();
        assert_eq!(lw.label(b), lw.label(c_node));
        assert_eq!(lw.label(b).len(), 2);
        // the paper's illustrated choice is a valid labelling too
        let z_02 = src.node_by_interval(0, 2).unwrap();
        let z_12 = src.node_by_interval(1, 2).unwrap();
        let mut hand = lw.clone();
        for w in 0..tgt.num_nodes() {
            if w != tgt.root() {
                hand.labels[w] = BTreeSet::from([z_02, z_12]);
            }
        }
        // leaves keep traced labels; only the two top children are rewritten
        hand.labels = lw.labels.clone();
        hand.labels[b] = BTreeSet::from([z_02, z_12]);
        hand.labels[c_node] = BTreeSet::from([z_02, z_12]);
        let hand_report = validate_labelling(&bn, &hand);
        assert!(hand_report.node_checks[b].1, "paper label covers X_b");
        assert!(hand_report.node_checks[c_node].1, "paper label covers X_c");
    }

    #[test]
    fn identical_source_target_gives_singletons() {
        let bn = hmm4_bn();
        let target = Vtree::right_linear(4);
        let lw = compute_label(&bn, &target).unwrap();
        let report = validate_labelling(&bn, &lw);
        assert!(report.valid);
        assert!(lw.label(target.root()).is_empty());
        for w in 0..target.num_nodes() {
            if w != target.root() {
                assert_eq!(lw.label(w).len(), 1, "node {w}: {:?}", lw.label(w));
            }
        }
    }

    #[test]
    fn appendix_d_balanced_target_has_singleton_middle_label() {
        let bn = hmm4_bn();
        let target = Vtree::balanced(4);
        let lw = compute_label(&bn, &target).unwrap();
        let report = validate_labelling(&bn, &lw);
        assert!(report.valid, "checks: {:?}", report.node_checks);
        let (l, r) = target.children(target.root()).unwrap();
        assert_eq!(lw.label(l).len(), 1);
        assert_eq!(lw.label(l), lw.label(r));
        assert!(report.m_prime <= 2);
    }

    #[test]
    fn all_latents_labelling_is_valid_with_full_cardinality() {
        let bn = hmm4_bn();
        let target = Vtree::balanced(4);
        let all: BTreeSet<VtreeId> = bn.latents().into_iter().collect();
        let mut labels = vec![all.clone(); target.num_nodes()];
        labels[target.root()] = BTreeSet::new();
        let lw = LabelledVtree {
            vtree: target.clone(),
            labels,
        };
        let report = validate_labelling(&bn, &lw);
        assert!(report.valid);
        assert_eq!(report.m_prime, 3); // n - 1 latents
        // a nonempty root label violates the convention
        let mut bad = lw.clone();
        bad.labels[target.root()] = all;
        assert!(!validate_labelling(&bn, &bad).valid);
    }

    #[test]
    fn segment_cover_full_range_is_root() {
        let v = Vtree::balanced(8);
        assert_eq!(segment_cover(&v, 0, 7).unwrap(), vec![v.root()]);
    }

    #[test]
    fn segment_cover_tiles_disjointly() {
        let v = Vtree::balanced(8);
        for lo in 0..8 {
            for hi in lo..8 {
                let cover = segment_cover(&v, lo, hi).unwrap();
                let mut union = BTreeSet::new();
                let mut total = 0;
                for id in &cover {
                    union.extend(v.scope(*id).iter().copied());
                    total += v.scope(*id).len();
                }
                let expect: BTreeSet<usize> = (lo..=hi).collect();
                assert_eq!(union, expect, "[{lo},{hi}]");
                assert_eq!(total, union.len(), "tiles overlap in [{lo},{hi}]");
                assert!(cover.len() <= 4 * v.depth());
            }
        }
    }

    #[test]
    fn linear_cover_boundaries() {
        let v = Vtree::right_linear(6);
        // interior segment: both boundaries present
        let c = linear_cover(&v, 1, 3).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.contains(&v.node_by_interval(1, 5).unwrap()));
        assert!(c.contains(&v.node_by_interval(4, 5).unwrap()));
        // prefix drops the left boundary
        let c = linear_cover(&v, 0, 2).unwrap();
        assert_eq!(c, BTreeSet::from([v.node_by_interval(3, 5).unwrap()]));
        // suffix drops the right boundary
        let c = linear_cover(&v, 2, 5).unwrap();
        assert_eq!(c, BTreeSet::from([v.node_by_interval(2, 5).unwrap()]));
        // the last position caps at the deepest latent
        let c = linear_cover(&v, 5, 5).unwrap();
        assert_eq!(c, BTreeSet::from([v.node_by_interval(4, 5).unwrap()]));
    }

    #[test]
    fn contiguous_labelling_linear_source_has_small_cardinality() {
        let c = normalize(&parse_circuit(crate::bn::tests::appendix_hmm_text()).unwrap()).unwrap();
        let bn = pc_to_bn(&c, &Vtree::right_linear(4)).unwrap();
        let target = Vtree::balanced(4);
        let lw = contiguous_labelling(&bn, &target).unwrap();
        let report = validate_labelling(&bn, &lw);
        assert!(report.valid, "checks: {:?}", report.node_checks);
        assert!(report.m_prime <= 3);
    }

    #[test]
    fn balanced_vtree_of_linear4_matches_worked_example() {
        let src = Vtree::right_linear(4);
        let lw = balanced_vtree(&src);
        let w = &lw.vtree;
        assert_eq!(w.num_nodes(), src.num_nodes());
        assert_eq!(w.depth(), 3);
        // both inner children of the root are labelled with the middle latent
        let (l, r) = w.children(w.root()).unwrap();
        let middle = src.node_by_interval(1, 3).unwrap();
        assert_eq!(lw.label(w.root()), &BTreeSet::new());
        assert_eq!(lw.label(l), &BTreeSet::from([middle]));
        assert_eq!(lw.label(r), &BTreeSet::from([middle]));
    }

    #[test]
    fn balanced_vtree_single_variable() {
        let src = Vtree::from_spec(&VtreeSpec::Var(0)).unwrap();
        let lw = balanced_vtree(&src);
        assert_eq!(lw.vtree.num_nodes(), 1);
        assert!(lw.label(0).is_empty());
    }

    #[test]
    fn balanced_vtree_depth_and_cardinality_bounds() {
        for n in [2usize, 3, 5, 8, 13, 21, 34, 64] {
            let src = Vtree::right_linear(n);
            let lw = balanced_vtree(&src);
            let bound = (n as f64).log(1.5).ceil() as usize + 2;
            assert!(
                lw.vtree.depth() <= bound,
                "n={n}: depth {} > {bound}",
                lw.vtree.depth()
            );
            for w in 0..lw.vtree.num_nodes() {
                if let Some((l, r)) = lw.vtree.children(w) {
                    let mut u = lw.label(l).clone();
                    u.extend(lw.label(r));
                    u.extend(lw.label(w));
                    assert!(u.len() <= 3, "n={n} node {w}: card {}", u.len());
                }
            }
        }
    }

    #[test]
    fn balanced_vtree_labels_validate_on_unbalanced_source() {
        // the shape that breaks naive boundary threading: a heavy branch
        // beside a small one
        let spec = VtreeSpec::pair(
            VtreeSpec::pair(
                VtreeSpec::Var(0),
                VtreeSpec::pair(
                    VtreeSpec::Var(1),
                    VtreeSpec::pair(
                        VtreeSpec::Var(2),
                        VtreeSpec::pair(VtreeSpec::Var(3), VtreeSpec::Var(4)),
                    ),
                ),
            ),
            VtreeSpec::pair(VtreeSpec::Var(5), VtreeSpec::Var(6)),
        );
        let src = Vtree::from_spec(&spec).unwrap();
        let c = crate::generate::random_structured_pc(
            &src,
            &crate::generate::GenOptions::new(2, 5),
        );
        let bn = pc_to_bn(&c, &src).unwrap();
        let lw = balanced_vtree(&src);
        let report = validate_labelling(&bn, &lw);
        assert!(report.valid, "checks: {:?}", report.node_checks);
        assert!(report.m_prime <= 3);
    }
}
