//! Bridge from structured circuits to tree-shaped Bayesian networks.
//!
//! Every inner vtree node `v` becomes a categorical latent `Z_v` whose states
//! index the product nodes with scope `X_v`; the BN graph is the vtree with
//! inner nodes replaced by those latents. The root CPT comes from the root
//! sum's weights, latent CPTs from the sum edges along the unique
//! product-sum-product paths (zero when no path exists), and observed leaves
//! from the leaf tables hanging under each product. Marginalizing the latents
//! out of the BN recovers the circuit distribution exactly, which is what
//! makes the restructuring conditionals well defined.

use crate::circuit::{Circuit, Node, NodeId};
use crate::vtree::{Vtree, VtreeId};
use crate::{Error, Result};
use std::collections::BTreeMap;

/// A node of the Bayesian network: a latent per inner vtree node, or an
/// observed variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Latent(VtreeId),
    Obs(usize),
}

impl Site {
    pub fn latent(self) -> Option<VtreeId> {
        match self {
            Site::Latent(v) => Some(v),
            Site::Obs(_) => None,
        }
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Site::Latent(v) => write!(f, "Z{v}"),
            Site::Obs(x) => write!(f, "X{x}"),
        }
    }
}

/// Per inner vtree node, the product nodes with that scope in ascending id
/// order; a product's position is its latent state index.
#[derive(Debug, Clone)]
pub struct AugmentedIndex {
    pub by_scope: BTreeMap<VtreeId, Vec<NodeId>>,
}

impl AugmentedIndex {
    pub fn hidden_state_size(&self) -> usize {
        self.by_scope.values().map(Vec::len).max().unwrap_or(1)
    }

    pub fn index_of(&self, v: VtreeId, node: NodeId) -> Option<usize> {
        self.by_scope.get(&v)?.iter().position(|&t| t == node)
    }
}

/// Assign every product node of a normalized structured circuit to its vtree
/// node and give it a dense state index.
pub fn augment_index(c: &Circuit, v: &Vtree) -> Result<AugmentedIndex> {
    let scopes = c.scopes();
    if scopes[c.root].len() != c.num_vars || v.num_vars() != c.num_vars {
        return Err(Error::VtreeMismatch(format!(
            "circuit scope has {} of {} variables, vtree has {}",
            scopes[c.root].len(),
            c.num_vars,
            v.num_vars()
        )));
    }
    let mut scope_to_vtree: BTreeMap<&std::collections::BTreeSet<usize>, VtreeId> = BTreeMap::new();
    for id in 0..v.num_nodes() {
        if !v.is_leaf(id) {
            scope_to_vtree.insert(v.scope(id), id);
        }
    }
    let mut by_scope: BTreeMap<VtreeId, Vec<NodeId>> = BTreeMap::new();
    for (id, node) in c.nodes.iter().enumerate() {
        if let Node::Prod { children } = node {
            if children.len() != 2 {
                return Err(Error::VtreeMismatch(format!(
                    "product {id} is not binary; normalize first"
                )));
            }
            let vid = *scope_to_vtree.get(&scopes[id]).ok_or_else(|| {
                Error::VtreeMismatch(format!("product {id} scope not in vtree"))
            })?;
            let (lv, rv) = v.children(vid).expect("inner vtree node");
            let cl = &scopes[children[0]];
            let ok = (cl == v.scope(lv)) || (cl == v.scope(rv));
            if !ok {
                return Err(Error::VtreeMismatch(format!(
                    "product {id} does not decompose along vtree node {vid}"
                )));
            }
            by_scope.entry(vid).or_default().push(id);
        }
    }
    for vid in v.inner_ids() {
        match by_scope.get(&vid) {
            Some(list) if !list.is_empty() => {}
            _ => {
                return Err(Error::VtreeMismatch(format!(
                    "no product node has the scope of vtree node {vid}; \
                     the circuit does not populate the whole vtree"
                )))
            }
        }
    }
    Ok(AugmentedIndex { by_scope })
}

/// Hidden state size of a circuit with respect to a vtree: the largest number
/// of product nodes sharing one scope.
pub fn hidden_state_size(c: &Circuit, v: &Vtree) -> Result<usize> {
    Ok(augment_index(c, v)?.hidden_state_size())
}

/// Tree-shaped Bayesian network over observed variables and one latent per
/// inner vtree node.
#[derive(Debug, Clone)]
pub struct TreeBayesNet {
    vtree: Vtree,
    root: Site,
    parent: BTreeMap<Site, Site>,
    children: BTreeMap<Site, Vec<Site>>,
    card: BTreeMap<Site, usize>,
    /// Distribution of the root site.
    root_cpt: Vec<f64>,
    /// `latent_cpt[v][j][i] = p(Z_v = i | parent = j)`
    latent_cpt: BTreeMap<VtreeId, Vec<Vec<f64>>>,
    /// `obs_cpt[x][j][d] = p(X_x = d | parent = j)`
    obs_cpt: BTreeMap<usize, Vec<Vec<f64>>>,
}

/// Sparse conditional table `p(targets | given)`: scope lists the given sites
/// first, then the targets; zero entries (and conditioning events of zero
/// prior mass) are omitted.
#[derive(Debug, Clone)]
pub struct SparseTable {
    pub given: Vec<Site>,
    pub targets: Vec<Site>,
    pub entries: BTreeMap<Vec<usize>, f64>,
}

impl SparseTable {
    /// Probability for a joint (given ++ targets) assignment; omitted = 0.
    pub fn get(&self, key: &[usize]) -> f64 {
        self.entries.get(key).copied().unwrap_or(0.0)
    }
}

impl TreeBayesNet {
    pub fn vtree(&self) -> &Vtree {
        &self.vtree
    }

    pub fn root(&self) -> Site {
        self.root
    }

    pub fn num_vars(&self) -> usize {
        self.vtree.num_vars()
    }

    pub fn parent(&self, s: Site) -> Option<Site> {
        self.parent.get(&s).copied()
    }

    pub fn children(&self, s: Site) -> &[Site] {
        self.children.get(&s).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn card(&self, s: Site) -> usize {
        self.card[&s]
    }

    pub fn latents(&self) -> Vec<VtreeId> {
        self.vtree.inner_ids()
    }

    pub fn sites(&self) -> Vec<Site> {
        let mut out: Vec<Site> = self.vtree.inner_ids().into_iter().map(Site::Latent).collect();
        out.extend((0..self.num_vars()).map(Site::Obs));
        out
    }

    pub fn root_cpt(&self) -> &[f64] {
        &self.root_cpt
    }

    pub fn latent_cpt(&self, v: VtreeId) -> &Vec<Vec<f64>> {
        &self.latent_cpt[&v]
    }

    pub fn obs_cpt(&self, x: usize) -> &Vec<Vec<f64>> {
        &self.obs_cpt[&x]
    }

    /// Full-joint probability: product of CPT entries.
    pub fn joint(&self, assignment: &BTreeMap<Site, usize>) -> f64 {
        let mut p = match self.root {
            Site::Latent(_) | Site::Obs(_) => self.root_cpt[assignment[&self.root]],
        };
        for (&site, &parent) in &self.parent {
            let j = assignment[&parent];
            let val = assignment[&site];
            p *= match site {
                Site::Latent(v) => self.latent_cpt[&v][j][val],
                Site::Obs(x) => self.obs_cpt[&x][j][val],
            };
        }
        p
    }

    /// Marginal probability of partial evidence, by one upward sum-product
    /// pass over the tree.
    pub fn marginal(&self, evidence: &BTreeMap<Site, usize>) -> f64 {
        // value(site, state) = p(evidence below site | site = state)
        fn value(bn: &TreeBayesNet, site: Site, state: usize, ev: &BTreeMap<Site, usize>) -> f64 {
            let mut acc = 1.0;
            for &ch in bn.children(site) {
                let cpt: &Vec<Vec<f64>> = match ch {
                    Site::Latent(v) => &bn.latent_cpt[&v],
                    Site::Obs(x) => &bn.obs_cpt[&x],
                };
                let row = &cpt[state];
                let m: f64 = match ev.get(&ch) {
                    Some(&cs) => row[cs] * value(bn, ch, cs, ev),
                    None => (0..bn.card(ch))
                        .map(|cs| row[cs] * value(bn, ch, cs, ev))
                        .sum(),
                };
                acc *= m;
            }
            acc
        }
        match evidence.get(&self.root) {
            Some(&rs) => self.root_cpt[rs] * value(self, self.root, rs, evidence),
            None => (0..self.card(self.root))
                .map(|rs| self.root_cpt[rs] * value(self, self.root, rs, evidence))
                .sum(),
        }
    }

    /// Exact conditional table by enumeration over the (small) scope.
    pub fn conditional_table(&self, targets: &[Site], given: &[Site]) -> SparseTable {
        let given_cards: Vec<usize> = given.iter().map(|&s| self.card(s)).collect();
        let target_cards: Vec<usize> = targets.iter().map(|&s| self.card(s)).collect();
        let mut entries = BTreeMap::new();
        for g in crate::assignments(&given_cards) {
            let mut ev: BTreeMap<Site, usize> = BTreeMap::new();
            for (&s, &val) in given.iter().zip(&g) {
                ev.insert(s, val);
            }
            let pg = self.marginal(&ev);
            if pg <= 0.0 {
                continue;
            }
            for t in crate::assignments(&target_cards) {
                let mut ev2 = ev.clone();
                let mut consistent = true;
                for (&s, &val) in targets.iter().zip(&t) {
                    if let Some(&prev) = ev2.get(&s) {
                        if prev != val {
                            consistent = false;
                            break;
                        }
                    }
                    ev2.insert(s, val);
                }
                if !consistent {
                    continue;
                }
                let pj = self.marginal(&ev2);
                if pj > 0.0 {
                    let mut key = g.clone();
                    key.extend_from_slice(&t);
                    entries.insert(key, pj / pg);
                }
            }
        }
        SparseTable {
            given: given.to_vec(),
            targets: targets.to_vec(),
            entries,
        }
    }

    /// Conditional leaf table `p(X = d | given)`, one row per assignment of
    /// the given sites with positive prior. The given set must cover the
    /// variable, i.e. block every path from `X` to the remaining network.
    pub fn leaf_conditional(
        &self,
        var: usize,
        given: &[Site],
    ) -> Result<BTreeMap<Vec<usize>, Vec<f64>>> {
        let others: Vec<Site> = (0..self.num_vars())
            .filter(|&x| x != var)
            .map(Site::Obs)
            .collect();
        let blockers: std::collections::BTreeSet<Site> = given.iter().copied().collect();
        if !others.is_empty() && !blockers.is_empty() {
            for &o in &others {
                if !self.blocks(&blockers, Site::Obs(var), o) {
                    return Err(Error::InvalidLabelling(format!(
                        "given set does not cover X{var}: path to {o} unblocked"
                    )));
                }
            }
        } else if !others.is_empty() && blockers.is_empty() {
            return Err(Error::InvalidLabelling(format!(
                "given set does not cover X{var}"
            )));
        }
        let cards: Vec<usize> = given.iter().map(|&s| self.card(s)).collect();
        let dom = self.card(Site::Obs(var));
        let mut out = BTreeMap::new();
        for g in crate::assignments(&cards) {
            let mut ev: BTreeMap<Site, usize> = BTreeMap::new();
            for (&s, &val) in given.iter().zip(&g) {
                ev.insert(s, val);
            }
            let pg = self.marginal(&ev);
            if pg <= 0.0 {
                continue;
            }
            let mut row = Vec::with_capacity(dom);
            for d in 0..dom {
                let mut ev2 = ev.clone();
                ev2.insert(Site::Obs(var), d);
                row.push(self.marginal(&ev2) / pg);
            }
            out.insert(g, row);
        }
        Ok(out)
    }

    /// Unique tree path between two sites, endpoints included.
    pub fn path(&self, a: Site, b: Site) -> Vec<Site> {
        let mut anc_a = vec![a];
        let mut cur = a;
        while let Some(p) = self.parent(cur) {
            anc_a.push(p);
            cur = p;
        }
        let mut anc_b = vec![b];
        cur = b;
        while let Some(p) = self.parent(cur) {
            anc_b.push(p);
            cur = p;
        }
        let pos: BTreeMap<Site, usize> = anc_a.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut down = Vec::new();
        let mut meet = 0;
        for &s in &anc_b {
            if let Some(&i) = pos.get(&s) {
                meet = i;
                break;
            }
            down.push(s);
        }
        let mut path: Vec<Site> = anc_a[..=meet].to_vec();
        path.extend(down.into_iter().rev());
        path
    }

    /// True when the blocker set intersects the a-b path.
    pub fn blocks(
        &self,
        blockers: &std::collections::BTreeSet<Site>,
        a: Site,
        b: Site,
    ) -> bool {
        self.path(a, b).iter().any(|s| blockers.contains(s))
    }
}

/// Construct the tree Bayesian network of a normalized, smooth, structured
/// circuit. The single-variable case has no latents; the network is just the
/// leaf marginal.
pub fn pc_to_bn(c: &Circuit, v: &Vtree) -> Result<TreeBayesNet> {
    let idx = augment_index(c, v)?;
    let scopes = c.scopes();

    let mut parent: BTreeMap<Site, Site> = BTreeMap::new();
    let mut children: BTreeMap<Site, Vec<Site>> = BTreeMap::new();
    let mut card: BTreeMap<Site, usize> = BTreeMap::new();
    let site_of = |vid: VtreeId| -> Site {
        match v.leaf_var(vid) {
            Some(x) => Site::Obs(x),
            None => Site::Latent(vid),
        }
    };
    for vid in 0..v.num_nodes() {
        let s = site_of(vid);
        match s {
            Site::Latent(_) => {
                card.insert(s, idx.by_scope[&vid].len());
            }
            Site::Obs(x) => {
                card.insert(s, c.domains[x]);
            }
        }
        if let Some((lv, rv)) = v.children(vid) {
            for cv in [lv, rv] {
                let cs = site_of(cv);
                parent.insert(cs, s);
                children.entry(s).or_default().push(cs);
            }
        }
    }
    let root = site_of(v.root());

    if v.num_vars() == 1 {
        // no latents: the root "CPT" is the marginal of the only variable
        let mut table = vec![0.0; c.domains[0]];
        for d in 0..c.domains[0] {
            table[d] = crate::circuit::evaluate(c, &[d])?;
        }
        return Ok(TreeBayesNet {
            vtree: v.clone(),
            root,
            parent,
            children,
            card,
            root_cpt: table,
            latent_cpt: BTreeMap::new(),
            obs_cpt: BTreeMap::new(),
        });
    }

    // root CPT: the root sum's weights over prod(root)
    let root_vid = v.root();
    let root_products = &idx.by_scope[&root_vid];
    let mut root_cpt = vec![0.0; root_products.len()];
    match &c.nodes[c.root] {
        Node::Sum { children: ch, weights } => {
            for (&t, &w) in ch.iter().zip(weights) {
                let i = idx.index_of(root_vid, t).ok_or_else(|| {
                    Error::VtreeMismatch("root sum child is not a root-scope product".into())
                })?;
                root_cpt[i] += w;
            }
        }
        Node::Prod { .. } => {
            let i = idx.index_of(root_vid, c.root).expect("root product indexed");
            root_cpt[i] = 1.0;
        }
        Node::Leaf { .. } => unreachable!("multi-variable circuit has a non-leaf root"),
    }

    // per product: the child on each vtree side
    let side_child = |t: NodeId, side_scope: &std::collections::BTreeSet<usize>| -> NodeId {
        match &c.nodes[t] {
            Node::Prod { children } => *children
                .iter()
                .find(|&&ch| &scopes[ch] == side_scope)
                .expect("structured product has the side child"),
            _ => unreachable!(),
        }
    };

    let mut latent_cpt = BTreeMap::new();
    let mut obs_cpt = BTreeMap::new();
    for vid in 0..v.num_nodes() {
        let (lv, rv) = match v.children(vid) {
            Some(p) => p,
            None => continue,
        };
        let parents = &idx.by_scope[&vid];
        for cv in [lv, rv] {
            match v.leaf_var(cv) {
                Some(x) => {
                    // observed leaf: the leaf table under each parent product
                    let mut table = vec![vec![0.0; c.domains[x]]; parents.len()];
                    for (j, &t) in parents.iter().enumerate() {
                        let ch = side_child(t, v.scope(cv));
                        match &c.nodes[ch] {
                            Node::Leaf { probs, .. } => table[j].copy_from_slice(probs),
                            _ => {
                                return Err(Error::VtreeMismatch(format!(
                                    "product {t} has a non-leaf child at a leaf scope; \
                                     normalize first"
                                )))
                            }
                        }
                    }
                    obs_cpt.insert(x, table);
                }
                None => {
                    // latent child: weights along product -> sum -> product
                    let childs = &idx.by_scope[&cv];
                    let mut table = vec![vec![0.0; childs.len()]; parents.len()];
                    for (j, &t) in parents.iter().enumerate() {
                        let ch = side_child(t, v.scope(cv));
                        match &c.nodes[ch] {
                            Node::Sum { children: sc, weights } => {
                                for (&gt, &w) in sc.iter().zip(weights) {
                                    let i = idx.index_of(cv, gt).ok_or_else(|| {
                                        Error::VtreeMismatch(format!(
                                            "sum {ch} child {gt} is not a product of scope {cv}"
                                        ))
                                    })?;
                                    // alternating + binary: at most one path
                                    if table[j][i] != 0.0 {
                                        return Err(Error::VtreeMismatch(format!(
                                            "two paths from product {t} to product {gt}; \
                                             normalize first"
                                        )));
                                    }
                                    table[j][i] = w;
                                }
                            }
                            _ => {
                                return Err(Error::VtreeMismatch(format!(
                                    "product {t} has a non-sum child at inner scope; \
                                     normalize first"
                                )))
                            }
                        }
                    }
                    latent_cpt.insert(cv, table);
                }
            }
        }
    }

    Ok(TreeBayesNet {
        vtree: v.clone(),
        root,
        parent,
        children,
        card,
        root_cpt,
        latent_cpt,
        obs_cpt,
    })
}

/// Debugging dump: graph edges and CPTs as stable text. Not a
/// stability-guaranteed interface.
pub fn dump_bn(bn: &TreeBayesNet) -> String {
    let mut out = String::new();
    out.push_str(&format!("root {}\n", bn.root()));
    for s in bn.sites() {
        if let Some(p) = bn.parent(s) {
            out.push_str(&format!("edge {} -> {}\n", p, s));
        }
    }
    out.push_str(&format!("cpt root {:?}\n", bn.root_cpt()));
    for v in bn.latents() {
        if bn.parent(Site::Latent(v)).is_some() {
            out.push_str(&format!("cpt Z{} {:?}\n", v, bn.latent_cpt(v)));
        }
    }
    for x in 0..bn.num_vars() {
        if bn.parent(Site::Obs(x)).is_some() {
            out.push_str(&format!("cpt X{} {:?}\n", x, bn.obs_cpt(x)));
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::circuit::{normalize, parse_circuit};

    /// Appendix-style 4-variable HMM over the right-linear vtree with
    /// two-state latents and distinct transition weights.
    pub(crate) fn hmm4() -> (Circuit, Vtree) {
        let c = parse_circuit(appendix_hmm_text()).unwrap();
        let c = normalize(&c).unwrap();
        (c, Vtree::right_linear(4))
    }

    pub(crate) fn appendix_hmm_text() -> &'static str {
        r#"{"format_version":1,"num_vars":4,"root":18,"nodes":[
            {"id":0,"kind":"leaf","var":3,"probs":[0.2,0.8]},
            {"id":1,"kind":"leaf","var":3,"probs":[0.9,0.1]},
            {"id":2,"kind":"leaf","var":2,"probs":[0.3,0.7]},
            {"id":3,"kind":"leaf","var":2,"probs":[0.6,0.4]},
            {"id":4,"kind":"prod","children":[2,0]},
            {"id":5,"kind":"prod","children":[3,1]},
            {"id":6,"kind":"sum","children":[4,5],"weights":[0.7,0.3]},
            {"id":7,"kind":"sum","children":[4,5],"weights":[0.1,0.9]},
            {"id":8,"kind":"leaf","var":1,"probs":[0.4,0.6]},
            {"id":9,"kind":"leaf","var":1,"probs":[0.8,0.2]},
            {"id":10,"kind":"prod","children":[8,6]},
            {"id":11,"kind":"prod","children":[9,7]},
            {"id":12,"kind":"sum","children":[10,11],"weights":[0.5,0.5]},
            {"id":13,"kind":"sum","children":[10,11],"weights":[0.25,0.75]},
            {"id":14,"kind":"leaf","var":0,"probs":[0.35,0.65]},
            {"id":15,"kind":"leaf","var":0,"probs":[0.65,0.35]},
            {"id":16,"kind":"prod","children":[14,12]},
            {"id":17,"kind":"prod","children":[15,13]},
            {"id":18,"kind":"sum","children":[16,17],"weights":[0.45,0.55]}]}"#
    }

    #[test]
    fn hmm_bn_is_a_chain_with_two_state_latents() {
        let (c, v) = hmm4();
        let idx = augment_index(&c, &v).unwrap();
        assert_eq!(idx.hidden_state_size(), 2);
        for list in idx.by_scope.values() {
            assert_eq!(list.len(), 2);
        }
        let bn = pc_to_bn(&c, &v).unwrap();
        // chain Z0 -> {X0, Z2}, Z2 -> {X1, Z4}, Z4 -> {X2, X3}
        assert_eq!(bn.root(), Site::Latent(0));
        assert_eq!(bn.children(Site::Latent(0)), &[Site::Obs(0), Site::Latent(2)]);
        assert_eq!(bn.children(Site::Latent(2)), &[Site::Obs(1), Site::Latent(4)]);
        assert_eq!(bn.children(Site::Latent(4)), &[Site::Obs(2), Site::Obs(3)]);
        // every CPT row is a distribution
        for v in bn.latents().into_iter().skip(1) {
            for row in bn.latent_cpt(v) {
                let total: f64 = row.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bn_marginal_matches_circuit_evaluation() {
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        for x in crate::assignments(&c.domains) {
            let ev: BTreeMap<Site, usize> =
                x.iter().enumerate().map(|(i, &d)| (Site::Obs(i), d)).collect();
            let p_bn = bn.marginal(&ev);
            let p_c = crate::circuit::evaluate(&c, &x).unwrap();
            assert!(
                (p_bn - p_c).abs() <= 1e-9 * p_c.max(1e-30),
                "x={x:?}: bn={p_bn} circuit={p_c}"
            );
        }
    }

    #[test]
    fn single_product_circuit_gives_unary_latents() {
        let text = r#"{"format_version":1,"num_vars":2,"root":3,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"prod","children":[0,1]},
            {"id":3,"kind":"sum","children":[2],"weights":[1.0]}]}"#;
        let c = parse_circuit(text).unwrap();
        let v = Vtree::right_linear(2);
        let bn = pc_to_bn(&c, &v).unwrap();
        assert_eq!(bn.card(Site::Latent(0)), 1);
        let ev: BTreeMap<Site, usize> = [(Site::Obs(0), 1), (Site::Obs(1), 0)].into();
        assert!((bn.marginal(&ev) - 0.7 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn conditional_table_of_root_is_root_cpt() {
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        let t = bn.conditional_table(&[Site::Latent(0)], &[]);
        assert_eq!(t.get(&[0]), bn.root_cpt()[0]);
        assert_eq!(t.get(&[1]), bn.root_cpt()[1]);
    }

    #[test]
    fn conditional_rows_normalize() {
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        let t = bn.conditional_table(&[Site::Latent(0), Site::Latent(4)], &[Site::Latent(2)]);
        for g in 0..2 {
            let total: f64 = t
                .entries
                .iter()
                .filter(|(k, _)| k[0] == g)
                .map(|(_, &p)| p)
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "given Z2={g}: total {total}");
        }
    }

    #[test]
    fn chain_conditional_factorizes_given_middle() {
        // p(Z0, Z4 | Z2) = p(Z0 | Z2) p(Z4 | Z2) on the chain
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        let joint = bn.conditional_table(&[Site::Latent(0), Site::Latent(4)], &[Site::Latent(2)]);
        let left = bn.conditional_table(&[Site::Latent(0)], &[Site::Latent(2)]);
        let right = bn.conditional_table(&[Site::Latent(4)], &[Site::Latent(2)]);
        for (key, &p) in &joint.entries {
            let (g, z0, z4) = (key[0], key[1], key[2]);
            let q = left.get(&[g, z0]) * right.get(&[g, z4]);
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn leaf_conditional_matches_stored_cpt_for_parent() {
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        // X1 hangs under Z2
        let rows = bn.leaf_conditional(1, &[Site::Latent(2)]).unwrap();
        for (g, row) in &rows {
            let stored = &bn.obs_cpt(1)[g[0]];
            for (a, b) in row.iter().zip(stored) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn leaf_conditional_mixes_through_grandparent() {
        // p(X0 | Z2) = sum_{Z0} p(Z0 | Z2) p(X0 | Z0)
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        let rows = bn.leaf_conditional(0, &[Site::Latent(2)]).unwrap();
        let z0_given = bn.conditional_table(&[Site::Latent(0)], &[Site::Latent(2)]);
        for (g, row) in &rows {
            for d in 0..2 {
                let mut expect = 0.0;
                for z0 in 0..2 {
                    expect += z0_given.get(&[g[0], z0]) * bn.obs_cpt(0)[z0][d];
                }
                assert!((row[d] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn leaf_conditional_rejects_non_cover() {
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        // Z4 does not block X0 from X1
        assert!(bn.leaf_conditional(0, &[Site::Latent(4)]).is_err());
    }

    #[test]
    fn path_endpoints_included() {
        let (c, v) = hmm4();
        let bn = pc_to_bn(&c, &v).unwrap();
        let p = bn.path(Site::Obs(0), Site::Obs(3));
        assert_eq!(p.first(), Some(&Site::Obs(0)));
        assert_eq!(p.last(), Some(&Site::Obs(3)));
        assert!(p.contains(&Site::Latent(2)));
        let single = bn.path(Site::Obs(2), Site::Obs(2));
        assert_eq!(single, vec![Site::Obs(2)]);
    }
}
