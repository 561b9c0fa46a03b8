//! Probabilistic circuits: rooted DAGs of weighted sum, product, and
//! categorical leaf nodes.
//!
//! The canonical form used by every transform in this crate alternates sum
//! and product layers (a sum's children are products, a product's children
//! are leaves or sums), every product is binary, and single-variable scopes
//! are bare leaves (mixtures over one variable are collapsed into a single
//! mixed table). [`normalize`] brings any smooth decomposable circuit into
//! this form without changing its distribution.

use crate::vtree::{Vtree, VtreeSpec};
use crate::{Error, Result, NORM_TOL};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Sum {
        children: Vec<NodeId>,
        weights: Vec<f64>,
    },
    Prod {
        children: Vec<NodeId>,
    },
    Leaf {
        var: usize,
        probs: Vec<f64>,
    },
}

impl Node {
    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Sum { children, .. } | Node::Prod { children } => children,
            Node::Leaf { .. } => &[],
        }
    }

    pub fn kind_str(&self) -> &'static str {
        match self {
            Node::Sum { .. } => "sum",
            Node::Prod { .. } => "prod",
            Node::Leaf { .. } => "leaf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Circuit {
    pub num_vars: usize,
    /// Domain size per variable; variables without a leaf default to 2.
    pub domains: Vec<usize>,
    /// Node arena, indexed by id.
    pub nodes: Vec<Node>,
    pub root: NodeId,
    /// Sum weights may total less than one (grammar-compiled circuits).
    pub subnormalized: bool,
}

/// Structural property flags computed by [`validate`].
#[derive(Debug, Clone)]
pub struct PropertyReport {
    pub smooth: bool,
    pub decomposable: bool,
    pub structured: bool,
    pub vtree: Option<Vtree>,
    /// `None` means the check was inconclusive ("unchecked").
    pub deterministic: Option<bool>,
    pub alternating: bool,
    pub binary_products: bool,
    pub contiguous: bool,
    /// First offending node for the smooth/decomposable flags, if any.
    pub offending: Option<(NodeId, &'static str)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stats {
    /// Number of edges.
    pub size: usize,
    /// Longest root-to-leaf path counted in nodes.
    pub depth: usize,
    pub num_sum: usize,
    pub num_prod: usize,
    pub num_leaf: usize,
}

// ---------------------------------------------------------------------------
// file format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CircuitFile {
    format_version: u32,
    num_vars: usize,
    root: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights_mode: Option<String>,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    children: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
}

/// Parse the textual circuit format. With `renormalize` set, sum weights that
/// do not total one are rescaled instead of rejected.
pub fn parse_circuit_opts(text: &str, renormalize: bool) -> Result<Circuit> {
    let file: CircuitFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("circuit json: {e}")))?;
    if file.format_version != 1 {
        return Err(Error::Parse(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let subnormalized = match file.weights_mode.as_deref() {
        None | Some("normalized") => false,
        Some("subnormalized") => true,
        Some(other) => return Err(Error::Parse(format!("unknown weights_mode {other:?}"))),
    };
    let n = file.nodes.len();
    let mut nodes: Vec<Option<Node>> = vec![None; n];
    for rec in file.nodes {
        if rec.id >= n {
            return Err(Error::Parse(format!(
                "node ids must be dense 0..{}, got {}",
                n, rec.id
            )));
        }
        if nodes[rec.id].is_some() {
            return Err(Error::Parse(format!("duplicate node id {}", rec.id)));
        }
        let node = match rec.kind.as_str() {
            "sum" => {
                let children = rec
                    .children
                    .ok_or_else(|| Error::Parse(format!("sum {} needs children", rec.id)))?;
                let mut weights = rec
                    .weights
                    .ok_or_else(|| Error::Parse(format!("sum {} needs weights", rec.id)))?;
                if children.len() != weights.len() {
                    return Err(Error::Parse(format!(
                        "sum {}: {} children but {} weights",
                        rec.id,
                        children.len(),
                        weights.len()
                    )));
                }
                if children.is_empty() {
                    return Err(Error::Parse(format!("sum {} has no children", rec.id)));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::Parse(format!("sum {}: negative weight", rec.id)));
                }
                let total: f64 = weights.iter().sum();
                // subnormalized circuits (grammar compilations) carry raw rule
                // probabilities; only non-negativity applies there
                if !subnormalized && (total - 1.0).abs() > NORM_TOL {
                    if renormalize && total > 0.0 {
                        for w in weights.iter_mut() {
                            *w /= total;
                        }
                    } else {
                        return Err(Error::WeightsNotNormalized {
                            node: rec.id,
                            total,
                        });
                    }
                }
                Node::Sum { children, weights }
            }
            "prod" => {
                let children = rec
                    .children
                    .ok_or_else(|| Error::Parse(format!("prod {} needs children", rec.id)))?;
                if children.is_empty() {
                    return Err(Error::Parse(format!("prod {} has no children", rec.id)));
                }
                Node::Prod { children }
            }
            "leaf" => {
                let var = rec
                    .var
                    .ok_or_else(|| Error::Parse(format!("leaf {} needs var", rec.id)))?;
                let probs = rec
                    .probs
                    .ok_or_else(|| Error::Parse(format!("leaf {} needs probs", rec.id)))?;
                if probs.len() < 2 {
                    return Err(Error::Parse(format!(
                        "leaf {}: domain must have at least 2 values",
                        rec.id
                    )));
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::Parse(format!(
                        "leaf {}: probabilities must lie in [0,1]",
                        rec.id
                    )));
                }
                if var >= file.num_vars {
                    return Err(Error::Parse(format!(
                        "leaf {}: var {} out of range for num_vars {}",
                        rec.id, var, file.num_vars
                    )));
                }
                Node::Leaf { var, probs }
            }
            other => return Err(Error::Parse(format!("unknown node kind {other:?}"))),
        };
        nodes[rec.id] = Some(node);
    }
    let nodes: Vec<Node> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| Error::Parse(format!("missing node id {i}"))))
        .collect::<Result<_>>()?;
    if file.root >= nodes.len() {
        return Err(Error::Parse(format!("root {} out of range", file.root)));
    }
    let mut c = Circuit {
        num_vars: file.num_vars,
        domains: vec![2; file.num_vars],
        nodes,
        root: file.root,
        subnormalized,
    };
    c.infer_domains()?;
    c.check_dag_and_reachability()?;
    for (id, node) in c.nodes.iter().enumerate() {
        if node.children().iter().any(|&ch| ch >= c.nodes.len()) {
            return Err(Error::Parse(format!("node {id}: child out of range")));
        }
    }
    Ok(c)
}

pub fn parse_circuit(text: &str) -> Result<Circuit> {
    parse_circuit_opts(text, false)
}

/// Deterministic serialization: nodes in ascending id, children in stored
/// order. Two calls on the same circuit are byte-identical.
pub fn serialize_circuit(c: &Circuit) -> String {
    let nodes = c
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| match node {
            Node::Sum { children, weights } => NodeRecord {
                id,
                kind: "sum".into(),
                children: Some(children.clone()),
                weights: Some(weights.clone()),
                var: None,
                probs: None,
            },
            Node::Prod { children } => NodeRecord {
                id,
                kind: "prod".into(),
                children: Some(children.clone()),
                weights: None,
                var: None,
                probs: None,
            },
            Node::Leaf { var, probs } => NodeRecord {
                id,
                kind: "leaf".into(),
                children: None,
                weights: None,
                var: Some(*var),
                probs: Some(probs.clone()),
            },
        })
        .collect();
    let file = CircuitFile {
        format_version: 1,
        num_vars: c.num_vars,
        root: c.root,
        weights_mode: if c.subnormalized {
            Some("subnormalized".into())
        } else {
            None
        },
        nodes,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("circuit serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// core accessors
// ---------------------------------------------------------------------------

impl Circuit {
    fn infer_domains(&mut self) -> Result<()> {
        let mut domains = vec![0usize; self.num_vars];
        for (id, node) in self.nodes.iter().enumerate() {
            if let Node::Leaf { var, probs } = node {
                if domains[*var] == 0 {
                    domains[*var] = probs.len();
                } else if domains[*var] != probs.len() {
                    return Err(Error::Parse(format!(
                        "leaf {}: var {} has domain {} elsewhere but {} here",
                        id,
                        var,
                        domains[*var],
                        probs.len()
                    )));
                }
            }
        }
        for d in domains.iter_mut() {
            if *d == 0 {
                *d = 2;
            }
        }
        self.domains = domains;
        Ok(())
    }

    fn check_dag_and_reachability(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.nodes.len()];
        let mut stack = vec![(self.root, 0usize)];
        state[self.root] = 1;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            let children = self.nodes[id].children();
            if *next < children.len() {
                let ch = children[*next];
                *next += 1;
                match state[ch] {
                    0 => {
                        state[ch] = 1;
                        stack.push((ch, 0));
                    }
                    1 => return Err(Error::Parse(format!("cycle through node {ch}"))),
                    _ => {}
                }
            } else {
                state[id] = 2;
                stack.pop();
            }
        }
        if let Some(id) = state.iter().position(|&s| s == 0) {
            return Err(Error::Parse(format!(
                "node {id} is not reachable from the root"
            )));
        }
        Ok(())
    }

    /// Children-before-parents order.
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(self.root, 0usize)];
        seen[self.root] = true;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            let children = self.nodes[id].children();
            if *next < children.len() {
                let ch = children[*next];
                *next += 1;
                if !seen[ch] {
                    seen[ch] = true;
                    stack.push((ch, 0));
                }
            } else {
                order.push(id);
                stack.pop();
            }
        }
        order
    }

    /// Scope (set of variables) per node.
    pub fn scopes(&self) -> Vec<BTreeSet<usize>> {
        let mut scopes = vec![BTreeSet::new(); self.nodes.len()];
        for id in self.topo_order() {
            match &self.nodes[id] {
                Node::Leaf { var, .. } => {
                    scopes[id].insert(*var);
                }
                Node::Sum { children, .. } | Node::Prod { children } => {
                    let mut s = BTreeSet::new();
                    for &ch in children {
                        s.extend(scopes[ch].iter().cloned());
                    }
                    scopes[id] = s;
                }
            }
        }
        scopes
    }

    /// Feed-forward values of every node under a full assignment.
    pub fn eval_all(&self, x: &[usize]) -> Result<Vec<f64>> {
        self.check_assignment(x)?;
        let mut vals = vec![0.0; self.nodes.len()];
        for id in self.topo_order() {
            vals[id] = match &self.nodes[id] {
                Node::Leaf { var, probs } => probs[x[*var]],
                Node::Prod { children } => children.iter().map(|&c| vals[c]).product(),
                Node::Sum { children, weights } => children
                    .iter()
                    .zip(weights)
                    .map(|(&c, &w)| w * vals[c])
                    .sum(),
            };
        }
        Ok(vals)
    }

    fn check_assignment(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.num_vars {
            return Err(Error::InvalidAssignment(format!(
                "expected {} values, got {}",
                self.num_vars,
                x.len()
            )));
        }
        for (v, &val) in x.iter().enumerate() {
            if val >= self.domains[v] {
                return Err(Error::InvalidAssignment(format!(
                    "variable {} takes value {} but has domain {}",
                    v, val, self.domains[v]
                )));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> Stats {
        let mut size = 0;
        let (mut num_sum, mut num_prod, mut num_leaf) = (0, 0, 0);
        for node in &self.nodes {
            size += node.children().len();
            match node {
                Node::Sum { .. } => num_sum += 1,
                Node::Prod { .. } => num_prod += 1,
                Node::Leaf { .. } => num_leaf += 1,
            }
        }
        let mut depth = vec![0usize; self.nodes.len()];
        for id in self.topo_order() {
            let children = self.nodes[id].children();
            depth[id] = 1 + children.iter().map(|&c| depth[c]).max().unwrap_or(0);
        }
        Stats {
            size,
            depth: depth[self.root],
            num_sum,
            num_prod,
            num_leaf,
        }
    }

    /// Total number of joint assignments, or an error above the budget.
    pub fn state_space(&self, budget: u64) -> Result<u64> {
        let mut total: u64 = 1;
        for &d in &self.domains {
            total = total.saturating_mul(d as u64);
            if total > budget {
                return Err(Error::DomainTooLarge(total));
            }
        }
        Ok(total)
    }
}

/// Single feed-forward evaluation of the circuit distribution.
pub fn evaluate(c: &Circuit, x: &[usize]) -> Result<f64> {
    Ok(c.eval_all(x)?[c.root])
}

/// Cheap smoothness/decomposability gate for operations that require both;
/// the full [`validate`] also runs the (potentially exhaustive) determinism
/// check, which marginal queries must not pay for.
pub fn check_smooth_decomposable(c: &Circuit) -> Result<()> {
    let scopes = c.scopes();
    for (id, node) in c.nodes.iter().enumerate() {
        match node {
            Node::Sum { children, .. } => {
                if children
                    .iter()
                    .any(|&ch| scopes[ch] != scopes[children[0]])
                {
                    return Err(Error::NotSmooth { node: id });
                }
            }
            Node::Prod { children } => {
                let total: usize = children.iter().map(|&ch| scopes[ch].len()).sum();
                if total != scopes[id].len() {
                    return Err(Error::NotDecomposable { node: id });
                }
            }
            Node::Leaf { .. } => {}
        }
    }
    Ok(())
}

/// Marginal probability of a partial assignment (`None` marginalizes the
/// variable out). Requires smoothness and decomposability; leaves of
/// marginalized variables contribute their table mass.
pub fn marginalize_evaluate(c: &Circuit, partial: &[Option<usize>]) -> Result<f64> {
    if partial.len() != c.num_vars {
        return Err(Error::InvalidAssignment(format!(
            "expected {} entries, got {}",
            c.num_vars,
            partial.len()
        )));
    }
    check_smooth_decomposable(c)?;
    for (v, val) in partial.iter().enumerate() {
        if let Some(val) = val {
            if *val >= c.domains[v] {
                return Err(Error::InvalidAssignment(format!(
                    "variable {} takes value {} but has domain {}",
                    v, val, c.domains[v]
                )));
            }
        }
    }
    let mut vals = vec![0.0; c.nodes.len()];
    for id in c.topo_order() {
        vals[id] = match &c.nodes[id] {
            Node::Leaf { var, probs } => match partial[*var] {
                Some(val) => probs[val],
                None => probs.iter().sum(),
            },
            Node::Prod { children } => children.iter().map(|&ch| vals[ch]).product(),
            Node::Sum { children, weights } => children
                .iter()
                .zip(weights)
                .map(|(&ch, &w)| w * vals[ch])
                .sum(),
        };
    }
    Ok(vals[c.root])
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

/// Compute the structural property report. Smoothness and decomposability
/// come from scope propagation; the structured flag holds iff a single vtree
/// is consistent with every product decomposition, in which case that vtree
/// is returned.
pub fn validate(c: &Circuit) -> PropertyReport {
    let scopes = c.scopes();
    let mut smooth = true;
    let mut decomposable = true;
    let mut alternating = true;
    let mut binary_products = true;
    let mut offending = None;
    for (id, node) in c.nodes.iter().enumerate() {
        match node {
            Node::Sum { children, .. } => {
                if children
                    .iter()
                    .any(|&ch| scopes[ch] != scopes[children[0]])
                {
                    smooth = false;
                    offending.get_or_insert((id, "smooth"));
                }
                if children
                    .iter()
                    .any(|&ch| !matches!(c.nodes[ch], Node::Prod { .. }))
                {
                    alternating = false;
                }
            }
            Node::Prod { children } => {
                let total: usize = children.iter().map(|&ch| scopes[ch].len()).sum();
                if total != scopes[id].len() {
                    decomposable = false;
                    offending.get_or_insert((id, "decomposable"));
                }
                if children.len() != 2 {
                    binary_products = false;
                }
                if children
                    .iter()
                    .any(|&ch| matches!(c.nodes[ch], Node::Prod { .. }))
                {
                    alternating = false;
                }
            }
            Node::Leaf { .. } => {}
        }
    }
    let contiguous = scopes.iter().all(|s| is_interval(s));
    let (structured, vtree) = if smooth && decomposable {
        infer_vtree(c, &scopes)
    } else {
        (false, None)
    };
    let deterministic = check_determinism(c, &scopes);
    PropertyReport {
        smooth,
        decomposable,
        structured,
        vtree,
        deterministic,
        alternating,
        binary_products,
        contiguous,
        offending,
    }
}

fn is_interval(s: &BTreeSet<usize>) -> bool {
    match (s.iter().next(), s.iter().next_back()) {
        (Some(&lo), Some(&hi)) => hi - lo + 1 == s.len(),
        _ => true,
    }
}

fn infer_vtree(c: &Circuit, scopes: &[BTreeSet<usize>]) -> (bool, Option<Vtree>) {
    // Collect the scope split used by each product; all products with equal
    // scope must agree for the circuit to be structured.
    let mut splits: BTreeMap<&BTreeSet<usize>, BTreeSet<usize>> = BTreeMap::new();
    for (id, node) in c.nodes.iter().enumerate() {
        if let Node::Prod { children } = node {
            if children.len() != 2 {
                return (false, None);
            }
            let left = &scopes[children[0]];
            let key = &scopes[id];
            // store the side containing the minimum variable of the scope
            let min_var = *key.iter().next().expect("nonempty product scope");
            let canon = if left.contains(&min_var) {
                left.clone()
            } else {
                scopes[children[1]].clone()
            };
            match splits.get(key) {
                Some(existing) if *existing != canon => return (false, None),
                Some(_) => {}
                None => {
                    splits.insert(key, canon);
                }
            }
        }
    }
    if scopes[c.root].len() != c.num_vars {
        // a vtree over all variables is not determined by this circuit
        return (false, None);
    }
    fn build(
        scope: &BTreeSet<usize>,
        splits: &BTreeMap<&BTreeSet<usize>, BTreeSet<usize>>,
    ) -> VtreeSpec {
        if scope.len() == 1 {
            return VtreeSpec::Var(*scope.iter().next().unwrap());
        }
        match splits.get(scope) {
            Some(part) => {
                let rest: BTreeSet<usize> = scope.difference(part).cloned().collect();
                VtreeSpec::pair(build(part, splits), build(&rest, splits))
            }
            None => {
                // scope never split by a product: fill right-linear
                let mut vars: Vec<usize> = scope.iter().cloned().collect();
                let first = vars.remove(0);
                let rest: BTreeSet<usize> = vars.into_iter().collect();
                VtreeSpec::pair(VtreeSpec::Var(first), build(&rest, splits))
            }
        }
    }
    let spec = build(&scopes[c.root], &splits);
    match Vtree::from_spec(&spec) {
        Ok(v) => (true, Some(v)),
        Err(_) => (false, None),
    }
}

/// Exhaustive determinism budget: product of domain sizes.
const DETERMINISM_BUDGET: u64 = 1 << 20;

fn check_determinism(c: &Circuit, scopes: &[BTreeSet<usize>]) -> Option<bool> {
    if c.state_space(DETERMINISM_BUDGET).is_ok() {
        return Some(semantic_deterministic(c));
    }
    // Syntactic sufficient check: some variable separates the supports of
    // every pair of children of every sum. Inconclusive when it fails.
    if syntactic_deterministic(c, scopes) {
        Some(true)
    } else {
        None
    }
}

/// Exhaustive semantic determinism check: on every full assignment at most
/// one child of each sum evaluates to a nonzero value.
pub fn semantic_deterministic(c: &Circuit) -> bool {
    for x in crate::assignments(&c.domains) {
        let vals = c.eval_all(&x).expect("valid assignment");
        for node in &c.nodes {
            if let Node::Sum { children, .. } = node {
                let nonzero = children.iter().filter(|&&ch| vals[ch] > 0.0).count();
                if nonzero > 1 {
                    return false;
                }
            }
        }
    }
    true
}

fn syntactic_deterministic(c: &Circuit, scopes: &[BTreeSet<usize>]) -> bool {
    if c.domains.iter().any(|&d| d > 64) {
        return false;
    }
    let supports = support_masks(c);
    for node in &c.nodes {
        if let Node::Sum { children, .. } = node {
            let mut ok = false;
            'vars: for (i, &v) in scopes[children[0]].iter().enumerate().map(|(i, v)| (i, v)) {
                let _ = i;
                for a in 0..children.len() {
                    for b in a + 1..children.len() {
                        let ma = supports[children[a]].get(&v).copied().unwrap_or(0);
                        let mb = supports[children[b]].get(&v).copied().unwrap_or(0);
                        if ma & mb != 0 {
                            continue 'vars;
                        }
                    }
                }
                ok = true;
                break;
            }
            if !ok && children.len() > 1 {
                return false;
            }
        }
    }
    true
}

/// Per-node, per-variable bitmask of values on which the node can be nonzero.
pub fn support_masks(c: &Circuit) -> Vec<BTreeMap<usize, u64>> {
    let mut masks: Vec<BTreeMap<usize, u64>> = vec![BTreeMap::new(); c.nodes.len()];
    for id in c.topo_order() {
        match &c.nodes[id] {
            Node::Leaf { var, probs } => {
                let mut m = 0u64;
                for (d, &p) in probs.iter().enumerate() {
                    if p > 0.0 {
                        m |= 1 << d;
                    }
                }
                masks[id].insert(*var, m);
            }
            Node::Prod { children } => {
                let mut m = BTreeMap::new();
                for &ch in children {
                    for (&v, &mask) in &masks[ch] {
                        *m.entry(v).or_insert(0) |= mask;
                    }
                }
                masks[id] = m;
            }
            Node::Sum { children, .. } => {
                let mut m: BTreeMap<usize, u64> = BTreeMap::new();
                for &ch in children {
                    for (&v, &mask) in &masks[ch] {
                        *m.entry(v).or_insert(0) |= mask;
                    }
                }
                masks[id] = m;
            }
        }
    }
    masks
}

// ---------------------------------------------------------------------------
// builder
// ---------------------------------------------------------------------------

/// Incremental circuit builder with structural hash-consing. Transforms
/// allocate fresh ids here and never mutate their inputs.
pub struct Builder {
    pub num_vars: usize,
    pub domains: Vec<usize>,
    nodes: Vec<Node>,
    dedup: HashMap<NodeKey, NodeId>,
}

#[derive(PartialEq, Eq, Hash)]
enum NodeKey {
    Sum(Vec<NodeId>, Vec<u64>),
    Prod(Vec<NodeId>),
    Leaf(usize, Vec<u64>),
}

impl Builder {
    pub fn new(num_vars: usize, domains: Vec<usize>) -> Builder {
        assert_eq!(domains.len(), num_vars);
        Builder {
            num_vars,
            domains,
            nodes: Vec::new(),
            dedup: HashMap::new(),
        }
    }

    fn intern(&mut self, key: NodeKey, node: Node) -> NodeId {
        if let Some(&id) = self.dedup.get(&key) {
            return id;
        }
        let id = self.nodes.len();
        self.nodes.push(node);
        self.dedup.insert(key, id);
        id
    }

    pub fn leaf(&mut self, var: usize, probs: Vec<f64>) -> NodeId {
        debug_assert_eq!(probs.len(), self.domains[var]);
        let key = NodeKey::Leaf(var, probs.iter().map(|p| p.to_bits()).collect());
        self.intern(key, Node::Leaf { var, probs })
    }

    pub fn prod(&mut self, children: Vec<NodeId>) -> NodeId {
        let key = NodeKey::Prod(children.clone());
        self.intern(key, Node::Prod { children })
    }

    pub fn sum(&mut self, children: Vec<NodeId>, weights: Vec<f64>) -> NodeId {
        debug_assert_eq!(children.len(), weights.len());
        let key = NodeKey::Sum(children.clone(), weights.iter().map(|w| w.to_bits()).collect());
        self.intern(key, Node::Sum { children, weights })
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    /// Finish with the given root; unreachable nodes are dropped and ids
    /// renumbered in topological order.
    pub fn finish(self, root: NodeId, subnormalized: bool) -> Circuit {
        let mut keep = Vec::new();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![(root, 0usize)];
        seen[root] = true;
        while let Some(&mut (id, ref mut next)) = stack.last_mut() {
            let children = self.nodes[id].children();
            if *next < children.len() {
                let ch = children[*next];
                *next += 1;
                if !seen[ch] {
                    seen[ch] = true;
                    stack.push((ch, 0));
                }
            } else {
                keep.push(id);
                stack.pop();
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (new_id, &old_id) in keep.iter().enumerate() {
            remap[old_id] = new_id;
        }
        let mut nodes = Vec::with_capacity(keep.len());
        for &old_id in &keep {
            let node = match &self.nodes[old_id] {
                Node::Leaf { var, probs } => Node::Leaf {
                    var: *var,
                    probs: probs.clone(),
                },
                Node::Prod { children } => Node::Prod {
                    children: children.iter().map(|&ch| remap[ch]).collect(),
                },
                Node::Sum { children, weights } => Node::Sum {
                    children: children.iter().map(|&ch| remap[ch]).collect(),
                    weights: weights.clone(),
                },
            };
            nodes.push(node);
        }
        Circuit {
            num_vars: self.num_vars,
            domains: self.domains,
            nodes,
            root: remap[root],
            subnormalized,
        }
    }
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Bring a smooth decomposable circuit into canonical form: alternating
/// sum/product layers, binary products (n-ary products left-folded in child
/// order), sum-of-sum chains collapsed with multiplied weights, and
/// single-variable mixtures merged into one leaf. The distribution is
/// unchanged.
pub fn normalize(c: &Circuit) -> Result<Circuit> {
    check_smooth_decomposable(c)?;
    let mut b = Builder::new(c.num_vars, c.domains.clone());
    let mut memo: HashMap<NodeId, NodeId> = HashMap::new();
    let root = normalize_rec(c, c.root, &mut b, &mut memo);
    // root of a multi-variable canonical circuit is a sum
    let root = match b.node(root) {
        Node::Prod { .. } => b.sum(vec![root], vec![1.0]),
        _ => root,
    };
    Ok(b.finish(root, c.subnormalized))
}

fn normalize_rec(
    c: &Circuit,
    id: NodeId,
    b: &mut Builder,
    memo: &mut HashMap<NodeId, NodeId>,
) -> NodeId {
    if let Some(&new) = memo.get(&id) {
        return new;
    }
    let new = match &c.nodes[id] {
        Node::Leaf { var, probs } => b.leaf(*var, probs.clone()),
        Node::Sum { .. } => {
            // collapse chains of sums, merging parallel edges
            let mut terms: BTreeMap<NodeId, f64> = BTreeMap::new();
            flatten_sum(c, id, 1.0, &mut terms);
            let mut children = Vec::new();
            let mut weights = Vec::new();
            let mut leaves: Vec<(f64, NodeId)> = Vec::new();
            for (&target, &w) in &terms {
                let new_target = normalize_rec(c, target, b, memo);
                match b.node(new_target) {
                    Node::Leaf { .. } => leaves.push((w, new_target)),
                    _ => {
                        children.push(new_target);
                        weights.push(w);
                    }
                }
            }
            if children.is_empty() {
                // single-variable mixture: one merged leaf
                let var = match b.node(leaves[0].1) {
                    Node::Leaf { var, .. } => *var,
                    _ => unreachable!(),
                };
                let mut table = vec![0.0; b.domains[var]];
                for &(w, lid) in &leaves {
                    if let Node::Leaf { probs, .. } = b.node(lid) {
                        let probs = probs.clone();
                        for (d, p) in probs.iter().enumerate() {
                            table[d] += w * p;
                        }
                    }
                }
                b.leaf(var, table)
            } else {
                // smoothness rules out mixing leaves with products here
                debug_assert!(leaves.is_empty());
                b.sum(children, weights)
            }
        }
        Node::Prod { .. } => {
            let mut factors = Vec::new();
            flatten_prod(c, id, &mut factors);
            let new_factors: Vec<NodeId> = factors
                .iter()
                .map(|&f| normalize_rec(c, f, b, memo))
                .collect();
            if new_factors.len() == 1 {
                new_factors[0]
            } else {
                // left-fold in child order; intermediates get unit sums to
                // keep alternation
                let mut acc = new_factors[0];
                for &next in &new_factors[1..] {
                    if matches!(b.node(acc), Node::Prod { .. }) {
                        acc = b.sum(vec![acc], vec![1.0]);
                    }
                    let next = if matches!(b.node(next), Node::Prod { .. }) {
                        b.sum(vec![next], vec![1.0])
                    } else {
                        next
                    };
                    acc = b.prod(vec![acc, next]);
                }
                acc
            }
        }
    };
    memo.insert(id, new);
    new
}

fn flatten_sum(c: &Circuit, id: NodeId, mult: f64, terms: &mut BTreeMap<NodeId, f64>) {
    if let Node::Sum { children, weights } = &c.nodes[id] {
        for (&ch, &w) in children.iter().zip(weights) {
            match &c.nodes[ch] {
                Node::Sum { .. } => flatten_sum(c, ch, mult * w, terms),
                _ => *terms.entry(ch).or_insert(0.0) += mult * w,
            }
        }
    }
}

fn flatten_prod(c: &Circuit, id: NodeId, factors: &mut Vec<NodeId>) {
    if let Node::Prod { children } = &c.nodes[id] {
        for &ch in children {
            match &c.nodes[ch] {
                Node::Prod { .. } => flatten_prod(c, ch, factors),
                _ => factors.push(ch),
            }
        }
    }
}

/// Rescale every node so the circuit computes its old distribution divided by
/// the root mass, returned alongside. Sum weights and leaf tables are scaled
/// locally, so the result is a proper PC when the mass is positive.
pub fn renormalize_mass(c: &Circuit) -> Result<(Circuit, f64)> {
    let mut mass = vec![0.0f64; c.nodes.len()];
    for id in c.topo_order() {
        mass[id] = match &c.nodes[id] {
            Node::Leaf { probs, .. } => probs.iter().sum(),
            Node::Prod { children } => children.iter().map(|&ch| mass[ch]).product(),
            Node::Sum { children, weights } => children
                .iter()
                .zip(weights)
                .map(|(&ch, &w)| w * mass[ch])
                .sum(),
        };
    }
    let total = mass[c.root];
    if total <= 0.0 {
        return Err(Error::Unsupported(
            "cannot renormalize a circuit with zero total mass".into(),
        ));
    }
    let mut b = Builder::new(c.num_vars, c.domains.clone());
    let mut map = vec![usize::MAX; c.nodes.len()];
    for id in c.topo_order() {
        map[id] = match &c.nodes[id] {
            Node::Leaf { var, probs } => {
                let m = mass[id];
                let table = if m > 0.0 {
                    probs.iter().map(|p| p / m).collect()
                } else {
                    probs.clone()
                };
                b.leaf(*var, table)
            }
            Node::Prod { children } => {
                let ch: Vec<NodeId> = children.iter().map(|&c2| map[c2]).collect();
                b.prod(ch)
            }
            Node::Sum { children, weights } => {
                let mut ch = Vec::new();
                let mut ws = Vec::new();
                for (&c2, &w) in children.iter().zip(weights) {
                    let contrib = w * mass[c2];
                    if contrib > 0.0 {
                        ch.push(map[c2]);
                        ws.push(contrib / mass[id]);
                    }
                }
                if ch.is_empty() {
                    // dead branch; keep a placeholder weight-1 edge
                    ch.push(map[children[0]]);
                    ws.push(1.0);
                }
                b.sum(ch, ws)
            }
        };
    }
    Ok((b.finish(map[c.root], false), total))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn leaf_circuit(probs: Vec<f64>) -> Circuit {
        Circuit {
            num_vars: 1,
            domains: vec![probs.len()],
            nodes: vec![Node::Leaf { var: 0, probs }],
            root: 0,
            subnormalized: false,
        }
    }

    #[test]
    fn parse_single_leaf() {
        let text = r#"{"format_version":1,"num_vars":1,"root":0,
            "nodes":[{"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]}]}"#;
        let c = parse_circuit(text).unwrap();
        assert_eq!(c.nodes.len(), 1);
        assert_eq!(evaluate(&c, &[1]).unwrap(), 0.7);
    }

    #[test]
    fn parse_rejects_unnormalized_weights() {
        let text = r#"{"format_version":1,"num_vars":1,"root":2,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":0,"probs":[1.0,0.0]},
            {"id":2,"kind":"sum","children":[0,1],"weights":[0.6,0.5]}]}"#;
        match parse_circuit(text) {
            Err(Error::WeightsNotNormalized { node: 2, .. }) => {}
            other => panic!("expected weight error, got {other:?}"),
        }
        // the renormalizing parser accepts it
        let c = parse_circuit_opts(text, true).unwrap();
        let w = match &c.nodes[2] {
            Node::Sum { weights, .. } => weights.clone(),
            _ => unreachable!(),
        };
        assert!((w[0] - 0.6 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn parse_rejects_cycle() {
        let text = r#"{"format_version":1,"num_vars":1,"root":0,"nodes":[
            {"id":0,"kind":"sum","children":[1],"weights":[1.0]},
            {"id":1,"kind":"sum","children":[0],"weights":[1.0]}]}"#;
        assert!(matches!(parse_circuit(text), Err(Error::Parse(_))));
    }

    #[test]
    fn serialization_is_deterministic_and_roundtrips() {
        let text = r#"{"format_version":1,"num_vars":2,"root":3,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"prod","children":[0,1]},
            {"id":3,"kind":"sum","children":[2],"weights":[1.0]}]}"#;
        let c = parse_circuit(text).unwrap();
        let s1 = serialize_circuit(&c);
        let s2 = serialize_circuit(&c);
        assert_eq!(s1, s2);
        let c2 = parse_circuit(&s1).unwrap();
        assert_eq!(serialize_circuit(&c2), s1);
    }

    #[test]
    fn evaluate_product_of_leaves() {
        let text = r#"{"format_version":1,"num_vars":2,"root":2,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.3,0.7]},
            {"id":2,"kind":"prod","children":[0,1]}]}"#;
        let c = parse_circuit(text).unwrap();
        assert!((evaluate(&c, &[1, 1]).unwrap() - 0.49).abs() < 1e-15);
        let st = c.stats();
        assert_eq!(st.size, 2);
        assert_eq!(st.depth, 2);
    }

    #[test]
    fn stats_single_leaf() {
        let c = leaf_circuit(vec![0.3, 0.7]);
        let st = c.stats();
        assert_eq!(st.size, 0);
        assert_eq!(st.depth, 1);
        assert_eq!(st.num_leaf, 1);
    }

    #[test]
    fn marginalize_full_and_empty() {
        let text = r#"{"format_version":1,"num_vars":2,"root":2,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"prod","children":[0,1]}]}"#;
        let c = parse_circuit(text).unwrap();
        let full = marginalize_evaluate(&c, &[Some(1), Some(0)]).unwrap();
        assert!((full - evaluate(&c, &[1, 0]).unwrap()).abs() < 1e-15);
        let none = marginalize_evaluate(&c, &[None, None]).unwrap();
        assert!((none - 1.0).abs() < 1e-9);
        let half = marginalize_evaluate(&c, &[Some(0), None]).unwrap();
        assert!((half - 0.3).abs() < 1e-12);
    }

    #[test]
    fn validate_smoothness_violation() {
        // sum mixing scopes {X0} and {X0, X1}
        let text = r#"{"format_version":1,"num_vars":2,"root":4,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"prod","children":[0,1]},
            {"id":3,"kind":"leaf","var":0,"probs":[0.5,0.5]},
            {"id":4,"kind":"sum","children":[2,3],"weights":[0.5,0.5]}]}"#;
        let c = parse_circuit(text).unwrap();
        let rep = validate(&c);
        assert!(!rep.smooth);
        assert_eq!(rep.offending, Some((4, "smooth")));
    }

    #[test]
    fn validate_contiguous_but_not_structured() {
        // 0.5 (p(X0) p(X1,X2)) + 0.5 (p(X0,X1) p(X2)) with HMM-style factors
        let text = r#"{"format_version":1,"num_vars":3,"root":10,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.4,0.6]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.5,0.5]},
            {"id":2,"kind":"leaf","var":2,"probs":[0.3,0.7]},
            {"id":3,"kind":"leaf","var":1,"probs":[0.9,0.1]},
            {"id":4,"kind":"leaf","var":2,"probs":[0.2,0.8]},
            {"id":5,"kind":"prod","children":[1,2]},
            {"id":6,"kind":"sum","children":[5],"weights":[1.0]},
            {"id":7,"kind":"prod","children":[0,6]},
            {"id":8,"kind":"prod","children":[0,3]},
            {"id":9,"kind":"prod","children":[8,4]},
            {"id":10,"kind":"sum","children":[7,9],"weights":[0.5,0.5]}]}"#;
        let c = parse_circuit(text).unwrap();
        let rep = validate(&c);
        assert!(rep.smooth);
        assert!(rep.decomposable);
        assert!(rep.contiguous);
        assert!(!rep.structured, "conflicting splits of {{0,1,2}}");
    }

    #[test]
    fn normalize_is_fixpoint_on_canonical() {
        let text = r#"{"format_version":1,"num_vars":2,"root":3,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"prod","children":[0,1]},
            {"id":3,"kind":"sum","children":[2],"weights":[1.0]}]}"#;
        let c = parse_circuit(text).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.nodes.len(), c.nodes.len());
        assert_eq!(n.stats(), c.stats());
    }

    #[test]
    fn normalize_binarizes_ternary_product() {
        let text = r#"{"format_version":1,"num_vars":3,"root":3,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[0.3,0.7]},
            {"id":1,"kind":"leaf","var":1,"probs":[0.2,0.8]},
            {"id":2,"kind":"leaf","var":2,"probs":[0.5,0.5]},
            {"id":3,"kind":"prod","children":[0,1,2]}]}"#;
        let c = parse_circuit(text).unwrap();
        let n = normalize(&c).unwrap();
        let rep = validate(&n);
        assert!(rep.binary_products);
        assert!(rep.alternating);
        for x in crate::assignments(&c.domains) {
            let a = evaluate(&c, &x).unwrap();
            let b = evaluate(&n, &x).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_collapses_sum_chains() {
        let text = r#"{"format_version":1,"num_vars":1,"root":4,"nodes":[
            {"id":0,"kind":"leaf","var":0,"probs":[1.0,0.0]},
            {"id":1,"kind":"leaf","var":0,"probs":[0.0,1.0]},
            {"id":2,"kind":"sum","children":[0,1],"weights":[0.5,0.5]},
            {"id":3,"kind":"sum","children":[2,1],"weights":[0.4,0.6]},
            {"id":4,"kind":"sum","children":[3],"weights":[1.0]}]}"#;
        let c = parse_circuit(text).unwrap();
        let n = normalize(&c).unwrap();
        // the whole chain is a single-variable mixture: one leaf remains
        assert_eq!(n.nodes.len(), 1);
        for x in crate::assignments(&c.domains) {
            let a = evaluate(&c, &x).unwrap();
            let b = evaluate(&n, &x).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn support_masks_and_syntactic_determinism() {
        let c = leaf_circuit(vec![0.0, 1.0]);
        let masks = support_masks(&c);
        assert_eq!(masks[0].get(&0), Some(&0b10));
        let rep = validate(&c);
        assert_eq!(rep.deterministic, Some(true));
    }
}
