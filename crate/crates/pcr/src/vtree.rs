//! Vtrees: rooted full binary trees whose leaves biject with variables.
//!
//! Inner nodes define how a structured circuit splits its scope. Node ids are
//! assigned in preorder (root is 0), which fixes a stable numbering for the
//! latent variables introduced by the Bayesian-network bridge: latent `Z_v`
//! is the inner vtree node with id `v`.

use crate::{Error, Result};
use serde_json::{json, Value};
use std::collections::BTreeSet;

pub type VtreeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VtreeNode {
    Leaf { var: usize },
    Inner { left: VtreeId, right: VtreeId },
}

#[derive(Debug, Clone)]
pub struct Vtree {
    nodes: Vec<VtreeNode>,
    scopes: Vec<BTreeSet<usize>>,
    parent: Vec<Option<VtreeId>>,
    num_vars: usize,
}

/// Recursive builder used by the constructors before preorder numbering.
#[derive(Debug, Clone)]
pub enum VtreeSpec {
    Var(usize),
    Pair(Box<VtreeSpec>, Box<VtreeSpec>),
}

impl VtreeSpec {
    pub fn pair(l: VtreeSpec, r: VtreeSpec) -> VtreeSpec {
        VtreeSpec::Pair(Box::new(l), Box::new(r))
    }
}

impl Vtree {
    pub fn from_spec(spec: &VtreeSpec) -> Result<Vtree> {
        let mut nodes = Vec::new();
        build_preorder(spec, &mut nodes);
        Vtree::from_nodes(nodes)
    }

    /// Build from a preorder node list. The root must be node 0 and every
    /// variable must appear in exactly one leaf.
    pub fn from_nodes(nodes: Vec<VtreeNode>) -> Result<Vtree> {
        if nodes.is_empty() {
            return Err(Error::Parse("empty vtree".into()));
        }
        let n = nodes.len();
        let mut parent = vec![None; n];
        for (id, node) in nodes.iter().enumerate() {
            if let VtreeNode::Inner { left, right } = node {
                for &c in [left, right].iter() {
                    if *c >= n {
                        return Err(Error::Parse(format!("vtree child {} out of range", c)));
                    }
                    if parent[*c].is_some() {
                        return Err(Error::Parse(format!("vtree node {} has two parents", c)));
                    }
                    parent[*c] = Some(id);
                }
            }
        }
        if parent[0].is_some() {
            return Err(Error::Parse("vtree root must be node 0".into()));
        }
        if parent.iter().skip(1).any(|p| p.is_none()) {
            return Err(Error::Parse("vtree has disconnected nodes".into()));
        }
        let mut scopes = vec![BTreeSet::new(); n];
        // ids are preorder, so children always have larger ids
        let mut seen = BTreeSet::new();
        for id in (0..n).rev() {
            match &nodes[id] {
                VtreeNode::Leaf { var } => {
                    if !seen.insert(*var) {
                        return Err(Error::Parse(format!("variable {} appears twice", var)));
                    }
                    scopes[id].insert(*var);
                }
                VtreeNode::Inner { left, right } => {
                    if *left <= id || *right <= id {
                        return Err(Error::Parse("vtree node ids are not preorder".into()));
                    }
                    let union: BTreeSet<usize> =
                        scopes[*left].union(&scopes[*right]).cloned().collect();
                    scopes[id] = union;
                }
            }
        }
        let num_vars = seen.len();
        if seen.iter().next_back() != Some(&(num_vars - 1)) || !seen.contains(&0) {
            return Err(Error::Parse(
                "vtree variables must be dense 0..n-1".into(),
            ));
        }
        Ok(Vtree {
            nodes,
            scopes,
            parent,
            num_vars,
        })
    }

    /// Right-linear vtree: ((X0, (X1, (X2, ...)))). The standard HMM shape.
    pub fn right_linear(n: usize) -> Vtree {
        fn spec(lo: usize, n: usize) -> VtreeSpec {
            if lo == n - 1 {
                VtreeSpec::Var(lo)
            } else {
                VtreeSpec::pair(VtreeSpec::Var(lo), spec(lo + 1, n))
            }
        }
        Vtree::from_spec(&spec(0, n)).expect("right-linear vtree is well formed")
    }

    /// Balanced vtree over variables in canonical order.
    pub fn balanced(n: usize) -> Vtree {
        fn spec(lo: usize, hi: usize) -> VtreeSpec {
            if lo == hi {
                VtreeSpec::Var(lo)
            } else {
                let mid = (lo + hi) / 2;
                VtreeSpec::pair(spec(lo, mid), spec(mid + 1, hi))
            }
        }
        Vtree::from_spec(&spec(0, n - 1)).expect("balanced vtree is well formed")
    }

    pub fn root(&self) -> VtreeId {
        0
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: VtreeId) -> &VtreeNode {
        &self.nodes[id]
    }

    pub fn parent(&self, id: VtreeId) -> Option<VtreeId> {
        self.parent[id]
    }

    pub fn scope(&self, id: VtreeId) -> &BTreeSet<usize> {
        &self.scopes[id]
    }

    pub fn is_leaf(&self, id: VtreeId) -> bool {
        matches!(self.nodes[id], VtreeNode::Leaf { .. })
    }

    pub fn leaf_var(&self, id: VtreeId) -> Option<usize> {
        match self.nodes[id] {
            VtreeNode::Leaf { var } => Some(var),
            _ => None,
        }
    }

    pub fn children(&self, id: VtreeId) -> Option<(VtreeId, VtreeId)> {
        match self.nodes[id] {
            VtreeNode::Inner { left, right } => Some((left, right)),
            _ => None,
        }
    }

    pub fn inner_ids(&self) -> Vec<VtreeId> {
        (0..self.nodes.len())
            .filter(|&id| !self.is_leaf(id))
            .collect()
    }

    /// Vtree leaf carrying the given variable.
    pub fn leaf_of_var(&self, var: usize) -> VtreeId {
        (0..self.nodes.len())
            .find(|&id| self.leaf_var(id) == Some(var))
            .expect("variable present in vtree")
    }

    /// Longest root-to-leaf path counted in nodes.
    pub fn depth(&self) -> usize {
        fn rec(v: &Vtree, id: VtreeId) -> usize {
            match v.children(id) {
                None => 1,
                Some((l, r)) => 1 + rec(v, l).max(rec(v, r)),
            }
        }
        rec(self, self.root())
    }

    /// Scope as an interval `[lo, hi]` of the canonical order, if it is one.
    pub fn interval(&self, id: VtreeId) -> Option<(usize, usize)> {
        let s = &self.scopes[id];
        let lo = *s.iter().next()?;
        let hi = *s.iter().next_back()?;
        if hi - lo + 1 == s.len() {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Every node's scope is an interval of the canonical variable order.
    pub fn is_contiguous(&self) -> bool {
        (0..self.nodes.len()).all(|id| self.interval(id).is_some())
    }

    /// Right-linear over the canonical order: node for suffix `[k, n-1]`
    /// splits off `X_k` on the left.
    pub fn is_right_linear(&self) -> bool {
        let n = self.num_vars;
        let mut id = self.root();
        for k in 0..n - 1 {
            match self.children(id) {
                Some((l, r)) if self.leaf_var(l) == Some(k) => id = r,
                _ => return false,
            }
        }
        self.leaf_var(id) == Some(n - 1)
    }

    /// Inner node whose scope is exactly the given interval.
    pub fn node_by_interval(&self, lo: usize, hi: usize) -> Option<VtreeId> {
        (0..self.nodes.len()).find(|&id| self.interval(id) == Some((lo, hi)))
    }

    /// True when `anc` lies on the path from the root to `id` (inclusive).
    pub fn is_ancestor(&self, anc: VtreeId, id: VtreeId) -> bool {
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == anc {
                return true;
            }
            cur = self.parent[c];
        }
        false
    }

    pub fn parse(text: &str) -> Result<Vtree> {
        let v: Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("vtree json: {e}")))?;
        let mut nodes = Vec::new();
        parse_rec(&v, &mut nodes)?;
        Vtree::from_nodes(nodes)
    }

    pub fn serialize(&self) -> String {
        let mut out = self.to_json(self.root());
        if let Value::Object(_) = out {
        } else {
            out = json!({});
        }
        let mut s = serde_json::to_string_pretty(&out).expect("vtree serializes");
        s.push('\n');
        s
    }

    pub(crate) fn to_json(&self, id: VtreeId) -> Value {
        match &self.nodes[id] {
            VtreeNode::Leaf { var } => json!({ "var": var }),
            VtreeNode::Inner { left, right } => json!({
                "left": self.to_json(*left),
                "right": self.to_json(*right),
            }),
        }
    }
}

fn build_preorder(spec: &VtreeSpec, nodes: &mut Vec<VtreeNode>) -> VtreeId {
    let id = nodes.len();
    match spec {
        VtreeSpec::Var(v) => {
            nodes.push(VtreeNode::Leaf { var: *v });
        }
        VtreeSpec::Pair(l, r) => {
            nodes.push(VtreeNode::Inner { left: 0, right: 0 });
            let lid = build_preorder(l, nodes);
            let rid = build_preorder(r, nodes);
            nodes[id] = VtreeNode::Inner {
                left: lid,
                right: rid,
            };
        }
    }
    id
}

fn parse_rec(v: &Value, nodes: &mut Vec<VtreeNode>) -> Result<VtreeId> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("vtree node must be an object".into()))?;
    let id = nodes.len();
    if let Some(var) = obj.get("var") {
        let var = var
            .as_u64()
            .ok_or_else(|| Error::Parse("vtree var must be an integer".into()))?;
        nodes.push(VtreeNode::Leaf { var: var as usize });
        Ok(id)
    } else {
        let left = obj
            .get("left")
            .ok_or_else(|| Error::Parse("inner vtree node needs left".into()))?;
        let right = obj
            .get("right")
            .ok_or_else(|| Error::Parse("inner vtree node needs right".into()))?;
        nodes.push(VtreeNode::Inner { left: 0, right: 0 });
        let lid = parse_rec(left, nodes)?;
        let rid = parse_rec(right, nodes)?;
        nodes[id] = VtreeNode::Inner {
            left: lid,
            right: rid,
        };
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn right_linear_shape() {
        let v = Vtree::right_linear(4);
        assert_eq!(v.num_nodes(), 7);
        assert!(v.is_right_linear());
        assert!(v.is_contiguous());
        assert_eq!(v.depth(), 4);
        assert_eq!(v.interval(v.root()), Some((0, 3)));
        // preorder: suffix node for [k, n-1] is id 2k
        assert_eq!(v.node_by_interval(1, 3), Some(2));
        assert_eq!(v.node_by_interval(2, 3), Some(4));
    }

    #[test]
    fn balanced_shape() {
        let v = Vtree::balanced(4);
        assert_eq!(v.depth(), 3);
        assert!(v.is_contiguous());
        assert!(!v.is_right_linear());
    }

    #[test]
    fn parse_roundtrip() {
        let v = Vtree::balanced(5);
        let s = v.serialize();
        let v2 = Vtree::parse(&s).unwrap();
        assert_eq!(v2.serialize(), s);
        assert_eq!(v2.num_vars(), 5);
    }

    #[test]
    fn rejects_duplicate_variable() {
        let spec = VtreeSpec::pair(VtreeSpec::Var(0), VtreeSpec::Var(0));
        assert!(Vtree::from_spec(&spec).is_err());
    }

    #[test]
    fn non_contiguous_detected() {
        let spec = VtreeSpec::pair(
            VtreeSpec::pair(VtreeSpec::Var(0), VtreeSpec::Var(2)),
            VtreeSpec::Var(1),
        );
        let v = Vtree::from_spec(&spec).unwrap();
        assert!(!v.is_contiguous());
    }
}
