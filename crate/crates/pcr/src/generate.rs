//! Seeded random fixtures: vtrees, structured circuits (optionally
//! deterministic), and CNF grammars. Used by the `gen` subcommand and by the
//! acceptance suite; everything is reproducible from the seed.

use crate::circuit::{Builder, Circuit, NodeId};
use crate::grammar::Pcfg;
use crate::vtree::{Vtree, VtreeId, VtreeSpec};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct GenOptions {
    /// Upper bound on the number of product nodes per scope.
    pub hidden: usize,
    pub seed: u64,
    /// Domain size for every variable.
    pub domain: usize,
    /// Probability of keeping each optional sum edge (one is always kept).
    pub keep_edge: f64,
    /// Build a deterministic circuit (forces `domain = max(2, hidden)`).
    pub deterministic: bool,
}

impl GenOptions {
    pub fn new(hidden: usize, seed: u64) -> GenOptions {
        GenOptions {
            hidden,
            seed,
            domain: 2,
            keep_edge: 0.85,
            deterministic: false,
        }
    }

    pub fn domain(mut self, d: usize) -> GenOptions {
        self.domain = d;
        self
    }

    pub fn deterministic(mut self) -> GenOptions {
        self.deterministic = true;
        self
    }
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VtreeShape {
    Random,
    RandomContiguous,
    RightLinear,
    Balanced,
}

pub fn random_vtree(n: usize, shape: VtreeShape, rng: &mut ChaCha8Rng) -> Vtree {
    match shape {
        VtreeShape::RightLinear => Vtree::right_linear(n),
        VtreeShape::Balanced => Vtree::balanced(n),
        VtreeShape::RandomContiguous => {
            let vars: Vec<usize> = (0..n).collect();
            Vtree::from_spec(&random_spec(&vars, rng)).expect("random vtree is well formed")
        }
        VtreeShape::Random => {
            let mut vars: Vec<usize> = (0..n).collect();
            vars.shuffle(rng);
            Vtree::from_spec(&random_spec(&vars, rng)).expect("random vtree is well formed")
        }
    }
}

fn random_spec(vars: &[usize], rng: &mut ChaCha8Rng) -> VtreeSpec {
    if vars.len() == 1 {
        VtreeSpec::Var(vars[0])
    } else {
        let cut = rng.random_range(1..vars.len());
        VtreeSpec::pair(random_spec(&vars[..cut], rng), random_spec(&vars[cut..], rng))
    }
}

fn random_weights(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Random smooth structured circuit respecting the vtree, in canonical form.
/// Hidden state size is at most `opts.hidden`; with `deterministic` set every
/// sum node has children of disjoint support.
pub fn random_structured_pc(v: &Vtree, opts: &GenOptions) -> Circuit {
    let mut rng = rng_for(opts.seed);
    let n = v.num_vars();
    let h = opts.hidden.max(1);
    let domain = if opts.deterministic {
        opts.domain.max(h).max(2)
    } else {
        opts.domain.max(2)
    };
    let mut b = Builder::new(n, vec![domain; n]);

    // anchor side: the child containing the minimum variable of the scope;
    // deterministic circuits pin that variable's value per state
    let mut products: Vec<Vec<NodeId>> = vec![Vec::new(); v.num_nodes()];
    let mut leaf_pool: Vec<Vec<NodeId>> = vec![Vec::new(); v.num_nodes()];
    let ids_bottom_up: Vec<VtreeId> = {
        let mut ids: Vec<VtreeId> = (0..v.num_nodes()).collect();
        ids.reverse(); // preorder reversed puts children first
        ids
    };
    for id in ids_bottom_up {
        match v.leaf_var(id) {
            Some(x) => {
                for state in 0..h {
                    let table = if opts.deterministic {
                        let mut t = vec![0.0; domain];
                        t[state] = 1.0;
                        t
                    } else {
                        random_weights(domain, &mut rng)
                    };
                    leaf_pool[id].push(b.leaf(x, table));
                }
            }
            None => {
                let (l, r) = v.children(id).expect("inner node");
                let min_var = *v.scope(id).iter().next().unwrap();
                let anchor = if v.scope(l).contains(&min_var) { l } else { r };
                for state in 0..h {
                    let side = |cv: VtreeId, b: &mut Builder, rng: &mut ChaCha8Rng| {
                        let pinned = opts.deterministic && cv == anchor;
                        match v.leaf_var(cv) {
                            Some(_) => {
                                let pool = &leaf_pool[cv];
                                if pinned {
                                    pool[state]
                                } else {
                                    pool[rng.random_range(0..pool.len())]
                                }
                            }
                            None => {
                                if pinned {
                                    b.sum(vec![products[cv][state]], vec![1.0])
                                } else {
                                    let opts_cv = &products[cv];
                                    let mut chosen: Vec<NodeId> = opts_cv
                                        .iter()
                                        .copied()
                                        .filter(|_| rng.random::<f64>() < opts.keep_edge)
                                        .collect();
                                    if chosen.is_empty() {
                                        chosen.push(opts_cv[rng.random_range(0..opts_cv.len())]);
                                    }
                                    let w = random_weights(chosen.len(), rng);
                                    b.sum(chosen, w)
                                }
                            }
                        }
                    };
                    let left_child = side(l, &mut b, &mut rng);
                    let right_child = side(r, &mut b, &mut rng);
                    let _ = state;
                    let pid = b.prod(vec![left_child, right_child]);
                    // hash-consing can merge states with identical children;
                    // a duplicate entry would create parallel sum edges
                    if opts.deterministic || !products[id].contains(&pid) {
                        products[id].push(pid);
                    }
                }
            }
        }
    }
    let root = if v.num_vars() == 1 {
        leaf_pool[v.root()][0]
    } else {
        let top = products[v.root()].clone();
        let w = random_weights(top.len(), &mut rng);
        b.sum(top, w)
    };
    b.finish(root, false)
}

/// Random CNF grammar: every nonterminal gets lexical rules and most get
/// binary rules; probabilities normalize per nonterminal.
pub fn random_pcfg(
    num_nonterminals: usize,
    num_binary: usize,
    num_terminals: usize,
    rng: &mut ChaCha8Rng,
) -> Pcfg {
    let nts: Vec<String> = (0..num_nonterminals).map(|i| format!("N{i}")).collect();
    let ts: Vec<String> = (0..num_terminals)
        .map(|i| {
            char::from_digit(i as u32 + 10, 36)
                .map(|c| c.to_string())
                .unwrap_or_else(|| format!("t{i}"))
        })
        .collect();
    let mut binary = Vec::new();
    for _ in 0..num_binary {
        let a = rng.random_range(0..num_nonterminals);
        let b = rng.random_range(0..num_nonterminals);
        let c = rng.random_range(0..num_nonterminals);
        binary.push((nts[a].clone(), nts[b].clone(), nts[c].clone(), 0.0));
    }
    let mut lexical = Vec::new();
    for (i, nt) in nts.iter().enumerate() {
        let k = 1 + rng.random_range(0..num_terminals);
        let mut terms: Vec<usize> = (0..num_terminals).collect();
        terms.shuffle(rng);
        for &t in terms.iter().take(k) {
            lexical.push((nt.clone(), ts[t].clone(), 0.0));
        }
        let _ = i;
    }
    // assign probabilities normalizing per head nonterminal
    for nt in &nts {
        let bidx: Vec<usize> = binary
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.0 == nt)
            .map(|(i, _)| i)
            .collect();
        let lidx: Vec<usize> = lexical
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.0 == nt)
            .map(|(i, _)| i)
            .collect();
        let w = random_weights(bidx.len() + lidx.len(), rng);
        for (k, &i) in bidx.iter().enumerate() {
            binary[i].3 = w[k];
        }
        for (k, &i) in lidx.iter().enumerate() {
            lexical[i].2 = w[bidx.len() + k];
        }
    }
    Pcfg::new(nts[0].clone(), binary, lexical).expect("generated grammar is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bn::hidden_state_size;
    use crate::circuit::{semantic_deterministic, validate};

    #[test]
    fn generated_circuit_is_canonical_and_structured() {
        let mut rng = rng_for(3);
        let v = random_vtree(5, VtreeShape::Random, &mut rng);
        let c = random_structured_pc(&v, &GenOptions::new(3, 9));
        let rep = validate(&c);
        assert!(rep.smooth && rep.decomposable && rep.structured);
        assert!(rep.alternating && rep.binary_products);
        assert!(hidden_state_size(&c, &v).unwrap() <= 3);
        let total: f64 = crate::oracle::joint_table(&c).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_generator_is_semantically_deterministic() {
        let mut rng = rng_for(11);
        let v = random_vtree(5, VtreeShape::RandomContiguous, &mut rng);
        let c = random_structured_pc(&v, &GenOptions::new(3, 4).deterministic());
        assert!(semantic_deterministic(&c));
        let rep = validate(&c);
        assert!(rep.structured);
    }

    #[test]
    fn generation_is_reproducible() {
        let v = Vtree::balanced(4);
        let a = random_structured_pc(&v, &GenOptions::new(2, 123));
        let b = random_structured_pc(&v, &GenOptions::new(2, 123));
        assert_eq!(
            crate::circuit::serialize_circuit(&a),
            crate::circuit::serialize_circuit(&b)
        );
    }
}
