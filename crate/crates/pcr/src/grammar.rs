//! Probabilistic context-free grammars in Chomsky normal form, compiled into
//! contiguous circuits for fixed-length strings.
//!
//! The compilation mirrors CYK: one sum node per reachable (nonterminal,
//! segment) pair, lexical rules as leaf mixtures, binary rules as products
//! over split points. Edge weights are the raw rule probabilities, so sum
//! weights need not total one (mass deriving strings of other lengths is
//! simply absent); the compiled circuit is marked subnormalized, and an
//! optional renormalization pass produces a proper PC over length-n strings.

use crate::circuit::{Builder, Circuit, NodeId};
use crate::{Error, Result, NORM_TOL};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct Pcfg {
    pub nonterminals: Vec<String>,
    pub terminals: Vec<String>,
    /// `(head, left, right, prob)` by nonterminal index.
    pub binary: Vec<(usize, usize, usize, f64)>,
    /// `(head, terminal, prob)` by index.
    pub lexical: Vec<(usize, usize, f64)>,
    pub start: usize,
}

impl Pcfg {
    /// Build from named rules, checking CNF shape and per-nonterminal
    /// normalization.
    pub fn new(
        start: String,
        binary: Vec<(String, String, String, f64)>,
        lexical: Vec<(String, String, f64)>,
    ) -> Result<Pcfg> {
        let mut nonterminals: Vec<String> = Vec::new();
        let mut terminals: Vec<String> = Vec::new();
        let mut nt_index = BTreeMap::new();
        let mut t_index = BTreeMap::new();
        let intern_nt = |name: &str, nts: &mut Vec<String>, idx: &mut BTreeMap<String, usize>| {
            *idx.entry(name.to_string()).or_insert_with(|| {
                nts.push(name.to_string());
                nts.len() - 1
            })
        };
        let mut bin = Vec::new();
        for (a, l, r, p) in &binary {
            let ai = intern_nt(a, &mut nonterminals, &mut nt_index);
            let li = intern_nt(l, &mut nonterminals, &mut nt_index);
            let ri = intern_nt(r, &mut nonterminals, &mut nt_index);
            if *p < 0.0 || !p.is_finite() {
                return Err(Error::Grammar(format!("rule {a} -> {l} {r}: bad probability")));
            }
            bin.push((ai, li, ri, *p));
        }
        let mut lex = Vec::new();
        for (a, t, p) in &lexical {
            let ai = intern_nt(a, &mut nonterminals, &mut nt_index);
            let ti = *t_index.entry(t.clone()).or_insert_with(|| {
                terminals.push(t.clone());
                terminals.len() - 1
            });
            if *p < 0.0 || !p.is_finite() {
                return Err(Error::Grammar(format!("rule {a} -> {t}: bad probability")));
            }
            lex.push((ai, ti, *p));
        }
        let start = *nt_index
            .get(&start)
            .ok_or_else(|| Error::Grammar(format!("start symbol {start} has no rules")))?;
        if terminals.is_empty() {
            return Err(Error::Grammar("grammar has no lexical rules".into()));
        }
        let g = Pcfg {
            nonterminals,
            terminals,
            binary: bin,
            lexical: lex,
            start,
        };
        for nt in 0..g.nonterminals.len() {
            let total: f64 = g
                .binary
                .iter()
                .filter(|r| r.0 == nt)
                .map(|r| r.3)
                .chain(g.lexical.iter().filter(|r| r.0 == nt).map(|r| r.2))
                .sum();
            if (total - 1.0).abs() > NORM_TOL {
                return Err(Error::Grammar(format!(
                    "rules for {} sum to {total}, not 1",
                    g.nonterminals[nt]
                )));
            }
        }
        Ok(g)
    }

    /// Textual grammar format: `start:`, `rule: A -> B C @ p`,
    /// `lex: A -> t @ p`, one record per line.
    pub fn parse(text: &str) -> Result<Pcfg> {
        let mut start = None;
        let mut binary = Vec::new();
        let mut lexical = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Grammar(format!("line {}: cannot parse {raw:?}", lineno + 1));
            if let Some(rest) = line.strip_prefix("start:") {
                start = Some(rest.trim().to_string());
            } else if let Some(rest) = line.strip_prefix("rule:") {
                let (lhs, tail) = rest.split_once("->").ok_or_else(bad)?;
                let (rhs, prob) = tail.split_once('@').ok_or_else(bad)?;
                let parts: Vec<&str> = rhs.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(bad());
                }
                let p: f64 = prob.trim().parse().map_err(|_| bad())?;
                binary.push((
                    lhs.trim().to_string(),
                    parts[0].to_string(),
                    parts[1].to_string(),
                    p,
                ));
            } else if let Some(rest) = line.strip_prefix("lex:") {
                let (lhs, tail) = rest.split_once("->").ok_or_else(bad)?;
                let (rhs, prob) = tail.split_once('@').ok_or_else(bad)?;
                let p: f64 = prob.trim().parse().map_err(|_| bad())?;
                lexical.push((lhs.trim().to_string(), rhs.trim().to_string(), p));
            } else {
                return Err(bad());
            }
        }
        let start = start.ok_or_else(|| Error::Grammar("missing start: line".into()))?;
        Pcfg::new(start, binary, lexical)
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("start: {}\n", self.nonterminals[self.start]);
        for (a, l, r, p) in &self.binary {
            out.push_str(&format!(
                "rule: {} -> {} {} @ {}\n",
                self.nonterminals[*a], self.nonterminals[*l], self.nonterminals[*r], p
            ));
        }
        for (a, t, p) in &self.lexical {
            out.push_str(&format!(
                "lex: {} -> {} @ {}\n",
                self.nonterminals[*a], self.terminals[*t], p
            ));
        }
        out
    }

    pub fn num_rules(&self) -> usize {
        self.binary.len() + self.lexical.len()
    }

    /// Map a string of terminal names to domain values.
    pub fn encode(&self, s: &[&str]) -> Result<Vec<usize>> {
        s.iter()
            .map(|t| {
                self.terminals
                    .iter()
                    .position(|u| u == t)
                    .ok_or_else(|| Error::Grammar(format!("unknown terminal {t:?}")))
            })
            .collect()
    }
}

/// Compile the grammar into a contiguous circuit over `n` positions whose
/// value on a string is the probability of deriving it from the start
/// symbol. Dead (nonterminal, segment) entries are pruned.
pub fn compile_pcfg(g: &Pcfg, n: usize) -> Result<Circuit> {
    if n == 0 {
        return Err(Error::Grammar("length must be at least 1".into()));
    }
    // leaf tables pad single-terminal alphabets to a binary domain
    let domain = g.terminals.len().max(2);
    let mut b = Builder::new(n, vec![domain; n]);
    let nts = g.nonterminals.len();
    // chart[nt][lo][hi]: circuit node deriving strings on [lo, hi]
    let mut chart: Vec<Vec<Vec<Option<NodeId>>>> = vec![vec![vec![None; n]; n]; nts];
    for pos in 0..n {
        for nt in 0..nts {
            let mut table = vec![0.0; domain];
            let mut any = false;
            for &(head, term, p) in &g.lexical {
                if head == nt && p > 0.0 {
                    table[term] += p;
                    any = true;
                }
            }
            if any {
                chart[nt][pos][pos] = Some(b.leaf(pos, table));
            }
        }
    }
    for len in 2..=n {
        for lo in 0..=n - len {
            let hi = lo + len - 1;
            for nt in 0..nts {
                let mut children = Vec::new();
                let mut weights = Vec::new();
                for &(head, left, right, p) in &g.binary {
                    if head != nt || p <= 0.0 {
                        continue;
                    }
                    for mid in lo..hi {
                        if let (Some(lnode), Some(rnode)) =
                            (chart[left][lo][mid], chart[right][mid + 1][hi])
                        {
                            children.push(b.prod(vec![lnode, rnode]));
                            weights.push(p);
                        }
                    }
                }
                if !children.is_empty() {
                    chart[nt][lo][hi] = Some(b.sum(children, weights));
                }
            }
        }
    }
    let root = chart[g.start][0][n - 1].ok_or_else(|| {
        Error::Grammar(format!(
            "start symbol {} derives no string of length {n}",
            g.nonterminals[g.start]
        ))
    })?;
    Ok(b.finish(root, true))
}

/// Compile and renormalize into a proper PC over length-n strings; the
/// returned constant is the total mass the grammar assigns to that length.
pub fn compile_pcfg_normalized(g: &Pcfg, n: usize) -> Result<(Circuit, f64)> {
    let raw = compile_pcfg(g, n)?;
    crate::circuit::renormalize_mass(&raw)
}

/// Standard inside-chart value of the start symbol over the full span.
pub fn cyk_inside(g: &Pcfg, s: &[usize]) -> Result<f64> {
    let n = s.len();
    if n == 0 {
        return Err(Error::Grammar("empty string".into()));
    }
    for &t in s {
        if t >= g.terminals.len() {
            return Err(Error::Grammar(format!("unknown terminal value {t}")));
        }
    }
    let nts = g.nonterminals.len();
    let mut inside = vec![vec![vec![0.0f64; n]; n]; nts];
    for pos in 0..n {
        for &(head, term, p) in &g.lexical {
            if term == s[pos] {
                inside[head][pos][pos] += p;
            }
        }
    }
    for len in 2..=n {
        for lo in 0..=n - len {
            let hi = lo + len - 1;
            for &(head, left, right, p) in &g.binary {
                let mut total = 0.0;
                for mid in lo..hi {
                    total += inside[left][lo][mid] * inside[right][mid + 1][hi];
                }
                inside[head][lo][hi] += p * total;
            }
        }
    }
    Ok(inside[g.start][0][n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{evaluate, validate};

    fn self_loop_grammar() -> Pcfg {
        Pcfg::parse(
            "start: S\n\
             rule: S -> S S @ 0.4\n\
             lex: S -> a @ 0.6\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_serialize_roundtrip() {
        let g = self_loop_grammar();
        let g2 = Pcfg::parse(&g.serialize()).unwrap();
        assert_eq!(g.serialize(), g2.serialize());
    }

    #[test]
    fn rejects_unnormalized_rules() {
        let r = Pcfg::parse("start: S\nlex: S -> a @ 0.5\n");
        assert!(matches!(r, Err(Error::Grammar(_))));
    }

    #[test]
    fn single_lexical_rule_length_one() {
        let g = Pcfg::parse("start: S\nlex: S -> a @ 1.0\n").unwrap();
        let c = compile_pcfg(&g, 1).unwrap();
        assert_eq!(c.nodes.len(), 1);
        assert!((evaluate(&c, &[0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cyk_inside(&g, &[0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_parse_trees_for_aaa() {
        // S -> S S (0.4) | a (0.6): "aaa" has two parse trees, each with
        // probability 0.4^2 * 0.6^3
        let g = self_loop_grammar();
        let expect = 2.0 * 0.4f64.powi(2) * 0.6f64.powi(3);
        let inside = cyk_inside(&g, &[0, 0, 0]).unwrap();
        assert!((inside - expect).abs() < 1e-12);
        let c = compile_pcfg(&g, 3).unwrap();
        assert!((evaluate(&c, &[0, 0, 0]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn compiled_matches_inside_on_all_strings() {
        let mut rng = crate::generate::rng_for(17);
        for case in 0..5 {
            let g = crate::generate::random_pcfg(4, 6, 3, &mut rng);
            for n in 1..=4 {
                let c = match compile_pcfg(&g, n) {
                    Ok(c) => c,
                    Err(_) => continue, // start derives nothing at this length
                };
                for s in crate::assignments(&vec![g.terminals.len(); n]) {
                    let a = evaluate(&c, &s).unwrap();
                    let b = cyk_inside(&g, &s).unwrap();
                    assert!(
                        (a - b).abs() <= 1e-9 * a.max(b).max(1e-30),
                        "case {case} n={n} s={s:?}: {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn compiled_is_contiguous_not_structured() {
        let g = self_loop_grammar();
        let c = compile_pcfg(&g, 3).unwrap();
        let rep = validate(&c);
        assert!(rep.smooth && rep.decomposable && rep.contiguous);
        assert!(!rep.structured, "two split points share the scope [0,2]");
    }

    #[test]
    fn normalized_compilation_sums_to_one() {
        let g = self_loop_grammar();
        let (c, mass) = compile_pcfg_normalized(&g, 3).unwrap();
        let total: f64 = crate::oracle::joint_table(&c).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        // mass of length-3 strings = inside("aaa") since |T| = 1
        let expect = cyk_inside(&g, &[0, 0, 0]).unwrap();
        assert!((mass - expect).abs() < 1e-12);
    }
}
