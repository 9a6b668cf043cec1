use std::collections::{HashMap, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

/// A rule over component-local atom indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LocalRule {
    pub head: Option<u32>,
    pub pos: Vec<u32>,
    pub neg: Vec<u32>,
}

impl LocalRule {
    pub fn body_holds(&self, m: &[bool]) -> bool {
        self.pos.iter().all(|&a| m[a as usize]) && self.neg.iter().all(|&a| !m[a as usize])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Stratum {
    pub rules: Vec<usize>,
    pub recursive: bool,
}

/// A negative dependency inside a strongly connected component, as a cycle of atoms.
pub(crate) struct NegativeCycle(pub Vec<u32>);

/// Order the rules of a normal program into strata by the SCCs of its atom
/// dependency graph. Fails if some SCC contains a negative edge.
pub(crate) fn stratify(n_atoms: usize, rules: &[LocalRule]) -> Result<Vec<Stratum>, NegativeCycle> {
    let mut g: DiGraph<u32, bool> = DiGraph::with_capacity(n_atoms, 0);
    let nodes: Vec<NodeIndex> = (0..n_atoms as u32).map(|a| g.add_node(a)).collect();
    for r in rules {
        let Some(h) = r.head else { continue };
        for &b in &r.pos {
            g.add_edge(nodes[b as usize], nodes[h as usize], false);
        }
        for &b in &r.neg {
            g.add_edge(nodes[b as usize], nodes[h as usize], true);
        }
    }
    // tarjan_scc yields components in reverse topological order
    let mut sccs = tarjan_scc(&g);
    sccs.reverse();
    let mut scc_of = vec![0usize; n_atoms];
    for (i, scc) in sccs.iter().enumerate() {
        for n in scc {
            scc_of[g[*n] as usize] = i;
        }
    }
    let mut recursive = vec![false; sccs.len()];
    for (i, scc) in sccs.iter().enumerate() {
        if scc.len() > 1 {
            recursive[i] = true;
        }
    }
    for r in rules {
        let Some(h) = r.head else { continue };
        let hs = scc_of[h as usize];
        for &b in &r.neg {
            if scc_of[b as usize] == hs {
                return Err(NegativeCycle(cycle_through(rules, n_atoms, b, h, &scc_of)));
            }
        }
        if r.pos.contains(&h) {
            recursive[hs] = true;
        }
    }
    let mut by_scc: HashMap<usize, Vec<usize>> = HashMap::new();
    for (ri, r) in rules.iter().enumerate() {
        if let Some(h) = r.head {
            by_scc.entry(scc_of[h as usize]).or_default().push(ri);
        }
    }
    Ok((0..sccs.len())
        .filter_map(|i| {
            by_scc.remove(&i).map(|rules| Stratum {
                rules,
                recursive: recursive[i],
            })
        })
        .collect())
}

/// Atoms of a cycle `to -> ... -> from`, closed by the negative edge `from -> to`.
fn cycle_through(
    rules: &[LocalRule],
    n_atoms: usize,
    from: u32,
    to: u32,
    scc_of: &[usize],
) -> Vec<u32> {
    if from == to {
        return vec![from];
    }
    // BFS from `to` back to `from` along body -> head edges within the SCC
    let mut succ: Vec<Vec<u32>> = vec![Vec::new(); n_atoms];
    for r in rules {
        let Some(h) = r.head else { continue };
        for &b in r.pos.iter().chain(r.neg.iter()) {
            if scc_of[b as usize] == scc_of[h as usize] {
                succ[b as usize].push(h);
            }
        }
    }
    let mut prev: Vec<Option<u32>> = vec![None; n_atoms];
    let mut queue = VecDeque::from([to]);
    let mut seen = vec![false; n_atoms];
    seen[to as usize] = true;
    while let Some(a) = queue.pop_front() {
        if a == from {
            break;
        }
        for &s in &succ[a as usize] {
            if !seen[s as usize] {
                seen[s as usize] = true;
                prev[s as usize] = Some(a);
                queue.push_back(s);
            }
        }
    }
    let mut path = vec![from];
    let mut cur = from;
    while let Some(p) = prev[cur as usize] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}
