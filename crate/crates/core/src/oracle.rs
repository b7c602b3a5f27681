//! Exact solvers and greedy baselines.
//!
//! [`solve_exact_mvc`] branches on the maximum-degree vertex `v` of the residual
//! graph (either `v` joins the cover or all of `N(v)` does) after degree-0/1
//! reductions, pruning with the larger of a maximal-matching bound and a greedy
//! clique-cover bound (a clique of `c` vertices needs `c - 1` of them in any
//! cover). [`solve_exact_mc`] is a colour-bounded branch and bound in the style
//! of Tomita's MCQ. Both are seeded with the greedy solution, so a witness is
//! always available even when the node budget runs out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::objectives::{evaluate, ProblemKind, Solution};

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub optimum: usize,
    pub witness: Vec<bool>,
    pub nodes_explored: u64,
    pub timed_out: bool,
}

#[derive(Clone, PartialEq, Eq)]
struct Bitset {
    words: Vec<u64>,
}

impl Bitset {
    fn new(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
        }
    }

    fn full(n: usize) -> Self {
        let mut b = Self::new(n);
        for i in 0..n {
            b.insert(i);
        }
        b
    }

    fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn intersection_count(&self, other: &Bitset) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    fn and(&self, other: &Bitset) -> Bitset {
        Bitset {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & b)
                .collect(),
        }
    }

    fn and_not(&self, other: &Bitset) -> Bitset {
        Bitset {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(a, b)| a & !b)
                .collect(),
        }
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }
}

fn adjacency_bitsets(g: &Graph) -> Vec<Bitset> {
    (0..g.n())
        .map(|i| {
            let mut b = Bitset::new(g.n());
            for &j in g.neighbors(i) {
                b.insert(j);
            }
            b
        })
        .collect()
}

fn to_indicator(n: usize, nodes: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut x = vec![false; n];
    for i in nodes {
        x[i] = true;
    }
    x
}

struct CoverSearch {
    adj: Vec<Bitset>,
    best: Vec<usize>,
    nodes: u64,
    budget: u64,
    timed_out: bool,
}

impl CoverSearch {
    fn lower_bound(&self, alive: &Bitset) -> usize {
        let mut matched = Bitset::new(self.adj.len());
        let mut matching = 0;
        for v in alive.iter() {
            if matched.contains(v) {
                continue;
            }
            if let Some(u) = self.adj[v].and(alive).and_not(&matched).iter().next() {
                matched.insert(u);
                matched.insert(v);
                matching += 1;
            }
        }
        // greedy clique cover; `alive` has no isolated vertices here
        let mut cliques: Vec<Bitset> = Vec::new();
        for v in alive.iter() {
            match cliques.iter_mut().find(|common| common.contains(v)) {
                Some(common) => *common = common.and(&self.adj[v]),
                None => cliques.push(self.adj[v].clone()),
            }
        }
        matching.max(alive.count() - cliques.len())
    }

    fn search(&mut self, mut alive: Bitset, cover: &mut Vec<usize>) {
        if self.timed_out {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.timed_out = true;
            return;
        }
        let base = cover.len();
        loop {
            let mut changed = false;
            for v in alive.clone().iter() {
                if !alive.contains(v) {
                    continue;
                }
                let nbrs = self.adj[v].and(&alive);
                match nbrs.count() {
                    0 => {
                        alive.remove(v);
                        changed = true;
                    }
                    1 => {
                        let u = nbrs.iter().next().expect("one neighbor");
                        cover.push(u);
                        alive.remove(u);
                        alive.remove(v);
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
        }
        if alive.is_empty() {
            if cover.len() < self.best.len() {
                self.best = cover.clone();
            }
        } else if cover.len() + self.lower_bound(&alive) < self.best.len() {
            let v = alive
                .iter()
                .max_by_key(|&v| (self.adj[v].intersection_count(&alive), std::cmp::Reverse(v)))
                .expect("non-empty");
            let nbrs = self.adj[v].and(&alive);

            cover.push(v);
            let mut rest = alive.clone();
            rest.remove(v);
            self.search(rest, cover);
            cover.pop();

            let len = cover.len();
            cover.extend(nbrs.iter());
            let mut rest = alive.and_not(&nbrs);
            rest.remove(v);
            self.search(rest, cover);
            cover.truncate(len);
        }
        cover.truncate(base);
    }
}

/// Exact minimum vertex cover by branch and bound.
pub fn solve_exact_mvc(g: &Graph, node_budget: u64) -> OracleResult {
    let n = g.n();
    let greedy = greedy_mvc(g);
    let mut search = CoverSearch {
        adj: adjacency_bitsets(g),
        best: greedy.selected().collect(),
        nodes: 0,
        budget: node_budget,
        timed_out: false,
    };
    search.search(Bitset::full(n), &mut Vec::new());
    OracleResult {
        optimum: search.best.len(),
        witness: to_indicator(n, search.best.iter().copied()),
        nodes_explored: search.nodes,
        timed_out: search.timed_out,
    }
}

struct CliqueSearch {
    adj: Vec<Bitset>,
    best: Vec<usize>,
    nodes: u64,
    budget: u64,
    timed_out: bool,
}

impl CliqueSearch {
    /// Greedy sequential colouring of `cands` (in the given order). Returns the
    /// vertices re-ordered by colour class together with each one's colour
    /// number (1-based), ascending.
    fn colour(&self, cands: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for &v in cands {
            match classes
                .iter_mut()
                .find(|class| class.iter().all(|&u| !self.adj[v].contains(u)))
            {
                Some(class) => class.push(v),
                None => classes.push(vec![v]),
            }
        }
        let mut order = Vec::with_capacity(cands.len());
        let mut colours = Vec::with_capacity(cands.len());
        for (c, class) in classes.into_iter().enumerate() {
            for v in class {
                order.push(v);
                colours.push(c + 1);
            }
        }
        (order, colours)
    }

    fn expand(&mut self, cands: &[usize], current: &mut Vec<usize>) {
        if self.timed_out {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.timed_out = true;
            return;
        }
        let (order, colours) = self.colour(cands);
        for idx in (0..order.len()).rev() {
            if current.len() + colours[idx] <= self.best.len() {
                return;
            }
            let v = order[idx];
            current.push(v);
            let next: Vec<usize> = order[..idx]
                .iter()
                .copied()
                .filter(|&u| self.adj[v].contains(u))
                .collect();
            if next.is_empty() {
                if current.len() > self.best.len() {
                    self.best = current.clone();
                }
            } else {
                self.expand(&next, current);
            }
            current.pop();
            if self.timed_out {
                return;
            }
        }
    }
}

/// Exact maximum clique by colour-bounded branch and bound.
pub fn solve_exact_mc(g: &Graph, node_budget: u64) -> OracleResult {
    let n = g.n();
    let greedy = greedy_mc(g);
    let mut search = CliqueSearch {
        adj: adjacency_bitsets(g),
        best: greedy.selected().collect(),
        nodes: 0,
        budget: node_budget,
        timed_out: false,
    };
    let mut cands: Vec<usize> = (0..n).collect();
    cands.sort_by_key(|&v| (std::cmp::Reverse(g.degree(v)), v));
    search.expand(&cands, &mut Vec::new());
    OracleResult {
        optimum: search.best.len(),
        witness: to_indicator(n, search.best.iter().copied()),
        nodes_explored: search.nodes,
        timed_out: search.timed_out,
    }
}

pub fn solve_exact(kind: ProblemKind, g: &Graph, node_budget: u64) -> OracleResult {
    match kind {
        ProblemKind::Mvc => solve_exact_mvc(g, node_budget),
        ProblemKind::Mc => solve_exact_mc(g, node_budget),
    }
}

/// Degree-based greedy cover: repeatedly take the node of highest residual
/// degree (ties: lower index) until no edge remains.
pub fn greedy_mvc(g: &Graph) -> Solution {
    let n = g.n();
    let mut x = vec![false; n];
    let mut degree: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    loop {
        let (v, &d) = degree
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|&(_, d)| d)
            .expect("n >= 1");
        if d == 0 {
            break;
        }
        x[v] = true;
        degree[v] = 0;
        for &u in g.neighbors(v) {
            if !x[u] {
                degree[u] -= 1;
            }
        }
    }
    evaluate(ProblemKind::Mvc, g, &x).expect("length matches")
}

/// Clique growth from every start node: keep the candidates adjacent to the
/// whole clique and add the one with most neighbors among the candidates
/// (ties: lower index). Best over starts, earliest start on ties.
pub fn greedy_mc(g: &Graph) -> Solution {
    let n = g.n();
    let adj = adjacency_bitsets(g);
    let mut best: Vec<usize> = Vec::new();
    for start in 0..n {
        let mut clique = vec![start];
        let mut cands = adj[start].clone();
        while !cands.is_empty() {
            let v = cands
                .iter()
                .max_by_key(|&v| (adj[v].intersection_count(&cands), std::cmp::Reverse(v)))
                .expect("non-empty");
            clique.push(v);
            cands = cands.and(&adj[v]);
        }
        if clique.len() > best.len() {
            best = clique;
        }
    }
    evaluate(ProblemKind::Mc, g, &to_indicator(n, best)).expect("length matches")
}

pub fn greedy(kind: ProblemKind, g: &Graph) -> Solution {
    match kind {
        ProblemKind::Mvc => greedy_mvc(g),
        ProblemKind::Mc => greedy_mc(g),
    }
}

pub const BRUTE_FORCE_LIMIT: usize = 24;

/// Exhaustive enumeration of all `2^n` assignments. The witness is the
/// numerically smallest optimal bitmask.
pub fn brute_force(kind: ProblemKind, g: &Graph) -> Result<OracleResult> {
    let n = g.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(n));
    }
    let adj: Vec<u32> = (0..n)
        .map(|i| g.neighbors(i).iter().fold(0u32, |m, &j| m | 1 << j))
        .collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best: Option<(u32, u32)> = None;
    for mask in 0..=full {
        let ok = match kind {
            // complement must be independent
            ProblemKind::Mvc => (0..n).all(|i| mask >> i & 1 == 1 || adj[i] & !mask == 0),
            ProblemKind::Mc => {
                (0..n).all(|i| mask >> i & 1 == 0 || (mask & !(1 << i)) & !adj[i] == 0)
            }
        };
        if !ok {
            continue;
        }
        let size = mask.count_ones();
        let improves = match best {
            None => true,
            Some((_, s)) => kind.better(size as f64, s as f64),
        };
        if improves {
            best = Some((mask, size));
        }
    }
    let (mask, size) = best.expect("the full set covers and the empty set is a clique");
    Ok(OracleResult {
        optimum: size as usize,
        witness: (0..n).map(|i| mask >> i & 1 == 1).collect(),
        nodes_explored: u64::from(full) + 1,
        timed_out: false,
    })
}
