//! Undirected simple graphs, synthetic instance generators and the edge-list
//! text format.
//!
//! Edge-list format:
//!
//! ```text
//! # comment lines start with '#'
//! 3
//! 0 1
//! 1 2
//! ```
//!
//! The first non-comment line is the node count `n`; every following non-empty
//! line is an edge `i j` with `0 <= i < j < n`. [`save_graph`] writes edges in
//! canonical (lexicographic) order so that load/save round trips are byte-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Immutable undirected simple graph over nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs may be given in either
    /// orientation; self-loops, duplicates and out-of-range endpoints are
    /// rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation(
                "graph must have at least one node".into(),
            ));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) out of range for n = {n}"
                )));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::Validation(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self::from_canonical(n, set))
    }

    fn from_canonical(n: usize, set: BTreeSet<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &set {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Graph {
            n,
            edges: set.into_iter().collect(),
            adjacency,
        }
    }

    /// Graph on `n` nodes with no edges.
    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, [])
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Star with node 0 as the center.
    pub fn star(leaves: usize) -> Result<Self> {
        Self::new(leaves + 1, (1..=leaves).map(|i| (0, i)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edges in canonical order, each as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && self.adjacency[i].binary_search(&j).is_ok()
    }

    pub fn complement(&self) -> Graph {
        let set = (0..self.n)
            .flat_map(|i| (i + 1..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| !self.has_edge(i, j))
            .collect();
        Self::from_canonical(self.n, set)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: perm.len(),
            });
        }
        Graph::new(self.n, self.edges.iter().map(|&(i, j)| (perm[i], perm[j])))
    }

    /// Number of unordered pairs present in exactly one of the two graphs.
    pub fn symmetric_difference(&self, other: &Graph) -> usize {
        let a: BTreeSet<_> = self.edges.iter().collect();
        let b: BTreeSet<_> = other.edges.iter().collect();
        a.symmetric_difference(&b).count()
    }
}

/// Parameters of the RB-model generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbParams {
    /// Number of planted cliques.
    pub k: usize,
    /// Clique size exponent: each clique has `ceil(k^a)` nodes.
    pub a: f64,
    /// Tightness: fraction of cross pairs drawn per constraint round.
    pub p: f64,
    pub rng_seed: u64,
}

impl RbParams {
    pub fn clique_size(&self) -> usize {
        (self.k as f64).powf(self.a).ceil() as usize
    }

    pub fn node_count(&self) -> usize {
        self.k * self.clique_size()
    }

    /// Number of constraint rounds, `round(r k ln k)` with `r = -a / ln(1 - p)`.
    /// At `p = 1` the rate `r` is zero and only the planted cliques remain.
    pub fn rounds(&self) -> usize {
        if self.p >= 1.0 {
            return 0;
        }
        let r = -self.a / (1.0 - self.p).ln();
        let k = self.k as f64;
        (r * k * k.ln()).round().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!(
                "RB k must be >= 2, got {}",
                self.k
            )));
        }
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "RB a must be positive, got {}",
                self.a
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "RB p must lie in (0, 1], got {}",
                self.p
            )));
        }
        Ok(())
    }
}

/// RB-model instance: `k` disjoint cliques of size `s = ceil(k^a)` (nodes
/// `c*s .. (c+1)*s` form clique `c`), then `rounds()` constraint rounds. Each
/// round picks two distinct cliques uniformly and adds `round(p s^2)` distinct
/// random cross pairs between them (pairs already present are kept once).
pub fn generate_rb(params: &RbParams) -> Result<Graph> {
    params.validate()?;
    let k = params.k;
    let s = params.clique_size();
    let n = k * s;
    let mut rng = seed::rng(params.rng_seed);
    let mut set = BTreeSet::new();
    for c in 0..k {
        for u in 0..s {
            for v in u + 1..s {
                set.insert((c * s + u, c * s + v));
            }
        }
    }
    let per_round = ((params.p * (s * s) as f64).round() as usize).min(s * s);
    for _ in 0..params.rounds() {
        let c1 = rng.random_range(0..k);
        let mut c2 = rng.random_range(0..k - 1);
        if c2 >= c1 {
            c2 += 1;
        }
        for idx in sample(&mut rng, s * s, per_round).into_iter() {
            let u = c1 * s + idx / s;
            let v = c2 * s + idx % s;
            set.insert((u.min(v), u.max(v)));
        }
    }
    Ok(Graph::from_canonical(n, set))
}

/// Erdős–Rényi `G(n, p)`.
pub fn generate_er(n: usize, edge_prob: f64, rng_seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::InvalidParameter("ER n must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidParameter(format!(
            "ER edge probability must lie in [0, 1], got {edge_prob}"
        )));
    }
    let mut rng = seed::rng(rng_seed);
    let mut set = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < edge_prob {
                set.insert((i, j));
            }
        }
    }
    Ok(Graph::from_canonical(n, set))
}

/// Ordered sequence of graph snapshots over a common node set.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotStream {
    snapshots: Vec<Graph>,
    timestamps: Option<Vec<i64>>,
}

impl SnapshotStream {
    pub fn new(snapshots: Vec<Graph>, timestamps: Option<Vec<i64>>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::InvalidParameter(
                "snapshot stream must be non-empty".into(),
            ));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != snapshots.len() {
                return Err(Error::LengthMismatch {
                    expected: snapshots.len(),
                    actual: ts.len(),
                });
            }
            if ts.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(
                    "timestamps must strictly increase".into(),
                ));
            }
        }
        Ok(Self {
            snapshots,
            timestamps,
        })
    }

    pub fn snapshots(&self) -> &[Graph] {
        &self.snapshots
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

/// Synthetic dynamic graph: snapshot 0 is `base`; every later snapshot toggles
/// each unordered pair of its predecessor independently with probability
/// `flip_rate`. `steps` is the number of snapshots.
pub fn generate_dynamic(
    base: &Graph,
    steps: usize,
    flip_rate: f64,
    rng_seed: u64,
) -> Result<SnapshotStream> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "dynamic stream needs steps >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::InvalidParameter(format!(
            "flip rate must lie in [0, 1], got {flip_rate}"
        )));
    }
    let n = base.n();
    let mut rng = seed::rng(rng_seed);
    let mut snapshots = vec![base.clone()];
    for _ in 1..steps {
        let prev = snapshots.last().expect("non-empty");
        let mut set = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                let present = prev.has_edge(i, j);
                let flip = rng.random::<f64>() < flip_rate;
                if present != flip {
                    set.insert((i, j));
                }
            }
        }
        snapshots.push(Graph::from_canonical(n, set));
    }
    SnapshotStream::new(snapshots, None)
}

/// Parses the edge-list format. `origin` is only used in error messages.
pub fn parse_graph(text: &str, origin: &Path) -> Result<Graph> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut n: Option<usize> = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match n {
            None => {
                n = Some(line.parse().map_err(|_| {
                    parse_err(lineno, format!("expected node count, got {line:?}"))
                })?);
            }
            Some(_) => {
                let mut it = line.split_whitespace();
                let mut field = || -> Result<usize> {
                    it.next()
                        .ok_or_else(|| parse_err(lineno, "expected two node indices".into()))?
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad node index in {line:?}")))
                };
                let i = field()?;
                let j = field()?;
                if it.next().is_some() {
                    return Err(parse_err(lineno, format!("trailing fields in {line:?}")));
                }
                edges.push((i, j));
            }
        }
    }
    let n = n.ok_or_else(|| parse_err(0, "missing node count".into()))?;
    Graph::new(n, edges)
}

pub fn format_graph(g: &Graph) -> String {
    let mut out = String::with_capacity(8 + g.edge_count() * 8);
    let _ = writeln!(out, "{}", g.n());
    for &(i, j) in g.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_graph(&text, path)
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_graph(g)).map_err(|e| Error::io(path, e))
}

/// Lists `*.el` files of a directory in lexicographic order.
pub fn list_graph_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "el") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every `*.el` file of a directory, lexicographic order.
pub fn load_graph_dir(dir: impl AsRef<Path>) -> Result<Vec<Graph>> {
    list_graph_files(dir)?.iter().map(load_graph).collect()
}

/// Writes graphs as `000.el`, `001.el`, ... into `dir` (created if missing).
pub fn save_graph_dir(graphs: &[Graph], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = graphs.len().saturating_sub(1).to_string().len().max(3);
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let path = dir.join(format!("{i:0width$}.el"));
            save_graph(g, &path).map(|_| path)
        })
        .collect()
}

pub fn load_stream(dir: impl AsRef<Path>) -> Result<SnapshotStream> {
    SnapshotStream::new(load_graph_dir(dir)?, None)
}

pub fn save_stream(stream: &SnapshotStream, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    save_graph_dir(stream.snapshots(), dir)
}

/// Graph whose node identifiers were arbitrary strings, remapped densely in
/// order of first appearance.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub labels: Vec<String>,
}

/// Parses whitespace-separated `u v` lines with arbitrary node tokens.
/// Self-loops and repeated edges are dropped, since raw social-network dumps
/// contain both.
pub fn parse_labeled_edges(text: &str, origin: &Path) -> Result<LabeledGraph> {
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut labels = Vec::new();
    let mut set = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg: format!("expected two node ids in {line:?}"),
            });
        };
        let mut id = |tok: &str| {
            *ids.entry(tok.to_string()).or_insert_with(|| {
                labels.push(tok.to_string());
                labels.len() - 1
            })
        };
        let (u, v) = (id(a), id(b));
        if u != v {
            set.insert((u.min(v), u.max(v)));
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            msg: "no edges found".into(),
        });
    }
    Ok(LabeledGraph {
        graph: Graph::from_canonical(labels.len(), set),
        labels,
    })
}

/// Converts a labeled edge list into `dst` (edge-list format) plus
/// `dst` with extension `map.json` holding the index → label mapping.
pub fn import_labeled(src: impl AsRef<Path>, dst: impl AsRef<Path>) -> Result<LabeledGraph> {
    let src = src.as_ref();
    let dst = dst.as_ref();
    let text = fs::read_to_string(src).map_err(|e| Error::io(src, e))?;
    let labeled = parse_labeled_edges(&text, src)?;
    save_graph(&labeled.graph, dst)?;
    let map_path = dst.with_extension("map.json");
    let json = serde_json::to_string_pretty(&labeled.labels)?;
    fs::write(&map_path, json).map_err(|e| Error::io(&map_path, e))?;
    Ok(labeled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k3() -> Graph {
        Graph::complete(3).unwrap()
    }

    #[test]
    fn adjacency_matches_edges() {
        let g = generate_er(15, 0.4, 3).unwrap();
        for i in 0..g.n() {
            for j in 0..g.n() {
                let in_edges = g.edges().contains(&(i.min(j), i.max(j))) && i != j;
                assert_eq!(in_edges, g.has_edge(i, j));
                assert_eq!(g.has_edge(i, j), g.has_edge(j, i));
            }
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(Graph::new(3, [(0, 0)]), Err(Error::Validation(_))));
        assert!(matches!(Graph::new(3, [(0, 3)]), Err(Error::Validation(_))));
        assert!(matches!(
            Graph::new(3, [(0, 1), (1, 0)]),
            Err(Error::Validation(_))
        ));
        assert!(Graph::new(0, []).is_err());
    }

    #[test]
    fn rb_two_cliques() {
        let params = RbParams {
            k: 2,
            a: 1.0,
            p: 1.0,
            rng_seed: 0,
        };
        let g = generate_rb(&params).unwrap();
        assert_eq!(g.n(), 4);
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(2, 3));
        assert_eq!(g, generate_rb(&params).unwrap());
    }

    #[test]
    fn rb_test_scale() {
        let params = RbParams {
            k: 15,
            a: 0.96,
            p: 0.25,
            rng_seed: 11,
        };
        let g = generate_rb(&params).unwrap();
        assert_eq!(g.n(), 15 * 14);
        assert!((190..=230).contains(&g.n()));
        // Planted cliques survive; cross edges exist.
        for c in 0..15 {
            for u in 0..14 {
                for v in u + 1..14 {
                    assert!(g.has_edge(c * 14 + u, c * 14 + v));
                }
            }
        }
        assert!(g.edge_count() > 15 * 91);
    }

    #[test]
    fn rb_rejects_invalid() {
        let bad = |k, a, p| RbParams {
            k,
            a,
            p,
            rng_seed: 0,
        };
        assert!(generate_rb(&bad(1, 1.0, 0.5)).is_err());
        assert!(generate_rb(&bad(3, 1.0, 0.0)).is_err());
        assert!(generate_rb(&bad(3, 1.0, 1.5)).is_err());
        assert!(generate_rb(&bad(3, 0.0, 0.5)).is_err());
    }

    #[test]
    fn er_extremes() {
        assert_eq!(generate_er(3, 1.0, 0).unwrap(), k3());
        assert_eq!(generate_er(5, 0.0, 0).unwrap().edge_count(), 0);
        assert_eq!(
            generate_er(12, 0.3, 7).unwrap(),
            generate_er(12, 0.3, 7).unwrap()
        );
        assert!(generate_er(0, 0.5, 0).is_err());
        assert!(generate_er(4, -0.1, 0).is_err());
    }

    #[test]
    fn dynamic_streams() {
        let s = generate_dynamic(&k3(), 1, 0.0, 0).unwrap();
        assert_eq!(s.snapshots(), &[k3()]);
        let s = generate_dynamic(&k3(), 3, 0.0, 0).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.snapshots().iter().all(|g| *g == k3()));

        let base = generate_er(10, 0.3, 0).unwrap();
        let s = generate_dynamic(&base, 5, 0.05, 1).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.snapshots()[0], base);
        let toggled: usize = s
            .snapshots()
            .windows(2)
            .map(|w| w[0].symmetric_difference(&w[1]))
            .sum();
        assert!(toggled > 0);
        assert!(generate_dynamic(&base, 0, 0.1, 0).is_err());
        assert!(generate_dynamic(&base, 2, 1.1, 0).is_err());
    }

    #[test]
    fn stream_timestamps_must_increase() {
        assert!(SnapshotStream::new(vec![k3(), k3()], Some(vec![1, 1])).is_err());
        assert!(SnapshotStream::new(vec![k3(), k3()], Some(vec![1, 2])).is_ok());
        assert!(SnapshotStream::new(vec![], None).is_err());
    }

    #[test]
    fn parse_format() {
        let g = parse_graph("3\n0 1\n1 2\n", Path::new("x")).unwrap();
        assert_eq!(g.n(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        let g = parse_graph("# header\n3\n\n# c\n0 1\n", Path::new("x")).unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(matches!(
            parse_graph("3\n0 0\n", Path::new("x")),
            Err(Error::Validation(_))
        ));
        match parse_graph("3\n0 1\n1 x\n", Path::new("x")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k3.el");
        save_graph(&k3(), &path).unwrap();
        assert_eq!(load_graph(&path).unwrap(), k3());
        assert_eq!(fs::read_to_string(&path).unwrap(), "3\n0 1\n0 2\n1 2\n");
        assert!(matches!(
            load_graph(dir.path().join("missing.el")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn labeled_import() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("raw.txt");
        fs::write(&src, "alice bob\nbob carol\nbob alice\ncarol carol\n").unwrap();
        let dst = dir.path().join("g.el");
        let labeled = import_labeled(&src, &dst).unwrap();
        assert_eq!(labeled.labels, vec!["alice", "bob", "carol"]);
        assert_eq!(load_graph(&dst).unwrap().edges(), &[(0, 1), (1, 2)]);
        let map: Vec<String> =
            serde_json::from_str(&fs::read_to_string(dir.path().join("g.map.json")).unwrap())
                .unwrap();
        assert_eq!(map, labeled.labels);
    }

    #[test]
    fn complement_and_permute() {
        let g = Graph::path(3).unwrap();
        assert_eq!(g.complement().edges(), &[(0, 2)]);
        let p = g.permute(&[2, 1, 0]).unwrap();
        assert_eq!(p.edges(), &[(0, 1), (1, 2)]);
    }
}
