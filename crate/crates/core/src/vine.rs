//! Regular vine tree sequences, their structure matrices and sampling orders.
//!
//! Nodes are positive integer labels. An edge is identified by its
//! conditioned pair `a < b` and its conditioning set `D`, written `ab;D`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VineError {
    #[error("level {level} is not a tree (cycle or disconnected)")]
    NotATree { level: usize },
    #[error("edge {edge} at level {level} violates the proximity condition")]
    ProximityViolation { level: usize, edge: String },
    #[error("level {level} has {found} edges, expected {expected}")]
    WrongCardinality { level: usize, expected: usize, found: usize },
    #[error("invalid edge at level {level}: {reason}")]
    InvalidEdge { level: usize, reason: String },
    #[error("unknown edge {0}")]
    UnknownEdge(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("subset {0:?} missing from the gamma map")]
    MissingSubset(Vec<usize>),
    #[error("gamma value {1} for subset {0:?} is not positive")]
    NonpositiveValue(Vec<usize>, f64),
    #[error("node {0} cannot be placed first on the diagonal")]
    InfeasibleDiagonal(usize),
    #[error("malformed structure matrix: {0}")]
    MalformedMatrix(String),
    #[error("operation needs an untruncated vine (truncation level {q} < {full})")]
    TruncatedVine { q: usize, full: usize },
    #[error("a vine needs at least one tree and two nodes")]
    Empty,
}

pub type Result<T> = std::result::Result<T, VineError>;

/// Canonical edge identity `(a, b; D)` with `a < b` and `D` sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub a: usize,
    pub b: usize,
    pub cond: Vec<usize>,
}

impl EdgeKey {
    pub fn new(x: usize, y: usize, mut cond: Vec<usize>) -> Self {
        cond.sort_unstable();
        EdgeKey { a: x.min(y), b: x.max(y), cond }
    }

    /// Level of the edge in its vine (`|D| + 1`).
    pub fn level(&self) -> usize {
        self.cond.len() + 1
    }

    /// Sorted complete union `{a, b} ∪ D`.
    pub fn union(&self) -> Vec<usize> {
        let mut u = self.cond.clone();
        u.push(self.a);
        u.push(self.b);
        u.sort_unstable();
        u
    }

    pub fn contains_conditioned(&self, i: usize) -> bool {
        self.a == i || self.b == i
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.a, self.b)?;
        if !self.cond.is_empty() {
            write!(f, ";")?;
            for c in &self.cond {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

/// An edge of tree `T_j` together with its derived sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub key: EdgeKey,
    /// The two nodes of `T_j` joined by this edge: labels at level 1,
    /// indices into the previous level otherwise.
    pub ends: (usize, usize),
    /// Sorted complete union `A_e`.
    pub union: Vec<usize>,
}

/// A validated, possibly truncated, regular vine tree sequence.
#[derive(Debug, Clone)]
pub struct VineSequence {
    nodes: Vec<usize>,
    levels: Vec<Vec<Edge>>,
}

impl PartialEq for VineSequence {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.levels.len() == other.levels.len()
            && self.levels.iter().zip(&other.levels).all(|(x, y)| {
                x.iter().map(|e| &e.key).collect::<Vec<_>>() == y.iter().map(|e| &e.key).collect::<Vec<_>>()
            })
    }
}

/// Validate trees given as index pairs on nodes `1..=d`.
///
/// Level 1 pairs are node labels; level `j ≥ 2` pairs are 0-based indices
/// into the edge list of level `j − 1`.
pub fn validate_vine(trees: &[Vec<(usize, usize)>], d: usize) -> Result<VineSequence> {
    VineSequence::from_index_pairs((1..=d).collect(), trees)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }
    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        self.0[rx.max(ry)] = rx.min(ry);
        true
    }
}

fn sorted_union(x: &[usize], y: &[usize]) -> Vec<usize> {
    let s: BTreeSet<usize> = x.iter().chain(y).copied().collect();
    s.into_iter().collect()
}

fn sorted_intersection(x: &[usize], y: &[usize]) -> Vec<usize> {
    x.iter().copied().filter(|v| y.contains(v)).collect()
}

impl VineSequence {
    /// Build from index pairs on an arbitrary sorted label set.
    pub fn from_index_pairs(mut nodes: Vec<usize>, trees: &[Vec<(usize, usize)>]) -> Result<Self> {
        nodes.sort_unstable();
        nodes.dedup();
        let d = nodes.len();
        if trees.is_empty() || d < 2 {
            return Err(VineError::Empty);
        }
        if trees.len() > d - 1 {
            return Err(VineError::WrongCardinality { level: d, expected: 0, found: trees[d - 1].len() });
        }
        let mut levels: Vec<Vec<Edge>> = Vec::with_capacity(trees.len());
        for (li, tree) in trees.iter().enumerate() {
            let level = li + 1;
            let expected = d - level;
            if tree.len() != expected {
                return Err(VineError::WrongCardinality { level, expected, found: tree.len() });
            }
            let n_nodes = d - level + 1;
            let mut uf = UnionFind::new(n_nodes);
            let mut edges = Vec::with_capacity(tree.len());
            for &(x, y) in tree {
                let (ix, iy, key, union) = if level == 1 {
                    let ix = nodes.binary_search(&x).map_err(|_| VineError::InvalidEdge {
                        level,
                        reason: format!("node {x} not in the node set"),
                    })?;
                    let iy = nodes.binary_search(&y).map_err(|_| VineError::InvalidEdge {
                        level,
                        reason: format!("node {y} not in the node set"),
                    })?;
                    if x == y {
                        return Err(VineError::NotATree { level });
                    }
                    (ix, iy, EdgeKey::new(x, y, vec![]), sorted_union(&[x], &[y]))
                } else {
                    let prev = &levels[li - 1];
                    if x >= prev.len() || y >= prev.len() {
                        return Err(VineError::InvalidEdge { level, reason: format!("index pair ({x}, {y}) out of range") });
                    }
                    if x == y {
                        return Err(VineError::NotATree { level });
                    }
                    let (f, g) = (&prev[x], &prev[y]);
                    let shared = [f.ends.0, f.ends.1].iter().filter(|v| **v == g.ends.0 || **v == g.ends.1).count();
                    if shared != 1 {
                        return Err(VineError::ProximityViolation { level, edge: format!("{{{}, {}}}", f.key, g.key) });
                    }
                    let union = sorted_union(&f.union, &g.union);
                    let cond = sorted_intersection(&f.union, &g.union);
                    let conditioned: Vec<usize> = union.iter().copied().filter(|v| !cond.contains(v)).collect();
                    if cond.len() != level - 1 || conditioned.len() != 2 {
                        return Err(VineError::ProximityViolation { level, edge: format!("{{{}, {}}}", f.key, g.key) });
                    }
                    (x, y, EdgeKey::new(conditioned[0], conditioned[1], cond), union)
                };
                if !uf.union(ix, iy) {
                    return Err(VineError::NotATree { level });
                }
                edges.push(Edge { key, ends: (x.min(y), x.max(y)), union });
            }
            levels.push(edges);
        }
        let mut v = VineSequence { nodes, levels };
        v.canonicalize();
        Ok(v)
    }

    /// Build from edge keys, level by level.
    pub fn from_keys(nodes: Vec<usize>, keys: &[Vec<EdgeKey>]) -> Result<Self> {
        let mut pairs: Vec<Vec<(usize, usize)>> = Vec::with_capacity(keys.len());
        let mut prev_unions: Vec<Vec<usize>> = Vec::new();
        for (li, level_keys) in keys.iter().enumerate() {
            let level = li + 1;
            let mut lp = Vec::with_capacity(level_keys.len());
            let mut unions = Vec::with_capacity(level_keys.len());
            for k in level_keys {
                if k.a >= k.b || k.cond.len() != level - 1 {
                    return Err(VineError::InvalidEdge { level, reason: format!("edge {k} does not fit level {level}") });
                }
                if level == 1 {
                    lp.push((k.a, k.b));
                } else {
                    let mut ua = k.cond.clone();
                    ua.push(k.a);
                    ua.sort_unstable();
                    let mut ub = k.cond.clone();
                    ub.push(k.b);
                    ub.sort_unstable();
                    let fa = prev_unions.iter().position(|u| *u == ua);
                    let fb = prev_unions.iter().position(|u| *u == ub);
                    match (fa, fb) {
                        (Some(x), Some(y)) => lp.push((x, y)),
                        _ => {
                            return Err(VineError::InvalidEdge {
                                level,
                                reason: format!("edge {k} has no matching edges at level {}", level - 1),
                            })
                        }
                    }
                }
                unions.push(k.union());
            }
            pairs.push(lp);
            prev_unions = unions;
        }
        Self::from_index_pairs(nodes, &pairs)
    }

    fn canonicalize(&mut self) {
        let mut remap: Vec<usize> = Vec::new();
        for (li, level) in self.levels.iter_mut().enumerate() {
            if li > 0 {
                for e in level.iter_mut() {
                    let (x, y) = (remap[e.ends.0], remap[e.ends.1]);
                    e.ends = (x.min(y), x.max(y));
                }
            }
            let mut order: Vec<usize> = (0..level.len()).collect();
            order.sort_by(|&i, &j| level[i].key.cmp(&level[j].key));
            let mut new_pos = vec![0; level.len()];
            for (pos, &old) in order.iter().enumerate() {
                new_pos[old] = pos;
            }
            let sorted: Vec<Edge> = order.iter().map(|&i| level[i].clone()).collect();
            *level = sorted;
            remap = new_pos;
        }
    }

    /// Sorted node labels.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Number of stored trees (the truncation level `q`).
    pub fn trunc_level(&self) -> usize {
        self.levels.len()
    }

    pub fn is_truncated(&self) -> bool {
        self.levels.len() < self.dim() - 1
    }

    /// Edges of tree `T_level` (1-based), sorted by key.
    pub fn level(&self, level: usize) -> &[Edge] {
        &self.levels[level - 1]
    }

    pub fn levels(&self) -> &[Vec<Edge>] {
        &self.levels
    }

    /// All edge keys, level by level.
    pub fn keys(&self) -> Vec<Vec<EdgeKey>> {
        self.levels.iter().map(|l| l.iter().map(|e| e.key.clone()).collect()).collect()
    }

    /// `(level, index)` position of an edge.
    pub fn position(&self, key: &EdgeKey) -> Result<(usize, usize)> {
        let level = key.level();
        if level > self.levels.len() {
            return Err(VineError::UnknownEdge(key.to_string()));
        }
        self.levels[level - 1]
            .binary_search_by(|e| e.key.cmp(key))
            .map(|i| (level, i))
            .map_err(|_| VineError::UnknownEdge(key.to_string()))
    }

    pub fn edge(&self, level: usize, idx: usize) -> &Edge {
        &self.levels[level - 1][idx]
    }

    /// Complete union of a node of `T_level`.
    pub fn node_union(&self, level: usize, node: usize) -> Vec<usize> {
        if level == 1 {
            vec![node]
        } else {
            self.levels[level - 2][node].union.clone()
        }
    }

    /// The two child edges (indices into level − 1) of an edge at level ≥ 2,
    /// ordered so that the first contains `a_e` and the second `b_e`.
    pub fn children(&self, level: usize, idx: usize) -> (usize, usize) {
        let e = &self.levels[level - 1][idx];
        let (x, y) = e.ends;
        if self.levels[level - 2][x].union.contains(&e.key.a) {
            (x, y)
        } else {
            (y, x)
        }
    }

    /// `(a_e, b_e, D_e, A_e)` for an edge.
    pub fn edge_metadata(&self, key: &EdgeKey) -> Result<(usize, usize, Vec<usize>, Vec<usize>)> {
        let (l, i) = self.position(key)?;
        let e = &self.levels[l - 1][i];
        Ok((e.key.a, e.key.b, e.key.cond.clone(), e.union.clone()))
    }

    /// Find the edge with conditioned node `i` whose conditioning set is `cond`.
    pub fn find_conditional(&self, i: usize, cond: &[usize]) -> Option<(usize, usize)> {
        let level = cond.len();
        if level == 0 || level > self.levels.len() {
            return None;
        }
        let mut c = cond.to_vec();
        c.sort_unstable();
        for (idx, e) in self.levels[level - 1].iter().enumerate() {
            if e.key.contains_conditioned(i) {
                let other = if e.key.a == i { e.key.b } else { e.key.a };
                let mut d = e.key.cond.clone();
                d.push(other);
                d.sort_unstable();
                if d == c {
                    return Some((level, idx));
                }
            }
        }
        None
    }

    /// Induced vine on the complete union of `f`.
    pub fn sub_vine(&self, f: &EdgeKey) -> Result<VineSequence> {
        let (lf, idx) = self.position(f)?;
        let af = self.levels[lf - 1][idx].union.clone();
        let keys: Vec<Vec<EdgeKey>> = self.levels[..lf]
            .iter()
            .map(|l| l.iter().filter(|e| e.union.iter().all(|v| af.contains(v))).map(|e| e.key.clone()).collect())
            .collect();
        VineSequence::from_keys(af, &keys)
    }

    /// Keep only the first `q` trees.
    pub fn truncate(&self, q: usize) -> Result<VineSequence> {
        if q == 0 {
            return Err(VineError::Empty);
        }
        let mut v = self.clone();
        v.levels.truncate(q);
        Ok(v)
    }

    /// Right-hand side of the vine telescoping product for the map `gamma`.
    pub fn telescoping_product<G: Fn(&[usize]) -> Option<f64>>(&self, gamma: G) -> Result<f64> {
        let get = |s: &[usize]| -> Result<f64> {
            let v = gamma(s).ok_or_else(|| VineError::MissingSubset(s.to_vec()))?;
            if !(v > 0.0) {
                return Err(VineError::NonpositiveValue(s.to_vec(), v));
            }
            Ok(v.ln())
        };
        let mut log = 0.0;
        for (li, level) in self.levels.iter().enumerate() {
            for (idx, e) in level.iter().enumerate() {
                if li == 0 {
                    log += get(&e.union)?;
                } else {
                    let (f, g) = self.children(li + 1, idx);
                    let prev = &self.levels[li - 1];
                    log += get(&e.key.cond)? + get(&e.union)? - get(&prev[f].union)? - get(&prev[g].union)?;
                }
            }
        }
        Ok(log.exp())
    }

    /// Sampling order with `sigma(1) = j` (untruncated vines only).
    ///
    /// At every step the next edge is the one, among those adjacent in the
    /// current tree, whose new endpoint has the smallest degree there; ties
    /// go to the smallest newly added node.
    pub fn sampling_order(&self, j: usize) -> Result<SamplingOrder> {
        let d = self.dim();
        if self.is_truncated() {
            return Err(VineError::TruncatedVine { q: self.trunc_level(), full: d - 1 });
        }
        if !self.nodes.contains(&j) {
            return Err(VineError::UnknownNode(j));
        }
        let mut sigma = vec![j];
        let mut edges: Vec<EdgeKey> = Vec::with_capacity(d - 1);
        let mut current = j;
        let mut current_union = vec![j];
        for level in 1..d {
            let tree = &self.levels[level - 1];
            let degree = |node: usize| tree.iter().filter(|e| e.ends.0 == node || e.ends.1 == node).count();
            let mut best: Option<(usize, usize, usize)> = None;
            for (idx, e) in tree.iter().enumerate() {
                let other = if e.ends.0 == current {
                    e.ends.1
                } else if e.ends.1 == current {
                    e.ends.0
                } else {
                    continue;
                };
                let new_node = *e.union.iter().find(|v| !current_union.contains(v)).expect("edge adds one node");
                let cand = (degree(other), new_node, idx);
                if best.map_or(true, |b| (cand.0, cand.1) < (b.0, b.1)) {
                    best = Some(cand);
                }
            }
            let (_, new_node, idx) = best.expect("connected tree has an adjacent edge");
            sigma.push(new_node);
            let e = &tree[idx];
            edges.push(e.key.clone());
            current = idx;
            current_union = e.union.clone();
        }
        Ok(SamplingOrder { j, sigma, edges })
    }

    /// Encode as a structure matrix with `m_11 = first_diag`
    /// (default: the smallest node).
    pub fn to_structure_matrix(&self, first_diag: Option<usize>) -> Result<StructureMatrix> {
        let first = first_diag.unwrap_or(self.nodes[0]);
        if !self.nodes.contains(&first) {
            return Err(VineError::InfeasibleDiagonal(first));
        }
        let d = self.dim();
        let q = self.trunc_level();
        let diag: Vec<usize> = if !self.is_truncated() {
            self.sampling_order(first)?.sigma
        } else {
            self.backward_diagonal(first)?
        };
        let mut m = vec![vec![0usize; d]; d];
        for k in 0..d {
            m[k][k] = diag[k];
            let prefix = &diag[..=k];
            for i in 0..k.min(q) {
                let level = i + 1;
                let found: Vec<&Edge> = self.levels[level - 1]
                    .iter()
                    .filter(|e| e.key.contains_conditioned(diag[k]) && e.union.iter().all(|v| prefix.contains(v)))
                    .collect();
                if found.len() != 1 {
                    return Err(VineError::InfeasibleDiagonal(first));
                }
                let key = &found[0].key;
                m[i][k] = if key.a == diag[k] { key.b } else { key.a };
            }
        }
        Ok(StructureMatrix { d, trunc: q, matrix: m })
    }

    fn backward_diagonal(&self, first: usize) -> Result<Vec<usize>> {
        let d = self.dim();
        let q = self.trunc_level();
        let mut remaining: Vec<usize> = self.nodes.clone();
        let mut tail: Vec<usize> = Vec::with_capacity(d);
        while remaining.len() > 1 {
            let n = remaining.len();
            let top = q.min(n - 1);
            let live: Vec<&Edge> =
                self.levels[top - 1].iter().filter(|e| e.union.iter().all(|v| remaining.contains(v))).collect();
            let pick = remaining
                .iter()
                .copied()
                .filter(|&x| x != first)
                .find(|&x| {
                    let hits: Vec<&&Edge> = live.iter().filter(|e| e.union.contains(&x)).collect();
                    hits.len() == 1 && hits[0].key.contains_conditioned(x)
                })
                .ok_or(VineError::InfeasibleDiagonal(first))?;
            tail.push(pick);
            remaining.retain(|&x| x != pick);
        }
        tail.push(remaining[0]);
        tail.reverse();
        Ok(tail)
    }

    /// Draw a random vine on nodes `1..=d`: each tree is a uniformly random
    /// spanning tree of the proximity-feasible pairs (Aldous–Broder walk).
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> VineSequence {
        assert!(d >= 2);
        let nodes: Vec<usize> = (1..=d).collect();
        let mut trees: Vec<Vec<(usize, usize)>> = Vec::new();
        // level 1: complete graph on the labels
        let adj1: Vec<Vec<usize>> = (0..d).map(|i| (0..d).filter(|&j| j != i).collect()).collect();
        let t1 = aldous_broder(&adj1, rng);
        trees.push(t1.iter().map(|&(x, y)| (x + 1, y + 1)).collect());
        let mut ends: Vec<(usize, usize)> = trees[0].clone();
        for _level in 2..d {
            let n = ends.len();
            let adj: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    (0..n)
                        .filter(|&j| {
                            j != i && {
                                let (a, b) = ends[i];
                                let (c, e) = ends[j];
                                [a, b].iter().filter(|v| **v == c || **v == e).count() == 1
                            }
                        })
                        .collect()
                })
                .collect();
            let t = aldous_broder(&adj, rng);
            ends = t.clone();
            trees.push(t);
        }
        VineSequence::from_index_pairs(nodes, &trees).expect("random vine is valid")
    }
}

fn aldous_broder<R: Rng + ?Sized>(adj: &[Vec<usize>], rng: &mut R) -> Vec<(usize, usize)> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut cur = rng.random_range(0..n);
    visited[cur] = true;
    let mut count = 1;
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    while count < n {
        let next = adj[cur][rng.random_range(0..adj[cur].len())];
        if !visited[next] {
            visited[next] = true;
            count += 1;
            edges.push((cur, next));
        }
        cur = next;
    }
    edges
}

/// Permutation `sigma` with `sigma(1) = j` and the edges `e_{j,1}, …, e_{j,d−1}`
/// whose complete unions are the successive prefixes of `sigma`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingOrder {
    pub j: usize,
    pub sigma: Vec<usize>,
    pub edges: Vec<EdgeKey>,
}

/// Upper-triangular structure matrix; `matrix[i][k]` with `i ≤ k`, zeros
/// below the diagonal and in truncated positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureMatrix {
    pub d: usize,
    pub trunc: usize,
    pub matrix: Vec<Vec<usize>>,
}

impl StructureMatrix {
    pub fn diagonal(&self) -> Vec<usize> {
        (0..self.d).map(|k| self.matrix[k][k]).collect()
    }

    /// Decode into the vine it encodes.
    pub fn to_vine(&self) -> Result<VineSequence> {
        let d = self.d;
        let bad = |s: String| VineError::MalformedMatrix(s);
        if d < 2 || self.matrix.len() != d || self.matrix.iter().any(|r| r.len() != d) {
            return Err(bad(format!("expected a {d}x{d} matrix")));
        }
        if self.trunc == 0 || self.trunc > d - 1 {
            return Err(bad(format!("truncation level {} outside 1..{}", self.trunc, d - 1)));
        }
        let diag = self.diagonal();
        let mut sorted = diag.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != d || sorted[0] == 0 {
            return Err(bad("diagonal is not a permutation of distinct positive labels".into()));
        }
        let q = self.trunc;
        let mut keys: Vec<Vec<EdgeKey>> = vec![Vec::new(); q];
        for k in 0..d {
            for i in 0..d {
                let v = self.matrix[i][k];
                if i > k && v != 0 {
                    return Err(bad(format!("nonzero entry below the diagonal at ({}, {})", i + 1, k + 1)));
                }
                if i < k && i >= q && v != 0 {
                    return Err(bad(format!("nonzero entry in truncated row {}", i + 1)));
                }
            }
            let earlier = &diag[..k];
            let mut seen: Vec<usize> = Vec::new();
            for i in 0..k.min(q) {
                let v = self.matrix[i][k];
                if !earlier.contains(&v) || seen.contains(&v) {
                    return Err(bad(format!("entry ({}, {}) = {v} is not an unused earlier diagonal label", i + 1, k + 1)));
                }
                keys[i].push(EdgeKey::new(diag[k], v, seen.clone()));
                seen.push(v);
            }
        }
        VineSequence::from_keys(sorted, &keys).map_err(|e| bad(e.to_string()))
    }

    /// Edge keys of column `k` (0-based), level by level.
    pub fn column_edges(&self, k: usize) -> Vec<EdgeKey> {
        let top = k.min(self.trunc);
        let mut out = Vec::with_capacity(top);
        let mut cond = Vec::new();
        for i in 0..top {
            out.push(EdgeKey::new(self.matrix[k][k], self.matrix[i][k], cond.clone()));
            cond.push(self.matrix[i][k]);
        }
        out
    }
}

/// Lookup of complete unions to edge positions, for callers that need it often.
pub fn union_index(v: &VineSequence) -> HashMap<Vec<usize>, (usize, usize)> {
    let mut map = HashMap::new();
    for (li, l) in v.levels().iter().enumerate() {
        for (i, e) in l.iter().enumerate() {
            map.insert(e.union.clone(), (li + 1, i));
        }
    }
    map
}

/// The five-node vine used throughout the documentation and tests:
/// `T_1 = {12, 23, 24, 45}`, `T_2 = {13;2, 34;2, 25;4}`,
/// `T_3 = {14;23, 35;24}`, `T_4 = {15;234}`.
pub fn example_vine_5() -> VineSequence {
    let k = EdgeKey::new;
    VineSequence::from_keys(
        (1..=5).collect(),
        &[
            vec![k(1, 2, vec![]), k(2, 3, vec![]), k(2, 4, vec![]), k(4, 5, vec![])],
            vec![k(1, 3, vec![2]), k(3, 4, vec![2]), k(2, 5, vec![4])],
            vec![k(1, 4, vec![2, 3]), k(3, 5, vec![2, 4])],
            vec![k(1, 5, vec![2, 3, 4])],
        ],
    )
    .expect("example vine is valid")
}
