//! X-vine specifications and their evaluation.
//!
//! A specification attaches a bivariate tail copula density to every edge of
//! the first tree and a bivariate copula to every edge of trees `2..=q`.
//! Densities, conditional distribution functions and their inverses follow
//! the vine recursion
//! `R_{a|D∪b} = C_{a|b;D}(R_{a|D} | R_{b|D})`, bottoming out in first-tree
//! tail conditionals. Trees beyond the truncation level are independence.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::families::{FamilyError, PairFamily, PairKind, TailFamily, TailKind};
use crate::vine::{EdgeKey, StructureMatrix, VineError, VineSequence};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Vine(#[from] VineError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("nodes must be labelled 1..=d, found {0:?}")]
    Labels(Vec<usize>),
    #[error("no family given for edge {0}")]
    MissingEdge(String),
    #[error("edge {0} given more than once")]
    DuplicateEdge(String),
    #[error("family {family} cannot sit on edge {edge}")]
    WrongFamilyKind { edge: String, family: String },
    #[error("conditional of {i} given {cond:?} is not reachable from the vine")]
    InvalidIndex { i: usize, cond: Vec<usize> },
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("malformed model: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A vine plus one bivariate family per edge up to the truncation level.
#[derive(Debug, Clone, PartialEq)]
pub struct XVineSpec {
    vine: VineSequence,
    tails: Vec<TailFamily>,
    pairs: Vec<Vec<PairFamily>>,
}

/// The family attached to a single edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeFamily {
    Tail(TailFamily),
    Pair(PairFamily),
}

impl EdgeFamily {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeFamily::Tail(t) => t.kind.name(),
            EdgeFamily::Pair(p) => p.kind.name(),
        }
    }

    pub fn theta(&self) -> f64 {
        match self {
            EdgeFamily::Tail(t) => t.theta,
            EdgeFamily::Pair(p) => p.theta,
        }
    }

    /// Parse a family name and parameter; tail names only on the first tree.
    pub fn parse(level: usize, name: &str, theta: f64) -> std::result::Result<Self, FamilyError> {
        if level == 1 {
            Ok(EdgeFamily::Tail(TailFamily::new(name.parse::<TailKind>()?, theta)?))
        } else {
            Ok(EdgeFamily::Pair(PairFamily::new(name.parse::<PairKind>()?, theta)?))
        }
    }
}

impl XVineSpec {
    /// Build from level-ordered family vectors aligned with `vine.level(l)`.
    pub fn new(vine: VineSequence, tails: Vec<TailFamily>, pairs: Vec<Vec<PairFamily>>) -> Result<Self> {
        let d = vine.dim();
        if vine.nodes() != (1..=d).collect::<Vec<_>>().as_slice() {
            return Err(ModelError::Labels(vine.nodes().to_vec()));
        }
        if tails.len() != vine.level(1).len() {
            let e = &vine.level(1)[tails.len().min(vine.level(1).len() - 1)];
            return Err(ModelError::MissingEdge(e.key.to_string()));
        }
        if pairs.len() != vine.trunc_level() - 1 {
            return Err(ModelError::Json(format!(
                "expected pair families for {} trees, found {}",
                vine.trunc_level() - 1,
                pairs.len()
            )));
        }
        for (li, fams) in pairs.iter().enumerate() {
            let edges = vine.level(li + 2);
            if fams.len() != edges.len() {
                let e = &edges[fams.len().min(edges.len() - 1)];
                return Err(ModelError::MissingEdge(e.key.to_string()));
            }
        }
        Ok(XVineSpec { vine, tails, pairs })
    }

    /// Build from `(edge, family)` assignments in any order.
    pub fn from_edges(vine: VineSequence, edges: Vec<(EdgeKey, EdgeFamily)>) -> Result<Self> {
        let mut slots: Vec<Vec<Option<EdgeFamily>>> =
            vine.levels().iter().map(|l| vec![None; l.len()]).collect();
        for (key, fam) in edges {
            let (l, i) = vine.position(&key)?;
            let ok = matches!((l, fam), (1, EdgeFamily::Tail(_))) || (l > 1 && matches!(fam, EdgeFamily::Pair(_)));
            if !ok {
                return Err(ModelError::WrongFamilyKind { edge: key.to_string(), family: fam.name().into() });
            }
            if slots[l - 1][i].replace(fam).is_some() {
                return Err(ModelError::DuplicateEdge(key.to_string()));
            }
        }
        let mut tails = Vec::new();
        let mut pairs = Vec::new();
        for (li, level) in slots.into_iter().enumerate() {
            let mut ps = Vec::new();
            for (i, f) in level.into_iter().enumerate() {
                match f {
                    Some(EdgeFamily::Tail(t)) => tails.push(t),
                    Some(EdgeFamily::Pair(p)) => ps.push(p),
                    None => return Err(ModelError::MissingEdge(vine.edge(li + 1, i).key.to_string())),
                }
            }
            if li > 0 {
                pairs.push(ps);
            }
        }
        XVineSpec::new(vine, tails, pairs)
    }

    pub fn vine(&self) -> &VineSequence {
        &self.vine
    }

    pub fn dim(&self) -> usize {
        self.vine.dim()
    }

    pub fn trunc_level(&self) -> usize {
        self.vine.trunc_level()
    }

    pub fn tail(&self, idx: usize) -> &TailFamily {
        &self.tails[idx]
    }

    pub fn tails(&self) -> &[TailFamily] {
        &self.tails
    }

    /// Pair family of edge `idx` on tree `level ≥ 2`.
    pub fn pair(&self, level: usize, idx: usize) -> &PairFamily {
        &self.pairs[level - 2][idx]
    }

    pub fn family(&self, level: usize, idx: usize) -> EdgeFamily {
        if level == 1 {
            EdgeFamily::Tail(self.tails[idx])
        } else {
            EdgeFamily::Pair(self.pairs[level - 2][idx])
        }
    }

    /// All `(edge, family)` assignments, level by level.
    pub fn edges(&self) -> Vec<(EdgeKey, EdgeFamily)> {
        let mut out = Vec::new();
        for (li, level) in self.vine.levels().iter().enumerate() {
            for (i, e) in level.iter().enumerate() {
                out.push((e.key.clone(), self.family(li + 1, i)));
            }
        }
        out
    }

    /// Drop trees beyond `q`.
    pub fn truncate(&self, q: usize) -> Result<Self> {
        let q = q.min(self.trunc_level());
        let vine = self.vine.truncate(q)?;
        XVineSpec::new(vine, self.tails.clone(), self.pairs[..q - 1].to_vec())
    }

    pub fn evaluator(&self, x: &[f64]) -> Evaluator<'_> {
        Evaluator::new(self, x)
    }

    /// Log tail copula density; `-∞` unless every coordinate is positive.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "point has wrong dimension");
        if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return f64::NEG_INFINITY;
        }
        let mut ev = self.evaluator(x);
        let mut total = 0.0;
        for (idx, e) in self.vine.level(1).iter().enumerate() {
            total += self.tails[idx].log_density(x[e.key.a - 1], x[e.key.b - 1]);
        }
        for level in 2..=self.trunc_level() {
            for idx in 0..self.vine.level(level).len() {
                let fam = self.pair(level, idx);
                if fam.kind == PairKind::Independence {
                    continue;
                }
                let (ua, ub) = ev.pair_arguments(level, idx);
                total += fam.log_density(ua, ub);
            }
        }
        total
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// `R_{i|D}(x_i | x_D)`; `x` is a full point indexed by label − 1.
    pub fn conditional_cdf(&self, i: usize, cond: &[usize], x: &[f64]) -> Result<f64> {
        self.evaluator(x).cdf(i, cond)
    }

    /// `R⁻¹_{i|D}(u | x_D)`; coordinate `i` of `x` is ignored.
    pub fn conditional_quantile(&self, i: usize, cond: &[usize], u: f64, x: &[f64]) -> Result<f64> {
        self.evaluator(x).quantile(i, cond, u)
    }

    /// Exponent measure density `λ(y) = r(1/y) ∏ y_j^{-2}`.
    pub fn exponent_measure_density(&self, y: &[f64]) -> f64 {
        if y.iter().any(|&v| !(v > 0.0)) {
            return 0.0;
        }
        let x: Vec<f64> = y.iter().map(|v| 1.0 / v).collect();
        (self.log_density(&x) - 2.0 * y.iter().map(|v| v.ln()).sum::<f64>()).exp()
    }

    pub fn to_json_model(&self) -> Result<ModelJson> {
        let structure = self.vine.to_structure_matrix(None)?;
        let edges = self
            .edges()
            .into_iter()
            .map(|(k, f)| EdgeRecord { a: k.a, b: k.b, cond: k.cond, family: f.name().into(), theta: f.theta() })
            .collect();
        Ok(ModelJson { structure, edges })
    }

    pub fn from_json_model(m: &ModelJson) -> Result<Self> {
        let vine = m.structure.to_vine()?;
        let mut edges = Vec::with_capacity(m.edges.len());
        for r in &m.edges {
            let key = EdgeKey::new(r.a, r.b, r.cond.clone());
            let fam = EdgeFamily::parse(key.level(), &r.family, r.theta)?;
            edges.push((key, fam));
        }
        XVineSpec::from_edges(vine, edges)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_json_model()?).map_err(|e| ModelError::Json(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ModelJson = serde_json::from_str(s).map_err(|e| ModelError::Json(e.to_string()))?;
        XVineSpec::from_json_model(&m)
    }
}

/// On-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub structure: StructureMatrix,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub a: usize,
    pub b: usize,
    pub cond: Vec<usize>,
    pub family: String,
    pub theta: f64,
}

/// One elementary function call made while evaluating the recursion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    /// `R_{of|given}` from a first-tree tail copula.
    TailH { of: usize, given: usize },
    /// `C_{of|other;D}` on a deeper edge.
    PairH { edge: EdgeKey, of: usize },
    TailHInv { of: usize, given: usize },
    PairHInv { edge: EdgeKey, of: usize },
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cond = |e: &EdgeKey| e.cond.iter().map(|c| c.to_string()).collect::<String>();
        let other = |e: &EdgeKey, of: usize| if e.a == *&of { e.b } else { e.a };
        match self {
            Step::TailH { of, given } => write!(f, "R_{{{of}|{given}}}"),
            Step::TailHInv { of, given } => write!(f, "R^-1_{{{of}|{given}}}"),
            Step::PairH { edge, of } => write!(f, "C_{{{of}|{};{}}}", other(edge, *of), cond(edge)),
            Step::PairHInv { edge, of } => write!(f, "C^-1_{{{of}|{};{}}}", other(edge, *of), cond(edge)),
        }
    }
}

/// Memoized recursion state for a single evaluation point.
///
/// `memo[l][e]` caches `R_{a|D∪b}` and `R_{b|D∪a}` for edge `e` of tree `l + 1`.
/// Coordinates may be filled in progressively (as a sampler does); values
/// that depend on a missing coordinate are never cached.
pub struct Evaluator<'a> {
    spec: &'a XVineSpec,
    x: Vec<f64>,
    memo: Vec<Vec<[Option<f64>; 2]>>,
    trace: Option<Vec<Step>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a XVineSpec, x: &[f64]) -> Self {
        assert_eq!(x.len(), spec.dim(), "point has wrong dimension");
        let memo = spec.vine.levels().iter().map(|l| vec![[None, None]; l.len()]).collect();
        Evaluator { spec, x: x.to_vec(), memo, trace: None }
    }

    /// Record every elementary call from now on.
    pub fn traced(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn take_trace(&mut self) -> Vec<Step> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn point(&self) -> &[f64] {
        &self.x
    }

    pub fn set(&mut self, label: usize, value: f64) {
        self.x[label - 1] = value;
    }

    fn record(&mut self, s: Step) {
        if let Some(t) = self.trace.as_mut() {
            t.push(s);
        }
    }

    /// `R_{node | A_e \\ node}` for `node` in the conditioned set of the edge.
    fn side(&mut self, level: usize, idx: usize, node: usize) -> f64 {
        let spec = self.spec;
        let key = &spec.vine.edge(level, idx).key;
        let slot = usize::from(key.a != node);
        if let Some(v) = self.memo[level - 1][idx][slot] {
            return v;
        }
        let other = if slot == 0 { key.b } else { key.a };
        let v = if level == 1 {
            self.record(Step::TailH { of: node, given: other });
            spec.tails[idx].h(self.x[node - 1], self.x[other - 1])
        } else {
            let (ua, ub) = self.pair_arguments(level, idx);
            let (un, uo) = if slot == 0 { (ua, ub) } else { (ub, ua) };
            self.record(Step::PairH { edge: key.clone(), of: node });
            spec.pair(level, idx).h(un, uo)
        };
        if !v.is_nan() {
            self.memo[level - 1][idx][slot] = Some(v);
        }
        v
    }

    /// Pair-copula arguments `(R_{a|D}, R_{b|D})` of an edge on tree ≥ 2.
    pub fn pair_arguments(&mut self, level: usize, idx: usize) -> (f64, f64) {
        let (ca, cb) = self.spec.vine.children(level, idx);
        let key = &self.spec.vine.edge(level, idx).key;
        let (a, b) = (key.a, key.b);
        let ua = self.side(level - 1, ca, a);
        let ub = self.side(level - 1, cb, b);
        (ua, ub)
    }

    fn locate(&self, i: usize, cond: &[usize]) -> Result<(usize, usize)> {
        self.spec
            .vine
            .find_conditional(i, cond)
            .ok_or_else(|| ModelError::InvalidIndex { i, cond: cond.to_vec() })
    }

    /// `R_{i|D}` at the current point.
    pub fn cdf(&mut self, i: usize, cond: &[usize]) -> Result<f64> {
        let (level, idx) = self.locate(i, cond)?;
        Ok(self.side(level, idx, i))
    }

    /// `R⁻¹_{i|D}(u | x_D)` at the current point.
    pub fn quantile(&mut self, i: usize, cond: &[usize], u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(ModelError::Domain(format!("quantile level {u}")));
        }
        let (mut level, mut idx) = self.locate(i, cond)?;
        let mut w = u;
        loop {
            let key = self.spec.vine.edge(level, idx).key.clone();
            let other = if key.a == i { key.b } else { key.a };
            if level == 1 {
                self.record(Step::TailHInv { of: i, given: other });
                return Ok(self.spec.tails[idx].h_inv(w, self.x[other - 1])?);
            }
            let (ca, cb) = self.spec.vine.children(level, idx);
            let (ci, co) = if key.a == i { (ca, cb) } else { (cb, ca) };
            let v = self.side(level - 1, co, other);
            self.record(Step::PairHInv { edge: key.clone(), of: i });
            w = self.spec.pair(level, idx).h_inv(w, v)?;
            level -= 1;
            idx = ci;
        }
    }
}

/// The five-dimensional specification used in the documentation:
/// HR(1.5), NL(2), L(2.5), Dirichlet(2) on the first tree; Clayton(2),
/// Gumbel(2.5), Gaussian(0.7); Clayton(0.4), Gaussian(−0.3); Gaussian(0.1).
pub fn example_spec_5() -> XVineSpec {
    use crate::vine::example_vine_5;
    let k = EdgeKey::new;
    let t = |kind, th| EdgeFamily::Tail(TailFamily::new(kind, th).expect("valid"));
    let p = |kind, th| EdgeFamily::Pair(PairFamily::new(kind, th).expect("valid"));
    XVineSpec::from_edges(
        example_vine_5(),
        vec![
            (k(1, 2, vec![]), t(TailKind::HuslerReiss, 1.5)),
            (k(2, 3, vec![]), t(TailKind::NegLogistic, 2.0)),
            (k(2, 4, vec![]), t(TailKind::Logistic, 2.5)),
            (k(4, 5, vec![]), t(TailKind::Dirichlet, 2.0)),
            (k(1, 3, vec![2]), p(PairKind::Clayton, 2.0)),
            (k(3, 4, vec![2]), p(PairKind::Gumbel, 2.5)),
            (k(2, 5, vec![4]), p(PairKind::Gaussian, 0.7)),
            (k(1, 4, vec![2, 3]), p(PairKind::Clayton, 0.4)),
            (k(3, 5, vec![2, 4]), p(PairKind::Gaussian, -0.3)),
            (k(1, 5, vec![2, 3, 4]), p(PairKind::Gaussian, 0.1)),
        ],
    )
    .expect("example specification is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics;
    use crate::vine::example_vine_5;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k(a: usize, b: usize, c: &[usize]) -> EdgeKey {
        EdgeKey::new(a, b, c.to_vec())
    }

    fn fam(s: &XVineSpec, key: EdgeKey) -> PairFamily {
        let (l, i) = s.vine().position(&key).unwrap();
        *s.pair(l, i)
    }

    fn spec3() -> XVineSpec {
        let vine = VineSequence::from_keys(vec![1, 2, 3], &[vec![k(1, 2, &[]), k(2, 3, &[])], vec![k(1, 3, &[2])]])
            .unwrap();
        XVineSpec::new(
            vine,
            vec![TailFamily::new(TailKind::HuslerReiss, 1.0).unwrap(), TailFamily::new(TailKind::Logistic, 2.0).unwrap()],
            vec![vec![PairFamily::new(PairKind::Gaussian, 0.5).unwrap()]],
        )
        .unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| (rng.random_range(-2.0..2.0f64)).exp()).collect()
    }

    #[test]
    fn markov_tree_density_is_product() {
        let vine = VineSequence::from_keys(vec![1, 2, 3], &[vec![k(1, 2, &[]), k(2, 3, &[])]]).unwrap();
        let hr = TailFamily::new(TailKind::HuslerReiss, 1.0).unwrap();
        let s = XVineSpec::new(vine, vec![hr, hr], vec![]).unwrap();
        let x = [1.0, 1.0, 1.0];
        assert!((s.density(&x) - hr.density(1.0, 1.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn construction_errors() {
        let vine = example_vine_5();
        let hr = TailFamily::new(TailKind::HuslerReiss, 1.0).unwrap();
        assert!(matches!(XVineSpec::new(vine.clone(), vec![hr; 3], vec![]), Err(ModelError::MissingEdge(_))));
        let mut edges = example_spec_5().edges();
        edges.pop();
        assert!(matches!(XVineSpec::from_edges(vine.clone(), edges), Err(ModelError::MissingEdge(_))));
        let mut edges = example_spec_5().edges();
        edges.push(edges[0].clone());
        assert!(matches!(XVineSpec::from_edges(vine.clone(), edges), Err(ModelError::DuplicateEdge(_))));
        let mut edges = example_spec_5().edges();
        edges[0].1 = EdgeFamily::Pair(PairFamily::independence());
        assert!(matches!(XVineSpec::from_edges(vine, edges), Err(ModelError::WrongFamilyKind { .. })));
    }

    #[test]
    fn homogeneity_five_dim() {
        let s = example_spec_5();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0f64).exp()).collect();
            let sx: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
            let lhs = s.density(&sx);
            let rhs = 2.5f64.powi(-4) * s.density(&x);
            assert!((lhs / rhs - 1.0).abs() < 1e-12, "{x:?} {}", lhs / rhs - 1.0);
        }
    }

    #[test]
    fn conditional_on_one_point_integrates_to_one() {
        let s = spec3();
        let inner = |x1: f64| numerics::quad_1d(|x3| s.density(&[x1, 1.0, x3]), 0.0, f64::INFINITY, 1e-9).unwrap();
        let m = numerics::quad_1d(inner, 0.0, f64::INFINITY, 1e-8).unwrap();
        assert!((m - 1.0).abs() < 1e-3, "{m}");
    }

    #[test]
    fn singleton_conditioning_is_tail_h() {
        let s = example_spec_5();
        let x = [0.7, 1.3, 2.0, 0.4, 1.1];
        let f = s.tail(0);
        assert_eq!(s.conditional_cdf(1, &[2], &x).unwrap(), f.h(0.7, 1.3));
        assert_eq!(s.conditional_cdf(2, &[1], &x).unwrap(), f.h(1.3, 0.7));
        assert_eq!(s.conditional_quantile(1, &[2], 0.3, &x).unwrap(), f.h_inv(0.3, 1.3).unwrap());
        assert!(matches!(s.conditional_cdf(1, &[3], &x), Err(ModelError::InvalidIndex { .. })));
        assert!(matches!(s.conditional_cdf(1, &[], &x), Err(ModelError::InvalidIndex { .. })));
    }

    #[test]
    fn worked_recursion_unrolls() {
        let s = example_spec_5();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_point(&mut rng, 5);
            let r12 = s.tail(0).h(x[0], x[1]);
            let r32 = s.tail(1).h(x[2], x[1]);
            let r42 = s.tail(2).h(x[3], x[1]);
            let c13 = fam(&s, k(1, 3, &[2]));
            let c34 = fam(&s, k(3, 4, &[2]));
            let c14 = fam(&s, k(1, 4, &[2, 3]));
            let r1_23 = c13.h(r12, r32);
            let r4_23 = c34.h(r42, r32);
            let r1_234 = c14.h(r1_23, r4_23);
            let got = s.conditional_cdf(1, &[2, 3, 4], &x).unwrap();
            assert!((got - r1_234).abs() < 1e-15);
        }
    }

    #[test]
    fn worked_recursion_trace() {
        let s = example_spec_5();
        let x = [0.7, 1.3, 2.0, 0.4, 1.1];
        let mut ev = s.evaluator(&x).traced();
        ev.cdf(1, &[2, 3, 4]).unwrap();
        let trace: Vec<String> = ev.take_trace().iter().map(|t| t.to_string()).collect();
        assert_eq!(
            trace,
            ["R_{1|2}", "R_{3|2}", "C_{1|3;2}", "R_{4|2}", "C_{4|3;2}", "C_{1|4;23}"]
        );
    }

    #[test]
    fn quantile_trace_for_two_given_four_five() {
        let s = example_spec_5();
        let x = [f64::NAN, f64::NAN, f64::NAN, 0.4, 0.9];
        let mut ev = s.evaluator(&x).traced();
        let v = ev.quantile(2, &[4, 5], 0.35).unwrap();
        let trace: Vec<String> = ev.take_trace().iter().map(|t| t.to_string()).collect();
        assert_eq!(trace, ["R_{5|4}", "C^-1_{2|5;4}", "R^-1_{2|4}"]);
        let w = fam(&s, k(2, 5, &[4])).h_inv(0.35, s.tail(3).h(0.9, 0.4)).unwrap();
        assert!((v - s.tail(2).h_inv(w, 0.4).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn quantile_round_trip() {
        let s = example_spec_5();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let targets: [(usize, &[usize]); 4] = [(1, &[2, 3, 4, 5]), (5, &[1, 2, 3, 4]), (3, &[2, 4]), (1, &[2, 3])];
        for _ in 0..100 {
            let x = random_point(&mut rng, 5);
            let u: f64 = rng.random_range(0.001..0.999);
            for (i, cond) in targets {
                let q = s.conditional_quantile(i, cond, u, &x).unwrap();
                let mut y = x.clone();
                y[i - 1] = q;
                let back = s.conditional_cdf(i, cond, &y).unwrap();
                assert!((back - u).abs() < 1e-7, "{i}|{cond:?}: {back} vs {u}");
            }
        }
    }

    #[test]
    fn exponent_measure_forms_agree() {
        let s = example_spec_5();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let deg = [1, 3, 1, 2, 1];
        for _ in 0..20 {
            let y = random_point(&mut rng, 5);
            let lam = s.exponent_measure_density(&y);
            let x: Vec<f64> = y.iter().map(|v| 1.0 / v).collect();
            let prod_y2: f64 = y.iter().map(|v| v * v).product();
            assert!((lam * prod_y2 / s.density(&x) - 1.0).abs() < 1e-12);
            // degree form: ∏ y^{2deg−2} ∏ λ_e ∏ c
            let mut log = 0.0;
            for (j, &dg) in deg.iter().enumerate() {
                log += (2.0 * dg as f64 - 2.0) * y[j].ln();
            }
            for (idx, e) in s.vine().level(1).iter().enumerate() {
                let (ya, yb) = (y[e.key.a - 1], y[e.key.b - 1]);
                log += s.tail(idx).log_density(1.0 / ya, 1.0 / yb) - 2.0 * (ya.ln() + yb.ln());
            }
            let mut ev = s.evaluator(&x);
            for level in 2..=4 {
                for idx in 0..s.vine().level(level).len() {
                    let (ua, ub) = ev.pair_arguments(level, idx);
                    log += s.pair(level, idx).log_density(ua, ub);
                }
            }
            assert!((log.exp() / lam - 1.0).abs() < 1e-10);
            let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
            let ratio = s.exponent_measure_density(&y2) / lam;
            assert!((ratio / 2f64.powi(-6) - 1.0).abs() < 1e-10, "{ratio}");
        }
    }

    #[test]
    fn bivariate_hr_exponent_measure() {
        let g = 1.7;
        let vine = VineSequence::from_keys(vec![1, 2], &[vec![k(1, 2, &[])]]).unwrap();
        let s = XVineSpec::new(vine, vec![TailFamily::new(TailKind::HuslerReiss, g).unwrap()], vec![]).unwrap();
        for &(y1, y2) in &[(0.5, 2.0), (1.0, 1.0), (3.0, 0.2)] {
            let z = ((y2 / y1) as f64).ln() / g.sqrt() + g.sqrt() / 2.0;
            let direct = numerics::std_normal_pdf(z) / (y1 * y1 * y2 * g.sqrt());
            let got = s.exponent_measure_density(&[y1, y2]);
            assert!((got / direct - 1.0).abs() < 1e-12, "{got} vs {direct}");
        }
    }

    #[test]
    fn pivot_assembly_matches_density() {
        // r(x) = r12(x1,x2) r23(x2,x3) c(R_{1|2}, R_{3|2})
        let s = spec3();
        let c = s.pair(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = random_point(&mut rng, 3);
            let (r12, r23) = (s.tail(0), s.tail(1));
            let v = r12.density(x[0], x[1])
                * r23.density(x[1], x[2])
                * c.density(r12.h(x[0], x[1]), r23.h(x[2], x[1]));
            assert!((v / s.density(&x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_ignores_deeper_trees() {
        let full = example_spec_5();
        let t2 = full.truncate(2).unwrap();
        let mut edges = full.edges();
        for (key, fam) in edges.iter_mut() {
            if key.level() >= 3 {
                *fam = EdgeFamily::Pair(PairFamily::independence());
            }
        }
        let completed = XVineSpec::from_edges(example_vine_5(), edges).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_point(&mut rng, 5);
            assert!((t2.log_density(&x) - completed.log_density(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let s = example_spec_5();
        let j = s.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert!(v["structure"]["matrix"].is_array());
        assert_eq!(v["edges"].as_array().unwrap().len(), 10);
        assert_eq!(XVineSpec::from_json(&j).unwrap(), s);
        let bad = j.replace("\"hr\"", "\"gaussian\"");
        assert!(XVineSpec::from_json(&bad).is_err());
    }

    #[test]
    fn nonpositive_point_has_zero_density() {
        let s = example_spec_5();
        assert_eq!(s.log_density(&[1.0, 0.0, 1.0, 1.0, 1.0]), f64::NEG_INFINITY);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn homogeneity(lx in proptest::collection::vec(-2.0f64..2.0, 5), ls in (0.1f64..10.0).prop_map(f64::ln)) {
                let s = example_spec_5();
                let x: Vec<f64> = lx.iter().map(|v| v.exp()).collect();
                let sx: Vec<f64> = x.iter().map(|v| v * ls.exp()).collect();
                let lhs = s.log_density(&sx);
                let rhs = s.log_density(&x) - 4.0 * ls;
                // conditionals within 1e-6 of one carry only ~1e-10 relative
                // precision in their complement, hence the scaled tolerance
                prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
            }

            #[test]
            fn quantile_monotone(u1 in 0.001f64..0.999, u2 in 0.001f64..0.999, lx in proptest::collection::vec(-2.0f64..2.0, 5)) {
                prop_assume!((u1 - u2).abs() > 1e-6);
                let s = example_spec_5();
                let x: Vec<f64> = lx.iter().map(|v| v.exp()).collect();
                let q1 = s.conditional_quantile(1, &[2, 3, 4, 5], u1, &x).unwrap();
                let q2 = s.conditional_quantile(1, &[2, 3, 4, 5], u2, &x).unwrap();
                prop_assert_eq!(u1 < u2, q1 < q2);
            }
        }
    }
}
