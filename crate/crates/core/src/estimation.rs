//! Estimation and model selection from threshold exceedances.
//!
//! Data are standardised by ranks, `Û = 1 − (rank − 0.5)/n` with maximal
//! ranks, and rescaled to `Ẑ = (n/k)Û`. Rows with `Û_j < k/n` form the
//! exceedance set `K_j`. First-tree tail copulas are fitted on `K_a` and on
//! `K_b` separately and the two estimates averaged; an edge `(a, b; D)` on a
//! deeper tree is fitted to the conditional pseudo-observations of the rows in
//! `K_D = ∩_{j∈D} K_j`. Families are chosen by AIC, trees by maximum spanning
//! trees, and the truncation level by a modified BIC.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::families::{PairFamily, PairKind, TailFamily, TailKind};
use crate::model::{EdgeFamily, ModelError, XVineSpec};
use crate::numerics::{self, NumericsError, Transform};
use crate::vine::{EdgeKey, StructureMatrix, VineError, VineSequence};

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("need at least two rows, found {0}")]
    TooFewRows(usize),
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("non-finite or non-positive value at row {row}, column {col}")]
    BadValue { row: usize, col: usize },
    #[error("column {0} is constant")]
    DegenerateColumn(usize),
    #[error("threshold count k = {k} must lie in 1..{n}")]
    InvalidK { k: usize, n: usize },
    #[error("{what}: {n} observations, need at least {min}")]
    InsufficientData { what: String, n: usize, min: usize },
    #[error("no rows exceed the threshold in all of {0:?}")]
    EmptyConditioningSet(Vec<usize>),
    #[error("likelihood maximisation failed: {0}")]
    NoConvergence(String),
    #[error("no spanning tree exists on level {0}")]
    InfeasibleLevel(usize),
    #[error("empty family catalogue")]
    EmptyCatalogue,
    #[error("invalid option: {0}")]
    Options(String),
    #[error("edge {edge}: {source}")]
    Edge {
        edge: String,
        #[source]
        source: Box<EstimationError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vine(#[from] VineError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

/// Pseudo-observations clamped into `[CLAMP, 1 − CLAMP]`.
const CLAMP: f64 = 1e-10;
/// Grid points on the transformed parameter scale before the Brent polish.
const GRID: usize = 12;

// ---------------------------------------------------------------------------
// Standardisation

/// Rank-standardised data with their exceedance sets.
///
/// Rows are stored row-major; labels in the public methods are 1-based.
/// For direct inverted Pareto input the threshold scale is one: `k = n`,
/// `Û = Ẑ = Z` and `K_j = {Z_j < 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSample {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub u: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    exceed: Vec<Vec<usize>>,
    mask: Vec<Vec<bool>>,
}

fn check_rows(x: &[Vec<f64>]) -> Result<usize> {
    if x.len() < 2 {
        return Err(EstimationError::TooFewRows(x.len()));
    }
    let d = x[0].len();
    for (i, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(EstimationError::Ragged { row: i, found: r.len(), expected: d });
        }
    }
    Ok(d)
}

/// Standardise raw data by maximal ranks and select the top `k` per column.
pub fn rank_transform(x: &[Vec<f64>], k: usize) -> Result<PseudoSample> {
    let d = check_rows(x)?;
    let n = x.len();
    if k == 0 || k >= n {
        return Err(EstimationError::InvalidK { k, n });
    }
    let mut u = vec![vec![0.0; d]; n];
    let mut z = vec![vec![0.0; d]; n];
    let mut mask = vec![vec![false; n]; d];
    for j in 0..d {
        let mut col = Vec::with_capacity(n);
        for (i, r) in x.iter().enumerate() {
            if !r[j].is_finite() {
                return Err(EstimationError::BadValue { row: i, col: j + 1 });
            }
            col.push(r[j]);
        }
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted[0] == sorted[n - 1] {
            return Err(EstimationError::DegenerateColumn(j + 1));
        }
        for i in 0..n {
            let rank = sorted.partition_point(|s| *s <= col[i]);
            let up = (n - rank) as f64 + 0.5;
            u[i][j] = up / n as f64;
            z[i][j] = up / k as f64;
            mask[j][i] = rank > n - k;
        }
    }
    Ok(PseudoSample::assemble(n, d, k, u, z, mask))
}

impl PseudoSample {
    /// Use inverted multivariate Pareto draws as they are.
    pub fn from_inverted_pareto(z: &[Vec<f64>]) -> Result<Self> {
        let d = check_rows(z)?;
        let n = z.len();
        let mut mask = vec![vec![false; n]; d];
        for (i, r) in z.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(EstimationError::BadValue { row: i, col: j + 1 });
                }
                mask[j][i] = *v < 1.0;
            }
        }
        Ok(PseudoSample::assemble(n, d, n, z.to_vec(), z.to_vec(), mask))
    }

    fn assemble(n: usize, d: usize, k: usize, u: Vec<Vec<f64>>, z: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> Self {
        let exceed = mask.iter().map(|m| (0..n).filter(|&i| m[i]).collect()).collect();
        PseudoSample { n, d, k, u, z, exceed, mask }
    }

    /// `K_j` as sorted row indices.
    pub fn exceedances(&self, j: usize) -> &[usize] {
        &self.exceed[j - 1]
    }

    /// `K_J`: rows exceeding the threshold in every column of `labels`.
    pub fn rows_exceeding(&self, labels: &[usize]) -> Vec<usize> {
        match labels.split_first() {
            None => (0..self.n).collect(),
            Some((first, rest)) => self.exceed[first - 1]
                .iter()
                .copied()
                .filter(|&i| rest.iter().all(|&j| self.mask[j - 1][i]))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Dependence measures

/// Empirical tail dependence coefficient of a pair or triple,
/// `|K_a ∩ K_b (∩ K_c)|` over the average `|K_j|`.
///
/// With rank-standardised data and no ties the denominator is `k`.
pub fn empirical_chi(ps: &PseudoSample, labels: &[usize]) -> f64 {
    let mean = labels.iter().map(|&j| ps.exceed[j - 1].len() as f64).sum::<f64>() / labels.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    ps.rows_exceeding(labels).len() as f64 / mean
}

/// Kendall's tau-b in `O(n log n)`.
pub fn empirical_tau(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "samples differ in length");
    let n = u.len();
    if n < 2 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| u[i].total_cmp(&u[j]).then(v[i].total_cmp(&v[j])));
    let pairs = |t: usize| (t * (t - 1) / 2) as f64;
    let n0 = pairs(n);
    let (mut n1, mut n3) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && u[idx[j]] == u[idx[i]] {
            j += 1;
        }
        n1 += pairs(j - i);
        let mut a = i;
        while a < j {
            let mut b = a + 1;
            while b < j && v[idx[b]] == v[idx[a]] {
                b += 1;
            }
            n3 += pairs(b - a);
            a = b;
        }
        i = j;
    }
    let mut ys: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as f64;
    let mut n2 = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        n2 += pairs(j - i);
        i = j;
    }
    let den = ((n0 - n1) * (n0 - n2)).sqrt();
    if den == 0.0 {
        return 0.0;
    }
    (n0 - n1 - n2 + n3 - 2.0 * swaps) / den
}

/// Sort in place, returning the number of strict inversions.
fn merge_count(x: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = x.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut s = merge_count(&mut x[..mid], &mut buf[..mid]) + merge_count(&mut x[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut o) = (0, mid, 0);
    while i < mid && j < n {
        if x[j] < x[i] {
            buf[o] = x[j];
            j += 1;
            s += (mid - i) as u64;
        } else {
            buf[o] = x[i];
            i += 1;
        }
        o += 1;
    }
    buf[o..o + mid - i].copy_from_slice(&x[i..mid]);
    o += mid - i;
    buf[o..o + n - j].copy_from_slice(&x[j..n]);
    x.copy_from_slice(&buf[..n]);
    s
}

// ---------------------------------------------------------------------------
// Edge fits

/// Maximise `f` over `bounds`: a grid on the transformed scale, then Brent
/// between the neighbours of the best grid point. Returns
/// `(argmax, max, at_boundary)`.
fn maximize<F: Fn(f64) -> f64>(f: F, bounds: (f64, f64), tr: Transform) -> Result<(f64, f64, bool)> {
    let (a, b) = (tr.forward(bounds.0), tr.forward(bounds.1));
    let g = |t: f64| {
        let v = f(tr.inverse(t));
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let ts: Vec<f64> = (0..GRID).map(|i| a + (b - a) * i as f64 / (GRID - 1) as f64).collect();
    let vals: Vec<f64> = ts.iter().map(|&t| g(t)).collect();
    let m = (0..GRID).fold(0, |m, i| if vals[i] < vals[m] { i } else { m });
    if !vals[m].is_finite() {
        return Err(EstimationError::NoConvergence("likelihood not finite anywhere on the search grid".into()));
    }
    let lo = ts[m.saturating_sub(1)];
    let hi = ts[(m + 1).min(GRID - 1)];
    let (mut t, mut v) = numerics::fminbnd(g, lo, hi, 1e-9)?;
    if vals[m] < v {
        t = ts[m];
        v = vals[m];
    }
    let edge = 1e-5 * (b - a);
    let boundary = t - a < edge || b - t < edge;
    Ok((tr.inverse(t), -v, boundary))
}

/// Averaged first-tree estimate for one tail family.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub family: TailFamily,
    pub theta_a: f64,
    pub theta_b: f64,
    pub loglik_a: f64,
    pub loglik_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub boundary: bool,
}

impl TailFit {
    /// Average of the two maximised log pseudo-likelihoods.
    pub fn loglik(&self) -> f64 {
        0.5 * (self.loglik_a + self.loglik_b)
    }
}

/// Minimum sample size for any single-edge fit.
pub const MIN_FIT: usize = 10;

fn fit_tail_subsample(pts: &[(f64, f64)], kind: TailKind) -> Result<(f64, f64, bool)> {
    let ll = |t: f64| pts.iter().map(|&(x, y)| TailFamily { kind, theta: t }.log_density(x, y)).sum::<f64>();
    maximize(ll, kind.search_box(), kind.transform())
}

/// Fit a tail family to edge `{a, b}` on `K_a` and on `K_b` and average.
pub fn fit_tail_edge(ps: &PseudoSample, a: usize, b: usize, kind: TailKind) -> Result<TailFit> {
    if a == b || a == 0 || b == 0 || a > ps.d || b > ps.d {
        return Err(EstimationError::Options(format!("invalid first-tree edge ({a}, {b})")));
    }
    // arguments in label order so that swapping a and b is exact
    let (lo, hi) = (a.min(b), a.max(b));
    let sub = |j: usize| -> Result<(f64, f64, bool, usize)> {
        let rows = ps.exceedances(j);
        if rows.len() < MIN_FIT {
            return Err(EstimationError::InsufficientData { what: format!("K_{j}"), n: rows.len(), min: MIN_FIT });
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|&i| (ps.z[i][lo - 1], ps.z[i][hi - 1])).collect();
        let (t, l, bd) = fit_tail_subsample(&pts, kind)?;
        Ok((t, l, bd, rows.len()))
    };
    let (ta, la, ba, na) = sub(a)?;
    let (tb, lb, bb, nb) = sub(b)?;
    let theta = 0.5 * (ta + tb);
    Ok(TailFit {
        family: TailFamily::new(kind, theta).map_err(ModelError::from)?,
        theta_a: ta,
        theta_b: tb,
        loglik_a: la,
        loglik_b: lb,
        n_a: na,
        n_b: nb,
        boundary: ba || bb,
    })
}

/// Maximum pseudo-likelihood fit of a pair copula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFit {
    pub family: PairFamily,
    pub loglik: f64,
    pub boundary: bool,
}

pub fn fit_pair_edge(u: &[f64], v: &[f64], kind: PairKind) -> Result<PairFit> {
    if u.len() != v.len() {
        return Err(EstimationError::Options("pseudo-observation vectors differ in length".into()));
    }
    if u.len() < MIN_FIT {
        return Err(EstimationError::InsufficientData { what: "pair sample".into(), n: u.len(), min: MIN_FIT });
    }
    if kind == PairKind::Independence {
        return Ok(PairFit { family: PairFamily::independence(), loglik: 0.0, boundary: false });
    }
    let ll = |t: f64| u.iter().zip(v).map(|(&x, &y)| PairFamily { kind, theta: t }.log_density(x, y)).sum::<f64>();
    let (theta, loglik, boundary) = maximize(ll, kind.search_box(), kind.transform())?;
    let family = PairFamily::new(kind, theta).map_err(ModelError::from)?;
    Ok(PairFit { family, loglik, boundary })
}

/// How the averaged first-tree AIC combines the two log-likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AicConvention {
    /// `2ν − ½(ℓ_a + ℓ_b)`.
    #[default]
    Paper,
    /// `2ν − (ℓ_a + ℓ_b)`.
    Standard,
}

impl AicConvention {
    pub fn tail_aic(&self, fit: &TailFit) -> f64 {
        let s = fit.loglik_a + fit.loglik_b;
        match self {
            AicConvention::Paper => 2.0 - 0.5 * s,
            AicConvention::Standard => 2.0 - s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailSelection {
    pub fit: TailFit,
    pub aic: f64,
    pub table: Vec<(TailKind, f64)>,
}

/// Pick the tail family with the lowest averaged AIC.
pub fn select_tail_family(
    ps: &PseudoSample,
    a: usize,
    b: usize,
    catalogue: &[TailKind],
    conv: AicConvention,
) -> Result<TailSelection> {
    if catalogue.is_empty() {
        return Err(EstimationError::EmptyCatalogue);
    }
    let mut best: Option<(TailFit, f64)> = None;
    let mut table = Vec::with_capacity(catalogue.len());
    let mut last_err = None;
    for &kind in catalogue {
        match fit_tail_edge(ps, a, b, kind) {
            Ok(fit) => {
                let aic = conv.tail_aic(&fit);
                table.push((kind, aic));
                if best.as_ref().is_none_or(|(_, b)| aic < *b) {
                    best = Some((fit, aic));
                }
            }
            Err(e @ EstimationError::InsufficientData { .. }) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((fit, aic)) => Ok(TailSelection { fit, aic, table }),
        None => Err(last_err.unwrap_or(EstimationError::EmptyCatalogue)),
    }
}

/// Why independence was imposed on an edge instead of selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Forcing {
    LowTau,
    FewObservations,
    FitFailed(String),
}

impl fmt::Display for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Forcing::LowTau => f.write_str("|tau| below threshold"),
            Forcing::FewObservations => f.write_str("too few observations"),
            Forcing::FitFailed(m) => write!(f, "fit failed: {m}"),
        }
    }
}

/// Thresholds of the two independence-forcing rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingRules {
    pub tau_min: f64,
    pub n_min: usize,
}

impl Default for ForcingRules {
    fn default() -> Self {
        ForcingRules { tau_min: 0.05, n_min: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    pub fit: PairFit,
    pub aic: f64,
    pub table: Vec<(PairKind, f64)>,
    pub forced: Option<Forcing>,
}

fn forced_independence(why: Forcing) -> PairSelection {
    PairSelection {
        fit: PairFit { family: PairFamily::independence(), loglik: 0.0, boundary: false },
        aic: 0.0,
        table: Vec::new(),
        forced: Some(why),
    }
}

/// Pick the pair copula with the lowest AIC, after the forcing rules.
pub fn select_pair_family(u: &[f64], v: &[f64], catalogue: &[PairKind], rules: ForcingRules) -> Result<PairSelection> {
    if catalogue.is_empty() {
        return Err(EstimationError::EmptyCatalogue);
    }
    if u.len() < rules.n_min.max(2) {
        return Ok(forced_independence(Forcing::FewObservations));
    }
    if empirical_tau(u, v).abs() < rules.tau_min {
        return Ok(forced_independence(Forcing::LowTau));
    }
    let fits: Vec<(PairKind, Result<PairFit>)> = catalogue.iter().map(|&k| (k, fit_pair_edge(u, v, k))).collect();
    let mut best: Option<(PairFit, f64)> = None;
    let mut table = Vec::with_capacity(fits.len());
    let mut last_err = None;
    for (kind, r) in fits {
        match r {
            Ok(fit) => {
                let aic = 2.0 * kind.n_params() as f64 - 2.0 * fit.loglik;
                table.push((kind, aic));
                if best.as_ref().is_none_or(|(_, b)| aic < *b) {
                    best = Some((fit, aic));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((fit, aic)) => Ok(PairSelection { fit, aic, table, forced: None }),
        None => Err(last_err.unwrap_or(EstimationError::EmptyCatalogue)),
    }
}

// ---------------------------------------------------------------------------
// Pseudo-observations for deeper trees

/// Conditional pseudo-observations `(Û_{a;D}, Û_{b;D})` on the rows of `K_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPairs {
    pub rows: Vec<usize>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Pseudo-observations for edge `key` (level `j ≥ 2`) under a specification
/// fitted at least through tree `j − 1`.
pub fn pseudo_obs_next_tree(ps: &PseudoSample, spec: &XVineSpec, key: &EdgeKey) -> Result<PseudoPairs> {
    if key.cond.is_empty() {
        return Err(EstimationError::Options(format!("edge {key} is on the first tree")));
    }
    if spec.trunc_level() < key.level() - 1 {
        return Err(EstimationError::Options(format!("model stops before tree {}", key.level() - 1)));
    }
    let rows = ps.rows_exceeding(&key.cond);
    if rows.is_empty() {
        return Err(EstimationError::EmptyConditioningSet(key.cond.clone()));
    }
    let mut out = PseudoPairs { rows: Vec::with_capacity(rows.len()), u: Vec::new(), v: Vec::new() };
    for i in rows {
        let mut ev = spec.evaluator(&ps.z[i]);
        let u = ev.cdf(key.a, &key.cond)?;
        let v = ev.cdf(key.b, &key.cond)?;
        if u.is_finite() && v.is_finite() {
            out.rows.push(i);
            out.u.push(u.clamp(CLAMP, 1.0 - CLAMP));
            out.v.push(v.clamp(CLAMP, 1.0 - CLAMP));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Tree learning

/// A weighted candidate edge `{x, y}` between node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub x: usize,
    pub y: usize,
    pub weight: f64,
    pub key: EdgeKey,
}

/// Kruskal on descending weight, ties broken by ascending edge key.
pub fn max_spanning_tree(n_nodes: usize, mut cands: Vec<Candidate>) -> Option<Vec<Candidate>> {
    cands.sort_by(|p, q| q.weight.total_cmp(&p.weight).then_with(|| p.key.cmp(&q.key)));
    let mut parent: Vec<usize> = (0..n_nodes).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut out = Vec::with_capacity(n_nodes.saturating_sub(1));
    for c in cands {
        let (rx, ry) = (find(&mut parent, c.x), find(&mut parent, c.y));
        if rx != ry {
            parent[rx] = ry;
            out.push(c);
            if out.len() + 1 == n_nodes {
                break;
            }
        }
    }
    (out.len() + 1 == n_nodes || n_nodes == 0).then_some(out)
}

/// First tree: maximum spanning tree under `χ̂` weights, as label pairs.
pub fn learn_tree1(ps: &PseudoSample) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for a in 1..=ps.d {
        for b in a + 1..=ps.d {
            cands.push(Candidate { x: a - 1, y: b - 1, weight: empirical_chi(ps, &[a, b]), key: EdgeKey::new(a, b, vec![]) });
        }
    }
    let tree = max_spanning_tree(ps.d, cands).expect("complete graph is connected");
    tree.into_iter().map(|c| (c.x + 1, c.y + 1)).collect()
}

/// The edge a pair of tree-`(j−1)` edges would form, if proximity allows it.
fn join(vine: &VineSequence, level: usize, x: usize, y: usize) -> Option<EdgeKey> {
    let (f, g) = (vine.edge(level, x), vine.edge(level, y));
    let shared = if level == 1 {
        [f.key.a, f.key.b].iter().filter(|v| **v == g.key.a || **v == g.key.b).count()
    } else {
        [f.ends.0, f.ends.1].iter().filter(|v| **v == g.ends.0 || **v == g.ends.1).count()
    };
    if shared != 1 {
        return None;
    }
    let cond: Vec<usize> = f.union.iter().copied().filter(|v| g.union.contains(v)).collect();
    let mut rest = f.union.iter().chain(&g.union).copied().filter(|v| !cond.contains(v));
    let (p, q) = (rest.next()?, rest.next()?);
    Some(EdgeKey::new(p, q, cond))
}

/// All proximity-feasible joins of tree `level` edges, by index pair.
fn feasible_joins(vine: &VineSequence, level: usize) -> Vec<(usize, usize, EdgeKey)> {
    let m = vine.level(level).len();
    let mut out = Vec::new();
    for x in 0..m {
        for y in x + 1..m {
            if let Some(k) = join(vine, level, x, y) {
                out.push((x, y, k));
            }
        }
    }
    out
}

/// Tree `j ≥ 2`: maximum spanning tree under `|τ̂|` over proximity-feasible
/// pairs of tree-`(j−1)` edges; returns index pairs into that tree's edges.
pub fn learn_tree_j(ps: &PseudoSample, spec: &XVineSpec, j: usize) -> Result<Vec<(usize, usize)>> {
    let (pairs, _) = learn_level(ps, spec, j)?;
    Ok(pairs)
}

fn learn_level(ps: &PseudoSample, spec: &XVineSpec, j: usize) -> Result<(Vec<(usize, usize)>, HashMap<EdgeKey, PseudoPairs>)> {
    if j < 2 || spec.trunc_level() < j - 1 {
        return Err(EstimationError::Options(format!("cannot learn tree {j} from a model with {} trees", spec.trunc_level())));
    }
    let joins = feasible_joins(spec.vine(), j - 1);
    let obs: Vec<Option<PseudoPairs>> = joins
        .par_iter()
        .map(|(_, _, key)| match pseudo_obs_next_tree(ps, spec, key) {
            Ok(p) => Ok(Some(p)),
            Err(EstimationError::EmptyConditioningSet(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut cache = HashMap::new();
    let mut cands = Vec::with_capacity(joins.len());
    for ((x, y, key), o) in joins.into_iter().zip(obs) {
        let w = o.as_ref().map_or(0.0, |p| empirical_tau(&p.u, &p.v).abs());
        if let Some(p) = o {
            cache.insert(key.clone(), p);
        }
        cands.push(Candidate { x, y, weight: w, key });
    }
    let n_nodes = spec.vine().level(j - 1).len();
    let tree = max_spanning_tree(n_nodes, cands).ok_or(EstimationError::InfeasibleLevel(j))?;
    Ok((tree.into_iter().map(|c| (c.x, c.y)).collect(), cache))
}

// ---------------------------------------------------------------------------
// Truncation

/// `mBIC(q)` for `q = 1..=Q`, `Q` the deepest fitted tree; `curve[q − 1]`.
pub fn mbic(edges: &[EdgeFit], psi0: f64) -> Vec<f64> {
    let depth = edges.iter().map(|e| e.key.level()).max().unwrap_or(1);
    let mut curve = vec![0.0; depth];
    for q in 2..=depth {
        let psi = psi0.powi(q as i32 - 1);
        let term: f64 = edges
            .iter()
            .filter(|e| e.key.level() == q)
            .map(|e| {
                let dep = match e.family {
                    EdgeFamily::Pair(p) => !p.is_independence(),
                    EdgeFamily::Tail(_) => true,
                };
                let penalty = if dep { (e.n_eff as f64).ln() - 2.0 * (psi / (1.0 - psi)).ln() } else { 0.0 };
                penalty - 2.0 * e.loglik - 2.0 * (1.0 - psi).ln()
            })
            .sum();
        curve[q - 1] = curve[q - 2] + term;
    }
    curve
}

/// Smallest minimiser of an mBIC curve, as a truncation level.
pub fn optimal_truncation(curve: &[f64]) -> usize {
    (0..curve.len()).fold(0, |m, i| if curve[i] < curve[m] { i } else { m }) + 1
}

// ---------------------------------------------------------------------------
// Pipeline

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Fit trees `1..=q` only.
    Fixed(usize),
    /// Fit every tree, then cut at the mBIC minimiser.
    Mbic,
    /// Fit every tree; only the forcing rules introduce independence.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Observations in their original units; larger is more extreme.
    #[default]
    Raw,
    InvertedPareto,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Fixed vine; learned tree by tree when absent.
    pub structure: Option<VineSequence>,
    /// Fixed vine and families; only parameters are estimated.
    pub template: Option<XVineSpec>,
    pub tail_catalogue: Vec<TailKind>,
    pub pair_catalogue: Vec<PairKind>,
    pub truncation: Truncation,
    pub psi0: f64,
    pub aic: AicConvention,
    pub rules: ForcingRules,
    pub input: InputKind,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            structure: None,
            template: None,
            tail_catalogue: TailKind::ALL.to_vec(),
            pair_catalogue: PairKind::ALL.to_vec(),
            truncation: Truncation::Auto,
            psi0: 0.9,
            aic: AicConvention::Paper,
            rules: ForcingRules::default(),
            input: InputKind::Raw,
        }
    }
}

/// Diagnostics for one fitted edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFit {
    pub key: EdgeKey,
    pub family: EdgeFamily,
    /// Maximised log pseudo-likelihood; the average of the two subsample
    /// values on the first tree.
    pub loglik: f64,
    pub aic: f64,
    /// `n_{D_e}`; `|K_a ∪ K_b|` on the first tree.
    pub n_eff: usize,
    pub candidates: Vec<(String, f64)>,
    pub forced: Option<Forcing>,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub spec: XVineSpec,
    /// One record per edge of `spec`, level by level in key order.
    pub edges: Vec<EdgeFit>,
    pub mbic: Vec<f64>,
    pub q_star: usize,
}

impl FitReport {
    /// Edges whose fit failed and were set to independence.
    pub fn failures(&self) -> Vec<String> {
        self.edges
            .iter()
            .filter_map(|e| match &e.forced {
                Some(Forcing::FitFailed(m)) => Some(format!("{}: {m}", e.key)),
                _ => None,
            })
            .collect()
    }

    pub fn edge(&self, key: &EdgeKey) -> Option<&EdgeFit> {
        self.edges.iter().find(|e| &e.key == key)
    }

    pub fn to_json_report(&self) -> Result<FitReportJson> {
        let structure = self.spec.vine().to_structure_matrix(None)?;
        let edges = self
            .edges
            .iter()
            .map(|e| EdgeReportJson {
                a: e.key.a,
                b: e.key.b,
                cond: e.key.cond.clone(),
                family: e.family.name().into(),
                theta: e.family.theta(),
                loglik: e.loglik,
                aic: e.aic,
                n_eff: e.n_eff,
                selected_over: e.candidates.iter().filter(|(n, _)| n != e.family.name()).map(|(n, _)| n.clone()).collect(),
                forced: e.forced.as_ref().map(|f| f.to_string()),
                boundary: e.boundary,
            })
            .collect();
        Ok(FitReportJson { structure, edges, mbic: self.mbic.clone(), q_star: self.q_star })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.to_json_report()?).map_err(|e| ModelError::Json(e.to_string()).into())
    }
}

/// On-disk fit report; a superset of the model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportJson {
    pub structure: StructureMatrix,
    pub edges: Vec<EdgeReportJson>,
    pub mbic: Vec<f64>,
    pub q_star: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReportJson {
    pub a: usize,
    pub b: usize,
    pub cond: Vec<usize>,
    pub family: String,
    pub theta: f64,
    #[serde(rename = "logL")]
    pub loglik: f64,
    pub aic: f64,
    pub n_eff: usize,
    pub selected_over: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<String>,
    #[serde(default)]
    pub boundary: bool,
}

/// Standardise `data` according to `opts.input` and run [`fit_sample`].
pub fn fit_pipeline(data: &[Vec<f64>], k: usize, opts: &FitOptions) -> Result<FitReport> {
    let ps = match opts.input {
        InputKind::Raw => rank_transform(data, k)?,
        InputKind::InvertedPareto => PseudoSample::from_inverted_pareto(data)?,
    };
    fit_sample(&ps, opts)
}

fn with_edge<T>(key: &EdgeKey, r: Result<T>) -> Result<T> {
    r.map_err(|e| EstimationError::Edge { edge: key.to_string(), source: Box::new(e) })
}

fn fit_first_tree(ps: &PseudoSample, vine: &VineSequence, opts: &FitOptions) -> Result<Vec<(TailFamily, EdgeFit)>> {
    vine.level(1)
        .par_iter()
        .enumerate()
        .map(|(idx, e)| {
            let key = e.key.clone();
            let (fit, aic, table) = match &opts.template {
                Some(t) => {
                    let kind = t.tail(idx).kind;
                    let fit = with_edge(&key, fit_tail_edge(ps, key.a, key.b, kind))?;
                    let aic = opts.aic.tail_aic(&fit);
                    (fit, aic, Vec::new())
                }
                None => {
                    let s = with_edge(&key, select_tail_family(ps, key.a, key.b, &opts.tail_catalogue, opts.aic))?;
                    let table = s.table.iter().map(|(k, a)| (k.name().to_string(), *a)).collect();
                    (s.fit, s.aic, table)
                }
            };
            let rec = EdgeFit {
                key,
                family: EdgeFamily::Tail(fit.family),
                loglik: fit.loglik(),
                aic,
                n_eff: fit.n_a + fit.n_b - ps.rows_exceeding(&[e.key.a, e.key.b]).len(),
                candidates: table,
                forced: None,
                boundary: fit.boundary,
            };
            Ok((fit.family, rec))
        })
        .collect()
}

fn fit_deeper_edge(obs: &PseudoPairs, key: &EdgeKey, fixed: Option<PairKind>, opts: &FitOptions) -> (PairFamily, EdgeFit) {
    let n = obs.u.len();
    let sel = match fixed {
        Some(PairKind::Independence) => Ok(PairSelection {
            fit: PairFit { family: PairFamily::independence(), loglik: 0.0, boundary: false },
            aic: 0.0,
            table: Vec::new(),
            forced: None,
        }),
        Some(_) if n < MIN_FIT => Ok(forced_independence(Forcing::FewObservations)),
        Some(kind) => fit_pair_edge(&obs.u, &obs.v, kind).map(|fit| PairSelection {
            aic: 2.0 * kind.n_params() as f64 - 2.0 * fit.loglik,
            fit,
            table: Vec::new(),
            forced: None,
        }),
        None => select_pair_family(&obs.u, &obs.v, &opts.pair_catalogue, opts.rules),
    };
    let sel = sel.unwrap_or_else(|e| forced_independence(Forcing::FitFailed(e.to_string())));
    let rec = EdgeFit {
        key: key.clone(),
        family: EdgeFamily::Pair(sel.fit.family),
        loglik: sel.fit.loglik,
        aic: sel.aic,
        n_eff: n,
        candidates: sel.table.iter().map(|(k, a)| (k.name().to_string(), *a)).collect(),
        forced: sel.forced,
        boundary: sel.fit.boundary,
    };
    (sel.fit.family, rec)
}

/// Sequential estimation and selection, tree by tree.
///
/// Edge fits within a tree run in parallel; the result does not depend on
/// the number of threads.
pub fn fit_sample(ps: &PseudoSample, opts: &FitOptions) -> Result<FitReport> {
    let d = ps.d;
    if d < 2 {
        return Err(EstimationError::Options("need at least two variables".into()));
    }
    if !(opts.psi0 > 0.0 && opts.psi0 < 1.0) {
        return Err(EstimationError::Options(format!("psi0 = {} outside (0, 1)", opts.psi0)));
    }
    let given = opts.template.as_ref().map(|t| t.vine().clone()).or_else(|| opts.structure.clone());
    if let Some(g) = &given {
        if g.nodes() != (1..=d).collect::<Vec<_>>().as_slice() {
            return Err(EstimationError::Options(format!("structure has nodes {:?}, data have {d} columns", g.nodes())));
        }
    }
    let mut depth = given.as_ref().map_or(d - 1, |g| g.trunc_level());
    if let Truncation::Fixed(q) = opts.truncation {
        if q == 0 || q > d - 1 {
            return Err(EstimationError::Options(format!("truncation level {q} outside 1..{}", d - 1)));
        }
        depth = depth.min(q);
    }
    let nodes: Vec<usize> = (1..=d).collect();

    let mut vine = match &given {
        Some(g) => g.truncate(1)?,
        None => {
            let t1 = learn_tree1(ps);
            VineSequence::from_index_pairs(nodes.clone(), &[t1])?
        }
    };
    let (tails, mut records): (Vec<TailFamily>, Vec<EdgeFit>) = fit_first_tree(ps, &vine, opts)?.into_iter().unzip();
    let mut pairs: Vec<Vec<PairFamily>> = Vec::new();
    let mut spec = XVineSpec::new(vine.clone(), tails.clone(), Vec::new())?;

    for j in 2..=depth {
        let mut cache = HashMap::new();
        vine = match &given {
            Some(g) => g.truncate(j)?,
            None => {
                let (chosen, c) = learn_level(ps, &spec, j)?;
                cache = c;
                let mut trees: Vec<Vec<(usize, usize)>> =
                    vine.levels().iter().map(|l| l.iter().map(|e| e.ends).collect()).collect();
                trees.push(chosen);
                VineSequence::from_index_pairs(nodes.clone(), &trees)?
            }
        };
        let level: Vec<(PairFamily, EdgeFit)> = vine
            .level(j)
            .par_iter()
            .enumerate()
            .map(|(idx, e)| {
                let key = &e.key;
                let obs = match cache.get(key) {
                    Some(o) => o.clone(),
                    None => match pseudo_obs_next_tree(ps, &spec, key) {
                        Ok(o) => o,
                        Err(EstimationError::EmptyConditioningSet(_)) => PseudoPairs { rows: vec![], u: vec![], v: vec![] },
                        Err(err) => return with_edge(key, Err(err)),
                    },
                };
                let fixed = opts.template.as_ref().map(|t| t.pair(j, idx).kind);
                Ok(fit_deeper_edge(&obs, key, fixed, opts))
            })
            .collect::<Result<_>>()?;
        let (fams, recs): (Vec<PairFamily>, Vec<EdgeFit>) = level.into_iter().unzip();
        pairs.push(fams);
        records.extend(recs);
        spec = XVineSpec::new(vine.clone(), tails.clone(), pairs.clone())?;
    }

    let curve = mbic(&records, opts.psi0);
    let q_star = optimal_truncation(&curve);
    if opts.truncation == Truncation::Mbic && q_star < spec.trunc_level() {
        spec = spec.truncate(q_star)?;
        records.retain(|e| e.key.level() <= q_star);
    }
    Ok(FitReport { spec, edges: records, mbic: curve, q_star })
}
