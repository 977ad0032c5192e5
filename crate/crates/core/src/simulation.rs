//! Exact simulation from X-vine inverted multivariate Pareto distributions.
//!
//! `sample_conditional` draws from `Z | Z_j < 1` by inverse Rosenblatt
//! transformation along the structure matrix with first diagonal entry `j`.
//! `sample_inverted_pareto` mixes these proposals over `j` and thins each
//! draw with probability `1/N(z)`, `N(z) = #{i : z_i < 1}`: the mixture has
//! density `r(z) N(z)/d` on `{min z < 1}`, so the thinned draws have density
//! proportional to `r(z)` there.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelError, Step, XVineSpec};
use crate::numerics::{open01, substream};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("node {0} is not part of the model")]
    UnknownNode(usize),
}

pub type Result<T> = std::result::Result<T, SimulationError>;

/// Rows per independently seeded block.
pub const BLOCK: usize = 512;

/// The order in which coordinates are drawn given `Z_j < 1`, with the
/// conditioning set of each draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    pub j: usize,
    pub steps: Vec<(usize, Vec<usize>)>,
}

impl SamplingPlan {
    pub fn new(spec: &XVineSpec, j: usize) -> Result<Self> {
        if !spec.vine().nodes().contains(&j) {
            return Err(SimulationError::UnknownNode(j));
        }
        let sm = spec.vine().to_structure_matrix(Some(j)).map_err(ModelError::from)?;
        let q = spec.trunc_level();
        let steps = (0..sm.d)
            .map(|k| {
                let top = k.min(q);
                (sm.matrix[k][k], (0..top).map(|i| sm.matrix[i][k]).collect())
            })
            .collect();
        Ok(SamplingPlan { j, steps })
    }

    /// Drawing order `σ_j`.
    pub fn order(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.0).collect()
    }

    /// Map independent uniforms `w` (in drawing order) to a point.
    pub fn transform(&self, spec: &XVineSpec, w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.transform_traced(spec, w, false)?.0)
    }

    /// As [`SamplingPlan::transform`], optionally recording every elementary call.
    pub fn transform_traced(&self, spec: &XVineSpec, w: &[f64], trace: bool) -> Result<(Vec<f64>, Vec<Step>)> {
        let d = spec.dim();
        let mut ev = spec.evaluator(&vec![f64::NAN; d]);
        if trace {
            ev = ev.traced();
        }
        let (first, _) = &self.steps[0];
        ev.set(*first, w[0]);
        for (k, (node, cond)) in self.steps.iter().enumerate().skip(1) {
            let v = ev.quantile(*node, cond, w[k])?;
            ev.set(*node, v);
        }
        let trace = ev.take_trace();
        Ok((ev.point().to_vec(), trace))
    }
}

fn draw_row(plan: &SamplingPlan, spec: &XVineSpec, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let w: Vec<f64> = (0..spec.dim()).map(|_| open01(rng)).collect();
    plan.transform(spec, &w)
}

/// Block sizes covering `n` rows.
fn blocks(n: usize) -> Vec<(u64, usize)> {
    (0..n.div_ceil(BLOCK)).map(|b| (b as u64, BLOCK.min(n - b * BLOCK))).collect()
}

/// `n` draws from `Z | Z_j < 1`.
pub fn sample_conditional(spec: &XVineSpec, j: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let plan = SamplingPlan::new(spec, j)?;
    let parts: Vec<Result<Vec<Vec<f64>>>> = blocks(n)
        .into_par_iter()
        .map(|(b, m)| {
            let mut rng = substream(seed, b);
            (0..m).map(|_| draw_row(&plan, spec, &mut rng)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Inverted Pareto draws together with the number of proposals used.
#[derive(Debug, Clone)]
pub struct ParetoDraws {
    pub rows: Vec<Vec<f64>>,
    pub proposals: usize,
}

impl ParetoDraws {
    /// Accepted draws per proposal; its expectation is `R(𝕃)/d`.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            return f64::NAN;
        }
        self.rows.len() as f64 / self.proposals as f64
    }
}

/// `n` draws from the inverted multivariate Pareto distribution of `spec`.
pub fn sample_inverted_pareto(spec: &XVineSpec, n: usize, seed: u64) -> Result<ParetoDraws> {
    let d = spec.dim();
    let plans: Vec<SamplingPlan> = spec.vine().nodes().iter().map(|&j| SamplingPlan::new(spec, j)).collect::<Result<_>>()?;
    let parts: Vec<Result<(Vec<Vec<f64>>, usize)>> = blocks(n)
        .into_par_iter()
        .map(|(b, m)| {
            let mut rng = substream(seed, b);
            let mut rows = Vec::with_capacity(m);
            let mut proposals = 0;
            while rows.len() < m {
                proposals += 1;
                let i = rng.random_range(0..d);
                let z = draw_row(&plans[i], spec, &mut rng)?;
                let below = z.iter().filter(|&&v| v < 1.0).count();
                if open01(&mut rng) * (below as f64) < 1.0 {
                    rows.push(z);
                }
            }
            Ok((rows, proposals))
        })
        .collect();
    let mut out = ParetoDraws { rows: Vec::with_capacity(n), proposals: 0 };
    for p in parts {
        let (rows, k) = p?;
        out.rows.extend(rows);
        out.proposals += k;
    }
    Ok(out)
}

/// `n` draws from the multivariate Pareto distribution `Y = 1/Z`.
pub fn sample_pareto(spec: &XVineSpec, n: usize, seed: u64) -> Result<ParetoDraws> {
    let mut draws = sample_inverted_pareto(spec, n, seed)?;
    for row in draws.rows.iter_mut() {
        for v in row.iter_mut() {
            *v = 1.0 / *v;
        }
    }
    Ok(draws)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Model tail dependence coefficient `R_I(1, …, 1)` for a pair or triple `I`,
/// as `P(Z_i < 1 ∀ i ∈ I | Z_{I_1} < 1)`.
pub fn model_chi(spec: &XVineSpec, idx: &[usize], n_mc: usize, seed: u64) -> Result<McEstimate> {
    for &i in idx {
        if !spec.vine().nodes().contains(&i) {
            return Err(SimulationError::UnknownNode(i));
        }
    }
    let rows = sample_conditional(spec, idx[0], n_mc, seed)?;
    let hits = rows.iter().filter(|r| idx[1..].iter().all(|&i| r[i - 1] < 1.0)).count();
    let n = rows.len() as f64;
    let p = hits as f64 / n;
    Ok(McEstimate { value: p, se: (p * (1.0 - p) / n).sqrt() })
}
