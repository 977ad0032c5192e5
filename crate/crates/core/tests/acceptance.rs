//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use xvine::estimation::{fit_pipeline, fit_sample, FitOptions, FitReport, PseudoSample, Truncation};
use xvine::families::{PairFamily, PairKind, TailFamily, TailKind};
use xvine::model::{example_spec_5, EdgeFamily, XVineSpec};
use xvine::numerics::{ks_uniform, quad_1d};
use xvine::reference::{gaussian_copula_density, HuslerReiss, Logistic, NumericalDensity};
use xvine::simulation::{sample_conditional, sample_inverted_pareto, SamplingPlan};
use xvine::vine::{example_vine_5, EdgeKey, VineSequence};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn key(a: usize, b: usize, c: &[usize]) -> EdgeKey {
    EdgeKey::new(a, b, c.to_vec())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile(v: &mut [f64], p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let h = p * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Dependence summary of an edge: `χ` on the first tree, `τ` deeper.
fn measure(f: &EdgeFamily) -> f64 {
    match f {
        EdgeFamily::Tail(t) => t.chi(),
        EdgeFamily::Pair(p) => p.tau(),
    }
}

/// Multivariate Pareto sample `Y = 1/Z`: larger values are more extreme.
fn pareto_rows(spec: &XVineSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let draws = sample_inverted_pareto(spec, n, seed).expect("sampling");
    draws.rows.iter().map(|r| r.iter().map(|z| 1.0 / z).collect()).collect()
}

// ---------------------------------------------------------------------------

fn c1_chi() -> Outcome {
    let cases = [
        (TailKind::HuslerReiss, 1.5, 0.54),
        (TailKind::NegLogistic, 2.0, 0.71),
        (TailKind::Logistic, 2.5, 0.68),
        (TailKind::Dirichlet, 2.0, 0.62),
    ];
    let errs: Vec<f64> = cases.iter().map(|&(k, t, c)| (TailFamily::new(k, t).unwrap().chi() - c).abs()).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(worst <= 0.005, format!("max |chi - printed| = {worst:.4} (tol 0.005)"))
}

fn c2_tau() -> Outcome {
    let cases = [(PairKind::Clayton, 2.0, 0.50), (PairKind::Gumbel, 2.5, 0.60), (PairKind::Gaussian, 0.7, 0.49)];
    let worst = cases
        .iter()
        .map(|&(k, t, c)| (PairFamily::new(k, t).unwrap().tau() - c).abs())
        .fold(0.0, f64::max);
    outcome(worst <= 0.005, format!("max |tau - printed| = {worst:.4} (tol 0.005)"))
}

fn c3_telescoping() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = 3 + i % 5;
        let v = VineSequence::random(d, &mut rng);
        let mut table: HashMap<Vec<usize>, f64> = HashMap::new();
        for mask in 1u32..(1 << d) {
            let s: Vec<usize> = (0..d).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect();
            let val = if s.len() == 1 { 1.0 } else { rng.random_range(0.05..20.0) };
            table.insert(s, val);
        }
        let full: Vec<usize> = (1..=d).collect();
        let rhs = v.telescoping_product(|s| table.get(s).copied()).unwrap();
        worst = worst.max((rhs / table[&full] - 1.0).abs());
    }
    outcome(worst <= 1e-10, format!("100 random vines, max rel err = {worst:.2e} (tol 1e-10)"))
}

fn c4_structure_matrices() -> Outcome {
    let v = example_vine_5();
    let m = |rows: [[usize; 5]; 5]| rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let expected = [
        m([[1, 1, 2, 2, 4], [0, 2, 1, 3, 2], [0, 0, 3, 1, 3], [0, 0, 0, 4, 1], [0, 0, 0, 0, 5]]),
        m([[2, 2, 2, 2, 4], [0, 1, 1, 3, 2], [0, 0, 3, 1, 3], [0, 0, 0, 4, 1], [0, 0, 0, 0, 5]]),
        m([[3, 3, 2, 2, 4], [0, 2, 3, 3, 2], [0, 0, 1, 1, 3], [0, 0, 0, 4, 1], [0, 0, 0, 0, 5]]),
        m([[4, 4, 4, 2, 2], [0, 5, 5, 4, 3], [0, 0, 2, 5, 4], [0, 0, 0, 3, 5], [0, 0, 0, 0, 1]]),
        m([[5, 5, 4, 2, 2], [0, 4, 5, 4, 3], [0, 0, 2, 5, 4], [0, 0, 0, 3, 5], [0, 0, 0, 0, 1]]),
    ];
    let matched = (1..=5).filter(|&j| v.to_structure_matrix(Some(j)).unwrap().matrix == expected[j - 1]).count();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut trips = 0;
    for i in 0..100 {
        let d = 3 + i % 6;
        let r = VineSequence::random(d, &mut rng);
        let j = 1 + i % d;
        if r.to_structure_matrix(Some(j)).and_then(|s| s.to_vine()).map(|b| b == r).unwrap_or(false) {
            trips += 1;
        }
    }
    outcome(matched == 5 && trips == 100, format!("{matched}/5 worked matrices, {trips}/100 round trips"))
}

fn random_spec3(rng: &mut ChaCha8Rng) -> XVineSpec {
    let v = VineSequence::random(3, rng);
    let mut tails = Vec::new();
    for _ in 0..2 {
        let kind = TailKind::ALL[rng.random_range(0..4)];
        let theta = match kind {
            TailKind::Logistic => rng.random_range(1.3..4.0),
            TailKind::Dirichlet => rng.random_range(0.6..3.0),
            _ => rng.random_range(0.4..3.0),
        };
        tails.push(TailFamily::new(kind, theta).unwrap());
    }
    let kind = PairKind::ALL[rng.random_range(1..9)];
    let mut tau: f64 = rng.random_range(0.1..0.6);
    if matches!(kind, PairKind::Gaussian | PairKind::Frank) && rng.random::<bool>() {
        tau = -tau;
    }
    let pair = PairFamily::new(kind, kind.tau_inverse(tau).unwrap()).unwrap();
    XVineSpec::new(v, tails, vec![vec![pair]]).unwrap()
}

fn c5_density_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut homo: f64 = 0.0;
    let mut norm: f64 = 0.0;
    let mut names = Vec::new();
    for _ in 0..5 {
        let spec = random_spec3(&mut rng);
        names.push(spec.edges().iter().map(|(_, f)| f.name()).collect::<Vec<_>>().join("/"));
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0f64..1.0).exp()).collect();
            for s in [0.05, 0.7, 3.0, 40.0] {
                let sx: Vec<f64> = x.iter().map(|v| v * s).collect();
                let ratio = spec.density(&sx) / (s.powi(-2) * spec.density(&x));
                homo = homo.max((ratio - 1.0).abs());
            }
        }
        // unit Lebesgue margins: integrate out the two other coordinates on the log scale
        for j in 0..3 {
            let (p, q) = ((j + 1) % 3, (j + 2) % 3);
            for xj in [0.3, 1.0] {
                let outer = |s: f64| {
                    let inner = |t: f64| {
                        let mut x = [0.0; 3];
                        x[j] = xj;
                        x[p] = s.exp();
                        x[q] = t.exp();
                        spec.density(&x) * (s + t).exp()
                    };
                    quad_1d(inner, -30.0, 30.0, 1e-8).unwrap()
                };
                let total = quad_1d(outer, -30.0, 30.0, 1e-6).unwrap();
                norm = norm.max((total - 1.0).abs());
            }
        }
    }
    outcome(
        homo <= 1e-10 && norm <= 1e-3,
        format!("homogeneity max rel err {homo:.1e} (tol 1e-10), margin max |err| {norm:.1e} (tol 1e-3); specs {names:?}"),
    )
}

fn c6_closure() -> Outcome {
    let grid: Vec<f64> = (0..20).map(|i| (i as f64 + 0.5) / 20.0).collect();
    let gamma = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.8, 1.0, 0.0, 1.2, 1.8, 1.2, 0.0]);
    let hr = HuslerReiss::new(gamma).unwrap();
    let rho = hr.conditional_correlation((0, 2), &[1]).unwrap();
    let nd = NumericalDensity::new(3, |x: &[f64]| hr.density(x)).unwrap();
    let x = [1.0, 0.8, 1.0];
    let c = nd.conditional_copula_grid((0, 2), &[1], &grid, &grid, &x).unwrap();
    let mut e_hr: f64 = 0.0;
    for (p, &u) in grid.iter().enumerate() {
        for (q, &v) in grid.iter().enumerate() {
            e_hr = e_hr.max((c[p][q] - gaussian_copula_density(rho, u, v)).abs());
        }
    }
    let theta = 2.5;
    let lg = Logistic::new(3, theta).unwrap();
    let nd = NumericalDensity::new(3, |x: &[f64]| lg.density(x)).unwrap();
    let c = nd.conditional_copula_grid((0, 2), &[1], &grid, &grid, &x).unwrap();
    let sc = PairFamily::new(PairKind::SurvClayton, theta / (theta - 1.0)).unwrap();
    let mut e_l: f64 = 0.0;
    for (p, &u) in grid.iter().enumerate() {
        for (q, &v) in grid.iter().enumerate() {
            e_l = e_l.max((c[p][q] - sc.density(u, v)).abs());
        }
    }
    outcome(
        e_hr <= 1e-4 && e_l <= 1e-4,
        format!("HR vs Gaussian(rho={rho:.4}) sup err {e_hr:.1e}, logistic vs survival Clayton sup err {e_l:.1e} (tol 1e-4)"),
    )
}

fn c7_sampler() -> Outcome {
    let spec = example_spec_5();
    let mut min_p: f64 = 1.0;
    for j in 1..=5 {
        let rows = sample_conditional(&spec, j, 10_000, 70 + j as u64).unwrap();
        let col: Vec<f64> = rows.iter().map(|r| r[j - 1]).collect();
        min_p = min_p.min(ks_uniform(&col).1);
    }

    // d = 2 acceptance rate against (2 − χ)/2, χ by quadrature of the conditional
    let t = TailFamily::new(TailKind::Dirichlet, 2.0).unwrap();
    let chi_q = quad_1d(|y| t.h(1.0, y), 0.0, 1.0, 1e-12).unwrap();
    let v2 = VineSequence::from_index_pairs(vec![1, 2], &[vec![(1, 2)]]).unwrap();
    let s2 = XVineSpec::new(v2, vec![t], vec![]).unwrap();
    let draws = sample_inverted_pareto(&s2, 40_000, 7).unwrap();
    let rate = draws.acceptance_rate();
    let expect = (2.0 - chi_q) / 2.0;
    let se = (expect * (1.0 - expect) / draws.proposals as f64).sqrt();
    let z_rate = (rate - expect).abs() / se;

    // χ of edge 23 from the rejection sampler and from the conditional sampler
    let ip = sample_inverted_pareto(&spec, 40_000, 8).unwrap().rows;
    let k2 = ip.iter().filter(|r| r[1] < 1.0).count() as f64;
    let both = ip.iter().filter(|r| r[1] < 1.0 && r[2] < 1.0).count() as f64;
    let p1 = both / k2;
    let cond = sample_conditional(&spec, 2, 40_000, 9).unwrap();
    let p2 = cond.iter().filter(|r| r[2] < 1.0).count() as f64 / cond.len() as f64;
    let se_chi = (p1 * (1.0 - p1) / k2 + p2 * (1.0 - p2) / cond.len() as f64).sqrt();
    let z_chi = (p1 - p2).abs() / se_chi;
    outcome(
        min_p > 0.01 && z_rate <= 2.0 && z_chi <= 3.0,
        format!(
            "KS min p {min_p:.3} (> 0.01); acceptance {rate:.4} vs {expect:.4}, {z_rate:.2} SE (<= 2); chi23 {p1:.4} vs {p2:.4}, {z_chi:.2} SE (<= 3)"
        ),
    )
}

const REPS: u64 = 50;

fn fit_reps(opts: &FitOptions, seed0: u64) -> Vec<FitReport> {
    let spec = example_spec_5();
    (0..REPS)
        .into_par_iter()
        .map(|r| {
            let x = pareto_rows(&spec, 4000, seed0 + r);
            fit_pipeline(&x, 200, opts).expect("fit")
        })
        .collect()
}

fn c8_c10_recovery() -> (Outcome, Outcome) {
    let truth = example_spec_5();
    let opts = FitOptions { template: Some(truth.clone()), ..FitOptions::default() };
    let reps = fit_reps(&opts, 8_000);
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (k, f) in truth.edges() {
        let target = measure(&f);
        let mut est: Vec<f64> = reps.iter().map(|r| measure(&r.edge(&k).unwrap().family)).collect();
        let med = median(&mut est);
        let iqr = quantile(&mut est, 0.75) - quantile(&mut est, 0.25);
        worst = worst.max((med - target).abs());
        lines.push(format!("{k}:{med:.3}/{target:.2}[iqr {iqr:.3}]"));
    }
    let c8 = outcome(worst <= 0.05, format!("max |median - truth| = {worst:.3} (tol 0.05); {}", lines.join(" ")));

    let tree2_exact = reps.iter().all(|r| r.edges.iter().filter(|e| e.key.level() == 2).all(|e| e.n_eff == 200));
    let meds: Vec<f64> = (1..=4)
        .map(|l| {
            let mut v: Vec<f64> =
                reps.iter().flat_map(|r| r.edges.iter().filter(move |e| e.key.level() == l).map(|e| e.n_eff as f64)).collect();
            median(&mut v)
        })
        .collect();
    let monotone = meds.windows(2).all(|w| w[1] <= w[0]);
    let pct: Vec<String> = meds.iter().map(|m| format!("{:.2}%", 100.0 * m / 4000.0)).collect();
    let c10 = outcome(tree2_exact && monotone, format!("tree-2 n_D == k in every rep: {tree2_exact}; level medians {pct:?}"));
    (c8, c10)
}

fn c9_selection() -> Outcome {
    let truth = example_spec_5();
    let opts = FitOptions { structure: Some(truth.vine().clone()), ..FitOptions::default() };
    let reps = fit_reps(&opts, 9_000);
    let rate = |k: &EdgeKey, name: &str| {
        reps.iter().filter(|r| r.edge(k).unwrap().family.name() == name).count() as f64 / reps.len() as f64
    };
    let hr12 = rate(&key(1, 2, &[]), "hr");
    let nl23 = rate(&key(2, 3, &[]), "neglogistic");
    let deep = key(1, 5, &[2, 3, 4]);
    let deep_true = rate(&deep, "gaussian");
    let deep_indep = rate(&deep, "indep");
    let correct = reps
        .iter()
        .map(|r| {
            truth.edges().iter().filter(|(k, f)| r.edge(k).unwrap().family.name() == f.name()).count() as f64
                / truth.edges().len() as f64
        })
        .sum::<f64>()
        / reps.len() as f64;
    outcome(
        hr12 >= 0.85 && deep_true < 0.30 && deep_indep >= 0.40 && nl23 < hr12,
        format!(
            "HR on 12: {:.0}% (>= 85%); NL on 23: {:.0}% (< HR rate); deepest edge true family {:.0}% (< 30%), independence {:.0}% (>= 40%); overall correct {:.0}%",
            100.0 * hr12,
            100.0 * nl23,
            100.0 * deep_true,
            100.0 * deep_indep,
            100.0 * correct
        ),
    )
}

/// C-vine on ten nodes rooted at 1, 2, 3, ...: HR tails, Gaussian(0.4) on
/// trees 2 to 4, independence above.
fn cvine10() -> XVineSpec {
    let d = 10;
    let keys: Vec<Vec<EdgeKey>> = (1..d)
        .map(|l| (l + 1..=d).map(|b| EdgeKey::new(l, b, (1..l).collect())).collect())
        .collect();
    let v = VineSequence::from_keys((1..=d).collect(), &keys).unwrap();
    let mut edges = Vec::new();
    for level in v.levels() {
        for e in level {
            let l = e.key.level();
            let f = if l == 1 {
                EdgeFamily::Tail(TailFamily::new(TailKind::HuslerReiss, 1.0).unwrap())
            } else if l <= 4 {
                EdgeFamily::Pair(PairFamily::new(PairKind::Gaussian, 0.4).unwrap())
            } else {
                EdgeFamily::Pair(PairFamily::independence())
            };
            edges.push((e.key.clone(), f));
        }
    }
    XVineSpec::from_edges(v, edges).unwrap()
}

fn c11_truncation() -> Outcome {
    let spec = cvine10();
    let given = FitOptions { truncation: Truncation::Mbic, structure: Some(spec.vine().clone()), ..FitOptions::default() };
    let learned = FitOptions { truncation: Truncation::Mbic, ..FitOptions::default() };
    let qs: Vec<(usize, usize)> = (0..20u64)
        .into_par_iter()
        .map(|r| {
            let z = sample_inverted_pareto(&spec, 1000, 11_000 + r).unwrap().rows;
            let ps = PseudoSample::from_inverted_pareto(&z).unwrap();
            (fit_sample(&ps, &given).unwrap().q_star, fit_sample(&ps, &learned).unwrap().q_star)
        })
        .collect();
    let hits = |f: fn(&(usize, usize)) -> usize| qs.iter().filter(|q| (3..=5).contains(&f(q))).count();
    let (h_given, h_learned) = (hits(|q| q.0), hits(|q| q.1));
    let q_given: Vec<usize> = qs.iter().map(|q| q.0).collect();
    let q_learned: Vec<usize> = qs.iter().map(|q| q.1).collect();
    outcome(
        h_given >= 16,
        format!(
            "given structure: q* in 3..=5 in {h_given}/20 reps (>= 16), q* = {q_given:?}; \
             learned structure (informational): {h_learned}/20, q* = {q_learned:?}"
        ),
    )
}

fn c12_worked_traces() -> Outcome {
    let s = example_spec_5();
    let mut ev = s.evaluator(&[0.7, 1.3, 2.0, 0.4, 1.1]).traced();
    ev.cdf(1, &[2, 3, 4]).unwrap();
    let trace: Vec<String> = ev.take_trace().iter().map(|t| t.to_string()).collect();
    let rec_ok = trace == ["R_{1|2}", "R_{3|2}", "C_{1|3;2}", "R_{4|2}", "C_{4|3;2}", "C_{1|4;23}"];

    let table: [(usize, [usize; 5], [EdgeKey; 4]); 5] = [
        (1, [1, 2, 3, 4, 5], [key(1, 2, &[]), key(1, 3, &[2]), key(1, 4, &[2, 3]), key(1, 5, &[2, 3, 4])]),
        (2, [2, 1, 3, 4, 5], [key(1, 2, &[]), key(1, 3, &[2]), key(1, 4, &[2, 3]), key(1, 5, &[2, 3, 4])]),
        (3, [3, 2, 1, 4, 5], [key(2, 3, &[]), key(1, 3, &[2]), key(1, 4, &[2, 3]), key(1, 5, &[2, 3, 4])]),
        (4, [4, 5, 2, 3, 1], [key(4, 5, &[]), key(2, 5, &[4]), key(3, 5, &[2, 4]), key(1, 5, &[2, 3, 4])]),
        (5, [5, 4, 2, 3, 1], [key(4, 5, &[]), key(2, 5, &[4]), key(3, 5, &[2, 4]), key(1, 5, &[2, 3, 4])]),
    ];
    let orders_ok = table.iter().all(|(j, sigma, edges)| {
        let o = s.vine().sampling_order(*j).unwrap();
        o.sigma == sigma.to_vec() && o.edges == edges.to_vec() && SamplingPlan::new(&s, *j).unwrap().order() == sigma.to_vec()
    });
    let plan = SamplingPlan::new(&s, 4).unwrap();
    let (_, steps) = plan.transform_traced(&s, &[0.3, 0.6, 0.2, 0.8, 0.5], true).unwrap();
    let steps: Vec<String> = steps.iter().map(|t| t.to_string()).collect();
    let inv_ok = steps.windows(3).any(|w| w == ["R_{5|4}", "C^-1_{2|5;4}", "R^-1_{2|4}"]);
    outcome(
        rec_ok && orders_ok && inv_ok,
        format!("R_1|234 trace {rec_ok}; sampling orders {orders_ok}; R^-1_2|45 trace {inv_ok}"),
    )
}

fn emit(n: u32, name: &str, secs: f64, o: &Outcome, failed: &mut Vec<u32>) {
    let tag = if o.ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {n:>2} {name} ({secs:.1}s): {}", o.detail);
    if !o.ok {
        failed.push(n);
    }
}

fn main() {
    // `cargo test` passes harness flags; a bare argument selects criteria by number
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: u32| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut failed = Vec::new();
    let single: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "tail chi closed forms", c1_chi),
        (2, "pair tau maps", c2_tau),
        (3, "telescoping identity", c3_telescoping),
        (4, "structure matrices", c4_structure_matrices),
        (5, "density homogeneity and margins", c5_density_validity),
        (6, "parametric family closure", c6_closure),
        (7, "sampler correctness", c7_sampler),
        (9, "family selection", c9_selection),
        (11, "mBIC truncation", c11_truncation),
        (12, "worked-example traces", c12_worked_traces),
    ];
    for (n, name, f) in single {
        if n == 9 && (wanted(8) || wanted(10)) {
            let t = Instant::now();
            let (c8, c10) = c8_c10_recovery();
            let secs = t.elapsed().as_secs_f64();
            if wanted(8) {
                emit(8, "estimation recovery", secs, &c8, &mut failed);
            }
            if wanted(10) {
                emit(10, "effective sample sizes", secs, &c10, &mut failed);
            }
        }
        if wanted(n) {
            let t = Instant::now();
            let o = f();
            emit(n, name, t.elapsed().as_secs_f64(), &o, &mut failed);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
