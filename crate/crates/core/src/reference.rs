//! Closed-form multivariate tail copula densities and brute-force numerical
//! operations on arbitrary low-dimensional densities.
//!
//! These serve as independent oracles for the vine machinery: marginal and
//! conditional densities here are obtained by direct quadrature, never by
//! the vine recursion.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{self, NumericsError};

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("quadrature path limited to d <= 4, got d = {0}")]
    DimensionTooLarge(usize),
    #[error("variogram is not conditionally negative definite")]
    NotAVariogram,
    #[error("invalid index sets: {0}")]
    Indices(String),
    #[error("parameter outside domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ReferenceError>;

/// `d`-variate Hüsler–Reiss tail copula density parametrised by a variogram.
#[derive(Debug, Clone)]
pub struct HuslerReiss {
    gamma: DMatrix<f64>,
    k: usize,
    prec: DMatrix<f64>,
    log_norm: f64,
}

impl HuslerReiss {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        let d = gamma.nrows();
        if d < 2 || gamma.ncols() != d {
            return Err(ReferenceError::NotAVariogram);
        }
        let k = d - 1;
        let sigma = sigma_k(&gamma, k);
        let chol = sigma.clone().cholesky().ok_or(ReferenceError::NotAVariogram)?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let prec = chol.inverse();
        let m = (d - 1) as f64;
        let log_norm = -0.5 * m * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det;
        Ok(HuslerReiss { gamma, k, prec, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn variogram(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let k = self.k;
        let xk = x[k];
        let mut bar = DVector::zeros(d - 1);
        let mut log_jac = 0.0;
        let mut p = 0;
        for i in 0..d {
            if i == k {
                continue;
            }
            bar[p] = (x[i] / xk).ln() - 0.5 * self.gamma[(i, k)];
            log_jac -= x[i].ln();
            p += 1;
        }
        let quad = (bar.transpose() * &self.prec * &bar)[(0, 0)];
        log_jac + self.log_norm - 0.5 * quad
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Correlation of the Gaussian copula `c_{I;J}` for `|I| = 2`
    /// (0-based indices), from the conditional covariance of `Σ^{(k)}`, `k ∈ J`.
    pub fn conditional_correlation(&self, i: (usize, usize), cond: &[usize]) -> Result<f64> {
        let k = *cond.first().ok_or_else(|| ReferenceError::Indices("empty conditioning set".into()))?;
        let d = self.dim();
        let sigma = sigma_k(&self.gamma, k);
        // positions in Σ^{(k)}, which skips row/column k
        let pos = |v: usize| if v < k { v } else { v - 1 };
        let ii = [pos(i.0), pos(i.1)];
        let jj: Vec<usize> = cond.iter().filter(|&&v| v != k).map(|&v| pos(v)).collect();
        if i.0 == i.1 || cond.contains(&i.0) || cond.contains(&i.1) || i.0 >= d || i.1 >= d {
            return Err(ReferenceError::Indices(format!("I = {i:?}, J = {cond:?}")));
        }
        let s_ii = DMatrix::from_fn(2, 2, |r, c| sigma[(ii[r], ii[c])]);
        let s = if jj.is_empty() {
            s_ii
        } else {
            let s_ij = DMatrix::from_fn(2, jj.len(), |r, c| sigma[(ii[r], jj[c])]);
            let s_jj = DMatrix::from_fn(jj.len(), jj.len(), |r, c| sigma[(jj[r], jj[c])]);
            let inv = s_jj.try_inverse().ok_or(ReferenceError::NotAVariogram)?;
            s_ii - &s_ij * inv * s_ij.transpose()
        };
        Ok(s[(0, 1)] / (s[(0, 0)] * s[(1, 1)]).sqrt())
    }
}

/// `Σ^{(k)} = ½(Γ_ik + Γ_jk − Γ_ij)_{i,j≠k}`.
pub fn sigma_k(gamma: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = gamma.nrows();
    let idx: Vec<usize> = (0..d).filter(|&i| i != k).collect();
    DMatrix::from_fn(d - 1, d - 1, |r, c| {
        let (i, j) = (idx[r], idx[c]);
        0.5 * (gamma[(i, k)] + gamma[(j, k)] - gamma[(i, j)])
    })
}

/// Symmetric `d`-variate logistic tail copula density, `θ > 1`.
#[derive(Debug, Clone, Copy)]
pub struct Logistic {
    pub d: usize,
    pub theta: f64,
}

impl Logistic {
    pub fn new(d: usize, theta: f64) -> Result<Self> {
        if !(theta > 1.0) {
            return Err(ReferenceError::Domain(format!("logistic θ = {theta}")));
        }
        Ok(Logistic { d, theta })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let t = self.theta;
        let d = self.d;
        let c: f64 = (1..d).map(|k| (k as f64 * t - 1.0).ln()).sum();
        let s: f64 = x.iter().map(|v| v.powf(t)).sum();
        c + (1.0 / t - d as f64) * s.ln() + (t - 1.0) * x.iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

/// Symmetric `d`-variate negative logistic tail copula density, `θ > 0`.
#[derive(Debug, Clone, Copy)]
pub struct NegLogistic {
    pub d: usize,
    pub theta: f64,
}

impl NegLogistic {
    pub fn new(d: usize, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(ReferenceError::Domain(format!("negative logistic θ = {theta}")));
        }
        Ok(NegLogistic { d, theta })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let t = self.theta;
        let d = self.d;
        let c: f64 = (1..d).map(|k| (1.0 + k as f64 * t).ln()).sum();
        let s: f64 = x.iter().map(|v| v.powf(-t)).sum();
        c + (-1.0 / t - d as f64) * s.ln() - (t + 1.0) * x.iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

/// Half-width of the log-scale integration window for positive coordinates.
const LOG_RANGE: f64 = 30.0;
const QUAD_TOL: f64 = 1e-11;

/// Brute-force marginals and conditionals of a `d`-variate tail copula
/// density, `d ≤ 4`. Indices are 0-based.
pub struct NumericalDensity<F: Fn(&[f64]) -> f64> {
    d: usize,
    r: F,
}

impl<F: Fn(&[f64]) -> f64> NumericalDensity<F> {
    pub fn new(d: usize, r: F) -> Result<Self> {
        if d > 4 {
            return Err(ReferenceError::DimensionTooLarge(d));
        }
        Ok(NumericalDensity { d, r })
    }

    /// Integrate `r` over the coordinates in `free`, each over `(0, upper]`,
    /// with the remaining coordinates fixed at `x`.
    fn integrate(&self, x: &[f64], free: &[(usize, f64)]) -> f64 {
        match free.split_first() {
            None => (self.r)(x),
            Some((&(j, upper), rest)) => {
                let hi = if upper.is_finite() { upper.ln() } else { LOG_RANGE };
                let lo = hi.min(0.0) - LOG_RANGE;
                let mut y = x.to_vec();
                let f = |t: f64| {
                    let v = t.exp();
                    y[j] = v;
                    self.integrate(&y, rest) * v
                };
                // the closure mutates a private copy, so wrap it for Fn
                let cell = std::cell::RefCell::new(f);
                numerics::quad_1d(|t| (&mut *cell.borrow_mut())(t), lo, hi, QUAD_TOL).unwrap_or(f64::NAN)
            }
        }
    }

    /// Marginal density of the coordinates in `keep` at `x` (other entries ignored).
    pub fn marginal(&self, keep: &[usize], x: &[f64]) -> f64 {
        if keep.len() == 1 {
            return 1.0;
        }
        let free: Vec<(usize, f64)> = (0..self.d).filter(|j| !keep.contains(j)).map(|j| (j, f64::INFINITY)).collect();
        self.integrate(x, &free)
    }

    /// `R_{i|J}(x_i | x_J)` by integrating the `{i} ∪ J` marginal.
    pub fn conditional_cdf(&self, i: usize, cond: &[usize], x: &[f64]) -> f64 {
        let mut free: Vec<(usize, f64)> = vec![(i, x[i])];
        free.extend((0..self.d).filter(|j| *j != i && !cond.contains(j)).map(|j| (j, f64::INFINITY)));
        self.integrate(x, &free) / self.marginal(cond, x)
    }

    /// `r_{i|J}(x_i | x_J)`.
    pub fn conditional_density(&self, i: usize, cond: &[usize], x: &[f64]) -> f64 {
        let mut keep = cond.to_vec();
        keep.push(i);
        self.marginal(&keep, x) / self.marginal(cond, x)
    }

    /// `R⁻¹_{i|J}(u | x_J)` by safeguarded Newton steps on `ln x_i`.
    pub fn conditional_quantile(&self, i: usize, cond: &[usize], u: f64, x: &[f64]) -> Result<f64> {
        let mut y = x.to_vec();
        let g = |t: f64, y: &mut Vec<f64>| {
            y[i] = t.exp();
            self.conditional_cdf(i, cond, y) - u
        };
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        while g(lo, &mut y) > 0.0 {
            lo -= 4.0;
            if lo < -LOG_RANGE {
                return Err(NumericsError::BracketFailure { target: u, f_lo: lo, f_hi: hi }.into());
            }
        }
        while g(hi, &mut y) < 0.0 {
            hi += 4.0;
            if hi > LOG_RANGE {
                return Err(NumericsError::BracketFailure { target: u, f_lo: lo, f_hi: hi }.into());
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..100 {
            let gv = g(t, &mut y);
            if gv.abs() < 1e-12 {
                break;
            }
            if gv > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let dens = self.conditional_density(i, cond, &y) * y[i];
            let step = gv / dens;
            let next = t - step;
            t = if dens > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-13 || step.abs() < 1e-13 {
                break;
            }
        }
        Ok(t.exp())
    }

    /// `c_{I;J}(u_I; x_J)` for a pair `I`.
    pub fn conditional_copula_density(&self, pair: (usize, usize), cond: &[usize], u: (f64, f64), x: &[f64]) -> Result<f64> {
        Ok(self.conditional_copula_grid(pair, cond, &[u.0], &[u.1], x)?[0][0])
    }

    /// `c_{I;J}` on the grid `us × vs`, reusing the marginal quantiles.
    pub fn conditional_copula_grid(
        &self,
        pair: (usize, usize),
        cond: &[usize],
        us: &[f64],
        vs: &[f64],
        x: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let (a, b) = pair;
        if a == b || cond.contains(&a) || cond.contains(&b) || cond.is_empty() {
            return Err(ReferenceError::Indices(format!("I = {pair:?}, J = {cond:?}")));
        }
        let qa = us.iter().map(|&u| self.conditional_quantile(a, cond, u, x)).collect::<Result<Vec<_>>>()?;
        let qb = vs.iter().map(|&v| self.conditional_quantile(b, cond, v, x)).collect::<Result<Vec<_>>>()?;
        let mut y = x.to_vec();
        let da: Vec<f64> = qa
            .iter()
            .map(|&v| {
                y[a] = v;
                self.conditional_density(a, cond, &y)
            })
            .collect();
        let db: Vec<f64> = qb
            .iter()
            .map(|&v| {
                y[b] = v;
                self.conditional_density(b, cond, &y)
            })
            .collect();
        let mut keep = cond.to_vec();
        keep.extend([a, b]);
        let base = self.marginal(cond, x);
        let mut out = vec![vec![0.0; vs.len()]; us.len()];
        for (p, &xa) in qa.iter().enumerate() {
            for (q, &xb) in qb.iter().enumerate() {
                y[a] = xa;
                y[b] = xb;
                let joint = self.marginal(&keep, &y) / base;
                out[p][q] = joint / (da[p] * db[q]);
            }
        }
        Ok(out)
    }
}

/// Bivariate Gaussian copula density.
pub fn gaussian_copula_density(rho: f64, u: f64, v: f64) -> f64 {
    let x = numerics::std_normal_quantile(u).unwrap_or(f64::NAN);
    let y = numerics::std_normal_quantile(v).unwrap_or(f64::NAN);
    let r2 = 1.0 - rho * rho;
    (-(rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)).exp() / r2.sqrt()
}
