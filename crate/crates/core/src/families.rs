//! Bivariate building blocks: tail copula densities for the first tree and
//! pair copulas for deeper trees.
//!
//! Every family here is exchangeable, so a single conditional function serves
//! both orientations: `tail_h(x, y) = R_{1|2}(x | y)` and
//! `pair_h(u, v) = ∂C(u, v)/∂v`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError, Transform};

/// Inputs to pair-copula functions are clamped to `[EPS, 1 − EPS]`.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("parameter {theta} outside the domain of {family}")]
    Domain { family: String, theta: f64 },
    #[error("argument outside domain: {0}")]
    Argument(String),
    #[error("unknown family name {0:?}")]
    UnknownName(String),
    #[error("no closed-form inverse for {0}")]
    NoClosedForm(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, FamilyError>;

fn clamp01(u: f64) -> f64 {
    u.clamp(EPS, 1.0 - EPS)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(e^a + e^b)`.
fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Invert an increasing function on `(0, 1)` by searching on the logit scale.
fn invert_unit<F: Fn(f64) -> f64>(f: F, w: f64) -> Result<f64> {
    let g = |t: f64| f(1.0 / (1.0 + (-t).exp()));
    let t = numerics::invert_monotone(g, w, (-2.0, 2.0), 1e-13)?;
    Ok(1.0 / (1.0 + (-t).exp()))
}

// ---------------------------------------------------------------------------
// Tail copula families

/// Parametric families of bivariate tail copula densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TailKind {
    #[serde(rename = "hr")]
    HuslerReiss,
    #[serde(rename = "logistic")]
    Logistic,
    #[serde(rename = "neglogistic")]
    NegLogistic,
    #[serde(rename = "dirichlet")]
    Dirichlet,
}

impl TailKind {
    pub const ALL: [TailKind; 4] = [TailKind::HuslerReiss, TailKind::NegLogistic, TailKind::Logistic, TailKind::Dirichlet];

    pub fn name(&self) -> &'static str {
        match self {
            TailKind::HuslerReiss => "hr",
            TailKind::Logistic => "logistic",
            TailKind::NegLogistic => "neglogistic",
            TailKind::Dirichlet => "dirichlet",
        }
    }

    pub fn in_domain(&self, theta: f64) -> bool {
        theta.is_finite()
            && match self {
                TailKind::Logistic => theta > 1.0,
                _ => theta > 0.0,
            }
    }

    /// Parameter box used for estimation.
    pub fn search_box(&self) -> (f64, f64) {
        match self {
            TailKind::HuslerReiss => (1e-3, 50.0),
            TailKind::Logistic => (1.0 + 1e-6, 28.0),
            TailKind::NegLogistic | TailKind::Dirichlet => (1e-3, 28.0),
        }
    }

    pub fn transform(&self) -> Transform {
        match self {
            TailKind::Logistic => Transform::LogShifted(1.0),
            _ => Transform::Log,
        }
    }
}

impl fmt::Display for TailKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TailKind {
    type Err = FamilyError;
    fn from_str(s: &str) -> Result<Self> {
        TailKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| FamilyError::UnknownName(s.into()))
    }
}

/// A bivariate tail copula density `r(x, y; θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFamily {
    pub kind: TailKind,
    pub theta: f64,
}

impl TailFamily {
    pub fn new(kind: TailKind, theta: f64) -> Result<Self> {
        if !kind.in_domain(theta) {
            return Err(FamilyError::Domain { family: kind.name().into(), theta });
        }
        Ok(TailFamily { kind, theta })
    }

    /// Log density; `-∞` outside `(0, ∞)²`.
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        if !(x > 0.0 && y > 0.0) {
            return f64::NEG_INFINITY;
        }
        let t = self.theta;
        // written in ln y and r = ln(x/y) so that scaling both arguments is exact
        let ly = y.ln();
        let r = (x / y).ln();
        match self.kind {
            TailKind::HuslerReiss => {
                let z = r - 0.5 * t;
                -ly - r - 0.5 * (2.0 * std::f64::consts::PI * t).ln() - z * z / (2.0 * t)
            }
            TailKind::Logistic => (t - 1.0).ln() - ly + (t - 1.0) * r + (1.0 / t - 2.0) * softplus(t * r),
            TailKind::NegLogistic => (1.0 + t).ln() - ly - (t + 1.0) * r - (1.0 / t + 2.0) * softplus(-t * r),
            TailKind::Dirichlet => {
                std::f64::consts::LN_2 + statrs::function::gamma::ln_gamma(2.0 * t)
                    - 2.0 * statrs::function::gamma::ln_gamma(t)
                    - ly
                    - (2.0 * t + 1.0) * softplus(r)
                    + t * r
            }
        }
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        self.log_density(x, y).exp()
    }

    /// Conditional distribution `R_{1|2}(x | y) = ∫_0^x r(s, y) ds`.
    pub fn h(&self, x: f64, y: f64) -> f64 {
        if !(y > 0.0) {
            return f64::NAN;
        }
        if x <= 0.0 {
            return 0.0;
        }
        if x.is_infinite() {
            return 1.0;
        }
        let t = self.theta;
        let lr = (x / y).ln();
        match self.kind {
            TailKind::HuslerReiss => numerics::std_normal_cdf((lr - 0.5 * t) / t.sqrt()),
            TailKind::Logistic => -((1.0 / t - 1.0) * softplus(t * lr)).exp_m1(),
            TailKind::NegLogistic => (-(1.0 / t + 1.0) * softplus(-t * lr)).exp(),
            TailKind::Dirichlet => {
                let p = 1.0 / (1.0 + (-lr).exp());
                statrs::function::beta::beta_reg(t + 1.0, t, p)
            }
        }
    }

    /// Inverse of [`TailFamily::h`] in its first argument.
    pub fn h_inv(&self, u: f64, y: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) || !(y > 0.0) {
            return Err(FamilyError::Argument(format!("tail h-inverse at u={u}, y={y}")));
        }
        let t = self.theta;
        let lr = match self.kind {
            TailKind::HuslerReiss => 0.5 * t + t.sqrt() * numerics::std_normal_quantile(u)?,
            TailKind::Logistic => {
                // 1 + s = (1 - u)^{θ/(1-θ)}
                let l = t / (1.0 - t) * (-u).ln_1p();
                ln_expm1(l) / t
            }
            TailKind::NegLogistic => {
                let l = -u.ln() * t / (1.0 + t);
                -ln_expm1(l) / t
            }
            TailKind::Dirichlet => {
                let f = |s: f64| statrs::function::beta::beta_reg(t + 1.0, t, 1.0 / (1.0 + (-s).exp()));
                numerics::invert_monotone(f, u, (-1.0, 1.0), 1e-13)?
            }
        };
        Ok(y * lr.exp())
    }

    /// Tail dependence coefficient `χ = R(1, 1)`.
    pub fn chi(&self) -> f64 {
        let t = self.theta;
        match self.kind {
            TailKind::HuslerReiss => 2.0 - 2.0 * numerics::std_normal_cdf(t.sqrt() / 2.0),
            TailKind::Logistic => 2.0 - 2f64.powf(1.0 / t),
            TailKind::NegLogistic => 2f64.powf(-1.0 / t),
            TailKind::Dirichlet => {
                let f = |x: f64| statrs::function::beta::beta_reg(t + 1.0, t, 1.0 / (1.0 + x));
                numerics::quad_1d(f, 0.0, 1.0, 1e-12).unwrap_or(f64::NAN)
            }
        }
    }
}

/// `ln(e^l − 1)` for `l > 0`.
fn ln_expm1(l: f64) -> f64 {
    if l > 30.0 {
        l + (-(-l).exp()).ln_1p()
    } else {
        l.exp_m1().ln()
    }
}

// ---------------------------------------------------------------------------
// Pair copula families

/// Parametric families of bivariate copulas used from the second tree on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairKind {
    #[serde(rename = "indep")]
    Independence,
    #[serde(rename = "gaussian")]
    Gaussian,
    #[serde(rename = "clayton")]
    Clayton,
    #[serde(rename = "gumbel")]
    Gumbel,
    #[serde(rename = "frank")]
    Frank,
    #[serde(rename = "joe")]
    Joe,
    #[serde(rename = "survclayton")]
    SurvClayton,
    #[serde(rename = "survgumbel")]
    SurvGumbel,
    #[serde(rename = "survjoe")]
    SurvJoe,
}

impl PairKind {
    pub const ALL: [PairKind; 9] = [
        PairKind::Independence,
        PairKind::Gaussian,
        PairKind::Clayton,
        PairKind::SurvClayton,
        PairKind::Gumbel,
        PairKind::SurvGumbel,
        PairKind::Frank,
        PairKind::Joe,
        PairKind::SurvJoe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PairKind::Independence => "indep",
            PairKind::Gaussian => "gaussian",
            PairKind::Clayton => "clayton",
            PairKind::Gumbel => "gumbel",
            PairKind::Frank => "frank",
            PairKind::Joe => "joe",
            PairKind::SurvClayton => "survclayton",
            PairKind::SurvGumbel => "survgumbel",
            PairKind::SurvJoe => "survjoe",
        }
    }

    /// Number of free parameters.
    pub fn n_params(&self) -> usize {
        if *self == PairKind::Independence {
            0
        } else {
            1
        }
    }

    fn base(&self) -> (PairKind, bool) {
        match self {
            PairKind::SurvClayton => (PairKind::Clayton, true),
            PairKind::SurvGumbel => (PairKind::Gumbel, true),
            PairKind::SurvJoe => (PairKind::Joe, true),
            k => (*k, false),
        }
    }

    pub fn in_domain(&self, theta: f64) -> bool {
        if *self == PairKind::Independence {
            return true;
        }
        theta.is_finite()
            && match self.base().0 {
                PairKind::Gaussian => theta > -1.0 && theta < 1.0,
                PairKind::Clayton => theta > 0.0,
                PairKind::Gumbel | PairKind::Joe => theta >= 1.0,
                PairKind::Frank => theta != 0.0,
                _ => true,
            }
    }

    /// Parameter box used for estimation.
    pub fn search_box(&self) -> (f64, f64) {
        match self.base().0 {
            PairKind::Independence => (0.0, 0.0),
            PairKind::Gaussian => (-0.999, 0.999),
            PairKind::Clayton => (1e-6, 28.0),
            PairKind::Gumbel => (1.0 + 1e-6, 17.0),
            PairKind::Frank => (-35.0, 35.0),
            PairKind::Joe => (1.0 + 1e-6, 30.0),
            _ => unreachable!(),
        }
    }

    pub fn transform(&self) -> Transform {
        match self.base().0 {
            PairKind::Gaussian => Transform::Atanh,
            PairKind::Clayton => Transform::Log,
            PairKind::Gumbel | PairKind::Joe => Transform::LogShifted(1.0),
            _ => Transform::Identity,
        }
    }

    /// Parameter matching a Kendall's tau value.
    ///
    /// Closed form for Gaussian, Clayton and Gumbel (and their rotations);
    /// Frank and Joe are inverted numerically.
    pub fn tau_inverse(&self, tau: f64) -> Result<f64> {
        if !(tau > -1.0 && tau < 1.0) {
            return Err(FamilyError::Argument(format!("tau = {tau}")));
        }
        let bad = || FamilyError::Argument(format!("tau = {tau} not attainable by {}", self.name()));
        match self.base().0 {
            PairKind::Independence => {
                if tau == 0.0 {
                    Ok(0.0)
                } else {
                    Err(bad())
                }
            }
            PairKind::Gaussian => Ok((std::f64::consts::FRAC_PI_2 * tau).sin()),
            PairKind::Clayton => {
                if tau > 0.0 {
                    Ok(2.0 * tau / (1.0 - tau))
                } else {
                    Err(bad())
                }
            }
            PairKind::Gumbel => {
                if tau >= 0.0 {
                    Ok(1.0 / (1.0 - tau))
                } else {
                    Err(bad())
                }
            }
            PairKind::Frank => {
                if tau == 0.0 {
                    return Err(bad());
                }
                let f = |th: f64| frank_tau(th);
                Ok(numerics::invert_monotone(f, tau, (-1.0, 1.0), 1e-12)?)
            }
            PairKind::Joe => {
                if tau < 0.0 {
                    return Err(bad());
                }
                let f = |s: f64| joe_tau(1.0 + s.exp());
                let s = numerics::invert_monotone(f, tau, (-2.0, 2.0), 1e-12)?;
                Ok(1.0 + s.exp())
            }
            _ => unreachable!(),
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairKind {
    type Err = FamilyError;
    fn from_str(s: &str) -> Result<Self> {
        PairKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| FamilyError::UnknownName(s.into()))
    }
}

/// A bivariate copula `C(u, v; θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFamily {
    pub kind: PairKind,
    pub theta: f64,
}

impl PairFamily {
    pub fn new(kind: PairKind, theta: f64) -> Result<Self> {
        if !kind.in_domain(theta) {
            return Err(FamilyError::Domain { family: kind.name().into(), theta });
        }
        let theta = if kind == PairKind::Independence { 0.0 } else { theta };
        Ok(PairFamily { kind, theta })
    }

    pub fn independence() -> Self {
        PairFamily { kind: PairKind::Independence, theta: 0.0 }
    }

    pub fn is_independence(&self) -> bool {
        self.kind == PairKind::Independence || (self.kind == PairKind::Frank && self.theta.abs() < 1e-10)
    }

    pub fn log_density(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let (base, surv) = self.kind.base();
        let (u, v) = if surv { (1.0 - u, 1.0 - v) } else { (u, v) };
        base_log_density(base, self.theta, u, v)
    }

    pub fn density(&self, u: f64, v: f64) -> f64 {
        self.log_density(u, v).exp()
    }

    /// Conditional distribution `∂C(u, v)/∂v`.
    pub fn h(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let (base, surv) = self.kind.base();
        if surv {
            1.0 - base_h(base, self.theta, 1.0 - u, 1.0 - v)
        } else {
            base_h(base, self.theta, u, v)
        }
    }

    /// Inverse of [`PairFamily::h`] in its first argument.
    pub fn h_inv(&self, w: f64, v: f64) -> Result<f64> {
        let (w, v) = (clamp01(w), clamp01(v));
        let (base, surv) = self.kind.base();
        if surv {
            Ok(1.0 - base_h_inv(base, self.theta, 1.0 - w, 1.0 - v)?)
        } else {
            base_h_inv(base, self.theta, w, v)
        }
    }

    /// Kendall's tau.
    pub fn tau(&self) -> f64 {
        let t = self.theta;
        match self.kind.base().0 {
            PairKind::Independence => 0.0,
            PairKind::Gaussian => std::f64::consts::FRAC_2_PI * t.asin(),
            PairKind::Clayton => t / (t + 2.0),
            PairKind::Gumbel => 1.0 - 1.0 / t,
            PairKind::Frank => frank_tau(t),
            PairKind::Joe => joe_tau(t),
            _ => unreachable!(),
        }
    }
}

fn frank_tau(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        return t / 9.0;
    }
    let g = |s: f64| if s.abs() < 1e-12 { 1.0 } else { s / s.exp_m1() };
    let (lo, hi) = if t > 0.0 { (0.0, t) } else { (t, 0.0) };
    let integral = numerics::quad_1d(g, lo, hi, 1e-13).unwrap_or(f64::NAN);
    let debye = integral.copysign(t) / t;
    1.0 - 4.0 / t * (1.0 - debye)
}

/// Joe's tau via its series `1 − 4 Σ 1/(k(θk+2)(θ(k−1)+2))`.
fn joe_tau(t: f64) -> f64 {
    const K: usize = 4000;
    let mut s = 0.0;
    for k in (1..=K).rev() {
        let k = k as f64;
        s += 1.0 / (k * (t * k + 2.0) * (t * (k - 1.0) + 2.0));
    }
    // Σ_{k>K} ≈ ∫_{K+1/2}^∞ dk / (θ² k³)
    let kk = K as f64 + 0.5;
    s += 1.0 / (2.0 * t * t * kk * kk);
    1.0 - 4.0 * s
}

fn base_log_density(kind: PairKind, t: f64, u: f64, v: f64) -> f64 {
    match kind {
        PairKind::Independence => 0.0,
        PairKind::Gaussian => {
            let x = numerics::std_normal_quantile(u).unwrap_or(f64::NAN);
            let y = numerics::std_normal_quantile(v).unwrap_or(f64::NAN);
            let r2 = 1.0 - t * t;
            -0.5 * r2.ln() - (t * t * (x * x + y * y) - 2.0 * t * x * y) / (2.0 * r2)
        }
        PairKind::Clayton => {
            let (lu, lv) = (u.ln(), v.ln());
            (1.0 + t).ln() - (1.0 + t) * (lu + lv) - (2.0 + 1.0 / t) * clayton_log_a(t, lu, lv)
        }
        PairKind::Gumbel => {
            let (x, y) = (-u.ln(), -v.ln());
            let la = logaddexp(t * x.ln(), t * y.ln());
            let a1 = (la / t).exp();
            -a1 + x + y + (t - 1.0) * (x.ln() + y.ln()) + (2.0 / t - 2.0) * la + (1.0 + (t - 1.0) / a1).ln()
        }
        PairKind::Frank => {
            if t.abs() < 1e-10 {
                return 0.0;
            }
            let num = (t * -(-t).exp_m1()).ln() - t * (u + v);
            let den = -(-t).exp_m1() - (-t * u).exp_m1() * (-t * v).exp_m1();
            num - 2.0 * den.abs().ln()
        }
        PairKind::Joe => {
            let (ub, vb) = (1.0 - u, 1.0 - v);
            let (pu, pv) = (ub.powf(t), vb.powf(t));
            let s = pu + pv - pu * pv;
            (1.0 / t - 2.0) * s.ln() + (t - 1.0) * (ub.ln() + vb.ln()) + (t - 1.0 + s).ln()
        }
        _ => unreachable!(),
    }
}

/// `ln(u^{−θ} + v^{−θ} − 1)` from logs of the arguments.
fn clayton_log_a(t: f64, lu: f64, lv: f64) -> f64 {
    let (a, b) = (-t * lu, -t * lv);
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
}

fn base_h(kind: PairKind, t: f64, u: f64, v: f64) -> f64 {
    match kind {
        PairKind::Independence => u,
        PairKind::Gaussian => {
            let x = numerics::std_normal_quantile(u).unwrap_or(f64::NAN);
            let y = numerics::std_normal_quantile(v).unwrap_or(f64::NAN);
            numerics::std_normal_cdf((x - t * y) / (1.0 - t * t).sqrt())
        }
        PairKind::Clayton => {
            let (lu, lv) = (u.ln(), v.ln());
            (-(t + 1.0) * lv - (1.0 + 1.0 / t) * clayton_log_a(t, lu, lv)).exp().min(1.0)
        }
        PairKind::Gumbel => {
            let (x, y) = (-u.ln(), -v.ln());
            let la = logaddexp(t * x.ln(), t * y.ln());
            let a1 = (la / t).exp();
            (-a1 + y + (t - 1.0) * y.ln() + (1.0 / t - 1.0) * la).exp().min(1.0)
        }
        PairKind::Frank => {
            if t.abs() < 1e-10 {
                return u;
            }
            let ev = (-t * v).exp();
            let a = (-t * u).exp_m1();
            let b = (-t).exp_m1();
            let bv = (-t * v).exp_m1();
            (ev * a / (b + a * bv)).clamp(0.0, 1.0)
        }
        PairKind::Joe => {
            let (ub, vb) = (1.0 - u, 1.0 - v);
            let (pu, pv) = (ub.powf(t), vb.powf(t));
            let s = pu + pv - pu * pv;
            ((1.0 / t - 1.0) * s.ln() + (t - 1.0) * vb.ln()).exp() * (1.0 - pu)
        }
        _ => unreachable!(),
    }
}

fn base_h_inv(kind: PairKind, t: f64, w: f64, v: f64) -> Result<f64> {
    let u = match kind {
        PairKind::Independence => w,
        PairKind::Gaussian => {
            let z = numerics::std_normal_quantile(w)?;
            let y = numerics::std_normal_quantile(v)?;
            numerics::std_normal_cdf(z * (1.0 - t * t).sqrt() + t * y)
        }
        PairKind::Clayton => {
            let lv = v.ln();
            let b = -t * lv;
            let tt = -t / (1.0 + t) * (w.ln() + (t + 1.0) * lv);
            let lb = tt + (-(b - tt).exp_m1() + (-tt).exp()).ln();
            (-lb / t).exp()
        }
        PairKind::Frank => {
            if t.abs() < 1e-10 {
                return Ok(w);
            }
            let b = (-t).exp_m1();
            let a = w * b / ((-t * v).exp() * (1.0 - w) + w);
            -a.ln_1p() / t
        }
        PairKind::Gumbel | PairKind::Joe => invert_unit(|u| base_h(kind, t, u, v), w)?,
        _ => unreachable!(),
    };
    Ok(clamp01(u))
}
