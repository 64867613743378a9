//! Shared mathematical kernels: the standard normal distribution, log-normal
//! moments and the moment-matched log-normal sum, logistic affinity curves,
//! monotone table inversion, a quasi-Newton nonlinear solver and a
//! golden-section maximiser.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("argument {value} outside the domain of {what}")]
    OutOfDomain { what: &'static str, value: f64 },
    #[error("log-normal sum over an empty component list")]
    EmptySum,
    #[error("solver did not converge after {iterations} iterations (residual norm {final_norm:e})")]
    NoConvergence { iterations: usize, final_norm: f64 },
    #[error("residual function returned a non-finite value")]
    NonFiniteResidual,
    #[error("value lies below the range of the table")]
    BelowRange,
    #[error("invalid monotone table: {0}")]
    InvalidTable(String),
}

// ---------------------------------------------------------------------------
// Standard normal
// ---------------------------------------------------------------------------

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function, accurate in both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile `z` with `|Φ(z) − p| < 1e-10`.
///
/// Acklam's rational approximation followed by two Halley refinements against
/// the tail-accurate `erfc`-based distribution function.
pub fn normal_quantile(p: f64) -> Result<f64, NumericsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::OutOfDomain { what: "normal_quantile", value: p });
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let mut x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = normal_cdf(x) - p;
        let u = e / normal_pdf(x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Log-normal
// ---------------------------------------------------------------------------

/// Parameters `(μ, σ)` of a log-normal variable: `log Y ~ N(μ, σ²)`.
///
/// Money is expressed in millions of euros, so `mu` is in log-millions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    /// `E(Y) = exp(μ + σ²/2)`.
    pub fn mean(&self) -> f64 {
        expected_fee(self)
    }

    /// `Var(Y) = (exp(σ²) − 1)·exp(2μ + σ²)`.
    pub fn variance(&self) -> f64 {
        fee_variance(self)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.sigma == 0.0 {
            return if x.ln() >= self.mu { 1.0 } else { 0.0 };
        }
        normal_cdf((x.ln() - self.mu) / self.sigma)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || self.sigma == 0.0 {
            return 0.0;
        }
        normal_pdf((x.ln() - self.mu) / self.sigma) / (x * self.sigma)
    }

    pub fn quantile(&self, p: f64) -> Result<f64, NumericsError> {
        Ok((self.mu + self.sigma * normal_quantile(p)?).exp())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.mu + self.sigma * z).exp()
    }
}

/// Expected value of a log-normal fee, `exp(μ + σ²/2)`.
pub fn expected_fee(params: &LogNormalParams) -> f64 {
    (params.mu + 0.5 * params.sigma * params.sigma).exp()
}

/// Variance of a log-normal fee, `(exp(σ²) − 1)·exp(2μ + σ²)`.
pub fn fee_variance(params: &LogNormalParams) -> f64 {
    let s2 = params.sigma * params.sigma;
    s2.exp_m1() * (2.0 * params.mu + s2).exp()
}

/// Moment-matched log-normal approximation of a sum of independent
/// log-normals.
///
/// `σ*² = log(Σ e^{2μᵢ+σᵢ²}(e^{σᵢ²}−1) / (Σ e^{μᵢ+σᵢ²/2})² + 1)` and
/// `μ* = log Σ e^{μᵢ+σᵢ²/2} − σ*²/2`; the result has exactly the mean and
/// variance of the sum. Evaluated with a common shift so large `μᵢ` cannot
/// overflow.
pub fn marlow_approx(components: &[LogNormalParams]) -> Result<LogNormalParams, NumericsError> {
    if components.is_empty() {
        return Err(NumericsError::EmptySum);
    }
    if components.len() == 1 {
        return Ok(components[0]);
    }
    let shift = components
        .iter()
        .map(|c| c.mu + 0.5 * c.sigma * c.sigma)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut first = 0.0;
    let mut second = 0.0;
    for c in components {
        let s2 = c.sigma * c.sigma;
        let m = c.mu + 0.5 * s2 - shift;
        first += m.exp();
        second += (2.0 * m).exp() * s2.exp_m1();
    }
    let sigma2 = (second / (first * first)).ln_1p();
    let mu = shift + first.ln() - 0.5 * sigma2;
    Ok(LogNormalParams { mu, sigma: sigma2.sqrt() })
}

/// Left-hand side of the deterministic chance constraint, `μ* + z σ*` with
/// `z = Φ⁻¹(1 − α)`; the caller compares it with `log(B_max)`.
pub fn chance_bound(total: &LogNormalParams, alpha: f64) -> Result<f64, NumericsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(NumericsError::OutOfDomain { what: "chance_bound alpha", value: alpha });
    }
    if total.sigma == 0.0 {
        return Ok(total.mu);
    }
    Ok(total.mu + normal_quantile(1.0 - alpha)? * total.sigma)
}

// ---------------------------------------------------------------------------
// Affinity
// ---------------------------------------------------------------------------

/// Logistic affinity curve `p(b) = 1 / (1 + exp(−(b − center)/scale))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinitySpec {
    pub center: f64,
    pub scale: f64,
}

/// Logistic distribution function evaluated at bid `b`.
pub fn logistic_cdf(b: f64, spec: &AffinitySpec) -> f64 {
    let z = (b - spec.center) / spec.scale;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p'(b)/p(b)` for the logistic curve, `(1 − p(b))/scale`.
pub fn logistic_log_derivative(b: f64, spec: &AffinitySpec) -> f64 {
    // 1 − p(b) is the logistic distribution function reflected about the centre
    let reflected = AffinitySpec { center: -spec.center, scale: spec.scale };
    logistic_cdf(-b, &reflected) / spec.scale
}

// ---------------------------------------------------------------------------
// Monotone tables
// ---------------------------------------------------------------------------

/// Tolerance under which a table is still treated as nondecreasing.
pub const MONOTONE_TOL: f64 = 1e-5;

/// A tabulated nondecreasing function on a strictly ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneTable {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl MonotoneTable {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, NumericsError> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(NumericsError::InvalidTable(format!(
                "need two or more paired knots, got {} xs and {} ys",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NumericsError::InvalidTable("xs must be strictly ascending".into()));
        }
        if ys.windows(2).any(|w| w[1] < w[0] - MONOTONE_TOL) {
            return Err(NumericsError::InvalidTable("ys must be nondecreasing".into()));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(NumericsError::InvalidTable("non-finite knot".into()));
        }
        Ok(Self { xs, ys })
    }

    /// Linear interpolation of the tabulated function at `x` (clamped to the
    /// grid ends).
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x);
        let (x0, x1, y0, y1) = (self.xs[k - 1], self.xs[k], self.ys[k - 1], self.ys[k]);
        y0 + (x - x0) / (x1 - x0) * (y1 - y0)
    }

    /// Smallest `x` at which the table reaches `y`, by linear interpolation.
    ///
    /// Values above the last knot clamp to the last grid point; values below
    /// the first knot return [`NumericsError::BelowRange`].
    pub fn invert(&self, y: f64) -> Result<f64, NumericsError> {
        monotone_invert(self, y)
    }
}

/// See [`MonotoneTable::invert`]. Flat segments resolve to their left end.
pub fn monotone_invert(table: &MonotoneTable, y: f64) -> Result<f64, NumericsError> {
    let n = table.ys.len();
    if y.is_nan() || y < table.ys[0] {
        return Err(NumericsError::BelowRange);
    }
    if y > table.ys[n - 1] {
        return Ok(table.xs[n - 1]);
    }
    // first knot whose value reaches y
    let k = table.ys.partition_point(|&v| v < y);
    if k == 0 {
        return Ok(table.xs[0]);
    }
    let (x0, x1, y0, y1) = (table.xs[k - 1], table.xs[k], table.ys[k - 1], table.ys[k]);
    Ok(x0 + (y - y0) / (y1 - y0) * (x1 - x0))
}

// ---------------------------------------------------------------------------
// Broyden
// ---------------------------------------------------------------------------

/// Settings of [`broyden_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroydenOptions {
    /// Target infinity norm of the residual.
    pub tol: f64,
    /// Maximum number of accepted or refreshed steps.
    pub max_iter: usize,
    /// Maximum step halvings in the line search.
    pub max_halvings: usize,
    /// Relative forward-difference step, `h = rel_step·(1 + |x|)`.
    pub rel_step: f64,
    /// Re-approximate the Jacobian by finite differences after this many
    /// accepted steps; `0` relies on rank-one updates alone and `1` gives a
    /// damped Newton iteration.
    #[serde(default)]
    pub refresh_every: usize,
}

impl Default for BroydenOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500, max_halvings: 20, rel_step: 1e-6, refresh_every: 0 }
    }
}

/// Outcome of a converged [`broyden_solve`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct BroydenSolution {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub jacobian_evaluations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn fd_jacobian<F>(residual: &mut F, x: &[f64], fx: &[f64], rel_step: f64) -> Result<DMatrix<f64>, NumericsError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let m = fx.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = rel_step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let fp = residual(&xp);
        if fp.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteResidual);
        }
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fx[i]) / h;
        }
        xp[j] = x[j];
    }
    Ok(jac)
}

/// Solves `residual(x) = 0` by Broyden's quasi-Newton method.
///
/// The initial Jacobian is a forward-difference approximation; each accepted
/// step applies the rank-one "good Broyden" update. Steps are damped by
/// halving until the residual infinity norm decreases. When the line search
/// fails on an updated Jacobian, the Jacobian is re-approximated by finite
/// differences and the step retried; failure on a fresh Jacobian ends the run
/// with [`NumericsError::NoConvergence`]. With `refresh_every > 0` the
/// Jacobian is also re-approximated on that schedule.
pub fn broyden_solve<F>(mut residual: F, x0: &[f64], opts: &BroydenOptions) -> Result<BroydenSolution, NumericsError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = x0.to_vec();
    let mut fx = residual(&x);
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteResidual);
    }
    let mut norm = inf_norm(&fx);
    if norm <= opts.tol {
        return Ok(BroydenSolution { x, residual_norm: norm, iterations: 0, jacobian_evaluations: 0 });
    }
    let mut jac = fd_jacobian(&mut residual, &x, &fx, opts.rel_step)?;
    let mut jac_evals = 1;
    let mut fresh = true;
    let mut since_refresh = 0;
    for iter in 1..=opts.max_iter {
        if opts.refresh_every > 0 && since_refresh >= opts.refresh_every {
            jac = fd_jacobian(&mut residual, &x, &fx, opts.rel_step)?;
            jac_evals += 1;
            fresh = true;
            since_refresh = 0;
        }
        let rhs = -DVector::from_column_slice(&fx);
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                if fresh {
                    return Err(NumericsError::NoConvergence { iterations: iter, final_norm: norm });
                }
                jac = fd_jacobian(&mut residual, &x, &fx, opts.rel_step)?;
                jac_evals += 1;
                fresh = true;
                continue;
            }
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let fnew = residual(&xn);
            if fnew.iter().all(|v| v.is_finite()) && inf_norm(&fnew) < norm {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            None => {
                if fresh {
                    return Err(NumericsError::NoConvergence { iterations: iter, final_norm: norm });
                }
                jac = fd_jacobian(&mut residual, &x, &fx, opts.rel_step)?;
                jac_evals += 1;
                fresh = true;
                since_refresh = 0;
            }
            Some((xn, fnew)) => {
                since_refresh += 1;
                let s = DVector::from_iterator(x.len(), xn.iter().zip(x.iter()).map(|(a, b)| a - b));
                let y = DVector::from_iterator(fx.len(), fnew.iter().zip(fx.iter()).map(|(a, b)| a - b));
                let ss = s.dot(&s);
                if ss > 0.0 {
                    let u = (y - &jac * &s) / ss;
                    jac += u * s.transpose();
                }
                x = xn;
                fx = fnew;
                norm = inf_norm(&fx);
                fresh = false;
                if norm <= opts.tol {
                    return Ok(BroydenSolution { x, residual_norm: norm, iterations: iter, jacobian_evaluations: jac_evals });
                }
            }
        }
    }
    Err(NumericsError::NoConvergence { iterations: opts.max_iter, final_norm: norm })
}

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

/// Maximises a unimodal function on `[a, b]` by golden-section search,
/// returning the abscissa once the bracket is narrower than `tol`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" estimator). `sorted` must be ascending and nonempty.
pub fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nearest-rank sample quantile: the `⌈p·n⌉`-th smallest value (1-based,
/// at least the first). `sorted` must be ascending and nonempty.
pub fn nearest_rank_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}
