//! Asymmetric first-price auction with a random reserve price and
//! bid-dependent seller affinity.
//!
//! Equilibrium inverse bidding functions `ψ_c` are found by collocation: the
//! first-order system is discretised on a uniform bid grid with central
//! differences of `F_c ∘ ψ_c` (backward at the right end), the lower
//! boundary condition `ψ_c(b_min) = s̲_c` is imposed exactly, and the
//! resulting nonlinear system is solved by Broyden's method from a
//! shifted-identity warm start.
//! Rounds after a rejection use the reserve distribution truncated below
//! the rejected bid and club-specific lower supports taken from the
//! previous round's solution; a lookup of such solutions at representative
//! rejection thresholds drives the multi-round simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    broyden_solve, golden_section_max, interpolated_quantile, logistic_cdf, logistic_log_derivative, AffinitySpec,
    BroydenOptions, BroydenSolution, LogNormalParams, MonotoneTable, NumericsError, MONOTONE_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("bid {b} outside the window ({tau_prev}, {upsilon}]")]
    OutOfWindow { b: f64, tau_prev: f64, upsilon: f64 },
    #[error("no feasible bid gap above {tau_prev} below the buyout threshold")]
    NoFeasibleGap { tau_prev: f64 },
    #[error("lower support {support} of bidder {bidder} does not exceed the first grid bid {b_min}")]
    BadLowerSupport { bidder: usize, support: f64, b_min: f64 },
    #[error("equilibrium solve failed: {0}")]
    NoConvergence(NumericsError),
    #[error("equilibrium solution is not monotone")]
    NonMonotoneSolution,
    #[error("the equilibrium system needs at least two bidders")]
    TooFewBidders,
    #[error("invalid auction setup: {0}")]
    BadSetup(String),
}

// ---------------------------------------------------------------------------
// Setup
// ---------------------------------------------------------------------------

/// Distribution of a bidder's private valuation, millions €.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValuationDist {
    LogNormal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl ValuationDist {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ValuationDist::LogNormal { mu, sigma } => LogNormalParams::new(mu, sigma).cdf(x),
            ValuationDist::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ValuationDist::LogNormal { mu, sigma } => LogNormalParams::new(mu, sigma).pdf(x),
            ValuationDist::Uniform { lo, hi } => {
                if x >= lo && x <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        match *self {
            ValuationDist::LogNormal { mu, sigma } => LogNormalParams::new(mu, sigma).quantile(p).unwrap_or(f64::NAN),
            ValuationDist::Uniform { lo, hi } => lo + p * (hi - lo),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ValuationDist::LogNormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            ValuationDist::Uniform { lo, hi } => lo + rng.random::<f64>() * (hi - lo),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            ValuationDist::LogNormal { mu, sigma } if mu.is_finite() && sigma > 0.0 && sigma.is_finite() => Ok(()),
            ValuationDist::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && hi > lo => Ok(()),
            other => Err(format!("invalid valuation distribution {other:?}")),
        }
    }
}

/// Seller's probability of accepting a winning bid from a given club.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Affinity {
    Logistic { center: f64, scale: f64 },
    Constant { value: f64 },
}

impl Affinity {
    pub fn p(&self, b: f64) -> f64 {
        match *self {
            Affinity::Logistic { center, scale } => logistic_cdf(b, &AffinitySpec { center, scale }),
            Affinity::Constant { value } => value,
        }
    }

    /// `p'(b)/p(b)`.
    pub fn log_derivative(&self, b: f64) -> f64 {
        match *self {
            Affinity::Logistic { center, scale } => logistic_log_derivative(b, &AffinitySpec { center, scale }),
            Affinity::Constant { .. } => 0.0,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Affinity::Logistic { center, scale } if center.is_finite() && scale > 0.0 => Ok(()),
            Affinity::Constant { value } if value > 0.0 && value <= 1.0 => Ok(()),
            other => Err(format!("invalid affinity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bidder {
    pub club_id: String,
    pub valuation: ValuationDist,
    pub affinity: Affinity,
}

/// How the minimum premium over the last rejected bid is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Always the configured floor.
    #[default]
    Floor,
    /// Smallest premium at which every bracket term is positive with `ψ`
    /// at the lower supports, but never below the floor.
    Bracket,
}

/// Form of the valuation-distribution factor multiplying the bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NumeratorForm {
    /// `F_c(ψ_c)`.
    #[default]
    Full,
    /// `F_c(ψ_c) − F_c(s̲_c)`.
    Truncated,
}

/// Discretisation of the `f_c(ψ_c) ψ_c'` term; both use central
/// differences at interior nodes and a backward difference at the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceScheme {
    /// `f_c(ψ_c[k]) · Δψ_c / Δb`.
    Density,
    /// `ΔF_c(ψ_c) / Δb`, the derivative of `F_c ∘ ψ_c` differenced directly.
    #[default]
    Flux,
}

fn default_upsilon_quantile() -> f64 {
    0.95
}
fn default_max_rounds() -> usize {
    5
}
fn default_gap_floor() -> f64 {
    0.7
}
fn default_grid_points() -> usize {
    80
}
fn default_lookup_draws() -> usize {
    300
}
fn default_true() -> bool {
    true
}

/// One contested player: the seller's reserve, the bidders, and the
/// numerical settings of the equilibrium computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionSetup {
    pub player_id: String,
    pub seller: String,
    /// Reserve price `ρ`, log-normal in millions €.
    pub reserve: LogNormalParams,
    pub bidders: Vec<Bidder>,
    /// Reserve quantile defining the buyout threshold `υ`.
    #[serde(default = "default_upsilon_quantile")]
    pub upsilon_quantile: f64,
    /// Explicit buyout threshold overriding the reserve quantile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upsilon: Option<f64>,
    /// Round-1 common lower support `s̲`; derived when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub common_lower_support: Option<f64>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_gap_floor")]
    pub gap_floor: f64,
    #[serde(default)]
    pub gap_policy: GapPolicy,
    #[serde(default)]
    pub numerator: NumeratorForm,
    /// Accept solutions that are monotone from the second node on, storing
    /// their running-maximum envelope.
    #[serde(default = "default_true")]
    pub boundary_repair: bool,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Valuation draws used to place lookup thresholds.
    #[serde(default = "default_lookup_draws")]
    pub lookup_draws: usize,
    #[serde(default)]
    pub lookup_seed: u64,
}

impl AuctionSetup {
    /// A setup with the default numerical settings.
    pub fn new(player_id: &str, seller: &str, reserve: LogNormalParams, bidders: Vec<Bidder>) -> Self {
        Self {
            player_id: player_id.into(),
            seller: seller.into(),
            reserve,
            bidders,
            upsilon_quantile: default_upsilon_quantile(),
            upsilon: None,
            common_lower_support: None,
            max_rounds: default_max_rounds(),
            gap_floor: default_gap_floor(),
            gap_policy: GapPolicy::default(),
            numerator: NumeratorForm::default(),
            boundary_repair: true,
            grid_points: default_grid_points(),
            lookup_draws: default_lookup_draws(),
            lookup_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        let bad = |m: String| Err(AuctionError::BadSetup(m));
        if self.bidders.is_empty() {
            return bad("at least one bidder is required".into());
        }
        if !(self.reserve.sigma > 0.0) || !self.reserve.mu.is_finite() {
            return bad("reserve distribution must have positive sigma".into());
        }
        if !(self.upsilon_quantile > 0.0 && self.upsilon_quantile < 1.0) {
            return bad("upsilon_quantile must lie in (0, 1)".into());
        }
        if let Some(u) = self.upsilon {
            if !(u > 0.0) {
                return bad("upsilon must be positive".into());
            }
        }
        for b in &self.bidders {
            b.valuation.validate().or_else(bad)?;
            b.affinity.validate().or_else(bad)?;
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive".into());
        }
        if !(self.gap_floor > 0.0) {
            return bad("gap_floor must be positive".into());
        }
        if self.grid_points < 3 {
            return bad("grid_points must be at least 3".into());
        }
        if self.lookup_draws == 0 {
            return bad("lookup_draws must be positive".into());
        }
        let s = self.round_one_lower_support();
        if !(s < self.upsilon()) {
            return bad(format!("lower support {s} is not below the buyout threshold {}", self.upsilon()));
        }
        Ok(())
    }

    /// Buyout threshold `υ`.
    pub fn upsilon(&self) -> f64 {
        self.upsilon.unwrap_or_else(|| self.reserve.quantile(self.upsilon_quantile).expect("quantile level validated"))
    }

    /// Reserve distribution function `H`.
    pub fn reserve_cdf(&self, b: f64) -> f64 {
        self.reserve.cdf(b)
    }

    /// Reserve density `h`.
    pub fn reserve_pdf(&self, b: f64) -> f64 {
        self.reserve.pdf(b)
    }

    /// Round-1 common lower support: the configured value, or the larger of
    /// the 0.1% valuation quantile of the weakest bidder and the gap floor
    /// plus 0.02, so that it lies strictly above the first grid bid.
    pub fn round_one_lower_support(&self) -> f64 {
        self.common_lower_support.unwrap_or_else(|| {
            let weakest = self.bidders.iter().map(|b| b.valuation.quantile(0.001)).fold(f64::INFINITY, f64::min);
            weakest.max(self.gap_floor + 0.02)
        })
    }

    /// Affinity truncated at the buyout threshold: `p̂(b) = min(p(b)/p(υ), 1)`.
    pub fn truncated_affinity(&self, bidder: usize, b: f64) -> f64 {
        let a = &self.bidders[bidder].affinity;
        (a.p(b) / a.p(self.upsilon())).min(1.0)
    }
}

// ---------------------------------------------------------------------------
// Truncated reserve
// ---------------------------------------------------------------------------

fn check_window(setup: &AuctionSetup, tau_prev: f64, b: f64) -> Result<f64, AuctionError> {
    let ups = setup.upsilon();
    if !(b >= tau_prev && b <= ups) {
        return Err(AuctionError::OutOfWindow { b, tau_prev, upsilon: ups });
    }
    Ok(ups)
}

/// `Ĥ(b) = (H(b) − H(τ)) / (H(υ) − H(τ))`, the reserve distribution given
/// that it exceeds the last rejected bid `τ`, truncated at `υ`.
pub fn truncated_reserve_cdf(setup: &AuctionSetup, tau_prev: f64, b: f64) -> Result<f64, AuctionError> {
    let ups = check_window(setup, tau_prev, b)?;
    let h_tau = setup.reserve_cdf(tau_prev);
    Ok(((setup.reserve_cdf(b) - h_tau) / (setup.reserve_cdf(ups) - h_tau)).clamp(0.0, 1.0))
}

/// Reserve hazard of round `r`, `h(b) / (H(b) − H(τ))`.
pub fn truncated_reserve_hazard(setup: &AuctionSetup, tau_prev: f64, b: f64) -> Result<f64, AuctionError> {
    check_window(setup, tau_prev, b)?;
    if b == tau_prev {
        return Ok(f64::INFINITY);
    }
    Ok(setup.reserve_pdf(b) / (setup.reserve_cdf(b) - setup.reserve_cdf(tau_prev)))
}

/// Reserve mass and hazard at `b = τ + gap`, both with the reserve
/// normalised by its mass below `υ`: the increment
/// `(H(b) − H(τ)) / H(υ)` and the hazard `h(b) H(υ) / (H(b) − H(τ))`.
pub fn reserve_hazard_at_gap(setup: &AuctionSetup, tau: f64, gap: f64) -> (f64, f64) {
    let b = tau + gap;
    let h_ups = setup.reserve_cdf(setup.upsilon());
    let inc = setup.reserve_cdf(b) - setup.reserve_cdf(tau);
    (inc / h_ups, setup.reserve_pdf(b) * h_ups / inc)
}

/// Seller's probability of accepting `tau` from `bidder` after a previous
/// rejection at `tau_prev`: `p̂(τ) (H(τ) − H(τ_prev)) / (H(υ) − H(τ_prev))`.
pub fn acceptance_probability(setup: &AuctionSetup, tau_prev: f64, bidder: usize, tau: f64) -> Result<f64, AuctionError> {
    let inc = truncated_reserve_cdf(setup, tau_prev, tau)?;
    Ok((setup.truncated_affinity(bidder, tau) * inc).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Equilibrium
// ---------------------------------------------------------------------------

/// Inverse bidding functions of one negotiation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub round: usize,
    pub tau_prev: f64,
    pub bid_gap: f64,
    pub grid: Vec<f64>,
    /// Per-bidder `ψ_c` as stored for inversion.
    pub psi: Vec<MonotoneTable>,
    /// Per-bidder `ψ_c` exactly as returned by the solver.
    pub raw_psi: Vec<Vec<f64>>,
    pub lower_supports: Vec<f64>,
    pub scheme: DifferenceScheme,
    pub residual_norm: f64,
    pub iterations: usize,
    pub monotone_ok: bool,
    /// The stored tables are the running maximum of a solution whose only
    /// decrease is at the first interior node.
    pub boundary_repaired: bool,
}

impl EquilibriumSolution {
    /// Equilibrium bid `κ_c(s)` of `bidder` at valuation `s`; `None` when
    /// the valuation is below the bidder's lower support (abstention).
    pub fn bid(&self, bidder: usize, s: f64) -> Option<f64> {
        self.psi[bidder].invert(s).ok()
    }

    pub fn b_min(&self) -> f64 {
        self.grid[0]
    }
}

fn bracket_terms(setup: &AuctionSetup, b: f64, psi: &[f64], lambda: f64) -> Vec<f64> {
    let c_n = psi.len();
    let g: Vec<f64> = (0..c_n).map(|c| 1.0 / (psi[c] - b) - setup.bidders[c].affinity.log_derivative(b)).collect();
    let total: f64 = g.iter().sum();
    (0..c_n).map(|c| (total - g[c]) - (c_n as f64 - 2.0) * g[c] - lambda).collect()
}

/// Minimum premium over `tau_prev` at which the round's system is posed.
pub fn compute_bid_gap(setup: &AuctionSetup, tau_prev: f64, lower_supports: &[f64]) -> Result<f64, AuctionError> {
    let ups = setup.upsilon();
    if tau_prev + setup.gap_floor >= ups {
        return Err(AuctionError::NoFeasibleGap { tau_prev });
    }
    match setup.gap_policy {
        GapPolicy::Floor => Ok(setup.gap_floor),
        GapPolicy::Bracket => {
            let positive = |delta: f64| {
                let b = tau_prev + delta;
                if lower_supports.iter().any(|&s| s <= b) {
                    return false;
                }
                let lambda = setup.reserve_pdf(b) / (setup.reserve_cdf(b) - setup.reserve_cdf(tau_prev));
                lambda.is_finite() && bracket_terms(setup, b, lower_supports, lambda).iter().all(|&v| v > 0.0)
            };
            let mut prev = 0.0;
            let mut delta = 0.01;
            while tau_prev + delta < ups {
                if positive(delta) {
                    let (mut lo, mut hi) = (prev, delta);
                    while hi - lo > 1e-4 {
                        let mid = 0.5 * (lo + hi);
                        if positive(mid) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    return Ok(hi.max(setup.gap_floor));
                }
                prev = delta;
                delta += 0.01;
            }
            Err(AuctionError::NoFeasibleGap { tau_prev })
        }
    }
}

/// Collocation residual of the first-order system in multiplied form:
/// `f_c(ψ_c) ψ_c' − N_c(ψ_c) ℬ_c / (C − 1)`, where `N_c` is the numerator
/// selected by the setup and `ℬ_c = Σ_{j≠c} g_j − (C − 2) g_c − λ`,
/// `g_j = 1/(ψ_j − b) − p_j'/p_j`, `λ = h(b) / (H(b) − H(τ))`, at nodes
/// `2..N`; `psi[c]` holds all `N` nodes.
fn collocation_residual(
    setup: &AuctionSetup,
    scheme: DifferenceScheme,
    grid: &[f64],
    tau_prev: f64,
    lower: &[f64],
    psi: &[Vec<f64>],
    out: &mut Vec<f64>,
) {
    let c_n = psi.len();
    let n = grid.len();
    let h = grid[1] - grid[0];
    let h_tau = setup.reserve_cdf(tau_prev);
    out.clear();
    out.resize(c_n * (n - 1), 0.0);
    let mut col = vec![0.0; c_n];
    for k in 1..n {
        let b = grid[k];
        for c in 0..c_n {
            col[c] = psi[c][k];
        }
        let lambda = setup.reserve_pdf(b) / (setup.reserve_cdf(b) - h_tau);
        let bracket = bracket_terms(setup, b, &col, lambda);
        for c in 0..c_n {
            let v = &setup.bidders[c].valuation;
            let numer = match setup.numerator {
                NumeratorForm::Full => v.cdf(col[c]),
                NumeratorForm::Truncated => v.cdf(col[c]) - v.cdf(lower[c]),
            };
            let p = &psi[c];
            let (hi, lo, width) = if k + 1 < n { (p[k + 1], p[k - 1], 2.0 * h) } else { (p[k], p[k - 1], h) };
            let flux = match scheme {
                DifferenceScheme::Density => v.pdf(p[k]) * (hi - lo) / width,
                DifferenceScheme::Flux => (v.cdf(hi) - v.cdf(lo)) / width,
            };
            out[c * (n - 1) + k - 1] = flux - numer * bracket[c] / (c_n as f64 - 1.0);
        }
    }
}

fn unpack(x: &[f64], lower: &[f64], n: usize) -> Vec<Vec<f64>> {
    lower
        .iter()
        .enumerate()
        .map(|(c, &s)| {
            let mut v = Vec::with_capacity(n);
            v.push(s);
            v.extend_from_slice(&x[c * (n - 1)..(c + 1) * (n - 1)]);
            v
        })
        .collect()
}

fn is_monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - MONOTONE_TOL)
}

/// Solves one round's inverse bidding functions on `[τ + Δ_B, υ]` with
/// lower boundary values `lower_supports`.
pub fn solve_equilibrium(setup: &AuctionSetup, tau_prev: f64, lower_supports: &[f64]) -> Result<EquilibriumSolution, AuctionError> {
    setup.validate()?;
    let c_n = setup.bidders.len();
    if c_n < 2 {
        return Err(AuctionError::TooFewBidders);
    }
    if lower_supports.len() != c_n {
        return Err(AuctionError::BadSetup("one lower support per bidder is required".into()));
    }
    let gap = compute_bid_gap(setup, tau_prev, lower_supports)?;
    let ups = setup.upsilon();
    let b_min = tau_prev + gap;
    if b_min >= ups {
        return Err(AuctionError::NoFeasibleGap { tau_prev });
    }
    for (c, &s) in lower_supports.iter().enumerate() {
        if !(s > b_min) {
            return Err(AuctionError::BadLowerSupport { bidder: c, support: s, b_min });
        }
    }
    let n = setup.grid_points;
    let grid: Vec<f64> = (0..n).map(|k| b_min + (ups - b_min) * k as f64 / (n - 1) as f64).collect();
    let opts = BroydenOptions { tol: 1e-8, max_iter: 500, refresh_every: 5, ..BroydenOptions::default() };
    // the boundary node of every bidder is fixed at its lower support, so the
    // unknowns are nodes 2..N, started from the shifted identity
    let mut x0 = Vec::with_capacity(c_n * (n - 1));
    for &s in lower_supports {
        x0.extend(grid[1..].iter().map(|b| b + (s - b_min)));
    }
    // Differencing f(ψ)·ψ' through the density admits spurious odd-even
    // roots once ψ reaches the far tail of F, where f ≈ 0 decouples
    // neighbouring nodes; the flux form is tried first and the density form
    // only if the flux form fails or is not monotone.
    let mut found: Option<(DifferenceScheme, Vec<Vec<f64>>, BroydenSolution, bool, bool)> = None;
    let mut first_err = None;
    for scheme in [DifferenceScheme::Flux, DifferenceScheme::Density] {
        let mut buf = Vec::new();
        let mut residual = |x: &[f64]| {
            let psi = unpack(x, lower_supports, n);
            collocation_residual(setup, scheme, &grid, tau_prev, lower_supports, &psi, &mut buf);
            buf.clone()
        };
        // Jacobian refreshed every few steps; every step if that stalls
        let attempt = broyden_solve(&mut residual, &x0, &opts)
            .or_else(|_| broyden_solve(&mut residual, &x0, &BroydenOptions { refresh_every: 1, ..opts }));
        let sol = match attempt {
            Ok(sol) => sol,
            Err(e) => {
                first_err.get_or_insert(e);
                continue;
            }
        };
        let raw = unpack(&sol.x, lower_supports, n);
        let strict = raw.iter().all(|p| is_monotone(p));
        let tail = raw.iter().all(|p| is_monotone(&p[1..]));
        let above = raw.iter().all(|p| p.iter().zip(&grid).all(|(v, b)| v > b));
        let repaired = !strict && tail && setup.boundary_repair;
        if above && (strict || repaired) {
            found = Some((scheme, raw, sol, true, repaired));
            break;
        }
        found.get_or_insert((scheme, raw, sol, false, false));
    }
    let Some((scheme, raw, sol, monotone_ok, repaired)) = found else {
        return Err(AuctionError::NoConvergence(first_err.expect("at least one attempt")));
    };
    let psi = raw
        .iter()
        .map(|p| {
            let mut env = p.clone();
            for k in 1..env.len() {
                env[k] = env[k].max(env[k - 1]);
            }
            MonotoneTable::new(grid.clone(), env).expect("running maximum is monotone")
        })
        .collect();
    Ok(EquilibriumSolution {
        round: 1,
        tau_prev,
        bid_gap: gap,
        grid,
        psi,
        raw_psi: raw,
        lower_supports: lower_supports.to_vec(),
        scheme,
        residual_norm: sol.residual_norm,
        iterations: sol.iterations,
        monotone_ok,
        boundary_repaired: repaired,
    })
}

/// Infinity norm of the collocation residual of `sol`'s raw solution under
/// the scheme it was solved with.
pub fn foc_residual(setup: &AuctionSetup, sol: &EquilibriumSolution) -> f64 {
    let mut out = Vec::new();
    collocation_residual(setup, sol.scheme, &sol.grid, sol.tau_prev, &sol.lower_supports, &sol.raw_psi, &mut out);
    out.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Probability that `bidder` wins and the seller accepts at bid `b`:
/// `p̂_c(b) Ĥ(b) Π_{j≠c} F_j(ψ_j(b))`.
pub fn allocation_probability(eq: &EquilibriumSolution, setup: &AuctionSetup, bidder: usize, b: f64) -> Result<f64, AuctionError> {
    if b < eq.grid[0] || b > *eq.grid.last().expect("grid") {
        return Err(AuctionError::OutOfWindow { b, tau_prev: eq.tau_prev, upsilon: setup.upsilon() });
    }
    let mut q = setup.truncated_affinity(bidder, b) * truncated_reserve_cdf(setup, eq.tau_prev, b)?;
    for (j, table) in eq.psi.iter().enumerate() {
        if j != bidder {
            q *= setup.bidders[j].valuation.cdf(table.eval(b));
        }
    }
    Ok(q.clamp(0.0, 1.0))
}

/// Optimal bid of a lone bidder with valuation `s`: the maximiser of
/// `(s − b) p̂(b) Ĥ(b)` over `[τ + Δ_B, min(s, υ)]`, or `None` when that
/// window is empty.
pub fn bid_single(setup: &AuctionSetup, tau_prev: f64, s: f64) -> Option<f64> {
    let ups = setup.upsilon();
    let lo = tau_prev + setup.gap_floor;
    let hi = s.min(ups);
    if !(hi > lo) {
        return None;
    }
    let h_tau = setup.reserve_cdf(tau_prev);
    let denom = setup.reserve_cdf(ups) - h_tau;
    let utility = |b: f64| (s - b) * setup.truncated_affinity(0, b) * ((setup.reserve_cdf(b) - h_tau) / denom).clamp(0.0, 1.0);
    let inner = golden_section_max(utility, lo, hi, 1e-6);
    [inner, lo, hi].into_iter().max_by(|a, b| utility(*a).total_cmp(&utility(*b)))
}

// ---------------------------------------------------------------------------
// Lookup
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupEntry {
    pub tau: f64,
    pub solution: EquilibriumSolution,
}

/// Equilibrium solutions at ascending rejection thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLookup {
    pub entries: Vec<LookupEntry>,
    /// Candidate thresholds in the order they were tried.
    pub candidates: Vec<f64>,
    /// Candidates skipped because the solve failed or was not monotone.
    pub skipped: Vec<f64>,
    /// First infeasible candidate, where construction stopped.
    pub cutoff: Option<f64>,
    /// Single-bidder setups bid by direct maximisation and need no table.
    pub single_bidder: bool,
}

impl RoundLookup {
    /// Entry with the largest threshold not exceeding `tau_prev`.
    pub fn entry_for(&self, tau_prev: f64) -> Option<&LookupEntry> {
        self.entries.iter().rev().find(|e| e.tau <= tau_prev)
    }
}

fn round_one(setup: &AuctionSetup) -> Result<EquilibriumSolution, AuctionError> {
    let s = setup.round_one_lower_support();
    let sol = solve_equilibrium(setup, 0.0, &vec![s; setup.bidders.len()])?;
    if !sol.monotone_ok {
        return Err(AuctionError::NonMonotoneSolution);
    }
    Ok(sol)
}

/// Builds the round-1 solution and, at the 20%–90% deciles of simulated
/// round-1 winning bids, solutions for later rounds. Each candidate takes
/// its lower supports from the most recently accepted solution; failed or
/// non-monotone candidates are skipped and construction stops at the first
/// infeasible candidate.
pub fn build_lookup(setup: &AuctionSetup) -> Result<RoundLookup, AuctionError> {
    setup.validate()?;
    if setup.bidders.len() == 1 {
        return Ok(RoundLookup { entries: vec![], candidates: vec![], skipped: vec![], cutoff: None, single_bidder: true });
    }
    let first = round_one(setup)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.lookup_seed);
    let mut taus = Vec::with_capacity(setup.lookup_draws);
    for _ in 0..setup.lookup_draws {
        let best = setup
            .bidders
            .iter()
            .enumerate()
            .filter_map(|(c, b)| first.bid(c, b.valuation.sample(&mut rng)))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        if let Some(t) = best {
            taus.push(t);
        }
    }
    taus.sort_by(f64::total_cmp);
    let candidates: Vec<f64> = if taus.is_empty() { vec![] } else { (2..=9).map(|k| interpolated_quantile(&taus, k as f64 / 10.0)).collect() };
    let ups = setup.upsilon();
    let mut entries = vec![LookupEntry { tau: 0.0, solution: first }];
    let mut skipped = Vec::new();
    let mut cutoff = None;
    for &tau in &candidates {
        let prev = &entries.last().expect("round-1 entry").solution;
        if tau <= entries.last().expect("entry").tau {
            continue;
        }
        let lower: Vec<f64> = prev.psi.iter().map(|t| t.eval(tau)).collect();
        if lower.iter().any(|&s| s >= 0.95 * ups) || tau + setup.gap_floor >= ups {
            cutoff = Some(tau);
            break;
        }
        match solve_equilibrium(setup, tau, &lower) {
            Ok(mut sol) if sol.monotone_ok => {
                sol.round = entries.len() + 1;
                entries.push(LookupEntry { tau, solution: sol });
            }
            Ok(_) | Err(AuctionError::NoConvergence(_)) | Err(AuctionError::BadLowerSupport { .. }) => skipped.push(tau),
            Err(AuctionError::NoFeasibleGap { .. }) => {
                cutoff = Some(tau);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RoundLookup { entries, candidates, skipped, cutoff, single_bidder: false })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn logistic(center: f64) -> Affinity {
        Affinity::Logistic { center, scale: 1.0 }
    }

    pub(crate) fn ln(mu: f64) -> ValuationDist {
        ValuationDist::LogNormal { mu, sigma: 1.1 }
    }

    pub(crate) fn almiron() -> AuctionSetup {
        let bidders = [("EVE", 1.2, 2.7), ("SOU", 1.7, 4.3), ("WAT", 1.5, 3.4)]
            .into_iter()
            .map(|(id, mu, c)| Bidder { club_id: id.into(), valuation: ln(mu), affinity: logistic(c) })
            .collect();
        AuctionSetup::new("almiron", "NEW", LogNormalParams::new(1.5, 1.1), bidders)
    }

    pub(crate) fn traore() -> AuctionSetup {
        let bidders = [("MNC", 1.8, 5.1), ("TOT", 1.3, 2.9), ("NEW", 1.2, 2.6), ("WAT", 1.2, 2.7)]
            .into_iter()
            .map(|(id, mu, c)| Bidder { club_id: id.into(), valuation: ln(mu), affinity: logistic(c) })
            .collect();
        AuctionSetup::new("traore", "WOL", LogNormalParams::new(0.7, 1.1), bidders)
    }

    #[test]
    fn truncated_cdf_endpoints() {
        let s = almiron();
        let ups = s.upsilon();
        assert!((truncated_reserve_cdf(&s, 0.0, ups).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(truncated_reserve_cdf(&s, 3.0, 3.0).unwrap(), 0.0);
        assert!(truncated_reserve_cdf(&s, 3.0, ups + 1.0).is_err());
    }

    #[test]
    fn hazard_table_first_rows() {
        let (inc, haz) = reserve_hazard_at_gap(&almiron(), 0.0, 0.7);
        assert!((inc - 0.0481).abs() < 5e-4, "{inc}");
        assert!((haz - 2.591).abs() < 5e-3, "{haz}");
        let (inc, haz) = reserve_hazard_at_gap(&traore(), 4.207, 0.7);
        assert!((inc - 0.0447).abs() < 5e-4, "{inc}");
        assert!((haz - 1.192).abs() < 5e-3, "{haz}");
    }

    #[test]
    fn traore_buyout_threshold() {
        assert!((traore().upsilon() - 12.3).abs() < 0.05);
    }

    #[test]
    fn gap_floor_binds_in_round_one() {
        let s = almiron();
        let lower = vec![s.round_one_lower_support(); 3];
        assert_eq!(compute_bid_gap(&s, 0.0, &lower).unwrap(), 0.7);
        let mut b = s.clone();
        b.gap_policy = GapPolicy::Bracket;
        assert_eq!(compute_bid_gap(&b, 0.0, &lower).unwrap(), 0.7);
        assert!(matches!(compute_bid_gap(&s, s.upsilon() - 0.5, &lower), Err(AuctionError::NoFeasibleGap { .. })));
    }

    #[test]
    fn acceptance_endpoints() {
        let mut s = almiron();
        s.bidders[1].affinity = Affinity::Constant { value: 1.0 };
        let ups = s.upsilon();
        assert!((acceptance_probability(&s, 0.0, 1, ups).unwrap() - 1.0).abs() < 1e-12);
        assert!(acceptance_probability(&s, 4.0, 1, 4.0 + 1e-9).unwrap() < 1e-8);
    }

    #[test]
    fn acceptance_matches_hand_formula() {
        let s = almiron();
        let ups = s.upsilon();
        let phi = |z: f64| 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
        let big_h = |x: f64| phi((x.ln() - 1.5) / 1.1);
        let p = |b: f64| 1.0 / (1.0 + (-(b - 4.3f64)).exp());
        let expected = (p(8.0) / p(ups)).min(1.0) * big_h(8.0) / big_h(ups);
        assert!((acceptance_probability(&s, 0.0, 1, 8.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn lone_bidder_abstains_below_window_and_beats_endpoints() {
        let mut s = almiron();
        s.bidders.truncate(1);
        assert_eq!(bid_single(&s, 2.0, 2.5), None);
        let v = 9.0;
        let b = bid_single(&s, 0.0, v).unwrap();
        let h_ups = s.reserve_cdf(s.upsilon());
        let u = |b: f64| (v - b) * s.truncated_affinity(0, b) * s.reserve_cdf(b) / h_ups;
        assert!(u(b) >= u(0.7) - 1e-12 && u(b) >= u(v) - 1e-12);
    }
}
