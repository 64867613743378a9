//! Cost, risk and quality of a candidate squad, the eighteen constraint
//! residuals and the penalised fitness.
//!
//! A [`Problem`] holds a priced pool of players with one decision bit each,
//! the constraint bounds, and the contributions of players whose status was
//! fixed before the search (see [`crate::solvers::preprocess`]). Evaluating
//! a decision always includes those fixed contributions, so a reduced
//! problem scores a residual decision exactly as the full problem scores
//! the corresponding full decision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{Position, Weights};
use crate::numerics::{chance_bound, marlow_approx, LogNormalParams};

/// Number of constraint residuals.
pub const N_CONSTRAINTS: usize = 18;

/// Short labels of the constraint residuals, in order.
pub const CONSTRAINT_NAMES: [&str; N_CONSTRAINTS] = [
    "budget_chance",
    "squad_max",
    "retain_min",
    "transfers_max",
    "profit_min",
    "goalkeepers",
    "defenders_min",
    "midfielders_min",
    "forwards_min",
    "buy_goalkeepers_min",
    "buy_defenders_min",
    "buy_midfielders_min",
    "buy_forwards_min",
    "other_continent",
    "top_league_min",
    "local_min",
    "average_age",
    "average_rating",
];

/// Default penalty coefficient `β`.
pub const DEFAULT_BETA: f64 = 1e6;

/// Residuals smaller than this are treated as rounding noise in the
/// average-age and average-rating comparisons.
const AVERAGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("player `{0}` has no usable fee distribution")]
    UnpricedPlayer(String),
    #[error("player `{0}` has no rating forecast")]
    MissingForecast(String),
    #[error("player `{0}` lacks a required annotation: {1}")]
    MissingAnnotation(String, &'static str),
    #[error("decision vector has {got} entries but the pool has {expected}")]
    DecisionLength { expected: usize, got: usize },
    #[error("invalid bounds: {0}")]
    BadBounds(String),
}

/// Bounds of the squad-planning constraints. Counts are signed so that
/// bound arithmetic during preprocessing can be checked for underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBounds {
    pub k_tot_max: i64,
    pub k_retain_min: i64,
    pub k_transfer_max: i64,
    pub gk_min: i64,
    pub gk_max: i64,
    pub df_min: i64,
    pub mf_min: i64,
    pub fw_min: i64,
    /// Minimum buys per position, `[GK, DF, MF, FW]`.
    pub buy_min: [i64; 4],
    pub other_continent_min: i64,
    pub other_continent_max: i64,
    pub top_league_min: i64,
    pub local_min: i64,
    /// Millions €.
    pub profit_min: f64,
    /// Millions €.
    pub budget_max: f64,
    pub alpha: f64,
}

impl ConstraintBounds {
    /// The illustrative bounds: squad of at most 30, retain 15, at most 10
    /// transfers, 2–4 goalkeepers, 8 defenders, 8 midfielders, 4 forwards,
    /// at most 2 buys from other continents, all other minima zero.
    pub fn paper_defaults(budget_max: f64, profit_min: f64, alpha: f64) -> Self {
        Self {
            k_tot_max: 30,
            k_retain_min: 15,
            k_transfer_max: 10,
            gk_min: 2,
            gk_max: 4,
            df_min: 8,
            mf_min: 8,
            fw_min: 4,
            buy_min: [0; 4],
            other_continent_min: 0,
            other_continent_max: 2,
            top_league_min: 0,
            local_min: 0,
            profit_min,
            budget_max,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.budget_max > 0.0) {
            return Err(ObjectiveError::BadBounds("budget_max must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ObjectiveError::BadBounds("alpha must lie in (0, 1)".into()));
        }
        if self.gk_min > self.gk_max {
            return Err(ObjectiveError::BadBounds("gk_min exceeds gk_max".into()));
        }
        if self.other_continent_min > self.other_continent_max {
            return Err(ObjectiveError::BadBounds("other_continent_min exceeds other_continent_max".into()));
        }
        Ok(())
    }

    /// Minimum count at `pos` over the whole selected squad.
    pub fn position_min(&self, pos: Position) -> i64 {
        match pos {
            Position::GK => self.gk_min,
            Position::DF => self.df_min,
            Position::MF => self.mf_min,
            Position::FW => self.fw_min,
        }
    }

    pub(crate) fn position_min_mut(&mut self, pos: Position) -> &mut i64 {
        match pos {
            Position::GK => &mut self.gk_min,
            Position::DF => &mut self.df_min,
            Position::MF => &mut self.mf_min,
            Position::FW => &mut self.fw_min,
        }
    }
}

/// One decision variable: a player with predicted fee and rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub player_id: String,
    pub position: Position,
    /// Member of the focal club's current squad.
    pub is_current: bool,
    /// Log-normal fee: the purchase price for outside players and the
    /// market value for current players.
    pub fee: LogNormalParams,
    /// `E(Y_i)`, millions €.
    pub expected_fee: f64,
    /// `Var(Y_i)`, millions €².
    pub fee_variance: f64,
    /// Resale price `r_i` for current players, millions €.
    pub resale_price: f64,
    /// Forecast rating `R_i` at the focal club.
    pub rating: f64,
    pub age: f64,
    pub other_continent: bool,
    pub other_top_league: bool,
    pub same_country: bool,
}

impl PoolEntry {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !self.expected_fee.is_finite() || !(self.fee_variance >= 0.0) || !self.fee_variance.is_finite() || !(self.fee.sigma >= 0.0) {
            return Err(ObjectiveError::UnpricedPlayer(self.player_id.clone()));
        }
        if self.is_current && !self.resale_price.is_finite() {
            return Err(ObjectiveError::UnpricedPlayer(self.player_id.clone()));
        }
        if !self.rating.is_finite() {
            return Err(ObjectiveError::MissingForecast(self.player_id.clone()));
        }
        if !(self.age > 0.0) {
            return Err(ObjectiveError::MissingAnnotation(self.player_id.clone(), "age"));
        }
        Ok(())
    }
}

/// Contributions of players fixed outside the decision set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedPart {
    /// Added to cost, millions €.
    pub cost: f64,
    /// Added to the variance under the risk root, millions €².
    pub variance: f64,
    /// Added to quality.
    pub quality: f64,
    /// Fee distributions of players already committed to be bought.
    pub buy_fees: Vec<LogNormalParams>,
    /// Number of fixed selected players (must-buy and keep).
    pub selected: usize,
    /// Sum of ages of fixed selected players.
    pub age_sum: f64,
    /// Sum of forecast ratings of fixed selected players.
    pub rating_sum: f64,
}

/// Averages of the original current squad that bound the selection
/// averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquadStats {
    pub avg_age: f64,
    pub avg_rating: f64,
}

impl SquadStats {
    pub fn from_current(pool: &[PoolEntry]) -> Self {
        let cur: Vec<&PoolEntry> = pool.iter().filter(|p| p.is_current).collect();
        let n = cur.len().max(1) as f64;
        SquadStats {
            avg_age: cur.iter().map(|p| p.age).sum::<f64>() / n,
            avg_rating: cur.iter().map(|p| p.rating).sum::<f64>() / n,
        }
    }
}

/// Divisors that bring cost, risk and quality to comparable scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Divides cost and risk (the original `B_max`).
    pub money: f64,
    /// Divides quality (`30 ·` the largest pool rating).
    pub quality: f64,
}

/// A planning instance: pool, bounds and fixed contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub pool: Vec<PoolEntry>,
    pub bounds: ConstraintBounds,
    pub fixed: FixedPart,
    pub squad_stats: SquadStats,
    /// Present when the objective is evaluated in normalised units.
    pub normalization: Option<Normalization>,
}

impl Problem {
    /// A problem with no fixed contributions, squad averages taken from the
    /// current players in `pool`.
    pub fn new(pool: Vec<PoolEntry>, bounds: ConstraintBounds) -> Result<Self, ObjectiveError> {
        bounds.validate()?;
        for p in &pool {
            p.validate()?;
        }
        let squad_stats = SquadStats::from_current(&pool);
        Ok(Problem { pool, bounds, fixed: FixedPart::default(), squad_stats, normalization: None })
    }

    /// Switches on normalised objective units, using the current budget
    /// and the largest pool rating.
    pub fn with_normalization(mut self) -> Self {
        let max_r = self.pool.iter().map(|p| p.rating).fold(f64::MIN, f64::max).max(1e-12);
        self.normalization = Some(Normalization { money: self.bounds.budget_max, quality: 30.0 * max_r });
        self
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// The status-quo decision: keep every current player, buy nobody.
    pub fn status_quo(&self) -> Vec<bool> {
        self.pool.iter().map(|p| p.is_current).collect()
    }

    /// Number of transfers implied by `x` within the decision set.
    pub fn transfers(&self, x: &[bool]) -> usize {
        self.pool.iter().zip(x).filter(|(p, &xi)| p.is_current != xi).count()
    }

    fn check_len(&self, x: &[bool]) -> Result<(), ObjectiveError> {
        if x.len() != self.pool.len() {
            return Err(ObjectiveError::DecisionLength { expected: self.pool.len(), got: x.len() });
        }
        Ok(())
    }
}

/// `Σ_buy x E(Y) + Σ_current (1−x)(E(Y) − r)` plus fixed cost, millions €.
pub fn compute_cost(x: &[bool], problem: &Problem) -> Result<f64, ObjectiveError> {
    problem.check_len(x)?;
    let mut cost = problem.fixed.cost;
    for (p, &xi) in problem.pool.iter().zip(x) {
        if p.is_current {
            if !xi {
                cost += p.expected_fee - p.resale_price;
            }
        } else if xi {
            cost += p.expected_fee;
        }
    }
    Ok(cost)
}

/// Square root of the summed fee variances of bought players, millions €.
pub fn compute_risk(x: &[bool], problem: &Problem) -> Result<f64, ObjectiveError> {
    problem.check_len(x)?;
    let var: f64 = problem.fixed.variance
        + problem.pool.iter().zip(x).filter(|(p, &xi)| xi && !p.is_current).map(|(p, _)| p.fee_variance).sum::<f64>();
    Ok(var.max(0.0).sqrt())
}

/// Sum of forecast ratings over the selected squad.
pub fn compute_quality(x: &[bool], problem: &Problem) -> Result<f64, ObjectiveError> {
    problem.check_len(x)?;
    Ok(problem.fixed.quality + problem.pool.iter().zip(x).filter(|(_, &xi)| xi).map(|(p, _)| p.rating).sum::<f64>())
}

/// The eighteen nonnegative residuals, in the order of [`CONSTRAINT_NAMES`].
/// Counts are in players, money in millions €, the budget residual in
/// log-millions, ages in years and ratings in rating points.
pub fn evaluate_constraints(x: &[bool], problem: &Problem) -> Result<[f64; N_CONSTRAINTS], ObjectiveError> {
    problem.check_len(x)?;
    let b = &problem.bounds;
    let mut buy_fees = problem.fixed.buy_fees.clone();
    let mut total = 0i64;
    let mut retained = 0i64;
    let mut transfers = 0i64;
    let mut profit = 0.0;
    let mut by_pos = [0i64; 4];
    let mut buys_by_pos = [0i64; 4];
    let (mut oth, mut top, mut loc) = (0i64, 0i64, 0i64);
    let mut age_sum = problem.fixed.age_sum;
    let mut rating_sum = problem.fixed.rating_sum;
    for (p, &xi) in problem.pool.iter().zip(x) {
        if xi {
            total += 1;
            by_pos[p.position.index()] += 1;
            age_sum += p.age;
            rating_sum += p.rating;
        }
        if p.is_current {
            if xi {
                retained += 1;
            } else {
                transfers += 1;
                profit += p.expected_fee;
            }
        } else if xi {
            transfers += 1;
            buys_by_pos[p.position.index()] += 1;
            buy_fees.push(p.fee);
            oth += i64::from(p.other_continent);
            top += i64::from(p.other_top_league);
            loc += i64::from(p.same_country);
        }
    }
    let pos = |v: f64| v.max(0.0);
    let cnt = |v: i64| v.max(0) as f64;
    let mut v = [0.0; N_CONSTRAINTS];
    v[0] = if buy_fees.is_empty() {
        0.0
    } else {
        let total_fee = marlow_approx(&buy_fees).expect("nonempty list");
        let bound = chance_bound(&total_fee, b.alpha).expect("alpha validated");
        pos(bound - b.budget_max.ln())
    };
    v[1] = cnt(total - b.k_tot_max);
    v[2] = cnt(b.k_retain_min - retained);
    v[3] = cnt(transfers - b.k_transfer_max);
    v[4] = pos(b.profit_min - profit);
    v[5] = cnt(b.gk_min - by_pos[0]) + cnt(by_pos[0] - b.gk_max);
    v[6] = cnt(b.df_min - by_pos[1]);
    v[7] = cnt(b.mf_min - by_pos[2]);
    v[8] = cnt(b.fw_min - by_pos[3]);
    for k in 0..4 {
        v[9 + k] = cnt(b.buy_min[k] - buys_by_pos[k]);
    }
    v[13] = cnt(b.other_continent_min - oth) + cnt(oth - b.other_continent_max);
    v[14] = cnt(b.top_league_min - top);
    v[15] = cnt(b.local_min - loc);
    let n_sel = total as f64 + problem.fixed.selected as f64;
    if n_sel == 0.0 {
        v[16] = 1.0;
        v[17] = 1.0;
    } else {
        let snap = |r: f64| if r <= AVERAGE_TOL { 0.0 } else { r };
        v[16] = snap(age_sum / n_sel - problem.squad_stats.avg_age);
        v[17] = snap(problem.squad_stats.avg_rating - rating_sum / n_sel);
    }
    Ok(v)
}

/// Cost, risk, quality, residuals and the resulting scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Millions €.
    pub cost: f64,
    /// Millions €.
    pub risk: f64,
    pub quality: f64,
    pub violations: [f64; N_CONSTRAINTS],
    /// `−(λ1 cost + λ2 risk) + λ3 quality`, in normalised units if enabled.
    pub objective: f64,
    /// `objective − β Σ violations`.
    pub fitness: f64,
    pub normalized: bool,
}

impl ObjectiveBreakdown {
    pub fn is_feasible(&self) -> bool {
        self.violations.iter().all(|&v| v == 0.0)
    }

    pub fn total_violation(&self) -> f64 {
        self.violations.iter().sum()
    }
}

/// `−(λ1 cost + λ2 risk) + λ3 quality` from already computed terms.
pub fn raw_objective(cost: f64, risk: f64, quality: f64, weights: &Weights, norm: Option<&Normalization>) -> f64 {
    let (c, r, q) = match norm {
        Some(n) => (cost / n.money, risk / n.money, quality / n.quality),
        None => (cost, risk, quality),
    };
    -(weights.cost * c + weights.risk * r) + weights.quality * q
}

/// Full evaluation of `x` with penalty `beta`.
pub fn fitness(x: &[bool], problem: &Problem, weights: &Weights, beta: f64) -> Result<ObjectiveBreakdown, ObjectiveError> {
    let cost = compute_cost(x, problem)?;
    let risk = compute_risk(x, problem)?;
    let quality = compute_quality(x, problem)?;
    let violations = evaluate_constraints(x, problem)?;
    let objective = raw_objective(cost, risk, quality, weights, problem.normalization.as_ref());
    let penalty: f64 = violations.iter().sum();
    Ok(ObjectiveBreakdown {
        cost,
        risk,
        quality,
        violations,
        objective,
        fitness: objective - beta * penalty,
        normalized: problem.normalization.is_some(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::{expected_fee, fee_variance};

    pub(crate) fn entry(id: &str, pos: Position, current: bool, fee: LogNormalParams, rating: f64, age: f64) -> PoolEntry {
        let e = expected_fee(&fee);
        PoolEntry {
            player_id: id.into(),
            position: pos,
            is_current: current,
            fee,
            expected_fee: e,
            fee_variance: fee_variance(&fee),
            resale_price: e,
            rating,
            age,
            other_continent: false,
            other_top_league: false,
            same_country: false,
        }
    }

    /// A 23-player current squad (3 GK, 8 DF, 8 MF, 4 FW) plus three outsiders.
    pub(crate) fn squad_problem() -> Problem {
        let mut pool = Vec::new();
        let layout = [(Position::GK, 3), (Position::DF, 8), (Position::MF, 8), (Position::FW, 4)];
        let mut k = 0;
        for (pos, n) in layout {
            for _ in 0..n {
                pool.push(entry(&format!("c{k:02}"), pos, true, LogNormalParams::new(1.0, 0.8), 6.5 + 0.01 * k as f64, 26.0));
                k += 1;
            }
        }
        for (i, pos) in [Position::DF, Position::MF, Position::FW].into_iter().enumerate() {
            pool.push(entry(&format!("o{i}"), pos, false, LogNormalParams::new(1.5, 1.1), 7.2, 24.0));
        }
        Problem::new(pool, ConstraintBounds::paper_defaults(60.0, 0.0, 0.05)).unwrap()
    }

    #[test]
    fn status_quo_costs_nothing() {
        let p = squad_problem();
        let x = p.status_quo();
        assert_eq!(compute_cost(&x, &p).unwrap(), 0.0);
        assert_eq!(compute_risk(&x, &p).unwrap(), 0.0);
        let v = evaluate_constraints(&x, &p).unwrap();
        assert!(v.iter().all(|&r| r == 0.0), "{v:?}");
    }

    #[test]
    fn single_buy_cost_and_risk() {
        let p = squad_problem();
        let mut x = p.status_quo();
        let i = p.pool.iter().position(|e| e.player_id == "o0").unwrap();
        x[i] = true;
        assert!((compute_cost(&x, &p).unwrap() - 2.105f64.exp()).abs() < 1e-12);
        assert!((compute_risk(&x, &p).unwrap() - 158.53f64.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn sale_below_value_is_a_loss() {
        let mut p = squad_problem();
        p.pool[0].expected_fee = 5.0;
        p.pool[0].resale_price = 3.0;
        let mut x = p.status_quo();
        x[0] = false;
        assert!((compute_cost(&x, &p).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn count_violations() {
        let p = squad_problem();
        let mut x = p.status_quo();
        // two goalkeepers sold: one left against a minimum of two
        x[0] = false;
        x[1] = false;
        let v = evaluate_constraints(&x, &p).unwrap();
        assert_eq!(v[5], 1.0);
        let mut big = p.clone();
        big.bounds.k_tot_max = 23;
        let mut x = big.status_quo();
        x[23] = true;
        assert_eq!(evaluate_constraints(&x, &big).unwrap()[1], 1.0);
    }

    #[test]
    fn empty_selection_flags_averages() {
        let p = squad_problem();
        let x = vec![false; p.len()];
        let v = evaluate_constraints(&x, &p).unwrap();
        assert_eq!(v[16], 1.0);
        assert_eq!(v[17], 1.0);
    }

    #[test]
    fn penalty_is_linear_in_beta() {
        let p = squad_problem();
        let mut x = p.status_quo();
        x[0] = false;
        x[1] = false;
        let w = Weights::new(0.1, 0.1, 0.8);
        let f1 = fitness(&x, &p, &w, 1e6).unwrap();
        let f2 = fitness(&x, &p, &w, 2e6).unwrap();
        let s = f1.total_violation();
        assert!(s > 0.0);
        assert!((f1.fitness - f2.fitness - 1e6 * s).abs() < 1e-6 * 1e6 * s);
    }

    #[test]
    fn feasible_fitness_equals_objective() {
        let p = squad_problem();
        let f = fitness(&p.status_quo(), &p, &Weights::new(0.1, 0.1, 0.8), DEFAULT_BETA).unwrap();
        assert!(f.is_feasible());
        assert_eq!(f.fitness, f.objective);
        assert!(f.fitness.is_finite());
    }
}
