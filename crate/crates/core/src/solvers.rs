//! Transfer-strategy pipeline: pricing the pool, directive filtering,
//! heuristic search, feasibility verification with a single rerun, an
//! exhaustive oracle and a solver benchmark.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{ClubContext, Directives, LeagueRegistry, ModelCoefficients, ModelIoError, PlayerRecord, Position, ScenarioConfig, Weights};
use crate::numerics::LogNormalParams;
use crate::objective::{fitness, ObjectiveBreakdown, ObjectiveError, PoolEntry, Problem, DEFAULT_BETA};
use crate::predictors::{predict_fee, predict_rating, PredictError};

/// Largest pool the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX: usize = 24;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("problem infeasible after directive filtering: {0}")]
    InfeasibleAfterFiltering(String),
    #[error("pool of {0} players exceeds the exhaustive-search limit")]
    PoolTooLarge(usize),
    #[error("directive names unknown player `{0}`")]
    UnknownPlayer(String),
    #[error("invalid directive: {0}")]
    BadDirective(String),
    #[error("unknown club `{0}`")]
    UnknownClub(String),
    #[error("invalid solver parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Search backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "BRUTE")]
    Brute,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ga => "GA",
            Method::Sa => "SA",
            Method::Hc => "HC",
            Method::Brute => "BRUTE",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GA" => Ok(Method::Ga),
            "SA" => Ok(Method::Sa),
            "HC" => Ok(Method::Hc),
            "BRUTE" => Ok(Method::Brute),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Tuning of the search backends. Budgets are shared: the GA runs
/// `max_iterations` generations of `population` candidates, simulated
/// annealing makes `max_iterations · population` moves and each
/// hill-climbing restart takes at most `max_iterations` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub method: Method,
    pub population: usize,
    pub max_iterations: usize,
    /// Generations (GA) or moves / population (SA) without improvement
    /// before stopping.
    pub stall_limit: usize,
    /// Per-bit mutation probability; `1/n` when absent.
    pub mutation_rate: Option<f64>,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    pub elite: usize,
    /// Geometric cooling ratio; chosen so the final temperature is
    /// `1e-4 · T0` when absent.
    pub cooling_ratio: Option<f64>,
    /// Starting temperature; calibrated from sampled moves when absent.
    pub initial_temperature: Option<f64>,
    pub restarts: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            method: Method::Ga,
            population: 60,
            max_iterations: 300,
            stall_limit: 60,
            mutation_rate: None,
            crossover_rate: 0.8,
            tournament_size: 3,
            elite: 2,
            cooling_ratio: None,
            initial_temperature: None,
            restarts: 10,
            beta: DEFAULT_BETA,
            seed: 42,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("population", self.population),
            ("max_iterations", self.max_iterations),
            ("stall_limit", self.stall_limit),
            ("tournament_size", self.tournament_size),
            ("restarts", self.restarts),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.elite >= self.population {
            return Err("elite must be smaller than population".into());
        }
        for (name, v) in [("crossover_rate", Some(self.crossover_rate)), ("mutation_rate", self.mutation_rate)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("{name} must lie in [0, 1]"));
                }
            }
        }
        if let Some(r) = self.cooling_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err("cooling_ratio must lie in (0, 1)".into());
            }
        }
        if let Some(t) = self.initial_temperature {
            if !(t > 0.0) {
                return Err("initial_temperature must be positive".into());
            }
        }
        if !(self.beta > 0.0) {
            return Err("beta must be positive".into());
        }
        Ok(())
    }

    /// Parameters for the single rerun: iteration and stall budgets doubled.
    pub fn doubled(&self) -> Self {
        Self { max_iterations: self.max_iterations * 2, stall_limit: self.stall_limit * 2, ..self.clone() }
    }
}

// ---------------------------------------------------------------------------
// Building the priced pool
// ---------------------------------------------------------------------------

/// Prices every player in the table for `config.focal_club`: rating
/// forecasts at the focal club, purchase-fee distributions for outsiders
/// and market-value distributions (sold to the open market) for current
/// players.
pub fn build_problem(
    players: &[PlayerRecord],
    registry: &LeagueRegistry,
    coeffs: &ModelCoefficients,
    config: &ScenarioConfig,
) -> Result<Problem, SolveError> {
    config.validate()?;
    let contexts = ClubContext::build_all(registry, players)?;
    let focal = contexts.get(&config.focal_club).ok_or_else(|| SolveError::UnknownClub(config.focal_club.clone()))?;
    let market = ClubContext::external_market(&contexts);
    let mut pool = Vec::with_capacity(players.len());
    for p in players {
        let league = registry
            .league(&p.league_id)
            .ok_or(ObjectiveError::MissingAnnotation(p.player_id.clone(), "league"))?;
        let rating = predict_rating(p, focal, coeffs)?.value;
        let is_current = p.club_id == focal.club_id;
        let fee = if is_current {
            predict_fee(p, focal, &market, config.time_index, coeffs)?
        } else {
            let seller = contexts.get(&p.club_id).unwrap_or(&market);
            predict_fee(p, seller, focal, config.time_index, coeffs)?
        };
        let e = fee.mean();
        let resale = if is_current { config.resale_prices.get(&p.player_id).copied().unwrap_or(e) } else { 0.0 };
        pool.push(PoolEntry {
            player_id: p.player_id.clone(),
            position: p.position,
            is_current,
            fee,
            expected_fee: e,
            fee_variance: fee.variance(),
            resale_price: resale,
            rating,
            age: p.age,
            other_continent: league.continent != focal.continent,
            other_top_league: league.top_league && league.league_id != focal.league_id,
            same_country: league.country == focal.country,
        });
    }
    let bounds = config.bounds.resolve(focal, config.alpha);
    let problem = Problem::new(pool, bounds)?;
    Ok(if config.normalize_objective { problem.with_normalization() } else { problem })
}

// ---------------------------------------------------------------------------
// Directive filtering
// ---------------------------------------------------------------------------

/// A problem with directive players moved out of the decision set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedProblem {
    pub full: Problem,
    pub reduced: Problem,
    /// Index in `full.pool` of each entry of `reduced.pool`.
    pub index: Vec<usize>,
    /// Forced value of each full-pool entry, `None` for free entries.
    pub forced: Vec<Option<bool>>,
}

impl ReducedProblem {
    /// Problem without directives: the reduced problem is the full one.
    pub fn identity(full: Problem) -> Self {
        let n = full.len();
        ReducedProblem { reduced: full.clone(), full, index: (0..n).collect(), forced: vec![None; n] }
    }

    /// Expands a decision over the reduced pool to the full pool.
    pub fn expand(&self, x: &[bool]) -> Vec<bool> {
        let mut out: Vec<bool> = self.forced.iter().map(|f| f.unwrap_or(false)).collect();
        for (k, &i) in self.index.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }
}

/// Removes must-buy, must-sell and keep players from the decision set and
/// adjusts bounds and fixed contributions so that every residual decision
/// scores exactly as its expansion does in the full problem.
///
/// Must-buy players pre-charge both the mean and the variance of their
/// fee into the budget chance constraint.
pub fn preprocess(full: &Problem, directives: &Directives) -> Result<ReducedProblem, SolveError> {
    directives.check_disjoint()?;
    let by_id: BTreeMap<&str, usize> = full.pool.iter().enumerate().map(|(i, p)| (p.player_id.as_str(), i)).collect();
    let mut forced = vec![None; full.len()];
    let mut bounds = full.bounds;
    let mut fixed = full.fixed.clone();
    let lookup = |id: &String| by_id.get(id.as_str()).copied().ok_or_else(|| SolveError::UnknownPlayer(id.clone()));

    for id in &directives.must_buy {
        let i = lookup(id)?;
        let p = &full.pool[i];
        if p.is_current {
            return Err(SolveError::BadDirective(format!("must-buy player `{id}` is already in the squad")));
        }
        forced[i] = Some(true);
        bounds.k_tot_max -= 1;
        bounds.k_transfer_max -= 1;
        *bounds.position_min_mut(p.position) -= 1;
        bounds.buy_min[p.position.index()] -= 1;
        if p.position == Position::GK {
            bounds.gk_max -= 1;
        }
        if p.other_continent {
            bounds.other_continent_min -= 1;
            bounds.other_continent_max -= 1;
        }
        if p.other_top_league {
            bounds.top_league_min -= 1;
        }
        if p.same_country {
            bounds.local_min -= 1;
        }
        fixed.cost += p.expected_fee;
        fixed.variance += p.fee_variance;
        fixed.buy_fees.push(p.fee);
        fixed.quality += p.rating;
        fixed.selected += 1;
        fixed.age_sum += p.age;
        fixed.rating_sum += p.rating;
    }
    for id in &directives.must_sell {
        let i = lookup(id)?;
        let p = &full.pool[i];
        if !p.is_current {
            return Err(SolveError::BadDirective(format!("must-sell player `{id}` is not in the squad")));
        }
        forced[i] = Some(false);
        bounds.k_transfer_max -= 1;
        bounds.profit_min -= p.expected_fee;
        fixed.cost += p.expected_fee - p.resale_price;
    }
    for id in &directives.keep {
        let i = lookup(id)?;
        let p = &full.pool[i];
        if !p.is_current {
            return Err(SolveError::BadDirective(format!("keep player `{id}` is not in the squad")));
        }
        forced[i] = Some(true);
        bounds.k_tot_max -= 1;
        bounds.k_retain_min -= 1;
        *bounds.position_min_mut(p.position) -= 1;
        if p.position == Position::GK {
            bounds.gk_max -= 1;
        }
        fixed.quality += p.rating;
        fixed.selected += 1;
        fixed.age_sum += p.age;
        fixed.rating_sum += p.rating;
    }

    for (name, v) in [
        ("squad size", bounds.k_tot_max),
        ("transfers", bounds.k_transfer_max),
        ("goalkeepers", bounds.gk_max),
        ("other-continent buys", bounds.other_continent_max),
    ] {
        if v < 0 {
            return Err(SolveError::InfeasibleAfterFiltering(format!("directives exceed the maximum {name} by {}", -v)));
        }
    }
    // lower bounds already met by fixed players are simply slack
    for m in [
        &mut bounds.k_retain_min,
        &mut bounds.gk_min,
        &mut bounds.df_min,
        &mut bounds.mf_min,
        &mut bounds.fw_min,
        &mut bounds.other_continent_min,
        &mut bounds.top_league_min,
        &mut bounds.local_min,
    ] {
        *m = (*m).max(0);
    }
    for m in bounds.buy_min.iter_mut() {
        *m = (*m).max(0);
    }

    let index: Vec<usize> = (0..full.len()).filter(|&i| forced[i].is_none()).collect();
    let reduced = Problem {
        pool: index.iter().map(|&i| full.pool[i].clone()).collect(),
        bounds,
        fixed,
        squad_stats: full.squad_stats,
        normalization: full.normalization,
    };
    Ok(ReducedProblem { full: full.clone(), reduced, index, forced })
}

// ---------------------------------------------------------------------------
// Candidate ordering
// ---------------------------------------------------------------------------

/// A scored decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bits: Vec<bool>,
    pub fitness: f64,
    pub transfers: usize,
}

fn selected_ids<'a>(problem: &'a Problem, bits: &[bool]) -> Vec<&'a str> {
    let mut ids: Vec<&str> = problem.pool.iter().zip(bits).filter(|(_, &b)| b).map(|(p, _)| p.player_id.as_str()).collect();
    ids.sort_unstable();
    ids
}

/// Total order on candidates: higher fitness, then fewer transfers, then
/// the lexicographically smaller list of selected ids. `Greater` means `a`
/// is better.
pub fn compare_candidates(problem: &Problem, a: &Candidate, b: &Candidate) -> Ordering {
    a.fitness
        .total_cmp(&b.fitness)
        .then_with(|| b.transfers.cmp(&a.transfers))
        .then_with(|| selected_ids(problem, &b.bits).cmp(&selected_ids(problem, &a.bits)))
}

struct Evaluator<'a> {
    problem: &'a Problem,
    weights: &'a Weights,
    beta: f64,
    count: std::sync::atomic::AtomicUsize,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a Problem, weights: &'a Weights, beta: f64) -> Self {
        Self { problem, weights, beta, count: std::sync::atomic::AtomicUsize::new(0) }
    }

    fn score(&self, bits: Vec<bool>) -> Candidate {
        self.count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let f = fitness(&bits, self.problem, self.weights, self.beta).expect("decision length matches pool").fitness;
        let transfers = self.problem.transfers(&bits);
        Candidate { bits, fitness: f, transfers }
    }

    fn score_all(&self, batch: Vec<Vec<bool>>) -> Vec<Candidate> {
        batch.into_par_iter().map(|b| self.score(b)).collect()
    }

    fn evaluations(&self) -> usize {
        self.count.load(std::sync::atomic::Ordering::Relaxed)
    }

    fn better(&self, a: &Candidate, b: &Candidate) -> bool {
        compare_candidates(self.problem, a, b) == Ordering::Greater
    }
}

/// Status quo with between one and `max_flips` random bits flipped.
fn perturbed(start: &[bool], max_flips: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = start.len();
    let mut bits = start.to_vec();
    if n == 0 {
        return bits;
    }
    let k = rng.random_range(1..=max_flips.clamp(1, n));
    for i in sample(rng, n, k) {
        bits[i] = !bits[i];
    }
    bits
}

/// Outcome of one search run on a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best: Candidate,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best penalised fitness after each iteration.
    pub history: Vec<f64>,
}

/// Optional progress sink receiving the completed fraction of a run.
pub type Progress<'a> = Option<&'a (dyn Fn(f64) + Sync)>;

fn report(progress: Progress<'_>, frac: f64) {
    if let Some(f) = progress {
        f(frac.clamp(0.0, 1.0));
    }
}

// ---------------------------------------------------------------------------
// Genetic algorithm
// ---------------------------------------------------------------------------

fn tournament<'c>(pop: &'c [Candidate], size: usize, ev: &Evaluator<'_>, rng: &mut ChaCha8Rng) -> &'c Candidate {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if ev.better(c, best) {
            best = c;
        }
    }
    best
}

/// Genetic algorithm with tournament selection, uniform crossover,
/// per-bit mutation and elitism. The initial population is the status quo
/// plus perturbations of at most `k_transfer_max` flips; each generation is
/// scored in parallel.
pub fn genetic_algorithm(problem: &Problem, weights: &Weights, params: &SolverParams, progress: Progress<'_>) -> SearchResult {
    let ev = Evaluator::new(problem, weights, params.beta);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = problem.len();
    let start = problem.status_quo();
    let max_flips = problem.bounds.k_transfer_max.max(1) as usize;
    let mut init = vec![start.clone()];
    while init.len() < params.population {
        init.push(perturbed(&start, max_flips, &mut rng));
    }
    let mut pop = ev.score_all(init);
    let sort = |pop: &mut Vec<Candidate>| pop.sort_by(|a, b| compare_candidates(problem, b, a));
    sort(&mut pop);
    let mutation = params.mutation_rate.unwrap_or(1.0 / n.max(1) as f64);
    let mut history = vec![pop[0].fitness];
    let mut stall = 0;
    let mut gen = 0;
    while gen < params.max_iterations && stall < params.stall_limit && n > 0 {
        gen += 1;
        let mut children = Vec::with_capacity(params.population - params.elite);
        while children.len() + params.elite < params.population {
            let a = tournament(&pop, params.tournament_size, &ev, &mut rng);
            let b = tournament(&pop, params.tournament_size, &ev, &mut rng);
            let mut child: Vec<bool> = if rng.random::<f64>() < params.crossover_rate {
                a.bits.iter().zip(&b.bits).map(|(&x, &y)| if rng.random::<bool>() { x } else { y }).collect()
            } else {
                a.bits.clone()
            };
            for bit in child.iter_mut() {
                if rng.random::<f64>() < mutation {
                    *bit = !*bit;
                }
            }
            children.push(child);
        }
        let prev_best = pop[0].clone();
        let mut next: Vec<Candidate> = pop[..params.elite].to_vec();
        next.extend(ev.score_all(children));
        sort(&mut next);
        pop = next;
        if ev.better(&pop[0], &prev_best) {
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(pop[0].fitness);
        report(progress, gen as f64 / params.max_iterations as f64);
    }
    SearchResult { best: pop[0].clone(), iterations: gen, evaluations: ev.evaluations(), history }
}

// ---------------------------------------------------------------------------
// Simulated annealing
// ---------------------------------------------------------------------------

/// Starting temperature at which a typical worsening single flip is
/// accepted with probability one half, measured on the unpenalised
/// objective of sampled flips around `start`.
fn calibrate_temperature(problem: &Problem, weights: &Weights, start: &[bool], rng: &mut ChaCha8Rng) -> f64 {
    let n = problem.len();
    let base = fitness(start, problem, weights, 1.0).expect("length").objective;
    let mut deltas = Vec::new();
    for _ in 0..n.min(50) {
        let i = rng.random_range(0..n);
        let mut x = start.to_vec();
        x[i] = !x[i];
        let d = (fitness(&x, problem, weights, 1.0).expect("length").objective - base).abs();
        if d > 0.0 && d.is_finite() {
            deltas.push(d);
        }
    }
    if deltas.is_empty() {
        return 1.0;
    }
    deltas.iter().sum::<f64>() / deltas.len() as f64 / std::f64::consts::LN_2
}

/// Simulated annealing over single-bit flips with geometric cooling.
pub fn simulated_annealing(problem: &Problem, weights: &Weights, params: &SolverParams, progress: Progress<'_>) -> SearchResult {
    let ev = Evaluator::new(problem, weights, params.beta);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = problem.len();
    let mut current = ev.score(problem.status_quo());
    let mut best = current.clone();
    let moves = params.max_iterations * params.population;
    let stall_moves = params.stall_limit * params.population;
    let mut history = vec![best.fitness];
    if n == 0 {
        return SearchResult { best, iterations: 0, evaluations: ev.evaluations(), history };
    }
    let t0 = params.initial_temperature.unwrap_or_else(|| calibrate_temperature(problem, weights, &current.bits, &mut rng));
    let ratio = params.cooling_ratio.unwrap_or_else(|| (1e-4f64).powf(1.0 / moves as f64));
    let mut t = t0;
    let mut since_best = 0;
    let mut it = 0;
    while it < moves && since_best < stall_moves {
        it += 1;
        let i = rng.random_range(0..n);
        let mut bits = current.bits.clone();
        bits[i] = !bits[i];
        let cand = ev.score(bits);
        let delta = cand.fitness - current.fitness;
        let accept = delta >= 0.0 || rng.random::<f64>() < (delta / t).exp();
        if accept {
            current = cand;
            if ev.better(&current, &best) {
                best = current.clone();
                since_best = 0;
            } else {
                since_best += 1;
            }
        } else {
            since_best += 1;
        }
        t *= ratio;
        if it % params.population == 0 {
            history.push(best.fitness);
            report(progress, it as f64 / moves as f64);
        }
    }
    SearchResult { best, iterations: it, evaluations: ev.evaluations(), history }
}

// ---------------------------------------------------------------------------
// Hill climbing
// ---------------------------------------------------------------------------

/// Steepest-ascent hill climbing over single-bit flips with random
/// restarts; the first start is the status quo.
pub fn hill_climbing(problem: &Problem, weights: &Weights, params: &SolverParams, progress: Progress<'_>) -> SearchResult {
    let ev = Evaluator::new(problem, weights, params.beta);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = problem.len();
    let start = problem.status_quo();
    let max_flips = problem.bounds.k_transfer_max.max(1) as usize;
    let mut best: Option<Candidate> = None;
    let mut history = Vec::new();
    let mut steps = 0;
    for r in 0..params.restarts {
        let init = if r == 0 { start.clone() } else { perturbed(&start, max_flips, &mut rng) };
        let mut current = ev.score(init);
        for _ in 0..params.max_iterations {
            if n == 0 {
                break;
            }
            steps += 1;
            let neighbours: Vec<Vec<bool>> = (0..n)
                .map(|i| {
                    let mut b = current.bits.clone();
                    b[i] = !b[i];
                    b
                })
                .collect();
            let scored = ev.score_all(neighbours);
            let top = scored.into_iter().reduce(|a, b| if ev.better(&b, &a) { b } else { a }).expect("n > 0");
            if top.fitness > current.fitness {
                current = top;
            } else {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| ev.better(&current, b)) {
            best = Some(current);
        }
        history.push(best.as_ref().expect("set").fitness);
        report(progress, (r + 1) as f64 / params.restarts as f64);
    }
    let best = best.expect("at least one restart");
    SearchResult { best, iterations: steps, evaluations: ev.evaluations(), history }
}

// ---------------------------------------------------------------------------
// Exhaustive oracle
// ---------------------------------------------------------------------------

/// Enumerates all `2^n` decisions. Returns the best feasible decision by
/// raw objective when one exists, otherwise the best penalised one.
pub fn brute_force_search(problem: &Problem, weights: &Weights, beta: f64) -> Result<SearchResult, SolveError> {
    let n = problem.len();
    if n > BRUTE_FORCE_MAX {
        return Err(SolveError::PoolTooLarge(n));
    }
    let ev = Evaluator::new(problem, weights, beta);
    let decode = |m: u64| (0..n).map(|i| m >> i & 1 == 1).collect::<Vec<bool>>();
    let pick = |a: Option<(bool, Candidate)>, b: Option<(bool, Candidate)>| match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => {
            // feasible candidates beat infeasible ones; within a class the
            // usual order applies
            let better = match (a.0, b.0) {
                (true, false) => true,
                (false, true) => false,
                _ => compare_candidates(problem, &a.1, &b.1) != Ordering::Less,
            };
            Some(if better { a } else { b })
        }
    };
    let best = (0..1u64 << n)
        .into_par_iter()
        .map(|m| {
            let bits = decode(m);
            let br = fitness(&bits, problem, weights, beta).expect("length");
            ev.count.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            let transfers = problem.transfers(&bits);
            Some((br.is_feasible(), Candidate { bits, fitness: br.fitness, transfers }))
        })
        .reduce(|| None, pick)
        .expect("at least the empty decision")
        .1;
    Ok(SearchResult { history: vec![best.fitness], best, iterations: 1 << n, evaluations: ev.evaluations() })
}

/// Runs one search with the configured backend.
pub fn search(problem: &Problem, weights: &Weights, params: &SolverParams, progress: Progress<'_>) -> Result<SearchResult, SolveError> {
    params.validate().map_err(SolveError::BadParams)?;
    Ok(match params.method {
        Method::Ga => genetic_algorithm(problem, weights, params, progress),
        Method::Sa => simulated_annealing(problem, weights, params, progress),
        Method::Hc => hill_climbing(problem, weights, params, progress),
        Method::Brute => brute_force_search(problem, weights, params.beta)?,
    })
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedBuy {
    pub player_id: String,
    /// Millions €.
    pub expected_fee: f64,
    /// Interquartile range of the fee distribution, millions €.
    pub fee_iqr: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSale {
    pub player_id: String,
    /// Millions €.
    pub expected_fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub method: Method,
    pub iterations: usize,
    pub evaluations: usize,
    pub rerun_used: bool,
    pub seed: u64,
}

/// Recommended buys and sales with their evaluation against the original
/// (unreduced) constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    /// Decision over the pool left after directive filtering.
    pub decision: BTreeMap<String, bool>,
    pub buys: Vec<PlannedBuy>,
    pub sells: Vec<PlannedSale>,
    pub breakdown: ObjectiveBreakdown,
    pub feasible: bool,
    pub solver_trace: SolverTrace,
}

impl TransferPlan {
    pub fn transfers(&self) -> usize {
        self.buys.len() + self.sells.len()
    }
}

fn iqr(fee: &LogNormalParams) -> (f64, f64) {
    if fee.sigma == 0.0 {
        let m = fee.mu.exp();
        return (m, m);
    }
    (fee.quantile(0.25).expect("valid p"), fee.quantile(0.75).expect("valid p"))
}

fn make_plan(rp: &ReducedProblem, x: &[bool], weights: &Weights, params: &SolverParams, trace: SolverTrace) -> Result<TransferPlan, SolveError> {
    let full_x = rp.expand(x);
    let breakdown = fitness(&full_x, &rp.full, weights, params.beta)?;
    let mut buys = Vec::new();
    let mut sells = Vec::new();
    for (p, &xi) in rp.full.pool.iter().zip(&full_x) {
        if !p.is_current && xi {
            buys.push(PlannedBuy { player_id: p.player_id.clone(), expected_fee: p.expected_fee, fee_iqr: iqr(&p.fee) });
        } else if p.is_current && !xi {
            sells.push(PlannedSale { player_id: p.player_id.clone(), expected_fee: p.expected_fee });
        }
    }
    let decision = rp.reduced.pool.iter().zip(x).map(|(p, &b)| (p.player_id.clone(), b)).collect();
    Ok(TransferPlan { decision, buys, sells, feasible: breakdown.is_feasible(), breakdown, solver_trace: trace })
}

/// Searches the reduced problem, re-checks the best decision against the
/// original constraints and, if it is infeasible, reruns once with doubled
/// iteration budgets.
pub fn solve(rp: &ReducedProblem, weights: &Weights, params: &SolverParams, progress: Progress<'_>) -> Result<TransferPlan, SolveError> {
    let first = search(&rp.reduced, weights, params, progress)?;
    let trace = |r: &SearchResult, rerun: bool| SolverTrace {
        method: params.method,
        iterations: r.iterations,
        evaluations: r.evaluations,
        rerun_used: rerun,
        seed: params.seed,
    };
    let plan = make_plan(rp, &first.best.bits, weights, params, trace(&first, false))?;
    if plan.feasible || params.method == Method::Brute {
        return Ok(plan);
    }
    let second = search(&rp.reduced, weights, &params.doubled(), progress)?;
    let mut t = trace(&second, true);
    t.evaluations += first.evaluations;
    make_plan(rp, &second.best.bits, weights, params, t)
}

/// Exhaustive counterpart of [`solve`].
pub fn brute_force(rp: &ReducedProblem, weights: &Weights, beta: f64) -> Result<TransferPlan, SolveError> {
    let r = brute_force_search(&rp.reduced, weights, beta)?;
    let params = SolverParams { method: Method::Brute, beta, ..SolverParams::default() };
    let trace = SolverTrace { method: Method::Brute, iterations: r.iterations, evaluations: r.evaluations, rerun_used: false, seed: 0 };
    make_plan(rp, &r.best.bits, weights, &params, trace)
}

/// Full pipeline for a priced problem: filter directives, then solve.
pub fn plan_transfers(full: &Problem, directives: &Directives, weights: &Weights, params: &SolverParams, progress: Progress<'_>) -> Result<TransferPlan, SolveError> {
    let rp = preprocess(full, directives)?;
    solve(&rp, weights, params, progress)
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// A named problem with its directives.
#[derive(Debug, Clone)]
pub struct BenchInstance {
    pub name: String,
    pub problem: Problem,
    pub directives: Directives,
}

/// One (instance, method, λ3) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance: String,
    pub method: Method,
    pub lambda3: f64,
    pub feasible: bool,
    /// Millions €.
    pub cost: f64,
    /// Cost divided by the budget cap.
    pub normalized_cost: f64,
    pub mean_rating: f64,
    /// Mean selected rating minus the current squad's mean rating.
    pub rating_improvement: f64,
    pub wall_time_ms: f64,
    pub evaluations: usize,
}

/// Pairwise dominance counts over shared feasible runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominanceCell {
    /// Runs where the row method has strictly lower normalised cost and
    /// strictly higher rating improvement than the column method.
    pub dominates: usize,
    /// Runs where both methods were feasible.
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub records: Vec<BenchRecord>,
    /// `matrix[a][b]`: how often `a` dominates `b`.
    pub matrix: BTreeMap<String, BTreeMap<String, DominanceCell>>,
}

/// Weights of the benchmark grid: the cost and risk weights share the
/// remainder equally, `λ1 = λ2 = (1 − λ3)/2`.
pub fn bench_weights(lambda3: f64) -> Weights {
    let rest = (1.0 - lambda3) / 2.0;
    Weights::new(rest, rest, lambda3)
}

/// Runs every method on every instance for each `λ3` and tabulates
/// pairwise dominance over runs where both methods were feasible.
pub fn compare_solvers(instances: &[BenchInstance], methods: &[Method], lambda3_grid: &[f64], params: &SolverParams) -> Result<DominanceReport, SolveError> {
    if methods.len() < 2 {
        return Err(SolveError::BadParams("at least two methods are required".into()));
    }
    let mut jobs = Vec::new();
    for inst in instances {
        for (mi, &m) in methods.iter().enumerate() {
            for &l3 in lambda3_grid {
                jobs.push((inst, mi, m, l3));
            }
        }
    }
    let records: Vec<BenchRecord> = jobs
        .into_par_iter()
        .map(|(inst, _, m, l3)| -> Result<BenchRecord, SolveError> {
            let p = SolverParams { method: m, ..params.clone() };
            let w = bench_weights(l3);
            let started = Instant::now();
            let plan = plan_transfers(&inst.problem, &inst.directives, &w, &p, None)?;
            let wall = started.elapsed().as_secs_f64() * 1e3;
            let n_sel = count_selected(&inst.problem, &plan);
            let mean_rating = if n_sel > 0 { plan.breakdown.quality / n_sel as f64 } else { 0.0 };
            Ok(BenchRecord {
                instance: inst.name.clone(),
                method: m,
                lambda3: l3,
                feasible: plan.feasible,
                cost: plan.breakdown.cost,
                normalized_cost: plan.breakdown.cost / inst.problem.bounds.budget_max,
                mean_rating,
                rating_improvement: mean_rating - inst.problem.squad_stats.avg_rating,
                wall_time_ms: wall,
                evaluations: plan.solver_trace.evaluations,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(DominanceReport { matrix: dominance_matrix(&records, methods), records })
}

fn count_selected(problem: &Problem, plan: &TransferPlan) -> usize {
    let current = problem.pool.iter().filter(|p| p.is_current).count();
    current - plan.sells.len() + plan.buys.len()
}

/// Dominance counts from benchmark records.
pub fn dominance_matrix(records: &[BenchRecord], methods: &[Method]) -> BTreeMap<String, BTreeMap<String, DominanceCell>> {
    let key = |r: &BenchRecord| (r.instance.clone(), r.lambda3.to_bits());
    let mut by_method: BTreeMap<Method, BTreeMap<(String, u64), &BenchRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().insert(key(r), r);
    }
    let mut out = BTreeMap::new();
    let uniq: BTreeSet<Method> = methods.iter().copied().collect();
    for &a in &uniq {
        let mut row = BTreeMap::new();
        for &b in &uniq {
            let mut cell = DominanceCell::default();
            if let (Some(ra), Some(rb)) = (by_method.get(&a), by_method.get(&b)) {
                for (k, x) in ra {
                    if let Some(y) = rb.get(k) {
                        if x.feasible && y.feasible {
                            cell.shared += 1;
                            if x.normalized_cost < y.normalized_cost && x.rating_improvement > y.rating_improvement {
                                cell.dominates += 1;
                            }
                        }
                    }
                }
            }
            row.insert(b.to_string(), cell);
        }
        out.insert(a.to_string(), row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ConstraintBounds;
    use crate::objective::tests::{entry, squad_problem};

    fn w() -> Weights {
        Weights::new(0.1, 0.1, 0.8)
    }

    #[test]
    fn keep_fifteen_zeroes_retain_bound() {
        let p = squad_problem();
        let keep: BTreeSet<String> = p.pool.iter().filter(|e| e.is_current).take(15).map(|e| e.player_id.clone()).collect();
        let rp = preprocess(&p, &Directives { keep, ..Default::default() }).unwrap();
        assert_eq!(rp.reduced.bounds.k_retain_min, 0);
        assert_eq!(rp.reduced.bounds.k_tot_max, 15);
        assert_eq!(rp.reduced.len(), p.len() - 15);
    }

    #[test]
    fn must_sell_adjusts_profit_and_transfers() {
        let mut p = squad_problem();
        p.bounds.profit_min = 10.0;
        for i in [3, 4] {
            p.pool[i].expected_fee = 3.0;
        }
        let must_sell = [p.pool[3].player_id.clone(), p.pool[4].player_id.clone()].into_iter().collect();
        let rp = preprocess(&p, &Directives { must_sell, ..Default::default() }).unwrap();
        assert!((rp.reduced.bounds.profit_min - 4.0).abs() < 1e-12);
        assert_eq!(rp.reduced.bounds.k_transfer_max, 8);
    }

    #[test]
    fn empty_directives_are_identity() {
        let p = squad_problem();
        let rp = preprocess(&p, &Directives::default()).unwrap();
        assert_eq!(rp.reduced, p);
    }

    #[test]
    fn too_many_keeps_is_infeasible() {
        let mut p = squad_problem();
        p.bounds.k_tot_max = 10;
        let keep = p.pool.iter().filter(|e| e.is_current).take(11).map(|e| e.player_id.clone()).collect();
        let err = preprocess(&p, &Directives { keep, ..Default::default() }).unwrap_err();
        assert!(matches!(err, SolveError::InfeasibleAfterFiltering(_)));
    }

    #[test]
    fn brute_force_rejects_large_pools() {
        let p = squad_problem();
        assert!(p.len() > BRUTE_FORCE_MAX);
        assert!(matches!(brute_force_search(&p, &w(), DEFAULT_BETA), Err(SolveError::PoolTooLarge(_))));
    }

    #[test]
    fn single_improving_candidate_is_bought() {
        let mut bounds = ConstraintBounds::paper_defaults(100.0, 0.0, 0.05);
        bounds.k_retain_min = 0;
        bounds.gk_min = 0;
        bounds.df_min = 0;
        bounds.mf_min = 0;
        bounds.fw_min = 0;
        let pool = vec![
            entry("a", Position::MF, true, LogNormalParams::new(0.0, 0.5), 6.0, 27.0),
            entry("b", Position::MF, false, LogNormalParams::new(0.0, 0.5), 7.5, 25.0),
        ];
        let p = Problem::new(pool, bounds).unwrap();
        let plan = brute_force(&ReducedProblem::identity(p), &w(), DEFAULT_BETA).unwrap();
        assert!(plan.feasible);
        assert_eq!(plan.buys.len(), 1);
        assert_eq!(plan.buys[0].player_id, "b");
    }

    #[test]
    fn over_constrained_instance_reports_infeasible_after_rerun() {
        let mut p = squad_problem();
        p.bounds.k_retain_min = 100;
        let params = SolverParams { max_iterations: 20, stall_limit: 5, ..SolverParams::default() };
        let plan = plan_transfers(&p, &Directives::default(), &w(), &params, None).unwrap();
        assert!(!plan.feasible);
        assert!(plan.solver_trace.rerun_used);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Ga, Method::Sa, Method::Hc, Method::Brute] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&s).unwrap(), m);
        }
    }
}
