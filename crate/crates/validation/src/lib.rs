//! Shared fixtures and random instance generators for the validation
//! suites: the bundled synthetic league, the two reference auction setups
//! and seeded families of small optimisation problems, auction setups and
//! log-normal component lists.

use std::path::PathBuf;

use rand::Rng;
use squadmarket_core::auction::{Affinity, AuctionSetup, Bidder, ValuationDist};
use squadmarket_core::model_io::{
    load_coefficients, load_league_registry, load_player_table, load_scenario_config, LeagueRegistry, ModelCoefficients, PlayerRecord, Position,
    ScenarioConfig,
};
use squadmarket_core::numerics::{expected_fee, fee_variance, LogNormalParams};
use squadmarket_core::objective::{ConstraintBounds, PoolEntry, Problem};
use squadmarket_core::solvers::build_problem;

/// The repository's `fixtures/` directory.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// The synthetic 60-player league with its coefficients and scenario.
pub struct LeagueFixture {
    pub players: Vec<PlayerRecord>,
    pub registry: LeagueRegistry,
    pub coefficients: ModelCoefficients,
    pub config: ScenarioConfig,
    pub problem: Problem,
}

pub fn league_fixture() -> LeagueFixture {
    let dir = fixtures_dir();
    let players = load_player_table(dir.join("league/players.csv")).expect("players fixture");
    let registry = load_league_registry(dir.join("league/clubs.json")).expect("clubs fixture");
    let coefficients = load_coefficients(dir.join("coefficients.json")).expect("coefficients fixture");
    let config = load_scenario_config(dir.join("league/scenario.json")).expect("scenario fixture");
    let problem = build_problem(&players, &registry, &coefficients, &config).expect("fixture problem");
    LeagueFixture { players, registry, coefficients, config, problem }
}

/// A bundled auction setup, e.g. `"almiron"` or `"traore"`.
pub fn auction_fixture(name: &str) -> AuctionSetup {
    let path = fixtures_dir().join(format!("auction/{name}.json"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).expect("auction fixture")
}

fn pool_entry<R: Rng>(rng: &mut R, id: String, position: Position, current: bool) -> PoolEntry {
    let fee = LogNormalParams::new(rng.random_range(0.0..2.0), rng.random_range(0.3..1.0));
    let e = expected_fee(&fee);
    PoolEntry {
        player_id: id,
        position,
        is_current: current,
        fee,
        expected_fee: e,
        fee_variance: fee_variance(&fee),
        resale_price: e * rng.random_range(0.8..1.3),
        rating: rng.random_range(6.3..7.4),
        age: rng.random_range(19.0..34.0),
        other_continent: !current && rng.random_bool(0.3),
        other_top_league: !current && rng.random_bool(0.3),
        same_country: !current && rng.random_bool(0.3),
    }
}

/// A random planning instance with at most 12 decision variables: a small
/// current squad (one goalkeeper plus outfield players) and a few outside
/// candidates, with bounds loose enough that the status quo is feasible.
/// Objective terms are left in raw units so that cost, risk and quality
/// trade off at comparable magnitudes.
pub fn random_small_problem<R: Rng>(rng: &mut R) -> Problem {
    let n_cur = rng.random_range(5..=8);
    let n_out = rng.random_range(2..=12 - n_cur);
    let outfield = [Position::DF, Position::MF, Position::FW];
    let mut pool = Vec::with_capacity(n_cur + n_out);
    for i in 0..n_cur {
        let pos = if i == 0 { Position::GK } else { outfield[rng.random_range(0..3)] };
        pool.push(pool_entry(rng, format!("c{i}"), pos, true));
    }
    let all = [Position::GK, Position::DF, Position::MF, Position::FW];
    for i in 0..n_out {
        let pos = all[rng.random_range(0..4)];
        pool.push(pool_entry(rng, format!("o{i}"), pos, false));
    }
    let count = |pos: Position| pool.iter().filter(|p| p.is_current && p.position == pos).count() as i64;
    let bounds = ConstraintBounds {
        k_tot_max: n_cur as i64 + 1,
        k_retain_min: n_cur as i64 - 2,
        k_transfer_max: 3,
        gk_min: 1,
        gk_max: 2,
        df_min: (count(Position::DF) - 1).max(0),
        mf_min: (count(Position::MF) - 1).max(0),
        fw_min: (count(Position::FW) - 1).max(0),
        buy_min: [0; 4],
        other_continent_min: 0,
        other_continent_max: 1,
        top_league_min: 0,
        local_min: 0,
        profit_min: 0.0,
        budget_max: rng.random_range(15.0..60.0),
        alpha: 0.05,
    };
    Problem::new(pool, bounds).expect("valid random problem")
}

/// A random asymmetric setup with two to four bidders: log-normal
/// valuations with a common spread, logistic affinities centred below the
/// bidder's median valuation and a log-normal reserve.
pub fn random_auction_setup<R: Rng>(rng: &mut R) -> AuctionSetup {
    let n = rng.random_range(2..=4);
    let sigma = rng.random_range(0.9..1.2);
    let bidders = (0..n)
        .map(|c| {
            let mu: f64 = rng.random_range(1.0..1.8);
            Bidder {
                club_id: format!("B{c}"),
                valuation: ValuationDist::LogNormal { mu, sigma },
                affinity: Affinity::Logistic { center: rng.random_range(0.7..0.95) * mu.exp(), scale: 1.0 },
            }
        })
        .collect();
    AuctionSetup::new("random", "S", LogNormalParams::new(rng.random_range(0.5..1.5), 1.1), bidders)
}

/// Two bidders with uniform `[0, 1]` valuations, constant affinity and a
/// negligible reserve: the textbook symmetric first-price auction whose
/// inverse bid is `ψ(b) = 2b`.
pub fn symmetric_uniform_setup() -> AuctionSetup {
    let bidders = (0..2)
        .map(|c| Bidder {
            club_id: format!("U{c}"),
            valuation: ValuationDist::Uniform { lo: 0.0, hi: 1.0 },
            affinity: Affinity::Constant { value: 1.0 },
        })
        .collect();
    let mut s = AuctionSetup::new("uniform", "S", LogNormalParams::new(-10.0, 0.1), bidders);
    s.upsilon = Some(0.45);
    s.gap_floor = 0.05;
    s.common_lower_support = Some(0.1);
    s
}

/// One to eight independent log-normal fee components.
pub fn random_fee_components<R: Rng>(rng: &mut R) -> Vec<LogNormalParams> {
    let n = rng.random_range(1..=8);
    (0..n).map(|_| LogNormalParams::new(rng.random_range(0.0..3.0), rng.random_range(0.1..1.2))).collect()
}
