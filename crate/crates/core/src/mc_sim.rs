//! Monte Carlo simulation of multi-round transfer negotiations.
//!
//! Each path draws one valuation per bidder, then repeats at most
//! `rounds` times: every bidder bids from the equilibrium of the current
//! round (or by direct maximisation when alone), the highest bid wins ties
//! uniformly at random, and the seller accepts it with the round's
//! acceptance probability. A rejected bid becomes the next round's
//! threshold; a path ends unsold when every bidder abstains or the round
//! limit is reached.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{acceptance_probability, bid_single, build_lookup, AuctionError, AuctionSetup, RoundLookup};
use crate::numerics::nearest_rank_quantile;
use crate::solvers::Progress;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("the round lookup has no entries")]
    EmptyLookup,
    #[error("rounds and n_sim must be positive")]
    BadParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub rounds: usize,
    pub n_sim: usize,
    pub seed: u64,
    /// Keep the per-path traces in the result.
    #[serde(default)]
    pub keep_paths: bool,
}

/// Outcome of one simulated negotiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub valuations: Vec<f64>,
    /// Winning (highest) bid of each round reached.
    pub round_bids: Vec<f64>,
    /// Index of the round (1-based) in which the sale happened.
    pub sold_round: Option<usize>,
    pub winner: Option<usize>,
    pub price: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
}

/// Summary statistics of a price sample: nearest-rank quartiles and the
/// sample standard deviation (undefined below two observations).
pub fn summarize_prices(prices: &[f64]) -> PriceStats {
    let n = prices.len();
    if n == 0 {
        return PriceStats { n, mean: None, sd: None, median: None, q25: None, q75: None };
    }
    let mut sorted = prices.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| (sorted.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    PriceStats {
        n,
        mean: Some(mean),
        sd,
        median: Some(nearest_rank_quantile(&sorted, 0.5)),
        q25: Some(nearest_rank_quantile(&sorted, 0.25)),
        q75: Some(nearest_rank_quantile(&sorted, 0.75)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Paths still unsold when the round opens.
    pub at_risk: usize,
    /// Paths in which at least one bidder bid this round.
    pub with_bids: usize,
    pub sales: usize,
    /// Sales over paths still unsold when the round opens; `None` if there
    /// were none.
    pub conditional_rate: Option<f64>,
    pub prices: PriceStats,
    /// Share of this round's sales won by each bidder.
    pub win_shares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionStats {
    pub player_id: String,
    pub n_sim: usize,
    pub rounds: usize,
    pub seed: u64,
    pub sale_probability: f64,
    pub unsold: usize,
    pub prices: PriceStats,
    /// Share of all sales won by each bidder, in setup order.
    pub win_shares: Vec<f64>,
    pub bidder_ids: Vec<String>,
    pub per_round: Vec<RoundStats>,
    pub upsilon: f64,
    /// Thresholds of the lookup entries used.
    pub lookup_taus: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<PathTrace>>,
}

fn simulate_path(setup: &AuctionSetup, lookup: &RoundLookup, rounds: usize, seed: u64, path: u64) -> Result<PathTrace, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    let valuations: Vec<f64> = setup.bidders.iter().map(|b| b.valuation.sample(&mut rng)).collect();
    let mut trace = PathTrace { valuations, round_bids: vec![], sold_round: None, winner: None, price: None };
    let mut tau_prev = 0.0;
    for round in 1..=rounds {
        let bids: Vec<Option<f64>> = if lookup.single_bidder {
            vec![bid_single(setup, tau_prev, trace.valuations[0])]
        } else {
            let entry = lookup.entry_for(tau_prev).ok_or(SimError::EmptyLookup)?;
            trace.valuations.iter().enumerate().map(|(c, &s)| entry.solution.bid(c, s)).collect()
        };
        let best = bids.iter().flatten().filter(|&&b| b > tau_prev).fold(f64::NEG_INFINITY, |m, &b| m.max(b));
        if best == f64::NEG_INFINITY {
            break;
        }
        let tied: Vec<usize> = bids.iter().enumerate().filter(|(_, b)| **b == Some(best)).map(|(c, _)| c).collect();
        let winner = if tied.len() == 1 { tied[0] } else { tied[rng.random_range(0..tied.len())] };
        trace.round_bids.push(best);
        let a = acceptance_probability(setup, tau_prev, winner, best)?;
        if rng.random::<f64>() <= a {
            trace.sold_round = Some(round);
            trace.winner = Some(winner);
            trace.price = Some(best);
            break;
        }
        tau_prev = best;
    }
    Ok(trace)
}

/// Simulates `n_sim` negotiations with a prebuilt lookup.
pub fn simulate_with_lookup(setup: &AuctionSetup, lookup: &RoundLookup, params: &SimParams) -> Result<AuctionStats, SimError> {
    simulate_with_lookup_reporting(setup, lookup, params, None)
}

/// [`simulate_with_lookup`] reporting the fraction of completed paths.
pub fn simulate_with_lookup_reporting(
    setup: &AuctionSetup,
    lookup: &RoundLookup,
    params: &SimParams,
    progress: Progress<'_>,
) -> Result<AuctionStats, SimError> {
    if params.rounds == 0 || params.n_sim == 0 {
        return Err(SimError::BadParams);
    }
    if !lookup.single_bidder && lookup.entries.is_empty() {
        return Err(SimError::EmptyLookup);
    }
    let done = AtomicUsize::new(0);
    let step = (params.n_sim / 100).max(1);
    let paths: Vec<PathTrace> = (0..params.n_sim as u64)
        .into_par_iter()
        .map(|p| {
            let trace = simulate_path(setup, lookup, params.rounds, params.seed, p);
            if let Some(f) = progress {
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n % step == 0 {
                    f(n as f64 / params.n_sim as f64);
                }
            }
            trace
        })
        .collect::<Result<_, _>>()?;
    let c_n = setup.bidders.len();
    let shares = |wins: &[usize], total: usize| -> Vec<f64> {
        wins.iter().map(|&w| if total == 0 { 0.0 } else { w as f64 / total as f64 }).collect()
    };
    let mut per_round = Vec::with_capacity(params.rounds);
    for r in 1..=params.rounds {
        let at_risk = paths.iter().filter(|p| p.sold_round.is_none_or(|s| s >= r)).count();
        let with_bids = paths.iter().filter(|p| p.round_bids.len() >= r).count();
        let sold: Vec<&PathTrace> = paths.iter().filter(|p| p.sold_round == Some(r)).collect();
        let mut wins = vec![0; c_n];
        for p in &sold {
            wins[p.winner.expect("sold path has a winner")] += 1;
        }
        let prices: Vec<f64> = sold.iter().map(|p| p.price.expect("sold path has a price")).collect();
        per_round.push(RoundStats {
            round: r,
            at_risk,
            with_bids,
            sales: sold.len(),
            conditional_rate: (at_risk > 0).then(|| sold.len() as f64 / at_risk as f64),
            prices: summarize_prices(&prices),
            win_shares: shares(&wins, sold.len()),
        });
    }
    let prices: Vec<f64> = paths.iter().filter_map(|p| p.price).collect();
    let mut wins = vec![0; c_n];
    for p in &paths {
        if let Some(w) = p.winner {
            wins[w] += 1;
        }
    }
    Ok(AuctionStats {
        player_id: setup.player_id.clone(),
        n_sim: params.n_sim,
        rounds: params.rounds,
        seed: params.seed,
        sale_probability: prices.len() as f64 / params.n_sim as f64,
        unsold: params.n_sim - prices.len(),
        win_shares: shares(&wins, prices.len()),
        prices: summarize_prices(&prices),
        bidder_ids: setup.bidders.iter().map(|b| b.club_id.clone()).collect(),
        per_round,
        upsilon: setup.upsilon(),
        lookup_taus: lookup.entries.iter().map(|e| e.tau).collect(),
        paths: params.keep_paths.then_some(paths),
    })
}

/// Builds the round lookup and simulates `n_sim` negotiations.
pub fn simulate(setup: &AuctionSetup, params: &SimParams) -> Result<AuctionStats, SimError> {
    simulate_reporting(setup, params, None)
}

/// [`simulate`] reporting the fraction of completed paths.
pub fn simulate_reporting(setup: &AuctionSetup, params: &SimParams, progress: Progress<'_>) -> Result<AuctionStats, SimError> {
    if params.rounds == 0 || params.n_sim == 0 {
        return Err(SimError::BadParams);
    }
    let lookup = build_lookup(setup)?;
    simulate_with_lookup_reporting(setup, &lookup, params, progress)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_summary_nearest_rank() {
        let s = summarize_prices(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.mean, Some(2.5));
        assert_eq!(s.median, Some(2.0));
        assert_eq!(s.q25, Some(1.0));
        assert_eq!(s.q75, Some(3.0));
        assert!((s.sd.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let one = summarize_prices(&[7.0]);
        assert_eq!(one.sd, None);
        assert_eq!(summarize_prices(&[]).mean, None);
    }

    #[test]
    fn zero_rounds_rejected() {
        let setup = crate::auction::tests::almiron();
        let p = SimParams { rounds: 0, n_sim: 10, seed: 1, keep_paths: false };
        assert_eq!(simulate(&setup, &p), Err(SimError::BadParams));
    }
}
