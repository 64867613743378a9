//! Acceptance report: one PASS/FAIL line per primary criterion, with the
//! individual measurements that decide it. Exits non-zero if any
//! criterion fails.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use squadmarket_core::auction::{foc_residual, reserve_hazard_at_gap, solve_equilibrium, Affinity, AuctionSetup, EquilibriumSolution};
use squadmarket_core::mc_sim::{simulate, AuctionStats, SimParams};
use squadmarket_core::model_io::{Directives, Weights};
use squadmarket_core::numerics::{chance_bound, expected_fee, fee_variance, marlow_approx};
use squadmarket_core::objective::{fitness, DEFAULT_BETA};
use squadmarket_core::solvers::{brute_force, compare_solvers, plan_transfers, solve, BenchInstance, Method, ReducedProblem, SolverParams};
use squadmarket_validation::{
    auction_fixture, league_fixture, random_auction_setup, random_fee_components, random_small_problem, symmetric_uniform_setup,
};

const N_SIM: usize = 2000;
const SEED: u64 = 7;

/// Collects the measurements behind one criterion.
struct Criterion {
    name: &'static str,
    parts: Vec<(bool, String)>,
}

impl Criterion {
    fn new(name: &'static str) -> Self {
        Self { name, parts: Vec::new() }
    }

    fn within(&mut self, label: &str, value: f64, target: f64, tol: f64) {
        let ok = (value - target).abs() <= tol;
        self.parts.push((ok, format!("{label} {value:.3} (target {target} ± {tol})")));
    }

    fn at_most(&mut self, label: &str, value: f64, limit: f64) {
        self.parts.push((value <= limit, format!("{label} {value:.3e} (≤ {limit:e})")));
    }

    fn holds(&mut self, label: &str, ok: bool, detail: String) {
        self.parts.push((ok, format!("{label} {detail}")));
    }

    fn report(self) -> bool {
        let ok = self.parts.iter().all(|(p, _)| *p);
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, self.name);
        for (p, line) in &self.parts {
            println!("    [{}] {line}", if *p { "ok" } else { "x" });
        }
        ok
    }
}

fn run(setup: &AuctionSetup, rounds: usize) -> (AuctionStats, f64) {
    let started = Instant::now();
    let stats = simulate(setup, &SimParams { rounds, n_sim: N_SIM, seed: SEED, keep_paths: false }).expect("simulation");
    (stats, started.elapsed().as_secs_f64())
}

fn share(stats: &AuctionStats, club: &str) -> f64 {
    let i = stats.bidder_ids.iter().position(|b| b == club).expect("bidder");
    stats.win_shares[i]
}

fn almiron_single() -> bool {
    let mut c = Criterion::new("Almiron single-round reproduction");
    let (s, secs) = run(&auction_fixture("almiron"), 1);
    c.within("sale %", 100.0 * s.sale_probability, 55.8, 3.0);
    c.within("mean price", s.prices.mean.unwrap(), 9.1, 0.5);
    c.within("price SD", s.prices.sd.unwrap(), 3.7, 0.5);
    c.within("IQR low", s.prices.q25.unwrap(), 6.3, 0.7);
    c.within("IQR high", s.prices.q75.unwrap(), 11.4, 0.7);
    c.within("SOU share %", 100.0 * share(&s, "SOU"), 41.9, 4.0);
    c.holds("runtime", secs <= 60.0, format!("{secs:.1}s (≤ 60s)"));
    c.report()
}

fn traore_single() -> bool {
    let mut c = Criterion::new("Traore single-round reproduction");
    let (s, _) = run(&auction_fixture("traore"), 1);
    c.within("sale %", 100.0 * s.sale_probability, 71.8, 3.0);
    c.within("mean price", s.prices.mean.unwrap(), 8.6, 0.5);
    c.within("MNC share %", 100.0 * share(&s, "MNC"), 39.0, 4.0);
    c.within("buyout threshold", s.upsilon, 12.3, 0.05);
    c.report()
}

fn multi_round() -> bool {
    let mut c = Criterion::new("Multi-round reproduction (T = 5)");
    let (a, secs_a) = run(&auction_fixture("almiron"), 5);
    let (t, secs_t) = run(&auction_fixture("traore"), 5);
    c.within("Almiron overall sale %", 100.0 * a.sale_probability, 67.6, 3.5);
    c.within("Almiron round-2 mean price", a.per_round[1].prices.mean.unwrap(), 12.83, 1.0);
    c.within("Traore overall sale %", 100.0 * t.sale_probability, 85.3, 3.0);
    c.within("Traore round-1 conditional %", 100.0 * t.per_round[0].conditional_rate.unwrap(), 81.1, 3.5);
    c.within("Traore round-2 conditional %", 100.0 * t.per_round[1].conditional_rate.unwrap(), 16.7, 4.0);
    for (name, s, secs) in [("Almiron", &a, secs_a), ("Traore", &t, secs_t)] {
        c.holds(&format!("{name} runtime"), secs <= 300.0, format!("{secs:.1}s incl. {} lookup entries (≤ 300s)", s.lookup_taus.len()));
    }
    c.report()
}

fn hazard_table() -> bool {
    let mut c = Criterion::new("Truncated reserve hazard table");
    let taus = [0.0, 4.207, 5.535, 6.442, 8.233, 9.636];
    let rows = [("almiron", [2.591, 1.255, 1.261, 1.266, 1.274, 1.280]), ("traore", [1.843, 1.192, 1.212, 1.223, 1.240, 1.250])];
    for (name, hazards) in rows {
        let setup = auction_fixture(name);
        for (tau, target) in taus.iter().zip(hazards) {
            let (_, h) = reserve_hazard_at_gap(&setup, *tau, 0.7);
            c.within(&format!("{name} τ={tau}"), h, target, 0.05);
        }
    }
    c.report()
}

fn marlow_suite() -> bool {
    let mut c = Criterion::new("Moment-matching and chance-constraint suite");
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let comps = random_fee_components(&mut rng);
        let approx = marlow_approx(&comps).unwrap();
        let mean: f64 = comps.iter().map(expected_fee).sum();
        let var: f64 = comps.iter().map(fee_variance).sum();
        worst_mean = worst_mean.max((expected_fee(&approx) / mean - 1.0).abs());
        worst_var = worst_var.max((fee_variance(&approx) / var - 1.0).abs());
    }
    c.at_most("worst relative mean error over 1000 lists", worst_mean, 1e-10);
    c.at_most("worst relative variance error over 1000 lists", worst_var, 1e-8);
    let alpha = 0.05;
    let mut worst_cov = 0.0f64;
    for _ in 0..100 {
        let comps = random_fee_components(&mut rng);
        let budget = chance_bound(&marlow_approx(&comps).unwrap(), alpha).unwrap().exp();
        let draws = 20_000;
        let inside = (0..draws).filter(|_| comps.iter().map(|p| p.sample(&mut rng)).sum::<f64>() <= budget).count();
        worst_cov = worst_cov.max((inside as f64 / draws as f64 - (1.0 - alpha)).abs());
    }
    c.at_most("worst |coverage − 0.95| over 100 boundary selections", worst_cov, 0.02);
    c.report()
}

fn round_one(setup: &AuctionSetup) -> Option<EquilibriumSolution> {
    let lower = vec![setup.round_one_lower_support(); setup.bidders.len()];
    solve_equilibrium(setup, 0.0, &lower).ok()
}

fn equilibrium_suite() -> bool {
    let mut c = Criterion::new("Equilibrium property suite");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let setups: Vec<AuctionSetup> = (0..25).map(|_| random_auction_setup(&mut rng)).collect();
    let (mut solved, mut monotone, mut gaps) = (0, 0, 0);
    let (mut worst_foc, mut worst_boundary, mut worst_invariance, mut worst_order) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for setup in &setups {
        let Some(eq) = round_one(setup) else { continue };
        solved += 1;
        monotone += usize::from(eq.monotone_ok);
        gaps += usize::from(eq.bid_gap > 0.0);
        worst_foc = worst_foc.max(foc_residual(setup, &eq));
        for (t, s) in eq.psi.iter().zip(&eq.lower_supports) {
            worst_boundary = worst_boundary.max((t.eval(eq.b_min()) - s).abs());
        }

        let mut a = setup.clone();
        let mut b = setup.clone();
        a.bidders.iter_mut().for_each(|x| x.affinity = Affinity::Constant { value: 1.0 });
        b.bidders.iter_mut().for_each(|x| x.affinity = Affinity::Constant { value: 0.4 });
        match (round_one(&a), round_one(&b)) {
            (Some(ea), Some(eb)) => {
                for (ta, tb) in ea.raw_psi.iter().zip(&eb.raw_psi) {
                    for (ya, yb) in ta.iter().zip(tb) {
                        worst_invariance = worst_invariance.max((ya - yb).abs());
                    }
                }
            }
            _ => worst_invariance = f64::INFINITY,
        }

        let mut equal = setup.clone();
        let center = match setup.bidders[0].affinity {
            Affinity::Logistic { center, .. } => center,
            Affinity::Constant { .. } => 1.0,
        };
        equal.bidders.iter_mut().for_each(|x| x.affinity = Affinity::Logistic { center, scale: 1.0 });
        match round_one(&equal) {
            Some(e) => {
                let medians: Vec<f64> = equal.bidders.iter().map(|x| x.valuation.quantile(0.5)).collect();
                for i in 0..medians.len() {
                    for j in 0..medians.len() {
                        if medians[i] > medians[j] {
                            for k in 1..e.grid.len() {
                                worst_order = worst_order.max(e.raw_psi[j][k] - e.raw_psi[i][k]);
                            }
                        }
                    }
                }
            }
            None => worst_order = f64::INFINITY,
        }
    }
    c.holds("solved", solved == 25, format!("{solved}/25"));
    c.holds("monotone", monotone == 25, format!("{monotone}/25"));
    c.holds("positive bid gap", gaps == 25, format!("{gaps}/25"));
    c.at_most("worst FOC residual", worst_foc, 1e-5);
    c.at_most("worst boundary error", worst_boundary, 1e-10);
    c.at_most("worst constant-affinity bid change", worst_invariance, 1e-6);
    c.at_most("worst ordering violation (weaker above stronger)", worst_order.max(0.0), 1e-6);
    let uniform = symmetric_uniform_setup();
    let worst_uniform = round_one(&uniform).map_or(f64::INFINITY, |eq| {
        eq.psi.iter().flat_map(|t| t.xs.iter().zip(&t.ys).map(|(b, s)| (s / (2.0 * b) - 1.0).abs())).fold(0.0, f64::max)
    });
    c.at_most("symmetric uniform oracle, worst relative error vs ψ(b) = 2b", worst_uniform, 0.02);
    c.report()
}

fn random_weights(rng: &mut ChaCha8Rng) -> Weights {
    use rand::Rng;
    let raw = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
    let t: f64 = raw.iter().sum();
    Weights::new(raw[0] / t, raw[1] / t, raw[2] / t)
}

fn optimizer_suite() -> bool {
    let mut c = Criterion::new("Optimizer oracle suite");
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let params = SolverParams::default();
    let (mut matches, mut nontrivial, mut reverified, mut feasible) = (0, 0, 0, 0);
    for _ in 0..50 {
        let problem = random_small_problem(&mut rng);
        let w = random_weights(&mut rng);
        let rp = ReducedProblem::identity(problem.clone());
        let exact = brute_force(&rp, &w, DEFAULT_BETA).unwrap();
        let ga = solve(&rp, &w, &params, None).unwrap();
        matches += usize::from((ga.breakdown.objective - exact.breakdown.objective).abs() <= 1e-9);
        nontrivial += usize::from(exact.transfers() > 0);
        if ga.feasible {
            feasible += 1;
            let x: Vec<bool> = problem.pool.iter().map(|p| ga.decision[&p.player_id]).collect();
            reverified += usize::from(fitness(&x, &problem, &w, DEFAULT_BETA).unwrap().is_feasible());
        }
    }
    c.holds("GA = brute force objective (1e-9)", matches >= 48, format!("{matches}/50 (≥ 48; {nontrivial} optima involve transfers)"));
    c.holds("feasible plans re-verify", reverified == feasible, format!("{reverified}/{feasible}"));

    let fx = league_fixture();
    let w = fx.config.weights();
    let a = plan_transfers(&fx.problem, &fx.config.directives, &w, &fx.config.solver, None).unwrap();
    let b = plan_transfers(&fx.problem, &fx.config.directives, &w, &fx.config.solver, None).unwrap();
    c.holds("deterministic under fixed seed", serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap(), String::new());
    let buys: Vec<&str> = a.buys.iter().map(|x| x.player_id.as_str()).collect();
    c.holds("league fixture plan pinned", a.feasible && buys == ["P024", "P035", "P054"] && a.sells.is_empty(), format!("buys {buys:?}, sells {}", a.sells.len()));
    c.report()
}

fn benchmark() -> bool {
    let mut c = Criterion::new("Solver benchmark harness");
    let fx = league_fixture();
    let inst = BenchInstance { name: "league".into(), problem: fx.problem.clone(), directives: Directives::default() };
    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let methods = [Method::Ga, Method::Sa, Method::Hc];
    let report = compare_solvers(&[inst], &methods, &grid, &fx.config.solver).unwrap();
    c.holds("runs", report.records.len() == 27, format!("{} (9 λ3 × 3 methods)", report.records.len()));
    for m in methods {
        let n = report.records.iter().filter(|r| r.method == m && r.feasible).count();
        let required = if m == Method::Ga { 9 } else { 0 };
        c.holds(&format!("{m} feasible"), n >= required, format!("{n}/9"));
    }
    let cells: Vec<String> = report
        .matrix
        .iter()
        .flat_map(|(a, row)| row.iter().filter(move |(b, _)| *b != a).map(move |(b, cell)| format!("{a}>{b} {}/{}", cell.dominates, cell.shared)))
        .collect();
    c.holds("dominance matrix", report.matrix.len() == 3, cells.join(", "));
    c.report()
}

fn main() {
    let results = [
        almiron_single(),
        traore_single(),
        multi_round(),
        hazard_table(),
        marlow_suite(),
        equilibrium_suite(),
        optimizer_suite(),
        benchmark(),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} primary criteria passed", results.len());
    if passed < results.len() {
        std::process::exit(1);
    }
}
