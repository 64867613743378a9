use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squadmarket_core::model_io::{Directives, Weights};
use squadmarket_core::objective::{fitness, DEFAULT_BETA};
use squadmarket_core::solvers::{brute_force, compare_solvers, plan_transfers, preprocess, solve, BenchInstance, Method, ReducedProblem, SolverParams};
use squadmarket_validation::{league_fixture, random_small_problem};

fn random_weights<R: Rng>(rng: &mut R) -> Weights {
    let raw = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
    let t: f64 = raw.iter().sum();
    Weights::new(raw[0] / t, raw[1] / t, raw[2] / t)
}

#[test]
fn genetic_algorithm_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let params = SolverParams::default();
    let mut matches = 0;
    for _ in 0..50 {
        let problem = random_small_problem(&mut rng);
        assert!(problem.len() <= 12);
        let w = random_weights(&mut rng);
        let rp = ReducedProblem::identity(problem);
        let exact = brute_force(&rp, &w, DEFAULT_BETA).unwrap();
        let ga = solve(&rp, &w, &params, None).unwrap();
        assert!(ga.breakdown.fitness <= exact.breakdown.fitness + 1e-12);
        if (ga.breakdown.objective - exact.breakdown.objective).abs() <= 1e-9 {
            matches += 1;
        }
    }
    assert!(matches >= 48, "{matches}/50");
}

#[test]
fn feasible_plans_reverify_against_the_original_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..30 {
        let problem = random_small_problem(&mut rng);
        let w = random_weights(&mut rng);
        for method in [Method::Ga, Method::Sa, Method::Hc] {
            let params = SolverParams { method, ..SolverParams::default() };
            let plan = plan_transfers(&problem, &Directives::default(), &w, &params, None).unwrap();
            let x: Vec<bool> = problem.pool.iter().map(|p| plan.decision[&p.player_id]).collect();
            let again = fitness(&x, &problem, &w, DEFAULT_BETA).unwrap();
            assert_eq!(plan.feasible, again.is_feasible());
            assert!(plan.feasible, "{method}: status quo is feasible, so the search must find a feasible plan");
            assert_eq!(again.violations, [0.0; 18]);
        }
    }
}

#[test]
fn plans_are_deterministic_under_a_fixed_seed() {
    let fx = league_fixture();
    let w = fx.config.weights();
    for method in [Method::Ga, Method::Sa, Method::Hc] {
        let params = SolverParams { method, ..fx.config.solver.clone() };
        let a = plan_transfers(&fx.problem, &fx.config.directives, &w, &params, None).unwrap();
        let b = plan_transfers(&fx.problem, &fx.config.directives, &w, &params, None).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

/// Regression pin of the bundled league scenario.
#[test]
fn league_fixture_plan() {
    let fx = league_fixture();
    let plan = plan_transfers(&fx.problem, &fx.config.directives, &fx.config.weights(), &fx.config.solver, None).unwrap();
    assert!(plan.feasible);
    let buys: Vec<&str> = plan.buys.iter().map(|b| b.player_id.as_str()).collect();
    let sells: Vec<&str> = plan.sells.iter().map(|s| s.player_id.as_str()).collect();
    assert_eq!(buys, ["P024", "P035", "P054"]);
    assert!(sells.is_empty());
    assert!((plan.breakdown.cost - 15.5147).abs() < 1e-3, "{}", plan.breakdown.cost);
    assert!((plan.breakdown.objective - 0.42492).abs() < 1e-4, "{}", plan.breakdown.objective);
}

#[test]
fn directives_are_honoured() {
    let fx = league_fixture();
    let mut d = Directives::default();
    d.must_buy.insert("P045".into());
    d.must_sell.insert("P006".into());
    d.keep.insert("P013".into());
    let plan = plan_transfers(&fx.problem, &d, &fx.config.weights(), &fx.config.solver, None).unwrap();
    assert!(plan.buys.iter().any(|b| b.player_id == "P045"));
    assert!(plan.sells.iter().any(|s| s.player_id == "P006"));
    assert!(!plan.sells.iter().any(|s| s.player_id == "P013"));
    assert!(!plan.decision.contains_key("P045"));
}

#[test]
fn benchmark_grid_on_the_league_fixture() {
    let fx = league_fixture();
    let inst = BenchInstance { name: "league".into(), problem: fx.problem.clone(), directives: Directives::default() };
    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let methods = [Method::Ga, Method::Sa, Method::Hc];
    let report = compare_solvers(&[inst], &methods, &grid, &fx.config.solver).unwrap();
    assert_eq!(report.records.len(), 27);
    let ga_feasible = report.records.iter().filter(|r| r.method == Method::Ga && r.feasible).count();
    assert_eq!(ga_feasible, 9);
    assert_eq!(report.matrix.len(), 3);
    for (a, row) in &report.matrix {
        for (b, cell) in row {
            assert!(cell.dominates <= cell.shared);
            if a == b {
                assert_eq!(cell.dominates, 0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Every reduced decision scores exactly as its expansion does in the
    /// original problem.
    #[test]
    fn preprocessing_conserves_scores(seed in any::<u64>(), mask in any::<u32>(), bits in any::<u16>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_small_problem(&mut rng);
        let w = random_weights(&mut rng);
        let mut d = Directives::default();
        for (i, p) in problem.pool.iter().enumerate() {
            match (mask >> (2 * i)) & 3 {
                1 if p.is_current => { d.keep.insert(p.player_id.clone()); }
                2 if p.is_current => { d.must_sell.insert(p.player_id.clone()); }
                2 if !p.is_current => { d.must_buy.insert(p.player_id.clone()); }
                _ => {}
            }
        }
        let rp = match preprocess(&problem, &d) {
            Ok(rp) => rp,
            Err(_) => return Ok(()),
        };
        let x: Vec<bool> = (0..rp.reduced.len()).map(|k| (bits >> k) & 1 == 1).collect();
        let reduced = fitness(&x, &rp.reduced, &w, DEFAULT_BETA).unwrap();
        let full = fitness(&rp.expand(&x), &problem, &w, DEFAULT_BETA).unwrap();
        prop_assert!((reduced.objective - full.objective).abs() <= 1e-9 * (1.0 + full.objective.abs()));
        prop_assert!((reduced.cost - full.cost).abs() <= 1e-9 * (1.0 + full.cost.abs()));
        prop_assert_eq!(reduced.is_feasible(), full.is_feasible());
    }
}
