use proptest::prelude::*;
use squadmarket_core::model_io::ClubContext;
use squadmarket_core::predictors::{predict_fee_detailed, predict_rating};
use squadmarket_validation::league_fixture;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Forecasts are affine in unscaled features: moving one feature moves
    /// the forecast by its coefficient times the step.
    #[test]
    fn forecasts_are_affine_in_features(idx in 0usize..60, step in -2.0f64..2.0) {
        let fx = league_fixture();
        let clubs = ClubContext::build_all(&fx.registry, &fx.players).unwrap();
        let player = &fx.players[idx];
        let focal = &clubs["FOC"];
        let own = &clubs[&player.club_id];

        let mut moved = player.clone();
        moved.last_rating += step;
        let r0 = predict_rating(player, focal, &fx.coefficients).unwrap().value;
        let r1 = predict_rating(&moved, focal, &fx.coefficients).unwrap().value;
        let beta = fx.coefficients.rating_model.fixed["last_rating"];
        prop_assert!((r1 - r0 - beta * step).abs() < 1e-12);

        let mut moved = player.clone();
        moved.goals += step;
        let f0 = predict_fee_detailed(player, own, focal, 0.0, &fx.coefficients).unwrap();
        let f1 = predict_fee_detailed(&moved, own, focal, 0.0, &fx.coefficients).unwrap();
        let gamma = fx.coefficients.fee_model.fixed["goals"];
        prop_assert!((f1.params.mu - f0.params.mu - gamma * step).abs() < 1e-12);
        prop_assert_eq!(f0.params.sigma, f1.params.sigma);
    }
}

#[test]
fn unknown_clubs_widen_the_fee_distribution() {
    let fx = league_fixture();
    let clubs = ClubContext::build_all(&fx.registry, &fx.players).unwrap();
    let v = &fx.coefficients.fee_model.variances;
    let known = fx.players.iter().find(|p| p.club_id == "RIV").unwrap();
    let unknown = fx.players.iter().find(|p| p.club_id == "SAO").unwrap();
    let a = predict_fee_detailed(known, &clubs["RIV"], &clubs["FOC"], 0.0, &fx.coefficients).unwrap();
    let b = predict_fee_detailed(unknown, &clubs["SAO"], &clubs["FOC"], 0.0, &fx.coefficients).unwrap();
    assert!(a.used_buyer_effect && a.used_seller_effect);
    assert!((a.params.sigma.powi(2) - v.tau2).abs() < 1e-12);
    assert!(!b.used_seller_effect);
    assert!((b.params.sigma.powi(2) - v.tau2 - v.sigma2_sell).abs() < 1e-12);
}

#[test]
fn fixture_forecasts_are_plausible() {
    let fx = league_fixture();
    for p in &fx.problem.pool {
        assert!((6.0..8.0).contains(&p.rating), "{}: {}", p.player_id, p.rating);
        assert!((0.5..100.0).contains(&p.expected_fee), "{}: {}", p.player_id, p.expected_fee);
    }
    assert_eq!(fx.problem.pool.iter().filter(|p| p.is_current).count(), 15);
}
