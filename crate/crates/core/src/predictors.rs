//! Counterfactual rating forecasts and log-normal fee distributions.
//!
//! Both models are linear mixed-effects predictors: a fixed-effect dot
//! product over a named feature vector plus random intercepts looked up by
//! club or league. Unseen keys contribute zero; for the fee model the
//! variance of every missing intercept is added to the predictive variance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{ClubContext, ModelCoefficients, PlayerRecord, Position, Scaler};
use crate::numerics::LogNormalParams;

/// Feature names of the rating model, in canonical order.
pub const RATING_FEATURES: &[&str] = &[
    "intercept",
    "age",
    "age_sq",
    "height",
    "weight",
    "pos_df",
    "pos_mf",
    "pos_fw",
    "last_rating",
    "team_rating",
    "team_rating_pos",
    "team_depth_pos",
    "n_transfers",
    "same_team",
    "same_nat",
];

/// Feature names of the fee model, in canonical order.
pub const FEE_FEATURES: &[&str] = &[
    "intercept",
    "trend",
    "age",
    "age_sq",
    "height",
    "weight",
    "pos_df",
    "pos_mf",
    "pos_fw",
    "career_rating",
    "rating",
    "game_time",
    "goals",
    "goal_contributions",
    "penalty_accuracy",
    "shots",
    "passing_accuracy",
    "cards",
    "clearances",
    "interceptions",
    "fee_league_seller",
    "fee_league_buyer",
    "depth_pos_seller",
    "depth_pos_buyer",
    "rating_pos_seller",
    "rating_pos_buyer",
    "rating_seller",
    "rating_buyer",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictError {
    #[error("no coefficient for feature `{0}`")]
    MissingFeature(String),
    #[error("feature vector does not match the coefficient block")]
    MisalignedFeatures,
}

/// Named feature values aligned with one coefficient block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    names: &'static [&'static str],
    values: Vec<f64>,
}

impl FeatureVector {
    /// All-zero vector over `names`.
    pub fn zeros(names: &'static [&'static str]) -> Self {
        Self { names, values: vec![0.0; names.len()] }
    }

    pub fn names(&self) -> &'static [&'static str] {
        self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    /// Sets a feature; panics on an unknown name since names are static.
    pub fn set(&mut self, name: &str, value: f64) {
        let i = self
            .names
            .iter()
            .position(|n| *n == name)
            .unwrap_or_else(|| panic!("unknown feature `{name}`"));
        self.values[i] = value;
    }

    /// Element-wise sum of two vectors over the same names.
    pub fn add(&self, other: &FeatureVector) -> Result<FeatureVector, PredictError> {
        if self.names != other.names {
            return Err(PredictError::MisalignedFeatures);
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(FeatureVector { names: self.names, values })
    }

    /// Dot product with the named coefficients.
    pub fn dot(&self, coeffs: &std::collections::BTreeMap<String, f64>) -> Result<f64, PredictError> {
        let mut acc = 0.0;
        for (name, v) in self.names.iter().zip(&self.values) {
            let c = coeffs.get(*name).ok_or_else(|| PredictError::MissingFeature(name.to_string()))?;
            acc += c * v;
        }
        Ok(acc)
    }
}

fn scaled(scalers: &std::collections::BTreeMap<String, Scaler>, name: &str, raw: f64) -> f64 {
    match scalers.get(name) {
        Some(s) => (raw - s.center) / s.scale,
        None => raw,
    }
}

fn position_dummies(fv: &mut FeatureVector, pos: Position) {
    fv.set("pos_df", f64::from(pos == Position::DF));
    fv.set("pos_mf", f64::from(pos == Position::MF));
    fv.set("pos_fw", f64::from(pos == Position::FW));
}

/// Key of the transfer-corridor random intercept.
pub fn corridor_key(from_club: &str, to_club: &str) -> String {
    format!("{from_club}->{to_club}")
}

/// Rating-model features for `player` playing next season at `target`.
pub fn rating_features(player: &PlayerRecord, target: &ClubContext, coeffs: &ModelCoefficients) -> FeatureVector {
    let sc = &coeffs.rating_model.scalers;
    let mut fv = FeatureVector::zeros(RATING_FEATURES);
    let age = scaled(sc, "age", player.age);
    fv.set("intercept", 1.0);
    fv.set("age", age);
    fv.set("age_sq", age * age);
    fv.set("height", scaled(sc, "height", player.height));
    fv.set("weight", scaled(sc, "weight", player.weight));
    position_dummies(&mut fv, player.position);
    fv.set("last_rating", scaled(sc, "last_rating", player.last_rating));
    fv.set("team_rating", scaled(sc, "team_rating", target.median_rating));
    fv.set("team_rating_pos", scaled(sc, "team_rating_pos", target.position_rating(player.position)));
    fv.set("team_depth_pos", scaled(sc, "team_depth_pos", target.position_depth(player.position) as f64));
    fv.set("n_transfers", scaled(sc, "n_transfers", player.n_transfers));
    fv.set("same_team", f64::from(player.club_id == target.club_id));
    fv.set("same_nat", f64::from(!target.country.is_empty() && player.nationality == target.country));
    fv
}

/// Fee-model features for a move of `player` from `seller` to `buyer`.
pub fn fee_features(
    player: &PlayerRecord,
    seller: &ClubContext,
    buyer: &ClubContext,
    time_index: f64,
    coeffs: &ModelCoefficients,
) -> FeatureVector {
    let sc = &coeffs.fee_model.scalers;
    let mut fv = FeatureVector::zeros(FEE_FEATURES);
    let age = scaled(sc, "age", player.age);
    let pos = player.position;
    fv.set("intercept", 1.0);
    fv.set("trend", scaled(sc, "trend", time_index));
    fv.set("age", age);
    fv.set("age_sq", age * age);
    fv.set("height", scaled(sc, "height", player.height));
    fv.set("weight", scaled(sc, "weight", player.weight));
    position_dummies(&mut fv, pos);
    let raw = [
        ("career_rating", player.career_rating),
        ("rating", player.last_rating),
        ("game_time", player.game_time),
        ("goals", player.goals),
        ("goal_contributions", player.goal_contributions),
        ("penalty_accuracy", player.penalty_accuracy),
        ("shots", player.shots),
        ("passing_accuracy", player.passing_accuracy),
        ("cards", player.cards),
        ("clearances", player.clearances),
        ("interceptions", player.interceptions),
        ("fee_league_seller", seller.league_median_sell_fee),
        ("fee_league_buyer", buyer.league_median_buy_fee),
        ("depth_pos_seller", seller.position_depth(pos) as f64),
        ("depth_pos_buyer", buyer.position_depth(pos) as f64),
        ("rating_pos_seller", seller.position_rating(pos)),
        ("rating_pos_buyer", buyer.position_rating(pos)),
        ("rating_seller", seller.median_rating),
        ("rating_buyer", buyer.median_rating),
    ];
    for (name, v) in raw {
        fv.set(name, scaled(sc, name, v));
    }
    fv
}

/// Point forecast of next-season rating with flags for which random
/// intercepts were found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingForecast {
    pub player_id: String,
    pub value: f64,
    pub used_corridor_effect: bool,
    /// `(current league of the target, last league of the player)`.
    pub used_league_effects: (bool, bool),
}

/// Forecast rating of `player` if they play next season for `target`.
pub fn predict_rating(player: &PlayerRecord, target: &ClubContext, coeffs: &ModelCoefficients) -> Result<RatingForecast, PredictError> {
    let fv = rating_features(player, target, coeffs);
    let model = &coeffs.rating_model;
    let mut value = fv.dot(&model.fixed)?;
    let corridor = model.random.corridor.get(&corridor_key(&player.club_id, &target.club_id));
    let cur = model.random.current_league.get(&target.league_id);
    let last = model.random.last_league.get(&player.league_id);
    value += corridor.copied().unwrap_or(0.0) + cur.copied().unwrap_or(0.0) + last.copied().unwrap_or(0.0);
    Ok(RatingForecast {
        player_id: player.player_id.clone(),
        value,
        used_corridor_effect: corridor.is_some(),
        used_league_effects: (cur.is_some(), last.is_some()),
    })
}

/// Log-fee distribution together with fallback flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeForecast {
    pub params: LogNormalParams,
    pub used_buyer_effect: bool,
    pub used_seller_effect: bool,
}

/// Log-normal distribution of the fee for moving `player` from `seller`
/// to `buyer`, with full fallback metadata. When both intercepts are
/// known the predictive variance is the residual `τ²` alone.
pub fn predict_fee_detailed(
    player: &PlayerRecord,
    seller: &ClubContext,
    buyer: &ClubContext,
    time_index: f64,
    coeffs: &ModelCoefficients,
) -> Result<FeeForecast, PredictError> {
    let fv = fee_features(player, seller, buyer, time_index, coeffs);
    let model = &coeffs.fee_model;
    let buy = model.random.buyer.get(&buyer.club_id);
    let sell = model.random.seller.get(&seller.club_id);
    let mu = fv.dot(&model.fixed)? + buy.copied().unwrap_or(0.0) + sell.copied().unwrap_or(0.0);
    let mut var = model.variances.tau2;
    if buy.is_none() {
        var += model.variances.sigma2_buy;
    }
    if sell.is_none() {
        var += model.variances.sigma2_sell;
    }
    Ok(FeeForecast {
        params: LogNormalParams::new(mu, var.sqrt()),
        used_buyer_effect: buy.is_some(),
        used_seller_effect: sell.is_some(),
    })
}

/// Log-normal distribution of the fee for moving `player` from `seller` to `buyer`.
pub fn predict_fee(
    player: &PlayerRecord,
    seller: &ClubContext,
    buyer: &ClubContext,
    time_index: f64,
    coeffs: &ModelCoefficients,
) -> Result<LogNormalParams, PredictError> {
    predict_fee_detailed(player, seller, buyer, time_index, coeffs).map(|f| f.params)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model_io::*;
    use crate::numerics::{expected_fee, fee_variance};
    use std::collections::{BTreeMap, BTreeSet};

    pub(crate) const RATING_TABLE: [f64; 15] =
        [-2.828, 0.570, -0.106, 0.024, 0.002, -0.009, 0.015, 0.035, 0.303, 0.257, 0.723, 0.004, -0.004, -0.003, -0.007];
    pub(crate) const FEE_TABLE: [f64; 28] = [
        -17.552, 0.064, 2.361, -0.668, 1.692, 0.001, -0.323, -0.143, 0.089, 1.601, -0.373, 0.018, 0.399, 0.270, -0.461,
        0.169, 0.023, 0.108, -0.006, -0.061, 0.169, 0.056, -0.007, -0.003, -0.127, 0.140, 0.748, -0.184,
    ];

    pub(crate) fn table_coeffs() -> ModelCoefficients {
        ModelCoefficients {
            fee_units: FEE_UNITS.into(),
            scaling_note: String::new(),
            rating_model: RatingModel {
                fixed: RATING_FEATURES.iter().zip(RATING_TABLE).map(|(n, v)| (n.to_string(), v)).collect(),
                scalers: BTreeMap::new(),
                random: RatingRandomEffects::default(),
                variances: RatingVariances { sigma2: 0.09, sigma2_club: 0.0001, sigma2_cur: 0.008, sigma2_last: 0.007 },
            },
            fee_model: FeeModel {
                fixed: FEE_FEATURES.iter().zip(FEE_TABLE).map(|(n, v)| (n.to_string(), v)).collect(),
                scalers: BTreeMap::new(),
                random: FeeRandomEffects::default(),
                variances: FeeVariances { tau2: 1.0608f64.powi(2), sigma2_buy: 0.4498f64.powi(2), sigma2_sell: 0.2983f64.powi(2) },
            },
        }
    }

    pub(crate) fn zero_player() -> PlayerRecord {
        PlayerRecord {
            player_id: "p".into(),
            name: "P".into(),
            position: Position::GK,
            age: 1e-9,
            height: 0.0,
            weight: 0.0,
            nationality: String::new(),
            club_id: "A".into(),
            prev_club_id: "A".into(),
            league_id: "LA".into(),
            prev_league_id: "LA".into(),
            last_rating: 0.0,
            career_rating: 0.0,
            game_time: 0.0,
            goals: 0.0,
            goal_contributions: 0.0,
            penalty_accuracy: 0.0,
            shots: 0.0,
            passing_accuracy: 0.0,
            cards: 0.0,
            clearances: 0.0,
            interceptions: 0.0,
            n_transfers: 0.0,
            transfer_listed: false,
        }
    }

    pub(crate) fn zero_club(id: &str) -> ClubContext {
        ClubContext {
            club_id: id.into(),
            league_id: format!("L{id}"),
            country: String::new(),
            continent: String::new(),
            top_league: false,
            member_ids: BTreeSet::from(["x".to_string()]),
            median_rating: 0.0,
            median_rating_by_position: Position::ALL.iter().map(|p| (*p, 0.0)).collect(),
            depth_by_position: Position::ALL.iter().map(|p| (*p, 0)).collect(),
            league_median_sell_fee: 0.0,
            league_median_buy_fee: 0.0,
            budget_max: 1.0,
            profit_min: 0.0,
            avg_age: 0.0,
            avg_rating: 0.0,
        }
    }

    #[test]
    fn zero_features_give_rating_intercept() {
        let c = table_coeffs();
        // age 1e-9 contributes ~6e-10, far below the comparison tolerance
        let f = predict_rating(&zero_player(), &zero_club("B"), &c).unwrap();
        assert!((f.value + 2.828).abs() < 1e-8);
        assert!(!f.used_corridor_effect);
        assert_eq!(f.used_league_effects, (false, false));
    }

    #[test]
    fn last_rating_unit_step_adds_its_coefficient() {
        let c = table_coeffs();
        let mut p = zero_player();
        let base = predict_rating(&p, &zero_club("B"), &c).unwrap().value;
        p.last_rating = 1.0;
        let bumped = predict_rating(&p, &zero_club("B"), &c).unwrap().value;
        assert!((bumped - base - 0.303).abs() < 1e-12);
    }

    #[test]
    fn random_intercepts_are_applied_when_known() {
        let mut c = table_coeffs();
        c.rating_model.random.corridor.insert(corridor_key("A", "B"), 0.1);
        c.rating_model.random.current_league.insert("LB".into(), 0.02);
        let f = predict_rating(&zero_player(), &zero_club("B"), &c).unwrap();
        assert!((f.value - (-2.828 + 0.12)).abs() < 1e-8);
        assert!(f.used_corridor_effect);
        assert_eq!(f.used_league_effects, (true, false));
    }

    #[test]
    fn zero_fee_features_give_intercept_and_full_fallback_variance() {
        let c = table_coeffs();
        let ln = predict_fee(&zero_player(), &zero_club("A"), &zero_club("B"), 0.0, &c).unwrap();
        assert!((ln.mu + 17.552).abs() < 1e-8);
        let v = &c.fee_model.variances;
        assert!((ln.sigma.powi(2) - (v.tau2 + v.sigma2_buy + v.sigma2_sell)).abs() < 1e-12);
        let t1 = predict_fee(&zero_player(), &zero_club("A"), &zero_club("B"), 1.0, &c).unwrap();
        assert!((t1.mu - ln.mu - 0.064).abs() < 1e-12);
    }

    #[test]
    fn known_clubs_use_residual_variance_only() {
        let mut c = table_coeffs();
        c.fee_model.random.buyer.insert("B".into(), 0.3);
        c.fee_model.random.seller.insert("A".into(), -0.1);
        let f = predict_fee_detailed(&zero_player(), &zero_club("A"), &zero_club("B"), 0.0, &c).unwrap();
        assert!((f.params.sigma.powi(2) - c.fee_model.variances.tau2).abs() < 1e-12);
        assert!((f.params.mu - (-17.552 + 0.2)).abs() < 1e-8);
        assert!(f.used_buyer_effect && f.used_seller_effect);
    }

    #[test]
    fn expected_fee_examples() {
        assert!((expected_fee(&LogNormalParams::new(1.5, 1.1)) - 8.21).abs() < 0.005);
        assert!((expected_fee(&LogNormalParams::new(0.7, 1.1)) - 3.69).abs() < 0.005);
        assert_eq!(expected_fee(&LogNormalParams::new(0.0, 0.0)), 1.0);
        assert_eq!(fee_variance(&LogNormalParams::new(0.0, 0.0)), 0.0);
        let e = std::f64::consts::E;
        assert!((fee_variance(&LogNormalParams::new(0.0, 1.0)) - (e - 1.0) * e).abs() < 1e-12);
        assert!((fee_variance(&LogNormalParams::new(1.5, 1.1)) - 158.5).abs() < 0.1);
    }
}
