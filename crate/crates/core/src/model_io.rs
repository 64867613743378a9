//! Ingestion and validation of player tables, club metadata, model
//! coefficients and scenario configurations.
//!
//! Player tables are CSV files with the fixed header [`PLAYER_COLUMNS`];
//! everything else is JSON. Money is held in millions of euros throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::ConstraintBounds;
use crate::predictors::{FEE_FEATURES, RATING_FEATURES};
use crate::solvers::SolverParams;

/// Errors raised while ingesting data files.
#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("missing column `{0}` in player table header")]
    MissingColumn(String),
    #[error("row {row}: unrecognised value `{value}` for {field}")]
    BadEnum { row: usize, field: &'static str, value: String },
    #[error("row {row}: age must be positive, got {age}")]
    NonPositiveAge { row: usize, age: f64 },
    #[error("row {row}: {message}")]
    BadValue { row: usize, message: String },
    #[error("missing coefficient `{0}`")]
    MissingCoefficient(String),
    #[error("coefficient `{0}` does not correspond to any feature")]
    UnknownCoefficient(String),
    #[error("variance component `{0}` is negative")]
    NegativeVariance(String),
    #[error("scaler for `{0}` has zero or non-finite scale")]
    BadScaler(String),
    #[error("fee units must be `{expected}`, found `{found}`")]
    BadUnits { expected: &'static str, found: String },
    #[error("player `{0}` appears in more than one directive set")]
    ConflictingDirectives(String),
    #[error("invalid preference weight: {0}")]
    BadWeight(String),
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error("invalid club metadata: {0}")]
    BadClub(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Players
// ---------------------------------------------------------------------------

/// Playing position; goalkeeper is the baseline category of both models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    GK,
    DF,
    MF,
    FW,
}

impl Position {
    pub const ALL: [Position; 4] = [Position::GK, Position::DF, Position::MF, Position::FW];

    /// Parses the short codes and the long English names, case-insensitively.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gk" | "goalkeeper" => Some(Position::GK),
            "df" | "defender" => Some(Position::DF),
            "mf" | "midfielder" => Some(Position::MF),
            "fw" | "forward" => Some(Position::FW),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Position::GK => "GK",
            Position::DF => "DF",
            Position::MF => "MF",
            Position::FW => "FW",
        };
        f.write_str(s)
    }
}

/// One player-season row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRecord {
    pub player_id: String,
    pub name: String,
    pub position: Position,
    /// Years.
    pub age: f64,
    /// Centimetres.
    pub height: f64,
    /// Kilograms.
    pub weight: f64,
    pub nationality: String,
    pub club_id: String,
    pub prev_club_id: String,
    pub league_id: String,
    pub prev_league_id: String,
    pub last_rating: f64,
    pub career_rating: f64,
    /// Hundreds of minutes.
    pub game_time: f64,
    pub goals: f64,
    pub goal_contributions: f64,
    /// Fraction in `[0, 1]`.
    pub penalty_accuracy: f64,
    pub shots: f64,
    /// Percent.
    pub passing_accuracy: f64,
    /// Yellow-card equivalents: a red card counts as two yellows.
    pub cards: f64,
    pub clearances: f64,
    pub interceptions: f64,
    pub n_transfers: f64,
    pub transfer_listed: bool,
}

/// Header of the player CSV, in order. `yellow_cards` and `red_cards` are
/// folded into [`PlayerRecord::cards`] at ingestion.
pub const PLAYER_COLUMNS: [&str; 25] = [
    "player_id",
    "name",
    "position",
    "age",
    "height",
    "weight",
    "nationality",
    "club_id",
    "prev_club_id",
    "league_id",
    "prev_league_id",
    "last_rating",
    "career_rating",
    "game_time",
    "goals",
    "goal_contributions",
    "penalty_accuracy",
    "shots",
    "passing_accuracy",
    "yellow_cards",
    "red_cards",
    "clearances",
    "interceptions",
    "n_transfers",
    "transfer_listed",
];

/// Reads a player table from a CSV file.
pub fn load_player_table(path: impl AsRef<Path>) -> Result<Vec<PlayerRecord>, ModelIoError> {
    let file = std::fs::File::open(path)?;
    read_player_table(file)
}

/// Reads a player table from any CSV source.
pub fn read_player_table<R: Read>(source: R) -> Result<Vec<PlayerRecord>, ModelIoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let mut col = BTreeMap::new();
    for name in PLAYER_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ModelIoError::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let text = |name: &str| rec.get(col[name]).unwrap_or("").to_string();
        let num = |name: &'static str| -> Result<f64, ModelIoError> {
            let raw = rec.get(col[name]).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| ModelIoError::BadValue { row, message: format!("`{name}` is not a finite number: `{raw}`") })
        };
        let pos_raw = text("position");
        let position = Position::parse(&pos_raw).ok_or(ModelIoError::BadEnum { row, field: "position", value: pos_raw })?;
        let age = num("age")?;
        if age <= 0.0 {
            return Err(ModelIoError::NonPositiveAge { row, age });
        }
        let penalty_accuracy = num("penalty_accuracy")?;
        if !(0.0..=1.0).contains(&penalty_accuracy) {
            return Err(ModelIoError::BadValue { row, message: format!("penalty_accuracy {penalty_accuracy} outside [0, 1]") });
        }
        let yellow = num("yellow_cards")?;
        let red = num("red_cards")?;
        if yellow < 0.0 || red < 0.0 {
            return Err(ModelIoError::BadValue { row, message: "card counts must be nonnegative".into() });
        }
        let listed_raw = text("transfer_listed");
        let transfer_listed = match listed_raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" | "" => false,
            _ => return Err(ModelIoError::BadEnum { row, field: "transfer_listed", value: listed_raw }),
        };
        out.push(PlayerRecord {
            player_id: text("player_id"),
            name: text("name"),
            position,
            age,
            height: num("height")?,
            weight: num("weight")?,
            nationality: text("nationality"),
            club_id: text("club_id"),
            prev_club_id: text("prev_club_id"),
            league_id: text("league_id"),
            prev_league_id: text("prev_league_id"),
            last_rating: num("last_rating")?,
            career_rating: num("career_rating")?,
            game_time: num("game_time")?,
            goals: num("goals")?,
            goal_contributions: num("goal_contributions")?,
            penalty_accuracy,
            shots: num("shots")?,
            passing_accuracy: num("passing_accuracy")?,
            cards: yellow + 2.0 * red,
            clearances: num("clearances")?,
            interceptions: num("interceptions")?,
            n_transfers: num("n_transfers")?,
            transfer_listed,
        });
    }
    let mut seen = BTreeSet::new();
    for (i, p) in out.iter().enumerate() {
        if !seen.insert(p.player_id.clone()) {
            return Err(ModelIoError::BadValue { row: i + 1, message: format!("duplicate player_id `{}`", p.player_id) });
        }
    }
    Ok(out)
}

/// Writes players back to CSV. Cards are written as yellow-card equivalents
/// with zero reds, which reloads to the same record.
pub fn write_player_table<W: std::io::Write>(players: &[PlayerRecord], sink: W) -> Result<(), ModelIoError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(PLAYER_COLUMNS)?;
    for p in players {
        let nums = |v: f64| format!("{v:?}");
        w.write_record([
            p.player_id.clone(),
            p.name.clone(),
            p.position.to_string(),
            nums(p.age),
            nums(p.height),
            nums(p.weight),
            p.nationality.clone(),
            p.club_id.clone(),
            p.prev_club_id.clone(),
            p.league_id.clone(),
            p.prev_league_id.clone(),
            nums(p.last_rating),
            nums(p.career_rating),
            nums(p.game_time),
            nums(p.goals),
            nums(p.goal_contributions),
            nums(p.penalty_accuracy),
            nums(p.shots),
            nums(p.passing_accuracy),
            nums(p.cards),
            nums(0.0),
            nums(p.clearances),
            nums(p.interceptions),
            nums(p.n_transfers),
            p.transfer_listed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Clubs
// ---------------------------------------------------------------------------

/// Static description of a league.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueMeta {
    pub league_id: String,
    pub country: String,
    pub continent: String,
    /// Member of the set of top leagues used by the top-league buying rule.
    #[serde(default)]
    pub top_league: bool,
    /// League-season median of realised fees when selling, millions €.
    pub median_sell_fee: f64,
    /// League-season median of realised fees when buying, millions €.
    pub median_buy_fee: f64,
}

/// Static description of a club; squad statistics are derived from players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClubMeta {
    pub club_id: String,
    pub league_id: String,
    /// Transfer budget cap `B_max`, millions €.
    pub budget_max: f64,
    /// Minimum profit from sales, millions €.
    #[serde(default)]
    pub profit_min: f64,
}

/// League and club metadata accompanying a player table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeagueRegistry {
    pub leagues: Vec<LeagueMeta>,
    pub clubs: Vec<ClubMeta>,
}

/// Reads league and club metadata from JSON.
pub fn load_league_registry(path: impl AsRef<Path>) -> Result<LeagueRegistry, ModelIoError> {
    let reg: LeagueRegistry = serde_json::from_reader(std::fs::File::open(path)?)?;
    reg.validate()?;
    Ok(reg)
}

impl LeagueRegistry {
    pub fn validate(&self) -> Result<(), ModelIoError> {
        let leagues: BTreeSet<&str> = self.leagues.iter().map(|l| l.league_id.as_str()).collect();
        for c in &self.clubs {
            if !leagues.contains(c.league_id.as_str()) {
                return Err(ModelIoError::BadClub(format!("club `{}` references unknown league `{}`", c.club_id, c.league_id)));
            }
            if !(c.budget_max > 0.0) {
                return Err(ModelIoError::BadClub(format!("club `{}` must have budget_max > 0", c.club_id)));
            }
        }
        Ok(())
    }

    pub fn league(&self, id: &str) -> Option<&LeagueMeta> {
        self.leagues.iter().find(|l| l.league_id == id)
    }
}

/// A club together with statistics of its pre-window squad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClubContext {
    pub club_id: String,
    pub league_id: String,
    pub country: String,
    pub continent: String,
    pub top_league: bool,
    pub member_ids: BTreeSet<String>,
    /// Median last-season rating of the squad.
    pub median_rating: f64,
    pub median_rating_by_position: BTreeMap<Position, f64>,
    pub depth_by_position: BTreeMap<Position, usize>,
    pub league_median_sell_fee: f64,
    pub league_median_buy_fee: f64,
    pub budget_max: f64,
    pub profit_min: f64,
    pub avg_age: f64,
    pub avg_rating: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl ClubContext {
    /// Builds a club context from its metadata and the player table.
    pub fn build(meta: &ClubMeta, registry: &LeagueRegistry, players: &[PlayerRecord]) -> Result<Self, ModelIoError> {
        let league = registry
            .league(&meta.league_id)
            .ok_or_else(|| ModelIoError::BadClub(format!("unknown league `{}`", meta.league_id)))?;
        let members: Vec<&PlayerRecord> = players.iter().filter(|p| p.club_id == meta.club_id).collect();
        if members.is_empty() {
            return Err(ModelIoError::BadClub(format!("club `{}` has no players", meta.club_id)));
        }
        let mut ratings: Vec<f64> = members.iter().map(|p| p.last_rating).collect();
        let mut by_pos = BTreeMap::new();
        let mut depth = BTreeMap::new();
        for pos in Position::ALL {
            let mut r: Vec<f64> = members.iter().filter(|p| p.position == pos).map(|p| p.last_rating).collect();
            depth.insert(pos, r.len());
            if !r.is_empty() {
                by_pos.insert(pos, median(&mut r));
            }
        }
        let n = members.len() as f64;
        Ok(ClubContext {
            club_id: meta.club_id.clone(),
            league_id: meta.league_id.clone(),
            country: league.country.clone(),
            continent: league.continent.clone(),
            top_league: league.top_league,
            member_ids: members.iter().map(|p| p.player_id.clone()).collect(),
            median_rating: median(&mut ratings),
            median_rating_by_position: by_pos,
            depth_by_position: depth,
            league_median_sell_fee: league.median_sell_fee,
            league_median_buy_fee: league.median_buy_fee,
            budget_max: meta.budget_max,
            profit_min: meta.profit_min,
            avg_age: members.iter().map(|p| p.age).sum::<f64>() / n,
            avg_rating: members.iter().map(|p| p.last_rating).sum::<f64>() / n,
        })
    }

    /// Builds contexts for every club in the registry that has players.
    pub fn build_all(registry: &LeagueRegistry, players: &[PlayerRecord]) -> Result<BTreeMap<String, ClubContext>, ModelIoError> {
        let mut out = BTreeMap::new();
        for meta in &registry.clubs {
            if players.iter().any(|p| p.club_id == meta.club_id) {
                out.insert(meta.club_id.clone(), ClubContext::build(meta, registry, players)?);
            }
        }
        Ok(out)
    }

    /// Median rating of the squad at `pos`, falling back to the overall
    /// median when the club has nobody in that role.
    pub fn position_rating(&self, pos: Position) -> f64 {
        self.median_rating_by_position.get(&pos).copied().unwrap_or(self.median_rating)
    }

    pub fn position_depth(&self, pos: Position) -> usize {
        self.depth_by_position.get(&pos).copied().unwrap_or(0)
    }

    /// Pseudo-club representing the open market as a buyer of the focal
    /// club's players: every team-context statistic is the median across
    /// the supplied clubs and it has no random intercept of its own.
    pub fn external_market(clubs: &BTreeMap<String, ClubContext>) -> ClubContext {
        let med = |f: &dyn Fn(&ClubContext) -> f64| {
            let mut v: Vec<f64> = clubs.values().map(f).collect();
            median(&mut v)
        };
        let mut by_pos = BTreeMap::new();
        let mut depth = BTreeMap::new();
        for pos in Position::ALL {
            by_pos.insert(pos, med(&|c: &ClubContext| c.position_rating(pos)));
            depth.insert(pos, med(&|c: &ClubContext| c.position_depth(pos) as f64).round() as usize);
        }
        ClubContext {
            club_id: EXTERNAL_MARKET_ID.to_string(),
            league_id: EXTERNAL_MARKET_ID.to_string(),
            country: String::new(),
            continent: String::new(),
            top_league: false,
            member_ids: BTreeSet::new(),
            median_rating: med(&|c: &ClubContext| c.median_rating),
            median_rating_by_position: by_pos,
            depth_by_position: depth,
            league_median_sell_fee: med(&|c: &ClubContext| c.league_median_sell_fee),
            league_median_buy_fee: med(&|c: &ClubContext| c.league_median_buy_fee),
            budget_max: med(&|c: &ClubContext| c.budget_max),
            profit_min: 0.0,
            avg_age: med(&|c: &ClubContext| c.avg_age),
            avg_rating: med(&|c: &ClubContext| c.avg_rating),
        }
    }
}

/// Identifier of the open-market pseudo-club.
pub const EXTERNAL_MARKET_ID: &str = "__market__";

// ---------------------------------------------------------------------------
// Coefficients
// ---------------------------------------------------------------------------

/// Centre and scale applied to a raw feature: `(x − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub center: f64,
    pub scale: f64,
}

/// Random-intercept lookup tables of the rating model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingRandomEffects {
    /// Keyed by `"<previous club>-><target club>"`.
    #[serde(default)]
    pub corridor: BTreeMap<String, f64>,
    #[serde(default)]
    pub current_league: BTreeMap<String, f64>,
    #[serde(default)]
    pub last_league: BTreeMap<String, f64>,
}

/// Variance components of the rating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingVariances {
    pub sigma2: f64,
    pub sigma2_club: f64,
    pub sigma2_cur: f64,
    pub sigma2_last: f64,
}

/// Random-intercept lookup tables of the fee model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeeRandomEffects {
    #[serde(default)]
    pub buyer: BTreeMap<String, f64>,
    #[serde(default)]
    pub seller: BTreeMap<String, f64>,
}

/// Variance components of the fee model (log-fee scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeVariances {
    pub tau2: f64,
    pub sigma2_buy: f64,
    pub sigma2_sell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingModel {
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub scalers: BTreeMap<String, Scaler>,
    #[serde(default)]
    pub random: RatingRandomEffects,
    pub variances: RatingVariances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeModel {
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub scalers: BTreeMap<String, Scaler>,
    #[serde(default)]
    pub random: FeeRandomEffects,
    pub variances: FeeVariances,
}

/// Unit declaration every coefficient file must carry.
pub const FEE_UNITS: &str = "log-millions-EUR";

/// Fitted coefficients of the rating and fee models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficients {
    pub fee_units: String,
    /// Free-text description of the scaling convention the file assumes.
    #[serde(default)]
    pub scaling_note: String,
    pub rating_model: RatingModel,
    pub fee_model: FeeModel,
}

/// Reads coefficients from a JSON file and validates them.
pub fn load_coefficients(path: impl AsRef<Path>) -> Result<ModelCoefficients, ModelIoError> {
    parse_coefficients(&std::fs::read_to_string(path)?)
}

/// Parses coefficients from JSON text and validates them.
pub fn parse_coefficients(text: &str) -> Result<ModelCoefficients, ModelIoError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    // report the first absent variance component by name rather than as a
    // generic deserialisation failure
    for (block, names) in [
        ("rating_model", &["sigma2", "sigma2_club", "sigma2_cur", "sigma2_last"][..]),
        ("fee_model", &["tau2", "sigma2_buy", "sigma2_sell"][..]),
    ] {
        let vars = value.get(block).and_then(|b| b.get("variances"));
        for name in names {
            if vars.and_then(|v| v.get(*name)).is_none() {
                return Err(ModelIoError::MissingCoefficient(format!("{block}.variances.{name}")));
            }
        }
    }
    let coeffs: ModelCoefficients = serde_json::from_value(value)?;
    coeffs.validate()?;
    Ok(coeffs)
}

impl ModelCoefficients {
    pub fn validate(&self) -> Result<(), ModelIoError> {
        if self.fee_units != FEE_UNITS {
            return Err(ModelIoError::BadUnits { expected: FEE_UNITS, found: self.fee_units.clone() });
        }
        check_block("rating_model", &self.rating_model.fixed, &self.rating_model.scalers, RATING_FEATURES)?;
        check_block("fee_model", &self.fee_model.fixed, &self.fee_model.scalers, FEE_FEATURES)?;
        let v = &self.rating_model.variances;
        for (name, val) in [("sigma2", v.sigma2), ("sigma2_club", v.sigma2_club), ("sigma2_cur", v.sigma2_cur), ("sigma2_last", v.sigma2_last)] {
            if !(val >= 0.0) {
                return Err(ModelIoError::NegativeVariance(format!("rating_model.{name}")));
            }
        }
        let v = &self.fee_model.variances;
        for (name, val) in [("tau2", v.tau2), ("sigma2_buy", v.sigma2_buy), ("sigma2_sell", v.sigma2_sell)] {
            if !(val >= 0.0) {
                return Err(ModelIoError::NegativeVariance(format!("fee_model.{name}")));
            }
        }
        Ok(())
    }
}

fn check_block(block: &str, fixed: &BTreeMap<String, f64>, scalers: &BTreeMap<String, Scaler>, features: &[&str]) -> Result<(), ModelIoError> {
    for name in features {
        match fixed.get(*name) {
            None => return Err(ModelIoError::MissingCoefficient(format!("{block}.{name}"))),
            Some(v) if !v.is_finite() => return Err(ModelIoError::MissingCoefficient(format!("{block}.{name}"))),
            _ => {}
        }
    }
    for name in fixed.keys() {
        if !features.contains(&name.as_str()) {
            return Err(ModelIoError::UnknownCoefficient(format!("{block}.{name}")));
        }
    }
    for (name, s) in scalers {
        if !features.contains(&name.as_str()) || name == "intercept" || name == "age_sq" {
            return Err(ModelIoError::UnknownCoefficient(format!("{block}.scalers.{name}")));
        }
        if s.scale == 0.0 || !s.scale.is_finite() || !s.center.is_finite() {
            return Err(ModelIoError::BadScaler(format!("{block}.{name}")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// Objective weights `(λ1, λ2, λ3)` on cost, risk and quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub cost: f64,
    pub risk: f64,
    pub quality: f64,
}

impl Weights {
    pub fn new(cost: f64, risk: f64, quality: f64) -> Self {
        Self { cost, risk, quality }
    }

    pub fn validate(&self) -> Result<(), ModelIoError> {
        for (name, v) in [("lambda1", self.cost), ("lambda2", self.risk), ("lambda3", self.quality)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ModelIoError::BadWeight(format!("{name} = {v} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Players fixed by the analyst before the search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Directives {
    #[serde(default)]
    pub must_buy: BTreeSet<String>,
    #[serde(default)]
    pub must_sell: BTreeSet<String>,
    #[serde(default)]
    pub keep: BTreeSet<String>,
}

impl Directives {
    pub fn is_empty(&self) -> bool {
        self.must_buy.is_empty() && self.must_sell.is_empty() && self.keep.is_empty()
    }

    /// Rejects any player named in two sets.
    pub fn check_disjoint(&self) -> Result<(), ModelIoError> {
        for id in self.must_buy.iter().chain(self.must_sell.iter()) {
            if self.keep.contains(id) {
                return Err(ModelIoError::ConflictingDirectives(id.clone()));
            }
        }
        if let Some(id) = self.must_buy.intersection(&self.must_sell).next() {
            return Err(ModelIoError::ConflictingDirectives(id.clone()));
        }
        Ok(())
    }
}

/// Optional overrides of the constraint bounds; absent entries take the
/// defaults of [`ConstraintBounds`] and the focal club's budget and profit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_tot_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_retain_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_transfer_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gk_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gk_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mf_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fw_min: Option<i64>,
    /// Minimum buys per position, `[GK, DF, MF, FW]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buy_min: Option<[i64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other_continent_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other_continent_max: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_league_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_min: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profit_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_max: Option<f64>,
}

impl BoundsSpec {
    /// Fills absent entries with defaults and the club's financial limits.
    pub fn resolve(&self, club: &ClubContext, alpha: f64) -> ConstraintBounds {
        let d = ConstraintBounds::paper_defaults(club.budget_max, club.profit_min, alpha);
        ConstraintBounds {
            k_tot_max: self.k_tot_max.unwrap_or(d.k_tot_max),
            k_retain_min: self.k_retain_min.unwrap_or(d.k_retain_min),
            k_transfer_max: self.k_transfer_max.unwrap_or(d.k_transfer_max),
            gk_min: self.gk_min.unwrap_or(d.gk_min),
            gk_max: self.gk_max.unwrap_or(d.gk_max),
            df_min: self.df_min.unwrap_or(d.df_min),
            mf_min: self.mf_min.unwrap_or(d.mf_min),
            fw_min: self.fw_min.unwrap_or(d.fw_min),
            buy_min: self.buy_min.unwrap_or(d.buy_min),
            other_continent_min: self.other_continent_min.unwrap_or(d.other_continent_min),
            other_continent_max: self.other_continent_max.unwrap_or(d.other_continent_max),
            top_league_min: self.top_league_min.unwrap_or(d.top_league_min),
            local_min: self.local_min.unwrap_or(d.local_min),
            profit_min: self.profit_min.unwrap_or(d.profit_min),
            budget_max: self.budget_max.unwrap_or(d.budget_max),
            alpha,
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

/// A planning scenario for one focal club.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub focal_club: String,
    /// `(λ1, λ2, λ3)`.
    pub lambda: [f64; 3],
    /// Chance-constraint level `α`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub bounds: BoundsSpec,
    #[serde(default)]
    pub directives: Directives,
    #[serde(default)]
    pub solver: SolverParams,
    /// Resale price `r_i` per current player, millions €; defaults to `E(Y_i)`.
    #[serde(default)]
    pub resale_prices: BTreeMap<String, f64>,
    /// Season index `t_s` of the fee model's linear trend.
    #[serde(default)]
    pub time_index: f64,
    /// Rescale cost and risk by `B_max` and quality by `30 · max rating`.
    #[serde(default)]
    pub normalize_objective: bool,
}

impl ScenarioConfig {
    pub fn weights(&self) -> Weights {
        Weights::new(self.lambda[0], self.lambda[1], self.lambda[2])
    }

    pub fn validate(&self) -> Result<(), ModelIoError> {
        self.weights().validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ModelIoError::BadScenario(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        self.directives.check_disjoint()?;
        self.solver.validate().map_err(ModelIoError::BadScenario)?;
        if let Some(b) = self.bounds.budget_max {
            if !(b > 0.0) {
                return Err(ModelIoError::BadScenario("budget_max must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Reads a scenario from a JSON file and validates it.
pub fn load_scenario_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ModelIoError> {
    parse_scenario_config(&std::fs::read_to_string(path)?)
}

/// Parses a scenario from JSON text and validates it.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig, ModelIoError> {
    let cfg: ScenarioConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}
