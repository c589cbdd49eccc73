//! Raw results to model-ready observations.
//!
//! Results are grouped into games, games into rating periods, and each game
//! is reduced to its observation values: within-game centered scores for
//! multi-competitor sports, or a single first-minus-second difference for
//! head-to-head sports. Raw scores are kept on every game so that
//! pre-scaling can be re-applied without re-reading the input.

use std::collections::HashMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Design, GameBlock, ObsLayout, PeriodBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct RawResult {
    pub date: NaiveDate,
    pub game_id: String,
    pub athlete_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MultiCompetitor,
    HeadToHead,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::MultiCompetitor => f.write_str("multi_competitor"),
            Mode::HeadToHead => f.write_str("head_to_head"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodScheme {
    Annual,
    Biannual,
    Quarterly,
    Bimonthly,
    Monthly,
    /// Period boundaries; a date on a breakpoint starts the next period.
    Breakpoints(Vec<NaiveDate>),
}

impl PeriodScheme {
    /// Ordinal of the calendar bucket containing `date`. Consecutive buckets
    /// have consecutive keys.
    pub fn key(&self, date: NaiveDate) -> i64 {
        let year = i64::from(date.year());
        let month0 = i64::from(date.month0());
        match self {
            PeriodScheme::Annual => year,
            PeriodScheme::Biannual => year * 2 + month0 / 6,
            PeriodScheme::Quarterly => year * 4 + month0 / 3,
            PeriodScheme::Bimonthly => year * 6 + month0 / 2,
            PeriodScheme::Monthly => year * 12 + month0,
            PeriodScheme::Breakpoints(b) => b.iter().filter(|&&d| d <= date).count() as i64,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "annual" => Ok(Self::Annual),
            "biannual" => Ok(Self::Biannual),
            "quarterly" => Ok(Self::Quarterly),
            "bimonthly" => Ok(Self::Bimonthly),
            "monthly" => Ok(Self::Monthly),
            other => {
                let mut dates = other
                    .split(',')
                    .map(|d| {
                        NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").map_err(|_| {
                            Error::Config(format!(
                                "unknown period scheme '{other}' (expected annual, biannual, \
                                 quarterly, bimonthly, monthly, or comma-separated dates)"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                dates.sort();
                dates.dedup();
                Ok(Self::Breakpoints(dates))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreScale {
    #[default]
    None,
    LogThenCenter,
    UnitVariancePerGame,
}

/// Whether multi-competitor observations are game-centered before the
/// transform. `None` keeps raw (pre-scaled) scores, which suits data whose
/// scores are already mean-zero within a game by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    GameMean,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub mode: Mode,
    pub scheme: PeriodScheme,
    pub pre_scale: PreScale,
    pub centering: Centering,
}

impl DatasetOptions {
    pub fn new(mode: Mode, scheme: PeriodScheme) -> Self {
        Self { mode, scheme, pre_scale: PreScale::None, centering: Centering::GameMean }
    }
}

/// Bijection between athlete identifiers and dense indices, in order of
/// first appearance, with the period of each athlete's first game.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AthleteIndex {
    ids: Vec<String>,
    debuts: Vec<usize>,
    lookup: HashMap<String, usize>,
}

impl AthleteIndex {
    pub fn from_parts(ids: Vec<String>, debuts: Vec<usize>) -> Result<Self> {
        if ids.len() != debuts.len() {
            return Err(Error::Data(format!("{} athlete ids but {} debut periods", ids.len(), debuts.len())));
        }
        let mut index = Self::default();
        for (id, t) in ids.into_iter().zip(debuts) {
            if index.lookup.contains_key(&id) {
                return Err(Error::Data(format!("duplicate athlete id '{id}'")));
            }
            index.insert(id, t);
        }
        Ok(index)
    }

    /// Index of `id`, adding it with debut period `period` if new.
    pub fn insert(&mut self, id: String, period: usize) -> usize {
        if let Some(&i) = self.lookup.get(&id) {
            return i;
        }
        let i = self.ids.len();
        self.lookup.insert(id.clone(), i);
        self.ids.push(id);
        self.debuts.push(period);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Period (1-based) of each athlete's first game.
    pub fn debuts(&self) -> &[usize] {
        &self.debuts
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// One value per athlete: centered scores, or raw scores when centering
    /// is disabled.
    Scores(Vec<f64>),
    /// First athlete's score minus the second's.
    Difference(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    pub id: String,
    pub date: NaiveDate,
    pub athletes: Vec<usize>,
    pub raw_scores: Vec<f64>,
    pub outcome: Outcome,
}

impl Game {
    pub fn observations(&self) -> &[f64] {
        match &self.outcome {
            Outcome::Scores(s) => s,
            Outcome::Difference(z) => std::slice::from_ref(z),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.observations().len()
    }

    pub fn design(&self) -> Design {
        match self.outcome {
            Outcome::Scores(_) => Design::Centered,
            Outcome::Difference(_) => Design::Difference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingPeriod {
    pub index: usize,
    pub games: Vec<Game>,
}

impl RatingPeriod {
    pub fn n_obs(&self) -> usize {
        self.games.iter().map(Game::n_obs).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub periods: Vec<RatingPeriod>,
    pub athletes: AthleteIndex,
    pub options: DatasetOptions,
    /// Scheme key of period 1.
    pub origin_key: i64,
    pub dropped_singletons: usize,
}

/// A game's results before reduction to observations.
#[derive(Debug, Clone)]
struct RawGame {
    id: String,
    date: NaiveDate,
    entries: Vec<(String, f64)>,
}

fn group_games(results: &[RawResult]) -> Result<Vec<RawGame>> {
    let mut order: Vec<RawGame> = Vec::new();
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    for (row, r) in results.iter().enumerate() {
        if !r.score.is_finite() {
            return Err(Error::Data(format!("row {}: score is not finite", row + 1)));
        }
        let g = *by_id.entry(r.game_id.as_str()).or_insert_with(|| {
            order.push(RawGame { id: r.game_id.clone(), date: r.date, entries: Vec::new() });
            order.len() - 1
        });
        let game = &mut order[g];
        if game.date != r.date {
            return Err(Error::Data(format!(
                "row {}: game '{}' has results on {} and {}",
                row + 1,
                r.game_id,
                game.date,
                r.date
            )));
        }
        if game.entries.iter().any(|(a, _)| a == &r.athlete_id) {
            return Err(Error::Data(format!(
                "row {}: athlete '{}' appears twice in game '{}'",
                row + 1,
                r.athlete_id,
                r.game_id
            )));
        }
        game.entries.push((r.athlete_id.clone(), r.score));
    }
    // chronological, ties kept in input order
    order.sort_by_key(|g| g.date);
    Ok(order)
}

/// Subtracts the within-game mean.
pub fn center_scores(scores: &[f64]) -> Vec<f64> {
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    scores.iter().map(|s| s - mean).collect()
}

/// First score minus second.
pub fn score_difference(first: f64, second: f64) -> f64 {
    first - second
}

/// Applies a pre-scaling policy to one game's raw scores, then centers (or
/// not) per `centering`.
pub fn prepare_scores(raw: &[f64], policy: PreScale, centering: Centering) -> Result<Vec<f64>> {
    let scaled: Vec<f64> = match policy {
        PreScale::LogThenCenter => {
            if let Some(&bad) = raw.iter().find(|&&s| s <= 0.0) {
                return Err(Error::Data(format!(
                    "log pre-scaling requires positive scores, found {bad}"
                )));
            }
            raw.iter().map(|s| s.ln()).collect()
        }
        PreScale::None | PreScale::UnitVariancePerGame => raw.to_vec(),
    };
    let mut out = match centering {
        Centering::GameMean => center_scores(&scaled),
        Centering::None => scaled,
    };
    if policy == PreScale::UnitVariancePerGame && out.len() >= 3 {
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var > 0.0 {
            let sd = var.sqrt();
            out.iter_mut().for_each(|v| *v = mean + (*v - mean) / sd);
        }
    }
    Ok(out)
}

fn reduce_game(
    id: String,
    date: NaiveDate,
    athletes: Vec<usize>,
    raw: Vec<f64>,
    options: &DatasetOptions,
) -> Result<Game> {
    let outcome = match options.mode {
        Mode::MultiCompetitor => {
            Outcome::Scores(prepare_scores(&raw, options.pre_scale, options.centering)?)
        }
        Mode::HeadToHead => {
            if raw.len() != 2 {
                return Err(Error::Data(format!(
                    "head-to-head game '{id}' has {} athletes",
                    raw.len()
                )));
            }
            let scaled = match options.pre_scale {
                PreScale::LogThenCenter => prepare_scores(&raw, PreScale::LogThenCenter, Centering::None)?,
                _ => raw.clone(),
            };
            Outcome::Difference(score_difference(scaled[0], scaled[1]))
        }
    };
    Ok(Game { id, date, athletes, raw_scores: raw, outcome })
}

impl Dataset {
    /// Groups results into games and assigns each game to the rating period
    /// containing its date. Empty intermediate periods are kept.
    pub fn build(results: &[RawResult], options: DatasetOptions) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Data("no results".into()));
        }
        let games = group_games(results)?;
        let origin_key = games.iter().map(|g| options.scheme.key(g.date)).min().unwrap();
        let mut dataset = Dataset {
            periods: Vec::new(),
            athletes: AthleteIndex::default(),
            options,
            origin_key,
            dropped_singletons: 0,
        };
        dataset.append_games(games)?;
        Ok(dataset)
    }

    /// Period index (1-based) for a date under this dataset's scheme.
    pub fn period_of(&self, date: NaiveDate) -> Result<usize> {
        let key = self.options.scheme.key(date);
        if key < self.origin_key {
            return Err(Error::Data(format!("date {date} precedes the first rating period")));
        }
        Ok((key - self.origin_key + 1) as usize)
    }

    fn append_games(&mut self, games: Vec<RawGame>) -> Result<()> {
        for g in games {
            let t = self.period_of(g.date)?;
            if g.entries.len() < 2 {
                log::warn!("dropping game '{}' with a single participant", g.id);
                self.dropped_singletons += 1;
                continue;
            }
            if self.options.mode == Mode::HeadToHead && g.entries.len() != 2 {
                return Err(Error::Data(format!(
                    "head-to-head game '{}' has {} athletes",
                    g.id,
                    g.entries.len()
                )));
            }
            let athletes: Vec<usize> =
                g.entries.iter().map(|(a, _)| self.athletes.insert(a.clone(), t)).collect();
            let raw: Vec<f64> = g.entries.iter().map(|(_, s)| *s).collect();
            let game = reduce_game(g.id, g.date, athletes, raw, &self.options)?;
            while self.periods.len() < t {
                let index = self.periods.len() + 1;
                self.periods.push(RatingPeriod { index, games: Vec::new() });
            }
            self.periods[t - 1].games.push(game);
        }
        Ok(())
    }

    /// Builds rating periods for new results against this dataset's scheme
    /// and athlete index, without modifying the dataset. New athletes are
    /// appended to the returned index. Periods are returned in order and
    /// include empty periods between the dataset's end and the new data.
    pub fn periods_for(&self, results: &[RawResult]) -> Result<(Vec<RatingPeriod>, AthleteIndex)> {
        let mut scratch = Dataset {
            periods: self.periods.iter().map(|p| RatingPeriod { index: p.index, games: Vec::new() }).collect(),
            athletes: self.athletes.clone(),
            options: self.options.clone(),
            origin_key: self.origin_key,
            dropped_singletons: 0,
        };
        let last = self.periods.len();
        let games = group_games(results)?;
        for g in &games {
            let t = self.period_of(g.date)?;
            if t <= last {
                return Err(Error::OutOfOrder { got: t, last });
            }
        }
        scratch.append_games(games)?;
        let new = scratch.periods.split_off(last);
        Ok((new, scratch.athletes))
    }

    /// Appends periods produced by [`Dataset::periods_for`].
    pub fn extend(&mut self, periods: Vec<RatingPeriod>, athletes: AthleteIndex) -> Result<()> {
        for p in periods {
            if p.index != self.periods.len() + 1 {
                return Err(Error::OutOfOrder { got: p.index, last: self.periods.len() });
            }
            self.periods.push(p);
        }
        self.athletes = athletes;
        Ok(())
    }

    /// Recomputes every game's observations under a new pre-scaling policy.
    pub fn with_pre_scale(&self, policy: PreScale) -> Result<Self> {
        let mut options = self.options.clone();
        options.pre_scale = policy;
        let mut out = self.clone();
        out.options = options.clone();
        for period in &mut out.periods {
            for game in &mut period.games {
                *game = reduce_game(
                    game.id.clone(),
                    game.date,
                    game.athletes.clone(),
                    game.raw_scores.clone(),
                    &options,
                )?;
            }
        }
        Ok(out)
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn n_athletes(&self) -> usize {
        self.athletes.len()
    }

    pub fn n_obs(&self) -> usize {
        self.periods.iter().map(RatingPeriod::n_obs).sum()
    }

    pub fn mode(&self) -> Mode {
        self.options.mode
    }

    /// The first `t` periods, with the full athlete index.
    pub fn prefix(&self, t: usize) -> Dataset {
        Dataset { periods: self.periods[..t.min(self.periods.len())].to_vec(), ..self.clone() }
    }

    /// Observation values in period, game, athlete order.
    pub fn observations(&self) -> Vec<f64> {
        self.periods
            .iter()
            .flat_map(|p| p.games.iter())
            .flat_map(|g| g.observations().iter().copied())
            .collect()
    }

    /// Design layout over the flat observation vector of
    /// [`Dataset::observations`].
    pub fn layout(&self) -> ObsLayout {
        layout_for(&self.periods, self.athletes.len(), 0)
    }
}

pub fn layout_for(periods: &[RatingPeriod], p: usize, start_offset: usize) -> ObsLayout {
    let mut offset = start_offset;
    let periods = periods
        .iter()
        .map(|period| PeriodBlock {
            games: period
                .games
                .iter()
                .map(|g| {
                    let block = GameBlock { athletes: g.athletes.clone(), design: g.design(), offset };
                    offset += g.n_obs();
                    block
                })
                .collect(),
        })
        .collect();
    ObsLayout { p, periods }
}
