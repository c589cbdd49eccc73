//! One-step-ahead predictions and the metrics computed from them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::filter::Design;
use crate::fitting::FittedModel;
use crate::preprocess::Mode;

/// Which end of the score scale wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

impl Orientation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "higher_is_better" => Ok(Self::HigherIsBetter),
            "lower_is_better" => Ok(Self::LowerIsBetter),
            _ => Err(Error::Config(format!(
                "unknown orientation '{s}' (expected higher_is_better or lower_is_better)"
            ))),
        }
    }
}

/// Ranks with rank 1 for the best value and tied values sharing the
/// average of the ranks they span.
pub fn average_ranks(values: &[f64], orientation: Orientation) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    match orientation {
        Orientation::HigherIsBetter => order.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
        Orientation::LowerIsBetter => order.sort_by(|&a, &b| values[a].total_cmp(&values[b])),
    }
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = 0.5 * ((i + 1) + j) as f64;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// One-step prediction of one game from the filtered state just before its
/// period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamePrediction {
    pub period: usize,
    pub game_id: String,
    pub athletes: Vec<String>,
    /// Filtered ability means `m_{t-1}` of the participants.
    pub abilities: Vec<f64>,
    /// Predictive means of the game's observation rows on the transformed
    /// scale: centred abilities, or the ability difference head-to-head.
    pub predicted: Vec<f64>,
    /// Transformed observations.
    pub observed: Vec<f64>,
    pub predicted_ranks: Vec<f64>,
    pub observed_ranks: Vec<f64>,
    /// Participants with no results before this period; their prediction
    /// is the prior mean.
    pub unseen: Vec<bool>,
    /// Head-to-head only: predicted margin of the first athlete measured
    /// from the transformed zero margin `tau(0)`, and the raw observed
    /// margin. Signs give the predicted and actual winners.
    pub margin: Option<(f64, f64)>,
}

impl GamePrediction {
    pub fn n(&self) -> usize {
        self.athletes.len()
    }
}

/// Predicts every game in periods `from..=T` (1-based) from the filtered
/// state at the end of the preceding period. The filter has already
/// absorbed each period before the next is predicted, so this is the
/// rolling one-step protocol.
pub fn predict_games(model: &FittedModel, from: usize, orientation: Orientation) -> Result<Vec<GamePrediction>> {
    let total = model.n_periods();
    if from == 0 || from > total + 1 {
        return Err(Error::Config(format!("first predicted period {from} outside 1..={}", total + 1)));
    }
    if model.data.periods.len() != total {
        return Err(Error::Data("model trajectories and data disagree on the number of periods".into()));
    }
    let zero_margin = model.transform.transform(0.0);
    let debuts = model.data.athletes.debuts();
    let mut out = Vec::new();
    for t in from..=total {
        let prior = &model.filter.states[t - 1];
        let period = &model.data.periods[t - 1];
        for g in &period.games {
            let abilities: Vec<f64> =
                g.athletes.iter().map(|&a| if a < prior.p() { prior.m[a] } else { 0.0 }).collect();
            let predicted: Vec<f64> = match g.design() {
                Design::Centered => {
                    let mean = abilities.iter().sum::<f64>() / abilities.len() as f64;
                    abilities.iter().map(|m| m - mean).collect()
                }
                Design::Difference => vec![abilities[0] - abilities[1]],
                Design::Direct => abilities.clone(),
            };
            let observed: Vec<f64> = g.observations().iter().map(|&y| model.transform.transform(y)).collect();
            let margin = (model.data.mode() == Mode::HeadToHead)
                .then(|| (predicted[0] - zero_margin, g.raw_scores[0] - g.raw_scores[1]));
            out.push(GamePrediction {
                period: t,
                game_id: g.id.clone(),
                athletes: g.athletes.iter().map(|&a| model.data.athletes.id(a).to_string()).collect(),
                predicted_ranks: average_ranks(&abilities, orientation),
                observed_ranks: average_ranks(&g.raw_scores, orientation),
                abilities,
                predicted,
                observed,
                unseen: g.athletes.iter().map(|&a| debuts[a] >= t).collect(),
                margin,
            });
        }
    }
    Ok(out)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation of two rank vectors (Pearson on average ranks).
/// `None` when the observed ranks are all tied; predicted ranks that are all
/// tied carry no ordering information and score 0.
pub fn spearman(predicted_ranks: &[f64], observed_ranks: &[f64]) -> Option<f64> {
    if observed_ranks.len() < 2 || observed_ranks.iter().all(|r| *r == observed_ranks[0]) {
        return None;
    }
    Some(pearson(predicted_ranks, observed_ranks).unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSummary {
    /// Game-size-weighted Spearman correlation; `None` without usable games.
    pub rho: Option<f64>,
    pub games: usize,
    /// Games left out because every observed score tied.
    pub excluded_tied: usize,
}

/// Average of per-game Spearman correlations weighted by `n - 1`.
pub fn weighted_spearman(preds: &[GamePrediction]) -> SpearmanSummary {
    let (mut num, mut den) = (0.0, 0.0);
    let (mut games, mut excluded) = (0, 0);
    for p in preds {
        match spearman(&p.predicted_ranks, &p.observed_ranks) {
            Some(rho) => {
                let weight = (p.n() - 1) as f64;
                num += weight * rho;
                den += weight;
                games += 1;
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::info!("{excluded} games with all observed scores tied left out of the rank correlation");
    }
    SpearmanSummary { rho: (den > 0.0).then(|| num / den), games, excluded_tied: excluded }
}

/// Fraction of `(predicted, observed)` margins with matching sign; a zero on
/// either side earns half credit. `None` for an empty slice.
pub fn win_accuracy(margins: &[(f64, f64)]) -> Option<f64> {
    if margins.is_empty() {
        return None;
    }
    let score: f64 = margins
        .iter()
        .map(|&(p, o)| {
            if p == 0.0 || o == 0.0 {
                0.5
            } else if (p > 0.0) == (o > 0.0) {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    Some(score / margins.len() as f64)
}

/// Win accuracy over the head-to-head games among `preds`.
pub fn prediction_win_accuracy(preds: &[GamePrediction]) -> Option<f64> {
    let margins: Vec<(f64, f64)> = preds.iter().filter_map(|p| p.margin).collect();
    win_accuracy(&margins)
}

/// One-step residuals of periods `from..=T`, each divided by its marginal
/// predictive scale `sqrt(b/a * [I + X (V + wI) X^T]_ii)`.
pub fn standardized_residuals(model: &FittedModel, from: usize) -> Result<Vec<f64>> {
    let total = model.n_periods();
    if model.filter.predictive.len() != total {
        return Err(Error::Data(
            "predictive summaries are missing; rerun the filter over the data first".into(),
        ));
    }
    if from == 0 {
        return Err(Error::Config("periods are numbered from 1".into()));
    }
    Ok(model.filter.predictive[(from - 1).min(total)..]
        .iter()
        .flat_map(|s| s.standardized_residuals())
        .collect())
}

/// Sorted residuals paired with standard normal quantiles at plotting
/// positions `(i - 0.5) / n`.
pub fn qq_pairs(residuals: &[f64]) -> Vec<(f64, f64)> {
    let normal = Normal::standard();
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r, normal.inverse_cdf((i as f64 + 0.5) / n)))
        .collect()
}

/// Correlation between sorted residuals and normal quantiles.
pub fn qq_correlation(residuals: &[f64]) -> Option<f64> {
    let pairs = qq_pairs(residuals);
    if pairs.len() < 2 {
        return None;
    }
    let (r, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    pearson(&r, &q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub first_period: usize,
    pub last_period: usize,
    pub games: usize,
    pub spearman: SpearmanSummary,
    pub win_accuracy: Option<f64>,
    pub residuals: usize,
    pub qq_correlation: Option<f64>,
    /// Predictions involving athletes with no earlier results.
    pub unseen_athlete_predictions: usize,
}

/// Evaluates one-step predictions over periods `from..=T`.
pub fn evaluate(model: &FittedModel, from: usize, orientation: Orientation) -> Result<(EvaluationReport, Vec<GamePrediction>, Vec<f64>)> {
    let preds = predict_games(model, from, orientation)?;
    let resid = standardized_residuals(model, from)?;
    let report = EvaluationReport {
        first_period: from,
        last_period: model.n_periods(),
        games: preds.len(),
        spearman: weighted_spearman(&preds),
        win_accuracy: prediction_win_accuracy(&preds),
        residuals: resid.len(),
        qq_correlation: qq_correlation(&resid),
        unseen_athlete_predictions: preds.iter().map(|p| p.unseen.iter().filter(|u| **u).count()).sum(),
    };
    Ok((report, preds, resid))
}
