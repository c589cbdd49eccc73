//! Results CSV ingestion, model persistence and report tables.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{GamePrediction, Orientation};
use crate::filter::{AbilitySummary, Covariance, FilterRun, FilterState, Hyperparams, SmoothedState};
use crate::fitting::{FitDiagnostics, FitOptions, FittedModel, NelderMeadOptions, PriorVariant};
use crate::preprocess::{
    AthleteIndex, Centering, Dataset, DatasetOptions, Mode, PeriodScheme, PreScale, RatingPeriod,
    RawResult,
};
use crate::spline::{KnotConfig, TransformParams};

pub const FORMAT_VERSION: u32 = 1;

const HEADER: [&str; 4] = ["date", "game_id", "athlete_id", "score"];

/// Reads results with header `date,game_id,athlete_id,score`.
pub fn read_results<R: Read>(input: R) -> Result<Vec<RawResult>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Data("results file is empty".into()));
    }
    if header != HEADER {
        return Err(Error::Data(format!(
            "line 1: expected header 'date,game_id,athlete_id,score', found '{}'",
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    let mut seen: HashMap<(String, String), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Data(format!("malformed CSV: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(Error::Data(format!("line {line}: expected 4 fields, found {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| {
            Error::Data(format!("line {line}, column date: '{}' is not an ISO-8601 date (YYYY-MM-DD)", &rec[0]))
        })?;
        for (col, name) in [(1, "game_id"), (2, "athlete_id")] {
            if rec[col].is_empty() {
                return Err(Error::Data(format!("line {line}, column {name}: empty value")));
            }
        }
        let raw = &rec[3];
        let score: f64 = raw.parse().map_err(|_| {
            let hint = if raw.contains(':') {
                "; convert clock times such as 1:23:45 to seconds before loading"
            } else {
                ""
            };
            Error::Data(format!("line {line}, column score: '{raw}' is not a decimal number{hint}"))
        })?;
        if !score.is_finite() {
            return Err(Error::Data(format!("line {line}, column score: value must be finite")));
        }
        let key = (rec[1].to_string(), rec[2].to_string());
        if let Some(first) = seen.insert(key, line) {
            return Err(Error::Data(format!(
                "line {line}: athlete '{}' already listed in game '{}' on line {first}",
                &rec[2], &rec[1]
            )));
        }
        out.push(RawResult { date, game_id: rec[1].to_string(), athlete_id: rec[2].to_string(), score });
    }
    if out.is_empty() {
        return Err(Error::Data("results file has no rows".into()));
    }
    Ok(out)
}

pub fn load_results_csv(path: impl AsRef<Path>) -> Result<Vec<RawResult>> {
    let path = path.as_ref();
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_results(file)
}

pub fn write_results<W: Write>(results: &[RawResult], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(HEADER)?;
    for r in results {
        wtr.write_record([r.date.to_string(), r.game_id.clone(), r.athlete_id.clone(), r.score.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Settings for a fitting run, stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub period_scheme: PeriodScheme,
    pub orientation: Orientation,
    pub degree: usize,
    pub n_interior: usize,
    pub hyperparams: Hyperparams,
    pub train_fraction: f64,
    pub pre_scale: PreScale,
    pub centering: Centering,
    pub prior: PriorVariant,
    pub optimizer: NelderMeadOptions,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MultiCompetitor,
            period_scheme: PeriodScheme::Annual,
            orientation: Orientation::HigherIsBetter,
            degree: 3,
            n_interior: 3,
            hyperparams: Hyperparams::default(),
            train_fraction: 2.0 / 3.0,
            pre_scale: PreScale::None,
            centering: Centering::GameMean,
            prior: PriorVariant::TruncatedNormal,
            optimizer: NelderMeadOptions::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn dataset_options(&self) -> DatasetOptions {
        DatasetOptions {
            mode: self.mode,
            scheme: self.period_scheme.clone(),
            pre_scale: self.pre_scale,
            centering: self.centering,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            train_fraction: self.train_fraction,
            t_train: None,
            variant: self.prior,
            optimizer: self.optimizer,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1]", self.train_fraction)));
        }
        if self.degree < 1 || self.n_interior < 1 {
            return Err(Error::Config("spline degree and interior knot count must be at least 1".into()));
        }
        self.hyperparams.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("cannot parse configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Filtered posterior at the end of one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredRecord {
    pub t: usize,
    pub a: f64,
    pub b: f64,
    /// Means and variances (divided by `sigma^2`) in athlete order.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedRecord {
    pub t: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// On-disk form of a fitted model. Only diagonal variances are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: RunConfig,
    pub knots: KnotConfig,
    pub transform: TransformParams,
    pub w: f64,
    pub a: f64,
    pub b: f64,
    pub origin_key: i64,
    pub athletes: Vec<String>,
    /// Period of each athlete's first game, parallel to `athletes`.
    pub debuts: Vec<usize>,
    /// States for `t = 0..=T`.
    pub filtered: Vec<FilteredRecord>,
    /// States for `t = 1..=T`.
    pub smoothed: Vec<SmoothedRecord>,
    pub diagnostics: FitDiagnostics,
}

impl ModelFile {
    pub fn from_model(model: &FittedModel, config: &RunConfig) -> Result<Self> {
        if model.h.exact_mode || model.filter.states.iter().any(|s| !s.v.is_diagonal()) {
            return Err(Error::ModelFile(
                "exact-mode models keep full covariance matrices and cannot be saved; refit without exact mode"
                    .into(),
            ));
        }
        let mut config = config.clone();
        config.hyperparams = model.h.clone();
        config.mode = model.data.options.mode;
        config.period_scheme = model.data.options.scheme.clone();
        config.pre_scale = model.data.options.pre_scale;
        config.centering = model.data.options.centering;
        config.prior = model.variant;
        let (a, b) = model.sigma2_posterior();
        Ok(Self {
            format_version: FORMAT_VERSION,
            config,
            knots: model.transform.knots.clone(),
            transform: model.transform.clone(),
            w: model.w,
            a,
            b,
            origin_key: model.data.origin_key,
            athletes: model.data.athletes.ids().to_vec(),
            debuts: model.data.athletes.debuts().to_vec(),
            filtered: model
                .filter
                .states
                .iter()
                .map(|s| FilteredRecord {
                    t: s.t,
                    a: s.a,
                    b: s.b,
                    m: s.m.as_slice().to_vec(),
                    v: s.v.diagonal().as_slice().to_vec(),
                })
                .collect(),
            smoothed: model
                .smoothed
                .iter()
                .map(|s| SmoothedRecord { t: s.t, m: s.m.as_slice().to_vec(), v: s.v.diagonal().as_slice().to_vec() })
                .collect(),
            diagnostics: model.diagnostics.clone(),
        })
    }

    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ModelFile(msg));
        if self.format_version != FORMAT_VERSION {
            return bad(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        self.transform.validate().map_err(|e| Error::ModelFile(e.to_string()))?;
        if self.transform.knots != self.knots {
            return bad("knot configuration disagrees with the transform's".into());
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return bad(format!("innovation ratio {} must be positive", self.w));
        }
        if self.config.hyperparams.exact_mode {
            return bad("exact-mode models cannot be loaded".into());
        }
        let p = self.athletes.len();
        if p == 0 || AthleteIndex::from_parts(self.athletes.clone(), self.debuts.clone()).is_err() {
            return bad("athlete list is empty, has duplicates, or does not match the debut periods".into());
        }
        if self.filtered.is_empty() || self.smoothed.len() + 1 != self.filtered.len() {
            return bad(format!(
                "{} filtered and {} smoothed states do not describe the same periods",
                self.filtered.len(),
                self.smoothed.len()
            ));
        }
        for (k, f) in self.filtered.iter().enumerate() {
            if f.t != k || f.m.len() != p || f.v.len() != p {
                return bad(format!("filtered state {k} is malformed"));
            }
            if f.v.iter().any(|v| !(*v > 0.0)) || !(f.a > 0.0 && f.b > 0.0) {
                return bad(format!("filtered state {k} has nonpositive variance parameters"));
            }
        }
        for (k, s) in self.smoothed.iter().enumerate() {
            if s.t != k + 1 || s.m.len() != p || s.v.len() != p {
                return bad(format!("smoothed state {} is malformed", k + 1));
            }
        }
        if self.debuts.iter().any(|&t| t == 0 || t > self.smoothed.len()) {
            return bad("debut period outside the model's periods".into());
        }
        let last = self.filtered.last().unwrap();
        if (last.a, last.b) != (self.a, self.b) {
            return bad("final variance parameters disagree with the last filtered state".into());
        }
        Ok(())
    }

    /// Rebuilds a model able to place, filter and smooth further periods.
    /// Its dataset holds empty periods, and per-period predictive summaries
    /// are not restored.
    pub fn into_model(self) -> Result<FittedModel> {
        self.check()?;
        let athletes = AthleteIndex::from_parts(self.athletes, self.debuts)?;
        let n_periods = self.smoothed.len();
        let data = Dataset {
            periods: (1..=n_periods).map(|index| RatingPeriod { index, games: Vec::new() }).collect(),
            athletes,
            options: self.config.dataset_options(),
            origin_key: self.origin_key,
            dropped_singletons: 0,
        };
        let states = self
            .filtered
            .into_iter()
            .map(|f| FilterState {
                t: f.t,
                m: DVector::from_vec(f.m),
                v: Covariance::Diagonal(DVector::from_vec(f.v)),
                a: f.a,
                b: f.b,
            })
            .collect();
        let smoothed = self
            .smoothed
            .into_iter()
            .map(|s| SmoothedState { t: s.t, m: DVector::from_vec(s.m), v: Covariance::Diagonal(DVector::from_vec(s.v)) })
            .collect();
        Ok(FittedModel {
            w: self.w,
            transform: self.transform,
            h: self.config.hyperparams.clone(),
            variant: self.config.prior,
            data,
            filter: FilterRun { w: self.w, states, predictive: Vec::new(), log_density: 0.0 },
            smoothed,
            diagnostics: self.diagnostics,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Parses and validates a model file.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self =
            serde_json::from_str(text).map_err(|e| Error::ModelFile(format!("cannot parse model: {e}")))?;
        file.check()?;
        Ok(file)
    }
}

pub fn save_model(model: &FittedModel, config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let text = ModelFile::from_model(model, config)?.to_json()?;
    fs::write(path, text)?;
    Ok(())
}

/// Loads and validates a model file, returning the stored configuration
/// alongside the model.
pub fn load_model(path: impl AsRef<Path>) -> Result<(FittedModel, RunConfig)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ModelFile(format!("cannot read {}: {e}", path.display())))?;
    let file = ModelFile::from_json(&text)?;
    let config = file.config.clone();
    Ok((file.into_model()?, config))
}

/// Ratings table sorted best first; ties keep athlete order.
pub fn write_ratings<W: Write>(
    ids: &[String],
    ratings: &[AbilitySummary],
    orientation: Orientation,
    out: W,
) -> Result<()> {
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    match orientation {
        Orientation::HigherIsBetter => order.sort_by(|&a, &b| ratings[b].mean.total_cmp(&ratings[a].mean)),
        Orientation::LowerIsBetter => order.sort_by(|&a, &b| ratings[a].mean.total_cmp(&ratings[b].mean)),
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["rank", "athlete_id", "mean", "sd", "scale", "lower", "upper"])?;
    for (rank, &i) in order.iter().enumerate() {
        let r = &ratings[i];
        wtr.write_record([
            (rank + 1).to_string(),
            ids[i].clone(),
            r.mean.to_string(),
            r.sd.map(|s| s.to_string()).unwrap_or_default(),
            r.scale.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row per athlete per predicted game.
pub fn write_predictions<W: Write>(preds: &[GamePrediction], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "period",
        "game_id",
        "athlete_id",
        "predicted_ability",
        "predicted_rank",
        "observed_rank",
        "unseen",
    ])?;
    for p in preds {
        for i in 0..p.n() {
            wtr.write_record([
                p.period.to_string(),
                p.game_id.clone(),
                p.athletes[i].clone(),
                p.abilities[i].to_string(),
                p.predicted_ranks[i].to_string(),
                p.observed_ranks[i].to_string(),
                p.unseen[i].to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_qq<W: Write>(pairs: &[(f64, f64)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["standardized_residual", "normal_quantile"])?;
    for (r, q) in pairs {
        wtr.write_record([r.to_string(), q.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// `(y, tau(y), dtau/dy)` at `points` evenly spaced values across the
/// transform's domain.
pub fn write_transform_curve<W: Write>(t: &TransformParams, points: usize, out: W) -> Result<()> {
    let (lo, hi) = t.knots.boundary();
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["y", "tau", "dtau_dy"])?;
    let n = points.max(2);
    for i in 0..n {
        let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        wtr.write_record([y.to_string(), t.transform(y).to_string(), t.jacobian(y).to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Optimizer trace as `iteration,log_posterior,log_w,log_lambda_1,...`.
pub fn write_trace<W: Write>(diag: &FitDiagnostics, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let dim = diag.trace.first().map(|r| r.x.len()).unwrap_or(0);
    let mut header = vec!["iteration".to_string(), "log_posterior".to_string()];
    header.extend((0..dim).map(|i| if i == 0 { "log_w".to_string() } else { format!("x{i}") }));
    wtr.write_record(&header)?;
    for row in &diag.trace {
        let mut rec = vec![row.iteration.to_string(), row.objective.to_string()];
        rec.extend(row.x.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
