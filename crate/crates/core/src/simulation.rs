//! Synthetic data from the model's own generative story, and a parameter
//! recovery harness built on it.
//!
//! Abilities follow a Gaussian random walk, games sample athletes uniformly
//! without replacement, and observed scores are the inverse Yeo-Johnson image
//! of game-centred abilities plus noise.

use chrono::{Duration, NaiveDate};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Hyperparams;
use crate::fitting::{fit_map, FitOptions, FittedModel};
use crate::preprocess::{Centering, Dataset, DatasetOptions, Mode, PeriodScheme, PreScale, RawResult};
use crate::spline::{quantile_sorted, KnotConfig};

/// Name of the generator behind every simulated draw.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seeded via seed_from_u64";

const MAX_RESAMPLES: usize = 100;

pub fn yeo_johnson(y: f64, lambda: f64) -> f64 {
    if lambda == 1.0 {
        // both branches reduce to y; skip the rounding of (y + 1) - 1
        return y;
    }
    if y >= 0.0 {
        if lambda == 0.0 {
            y.ln_1p()
        } else {
            ((y + 1.0).powf(lambda) - 1.0) / lambda
        }
    } else if lambda == 2.0 {
        -(-y).ln_1p()
    } else {
        let q = 2.0 - lambda;
        -((1.0 - y).powf(q) - 1.0) / q
    }
}

/// Exact inverse of [`yeo_johnson`]. Fails for values outside the map's
/// range, which is bounded on one side when `lambda < 0` or `lambda > 2`.
pub fn inverse_yeo_johnson(psi: f64, lambda: f64) -> Result<f64> {
    let err = || Error::InverseDomain { value: psi, lambda };
    if !psi.is_finite() || !lambda.is_finite() {
        return Err(err());
    }
    if lambda == 1.0 {
        return Ok(psi);
    }
    if psi >= 0.0 {
        if lambda == 0.0 {
            Ok(psi.exp_m1())
        } else {
            let base = lambda * psi + 1.0;
            if base <= 0.0 {
                return Err(err());
            }
            Ok(base.powf(1.0 / lambda) - 1.0)
        }
    } else if lambda == 2.0 {
        Ok(-(-psi).exp_m1())
    } else {
        let q = 2.0 - lambda;
        let base = 1.0 - q * psi;
        if base <= 0.0 {
            return Err(err());
        }
        Ok(1.0 - base.powf(1.0 / q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub periods: usize,
    pub players_per_game: usize,
    pub games_per_period: usize,
    pub v0: f64,
    pub sigma2: f64,
    pub w: f64,
    pub yj_lambda: f64,
    pub seed: u64,
    /// Whether the simulated dataset subtracts game means before fitting.
    /// The generator's scores are already centred in expectation.
    pub centering: Centering,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            p: 100,
            periods: 20,
            players_per_game: 10,
            games_per_period: 25,
            v0: 10.0,
            sigma2: 100.0,
            w: 0.5,
            yj_lambda: 1.0,
            seed: 0,
            centering: Centering::None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.players_per_game < 2 || self.players_per_game > self.p {
            return Err(Error::Config(format!(
                "need 2 <= players per game ({}) <= athletes ({})",
                self.players_per_game, self.p
            )));
        }
        if self.periods == 0 || self.games_per_period == 0 {
            return Err(Error::Config("need at least one period and one game per period".into()));
        }
        if self.games_per_period > 365 {
            return Err(Error::Config("at most 365 games per period (one per day)".into()));
        }
        for (name, v) in [("v0", self.v0), ("sigma2", self.sigma2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.w >= 0.0 && self.w.is_finite()) || !self.yj_lambda.is_finite() {
            return Err(Error::Config("w must be nonnegative and lambda finite".into()));
        }
        Ok(())
    }

    pub fn athlete_id(i: usize) -> String {
        format!("A{i:03}")
    }
}

/// Generating values behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `theta[t][i]` for period `t` (0-based) and generator athlete `i`,
    /// whose id is [`SimConfig::athlete_id`].
    pub theta: Vec<Vec<f64>>,
    /// Untransformed scores in the row order of `results`.
    pub psi: Vec<f64>,
    /// Games whose noise had to be redrawn because the inverse map failed.
    pub resampled_games: usize,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: SimConfig,
    pub results: Vec<RawResult>,
    pub truth: GroundTruth,
}

impl Simulation {
    pub fn dataset(&self) -> Result<Dataset> {
        let options = DatasetOptions {
            mode: Mode::MultiCompetitor,
            scheme: PeriodScheme::Annual,
            pre_scale: PreScale::None,
            centering: self.config.centering,
        };
        Dataset::build(&self.results, options)
    }
}

fn period_start(t: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2000 + t as i32, 1, 1).expect("valid year")
}

pub fn simulate_dataset(cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigma = cfg.sigma2.sqrt();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let mut theta = Vec::with_capacity(cfg.periods);
    let first: Vec<f64> = (0..cfg.p).map(|_| sigma * cfg.v0.sqrt() * normal(&mut rng)).collect();
    theta.push(first);
    for t in 1..cfg.periods {
        let step = sigma * cfg.w.sqrt();
        let next: Vec<f64> = theta[t - 1].iter().map(|th| th + step * normal(&mut rng)).collect();
        theta.push(next);
    }

    let n = cfg.players_per_game;
    let mut results = Vec::with_capacity(cfg.periods * cfg.games_per_period * n);
    let mut psi_all = Vec::with_capacity(results.capacity());
    let mut resampled = 0;
    for (t, th) in theta.iter().enumerate() {
        for g in 0..cfg.games_per_period {
            let players = sample(&mut rng, cfg.p, n).into_vec();
            let mean = players.iter().map(|&i| th[i]).sum::<f64>() / n as f64;
            let mut attempt = 0;
            let (psi, y) = loop {
                let psi: Vec<f64> = players.iter().map(|&i| th[i] - mean + sigma * normal(&mut rng)).collect();
                let y: Result<Vec<f64>> = psi.iter().map(|&v| inverse_yeo_johnson(v, cfg.yj_lambda)).collect();
                match y {
                    Ok(y) => break (psi, y),
                    Err(e) => {
                        attempt += 1;
                        if attempt >= MAX_RESAMPLES {
                            return Err(e);
                        }
                    }
                }
            };
            if attempt > 0 {
                resampled += 1;
            }
            let date = period_start(t) + Duration::days(g as i64);
            for ((&i, &score), &v) in players.iter().zip(&y).zip(&psi) {
                results.push(RawResult {
                    date,
                    game_id: format!("t{:02}g{:03}", t + 1, g + 1),
                    athlete_id: SimConfig::athlete_id(i),
                    score,
                });
                psi_all.push(v);
            }
        }
    }
    if resampled > 0 {
        log::warn!("{resampled} simulated games redrawn after inverse-transform domain failures");
    }
    Ok(Simulation {
        config: cfg.clone(),
        results,
        truth: GroundTruth { theta, psi: psi_all, resampled_games: resampled },
    })
}

/// Least-squares fit `tau(y) ~ alpha + beta * yeo_johnson(y, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YjProjection {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Root mean squared residual of the fit.
    pub rmse: f64,
}

fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let beta = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let alpha = my - beta * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - alpha - beta * a).powi(2)).sum();
    (alpha, beta, sse)
}

/// Projects a monotone map, sampled as `(y, tau(y))` pairs, onto the
/// Yeo-Johnson family up to an affine change of scale. The profile sum of
/// squares over `lambda` is scanned on a 0.01 grid in `[-1, 3]` and refined
/// by golden-section search around the best grid point.
pub fn project_yeo_johnson(ys: &[f64], taus: &[f64]) -> Result<YjProjection> {
    if ys.len() != taus.len() || ys.len() < 3 {
        return Err(Error::Data("need at least three matched points to project".into()));
    }
    let sse = |lambda: f64| {
        let x: Vec<f64> = ys.iter().map(|&y| yeo_johnson(y, lambda)).collect();
        affine_fit(&x, taus).2
    };
    let (mut best, mut best_sse) = (0.0, f64::INFINITY);
    for k in 0..=400 {
        let l = -1.0 + 0.01 * k as f64;
        let s = sse(l);
        if s < best_sse {
            best = l;
            best_sse = s;
        }
    }
    let (mut a, mut b) = (best - 0.01, best + 0.01);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    while b - a > 1e-7 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sse(d);
        }
    }
    let lambda = 0.5 * (a + b);
    let x: Vec<f64> = ys.iter().map(|&y| yeo_johnson(y, lambda)).collect();
    let (alpha, beta, s) = affine_fit(&x, taus);
    Ok(YjProjection { lambda, alpha, beta, rmse: (s / ys.len() as f64).sqrt() })
}

/// Points used to compare a learned transform with the Yeo-Johnson family:
/// 512 empirical quantiles of the observed scores, so the comparison weighs
/// the transform where data actually lie.
pub fn projection_grid(observations: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = observations.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    (0..crate::spline::IDENTITY_GRID)
        .map(|i| quantile_sorted(&sorted, (i as f64 + 0.5) / crate::spline::IDENTITY_GRID as f64))
        .collect()
}

/// Projects a fitted model's transform onto the Yeo-Johnson family.
pub fn project_model(model: &FittedModel) -> Result<YjProjection> {
    let ys = projection_grid(&model.data.observations());
    let taus: Vec<f64> = ys.iter().map(|&y| model.transform.transform(y)).collect();
    project_yeo_johnson(&ys, &taus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCell {
    pub players_per_game: usize,
    pub games_per_period: usize,
    pub yj_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub seed: u64,
    pub w_hat: Option<f64>,
    /// `sqrt(b_T / (a_T - 1))` on the learned transform's scale.
    pub sigma_hat_raw: Option<f64>,
    /// `sigma_hat_raw` divided by the projection slope, i.e. in the units
    /// of the generating Yeo-Johnson scale.
    pub sigma_hat: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub lambda_error: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: RecoveryCell,
    pub replications: Vec<ReplicationResult>,
    pub failures: usize,
    pub median_lambda_error: f64,
    pub iqr_lambda_error: f64,
    pub mean_w: f64,
    pub mean_sigma: f64,
}

/// Options for fitting each simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub n_interior: usize,
    pub degree: usize,
    pub fit: FitOptions,
    pub h: Hyperparams,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        // all periods inform (w, lambda): recovery is about the estimates,
        // not held-out prediction
        let fit = FitOptions { train_fraction: 1.0, ..FitOptions::default() };
        Self { n_interior: 3, degree: 3, fit, h: Hyperparams::default() }
    }
}

/// Simulates and fits one dataset.
pub fn run_replication(cfg: &SimConfig, opts: &RecoveryOptions) -> ReplicationResult {
    let fail = |e: Error| ReplicationResult {
        seed: cfg.seed,
        w_hat: None,
        sigma_hat_raw: None,
        sigma_hat: None,
        lambda_hat: None,
        lambda_error: None,
        converged: false,
        error: Some(e.to_string()),
    };
    let sim = match simulate_dataset(cfg) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let fitted = sim.dataset().and_then(|d| {
        let knots = KnotConfig::from_values(&d.observations(), opts.n_interior, opts.degree)?;
        fit_map(&d, knots, opts.h.clone(), &opts.fit)
    });
    let model = match fitted {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let proj = match project_model(&model) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let raw = model.sigma_hat();
    ReplicationResult {
        seed: cfg.seed,
        w_hat: Some(model.w),
        sigma_hat_raw: raw,
        sigma_hat: raw.map(|s| s / proj.beta),
        lambda_hat: Some(proj.lambda),
        lambda_error: Some((proj.lambda - cfg.yj_lambda).abs()),
        converged: model.diagnostics.converged,
        error: None,
    }
}

fn median_iqr(mut v: Vec<f64>) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&v, p);
    (q(0.5), q(0.75) - q(0.25))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
}

/// Runs `replications` simulate-and-fit rounds per cell. Replication `r`
/// uses seed `base.seed + r`; cells share seeds so they differ only in
/// their design. Failed fits are recorded, not fatal.
pub fn recovery_experiment(
    base: &SimConfig,
    cells: &[RecoveryCell],
    replications: usize,
    opts: &RecoveryOptions,
) -> Result<Vec<CellSummary>> {
    if cells.is_empty() || replications == 0 {
        return Err(Error::Config("recovery needs at least one cell and one replication".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..replications as u64).map(move |r| (c, r)))
        .collect();
    let results: Vec<(usize, ReplicationResult)> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let cell = cells[c];
            let cfg = SimConfig {
                players_per_game: cell.players_per_game,
                games_per_period: cell.games_per_period,
                yj_lambda: cell.yj_lambda,
                seed: base.seed + r,
                ..base.clone()
            };
            (c, run_replication(&cfg, opts))
        })
        .collect();

    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &cell)| {
            let reps: Vec<ReplicationResult> =
                results.iter().filter(|(k, _)| *k == c).map(|(_, r)| r.clone()).collect();
            let failures = reps.iter().filter(|r| r.error.is_some()).count();
            let errs: Vec<f64> = reps.iter().filter_map(|r| r.lambda_error).collect();
            let ws: Vec<f64> = reps.iter().filter_map(|r| r.w_hat).collect();
            let sig: Vec<f64> = reps.iter().filter_map(|r| r.sigma_hat).collect();
            let (median_lambda_error, iqr_lambda_error) = median_iqr(errs);
            CellSummary {
                cell,
                replications: reps,
                failures,
                median_lambda_error,
                iqr_lambda_error,
                mean_w: mean(&ws),
                mean_sigma: mean(&sig),
            }
        })
        .collect())
}

/// Writes one CSV row per replication.
pub fn write_recovery_csv<W: std::io::Write>(summaries: &[CellSummary], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "players_per_game",
        "games_per_period",
        "yj_lambda",
        "seed",
        "w_hat",
        "sigma_hat",
        "sigma_hat_raw",
        "lambda_hat",
        "lambda_error",
        "converged",
        "error",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in summaries {
        for r in &s.replications {
            wtr.write_record([
                s.cell.players_per_game.to_string(),
                s.cell.games_per_period.to_string(),
                s.cell.yj_lambda.to_string(),
                r.seed.to_string(),
                opt(r.w_hat),
                opt(r.sigma_hat),
                opt(r.sigma_hat_raw),
                opt(r.lambda_hat),
                opt(r.lambda_error),
                r.converged.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    #[test]
    fn yeo_johnson_reference_values() {
        for y in [-50.0, -1.0, 0.0, 0.3, 50.0] {
            assert_eq!(yeo_johnson(y, 1.0), y);
        }
        assert_relative_eq!(yeo_johnson(std::f64::consts::E - 1.0, 0.0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(yeo_johnson(-(std::f64::consts::E - 1.0), 2.0), -1.0, max_relative = 1e-15);
        // hand value: ((3)^0.5 - 1) / 0.5 for y = 2
        assert_relative_eq!(yeo_johnson(2.0, 0.5), 2.0 * (3f64.sqrt() - 1.0), max_relative = 1e-15);
    }

    #[test]
    fn yeo_johnson_round_trip() {
        for lam in [0.0, 0.7, 1.0, 1.3, 2.0, -0.5, 2.5] {
            for y in [-50.0, -3.0, 0.0, 1e-3, 50.0] {
                let back = inverse_yeo_johnson(yeo_johnson(y, lam), lam).unwrap();
                assert!((back - y).abs() <= 1e-10 * y.abs().max(1.0), "lam {lam} y {y}: {back}");
            }
        }
    }

    #[test]
    fn inverse_domain() {
        // lambda < 0 bounds the positive branch at -1/lambda
        assert!(matches!(inverse_yeo_johnson(3.0, -0.5), Err(Error::InverseDomain { .. })));
        assert!(inverse_yeo_johnson(1.9, -0.5).is_ok());
        // lambda > 2 bounds the negative branch at -1/(lambda - 2)
        assert!(inverse_yeo_johnson(-3.0, 2.5).is_err());
        assert!(inverse_yeo_johnson(f64::NAN, 1.0).is_err());
    }

    fn small(seed: u64) -> SimConfig {
        SimConfig { p: 20, periods: 4, players_per_game: 5, games_per_period: 6, seed, ..SimConfig::default() }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_dataset(&small(3)).unwrap();
        let b = simulate_dataset(&small(3)).unwrap();
        assert_eq!(a.results, b.results);
        assert_eq!(a.truth, b.truth);
        let c = simulate_dataset(&small(4)).unwrap();
        assert_ne!(a.results, c.results);
    }

    #[test]
    fn identity_lambda_leaves_scores() {
        let s = simulate_dataset(&small(1)).unwrap();
        for (r, psi) in s.results.iter().zip(&s.truth.psi) {
            assert_eq!(r.score, *psi);
        }
    }

    #[test]
    fn frozen_abilities_without_innovation() {
        let s = simulate_dataset(&SimConfig { w: 0.0, ..small(2) }).unwrap();
        for t in 1..s.truth.theta.len() {
            assert_eq!(s.truth.theta[t], s.truth.theta[0]);
        }
    }

    #[test]
    fn games_are_well_formed() {
        let s = simulate_dataset(&small(5)).unwrap();
        let mut games: HashMap<&str, Vec<&RawResult>> = HashMap::new();
        for r in &s.results {
            games.entry(&r.game_id).or_default().push(r);
        }
        assert_eq!(games.len(), 4 * 6);
        for rows in games.values() {
            assert_eq!(rows.len(), 5);
            let mut ids: Vec<&str> = rows.iter().map(|r| r.athlete_id.as_str()).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 5);
        }
        let d = s.dataset().unwrap();
        assert_eq!(d.n_periods(), 4);
        assert_eq!(d.n_obs(), 120);
    }

    #[test]
    fn scores_decompose_into_centred_ability_and_noise() {
        let cfg = small(6);
        let s = simulate_dataset(&cfg).unwrap();
        let mut noise = Vec::new();
        for (k, game) in s.results.chunks(5).enumerate() {
            let t = k / cfg.games_per_period;
            let th: Vec<f64> = game
                .iter()
                .map(|r| s.truth.theta[t][r.athlete_id[1..].parse::<usize>().unwrap()])
                .collect();
            let mean = th.iter().sum::<f64>() / 5.0;
            let centred: Vec<f64> = th.iter().map(|v| v - mean).collect();
            let scale: f64 = th.iter().map(|v| v.abs()).sum();
            assert!(centred.iter().sum::<f64>().abs() <= 1e-12 * scale);
            for (c, psi) in centred.iter().zip(&s.truth.psi[5 * k..5 * k + 5]) {
                noise.push(psi - c);
            }
        }
        let var = noise.iter().map(|e| e * e).sum::<f64>() / noise.len() as f64;
        // 120 draws of N(0, 100): variance estimate within a wide band
        assert!(var > 60.0 && var < 150.0, "{var}");
    }

    #[test]
    fn projection_recovers_yeo_johnson_shapes() {
        let ys: Vec<f64> = (0..200).map(|i| -60.0 + 0.6 * i as f64).collect();
        for lam in [0.7, 1.0, 1.3] {
            let taus: Vec<f64> = ys.iter().map(|&y| 3.0 + 0.5 * yeo_johnson(y, lam)).collect();
            let p = project_yeo_johnson(&ys, &taus).unwrap();
            assert!((p.lambda - lam).abs() < 1e-5, "{lam}: {}", p.lambda);
            assert_relative_eq!(p.beta, 0.5, max_relative = 1e-4);
            assert_relative_eq!(p.alpha, 3.0, max_relative = 1e-4);
        }
    }

    #[test]
    fn summary_statistics() {
        let (m, iqr) = median_iqr(vec![4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((m, iqr), (3.0, 2.0));
    }
}
