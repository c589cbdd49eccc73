//! Two-step fitting: MAP of `(w, lambda)` on a training prefix, then a
//! filter and smoother pass over the full data at the fitted values.

use serde::{Deserialize, Serialize};

use super::objective::{ObjectiveSpec, ObjectiveTerms, PriorVariant};
use super::optim::{nelder_mead, NelderMeadOptions, OptimResult};
use crate::error::{Error, Result};
use crate::filter::{
    posterior_summary, rts_smooth, run_filter, AbilitySummary, FilterRun, Hyperparams,
    SmoothedState,
};
use crate::preprocess::{layout_for, AthleteIndex, Dataset, RatingPeriod, RawResult};
use crate::spline::{KnotConfig, TransformParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fraction of periods used for learning `(w, lambda)` when `t_train`
    /// is unset; rounded down, at least one.
    pub train_fraction: f64,
    pub t_train: Option<usize>,
    pub variant: PriorVariant,
    pub optimizer: NelderMeadOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            train_fraction: 2.0 / 3.0,
            t_train: None,
            variant: PriorVariant::TruncatedNormal,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

impl FitOptions {
    pub fn training_periods(&self, total: usize) -> Result<usize> {
        let t = match self.t_train {
            Some(t) => t,
            None => {
                if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "training fraction {} outside (0, 1]",
                        self.train_fraction
                    )));
                }
                ((self.train_fraction * total as f64 + 1e-9).floor() as usize).max(1)
            }
        };
        if t == 0 || t > total {
            return Err(Error::Config(format!("training prefix {t} outside 1..={total}")));
        }
        Ok(t)
    }
}

/// Observations falling outside the transform's domain, mapped to the
/// nearest boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClampCounts {
    pub below: usize,
    pub above: usize,
}

impl ClampCounts {
    pub fn total(&self) -> usize {
        self.below + self.above
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub t_train: usize,
    /// Log marginal posterior at the optimum (unnormalized).
    pub objective: f64,
    pub log_jacobian: f64,
    pub log_likelihood: f64,
    pub floored_jacobians: usize,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Best point per iteration in search coordinates, with the objective
    /// negated back to the log posterior.
    pub trace: Vec<super::optim::TraceRow>,
    pub clamped: ClampCounts,
}

/// Fitted transform, innovation ratio and full-data trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub w: f64,
    pub transform: TransformParams,
    pub h: Hyperparams,
    pub variant: PriorVariant,
    /// The data the trajectories cover. A model restored from disk carries
    /// empty periods here: enough to place new results in time.
    pub data: Dataset,
    pub filter: FilterRun,
    pub smoothed: Vec<SmoothedState>,
    pub diagnostics: FitDiagnostics,
}

/// Applies the transform to every observation, clamping to its domain.
pub fn transform_observations(transform: &TransformParams, obs: &[f64]) -> (Vec<f64>, ClampCounts) {
    let (lo, hi) = transform.knots.boundary();
    let mut counts = ClampCounts::default();
    let psi = obs
        .iter()
        .map(|&y| {
            if y < lo {
                counts.below += 1;
            } else if y > hi {
                counts.above += 1;
            }
            transform.transform(y)
        })
        .collect();
    (psi, counts)
}

fn full_pass(
    data: &Dataset,
    transform: &TransformParams,
    w: f64,
    h: &Hyperparams,
) -> Result<(FilterRun, Vec<SmoothedState>, ClampCounts)> {
    let (psi, clamped) = transform_observations(transform, &data.observations());
    if clamped.total() > 0 {
        log::warn!(
            "{} observations outside the transform domain were clamped ({} below, {} above)",
            clamped.total(),
            clamped.below,
            clamped.above
        );
    }
    let run = run_filter(&data.layout(), &psi, w, h)?;
    let smoothed = rts_smooth(&run, w)?;
    Ok((run, smoothed, clamped))
}

/// Fits the model: maximizes the marginal posterior of `(w, lambda)` over
/// the training prefix, searching over `(log w, log lambda)` from
/// `w = 0.1 s_w` and the identity transform, then filters and smooths the
/// full data at the optimum.
///
/// Hitting the iteration cap is not an error; the best point found is used
/// and `diagnostics.converged` is false.
pub fn fit_map(
    data: &Dataset,
    knots: KnotConfig,
    h: Hyperparams,
    opts: &FitOptions,
) -> Result<FittedModel> {
    if data.n_periods() == 0 {
        return Err(Error::Data("no rating periods to fit".into()));
    }
    let t_train = opts.training_periods(data.n_periods())?;
    let spec = ObjectiveSpec::new(data, t_train, knots, h.clone(), opts.variant)?;
    let floor = 1e-8 * spec.range_c;
    let start: Vec<f64> = spec.identity.iter().map(|l| l.max(floor)).collect();
    let x0 = spec.pack(0.1 * h.s_w, &start);

    let mut neg = |x: &[f64]| {
        let (w, lambda) = spec.unpack(x);
        -spec.log_marginal_posterior(w, &lambda)
    };
    let result: OptimResult = nelder_mead(&mut neg, &x0, &opts.optimizer)?;
    if !result.converged {
        log::warn!(
            "optimizer stopped after {} iterations without meeting its tolerances; using the best point found",
            result.iterations
        );
    }
    let (w, lambda) = spec.unpack(&result.x);
    let terms: ObjectiveTerms = spec.terms(w, &lambda)?;
    let transform = spec.transform_params(lambda)?;
    let (filter, smoothed, clamped) = full_pass(data, &transform, w, &h)?;

    let trace = result
        .trace
        .iter()
        .map(|r| super::optim::TraceRow { iteration: r.iteration, objective: -r.objective, x: r.x.clone() })
        .collect();
    let diagnostics = FitDiagnostics {
        t_train,
        objective: terms.total(),
        log_jacobian: terms.log_jacobian,
        log_likelihood: terms.log_likelihood,
        floored_jacobians: terms.floored,
        converged: result.converged,
        iterations: result.iterations,
        evaluations: result.evaluations,
        trace,
        clamped,
    };
    Ok(FittedModel { w, transform, h, variant: opts.variant, data: data.clone(), filter, smoothed, diagnostics })
}

/// Runs the full-data pass with given `(w, transform)` and no search.
pub fn fit_fixed(data: &Dataset, transform: TransformParams, w: f64, h: Hyperparams) -> Result<FittedModel> {
    h.validate()?;
    transform.validate()?;
    let (filter, smoothed, clamped) = full_pass(data, &transform, w, &h)?;
    let diagnostics = FitDiagnostics { converged: true, clamped, ..Default::default() };
    Ok(FittedModel {
        w,
        transform,
        h,
        variant: PriorVariant::default(),
        data: data.clone(),
        filter,
        smoothed,
        diagnostics,
    })
}

/// Filters further periods at the model's fitted `(w, lambda)` and refreshes
/// the smoothed trajectory. `periods` must continue the model's period
/// sequence; `athletes` is the model's index extended with any newcomers,
/// as produced by [`Dataset::periods_for`].
pub fn fast_update(
    model: &FittedModel,
    periods: Vec<RatingPeriod>,
    athletes: AthleteIndex,
) -> Result<FittedModel> {
    let mut next = model.clone();
    let last = model.data.n_periods();
    for (k, p) in periods.iter().enumerate() {
        if p.index != last + k + 1 {
            return Err(Error::OutOfOrder { got: p.index, last: last + k });
        }
    }
    if athletes.len() < model.data.n_athletes() {
        return Err(Error::Data("athlete index shrank during update".into()));
    }
    let layout = layout_for(&periods, athletes.len(), 0);
    let obs: Vec<f64> = periods
        .iter()
        .flat_map(|p| p.games.iter())
        .flat_map(|g| g.observations().iter().copied())
        .collect();
    let (psi, clamped) = transform_observations(&model.transform, &obs);
    if clamped.total() > 0 {
        log::warn!("{} new observations clamped to the transform domain", clamped.total());
    }
    next.filter.extend(&layout, &psi, &model.h)?;
    next.smoothed = rts_smooth(&next.filter, model.w)?;
    next.data.extend(periods, athletes)?;
    next.diagnostics.clamped.below += clamped.below;
    next.diagnostics.clamped.above += clamped.above;
    Ok(next)
}

impl FittedModel {
    pub fn n_periods(&self) -> usize {
        self.filter.n_periods()
    }

    /// Shape and rate of the final inverse-gamma posterior on `sigma^2`.
    pub fn sigma2_posterior(&self) -> (f64, f64) {
        let s = self.filter.last();
        (s.a, s.b)
    }

    /// Posterior mean of `sigma`, approximated as `sqrt(E[sigma^2])`;
    /// `None` when `a <= 1`.
    pub fn sigma_hat(&self) -> Option<f64> {
        let (a, b) = self.sigma2_posterior();
        (a > 1.0).then(|| (b / (a - 1.0)).sqrt())
    }

    /// Places new results in time and filters them in.
    pub fn update_with_results(&self, results: &[RawResult]) -> Result<FittedModel> {
        let (periods, athletes) = self.data.periods_for(results)?;
        fast_update(self, periods, athletes)
    }

    /// Per-athlete ability marginals at period `t` (1-based; 0 is the
    /// prior), from the smoothed or filtered trajectory. Variances use the
    /// final `(a_T, b_T)` for smoothed states and `(a_t, b_t)` for filtered.
    pub fn ratings(&self, t: usize, smoothed: bool, credible_mass: f64) -> Result<Vec<AbilitySummary>> {
        if t > self.n_periods() {
            return Err(Error::Config(format!("period {t} beyond the last period {}", self.n_periods())));
        }
        if smoothed && t >= 1 {
            let s = &self.smoothed[t - 1];
            let (a, b) = self.sigma2_posterior();
            posterior_summary(&s.m, &s.v.diagonal(), a, b, credible_mass)
        } else {
            let s = &self.filter.states[t];
            posterior_summary(&s.m, &s.v.diagonal(), s.a, s.b, credible_mass)
        }
    }
}
