use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scoredlm::evaluation::{evaluate, predict_games, qq_pairs, Orientation};
use scoredlm::fitting::{fit_fixed, fit_map, FittedModel};
use scoredlm::io::{
    load_model, load_results_csv, save_model, write_predictions, write_qq, write_ratings,
    write_results, write_trace, write_transform_curve, RunConfig,
};
use scoredlm::preprocess::{Dataset, Mode, PeriodScheme};
use scoredlm::simulation::{simulate_dataset, SimConfig, RNG_ALGORITHM};
use scoredlm::spline::{KnotConfig, IDENTITY_GRID};
use scoredlm::Error;

const EXIT_DATA: u8 = 2;
const EXIT_FIT_WARNING: u8 = 3;
const EXIT_INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "scoredlm", version, about = "Dynamic athlete ratings from continuous scores")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the transform and drift ratio, then rate every period.
    Fit(FitArgs),
    /// Filter new results into a saved model without refitting.
    Update(UpdateArgs),
    /// Print ratings at one period.
    Rate(RateArgs),
    /// One-step predictions for each game.
    Predict(PredictArgs),
    /// Rank correlation, win accuracy and residual diagnostics.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with known abilities.
    Simulate(SimulateArgs),
    /// Tabulate the learned transform and its derivative.
    TransformInspect(InspectArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["multi_competitor", "head_to_head"])]
    mode: Option<String>,
    /// annual, biannual, quarterly, bimonthly, monthly, or breakpoint dates.
    #[arg(long)]
    period_scheme: Option<String>,
    #[arg(long, value_parser = ["higher_is_better", "lower_is_better"])]
    orientation: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    n_interior: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = &self.mode {
            cfg.mode = parse_mode(m)?;
        }
        if let Some(s) = &self.period_scheme {
            cfg.period_scheme = PeriodScheme::parse(s)?;
        }
        if let Some(o) = &self.orientation {
            cfg.orientation = Orientation::parse(o)?;
        }
        if let Some(f) = self.train_fraction {
            cfg.train_fraction = f;
        }
        if let Some(n) = self.n_interior {
            cfg.n_interior = n;
        }
        if let Some(d) = self.degree {
            cfg.degree = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_mode(s: &str) -> scoredlm::Result<Mode> {
    match s {
        "multi_competitor" => Ok(Mode::MultiCompetitor),
        "head_to_head" => Ok(Mode::HeadToHead),
        other => Err(Error::Config(format!("unknown mode '{other}'"))),
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Fit summary as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Optimizer trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct UpdateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Results dated after the model's last period.
    #[arg(long)]
    data: PathBuf,
    /// Expected mode of the new data; must match the model.
    #[arg(long, value_parser = ["multi_competitor", "head_to_head"])]
    mode: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Period to report (1-based); defaults to the last.
    #[arg(long)]
    period: Option<usize>,
    /// Use the smoothed rather than the filtered posterior.
    #[arg(long)]
    smoothed: bool,
    /// Central credible interval mass.
    #[arg(long, default_value_t = 0.9)]
    mass: f64,
    #[arg(long, value_parser = ["higher_is_better", "lower_is_better"])]
    orientation: Option<String>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Results covering the model's periods and possibly later ones.
    #[arg(long)]
    data: PathBuf,
    /// First predicted period; defaults to the first after training.
    #[arg(long)]
    from: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    from: Option<usize>,
    /// Metrics JSON.
    #[arg(long)]
    out: PathBuf,
    /// Q-Q table of standardized residuals.
    #[arg(long)]
    qq: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    athletes: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    players_per_game: Option<usize>,
    #[arg(long)]
    games_per_period: Option<usize>,
    /// Yeo-Johnson parameter of the generating transform.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth abilities and untransformed scores as JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = IDENTITY_GRID)]
    points: usize,
    #[arg(long)]
    out: PathBuf,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FitReport<'a> {
    n_periods: usize,
    n_athletes: usize,
    n_observations: usize,
    dropped_singleton_games: usize,
    w: f64,
    lambda0: f64,
    lambda: &'a [f64],
    sigma2_shape: f64,
    sigma2_rate: f64,
    sigma_hat: Option<f64>,
    t_train: usize,
    objective: f64,
    converged: bool,
    iterations: usize,
    evaluations: usize,
    floored_jacobians: usize,
    clamped_below: usize,
    clamped_above: usize,
}

fn fit_report(m: &FittedModel) -> FitReport<'_> {
    let (a, b) = m.sigma2_posterior();
    let d = &m.diagnostics;
    FitReport {
        n_periods: m.n_periods(),
        n_athletes: m.data.n_athletes(),
        n_observations: m.data.n_obs(),
        dropped_singleton_games: m.data.dropped_singletons,
        w: m.w,
        lambda0: m.transform.lambda0,
        lambda: &m.transform.lambda,
        sigma2_shape: a,
        sigma2_rate: b,
        sigma_hat: m.sigma_hat(),
        t_train: d.t_train,
        objective: d.objective,
        converged: d.converged,
        iterations: d.iterations,
        evaluations: d.evaluations,
        floored_jacobians: d.floored_jacobians,
        clamped_below: d.clamped.below,
        clamped_above: d.clamped.above,
    }
}

/// Outcome of a subcommand that finished: success or a fit warning.
enum Done {
    Ok,
    FitWarning,
}

fn run_fit(args: &FitArgs) -> anyhow::Result<Done> {
    let cfg = args.cfg.resolve()?;
    let results = load_results_csv(&args.data)?;
    let data = Dataset::build(&results, cfg.dataset_options())?;
    let fit = cfg.fit_options();
    let t_train = fit.training_periods(data.n_periods())?;
    let knots = KnotConfig::from_values(&data.prefix(t_train).observations(), cfg.n_interior, cfg.degree)?;
    let model = fit_map(&data, knots, cfg.hyperparams.clone(), &fit)?;
    save_model(&model, &cfg, &args.out)?;
    if let Some(path) = &args.report {
        write_json(&fit_report(&model), path)?;
    }
    if let Some(path) = &args.trace {
        let mut out = create(path)?;
        write_trace(&model.diagnostics, &mut out)?;
    }
    log::info!("fitted w = {:.6} over {} periods", model.w, model.n_periods());
    Ok(if model.diagnostics.converged { Done::Ok } else { Done::FitWarning })
}

fn run_update(args: &UpdateArgs) -> anyhow::Result<Done> {
    let (model, cfg) = load_model(&args.model)?;
    if let Some(m) = &args.mode {
        let requested = parse_mode(m)?;
        if requested != model.data.mode() {
            return Err(Error::ModeMismatch { model: model.data.mode().to_string(), data: requested.to_string() }.into());
        }
    }
    let results = load_results_csv(&args.data)?;
    let updated = model.update_with_results(&results)?;
    save_model(&updated, &cfg, &args.out)?;
    log::info!("model now covers {} periods", updated.n_periods());
    Ok(Done::Ok)
}

fn run_rate(args: &RateArgs) -> anyhow::Result<Done> {
    let (model, cfg) = load_model(&args.model)?;
    let t = args.period.unwrap_or(model.n_periods());
    if args.smoothed && t == 0 {
        return Err(Error::Config("smoothed ratings start at period 1".into()).into());
    }
    let ratings = model.ratings(t, args.smoothed, args.mass)?;
    let orientation = match &args.orientation {
        Some(o) => Orientation::parse(o)?,
        None => cfg.orientation,
    };
    let ids = model.data.athletes.ids();
    match &args.out {
        Some(path) => write_ratings(ids, &ratings, orientation, create(path)?)?,
        None => write_ratings(ids, &ratings, orientation, io::stdout().lock())?,
    }
    Ok(Done::Ok)
}

/// Reruns the fitted model over data that covers its periods, restoring
/// game-level detail and predictive summaries.
fn replay(model_path: &Path, data_path: &Path) -> anyhow::Result<(FittedModel, RunConfig)> {
    let (model, cfg) = load_model(model_path)?;
    let results = load_results_csv(data_path)?;
    let data = Dataset::build(&results, cfg.dataset_options())?;
    if data.origin_key != model.data.origin_key || data.n_periods() < model.n_periods() {
        return Err(anyhow!(
            "data must start in the model's first period and cover its {} periods",
            model.n_periods()
        ));
    }
    let mut replayed = fit_fixed(&data, model.transform.clone(), model.w, model.h.clone())?;
    replayed.diagnostics.t_train = model.diagnostics.t_train;
    Ok((replayed, cfg))
}

fn first_test_period(model: &FittedModel, from: Option<usize>) -> usize {
    from.unwrap_or(model.diagnostics.t_train + 1).clamp(1, model.n_periods().max(1))
}

fn run_predict(args: &PredictArgs) -> anyhow::Result<Done> {
    let (model, cfg) = replay(&args.model, &args.data)?;
    let preds = predict_games(&model, first_test_period(&model, args.from), cfg.orientation)?;
    write_predictions(&preds, create(&args.out)?)?;
    Ok(Done::Ok)
}

fn run_evaluate(args: &EvaluateArgs) -> anyhow::Result<Done> {
    let (model, cfg) = replay(&args.model, &args.data)?;
    let (report, _, resid) = evaluate(&model, first_test_period(&model, args.from), cfg.orientation)?;
    write_json(&report, &args.out)?;
    if let Some(path) = &args.qq {
        write_qq(&qq_pairs(&resid), create(path)?)?;
    }
    Ok(Done::Ok)
}

#[derive(Serialize)]
struct TruthFile<'a> {
    rng: &'a str,
    config: &'a SimConfig,
    athletes: Vec<String>,
    theta: &'a [Vec<f64>],
    psi: &'a [f64],
    resampled_games: usize,
}

fn run_simulate(args: &SimulateArgs) -> anyhow::Result<Done> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SimConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SimConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.athletes {
        cfg.p = v;
    }
    if let Some(v) = args.periods {
        cfg.periods = v;
    }
    if let Some(v) = args.players_per_game {
        cfg.players_per_game = v;
    }
    if let Some(v) = args.games_per_period {
        cfg.games_per_period = v;
    }
    if let Some(v) = args.lambda {
        cfg.yj_lambda = v;
    }
    if let Some(v) = args.w {
        cfg.w = v;
    }
    let sim = simulate_dataset(&cfg)?;
    write_results(&sim.results, create(&args.out)?)?;
    if let Some(path) = &args.truth {
        let truth = TruthFile {
            rng: RNG_ALGORITHM,
            config: &cfg,
            athletes: (0..cfg.p).map(SimConfig::athlete_id).collect(),
            theta: &sim.truth.theta,
            psi: &sim.truth.psi,
            resampled_games: sim.truth.resampled_games,
        };
        write_json(&truth, path)?;
    }
    Ok(Done::Ok)
}

fn run_inspect(args: &InspectArgs) -> anyhow::Result<Done> {
    let (model, _) = load_model(&args.model)?;
    write_transform_curve(&model.transform, args.points, create(&args.out)?)?;
    Ok(Done::Ok)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Data(_)
            | Error::Config(_)
            | Error::Knots(_)
            | Error::Csv(_)
            | Error::ModelFile(_)
            | Error::ModeMismatch { .. }
            | Error::OutOfOrder { .. }
            | Error::InverseDomain { .. },
        ) => EXIT_DATA,
        Some(_) => EXIT_INTERNAL,
        // errors raised here concern the user's files
        None if err.downcast_ref::<io::Error>().is_some() => EXIT_INTERNAL,
        None => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Update(a) => run_update(a),
        Command::Rate(a) => run_rate(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::TransformInspect(a) => run_inspect(a),
    };
    match result {
        Ok(Done::Ok) => ExitCode::SUCCESS,
        Ok(Done::FitWarning) => {
            eprintln!("warning: optimizer did not converge; the model holds the best point found");
            ExitCode::from(EXIT_FIT_WARNING)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
