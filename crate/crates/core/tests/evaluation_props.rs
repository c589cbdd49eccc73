use proptest::prelude::*;
use scoredlm::evaluation::{
    average_ranks, predict_games, spearman, standardized_residuals, weighted_spearman, win_accuracy,
    GamePrediction, Orientation,
};
use scoredlm::filter::Hyperparams;
use scoredlm::fitting::fit_fixed;
use scoredlm::preprocess::{Centering, Dataset, DatasetOptions, Mode, PeriodScheme, PreScale, RawResult};
use scoredlm::simulation::{simulate_dataset, SimConfig};
use scoredlm::spline::{identity_lambda, KnotConfig};

fn game(pred: &[f64], obs: &[f64]) -> GamePrediction {
    let n = pred.len();
    GamePrediction {
        period: 1,
        game_id: "g".into(),
        athletes: (0..n).map(|i| i.to_string()).collect(),
        abilities: pred.to_vec(),
        predicted: pred.to_vec(),
        observed: obs.to_vec(),
        predicted_ranks: average_ranks(pred, Orientation::HigherIsBetter),
        observed_ranks: average_ranks(obs, Orientation::HigherIsBetter),
        unseen: vec![false; n],
        margin: None,
    }
}

fn arb_game(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5i32..5, n), prop::collection::vec(-100.0f64..100.0, n))
        .prop_map(|(p, o)| (p.into_iter().map(f64::from).collect(), o))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_is_bounded(games in prop::collection::vec((2usize..9).prop_flat_map(arb_game), 1..8)) {
        let preds: Vec<GamePrediction> = games.iter().map(|(p, o)| game(p, o)).collect();
        if let Some(r) = weighted_spearman(&preds).rho {
            prop_assert!((-1.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn equal_sizes_reduce_to_plain_average(games in prop::collection::vec(arb_game(5), 1..8)) {
        let preds: Vec<GamePrediction> = games.iter().map(|(p, o)| game(p, o)).collect();
        let rhos: Vec<f64> = preds.iter().filter_map(|g| spearman(&g.predicted_ranks, &g.observed_ranks)).collect();
        let w = weighted_spearman(&preds).rho;
        if rhos.is_empty() {
            prop_assert!(w.is_none());
        } else {
            let plain = rhos.iter().sum::<f64>() / rhos.len() as f64;
            prop_assert!((w.unwrap() - plain).abs() <= 1e-12);
        }
    }

    #[test]
    fn monotone_prediction_transform_is_invisible(games in prop::collection::vec((2usize..9).prop_flat_map(arb_game), 1..6)) {
        let base: Vec<GamePrediction> = games.iter().map(|(p, o)| game(p, o)).collect();
        let moved: Vec<GamePrediction> = games
            .iter()
            .map(|(p, o)| game(&p.iter().map(|x| x.powi(3) + 10.0 * x - 3.0).collect::<Vec<_>>(), o))
            .collect();
        prop_assert_eq!(weighted_spearman(&base), weighted_spearman(&moved));
    }

    #[test]
    fn win_accuracy_swap_invariant(m in prop::collection::vec((-3i32..3, -3i32..3), 1..30)) {
        let margins: Vec<(f64, f64)> = m.iter().map(|&(a, b)| (f64::from(a), f64::from(b))).collect();
        let swapped: Vec<(f64, f64)> = margins.iter().map(|&(a, b)| (-a, -b)).collect();
        let acc = win_accuracy(&margins).unwrap();
        prop_assert_eq!(Some(acc), win_accuracy(&swapped));
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn orientation_reverses_ranks(v in prop::collection::vec(-10i32..10, 1..12)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let hi = average_ranks(&v, Orientation::HigherIsBetter);
        let lo = average_ranks(&v, Orientation::LowerIsBetter);
        let n = v.len() as f64;
        for (a, b) in hi.iter().zip(&lo) {
            prop_assert_eq!(a + b, n + 1.0);
        }
        prop_assert_eq!(hi.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
    }
}

fn build(results: &[RawResult]) -> Dataset {
    let opts = DatasetOptions {
        mode: Mode::MultiCompetitor,
        scheme: PeriodScheme::Annual,
        pre_scale: PreScale::None,
        centering: Centering::None,
    };
    Dataset::build(results, opts).unwrap()
}

#[test]
fn residuals_ignore_future_periods() {
    let cfg = SimConfig { p: 20, periods: 6, players_per_game: 4, games_per_period: 6, seed: 21, ..SimConfig::default() };
    let sim = simulate_dataset(&cfg).unwrap();
    let data = build(&sim.results);
    let knots = KnotConfig::from_values(&data.observations(), 3, 3).unwrap();
    let (lo, hi) = knots.boundary();
    let transform = identity_lambda(&knots, hi - lo, lo).unwrap();
    let model = fit_fixed(&data, transform.clone(), 0.5, Hyperparams::default()).unwrap();

    // reverse the score order of every row after period 3
    let cut = chrono::NaiveDate::from_ymd_opt(2003, 1, 1).unwrap();
    let mut scrambled = sim.results.clone();
    let future: Vec<usize> = (0..scrambled.len()).filter(|&i| scrambled[i].date >= cut).collect();
    let scores: Vec<f64> = future.iter().rev().map(|&i| sim.results[i].score).collect();
    for (&i, s) in future.iter().zip(scores) {
        scrambled[i].score = s;
    }
    let other = fit_fixed(&build(&scrambled), transform, 0.5, Hyperparams::default()).unwrap();

    let n_past: usize = model.filter.predictive[..3].iter().map(|s| s.observed.len()).sum();
    let a = standardized_residuals(&model, 1).unwrap();
    let b = standardized_residuals(&other, 1).unwrap();
    assert_eq!(a[..n_past], b[..n_past]);
    assert_ne!(a[n_past..], b[n_past..]);

    let pa = predict_games(&model, 1, Orientation::HigherIsBetter).unwrap();
    let pb = predict_games(&other, 1, Orientation::HigherIsBetter).unwrap();
    let upto = |p: &[GamePrediction]| p.iter().filter(|g| g.period <= 3).cloned().collect::<Vec<_>>();
    assert_eq!(upto(&pa), upto(&pb));
    // period-4 predictions use only periods 1-3, so they agree too
    let period4 = |p: &[GamePrediction]| {
        p.iter().filter(|g| g.period == 4).map(|g| g.predicted.clone()).collect::<Vec<_>>()
    };
    assert_eq!(period4(&pa), period4(&pb));
}
