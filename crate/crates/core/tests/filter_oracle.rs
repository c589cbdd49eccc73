mod common;

use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;
use scoredlm::filter::{
    filter_step, init_state, rts_smooth, run_filter, Design, GameBlock, Hyperparams, ObsLayout,
    PeriodBlock,
};

use common::{small_instance, Oracle};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-14
}

#[test]
fn filter_matches_joint_conditioning() {
    for (p, periods, w, seed, h2h) in [(2, 2, 0.5, 1, false), (3, 2, 0.7, 2, true), (3, 1, 0.0, 3, true), (2, 2, 1.3, 4, true)] {
        let (layout, psi) = small_instance(p, periods, seed, h2h);
        let h = Hyperparams::exact();
        let run = run_filter(&layout, &psi, w, &h).unwrap();
        let oracle = Oracle::new(&layout, &psi, h.v0, w, h.a0, h.b0);
        for t in 1..=periods {
            let post = oracle.condition(t);
            let (mean, cov) = oracle.block(&post, t);
            let s = &run.states[t];
            let v = s.v.to_matrix();
            for i in 0..p {
                assert!(rel_close(s.m[i], mean[i], 1e-10), "m[{i}] at t={t}: {} vs {}", s.m[i], mean[i]);
                for j in 0..p {
                    assert!(rel_close(v[(i, j)], cov[(i, j)], 1e-10), "V[{i},{j}] t={t}");
                }
            }
            assert_eq!(s.a, post.a);
            assert!(rel_close(s.b, post.b, 1e-12), "b at t={t}: {} vs {}", s.b, post.b);
            let cumulative: f64 = run.predictive[..t].iter().map(|st| st.log_density).sum();
            assert_relative_eq!(cumulative, post.log_marginal, max_relative = 1e-10);
        }
    }
}

#[test]
fn b_update_forms_agree() {
    for seed in 0..20 {
        let (layout, psi) = small_instance(3, 3, seed, seed % 2 == 0);
        let run = run_filter(&layout, &psi, 0.2 + 0.1 * seed as f64, &Hyperparams::exact()).unwrap();
        for (st, stats) in run.states[1..].iter().zip(&run.predictive) {
            let alt = stats.b_precision_form.unwrap();
            assert!(rel_close(st.b, alt, 1e-8), "seed {seed}: {} vs {alt}", st.b);
        }
    }
}

#[test]
fn smoother_matches_joint_conditioning() {
    let (layout, psi) = small_instance(3, 3, 11, true);
    let h = Hyperparams::exact();
    let w = 0.6;
    let run = run_filter(&layout, &psi, w, &h).unwrap();
    let smoothed = rts_smooth(&run, w).unwrap();
    let oracle = Oracle::new(&layout, &psi, h.v0, w, h.a0, h.b0);
    let post = oracle.condition(3);
    for (k, s) in smoothed.iter().enumerate() {
        let (mean, cov) = oracle.block(&post, k + 1);
        let v = s.v.to_matrix();
        for i in 0..3 {
            assert!(rel_close(s.m[i], mean[i], 1e-8));
            for j in 0..3 {
                assert!(rel_close(v[(i, j)], cov[(i, j)], 1e-8));
            }
            assert!(v[(i, i)] <= run.states[k + 1].v.to_matrix()[(i, i)] + 1e-10);
        }
    }
    let last = smoothed.last().unwrap();
    assert_eq!(last.m, run.last().m);
    assert_eq!(last.v, run.last().v);
}

#[test]
fn static_limit_smoothing_is_batch_posterior() {
    // w = 0: abilities never move, so every smoothed period equals the final
    // filtered posterior
    let (layout, psi) = small_instance(3, 3, 5, true);
    let run = run_filter(&layout, &psi, 0.0, &Hyperparams::exact()).unwrap();
    let smoothed = rts_smooth(&run, 0.0).unwrap();
    for s in &smoothed {
        for i in 0..3 {
            assert_relative_eq!(s.m[i], run.last().m[i], max_relative = 1e-8, epsilon = 1e-12);
        }
    }
}

#[test]
fn head_to_head_swap_invariance() {
    let make = |swap: bool, z: f64| {
        let athletes = if swap { vec![1, 0] } else { vec![0, 1] };
        let layout = ObsLayout {
            p: 2,
            periods: vec![
                PeriodBlock { games: vec![GameBlock { athletes: athletes.clone(), design: Design::Difference, offset: 0 }] },
                PeriodBlock { games: vec![GameBlock { athletes, design: Design::Difference, offset: 1 }] },
            ],
        };
        let psi = if swap { vec![-z, -2.0 * z] } else { vec![z, 2.0 * z] };
        run_filter(&layout, &psi, 0.4, &Hyperparams::default()).unwrap()
    };
    let a = make(false, 3.0);
    let b = make(true, 3.0);
    assert_relative_eq!(a.log_density, b.log_density, max_relative = 1e-12);
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_relative_eq!(x.b, y.b, max_relative = 1e-12);
        for i in 0..2 {
            assert_relative_eq!(x.m[i], y.m[i], epsilon = 1e-12);
            assert_relative_eq!(x.v.diagonal()[i], y.v.diagonal()[i], max_relative = 1e-12);
        }
    }
}

#[test]
fn absent_athlete_drifts_then_caps() {
    let h = Hyperparams::default();
    let periods: Vec<PeriodBlock> = (0..30)
        .map(|t| PeriodBlock {
            games: vec![GameBlock { athletes: vec![0, 1], design: Design::Centered, offset: 2 * t }],
        })
        .collect();
    let layout = ObsLayout { p: 3, periods };
    let psi: Vec<f64> = (0..60).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let run = run_filter(&layout, &psi, 0.5, &h).unwrap();
    for s in &run.states {
        assert_eq!(s.m[2], 0.0);
        assert!(s.v.diagonal().iter().all(|&v| v <= h.v0));
    }
    // athlete 2 never plays: prior v0 + w caps straight back to v0
    assert_eq!(run.states[5].v.diagonal()[2], h.v0);

    // starting below the cap the variance grows by w per period
    let mut state = init_state(3, &h).unwrap();
    state.v = scoredlm::filter::Covariance::Diagonal(DVector::from_vec(vec![1.0, 1.0, 1.0]));
    let mut v = 1.0;
    for _ in 0..25 {
        let (next, _) = filter_step(&state, &PeriodBlock::default(), &[], 0.5, &h).unwrap();
        v = (v + 0.5f64).min(h.v0);
        assert_eq!(next.v.diagonal()[2], v);
        state = next;
    }
}

#[test]
fn total_observations_fix_shape() {
    let (layout, psi) = small_instance(3, 3, 9, true);
    let run = run_filter(&layout, &psi, 0.5, &Hyperparams::default()).unwrap();
    assert_eq!(run.last().a, 0.1 + 0.5 * layout.n_obs() as f64);
    for pair in run.states.windows(2) {
        assert!(pair[1].b > pair[0].b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_athletes_commutes(seed in 0u64..1000, shift in 1usize..4, w in 0.05f64..2.0) {
        let p = 4;
        let (layout, psi) = small_instance(p, 3, seed, true);
        let perm: Vec<usize> = (0..p).map(|i| (i + shift) % p).collect();
        let relabeled = ObsLayout {
            p,
            periods: layout.periods.iter().map(|pb| PeriodBlock {
                games: pb.games.iter().map(|g| GameBlock {
                    athletes: g.athletes.iter().map(|&a| perm[a]).collect(),
                    ..g.clone()
                }).collect(),
            }).collect(),
        };
        for h in [Hyperparams::default(), Hyperparams::exact()] {
            let a = run_filter(&layout, &psi, w, &h).unwrap();
            let b = run_filter(&relabeled, &psi, w, &h).unwrap();
            prop_assert!((a.log_density - b.log_density).abs() <= 1e-9 * a.log_density.abs().max(1.0));
            for (x, y) in a.states.iter().zip(&b.states) {
                let (vx, vy) = (x.v.diagonal(), y.v.diagonal());
                for i in 0..p {
                    prop_assert!((x.m[i] - y.m[perm[i]]).abs() <= 1e-9);
                    prop_assert!((vx[i] - vy[perm[i]]).abs() <= 1e-9);
                }
                prop_assert!((x.b - y.b).abs() <= 1e-9 * x.b);
            }
        }
    }

    #[test]
    fn capped_variances_never_exceed_prior(seed in 0u64..1000, w in 0.0f64..20.0) {
        let (layout, psi) = small_instance(3, 4, seed, true);
        let h = Hyperparams::default();
        let run = run_filter(&layout, &psi, w, &h).unwrap();
        for s in &run.states {
            prop_assert!(s.v.diagonal().iter().all(|&v| v <= h.v0 + 1e-12));
        }
        let smoothed = rts_smooth(&run, w).unwrap();
        for (s, f) in smoothed.iter().zip(&run.states[1..]) {
            let (vs, vf) = (s.v.diagonal(), f.v.diagonal());
            for i in 0..3 {
                prop_assert!(vs[i] <= vf[i] + 1e-10);
            }
        }
    }
}
