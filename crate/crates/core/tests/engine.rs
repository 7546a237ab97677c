use cebmf::ebnm::{EbnmOptions, Family};
use cebmf::engine::{
    compute_elbo, expected_residuals, fit, fit_observations, greedy_init, FactorState, FitConfig, Observations, PriorSpec, Workspace,
};
use cebmf::priors::{PriorKind, PriorOptions, SlabKind};
use cebmf::simulate::{rmse, simulate, ScenarioKind, ScenarioSpec};
use cebmf::types::{DataMatrix, PrecisionModel, PrecisionStructure, SideInfo};
use cebmf::Execution;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(rng))
}

fn rank_one(n: usize, p: usize, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = normal_matrix(&mut rng, n, 1);
    let f = normal_matrix(&mut rng, p, 1);
    DataMatrix::dense(l.dot(&f.t())).unwrap()
}

#[test]
fn noiseless_rank_one_is_captured_by_one_factor() {
    let z = rank_one(40, 30, 5);
    let cfg = FitConfig {
        greedy_updates: 30,
        ..FitConfig::default()
    };
    let (state, _) = greedy_init(&z, &SideInfo::none(), &cfg).unwrap();
    assert_eq!(state.k(), 1);
    let r = expected_residuals(&z, &state).unwrap();
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "residual norm {norm}");
}

#[test]
fn k_max_one_attempts_a_single_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z = DataMatrix::dense(normal_matrix(&mut rng, 30, 3).dot(&normal_matrix(&mut rng, 20, 3).t())).unwrap();
    let cfg = FitConfig {
        k_max: 1,
        ..FitConfig::default()
    };
    let res = fit(&z, &SideInfo::none(), &cfg).unwrap();
    assert_eq!(res.state.k() + res.pruned.len(), 1);
}

#[test]
fn noiseless_rank_two_is_recovered_and_surplus_pruned() {
    let (n, p) = (60, 40);
    let l = Array2::from_shape_fn((n, 2), |(i, k)| if k == 0 { (i as f64 * 0.37).sin() } else { (i as f64 * 0.91).cos() });
    let f = Array2::from_shape_fn((p, 2), |(j, k)| if k == 0 { 1.0 + (j % 3) as f64 } else { (j as f64 - 19.5) / 10.0 });
    let truth = l.dot(&f.t());
    let z = DataMatrix::dense(truth.clone()).unwrap();
    let cfg = FitConfig {
        k_max: 4,
        ..FitConfig::default()
    };
    let res = fit(&z, &SideInfo::none(), &cfg).unwrap();
    assert_eq!(res.state.k(), 2);
    assert!(rmse(&truth, &res.state.fitted()).unwrap() < 1e-3);
}

#[test]
fn fits_are_bit_identical_across_runs_layouts_and_execution() {
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::SparsityDriven, 3).with_size(300, 60)).unwrap();
    let cfg = FitConfig {
        l_prior: PriorSpec::covariate(PriorKind::SoftmaxMixtureNormal, SlabKind::Normal),
        f_prior: PriorSpec::covariate(PriorKind::MlpMixture, SlabKind::Normal),
        max_sweeps: 10,
        ..FitConfig::default()
    };
    let a = fit(&inst.z, &inst.side, &cfg).unwrap();
    let b = fit(&inst.z, &inst.side, &cfg).unwrap();
    assert_eq!(a, b);
    let sparse = fit_observations(&Observations::from_data_sparse(&inst.z), &inst.side, &cfg).unwrap();
    assert_eq!(a, sparse);
    let seq = FitConfig {
        exec: Execution::Sequential,
        ..cfg.clone()
    };
    let c = fit(&inst.z, &inst.side, &seq).unwrap();
    // Fitted priors record the execution mode, so compare the numbers.
    assert_eq!(a.state.l_mean(), c.state.l_mean());
    assert_eq!(a.state.l_second(), c.state.l_second());
    assert_eq!(a.state.f_mean(), c.state.f_mean());
    assert_eq!(a.state.f_second(), c.state.f_second());
    assert_eq!(a.elbo_trace, c.elbo_trace);
    assert_eq!(a.precision, c.precision);
}

#[test]
fn elbo_never_decreases_on_masked_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::TiledClustering, 17).with_size(150, 50)).unwrap();
    let mask = Array2::from_shape_simple_fn((150, 50), || rand::Rng::random::<f64>(&mut rng) > 0.3);
    let z = DataMatrix::new(inst.z.values().clone(), mask).unwrap();
    for precision in [PrecisionStructure::Constant, PrecisionStructure::ByRow, PrecisionStructure::ByColumn] {
        let cfg = FitConfig {
            precision,
            l_prior: PriorSpec::covariate(PriorKind::SoftmaxMixtureExponential, SlabKind::Exponential),
            f_prior: PriorSpec::constant(Family::PointNormal),
            track_updates: true,
            max_sweeps: 30,
            ..FitConfig::default()
        };
        let res = fit(&z, &inst.side, &cfg).unwrap();
        assert!(!res.update_trace.is_empty());
        for u in &res.update_trace {
            assert!(u.after >= u.before - 1e-8 * u.before.abs(), "{precision:?} {u:?}");
        }
        assert!(res.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    }
}

#[test]
fn one_update_increases_elbo_on_noiseless_rank_one() {
    let z = rank_one(30, 20, 2);
    let cfg = FitConfig {
        greedy_updates: 1,
        ..FitConfig::default()
    };
    let (state, tau) = greedy_init(&z, &SideInfo::none(), &cfg).unwrap();
    let obs = Observations::from_data(&z);
    let side = SideInfo::none();
    let mut ws = Workspace::new(&obs, &side, &cfg, state, tau).unwrap();
    let before = ws.elbo().unwrap();
    assert!(ws.update_factor(0).unwrap());
    assert!(ws.elbo().unwrap() >= before);
}

#[test]
fn constant_covariates_reproduce_the_covariate_free_update() {
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::SparsityDriven, 4).with_size(200, 50)).unwrap();
    let (n, p) = (200, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let state = FactorState::from_means(&normal_matrix(&mut rng, n, 1), &normal_matrix(&mut rng, p, 1)).unwrap();
    let iters = 25;
    let base = FitConfig {
        ebnm: EbnmOptions {
            em_tol: 0.0,
            em_max_iter: iters,
            ..EbnmOptions::default()
        },
        prior: PriorOptions {
            outer_iters: iters,
            ..PriorOptions::default()
        },
        ..FitConfig::default()
    };
    let plain = FitConfig {
        l_prior: PriorSpec::constant(Family::NormalMixture),
        f_prior: PriorSpec::constant(Family::NormalMixture),
        ..base.clone()
    };
    let cov = FitConfig {
        l_prior: PriorSpec::covariate(PriorKind::SoftmaxMixtureNormal, SlabKind::Normal),
        f_prior: PriorSpec::constant(Family::NormalMixture),
        ..base
    };
    let obs = Observations::from_data(&inst.z);
    let none = SideInfo::none();
    let ones = SideInfo::new(Some(Array2::ones((n, 1))), None);
    let mut a = Workspace::new(&obs, &none, &plain, state.clone(), PrecisionModel::constant(1.0)).unwrap();
    let mut b = Workspace::new(&obs, &ones, &cov, state, PrecisionModel::constant(1.0)).unwrap();
    assert!(a.update_factor(0).unwrap());
    assert!(b.update_factor(0).unwrap());
    let (fa, fb) = (&a.state.factors[0], &b.state.factors[0]);
    for (x, y) in [(&fa.l.mean, &fb.l.mean), (&fa.l.second, &fb.l.second), (&fa.f.mean, &fb.f.mean), (&fa.f.second, &fb.f.second)] {
        for (u, v) in x.iter().zip(y.iter()) {
            assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{u} vs {v}");
        }
    }
}

#[test]
fn expected_squared_residual_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let z = DataMatrix::dense(normal_matrix(&mut rng, 3, 3)).unwrap();
    let mut state = FactorState::from_means(&normal_matrix(&mut rng, 3, 2), &normal_matrix(&mut rng, 3, 2)).unwrap();
    for f in state.factors.iter_mut() {
        for side in [&mut f.l, &mut f.f] {
            for (m2, m) in side.second.iter_mut().zip(&side.mean) {
                *m2 = m * m + 0.2 + 0.3 * m.abs();
            }
        }
    }
    let r = expected_residuals(&z, &state).unwrap();
    let draws = 1_000_000;
    let sd = |m: f64, s: f64| (s - m * m).sqrt();
    for i in 0..3 {
        for j in 0..3 {
            let analytic = r[[i, j]].powi(2) + state.predictive_variance(i, j);
            let (mut acc, mut acc2) = (0.0, 0.0);
            for _ in 0..draws {
                let mut pred = 0.0;
                for f in &state.factors {
                    let l = Normal::new(f.l.mean[i], sd(f.l.mean[i], f.l.second[i])).unwrap().sample(&mut rng);
                    let v = Normal::new(f.f.mean[j], sd(f.f.mean[j], f.f.second[j])).unwrap().sample(&mut rng);
                    pred += l * v;
                }
                let e = (z.values()[[i, j]] - pred).powi(2);
                acc += e;
                acc2 += e * e;
            }
            let mean = acc / draws as f64;
            let se = ((acc2 / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!((mean - analytic).abs() < 3.0 * se + 1e-12, "cell ({i},{j}): {mean} vs {analytic} (se {se})");
        }
    }
}

#[test]
fn point_posteriors_reduce_to_squared_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = DataMatrix::dense(normal_matrix(&mut rng, 4, 5)).unwrap();
    let state = FactorState::from_means(&normal_matrix(&mut rng, 4, 2), &normal_matrix(&mut rng, 5, 2)).unwrap();
    let r = expected_residuals(&z, &state).unwrap();
    let ss: f64 = r.iter().map(|v| v * v).sum();
    let elbo = compute_elbo(&z, &state, &PrecisionModel::constant(1.0)).unwrap();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    assert!((elbo - (-0.5 * (20.0 * ln2pi + ss))).abs() < 1e-9);
}

#[test]
fn fitted_rows_with_no_data_stay_at_prior_mean() {
    let inst = simulate(&ScenarioSpec::new(ScenarioKind::TiledClustering, 8).with_size(100, 40)).unwrap();
    let mut mask = Array2::from_elem((100, 40), true);
    mask.row_mut(0).fill(false);
    let z = DataMatrix::new(inst.z.values().clone(), mask).unwrap();
    let res = fit(&z, &SideInfo::none(), &FitConfig::default()).unwrap();
    for f in &res.state.factors {
        // Symmetric zero-centred priors have mean zero.
        assert_eq!(f.l.mean[0], 0.0);
    }
    let col_means = res.state.fitted().mean_axis(Axis(0)).unwrap();
    assert!(col_means.iter().all(|v| v.is_finite()));
    assert_eq!(Array1::from(res.state.fitted().row(0).to_vec()), Array1::<f64>::zeros(40));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_small_fits_are_monotone(seed in 0u64..10_000, n in 5usize..25, p in 5usize..25, miss in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = normal_matrix(&mut rng, n, 2).dot(&normal_matrix(&mut rng, p, 2).t());
        let noise = normal_matrix(&mut rng, n, p);
        let mask = Array2::from_shape_simple_fn((n, p), || rand::Rng::random::<f64>(&mut rng) >= miss);
        let z = DataMatrix::new(truth + noise * 0.5, mask).unwrap();
        let cfg = FitConfig { track_updates: true, max_sweeps: 20, seed, ..FitConfig::default() };
        let res = fit(&z, &SideInfo::none(), &cfg).unwrap();
        for u in &res.update_trace {
            prop_assert!(u.after >= u.before - 1e-8 * u.before.abs(), "{:?}", u);
        }
    }
}
