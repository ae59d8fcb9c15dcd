use ordcop_core::combine::{CopulaSharing, Estimator};
use ordcop_core::data::kendall_matrix;
use ordcop_core::simulate::{run_replication_study, simulate_system, ScenarioConfig};
use ordcop_core::{Coding, CopulaSpec, Correlation, FitOptions, MarginalParams};

#[test]
fn independent_series_without_lags_are_iid_multinomial() {
    let mut sc = ScenarioConfig::trivariate_gaussian(10_000);
    sc.copula = CopulaSpec::gaussian(Correlation::identity(3));
    for m in sc.marginals.iter_mut() {
        m.slopes.iter_mut().for_each(|b| *b = 0.0);
    }
    let panel = simulate_system(&sc, &mut sc.rng(0)).unwrap();
    for (k, m) in sc.marginals.iter().enumerate() {
        let pi = m.cond_probs(&[0.0; 3], 3).unwrap();
        let n = panel.len() as f64;
        for (j, &p) in pi.iter().enumerate() {
            let freq = panel.states[k].iter().filter(|&&z| z == j).count() as f64 / n;
            let sigma = (p * (1.0 - p) / n).sqrt();
            assert!((freq - p).abs() < 3.0 * sigma, "series {k}, state {j}: {freq} vs {p}");
        }
    }
}

#[test]
fn gumbel_coupling_shows_in_contemporaneous_tau() {
    let sc = ScenarioConfig::trivariate_gumbel(1000);
    let panel = simulate_system(&sc, &mut sc.rng(1)).unwrap();
    let tau = kendall_matrix(&panel, 0).unwrap();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let t = tau[a][b].unwrap();
        assert!(t > 0.2, "τ({a},{b}) = {t}");
    }
}

#[test]
fn burn_in_is_discarded_from_the_front() {
    let mut short = ScenarioConfig::trivariate_gumbel(200);
    short.burn_in = 50;
    let mut long = short.clone();
    long.t_len = 250;
    long.burn_in = 0;
    let a = simulate_system(&short, &mut short.rng(3)).unwrap();
    let b = simulate_system(&long, &mut long.rng(3)).unwrap();
    assert_eq!(a.len(), 200);
    for k in 0..3 {
        assert_eq!(a.states[k], b.states[k][50..]);
    }
}

#[test]
fn linear_coding_scenario_uses_labels_as_regressors() {
    // Labels 1..d enter the linear predictor as they are.
    let sc = ScenarioConfig::trivariate_gaussian(5);
    assert_eq!(sc.coding, Coding::Linear);
    let spec = &sc.specs().unwrap()[0];
    let x = spec.build_regressors(&[[0usize, 1, 2]]).unwrap();
    assert_eq!(x, vec![1.0, 2.0, 3.0]);
    let m: &MarginalParams = &sc.marginals[0];
    let lp: f64 = 0.4 + 0.4 + 0.45;
    let g = m.cond_cdf(&x, 3).unwrap();
    assert!((g[0] - 1.0 / (1.0 + (0.5 - lp).exp())).abs() < 1e-12);
}

#[test]
fn study_records_every_replication() {
    let mut sc = ScenarioConfig::trivariate_gumbel(60);
    sc.replications = 2;
    let study = run_replication_study(&sc, CopulaSharing::Common, &FitOptions::default()).unwrap();
    assert_eq!(study.records.len(), 2);
    assert_eq!(study.mse(Estimator::Mean).len() + study.excluded(), 2);
    assert_eq!(study.truth.len(), 25);
}
