mod common;

use common::{binary_system, one_step_exact, two_step_exact};
use ordcop_core::forecast::{forecast_paths, pair_marginal_probs, ForecastConfig, Method, Summary};
use ordcop_core::CopulaSpec;

fn copulas() -> [CopulaSpec; 3] {
    [
        CopulaSpec::gumbel(2.5).unwrap(),
        CopulaSpec::frank(-4.0).unwrap(),
        CopulaSpec::gaussian_pair(0.6).unwrap(),
    ]
}

#[test]
fn pair_margins_match_enumeration() {
    let model = binary_system(copulas(), false);
    for h in [[0usize, 0, 0], [1, 0, 1], [1, 1, 1]] {
        for p in model.pairs() {
            for (k, partner) in [(p.r, p.s), (p.s, p.r)] {
                let got = pair_marginal_probs(&model, k, partner, &[h]).unwrap();
                let want = common::enumerated_margin(p, k, &h);
                assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
                }
            }
        }
    }
    assert!(pair_marginal_probs(&model, 1, 1, &[[0usize, 0, 0]]).is_err());
}

fn check(freq: &[Vec<f64>], exact: &[Vec<f64>], n: usize) {
    let bound = 3.0 / (n as f64).sqrt();
    for (k, (f, e)) in freq.iter().zip(exact).enumerate() {
        for (a, b) in f.iter().zip(e) {
            assert!((a - b).abs() < bound, "series {k}: {f:?} vs {e:?}");
        }
    }
}

#[test]
fn both_methods_match_enumeration_over_two_steps() {
    let model = binary_system(copulas(), false);
    let history = [1usize, 0, 1];
    let n = 40_000;
    for method in [Method::A, Method::B] {
        let config = ForecastConfig {
            horizon: 2,
            n_paths: n,
            method,
            summary: Summary::Mode,
            seed: 21,
        };
        let result = forecast_paths(&model, &config, &[history]).unwrap();
        check(&result.frequencies[0], &one_step_exact(&model, &history), n);
        check(&result.frequencies[1], &two_step_exact(&model, &history), n);
    }
}

#[test]
fn independence_reduces_both_methods_to_cond_probs() {
    let model = binary_system([CopulaSpec::gumbel(1.0).unwrap(), CopulaSpec::frank(0.0).unwrap(), CopulaSpec::gaussian_pair(0.0).unwrap()], true);
    let history = [0usize, 1, 1];
    let n = 40_000;
    let x = model.pairs()[0].spec_r.build_regressors(&[history]).unwrap();
    let exact: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let p = model.pairs().iter().find(|p| p.r == k || p.s == k).unwrap();
            let m = if p.r == k { &p.marg_r } else { &p.marg_s };
            m.cond_probs(&x, 2).unwrap()
        })
        .collect();
    for method in [Method::A, Method::B] {
        let config = ForecastConfig {
            horizon: 1,
            n_paths: n,
            method,
            summary: Summary::Median,
            seed: 8,
        };
        let result = forecast_paths(&model, &config, &[history]).unwrap();
        check(&result.frequencies[0], &exact, n);
    }
}

#[test]
fn zero_paths_is_an_error() {
    let model = binary_system(copulas(), false);
    let config = ForecastConfig {
        n_paths: 0,
        ..Default::default()
    };
    assert!(forecast_paths(&model, &config, &[[0usize, 0, 0]]).is_err());
}
