#![allow(dead_code)]

use ordcop_core::forecast::ForecastModel;
use ordcop_core::{Coding, CopulaSpec, MarginalParams, MarginalSpec, PairModel, StateSpace};

/// Three binary series with first-order indicator lags. Every pair carries
/// its own marginal estimates, as a two-stage fit would.
pub fn binary_system(copulas: [CopulaSpec; 3], shared_marginals: bool) -> ForecastModel {
    let spaces = vec![StateSpace::contiguous(2).unwrap(); 3];
    let spec = |k| MarginalSpec::new(k, 1, Coding::Indicator, spaces.clone()).unwrap();
    let base = [
        MarginalParams::new(vec![-0.4], vec![0.8, -0.3, 0.2]).unwrap(),
        MarginalParams::new(vec![0.3], vec![0.1, 0.9, -0.5]).unwrap(),
        MarginalParams::new(vec![0.1], vec![-0.6, 0.4, 0.7]).unwrap(),
    ];
    let perturbed = |m: &MarginalParams, by: f64| {
        if shared_marginals {
            m.clone()
        } else {
            MarginalParams::new(
                m.intercepts.iter().map(|a| a + by).collect(),
                m.slopes.iter().map(|b| b - 0.5 * by).collect(),
            )
            .unwrap()
        }
    };
    let pairs = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .zip(copulas)
        .enumerate()
        .map(|(i, (&(r, s), c))| {
            let by = 0.1 * (i as f64 + 1.0);
            PairModel::new(spec(r), spec(s), perturbed(&base[r], by), perturbed(&base[s], -by), c).unwrap()
        })
        .collect();
    ForecastModel::new(vec!["A".into(), "B".into(), "C".into()], pairs).unwrap()
}

/// P(Z_k = i) implied by one pair model, by summing rectangle
/// probabilities computed straight from the copula CDF.
pub fn enumerated_margin(pair: &PairModel, k: usize, history: &[usize]) -> Vec<f64> {
    let x = pair.spec_r.build_regressors(&[history]).unwrap();
    let dr = pair.spec_r.n_states();
    let ds = pair.spec_s.n_states();
    let fr = pair.marg_r.cond_cdf(&x, dr).unwrap();
    let fs = pair.marg_s.cond_cdf(&x, ds).unwrap();
    let f = |cdf: &[f64], j: isize| if j < 0 { 0.0 } else { cdf[j as usize] };
    let c = |u: f64, v: f64| pair.copula.cdf(&[u, v]).unwrap();
    let mut out = vec![0.0; if k == pair.r { dr } else { ds }];
    for a in 0..dr as isize {
        for b in 0..ds as isize {
            let p = c(f(&fr, a), f(&fs, b)) - c(f(&fr, a - 1), f(&fs, b)) - c(f(&fr, a), f(&fs, b - 1))
                + c(f(&fr, a - 1), f(&fs, b - 1));
            if k == pair.r {
                out[a as usize] += p;
            } else {
                out[b as usize] += p;
            }
        }
    }
    out
}

/// One-step distribution of every series: the mean over its partners of
/// the pair-implied margins.
pub fn one_step_exact(model: &ForecastModel, history: &[usize]) -> Vec<Vec<f64>> {
    (0..model.n_series())
        .map(|k| {
            let own: Vec<&PairModel> = model.pairs().iter().filter(|p| p.r == k || p.s == k).collect();
            let d = model.state_spaces()[k].len();
            let mut avg = vec![0.0; d];
            for p in &own {
                for (a, v) in avg.iter_mut().zip(enumerated_margin(p, k, history)) {
                    *a += v / own.len() as f64;
                }
            }
            avg
        })
        .collect()
}

/// Two-step distribution: series are drawn independently given the
/// history, so the first step's joint law is the product of its margins.
pub fn two_step_exact(model: &ForecastModel, history: &[usize]) -> Vec<Vec<f64>> {
    let first = one_step_exact(model, history);
    let k = model.n_series();
    let dims: Vec<usize> = model.state_spaces().iter().map(StateSpace::len).collect();
    let mut out: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
    let total: usize = dims.iter().product();
    for code in 0..total {
        let mut z = Vec::with_capacity(k);
        let mut rest = code;
        for &d in &dims {
            z.push(rest % d);
            rest /= d;
        }
        let weight: f64 = (0..k).map(|m| first[m][z[m]]).product();
        let next = one_step_exact(model, &z);
        for m in 0..k {
            for (o, v) in out[m].iter_mut().zip(&next[m]) {
                *o += weight * v;
            }
        }
    }
    out
}
