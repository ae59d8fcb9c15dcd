use ordcop_core::{CopulaFamily, CopulaSpec, Correlation, Error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bivariate_members() -> Vec<CopulaSpec> {
    vec![
        CopulaSpec::gumbel(1.0).unwrap(),
        CopulaSpec::gumbel(1.7).unwrap(),
        CopulaSpec::gumbel(6.0).unwrap(),
        CopulaSpec::frank(-8.0).unwrap(),
        CopulaSpec::frank(0.4).unwrap(),
        CopulaSpec::frank(4.41).unwrap(),
        CopulaSpec::gaussian_pair(-0.7).unwrap(),
        CopulaSpec::gaussian_pair(0.0).unwrap(),
        CopulaSpec::gaussian_pair(0.9).unwrap(),
    ]
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

#[test]
fn uniform_margins_on_a_fine_grid() {
    for c in bivariate_members() {
        for &u in &grid(101) {
            let a = c.cdf(&[u, 1.0]).unwrap();
            let b = c.cdf(&[1.0, u]).unwrap();
            assert!((a - u).abs() < 1e-10, "{c:?} C({u},1) = {a}");
            assert!((b - u).abs() < 1e-10, "{c:?} C(1,{u}) = {b}");
        }
    }
}

#[test]
fn grounded_and_two_increasing() {
    let g = grid(41);
    for c in bivariate_members() {
        for &v in &g {
            assert_eq!(c.cdf(&[0.0, v]).unwrap(), 0.0);
            assert_eq!(c.cdf(&[v, 0.0]).unwrap(), 0.0);
        }
        for i in 1..g.len() {
            for j in 1..g.len() {
                let vol = c.cdf(&[g[i], g[j]]).unwrap() - c.cdf(&[g[i - 1], g[j]]).unwrap()
                    - c.cdf(&[g[i], g[j - 1]]).unwrap()
                    + c.cdf(&[g[i - 1], g[j - 1]]).unwrap();
                assert!(vol >= -1e-12, "{c:?} rectangle at ({i},{j}) has volume {vol}");
            }
        }
    }
}

#[test]
fn independence_members_factorise() {
    let members = [
        CopulaSpec::gumbel(1.0).unwrap(),
        CopulaSpec::frank(0.0).unwrap(),
        CopulaSpec::frank(1e-9).unwrap(),
        CopulaSpec::gaussian_pair(0.0).unwrap(),
    ];
    assert!((members[0].cdf(&[0.3, 0.7]).unwrap() - 0.21).abs() < 1e-15);
    assert!((members[2].cdf(&[0.3, 0.7]).unwrap() - 0.21).abs() < 1e-6);
    assert!((members[3].cdf(&[0.4, 0.9]).unwrap() - 0.36).abs() < 1e-12);
    for c in &members {
        for &u in &grid(11) {
            for &v in &grid(11) {
                assert!((c.cdf(&[u, v]).unwrap() - u * v).abs() < 1e-9, "{c:?}");
            }
        }
    }
    let tri = CopulaSpec::gumbel(1.0).unwrap().cdf(&[0.2, 0.5, 0.9]).unwrap();
    assert!((tri - 0.09).abs() < 1e-14);
}

#[test]
fn gumbel_concordance_grows_with_parameter() {
    let mut last = 0.0;
    for i in 0..=90 {
        let phi = 1.0 + 0.1 * i as f64;
        let c = CopulaSpec::gumbel(phi).unwrap().cdf(&[0.5, 0.5]).unwrap();
        assert!(c >= last - 1e-15, "C(0.5,0.5; {phi}) = {c} dropped below {last}");
        last = c;
    }
}

// τ = 1 − 4∫∫ ∂C/∂u · ∂C/∂v du dv on a midpoint grid.
fn tau_by_integration(c: &CopulaSpec) -> f64 {
    let n = 300;
    let h = 1.0 / n as f64;
    let d = 1e-5;
    let mut acc = 0.0;
    for i in 0..n {
        let u = (i as f64 + 0.5) * h;
        for j in 0..n {
            let v = (j as f64 + 0.5) * h;
            let cu = (c.cdf(&[u + d, v]).unwrap() - c.cdf(&[u - d, v]).unwrap()) / (2.0 * d);
            let cv = (c.cdf(&[u, v + d]).unwrap() - c.cdf(&[u, v - d]).unwrap()) / (2.0 * d);
            acc += cu * cv;
        }
    }
    1.0 - 4.0 * acc * h * h
}

// Kendall's τ for continuous data by counting inversions with a merge sort.
fn kendall_continuous(x: &[f64], y: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut seq: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    fn count(v: &mut [f64]) -> u64 {
        if v.len() < 2 {
            return 0;
        }
        let mid = v.len() / 2;
        let mut n = count(&mut v[..mid]) + count(&mut v[mid..]);
        let (mut i, mut j) = (0, mid);
        let mut merged = Vec::with_capacity(v.len());
        while i < mid && j < v.len() {
            if v[i] <= v[j] {
                merged.push(v[i]);
                i += 1;
            } else {
                merged.push(v[j]);
                n += (mid - i) as u64;
                j += 1;
            }
        }
        merged.extend_from_slice(&v[i..mid]);
        merged.extend_from_slice(&v[j..]);
        v.copy_from_slice(&merged);
        n
    }
    let n = x.len() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    1.0 - 2.0 * count(&mut seq) as f64 / pairs
}

fn column(draws: &[Vec<f64>], j: usize) -> Vec<f64> {
    draws.iter().map(|d| d[j]).collect()
}

#[test]
fn gumbel_sampling_matches_integrated_tau() {
    let c = CopulaSpec::gumbel(2.0).unwrap();
    let oracle = tau_by_integration(&c);
    assert!((oracle - 0.5).abs() < 5e-3, "integrated τ = {oracle}");
    let draws = c.sample(3, 50_000, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let tau = kendall_continuous(&column(&draws, a), &column(&draws, b));
        assert!((tau - oracle).abs() < 0.02, "pair ({a},{b}) τ = {tau}");
    }
}

#[test]
fn frank_and_gaussian_sampling_tau() {
    let cases = [
        (CopulaSpec::frank(4.41).unwrap(), 2),
        (CopulaSpec::frank(-4.0).unwrap(), 2),
        (CopulaSpec::frank(3.0).unwrap(), 3),
        (CopulaSpec::gaussian(Correlation::from_upper(3, &[0.5, -0.3, 0.2]).unwrap()), 3),
    ];
    for (c, dim) in cases {
        let draws = c.sample(dim, 20_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for a in 0..dim {
            for b in a + 1..dim {
                let pair = match &c {
                    CopulaSpec::Gaussian { corr } => CopulaSpec::gaussian_pair(corr.get(a, b)).unwrap(),
                    other => other.clone(),
                };
                let oracle = tau_by_integration(&pair);
                let tau = kendall_continuous(&column(&draws, a), &column(&draws, b));
                assert!((tau - oracle).abs() < 0.03, "{c:?} ({a},{b}): {tau} vs {oracle}");
            }
        }
    }
}

#[test]
fn independent_gaussian_draws_are_uncorrelated() {
    let c = CopulaSpec::gaussian(Correlation::identity(3));
    let draws = c.sample(3, 50_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let tau = kendall_continuous(&column(&draws, a), &column(&draws, b));
        assert!(tau.abs() < 0.02, "τ = {tau}");
    }
}

#[test]
fn empirical_cdf_of_draws_matches_cdf() {
    let n = 40_000;
    let bound = 3.0 / (n as f64).sqrt();
    let probes = [[0.2, 0.3], [0.5, 0.5], [0.8, 0.4], [0.9, 0.95]];
    for c in bivariate_members() {
        let draws = c.sample(2, n, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for u in probes {
            let hits = draws.iter().filter(|d| d[0] <= u[0] && d[1] <= u[1]).count();
            let emp = hits as f64 / n as f64;
            let want = c.cdf(&u).unwrap();
            assert!((emp - want).abs() < bound, "{c:?} at {u:?}: {emp} vs {want}");
        }
        for d in &draws {
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn negative_frank_has_no_higher_dimensional_sampler() {
    let c = CopulaSpec::frank(-2.0).unwrap();
    let err = c.sample(3, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)), "{err}");
}

proptest! {
    #[test]
    fn reparameterization_round_trips(theta in -6.0f64..6.0) {
        for family in [CopulaFamily::Gumbel, CopulaFamily::Frank, CopulaFamily::Gaussian] {
            let c = CopulaSpec::from_unconstrained(family, &[theta]).unwrap();
            let back = CopulaSpec::from_unconstrained(family, &c.to_unconstrained()).unwrap();
            prop_assert!((back.scalar_param() - c.scalar_param()).abs() < 1e-12);
        }
    }

    #[test]
    fn rectangles_are_nonnegative(
        phi in 1.0f64..12.0,
        u in prop::array::uniform4(0.0f64..1.0),
    ) {
        let (u1, u2) = (u[0].min(u[1]), u[0].max(u[1]));
        let (v1, v2) = (u[2].min(u[3]), u[2].max(u[3]));
        for c in [CopulaSpec::gumbel(phi).unwrap(), CopulaSpec::frank(phi - 6.0).unwrap()] {
            let vol = c.cdf(&[u2, v2]).unwrap() - c.cdf(&[u1, v2]).unwrap()
                - c.cdf(&[u2, v1]).unwrap() + c.cdf(&[u1, v1]).unwrap();
            prop_assert!(vol >= -1e-12, "{:?} {}", c, vol);
        }
    }
}
