//! Monte-Carlo multi-step forecasts from the pair-implied marginals.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::SystemFit;
use crate::error::{domain, Error, Result};
use crate::marginal::{MarginalSpec, StateSpace};
use crate::pairlik::PairModel;

/// How the K − 1 pair-implied distributions of a series are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// One draw per pair, then the mode of the draws.
    A,
    /// Average the distributions, then draw once.
    B,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Method::A),
            "B" | "b" => Ok(Method::B),
            _ => Err(domain(format!("unknown forecast method '{s}' (expected A or B)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::A => "A",
            Method::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Summary {
    Mode,
    Median,
}

impl FromStr for Summary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mode" => Ok(Summary::Mode),
            "median" => Ok(Summary::Median),
            _ => Err(domain(format!("unknown summary '{s}' (expected mode or median)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub n_paths: usize,
    pub method: Method,
    pub summary: Summary,
    pub seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            horizon: 1,
            n_paths: 10_000,
            method: Method::B,
            summary: Summary::Mode,
            seed: 0,
        }
    }
}

/// Bivariate models of every pair, each with its own estimates.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    names: Vec<String>,
    spec: MarginalSpec,
    pairs: Vec<PairModel>,
    /// `partners[k]` lists `(pair index, k is the first series)`.
    partners: Vec<Vec<(usize, bool)>>,
}

impl ForecastModel {
    pub fn new(names: Vec<String>, pairs: Vec<PairModel>) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| domain("a forecast model needs at least one pair"))?;
        let spec = first.spec_r.clone();
        let k = spec.n_series();
        if names.len() != k {
            return Err(Error::Dimension(format!("{} names for {k} series", names.len())));
        }
        let mut partners = vec![Vec::new(); k];
        for (i, m) in pairs.iter().enumerate() {
            if m.spec_r.state_spaces != spec.state_spaces
                || m.spec_r.lag_order != spec.lag_order
                || m.spec_r.coding != spec.coding
            {
                return Err(domain("all pair models must share state spaces, lag order and coding"));
            }
            if partners[m.r].iter().chain(&partners[m.s]).any(|&(j, _)| {
                let o: &PairModel = &pairs[j];
                (o.r, o.s) == (m.r, m.s)
            }) {
                return Err(domain(format!("pair ({}, {}) given twice", m.r, m.s)));
            }
            partners[m.r].push((i, true));
            partners[m.s].push((i, false));
        }
        if let Some(lonely) = partners.iter().position(Vec::is_empty) {
            return Err(domain(format!("series {lonely} belongs to no pair")));
        }
        Ok(Self {
            names,
            spec,
            pairs,
            partners,
        })
    }

    /// Uses each pair's own estimates.
    pub fn from_system(fit: &SystemFit) -> Result<Self> {
        let spec = |k| MarginalSpec::new(k, fit.lag_order, fit.coding, fit.state_spaces.clone());
        let pairs = fit
            .pair_fits
            .iter()
            .map(|f| PairModel::from_vector(spec(f.pair.r)?, spec(f.pair.s)?, f.pair.family, &f.theta))
            .collect::<Result<Vec<_>>>()?;
        Self::new(fit.series_names.clone(), pairs)
    }

    pub fn n_series(&self) -> usize {
        self.spec.n_series()
    }

    pub fn lag_order(&self) -> usize {
        self.spec.lag_order
    }

    pub fn state_spaces(&self) -> &[StateSpace] {
        &self.spec.state_spaces
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn pairs(&self) -> &[PairModel] {
        &self.pairs
    }

    fn find_pair(&self, a: usize, b: usize) -> Option<usize> {
        let (r, s) = (a.min(b), a.max(b));
        self.pairs.iter().position(|m| (m.r, m.s) == (r, s))
    }

    fn grids(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        self.pairs.iter().map(|m| m.joint_probs(x)).collect()
    }
}

fn margin(grid: &[Vec<f64>], first: bool) -> Vec<f64> {
    if first {
        grid.iter().map(|row| row.iter().sum()).collect()
    } else {
        (0..grid[0].len()).map(|j| grid.iter().map(|row| row[j]).sum()).collect()
    }
}

/// Distribution of series `k` at the next time point implied by the
/// bivariate model of `(k, partner)`.
pub fn pair_marginal_probs<S: AsRef<[usize]>>(
    model: &ForecastModel,
    k: usize,
    partner: usize,
    history: &[S],
) -> Result<Vec<f64>> {
    if k == partner {
        return Err(domain("a series is not its own partner"));
    }
    let idx = model
        .find_pair(k, partner)
        .ok_or_else(|| domain(format!("no bivariate model for series {k} and {partner}")))?;
    let x = model.spec.build_regressors(history)?;
    let grid = model.pairs[idx].joint_probs(&x)?;
    Ok(margin(&grid, k < partner))
}

/// Index drawn from a probability vector by inversion of one uniform.
fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut cum = 0.0;
    for (j, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return j;
        }
    }
    probs.len() - 1
}

/// Most frequent index, ties broken uniformly at random.
fn mode_of<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] >= max - 1e-12).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Point forecast from a frequency vector (0-based state).
pub fn summarize<R: Rng + ?Sized>(frequencies: &[f64], summary: Summary, rng: &mut R) -> usize {
    match summary {
        Summary::Mode => mode_of(frequencies, rng),
        Summary::Median => {
            let mut cum = 0.0;
            for (j, f) in frequencies.iter().enumerate() {
                cum += f;
                if cum >= 0.5 - 1e-12 {
                    return j;
                }
            }
            frequencies.len() - 1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub names: Vec<String>,
    pub state_spaces: Vec<StateSpace>,
    pub n_paths: usize,
    /// `frequencies[h][k][state]` for horizons 1..=H.
    pub frequencies: Vec<Vec<Vec<f64>>>,
    /// `point[h][k]`, a 0-based state.
    pub point: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub horizon: usize,
    pub series: String,
    pub state: i64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub horizon: usize,
    pub series: String,
    pub forecast: i64,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequency_records(&self) -> Vec<FrequencyRecord> {
        let mut out = Vec::new();
        for (h, per_series) in self.frequencies.iter().enumerate() {
            for (k, freq) in per_series.iter().enumerate() {
                for (j, &f) in freq.iter().enumerate() {
                    out.push(FrequencyRecord {
                        horizon: h + 1,
                        series: self.names[k].clone(),
                        state: self.state_spaces[k].label(j),
                        frequency: f,
                    });
                }
            }
        }
        out
    }

    pub fn point_records(&self) -> Vec<PointRecord> {
        let mut out = Vec::new();
        for (h, per_series) in self.point.iter().enumerate() {
            for (k, &z) in per_series.iter().enumerate() {
                out.push(PointRecord {
                    horizon: h + 1,
                    series: self.names[k].clone(),
                    forecast: self.state_spaces[k].label(z),
                });
            }
        }
        out
    }
}

/// Simulates `n_paths` future paths of length `horizon` from the end of
/// `history` (oldest first). Path `b` uses stream `b` of the seed.
pub fn forecast_paths<S: AsRef<[usize]> + Sync>(
    model: &ForecastModel,
    config: &ForecastConfig,
    history: &[S],
) -> Result<ForecastResult> {
    if config.n_paths == 0 {
        return Err(domain("at least one forecast path is required"));
    }
    if config.horizon == 0 {
        return Err(domain("forecast horizon must be at least 1"));
    }
    let p = model.lag_order();
    if history.len() < p {
        return Err(Error::InsufficientHistory {
            needed: p,
            got: history.len(),
        });
    }
    let k = model.n_series();
    let start: Vec<Vec<usize>> = history[history.len() - p..]
        .iter()
        .map(|h| h.as_ref().to_vec())
        .collect();
    model.spec.build_regressors(&start)?;
    let dims: Vec<usize> = model.state_spaces().iter().map(StateSpace::len).collect();
    let zero_counts = || -> Vec<Vec<Vec<u64>>> {
        (0..config.horizon)
            .map(|_| dims.iter().map(|&d| vec![0u64; d]).collect())
            .collect()
    };

    let one_path = |b: usize, counts: &mut Vec<Vec<Vec<u64>>>| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(b as u64);
        let mut window = start.clone();
        let mut draws = Vec::with_capacity(k);
        for counts_h in counts.iter_mut() {
            let x = model.spec.build_regressors(&window)?;
            let grids = model.grids(&x)?;
            let mut z = Vec::with_capacity(k);
            for m in 0..k {
                let margins: Vec<Vec<f64>> = model.partners[m]
                    .iter()
                    .map(|&(i, first)| margin(&grids[i], first))
                    .collect();
                let state = match config.method {
                    Method::A => {
                        draws.clear();
                        draws.resize(dims[m], 0.0);
                        for pm in &margins {
                            draws[draw(pm, &mut rng)] += 1.0;
                        }
                        mode_of(&draws, &mut rng)
                    }
                    Method::B => {
                        let n = margins.len() as f64;
                        let avg: Vec<f64> = (0..dims[m])
                            .map(|j| margins.iter().map(|pm| pm[j]).sum::<f64>() / n)
                            .collect();
                        draw(&avg, &mut rng)
                    }
                };
                counts_h[m][state] += 1;
                z.push(state);
            }
            window.remove(0);
            window.push(z);
        }
        Ok(())
    };

    let counts = (0..config.n_paths)
        .into_par_iter()
        .try_fold(zero_counts, |mut acc, b| {
            one_path(b, &mut acc)?;
            Ok::<_, Error>(acc)
        })
        .try_reduce(zero_counts, |mut a, b| {
            for (ah, bh) in a.iter_mut().zip(b) {
                for (ak, bk) in ah.iter_mut().zip(bh) {
                    for (x, y) in ak.iter_mut().zip(bk) {
                        *x += y;
                    }
                }
            }
            Ok(a)
        })?;

    let n = config.n_paths as f64;
    let frequencies: Vec<Vec<Vec<f64>>> = counts
        .iter()
        .map(|h| h.iter().map(|c| c.iter().map(|&v| v as f64 / n).collect()).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let point = frequencies
        .iter()
        .map(|h| h.iter().map(|f| summarize(f, config.summary, &mut rng)).collect())
        .collect();
    Ok(ForecastResult {
        names: model.names.clone(),
        state_spaces: model.state_spaces().to_vec(),
        n_paths: config.n_paths,
        frequencies,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::CopulaSpec;
    use crate::marginal::{Coding, MarginalParams};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn summary_examples() {
        assert_eq!(summarize(&[0.1, 0.6, 0.3], Summary::Mode, &mut rng()), 1);
        assert_eq!(summarize(&[0.1, 0.6, 0.3], Summary::Median, &mut rng()), 1);
        assert_eq!(summarize(&[0.5, 0.3, 0.2], Summary::Median, &mut rng()), 0);
        let mut r = rng();
        let firsts = (0..4000)
            .filter(|_| summarize(&[0.4, 0.4, 0.2], Summary::Mode, &mut r) == 0)
            .count();
        assert!((firsts as f64 / 4000.0 - 0.5).abs() < 0.03, "{firsts}");
    }

    fn model(copula: CopulaSpec, slopes: f64) -> ForecastModel {
        let sp = vec![StateSpace::contiguous(3).unwrap(); 3];
        let spec = |k| MarginalSpec::new(k, 1, Coding::Linear, sp.clone()).unwrap();
        let marg = |a: f64| MarginalParams::new(vec![a, a + 1.0], vec![slopes; 3]).unwrap();
        let pairs = [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(r, s)| PairModel::new(spec(r), spec(s), marg(-0.3 + 0.1 * r as f64), marg(0.2 * s as f64 - 0.4), copula.clone()).unwrap())
            .collect();
        ForecastModel::new(vec!["a".into(), "b".into(), "c".into()], pairs).unwrap()
    }

    #[test]
    fn pair_marginals_sum_to_one_and_match_cond_probs_under_independence() {
        let m = model(CopulaSpec::gumbel(1.0).unwrap(), 0.2);
        let hist = [[2usize, 0, 1]];
        let p = pair_marginal_probs(&m, 0, 2, &hist).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let x = m.spec.build_regressors(&hist).unwrap();
        let want = m.pairs[1].marg_r.cond_probs(&x, 3).unwrap();
        for (a, b) in p.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(pair_marginal_probs(&m, 1, 1, &hist).is_err());
    }

    #[test]
    fn degenerate_system_is_certain() {
        // Very high intercepts put all mass on the lowest state.
        let sp = vec![StateSpace::contiguous(2).unwrap(); 2];
        let spec = |k| MarginalSpec::new(k, 1, Coding::Indicator, sp.clone()).unwrap();
        let marg = MarginalParams::new(vec![60.0], vec![0.0, 0.0]).unwrap();
        let pair = PairModel::new(spec(0), spec(1), marg.clone(), marg, CopulaSpec::frank(2.0).unwrap()).unwrap();
        let m = ForecastModel::new(vec!["x".into(), "y".into()], vec![pair]).unwrap();
        for method in [Method::A, Method::B] {
            let cfg = ForecastConfig {
                horizon: 3,
                n_paths: 200,
                method,
                ..ForecastConfig::default()
            };
            let r = forecast_paths(&m, &cfg, &[[1usize, 1]]).unwrap();
            for h in &r.frequencies {
                for f in h {
                    assert_eq!(f, &vec![1.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_normalised() {
        let m = model(CopulaSpec::frank(4.0).unwrap(), 0.3);
        let cfg = ForecastConfig {
            horizon: 4,
            n_paths: 3000,
            method: Method::A,
            seed: 9,
            ..ForecastConfig::default()
        };
        let a = forecast_paths(&m, &cfg, &[[0usize, 1, 2]]).unwrap();
        let b = forecast_paths(&m, &cfg, &[[0usize, 1, 2]]).unwrap();
        assert_eq!(a, b);
        for h in &a.frequencies {
            for f in h {
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(a.frequency_records().len(), 4 * 3 * 3);
        assert!(forecast_paths(&m, &ForecastConfig { n_paths: 0, ..cfg }, &[[0usize, 1, 2]]).is_err());
    }
}
