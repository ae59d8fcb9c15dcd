//! Simulation of K-variate ordinal systems and replication studies.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{all_pairs, fit_system, CopulaSharing, Estimator, SystemConfig};
use crate::copula::{CopulaSpec, Correlation};
use crate::data::{quantile_sorted, StatePanel};
use crate::error::{domain, Error, Result};
use crate::marginal::{inv_cdf, Coding, MarginalParams, MarginalSpec, StateSpace};
use crate::pairlik::FitOptions;

fn default_burn_in() -> usize {
    100
}

fn default_replications() -> usize {
    1
}

/// Data-generating process plus study size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub names: Vec<String>,
    /// Labels of every series' states.
    pub states: Vec<StateSpace>,
    pub lag_order: usize,
    pub coding: Coding,
    pub marginals: Vec<MarginalParams>,
    /// K-variate copula of the contemporaneous innovations.
    pub copula: CopulaSpec,
    /// Retained sample length T.
    pub t_len: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// Three 3-state series with indicator-coded first-order lags coupled by
    /// a trivariate Gumbel copula with φ = 2.
    pub fn trivariate_gumbel(t_len: usize) -> Self {
        let m = |a: [f64; 2], b: [f64; 6]| MarginalParams {
            intercepts: a.to_vec(),
            slopes: b.to_vec(),
        };
        Self {
            names: vec!["Z1".into(), "Z2".into(), "Z3".into()],
            states: vec![StateSpace::contiguous(3).expect("3 states"); 3],
            lag_order: 1,
            coding: Coding::Indicator,
            marginals: vec![
                m([-0.5, 0.5], [0.5, 0.4, 0.15, 0.25, 0.10, 0.20]),
                m([-0.3, 0.7], [0.15, 0.25, 0.30, 0.60, 0.25, 0.40]),
                m([-0.4, 0.8], [0.20, 0.30, 0.15, 0.25, 0.40, 0.70]),
            ],
            copula: CopulaSpec::Gumbel { phi: 2.0 },
            t_len,
            burn_in: 100,
            replications: 1,
            seed: 0,
        }
    }

    /// The first two series of [`Self::trivariate_gumbel`] without the third,
    /// coupled by a bivariate Gumbel copula with φ = 2.
    pub fn bivariate_gumbel(t_len: usize) -> Self {
        let full = Self::trivariate_gumbel(t_len);
        let drop_third = |m: &MarginalParams| MarginalParams {
            intercepts: m.intercepts.clone(),
            slopes: m.slopes[..4].to_vec(),
        };
        Self {
            names: full.names[..2].to_vec(),
            states: full.states[..2].to_vec(),
            marginals: full.marginals[..2].iter().map(drop_third).collect(),
            ..full
        }
    }

    /// Three 3-state series with linear first-order lags coupled by a
    /// Gaussian copula with correlations (0.5, −0.3, 0.2).
    pub fn trivariate_gaussian(t_len: usize) -> Self {
        let m = |a: [f64; 2], b: [f64; 3]| MarginalParams {
            intercepts: a.to_vec(),
            slopes: b.to_vec(),
        };
        Self {
            names: vec!["Z1".into(), "Z2".into(), "Z3".into()],
            states: vec![StateSpace::contiguous(3).expect("3 states"); 3],
            lag_order: 1,
            coding: Coding::Linear,
            marginals: vec![
                m([-0.5, 0.5], [0.4, 0.2, 0.15]),
                m([-0.3, 0.7], [0.15, 0.35, 0.2]),
                m([-0.4, 0.8], [0.3, 0.2, 0.45]),
            ],
            copula: CopulaSpec::Gaussian {
                corr: Correlation::from_upper(3, &[0.5, -0.3, 0.2]).expect("positive definite"),
            },
            t_len,
            burn_in: 100,
            replications: 1,
            seed: 0,
        }
    }

    pub fn n_series(&self) -> usize {
        self.states.len()
    }

    pub fn specs(&self) -> Result<Vec<MarginalSpec>> {
        (0..self.n_series())
            .map(|k| MarginalSpec::new(k, self.lag_order, self.coding, self.states.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_series();
        if k < 2 {
            return Err(domain("a scenario needs at least two series"));
        }
        if self.marginals.len() != k {
            return Err(Error::Dimension(format!("{} marginals for {k} series", self.marginals.len())));
        }
        if !self.names.is_empty() && self.names.len() != k {
            return Err(Error::Dimension(format!("{} names for {k} series", self.names.len())));
        }
        for (spec, params) in self.specs()?.iter().zip(&self.marginals) {
            params.check_against(spec)?;
        }
        if self.t_len <= self.lag_order {
            return Err(domain(format!("T = {} must exceed the lag order {}", self.t_len, self.lag_order)));
        }
        if let CopulaSpec::Gaussian { corr } = &self.copula {
            if corr.dim() != k {
                return Err(Error::Dimension(format!("{}-dimensional copula for {k} series", corr.dim())));
            }
        }
        Ok(())
    }

    /// True value of the global parameter vector under `sharing`.
    pub fn truth(&self, sharing: CopulaSharing) -> Result<Vec<f64>> {
        let mut v: Vec<f64> = self.marginals.iter().flat_map(MarginalParams::to_vec).collect();
        match (&self.copula, sharing) {
            (CopulaSpec::Gaussian { corr }, CopulaSharing::PerPair) => {
                v.extend(all_pairs(self.n_series()).into_iter().map(|(r, s)| corr.get(r, s)));
            }
            (CopulaSpec::Gaussian { .. }, CopulaSharing::Common) => {
                return Err(Error::Unsupported("a common Gaussian correlation is not a scenario parameter".into()))
            }
            (c, CopulaSharing::PerPair) => {
                v.extend(std::iter::repeat_n(c.scalar_param(), all_pairs(self.n_series()).len()))
            }
            (c, CopulaSharing::Common) => v.push(c.scalar_param()),
        }
        Ok(v)
    }

    pub fn system_config(&self, sharing: CopulaSharing) -> SystemConfig {
        SystemConfig {
            sharing,
            parallel: false,
            ..SystemConfig::new(self.lag_order, self.coding, self.copula.family())
        }
    }

    /// Random number generator of replication `rep`.
    pub fn rng(&self, rep: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        rng
    }
}

/// Draws a K × T state panel: uniform random initial states, then
/// `T + burn_in` steps of copula uniforms mapped through the conditional
/// inverse CDFs, keeping the last T.
pub fn simulate_system<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<StatePanel> {
    config.validate()?;
    let k = config.n_series();
    let p = config.lag_order;
    let specs = config.specs()?;
    let n = config.t_len + config.burn_in;
    let mut path: Vec<Vec<usize>> = (0..p)
        .map(|_| config.states.iter().map(|s| rng.random_range(0..s.len())).collect())
        .collect();
    let uniforms = config.copula.sample(k, n, rng)?;
    path.reserve(n);
    for u in uniforms {
        let x = specs[0].build_regressors(&path[path.len() - p..])?;
        let z: Vec<usize> = (0..k)
            .map(|m| {
                let cdf = config.marginals[m].cond_cdf(&x, specs[m].n_states())?;
                Ok(inv_cdf(&cdf, u[m]))
            })
            .collect::<Result<_>>()?;
        path.push(z);
    }
    let kept = &path[p + config.burn_in..];
    let states: Vec<Vec<usize>> = (0..k).map(|m| kept.iter().map(|z| z[m]).collect()).collect();
    let mut panel = StatePanel::from_states(states, config.states.clone())?;
    if !config.names.is_empty() {
        panel.names = config.names.clone();
    }
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// Every pair fit converged without tripping the parameter guard.
    pub converged: bool,
    /// Set when the fit failed outright; estimates are then empty.
    pub error: Option<String>,
    pub mean: Vec<f64>,
    pub weighted: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub se_weighted: Vec<f64>,
    pub mse_mean: f64,
    pub mse_weighted: f64,
    pub seconds: f64,
}

impl ReplicationRecord {
    pub fn estimate(&self, estimator: Estimator) -> &[f64] {
        match estimator {
            Estimator::Mean => &self.mean,
            Estimator::Weighted => &self.weighted,
        }
    }

    pub fn se(&self, estimator: Estimator) -> &[f64] {
        match estimator {
            Estimator::Mean => &self.se_mean,
            Estimator::Weighted => &self.se_weighted,
        }
    }

    pub fn mse(&self, estimator: Estimator) -> f64 {
        match estimator {
            Estimator::Mean => self.mse_mean,
            Estimator::Weighted => self.mse_weighted,
        }
    }

    pub fn usable(&self) -> bool {
        self.converged && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStudy {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub t_len: usize,
    pub records: Vec<ReplicationRecord>,
}

impl ReplicationStudy {
    pub fn usable(&self) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(|r| r.usable())
    }

    /// Replications left out of the summaries.
    pub fn excluded(&self) -> usize {
        self.records.len() - self.usable().count()
    }

    /// Estimates of coordinate `i` over the usable replications.
    pub fn estimates(&self, estimator: Estimator, i: usize) -> Vec<f64> {
        self.usable().map(|r| r.estimate(estimator)[i]).collect()
    }

    pub fn mse(&self, estimator: Estimator) -> Vec<f64> {
        self.usable().map(|r| r.mse(estimator)).collect()
    }

    pub fn median_mse(&self, estimator: Estimator) -> f64 {
        median(&self.mse(estimator))
    }
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Type-7 sample quantile; NaN for empty input.
pub fn quantile(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

/// Unbiased sample variance.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn mse(truth: &[f64], est: &[f64]) -> f64 {
    truth.iter().zip(est).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

/// Simulates, fits and synthesises `config.replications` independent
/// samples. Replication `b` uses stream `b` of the scenario seed, so the
/// result does not depend on scheduling.
pub fn run_replication_study(
    config: &ScenarioConfig,
    sharing: CopulaSharing,
    options: &FitOptions,
) -> Result<ReplicationStudy> {
    config.validate()?;
    let truth = config.truth(sharing)?;
    let system = config.system_config(sharing);
    let one = |b: usize| -> Result<ReplicationRecord> {
        let mut rng = config.rng(b as u64);
        let panel = simulate_system(config, &mut rng)?;
        let start = Instant::now();
        let fit = fit_system(&panel, &system, options);
        let seconds = start.elapsed().as_secs_f64();
        Ok(match fit {
            Ok(fit) => ReplicationRecord {
                replication: b,
                converged: fit.converged() && fit.pair_fits.iter().all(|f| !f.guard_tripped),
                error: None,
                mse_mean: mse(&truth, &fit.mean),
                mse_weighted: mse(&truth, &fit.weighted),
                se_mean: fit.se(Estimator::Mean),
                se_weighted: fit.se(Estimator::Weighted),
                mean: fit.mean,
                weighted: fit.weighted,
                seconds,
            },
            Err(e) => ReplicationRecord {
                replication: b,
                converged: false,
                error: Some(e.to_string()),
                mean: Vec::new(),
                weighted: Vec::new(),
                se_mean: Vec::new(),
                se_weighted: Vec::new(),
                mse_mean: f64::NAN,
                mse_weighted: f64::NAN,
                seconds,
            },
        })
    };
    let records = (0..config.replications)
        .into_par_iter()
        .map(one)
        .collect::<Result<Vec<_>>>()?;
    let names = {
        let panel_names: Vec<String> = if config.names.is_empty() {
            (1..=config.n_series()).map(|k| format!("Z{k}")).collect()
        } else {
            config.names.clone()
        };
        let specs = config.specs()?;
        let mut names: Vec<String> = specs.iter().flat_map(|s| s.param_names(&panel_names)).collect();
        match sharing {
            CopulaSharing::PerPair => names.extend(all_pairs(config.n_series()).into_iter().map(|(r, s)| {
                crate::pairlik::copula_param_name(&panel_names, r, s, config.copula.family())
            })),
            CopulaSharing::Common => names.push(format!(
                "copula:{}",
                if config.copula.family() == crate::copula::CopulaFamily::Gaussian {
                    "rho"
                } else {
                    "phi"
                }
            )),
        }
        names
    };
    Ok(ReplicationStudy {
        names,
        truth,
        t_len: config.t_len,
        records,
    })
}
