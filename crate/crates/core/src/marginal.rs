//! Ordinal autoregressive cumulative-logit marginals.
//!
//! Series `k` at time `t` has conditional CDF
//! `γ_j = logistic(α_j + βᵀx_t)`, `j = 1..d_k − 1`, where `x_t` is built from
//! the lagged states of all series. States are 0-based indices into a
//! [`StateSpace`]; index 0 is the lowest category.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Ordered set of labels a series can take.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct StateSpace {
    labels: Vec<i64>,
}

impl StateSpace {
    pub fn new(labels: Vec<i64>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(domain(format!(
                "a state space needs at least 2 states, got {}",
                labels.len()
            )));
        }
        if labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain(format!("state labels must be strictly increasing: {labels:?}")));
        }
        Ok(Self { labels })
    }

    /// Labels `1..=d`.
    pub fn contiguous(d: usize) -> Result<Self> {
        Self::new((1..=d as i64).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> i64 {
        self.labels[state]
    }

    pub fn index_of(&self, label: i64) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }
}

impl TryFrom<Vec<i64>> for StateSpace {
    type Error = Error;
    fn try_from(labels: Vec<i64>) -> Result<Self> {
        Self::new(labels)
    }
}

impl From<StateSpace> for Vec<i64> {
    fn from(s: StateSpace) -> Self {
        s.labels
    }
}

/// How lagged states enter the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    /// One indicator per non-reference level (reference = lowest state).
    Indicator,
    /// The state label as a single numeric regressor.
    Linear,
}

impl std::str::FromStr for Coding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "indicator" | "dummy" => Ok(Coding::Indicator),
            "linear" => Ok(Coding::Linear),
            other => Err(Error::Unsupported(format!("regressor coding '{other}'"))),
        }
    }
}

/// Structure of the marginal model of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub series: usize,
    pub lag_order: usize,
    pub coding: Coding,
    pub state_spaces: Vec<StateSpace>,
}

impl MarginalSpec {
    pub fn new(series: usize, lag_order: usize, coding: Coding, state_spaces: Vec<StateSpace>) -> Result<Self> {
        if lag_order == 0 {
            return Err(domain("lag order must be at least 1"));
        }
        if series >= state_spaces.len() {
            return Err(Error::Dimension(format!(
                "series index {series} out of range for {} series",
                state_spaces.len()
            )));
        }
        Ok(Self {
            series,
            lag_order,
            coding,
            state_spaces,
        })
    }

    pub fn n_series(&self) -> usize {
        self.state_spaces.len()
    }

    pub fn n_states(&self) -> usize {
        self.state_spaces[self.series].len()
    }

    pub fn n_intercepts(&self) -> usize {
        self.n_states() - 1
    }

    fn block_width(&self, m: usize) -> usize {
        match self.coding {
            Coding::Indicator => self.state_spaces[m].len() - 1,
            Coding::Linear => 1,
        }
    }

    pub fn n_regressors(&self) -> usize {
        let per_lag: usize = (0..self.n_series()).map(|m| self.block_width(m)).sum();
        per_lag * self.lag_order
    }

    pub fn n_params(&self) -> usize {
        self.n_intercepts() + self.n_regressors()
    }

    /// Names of intercepts then slopes, using 1-based series numbers.
    pub fn param_names(&self, series_names: &[String]) -> Vec<String> {
        let name = |m: usize| {
            series_names
                .get(m)
                .cloned()
                .unwrap_or_else(|| format!("Z{}", m + 1))
        };
        // Intercept j is the threshold P(Z <= label_j), so it is named by label.
        let labels = self.state_spaces[self.series].labels();
        let mut out: Vec<String> = labels[..self.n_intercepts()]
            .iter()
            .map(|lab| format!("{}:alpha0{lab}", name(self.series)))
            .collect();
        for g in 1..=self.lag_order {
            for m in 0..self.n_series() {
                match self.coding {
                    Coding::Indicator => {
                        for &lab in &self.state_spaces[m].labels()[1..] {
                            out.push(format!("{}:{}[t-{g}]={lab}", name(self.series), name(m)));
                        }
                    }
                    Coding::Linear => out.push(format!("{}:{}[t-{g}]", name(self.series), name(m))),
                }
            }
        }
        out
    }

    /// Regressors for time `t` given an accessor `state(m, g)` returning the
    /// state of series `m` at `t − g`.
    fn fill_regressors(&self, state: impl Fn(usize, usize) -> usize, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        for g in 1..=self.lag_order {
            for (m, space) in self.state_spaces.iter().enumerate() {
                let z = state(m, g);
                if z >= space.len() {
                    return Err(domain(format!("state {z} invalid for series {m} with {} states", space.len())));
                }
                match self.coding {
                    Coding::Indicator => {
                        for level in 1..space.len() {
                            out.push(if z == level { 1.0 } else { 0.0 });
                        }
                    }
                    Coding::Linear => out.push(space.label(z) as f64),
                }
            }
        }
        Ok(())
    }

    /// Regressor vector from the most recent `p` state vectors
    /// (`history.last()` is time `t − 1`).
    pub fn build_regressors<S: AsRef<[usize]>>(&self, history: &[S]) -> Result<Vec<f64>> {
        if history.len() < self.lag_order {
            return Err(Error::InsufficientHistory {
                needed: self.lag_order,
                got: history.len(),
            });
        }
        if let Some(bad) = history.iter().find(|h| h.as_ref().len() != self.n_series()) {
            return Err(Error::Dimension(format!(
                "history vector of length {} for {} series",
                bad.as_ref().len(),
                self.n_series()
            )));
        }
        let n = history.len();
        let mut out = Vec::with_capacity(self.n_regressors());
        self.fill_regressors(|m, g| history[n - g].as_ref()[m], &mut out)?;
        Ok(out)
    }

    /// Regressors at time `t` of a full panel (`states[m][t]`).
    pub(crate) fn regressors_at(&self, states: &[Vec<usize>], t: usize, out: &mut Vec<f64>) -> Result<()> {
        if t < self.lag_order {
            return Err(Error::InsufficientHistory {
                needed: self.lag_order,
                got: t,
            });
        }
        self.fill_regressors(|m, g| states[m][t - g], out)
    }
}

/// Coefficients of one marginal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl MarginalParams {
    pub fn new(intercepts: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let p = Self { intercepts, slopes };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if self.intercepts.is_empty() {
            return Err(domain("at least one intercept is required"));
        }
        if self.intercepts.iter().chain(&self.slopes).any(|v| !v.is_finite()) {
            return Err(domain("marginal parameters must be finite"));
        }
        if self.intercepts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain(format!(
                "intercepts must be strictly increasing: {:?}",
                self.intercepts
            )));
        }
        Ok(())
    }

    pub fn check_against(&self, spec: &MarginalSpec) -> Result<()> {
        self.check()?;
        if self.intercepts.len() != spec.n_intercepts() || self.slopes.len() != spec.n_regressors() {
            return Err(Error::Dimension(format!(
                "marginal of series {} expects {} intercepts and {} slopes, got {} and {}",
                spec.series,
                spec.n_intercepts(),
                spec.n_regressors(),
                self.intercepts.len(),
                self.slopes.len()
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.intercepts.len() + self.slopes.len()
    }

    /// Intercepts then slopes.
    pub fn to_vec(&self) -> Vec<f64> {
        self.intercepts.iter().chain(&self.slopes).copied().collect()
    }

    pub fn from_slice(n_intercepts: usize, v: &[f64]) -> Result<Self> {
        Self::new(v[..n_intercepts].to_vec(), v[n_intercepts..].to_vec())
    }

    /// First intercept, log-increments of the remaining intercepts, slopes.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.push(self.intercepts[0]);
        out.extend(self.intercepts.windows(2).map(|w| (w[1] - w[0]).ln()));
        out.extend_from_slice(&self.slopes);
        out
    }

    pub fn from_unconstrained(n_intercepts: usize, theta: &[f64]) -> Self {
        let mut intercepts = Vec::with_capacity(n_intercepts);
        let mut a = theta[0];
        intercepts.push(a);
        for &d in &theta[1..n_intercepts] {
            a += d.exp();
            intercepts.push(a);
        }
        Self {
            intercepts,
            slopes: theta[n_intercepts..].to_vec(),
        }
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.slopes.iter().zip(x).map(|(b, x)| b * x).sum()
    }

    fn check_call(&self, x: &[f64], d: usize) -> Result<()> {
        self.check()?;
        if d != self.intercepts.len() + 1 {
            return Err(Error::Dimension(format!(
                "{} intercepts cannot describe {d} states",
                self.intercepts.len()
            )));
        }
        if x.len() != self.slopes.len() {
            return Err(Error::Dimension(format!(
                "{} regressors for {} slopes",
                x.len(),
                self.slopes.len()
            )));
        }
        Ok(())
    }

    /// Conditional CDF (γ_1, …, γ_d) with γ_d = 1.
    pub fn cond_cdf(&self, x: &[f64], d: usize) -> Result<Vec<f64>> {
        self.check_call(x, d)?;
        let lp = self.linear_predictor(x);
        let mut g: Vec<f64> = self.intercepts.iter().map(|a| logistic(a + lp)).collect();
        g.push(1.0);
        Ok(g)
    }

    /// Conditional state probabilities π_j = γ_j − γ_{j−1}.
    pub fn cond_probs(&self, x: &[f64], d: usize) -> Result<Vec<f64>> {
        let g = self.cond_cdf(x, d)?;
        Ok(cdf_to_probs(&g))
    }

    /// (F(z − 1), F(z)) at linear predictor `lp`, with F(−1) = 0 and F(d − 1) = 1.
    #[inline]
    pub(crate) fn cell_bounds(&self, lp: f64, z: usize) -> (f64, f64) {
        let lo = if z == 0 { 0.0 } else { logistic(self.intercepts[z - 1] + lp) };
        let hi = if z == self.intercepts.len() {
            1.0
        } else {
            logistic(self.intercepts[z] + lp)
        };
        (lo, hi)
    }
}

pub fn cdf_to_probs(g: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    g.iter()
        .map(|&c| {
            let p = c - prev;
            prev = c;
            p
        })
        .collect()
}

/// Smallest state index `j` with `γ_j ≥ u`.
pub fn inv_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.iter()
        .position(|&g| g >= u)
        .unwrap_or(cdf.len().saturating_sub(1))
}
