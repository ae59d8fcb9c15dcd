//! Bivariate copula models for pairs of ordinal series: joint PMF by
//! rectangle differences, pair log-likelihood and its maximisation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::copula::{CopulaFamily, CopulaSpec, PairKernel};
use crate::data::StatePanel;
use crate::error::{domain, Error, Result};
use crate::marginal::{logit, Coding, MarginalParams, MarginalSpec, StateSpace, PROB_FLOOR};
use crate::optim::{minimize, numeric_gradient, numeric_jacobian, Minimum, OptimizerConfig};
use crate::transform::{Block, ParamTransform};

pub use crate::optim::numeric_hessian;

/// Regressors and observed states of a panel, precomputed for every time
/// point with a full lag window.
#[derive(Debug, Clone)]
pub struct Design {
    names: Vec<String>,
    lag_order: usize,
    coding: Coding,
    state_spaces: Vec<StateSpace>,
    n_reg: usize,
    x: Vec<f64>,
    /// `states[k][i]` is the state of series k at time `lag_order + i`.
    states: Vec<Vec<usize>>,
}

impl Design {
    pub fn new(panel: &StatePanel, lag_order: usize, coding: Coding) -> Result<Self> {
        let spec = MarginalSpec::new(0, lag_order, coding, panel.state_spaces.clone())?;
        if panel.len() <= lag_order {
            return Err(Error::InsufficientHistory {
                needed: lag_order + 1,
                got: panel.len(),
            });
        }
        let n_reg = spec.n_regressors();
        let rows = panel.len() - lag_order;
        let mut x = Vec::with_capacity(rows * n_reg);
        let mut buf = Vec::with_capacity(n_reg);
        for t in lag_order..panel.len() {
            spec.regressors_at(&panel.states, t, &mut buf)?;
            x.extend_from_slice(&buf);
        }
        Ok(Self {
            names: panel.names.clone(),
            lag_order,
            coding,
            state_spaces: panel.state_spaces.clone(),
            n_reg,
            x,
            states: panel.states.iter().map(|s| s[lag_order..].to_vec()).collect(),
        })
    }

    pub fn n_series(&self) -> usize {
        self.states.len()
    }

    /// Number of likelihood terms, T − p.
    pub fn n_terms(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn n_regressors(&self) -> usize {
        self.n_reg
    }

    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    pub fn coding(&self) -> Coding {
        self.coding
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn state_spaces(&self) -> &[StateSpace] {
        &self.state_spaces
    }

    pub fn spec(&self, k: usize) -> Result<MarginalSpec> {
        MarginalSpec::new(k, self.lag_order, self.coding, self.state_spaces.clone())
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_reg..(i + 1) * self.n_reg]
    }

    pub fn states(&self, k: usize) -> &[usize] {
        &self.states[k]
    }

    /// Intercept start values from smoothed empirical cumulative logits.
    pub fn empirical_intercepts(&self, k: usize) -> Vec<f64> {
        let d = self.state_spaces[k].len();
        let mut counts = vec![0.5; d];
        for &z in &self.states[k] {
            counts[z] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let mut cum = 0.0;
        counts[..d - 1]
            .iter()
            .map(|c| {
                cum += c;
                logit(cum / total)
            })
            .collect()
    }
}

/// Which two series and which copula family form a bivariate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub r: usize,
    pub s: usize,
    pub family: CopulaFamily,
}

impl PairSpec {
    pub fn new(r: usize, s: usize, family: CopulaFamily) -> Result<Self> {
        if r >= s {
            return Err(domain(format!("pair ({r}, {s}) must satisfy r < s")));
        }
        Ok(Self { r, s, family })
    }
}

#[inline]
fn cell(alpha: &[f64], lp: f64, z: usize) -> (f64, f64) {
    let f = |a: f64| 1.0 / (1.0 + (-(a + lp)).exp());
    let lo = if z == 0 { 0.0 } else { f(alpha[z - 1]) };
    let hi = if z == alpha.len() { 1.0 } else { f(alpha[z]) };
    (lo, hi)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pair log-likelihood as a function of the natural parameter vector
/// `[α_r, β_r, α_s, β_s, copula]`.
#[derive(Debug, Clone, Copy)]
pub struct PairObjective<'a> {
    design: &'a Design,
    pair: PairSpec,
    n_int_r: usize,
    n_int_s: usize,
}

impl<'a> PairObjective<'a> {
    pub fn new(design: &'a Design, pair: PairSpec) -> Result<Self> {
        if pair.s >= design.n_series() {
            return Err(Error::Dimension(format!(
                "pair ({}, {}) out of range for {} series",
                pair.r,
                pair.s,
                design.n_series()
            )));
        }
        Ok(Self {
            design,
            pair,
            n_int_r: design.state_spaces[pair.r].len() - 1,
            n_int_s: design.state_spaces[pair.s].len() - 1,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_int_r + self.n_int_s + 2 * self.design.n_reg + 1
    }

    pub fn pair(&self) -> PairSpec {
        self.pair
    }

    pub fn transform(&self) -> ParamTransform {
        let k = self.design.n_reg;
        ParamTransform::new(vec![
            Block::Intercepts(self.n_int_r),
            Block::Free(k),
            Block::Intercepts(self.n_int_s),
            Block::Free(k),
            Block::Copula(self.pair.family),
        ])
    }

    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], &'t [f64], &'t [f64], &'t [f64], f64) {
        let k = self.design.n_reg;
        let (ar, rest) = theta.split_at(self.n_int_r);
        let (br, rest) = rest.split_at(k);
        let (a_s, rest) = rest.split_at(self.n_int_s);
        let (bs, rest) = rest.split_at(k);
        (ar, br, a_s, bs, rest[0])
    }

    fn for_each_term(&self, theta: &[f64], mut sink: impl FnMut(f64)) {
        debug_assert_eq!(theta.len(), self.dim());
        let (ar, br, a_s, bs, c) = self.split(theta);
        let kernel = PairKernel::new(self.pair.family, c);
        let zr = self.design.states(self.pair.r);
        let zs = self.design.states(self.pair.s);
        for i in 0..self.design.n_terms() {
            let x = self.design.row(i);
            let (ulo, uhi) = cell(ar, dot(br, x), zr[i]);
            let (vlo, vhi) = cell(a_s, dot(bs, x), zs[i]);
            let p = kernel.rectangle(ulo, uhi, vlo, vhi);
            sink(if p > PROB_FLOOR { p.ln() } else { PROB_FLOOR.ln() });
        }
    }

    /// Negative log-likelihood; `+inf` for parameters outside the family domain.
    pub fn negloglik(&self, theta: &[f64]) -> f64 {
        if self.pair.family.check_param(theta[theta.len() - 1]).is_err() {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        self.for_each_term(theta, |l| acc += l);
        -acc
    }

    /// Log-likelihood contribution of every time point.
    pub fn loglik_terms(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.design.n_terms());
        if self.pair.family.check_param(theta[theta.len() - 1]).is_err() {
            out.resize(self.design.n_terms(), f64::NAN);
            return out;
        }
        self.for_each_term(theta, |l| out.push(l));
        out
    }

    /// Objective on the unconstrained scale.
    pub fn unconstrained_negloglik(&self, transform: &ParamTransform, eta: &[f64], buf: &mut Vec<f64>) -> f64 {
        transform.to_natural_into(eta, buf);
        self.negloglik(buf)
    }

    /// Default start: empirical logits, zero slopes, near-independence copula.
    pub fn default_start(&self) -> Vec<f64> {
        let k = self.design.n_reg;
        let mut v = self.design.empirical_intercepts(self.pair.r);
        v.extend(std::iter::repeat_n(0.0, k));
        v.extend(self.design.empirical_intercepts(self.pair.s));
        v.extend(std::iter::repeat_n(0.0, k));
        v.push(match self.pair.family {
            CopulaFamily::Gumbel => 1.0 + 1e-6,
            CopulaFamily::Frank => 1e-3,
            CopulaFamily::Gaussian => 0.0,
        });
        v
    }

    pub fn param_names(&self) -> Result<Vec<String>> {
        let names = self.design.names();
        let mut out = self.design.spec(self.pair.r)?.param_names(names);
        out.extend(self.design.spec(self.pair.s)?.param_names(names));
        out.push(copula_param_name(names, self.pair.r, self.pair.s, self.pair.family));
        Ok(out)
    }
}

pub fn copula_param_name(names: &[String], r: usize, s: usize, family: CopulaFamily) -> String {
    let symbol = match family {
        CopulaFamily::Gaussian => "rho",
        _ => "phi",
    };
    let n = |k: usize| names.get(k).cloned().unwrap_or_else(|| format!("Z{}", k + 1));
    format!("{}~{}:{symbol}", n(r), n(s))
}

/// A fully parameterised bivariate model for series `r < s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub r: usize,
    pub s: usize,
    pub spec_r: MarginalSpec,
    pub spec_s: MarginalSpec,
    pub marg_r: MarginalParams,
    pub marg_s: MarginalParams,
    pub copula: CopulaSpec,
}

impl PairModel {
    pub fn new(
        spec_r: MarginalSpec,
        spec_s: MarginalSpec,
        marg_r: MarginalParams,
        marg_s: MarginalParams,
        copula: CopulaSpec,
    ) -> Result<Self> {
        let (r, s) = (spec_r.series, spec_s.series);
        if r >= s {
            return Err(domain(format!("pair ({r}, {s}) must satisfy r < s")));
        }
        if spec_r.lag_order != spec_s.lag_order
            || spec_r.coding != spec_s.coding
            || spec_r.state_spaces != spec_s.state_spaces
        {
            return Err(domain("both marginals of a pair must share lag order, coding and state spaces"));
        }
        marg_r.check_against(&spec_r)?;
        marg_s.check_against(&spec_s)?;
        if let CopulaSpec::Gaussian { corr } = &copula {
            if corr.dim() != 2 {
                return Err(Error::Dimension(format!("pair copula of dimension {}", corr.dim())));
            }
        }
        Ok(Self {
            r,
            s,
            spec_r,
            spec_s,
            marg_r,
            marg_s,
            copula,
        })
    }

    /// Builds a model from a natural parameter vector `[α_r, β_r, α_s, β_s, copula]`.
    pub fn from_vector(spec_r: MarginalSpec, spec_s: MarginalSpec, family: CopulaFamily, theta: &[f64]) -> Result<Self> {
        let nr = spec_r.n_params();
        let ns = spec_s.n_params();
        if theta.len() != nr + ns + 1 {
            return Err(Error::Dimension(format!(
                "pair parameter vector of length {}, expected {}",
                theta.len(),
                nr + ns + 1
            )));
        }
        let marg_r = MarginalParams::from_slice(spec_r.n_intercepts(), &theta[..nr])?;
        let marg_s = MarginalParams::from_slice(spec_s.n_intercepts(), &theta[nr..nr + ns])?;
        let copula = CopulaSpec::bivariate(family, theta[nr + ns])?;
        Self::new(spec_r, spec_s, marg_r, marg_s, copula)
    }

    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = self.marg_r.to_vec();
        v.extend(self.marg_s.to_vec());
        v.push(self.copula.scalar_param());
        v
    }

    fn kernel(&self) -> PairKernel {
        PairKernel::new(self.copula.family(), self.copula.scalar_param())
    }

    fn check_states(&self, z_r: usize, z_s: usize) -> Result<()> {
        if z_r >= self.spec_r.n_states() || z_s >= self.spec_s.n_states() {
            return Err(domain(format!(
                "states ({z_r}, {z_s}) invalid for {} x {} state spaces",
                self.spec_r.n_states(),
                self.spec_s.n_states()
            )));
        }
        Ok(())
    }

    /// Joint probability of `(z_r, z_s)` given regressors `x`, floored at 1e-12.
    pub fn pmf_at(&self, z_r: usize, z_s: usize, x: &[f64]) -> Result<f64> {
        self.check_states(z_r, z_s)?;
        if x.len() != self.spec_r.n_regressors() {
            return Err(Error::Dimension(format!(
                "{} regressors, expected {}",
                x.len(),
                self.spec_r.n_regressors()
            )));
        }
        let (ulo, uhi) = self.marg_r.cell_bounds(self.marg_r.linear_predictor(x), z_r);
        let (vlo, vhi) = self.marg_s.cell_bounds(self.marg_s.linear_predictor(x), z_s);
        Ok(self.kernel().rectangle(ulo, uhi, vlo, vhi).max(PROB_FLOOR))
    }

    /// Unfloored joint probabilities `grid[z_r][z_s]` given regressors `x`.
    pub fn joint_probs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let gr = self.marg_r.cond_cdf(x, self.spec_r.n_states())?;
        let gs = self.marg_s.cond_cdf(x, self.spec_s.n_states())?;
        let kernel = self.kernel();
        Ok((0..gr.len())
            .map(|i| {
                let (ulo, uhi) = (if i == 0 { 0.0 } else { gr[i - 1] }, gr[i]);
                (0..gs.len())
                    .map(|j| {
                        let (vlo, vhi) = (if j == 0 { 0.0 } else { gs[j - 1] }, gs[j]);
                        kernel.rectangle(ulo, uhi, vlo, vhi).max(0.0)
                    })
                    .collect()
            })
            .collect())
    }
}

/// Joint probability of `(z_r, z_s)` at the next time point after `history`
/// (oldest first; the last element is time t − 1).
pub fn pair_pmf<S: AsRef<[usize]>>(model: &PairModel, z_r: usize, z_s: usize, history: &[S]) -> Result<f64> {
    let x = model.spec_r.build_regressors(history)?;
    model.pmf_at(z_r, z_s, &x)
}

fn model_objective<'a>(model: &PairModel, design: &'a Design) -> Result<PairObjective<'a>> {
    PairObjective::new(design, PairSpec::new(model.r, model.s, model.copula.family())?)
}

fn model_design(model: &PairModel, panel: &StatePanel) -> Result<Design> {
    if panel.state_spaces != model.spec_r.state_spaces {
        return Err(Error::Dimension("panel state spaces do not match the model".into()));
    }
    Design::new(panel, model.spec_r.lag_order, model.spec_r.coding)
}

/// Negative pair log-likelihood over t = p..T−1 of `panel`.
pub fn pair_negloglik(model: &PairModel, panel: &StatePanel) -> Result<f64> {
    let design = model_design(model, panel)?;
    Ok(model_objective(model, &design)?.negloglik(&model.param_vector()))
}

/// Per-time log-likelihood contributions.
pub fn pair_loglik_terms(model: &PairModel, panel: &StatePanel) -> Result<Vec<f64>> {
    let design = model_design(model, panel)?;
    Ok(model_objective(model, &design)?.loglik_terms(&model.param_vector()))
}

/// Per-time natural-scale score vectors of `model` on `panel`.
pub fn per_time_scores(model: &PairModel, panel: &StatePanel) -> Result<Vec<Vec<f64>>> {
    let design = model_design(model, panel)?;
    let obj = model_objective(model, &design)?;
    let transform = obj.transform();
    let eta = transform.to_unconstrained(&model.param_vector());
    scores_at(&obj, &transform, &eta)
}

fn scores_at(obj: &PairObjective, transform: &ParamTransform, eta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut buf = Vec::new();
    let jac = numeric_jacobian(
        |e| {
            transform.to_natural_into(e, &mut buf);
            obj.loglik_terms(&buf)
        },
        eta,
    )?;
    let nat = jac * transform.inverse_jacobian(eta);
    Ok((0..nat.nrows())
        .map(|i| nat.row(i).iter().copied().collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub optimizer: OptimizerConfig,
    /// Natural-scale start; defaults to [`PairObjective::default_start`].
    pub start: Option<Vec<f64>>,
    /// Compute the Hessian and per-time scores after optimisation.
    pub derivatives: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            start: None,
            derivatives: true,
        }
    }
}

/// Estimated bivariate model with the derivatives needed downstream.
#[derive(Debug, Clone)]
pub struct PairFit {
    pub pair: PairSpec,
    pub names: Vec<String>,
    pub n_intercepts: [usize; 2],
    pub n_regressors: usize,
    /// Natural-scale estimates `[α_r, β_r, α_s, β_s, copula]`.
    pub theta: Vec<f64>,
    pub theta_unconstrained: Vec<f64>,
    /// Natural-scale Hessian of the negative log-likelihood (0×0 when
    /// derivatives were not requested).
    pub hessian: DMatrix<f64>,
    /// Natural-scale gradient of each log-likelihood term, one row per time point.
    pub scores: Vec<Vec<f64>>,
    pub loglik: f64,
    pub n_terms: usize,
    pub converged: bool,
    pub guard_tripped: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
}

impl PairFit {
    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn marginal_r(&self) -> MarginalParams {
        let n = self.n_intercepts[0];
        MarginalParams {
            intercepts: self.theta[..n].to_vec(),
            slopes: self.theta[n..n + self.n_regressors].to_vec(),
        }
    }

    pub fn marginal_s(&self) -> MarginalParams {
        let o = self.n_intercepts[0] + self.n_regressors;
        let n = self.n_intercepts[1];
        MarginalParams {
            intercepts: self.theta[o..o + n].to_vec(),
            slopes: self.theta[o + n..o + n + self.n_regressors].to_vec(),
        }
    }

    pub fn copula_param(&self) -> f64 {
        self.theta[self.theta.len() - 1]
    }

    /// The fitted model, for series specifications taken from `design`.
    pub fn model(&self, design: &Design) -> Result<PairModel> {
        PairModel::from_vector(
            design.spec(self.pair.r)?,
            design.spec(self.pair.s)?,
            self.pair.family,
            &self.theta,
        )
    }

    /// Σ_t score_t.
    pub fn score_sum(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for s in &self.scores {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v;
            }
        }
        acc
    }
}

/// Maximises the pair log-likelihood on the unconstrained scale.
pub fn fit_pair(design: &Design, pair: PairSpec, options: &FitOptions) -> Result<PairFit> {
    let obj = PairObjective::new(design, pair)?;
    let transform = obj.transform();
    let start = match &options.start {
        Some(s) if s.len() != obj.dim() => {
            return Err(Error::Dimension(format!(
                "start vector of length {}, expected {}",
                s.len(),
                obj.dim()
            )))
        }
        Some(s) => s.clone(),
        None => obj.default_start(),
    };
    let eta0 = transform.to_unconstrained(&start);
    if eta0.iter().any(|v| !v.is_finite()) {
        return Err(domain(format!("start vector outside the parameter domain: {start:?}")));
    }
    let mut buf = Vec::with_capacity(obj.dim());
    let m: Minimum = minimize(
        |e| obj.unconstrained_negloglik(&transform, e, &mut buf),
        &eta0,
        &options.optimizer,
    )?;
    let theta = transform.to_natural(&m.x);
    let (hessian, scores) = if options.derivatives {
        let mut buf = Vec::with_capacity(obj.dim());
        let f = |e: &[f64]| obj.unconstrained_negloglik(&transform, e, &mut buf);
        let h_eta = numeric_hessian(f, &m.x)?;
        let h = transform.hessian_to_natural(&m.x, &m.gradient, &h_eta);
        (h, scores_at(&obj, &transform, &m.x)?)
    } else {
        (DMatrix::zeros(0, 0), Vec::new())
    };
    Ok(PairFit {
        pair,
        names: obj.param_names()?,
        n_intercepts: [obj.n_int_r, obj.n_int_s],
        n_regressors: design.n_reg,
        theta,
        theta_unconstrained: m.x.clone(),
        hessian,
        scores,
        loglik: -m.value,
        n_terms: design.n_terms(),
        converged: m.converged,
        guard_tripped: m.guard_tripped,
        iterations: m.iterations,
        evaluations: m.evaluations,
        grad_norm: m.grad_norm(),
    })
}

/// Natural-scale gradient of the pair negative log-likelihood by central differences.
pub fn pair_gradient(obj: &PairObjective, theta: &[f64]) -> Result<Vec<f64>> {
    numeric_gradient(|t| obj.negloglik(t), theta)
}
