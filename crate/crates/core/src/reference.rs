//! Full trivariate Gaussian-copula likelihood, joint maximisation of the
//! pairwise likelihood, and their comparison with the two-stage estimator.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{all_pairs, fit_system_design, CopulaSharing, Estimator, ParamLayout};
use crate::copula::CopulaFamily;
use crate::data::StatePanel;
use crate::error::{domain, Error, Result};
use crate::marginal::{MarginalParams, MarginalSpec, PROB_FLOOR};
use crate::normal::{self, BivariateNormal};
use crate::optim::minimize;
use crate::pairlik::{Design, FitOptions, PairObjective, PairSpec};
use crate::simulate::{sample_variance, simulate_system, ScenarioConfig};
use crate::transform::{Block, ParamTransform};

/// Correlations of a trivariate standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivariateGaussianSpec {
    pub r12: f64,
    pub r13: f64,
    pub r23: f64,
}

impl TrivariateGaussianSpec {
    pub fn new(r12: f64, r13: f64, r23: f64) -> Result<Self> {
        if [r12, r13, r23].iter().any(|r| !(r.abs() < 1.0)) {
            return Err(domain(format!("correlations ({r12}, {r13}, {r23}) must lie in (-1, 1)")));
        }
        let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
        if !(det > 0.0) {
            return Err(domain(format!(
                "correlation matrix ({r12}, {r13}, {r23}) is not positive definite"
            )));
        }
        Ok(Self { r12, r13, r23 })
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        match (i.min(j), i.max(j)) {
            (0, 1) => self.r12,
            (0, 2) => self.r13,
            (1, 2) => self.r23,
            _ => 1.0,
        }
    }

    pub fn upper(&self) -> [f64; 3] {
        [self.r12, self.r13, self.r23]
    }
}

// 10-point Gauss-Legendre on [-1, 1], positive half.
const GL10: [(f64, f64); 5] = [
    (0.2955242247147529, 0.1488743389816312),
    (0.2692667193099963, 0.4333953941292472),
    (0.2190863625159820, 0.6794095682990244),
    (0.1494513491505806, 0.8650633666889845),
    (0.0666713443086881, 0.9739065285171717),
];

const Z_LOWER: f64 = -8.0;
const PANEL_WIDTH: f64 = 2.0;

/// Conditioning on coordinate `i`: the other two coordinates, their
/// regression slopes on `z_i`, residual scales and partial-correlation BVN.
#[derive(Debug, Clone)]
struct Conditional {
    others: [usize; 2],
    slope: [f64; 2],
    scale: [f64; 2],
    bvn: BivariateNormal,
}

/// Trivariate normal CDF with correlation-dependent quantities cached.
#[derive(Debug, Clone)]
pub struct TrivariateNormal {
    spec: TrivariateGaussianSpec,
    conditionals: [Conditional; 3],
    pairs: [BivariateNormal; 3],
}

impl TrivariateNormal {
    pub fn new(spec: TrivariateGaussianSpec) -> Self {
        let cond = |i: usize| {
            let others = match i {
                0 => [1, 2],
                1 => [0, 2],
                _ => [0, 1],
            };
            let (ra, rb) = (spec.get(i, others[0]), spec.get(i, others[1]));
            let (sa, sb) = ((1.0 - ra * ra).sqrt(), (1.0 - rb * rb).sqrt());
            let partial = ((spec.get(others[0], others[1]) - ra * rb) / (sa * sb)).clamp(-1.0, 1.0);
            Conditional {
                others,
                slope: [ra, rb],
                scale: [sa, sb],
                bvn: BivariateNormal::new(partial),
            }
        };
        Self {
            spec,
            conditionals: [cond(0), cond(1), cond(2)],
            pairs: [
                BivariateNormal::new(spec.r12),
                BivariateNormal::new(spec.r13),
                BivariateNormal::new(spec.r23),
            ],
        }
    }

    pub fn spec(&self) -> &TrivariateGaussianSpec {
        &self.spec
    }

    fn pair_cdf(&self, i: usize, j: usize, xi: f64, xj: f64) -> f64 {
        let idx = match (i.min(j), i.max(j)) {
            (0, 1) => 0,
            (0, 2) => 1,
            _ => 2,
        };
        self.pairs[idx].cdf(xi, xj)
    }

    /// P(X₁ ≤ x₁, X₂ ≤ x₂, X₃ ≤ x₃).
    pub fn cdf(&self, x: [f64; 3]) -> f64 {
        if x.iter().any(|v| v.is_nan()) {
            return f64::NAN;
        }
        if x.iter().any(|&v| v == f64::NEG_INFINITY) {
            return 0.0;
        }
        let finite: Vec<usize> = (0..3).filter(|&i| x[i] != f64::INFINITY).collect();
        match finite.len() {
            0 => return 1.0,
            1 => return normal::cdf(x[finite[0]]),
            2 => return self.pair_cdf(finite[0], finite[1], x[finite[0]], x[finite[1]]),
            _ => {}
        }
        // Condition on the smallest coordinate: shortest range, smallest integrand.
        let i = (0..3).min_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap_or(0);
        let c = &self.conditionals[i];
        let (xa, xb) = (x[c.others[0]], x[c.others[1]]);
        let upper = x[i].min(-Z_LOWER);
        if upper <= Z_LOWER {
            return 0.0;
        }
        let panels = ((upper - Z_LOWER) / PANEL_WIDTH).ceil().max(1.0) as usize;
        let h = (upper - Z_LOWER) / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let mid = Z_LOWER + (p as f64 + 0.5) * h;
            for &(w, t) in &GL10 {
                for z in [mid - 0.5 * h * t, mid + 0.5 * h * t] {
                    let a = (xa - c.slope[0] * z) / c.scale[0];
                    let b = (xb - c.slope[1] * z) / c.scale[1];
                    acc += w * normal::pdf(z) * c.bvn.cdf(a, b);
                }
            }
        }
        (acc * 0.5 * h).clamp(0.0, 1.0)
    }
}

/// Trivariate normal CDF with correlations from `spec`.
pub fn trivariate_gaussian_cdf(spec: &TrivariateGaussianSpec, x: [f64; 3]) -> f64 {
    TrivariateNormal::new(*spec).cdf(x)
}


/// Three marginals coupled by a trivariate Gaussian copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullModel {
    pub specs: Vec<MarginalSpec>,
    pub marginals: Vec<MarginalParams>,
    pub correlation: TrivariateGaussianSpec,
}

impl FullModel {
    pub fn new(specs: Vec<MarginalSpec>, marginals: Vec<MarginalParams>, correlation: TrivariateGaussianSpec) -> Result<Self> {
        if specs.len() != 3 || marginals.len() != 3 {
            return Err(Error::Unsupported("the full likelihood is implemented for three series only".into()));
        }
        for (s, m) in specs.iter().zip(&marginals) {
            m.check_against(s)?;
        }
        Ok(Self {
            specs,
            marginals,
            correlation,
        })
    }

    /// Unfloored P(Z_t = z | history), states 0-based.
    pub fn pmf<S: AsRef<[usize]>>(&self, z: [usize; 3], history: &[S]) -> Result<f64> {
        let x = self.specs[0].build_regressors(history)?;
        let tvn = TrivariateNormal::new(self.correlation);
        let mut bounds = [[0.0; 2]; 3];
        for m in 0..3 {
            let d = self.specs[m].n_states();
            if z[m] >= d {
                return Err(domain(format!("state index {} out of range for series {m}", z[m])));
            }
            let (lo, hi) = self.marginals[m].cell_bounds(self.marginals[m].linear_predictor(&x), z[m]);
            bounds[m] = [normal::quantile(lo), normal::quantile(hi)];
        }
        Ok(cell_prob(&tvn, &bounds).max(0.0))
    }

    /// Natural vector: three marginal blocks, then ρ₁₂, ρ₁₃, ρ₂₃.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.marginals.iter().flat_map(MarginalParams::to_vec).collect();
        v.extend(self.correlation.upper());
        v
    }
}

// Rectangle probability from normal-scale cell bounds (lower, upper) per series.
fn cell_prob(tvn: &TrivariateNormal, bounds: &[[f64; 2]; 3]) -> f64 {
    let mut p = 0.0;
    for corner in 0..8u32 {
        let pick = |m: usize| bounds[m][((corner >> m) & 1) as usize];
        let c = [pick(0), pick(1), pick(2)];
        if c.contains(&f64::NEG_INFINITY) {
            continue;
        }
        let lows = 3 - corner.count_ones();
        let sign = if lows % 2 == 0 { 1.0 } else { -1.0 };
        p += sign * tvn.cdf(c);
    }
    p
}

/// Full log-likelihood of a three-series design as a function of the
/// natural vector `[α₁, β₁, α₂, β₂, α₃, β₃, ρ₁₂, ρ₁₃, ρ₂₃]`.
#[derive(Debug, Clone, Copy)]
pub struct FullObjective<'a> {
    design: &'a Design,
    n_int: [usize; 3],
}

impl<'a> FullObjective<'a> {
    pub fn new(design: &'a Design) -> Result<Self> {
        if design.n_series() != 3 {
            return Err(Error::Unsupported(format!(
                "the full likelihood needs 3 series, got {}",
                design.n_series()
            )));
        }
        let d = |k: usize| design.state_spaces()[k].len() - 1;
        Ok(Self {
            design,
            n_int: [d(0), d(1), d(2)],
        })
    }

    pub fn dim(&self) -> usize {
        self.n_int.iter().sum::<usize>() + 3 * self.design.n_regressors() + 3
    }

    pub fn transform(&self) -> ParamTransform {
        let k = self.design.n_regressors();
        let mut blocks = Vec::new();
        for &n in &self.n_int {
            blocks.push(Block::Intercepts(n));
            blocks.push(Block::Free(k));
        }
        blocks.extend([Block::Copula(CopulaFamily::Gaussian); 3]);
        ParamTransform::new(blocks)
    }

    pub fn negloglik(&self, theta: &[f64]) -> f64 {
        let n = theta.len();
        let Ok(spec) = TrivariateGaussianSpec::new(theta[n - 3], theta[n - 2], theta[n - 1]) else {
            return f64::INFINITY;
        };
        let tvn = TrivariateNormal::new(spec);
        let k = self.design.n_regressors();
        let mut blocks: [(&[f64], &[f64]); 3] = [(&[], &[]); 3];
        let mut o = 0;
        for (m, b) in blocks.iter_mut().enumerate() {
            let ni = self.n_int[m];
            *b = (&theta[o..o + ni], &theta[o + ni..o + ni + k]);
            o += ni + k;
        }
        let mut acc = 0.0;
        for i in 0..self.design.n_terms() {
            let x = self.design.row(i);
            // Normal-scale cell bounds (lower, upper) of each series.
            let mut bounds = [[0.0; 2]; 3];
            for (m, (alpha, beta)) in blocks.iter().enumerate() {
                let lp: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
                let z = self.design.states(m)[i];
                let f = |a: f64| normal::quantile(1.0 / (1.0 + (-(a + lp)).exp()));
                bounds[m] = [
                    if z == 0 { f64::NEG_INFINITY } else { f(alpha[z - 1]) },
                    if z == alpha.len() { f64::INFINITY } else { f(alpha[z]) },
                ];
            }
            let p = cell_prob(&tvn, &bounds);
            acc += p.max(PROB_FLOOR).ln();
        }
        -acc
    }

    pub fn default_start(&self) -> Vec<f64> {
        let k = self.design.n_regressors();
        let mut v = Vec::with_capacity(self.dim());
        for m in 0..3 {
            v.extend(self.design.empirical_intercepts(m));
            v.extend(std::iter::repeat_n(0.0, k));
        }
        v.extend([0.0; 3]);
        v
    }
}

/// Full negative log-likelihood over t = p..T−1 of `panel`.
pub fn full_negloglik(model: &FullModel, panel: &StatePanel) -> Result<f64> {
    let spec = &model.specs[0];
    if panel.state_spaces != spec.state_spaces {
        return Err(Error::Dimension("panel state spaces do not match the model".into()));
    }
    let design = Design::new(panel, spec.lag_order, spec.coding)?;
    Ok(FullObjective::new(&design)?.negloglik(&model.param_vector()))
}

/// Point estimate from a joint maximisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFit {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub guard_tripped: bool,
    pub iterations: usize,
    pub evaluations: usize,
}

fn run_joint(
    f: impl Fn(&[f64]) -> f64,
    transform: &ParamTransform,
    start: Vec<f64>,
    options: &FitOptions,
) -> Result<JointFit> {
    let eta0 = transform.to_unconstrained(&start);
    if eta0.iter().any(|v| !v.is_finite()) {
        return Err(domain(format!("start vector outside the parameter domain: {start:?}")));
    }
    let mut buf = Vec::new();
    let m = minimize(
        |e| {
            transform.to_natural_into(e, &mut buf);
            f(&buf)
        },
        &eta0,
        &options.optimizer,
    )?;
    Ok(JointFit {
        theta: transform.to_natural(&m.x),
        loglik: -m.value,
        converged: m.converged,
        guard_tripped: m.guard_tripped,
        iterations: m.iterations,
        evaluations: m.evaluations,
    })
}

fn check_start(start: &Option<Vec<f64>>, dim: usize) -> Result<()> {
    match start {
        Some(s) if s.len() != dim => Err(Error::Dimension(format!(
            "start vector of length {}, expected {dim}",
            s.len()
        ))),
        _ => Ok(()),
    }
}

/// Maximises the full trivariate Gaussian-copula likelihood.
pub fn fit_full(design: &Design, options: &FitOptions) -> Result<JointFit> {
    let obj = FullObjective::new(design)?;
    check_start(&options.start, obj.dim())?;
    let start = options.start.clone().unwrap_or_else(|| obj.default_start());
    run_joint(|t| obj.negloglik(t), &obj.transform(), start, options)
}

/// Sum of all pair log-likelihoods over one stacked vector in which each
/// marginal parameter appears once.
#[derive(Debug, Clone)]
pub struct JointPairwiseObjective<'a> {
    pairs: Vec<PairObjective<'a>>,
    layout: ParamLayout,
    indices: Vec<Vec<usize>>,
    transform: ParamTransform,
}

impl<'a> JointPairwiseObjective<'a> {
    pub fn new(design: &'a Design, pairs: &[PairSpec]) -> Result<Self> {
        let layout = ParamLayout::for_design(design, pairs, CopulaSharing::PerPair)?;
        let objs = pairs
            .iter()
            .map(|&p| PairObjective::new(design, p))
            .collect::<Result<Vec<_>>>()?;
        let indices = (0..pairs.len()).map(|p| layout.pair_indices(p)).collect();
        let mut blocks = Vec::new();
        for k in 0..design.n_series() {
            blocks.push(Block::Intercepts(design.state_spaces()[k].len() - 1));
            blocks.push(Block::Free(design.n_regressors()));
        }
        blocks.extend(pairs.iter().map(|p| Block::Copula(p.family)));
        Ok(Self {
            pairs: objs,
            layout,
            indices,
            transform: ParamTransform::new(blocks),
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn negloglik(&self, theta: &[f64]) -> f64 {
        let mut local = Vec::new();
        self.pairs
            .iter()
            .zip(&self.indices)
            .map(|(obj, idx)| {
                local.clear();
                local.extend(idx.iter().map(|&i| theta[i]));
                obj.negloglik(&local)
            })
            .sum()
    }

    pub fn default_start(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for (obj, idx) in self.pairs.iter().zip(&self.indices) {
            for (&i, s) in idx.iter().zip(obj.default_start()) {
                v[i] = s;
            }
        }
        v
    }
}

/// Maximises the summed pairwise log-likelihood jointly over the stacked vector.
pub fn fit_joint_pairwise(design: &Design, pairs: &[PairSpec], options: &FitOptions) -> Result<JointFit> {
    let obj = JointPairwiseObjective::new(design, pairs)?;
    check_start(&options.start, obj.dim())?;
    let start = options.start.clone().unwrap_or_else(|| obj.default_start());
    run_joint(|t| obj.negloglik(t), &obj.transform, start, options)
}

/// Estimates of the three methods on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub replication: usize,
    pub full: Vec<f64>,
    pub pairwise: Vec<f64>,
    pub two_stage: Vec<f64>,
    pub seconds_full: f64,
    pub seconds_pairwise: f64,
    pub seconds_two_stage: f64,
    /// Every fit converged.
    pub converged: bool,
    pub error: Option<String>,
}

/// Fits a three-series Gaussian-copula panel by the two-stage, joint
/// pairwise and full likelihood methods. The full likelihood starts from
/// the two-stage estimate; the other two use default starts.
pub fn compare_methods(panel: &StatePanel, lag_order: usize, coding: crate::marginal::Coding, options: &FitOptions) -> Result<Comparison> {
    let design = Design::new(panel, lag_order, coding)?;
    let pairs: Vec<PairSpec> = all_pairs(design.n_series())
        .into_iter()
        .map(|(r, s)| PairSpec::new(r, s, CopulaFamily::Gaussian))
        .collect::<Result<_>>()?;
    let system = crate::combine::SystemConfig {
        parallel: false,
        ..crate::combine::SystemConfig::new(lag_order, coding, CopulaFamily::Gaussian)
    };
    let clock = Instant::now();
    // The weighted combination needs the pair Hessians, so their cost is
    // part of the two-stage time; the joint fits report point estimates only.
    let ts = fit_system_design(
        &design,
        &system,
        &FitOptions {
            derivatives: true,
            ..options.clone()
        },
    )?;
    let seconds_two_stage = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let pl = fit_joint_pairwise(
        &design,
        &pairs,
        &FitOptions {
            start: None,
            derivatives: false,
            ..options.clone()
        },
    )?;
    let seconds_pairwise = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let fl = fit_full(
        &design,
        &FitOptions {
            start: Some(ts.estimate(Estimator::Weighted).to_vec()),
            derivatives: false,
            ..options.clone()
        },
    )?;
    let seconds_full = clock.elapsed().as_secs_f64();
    Ok(Comparison {
        replication: 0,
        converged: ts.converged() && pl.converged && fl.converged,
        full: fl.theta,
        pairwise: pl.theta,
        two_stage: ts.weighted,
        seconds_full,
        seconds_pairwise,
        seconds_two_stage,
        error: None,
    })
}

/// Variance and timing ratios of the full and joint pairwise
/// estimators relative to the two-stage estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub t_len: usize,
    pub names: Vec<String>,
    pub replications: Vec<Comparison>,
    /// Per-parameter var_FL / var_TS.
    pub var_ratio_full: Vec<f64>,
    /// Per-parameter var_PL / var_TS.
    pub var_ratio_pairwise: Vec<f64>,
    pub mean_var_ratio_full: f64,
    pub mean_var_ratio_pairwise: f64,
    pub seconds_full: f64,
    pub seconds_pairwise: f64,
    pub seconds_two_stage: f64,
    pub excluded: usize,
}

impl EfficiencyReport {
    /// How many times faster the two-stage fit ran than the joint pairwise fit.
    pub fn two_stage_speedup(&self) -> f64 {
        self.seconds_pairwise / self.seconds_two_stage
    }
}

/// Writes one row per report, one column per ratio, in the layout of a
/// relative-efficiency table.
pub fn write_efficiency_table<W: std::io::Write>(reports: &[EfficiencyReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t_len",
        "var_fl_over_ts",
        "var_pl_over_ts",
        "time_fl_over_ts",
        "time_pl_over_ts",
        "replications",
        "excluded",
    ])?;
    for r in reports {
        w.write_record([
            r.t_len.to_string(),
            format!("{:.6}", r.mean_var_ratio_full),
            format!("{:.6}", r.mean_var_ratio_pairwise),
            format!("{:.6}", r.seconds_full / r.seconds_two_stage),
            format!("{:.6}", r.seconds_pairwise / r.seconds_two_stage),
            r.replications.len().to_string(),
            r.excluded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `scenario.replications` comparisons (replication b on stream b).
pub fn efficiency_report(scenario: &ScenarioConfig, options: &FitOptions) -> Result<EfficiencyReport> {
    scenario.validate()?;
    if scenario.n_series() != 3 || scenario.copula.family() != CopulaFamily::Gaussian {
        return Err(Error::Unsupported(
            "the efficiency comparison needs a three-series Gaussian-copula scenario".into(),
        ));
    }
    let runs: Vec<Comparison> = (0..scenario.replications)
        .into_par_iter()
        .map(|b| {
            let panel = simulate_system(scenario, &mut scenario.rng(b as u64))?;
            Ok(match compare_methods(&panel, scenario.lag_order, scenario.coding, options) {
                Ok(c) => Comparison { replication: b, ..c },
                Err(e) => Comparison {
                    replication: b,
                    full: Vec::new(),
                    pairwise: Vec::new(),
                    two_stage: Vec::new(),
                    seconds_full: 0.0,
                    seconds_pairwise: 0.0,
                    seconds_two_stage: 0.0,
                    converged: false,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect::<Result<_>>()?;
    let ok: Vec<&Comparison> = runs.iter().filter(|c| c.converged && c.error.is_none()).collect();
    let dim = scenario.truth(CopulaSharing::PerPair)?.len();
    let var = |get: &dyn Fn(&Comparison) -> &Vec<f64>, i: usize| {
        sample_variance(&ok.iter().map(|c| get(c)[i]).collect::<Vec<_>>())
    };
    let ratio = |get: &dyn Fn(&Comparison) -> &Vec<f64>| -> Vec<f64> {
        (0..dim).map(|i| var(get, i) / var(&|c| &c.two_stage, i)).collect()
    };
    let var_ratio_full = ratio(&|c| &c.full);
    let var_ratio_pairwise = ratio(&|c| &c.pairwise);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let total = |get: fn(&Comparison) -> f64| ok.iter().map(|c| get(c)).sum::<f64>();
    let names = {
        let names: Vec<String> = if scenario.names.is_empty() {
            (1..=3).map(|k| format!("Z{k}")).collect()
        } else {
            scenario.names.clone()
        };
        let mut out: Vec<String> = scenario.specs()?.iter().flat_map(|s| s.param_names(&names)).collect();
        out.extend(
            all_pairs(3)
                .into_iter()
                .map(|(r, s)| crate::pairlik::copula_param_name(&names, r, s, CopulaFamily::Gaussian)),
        );
        out
    };
    Ok(EfficiencyReport {
        t_len: scenario.t_len,
        names,
        mean_var_ratio_full: mean(&var_ratio_full),
        mean_var_ratio_pairwise: mean(&var_ratio_pairwise),
        var_ratio_full,
        var_ratio_pairwise,
        seconds_full: total(|c| c.seconds_full),
        seconds_pairwise: total(|c| c.seconds_pairwise),
        seconds_two_stage: total(|c| c.seconds_two_stage),
        excluded: runs.len() - ok.len(),
        replications: runs,
    })
}
