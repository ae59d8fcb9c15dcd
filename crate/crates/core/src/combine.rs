//! Global parameter layout, synthesis of pair estimates, sandwich
//! covariance and Wald tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::CopulaFamily;
use crate::data::StatePanel;
use crate::error::{domain, Error, Result};
use crate::marginal::{Coding, StateSpace};
use crate::normal;
use crate::pairlik::{copula_param_name, fit_pair, Design, FitOptions, PairFit, PairSpec};

/// Whether each pair has its own copula parameter or all pairs share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopulaSharing {
    #[default]
    PerPair,
    Common,
}

impl FromStr for CopulaSharing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per-pair" | "perpair" | "pair" => Ok(Self::PerPair),
            "common" | "shared" => Ok(Self::Common),
            _ => Err(domain(format!("unknown copula sharing '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Mean,
    Weighted,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Mean => "mean",
            Estimator::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "simple" => Ok(Self::Mean),
            "weighted" | "weighted-mean" => Ok(Self::Weighted),
            _ => Err(domain(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Position of every pair-level parameter in the global vector: marginal
/// blocks of series 1..K, then copula parameters in pair order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    marginal_offsets: Vec<usize>,
    marginal_widths: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    sharing: CopulaSharing,
    copula_offset: usize,
    dim: usize,
    names: Vec<String>,
}

/// All pairs `(r, s)`, `r < s`, in lexicographic order.
pub fn all_pairs(n_series: usize) -> Vec<(usize, usize)> {
    (0..n_series)
        .flat_map(|r| (r + 1..n_series).map(move |s| (r, s)))
        .collect()
}

impl ParamLayout {
    /// `marginal_names[k]` holds the names of series k's intercepts and slopes.
    pub fn new(
        marginal_names: Vec<Vec<String>>,
        pairs: Vec<(usize, usize)>,
        copula_names: Vec<String>,
        sharing: CopulaSharing,
    ) -> Result<Self> {
        let k = marginal_names.len();
        let mut covered = vec![false; k];
        for (i, &(r, s)) in pairs.iter().enumerate() {
            if r >= s || s >= k {
                return Err(Error::Layout(format!("invalid pair ({r}, {s}) for {k} series")));
            }
            if pairs[..i].contains(&(r, s)) {
                return Err(Error::Layout(format!("pair ({r}, {s}) listed twice")));
            }
            covered[r] = true;
            covered[s] = true;
        }
        if let Some(m) = covered.iter().position(|c| !c) {
            return Err(Error::Layout(format!("series {m} belongs to no pair")));
        }
        let n_copula = match sharing {
            CopulaSharing::PerPair => pairs.len(),
            CopulaSharing::Common => 1,
        };
        if copula_names.len() != n_copula {
            return Err(Error::Layout(format!(
                "{} copula names for {n_copula} copula parameters",
                copula_names.len()
            )));
        }
        let marginal_widths: Vec<usize> = marginal_names.iter().map(Vec::len).collect();
        let mut marginal_offsets = Vec::with_capacity(k);
        let mut o = 0;
        for w in &marginal_widths {
            marginal_offsets.push(o);
            o += w;
        }
        let mut names: Vec<String> = marginal_names.into_iter().flatten().collect();
        names.extend(copula_names);
        Ok(Self {
            marginal_offsets,
            marginal_widths,
            pairs,
            sharing,
            copula_offset: o,
            dim: o + n_copula,
            names,
        })
    }

    /// Layout for the pairs of `design`, using the design's parameter names.
    pub fn for_design(design: &Design, pairs: &[PairSpec], sharing: CopulaSharing) -> Result<Self> {
        let marginal_names = (0..design.n_series())
            .map(|k| Ok(design.spec(k)?.param_names(design.names())))
            .collect::<Result<Vec<_>>>()?;
        let copula_names = match sharing {
            CopulaSharing::PerPair => pairs
                .iter()
                .map(|p| copula_param_name(design.names(), p.r, p.s, p.family))
                .collect(),
            CopulaSharing::Common => {
                let family = pairs.first().map_or(CopulaFamily::Gumbel, |p| p.family);
                if pairs.iter().any(|p| p.family != family) {
                    return Err(Error::Layout("a common copula parameter needs one family for all pairs".into()));
                }
                vec![format!("copula:{}", if family == CopulaFamily::Gaussian { "rho" } else { "phi" })]
            }
        };
        Self::new(marginal_names, pairs.iter().map(|p| (p.r, p.s)).collect(), copula_names, sharing)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_series(&self) -> usize {
        self.marginal_widths.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn sharing(&self) -> CopulaSharing {
        self.sharing
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn marginal_range(&self, k: usize) -> std::ops::Range<usize> {
        self.marginal_offsets[k]..self.marginal_offsets[k] + self.marginal_widths[k]
    }

    pub fn copula_index(&self, pair: usize) -> usize {
        match self.sharing {
            CopulaSharing::PerPair => self.copula_offset + pair,
            CopulaSharing::Common => self.copula_offset,
        }
    }

    pub fn is_copula(&self, i: usize) -> bool {
        i >= self.copula_offset
    }

    pub fn pair_position(&self, r: usize, s: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (r, s))
    }

    pub fn pair_dim(&self, pair: usize) -> usize {
        let (r, s) = self.pairs[pair];
        self.marginal_widths[r] + self.marginal_widths[s] + 1
    }

    /// Global index of every local coordinate of pair `pair`.
    pub fn pair_indices(&self, pair: usize) -> Vec<usize> {
        let (r, s) = self.pairs[pair];
        self.marginal_range(r)
            .chain(self.marginal_range(s))
            .chain(std::iter::once(self.copula_index(pair)))
            .collect()
    }

    /// Number of pairs in which each global coordinate appears.
    pub fn replicate_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.dim];
        for p in 0..self.n_pairs() {
            for i in self.pair_indices(p) {
                counts[i] += 1;
            }
        }
        counts
    }

    fn locate(&self, fit: &PairFit) -> Result<usize> {
        let p = self
            .pair_position(fit.pair.r, fit.pair.s)
            .ok_or_else(|| Error::Layout(format!("pair ({}, {}) not in layout", fit.pair.r, fit.pair.s)))?;
        if fit.dim() != self.pair_dim(p) {
            return Err(Error::Layout(format!(
                "pair ({}, {}) has {} parameters, layout expects {}",
                fit.pair.r,
                fit.pair.s,
                fit.dim(),
                self.pair_dim(p)
            )));
        }
        Ok(p)
    }

    /// Orders `fits` by layout position, checking every pair appears once.
    fn arrange<'f>(&self, fits: &'f [PairFit]) -> Result<Vec<&'f PairFit>> {
        let mut slots: Vec<Option<&PairFit>> = vec![None; self.n_pairs()];
        for fit in fits {
            let p = self.locate(fit)?;
            if slots[p].replace(fit).is_some() {
                return Err(Error::Layout(format!("pair ({}, {}) fitted twice", fit.pair.r, fit.pair.s)));
            }
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(p, f)| f.ok_or_else(|| Error::Layout(format!("no fit for pair {:?}", self.pairs[p]))))
            .collect()
    }
}

/// Pair estimates and Hessian embedded in the global coordinates.
pub fn augment(fit: &PairFit, layout: &ParamLayout) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = layout.locate(fit)?;
    let idx = layout.pair_indices(p);
    let mut theta = DVector::zeros(layout.dim());
    let mut h = DMatrix::zeros(layout.dim(), layout.dim());
    for (a, &i) in idx.iter().enumerate() {
        theta[i] = fit.theta[a];
        if fit.hessian.nrows() == idx.len() {
            for (b, &j) in idx.iter().enumerate() {
                h[(i, j)] = fit.hessian[(a, b)];
            }
        }
    }
    Ok((theta, h))
}

/// Per-coordinate average over the pairs containing each coordinate.
pub fn simple_mean(fits: &[PairFit], layout: &ParamLayout) -> Result<Vec<f64>> {
    let fits = layout.arrange(fits)?;
    let mut sum = vec![0.0; layout.dim()];
    let counts = layout.replicate_counts();
    for (p, fit) in fits.iter().enumerate() {
        for (a, i) in layout.pair_indices(p).into_iter().enumerate() {
            sum[i] += fit.theta[a];
        }
    }
    Ok(sum.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect())
}

/// Inverse of a symmetric matrix by eigen-decomposition; eigenvalues below
/// `1e-10 · max|λ|` are dropped (pseudo-inverse), reported by the flag.
pub fn symmetric_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), false);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let cutoff = 1e-10 * max;
    let mut dropped = false;
    let inv_vals = eig.eigenvalues.map(|l| {
        if l.abs() > cutoff && max > 0.0 {
            1.0 / l
        } else {
            dropped = true;
            0.0
        }
    });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&inv_vals) * v.transpose(), dropped)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMean {
    pub theta: Vec<f64>,
    /// The pooled Hessian was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

/// Hessian-weighted synthesis θ̂ = (Σ H_f)⁻¹ Σ H_f θ̃_f.
pub fn weighted_mean(fits: &[PairFit], layout: &ParamLayout) -> Result<WeightedMean> {
    let n = layout.dim();
    let mut pooled = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for fit in fits {
        if fit.hessian.nrows() != fit.dim() {
            return Err(domain("weighted mean needs pair Hessians"));
        }
        let (theta, h) = augment(fit, layout)?;
        rhs += &h * theta;
        pooled += h;
    }
    layout.arrange(fits)?;
    let (inv, pseudo_inverse) = symmetric_inverse(&pooled);
    Ok(WeightedMean {
        theta: (inv * rhs).as_slice().to_vec(),
        pseudo_inverse,
    })
}

fn stacked_offsets(layout: &ParamLayout) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layout.n_pairs() + 1);
    let mut o = 0;
    for p in 0..layout.n_pairs() {
        offsets.push(o);
        o += layout.pair_dim(p);
    }
    offsets.push(o);
    offsets
}

/// Linear map from the stacked pair estimates to the combined estimate.
/// Rows sum to one over the replicates of each coordinate; the weighted
/// variant weighs replicates by their Hessian diagonal.
pub fn combination_matrix(fits: &[PairFit], layout: &ParamLayout, estimator: Estimator) -> Result<DMatrix<f64>> {
    let fits = layout.arrange(fits)?;
    let offsets = stacked_offsets(layout);
    let mut a = DMatrix::zeros(layout.dim(), offsets[layout.n_pairs()]);
    let counts = layout.replicate_counts();
    let mut diag_total = vec![0.0; layout.dim()];
    for (p, fit) in fits.iter().enumerate() {
        for (l, i) in layout.pair_indices(p).into_iter().enumerate() {
            diag_total[i] += fit.hessian.get((l, l)).copied().unwrap_or(0.0);
        }
    }
    for (p, fit) in fits.iter().enumerate() {
        for (l, i) in layout.pair_indices(p).into_iter().enumerate() {
            a[(i, offsets[p] + l)] = match estimator {
                Estimator::Mean => 1.0 / counts[i] as f64,
                Estimator::Weighted if diag_total[i] > 0.0 => fit.hessian[(l, l)] / diag_total[i],
                Estimator::Weighted => 1.0 / counts[i] as f64,
            };
        }
    }
    Ok(a)
}

/// Sandwich covariance of the stacked pair estimates,
/// blockdiag(H_p)⁻¹ (Σ_t s_t s_tᵀ) blockdiag(H_p)⁻¹, and whether any block
/// needed a pseudo-inverse.
pub fn sandwich_cov(fits: &[PairFit], layout: &ParamLayout) -> Result<(DMatrix<f64>, bool)> {
    let fits = layout.arrange(fits)?;
    let offsets = stacked_offsets(layout);
    let n = offsets[layout.n_pairs()];
    let n_terms = fits.first().map_or(0, |f| f.scores.len());
    if n_terms == 0 || fits.iter().any(|f| f.scores.len() != n_terms || f.hessian.nrows() != f.dim()) {
        return Err(domain("sandwich covariance needs Hessians and aligned per-time scores for every pair"));
    }
    let mut scores = DMatrix::zeros(n_terms, n);
    let mut bread = DMatrix::zeros(n, n);
    let mut pseudo = false;
    for (p, fit) in fits.iter().enumerate() {
        let o = offsets[p];
        for (t, s) in fit.scores.iter().enumerate() {
            for (l, v) in s.iter().enumerate() {
                scores[(t, o + l)] = *v;
            }
        }
        let (inv, flag) = symmetric_inverse(&fit.hessian);
        pseudo |= flag;
        bread.view_mut((o, o), (fit.dim(), fit.dim())).copy_from(&inv);
    }
    let meat = scores.transpose() * &scores;
    let cov = &bread * meat * &bread;
    Ok(((&cov + cov.transpose()) * 0.5, pseudo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wald {
    pub z: f64,
    pub p_value: f64,
}

pub fn wald_test(estimate: f64, se: f64) -> Result<Wald> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(domain(format!("standard error must be positive and finite, got {se}")));
    }
    let z = estimate / se;
    Ok(Wald {
        z,
        p_value: normal::two_sided_p(z),
    })
}

/// One row of a parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub method: Estimator,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub lag_order: usize,
    pub coding: Coding,
    /// Default copula family of every pair.
    pub family: CopulaFamily,
    /// Per-pair family overrides `(r, s, family)`.
    #[serde(default)]
    pub pair_families: Vec<(usize, usize, CopulaFamily)>,
    #[serde(default)]
    pub sharing: CopulaSharing,
    /// Fit pairs in parallel.
    #[serde(default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl SystemConfig {
    pub fn new(lag_order: usize, coding: Coding, family: CopulaFamily) -> Self {
        Self {
            lag_order,
            coding,
            family,
            pair_families: Vec::new(),
            sharing: CopulaSharing::PerPair,
            parallel: true,
        }
    }

    pub fn pair_specs(&self, n_series: usize) -> Result<Vec<PairSpec>> {
        all_pairs(n_series)
            .into_iter()
            .map(|(r, s)| {
                let family = self
                    .pair_families
                    .iter()
                    .rev()
                    .find(|o| (o.0, o.1) == (r, s))
                    .map_or(self.family, |o| o.2);
                PairSpec::new(r, s, family)
            })
            .collect()
    }
}

/// All pair fits of a panel together with both synthesised estimates and
/// their sandwich covariances.
#[derive(Debug, Clone)]
pub struct SystemFit {
    pub layout: ParamLayout,
    pub pair_fits: Vec<PairFit>,
    pub mean: Vec<f64>,
    pub weighted: Vec<f64>,
    pub stacked_cov: DMatrix<f64>,
    pub cov_mean: DMatrix<f64>,
    pub cov_weighted: DMatrix<f64>,
    pub pseudo_inverse_used: bool,
    pub lag_order: usize,
    pub coding: Coding,
    pub series_names: Vec<String>,
    pub state_spaces: Vec<StateSpace>,
}

impl SystemFit {
    pub fn estimate(&self, estimator: Estimator) -> &[f64] {
        match estimator {
            Estimator::Mean => &self.mean,
            Estimator::Weighted => &self.weighted,
        }
    }

    pub fn cov(&self, estimator: Estimator) -> &DMatrix<f64> {
        match estimator {
            Estimator::Mean => &self.cov_mean,
            Estimator::Weighted => &self.cov_weighted,
        }
    }

    pub fn se(&self, estimator: Estimator) -> Vec<f64> {
        self.cov(estimator).diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn converged(&self) -> bool {
        self.pair_fits.iter().all(|f| f.converged)
    }

    /// Rows for the mean then the weighted estimator.
    pub fn param_table(&self) -> Vec<ParamRecord> {
        let mut out = Vec::with_capacity(2 * self.layout.dim());
        for estimator in [Estimator::Mean, Estimator::Weighted] {
            let se = self.se(estimator);
            for (i, name) in self.layout.names().iter().enumerate() {
                let est = self.estimate(estimator)[i];
                let (z, p_value) = wald_test(est, se[i]).map_or((f64::NAN, f64::NAN), |w| (w.z, w.p_value));
                out.push(ParamRecord {
                    name: name.clone(),
                    method: estimator,
                    estimate: est,
                    se: se[i],
                    z,
                    p_value,
                });
            }
        }
        out
    }

    /// The design of `panel` under this fit's lag order and coding.
    pub fn design(&self, panel: &StatePanel) -> Result<Design> {
        Design::new(panel, self.lag_order, self.coding)
    }
}

fn strip_series<'a>(name: &'a str, series: &str) -> &'a str {
    name.strip_prefix(series).and_then(|n| n.strip_prefix(':')).unwrap_or(name)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.6}"))
}

/// Writes the marginal estimates with one row per parameter and an
/// estimate and a standard-error column per series. Thresholds a series
/// lacks because a state was never observed are written as `-`.
pub fn write_marginal_table<W: std::io::Write>(fit: &SystemFit, estimator: Estimator, writer: W) -> Result<()> {
    let names = fit.layout.names();
    let est = fit.estimate(estimator);
    let se = fit.se(estimator);
    let k = fit.state_spaces.len();
    let mut thresholds: Vec<i64> = fit
        .state_spaces
        .iter()
        .flat_map(|s| s.labels()[..s.len() - 1].to_vec())
        .collect();
    thresholds.sort_unstable();
    thresholds.dedup();
    let mut rows: Vec<String> = thresholds.iter().map(|l| format!("alpha0{l}")).collect();
    for m in 0..k {
        for i in fit.layout.marginal_range(m).skip(fit.state_spaces[m].len() - 1) {
            let label = strip_series(&names[i], &fit.series_names[m]).to_owned();
            if !rows.contains(&label) {
                rows.push(label);
            }
        }
    }
    let lookup = |m: usize, row: &str| {
        fit.layout
            .marginal_range(m)
            .find(|&i| strip_series(&names[i], &fit.series_names[m]) == row)
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["parameter".to_owned()];
    for name in &fit.series_names {
        header.push(name.clone());
        header.push(format!("{name}_se"));
    }
    w.write_record(&header)?;
    for row in &rows {
        let mut rec = vec![row.clone()];
        for m in 0..k {
            let i = lookup(m, row);
            rec.push(cell(i.map(|i| est[i])));
            rec.push(cell(i.map(|i| se[i])));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the copula parameters as a symmetric series-by-series matrix,
/// followed by the matching matrix of standard errors.
pub fn write_copula_table<W: std::io::Write>(fit: &SystemFit, estimator: Estimator, writer: W) -> Result<()> {
    let est = fit.estimate(estimator);
    let se = fit.se(estimator);
    let k = fit.series_names.len();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["series".to_owned()];
    header.extend(fit.series_names.iter().cloned());
    w.write_record(&header)?;
    for (suffix, values) in [("", est), ("_se", se.as_slice())] {
        for r in 0..k {
            let mut rec = vec![format!("{}{suffix}", fit.series_names[r])];
            for s in 0..k {
                let pos = fit.layout.pair_position(r.min(s), r.max(s));
                rec.push(cell(pos.filter(|_| r != s).map(|p| values[fit.layout.copula_index(p)])));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Combines already computed pair fits.
pub fn synthesize(fits: Vec<PairFit>, layout: ParamLayout, design: &Design) -> Result<SystemFit> {
    let fits: Vec<PairFit> = {
        let ordered = layout.arrange(&fits)?;
        ordered.into_iter().cloned().collect()
    };
    let mean = simple_mean(&fits, &layout)?;
    let wm = weighted_mean(&fits, &layout)?;
    let (stacked_cov, pseudo) = sandwich_cov(&fits, &layout)?;
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    let a_mean = combination_matrix(&fits, &layout, Estimator::Mean)?;
    let a_weighted = combination_matrix(&fits, &layout, Estimator::Weighted)?;
    let cov_mean = sym(&a_mean * &stacked_cov * a_mean.transpose());
    let cov_weighted = sym(&a_weighted * &stacked_cov * a_weighted.transpose());
    Ok(SystemFit {
        layout,
        pair_fits: fits,
        mean,
        weighted: wm.theta,
        stacked_cov,
        cov_mean,
        cov_weighted,
        pseudo_inverse_used: pseudo || wm.pseudo_inverse,
        lag_order: design.lag_order(),
        coding: design.coding(),
        series_names: design.names().to_vec(),
        state_spaces: design.state_spaces().to_vec(),
    })
}

/// Fits every pair of `design` and synthesises the system estimate.
pub fn fit_system_design(design: &Design, config: &SystemConfig, options: &FitOptions) -> Result<SystemFit> {
    if design.n_series() < 2 {
        return Err(domain("a system needs at least two series"));
    }
    let pairs = config.pair_specs(design.n_series())?;
    let layout = ParamLayout::for_design(design, &pairs, config.sharing)?;
    let options = FitOptions {
        derivatives: true,
        ..options.clone()
    };
    let fits: Vec<PairFit> = if config.parallel {
        pairs
            .par_iter()
            .map(|&p| fit_pair(design, p, &options))
            .collect::<Result<_>>()?
    } else {
        pairs
            .iter()
            .map(|&p| fit_pair(design, p, &options))
            .collect::<Result<_>>()?
    };
    synthesize(fits, layout, design)
}

pub fn fit_system(panel: &StatePanel, config: &SystemConfig, options: &FitOptions) -> Result<SystemFit> {
    let design = Design::new(panel, config.lag_order, config.coding)?;
    fit_system_design(&design, config, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_fit(r: usize, s: usize, theta: Vec<f64>, hdiag: Vec<f64>) -> PairFit {
        let n = theta.len();
        PairFit {
            pair: PairSpec::new(r, s, CopulaFamily::Frank).unwrap(),
            names: vec![String::new(); n],
            n_intercepts: [1, 1],
            n_regressors: 0,
            theta,
            theta_unconstrained: vec![0.0; n],
            hessian: DMatrix::from_diagonal(&DVector::from_vec(hdiag)),
            scores: Vec::new(),
            loglik: 0.0,
            n_terms: 0,
            converged: true,
            guard_tripped: false,
            iterations: 0,
            evaluations: 0,
            grad_norm: 0.0,
        }
    }

    fn layout(k: usize, sharing: CopulaSharing) -> ParamLayout {
        let marg = (0..k).map(|m| vec![format!("a{m}")]).collect();
        let pairs = all_pairs(k);
        let cop = match sharing {
            CopulaSharing::PerPair => pairs.iter().map(|p| format!("c{p:?}")).collect(),
            CopulaSharing::Common => vec!["c".into()],
        };
        ParamLayout::new(marg, pairs, cop, sharing).unwrap()
    }

    #[test]
    fn augmentation_covers_every_index() {
        let l = layout(3, CopulaSharing::PerPair);
        assert_eq!(l.dim(), 6);
        let mut hits = vec![0; 6];
        for p in 0..3 {
            for i in l.pair_indices(p) {
                hits[i] += 1;
            }
        }
        assert_eq!(hits, vec![2, 2, 2, 1, 1, 1]);
        let f = fake_fit(0, 2, vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]);
        let (t, h) = augment(&f, &l).unwrap();
        assert_eq!(t.as_slice(), &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        assert_eq!(h[(4, 4)], 3.0);
        assert_eq!(h.sum(), 6.0);
        let bad = fake_fit(0, 2, vec![1.0, 2.0], vec![1.0, 2.0]);
        assert!(matches!(augment(&bad, &l), Err(Error::Layout(_))));
    }

    #[test]
    fn one_dimensional_weighted_example() {
        // Shared coordinate with H₁ = 1, θ₁ = 0 and H₂ = 3, θ₂ = 4.
        let l = layout(3, CopulaSharing::PerPair);
        let fits = vec![
            fake_fit(0, 1, vec![0.0, 1.0, 0.5], vec![1.0, 1.0, 1.0]),
            fake_fit(0, 2, vec![4.0, 1.0, 0.5], vec![3.0, 1.0, 1.0]),
            fake_fit(1, 2, vec![1.0, 1.0, 0.5], vec![1.0, 1.0, 1.0]),
        ];
        let w = weighted_mean(&fits, &l).unwrap();
        assert!((w.theta[0] - 3.0).abs() < 1e-12);
        assert!(!w.pseudo_inverse);
        let m = simple_mean(&fits, &l).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identity_hessians_give_simple_mean() {
        let l = layout(3, CopulaSharing::Common);
        let fits = vec![
            fake_fit(0, 1, vec![0.3, 1.0, 0.5], vec![1.0; 3]),
            fake_fit(0, 2, vec![0.1, -1.0, 0.9], vec![1.0; 3]),
            fake_fit(1, 2, vec![2.0, 1.5, 0.1], vec![1.0; 3]),
        ];
        let w = weighted_mean(&fits, &l).unwrap();
        let m = simple_mean(&fits, &l).unwrap();
        for (a, b) in w.theta.iter().zip(&m) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((m[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_pool_uses_pseudo_inverse() {
        let l = layout(2, CopulaSharing::PerPair);
        let fits = vec![fake_fit(0, 1, vec![0.3, 1.0, 0.5], vec![1.0, 0.0, 2.0])];
        let w = weighted_mean(&fits, &l).unwrap();
        assert!(w.pseudo_inverse);
        assert!((w.theta[0] - 0.3).abs() < 1e-12);
        assert_eq!(w.theta[1], 0.0);
    }

    #[test]
    fn combination_rows_sum_to_one() {
        let l = layout(3, CopulaSharing::PerPair);
        let fits = vec![
            fake_fit(0, 1, vec![0.0; 3], vec![1.0, 2.0, 3.0]),
            fake_fit(0, 2, vec![0.0; 3], vec![4.0, 5.0, 6.0]),
            fake_fit(1, 2, vec![0.0; 3], vec![7.0, 8.0, 9.0]),
        ];
        for est in [Estimator::Mean, Estimator::Weighted] {
            let a = combination_matrix(&fits, &l, est).unwrap();
            for i in 0..l.dim() {
                assert!((a.row(i).sum() - 1.0).abs() < 1e-12);
            }
        }
        let a = combination_matrix(&fits, &l, Estimator::Weighted).unwrap();
        assert!((a[(0, 0)] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn wald_examples() {
        let w = wald_test(0.0, 1.0).unwrap();
        assert_eq!((w.z, w.p_value), (0.0, 1.0));
        assert!((wald_test(1.96, 1.0).unwrap().p_value - 0.05).abs() < 1e-3);
        let w = wald_test(-5.248, 0.726).unwrap();
        assert!((w.z.abs() - 7.2).abs() < 0.05);
        assert!(w.p_value < 1e-12);
        assert!(wald_test(1.0, 0.0).is_err());
    }
}
