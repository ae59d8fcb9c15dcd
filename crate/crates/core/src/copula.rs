//! Gumbel, Frank and Gaussian copulas: evaluation, reparameterization and
//! sampling.
//!
//! Bivariate members couple pairs of marginals during estimation. The
//! K-variate members are used to generate data: Gumbel through a
//! positive-stable frailty, Frank (positive dependence only) through a
//! logarithmic-series frailty and Gaussian through a Cholesky factor.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::normal::{self, BivariateNormal};

/// Below this magnitude a Frank parameter is evaluated as the independence copula.
pub const FRANK_INDEPENDENCE_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gumbel,
    Frank,
    Gaussian,
}

impl CopulaFamily {
    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Gaussian => "gaussian",
        }
    }

    /// Natural-scale parameter of the bivariate member from its unconstrained value.
    pub fn param_from_unconstrained(self, theta: f64) -> f64 {
        match self {
            CopulaFamily::Gumbel => 1.0 + theta.exp(),
            CopulaFamily::Frank => theta,
            CopulaFamily::Gaussian => theta.tanh(),
        }
    }

    pub fn param_to_unconstrained(self, param: f64) -> f64 {
        match self {
            CopulaFamily::Gumbel => (param - 1.0).ln(),
            CopulaFamily::Frank => param,
            CopulaFamily::Gaussian => param.atanh(),
        }
    }

    /// d(param)/d(theta) and d²(param)/d(theta)² of the bivariate reparameterization.
    pub(crate) fn param_derivatives(self, theta: f64) -> (f64, f64) {
        match self {
            CopulaFamily::Gumbel => {
                let e = theta.exp();
                (e, e)
            }
            CopulaFamily::Frank => (1.0, 0.0),
            CopulaFamily::Gaussian => {
                let t = theta.tanh();
                let sech2 = 1.0 - t * t;
                (sech2, -2.0 * t * sech2)
            }
        }
    }

    /// Parameter value of the independence member (Frank: the φ → 0 limit).
    pub fn independence_param(self) -> f64 {
        match self {
            CopulaFamily::Gumbel => 1.0,
            CopulaFamily::Frank | CopulaFamily::Gaussian => 0.0,
        }
    }

    pub fn check_param(self, param: f64) -> Result<()> {
        let ok = match self {
            CopulaFamily::Gumbel => param.is_finite() && param >= 1.0,
            CopulaFamily::Frank => param.is_finite(),
            CopulaFamily::Gaussian => param.is_finite() && param > -1.0 && param < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(domain(format!("{} parameter {param} outside family domain", self.name())))
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gumbel" => Ok(CopulaFamily::Gumbel),
            "frank" => Ok(CopulaFamily::Frank),
            "gaussian" | "normal" => Ok(CopulaFamily::Gaussian),
            other => Err(Error::Unsupported(format!("copula family '{other}'"))),
        }
    }
}

/// Symmetric positive-definite correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Correlation {
    dim: usize,
    values: Vec<f64>,
}

impl Correlation {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim < 2 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("correlation matrix must be square with dim >= 2".into()));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        let c = Self { dim, values };
        for i in 0..dim {
            if (c.get(i, i) - 1.0).abs() > 1e-12 {
                return Err(domain("correlation matrix must have unit diagonal"));
            }
            for j in 0..i {
                if (c.get(i, j) - c.get(j, i)).abs() > 1e-12 {
                    return Err(domain("correlation matrix must be symmetric"));
                }
                if !(c.get(i, j) > -1.0 && c.get(i, j) < 1.0) {
                    return Err(domain("correlations must lie in (-1, 1)"));
                }
            }
        }
        c.cholesky()?;
        Ok(c)
    }

    pub fn identity(dim: usize) -> Self {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        Self { dim, values }
    }

    pub fn pair(rho: f64) -> Result<Self> {
        Self::new(vec![vec![1.0, rho], vec![rho, 1.0]])
    }

    /// Builds a matrix from its upper-triangular entries in row order
    /// (ρ12, ρ13, …, ρ1K, ρ23, …).
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        if upper.len() != dim * (dim - 1) / 2 {
            return Err(Error::Dimension(format!(
                "{} correlations given for a {dim}x{dim} matrix",
                upper.len()
            )));
        }
        let mut rows = vec![vec![0.0; dim]; dim];
        let mut it = upper.iter();
        for i in 0..dim {
            rows[i][i] = 1.0;
            for j in (i + 1)..dim {
                let v = *it.next().unwrap();
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        Self::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                out.push(self.get(i, j));
            }
        }
        out
    }

    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.values)
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| domain("correlation matrix is not positive definite"))
    }
}

impl TryFrom<Vec<Vec<f64>>> for Correlation {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Correlation::new(rows)
    }
}

impl From<Correlation> for Vec<Vec<f64>> {
    fn from(c: Correlation) -> Self {
        c.values.chunks(c.dim).map(|r| r.to_vec()).collect()
    }
}

/// A copula family together with its parameter(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CopulaSpec {
    Gumbel { phi: f64 },
    Frank { phi: f64 },
    Gaussian { corr: Correlation },
}

impl CopulaSpec {
    pub fn gumbel(phi: f64) -> Result<Self> {
        CopulaFamily::Gumbel.check_param(phi)?;
        Ok(CopulaSpec::Gumbel { phi })
    }

    pub fn frank(phi: f64) -> Result<Self> {
        CopulaFamily::Frank.check_param(phi)?;
        Ok(CopulaSpec::Frank { phi })
    }

    pub fn gaussian_pair(rho: f64) -> Result<Self> {
        CopulaFamily::Gaussian.check_param(rho)?;
        Ok(CopulaSpec::Gaussian {
            corr: Correlation::pair(rho)?,
        })
    }

    pub fn gaussian(corr: Correlation) -> Self {
        CopulaSpec::Gaussian { corr }
    }

    /// Bivariate member of `family` with scalar parameter `param`.
    pub fn bivariate(family: CopulaFamily, param: f64) -> Result<Self> {
        match family {
            CopulaFamily::Gumbel => Self::gumbel(param),
            CopulaFamily::Frank => Self::frank(param),
            CopulaFamily::Gaussian => Self::gaussian_pair(param),
        }
    }

    pub fn independence(family: CopulaFamily) -> Self {
        match family {
            CopulaFamily::Gumbel => CopulaSpec::Gumbel { phi: 1.0 },
            CopulaFamily::Frank => CopulaSpec::Frank { phi: 0.0 },
            CopulaFamily::Gaussian => CopulaSpec::Gaussian {
                corr: Correlation::identity(2),
            },
        }
    }

    pub fn family(&self) -> CopulaFamily {
        match self {
            CopulaSpec::Gumbel { .. } => CopulaFamily::Gumbel,
            CopulaSpec::Frank { .. } => CopulaFamily::Frank,
            CopulaSpec::Gaussian { .. } => CopulaFamily::Gaussian,
        }
    }

    /// Scalar parameter of a bivariate member (Gaussian: ρ12).
    pub fn scalar_param(&self) -> f64 {
        match self {
            CopulaSpec::Gumbel { phi } | CopulaSpec::Frank { phi } => *phi,
            CopulaSpec::Gaussian { corr } => corr.get(0, 1),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            CopulaSpec::Gumbel { phi } => CopulaFamily::Gumbel.check_param(*phi),
            CopulaSpec::Frank { phi } => CopulaFamily::Frank.check_param(*phi),
            CopulaSpec::Gaussian { .. } => Ok(()),
        }
    }

    /// Copula CDF at `u` (length 2 or 3; Gumbel accepts any length).
    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.validate()?;
        if u.len() < 2 {
            return Err(Error::Unsupported("copula arity below 2".into()));
        }
        if u.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(domain(format!("copula arguments must lie in [0, 1], got {u:?}")));
        }
        if u.iter().any(|&x| x == 0.0) {
            return Ok(0.0);
        }
        match self {
            CopulaSpec::Gumbel { phi } => Ok(gumbel_cdf(*phi, u)),
            CopulaSpec::Frank { phi } => {
                if u.len() > 3 {
                    return Err(Error::Unsupported("Frank copula of arity above 3".into()));
                }
                if u.len() > 2 && *phi < 0.0 {
                    return Err(Error::Unsupported(
                        "Frank copula with negative parameter has no K-variate extension".into(),
                    ));
                }
                Ok(frank_cdf(*phi, u))
            }
            CopulaSpec::Gaussian { corr } => {
                if corr.dim() != u.len() {
                    return Err(Error::Dimension(format!(
                        "Gaussian copula of dimension {} evaluated at {} arguments",
                        corr.dim(),
                        u.len()
                    )));
                }
                match u.len() {
                    2 => Ok(PairKernel::new(CopulaFamily::Gaussian, corr.get(0, 1)).cdf(u[0], u[1])),
                    3 => {
                        let x = [normal::quantile(u[0]), normal::quantile(u[1]), normal::quantile(u[2])];
                        let spec = crate::reference::TrivariateGaussianSpec::new(
                            corr.get(0, 1),
                            corr.get(0, 2),
                            corr.get(1, 2),
                        )?;
                        Ok(crate::reference::trivariate_gaussian_cdf(&spec, x))
                    }
                    _ => Err(Error::Unsupported("Gaussian copula CDF of arity above 3".into())),
                }
            }
        }
    }

    /// Unconstrained coordinates: Gumbel ln(φ − 1), Frank φ, Gaussian atanh of
    /// each upper-triangular correlation.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        match self {
            CopulaSpec::Gumbel { phi } => vec![CopulaFamily::Gumbel.param_to_unconstrained(*phi)],
            CopulaSpec::Frank { phi } => vec![*phi],
            CopulaSpec::Gaussian { corr } => corr.upper().into_iter().map(f64::atanh).collect(),
        }
    }

    pub fn from_unconstrained(family: CopulaFamily, theta: &[f64]) -> Result<Self> {
        match family {
            CopulaFamily::Gumbel | CopulaFamily::Frank => {
                let [t] = theta else {
                    return Err(Error::Dimension(format!(
                        "{} copula takes one parameter, got {}",
                        family.name(),
                        theta.len()
                    )));
                };
                Self::bivariate(family, family.param_from_unconstrained(*t))
            }
            CopulaFamily::Gaussian => {
                let m = theta.len();
                // m = K(K-1)/2
                let dim = ((1.0 + (1.0 + 8.0 * m as f64).sqrt()) / 2.0).round() as usize;
                let rhos: Vec<f64> = theta.iter().map(|t| t.tanh()).collect();
                Ok(CopulaSpec::Gaussian {
                    corr: Correlation::from_upper(dim, &rhos)?,
                })
            }
        }
    }

    /// Theoretical Kendall's τ of the bivariate member.
    pub fn kendall_tau(&self) -> f64 {
        match self {
            CopulaSpec::Gumbel { phi } => 1.0 - 1.0 / phi,
            CopulaSpec::Gaussian { corr } => 2.0 / std::f64::consts::PI * corr.get(0, 1).asin(),
            CopulaSpec::Frank { phi } => frank_tau(*phi),
        }
    }

    /// Draws `n` vectors of dimension `dim` from the copula (rows are draws).
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        if dim < 2 {
            return Err(Error::Unsupported("sampling requires dimension >= 2".into()));
        }
        match self {
            CopulaSpec::Gumbel { phi } => {
                let alpha = 1.0 / phi;
                Ok((0..n)
                    .map(|_| {
                        if *phi == 1.0 {
                            return (0..dim).map(|_| rng.sample::<f64, _>(Open01)).collect();
                        }
                        let v = positive_stable(alpha, rng);
                        (0..dim)
                            .map(|_| {
                                let e: f64 = rng.sample(Exp1);
                                (-(e / v).powf(alpha)).exp()
                            })
                            .collect()
                    })
                    .collect())
            }
            CopulaSpec::Frank { phi } => {
                let phi = *phi;
                if phi.abs() < FRANK_INDEPENDENCE_BAND {
                    return Ok((0..n)
                        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(Open01)).collect())
                        .collect());
                }
                if dim == 2 {
                    return Ok((0..n)
                        .map(|_| {
                            let u: f64 = rng.sample(Open01);
                            let w: f64 = rng.sample(Open01);
                            vec![u, frank_conditional_inverse(phi, u, w)]
                        })
                        .collect());
                }
                if phi < 0.0 {
                    return Err(Error::Unsupported(
                        "K-variate Frank sampling requires a positive parameter".into(),
                    ));
                }
                let p = -(-phi).exp_m1();
                Ok((0..n)
                    .map(|_| {
                        let v = logarithmic(p, phi, rng) as f64;
                        (0..dim)
                            .map(|_| {
                                let e: f64 = rng.sample(Exp1);
                                // ψ(s) = -ln(1 - p e^{-s}) / φ
                                let u = -(-(p * (-e / v).exp())).ln_1p() / phi;
                                u.clamp(f64::MIN_POSITIVE, 1.0)
                            })
                            .collect()
                    })
                    .collect())
            }
            CopulaSpec::Gaussian { corr } => {
                if corr.dim() != dim {
                    return Err(Error::Dimension(format!(
                        "Gaussian copula of dimension {} sampled at dimension {dim}",
                        corr.dim()
                    )));
                }
                let l = corr.cholesky()?;
                Ok((0..n)
                    .map(|_| {
                        let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                        (0..dim)
                            .map(|i| {
                                let z: f64 = (0..=i).map(|j| l[(i, j)] * eps[j]).sum();
                                normal::cdf(z)
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

fn gumbel_cdf(phi: f64, u: &[f64]) -> f64 {
    let s: f64 = u.iter().map(|&x| (-x.ln()).powf(phi)).sum();
    (-s.powf(1.0 / phi)).exp()
}

fn frank_cdf(phi: f64, u: &[f64]) -> f64 {
    if phi.abs() < FRANK_INDEPENDENCE_BAND {
        return u.iter().product();
    }
    if phi > 0.0 {
        let num: f64 = u.iter().map(|&x| (-phi * x).exp_m1()).product();
        let den = (-phi).exp_m1().powi(u.len() as i32 - 1);
        -(num / den).ln_1p() / phi
    } else {
        // Only reached for arity 2; log-space keeps large |φ| finite.
        let lx = ln_expm1(-phi * u[0]) + ln_expm1(-phi * u[1]) - ln_expm1(-phi);
        -softplus(lx) / phi
    }
}

/// ln(e^a − 1) for a > 0.
fn ln_expm1(a: f64) -> f64 {
    if a > 30.0 {
        a + (-(-a).exp()).ln_1p()
    } else {
        a.exp_m1().ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Solves ∂C/∂u (u, v) = w for v.
fn frank_conditional_inverse(phi: f64, u: f64, w: f64) -> f64 {
    let b = w * (-phi).exp_m1() / (w + (1.0 - w) * (-phi * u).exp());
    (-(b.ln_1p()) / phi).clamp(f64::MIN_POSITIVE, 1.0)
}

fn frank_tau(phi: f64) -> f64 {
    if phi.abs() < FRANK_INDEPENDENCE_BAND {
        return 0.0;
    }
    // Debye function D1(φ) = (1/φ) ∫_0^φ t / (e^t − 1) dt, Simpson rule.
    let n = 2000;
    let h = phi / n as f64;
    let f = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    let mut acc = f(0.0) + f(phi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    let d1 = acc * h / 3.0 / phi;
    1.0 - 4.0 / phi * (1.0 - d1)
}

/// Positive stable variate with Laplace transform exp(−s^α), 0 < α ≤ 1
/// (Chambers–Mallows–Stuck / Kanter representation).
fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let theta = std::f64::consts::PI * rng.sample::<f64, _>(Open01);
    let w: f64 = rng.sample(Exp1);
    let a = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * theta).sin() / w).powf((1.0 - alpha) / alpha);
    a * b
}

/// Logarithmic-series variate with P(V = k) ∝ p^k / k (Kemp's LK algorithm).
/// `phi` satisfies p = 1 − e^{−φ}.
fn logarithmic<R: Rng + ?Sized>(p: f64, phi: f64, rng: &mut R) -> u64 {
    let u2: f64 = rng.sample(Open01);
    if u2 > p {
        return 1;
    }
    let u1: f64 = rng.sample(Open01);
    let q = -(-phi * u1).exp_m1();
    if u2 < q * q {
        let k = (1.0 + u2.ln() / q.ln()).floor();
        if k.is_finite() && k >= 1.0 {
            k as u64
        } else {
            1
        }
    } else if u2 > q {
        1
    } else {
        2
    }
}

/// Bivariate copula specialised for repeated evaluation at one parameter value.
#[derive(Debug, Clone)]
pub(crate) enum PairKernel {
    Independence,
    Gumbel { phi: f64, inv_phi: f64 },
    Frank { phi: f64 },
    Gaussian(BivariateNormal),
}

impl PairKernel {
    pub(crate) fn new(family: CopulaFamily, param: f64) -> Self {
        match family {
            CopulaFamily::Gumbel if param == 1.0 => PairKernel::Independence,
            CopulaFamily::Gumbel => PairKernel::Gumbel {
                phi: param,
                inv_phi: 1.0 / param,
            },
            CopulaFamily::Frank if param.abs() < FRANK_INDEPENDENCE_BAND => PairKernel::Independence,
            CopulaFamily::Frank => PairKernel::Frank { phi: param },
            CopulaFamily::Gaussian if param == 0.0 => PairKernel::Independence,
            CopulaFamily::Gaussian => PairKernel::Gaussian(BivariateNormal::new(param)),
        }
    }

    pub(crate) fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        match self {
            PairKernel::Independence => u * v,
            PairKernel::Gumbel { phi, inv_phi } => {
                let s = (-u.ln()).powf(*phi) + (-v.ln()).powf(*phi);
                (-s.powf(*inv_phi)).exp()
            }
            PairKernel::Frank { phi } => frank_cdf(*phi, &[u, v]),
            PairKernel::Gaussian(bvn) => bvn.cdf(normal::quantile(u), normal::quantile(v)),
        }
    }

    /// Probability of the rectangle (u_lo, u_hi] × (v_lo, v_hi].
    pub(crate) fn rectangle(&self, u_lo: f64, u_hi: f64, v_lo: f64, v_hi: f64) -> f64 {
        match self {
            PairKernel::Independence => (u_hi - u_lo) * (v_hi - v_lo),
            PairKernel::Gumbel { phi, inv_phi } => {
                // t(x) = (−ln x)^φ computed once per corner coordinate.
                let t = |x: f64| {
                    if x >= 1.0 {
                        0.0
                    } else {
                        (-x.ln()).powf(*phi)
                    }
                };
                let c = |x: f64, tx: f64, y: f64, ty: f64| {
                    if x <= 0.0 || y <= 0.0 {
                        0.0
                    } else if tx == 0.0 {
                        y
                    } else if ty == 0.0 {
                        x
                    } else {
                        (-(tx + ty).powf(*inv_phi)).exp()
                    }
                };
                let (tuh, tvh) = (t(u_hi), t(v_hi));
                let tul = if u_lo > 0.0 { t(u_lo) } else { f64::INFINITY };
                let tvl = if v_lo > 0.0 { t(v_lo) } else { f64::INFINITY };
                c(u_hi, tuh, v_hi, tvh) - c(u_lo, tul, v_hi, tvh) - c(u_hi, tuh, v_lo, tvl)
                    + c(u_lo, tul, v_lo, tvl)
            }
            _ => {
                self.cdf(u_hi, v_hi) - self.cdf(u_lo, v_hi) - self.cdf(u_hi, v_lo)
                    + self.cdf(u_lo, v_lo)
            }
        }
    }
}
