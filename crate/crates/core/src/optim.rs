//! Central-difference derivatives and a BFGS minimizer driven by them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5_f64.max(1e-5 * x.abs())
}

fn eval<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64]) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(x.to_vec()))
    }
}

/// Central-difference gradient.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let fp = eval(&mut f, &probe)?;
        probe[i] = x[i] - h;
        let fm = eval(&mut f, &probe)?;
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Fourth-order central-difference gradient with a wider step. Likelihoods
/// built from many repeated terms carry coherent rounding error, which the
/// two-point rule amplifies by 1/h.
pub fn numeric_gradient_fine<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = wide_step(x[i]);
        let mut at = |d: f64, probe: &mut Vec<f64>| {
            probe[i] = x[i] + d;
            let v = eval(&mut f, probe);
            probe[i] = x[i];
            v
        };
        let (p1, m1) = (at(h, &mut probe)?, at(-h, &mut probe)?);
        let (p2, m2) = (at(2.0 * h, &mut probe)?, at(-2.0 * h, &mut probe)?);
        g[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
    }
    Ok(g)
}

/// Central-difference Jacobian of a vector-valued function; column `i` holds
/// the derivative of every output with respect to `x[i]`.
pub fn numeric_jacobian<F: FnMut(&[f64]) -> Vec<f64>>(mut f: F, x: &[f64]) -> Result<DMatrix<f64>> {
    let mut probe = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if fp.iter().chain(&fm).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(x.to_vec()));
        }
        cols.push(DVector::from_iterator(
            fp.len(),
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)),
        ));
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Central-difference Hessian, symmetrized. Second differences lose
/// precision like ε/h², so the step is near ε^¼ rather than the gradient step.
pub fn numeric_hessian<F: FnMut(&[f64]) -> f64>(f: F, x: &[f64]) -> Result<DMatrix<f64>> {
    hessian_with_step(f, x, hessian_step)
}

fn hessian_step(x: f64) -> f64 {
    1e-4_f64.max(1e-4 * x.abs())
}

fn wide_step(x: f64) -> f64 {
    1e-3_f64.max(1e-3 * x.abs())
}

fn hessian_with_step<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|&v| step(v)).collect();
    let f0 = eval(&mut f, x)?;
    let mut probe = x.to_vec();
    let mut hess = DMatrix::zeros(n, n);
    for i in 0..n {
        probe[i] = x[i] + h[i];
        let fp = eval(&mut f, &probe)?;
        probe[i] = x[i] - h[i];
        let fm = eval(&mut f, &probe)?;
        probe[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in 0..i {
            let mut corner = |si: f64, sj: f64, probe: &mut Vec<f64>| -> Result<f64> {
                probe[i] = x[i] + si * h[i];
                probe[j] = x[j] + sj * h[j];
                let v = eval(&mut f, probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let fpp = corner(1.0, 1.0, &mut probe)?;
            let fpm = corner(1.0, -1.0, &mut probe)?;
            let fmp = corner(-1.0, 1.0, &mut probe)?;
            let fmm = corner(-1.0, -1.0, &mut probe)?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iter: usize,
    /// Convergence threshold on the gradient ∞-norm.
    pub grad_tol: f64,
    /// Iteration stops (flagged) once any coordinate exceeds this magnitude.
    pub param_guard: f64,
    /// Largest coordinate change allowed in a single step.
    pub max_step: f64,
    /// The inverse-Hessian approximation is reset from a finite-difference
    /// Hessian at the start and every this many iterations (0 disables).
    #[serde(default)]
    pub hessian_refresh: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            param_guard: 30.0,
            max_step: 5.0,
            hessian_refresh: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// A coordinate exceeded `param_guard` (typically separation).
    pub guard_tripped: bool,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.gradient)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

// Inverse of the finite-difference Hessian when it is positive definite.
fn curvature_inverse<F: FnMut(&[f64]) -> f64>(f: F, x: &[f64]) -> Option<DMatrix<f64>> {
    // The wide step keeps rounding noise from masking weak or negative curvature.
    let h = hessian_with_step(f, x, wide_step).ok()?;
    let eig = h.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top.is_finite() && eig.eigenvalues.iter().all(|&l| l > 1e-10 * top)) {
        return None;
    }
    let inv = eig.eigenvalues.map(|l| 1.0 / l);
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Minimizes `f` by BFGS with central-difference gradients and a
/// backtracking Armijo line search.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], config: &OptimizerConfig) -> Result<Minimum> {
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut counted = |x: &[f64]| {
        evaluations += 1;
        f(x)
    };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = eval(&mut counted, x.as_slice())?;
    // Two-point differences while far from a stationary point, the finer
    // rule once their noise floor matters.
    let gradient = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], near: bool| {
        if near {
            numeric_gradient_fine(f, x)
        } else {
            numeric_gradient(f, x)
        }
    };
    let coarse_limit = 1e3 * config.grad_tol;
    let mut g = DVector::from_vec(gradient(&mut counted, x.as_slice(), false)?);
    if g.amax() < coarse_limit {
        g = DVector::from_vec(gradient(&mut counted, x.as_slice(), true)?);
    }
    let mut hinv = DMatrix::<f64>::identity(n, n) / g.amax().max(1.0);
    let mut fresh = true;
    if config.hessian_refresh > 0 && g.amax() >= config.grad_tol {
        if let Some(h) = curvature_inverse(&mut counted, x.as_slice()) {
            hinv = h;
            fresh = false;
        }
    }
    let mut iterations = 0;
    let mut guard_tripped = false;

    while iterations < config.max_iter {
        if g.amax() < config.grad_tol {
            break;
        }
        if x.amax() > config.param_guard {
            guard_tripped = true;
            break;
        }
        if config.hessian_refresh > 0 && iterations > 0 && iterations % config.hessian_refresh == 0 {
            if let Some(h) = curvature_inverse(&mut counted, x.as_slice()) {
                hinv = h;
                fresh = false;
            }
        }
        let mut p = -(&hinv * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n) / g.amax().max(1.0);
            fresh = true;
            p = -(&hinv * &g);
            slope = g.dot(&p);
        }
        let biggest = p.amax();
        let mut step = if biggest > config.max_step { config.max_step / biggest } else { 1.0 };
        let noise = 1e-14 * fx.abs().max(1.0);
        let mut accepted = None;
        for _ in 0..50 {
            let trial = &x + &p * step;
            let ft = counted(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope + noise {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if fresh {
                break;
            }
            hinv = DMatrix::identity(n, n) / g.amax().max(1.0);
            fresh = true;
            continue;
        };
        let mut g_new = DVector::from_vec(gradient(&mut counted, x_new.as_slice(), g.amax() < coarse_limit)?);
        if g_new.amax() < coarse_limit && g.amax() >= coarse_limit {
            g_new = DVector::from_vec(gradient(&mut counted, x_new.as_slice(), true)?);
        }
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh = false;
        }
        let stalled = (fx - f_new).abs() <= noise && s.amax() < 1e-12;
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        if stalled && !fresh {
            hinv = DMatrix::identity(n, n) / g.amax().max(1.0);
            fresh = true;
        }
    }
    let grad = g.as_slice().to_vec();
    Ok(Minimum {
        converged: inf_norm(&grad) < config.grad_tol && !guard_tripped,
        x: x.as_slice().to_vec(),
        value: fx,
        gradient: grad,
        iterations,
        evaluations,
        guard_tripped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hessian_of_exact_quadratic() {
        let f = |t: &[f64]| 0.5 * (2.0 * t[0] * t[0] + 2.0 * t[0] * t[1] + 3.0 * t[1] * t[1]);
        // Central second differences lose about ε|f|/h² to rounding, so the
        // 1e-6 check is made where f vanishes.
        let h = numeric_hessian(f, &[0.0, 0.0]).unwrap();
        let a = [[2.0, 1.0], [1.0, 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[(i, j)] - a[i][j]).abs() < 1e-6, "{h}");
            }
        }
        let h = numeric_hessian(f, &[0.3, -1.2]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[(i, j)] - a[i][j]).abs() < 1e-5, "{h}");
            }
        }
    }

    #[test]
    fn hessian_of_cosine() {
        let h = numeric_hessian(|t: &[f64]| t[0].cos(), &[0.0]).unwrap();
        assert!((h[(0, 0)] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn fine_gradient_of_quartic_is_exact_to_rounding() {
        // The five-point rule is exact for polynomials up to degree four.
        let f = |t: &[f64]| t[0].powi(4) - 3.0 * t[0] * t[1] + 2.0 * t[1].powi(3);
        let x = [0.7, -1.3];
        let g = numeric_gradient_fine(f, &x).unwrap();
        let want = [4.0 * 0.7_f64.powi(3) + 3.9, -2.1 + 6.0 * 1.69];
        for i in 0..2 {
            assert!((g[i] - want[i]).abs() < 1e-10, "{g:?} vs {want:?}");
        }
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let r = numeric_hessian(|t: &[f64]| if t[0] > 0.0 { f64::NAN } else { t[0] }, &[0.0]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &OptimizerConfig::default()).unwrap();
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn start_at_optimum_is_a_fixed_point() {
        let f = |x: &[f64]| (x[0] - 2.0).powi(2) + 3.0 * (x[1] + 1.0).powi(2);
        let m = minimize(f, &[2.0, -1.0], &OptimizerConfig::default()).unwrap();
        assert_eq!(m.iterations, 0);
        assert_eq!(m.x, vec![2.0, -1.0]);
    }

    #[test]
    fn guard_flags_divergence() {
        // Unbounded below along x → ∞.
        let f = |x: &[f64]| -x[0];
        let m = minimize(f, &[0.0], &OptimizerConfig::default()).unwrap();
        assert!(!m.converged);
        assert!(m.guard_tripped);
    }
}
