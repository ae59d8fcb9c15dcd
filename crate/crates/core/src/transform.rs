//! Map between natural parameters and the unconstrained optimisation scale,
//! with chain-rule conversion of derivatives.

use nalgebra::{DMatrix, DVector};

use crate::copula::CopulaFamily;

/// One contiguous group of coordinates in a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Strictly increasing thresholds: first value free, then log-increments.
    Intercepts(usize),
    /// Unrestricted coordinates.
    Free(usize),
    /// One bivariate copula parameter.
    Copula(CopulaFamily),
}

impl Block {
    fn width(self) -> usize {
        match self {
            Block::Intercepts(n) | Block::Free(n) => n,
            Block::Copula(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTransform {
    blocks: Vec<Block>,
    dim: usize,
}

impl ParamTransform {
    pub fn new(blocks: Vec<Block>) -> Self {
        let dim = blocks.iter().map(|b| b.width()).sum();
        Self { blocks, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    fn offsets(&self) -> impl Iterator<Item = (usize, Block)> + '_ {
        self.blocks.iter().scan(0, |o, &b| {
            let start = *o;
            *o += b.width();
            Some((start, b))
        })
    }

    pub fn to_natural(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        self.to_natural_into(eta, &mut out);
        out
    }

    pub fn to_natural_into(&self, eta: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(eta.len(), self.dim);
        out.clear();
        for (o, b) in self.offsets() {
            match b {
                Block::Intercepts(n) => {
                    let mut a = eta[o];
                    out.push(a);
                    for &d in &eta[o + 1..o + n] {
                        a += d.exp();
                        out.push(a);
                    }
                }
                Block::Free(n) => out.extend_from_slice(&eta[o..o + n]),
                Block::Copula(f) => out.push(f.param_from_unconstrained(eta[o])),
            }
        }
    }

    pub fn to_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim);
        let mut out = Vec::with_capacity(self.dim);
        for (o, b) in self.offsets() {
            match b {
                Block::Intercepts(n) => {
                    out.push(theta[o]);
                    out.extend(theta[o..o + n].windows(2).map(|w| (w[1] - w[0]).ln()));
                }
                Block::Free(n) => out.extend_from_slice(&theta[o..o + n]),
                Block::Copula(f) => out.push(f.param_to_unconstrained(theta[o])),
            }
        }
        out
    }

    /// Jacobian of the inverse map, d(unconstrained)/d(natural), at `eta`.
    pub fn inverse_jacobian(&self, eta: &[f64]) -> DMatrix<f64> {
        let theta = self.to_natural(eta);
        let mut dh = DMatrix::zeros(self.dim, self.dim);
        for (o, b) in self.offsets() {
            match b {
                Block::Intercepts(n) => {
                    dh[(o, o)] = 1.0;
                    for i in 1..n {
                        let inc = theta[o + i] - theta[o + i - 1];
                        dh[(o + i, o + i)] = 1.0 / inc;
                        dh[(o + i, o + i - 1)] = -1.0 / inc;
                    }
                }
                Block::Free(n) => {
                    for i in o..o + n {
                        dh[(i, i)] = 1.0;
                    }
                }
                Block::Copula(f) => dh[(o, o)] = 1.0 / f.param_derivatives(eta[o]).0,
            }
        }
        dh
    }

    /// Natural-scale gradient from the unconstrained-scale gradient.
    pub fn gradient_to_natural(&self, eta: &[f64], grad_eta: &[f64]) -> Vec<f64> {
        let dh = self.inverse_jacobian(eta);
        (dh.transpose() * DVector::from_column_slice(grad_eta)).as_slice().to_vec()
    }

    /// Natural-scale Hessian of an objective from its unconstrained-scale
    /// gradient and Hessian at `eta`.
    pub fn hessian_to_natural(&self, eta: &[f64], grad_eta: &[f64], hess_eta: &DMatrix<f64>) -> DMatrix<f64> {
        let dh = self.inverse_jacobian(eta);
        let g = self.gradient_to_natural(eta, grad_eta);
        // H_η = Dgᵀ H_θ Dg + Σ_i (∂f/∂θ_i) ∇²g_i, and every ∇²g_i is diagonal here.
        let mut curvature = vec![0.0; self.dim];
        for (o, b) in self.offsets() {
            match b {
                Block::Intercepts(n) => {
                    for i in 1..n {
                        let tail: f64 = g[o + i..o + n].iter().sum();
                        curvature[o + i] = eta[o + i].exp() * tail;
                    }
                }
                Block::Free(_) => {}
                Block::Copula(f) => curvature[o] = g[o] * f.param_derivatives(eta[o]).1,
            }
        }
        let mut adj = hess_eta.clone();
        for (i, c) in curvature.iter().enumerate() {
            adj[(i, i)] -= c;
        }
        let h = dh.transpose() * adj * &dh;
        (&h + h.transpose()) * 0.5
    }
}
