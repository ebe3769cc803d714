//! Spectral pencil of the discrete Laplacian.
//!
//! Solves the generalized symmetric eigenproblem `A q = lambda M q` once per
//! space (dense, desk scale) and exposes the fractional norms
//! `|v|_beta = (sum_k lambda_k^beta <v, q_k>_M^2)^{1/2}` and the semigroup
//! `e^{t Dh} v = sum_k e^{-lambda_k t} <v, q_k>_M q_k`.

use nalgebra::{DMatrix, DVector};

use super::FemSpace;
use crate::error::{Error, Result};

const SUPPORTED_BETAS: [i32; 4] = [-1, 0, 1, 2];

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Ascending positive eigenvalues of the pencil.
    eigenvalues: Vec<f64>,
    /// M-orthonormal eigenvectors, column-major `dim x dim`.
    eigenvectors: Vec<f64>,
    /// Columns of `M Q`, so that `<v, q_k>_M = (MQ)_k . v`.
    mass_eigenvectors: Vec<f64>,
    dim: usize,
}

impl SpectralData {
    pub fn new(space: &FemSpace) -> Result<Self> {
        let n = space.dim();
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = space.mass().diag[i];
            a[(i, i)] = space.stiffness().diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = space.mass().off[i];
                m[(i + 1, i)] = space.mass().off[i];
                a[(i, i + 1)] = space.stiffness().off[i];
                a[(i + 1, i)] = space.stiffness().off[i];
            }
        }
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidMesh("mass matrix not SPD".into()))?;
        let l = chol.l();
        // B = L^{-1} A L^{-T}, reduced to a standard symmetric eigenproblem
        let c = l.solve_lower_triangular(&a).ok_or_else(|| {
            Error::InvalidMesh("singular Cholesky factor in spectral reduction".into())
        })?;
        let b = l
            .solve_lower_triangular(&c.transpose())
            .ok_or_else(|| {
                Error::InvalidMesh("singular Cholesky factor in spectral reduction".into())
            })?
            .transpose();
        let b = (&b + b.transpose()) * 0.5;
        let eig = b.symmetric_eigen();

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

        let lt = l.transpose();
        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = vec![0.0; n * n];
        let mut mass_eigenvectors = vec![0.0; n * n];
        for (k, &src) in order.iter().enumerate() {
            let lambda = eig.eigenvalues[src];
            if !(lambda > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "nonpositive pencil eigenvalue {lambda}"
                )));
            }
            eigenvalues.push(lambda);
            let p = eig.eigenvectors.column(src).into_owned();
            let q = lt
                .solve_upper_triangular(&p)
                .ok_or_else(|| Error::InvalidMesh("back transform failed".into()))?;
            let mq: DVector<f64> = &m * &q;
            eigenvectors[k * n..(k + 1) * n].copy_from_slice(q.as_slice());
            mass_eigenvectors[k * n..(k + 1) * n].copy_from_slice(mq.as_slice());
        }
        Ok(SpectralData {
            eigenvalues,
            eigenvectors,
            mass_eigenvectors,
            dim: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> &[f64] {
        &self.eigenvectors[k * self.dim..(k + 1) * self.dim]
    }

    /// Spectral coefficients `<v, q_k>_M`.
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|k| {
                let mq = &self.mass_eigenvectors[k * self.dim..(k + 1) * self.dim];
                mq.iter().zip(v).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Fractional norm for beta in {-1, 0, 1, 2}.
    pub fn norm_beta(&self, v: &[f64], beta: i32) -> Result<f64> {
        if !SUPPORTED_BETAS.contains(&beta) {
            return Err(Error::UnsupportedBeta(beta));
        }
        let coeffs = self.coefficients(v);
        let mut s = 0.0;
        for (c, lambda) in coeffs.iter().zip(&self.eigenvalues) {
            s += lambda.powi(beta) * c * c;
        }
        Ok(s.max(0.0).sqrt())
    }

    /// Applies the discrete heat semigroup at time `t >= 0`.
    pub fn semigroup_apply(&self, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let coeffs = self.coefficients(v);
        let mut out = vec![0.0; self.dim];
        for (k, c) in coeffs.iter().enumerate() {
            let factor = (-self.eigenvalues[k] * t).exp() * c;
            let q = self.eigenvector(k);
            for (o, qi) in out.iter_mut().zip(q) {
                *o += factor * qi;
            }
        }
        Ok(out)
    }

    /// Reconstructs a coefficient vector from spectral coefficients.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (k, c) in coeffs.iter().enumerate() {
            let q = self.eigenvector(k);
            for (o, qi) in out.iter_mut().zip(q) {
                *o += c * qi;
            }
        }
        out
    }
}
