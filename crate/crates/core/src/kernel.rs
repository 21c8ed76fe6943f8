//! Gaussian random-walk proposals, `theta' = theta + L z` with `L L^T = Sigma`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    RandomWalkGaussian,
}

#[derive(Clone, Debug)]
pub struct ProposalKernel {
    kind: KernelKind,
    dim: usize,
    covariance: Vec<f64>,
    // Row-major lower-triangular Cholesky factor.
    chol: Vec<f64>,
}

impl ProposalKernel {
    /// Random walk with the given row-major `dim x dim` covariance.
    pub fn random_walk(dim: usize, covariance: Vec<f64>) -> Result<Self> {
        if dim == 0 || covariance.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: covariance.len(),
            });
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let m = DMatrix::from_row_slice(dim, dim, &covariance);
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let mut flat = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                flat[i * dim + j] = l[(i, j)];
            }
        }
        Ok(Self {
            kind: KernelKind::RandomWalkGaussian,
            dim,
            covariance,
            chol: flat,
        })
    }

    pub fn isotropic(dim: usize, sd: f64) -> Result<Self> {
        Self::diagonal(&vec![sd; dim])
    }

    pub fn diagonal(sds: &[f64]) -> Result<Self> {
        let dim = sds.len();
        let mut cov = vec![0.0; dim * dim];
        for (i, s) in sds.iter().enumerate() {
            cov[i * dim + i] = s * s;
        }
        Self::random_walk(dim, cov)
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// The random walk is symmetric, so the proposal density ratio is exactly 1.
    pub fn is_symmetric(&self) -> bool {
        true
    }

    pub fn log_q_ratio(&self, _current: &[f64], _proposed: &[f64]) -> f64 {
        0.0
    }

    pub fn step(&self, innovation: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                let row = &self.chol[i * d..i * d + i + 1];
                row.iter().zip(innovation).map(|(l, z)| l * z).sum()
            })
            .collect()
    }
}

pub fn propose(state: &[f64], kernel: &ProposalKernel, innovation: &[f64]) -> Result<ParamVector> {
    if state.len() != kernel.dimension() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dimension(),
            got: state.len(),
        });
    }
    if innovation.len() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            got: innovation.len(),
        });
    }
    let step = kernel.step(innovation);
    Ok(ParamVector(
        state.iter().zip(step).map(|(s, d)| s + d).collect(),
    ))
}
