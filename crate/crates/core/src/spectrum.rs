//! The diagonalized operator and coefficient vectors.
//!
//! `A e_k = lambda_k^2 e_k`, so a state is fully described by its Fourier
//! coefficients against the (truncated) eigenbasis. All membership and
//! certification results elsewhere in the crate are relative to this finite
//! truncation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing eigenvalue roots `lambda_k >= 0` of a nonnegative
/// self-adjoint operator, truncated to `K` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    lambdas: Vec<f64>,
}

impl Spectrum {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidArgument("spectrum must have K >= 1".into()));
        }
        if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(
                "eigenvalue roots must be finite and >= 0".into(),
            ));
        }
        if lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "eigenvalue roots must be strictly increasing".into(),
            ));
        }
        Ok(Spectrum { lambdas })
    }

    /// `lambda_k = k` for `k = 1..=modes`: the Dirichlet Laplacian on an
    /// interval of length pi.
    pub fn interval_laplacian(modes: usize) -> Self {
        Spectrum {
            lambdas: (1..=modes).map(|k| k as f64).collect(),
        }
    }

    /// `lambda_k = q^k` for `k = 1..=modes`; requires `q > 1`.
    pub fn geometric(q: f64, modes: usize) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::InvalidArgument(
                "geometric spectrum requires q > 1".into(),
            ));
        }
        Spectrum::new((1..=modes).map(|k| q.powi(k as i32)).collect())
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.lambdas.last().expect("K >= 1")
    }

    /// Index of the first mode with `lambda_k >= threshold` (== `len()` when none).
    pub fn first_at_or_above(&self, threshold: f64) -> usize {
        self.lambdas.partition_point(|l| *l < threshold)
    }

    /// Index of the first mode with `lambda_k > threshold` (== `len()` when none).
    pub fn first_above(&self, threshold: f64) -> usize {
        self.lambdas.partition_point(|l| *l <= threshold)
    }

    pub fn check_len(&self, v: &CoefficientVector) -> Result<()> {
        if v.len() == self.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.len(),
                got: v.len(),
            })
        }
    }

    /// `A^alpha u` componentwise: `lambda_k^{2 alpha} u_k`, with `0^0 = 1`.
    pub fn apply_power(&self, u: &CoefficientVector, alpha: f64) -> Result<CoefficientVector> {
        self.check_len(u)?;
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        let coeffs = self
            .lambdas
            .iter()
            .zip(u.coeffs())
            .map(|(l, c)| lambda_pow(*l, 2.0 * alpha) * c)
            .collect();
        Ok(CoefficientVector::new(coeffs))
    }

    /// `|A^alpha u|^2 = sum_k lambda_k^{4 alpha} u_k^2`.
    pub fn sobolev_norm_sq(&self, u: &CoefficientVector, alpha: f64) -> Result<f64> {
        self.check_len(u)?;
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        Ok(self
            .lambdas
            .iter()
            .zip(u.coeffs())
            .map(|(l, c)| lambda_pow(*l, 4.0 * alpha) * c * c)
            .sum())
    }

    /// `<A^{3/4}u, A^{1/4}v> = sum_k lambda_k^2 u_k v_k`.
    ///
    /// Along a trajectory, `2 * coupling(u, u')` is the time derivative of
    /// `|A^{1/2}u|^2`.
    pub fn coupling(&self, u: &CoefficientVector, v: &CoefficientVector) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        Ok(coupling_slices(&self.lambdas, u.coeffs(), v.coeffs()))
    }
}

/// `lambda^p` with the convention `0^0 = 1` (matches IEEE `powf`).
#[inline]
pub(crate) fn lambda_pow(lambda: f64, p: f64) -> f64 {
    lambda.powf(p)
}

pub(crate) fn coupling_slices(lambdas: &[f64], u: &[f64], v: &[f64]) -> f64 {
    lambdas
        .iter()
        .zip(u.iter().zip(v))
        .map(|(l, (uk, vk))| l * l * uk * vk)
        .sum()
}

/// Fourier coefficients of a state against a spectrum's eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector {
    coeffs: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(coeffs: Vec<f64>) -> Self {
        CoefficientVector { coeffs }
    }

    pub fn zeros(len: usize) -> Self {
        CoefficientVector {
            coeffs: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

impl From<Vec<f64>> for CoefficientVector {
    fn from(coeffs: Vec<f64>) -> Self {
        CoefficientVector::new(coeffs)
    }
}

/// Initial data `(u0, u1)` for the second-order problem, both tied to the
/// same spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePair {
    pub u0: CoefficientVector,
    pub u1: CoefficientVector,
}

impl StatePair {
    pub fn new(u0: CoefficientVector, u1: CoefficientVector) -> Result<Self> {
        if u0.len() != u1.len() {
            return Err(Error::DimensionMismatch {
                expected: u0.len(),
                got: u1.len(),
            });
        }
        Ok(StatePair { u0, u1 })
    }

    pub fn zeros(len: usize) -> Self {
        StatePair {
            u0: CoefficientVector::zeros(len),
            u1: CoefficientVector::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }
}

/// On-disk form of a spectrum plus initial data:
/// `{"lambdas": [...], "u0": [...], "u1": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialData {
    pub lambdas: Vec<f64>,
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
}

impl InitialData {
    pub fn new(spectrum: &Spectrum, pair: &StatePair) -> Self {
        InitialData {
            lambdas: spectrum.lambdas().to_vec(),
            u0: pair.u0.coeffs().to_vec(),
            u1: pair.u1.coeffs().to_vec(),
        }
    }

    /// Validates and splits back into typed values.
    pub fn into_parts(self) -> Result<(Spectrum, StatePair)> {
        let spectrum = Spectrum::new(self.lambdas)?;
        let pair = StatePair::new(self.u0.into(), self.u1.into())?;
        spectrum.check_len(&pair.u0)?;
        Ok((spectrum, pair))
    }
}
