//! Flat-vector kernels shared by every other module.
//!
//! All reductions sum in ascending index order so results are bit-identical
//! across runs no matter how the surrounding work is scheduled.

use std::ops::Index;

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// A flat vector of parameters, gradients, momenta or perturbations.
///
/// The element-wise helpers (`add`, `sub`, `axpy`, ...) panic on a dimension
/// mismatch; the checked kernels below return [`Error::DimMismatch`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "parameter vector must have dim >= 1");
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        assert!(dim >= 1, "parameter vector must have dim >= 1");
        Self(vec![value; dim])
    }

    /// Unit vector along axis `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[axis] = 1.0;
        v
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        debug_assert!(!data.is_empty());
        Self(data)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        assert_same_dim(self, x);
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    /// `a * self + b * other`
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_same_dim(self, other);
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn assert_same_dim(a: &ParamVector, b: &ParamVector) {
    assert_eq!(a.dim(), b.dim(), "parameter vector dimension mismatch");
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

pub fn inner(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum())
}

/// Cosine of the angle between `a` and `b`; 0.0 when either norm is below
/// [`NORM_EPS`].
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    let dot = inner(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < NORM_EPS || nb < NORM_EPS {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// Splits `p` into its projection onto `m` and the orthogonal remainder.
pub fn orthogonal_rejection(p: &ParamVector, m: &ParamVector) -> Result<(ParamVector, ParamVector)> {
    let dot = inner(p, m)?;
    let norm = m.norm();
    if norm <= NORM_EPS {
        return Err(Error::DegenerateTarget { norm });
    }
    let proj = m.scaled(dot / (norm * norm));
    let rej = p.sub(&proj);
    Ok((proj, rej))
}

/// Index-wise mean and population standard deviation of a set of vectors.
pub fn index_stats(vs: &[ParamVector]) -> Result<(ParamVector, ParamVector)> {
    let mean = mean_of(vs)?;
    let n = vs.len() as f64;
    let mut var = vec![0.0; mean.dim()];
    for v in vs {
        for ((acc, x), mu) in var.iter_mut().zip(&v.0).zip(&mean.0) {
            let d = x - mu;
            *acc += d * d;
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok((mean, ParamVector(std)))
}

/// Coordinate-wise arithmetic mean, summed in input order.
pub fn mean_of(vs: &[ParamVector]) -> Result<ParamVector> {
    let first = vs.first().ok_or(Error::Empty("vector set"))?;
    let mut sum = vec![0.0; first.dim()];
    for v in vs {
        check_dims(first, v)?;
        for (s, x) in sum.iter_mut().zip(&v.0) {
            *s += x;
        }
    }
    let n = vs.len() as f64;
    Ok(ParamVector(sum.into_iter().map(|s| s / n).collect()))
}
