//! Dense parameter vectors and the fixed-order reductions used by every
//! algorithm.
//!
//! Averages are computed as a running mean in ascending index order:
//! `m_1 = v_1`, `m_j = m_{j-1} + (v_j - m_{j-1}) / j`. The result is
//! bit-reproducible for a given input order, and the mean of `N` identical
//! vectors is that vector exactly (a plain sum-then-divide is not, e.g. ten
//! copies of `0.1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
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

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute entry; zero for an empty vector.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    /// `self - other`, element-wise.
    pub fn sub(&self, other: &ModelVector) -> Result<ModelVector> {
        other.check_dim(self.dim())?;
        Ok(ModelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scaled(&self, a: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| a * v).collect())
    }

    pub fn bits_eq(&self, other: &ModelVector) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Max absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for ModelVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Element-wise arithmetic mean, reduced in slice order.
pub fn vec_mean(vs: &[ModelVector]) -> Result<ModelVector> {
    mean_of(vs.iter())
}

/// [`vec_mean`] over any ordered sequence of references.
pub fn mean_of<'a, I>(vs: I) -> Result<ModelVector>
where
    I: IntoIterator<Item = &'a ModelVector>,
{
    let mut iter = vs.into_iter();
    let first = iter.next().ok_or(Error::EmptyInput)?;
    let mut acc = first.clone();
    for (j, v) in iter.enumerate() {
        v.check_dim(acc.dim())?;
        mean_update(acc.as_mut_slice(), v.as_slice(), j + 2);
    }
    Ok(acc)
}

/// One running-mean step: `acc` holds the mean of `count - 1` vectors and is
/// updated to include `v`.
pub(crate) fn mean_update(acc: &mut [f64], v: &[f64], count: usize) {
    let inv = count as f64;
    for (m, x) in acc.iter_mut().zip(v) {
        *m += (x - *m) / inv;
    }
}

/// Returns `a * x + y`.
pub fn vec_axpy(a: f64, x: &ModelVector, y: &ModelVector) -> Result<ModelVector> {
    x.check_dim(y.dim())?;
    Ok(ModelVector(
        x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect(),
    ))
}

/// In-place `y += a * x`.
pub(crate) fn axpy_in_place(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
