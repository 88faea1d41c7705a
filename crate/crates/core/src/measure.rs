//! Uniformly weighted empirical measures on R^d.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// `(1/N) Σ δ_{x_i}` over a flat, row-major point buffer.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    mean: OnceLock<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Builds a measure from a flat buffer of `len / dim` points.
    pub fn from_flat(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if points.is_empty() {
            return Err(Error::invalid("empirical measure needs at least one point"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "buffer length {} is not a multiple of dimension {dim}",
                points.len()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate in point {}", pos / dim)));
        }
        Ok(Self {
            dim,
            points,
            mean: OnceLock::new(),
        })
    }

    /// Internal constructor for buffers already known to be valid.
    pub(crate) fn from_flat_unchecked(dim: usize, points: Vec<f64>) -> Self {
        debug_assert!(dim > 0 && !points.is_empty() && points.len().is_multiple_of(dim));
        Self {
            dim,
            points,
            mean: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.points
    }

    /// `⟨μ, g⟩ = (1/N) Σ g(x_i)`.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let sum: f64 = self.points().map(&mut g).sum();
        sum / self.len() as f64
    }

    /// Barycenter, computed once and cached.
    pub fn mean(&self) -> &[f64] {
        self.mean.get_or_init(|| {
            let mut m = vec![0.0; self.dim];
            for p in self.points() {
                for (acc, v) in m.iter_mut().zip(p) {
                    *acc += v;
                }
            }
            let n = self.len() as f64;
            m.iter_mut().for_each(|v| *v /= n);
            m
        })
    }
}

/// Builds an empirical measure from a list of points.
pub fn make_empirical(points: &[Vec<f64>]) -> Result<EmpiricalMeasure> {
    let first = points.first().ok_or_else(|| Error::invalid("empty point list"))?;
    let dim = first.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have inconsistent dimensions"));
    }
    EmpiricalMeasure::from_flat(dim, points.iter().flatten().copied().collect())
}
