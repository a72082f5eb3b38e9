//! Fréchet (2-Wasserstein) distance between Gaussian embedding summaries.
//!
//! For `N(mu_a, S_a)` and `N(mu_b, S_b)`:
//!
//! ```text
//! d^2 = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})
//! ```
//!
//! The symmetric product `S_a^{1/2} S_b S_a^{1/2}` has the same eigenvalues
//! as `S_a S_b`, so every decomposition stays on symmetric matrices.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::stats::EmbeddingStats;

/// Symmetry tolerance for [`sqrtm_spd`] inputs (scaled by the largest entry
/// when that exceeds 1).
pub const SQRTM_SYMMETRY_TOL: f64 = 1e-8;
/// Negative eigenvalues down to `-EIGEN_TOL * trace / d` are clamped to 0.
pub const EIGEN_TOL: f64 = 1e-8;
/// Negative squared distances within this window (relative to
/// `max(1, tr S_a + tr S_b)`) are treated as round-off and clamped to 0.
pub const NEGATIVE_TRACE_WINDOW: f64 = 1e-6;

fn symmetric_eigenvalues_checked(s: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let d = s.nrows();
    if d == 0 || s.ncols() != d {
        return Err(Error::NumericDomain(format!(
            "expected a non-empty square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("matrix has non-finite entries".into()));
    }
    let scale = s.amax().max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (s[(i, j)] - s[(j, i)]).abs() > SQRTM_SYMMETRY_TOL * scale {
                return Err(Error::NumericDomain(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let tol = (EIGEN_TOL * s.trace().abs() / d as f64).max(1e-14 * s.norm());
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -tol {
            return Err(Error::NumericDomain(format!(
                "matrix is not positive semidefinite (eigenvalue {min:e} below -{tol:e})"
            )));
        }
    }
    Ok(eig)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sqrtm_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigenvalues_checked(s)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    let r = &scaled * v.transpose();
    // Exact symmetry.
    Ok((&r + r.transpose()) * 0.5)
}

fn trace_sqrt_spd(s: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues_checked(s)?;
    Ok(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Stats with a cached covariance square root, for repeated distance
/// evaluations against the same summary.
#[derive(Debug, Clone)]
pub struct PreparedStats<'a> {
    pub stats: &'a EmbeddingStats,
    cov_sqrt: DMatrix<f64>,
}

impl<'a> PreparedStats<'a> {
    pub fn new(stats: &'a EmbeddingStats) -> Result<Self> {
        Ok(Self {
            stats,
            cov_sqrt: sqrtm_spd(&stats.cov)?,
        })
    }
}

fn check_compatible(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.probe_id != b.probe_id {
        return Err(Error::ProbeMismatch {
            left: a.probe_id.clone(),
            right: b.probe_id.clone(),
        });
    }
    Ok(())
}

/// Fréchet distance (not squared) between two prepared summaries.
pub fn frechet_prepared(a: &PreparedStats<'_>, b: &PreparedStats<'_>) -> Result<f64> {
    check_compatible(a.stats, b.stats)?;
    let mean_term = (&a.stats.mean - &b.stats.mean).norm_squared();
    let inner = &a.cov_sqrt * &b.stats.cov * &a.cov_sqrt;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = trace_sqrt_spd(&inner)?;
    let tr_sum = a.stats.cov.trace() + b.stats.cov.trace();
    let squared = mean_term + tr_sum - 2.0 * cross;
    if squared >= 0.0 {
        Ok(squared.sqrt())
    } else if squared >= -NEGATIVE_TRACE_WINDOW * tr_sum.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::NumericDomain(format!(
            "squared Fréchet distance {squared:e} is negative beyond round-off"
        )))
    }
}

/// Fréchet distance between `a` and `b`.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    check_compatible(a, b)?;
    frechet_prepared(&PreparedStats::new(a)?, &PreparedStats::new(b)?)
}

/// A distance between dataset summaries usable as a similarity edge weight.
pub trait DatasetDistance {
    fn distance(&self, a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64>;

    /// Distances for every unordered pair `(i, j)`, `i < j`, in row-major
    /// upper-triangle order.
    fn pairwise(&self, stats: &[&EmbeddingStats]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(stats.len() * stats.len().saturating_sub(1) / 2);
        for i in 0..stats.len() {
            for j in (i + 1)..stats.len() {
                out.push(self.distance(stats[i], stats[j])?);
            }
        }
        Ok(out)
    }
}

/// The Fréchet distance as a [`DatasetDistance`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Frechet;

impl DatasetDistance for Frechet {
    fn distance(&self, a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
        frechet_distance(a, b)
    }

    fn pairwise(&self, stats: &[&EmbeddingStats]) -> Result<Vec<f64>> {
        for s in stats.iter().skip(1) {
            check_compatible(stats[0], s)?;
        }
        let prepared = stats
            .iter()
            .map(|s| PreparedStats::new(s))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(stats.len() * stats.len().saturating_sub(1) / 2);
        for i in 0..prepared.len() {
            for j in (i + 1)..prepared.len() {
                out.push(frechet_prepared(&prepared[i], &prepared[j])?);
            }
        }
        Ok(out)
    }
}
