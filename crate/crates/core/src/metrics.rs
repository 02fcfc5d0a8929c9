//! Distributional comparison between sample batches.
//!
//! Energy distance is the workhorse two-sample statistic:
//!
//!   E(A, B) = (2/nm)·ΣΣ‖a−b‖ − (1/n²)·ΣΣ‖a−a′‖ − (1/m²)·ΣΣ‖b−b′‖
//!
//! the V-statistic form including the zero diagonal terms. It is symmetric,
//! non-negative up to rounding, parameter-free, and homogeneous of degree 1
//! under scaling. Acceptance thresholds are expressed as multiples of a
//! resampled true-vs-true baseline so they track the statistic's intrinsic
//! noise floor at the chosen sample size.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::rng::child_seed;

/// Mean pairwise Euclidean distance between rows of A and rows of B.
/// Accumulated blockwise (one subtotal per A-row, summed in row order) so
/// the summation order is fixed regardless of any future partitioning.
fn mean_pairwise(a: &SampleBatch, b: &SampleBatch) -> f64 {
    let d = a.dim();
    let mut total = 0.0;
    for i in 0..a.len() {
        let ra = a.row(i);
        let mut row_sum = 0.0;
        for rb in b.rows() {
            let mut sq = 0.0;
            for j in 0..d {
                let diff = ra[j] - rb[j];
                sq += diff * diff;
            }
            row_sum += sq.sqrt();
        }
        total += row_sum;
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// Canonical argument order: by size, then dimension, then content bits.
/// Fixes the cross-term traversal so energy_distance(A, B) and
/// energy_distance(B, A) run bitwise-identical float additions.
fn canonical<'a>(a: &'a SampleBatch, b: &'a SampleBatch) -> (&'a SampleBatch, &'a SampleBatch) {
    let key = |s: &SampleBatch| (s.len(), s.dim());
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Less => (a, b),
        std::cmp::Ordering::Greater => (b, a),
        std::cmp::Ordering::Equal => {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                match x.to_bits().cmp(&y.to_bits()) {
                    std::cmp::Ordering::Less => return (a, b),
                    std::cmp::Ordering::Greater => return (b, a),
                    std::cmp::Ordering::Equal => {}
                }
            }
            (a, b)
        }
    }
}

pub fn energy_distance(a: &SampleBatch, b: &SampleBatch) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::param("b", "dimension mismatch"));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("a", "both batches need at least one point"));
    }
    let (p, q) = canonical(a, b);
    Ok(2.0 * mean_pairwise(p, q) - mean_pairwise(p, p) - mean_pairwise(q, q))
}

/// Median energy distance across `pairs` independent same-size draws from
/// the reference mixture: the noise floor against which sampler outputs are
/// judged.
pub fn true_vs_true_baseline(
    gm: &GaussianMixture,
    n: usize,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    if pairs < 1 {
        return Err(Error::param("pairs", "need at least one resample pair"));
    }
    let mut vals = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let a = gm.sample(n, child_seed(seed, 2 * p as u64))?;
        let b = gm.sample(n, child_seed(seed, 2 * p as u64 + 1))?;
        vals.push(energy_distance(&a, &b)?);
    }
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mid = vals.len() / 2;
    Ok(if vals.len() % 2 == 1 {
        vals[mid]
    } else {
        0.5 * (vals[mid - 1] + vals[mid])
    })
}

/// Euclidean norm of the empirical-vs-mixture mean gap and Frobenius norm of
/// the covariance gap. Sample covariance uses the n−1 denominator, hence the
/// n >= 2 requirement.
pub fn moment_report(a: &SampleBatch, gm: &GaussianMixture) -> Result<(f64, f64)> {
    if a.dim() != gm.dim() {
        return Err(Error::param("a", "dimension mismatch with mixture"));
    }
    if a.len() < 2 {
        return Err(Error::param("a", "covariance needs at least two samples"));
    }
    let n = a.len() as f64;
    let d = a.dim();
    let mut mean = vec![0.0; d];
    for r in a.rows() {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut cov = vec![0.0; d * d];
    for r in a.rows() {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= n - 1.0;
    }
    let gm_mean = gm.mean();
    let gm_cov = gm.covariance();
    let mean_error = mean
        .iter()
        .zip(&gm_mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let cov_error = cov
        .iter()
        .zip(&gm_cov)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok((mean_error, cov_error))
}

/// One row of distributional scores for a generated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub energy_distance: f64,
    pub mean_error: f64,
    pub cov_error: f64,
    /// True-vs-true resampled energy distance median.
    pub baseline: f64,
}

impl MetricReport {
    pub fn compute(
        generated: &SampleBatch,
        truth: &SampleBatch,
        gm: &GaussianMixture,
        baseline: f64,
    ) -> Result<MetricReport> {
        let energy = energy_distance(generated, truth)?;
        let (mean_error, cov_error) = moment_report(generated, gm)?;
        Ok(MetricReport {
            energy_distance: energy,
            mean_error,
            cov_error,
            baseline,
        })
    }
}
