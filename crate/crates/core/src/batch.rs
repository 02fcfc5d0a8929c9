//! Sample containers: `SampleBatch` (n points in R^d) and per-sample
//! condition vectors.

use crate::error::{Error, Result};
use crate::rng::sample_stream;
use rand::RngExt;
use rand_distr::StandardNormal;

/// n points in d-dimensional real space, stored row-major. `seed_tag`
/// records the seed lineage that produced the batch (0 for constructed
/// data).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    d: usize,
    points: Vec<f64>,
    pub seed_tag: u64,
}

impl SampleBatch {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::param("rows", "batch must contain at least one point"));
        }
        let d = rows[0].len();
        let mut points = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::param("rows", "inconsistent point dimension"));
            }
            points.extend_from_slice(r);
        }
        Ok(SampleBatch {
            n: rows.len(),
            d,
            points,
            seed_tag: 0,
        })
    }

    pub fn from_flat(n: usize, d: usize, points: Vec<f64>) -> Result<Self> {
        if points.len() != n * d {
            return Err(Error::param("points", "length must equal n*d"));
        }
        Ok(SampleBatch {
            n,
            d,
            points,
            seed_tag: 0,
        })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        SampleBatch {
            n,
            d,
            points: vec![0.0; n * d],
            seed_tag: 0,
        }
    }

    /// n×d batch of standard normal draws. Sample `i` uses its own random
    /// stream, so the result is independent of batch partitioning.
    pub fn standard_normal(n: usize, d: usize, seed: u64) -> Self {
        let mut points = Vec::with_capacity(n * d);
        for i in 0..n {
            let mut rng = sample_stream(seed, i as u64);
            for _ in 0..d {
                points.push(rng.sample::<f64, _>(StandardNormal));
            }
        }
        SampleBatch {
            n,
            d,
            points,
            seed_tag: seed,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn same_shape(&self, other: &SampleBatch) -> bool {
        self.n == other.n && self.d == other.d
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().all(|v| v.is_finite())
    }
}

/// Per-sample condition vectors of a fixed declared width. A width of zero
/// means "condition present but empty" and is distinct from no condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBatch {
    n: usize,
    width: usize,
    values: Vec<f64>,
}

impl ConditionBatch {
    pub fn new(n: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * width {
            return Err(Error::param("values", "length must equal n*width"));
        }
        Ok(ConditionBatch { n, width, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_rejects_ragged_input() {
        let err = SampleBatch::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(err.to_string().contains("rows"));
    }

    #[test]
    fn standard_normal_is_deterministic() {
        let a = SampleBatch::standard_normal(16, 2, 7);
        let b = SampleBatch::standard_normal(16, 2, 7);
        assert_eq!(a.as_slice(), b.as_slice());
        let c = SampleBatch::standard_normal(16, 2, 8);
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn standard_normal_rows_do_not_depend_on_n() {
        // Sample i draws from its own stream: growing the batch leaves
        // existing rows untouched.
        let small = SampleBatch::standard_normal(4, 3, 99);
        let big = SampleBatch::standard_normal(8, 3, 99);
        for i in 0..4 {
            assert_eq!(small.row(i), big.row(i));
        }
    }
}
