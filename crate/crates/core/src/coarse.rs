//! Synthetic coarse generators: fast, imperfect samplers standing in for a
//! pre-trained adversarial model. Each imperfection (bias, overdispersion,
//! mode collapse) is independently dialable so truncation sweeps can measure
//! how much of a given defect the reverse chain repairs.

use crate::batch::{ConditionBatch, SampleBatch};
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::rng::sequential_stream;
use rand::RngExt;

#[derive(Debug, Clone, PartialEq)]
pub enum CoarseKind {
    /// Reproduces the reference distribution exactly.
    Exact,
    /// Adds a constant offset to every sample.
    Biased(Vec<f64>),
    /// Inflates per-dimension standard deviations by `scale` >= 1.
    Overdispersed(f64),
    /// Emits only component means (no within-mode spread).
    MeanCollapse,
}

pub struct CoarseGenerator<'a> {
    pub kind: CoarseKind,
    pub reference: &'a GaussianMixture,
}

impl CoarseGenerator<'_> {
    /// Generates n coarse samples plus one condition vector per sample (the
    /// coarse point itself).
    pub fn generate(&self, n: usize, seed: u64) -> Result<(SampleBatch, ConditionBatch)> {
        if n < 1 {
            return Err(Error::param("n", "sample count must be at least 1"));
        }
        let gm = self.reference;
        let d = gm.dim();
        let batch = match &self.kind {
            CoarseKind::Exact => gm.sample(n, seed)?,
            CoarseKind::Biased(offset) => {
                if offset.len() != d {
                    return Err(Error::param("offset", "dimension mismatch with reference"));
                }
                let mut b = gm.sample(n, seed)?;
                for i in 0..n {
                    for (v, o) in b.row_mut(i).iter_mut().zip(offset) {
                        *v += o;
                    }
                }
                b
            }
            CoarseKind::Overdispersed(scale) => {
                if !(*scale >= 1.0) {
                    return Err(Error::param("scale", "must be >= 1"));
                }
                gm.scaled_variances(*scale).sample(n, seed)?
            }
            CoarseKind::MeanCollapse => {
                let mut rng = sequential_stream(seed);
                let mut points = Vec::with_capacity(n * d);
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut k = gm.n_components() - 1;
                    for (i, w) in gm.weights().iter().enumerate() {
                        acc += w;
                        if u < acc {
                            k = i;
                            break;
                        }
                    }
                    points.extend_from_slice(gm.mean_of(k));
                }
                let mut b = SampleBatch::from_flat(n, d, points)?;
                b.seed_tag = seed;
                b
            }
        };
        let cond = ConditionBatch::new(n, d, batch.as_slice().to_vec())?;
        Ok((batch, cond))
    }
}
