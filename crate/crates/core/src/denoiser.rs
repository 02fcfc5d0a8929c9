//! The ε-prediction interface shared by the analytic oracle and trainable
//! networks.

use crate::mixture::GaussianMixture;
use crate::schedule::NoiseSchedule;

/// Noise predictor: maps a noisy point, a step index and an optional
/// condition vector to an estimate of the noise that produced the point.
/// Implementations must be pure (no state mutation during prediction).
pub trait Denoiser {
    fn predict_eps(&self, x: &[f64], t: usize, cond: Option<&[f64]>) -> Vec<f64>;
}

/// Closed-form optimal denoiser for a Gaussian-mixture target. Ignores the
/// condition argument.
pub struct AnalyticDenoiser<'a> {
    pub mixture: &'a GaussianMixture,
    pub schedule: &'a NoiseSchedule,
}

impl Denoiser for AnalyticDenoiser<'_> {
    fn predict_eps(&self, x: &[f64], t: usize, _cond: Option<&[f64]>) -> Vec<f64> {
        // t >= 1 is guaranteed by every chain; the public fallible surface
        // is GaussianMixture::analytic_eps.
        self.mixture
            .analytic_eps(self.schedule, x, t)
            .expect("chain supplied t outside 1..=T")
    }
}

/// Closures are denoisers; convenient in tests.
impl<F> Denoiser for F
where
    F: Fn(&[f64], usize, Option<&[f64]>) -> Vec<f64>,
{
    fn predict_eps(&self, x: &[f64], t: usize, cond: Option<&[f64]>) -> Vec<f64> {
        self(x, t, cond)
    }
}
